#include <fstream>
#include <set>
#include <sstream>

#include "doctest.h"
#include "helpers.hpp"
#include "ifmatch/datahub.hpp"

using namespace ifm;
using namespace ifm::data;

namespace {

void put_be32(std::string& out, std::uint32_t v) {
    for (int s = 24; s >= 0; s -= 8) out.push_back(static_cast<char>((v >> s) & 0xff));
}

void write_file(const std::filesystem::path& p, const std::string& bytes) {
    std::ofstream os(p, std::ios::binary);
    os << bytes;
}

std::string idx_images(std::uint32_t magic, std::uint32_t count, std::uint32_t rows, std::uint32_t cols,
                       const std::vector<unsigned char>& pixels) {
    std::string b;
    put_be32(b, magic);
    put_be32(b, count);
    put_be32(b, rows);
    put_be32(b, cols);
    for (unsigned char p : pixels) b.push_back(static_cast<char>(p));
    return b;
}

std::string idx_labels(std::uint32_t magic, const std::vector<unsigned char>& labels) {
    std::string b;
    put_be32(b, magic);
    put_be32(b, static_cast<std::uint32_t>(labels.size()));
    for (unsigned char l : labels) b.push_back(static_cast<char>(l));
    return b;
}

Source small_source(int classes, int per_class) {
    SyntheticConfig cfg;
    cfg.classes = classes;
    cfg.per_class = per_class;
    cfg.test_per_class = 3;
    cfg.image_size = 6;
    cfg.seed = 4;
    return gen_synthetic(cfg);
}

std::set<std::int64_t> ids_of(const std::vector<Sample>& v) {
    std::set<std::int64_t> out;
    for (const auto& s : v) out.insert(s.id);
    return out;
}

}  // namespace

TEST_CASE("IDX: hand-built 2-image 2x2 fixture") {
    const auto dir = testing::scratch_dir("idx");
    write_file(dir / "img", idx_images(0x803, 2, 2, 2, {0, 255, 51, 102, 255, 0, 0, 17}));
    write_file(dir / "lbl", idx_labels(0x801, {3, 1}));
    const IdxImages img = load_idx_images((dir / "img").string());
    CHECK(img.count == 2);
    CHECK(img.rows == 2);
    CHECK(img.cols == 2);
    CHECK(img.pixels == std::vector<double>{0.0, 1.0, 0.2, 0.4, 1.0, 0.0, 0.0, 17.0 / 255.0});
    CHECK(load_idx_labels((dir / "lbl").string()) == std::vector<int>{3, 1});

    const Source src = load_idx((dir / "img").string(), (dir / "lbl").string());
    REQUIRE(src.train.size() == 2);
    CHECK(src.train[1].image.shape() == Shape{1, 2, 2});
    CHECK(src.train[1].image[0] == 1.0);
    CHECK(src.train[0].label == 3);
    CHECK(src.num_classes == 4);
}

TEST_CASE("IDX errors") {
    const auto dir = testing::scratch_dir("idx_err");
    write_file(dir / "bad_magic", idx_images(0x801, 1, 1, 1, {0}));
    try {
        load_idx_images((dir / "bad_magic").string());
        FAIL("expected DataError");
    } catch (const DataError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("0x00000803") != std::string::npos);
        CHECK(msg.find("0x00000801") != std::string::npos);
    }
    write_file(dir / "short", idx_images(0x803, 2, 2, 2, {1, 2, 3}));
    CHECK_THROWS_AS(load_idx_images((dir / "short").string()), DataError);
    write_file(dir / "header", std::string("\0\0\x08", 3));
    CHECK_THROWS_AS(load_idx_images((dir / "header").string()), DataError);

    write_file(dir / "img", idx_images(0x803, 2, 1, 1, {1, 2}));
    write_file(dir / "lbl3", idx_labels(0x801, {0, 1, 1}));
    CHECK_THROWS_AS(load_idx((dir / "img").string(), (dir / "lbl3").string()), DataError);
    CHECK_THROWS_AS(load_idx_labels((dir / "missing").string()), DataError);
}

TEST_CASE("CSV ingestion") {
    const auto dir = testing::scratch_dir("csv");
    write_file(dir / "ok.csv", "id,class,p0,p1,p2,p3\n7,1,0,0.5,1,0.25\n8,0,1,1,1,1\n");
    const auto s = load_csv_samples((dir / "ok.csv").string(), 1, 2, 2);
    REQUIRE(s.size() == 2);
    CHECK(s[0].id == 7);
    CHECK(s[0].image.values() == std::vector<double>{0, 0.5, 1, 0.25});
    write_file(dir / "short.csv", "id,class,p0,p1,p2,p3\n7,1,0,0.5\n");
    CHECK_THROWS_AS(load_csv_samples((dir / "short.csv").string(), 1, 2, 2), DataError);
    write_file(dir / "header.csv", "x,y\n");
    CHECK_THROWS_AS(load_csv_samples((dir / "header.csv").string(), 1, 2, 2), DataError);
}

TEST_CASE("synthetic data: determinism, class marginals, value range") {
    const Source a = small_source(4, 20), b = small_source(4, 20);
    REQUIRE(a.train.size() == 80);
    for (std::size_t i = 0; i < a.train.size(); ++i) {
        CHECK(a.train[i].id == b.train[i].id);
        CHECK(oracle::bitwise_equal(a.train[i].image.values(), b.train[i].image.values()));
    }
    std::vector<int> counts(4, 0);
    for (const auto& s : a.train) {
        ++counts[s.label];
        for (double v : s.image.data()) {
            CHECK(v >= 0.0);
            CHECK(v <= 1.0);
        }
    }
    CHECK(counts == std::vector<int>{20, 20, 20, 20});
    CHECK(a.test.size() == 12);
    CHECK_THROWS(gen_synthetic({1, 10, 0, 1, 6, 0.5, 0}));
}

TEST_CASE("balanced split") {
    const Source src = small_source(4, 20);
    const DatasetSplit s = split_balanced(src, 8, 3);
    std::vector<int> counts(4, 0);
    for (const auto& x : s.labeled) ++counts[x.label];
    CHECK(counts == std::vector<int>{2, 2, 2, 2});
    CHECK(s.unlabeled.size() == 72);
    const auto L = ids_of(s.labeled), U = ids_of(s.unlabeled), T = ids_of(s.test);
    for (auto id : L) {
        CHECK(U.count(id) == 0);
        CHECK(T.count(id) == 0);
    }
    for (auto id : U) CHECK(T.count(id) == 0);
    CHECK(ids_of(split_balanced(src, 8, 3).labeled) == L);
    CHECK(split_balanced(src, 8, 3, false).unlabeled.size() == 80);
    CHECK(split_balanced(src, 80, 3).unlabeled.empty());

    const Source ten = small_source(10, 5);
    std::vector<int> per(10, 0);
    for (const auto& x : split_balanced(ten, 40, 0).labeled) ++per[x.label];
    CHECK(per == std::vector<int>(10, 4));

    CHECK_THROWS_AS(split_balanced(src, 6, 3), ConfigError);
    CHECK_THROWS_AS(split_balanced(src, 84, 3), DataError);
}

TEST_CASE("long-tail counts follow the formula") {
    CHECK(longtail_count(1500, 100.0, 9, 10) == 15);
    CHECK(longtail_count(1500, 150.0, 9, 10) == 10);
    for (int c = 0; c < 10; ++c) CHECK(longtail_count(1500, 1.0, c, 10) == 1500);
    RngStream rng(9, "lt");
    for (int t = 0; t < 300; ++t) {
        const double gamma = rng.uniform(1.0, 200.0);
        const int head = rng.between(200, 3000), classes = rng.between(2, 12);
        for (int c = 0; c < classes; ++c) CHECK(longtail_count(head, gamma, c, classes) == oracle::longtail_count(head, gamma, c, classes));
    }
    CHECK_THROWS(longtail_count(10, 0.5, 0, 10));
    CHECK_THROWS_AS(longtail_count(1, 100.0, 9, 10), ConfigError);
}

TEST_CASE("long-tail split sizes and errors") {
    const Source src = small_source(4, 60);
    const LongTailConfig cfg{20, 30, 10.0, 4};
    const DatasetSplit s = split_longtail(src, cfg, 1);
    std::vector<int> nl(4, 0), nu(4, 0);
    for (const auto& x : s.labeled) ++nl[x.label];
    for (const auto& x : s.unlabeled) ++nu[x.label];
    CHECK(nl == cfg.labeled_counts());
    CHECK(nu == cfg.unlabeled_counts());
    CHECK(nl == std::vector<int>{20, 9, 4, 2});
    const auto prior = labeled_prior(s);
    CHECK(prior[0] == doctest::Approx(20.0 / 35.0));
    CHECK_THROWS_AS(split_longtail(src, {50, 30, 10.0, 4}, 1), DataError);
    CHECK_THROWS_AS(split_longtail(src, {20, 30, 10.0, 5}, 1), ConfigError);
}

TEST_CASE("manifest format") {
    DatasetSplit s;
    s.labeled.push_back({3, Tensor(Shape{1, 1, 1}), 1});
    s.unlabeled.push_back({4, Tensor(Shape{1, 1, 1}), 0});
    s.test.push_back({9, Tensor(Shape{1, 1, 1}), 2});
    std::ostringstream os;
    write_manifest(s, os);
    CHECK(os.str() == "id,role,class\n3,labeled,1\n4,unlabeled,\n9,test,2\n");
}
