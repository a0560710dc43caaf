#include "ifmatch/datahub.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <ostream>
#include <sstream>

#include "ifmatch/rng.hpp"

namespace ifm::data {

namespace {

void shuffle(std::vector<std::size_t>& v, RngStream& rng) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.below(i)]);
}

std::vector<std::vector<std::size_t>> by_class(const Source& src) {
    std::vector<std::vector<std::size_t>> groups(src.num_classes);
    for (std::size_t i = 0; i < src.train.size(); ++i) {
        const int y = src.train[i].label;
        if (y < 0 || y >= src.num_classes) throw DataError("sample " + std::to_string(src.train[i].id) + " has label " + std::to_string(y) + " outside [0, " + std::to_string(src.num_classes) + ")");
        groups[y].push_back(i);
    }
    return groups;
}

DatasetSplit empty_split(const Source& src) {
    DatasetSplit s;
    s.test = src.test;
    s.num_classes = src.num_classes;
    s.channels = src.channels;
    s.height = src.height;
    s.width = src.width;
    return s;
}

void sort_by_id(std::vector<Sample>& v) {
    std::sort(v.begin(), v.end(), [](const Sample& a, const Sample& b) { return a.id < b.id; });
}

std::vector<unsigned char> read_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open '" + path + "'");
    return std::vector<unsigned char>(std::istreambuf_iterator<char>(is), {});
}

std::uint32_t be32(const std::vector<unsigned char>& b, std::size_t off, const std::string& path) {
    if (off + 4 > b.size()) throw DataError("'" + path + "' is truncated in its header");
    return (std::uint32_t(b[off]) << 24) | (std::uint32_t(b[off + 1]) << 16) | (std::uint32_t(b[off + 2]) << 8) |
           std::uint32_t(b[off + 3]);
}

std::string hex(std::uint32_t v) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "0x%08X", v);
    return buf;
}

// One stripe texture value at pixel (y, x).
double stripe(int y, int x, int size, double angle, double cycles, double phase) {
    const double u = (x * std::cos(angle) + y * std::sin(angle)) / size;
    return std::sin(2.0 * std::numbers::pi * cycles * u + phase);
}

}  // namespace

Source gen_synthetic(const SyntheticConfig& cfg) {
    if (cfg.classes < 2) throw std::invalid_argument("synthetic data needs at least 2 classes");
    if (cfg.per_class < 1 || cfg.test_per_class < 0) throw std::invalid_argument("synthetic class sizes must be positive");
    if (cfg.image_size < 2 || cfg.channels < 1) throw std::invalid_argument("synthetic image size must be at least 2");
    if (!(cfg.difficulty >= 0.0 && cfg.difficulty <= 1.0)) throw std::invalid_argument("difficulty must lie in [0, 1]");

    const int C = cfg.classes, S = cfg.image_size, levels = (C + 1) / 2;
    const double spacing = std::min(1.5, (0.45 * S - 1.5) / std::max(levels - 1, 1));
    auto angle_of = [](int k) { return (k % 2 == 0) ? std::numbers::pi / 2 : 0.0; };  // even: horizontal stripes
    auto cycles_of = [&](int k) { return 1.5 + (k / 2) * spacing; };

    const double d = cfg.difficulty;
    RngStream rng(cfg.seed, "synthetic");
    Source src;
    src.num_classes = C;
    src.channels = cfg.channels;
    src.height = src.width = S;
    auto render = [&](std::int64_t id, int k) {
        Sample s;
        s.id = id;
        s.label = k;
        s.image = Tensor(Shape{cfg.channels, S, S});
        const double phase = d * rng.uniform(0.0, 2.0 * std::numbers::pi);
        const double angle = angle_of(k) + d * 0.45 * rng.uniform(-1.0, 1.0);
        const double cycles = cycles_of(k) * (1.0 + d * 0.3 * rng.uniform(-1.0, 1.0));
        const double amp = 0.5 * (1.0 - 0.5 * d * rng.uniform());
        const double offset = 0.5 + d * 0.15 * rng.uniform(-1.0, 1.0);
        const int other = static_cast<int>(rng.below(C));
        const double w = d * 0.6 * rng.uniform();
        const double other_phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
        for (int c = 0; c < cfg.channels; ++c) {
            for (int y = 0; y < S; ++y) {
                for (int x = 0; x < S; ++x) {
                    const double main = stripe(y, x, S, angle, cycles, phase);
                    const double distract = stripe(y, x, S, angle_of(other), cycles_of(other), other_phase);
                    const double noise = d > 0.0 ? 0.4 * d * rng.normal() : 0.0;
                    const double v = offset + amp * ((1.0 - w) * main + w * distract) + noise;
                    s.image.data()[(static_cast<std::size_t>(c) * S + y) * S + x] = std::clamp(v, 0.0, 1.0);
                }
            }
        }
        return s;
    };
    std::int64_t id = 0;
    for (int i = 0; i < C * cfg.per_class; ++i, ++id) src.train.push_back(render(id, i % C));
    for (int i = 0; i < C * cfg.test_per_class; ++i, ++id) src.test.push_back(render(id, i % C));
    return src;
}

IdxImages load_idx_images(const std::string& path) {
    const auto b = read_file(path);
    const std::uint32_t magic = be32(b, 0, path);
    if (magic != 0x00000803u) {
        throw DataError("'" + path + "': IDX image magic mismatch, expected 0x00000803, found " + hex(magic));
    }
    IdxImages out;
    out.count = static_cast<int>(be32(b, 4, path));
    out.rows = static_cast<int>(be32(b, 8, path));
    out.cols = static_cast<int>(be32(b, 12, path));
    const std::size_t need = static_cast<std::size_t>(out.count) * out.rows * out.cols;
    if (b.size() - 16 < need) {
        throw DataError("'" + path + "' is truncated: header announces " + std::to_string(need) + " pixel bytes, found " +
                        std::to_string(b.size() - 16));
    }
    out.pixels.resize(need);
    for (std::size_t i = 0; i < need; ++i) out.pixels[i] = b[16 + i] / 255.0;
    return out;
}

std::vector<int> load_idx_labels(const std::string& path) {
    const auto b = read_file(path);
    const std::uint32_t magic = be32(b, 0, path);
    if (magic != 0x00000801u) {
        throw DataError("'" + path + "': IDX label magic mismatch, expected 0x00000801, found " + hex(magic));
    }
    const std::size_t count = be32(b, 4, path);
    if (b.size() - 8 < count) {
        throw DataError("'" + path + "' is truncated: header announces " + std::to_string(count) + " labels, found " +
                        std::to_string(b.size() - 8));
    }
    return std::vector<int>(b.begin() + 8, b.begin() + 8 + static_cast<std::ptrdiff_t>(count));
}

namespace {

std::vector<Sample> idx_samples(const std::string& images, const std::string& labels, std::int64_t first_id,
                                int& rows, int& cols) {
    const IdxImages img = load_idx_images(images);
    const std::vector<int> lab = load_idx_labels(labels);
    if (static_cast<std::size_t>(img.count) != lab.size()) {
        throw DataError("IDX count mismatch: " + std::to_string(img.count) + " images in '" + images + "' but " +
                        std::to_string(lab.size()) + " labels in '" + labels + "'");
    }
    rows = img.rows;
    cols = img.cols;
    const std::size_t plane = static_cast<std::size_t>(rows) * cols;
    std::vector<Sample> out;
    for (int i = 0; i < img.count; ++i) {
        Sample s;
        s.id = first_id + i;
        s.label = lab[i];
        s.image = Tensor(Shape{1, rows, cols}, std::vector<double>(img.pixels.begin() + i * plane,
                                                                   img.pixels.begin() + (i + 1) * plane));
        out.push_back(std::move(s));
    }
    return out;
}

}  // namespace

Source load_idx(const std::string& train_images, const std::string& train_labels, const std::string& test_images,
                const std::string& test_labels) {
    Source src;
    int rows = 0, cols = 0;
    src.train = idx_samples(train_images, train_labels, 0, rows, cols);
    src.channels = 1;
    src.height = rows;
    src.width = cols;
    if (!test_images.empty()) {
        int tr = 0, tc = 0;
        src.test = idx_samples(test_images, test_labels, static_cast<std::int64_t>(src.train.size()), tr, tc);
        if (tr != rows || tc != cols) throw DataError("IDX test images differ in size from the training images");
    }
    int top = -1;
    for (const auto& s : src.train) top = std::max(top, s.label);
    for (const auto& s : src.test) top = std::max(top, s.label);
    src.num_classes = top + 1;
    return src;
}

std::vector<Sample> load_csv_samples(const std::string& path, int channels, int height, int width) {
    std::ifstream is(path);
    if (!is) throw DataError("cannot open '" + path + "'");
    const std::size_t pixels = static_cast<std::size_t>(channels) * height * width;
    std::string line;
    if (!std::getline(is, line) || line.rfind("id,class", 0) != 0) {
        throw DataError("'" + path + "': header must start with 'id,class'");
    }
    std::vector<Sample> out;
    int lineno = 1;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::vector<std::string> fields;
        std::stringstream ss(line);
        for (std::string f; std::getline(ss, f, ',');) fields.push_back(f);
        if (fields.size() != pixels + 2) {
            throw DataError("'" + path + "' line " + std::to_string(lineno) + ": expected " + std::to_string(pixels + 2) +
                            " fields, found " + std::to_string(fields.size()));
        }
        Sample s;
        std::vector<double> px(pixels);
        try {
            s.id = std::stoll(fields[0]);
            s.label = std::stoi(fields[1]);
            for (std::size_t i = 0; i < pixels; ++i) px[i] = std::stod(fields[i + 2]);
        } catch (const std::exception&) {
            throw DataError("'" + path + "' line " + std::to_string(lineno) + ": malformed number");
        }
        if (s.label < 0) throw DataError("'" + path + "' line " + std::to_string(lineno) + ": negative class");
        s.image = Tensor(Shape{channels, height, width}, std::move(px));
        if (!s.image.all_finite()) throw DataError("'" + path + "' line " + std::to_string(lineno) + ": non-finite pixel");
        out.push_back(std::move(s));
    }
    return out;
}

DatasetSplit split_balanced(const Source& src, int num_labels, std::uint64_t seed, bool exclude_labeled) {
    const int C = src.num_classes;
    if (C < 2) throw DataError("a split needs at least 2 classes");
    if (num_labels <= 0 || num_labels % C != 0) {
        throw ConfigError("num_labels = " + std::to_string(num_labels) + " is not a positive multiple of " +
                          std::to_string(C) + " classes");
    }
    const int per = num_labels / C;
    auto groups = by_class(src);
    RngStream rng(seed, "split");
    DatasetSplit out = empty_split(src);
    std::vector<char> taken(src.train.size(), 0);
    for (int c = 0; c < C; ++c) {
        if (static_cast<int>(groups[c].size()) < per) {
            throw DataError("class " + std::to_string(c) + " has " + std::to_string(groups[c].size()) +
                            " samples, fewer than the " + std::to_string(per) + " labels requested");
        }
        shuffle(groups[c], rng);
        for (int i = 0; i < per; ++i) {
            taken[groups[c][i]] = 1;
            out.labeled.push_back(src.train[groups[c][i]]);
        }
    }
    for (std::size_t i = 0; i < src.train.size(); ++i) {
        if (!exclude_labeled || !taken[i]) out.unlabeled.push_back(src.train[i]);
    }
    sort_by_id(out.labeled);
    return out;
}

int longtail_count(int head, double gamma, int c, int classes) {
    if (head < 1 || classes < 1 || c < 0 || c >= classes) throw std::invalid_argument("longtail_count: bad arguments");
    if (!(gamma >= 1.0)) throw std::invalid_argument("imbalance ratio gamma must be at least 1");
    if (classes == 1) return head;
    const double v = head * std::pow(gamma, -static_cast<double>(c) / (classes - 1));
    // Guards exact integers such as 1500 / 100 against landing a few ulps low.
    const int n = static_cast<int>(v * (1.0 + 1e-12));
    if (n < 1) {
        throw ConfigError("long-tail count for class " + std::to_string(c) + " truncates to 0 (head " +
                          std::to_string(head) + ", gamma " + std::to_string(gamma) + ")");
    }
    return n;
}

std::vector<int> LongTailConfig::labeled_counts() const {
    std::vector<int> out;
    for (int c = 0; c < classes; ++c) out.push_back(longtail_count(n1, gamma, c, classes));
    return out;
}

std::vector<int> LongTailConfig::unlabeled_counts() const {
    std::vector<int> out;
    for (int c = 0; c < classes; ++c) out.push_back(longtail_count(m1, gamma, c, classes));
    return out;
}

DatasetSplit split_longtail(const Source& src, const LongTailConfig& cfg, std::uint64_t seed) {
    if (cfg.classes != src.num_classes) {
        throw ConfigError("long-tail config has " + std::to_string(cfg.classes) + " classes but the source has " +
                          std::to_string(src.num_classes));
    }
    const auto nl = cfg.labeled_counts(), nu = cfg.unlabeled_counts();
    auto groups = by_class(src);
    RngStream rng(seed, "split");
    DatasetSplit out = empty_split(src);
    for (int c = 0; c < cfg.classes; ++c) {
        const std::size_t need = static_cast<std::size_t>(nl[c]) + nu[c];
        if (groups[c].size() < need) {
            throw DataError("class " + std::to_string(c) + " has " + std::to_string(groups[c].size()) +
                            " samples but the long-tail split needs " + std::to_string(need));
        }
        shuffle(groups[c], rng);
        for (int i = 0; i < nl[c]; ++i) out.labeled.push_back(src.train[groups[c][i]]);
        for (int i = 0; i < nu[c]; ++i) out.unlabeled.push_back(src.train[groups[c][nl[c] + i]]);
    }
    sort_by_id(out.labeled);
    sort_by_id(out.unlabeled);
    return out;
}

void write_manifest(const DatasetSplit& split, std::ostream& os) {
    os << "id,role,class\n";
    for (const auto& s : split.labeled) os << s.id << ",labeled," << s.label << '\n';
    for (const auto& s : split.unlabeled) os << s.id << ",unlabeled,\n";
    for (const auto& s : split.test) os << s.id << ",test," << s.label << '\n';
}

std::vector<double> channel_means(const std::vector<Sample>& samples) {
    if (samples.empty()) return {};
    const int C = samples.front().image.shape()[0];
    std::vector<double> sum(C, 0.0);
    std::size_t count = 0;
    for (const auto& s : samples) {
        const std::size_t plane = s.image.numel() / C;
        for (int c = 0; c < C; ++c) {
            for (std::size_t i = 0; i < plane; ++i) sum[c] += s.image[c * plane + i];
        }
        count += plane;
    }
    for (double& v : sum) v /= static_cast<double>(count);
    return sum;
}

std::vector<double> labeled_prior(const DatasetSplit& split) {
    std::vector<double> p(split.num_classes, 0.0);
    for (const auto& s : split.labeled) p[s.label] += 1.0;
    for (double& v : p) v /= static_cast<double>(split.labeled.size());
    return p;
}

}  // namespace ifm::data
