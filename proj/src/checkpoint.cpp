#include "ifmatch/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

namespace ifm {

namespace {

constexpr char kMagic[4] = {'I', 'F', 'M', '1'};

void put_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    os.write(reinterpret_cast<const char*>(b), 4);
}

void put_f64(std::ostream& os, double v) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(bits >> (8 * i));
    os.write(reinterpret_cast<const char*>(b), 8);
}

void read_exact(std::istream& is, void* dst, std::size_t n, const std::string& what) {
    is.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(is.gcount()) != n) throw DataError("checkpoint truncated while reading " + what);
}

std::uint32_t get_u32(std::istream& is, const std::string& what) {
    unsigned char b[4];
    read_exact(is, b, 4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
}

double get_f64(std::istream& is, const std::string& what) {
    unsigned char b[8];
    read_exact(is, b, 8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return std::bit_cast<double>(v);
}

}  // namespace

void write_container(std::ostream& os, const std::vector<NamedTensor>& tensors) {
    os.write(kMagic, 4);
    for (const auto& t : tensors) {
        put_u32(os, static_cast<std::uint32_t>(t.name.size()));
        os.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
        const Shape& s = t.value.shape();
        put_u32(os, static_cast<std::uint32_t>(s.rank()));
        for (int i = 0; i < s.rank(); ++i) put_u32(os, static_cast<std::uint32_t>(s[i]));
        for (double v : t.value.data()) put_f64(os, v);
    }
    if (!os) throw DataError("failed to write checkpoint");
}

std::vector<NamedTensor> read_container(std::istream& is) {
    char magic[4];
    read_exact(is, magic, 4, "magic");
    if (std::memcmp(magic, kMagic, 4) != 0) {
        throw DataError("checkpoint magic mismatch: expected IFM1, found '" + std::string(magic, 4) + "'");
    }
    std::vector<NamedTensor> out;
    while (is.peek() != std::char_traits<char>::eof()) {
        NamedTensor t;
        const std::uint32_t len = get_u32(is, "name length");
        if (len > (1u << 20)) throw DataError("checkpoint name length " + std::to_string(len) + " is implausible");
        t.name.resize(len);
        read_exact(is, t.name.data(), len, "name");
        const std::uint32_t rank = get_u32(is, "rank of '" + t.name + "'");
        if (rank > static_cast<std::uint32_t>(Shape::kMaxRank)) {
            throw DataError("checkpoint tensor '" + t.name + "' has rank " + std::to_string(rank));
        }
        std::vector<int> dims(rank);
        for (auto& d : dims) {
            const std::uint32_t e = get_u32(is, "extents of '" + t.name + "'");
            if (e == 0 || e > (1u << 30)) throw DataError("checkpoint tensor '" + t.name + "' has a bad extent");
            d = static_cast<int>(e);
        }
        t.value = Tensor(Shape(std::span<const int>(dims)));
        for (double& v : t.value.data()) v = get_f64(is, "values of '" + t.name + "'");
        out.push_back(std::move(t));
    }
    return out;
}

void save_container(const std::string& path, const std::vector<NamedTensor>& tensors) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw DataError("cannot open '" + path + "' for writing");
    write_container(os, tensors);
}

std::vector<NamedTensor> load_container(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open checkpoint '" + path + "'");
    return read_container(is);
}

const NamedTensor* find_tensor(const std::vector<NamedTensor>& tensors, const std::string& name) {
    for (const auto& t : tensors) {
        if (t.name == name) return &t;
    }
    return nullptr;
}

}  // namespace ifm
