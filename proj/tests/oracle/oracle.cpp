#include "oracle.hpp"

#include <cmath>
#include <cstring>

namespace oracle {

Grid::Grid(int n_, int c_, int h_, int w_, double fill)
    : n(n_), c(c_), h(h_), w(w_), v(static_cast<std::size_t>(n_) * c_ * h_ * w_, fill) {}

double& Grid::at(int i, int j, int y, int x) { return v[((static_cast<std::size_t>(i) * c + j) * h + y) * w + x]; }

double Grid::at(int i, int j, int y, int x) const {
    return v[((static_cast<std::size_t>(i) * c + j) * h + y) * w + x];
}

void guard_feature(const Grid& g) {
    if (g.n > 4 || g.c > 8 || g.h > 16 || g.w > 16) throw SizeGuard("oracle tensors are limited to 4x8x16x16");
}

Grid conv2d(const Grid& x, const Grid& weight, int stride, int pad) {
    if (x.c != weight.c) throw std::invalid_argument("oracle conv2d: channel mismatch");
    const int k = weight.h;
    const int oh = (x.h + 2 * pad - k) / stride + 1;
    const int ow = (x.w + 2 * pad - k) / stride + 1;
    Grid out(x.n, weight.n, oh, ow);
    for (int i = 0; i < x.n; ++i)
        for (int o = 0; o < weight.n; ++o)
            for (int y = 0; y < oh; ++y)
                for (int z = 0; z < ow; ++z) {
                    double s = 0.0;
                    for (int ci = 0; ci < x.c; ++ci)
                        for (int a = 0; a < k; ++a)
                            for (int b = 0; b < k; ++b) {
                                const int sy = y * stride + a - pad, sz = z * stride + b - pad;
                                if (sy < 0 || sy >= x.h || sz < 0 || sz >= x.w) continue;
                                s += x.at(i, ci, sy, sz) * weight.at(o, ci, a, b);
                            }
                    out.at(i, o, y, z) = s;
                }
    return out;
}

Grid channel_drop(const Grid& x, const std::vector<std::uint8_t>& keep) {
    guard_feature(x);
    if (static_cast<int>(keep.size()) != x.c) throw std::invalid_argument("oracle channel_drop: mask length");
    Grid out(x.n, x.c, x.h, x.w);
    for (int i = 0; i < x.n; ++i)
        for (int j = 0; j < x.c; ++j)
            for (int y = 0; y < x.h; ++y)
                for (int z = 0; z < x.w; ++z) out.at(i, j, y, z) = keep[j] ? x.at(i, j, y, z) * 2.0 : 0.0;
    return out;
}

Grid channel_drop_mask_average(const Grid& x) {
    guard_feature(x);
    const int masks = 1 << x.c;
    Grid sum(x.n, x.c, x.h, x.w);
    for (int m = 0; m < masks; ++m) {
        std::vector<std::uint8_t> keep(x.c);
        for (int j = 0; j < x.c; ++j) keep[j] = static_cast<std::uint8_t>((m >> j) & 1);
        const Grid o = channel_drop(x, keep);
        for (std::size_t i = 0; i < sum.v.size(); ++i) sum.v[i] += o.v[i];
    }
    for (double& s : sum.v) s /= masks;
    return sum;
}

Grid spatial_drop(const Grid& x, int rx, int ry, int rh, int rw) {
    guard_feature(x);
    if (rx < 0 || ry < 0 || rh < 0 || rw < 0 || rx + rh > x.h || ry + rw > x.w) {
        throw std::invalid_argument("oracle spatial_drop: rectangle out of bounds");
    }
    // Explicit 0/1 mask, then mask-multiply with the inverted-dropout factor.
    std::vector<std::vector<int>> m(x.h, std::vector<int>(x.w, 1));
    int dropped = 0;
    for (int y = rx; y < rx + rh; ++y)
        for (int z = ry; z < ry + rw; ++z) {
            m[y][z] = 0;
            ++dropped;
        }
    const double scale =
        dropped == 0 ? 1.0 : static_cast<double>(x.h * x.w) / static_cast<double>(x.h * x.w - dropped);
    Grid out(x.n, x.c, x.h, x.w);
    for (int i = 0; i < x.n; ++i)
        for (int j = 0; j < x.c; ++j)
            for (int y = 0; y < x.h; ++y)
                for (int z = 0; z < x.w; ++z) out.at(i, j, y, z) = m[y][z] ? x.at(i, j, y, z) * scale : 0.0;
    return out;
}

namespace {

bool is_horizontal(Dir d) { return d == Dir::Left || d == Dir::Right; }

}  // namespace

Grid line_shift(const Grid& x, Dir d, const std::vector<int>& offsets) {
    guard_feature(x);
    const int lines = is_horizontal(d) ? x.h : x.w;
    if (static_cast<int>(offsets.size()) != lines) throw std::invalid_argument("oracle line_shift: offsets");
    Grid out(x.n, x.c, x.h, x.w);
    for (int i = 0; i < x.n; ++i)
        for (int j = 0; j < x.c; ++j) {
            // Forward map: where does input cell (y, z) land?
            std::vector<std::vector<int>> filled(x.h, std::vector<int>(x.w, 0));
            double lost = 0.0;
            int lost_count = 0;
            for (int y = 0; y < x.h; ++y)
                for (int z = 0; z < x.w; ++z) {
                    int ty = y, tz = z;
                    if (d == Dir::Right) tz = z + offsets[y];
                    if (d == Dir::Left) tz = z - offsets[y];
                    if (d == Dir::Down) ty = y + offsets[z];
                    if (d == Dir::Up) ty = y - offsets[z];
                    if (ty < 0 || ty >= x.h || tz < 0 || tz >= x.w) {
                        lost += x.at(i, j, y, z);
                        ++lost_count;
                    } else {
                        out.at(i, j, ty, tz) = x.at(i, j, y, z);
                        filled[ty][tz] = 1;
                    }
                }
            const double fill = lost_count > 0 ? lost / lost_count : 0.0;
            for (int y = 0; y < x.h; ++y)
                for (int z = 0; z < x.w; ++z)
                    if (!filled[y][z]) out.at(i, j, y, z) = fill;
        }
    return out;
}

Grid translate(const Grid& x, Dir d, int length) {
    const int extent = is_horizontal(d) ? x.w : x.h;
    if (length < 0 || length > extent) throw std::invalid_argument("oracle translate: length out of range");
    return line_shift(x, d, std::vector<int>(is_horizontal(d) ? x.h : x.w, length));
}

std::vector<int> linspace_offsets(int length, int lines) {
    std::vector<int> out(lines, 0);
    for (int j = 0; j < lines && lines > 1; ++j) {
        const double v = static_cast<double>(length) * j / (lines - 1);
        out[j] = static_cast<int>(std::floor(v + 0.5));
    }
    return out;
}

Grid shear(const Grid& x, Dir d, int length) {
    const int extent = is_horizontal(d) ? x.w : x.h;
    if (length < 0 || length > extent) throw std::invalid_argument("oracle shear: length out of range");
    return line_shift(x, d, linspace_offsets(length, is_horizontal(d) ? x.h : x.w));
}

Grid window_smooth(const Grid& x, int k, double alpha) {
    guard_feature(x);
    if (k % 2 == 0 || k < 3) throw std::invalid_argument("oracle window_smooth: odd k >= 3 required");
    const int r = k / 2;
    Grid out(x.n, x.c, x.h, x.w);
    for (int i = 0; i < x.n; ++i)
        for (int j = 0; j < x.c; ++j)
            for (int y = 0; y < x.h; ++y)
                for (int z = 0; z < x.w; ++z) {
                    const double centre = x.at(i, j, y, z);
                    double s = 0.0;
                    int count = 0;
                    for (int a = -r; a <= r; ++a)
                        for (int b = -r; b <= r; ++b) {
                            const int sy = y + a, sz = z + b;
                            if (sy < 0 || sy >= x.h || sz < 0 || sz >= x.w) continue;
                            s += x.at(i, j, sy, sz) - centre;
                            ++count;
                        }
                    out.at(i, j, y, z) = centre + alpha * (s / count);
                }
    return out;
}

std::optional<double> otsu(const std::vector<double>& values) {
    if (values.empty()) return std::nullopt;
    double lo = values[0], hi = values[0];
    for (double v : values) {
        if (v < lo) lo = v;
        if (v > hi) hi = v;
    }
    if (!(hi > lo)) return std::nullopt;
    constexpr int bins = 256;
    std::vector<int> bin_of(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) {
        int b = static_cast<int>((values[i] - lo) / (hi - lo) * bins);
        if (b > bins - 1) b = bins - 1;
        if (b < 0) b = 0;
        bin_of[i] = b;
    }
    const double total = static_cast<double>(values.size());
    double best = -1.0;
    int best_t = 1;
    for (int t = 1; t < bins; ++t) {
        // Class statistics recomputed from the histogram for every split, with
        // the same summation order (ascending bins) a histogram pass would use.
        std::vector<double> hist(bins, 0.0);
        for (int b : bin_of) hist[b] += 1.0;
        double w0 = 0.0, s0 = 0.0, s_all = 0.0;
        for (int b = 0; b < bins; ++b) s_all += hist[b] * (b + 0.5);
        for (int b = 0; b < t; ++b) {
            w0 += hist[b];
            s0 += hist[b] * (b + 0.5);
        }
        const double w1 = total - w0;
        if (w0 == 0.0 || w1 == 0.0) continue;
        const double m0 = s0 / w0, m1 = (s_all - s0) / w1;
        const double between = (w0 / total) * (w1 / total) * (m0 - m1) * (m0 - m1);
        if (between > best) {
            best = between;
            best_t = t;
        }
    }
    return lo + best_t * ((hi - lo) / bins);
}

int longtail_count(int head, double gamma, int c, int classes) {
    if (classes == 1) return head;
    const long double e = -static_cast<long double>(c) / (classes - 1);
    const long double v = std::exp(std::log(static_cast<long double>(head)) + e * std::log(static_cast<long double>(gamma)));
    // Values within 1e-9 relative of an integer are that integer.
    const long double r = std::round(v);
    if (std::fabs(v - r) <= 1e-9L * v) return static_cast<int>(r);
    return static_cast<int>(std::floor(v));
}

std::vector<double> finite_difference(const std::function<double(const std::vector<double>&)>& f,
                                      std::vector<double> x, double step) {
    std::vector<double> g(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double keep = x[i];
        x[i] = keep + step;
        const double up = f(x);
        x[i] = keep - step;
        const double down = f(x);
        x[i] = keep;
        g[i] = (up - down) / (2.0 * step);
    }
    return g;
}

bool bitwise_equal(const std::vector<double>& a, const std::vector<double>& b) {
    return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

}  // namespace oracle
