#pragma once

#include <array>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "ifmatch/errors.hpp"

namespace ifm {

/// Up to four positive extents, conventionally N x C x H x W. Rank 0 is a scalar.
class Shape {
public:
    static constexpr int kMaxRank = 4;

    Shape() = default;
    Shape(std::initializer_list<int> dims);
    explicit Shape(std::span<const int> dims);

    int rank() const { return rank_; }
    int operator[](int axis) const;
    std::size_t numel() const;
    std::string str() const;

    bool operator==(const Shape& other) const;
    bool operator!=(const Shape& other) const { return !(*this == other); }

private:
    std::array<int, kMaxRank> dims_{};
    int rank_ = 0;
};

/// Dense row-major f64 array with an optional gradient buffer.
///
/// The gradient is absent until `ensure_grad()` is called; parameters get one
/// when the tape back-propagates into them.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0);
    Tensor(Shape shape, std::vector<double> values);

    static Tensor scalar(double v);

    const Shape& shape() const { return shape_; }
    std::size_t numel() const { return data_.size(); }

    std::span<double> data() { return data_; }
    std::span<const double> data() const { return data_; }
    const std::vector<double>& values() const { return data_; }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    // 4-d accessor; valid only for rank-4 tensors.
    double& at(int n, int c, int h, int w);
    double at(int n, int c, int h, int w) const;
    // 2-d accessor; valid only for rank-2 tensors.
    double& at(int r, int c);
    double at(int r, int c) const;

    double item() const;

    bool requires_grad() const { return requires_grad_; }
    void set_requires_grad(bool on) { requires_grad_ = on; }

    bool has_grad() const { return !grad_.empty(); }
    std::span<double> grad() { return grad_; }
    std::span<const double> grad() const { return grad_; }
    void ensure_grad();
    void zero_grad();
    void clear_grad() { grad_.clear(); }

    bool all_finite() const;
    Tensor reshaped(Shape shape) const;

private:
    Shape shape_;
    std::vector<double> data_;
    bool requires_grad_ = false;
    std::vector<double> grad_;
};

// Throws NumericError naming `what` when any element is NaN or Inf.
void require_finite(std::span<const double> values, const char* what);

}  // namespace ifm
