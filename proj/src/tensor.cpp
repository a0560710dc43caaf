#include "ifmatch/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace ifm {

Shape::Shape(std::initializer_list<int> dims) : Shape(std::span<const int>(dims.begin(), dims.size())) {}

Shape::Shape(std::span<const int> dims) {
    if (dims.size() > static_cast<std::size_t>(kMaxRank)) {
        throw ShapeError("rank " + std::to_string(dims.size()) + " exceeds the maximum of 4");
    }
    rank_ = static_cast<int>(dims.size());
    for (int i = 0; i < rank_; ++i) {
        if (dims[i] <= 0) {
            throw ShapeError("extent of dimension " + std::to_string(i) + " must be positive, got " +
                             std::to_string(dims[i]));
        }
        dims_[i] = dims[i];
    }
}

int Shape::operator[](int axis) const {
    if (axis < 0 || axis >= rank_) {
        throw ShapeError("axis " + std::to_string(axis) + " out of range for " + str());
    }
    return dims_[axis];
}

std::size_t Shape::numel() const {
    std::size_t n = 1;
    for (int i = 0; i < rank_; ++i) n *= static_cast<std::size_t>(dims_[i]);
    return n;
}

std::string Shape::str() const {
    std::ostringstream os;
    os << '[';
    for (int i = 0; i < rank_; ++i) {
        if (i) os << 'x';
        os << dims_[i];
    }
    os << ']';
    return os.str();
}

bool Shape::operator==(const Shape& other) const {
    if (rank_ != other.rank_) return false;
    return std::equal(dims_.begin(), dims_.begin() + rank_, other.dims_.begin());
}

Tensor::Tensor(Shape shape, double fill) : shape_(shape), data_(shape.numel(), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> values) : shape_(shape), data_(std::move(values)) {
    if (data_.size() != shape_.numel()) {
        throw ShapeError("tensor of shape " + shape_.str() + " needs " + std::to_string(shape_.numel()) +
                         " values, got " + std::to_string(data_.size()));
    }
}

Tensor Tensor::scalar(double v) { return Tensor(Shape{}, std::vector<double>{v}); }

double& Tensor::at(int n, int c, int h, int w) {
    const std::size_t C = shape_[1], H = shape_[2], W = shape_[3];
    return data_[((n * C + c) * H + h) * W + w];
}

double Tensor::at(int n, int c, int h, int w) const {
    const std::size_t C = shape_[1], H = shape_[2], W = shape_[3];
    return data_[((n * C + c) * H + h) * W + w];
}

double& Tensor::at(int r, int c) { return data_[static_cast<std::size_t>(r) * shape_[1] + c]; }
double Tensor::at(int r, int c) const { return data_[static_cast<std::size_t>(r) * shape_[1] + c]; }

double Tensor::item() const {
    if (data_.size() != 1) throw ShapeError("item() on tensor of shape " + shape_.str());
    return data_[0];
}

void Tensor::ensure_grad() {
    if (grad_.size() != data_.size()) grad_.assign(data_.size(), 0.0);
}

void Tensor::zero_grad() {
    if (!grad_.empty()) std::fill(grad_.begin(), grad_.end(), 0.0);
}

bool Tensor::all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Tensor Tensor::reshaped(Shape shape) const {
    if (shape.numel() != data_.size()) {
        throw ShapeError("cannot reshape " + shape_.str() + " to " + shape.str());
    }
    return Tensor(shape, data_);
}

void require_finite(std::span<const double> values, const char* what) {
    for (double v : values) {
        if (!std::isfinite(v)) throw NumericError(std::string("non-finite value in ") + what);
    }
}

}  // namespace ifm
