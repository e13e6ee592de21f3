#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace fedner {

/// Dense multi-dimensional array of 64-bit floats, row-major.
/// Rank-1 and rank-2 tensors cover everything this project needs; the
/// shape is kept generic so scalars (rank-0) and vectors compose cleanly.
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<std::size_t> shape);
    Tensor(std::vector<std::size_t> shape, std::vector<double> data);

    static Tensor scalar(double v);
    static Tensor vector(std::vector<double> data);
    static Tensor matrix(std::size_t rows, std::size_t cols);
    static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> data);
    static Tensor zeros_like(const Tensor& other);

    const std::vector<std::size_t>& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t size() const { return data_.size(); }

    // Rank-2 accessors; checked only by assertions in debug builds.
    std::size_t rows() const { return shape_.at(0); }
    std::size_t cols() const { return shape_.at(1); }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }
    double& operator()(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }

    std::vector<double>& data() { return data_; }
    const std::vector<double>& data() const { return data_; }

    double item() const;  // requires size() == 1

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
    bool all_finite() const;

    Tensor& operator+=(const Tensor& other);
    Tensor& operator-=(const Tensor& other);
    Tensor& operator*=(double s);

private:
    std::vector<std::size_t> shape_;
    std::vector<double> data_;
};

std::string shape_to_string(const std::vector<std::size_t>& shape);

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& m);

/// Row-wise softmax for rank-2 input (axis = 1), element softmax over the
/// whole vector for rank-1. Stabilized by max subtraction.
Tensor softmax(const Tensor& logits);
void softmax_row_inplace(std::span<double> row);

/// Mean squared error over two tensors of identical shape.
double mse(const Tensor& a, const Tensor& b);

/// Shannon entropy in nats, -sum p ln p with 0 ln 0 := 0.
/// Input must be a distribution: p_i >= 0, sum within 1e-9 of 1.
double shannon_entropy(std::span<const double> p);
double shannon_entropy(const Tensor& p);

}  // namespace fedner
