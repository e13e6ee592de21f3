#pragma once

#include "fedner/tensor.hpp"

namespace fedner {

/// Thin SVD factors of a rank-2 tensor M (n x m): M = u * diag(sigma) * v^T
/// with r = min(n, m). Columns of u and v are orthonormal, sigma is
/// non-negative and non-increasing.
///
/// Left singular vectors are only defined up to a per-column sign, so a
/// deterministic convention is applied: in each column of u the entry of
/// largest absolute value is non-negative (ties broken by lowest row index),
/// and v's columns are flipped along with u's to preserve the factorization.
struct SvdFactors {
    Tensor u;      // n x r
    Tensor sigma;  // r
    Tensor v;      // m x r
};

SvdFactors svd(const Tensor& m);

/// Gradient of a scalar loss through the left factor only: given the
/// cotangent dL/du, returns dL/dm. Degenerate singular-value pairs are
/// handled by clamping |sigma_j^2 - sigma_i^2| to >= 1e-8, so the result is
/// always finite.
Tensor svd_backward(const Tensor& m, const SvdFactors& factors, const Tensor& grad_u);

}  // namespace fedner
