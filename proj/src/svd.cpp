#include "fedner/svd.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <vector>

namespace fedner {

namespace {

// One-sided Jacobi on a tall-or-square matrix a (n x m, n >= m): rotates
// column pairs until all are mutually orthogonal, accumulating the rotations
// in v. Afterwards sigma_j = ||a_j|| and u_j = a_j / sigma_j.
void jacobi_orthogonalize(Tensor& a, Tensor& v) {
    const std::size_t n = a.rows(), m = a.cols();
    const int max_sweeps = 60;
    const double eps = 1e-15;
    for (int sweep = 0; sweep < max_sweeps; ++sweep) {
        bool rotated = false;
        for (std::size_t p = 0; p + 1 < m; ++p) {
            for (std::size_t q = p + 1; q < m; ++q) {
                double app = 0.0, aqq = 0.0, apq = 0.0;
                for (std::size_t i = 0; i < n; ++i) {
                    const double x = a(i, p), y = a(i, q);
                    app += x * x;
                    aqq += y * y;
                    apq += x * y;
                }
                if (std::abs(apq) <= eps * std::sqrt(app * aqq) || apq == 0.0) continue;
                rotated = true;
                const double tau = (aqq - app) / (2.0 * apq);
                const double t = (tau >= 0.0 ? 1.0 : -1.0) /
                                 (std::abs(tau) + std::sqrt(1.0 + tau * tau));
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double s = c * t;
                for (std::size_t i = 0; i < n; ++i) {
                    const double x = a(i, p), y = a(i, q);
                    a(i, p) = c * x - s * y;
                    a(i, q) = s * x + c * y;
                }
                for (std::size_t i = 0; i < m; ++i) {
                    const double x = v(i, p), y = v(i, q);
                    v(i, p) = c * x - s * y;
                    v(i, q) = s * x + c * y;
                }
            }
        }
        if (!rotated) break;
    }
}

// Replaces near-zero columns of u with an orthonormal completion so the
// factor stays orthonormal even for rank-deficient input.
void complete_zero_columns(Tensor& u, const std::vector<std::size_t>& zero_cols) {
    const std::size_t n = u.rows(), r = u.cols();
    std::size_t next = 0;
    for (std::size_t col : zero_cols) {
        // Try canonical basis vectors, Gram-Schmidt against all other columns.
        for (; next < n; ++next) {
            std::vector<double> cand(n, 0.0);
            cand[next] = 1.0;
            for (std::size_t j = 0; j < r; ++j) {
                if (j == col) continue;
                double dot = 0.0;
                for (std::size_t i = 0; i < n; ++i) dot += cand[i] * u(i, j);
                for (std::size_t i = 0; i < n; ++i) cand[i] -= dot * u(i, j);
            }
            double norm = 0.0;
            for (double x : cand) norm += x * x;
            norm = std::sqrt(norm);
            if (norm > 1e-8) {
                for (std::size_t i = 0; i < n; ++i) u(i, col) = cand[i] / norm;
                ++next;
                break;
            }
        }
    }
}

// Sign convention: largest-|entry| element of each u column made
// non-negative, ties broken by lowest row index; v follows.
void apply_sign_convention(Tensor& u, Tensor& v) {
    for (std::size_t j = 0; j < u.cols(); ++j) {
        std::size_t arg = 0;
        double best = std::abs(u(0, j));
        for (std::size_t i = 1; i < u.rows(); ++i) {
            const double a = std::abs(u(i, j));
            if (a > best) {
                best = a;
                arg = i;
            }
        }
        if (u(arg, j) < 0.0) {
            for (std::size_t i = 0; i < u.rows(); ++i) u(i, j) = -u(i, j);
            for (std::size_t i = 0; i < v.rows(); ++i) v(i, j) = -v(i, j);
        }
    }
}

SvdFactors svd_tall(const Tensor& m) {
    const std::size_t n = m.rows(), c = m.cols();
    Tensor a = m;
    Tensor v = Tensor::matrix(c, c);
    for (std::size_t i = 0; i < c; ++i) v(i, i) = 1.0;
    jacobi_orthogonalize(a, v);

    std::vector<double> sig(c, 0.0);
    for (std::size_t j = 0; j < c; ++j) {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) s += a(i, j) * a(i, j);
        sig[j] = std::sqrt(s);
    }

    // Order singular values non-increasing (stable in the original index).
    std::vector<std::size_t> order(c);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t x, std::size_t y) { return sig[x] > sig[y]; });

    Tensor u = Tensor::matrix(n, c);
    Tensor vs = Tensor::matrix(c, c);
    Tensor sigma = Tensor::vector(std::vector<double>(c, 0.0));
    std::vector<std::size_t> zero_cols;
    for (std::size_t j = 0; j < c; ++j) {
        const std::size_t src = order[j];
        sigma[j] = sig[src];
        if (sig[src] > 1e-300) {
            for (std::size_t i = 0; i < n; ++i) u(i, j) = a(i, src) / sig[src];
        } else {
            sigma[j] = 0.0;
            zero_cols.push_back(j);
        }
        for (std::size_t i = 0; i < c; ++i) vs(i, j) = v(i, src);
    }
    if (!zero_cols.empty()) complete_zero_columns(u, zero_cols);
    apply_sign_convention(u, vs);
    return {std::move(u), std::move(sigma), std::move(vs)};
}

}  // namespace

SvdFactors svd(const Tensor& m) {
    if (m.rank() != 2) {
        throw std::invalid_argument("svd: rank-2 input required, got " +
                                    shape_to_string(m.shape()));
    }
    if (!m.all_finite()) throw std::invalid_argument("svd: non-finite input");

    if (m.rows() >= m.cols()) return svd_tall(m);

    // Wide input: factor the transpose and swap the roles of u and v. The
    // sign convention is re-applied because it is defined on u's columns.
    SvdFactors t = svd_tall(transpose(m));
    SvdFactors out{std::move(t.v), std::move(t.sigma), std::move(t.u)};
    apply_sign_convention(out.u, out.v);
    return out;
}

Tensor svd_backward(const Tensor& m, const SvdFactors& factors, const Tensor& grad_u) {
    const Tensor& u = factors.u;
    const Tensor& sigma = factors.sigma;
    const Tensor& v = factors.v;
    const std::size_t n = u.rows();
    const std::size_t r = u.cols();
    if (m.rank() != 2 || m.rows() != n || m.cols() != v.rows()) {
        throw std::invalid_argument("svd_backward: factors do not match input shape");
    }
    if (grad_u.rank() != 2 || grad_u.rows() != n || grad_u.cols() != r) {
        throw std::invalid_argument("svd_backward: cotangent shape mismatch");
    }

    // dL/dm = u (F o (u^T du - du^T u)) S v^T  [+ (I - u u^T) du S^-1 v^T if u is not square]
    // with F_ij = 1 / (sigma_j^2 - sigma_i^2), zero on the diagonal,
    // denominators clamped in magnitude to >= 1e-8.
    Tensor utdu = matmul(transpose(u), grad_u);  // r x r
    Tensor k = Tensor::matrix(r, r);
    for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = 0; j < r; ++j) {
            if (i == j) continue;
            double denom = sigma[j] * sigma[j] - sigma[i] * sigma[i];
            const double mag = std::max(std::abs(denom), 1e-8);
            denom = (denom < 0.0) ? -mag : mag;
            // (u^T du - du^T u)_ij scaled by F and by sigma_j on the right.
            k(i, j) = (utdu(i, j) - utdu(j, i)) / denom * sigma[j];
        }
    }
    Tensor grad = matmul(matmul(u, k), transpose(v));  // n x m

    if (r < n) {
        // Projection term: (du - u u^T du) S^-1 v^T.
        Tensor proj = grad_u;
        Tensor uutdu = matmul(u, utdu);
        proj -= uutdu;
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < r; ++j) {
                proj(i, j) /= std::max(sigma[j], 1e-8);
            }
        }
        grad += matmul(proj, transpose(v));
    }
    return grad;
}

}  // namespace fedner
