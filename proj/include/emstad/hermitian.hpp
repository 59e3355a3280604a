#pragma once

// Small dense complex linear algebra for array snapshots (N <= 16 channels).

#include <cmath>
#include <complex>
#include <string>

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include "emstad/errors.hpp"

namespace emstad {

using cd = std::complex<double>;

inline constexpr int kMaxChannels = 16;

/// One N-channel snapshot (or steering vector). Storage is inline, no heap.
using CVec = Eigen::Matrix<cd, Eigen::Dynamic, 1, Eigen::ColMajor, kMaxChannels, 1>;
/// N x N complex matrix with inline storage.
using CMat = Eigen::Matrix<cd, Eigen::Dynamic, Eigen::Dynamic, Eigen::ColMajor, kMaxChannels, kMaxChannels>;
/// N x K data matrix; column k is the snapshot of range bin k.
using DataMatrix = Eigen::MatrixXcd;

/**
 * Hermitian positive-definite matrix together with its lower Cholesky factor.
 *
 * The input is symmetrized as (H + H^H)/2 before factorization, so round-off
 * asymmetry from long rank-one accumulations is absorbed. Construction throws
 * NotPositiveDefinite when a pivot is not strictly positive.
 */
class HermitianPd {
public:
    HermitianPd() = default;

    explicit HermitianPd(const CMat& h) {
        if (h.rows() != h.cols() || h.rows() == 0 || h.rows() > kMaxChannels) {
            throw std::invalid_argument("HermitianPd: expected a square matrix with 1..16 rows");
        }
        if (!h.allFinite()) {
            throw NotPositiveDefinite("HermitianPd: non-finite entries");
        }
        const double scale = h.norm();
        const double asym = (h - h.adjoint()).norm();
        if (asym > 1e-8 * scale) {
            throw std::invalid_argument("HermitianPd: input is not Hermitian (relative residual " +
                                        std::to_string(asym / scale) + ")");
        }
        matrix_ = (h + h.adjoint()) * 0.5;
        for (Eigen::Index i = 0; i < matrix_.rows(); ++i) {
            matrix_(i, i) = cd(matrix_(i, i).real(), 0.0);
        }
        factorize();
    }

    Eigen::Index size() const { return matrix_.rows(); }
    const CMat& matrix() const { return matrix_; }
    /// Lower-triangular L with L L^H equal to matrix().
    const CMat& factor() const { return factor_; }

    /// L^{-1} x, the whitened vector.
    template <typename Derived>
    typename Derived::PlainObject whiten(const Eigen::MatrixBase<Derived>& x) const {
        typename Derived::PlainObject out = x;
        factor_.triangularView<Eigen::Lower>().solveInPlace(out);
        return out;
    }

    /// y^H H^{-1} x through two triangular solves.
    template <typename DX, typename DY>
    cd quad_form(const Eigen::MatrixBase<DX>& x, const Eigen::MatrixBase<DY>& y) const {
        check_dim(x.rows());
        check_dim(y.rows());
        const CVec wx = whiten(x);
        const CVec wy = whiten(y);
        return wy.dot(wx); // Eigen's dot conjugates the left operand
    }

    /// H^{-1} x.
    template <typename Derived>
    CVec solve(const Eigen::MatrixBase<Derived>& x) const {
        check_dim(x.rows());
        CVec w = whiten(x);
        return factor_.adjoint().triangularView<Eigen::Upper>().solve(w);
    }

    double logdet() const { return logdet_; }

private:
    void factorize() {
        Eigen::LLT<CMat, Eigen::Lower> llt(matrix_);
        if (llt.info() != Eigen::Success) {
            throw NotPositiveDefinite("HermitianPd: Cholesky pivot <= 0");
        }
        factor_ = llt.matrixL();
        logdet_ = 0.0;
        for (Eigen::Index i = 0; i < factor_.rows(); ++i) {
            const double d = factor_(i, i).real();
            if (!(d > 0.0) || !std::isfinite(d)) {
                throw NotPositiveDefinite("HermitianPd: Cholesky pivot <= 0");
            }
            logdet_ += 2.0 * std::log(d);
        }
    }

    void check_dim(Eigen::Index n) const {
        if (n != matrix_.rows()) {
            throw std::invalid_argument("HermitianPd: dimension mismatch");
        }
    }

    CMat matrix_;
    CMat factor_;
    double logdet_ = 0.0;
};

/// Lower Cholesky factor of h.
inline CMat cholesky(const HermitianPd& h) { return h.factor(); }

/// y^H h^{-1} x; h^{-1} is never formed.
inline cd quad_form(const HermitianPd& h, const CVec& x, const CVec& y) { return h.quad_form(x, y); }

inline double logdet(const HermitianPd& h) { return h.logdet(); }

/// In-place acc += w x x^H. Only the lower triangle is computed; the upper
/// triangle is its exact conjugate, so Hermitian symmetry of acc is preserved
/// bit for bit.
template <typename Derived>
void add_outer(CMat& acc, const Eigen::MatrixBase<Derived>& x, double w) {
    if (w < 0.0) {
        throw std::invalid_argument("add_outer: negative weight");
    }
    if (w == 0.0) {
        return;
    }
    const Eigen::Index n = x.rows();
    for (Eigen::Index j = 0; j < n; ++j) {
        acc(j, j) += cd(w * std::norm(x(j)), 0.0);
        for (Eigen::Index i = j + 1; i < n; ++i) {
            const cd v = w * x(i) * std::conj(x(j));
            acc(i, j) += v;
            acc(j, i) += std::conj(v);
        }
    }
}

/// acc + w x x^H.
template <typename Derived>
CMat accumulate_outer(CMat acc, const Eigen::MatrixBase<Derived>& x, double w) {
    add_outer(acc, x, w);
    return acc;
}

} // namespace emstad
