#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

// Ellipsoidal calculus: membership, affine images, PSD square roots,
// Minkowski-sum bounds and Chebyshev confidence regions.
//
// An ellipsoid E(c, S) = { c + S^{1/2} s : ||s|| <= 1 } is stored as its
// center c and symmetric PSD shape matrix S.  Degenerate (singular) shapes
// are allowed; membership is then restricted to the range of S.

namespace pcis {

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

// Copies the lower triangle onto the upper one, making M bitwise symmetric.
template <typename Scalar>
void mirror_lower(MatrixX<Scalar>& M) {
    for (Eigen::Index i = 0; i < M.rows(); ++i)
        for (Eigen::Index j = 0; j < i; ++j) M(j, i) = M(i, j);
}

// M * S * M^T with exact symmetry (lower triangle computed, then mirrored).
template <typename DM, typename DS>
MatrixX<typename DM::Scalar> congruence(const Eigen::MatrixBase<DM>& M,
                                        const Eigen::MatrixBase<DS>& S) {
    using Scalar = typename DM::Scalar;
    const MatrixX<Scalar> Md = M;
    const MatrixX<Scalar> MS = Md * S;
    MatrixX<Scalar> R(Md.rows(), Md.rows());
    for (Eigen::Index i = 0; i < Md.rows(); ++i)
        for (Eigen::Index j = 0; j <= i; ++j) R(i, j) = MS.row(i).dot(Md.row(j));
    mirror_lower(R);
    return R;
}

// M^T * S * M with exact symmetry.
template <typename DM, typename DS>
MatrixX<typename DM::Scalar> congruence_t(const Eigen::MatrixBase<DM>& M,
                                          const Eigen::MatrixBase<DS>& S) {
    using Scalar = typename DM::Scalar;
    const MatrixX<Scalar> Md = M;
    const MatrixX<Scalar> SM = S * Md;
    MatrixX<Scalar> R(Md.cols(), Md.cols());
    for (Eigen::Index i = 0; i < Md.cols(); ++i)
        for (Eigen::Index j = 0; j <= i; ++j) R(i, j) = Md.col(i).dot(SM.col(j));
    mirror_lower(R);
    return R;
}

template <typename Scalar>
struct Ellipsoid {
    VectorX<Scalar> center;
    MatrixX<Scalar> shape;  // symmetric PSD, units of coordinate^2

    Ellipsoid(VectorX<Scalar> c, MatrixX<Scalar> S)
        : center(std::move(c)), shape(std::move(S)) {
        if (shape.rows() != shape.cols() || shape.rows() != center.size())
            throw std::invalid_argument("Ellipsoid: center/shape dimension mismatch");
        const Scalar scale = shape.template lpNorm<Eigen::Infinity>();
        if ((shape - shape.transpose()).template lpNorm<Eigen::Infinity>() >
            Scalar(1e-10) * std::max(scale, Scalar(1)))
            throw std::invalid_argument("Ellipsoid: shape matrix is not symmetric");
        Eigen::SelfAdjointEigenSolver<MatrixX<Scalar>> es(shape);
        const Scalar lmax = std::max(es.eigenvalues().maxCoeff(), Scalar(0));
        const Scalar lmin = es.eigenvalues().minCoeff();
        if (lmin < -Scalar(1e-10) * std::max(lmax, Scalar(1)))
            throw std::invalid_argument("Ellipsoid: shape matrix is not PSD (min eigenvalue " +
                                        std::to_string(static_cast<double>(lmin)) + ")");
        if (lmin < Scalar(0)) {
            // Negative eigenvalues within tolerance are clamped to zero.
            VectorX<Scalar> d = es.eigenvalues().cwiseMax(Scalar(0));
            shape = congruence(es.eigenvectors(), MatrixX<Scalar>(d.asDiagonal()));
        }
    }

    Eigen::Index dim() const { return center.size(); }
};

using Ellipsoidd = Ellipsoid<double>;

// Membership test (x - c)^T S^+ (x - c) <= 1 + tol, with the pseudo-inverse
// taken on the range of S: components of x - c along null directions must
// vanish (up to a small absolute/relative tolerance).
template <typename Scalar, typename Derived>
bool contains(const Ellipsoid<Scalar>& e, const Eigen::MatrixBase<Derived>& x,
              Scalar tol = Scalar(1e-9)) {
    if (x.size() != e.dim()) throw std::invalid_argument("contains: dimension mismatch");
    const VectorX<Scalar> r = x - e.center;
    Eigen::SelfAdjointEigenSolver<MatrixX<Scalar>> es(e.shape);
    const Scalar lmax = std::max(es.eigenvalues().maxCoeff(), Scalar(0));
    const Scalar rank_cut = Scalar(1e-12) * std::max(lmax, Scalar(1e-300));
    const Scalar null_tol = Scalar(1e-9) * std::max(Scalar(1), r.norm());
    Scalar quad = 0;
    for (Eigen::Index i = 0; i < e.dim(); ++i) {
        const Scalar proj = es.eigenvectors().col(i).dot(r);
        const Scalar lam = es.eigenvalues()(i);
        if (lam <= rank_cut) {
            if (std::abs(proj) > null_tol) return false;  // outside range of S
        } else {
            quad += proj * proj / lam;
        }
    }
    return quad <= Scalar(1) + tol;
}

// Symmetric PSD square root via eigendecomposition.  R is symmetric with
// R * R = S; eigenvalues below -1e-8 * ||S|| signal non-PSD input.
template <typename Derived>
MatrixX<typename Derived::Scalar> psd_sqrt(const Eigen::MatrixBase<Derived>& S) {
    using Scalar = typename Derived::Scalar;
    if (S.rows() != S.cols()) throw std::invalid_argument("psd_sqrt: matrix not square");
    Eigen::SelfAdjointEigenSolver<MatrixX<Scalar>> es(S);
    const Scalar lmax = std::max(es.eigenvalues().cwiseAbs().maxCoeff(), Scalar(0));
    if (es.eigenvalues().minCoeff() < -Scalar(1e-8) * std::max(lmax, Scalar(1)))
        throw std::invalid_argument("psd_sqrt: input is not PSD");
    // Relative rank floor: the root would amplify eigenvalue noise near zero.
    const Scalar cut = Scalar(1e-14) * lmax;
    VectorX<Scalar> d = es.eigenvalues().unaryExpr(
        [cut](Scalar v) { return v <= cut ? Scalar(0) : std::sqrt(v); });
    return congruence(es.eigenvectors(), MatrixX<Scalar>(d.asDiagonal()));
}

// Inverse symmetric square root: S^{-1/2}, requires S positive definite.
template <typename Derived>
MatrixX<typename Derived::Scalar> psd_sqrt_inv(const Eigen::MatrixBase<Derived>& S) {
    using Scalar = typename Derived::Scalar;
    if (S.rows() != S.cols()) throw std::invalid_argument("psd_sqrt_inv: matrix not square");
    Eigen::SelfAdjointEigenSolver<MatrixX<Scalar>> es(S);
    const Scalar lmax = es.eigenvalues().maxCoeff();
    if (es.eigenvalues().minCoeff() <= Scalar(1e-14) * std::max(lmax, Scalar(0)))
        throw std::invalid_argument("psd_sqrt_inv: input is singular or not PD");
    VectorX<Scalar> d = es.eigenvalues().cwiseSqrt().cwiseInverse();
    return congruence(es.eigenvectors(), MatrixX<Scalar>(d.asDiagonal()));
}

// Image of an ellipsoid under x -> M x + b:  E(M c + b, M S M^T).
template <typename Scalar, typename DM, typename DV>
Ellipsoid<Scalar> affine_image(const Ellipsoid<Scalar>& e, const Eigen::MatrixBase<DM>& M,
                               const Eigen::MatrixBase<DV>& b) {
    if (M.cols() != e.dim() || b.size() != M.rows())
        throw std::invalid_argument("affine_image: dimension mismatch");
    return Ellipsoid<Scalar>(M * e.center + b, congruence(M, e.shape));
}

// Outer bound of the Minkowski sum of two centered ellipsoids:
// E(0, S1) + E(0, S2) is contained in E(0, 2 (S1 + S2)), by
// sqrt(d^T S1 d) + sqrt(d^T S2 d) <= sqrt(2 d^T (S1 + S2) d) for every d.
template <typename Scalar>
Ellipsoid<Scalar> minkowski_outer_bound(const Ellipsoid<Scalar>& e1,
                                        const Ellipsoid<Scalar>& e2) {
    if (e1.dim() != e2.dim())
        throw std::invalid_argument("minkowski_outer_bound: dimension mismatch");
    if (e1.center.norm() != Scalar(0) || e2.center.norm() != Scalar(0))
        throw std::invalid_argument("minkowski_outer_bound: centers must be zero");
    return Ellipsoid<Scalar>(VectorX<Scalar>::Zero(e1.dim()),
                             Scalar(2) * (e1.shape + e2.shape));
}

// Support function of E(c, S) in direction d:  d^T c + sqrt(d^T S d).
template <typename Scalar, typename Derived>
Scalar support_function(const Ellipsoid<Scalar>& e, const Eigen::MatrixBase<Derived>& d) {
    if (d.size() != e.dim()) throw std::invalid_argument("support_function: dimension mismatch");
    const VectorX<Scalar> dir = d;
    return dir.dot(e.center) + std::sqrt(std::max(Scalar(0), dir.dot(e.shape * dir)));
}

template <typename Scalar>
VectorX<Scalar> unit_sphere_sample(Eigen::Index dim, std::mt19937_64& rng) {
    std::normal_distribution<Scalar> normal(0, 1);
    VectorX<Scalar> d(dim);
    do {
        for (Eigen::Index i = 0; i < dim; ++i) d(i) = normal(rng);
    } while (d.norm() == Scalar(0));
    return d / d.norm();
}

// Test oracle for the inner inclusion E(0, S1 + S2) within E(0,S1) + E(0,S2):
// checks sqrt(d^T (S1+S2) d) <= sqrt(d^T S1 d) + sqrt(d^T S2 d) over sampled
// directions.  Holds analytically for all PSD pairs; exists as a cross-check.
template <typename D1, typename D2>
bool inner_sum_check(const Eigen::MatrixBase<D1>& S1_expr, const Eigen::MatrixBase<D2>& S2_expr,
                     int trials, std::uint64_t seed = 0) {
    using Scalar = typename D1::Scalar;
    const MatrixX<Scalar> S1 = S1_expr, S2 = S2_expr;
    if (S1.rows() != S2.rows() || S1.rows() != S1.cols() || S2.rows() != S2.cols())
        throw std::invalid_argument("inner_sum_check: dimension mismatch");
    for (const auto* S : {&S1, &S2}) {
        Eigen::SelfAdjointEigenSolver<MatrixX<Scalar>> es(*S);
        const Scalar lmax = std::max(es.eigenvalues().maxCoeff(), Scalar(0));
        if (es.eigenvalues().minCoeff() < -Scalar(1e-8) * std::max(lmax, Scalar(1)))
            throw std::invalid_argument("inner_sum_check: input is not PSD");
    }
    std::mt19937_64 rng(seed);
    const MatrixX<Scalar> S12 = S1 + S2;
    for (int t = 0; t < trials; ++t) {
        const VectorX<Scalar> d = unit_sphere_sample<Scalar>(S1.rows(), rng);
        const Scalar lhs = std::sqrt(std::max(Scalar(0), d.dot(S12 * d)));
        const Scalar rhs = std::sqrt(std::max(Scalar(0), d.dot(S1 * d))) +
                           std::sqrt(std::max(Scalar(0), d.dot(S2 * d)));
        if (lhs > rhs + Scalar(1e-9) * std::max(Scalar(1), rhs)) return false;
    }
    return true;
}

// Distribution-free confidence region (multidimensional Chebyshev):
// E(mean, n_s / (1 - p) * cov) contains the random variable with
// probability at least p.
template <typename DV, typename DM>
Ellipsoid<typename DV::Scalar> chebyshev_region(const Eigen::MatrixBase<DV>& mean,
                                                const Eigen::MatrixBase<DM>& cov,
                                                typename DV::Scalar p) {
    using Scalar = typename DV::Scalar;
    if (!(p >= Scalar(0) && p < Scalar(1)))
        throw std::invalid_argument("chebyshev_region: require 0 <= p < 1");
    const Scalar ns = static_cast<Scalar>(mean.size());
    return Ellipsoid<Scalar>(mean, (ns / (Scalar(1) - p)) * cov);
}

// Uniform sample from E(c, S) via the ball transform c + S^{1/2} u^{1/d} s,
// with s uniform on the unit sphere and u uniform on [0, 1].
template <typename Scalar>
VectorX<Scalar> sample_uniform(const Ellipsoid<Scalar>& e, std::mt19937_64& rng) {
    const MatrixX<Scalar> R = psd_sqrt(e.shape);
    std::uniform_real_distribution<Scalar> unif(0, 1);
    const VectorX<Scalar> s = unit_sphere_sample<Scalar>(e.dim(), rng);
    const Scalar radius = std::pow(unif(rng), Scalar(1) / static_cast<Scalar>(e.dim()));
    return e.center + R * (radius * s);
}

}  // namespace pcis
