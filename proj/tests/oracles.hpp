#pragma once

#include <functional>

#include <Eigen/Dense>

#include "gdsr/gdsr.hpp"

namespace oracle {

using gdsr::ImageTensor;
using gdsr::Matrix;
using gdsr::Shape;
using gdsr::Vector;

/// Column-by-column materialization of A^+ through pinv_apply.
inline Matrix pinv_matrix(const gdsr::SvdFactors& f)
{
    const Shape& out = f.op().output_shape();
    Matrix p(static_cast<Eigen::Index>(f.op().input_shape().size()), static_cast<Eigen::Index>(out.size()));
    for (Eigen::Index j = 0; j < p.cols(); ++j) {
        Vector e = Vector::Zero(p.cols());
        e[j] = 1.0;
        p.col(j) = gdsr::pinv_apply(f, {out, e}).data();
    }
    return p;
}

/// A^T (A A^T)^{-1} for a full-row-rank A, solved without any SVD.
inline Matrix normal_equations_pinv(const Matrix& a)
{
    const Matrix gram = a * a.transpose();
    return a.transpose() * gram.ldlt().solve(Matrix::Identity(gram.rows(), gram.cols()));
}

/// Central differences of a scalar function on R^n with step h.
inline Vector finite_difference(const std::function<double(const Vector&)>& f, const Vector& x, double h)
{
    Vector g(x.size());
    Vector p = x;
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        const double o = p[i];
        p[i] = o + h;
        const double up = f(p);
        p[i] = o - h;
        const double down = f(p);
        p[i] = o;
        g[i] = (up - down) / (2.0 * h);
    }
    return g;
}

inline double rel_error(const Vector& a, const Vector& b)
{
    const double scale = std::max({a.norm(), b.norm(), 1e-300});
    return (a - b).norm() / scale;
}

inline double rel_error(const Matrix& a, const Matrix& b)
{
    const double scale = std::max({a.norm(), b.norm(), 1e-300});
    return (a - b).norm() / scale;
}

inline Matrix random_matrix(Eigen::Index m, Eigen::Index n, gdsr::Rng& rng)
{
    Matrix a(m, n);
    for (Eigen::Index i = 0; i < m; ++i)
        for (Eigen::Index j = 0; j < n; ++j) a(i, j) = rng.normal();
    return a;
}

} // namespace oracle
