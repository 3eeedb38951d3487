#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>

namespace softrod {

using Vec2 = Eigen::Vector2d;
using Mat2 = Eigen::Matrix2d;

/// Scalar field sampled on the grid, one value per node.
using Field1 = Eigen::VectorXd;

/// 2-vector field sampled on the grid, one column per node.
using Field2 = Eigen::Matrix2Xd;

/// Uniform grid on [0, ell] with n nodes, ds = ell/(n-1).
struct GridSpec {
    double ell = 0.5;
    int n = 11;
    double ds = 0.05;

    static GridSpec make(double ell, int n) {
        if (n < 3) throw std::invalid_argument("GridSpec: need at least 3 nodes");
        if (!(ell > 0.0)) throw std::invalid_argument("GridSpec: length must be positive");
        return GridSpec{ell, n, ell / (n - 1)};
    }

    double s(int i) const { return ds * i; }

    Field1 nodes() const {
        Field1 out(n);
        for (int i = 0; i < n; ++i) out[i] = s(i);
        return out;
    }
};

/// Planar rotation by theta: [[cos, -sin], [sin, cos]].
inline Mat2 rotation_matrix(double theta) {
    const double c = std::cos(theta);
    const double s = std::sin(theta);
    Mat2 r;
    r << c, -s, s, c;
    return r;
}

/// d/dtheta of rotation_matrix(theta).
inline Mat2 rotation_matrix_deriv(double theta) {
    const double c = std::cos(theta);
    const double s = std::sin(theta);
    Mat2 r;
    r << -s, -c, c, -s;
    return r;
}

/// Planar hat operator: (p2, p3) -> (-p3, p2). A quarter-turn, so
/// dot(hat2(p), p) == 0 and hat2(hat2(p)) == -p.
inline Vec2 hat2(const Vec2& p) { return Vec2(-p[1], p[0]); }

/// Wrap an angle into [-pi, pi).
inline double wrap_angle(double theta) {
    const double two_pi = 2.0 * M_PI;
    double x = std::fmod(theta + M_PI, two_pi);
    if (x < 0.0) x += two_pi;
    return x - M_PI;
}

/// Second-order d/ds matrix: central differences at interior nodes,
/// one-sided three-point stencils at both ends. Exact on linear fields.
inline Eigen::MatrixXd differentiation_matrix(const GridSpec& grid) {
    const int n = grid.n;
    const double h = grid.ds;
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(n, n);
    a(0, 0) = -3.0 / (2.0 * h);
    a(0, 1) = 4.0 / (2.0 * h);
    a(0, 2) = -1.0 / (2.0 * h);
    for (int i = 1; i < n - 1; ++i) {
        a(i, i - 1) = -1.0 / (2.0 * h);
        a(i, i + 1) = 1.0 / (2.0 * h);
    }
    a(n - 1, n - 1) = 3.0 / (2.0 * h);
    a(n - 1, n - 2) = -4.0 / (2.0 * h);
    a(n - 1, n - 3) = 1.0 / (2.0 * h);
    return a;
}

/// d/ds applied column-wise to a 2-vector field.
inline Field2 apply_diff(const Eigen::MatrixXd& a, const Field2& f) {
    return (a * f.transpose()).transpose();
}

/// Trapezoidal tail integral: node i holds int_{s_i}^{ell} f dtau.
/// The last node is exactly zero.
inline Field1 integral_from_s(const Field1& f, const GridSpec& grid) {
    const int n = grid.n;
    Field1 out(n);
    out[n - 1] = 0.0;
    for (int i = n - 2; i >= 0; --i)
        out[i] = out[i + 1] + 0.5 * grid.ds * (f[i] + f[i + 1]);
    return out;
}

/// Composite trapezoid over the whole rod.
inline double trapezoid(const Field1& f, const GridSpec& grid) {
    double acc = 0.5 * (f[0] + f[grid.n - 1]);
    for (int i = 1; i < grid.n - 1; ++i) acc += f[i];
    return acc * grid.ds;
}

/// Grid plus the shared differentiation matrix, built once per scenario.
struct Operators {
    GridSpec grid;
    Eigen::MatrixXd diff;

    explicit Operators(const GridSpec& g) : grid(g), diff(differentiation_matrix(g)) {}
};

}  // namespace softrod
