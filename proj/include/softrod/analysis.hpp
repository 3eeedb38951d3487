#pragma once

#include <softrod/control_inner.hpp>
#include <softrod/control_outer.hpp>
#include <softrod/core.hpp>
#include <softrod/dynamics.hpp>
#include <softrod/trajectory.hpp>

#include <Eigen/Eigenvalues>

#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace softrod {

/// Findings of the t=0 stability-condition check.
struct StabilityReport {
    double c_used = 0.0;            ///< inner-loop cross term, c_max/2
    double c_max = 0.0;             ///< damping_constant_bound of the inner gains
    double c1 = 0.0;                ///< outer-loop cross term, C = c1 I
    double V1 = 0.0;
    double V2 = 0.0;
    bool Kq_condition_ok = false;   ///< K_q + Phi(s, 0) SPD at every node
    double Kq_phi_min_eig = 0.0;
    Mat2 C_matrix = Mat2::Zero();
    double Phi_sup_norm = 0.0;
    std::string notes;
};

/// The six normed tracking-error quantities at one time instant.
struct ErrorNorms {
    double p_err_L2 = 0.0;
    double p_err_t_L2 = 0.0;
    double p_err_s_L2 = 0.0;
    double theta_err_Linf = 0.0;
    double theta_err_t_Linf = 0.0;
    double theta_err_s_L2 = 0.0;
    double t = 0.0;
};

/// Phi = R K3 R^T - R* K3 R*^T at one node.
inline Mat2 phi_matrix(double theta, double theta_star, const Mat2& K3) {
    const Mat2 r = rotation_matrix(theta);
    const Mat2 rs = rotation_matrix(theta_star);
    return r * K3 * r.transpose() - rs * K3 * rs.transpose();
}

/// Rotational Lyapunov functional
/// V1 = 1/2 int k_u theta~_s^2 + theta~_t^2 + 2c theta~ theta~_t + k_theta theta~^2 ds.
inline double lyapunov_inner(const RodState& state, const OuterSolution& outer,
                             const Field1& theta_star_t, const InnerGains& gains, double c,
                             const Operators& ops) {
    if (!(c > 0.0 && c < damping_constant_bound(gains)))
        throw std::invalid_argument("lyapunov_inner: c outside (0, c_max)");
    const Field1 te = state.theta - outer.theta_star;
    const Field1 te_t = state.w - theta_star_t;
    const Field1 te_s = ops.diff * te;
    Field1 density(ops.grid.n);
    for (int i = 0; i < ops.grid.n; ++i)
        density[i] = gains.k_u[i] * te_s[i] * te_s[i] + te_t[i] * te_t[i] +
                     2.0 * c * te[i] * te_t[i] + gains.k_theta[i] * te[i] * te[i];
    return 0.5 * trapezoid(density, ops.grid);
}

/// Translational Lyapunov functional
/// V2 = 1/2 int p~_s^T (K_q + Phi) p~_s + |p~_t|^2 + 2 c1 p~^T p~_t + p~^T K_p p~ ds.
/// Also reports sup_s |Phi| (spectral norm).
inline std::pair<double, double> lyapunov_outer(const RodState& state,
                                                const DesiredTrajectory& traj,
                                                const OuterSolution& outer,
                                                const OuterGains& gains, double c1,
                                                const Mat2& K3, const Operators& ops) {
    const Field2 p_err = state.p - traj.p_star;
    const Field2 p_err_t = state.v - traj.p_star_t;
    const Field2 p_err_s = apply_diff(ops.diff, p_err);
    Field1 density(ops.grid.n);
    double phi_sup = 0.0;
    for (int i = 0; i < ops.grid.n; ++i) {
        const Mat2 phi = phi_matrix(state.theta[i], outer.theta_star[i], K3);
        phi_sup = std::max(phi_sup, phi.operatorNorm());
        density[i] = p_err_s.col(i).dot((gains.K_q + phi) * p_err_s.col(i)) +
                     p_err_t.col(i).squaredNorm() + 2.0 * c1 * p_err.col(i).dot(p_err_t.col(i)) +
                     p_err.col(i).dot(gains.K_p * p_err.col(i));
    }
    return {0.5 * trapezoid(density, ops.grid), phi_sup};
}

/// Phi_t = M'(theta) theta_t - M'(theta*) theta*_t at one node, where
/// M(x) = R(x) K3 R(x)^T.
inline Mat2 phi_time_deriv(double theta, double theta_t, double theta_star, double theta_star_t,
                           const Mat2& K3) {
    auto m_deriv = [&K3](double x) {
        const Mat2 r = rotation_matrix(x);
        const Mat2 dr = rotation_matrix_deriv(x);
        return Mat2(dr * K3 * r.transpose() + r * K3 * dr.transpose());
    };
    return theta_t * m_deriv(theta) - theta_star_t * m_deriv(theta_star);
}

/// True once the decay matrix c1 (K_q + Phi) - Phi_t/2 of the outer proof is
/// SPD at every node.
inline bool outer_decay_matrix_spd(const RodState& state, const OuterSolution& outer,
                                   const Field1& theta_star_t, const OuterGains& gains,
                                   double c1, const Mat2& K3, const Operators& ops) {
    for (int i = 0; i < ops.grid.n; ++i) {
        const Mat2 phi = phi_matrix(state.theta[i], outer.theta_star[i], K3);
        const Mat2 phi_t =
            phi_time_deriv(state.theta[i], state.w[i], outer.theta_star[i], theta_star_t[i], K3);
        const Mat2 decay = c1 * (gains.K_q + phi) - 0.5 * phi_t;
        Eigen::SelfAdjointEigenSolver<Mat2> es(decay);
        if (es.eigenvalues().minCoeff() <= 0.0) return false;
    }
    return true;
}

/// L2 norm of the outer forcing term Psi = (Phi p*_s)_s + (R* - R)_s K3 q_bar.
inline double psi_norm(const RodState& state, const DesiredTrajectory& traj,
                       const OuterSolution& outer, const RodParams& params, const Operators& ops) {
    const int n = ops.grid.n;
    const Field2 p_star_s = apply_diff(ops.diff, traj.p_star);
    const Vec2 k3_qbar = params.K3_mat() * params.q_bar;
    Field2 phi_ps(2, n);
    Field2 rot_gap(2, n);
    for (int i = 0; i < n; ++i) {
        const Mat2 phi = phi_matrix(state.theta[i], outer.theta_star[i], params.K3_mat());
        phi_ps.col(i) = phi * p_star_s.col(i);
        rot_gap.col(i) =
            (rotation_matrix(outer.theta_star[i]) - rotation_matrix(state.theta[i])) * k3_qbar;
    }
    const Field2 psi = apply_diff(ops.diff, phi_ps) + apply_diff(ops.diff, rot_gap);
    Field1 density(n);
    for (int i = 0; i < n; ++i) density[i] = psi.col(i).squaredNorm();
    return std::sqrt(trapezoid(density, ops.grid));
}

namespace detail {

/// Largest c1 such that K_p^(1/2) - c1 I and, at every node,
/// diag(kv) - c1 I - c1 diag(kv) K_p^-1 diag(kv) / 4 are SPD. Bisection.
inline double c1_supremum(const OuterGains& gains, const OuterSolution& outer) {
    Eigen::SelfAdjointEigenSolver<Mat2> es(gains.K_p);
    const Mat2 kp_sqrt = es.operatorSqrt();
    const Mat2 kp_inv = gains.K_p.inverse();

    auto feasible = [&](double c1) {
        Eigen::SelfAdjointEigenSolver<Mat2> e1(Mat2(kp_sqrt - c1 * Mat2::Identity()));
        if (e1.eigenvalues().minCoeff() <= 0.0) return false;
        for (int i = 0; i < outer.kv1.size(); ++i) {
            Mat2 kv = Vec2(outer.kv1[i], outer.kv2[i]).asDiagonal();
            const Mat2 m = kv - c1 * Mat2::Identity() - 0.25 * c1 * kv * kp_inv * kv;
            Eigen::SelfAdjointEigenSolver<Mat2> e2(Mat2(0.5 * (m + m.transpose())));
            if (e2.eigenvalues().minCoeff() <= 0.0) return false;
        }
        return true;
    };

    double lo = 0.0;
    double hi = es.eigenvalues().minCoeff() > 0.0 ? std::sqrt(es.eigenvalues().minCoeff()) : 0.0;
    if (hi <= 0.0 || !feasible(1e-12)) return 0.0;
    for (int it = 0; it < 60; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (feasible(mid))
            lo = mid;
        else
            hi = mid;
    }
    return lo;
}

}  // namespace detail

/// Stability-condition check at t = 0: K_q + Phi(s, 0) SPD at every node,
/// the c bound of the inner loop, and a feasible C = c1 I for the outer
/// functional (bisection, then half the supremum). A failed condition is a
/// report outcome, not an error.
inline StabilityReport check_stability_conditions(const RodState& state0,
                                                  const DesiredTrajectory& traj0,
                                                  const OuterSolution& outer0,
                                                  const OuterGains& outer_gains,
                                                  const InnerGains& inner_gains,
                                                  const RodParams& params, const Operators& ops) {
    StabilityReport rep;
    rep.c_max = damping_constant_bound(inner_gains);
    rep.c_used = 0.5 * rep.c_max;

    double min_eig = std::numeric_limits<double>::infinity();
    for (int i = 0; i < ops.grid.n; ++i) {
        const Mat2 phi = phi_matrix(state0.theta[i], outer0.theta_star[i], params.K3_mat());
        Eigen::SelfAdjointEigenSolver<Mat2> es(Mat2(outer_gains.K_q + phi));
        min_eig = std::min(min_eig, es.eigenvalues().minCoeff());
    }
    rep.Kq_phi_min_eig = min_eig;
    rep.Kq_condition_ok = min_eig > 0.0;

    rep.c1 = 0.5 * detail::c1_supremum(outer_gains, outer0);
    rep.C_matrix = rep.c1 * Mat2::Identity();

    const Field1 zeros = Field1::Zero(ops.grid.n);
    rep.V1 = lyapunov_inner(state0, outer0, zeros, inner_gains, rep.c_used, ops);
    auto [v2, phi_sup] =
        lyapunov_outer(state0, traj0, outer0, outer_gains, rep.c1, params.K3_mat(), ops);
    rep.V2 = v2;
    rep.Phi_sup_norm = phi_sup;

    rep.notes = rep.Kq_condition_ok
                    ? "K_q + Phi positive-definite at t=0"
                    : "K_q + Phi NOT positive-definite at t=0; increase K_q";
    return rep;
}

/// Tracking-error norms: L2 by trapezoid, Linf over nodes, spatial
/// derivatives via the differentiation matrix.
inline ErrorNorms error_norms(const RodState& state, const DesiredTrajectory& traj,
                              const OuterSolution& outer, const Field1& theta_star_t,
                              const Operators& ops) {
    const int n = ops.grid.n;
    const Field2 p_err = state.p - traj.p_star;
    const Field2 p_err_t = state.v - traj.p_star_t;
    const Field2 p_err_s = apply_diff(ops.diff, p_err);
    const Field1 te = state.theta - outer.theta_star;
    const Field1 te_t = state.w - theta_star_t;
    const Field1 te_s = ops.diff * te;

    auto l2_vec = [&](const Field2& f) {
        Field1 d(n);
        for (int i = 0; i < n; ++i) d[i] = f.col(i).squaredNorm();
        return std::sqrt(trapezoid(d, ops.grid));
    };
    ErrorNorms norms;
    norms.p_err_L2 = l2_vec(p_err);
    norms.p_err_t_L2 = l2_vec(p_err_t);
    norms.p_err_s_L2 = l2_vec(p_err_s);
    norms.theta_err_Linf = te.cwiseAbs().maxCoeff();
    norms.theta_err_t_Linf = te_t.cwiseAbs().maxCoeff();
    norms.theta_err_s_L2 = std::sqrt(trapezoid(te_s.cwiseProduct(te_s), ops.grid));
    norms.t = state.t;
    return norms;
}

/// Least-squares fit of log(value) against t. Samples at or below 1e-14 are
/// dropped; at least 10 positive samples are required. Returns (slope, r^2).
inline std::pair<double, double> fit_decay_rate(
    const std::vector<std::pair<double, double>>& series) {
    std::vector<double> ts, logs;
    for (const auto& [t, value] : series) {
        if (value > 1e-14) {
            ts.push_back(t);
            logs.push_back(std::log(value));
        }
    }
    const std::size_t m = ts.size();
    if (m < 10) throw std::invalid_argument("fit_decay_rate: need at least 10 positive samples");

    double t_mean = 0.0, y_mean = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        t_mean += ts[i];
        y_mean += logs[i];
    }
    t_mean /= m;
    y_mean /= m;
    double stt = 0.0, sty = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        stt += (ts[i] - t_mean) * (ts[i] - t_mean);
        sty += (ts[i] - t_mean) * (logs[i] - y_mean);
        syy += (logs[i] - y_mean) * (logs[i] - y_mean);
    }
    const double slope = stt > 0.0 ? sty / stt : 0.0;
    double r2 = 1.0;
    if (syy > 0.0) {
        double ss_res = 0.0;
        for (std::size_t i = 0; i < m; ++i) {
            const double fit = y_mean + slope * (ts[i] - t_mean);
            ss_res += (logs[i] - fit) * (logs[i] - fit);
        }
        r2 = 1.0 - ss_res / syy;
    }
    return {slope, r2};
}

}  // namespace softrod
