#pragma once

#include <softrod/core.hpp>

#include <cmath>
#include <stdexcept>
#include <string>

namespace softrod {

/// Physical constants of the planar rod. Stiffness values are the
/// inertia-normalized ones: K3 = K1/(rho*sigma), K4 = K2/(rho*J),
/// K5 = K1/(rho*J). rho_J converts the normalized moment back to
/// physical units and defaults to 1.
struct RodParams {
    double ell = 0.5;
    Vec2 K3{1.0, 1.5};  ///< diagonal entries of the linear stiffness
    double K4 = 1.0;
    double K5 = 1.5;
    double rho_J = 1.0;
    double g = 0.0;         ///< gravity along +z of the plane
    Vec2 q_bar{0.0, 1.0};   ///< rest linear strain
    double u_bar = 0.0;     ///< rest angular strain

    void validate() const {
        if (!(K3[0] > 0.0 && K3[1] > 0.0 && K4 > 0.0 && K5 > 0.0 && rho_J > 0.0))
            throw std::invalid_argument("RodParams: stiffness/inertia must be positive");
    }

    Mat2 K3_mat() const { return K3.asDiagonal(); }
};

/// Discretized rod state at one time instant. The base node is clamped:
/// p[0] = 0, theta[0] = 0.
struct RodState {
    GridSpec grid;
    Field2 p;      ///< positions [m]
    Field2 v;      ///< velocities p_t [m/s]
    Field1 theta;  ///< rotation angles [rad], unwrapped
    Field1 w;      ///< angular velocities theta_t [rad/s]
    double t = 0.0;
};

/// Distributed moment input and its spatial derivative. m_c_s is the
/// analytic derivative supplied by the controller, never a numerical
/// re-differentiation of m_c.
struct ControlSignal {
    Field1 m_c;
    Field1 m_c_s;

    static ControlSignal zero(const GridSpec& grid) {
        return ControlSignal{Field1::Zero(grid.n), Field1::Zero(grid.n)};
    }
};

struct IntegrationError : std::runtime_error {
    int node;
    explicit IntegrationError(const std::string& what, int node_index)
        : std::runtime_error(what), node(node_index) {}
};

/// Undeformed rod on the z-axis at rest: p(s) = (0, s), theta = 0.
inline RodState initial_state(const GridSpec& grid) {
    RodState st;
    st.grid = grid;
    st.p = Field2::Zero(2, grid.n);
    for (int i = 0; i < grid.n; ++i) st.p(1, i) = grid.s(i);
    st.v = Field2::Zero(2, grid.n);
    st.theta = Field1::Zero(grid.n);
    st.w = Field1::Zero(grid.n);
    st.t = 0.0;
    return st;
}

namespace detail {

inline void require_finite(const RodState& st) {
    for (int i = 0; i < st.grid.n; ++i) {
        const bool ok = std::isfinite(st.p(0, i)) && std::isfinite(st.p(1, i)) &&
                        std::isfinite(st.v(0, i)) && std::isfinite(st.v(1, i)) &&
                        std::isfinite(st.theta[i]) && std::isfinite(st.w[i]);
        if (!ok) throw IntegrationError("non-finite state value (blow-up or CFL violation)", i);
    }
}

}  // namespace detail

/// Internal stress R K3 (R^T p_s - q_bar), one column per node.
inline Field2 stress_field(const RodState& st, const RodParams& params, const Operators& ops) {
    const Field2 p_s = apply_diff(ops.diff, st.p);
    Field2 sigma(2, st.grid.n);
    for (int i = 0; i < st.grid.n; ++i) {
        const Mat2 r = rotation_matrix(st.theta[i]);
        sigma.col(i) = r * (params.K3_mat() * (r.transpose() * p_s.col(i) - params.q_bar));
    }
    return sigma;
}

/// Strain coupling term hat(p_s)^T R K5 (R^T p_s - q_bar) of the rotational
/// equation. Shared with the inner-loop controller so the closed-loop
/// cancellation identity holds at the discrete level.
inline Field1 strain_coupling(const RodState& st, const RodParams& params, const Operators& ops) {
    const Field2 p_s = apply_diff(ops.diff, st.p);
    Field1 out(st.grid.n);
    for (int i = 0; i < st.grid.n; ++i) {
        const Mat2 r = rotation_matrix(st.theta[i]);
        const Vec2 e = r.transpose() * p_s.col(i) - params.q_bar;
        out[i] = hat2(p_s.col(i)).dot(params.K5 * (r * e));
    }
    return out;
}

/// p_tt = (R K3 R^T p_s - R K3 q_bar)_s + g e3.
inline Field2 translational_rhs(const RodState& st, const RodParams& params, const Operators& ops) {
    detail::require_finite(st);
    Field2 acc = apply_diff(ops.diff, stress_field(st, params, ops));
    acc.row(1).array() += params.g;
    return acc;
}

/// theta_tt = K4 theta_ss - (m_c)_s/(rho J) + hat(p_s)^T R K5 (R^T p_s - q_bar).
/// theta_ss is the differentiation matrix applied twice; (m_c)_s comes from
/// the control signal.
inline Field1 rotational_rhs(const RodState& st, const RodParams& params,
                             const ControlSignal& ctrl, const Operators& ops) {
    detail::require_finite(st);
    if (ctrl.m_c.size() != st.grid.n || ctrl.m_c_s.size() != st.grid.n)
        throw std::invalid_argument("rotational_rhs: control signal grid mismatch");
    const Field1 theta_ss = ops.diff * (ops.diff * st.theta);
    return params.K4 * theta_ss - ctrl.m_c_s / params.rho_J + strain_coupling(st, params, ops);
}

/// Largest wave speed of the hyperbolic system, sqrt of max(K3, K4).
inline double max_wave_speed(const RodParams& params) {
    return std::sqrt(std::max({params.K3[0], params.K3[1], params.K4}));
}

namespace detail {

/// Fill the tip node from the natural boundary conditions by solving the
/// one-sided stencil: theta_s(ell) = m_c(ell)/K2 and (R^T p_s)(ell) = q_bar.
inline void impose_tip(RodState& st, const RodParams& params, const ControlSignal& ctrl) {
    const int n = st.grid.n;
    const double h = st.grid.ds;
    // normalized tip moment: m_c/K2 = (m_c/(rho J))/K4
    const double mu_tip = ctrl.m_c[n - 1] / (params.rho_J * params.K4);
    st.theta[n - 1] = (4.0 * st.theta[n - 2] - st.theta[n - 3] + 2.0 * h * mu_tip) / 3.0;
    const Vec2 ps_tip = rotation_matrix(st.theta[n - 1]) * params.q_bar;
    st.p.col(n - 1) = (4.0 * st.p.col(n - 2) - st.p.col(n - 3) + 2.0 * h * ps_tip) / 3.0;
}

inline void clamp_base(RodState& st) {
    st.p.col(0).setZero();
    st.v.col(0).setZero();
    st.theta[0] = 0.0;
    st.w[0] = 0.0;
}

}  // namespace detail

/// One explicit kick-drift-kick step. The control signal is held fixed over
/// the step. Re-imposes the base clamp and the tip natural boundary
/// conditions, then advances t by dt.
inline RodState step(const RodState& st, const ControlSignal& ctrl, const RodParams& params,
                     const Operators& ops, double dt, bool* cfl_warning = nullptr) {
    if (!(dt > 0.0)) throw std::invalid_argument("step: dt must be positive");
    if (cfl_warning) *cfl_warning = dt > st.grid.ds / max_wave_speed(params);

    RodState next = st;
    Field2 acc_p = translational_rhs(next, params, ops);
    Field1 acc_w = rotational_rhs(next, params, ctrl, ops);

    next.v += 0.5 * dt * acc_p;
    next.w += 0.5 * dt * acc_w;
    next.p += dt * next.v;
    next.theta += dt * next.w;

    detail::clamp_base(next);
    detail::impose_tip(next, params, ctrl);

    acc_p = translational_rhs(next, params, ops);
    acc_w = rotational_rhs(next, params, ctrl, ops);
    next.v += 0.5 * dt * acc_p;
    next.w += 0.5 * dt * acc_w;

    detail::clamp_base(next);
    next.t = st.t + dt;
    detail::require_finite(next);
    return next;
}

}  // namespace softrod
