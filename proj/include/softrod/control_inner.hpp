#pragma once

#include <softrod/control_outer.hpp>
#include <softrod/core.hpp>
#include <softrod/dynamics.hpp>

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace softrod {

/// Inner-loop gains of the rotational damped-wave shaping. Constant or
/// spatially varying; the reference scenario uses constants.
struct InnerGains {
    Field1 k_u;
    Field1 k_w;
    Field1 k_theta;

    static InnerGains constant(const GridSpec& grid, double k_u, double k_w, double k_theta) {
        return InnerGains{Field1::Constant(grid.n, k_u), Field1::Constant(grid.n, k_w),
                          Field1::Constant(grid.n, k_theta)};
    }

    void validate() const {
        if (k_u.minCoeff() <= 0.0 || k_w.minCoeff() <= 0.0 || k_theta.minCoeff() <= 0.0)
            throw std::invalid_argument("InnerGains: all gains must be strictly positive");
    }
};

/// Distributed moment realizing the rotational error dynamics
/// theta_tt - theta*_tt = (k_u theta~_s)_s - k_w theta~_t - k_theta theta~.
///
/// m_c(s) = rho J [K4 theta_s - k_u theta~_s](s)
///          + rho J int_s^ell [-k_w theta~_t - k_theta theta~
///                             - hat(p_s)^T R K5 (R^T p_s - q_bar) + theta*_tt] dtau.
///
/// m_c_s is the analytic derivative (fundamental theorem of calculus for the
/// integral term, shared discrete operators for the rest), which makes the
/// substitution into rotational_rhs cancel to machine precision.
inline ControlSignal compute_mc(const RodState& state, const OuterSolution& outer,
                                const Field1& theta_star_t, const Field1& theta_star_tt,
                                const InnerGains& gains, const RodParams& params,
                                const Operators& ops) {
    const int n = ops.grid.n;
    if (outer.theta_star.size() != n || theta_star_t.size() != n || theta_star_tt.size() != n)
        throw std::invalid_argument("compute_mc: grid mismatch");
    gains.validate();

    const Field1 theta_err = state.theta - outer.theta_star;
    const Field1 theta_err_t = state.w - theta_star_t;
    const Field1 theta_s = ops.diff * state.theta;
    const Field1 theta_err_s = ops.diff * theta_err;
    const Field1 coupling = strain_coupling(state, params, ops);

    const Field1 integrand = -gains.k_w.cwiseProduct(theta_err_t) -
                             gains.k_theta.cwiseProduct(theta_err) - coupling + theta_star_tt;

    // normalized moment mu = m_c / (rho J)
    const Field1 mu = params.K4 * theta_s - gains.k_u.cwiseProduct(theta_err_s) +
                      integral_from_s(integrand, ops.grid);
    const Field1 mu_s = params.K4 * (ops.diff * theta_s) -
                        ops.diff * gains.k_u.cwiseProduct(theta_err_s) - integrand;

    return ControlSignal{params.rho_J * mu, params.rho_J * mu_s};
}

/// Upper bound on the Lyapunov cross-term constant c from the inner-loop
/// gains: inf_s min{ sqrt(k_theta), k_theta k_w / (k_theta + k_w^2/4) }.
inline double damping_constant_bound(const InnerGains& gains) {
    gains.validate();
    double bound = std::numeric_limits<double>::infinity();
    for (int i = 0; i < gains.k_theta.size(); ++i) {
        const double kt = gains.k_theta[i];
        const double kw = gains.k_w[i];
        bound = std::min({bound, std::sqrt(kt), kt * kw / (kt + 0.25 * kw * kw)});
    }
    return bound;
}

}  // namespace softrod
