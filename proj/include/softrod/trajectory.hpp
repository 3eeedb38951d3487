#pragma once

#include <softrod/core.hpp>
#include <softrod/dynamics.hpp>

#include <cmath>
#include <stdexcept>

namespace softrod {

/// Desired position field and its first two time derivatives, sampled on
/// the grid at one time instant. The base is always pinned: p_star[0] = 0.
struct DesiredTrajectory {
    Field2 p_star;
    Field2 p_star_t;
    Field2 p_star_tt;
};

/// Static constant-curvature arc from the origin in the (y, z) plane:
/// p*(s) = (1/k)(1 - cos ks, sin ks). k = 0 falls back to the straight
/// line (0, s).
inline DesiredTrajectory make_bent_target(const GridSpec& grid, double curvature) {
    if (std::abs(curvature) * grid.ell >= M_PI)
        throw std::invalid_argument("make_bent_target: |curvature|*ell must be below pi");
    DesiredTrajectory traj;
    traj.p_star = Field2::Zero(2, grid.n);
    traj.p_star_t = Field2::Zero(2, grid.n);
    traj.p_star_tt = Field2::Zero(2, grid.n);
    for (int i = 0; i < grid.n; ++i) {
        const double s = grid.s(i);
        if (std::abs(curvature) < 1e-12) {
            traj.p_star(1, i) = s;
        } else {
            traj.p_star(0, i) = (1.0 - std::cos(curvature * s)) / curvature;
            traj.p_star(1, i) = std::sin(curvature * s) / curvature;
        }
    }
    return traj;
}

/// Blend the last blend_width of the target so its discrete tip slope equals
/// the state's current p_s(ell). The bump is a cubic Hermite with zero value
/// and slope at the blend start and zero value at the tip; it is rescaled by
/// the discrete tip derivative so the slope condition holds exactly under
/// the one-sided stencil.
inline DesiredTrajectory regulate_tip(const DesiredTrajectory& traj, const RodState& state,
                                      const Operators& ops, double blend_width) {
    const GridSpec& grid = ops.grid;
    if (!(blend_width > 0.0 && blend_width < 0.5 * grid.ell))
        throw std::invalid_argument("regulate_tip: blend_width must be in (0, ell/2)");

    const int n = grid.n;
    const Field2 ps_state = apply_diff(ops.diff, state.p);
    const Field2 ps_target = apply_diff(ops.diff, traj.p_star);
    const Vec2 slope_gap = ps_state.col(n - 1) - ps_target.col(n - 1);

    // cubic bump u^2 (u - 1) on [ell - W, ell], zero elsewhere
    const double s0 = grid.ell - blend_width;
    Field1 bump = Field1::Zero(n);
    for (int i = 0; i < n; ++i) {
        const double u = (grid.s(i) - s0) / blend_width;
        if (u > 0.0) bump[i] = blend_width * u * u * (u - 1.0);
    }
    const double bump_tip_slope = ops.diff.row(n - 1).dot(bump);
    if (bump_tip_slope == 0.0)
        throw std::invalid_argument("regulate_tip: blend_width too small for the grid");

    DesiredTrajectory out = traj;
    for (int i = 0; i < n; ++i)
        out.p_star.col(i) += (bump[i] / bump_tip_slope) * slope_gap;
    return out;
}

}  // namespace softrod
