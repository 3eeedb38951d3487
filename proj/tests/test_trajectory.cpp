#include <softrod/trajectory.hpp>

#include <catch2/catch_amalgamated.hpp>

#include <cmath>

using namespace softrod;

namespace {
const GridSpec grid = GridSpec::make(0.5, 11);
const Operators ops(grid);
}  // namespace

TEST_CASE("zero curvature gives the straight rod") {
    const DesiredTrajectory traj = make_bent_target(grid, 0.0);
    for (int i = 0; i < grid.n; ++i) {
        CHECK(traj.p_star(0, i) == 0.0);
        CHECK(traj.p_star(1, i) == Catch::Approx(grid.s(i)));
    }
    CHECK(traj.p_star_t.cwiseAbs().maxCoeff() == 0.0);
    CHECK(traj.p_star_tt.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("quarter circle tip position") {
    const double curvature = M_PI / (2.0 * grid.ell);
    const DesiredTrajectory traj = make_bent_target(grid, curvature);
    const double expected = 2.0 * grid.ell / M_PI;
    CHECK(traj.p_star(0, grid.n - 1) == Catch::Approx(expected).margin(1e-14));
    CHECK(traj.p_star(1, grid.n - 1) == Catch::Approx(expected).margin(1e-14));
    CHECK(traj.p_star.col(0) == Vec2(0.0, 0.0));
}

TEST_CASE("arc targets preserve arc length within 0.5%") {
    for (double curvature : {0.5, 1.2, M_PI / (2.0 * grid.ell)}) {
        const DesiredTrajectory traj = make_bent_target(grid, curvature);
        double chord = 0.0;
        for (int i = 0; i + 1 < grid.n; ++i)
            chord += (traj.p_star.col(i + 1) - traj.p_star.col(i)).norm();
        CHECK(chord == Catch::Approx(grid.ell).epsilon(0.005));
    }
}

TEST_CASE("excessive curvature is rejected") {
    CHECK_THROWS_AS(make_bent_target(grid, 2.0 * M_PI / grid.ell), std::invalid_argument);
}

TEST_CASE("regulation is the identity when slopes already match") {
    const DesiredTrajectory traj = make_bent_target(grid, 0.0);
    const RodState state = initial_state(grid);  // p_s(ell) = (0,1) = p*_s(ell)
    const DesiredTrajectory out = regulate_tip(traj, state, ops, 0.1);
    CHECK((out.p_star - traj.p_star).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("regulation has compact support in the blend region") {
    const DesiredTrajectory traj = make_bent_target(grid, 1.2);
    const RodState state = initial_state(grid);
    const double blend_width = 0.1;
    const DesiredTrajectory out = regulate_tip(traj, state, ops, blend_width);
    for (int i = 0; i < grid.n; ++i) {
        if (grid.s(i) <= grid.ell - blend_width + 1e-12)
            CHECK((out.p_star.col(i) - traj.p_star.col(i)).norm() == 0.0);
    }
    CHECK(out.p_star.col(0) == Vec2(0.0, 0.0));
}

TEST_CASE("regulated tip slope equals the state tip slope") {
    const DesiredTrajectory traj = make_bent_target(grid, 1.2);
    RodState state = initial_state(grid);
    state.theta = 0.3 * grid.nodes();
    for (int i = 1; i < grid.n; ++i)
        state.p.col(i) =
            state.p.col(i - 1) + grid.ds * (rotation_matrix(state.theta[i]) * Vec2(0.0, 1.0));

    for (double blend_width : {0.1, 0.2}) {
        const DesiredTrajectory out = regulate_tip(traj, state, ops, blend_width);
        const Field2 ps_out = apply_diff(ops.diff, out.p_star);
        const Field2 ps_state = apply_diff(ops.diff, state.p);
        CHECK((ps_out.col(grid.n - 1) - ps_state.col(grid.n - 1)).norm() < 1e-10);
    }
}

TEST_CASE("regulation deviation is bounded by blend_width times the slope gap") {
    const DesiredTrajectory traj = make_bent_target(grid, 1.2);
    const RodState state = initial_state(grid);
    const double blend_width = 0.1;
    const DesiredTrajectory out = regulate_tip(traj, state, ops, blend_width);

    const Field2 ps_state = apply_diff(ops.diff, state.p);
    const Field2 ps_target = apply_diff(ops.diff, traj.p_star);
    const double gap = (ps_state.col(grid.n - 1) - ps_target.col(grid.n - 1)).norm();
    CHECK((out.p_star - traj.p_star).colwise().norm().maxCoeff() <= blend_width * gap);
}

TEST_CASE("invalid blend widths are rejected") {
    const DesiredTrajectory traj = make_bent_target(grid, 1.2);
    const RodState state = initial_state(grid);
    CHECK_THROWS_AS(regulate_tip(traj, state, ops, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(regulate_tip(traj, state, ops, 0.3), std::invalid_argument);
}
