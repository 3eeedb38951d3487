// Acceptance suite for the closed-loop tracking simulator. Each criterion
// prints exactly one PASS/FAIL line with the measured quantities; the
// process exits nonzero if any criterion fails. All tolerances are pinned
// here, next to the check that uses them.

#include <softrod/scenario.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

using namespace softrod;

namespace {

int failures = 0;

void report(int id, bool ok, const std::string& what) {
    std::printf("[%s] criterion %d: %s\n", ok ? "PASS" : "FAIL", id, what.c_str());
    if (!ok) ++failures;
}

std::string fmt(const char* pattern, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, pattern, args...);
    return buf;
}

std::string slurp(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

int main() {
    const ScenarioConfig cfg;  // defaults are the reference parameter set
    const GridSpec grid = cfg.grid();
    const Operators ops(grid);
    const RodParams params = cfg.rod_params();
    const OuterGains outer_gains = cfg.outer_gains();
    const InnerGains inner_gains = cfg.inner_gains();

    // ---- reference run: bent target, 10 s horizon -------------------------
    const auto t_start = std::chrono::steady_clock::now();
    const RunRecord record = run_scenario(cfg);
    const double runtime_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();

    // 1. Tracking: |p~| and |p~_t| both below 5% of their peaks at a common
    //    logged sample within the 10 s horizon; runtime budget 120 s.
    {
        double peak_p = 0.0, peak_v = 0.0;
        for (const RunRow& r : record.rows) {
            peak_p = std::max(peak_p, r.norms.p_err_L2);
            peak_v = std::max(peak_v, r.norms.p_err_t_L2);
        }
        bool reached = false;
        double t_hit = -1.0, best_joint = 1e9;
        for (const RunRow& r : record.rows) {
            if (r.norms.t == 0.0) continue;  // the trivial pre-transient zero
            const double joint = std::max(r.norms.p_err_L2 / peak_p,
                                          r.norms.p_err_t_L2 / peak_v);
            if (joint < best_joint) best_joint = joint;
            if (!reached && joint < 0.05) {
                reached = true;
                t_hit = r.norms.t;
            }
        }
        report(1, reached && runtime_s <= 120.0,
               reached ? fmt("tracking errors below 5%% of peaks at t=%.2f s (runtime %.0f s)",
                             t_hit, runtime_s)
                       : fmt("errors never jointly below 5%% of peaks; best joint ratio %.1f%% "
                             "(runtime %.0f s)",
                             100.0 * best_joint, runtime_s));
    }

    // 2. Exponential decay of |theta~|_inf over the post-transient window
    //    [2 s, 10 s]: strictly negative fitted rate with r^2 >= 0.9.
    {
        std::vector<std::pair<double, double>> series;
        for (const RunRow& r : record.rows)
            if (r.norms.t >= 2.0) series.emplace_back(r.norms.t, r.norms.theta_err_Linf);
        auto [rate, r2] = fit_decay_rate(series);
        report(2, rate < 0.0 && r2 >= 0.9,
               fmt("|theta~|_inf fit over [2,10] s: rate %.3f 1/s, r^2 %.3f", rate, r2));
    }

    // 3 + 8b. Replay the scenario loop to check the inner-loop cancellation
    //    identity at every step and record a mid-run warm/cold comparison.
    {
        const DesiredTrajectory raw_target = make_bent_target(grid, cfg.target_curvature);
        RodState state = initial_state(grid);
        OuterHistory history;
        const int n_steps = static_cast<int>(std::llround(cfg.duration / cfg.dt));
        double max_cancel = 0.0;
        int warm_iters = -1, cold_iters = -1;
        for (int k = 0; k < n_steps; ++k) {
            const DesiredTrajectory traj = regulate_tip(raw_target, state, ops, cfg.blend_width);
            const ResidualFields fields =
                build_residual_fields(state, traj, outer_gains, params, ops);
            Eigen::VectorXd x_raw;
            const OuterSolution sol =
                solve_outer(fields, history, state.theta, ops, params.K3_mat(),
                            cfg.solver_tolerance, cfg.solver_max_iterations, &x_raw);
            if (k == n_steps / 2) {
                warm_iters = sol.iterations;
                cold_iters = solve_outer(fields, OuterHistory{}, state.theta, ops,
                                         params.K3_mat(), cfg.solver_tolerance,
                                         cfg.solver_max_iterations)
                                 .iterations;
            }
            history.push(sol, x_raw, state.t);
            auto [ts_t, ts_tt] = estimate_theta_star_derivatives(history, cfg.dt, grid);
            const ControlSignal ctrl = compute_mc(state, sol, ts_t, ts_tt, inner_gains, params, ops);

            const Field1 te = state.theta - sol.theta_star;
            const Field1 te_t = state.w - ts_t;
            const Field1 te_s = ops.diff * te;
            const Field1 target_rhs = ops.diff * inner_gains.k_u.cwiseProduct(te_s) -
                                      inner_gains.k_w.cwiseProduct(te_t) -
                                      inner_gains.k_theta.cwiseProduct(te);
            const Field1 actual = rotational_rhs(state, params, ctrl, ops) - ts_tt;
            max_cancel = std::max(max_cancel, (actual - target_rhs).cwiseAbs().maxCoeff());

            state = step(state, ctrl, params, ops, cfg.dt);
        }
        report(3, max_cancel <= 1e-10,
               fmt("inner-loop cancellation identity max node error %.2e (<= 1e-10)", max_cancel));

        // 4. Lyapunov monotonicity: V1 non-increasing (1e-8 absolute) at every
        //    logged step with |theta~| above 1e-12; V2 non-increasing once the
        //    outer decay matrix first reports SPD.
        {
            bool v1_ok = true, v2_ok = true;
            double worst_v1 = 0.0, worst_v2 = 0.0;
            bool spd_seen = false;
            for (std::size_t i = 1; i < record.rows.size(); ++i) {
                const RunRow& prev = record.rows[i - 1];
                const RunRow& cur = record.rows[i];
                if (prev.norms.theta_err_Linf > 1e-12 && cur.v1 > prev.v1 + 1e-8) {
                    v1_ok = false;
                    worst_v1 = std::max(worst_v1, cur.v1 - prev.v1);
                }
                if (spd_seen && cur.v2 > prev.v2 + 1e-8) {
                    v2_ok = false;
                    worst_v2 = std::max(worst_v2, cur.v2 - prev.v2);
                }
                if (prev.outer_spd) spd_seen = true;
            }
            report(4, v1_ok && v2_ok,
                   fmt("V1 %s (worst rise %.2e), V2 %s (worst rise %.2e)",
                       v1_ok ? "non-increasing" : "INCREASES", worst_v1,
                       v2_ok ? "non-increasing after SPD onset" : "INCREASES after SPD onset",
                       worst_v2));
        }

        // 5. Inner-loop cross-term bound at the reference gains.
        {
            const double c_max = damping_constant_bound(inner_gains);
            report(5, c_max == 1.6, fmt("damping_constant_bound(k_theta=4, k_w=2) = %.17g", c_max));
        }

        // 6. Second-order operators under ds halving; closed-loop final error
        //    under dt halving changes by less than 10%.
        {
            auto op_errors = [](int n) {
                const GridSpec g = GridSpec::make(0.5, n);
                const Operators o(g);
                Field1 f(n), df(n);
                for (int i = 0; i < n; ++i) {
                    const double s = g.s(i);
                    f[i] = std::sin(3.0 * s) + 0.5 * std::cos(5.0 * s);
                    df[i] = 3.0 * std::cos(3.0 * s) - 2.5 * std::sin(5.0 * s);
                }
                const double diff_err = (o.diff * f - df).cwiseAbs().maxCoeff();
                const double exact = (1.0 - std::cos(1.5)) / 3.0 + 0.1 * std::sin(2.5);
                const double quad_err = std::abs(trapezoid(f, g) - exact);
                return std::pair{diff_err, quad_err};
            };
            const auto [d_coarse, q_coarse] = op_errors(11);
            const auto [d_fine, q_fine] = op_errors(21);
            const double diff_ratio = d_coarse / d_fine;
            const double quad_ratio = q_coarse / q_fine;

            ScenarioConfig half = cfg;
            half.dt = 0.5 * cfg.dt;
            half.output_stride = 2 * cfg.output_stride;
            const RunRecord rec_half = run_scenario(half);
            const double e_full = record.rows.back().norms.p_err_L2;
            const double e_half = rec_half.rows.back().norms.p_err_L2;
            const double rel_change = std::abs(e_half - e_full) / e_full;
            report(6, diff_ratio >= 3.5 && quad_ratio >= 3.5 && rel_change < 0.10,
                   fmt("ds-halving error ratios diff %.2f, quad %.2f (>= 3.5); dt-halving final "
                       "|p~| change %.1f%% (< 10%%)",
                       diff_ratio, quad_ratio, 100.0 * rel_change));
        }

        // 7. Equilibrium fixed point: straight rest with zero input stays put
        //    to 1e-12 at every node over 1e4 steps.
        {
            const RodState rest = initial_state(grid);
            RodState st = rest;
            const ControlSignal zero_ctrl = ControlSignal::zero(grid);
            double max_dev = 0.0;
            for (int k = 0; k < 10000; ++k) {
                st = step(st, zero_ctrl, params, ops, cfg.dt);
                max_dev = std::max({max_dev, (st.p - rest.p).cwiseAbs().maxCoeff(),
                                    (st.v - rest.v).cwiseAbs().maxCoeff(),
                                    (st.theta - rest.theta).cwiseAbs().maxCoeff(),
                                    (st.w - rest.w).cwiseAbs().maxCoeff()});
            }
            report(7, max_dev <= 1e-12,
                   fmt("rest state deviation over 1e4 zero-input steps: %.2e (<= 1e-12)", max_dev));
        }

        // 8. Outer-solver contract: zero degraded steps across the scenario,
        //    warm start strictly cheaper than cold on a mid-run instance, and
        //    analytic vs finite-difference Jacobian within 1e-4 relative at 10
        //    random feasible points.
        {
            int degraded_rows = 0;
            for (const RunRow& r : record.rows) degraded_rows += r.degraded ? 1 : 0;
            const bool zero_degraded = record.status != RunStatus::solver_degraded;

            const bool warm_cheaper = warm_iters >= 0 && warm_iters < cold_iters;

            std::mt19937_64 rng(17);
            std::uniform_real_distribution<double> angle(-2.5, 2.5);
            std::uniform_real_distribution<double> unit(-1.0, 1.0);
            double worst_jac = 0.0;
            for (int trial = 0; trial < 10; ++trial) {
                ResidualFields f;
                f.a = Field2(2, grid.n);
                f.b = Field2(2, grid.n);
                f.c = Field2(2, grid.n);
                f.d = Field2(2, grid.n);
                for (int i = 0; i < grid.n; ++i) {
                    f.a.col(i) = Vec2(unit(rng), 1.0 + 0.3 * unit(rng));
                    f.b.col(i) = Vec2(0.0, 1.5);
                    f.c.col(i) = Vec2(unit(rng), unit(rng));
                    f.d.col(i) = Vec2(unit(rng), unit(rng));
                }
                Eigen::VectorXd x(3 * grid.n);
                for (int j = 0; j < grid.n; ++j) {
                    x[j] = angle(rng);
                    x[grid.n + j] = unit(rng);
                    x[2 * grid.n + j] = unit(rng);
                }
                const Eigen::MatrixXd analytic =
                    detail::packed_jacobian(x, f, ops, params.K3_mat());
                const double h = 1e-6;
                Eigen::MatrixXd fd(2 * grid.n + 1, 3 * grid.n);
                for (int col = 0; col < 3 * grid.n; ++col) {
                    Eigen::VectorXd xp = x, xm = x;
                    xp[col] += h;
                    xm[col] -= h;
                    fd.col(col) = (detail::packed_residual(xp, f, ops, params.K3_mat(), 0.0) -
                                   detail::packed_residual(xm, f, ops, params.K3_mat(), 0.0)) /
                                  (2.0 * h);
                }
                worst_jac = std::max(worst_jac, (analytic - fd).cwiseAbs().maxCoeff() /
                                                    std::max(1.0, fd.cwiseAbs().maxCoeff()));
            }
            report(8, zero_degraded && warm_cheaper && worst_jac < 1e-4,
                   fmt("degraded rows %d (%s), warm %d vs cold %d iterations, Jacobian rel "
                       "error %.2e (< 1e-4)",
                       degraded_rows, zero_degraded ? "none flagged" : "run flagged degraded",
                       warm_iters, cold_iters, worst_jac));
        }
    }

    // 9. Determinism: identical config gives byte-identical exports.
    {
        namespace fs = std::filesystem;
        ScenarioConfig short_cfg = cfg;
        short_cfg.duration = 1.0;
        const fs::path base = fs::temp_directory_path() / "softrod_acceptance";
        fs::remove_all(base);
        std::string exports[2];
        for (int run = 0; run < 2; ++run) {
            const fs::path dir = base / ("run" + std::to_string(run));
            fs::create_directories(dir);
            const RunRecord rec = run_scenario(short_cfg);
            write_timeseries(rec, (dir / "timeseries.csv").string());
            write_decay_bundle(rec, (dir / "decay.csv").string());
            exports[run] = slurp(dir / "timeseries.csv") + slurp(dir / "decay.csv");
        }
        report(9, exports[0] == exports[1],
               exports[0] == exports[1] ? "two identical-config runs exported identical bytes"
                                        : "exports differ between identical-config runs");
    }

    return failures == 0 ? 0 : 1;
}
