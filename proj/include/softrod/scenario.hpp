#pragma once

#include <softrod/analysis.hpp>
#include <softrod/control_inner.hpp>
#include <softrod/control_outer.hpp>
#include <softrod/core.hpp>
#include <softrod/dynamics.hpp>
#include <softrod/trajectory.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace softrod {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Full description of one closed-loop run. Defaults reproduce the
/// reference parameter set (ell=0.5, N=11, K3=diag[1,1.5], K4=1, K5=1.5,
/// K_q=1, K_p=4, k_u=0.5, k_theta=4, k_w=2, dt=0.005).
struct ScenarioConfig {
    double grid_ell = 0.5;
    int grid_n = 11;

    double k3_y = 1.0;
    double k3_z = 1.5;
    double k4 = 1.0;
    double k5 = 1.5;
    double rho_j = 1.0;
    double g = 0.0;
    double q_bar_y = 0.0;
    double q_bar_z = 1.0;
    double u_bar = 0.0;

    double k_q = 1.0;
    double k_p = 4.0;
    double k_u = 0.5;
    double k_w = 2.0;
    double k_theta = 4.0;

    std::string target_family = "arc";  ///< "arc" or "straight"
    double target_curvature = 1.2;
    double blend_width = 0.1;  ///< 2 * ds at the reference grid

    double dt = 0.005;
    double duration = 10.0;
    int output_stride = 10;
    int snapshot_stride = 200;
    double solver_tolerance = 1e-6;
    int solver_max_iterations = 200;

    std::uint64_t seed = 0;
    double init_perturbation = 0.0;  ///< amplitude of the seeded theta perturbation

    GridSpec grid() const { return GridSpec::make(grid_ell, grid_n); }

    RodParams rod_params() const {
        RodParams p;
        p.ell = grid_ell;
        p.K3 = Vec2(k3_y, k3_z);
        p.K4 = k4;
        p.K5 = k5;
        p.rho_J = rho_j;
        p.g = g;
        p.q_bar = Vec2(q_bar_y, q_bar_z);
        p.u_bar = u_bar;
        return p;
    }

    OuterGains outer_gains() const {
        OuterGains gains;
        gains.K_q = k_q * Mat2::Identity();
        gains.K_p = k_p * Mat2::Identity();
        return gains;
    }

    InnerGains inner_gains() const { return InnerGains::constant(grid(), k_u, k_w, k_theta); }

    void validate() const {
        if (grid_n < 3) throw ConfigError("grid.n must be at least 3");
        if (!(grid_ell > 0.0)) throw ConfigError("grid.ell must be positive");
        if (!(k3_y > 0.0 && k3_z > 0.0 && k4 > 0.0 && k5 > 0.0 && rho_j > 0.0))
            throw ConfigError("stiffness/inertia parameters must be positive");
        if (!(k_q > 0.0 && k_p > 0.0 && k_u > 0.0 && k_w > 0.0 && k_theta > 0.0))
            throw ConfigError("control gains must be positive");
        if (!(dt > 0.0 && duration > 0.0)) throw ConfigError("run.dt and run.duration must be positive");
        if (output_stride < 1 || snapshot_stride < 1) throw ConfigError("strides must be >= 1");
        if (!(solver_tolerance > 0.0)) throw ConfigError("run.tolerance must be positive");
        if (target_family != "arc" && target_family != "straight")
            throw ConfigError("target.family must be 'arc' or 'straight'");
        const double ds = grid_ell / (grid_n - 1);
        if (!(blend_width > 0.0 && blend_width < 0.5 * grid_ell))
            throw ConfigError("target.blend_width must be in (0, ell/2)");
        if (std::abs(target_curvature) * grid_ell >= M_PI)
            throw ConfigError("target.curvature too large: |k|*ell must be below pi");
        (void)ds;
    }

    /// dt exceeding ds / max wave speed risks explicit-integrator blow-up.
    bool cfl_violated() const {
        const double ds = grid_ell / (grid_n - 1);
        return dt > ds / std::sqrt(std::max({k3_y, k3_z, k4}));
    }
};

namespace detail {

inline void apply_config_key(ScenarioConfig& cfg, const std::string& key,
                             const std::string& value) {
    auto as_double = [&] {
        try {
            std::size_t pos = 0;
            const double v = std::stod(value, &pos);
            if (pos != value.size()) throw std::invalid_argument(value);
            return v;
        } catch (const std::exception&) {
            throw ConfigError("bad numeric value for '" + key + "': " + value);
        }
    };
    auto as_int = [&] {
        const double v = as_double();
        const int i = static_cast<int>(v);
        if (i != v) throw ConfigError("'" + key + "' must be an integer");
        return i;
    };

    if (key == "grid.ell") cfg.grid_ell = as_double();
    else if (key == "grid.n") cfg.grid_n = as_int();
    else if (key == "params.k3_y") cfg.k3_y = as_double();
    else if (key == "params.k3_z") cfg.k3_z = as_double();
    else if (key == "params.k4") cfg.k4 = as_double();
    else if (key == "params.k5") cfg.k5 = as_double();
    else if (key == "params.rho_j") cfg.rho_j = as_double();
    else if (key == "params.g") cfg.g = as_double();
    else if (key == "params.q_bar_y") cfg.q_bar_y = as_double();
    else if (key == "params.q_bar_z") cfg.q_bar_z = as_double();
    else if (key == "params.u_bar") cfg.u_bar = as_double();
    else if (key == "outer.k_q") cfg.k_q = as_double();
    else if (key == "outer.k_p") cfg.k_p = as_double();
    else if (key == "inner.k_u") cfg.k_u = as_double();
    else if (key == "inner.k_w") cfg.k_w = as_double();
    else if (key == "inner.k_theta") cfg.k_theta = as_double();
    else if (key == "target.family") cfg.target_family = value;
    else if (key == "target.curvature") cfg.target_curvature = as_double();
    else if (key == "target.blend_width") cfg.blend_width = as_double();
    else if (key == "run.dt") cfg.dt = as_double();
    else if (key == "run.duration") cfg.duration = as_double();
    else if (key == "run.output_stride") cfg.output_stride = as_int();
    else if (key == "run.snapshot_stride") cfg.snapshot_stride = as_int();
    else if (key == "run.tolerance") cfg.solver_tolerance = as_double();
    else if (key == "run.max_iterations") cfg.solver_max_iterations = as_int();
    else if (key == "seed") cfg.seed = static_cast<std::uint64_t>(as_double());
    else if (key == "init.perturbation") cfg.init_perturbation = as_double();
    else throw ConfigError("unknown config key: " + key);
}

}  // namespace detail

/// Parse a flat dotted-key config file: one `key = value` per line,
/// '#' starts a comment, blank lines ignored.
inline ScenarioConfig parse_config(std::istream& in) {
    ScenarioConfig cfg;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        auto trim = [](std::string s) {
            const auto b = s.find_first_not_of(" \t\r");
            if (b == std::string::npos) return std::string();
            const auto e = s.find_last_not_of(" \t\r");
            return s.substr(b, e - b + 1);
        };
        const std::string trimmed = trim(line);
        if (trimmed.empty()) continue;
        const auto eq = trimmed.find('=');
        if (eq == std::string::npos)
            throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
        detail::apply_config_key(cfg, trim(trimmed.substr(0, eq)), trim(trimmed.substr(eq + 1)));
    }
    return cfg;
}

inline ScenarioConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    return parse_config(in);
}

/// Apply a `key=value` override string on top of a parsed config.
inline void apply_override(ScenarioConfig& cfg, const std::string& spec) {
    const auto eq = spec.find('=');
    if (eq == std::string::npos) throw ConfigError("override must be KEY=VALUE: " + spec);
    detail::apply_config_key(cfg, spec.substr(0, eq), spec.substr(eq + 1));
}

/// One logged row of the run.
struct RunRow {
    ErrorNorms norms;
    double v1 = 0.0;
    double v2 = 0.0;
    double psi = 0.0;
    double residual_norm = 0.0;
    int iterations = 0;
    bool degraded = false;
    bool outer_spd = false;
};

struct Snapshot {
    double t = 0.0;
    Field1 s;
    Field2 p;
    Field1 theta;
    Field1 theta_star;
};

enum class RunStatus : int { clean = 0, solver_degraded = 2, integration_failure = 3 };

struct RunRecord {
    std::vector<RunRow> rows;
    std::vector<Snapshot> snapshots;
    StabilityReport stability;
    RunStatus status = RunStatus::clean;
    std::optional<RodState> failure_state;  ///< last valid state on integration failure
};

/// Closed-loop driver: per step, regulate the target tip, solve the outer
/// equation (warm-started), estimate theta* time derivatives, compute the
/// moment input, then advance the dynamics.
inline RunRecord run_scenario(const ScenarioConfig& cfg) {
    cfg.validate();
    const GridSpec grid = cfg.grid();
    const Operators ops(grid);
    const RodParams params = cfg.rod_params();
    const OuterGains outer_gains = cfg.outer_gains();
    const InnerGains inner_gains = cfg.inner_gains();
    outer_gains.validate();
    inner_gains.validate();

    RodState state = initial_state(grid);
    if (cfg.init_perturbation != 0.0) {
        std::mt19937_64 rng(cfg.seed);
        std::uniform_real_distribution<double> dist(-1.0, 1.0);
        for (int i = 1; i < grid.n; ++i) state.theta[i] += cfg.init_perturbation * dist(rng);
    }

    const DesiredTrajectory raw_target =
        cfg.target_family == "arc" ? make_bent_target(grid, cfg.target_curvature)
                                   : make_bent_target(grid, 0.0);

    RunRecord record;
    OuterHistory history;
    const int n_steps = static_cast<int>(std::llround(cfg.duration / cfg.dt));

    auto evaluate = [&](int k) -> std::pair<DesiredTrajectory, ControlSignal> {
        const DesiredTrajectory traj = regulate_tip(raw_target, state, ops, cfg.blend_width);
        const ResidualFields fields =
            build_residual_fields(state, traj, outer_gains, params, ops);
        Eigen::VectorXd x_raw;
        const OuterSolution sol =
            solve_outer(fields, history, state.theta, ops, params.K3_mat(),
                        cfg.solver_tolerance, cfg.solver_max_iterations, &x_raw);
        history.push(sol, x_raw, state.t);
        auto [ts_t, ts_tt] = estimate_theta_star_derivatives(history, cfg.dt, grid);
        const ControlSignal ctrl =
            compute_mc(state, sol, ts_t, ts_tt, inner_gains, params, ops);

        if (k == 0)
            record.stability = check_stability_conditions(state, traj, sol, outer_gains,
                                                          inner_gains, params, ops);
        if (sol.degraded) record.status = RunStatus::solver_degraded;

        if (k % cfg.output_stride == 0 || k == n_steps) {
            RunRow row;
            row.norms = error_norms(state, traj, sol, ts_t, ops);
            row.v1 = lyapunov_inner(state, sol, ts_t, inner_gains, record.stability.c_used, ops);
            row.v2 = lyapunov_outer(state, traj, sol, outer_gains, record.stability.c1,
                                    params.K3_mat(), ops)
                         .first;
            row.psi = psi_norm(state, traj, sol, params, ops);
            row.residual_norm = sol.residual_norm;
            row.iterations = sol.iterations;
            row.degraded = sol.degraded;
            row.outer_spd = outer_decay_matrix_spd(state, sol, ts_t, outer_gains,
                                                   record.stability.c1, params.K3_mat(), ops);
            record.rows.push_back(row);
        }
        if (k % cfg.snapshot_stride == 0 || k == n_steps)
            record.snapshots.push_back(
                Snapshot{state.t, grid.nodes(), state.p, state.theta, sol.theta_star});
        return {traj, ctrl};
    };

    for (int k = 0; k < n_steps; ++k) {
        auto [traj, ctrl] = evaluate(k);
        try {
            state = step(state, ctrl, params, ops, cfg.dt);
        } catch (const IntegrationError&) {
            record.status = RunStatus::integration_failure;
            record.failure_state = state;
            return record;
        }
    }
    evaluate(n_steps);  // final diagnostics row, no step
    return record;
}

namespace detail {

inline std::string fmt17(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace detail

/// Time-series export, one row per logged step, decimal with 17 significant
/// digits for exact round-trip.
inline void write_timeseries(const RunRecord& record, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << "t,p_err_l2,p_err_t_l2,p_err_s_l2,theta_err_linf,theta_err_t_linf,theta_err_s_l2,"
           "v1,v2,psi_norm,residual_norm,iterations,degraded,outer_spd\n";
    for (const RunRow& r : record.rows) {
        out << detail::fmt17(r.norms.t) << ',' << detail::fmt17(r.norms.p_err_L2) << ','
            << detail::fmt17(r.norms.p_err_t_L2) << ',' << detail::fmt17(r.norms.p_err_s_L2)
            << ',' << detail::fmt17(r.norms.theta_err_Linf) << ','
            << detail::fmt17(r.norms.theta_err_t_Linf) << ','
            << detail::fmt17(r.norms.theta_err_s_L2) << ',' << detail::fmt17(r.v1) << ','
            << detail::fmt17(r.v2) << ',' << detail::fmt17(r.psi) << ','
            << detail::fmt17(r.residual_norm) << ',' << r.iterations << ','
            << (r.degraded ? 1 : 0) << ',' << (r.outer_spd ? 1 : 0) << '\n';
    }
    if (!out) throw std::runtime_error("write failed: " + path);
}

/// One file per stored shape frame: s, p_y, p_z, theta, theta_star.
inline void write_snapshots(const RunRecord& record, const std::string& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    for (std::size_t idx = 0; idx < record.snapshots.size(); ++idx) {
        const Snapshot& snap = record.snapshots[idx];
        char name[64];
        std::snprintf(name, sizeof name, "snapshot_%05zu.csv", idx);
        const std::string path = (fs::path(dir) / name).string();
        std::ofstream out(path);
        if (!out) throw std::runtime_error("cannot write " + path);
        out << "# t = " << detail::fmt17(snap.t) << "\n";
        out << "s,p_y,p_z,theta,theta_star\n";
        for (int i = 0; i < snap.s.size(); ++i)
            out << detail::fmt17(snap.s[i]) << ',' << detail::fmt17(snap.p(0, i)) << ','
                << detail::fmt17(snap.p(1, i)) << ',' << detail::fmt17(snap.theta[i]) << ','
                << detail::fmt17(snap.theta_star[i]) << '\n';
    }
}

/// Plot-ready decay bundle: t, |p~|_L2, |p~_t|_L2.
inline void write_decay_bundle(const RunRecord& record, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << "t,p_err_l2,p_err_t_l2\n";
    for (const RunRow& r : record.rows)
        out << detail::fmt17(r.norms.t) << ',' << detail::fmt17(r.norms.p_err_L2) << ','
            << detail::fmt17(r.norms.p_err_t_L2) << '\n';
}

}  // namespace softrod
