#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "rkflow/error.hpp"
#include "rkflow/latent.hpp"
#include "rkflow/tableau.hpp"
#include "rkflow/velocity.hpp"

namespace rkflow {

/// Ascending nodes t_0 < t_1 < ... < t_N inside [0, 1].
class TimeGrid {
public:
    [[nodiscard]] static TimeGrid uniform(int n_steps) {
        if (n_steps < 1) {
            throw ConfigError("time grid needs n_steps >= 1 (got " + std::to_string(n_steps) + ")");
        }
        std::vector<double> nodes(static_cast<std::size_t>(n_steps) + 1);
        for (int i = 0; i <= n_steps; ++i) {
            nodes[static_cast<std::size_t>(i)] = static_cast<double>(i) / static_cast<double>(n_steps);
        }
        return TimeGrid(std::move(nodes));
    }

    [[nodiscard]] static TimeGrid from_nodes(std::vector<double> nodes) {
        if (nodes.size() < 2) {
            throw ConfigError("time grid needs at least two nodes");
        }
        for (std::size_t i = 0; i < nodes.size(); ++i) {
            if (!(nodes[i] >= 0.0 && nodes[i] <= 1.0)) {
                throw ConfigError("time grid node " + std::to_string(i) + " = " + std::to_string(nodes[i]) +
                                  " outside [0, 1]");
            }
            if (i > 0 && !(nodes[i] > nodes[i - 1])) {
                throw ConfigError("time grid nodes must be strictly increasing (node " + std::to_string(i) + ")");
            }
        }
        return TimeGrid(std::move(nodes));
    }

    [[nodiscard]] int steps() const noexcept { return static_cast<int>(nodes_.size()) - 1; }
    [[nodiscard]] double t(int i) const { return nodes_.at(static_cast<std::size_t>(i)); }
    /// Delta t_i = t_i - t_{i-1} for 1 <= i <= N; always positive.
    [[nodiscard]] double dt(int i) const { return t(i) - t(i - 1); }
    [[nodiscard]] double span() const { return nodes_.back() - nodes_.front(); }
    [[nodiscard]] const std::vector<double>& nodes() const noexcept { return nodes_; }

    [[nodiscard]] bool is_uniform(double rel_tol = 1e-12) const {
        const double h = dt(1);
        for (int i = 2; i <= steps(); ++i) {
            if (std::abs(dt(i) - h) > rel_tol * h) {
                return false;
            }
        }
        return true;
    }

private:
    explicit TimeGrid(std::vector<double> nodes) : nodes_(std::move(nodes)) {}
    std::vector<double> nodes_;
};

/// Uniform grid when `nodes` is empty, otherwise the given nodes (which must span n_steps).
[[nodiscard]] inline TimeGrid make_time_grid(int n_steps, const std::vector<double>& nodes = {}) {
    if (n_steps < 1) {
        throw ConfigError("time grid needs n_steps >= 1 (got " + std::to_string(n_steps) + ")");
    }
    if (nodes.empty()) {
        return TimeGrid::uniform(n_steps);
    }
    if (nodes.size() != static_cast<std::size_t>(n_steps) + 1) {
        throw ConfigError("explicit schedule has " + std::to_string(nodes.size()) + " nodes, expected " +
                          std::to_string(n_steps + 1));
    }
    return TimeGrid::from_nodes(nodes);
}

enum class Direction { invert, denoise };

[[nodiscard]] inline const char* to_string(Direction d) noexcept {
    return d == Direction::invert ? "invert" : "denoise";
}

struct StepResult {
    Latent state;
    std::vector<Latent> slopes; ///< K_1..K_r in stage order
    int nfe = 0;
};

struct SolveOptions {
    bool reuse = false;             ///< carry the midpoint slope into the next step's first stage
    bool record_trajectory = false;
    AttentionHook* hook = nullptr;  ///< forwarded to every evaluation
};

struct SolveResult {
    Latent final;
    std::vector<std::pair<double, Latent>> trajectory;
    std::vector<Latent> slopes_last_step;
    int nfe = 0;
};

namespace detail {

inline void require_finite(const Latent& z, const std::string& what) {
    if (!z.all_finite()) {
        throw NumericError(what + " is not finite");
    }
}

/// out = base + scale * sum_j coeffs[j] * slopes[j]
inline Latent combine(const Latent& base, double scale, const std::vector<double>& coeffs,
                      const std::vector<Latent>& slopes, std::size_t count) {
    Latent out = base;
    if (count == 0) {
        return out;
    }
    std::vector<double> incr(base.size(), 0.0);
    for (std::size_t j = 0; j < count; ++j) {
        for (std::size_t k = 0; k < base.size(); ++k) {
            incr[k] += coeffs[j] * slopes[j][k];
        }
    }
    for (std::size_t k = 0; k < base.size(); ++k) {
        out[k] += scale * incr[k];
    }
    return out;
}

/// Increment Phi = sum_j b_j K_j of one step.
inline std::vector<double> increment(const ButcherTableau& tab, const std::vector<Latent>& slopes) {
    std::vector<double> phi(slopes.front().size(), 0.0);
    for (std::size_t j = 0; j < slopes.size(); ++j) {
        for (std::size_t k = 0; k < phi.size(); ++k) {
            phi[k] += tab.b[j] * slopes[j][k];
        }
    }
    return phi;
}

/// Evaluates the r stages of step i. `sign` is +1 for inversion (start at t_{i-1},
/// move forward) and -1 for denoising (start at t_i, move backward).
/// A provided first slope is used instead of evaluating stage 1.
inline std::vector<Latent> stage_slopes(const VelocityField& field, const Latent& start, double t_start,
                                        double sign, double dt, const ButcherTableau& tab, const Conditioning& cond,
                                        AttentionHook* hook, int& nfe, const Latent* first_slope, int step) {
    const std::size_t r = tab.stages();
    std::vector<Latent> slopes;
    slopes.reserve(r);
    for (std::size_t s = 0; s < r; ++s) {
        if (s == 0 && first_slope != nullptr) {
            slopes.push_back(*first_slope);
            continue;
        }
        const Latent arg = combine(start, sign * dt, tab.a[s], slopes, s);
        require_finite(arg, "stage " + std::to_string(s + 1) + " state of step " + std::to_string(step));
        Latent k = field.eval(arg, t_start + sign * tab.c[s] * dt, cond, hook);
        ++nfe;
        require_finite(k, "velocity at stage " + std::to_string(s + 1) + " of step " + std::to_string(step));
        slopes.push_back(std::move(k));
    }
    return slopes;
}

inline void require_valid(const ButcherTableau& tab) {
    const auto v = validate_tableau(tab);
    if (!v.empty()) {
        throw PreconditionError("tableau '" + tab.name + "' is invalid: " + v.front().condition + " (" +
                                v.front().message + ")");
    }
}

inline void require_step_index(int i, const TimeGrid& grid) {
    if (i < 1 || i > grid.steps()) {
        throw PreconditionError("step index " + std::to_string(i) + " outside [1, " + std::to_string(grid.steps()) +
                                "]");
    }
}

} // namespace detail

/// One inversion step from t_{i-1} to t_i:
///   K_s = v(Z_{i-1} + dt sum_{j<s} a_sj K_j, t_{i-1} + c_s dt),  Z_i = Z_{i-1} + dt sum_j b_j K_j.
[[nodiscard]] inline StepResult rk_invert_step(const VelocityField& field, const Latent& z_prev, int i,
                                               const TimeGrid& grid, const ButcherTableau& tab,
                                               const Conditioning& cond, AttentionHook* hook = nullptr) {
    detail::require_step_index(i, grid);
    detail::require_valid(tab);
    const double dt = grid.dt(i);
    StepResult res;
    res.slopes = detail::stage_slopes(field, z_prev, grid.t(i - 1), 1.0, dt, tab, cond, hook, res.nfe, nullptr, i);
    const auto phi = detail::increment(tab, res.slopes);
    res.state = z_prev;
    for (std::size_t k = 0; k < phi.size(); ++k) {
        res.state[k] += dt * phi[k];
    }
    detail::require_finite(res.state, "state after step " + std::to_string(i));
    return res;
}

/// One denoising step from t_i to t_{i-1}:
///   K_s = v(Z_i - dt sum_{j<s} a_sj K_j, t_i - c_s dt),  Z_{i-1} = Z_i - dt sum_j b_j K_j.
[[nodiscard]] inline StepResult rk_denoise_step(const VelocityField& field, const Latent& z_cur, int i,
                                                const TimeGrid& grid, const ButcherTableau& tab,
                                                const Conditioning& cond, AttentionHook* hook = nullptr) {
    detail::require_step_index(i, grid);
    detail::require_valid(tab);
    const double dt = grid.dt(i);
    StepResult res;
    res.slopes = detail::stage_slopes(field, z_cur, grid.t(i), -1.0, dt, tab, cond, hook, res.nfe, nullptr, i);
    const auto phi = detail::increment(tab, res.slopes);
    res.state = z_cur;
    for (std::size_t k = 0; k < phi.size(); ++k) {
        res.state[k] += (-dt) * phi[k];
    }
    detail::require_finite(res.state, "state after step " + std::to_string(i));
    return res;
}

/// Slope reuse needs K_1 of step i to stand in for K_2 of step i-1, which only
/// makes sense for the two-stage scheme that weights the midpoint slope alone.
[[nodiscard]] inline bool supports_reuse(const ButcherTableau& tab) noexcept {
    return tab.stages() == 2 && tab.b[0] == 0.0 && tab.b[1] == 1.0;
}

/// Full solve over the grid. Inversion runs i = 1..N, denoising i = N..1.
[[nodiscard]] inline SolveResult solve(const VelocityField& field, const Latent& z_init, const TimeGrid& grid,
                                       Direction direction, const ButcherTableau& tab, const Conditioning& cond,
                                       const SolveOptions& opts = {}) {
    detail::require_valid(tab);
    if (opts.reuse && !supports_reuse(tab)) {
        throw ConfigError("slope reuse requires a two-stage tableau with b = [0, 1]; '" + tab.name +
                          "' is incompatible");
    }
    detail::require_finite(z_init, "initial state");

    const int n = grid.steps();
    const bool invert = direction == Direction::invert;
    const double sign = invert ? 1.0 : -1.0;

    SolveResult res;
    Latent z = z_init;
    if (opts.record_trajectory) {
        res.trajectory.emplace_back(invert ? grid.t(0) : grid.t(n), z);
    }
    std::optional<Latent> carried;
    for (int step = 0; step < n; ++step) {
        const int i = invert ? step + 1 : n - step;
        const double dt = grid.dt(i);
        const double t_start = invert ? grid.t(i - 1) : grid.t(i);
        const Latent* first = (opts.reuse && carried) ? &*carried : nullptr;
        auto slopes = detail::stage_slopes(field, z, t_start, sign, dt, tab, cond, opts.hook, res.nfe, first, i);
        const auto phi = detail::increment(tab, slopes);
        for (std::size_t k = 0; k < phi.size(); ++k) {
            z[k] += (sign * dt) * phi[k];
        }
        detail::require_finite(z, "state after step " + std::to_string(i));
        if (opts.reuse) {
            carried = slopes.back();
        }
        if (opts.record_trajectory) {
            res.trajectory.emplace_back(invert ? grid.t(i) : grid.t(i - 1), z);
        }
        if (step == n - 1) {
            res.slopes_last_step = std::move(slopes);
        }
    }
    res.final = std::move(z);
    return res;
}

/// First-order baseline: Z_{i-1} = Z_i + (t_{i-1} - t_i) v(Z_i, t_i).
[[nodiscard]] inline SolveResult euler_denoise(const VelocityField& field, const Latent& z_n, const TimeGrid& grid,
                                               const Conditioning& cond, const SolveOptions& opts = {}) {
    return solve(field, z_n, grid, Direction::denoise, registry_get("euler"), cond, opts);
}

/// NFE a plain solve must consume; the stage-count audit compares against this.
[[nodiscard]] inline int expected_nfe(const ButcherTableau& tab, int n_steps, bool reuse) noexcept {
    return reuse ? n_steps + 1 : static_cast<int>(tab.stages()) * n_steps;
}

struct RoundtripReport {
    double l2_error = 0.0;
    double rel_error = 0.0;
    int nfe_total = 0;
    Latent noise;
    Latent reconstructed;
};

/// invert(z_0) -> z_N -> denoise(z_N) -> z_0 estimate.
[[nodiscard]] inline RoundtripReport roundtrip(const VelocityField& field, const Latent& z0, const TimeGrid& grid,
                                               const ButcherTableau& tab, const Conditioning& cond,
                                               bool reuse = false) {
    const SolveOptions opts{reuse, false, nullptr};
    auto inv = solve(field, z0, grid, Direction::invert, tab, cond, opts);
    auto den = solve(field, inv.final, grid, Direction::denoise, tab, cond, opts);
    RoundtripReport rep;
    rep.l2_error = distance(den.final, z0);
    rep.rel_error = rep.l2_error / std::max(z0.norm(), 1e-30);
    rep.nfe_total = inv.nfe + den.nfe;
    rep.noise = std::move(inv.final);
    rep.reconstructed = std::move(den.final);
    return rep;
}

struct OrderEstimate {
    double empirical_order = std::numeric_limits<double>::quiet_NaN();
    std::vector<double> step_sizes;
    std::vector<double> errors;
    bool saturated = false; ///< error at the largest h already at rounding level
};

/// Least-squares slope of log(error) against log(h) for denoising solves over
/// [0, 1] started from the exact state at t = 1.
[[nodiscard]] inline OrderEstimate estimate_order(const VelocityField& field, const ButcherTableau& tab,
                                                  const std::vector<double>& h_list, const Latent& z0,
                                                  const Conditioning& cond = {}) {
    if (h_list.size() < 3) {
        throw PreconditionError("estimate_order needs at least three step sizes");
    }
    for (std::size_t k = 1; k < h_list.size(); ++k) {
        if (std::abs(h_list[k] - h_list[k - 1] / 2.0) > 1e-12 * h_list[k - 1]) {
            throw PreconditionError("estimate_order: each step size must be half the previous");
        }
    }
    const auto z1 = field.exact_solution(z0, 1.0);
    if (!z1) {
        throw PreconditionError("estimate_order: field '" + field.describe() + "' has no closed-form solution");
    }
    OrderEstimate est;
    est.step_sizes = h_list;
    for (double h : h_list) {
        const int n = static_cast<int>(std::lround(1.0 / h));
        if (n < 1 || std::abs(1.0 / n - h) > 1e-12) {
            throw PreconditionError("estimate_order: step size " + std::to_string(h) + " does not divide [0, 1]");
        }
        const auto res = solve(field, *z1, TimeGrid::uniform(n), Direction::denoise, tab, cond);
        est.errors.push_back(distance(res.final, z0));
    }
    const double floor = 1e2 * std::numeric_limits<double>::epsilon() * std::max(1.0, z0.norm());
    if (est.errors.front() < floor) {
        est.saturated = true;
        return est;
    }
    double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
    const auto m = static_cast<double>(h_list.size());
    for (std::size_t k = 0; k < h_list.size(); ++k) {
        const double x = std::log(h_list[k]);
        const double y = std::log(std::max(est.errors[k], std::numeric_limits<double>::min()));
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    est.empirical_order = (m * sxy - sx * sy) / (m * sxx - sx * sx);
    return est;
}

/// Perturbations for the stability experiment: delta_0 offsets the starting
/// state, per_step[i-1] is added to the increment of step i.
struct PerturbationSchedule {
    Latent delta_0;
    std::vector<Latent> per_step;
    double magnitude_bound = 0.0;

    [[nodiscard]] double max_step_norm() const {
        double m = 0.0;
        for (const auto& d : per_step) {
            m = std::max(m, d.norm());
        }
        return m;
    }
    [[nodiscard]] double max_step_norm_inf() const {
        double m = 0.0;
        for (const auto& d : per_step) {
            m = std::max(m, d.max_abs());
        }
        return m;
    }
};

/// Denoising solve with Z~_N = Z_N + delta_0 and Z~_{i-1} = Z~_i + h [Phi_i(Z~_i) + delta_i],
/// where h Phi_i is the clean step's displacement. Requires a uniform grid.
[[nodiscard]] inline SolveResult perturbed_solve(const VelocityField& field, const Latent& z_init,
                                                 const TimeGrid& grid, const ButcherTableau& tab,
                                                 const PerturbationSchedule& pert, const Conditioning& cond) {
    detail::require_valid(tab);
    if (!grid.is_uniform()) {
        throw ConfigError("perturbed_solve requires a uniform time grid");
    }
    const int n = grid.steps();
    if (pert.per_step.size() != static_cast<std::size_t>(n)) {
        throw ConfigError("perturbation schedule has " + std::to_string(pert.per_step.size()) +
                          " step perturbations, grid has " + std::to_string(n) + " steps");
    }
    require_same_shape(pert.delta_0, z_init, "perturbed_solve delta_0");
    for (const auto& d : pert.per_step) {
        require_same_shape(d, z_init, "perturbed_solve step perturbation");
    }

    SolveResult res;
    Latent z = z_init;
    for (std::size_t k = 0; k < z.size(); ++k) {
        z[k] += pert.delta_0[k];
    }
    for (int i = n; i >= 1; --i) {
        const double dt = grid.dt(i);
        auto slopes = detail::stage_slopes(field, z, grid.t(i), -1.0, dt, tab, cond, nullptr, res.nfe, nullptr, i);
        const auto phi = detail::increment(tab, slopes);
        const Latent& delta = pert.per_step[static_cast<std::size_t>(i - 1)];
        // The backward increment is -Phi, so +delta enters as -(Phi - delta).
        for (std::size_t k = 0; k < phi.size(); ++k) {
            z[k] += (-dt) * (phi[k] - delta[k]);
        }
        detail::require_finite(z, "perturbed state after step " + std::to_string(i));
        if (i == 1) {
            res.slopes_last_step = std::move(slopes);
        }
    }
    res.final = std::move(z);
    return res;
}

} // namespace rkflow
