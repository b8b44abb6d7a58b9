#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "rkflow/ddta.hpp"
#include "rkflow/error.hpp"
#include "rkflow/latent.hpp"
#include "rkflow/metrics.hpp"
#include "rkflow/rng.hpp"
#include "rkflow/solver.hpp"
#include "rkflow/tableau.hpp"
#include "rkflow/velocity.hpp"

namespace rkflow {

// ---------------------------------------------------------------------------
// Reconstruction

struct ReconstructReport {
    Latent reconstructed;
    Latent noise;
    MetricReport metrics;
    int nfe_total = 0;
};

[[nodiscard]] inline ReconstructReport reconstruct(const VelocityField& field, const Latent& z0, const TimeGrid& grid,
                                                   const ButcherTableau& tab, const Conditioning& cond,
                                                   bool reuse = false) {
    auto rt = roundtrip(field, z0, grid, tab, cond, reuse);
    ReconstructReport rep;
    rep.metrics = latent_metrics(z0, rt.reconstructed);
    rep.nfe_total = rt.nfe_total;
    rep.reconstructed = std::move(rt.reconstructed);
    rep.noise = std::move(rt.noise);
    return rep;
}

// ---------------------------------------------------------------------------
// Stagewise solves with a function-evaluation counter

/// Returns the hook for evaluation counter c, or nullptr.
using StageHookFn = std::function<AttentionHook*(int c)>;

struct StagewiseResult {
    Latent final;
    int nfe = 0;
};

/// Inversion with the state accumulated after every stage. The counter starts
/// at N*r and drops by one per evaluation, so c = 1 is the last evaluation.
[[nodiscard]] inline StagewiseResult stagewise_invert(const VelocityField& field, const Latent& z0,
                                                      const TimeGrid& grid, const ButcherTableau& tab,
                                                      const Conditioning& cond, const StageHookFn& hook_for = {}) {
    detail::require_valid(tab);
    const int n = grid.steps();
    const auto r = tab.stages();
    int c = n * static_cast<int>(r);
    StagewiseResult res;
    Latent z_prev = z0;
    for (int i = 1; i <= n; ++i) {
        const double dt = grid.dt(i);
        Latent z_next = z_prev;
        std::vector<Latent> slopes;
        for (std::size_t s = 0; s < r; ++s) {
            const Latent arg = detail::combine(z_prev, dt, tab.a[s], slopes, s);
            AttentionHook* hook = hook_for ? hook_for(c) : nullptr;
            Latent k = field.eval(arg, grid.t(i - 1) + tab.c[s] * dt, cond, hook);
            ++res.nfe;
            detail::require_finite(k, "velocity at stage " + std::to_string(s + 1) + " of step " + std::to_string(i));
            for (std::size_t q = 0; q < z_next.size(); ++q) {
                z_next[q] += tab.b[s] * dt * k[q];
            }
            slopes.push_back(std::move(k));
            --c;
        }
        z_prev = std::move(z_next);
    }
    res.final = std::move(z_prev);
    return res;
}

/// Denoising counterpart: the counter starts at 1 and rises by one per evaluation.
[[nodiscard]] inline StagewiseResult stagewise_denoise(const VelocityField& field, const Latent& z_n,
                                                       const TimeGrid& grid, const ButcherTableau& tab,
                                                       const Conditioning& cond, const StageHookFn& hook_for = {}) {
    detail::require_valid(tab);
    const int n = grid.steps();
    const auto r = tab.stages();
    int c = 1;
    StagewiseResult res;
    Latent z_cur = z_n;
    for (int i = n; i >= 1; --i) {
        const double dt = grid.dt(i);
        Latent z_next = z_cur;
        std::vector<Latent> slopes;
        for (std::size_t s = 0; s < r; ++s) {
            const Latent arg = detail::combine(z_cur, -dt, tab.a[s], slopes, s);
            AttentionHook* hook = hook_for ? hook_for(c) : nullptr;
            Latent k = field.eval(arg, grid.t(i) - tab.c[s] * dt, cond, hook);
            ++res.nfe;
            detail::require_finite(k, "velocity at stage " + std::to_string(s + 1) + " of step " + std::to_string(i));
            for (std::size_t q = 0; q < z_next.size(); ++q) {
                z_next[q] -= tab.b[s] * dt * k[q];
            }
            slopes.push_back(std::move(k));
            ++c;
        }
        z_cur = std::move(z_next);
    }
    res.final = std::move(z_cur);
    return res;
}

// ---------------------------------------------------------------------------
// Semantic editing

struct EditConfig {
    std::vector<int> source_prompt;
    std::vector<int> target_prompt;
    std::string tableau = "kutta3";
    int steps = 8;
    ManipulationPlan plan = ManipulationPlan::editing_default(); ///< carries d_list
    double guidance_invert = 1.0;
    double guidance_edit = 3.0;
    std::uint64_t seed = 0;

    /// Every violated invariant; empty when the config is usable.
    [[nodiscard]] std::vector<std::string> violations() const {
        std::vector<std::string> out;
        if (steps < 1) {
            out.push_back("steps must be >= 1 (got " + std::to_string(steps) + ")");
        }
        int r = 0;
        if (!registry_contains(tableau)) {
            out.push_back("unknown tableau '" + tableau + "'");
        } else {
            r = static_cast<int>(registry_get(tableau).stages());
        }
        if (source_prompt.empty()) {
            out.push_back("source_prompt must not be empty");
        }
        if (target_prompt.empty()) {
            out.push_back("target_prompt must not be empty");
        }
        if (r > 0 && steps >= 1) {
            for (int d : plan.d_list) {
                if (d < 1 || d > steps * r) {
                    out.push_back("d_list entry " + std::to_string(d) + " outside [1, " + std::to_string(steps * r) +
                                  "]");
                }
            }
        }
        if (!plan.multi_blocks && !plan.single_blocks && !plan.empty()) {
            out.push_back("plan manipulates regions but selects no block kind");
        }
        return out;
    }
};

struct EditReport {
    Latent edited;
    Latent reconstruction;
    double deviation_from_source = 0.0;
    int nfe_total = 0;          ///< inversion + editing
    int nfe_inversion = 0;
    int nfe_editing = 0;
    int nfe_reconstruction = 0; ///< reference branch, reported separately
    std::size_t cache_entries = 0;
};

/// Inversion under the source prompt saving attention at counters in d_list,
/// then editing under the target prompt manipulating attention at the same
/// counters. The reference reconstruction denoises the same noise under the
/// source prompt with the inversion guidance. The saved attention is moved
/// into `cache_out` when given.
[[nodiscard]] inline EditReport edit(const VelocityField& field, const Latent& z0, const EditConfig& cfg,
                                     AttentionCache* cache_out = nullptr) {
    const auto bad = cfg.violations();
    if (!bad.empty()) {
        std::string msg = "invalid edit config:";
        for (const auto& b : bad) {
            msg += " " + b + ";";
        }
        throw ConfigError(msg);
    }
    const auto tab = registry_get(cfg.tableau);
    const auto grid = TimeGrid::uniform(cfg.steps);
    const auto p_src = field.embed_prompt(cfg.source_prompt);
    const auto p_tgt = field.embed_prompt(cfg.target_prompt);
    const Conditioning inv_cond{&p_src, cfg.guidance_invert};
    const Conditioning edit_cond{&p_tgt, cfg.guidance_edit};

    AttentionCache cache;
    std::unique_ptr<CacheHook> active;
    auto hook_for = [&](CacheMode mode) {
        return [&, mode](int c) -> AttentionHook* {
            if (!cfg.plan.in_d_list(c)) {
                return nullptr;
            }
            active = std::make_unique<CacheHook>(cache, c, mode, cfg.plan);
            return active.get();
        };
    };

    EditReport rep;
    const auto inv = stagewise_invert(field, z0, grid, tab, inv_cond, hook_for(CacheMode::save));
    rep.cache_entries = cache.size();
    const auto rec = stagewise_denoise(field, inv.final, grid, tab, inv_cond);
    const auto ed = stagewise_denoise(field, inv.final, grid, tab, edit_cond, hook_for(CacheMode::manipulate));

    rep.nfe_inversion = inv.nfe;
    rep.nfe_editing = ed.nfe;
    rep.nfe_reconstruction = rec.nfe;
    rep.nfe_total = inv.nfe + ed.nfe;
    rep.edited = ed.final;
    rep.reconstruction = rec.final;
    rep.deviation_from_source = distance(ed.final, rec.final);
    if (cache_out != nullptr) {
        *cache_out = std::move(cache);
    }
    return rep;
}

// ---------------------------------------------------------------------------
// Fidelity ordering

struct FidelityCase {
    int index = 0;
    std::vector<int> source_prompt;
    std::vector<int> target_prompt;
    int edited_position = -1; ///< -1 when the prompts are identical
    double dev_none = 0.0;
    double dev_mean = 0.0;
    double dev_replace = 0.0;
    bool degenerate = false;
};

struct FidelitySummary {
    int counted_cases = 0;
    double win_rate_replace_vs_none = 0.0;
    double win_rate_replace_vs_mean = 0.0;
    double win_rate_full_chain = 0.0; ///< replace <= mean <= none
    std::vector<FidelityCase> cases;
};

struct FidelityOptions {
    int n_cases = 20;
    int prompt_length = 6;
    std::uint64_t seed = 0;
};

/// Seeded prompt pairs differing in exactly one token.
[[nodiscard]] inline std::vector<FidelityCase> make_fidelity_cases(int n_cases, int prompt_length, int vocab,
                                                                   std::uint64_t seed) {
    if (n_cases < 1) {
        throw ConfigError("fidelity experiment needs n_cases >= 1");
    }
    if (prompt_length < 1 || vocab < 3) {
        throw ConfigError("fidelity experiment needs prompt_length >= 1 and vocab >= 3");
    }
    std::vector<FidelityCase> cases;
    for (int k = 0; k < n_cases; ++k) {
        Rng rng(derive_seed(seed, 0x70726f6d70740000ULL + static_cast<std::uint64_t>(k)));
        FidelityCase fc;
        fc.index = k;
        for (int p = 0; p < prompt_length; ++p) {
            fc.source_prompt.push_back(rng.integer(1, vocab - 1));
        }
        fc.target_prompt = fc.source_prompt;
        fc.edited_position = rng.integer(0, prompt_length - 1);
        const int old_id = fc.source_prompt[static_cast<std::size_t>(fc.edited_position)];
        int new_id = rng.integer(1, vocab - 2);
        if (new_id >= old_id) {
            ++new_id;
        }
        fc.target_prompt[static_cast<std::size_t>(fc.edited_position)] = new_id;
        cases.push_back(std::move(fc));
    }
    return cases;
}

/// Seeded source latent for case k.
[[nodiscard]] inline Latent fidelity_case_latent(LatentShape shape, std::uint64_t seed, int k) {
    Rng rng(derive_seed(seed, 0x6c6174656e740000ULL + static_cast<std::uint64_t>(k)));
    return Latent::gaussian(shape, rng);
}

/// Runs each case under the none, mean-all and replace-all plans (scope and
/// d_list from base.plan) and scores deviation from the source reconstruction.
[[nodiscard]] inline FidelitySummary evaluate_fidelity_cases(const VelocityField& field, LatentShape shape,
                                                             std::vector<FidelityCase> cases, const EditConfig& base,
                                                             std::uint64_t seed) {
    FidelitySummary sum;
    int wins_none = 0;
    int wins_mean = 0;
    int wins_chain = 0;
    for (auto& fc : cases) {
        const Latent z0 = fidelity_case_latent(shape, seed, fc.index);
        EditConfig cfg = base;
        cfg.source_prompt = fc.source_prompt;
        cfg.target_prompt = fc.target_prompt;
        auto deviation = [&](RegionOp op) {
            cfg.plan = base.plan.with_all(op);
            return edit(field, z0, cfg).deviation_from_source;
        };
        fc.dev_none = deviation(RegionOp::none);
        fc.dev_mean = deviation(RegionOp::mean);
        fc.dev_replace = deviation(RegionOp::replace);
        fc.degenerate = fc.source_prompt == fc.target_prompt;
        if (fc.degenerate) {
            continue;
        }
        ++sum.counted_cases;
        wins_none += fc.dev_replace <= fc.dev_none ? 1 : 0;
        wins_mean += fc.dev_replace <= fc.dev_mean ? 1 : 0;
        wins_chain += (fc.dev_replace <= fc.dev_mean && fc.dev_mean <= fc.dev_none) ? 1 : 0;
    }
    if (sum.counted_cases > 0) {
        const auto n = static_cast<double>(sum.counted_cases);
        sum.win_rate_replace_vs_none = wins_none / n;
        sum.win_rate_replace_vs_mean = wins_mean / n;
        sum.win_rate_full_chain = wins_chain / n;
    }
    sum.cases = std::move(cases);
    return sum;
}

[[nodiscard]] inline FidelitySummary fidelity_ordering_experiment(const VelocityField& field, LatentShape shape,
                                                                  int vocab, const FidelityOptions& opts,
                                                                  const EditConfig& base) {
    auto cases = make_fidelity_cases(opts.n_cases, opts.prompt_length, vocab, opts.seed);
    return evaluate_fidelity_cases(field, shape, std::move(cases), base, opts.seed);
}

// ---------------------------------------------------------------------------
// Perturbation bound

struct BoundTrial {
    int trial = 0;
    double observed = 0.0;     ///< l2
    double bound = 0.0;        ///< l2
    double ratio = 0.0;
    double observed_inf = 0.0;
    double bound_inf = 0.0;
    double ratio_inf = 0.0;
};

struct BoundCheckReport {
    double lipschitz = 0.0;
    double lambda = 0.0;
    double h = 0.0;
    double span = 0.0;
    int violations = 0;
    int violations_inf = 0;
    double max_ratio = 0.0;
    double max_ratio_inf = 0.0;
    std::vector<BoundTrial> trials;
};

struct BoundCheckOptions {
    int steps = 30;
    int n_trials = 100;
    double delta_max = 1e-3;
    std::uint64_t seed = 0;
    std::optional<double> lipschitz; ///< overrides the field's own constant
};

inline constexpr double kBoundLambdaFactor = 41.0 / 24.0;

/// e^{Lambda T} |d0| + ((e^{Lambda T} - 1) / Lambda) max|d_i|, with the Lambda -> 0 limit T max|d_i|.
[[nodiscard]] inline double perturbation_bound(double lambda, double span, double delta0, double delta_step_max) {
    const double growth = std::exp(lambda * span);
    const double accum = lambda > 0.0 ? std::expm1(lambda * span) / lambda : span;
    return growth * delta0 + accum * delta_step_max;
}

namespace detail {

/// Gaussian direction scaled to a norm drawn uniformly from [0, max_norm].
inline Latent random_perturbation(LatentShape shape, Rng& rng, double max_norm) {
    Latent d = Latent::gaussian(shape, rng);
    const double n = d.norm();
    const double target = max_norm * rng.uniform();
    for (std::size_t k = 0; k < d.size(); ++k) {
        d[k] = n > 0.0 ? d[k] * (target / n) : 0.0;
    }
    return d;
}

} // namespace detail

/// Draws perturbation schedules, runs clean and perturbed denoising solves
/// from z_init over a uniform [0, 1] grid and compares the terminal gap with
/// the bound at Lambda = (41/24) L. Requires h <= 1/L.
[[nodiscard]] inline BoundCheckReport bound_check_experiment(const VelocityField& field, const Latent& z_init,
                                                             const ButcherTableau& tab, const BoundCheckOptions& opts,
                                                             const Conditioning& cond = {}) {
    const auto l = opts.lipschitz ? opts.lipschitz : field.lipschitz();
    if (!l) {
        throw ConfigError("bound check needs a Lipschitz constant; field '" + field.describe() +
                          "' has none and no override was given");
    }
    if (*l < 0.0) {
        throw ConfigError("Lipschitz constant must be non-negative");
    }
    if (opts.n_trials < 1) {
        throw ConfigError("bound check needs n_trials >= 1");
    }
    if (!(opts.delta_max >= 0.0)) {
        throw ConfigError("delta_max must be non-negative");
    }
    const auto grid = TimeGrid::uniform(opts.steps);
    BoundCheckReport rep;
    rep.lipschitz = *l;
    rep.lambda = kBoundLambdaFactor * *l;
    rep.h = grid.dt(1);
    rep.span = grid.span();
    if (*l > 0.0 && rep.h > 1.0 / *l) {
        throw ConfigError("step h = " + std::to_string(rep.h) + " exceeds 1/L = " + std::to_string(1.0 / *l) +
                          "; the bound assumes h <= 1/L");
    }

    const auto clean = solve(field, z_init, grid, Direction::denoise, tab, cond);
    for (int trial = 0; trial < opts.n_trials; ++trial) {
        Rng rng(derive_seed(opts.seed, static_cast<std::uint64_t>(trial)));
        PerturbationSchedule pert;
        pert.magnitude_bound = opts.delta_max;
        pert.delta_0 = detail::random_perturbation(z_init.shape(), rng, opts.delta_max);
        for (int i = 0; i < grid.steps(); ++i) {
            pert.per_step.push_back(detail::random_perturbation(z_init.shape(), rng, opts.delta_max));
        }
        const auto perturbed = perturbed_solve(field, z_init, grid, tab, pert, cond);

        BoundTrial bt;
        bt.trial = trial;
        bt.observed = distance(perturbed.final, clean.final);
        bt.bound = perturbation_bound(rep.lambda, rep.span, pert.delta_0.norm(), pert.max_step_norm());
        bt.ratio = bt.bound > 0.0 ? bt.observed / bt.bound : (bt.observed > 0.0 ? 1e300 : 0.0);
        bt.observed_inf = distance_inf(perturbed.final, clean.final);
        bt.bound_inf = perturbation_bound(rep.lambda, rep.span, pert.delta_0.max_abs(), pert.max_step_norm_inf());
        bt.ratio_inf = bt.bound_inf > 0.0 ? bt.observed_inf / bt.bound_inf : (bt.observed_inf > 0.0 ? 1e300 : 0.0);
        rep.violations += bt.ratio > 1.0 ? 1 : 0;
        rep.violations_inf += bt.ratio_inf > 1.0 ? 1 : 0;
        rep.max_ratio = std::max(rep.max_ratio, bt.ratio);
        rep.max_ratio_inf = std::max(rep.max_ratio_inf, bt.ratio_inf);
        rep.trials.push_back(bt);
    }
    return rep;
}

// ---------------------------------------------------------------------------
// Word-pixel response maps

struct ResponseMapRun {
    std::vector<ResponseMap> maps;
    ResponseRun record;
    Latent final;
};

/// Euler denoising from z_n with every block's cross-attention recorded, then
/// aggregated into one map per word index.
[[nodiscard]] inline ResponseMapRun response_maps(const VelocityField& field, const Latent& z_n, int steps,
                                                  const Conditioning& cond, std::span<const int> word_indices,
                                                  Eigen::Index height, Eigen::Index width) {
    const auto grid = TimeGrid::uniform(steps);
    const auto shape = z_n.shape();
    ResponseMapRun out;
    Latent z = z_n;
    for (int i = grid.steps(); i >= 1; --i) {
        CrossAttentionRecorder rec;
        const Latent v = field.eval(z, grid.t(i), cond, &rec);
        detail::require_finite(v, "velocity at step " + std::to_string(i));
        const double dt = grid.t(i - 1) - grid.t(i);
        for (std::size_t k = 0; k < z.size(); ++k) {
            z[k] += dt * v[k];
        }
        auto blocks = rec.take();
        if (blocks.empty()) {
            throw PreconditionError("response maps need a field with attention layers; '" + field.describe() +
                                    "' reported none");
        }
        out.record.push_back(std::move(blocks));
    }
    out.maps = aggregate_response_maps(out.record, word_indices, static_cast<Eigen::Index>(shape.grid_h),
                                       static_cast<Eigen::Index>(shape.grid_w), height, width);
    out.final = std::move(z);
    return out;
}

} // namespace rkflow
