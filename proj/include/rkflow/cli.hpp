#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "rkflow/config.hpp"
#include "rkflow/ddta.hpp"
#include "rkflow/error.hpp"
#include "rkflow/metrics.hpp"
#include "rkflow/pipeline.hpp"
#include "rkflow/report.hpp"
#include "rkflow/solver.hpp"
#include "rkflow/tableau.hpp"
#include "rkflow/velocity.hpp"

namespace rkflow::cli {

namespace fs = std::filesystem;
using nlohmann::json;

/// One parsed command line.
struct Invocation {
    std::string command;               ///< e.g. "roundtrip", "tableau", "model"
    std::vector<std::string> args;     ///< positional words after the command
    std::optional<std::string> config; ///< --config
    std::vector<std::string> overrides; ///< --set k=v, in order
    std::optional<std::string> out;    ///< --out
    std::optional<std::uint64_t> seed; ///< --seed
};

inline const std::vector<std::string>& run_commands() {
    static const std::vector<std::string> names{"solve",  "roundtrip",      "convergence", "nfe-bench",   "edit",
                                                "fidelity-bench", "respmap", "bound-check", "export-traj"};
    return names;
}

/// File config, then --set overrides, then --seed; merged over the defaults and validated.
[[nodiscard]] inline RunConfig load_run_config(const Invocation& inv) {
    json user = inv.config ? load_config_file(*inv.config) : json::object();
    if (!user.is_object()) {
        throw ConfigViolations({"<root>: config must be a JSON object"});
    }
    for (const auto& o : inv.overrides) {
        apply_override(user, o);
    }
    if (inv.seed) {
        user["seed"] = *inv.seed;
    }
    return resolve_run_config(user);
}

namespace detail {

inline std::string join_ints(const std::vector<int>& v, const char* sep = " ") {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) {
        s += (i ? sep : "") + std::to_string(v[i]);
    }
    return s;
}

inline json latent_json(const Latent& z) {
    json values = json::array();
    for (double v : z.values()) {
        values.push_back(report::number(v));
    }
    return json{{"shape", {z.shape().channels, z.shape().grid_h, z.shape().grid_w}}, {"values", values}};
}

inline json metrics_json(const MetricReport& m) {
    return json{{"psnr", report::number(m.psnr)},
                {"ssim", m.ssim ? json(report::number(*m.ssim)) : json(nullptr)},
                {"l2", report::number(m.l2)},
                {"rel", report::number(m.rel)}};
}

/// Field, prompt embedding and conditioning built once per run.
struct RunContext {
    explicit RunContext(const RunConfig& rc) : field(make_field(rc)), prompt(field->embed_prompt(rc.prompt)) {
        cond = Conditioning{&prompt, rc.guidance};
    }
    std::unique_ptr<VelocityField> field;
    PromptEmbedding prompt;
    Conditioning cond;
};

inline void audit_nfe(int got, int expected, const std::string& what) {
    if (got != expected) {
        throw Error("stage-count audit failed for " + what + ": " + std::to_string(got) + " evaluations, expected " +
                    std::to_string(expected));
    }
}

} // namespace detail

// ---------------------------------------------------------------------------
// Informational commands

inline int run_tableau(const Invocation& inv, std::ostream& out) {
    if (inv.args.empty()) {
        throw ConfigError("tableau: expected one of list, validate <name|path>, order <name|path>");
    }
    const std::string& sub = inv.args[0];
    if (sub == "list") {
        report::Csv csv({"name", "stages", "advertised_order", "satisfied_order"});
        for (const auto& name : registry_names()) {
            const auto t = registry_get(name);
            csv.row({name, std::to_string(t.stages()), std::to_string(advertised_order(name)),
                     std::to_string(classify_order(t).satisfied_order)});
        }
        out << csv.str();
        if (inv.out) {
            report::write_text(fs::path(*inv.out) / "tableaus.csv", csv.str());
        }
        return 0;
    }
    if (sub != "validate" && sub != "order") {
        throw ConfigError("tableau: unknown subcommand '" + sub + "'");
    }
    if (inv.args.size() != 2) {
        throw ConfigError("tableau " + sub + ": expected exactly one tableau name or path");
    }
    const auto loaded = resolve_tableau(inv.args[1]);
    json j;
    int code = 0;
    if (sub == "validate") {
        json violations = json::array();
        for (const auto& v : loaded.warnings) {
            violations.push_back({{"condition", v.condition}, {"residual", report::number(v.residual)},
                                  {"message", v.message}});
        }
        j = {{"tableau", loaded.tableau.name}, {"valid", loaded.warnings.empty()}, {"violations", violations}};
        code = loaded.warnings.empty() ? 0 : 1;
    } else {
        const auto rep = classify_order(loaded.tableau);
        json residuals = json::array();
        for (const auto& c : rep.condition_residuals) {
            residuals.push_back({{"condition", c.label}, {"order", c.order}, {"residual", report::number(c.residual)}});
        }
        j = {{"tableau", rep.tableau_name}, {"satisfied_order", rep.satisfied_order}, {"conditions", residuals}};
    }
    out << j.dump(2) << "\n";
    if (inv.out) {
        report::write_json(fs::path(*inv.out) / ("tableau_" + sub + ".json"), j);
    }
    return code;
}

inline int run_model(const Invocation& inv, std::ostream& out) {
    if (inv.args.size() != 1 || inv.args[0] != "dump-config") {
        throw ConfigError("model: expected 'dump-config'");
    }
    const auto rc = load_run_config(inv);
    const json j{{"model", rc.resolved["model"]}, {"field", rc.resolved["field"]}, {"seed", rc.resolved["seed"]},
                 {"schema_version", kSchemaVersion}};
    out << j.dump(2) << "\n";
    if (inv.out) {
        report::write_json(fs::path(*inv.out) / "model_config.json", j);
    }
    return 0;
}

// ---------------------------------------------------------------------------
// Run commands. Each writes resolved_config.json plus its tables and reports
// into `dir` and returns a short summary.

inline json run_solve(const RunConfig& rc, const fs::path& dir) {
    detail::RunContext ctx(rc);
    const auto tab = resolve_tableau(rc.tableau).tableau;
    const auto z = make_latent(rc, *ctx.field);
    const auto res = solve(*ctx.field, z, TimeGrid::uniform(rc.steps), rc.solve_direction, tab, ctx.cond,
                           SolveOptions{rc.reuse, false, nullptr});
    const int expected = expected_nfe(tab, rc.steps, rc.reuse);
    detail::audit_nfe(res.nfe, expected, tab.name);

    report::Csv csv({"field", "tableau", "direction", "steps", "reuse", "nfe", "initial_norm", "final_norm"});
    csv.row({rc.field.kind, tab.name, to_string(rc.solve_direction), std::to_string(rc.steps),
             rc.reuse ? "true" : "false", std::to_string(res.nfe), report::fmt(z.norm()), report::fmt(res.final.norm())});
    const json summary{{"command", "solve"},      {"field", rc.field.kind}, {"tableau", tab.name},
                       {"direction", to_string(rc.solve_direction)}, {"steps", rc.steps},
                       {"reuse", rc.reuse},       {"nfe", res.nfe},         {"final_norm", report::number(res.final.norm())}};
    json rep = summary;
    rep["initial"] = detail::latent_json(z);
    rep["final"] = detail::latent_json(res.final);
    report::write_text(dir / "solve.csv", csv.str());
    report::write_json(dir / "solve.json", rep);
    return summary;
}

inline json run_roundtrip(const RunConfig& rc, const fs::path& dir) {
    detail::RunContext ctx(rc);
    const auto tab = resolve_tableau(rc.tableau).tableau;
    const auto z = make_latent(rc, *ctx.field);
    const auto rep = reconstruct(*ctx.field, z, TimeGrid::uniform(rc.steps), tab, ctx.cond, rc.reuse);
    detail::audit_nfe(rep.nfe_total, 2 * expected_nfe(tab, rc.steps, rc.reuse), tab.name);

    report::Csv csv({"field", "tableau", "steps", "reuse", "l2", "rel", "psnr", "ssim", "nfe_total"});
    csv.row({rc.field.kind, tab.name, std::to_string(rc.steps), rc.reuse ? "true" : "false", report::fmt(rep.metrics.l2),
             report::fmt(rep.metrics.rel), report::fmt(rep.metrics.psnr),
             rep.metrics.ssim ? report::fmt(*rep.metrics.ssim) : "", std::to_string(rep.nfe_total)});
    const json summary{{"command", "roundtrip"}, {"field", rc.field.kind}, {"tableau", tab.name},
                       {"steps", rc.steps},       {"reuse", rc.reuse},      {"nfe_total", rep.nfe_total},
                       {"metrics", detail::metrics_json(rep.metrics)}};
    report::write_text(dir / "roundtrip.csv", csv.str());
    report::write_json(dir / "roundtrip.json", summary);
    return summary;
}

inline json run_convergence(const RunConfig& rc, const fs::path& dir) {
    detail::RunContext ctx(rc);
    const Latent z0 = Latent::scalar(rc.convergence_z0);
    report::Csv rows({"tableau", "h", "steps", "error"});
    report::Csv table({"tableau", "advertised_order", "satisfied_order", "empirical_order", "saturated"});
    std::vector<report::Series> series;
    json results = json::array();
    for (const auto& name : rc.convergence_tableaus) {
        const auto tab = registry_get(name);
        const auto est = estimate_order(*ctx.field, tab, rc.h_list, z0, ctx.cond);
        for (std::size_t k = 0; k < est.step_sizes.size(); ++k) {
            rows.row({name, report::fmt(est.step_sizes[k]), std::to_string(std::lround(1.0 / est.step_sizes[k])),
                      report::fmt(est.errors[k])});
        }
        const int satisfied = classify_order(tab).satisfied_order;
        table.row({name, std::to_string(advertised_order(name)), std::to_string(satisfied),
                   report::fmt(est.empirical_order), est.saturated ? "true" : "false"});
        json errs = json::array();
        for (double e : est.errors) {
            errs.push_back(report::number(e));
        }
        results.push_back({{"tableau", name},
                           {"advertised_order", advertised_order(name)},
                           {"satisfied_order", satisfied},
                           {"empirical_order", est.saturated ? json(nullptr) : report::number(est.empirical_order)},
                           {"saturated", est.saturated},
                           {"errors", errs}});
        series.push_back({name, est.step_sizes, est.errors});
    }
    const json summary{{"command", "convergence"}, {"field", ctx.field->describe()}, {"results", results}};
    report::write_text(dir / "convergence.csv", rows.str());
    report::write_text(dir / "convergence_orders.csv", table.str());
    report::write_json(dir / "convergence.json", summary);
    report::write_text(dir / "convergence.svg",
                       report::svg_loglog(series, "global error vs step size", "h", "|z_hat(0) - z(0)|"));
    return summary;
}

inline json run_nfe_bench(const RunConfig& rc, const fs::path& dir) {
    detail::RunContext ctx(rc);
    const auto z = make_latent(rc, *ctx.field);
    report::Csv csv({"method", "tableau", "steps", "nfe_invert", "nfe_denoise", "nfes", "rel_error", "psnr"});
    json rows = json::array();
    for (const auto& m : rc.nfe_methods) {
        const auto tab = registry_get(m.tableau);
        for (int n : m.steps) {
            const auto grid = TimeGrid::uniform(n);
            const SolveOptions opts{m.reuse, false, nullptr};
            const auto inv = solve(*ctx.field, z, grid, Direction::invert, tab, ctx.cond, opts);
            const auto den = solve(*ctx.field, inv.final, grid, Direction::denoise, tab, ctx.cond, opts);
            detail::audit_nfe(inv.nfe, expected_nfe(tab, n, m.reuse), m.label + " inversion");
            detail::audit_nfe(den.nfe, expected_nfe(tab, n, m.reuse), m.label + " denoising");
            const auto metrics = latent_metrics(z, den.final);
            csv.row({m.label, m.tableau, std::to_string(n), std::to_string(inv.nfe), std::to_string(den.nfe),
                     std::to_string(inv.nfe + den.nfe), report::fmt(metrics.rel), report::fmt(metrics.psnr)});
            rows.push_back({{"method", m.label},
                            {"tableau", m.tableau},
                            {"steps", n},
                            {"nfe_invert", inv.nfe},
                            {"nfe_denoise", den.nfe},
                            {"nfes", inv.nfe + den.nfe},
                            {"rel_error", report::number(metrics.rel)},
                            {"psnr", report::number(metrics.psnr)}});
        }
    }
    const json summary{{"command", "nfe-bench"}, {"field", rc.field.kind}, {"rows", rows}};
    report::write_text(dir / "nfe_bench.csv", csv.str());
    report::write_json(dir / "nfe_bench.json", summary);
    return summary;
}

inline json run_edit(const RunConfig& rc, const fs::path& dir) {
    detail::RunContext ctx(rc);
    const auto z = make_latent(rc, *ctx.field);
    AttentionCache cache;
    const auto rep = edit(*ctx.field, z, rc.edit, &cache);
    report::Csv csv({"tableau", "steps", "d_list", "deviation_from_source", "nfe_inversion", "nfe_editing",
                     "nfe_total", "nfe_reconstruction", "cache_entries"});
    csv.row({rc.edit.tableau, std::to_string(rc.edit.steps), detail::join_ints(rc.edit.plan.d_list),
             report::fmt(rep.deviation_from_source), std::to_string(rep.nfe_inversion),
             std::to_string(rep.nfe_editing), std::to_string(rep.nfe_total), std::to_string(rep.nfe_reconstruction),
             std::to_string(rep.cache_entries)});
    json summary{{"command", "edit"},
                 {"tableau", rc.edit.tableau},
                 {"steps", rc.edit.steps},
                 {"deviation_from_source", report::number(rep.deviation_from_source)},
                 {"nfe_inversion", rep.nfe_inversion},
                 {"nfe_editing", rep.nfe_editing},
                 {"nfe_total", rep.nfe_total},
                 {"nfe_reconstruction", rep.nfe_reconstruction},
                 {"cache_entries", rep.cache_entries}};
    json full = summary;
    full["edited"] = detail::latent_json(rep.edited);
    full["reconstruction"] = detail::latent_json(rep.reconstruction);
    report::write_text(dir / "edit.csv", csv.str());
    report::write_json(dir / "edit.json", full);
    if (rc.edit_spill_cache) {
        spill_cache(cache, (dir / "attention_cache.json").string());
    }
    return summary;
}

inline json run_fidelity_bench(const RunConfig& rc, const fs::path& dir) {
    detail::RunContext ctx(rc);
    const auto shape = latent_shape(rc, *ctx.field);
    const FidelityOptions opts{rc.fidelity_cases, rc.fidelity_prompt_length, rc.seed};
    const auto sum = fidelity_ordering_experiment(*ctx.field, shape, rc.model.vocab, opts, rc.edit);
    report::Csv csv({"case", "source_prompt", "target_prompt", "edited_position", "dev_none", "dev_mean",
                     "dev_replace", "replace_le_none", "replace_le_mean", "full_chain", "degenerate"});
    json cases = json::array();
    for (const auto& c : sum.cases) {
        const bool le_none = c.dev_replace <= c.dev_none;
        const bool le_mean = c.dev_replace <= c.dev_mean;
        const bool chain = le_mean && c.dev_mean <= c.dev_none;
        csv.row({std::to_string(c.index), detail::join_ints(c.source_prompt), detail::join_ints(c.target_prompt),
                 std::to_string(c.edited_position), report::fmt(c.dev_none), report::fmt(c.dev_mean),
                 report::fmt(c.dev_replace), le_none ? "true" : "false", le_mean ? "true" : "false",
                 chain ? "true" : "false", c.degenerate ? "true" : "false"});
        cases.push_back({{"case", c.index},
                         {"dev_none", report::number(c.dev_none)},
                         {"dev_mean", report::number(c.dev_mean)},
                         {"dev_replace", report::number(c.dev_replace)},
                         {"degenerate", c.degenerate}});
    }
    const json summary{{"command", "fidelity-bench"},
                       {"counted_cases", sum.counted_cases},
                       {"win_rate_replace_vs_none", report::number(sum.win_rate_replace_vs_none)},
                       {"win_rate_replace_vs_mean", report::number(sum.win_rate_replace_vs_mean)},
                       {"win_rate_full_chain", report::number(sum.win_rate_full_chain)}};
    json full = summary;
    full["cases"] = cases;
    report::write_text(dir / "fidelity.csv", csv.str());
    report::write_json(dir / "fidelity.json", full);
    return summary;
}

inline json run_respmap(const RunConfig& rc, const fs::path& dir) {
    detail::RunContext ctx(rc);
    const auto z = make_latent(rc, *ctx.field);
    const auto run = response_maps(*ctx.field, z, rc.respmap_steps, ctx.cond, rc.respmap_words, rc.respmap_height,
                                   rc.respmap_width);
    json maps = json::array();
    for (const auto& m : run.maps) {
        const std::string stem = "respmap_g" + std::to_string(m.word_index);
        report::write_text(dir / (stem + ".csv"), report::matrix_csv(m.resized));
        report::write_text(dir / (stem + "_grid.csv"), report::matrix_csv(m.grid_map));
        report::write_text(dir / (stem + ".svg"),
                           report::svg_heatmap(m.resized, "word " + std::to_string(m.word_index), 8.0));
        maps.push_back({{"word_index", m.word_index},
                        {"min", report::number(m.resized.minCoeff())},
                        {"max", report::number(m.resized.maxCoeff())},
                        {"mean", report::number(m.resized.mean())}});
    }
    const json summary{{"command", "respmap"},
                       {"steps", rc.respmap_steps},
                       {"evaluations", run.record.size()},
                       {"blocks_per_evaluation", run.record.front().size()},
                       {"height", rc.respmap_height},
                       {"width", rc.respmap_width},
                       {"maps", maps}};
    report::write_json(dir / "respmap.json", summary);
    return summary;
}

inline json run_bound_check(const RunConfig& rc, const fs::path& dir) {
    detail::RunContext ctx(rc);
    const auto tab = resolve_tableau(rc.tableau).tableau;
    const auto z = make_latent(rc, *ctx.field);
    BoundCheckOptions opts;
    opts.steps = rc.steps;
    opts.n_trials = rc.bound_trials;
    opts.delta_max = rc.bound_delta_max;
    opts.seed = derive_seed(rc.seed, 2);
    opts.lipschitz = rc.bound_lipschitz;
    if (!opts.lipschitz && !ctx.field->lipschitz()) {
        opts.lipschitz = estimate_lipschitz(*ctx.field, z, 1.0, ctx.cond, 1000, 1e-5, derive_seed(rc.seed, 3));
    }
    const auto rep = bound_check_experiment(*ctx.field, z, tab, opts, ctx.cond);
    report::Csv csv({"trial", "observed", "bound", "ratio", "observed_inf", "bound_inf", "ratio_inf"});
    for (const auto& t : rep.trials) {
        csv.row({std::to_string(t.trial), report::fmt(t.observed), report::fmt(t.bound), report::fmt(t.ratio),
                 report::fmt(t.observed_inf), report::fmt(t.bound_inf), report::fmt(t.ratio_inf)});
    }
    const json summary{{"command", "bound-check"},
                       {"field", ctx.field->describe()},
                       {"tableau", tab.name},
                       {"steps", rc.steps},
                       {"lipschitz", report::number(rep.lipschitz)},
                       {"lambda", report::number(rep.lambda)},
                       {"h", report::number(rep.h)},
                       {"trials", rc.bound_trials},
                       {"violations", rep.violations},
                       {"violations_inf", rep.violations_inf},
                       {"max_ratio", report::number(rep.max_ratio)},
                       {"max_ratio_inf", report::number(rep.max_ratio_inf)}};
    report::write_text(dir / "bound_check.csv", csv.str());
    report::write_json(dir / "bound_check.json", summary);
    return summary;
}

inline json run_export_traj(const RunConfig& rc, const fs::path& dir) {
    detail::RunContext ctx(rc);
    const auto tab = resolve_tableau(rc.tableau).tableau;
    const auto z = make_latent(rc, *ctx.field);
    const auto res = solve(*ctx.field, z, TimeGrid::uniform(rc.steps), rc.export_direction, tab, ctx.cond,
                           SolveOptions{rc.reuse, true, nullptr});
    std::vector<std::string> header{"t"};
    for (std::size_t k = 0; k < z.size(); ++k) {
        header.push_back("x" + std::to_string(k));
    }
    report::Csv csv(header);
    for (const auto& [t, state] : res.trajectory) {
        std::vector<std::string> row{report::fmt(t)};
        for (double v : state.values()) {
            row.push_back(report::fmt(v));
        }
        csv.row(row);
    }
    report::write_text(dir / "trajectory.csv", csv.str());
    return json{{"command", "export-traj"},
                {"tableau", tab.name},
                {"direction", to_string(rc.export_direction)},
                {"points", res.trajectory.size()},
                {"dimension", z.size()}};
}

/// Runs a run command with an already resolved config and writes resolved_config.json.
inline json execute(const std::string& command, const RunConfig& rc, const fs::path& dir) {
    fs::create_directories(dir);
    report::write_json(dir / "resolved_config.json", rc.resolved);
    if (command == "solve") return run_solve(rc, dir);
    if (command == "roundtrip") return run_roundtrip(rc, dir);
    if (command == "convergence") return run_convergence(rc, dir);
    if (command == "nfe-bench") return run_nfe_bench(rc, dir);
    if (command == "edit") return run_edit(rc, dir);
    if (command == "fidelity-bench") return run_fidelity_bench(rc, dir);
    if (command == "respmap") return run_respmap(rc, dir);
    if (command == "bound-check") return run_bound_check(rc, dir);
    if (command == "export-traj") return run_export_traj(rc, dir);
    throw LookupError("unknown command '" + command + "'");
}

/// Structured error report written to stderr on failure.
[[nodiscard]] inline json error_report(const std::exception& e) {
    std::string kind = "Error";
    json violations = json::array();
    if (const auto* cv = dynamic_cast<const ConfigViolations*>(&e)) {
        kind = "ConfigViolations";
        for (const auto& v : cv->violations()) {
            violations.push_back(v);
        }
    } else if (dynamic_cast<const ConfigError*>(&e)) {
        kind = "ConfigError";
    } else if (dynamic_cast<const ParseError*>(&e)) {
        kind = "ParseError";
    } else if (dynamic_cast<const LookupError*>(&e)) {
        kind = "LookupError";
    } else if (dynamic_cast<const PreconditionError*>(&e)) {
        kind = "PreconditionError";
    } else if (dynamic_cast<const ShapeError*>(&e)) {
        kind = "ShapeError";
    } else if (dynamic_cast<const NumericError*>(&e)) {
        kind = "NumericError";
    } else if (dynamic_cast<const CacheMissError*>(&e)) {
        kind = "CacheMissError";
    } else if (dynamic_cast<const ManipulationError*>(&e)) {
        kind = "ManipulationError";
    }
    json err{{"kind", kind}, {"message", e.what()}};
    if (!violations.empty()) {
        err["violations"] = violations;
    }
    return json{{"error", err}};
}

/// Exit status: 0 success, 1 runtime failure or invalid tableau, 2 bad input.
inline int run(const Invocation& inv, std::ostream& out, std::ostream& err) {
    try {
        if (inv.command == "tableau") {
            return run_tableau(inv, out);
        }
        if (inv.command == "model") {
            return run_model(inv, out);
        }
        if (std::find(run_commands().begin(), run_commands().end(), inv.command) == run_commands().end()) {
            throw LookupError("unknown command '" + inv.command + "'");
        }
        if (!inv.args.empty()) {
            throw ConfigError(inv.command + ": unexpected argument '" + inv.args.front() + "'");
        }
        const auto rc = load_run_config(inv);
        const fs::path dir = inv.out ? fs::path(*inv.out) : fs::path("rkflow_out") / inv.command;
        out << execute(inv.command, rc, dir).dump() << "\n";
        return 0;
    } catch (const std::exception& e) {
        err << error_report(e).dump(2) << "\n";
        const bool input_error = dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const ParseError*>(&e) ||
                                 dynamic_cast<const LookupError*>(&e);
        return input_error ? 2 : 1;
    }
}

} // namespace rkflow::cli
