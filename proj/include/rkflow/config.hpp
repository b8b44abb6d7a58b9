#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "rkflow/ddta.hpp"
#include "rkflow/error.hpp"
#include "rkflow/latent.hpp"
#include "rkflow/pipeline.hpp"
#include "rkflow/rng.hpp"
#include "rkflow/solver.hpp"
#include "rkflow/tableau.hpp"
#include "rkflow/toy_mmdit.hpp"
#include "rkflow/velocity.hpp"

namespace rkflow {

inline constexpr int kSchemaVersion = 1;

/// Config validation failure carrying every violation found.
class ConfigViolations : public ConfigError {
public:
    explicit ConfigViolations(std::vector<std::string> violations)
        : ConfigError(summarize(violations)), violations_(std::move(violations)) {}
    [[nodiscard]] const std::vector<std::string>& violations() const noexcept { return violations_; }

private:
    static std::string summarize(const std::vector<std::string>& v) {
        std::string msg = std::to_string(v.size()) + " config violation(s)";
        for (const auto& s : v) {
            msg += "; " + s;
        }
        return msg;
    }
    std::vector<std::string> violations_;
};

/// Every key a run config may contain, with its default.
[[nodiscard]] inline nlohmann::json default_run_config() {
    using nlohmann::json;
    const ToyMMDiTConfig model;
    json methods = json::array();
    auto method = [&](const char* label, const char* tab, bool reuse, std::vector<int> steps) {
        methods.push_back({{"label", label}, {"tableau", tab}, {"reuse", reuse}, {"steps", steps}});
    };
    method("Vanilla RF", "euler", false, {30, 60, 90, 120});
    method("RF-Solver", "rf_solver", false, {15, 30, 60});
    method("FireFlow", "fireflow_midpoint", true, {30, 60, 90, 120});
    method("Ours (r=2)", "heun2", false, {15, 30, 60});
    method("Ours (r=3)", "kutta3", false, {30, 40});
    method("Ours (r=4)", "three_eighths4", false, {30});

    return json{
        {"schema_version", kSchemaVersion},
        {"seed", 0},
        {"field", {{"kind", "toy_mmdit"}, {"c", 1.0}, {"lambda", 1.0}, {"coeffs", {1.0}}, {"mu0", 0.0}, {"sigma0", 1.0}}},
        {"model", model},
        {"tableau", "heun2"},
        {"steps", 30},
        {"reuse", false},
        {"guidance", 1.0},
        {"prompt", {17, 42, 99}},
        {"latent",
         {{"init", "gaussian"}, {"shape", json::array()}, {"mean", 0.0}, {"sd", 1.0}, {"lo", 0.0}, {"hi", 1.0},
          {"value", 1.0}}},
        {"solve", {{"direction", "invert"}}},
        {"convergence",
         {{"tableaus", {"euler", "heun2", "kutta3", "three_eighths4"}},
          {"h_list", {0.1, 0.05, 0.025, 0.0125, 0.00625}},
          {"z0", 1.0}}},
        {"nfe_bench", {{"methods", methods}}},
        {"bound_check", {{"trials", 100}, {"delta_max", 1e-3}, {"lipschitz", nullptr}}},
        {"edit",
         {{"source_prompt", {17, 42, 99}},
          {"target_prompt", {17, 43, 99}},
          {"tableau", "kutta3"},
          {"steps", 8},
          {"d_list", {1}},
          {"ops",
           {{"m_cc", "none"}, {"m_ci", "replace"}, {"m_ic", "replace"}, {"m_ii", "none"}, {"v_c", "none"},
            {"v_i", "mean"}}},
          {"multi_blocks", false},
          {"single_blocks", true},
          {"layers", json::array()},
          {"guidance_invert", 1.0},
          {"guidance_edit", 3.0},
          {"spill_cache", false}}},
        {"fidelity", {{"n_cases", 20}, {"prompt_length", 6}}},
        {"respmap", {{"word_indices", {0, 1, 2}}, {"height", 32}, {"width", 32}, {"steps", 10}}},
        {"export_traj", {{"direction", "invert"}}},
    };
}

/// Objects merge key by key; anything else in `patch` replaces the base value.
[[nodiscard]] inline nlohmann::json merge_config(nlohmann::json base, const nlohmann::json& patch) {
    if (!base.is_object() || !patch.is_object()) {
        return patch;
    }
    for (const auto& [key, value] : patch.items()) {
        if (base.contains(key)) {
            base[key] = merge_config(base[key], value);
        } else {
            base[key] = value;
        }
    }
    return base;
}

/// Applies one dotted-path assignment such as `edit.ops.v_i=replace` or
/// `steps=60`. The value is parsed as JSON, falling back to a plain string.
inline void apply_override(nlohmann::json& cfg, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) {
        throw ConfigError("override '" + assignment + "' is not of the form key=value");
    }
    const std::string path = assignment.substr(0, eq);
    const std::string text = assignment.substr(eq + 1);
    nlohmann::json value = nlohmann::json::parse(text, nullptr, false);
    if (value.is_discarded()) {
        value = text;
    }
    nlohmann::json* node = &cfg;
    std::size_t start = 0;
    while (true) {
        const auto dot = path.find('.', start);
        const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
        if (key.empty()) {
            throw ConfigError("override '" + assignment + "' has an empty path segment");
        }
        if (node->is_array()) {
            std::size_t idx = 0;
            try {
                idx = std::stoul(key);
            } catch (const std::exception&) {
                throw ConfigError("override '" + assignment + "': '" + key + "' is not an array index");
            }
            if (idx >= node->size()) {
                throw ConfigError("override '" + assignment + "': index " + key + " out of range");
            }
            node = &(*node)[idx];
        } else {
            if (!node->is_object() && !node->is_null()) {
                throw ConfigError("override '" + assignment + "': '" + key + "' addresses into a non-object");
            }
            node = &(*node)[key];
        }
        if (dot == std::string::npos) {
            break;
        }
        start = dot + 1;
    }
    *node = std::move(value);
}

namespace detail {

inline const char* json_kind(const nlohmann::json& j) {
    if (j.is_null()) return "null";
    if (j.is_boolean()) return "boolean";
    if (j.is_number_integer()) return "integer";
    if (j.is_number()) return "number";
    if (j.is_string()) return "string";
    if (j.is_array()) return "array";
    return "object";
}

/// Unknown keys and type mismatches against the default tree.
inline void check_schema(const nlohmann::json& cfg, const nlohmann::json& ref, const std::string& path,
                         std::vector<std::string>& out) {
    const std::string where = path.empty() ? "<root>" : path;
    if (ref.is_object()) {
        if (!cfg.is_object()) {
            out.push_back(where + ": expected object, got " + json_kind(cfg));
            return;
        }
        for (const auto& [key, value] : cfg.items()) {
            const std::string sub = path.empty() ? key : path + "." + key;
            if (!ref.contains(key)) {
                out.push_back(sub + ": unknown key");
                continue;
            }
            check_schema(value, ref.at(key), sub, out);
        }
        return;
    }
    if (ref.is_null()) {
        if (!cfg.is_null() && !cfg.is_number()) {
            out.push_back(where + ": expected number or null, got " + json_kind(cfg));
        }
        return;
    }
    const bool ok = (ref.is_boolean() && cfg.is_boolean()) || (ref.is_string() && cfg.is_string()) ||
                    (ref.is_array() && cfg.is_array()) ||
                    (ref.is_number_integer() && cfg.is_number_integer()) ||
                    (ref.is_number_float() && cfg.is_number());
    if (!ok) {
        out.push_back(where + ": expected " + std::string(json_kind(ref)) + ", got " + json_kind(cfg));
    }
}

/// Lenient readers: a wrong type has already been reported by check_schema.
inline double num(const nlohmann::json& j, double fallback = 0.0) { return j.is_number() ? j.get<double>() : fallback; }
inline long long integer(const nlohmann::json& j, long long fallback = 0) {
    return j.is_number_integer() ? j.get<long long>() : fallback;
}
inline bool boolean(const nlohmann::json& j, bool fallback = false) { return j.is_boolean() ? j.get<bool>() : fallback; }
inline std::string str(const nlohmann::json& j) { return j.is_string() ? j.get<std::string>() : std::string{}; }

inline std::vector<int> int_list(const nlohmann::json& j, const std::string& path, std::vector<std::string>& out) {
    std::vector<int> v;
    if (!j.is_array()) {
        return v;
    }
    for (std::size_t i = 0; i < j.size(); ++i) {
        if (!j[i].is_number_integer()) {
            out.push_back(path + "[" + std::to_string(i) + "]: expected integer");
            continue;
        }
        v.push_back(j[i].get<int>());
    }
    return v;
}

inline std::vector<double> num_list(const nlohmann::json& j, const std::string& path, std::vector<std::string>& out) {
    std::vector<double> v;
    if (!j.is_array()) {
        return v;
    }
    for (std::size_t i = 0; i < j.size(); ++i) {
        if (!j[i].is_number()) {
            out.push_back(path + "[" + std::to_string(i) + "]: expected number");
            continue;
        }
        v.push_back(j[i].get<double>());
    }
    return v;
}

inline std::optional<Direction> parse_direction(const std::string& s) {
    if (s == "invert") return Direction::invert;
    if (s == "denoise") return Direction::denoise;
    return std::nullopt;
}

} // namespace detail

struct FieldSpec {
    std::string kind = "toy_mmdit";
    AnalyticParams params;
    [[nodiscard]] bool is_toy() const { return kind == "toy_mmdit"; }
};

struct LatentSpec {
    std::string init = "gaussian";
    std::vector<int> shape; ///< empty = the field's native layout, or 1x1x1 for analytic fields
    double mean = 0.0;
    double sd = 1.0;
    double lo = 0.0;
    double hi = 1.0;
    double value = 1.0;
};

struct NfeMethod {
    std::string label;
    std::string tableau;
    bool reuse = false;
    std::vector<int> steps;
};

/// Typed view of a validated run config.
struct RunConfig {
    nlohmann::json resolved;
    std::uint64_t seed = 0;
    FieldSpec field;
    ToyMMDiTConfig model;
    std::string tableau = "heun2";
    int steps = 30;
    bool reuse = false;
    double guidance = 1.0;
    std::vector<int> prompt;
    LatentSpec latent;
    Direction solve_direction = Direction::invert;
    std::vector<std::string> convergence_tableaus;
    std::vector<double> h_list;
    double convergence_z0 = 1.0;
    std::vector<NfeMethod> nfe_methods;
    int bound_trials = 100;
    double bound_delta_max = 1e-3;
    std::optional<double> bound_lipschitz;
    EditConfig edit;
    bool edit_spill_cache = false;
    int fidelity_cases = 20;
    int fidelity_prompt_length = 6;
    std::vector<int> respmap_words;
    int respmap_height = 32;
    int respmap_width = 32;
    int respmap_steps = 10;
    Direction export_direction = Direction::invert;
};

/// Merges `user` over the defaults, validates it and returns the typed view.
/// Throws ConfigViolations listing every problem found.
[[nodiscard]] inline RunConfig resolve_run_config(const nlohmann::json& user) {
    using detail::boolean;
    using detail::integer;
    using detail::num;
    using detail::str;

    std::vector<std::string> bad;
    const auto defaults = default_run_config();
    if (!user.is_object()) {
        throw ConfigViolations({"<root>: config must be a JSON object"});
    }
    detail::check_schema(user, defaults, "", bad);
    // A section replaced by a scalar leaves nothing to read below.
    if (std::any_of(bad.begin(), bad.end(), [](const std::string& v) {
            return v.find("expected object") != std::string::npos;
        })) {
        throw ConfigViolations(std::move(bad));
    }
    RunConfig rc;
    rc.resolved = merge_config(defaults, user);
    const auto& j = rc.resolved;

    if (integer(j["schema_version"]) != kSchemaVersion) {
        bad.push_back("schema_version: expected " + std::to_string(kSchemaVersion));
    }
    if (!j["seed"].is_number_unsigned() && !(j["seed"].is_number_integer() && j["seed"].get<long long>() >= 0)) {
        bad.push_back("seed: expected a non-negative integer");
    } else {
        rc.seed = j["seed"].get<std::uint64_t>();
    }

    // field
    const auto& f = j["field"];
    rc.field.kind = str(f["kind"]);
    rc.field.params.c = num(f["c"], 1.0);
    rc.field.params.lambda = num(f["lambda"], 1.0);
    rc.field.params.coeffs = detail::num_list(f["coeffs"], "field.coeffs", bad);
    rc.field.params.mu0 = num(f["mu0"]);
    rc.field.params.sigma0 = num(f["sigma0"], 1.0);
    if (!rc.field.is_toy()) {
        try {
            (void)parse_analytic_kind(rc.field.kind);
        } catch (const LookupError&) {
            bad.push_back("field.kind: '" + rc.field.kind +
                          "' is not one of toy_mmdit, constant, linear_scalar, time_poly, logistic, gauss_to_gauss");
        }
    }
    if (rc.field.params.coeffs.empty()) {
        bad.push_back("field.coeffs: needs at least one coefficient");
    }
    if (!(rc.field.params.sigma0 > 0.0)) {
        bad.push_back("field.sigma0: must be positive");
    }

    // model
    const auto& m = j["model"];
    rc.model.d_model = static_cast<int>(integer(m["d_model"], 64));
    rc.model.n_heads = static_cast<int>(integer(m["n_heads"], 4));
    rc.model.l_multi = static_cast<int>(integer(m["l_multi"], 2));
    rc.model.l_single = static_cast<int>(integer(m["l_single"], 4));
    rc.model.n_text = static_cast<int>(integer(m["n_text"], 8));
    rc.model.grid_h = static_cast<int>(integer(m["grid_h"], 8));
    rc.model.grid_w = static_cast<int>(integer(m["grid_w"], 8));
    rc.model.channels = static_cast<int>(integer(m["channels"], 4));
    rc.model.vocab = static_cast<int>(integer(m["vocab"], 256));
    if (m["seed"].is_number_integer() && m["seed"].get<long long>() < 0) {
        bad.push_back("model.seed: expected a non-negative integer");
    } else if (m["seed"].is_number_integer()) {
        rc.model.seed = m["seed"].get<std::uint64_t>();
    }
    for (const auto& v : rc.model.violations()) {
        bad.push_back("model: " + v);
    }

    // solver
    rc.tableau = str(j["tableau"]);
    std::optional<ButcherTableau> tab;
    try {
        const auto loaded = resolve_tableau(rc.tableau);
        if (!loaded.warnings.empty()) {
            bad.push_back("tableau: '" + rc.tableau + "' is invalid (" + loaded.warnings.front().message + ")");
        } else {
            tab = loaded.tableau;
        }
    } catch (const Error& e) {
        bad.push_back(std::string("tableau: ") + e.what());
    }
    rc.steps = static_cast<int>(integer(j["steps"], 30));
    if (rc.steps < 1) {
        bad.push_back("steps: must be >= 1");
    }
    rc.reuse = boolean(j["reuse"]);
    if (rc.reuse && tab && !supports_reuse(*tab)) {
        bad.push_back("reuse: tableau '" + rc.tableau + "' is not a two-stage scheme with b = [0, 1]");
    }
    rc.guidance = num(j["guidance"], 1.0);
    rc.prompt = detail::int_list(j["prompt"], "prompt", bad);

    auto check_prompt = [&](const std::vector<int>& p, const std::string& where) {
        if (p.empty()) {
            bad.push_back(where + ": must not be empty");
            return;
        }
        if (!rc.field.is_toy()) {
            return;
        }
        if (p.size() > static_cast<std::size_t>(rc.model.n_text)) {
            bad.push_back(where + ": " + std::to_string(p.size()) + " tokens exceed n_text = " +
                          std::to_string(rc.model.n_text));
        }
        for (int id : p) {
            if (id < 1 || id >= rc.model.vocab) {
                bad.push_back(where + ": token id " + std::to_string(id) + " outside [1, " +
                              std::to_string(rc.model.vocab) + ")");
            }
        }
    };
    check_prompt(rc.prompt, "prompt");

    // latent
    const auto& l = j["latent"];
    rc.latent.init = str(l["init"]);
    rc.latent.shape = detail::int_list(l["shape"], "latent.shape", bad);
    rc.latent.mean = num(l["mean"]);
    rc.latent.sd = num(l["sd"], 1.0);
    rc.latent.lo = num(l["lo"]);
    rc.latent.hi = num(l["hi"], 1.0);
    rc.latent.value = num(l["value"], 1.0);
    if (rc.latent.init != "gaussian" && rc.latent.init != "uniform" && rc.latent.init != "constant") {
        bad.push_back("latent.init: '" + rc.latent.init + "' is not one of gaussian, uniform, constant");
    }
    if (!rc.latent.shape.empty()) {
        if (rc.latent.shape.size() != 3 ||
            std::any_of(rc.latent.shape.begin(), rc.latent.shape.end(), [](int v) { return v < 1; })) {
            bad.push_back("latent.shape: expected [] or three positive integers [channels, grid_h, grid_w]");
        } else if (rc.field.is_toy()) {
            const auto s = rc.model.latent_shape();
            if (static_cast<std::size_t>(rc.latent.shape[0]) != s.channels ||
                static_cast<std::size_t>(rc.latent.shape[1]) != s.grid_h ||
                static_cast<std::size_t>(rc.latent.shape[2]) != s.grid_w) {
                bad.push_back("latent.shape: toy model expects " + s.to_string());
            }
        }
    }
    if (rc.latent.sd < 0.0) {
        bad.push_back("latent.sd: must be non-negative");
    }
    if (!(rc.latent.lo < rc.latent.hi)) {
        bad.push_back("latent.lo: must be below latent.hi");
    }

    // solve / export_traj
    if (auto d = detail::parse_direction(str(j["solve"]["direction"]))) {
        rc.solve_direction = *d;
    } else {
        bad.push_back("solve.direction: expected invert or denoise");
    }
    if (auto d = detail::parse_direction(str(j["export_traj"]["direction"]))) {
        rc.export_direction = *d;
    } else {
        bad.push_back("export_traj.direction: expected invert or denoise");
    }

    // convergence
    const auto& cv = j["convergence"];
    if (cv["tableaus"].is_array()) {
        for (std::size_t i = 0; i < cv["tableaus"].size(); ++i) {
            const auto& e = cv["tableaus"][i];
            if (!e.is_string() || !registry_contains(e.get<std::string>())) {
                bad.push_back("convergence.tableaus[" + std::to_string(i) + "]: not a registry tableau");
                continue;
            }
            rc.convergence_tableaus.push_back(e.get<std::string>());
        }
    }
    rc.h_list = detail::num_list(cv["h_list"], "convergence.h_list", bad);
    if (rc.h_list.size() < 3) {
        bad.push_back("convergence.h_list: needs at least three step sizes");
    }
    for (std::size_t i = 0; i < rc.h_list.size(); ++i) {
        const double h = rc.h_list[i];
        const double n = std::round(1.0 / h);
        if (!(h > 0.0) || std::abs(1.0 / n - h) > 1e-12) {
            bad.push_back("convergence.h_list[" + std::to_string(i) + "]: must be 1/N for an integer N");
        } else if (i > 0 && std::abs(h - rc.h_list[i - 1] / 2.0) > 1e-12 * h) {
            bad.push_back("convergence.h_list[" + std::to_string(i) + "]: must be half the previous step size");
        }
    }
    rc.convergence_z0 = num(cv["z0"], 1.0);

    // nfe_bench
    const auto& nb = j["nfe_bench"]["methods"];
    if (nb.is_array()) {
        for (std::size_t i = 0; i < nb.size(); ++i) {
            const std::string where = "nfe_bench.methods[" + std::to_string(i) + "]";
            const auto& e = nb[i];
            if (!e.is_object()) {
                bad.push_back(where + ": expected object");
                continue;
            }
            for (const auto& [key, _] : e.items()) {
                if (key != "label" && key != "tableau" && key != "reuse" && key != "steps") {
                    bad.push_back(where + "." + key + ": unknown key");
                }
            }
            NfeMethod nm;
            nm.label = e.contains("label") ? str(e["label"]) : std::string{};
            nm.tableau = e.contains("tableau") ? str(e["tableau"]) : std::string{};
            nm.reuse = e.contains("reuse") && boolean(e["reuse"]);
            if (e.contains("steps")) {
                nm.steps = detail::int_list(e["steps"], where + ".steps", bad);
            }
            if (nm.label.empty()) {
                bad.push_back(where + ".label: required non-empty string");
            }
            if (!registry_contains(nm.tableau)) {
                bad.push_back(where + ".tableau: '" + nm.tableau + "' is not a registry tableau");
            } else if (nm.reuse && !supports_reuse(registry_get(nm.tableau))) {
                bad.push_back(where + ".reuse: tableau '" + nm.tableau + "' does not support slope reuse");
            }
            if (nm.steps.empty() || std::any_of(nm.steps.begin(), nm.steps.end(), [](int s) { return s < 1; })) {
                bad.push_back(where + ".steps: needs one or more positive step counts");
            }
            rc.nfe_methods.push_back(std::move(nm));
        }
    }

    // bound_check
    const auto& bc = j["bound_check"];
    rc.bound_trials = static_cast<int>(integer(bc["trials"], 100));
    rc.bound_delta_max = num(bc["delta_max"], 1e-3);
    if (bc["lipschitz"].is_number()) {
        rc.bound_lipschitz = bc["lipschitz"].get<double>();
        if (*rc.bound_lipschitz < 0.0) {
            bad.push_back("bound_check.lipschitz: must be non-negative");
        }
    }
    if (rc.bound_trials < 1) {
        bad.push_back("bound_check.trials: must be >= 1");
    }
    if (!(rc.bound_delta_max >= 0.0)) {
        bad.push_back("bound_check.delta_max: must be non-negative");
    }

    // edit
    const auto& ed = j["edit"];
    rc.edit.source_prompt = detail::int_list(ed["source_prompt"], "edit.source_prompt", bad);
    rc.edit.target_prompt = detail::int_list(ed["target_prompt"], "edit.target_prompt", bad);
    check_prompt(rc.edit.source_prompt, "edit.source_prompt");
    check_prompt(rc.edit.target_prompt, "edit.target_prompt");
    rc.edit.tableau = str(ed["tableau"]);
    rc.edit.steps = static_cast<int>(integer(ed["steps"], 8));
    rc.edit.guidance_invert = num(ed["guidance_invert"], 1.0);
    rc.edit.guidance_edit = num(ed["guidance_edit"], 3.0);
    rc.edit.seed = rc.seed;
    rc.edit.plan = ManipulationPlan{};
    rc.edit.plan.d_list = detail::int_list(ed["d_list"], "edit.d_list", bad);
    rc.edit.plan.multi_blocks = boolean(ed["multi_blocks"]);
    rc.edit.plan.single_blocks = boolean(ed["single_blocks"], true);
    for (int layer : detail::int_list(ed["layers"], "edit.layers", bad)) {
        rc.edit.plan.layers.insert(layer);
    }
    const auto& ops = ed["ops"];
    for (Region r : kAllRegions) {
        const std::string key = to_string(r);
        if (!ops.is_object() || !ops.contains(key)) {
            continue;
        }
        try {
            rc.edit.plan.set(r, parse_region_op(str(ops[key])));
        } catch (const LookupError& e) {
            bad.push_back("edit.ops." + key + ": " + e.what());
        }
    }
    rc.edit_spill_cache = boolean(ed["spill_cache"]);
    for (const auto& v : rc.edit.violations()) {
        bad.push_back("edit: " + v);
    }
    if (rc.field.is_toy()) {
        for (int layer : rc.edit.plan.layers) {
            const int limit = std::max(rc.model.l_multi, rc.model.l_single);
            if (layer < 0 || layer >= limit) {
                bad.push_back("edit.layers: layer " + std::to_string(layer) + " outside [0, " + std::to_string(limit) +
                              ")");
            }
        }
    }

    // fidelity
    rc.fidelity_cases = static_cast<int>(integer(j["fidelity"]["n_cases"], 20));
    rc.fidelity_prompt_length = static_cast<int>(integer(j["fidelity"]["prompt_length"], 6));
    if (rc.fidelity_cases < 1) {
        bad.push_back("fidelity.n_cases: must be >= 1");
    }
    if (rc.fidelity_prompt_length < 1 || rc.fidelity_prompt_length > rc.model.n_text) {
        bad.push_back("fidelity.prompt_length: must lie in [1, model.n_text]");
    }

    // respmap
    const auto& rm = j["respmap"];
    rc.respmap_words = detail::int_list(rm["word_indices"], "respmap.word_indices", bad);
    rc.respmap_height = static_cast<int>(integer(rm["height"], 32));
    rc.respmap_width = static_cast<int>(integer(rm["width"], 32));
    rc.respmap_steps = static_cast<int>(integer(rm["steps"], 10));
    if (rc.respmap_words.empty()) {
        bad.push_back("respmap.word_indices: needs at least one index");
    }
    for (int g : rc.respmap_words) {
        if (g < 0 || g >= rc.model.n_text) {
            bad.push_back("respmap.word_indices: " + std::to_string(g) + " outside [0, model.n_text)");
        }
    }
    if (rc.respmap_height < 1 || rc.respmap_width < 1) {
        bad.push_back("respmap.height/width: must be >= 1");
    }
    if (rc.respmap_steps < 1) {
        bad.push_back("respmap.steps: must be >= 1");
    }

    if (!bad.empty()) {
        throw ConfigViolations(std::move(bad));
    }
    return rc;
}

[[nodiscard]] inline nlohmann::json load_config_file(const std::string& path) {
    return detail::read_json_file(path);
}

// ---------------------------------------------------------------------------
// Builders

[[nodiscard]] inline std::unique_ptr<VelocityField> make_field(const RunConfig& rc) {
    if (rc.field.is_toy()) {
        return std::make_unique<ToyMMDiT>(rc.model);
    }
    return make_analytic_field(parse_analytic_kind(rc.field.kind), rc.field.params);
}

[[nodiscard]] inline LatentShape latent_shape(const RunConfig& rc, const VelocityField& field) {
    if (!rc.latent.shape.empty()) {
        return LatentShape{static_cast<std::size_t>(rc.latent.shape[0]), static_cast<std::size_t>(rc.latent.shape[1]),
                           static_cast<std::size_t>(rc.latent.shape[2])};
    }
    return field.native_shape().value_or(LatentShape{1, 1, 1});
}

/// Starting latent drawn from the run seed's latent stream.
[[nodiscard]] inline Latent make_latent(const RunConfig& rc, const VelocityField& field) {
    const auto shape = latent_shape(rc, field);
    Rng rng(derive_seed(rc.seed, 1));
    if (rc.latent.init == "uniform") {
        return Latent::uniform(shape, rng, rc.latent.lo, rc.latent.hi);
    }
    if (rc.latent.init == "constant") {
        return Latent(shape, rc.latent.value);
    }
    return Latent::gaussian(shape, rng, rc.latent.mean, rc.latent.sd);
}

} // namespace rkflow
