#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "rkflow/error.hpp"

namespace rkflow {

/// Coefficients (A, b, c) of one explicit Runge-Kutta scheme.
struct ButcherTableau {
    std::string name;
    std::vector<std::vector<double>> a; ///< r x r, row s holds a_{s,1..r}
    std::vector<double> b;
    std::vector<double> c;

    [[nodiscard]] std::size_t stages() const noexcept { return b.size(); }

    friend bool operator==(const ButcherTableau&, const ButcherTableau&) = default;
};

/// One failed tableau invariant. `condition` names the stage or rule.
struct Violation {
    std::string condition;
    double residual = 0.0;
    std::string message;
};

struct ConditionResidual {
    std::string label;
    int order = 0;
    double residual = 0.0;
};

struct OrderReport {
    std::string tableau_name;
    int satisfied_order = 0;
    std::vector<ConditionResidual> condition_residuals;
};

inline constexpr double kConsistencyTolerance = 1e-8;
inline constexpr double kOrderConditionTolerance = 1e-7;

namespace detail {

inline ButcherTableau make_tableau(std::string name, std::vector<std::vector<double>> a, std::vector<double> b,
                                   std::vector<double> c) {
    return ButcherTableau{std::move(name), std::move(a), std::move(b), std::move(c)};
}

struct RegistryEntry {
    ButcherTableau tableau;
    int advertised_order;
};

inline const std::vector<RegistryEntry>& registry() {
    static const std::vector<RegistryEntry> entries = [] {
        std::vector<RegistryEntry> e;
        e.push_back({make_tableau("euler", {{0.0}}, {1.0}, {0.0}), 1});
        // Advertised as second order; its b vector fails sum(b c) = 1/2.
        e.push_back({make_tableau("rf_solver", {{0.0, 0.0}, {1.0 / 2, 0.0}}, {3.0 / 4, 1.0 / 4}, {0.0, 1.0 / 2}), 2});
        e.push_back({make_tableau("fireflow_midpoint", {{0.0, 0.0}, {1.0 / 2, 0.0}}, {0.0, 1.0}, {0.0, 1.0 / 2}), 2});
        e.push_back({make_tableau("heun2", {{0.0, 0.0}, {1.0, 0.0}}, {1.0 / 2, 1.0 / 2}, {0.0, 1.0}), 2});
        e.push_back({make_tableau("midpoint2", {{0.0, 0.0}, {1.0 / 2, 0.0}}, {0.0, 1.0}, {0.0, 1.0 / 2}), 2});
        e.push_back(
            {make_tableau("ralston2", {{0.0, 0.0}, {2.0 / 3, 0.0}}, {1.0 / 4, 3.0 / 4}, {0.0, 2.0 / 3}), 2});
        e.push_back({make_tableau("kutta3", {{0.0, 0.0, 0.0}, {1.0 / 2, 0.0, 0.0}, {-1.0, 2.0, 0.0}},
                                  {1.0 / 6, 2.0 / 3, 1.0 / 6}, {0.0, 1.0 / 2, 1.0}),
                     3});
        e.push_back({make_tableau("heun3", {{0.0, 0.0, 0.0}, {1.0 / 3, 0.0, 0.0}, {0.0, 2.0 / 3, 0.0}},
                                  {1.0 / 4, 0.0, 3.0 / 4}, {0.0, 1.0 / 3, 2.0 / 3}),
                     3});
        e.push_back({make_tableau("ralston3", {{0.0, 0.0, 0.0}, {1.0 / 2, 0.0, 0.0}, {0.0, 3.0 / 4, 0.0}},
                                  {2.0 / 9, 1.0 / 3, 4.0 / 9}, {0.0, 1.0 / 2, 3.0 / 4}),
                     3});
        e.push_back({make_tableau("houwen3", {{0.0, 0.0, 0.0}, {8.0 / 15, 0.0, 0.0}, {1.0 / 4, 5.0 / 12, 0.0}},
                                  {1.0 / 4, 0.0, 3.0 / 4}, {0.0, 8.0 / 15, 2.0 / 3}),
                     3});
        e.push_back({make_tableau("ssprk3", {{0.0, 0.0, 0.0}, {1.0, 0.0, 0.0}, {1.0 / 4, 1.0 / 4, 0.0}},
                                  {1.0 / 6, 1.0 / 6, 2.0 / 3}, {0.0, 1.0, 1.0 / 2}),
                     3});
        e.push_back({make_tableau("classic4",
                                  {{0.0, 0.0, 0.0, 0.0},
                                   {1.0 / 2, 0.0, 0.0, 0.0},
                                   {0.0, 1.0 / 2, 0.0, 0.0},
                                   {0.0, 0.0, 1.0, 0.0}},
                                  {1.0 / 6, 1.0 / 3, 1.0 / 3, 1.0 / 6}, {0.0, 1.0 / 2, 1.0 / 2, 1.0}),
                     4});
        e.push_back({make_tableau("three_eighths4",
                                  {{0.0, 0.0, 0.0, 0.0},
                                   {1.0 / 3, 0.0, 0.0, 0.0},
                                   {-1.0 / 3, 1.0, 0.0, 0.0},
                                   {1.0, -1.0, 1.0, 0.0}},
                                  {1.0 / 8, 3.0 / 8, 3.0 / 8, 1.0 / 8}, {0.0, 1.0 / 3, 2.0 / 3, 1.0}),
                     4});
        // Printed to eight decimals, so order conditions hold only to ~1e-8.
        e.push_back({make_tableau("ralston4",
                                  {{0.0, 0.0, 0.0, 0.0},
                                   {0.4, 0.0, 0.0, 0.0},
                                   {0.29697761, 0.15875964, 0.0, 0.0},
                                   {0.21810040, -3.05096516, 3.83286476, 0.0}},
                                  {0.17476028, -0.55148066, 1.20553560, 0.17118478},
                                  {0.0, 0.4, 0.45573725, 1.0}),
                     4});
        return e;
    }();
    return entries;
}

inline std::string join_names() {
    std::string out;
    for (const auto& entry : registry()) {
        if (!out.empty()) {
            out += ", ";
        }
        out += entry.tableau.name;
    }
    return out;
}

} // namespace detail

[[nodiscard]] inline std::vector<std::string> registry_names() {
    std::vector<std::string> names;
    for (const auto& entry : detail::registry()) {
        names.push_back(entry.tableau.name);
    }
    return names;
}

[[nodiscard]] inline bool registry_contains(std::string_view name) {
    const auto& reg = detail::registry();
    return std::any_of(reg.begin(), reg.end(), [&](const auto& e) { return e.tableau.name == name; });
}

[[nodiscard]] inline ButcherTableau registry_get(std::string_view name) {
    for (const auto& entry : detail::registry()) {
        if (entry.tableau.name == name) {
            return entry.tableau;
        }
    }
    throw LookupError("unknown tableau '" + std::string(name) + "'; valid names: " + detail::join_names());
}

/// The order under which the scheme is published (not what classify_order finds).
[[nodiscard]] inline int advertised_order(std::string_view name) {
    for (const auto& entry : detail::registry()) {
        if (entry.tableau.name == name) {
            return entry.advertised_order;
        }
    }
    throw LookupError("unknown tableau '" + std::string(name) + "'; valid names: " + detail::join_names());
}

/// Checks the explicit-scheme invariants. Empty result means the tableau is valid.
[[nodiscard]] inline std::vector<Violation> validate_tableau(const ButcherTableau& t) {
    std::vector<Violation> out;
    const std::size_t r = t.b.size();
    if (r == 0) {
        out.push_back({"stages", 0.0, "tableau has no stages"});
        return out;
    }
    if (t.c.size() != r) {
        out.push_back({"dimension(c)", 0.0,
                       "c has " + std::to_string(t.c.size()) + " entries, expected " + std::to_string(r)});
    }
    bool rows_ok = t.a.size() == r;
    if (!rows_ok) {
        out.push_back({"dimension(a)", 0.0,
                       "a has " + std::to_string(t.a.size()) + " rows, expected " + std::to_string(r)});
    }
    for (std::size_t s = 0; s < t.a.size(); ++s) {
        if (t.a[s].size() != r) {
            rows_ok = false;
            out.push_back({"dimension(a row " + std::to_string(s + 1) + ")", 0.0,
                           "row has " + std::to_string(t.a[s].size()) + " entries, expected " + std::to_string(r)});
        }
    }
    if (!rows_ok || t.c.size() != r) {
        return out;
    }

    for (std::size_t s = 0; s < r; ++s) {
        for (std::size_t j = s; j < r; ++j) {
            if (t.a[s][j] != 0.0) {
                out.push_back({"explicit(a[" + std::to_string(s + 1) + "][" + std::to_string(j + 1) + "])",
                               std::abs(t.a[s][j]), "entry on or above the diagonal must be zero"});
            }
        }
    }

    double bsum = 0.0;
    for (double bj : t.b) {
        bsum += bj;
    }
    if (std::abs(bsum - 1.0) > kConsistencyTolerance) {
        out.push_back({"weight-sum", std::abs(bsum - 1.0), "sum of b is " + std::to_string(bsum) + ", expected 1"});
    }

    for (std::size_t s = 0; s < r; ++s) {
        double row = 0.0;
        for (std::size_t j = 0; j < r; ++j) {
            row += t.a[s][j];
        }
        const double residual = std::abs(row - t.c[s]);
        if (residual > kConsistencyTolerance) {
            out.push_back({"row-sum(stage " + std::to_string(s + 1) + ")", residual,
                           "sum of a row is " + std::to_string(row) + " but c = " + std::to_string(t.c[s])});
        }
    }

    if (t.c[0] != 0.0) {
        out.push_back({"c1", std::abs(t.c[0]), "first node must be zero"});
    }
    return out;
}

/// Evaluates the rooted-tree order conditions up to order 4.
[[nodiscard]] inline OrderReport classify_order(const ButcherTableau& t) {
    const auto violations = validate_tableau(t);
    if (!violations.empty()) {
        throw PreconditionError("classify_order: tableau '" + t.name + "' is invalid (" + violations.front().condition +
                                ": " + violations.front().message + ")");
    }
    const std::size_t r = t.stages();
    const auto& a = t.a;
    const auto& b = t.b;
    const auto& c = t.c;

    auto sum1 = [&](auto&& f) {
        double acc = 0.0;
        for (std::size_t j = 0; j < r; ++j) {
            acc += f(j);
        }
        return acc;
    };
    // (A c)_s and (A c^2)_s, reused by several conditions.
    std::vector<double> ac(r, 0.0);
    std::vector<double> ac2(r, 0.0);
    for (std::size_t s = 0; s < r; ++s) {
        for (std::size_t j = 0; j < r; ++j) {
            ac[s] += a[s][j] * c[j];
            ac2[s] += a[s][j] * c[j] * c[j];
        }
    }
    std::vector<double> aac(r, 0.0);
    for (std::size_t s = 0; s < r; ++s) {
        for (std::size_t j = 0; j < r; ++j) {
            aac[s] += a[s][j] * ac[j];
        }
    }

    OrderReport report;
    report.tableau_name = t.name;
    auto add = [&](std::string label, int order, double value, double target) {
        report.condition_residuals.push_back({std::move(label), order, std::abs(value - target)});
    };
    add("sum b = 1", 1, sum1([&](std::size_t j) { return b[j]; }), 1.0);
    add("sum b c = 1/2", 2, sum1([&](std::size_t j) { return b[j] * c[j]; }), 1.0 / 2);
    add("sum b c^2 = 1/3", 3, sum1([&](std::size_t j) { return b[j] * c[j] * c[j]; }), 1.0 / 3);
    add("sum b A c = 1/6", 3, sum1([&](std::size_t s) { return b[s] * ac[s]; }), 1.0 / 6);
    add("sum b c^3 = 1/4", 4, sum1([&](std::size_t j) { return b[j] * c[j] * c[j] * c[j]; }), 1.0 / 4);
    add("sum b c A c = 1/8", 4, sum1([&](std::size_t s) { return b[s] * c[s] * ac[s]; }), 1.0 / 8);
    add("sum b A c^2 = 1/12", 4, sum1([&](std::size_t s) { return b[s] * ac2[s]; }), 1.0 / 12);
    add("sum b A A c = 1/24", 4, sum1([&](std::size_t s) { return b[s] * aac[s]; }), 1.0 / 24);

    int satisfied = 0;
    for (int p = 1; p <= 4; ++p) {
        const bool all_hold = std::all_of(report.condition_residuals.begin(), report.condition_residuals.end(),
                                          [&](const ConditionResidual& cr) {
                                              return cr.order != p || cr.residual < kOrderConditionTolerance;
                                          });
        if (!all_hold) {
            break;
        }
        satisfied = p;
    }
    report.satisfied_order = satisfied;
    return report;
}

// ---------------------------------------------------------------------------
// JSON file format: {"name": str, "r": int, "a": [[...], ...], "b": [...], "c": [...]}

struct LoadedTableau {
    ButcherTableau tableau;
    std::vector<Violation> warnings;
};

[[nodiscard]] inline nlohmann::json tableau_to_json(const ButcherTableau& t) {
    return nlohmann::json{{"name", t.name}, {"r", t.stages()}, {"a", t.a}, {"b", t.b}, {"c", t.c}};
}

namespace detail {

inline std::vector<double> read_number_array(const nlohmann::json& j, const std::string& field,
                                             const std::string& where) {
    if (!j.is_array()) {
        throw ParseError(where + ": field '" + field + "' must be an array of numbers");
    }
    std::vector<double> out;
    for (std::size_t i = 0; i < j.size(); ++i) {
        if (!j[i].is_number()) {
            throw ParseError(where + ": field '" + field + "' entry " + std::to_string(i) + " is not a number");
        }
        out.push_back(j[i].get<double>());
    }
    return out;
}

} // namespace detail

/// Builds a tableau from its JSON form. `where` prefixes diagnostics.
/// Accepts `a` either as r nested rows or as a flat row-major list of r*r numbers.
[[nodiscard]] inline ButcherTableau tableau_from_json(const nlohmann::json& j, const std::string& where = "tableau") {
    if (!j.is_object()) {
        throw ParseError(where + ": expected a JSON object");
    }
    for (const char* key : {"name", "r", "a", "b", "c"}) {
        if (!j.contains(key)) {
            throw ParseError(where + ": missing field '" + std::string(key) + "'");
        }
    }
    for (const auto& [key, _] : j.items()) {
        if (key != "name" && key != "r" && key != "a" && key != "b" && key != "c") {
            throw ParseError(where + ": unknown field '" + key + "'");
        }
    }
    if (!j["name"].is_string()) {
        throw ParseError(where + ": field 'name' must be a string");
    }
    if (!j["r"].is_number_integer() || j["r"].get<long long>() < 1) {
        throw ParseError(where + ": field 'r' must be an integer >= 1");
    }
    const auto r = static_cast<std::size_t>(j["r"].get<long long>());

    ButcherTableau t;
    t.name = j["name"].get<std::string>();
    t.b = detail::read_number_array(j["b"], "b", where);
    t.c = detail::read_number_array(j["c"], "c", where);
    if (t.b.size() != r) {
        throw ParseError(where + ": dimension mismatch: field 'b' has " + std::to_string(t.b.size()) +
                         " weights but r = " + std::to_string(r));
    }
    if (t.c.size() != r) {
        throw ParseError(where + ": dimension mismatch: field 'c' has " + std::to_string(t.c.size()) +
                         " nodes but r = " + std::to_string(r));
    }

    const auto& ja = j["a"];
    if (!ja.is_array()) {
        throw ParseError(where + ": field 'a' must be an array");
    }
    const bool nested = !ja.empty() && ja[0].is_array();
    if (nested) {
        if (ja.size() != r) {
            throw ParseError(where + ": dimension mismatch: field 'a' has " + std::to_string(ja.size()) +
                             " rows but r = " + std::to_string(r));
        }
        for (std::size_t s = 0; s < r; ++s) {
            auto row = detail::read_number_array(ja[s], "a[" + std::to_string(s) + "]", where);
            if (row.size() != r) {
                throw ParseError(where + ": dimension mismatch: field 'a' row " + std::to_string(s) + " has " +
                                 std::to_string(row.size()) + " entries but r = " + std::to_string(r));
            }
            t.a.push_back(std::move(row));
        }
    } else {
        const auto flat = detail::read_number_array(ja, "a", where);
        if (flat.size() != r * r) {
            throw ParseError(where + ": dimension mismatch: flat field 'a' has " + std::to_string(flat.size()) +
                             " entries but r*r = " + std::to_string(r * r));
        }
        for (std::size_t s = 0; s < r; ++s) {
            t.a.emplace_back(flat.begin() + static_cast<std::ptrdiff_t>(s * r),
                             flat.begin() + static_cast<std::ptrdiff_t>((s + 1) * r));
        }
    }
    return t;
}

namespace detail {

/// Parses a JSON document; syntax errors are reported as where:line:col.
inline nlohmann::json parse_json_text(const std::string& text, const std::string& where) {
    try {
        return nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        std::size_t line = 1;
        std::size_t col = 1;
        const std::size_t limit = std::min(e.byte == 0 ? 0 : e.byte - 1, text.size());
        for (std::size_t i = 0; i < limit; ++i) {
            if (text[i] == '\n') {
                ++line;
                col = 1;
            } else {
                ++col;
            }
        }
        throw ParseError(where + ":" + std::to_string(line) + ":" + std::to_string(col) + ": " + e.what());
    }
}

inline nlohmann::json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw ParseError(path + ": cannot open file");
    }
    std::stringstream buffer;
    buffer << in.rdbuf();
    return parse_json_text(buffer.str(), path);
}

} // namespace detail

[[nodiscard]] inline LoadedTableau load_tableau(const std::string& path) {
    const auto j = detail::read_json_file(path);
    LoadedTableau loaded{tableau_from_json(j, path), {}};
    loaded.warnings = validate_tableau(loaded.tableau);
    return loaded;
}

inline void save_tableau(const ButcherTableau& t, const std::string& path) {
    std::ofstream out(path);
    if (!out) {
        throw Error(path + ": cannot open file for writing");
    }
    out << tableau_to_json(t).dump(2) << '\n';
}

/// Registry name or path to a tableau file. Paths are recognised by a '/' or a .json suffix.
[[nodiscard]] inline LoadedTableau resolve_tableau(const std::string& name_or_path) {
    const bool looks_like_path = name_or_path.find('/') != std::string::npos ||
                                 (name_or_path.size() > 5 && name_or_path.ends_with(".json"));
    if (looks_like_path) {
        return load_tableau(name_or_path);
    }
    return LoadedTableau{registry_get(name_or_path), {}};
}

} // namespace rkflow
