#include <gtest/gtest.h>

#include <map>

#include "common.hpp"

using namespace rkflow;

namespace {

const std::string kData = RKFLOW_TEST_DATA;

bool has_condition(const std::vector<Violation>& v, const std::string& name) {
    for (const auto& x : v) {
        if (x.condition == name) return true;
    }
    return false;
}

} // namespace

TEST(Registry, HasFourteenEntries) {
    EXPECT_EQ(registry_names().size(), 14u);
}

TEST(Registry, Heun2Coefficients) {
    const auto t = registry_get("heun2");
    EXPECT_EQ(t.a, (std::vector<std::vector<double>>{{0, 0}, {1, 0}}));
    EXPECT_EQ(t.b, (std::vector<double>{0.5, 0.5}));
    EXPECT_EQ(t.c, (std::vector<double>{0, 1}));
}

TEST(Registry, ThreeEighthsCoefficients) {
    const auto t = registry_get("three_eighths4");
    EXPECT_EQ(t.b, (std::vector<double>{1.0 / 8, 3.0 / 8, 3.0 / 8, 1.0 / 8}));
    EXPECT_EQ(t.c, (std::vector<double>{0, 1.0 / 3, 2.0 / 3, 1}));
}

TEST(Registry, RfSolverCoefficients) {
    const auto t = registry_get("rf_solver");
    EXPECT_EQ(t.a, (std::vector<std::vector<double>>{{0, 0}, {0.5, 0}}));
    EXPECT_EQ(t.b, (std::vector<double>{0.75, 0.25}));
    EXPECT_EQ(t.c, (std::vector<double>{0, 0.5}));
}

TEST(Registry, EulerIsOneStage) {
    const auto t = registry_get("euler");
    EXPECT_EQ(t.stages(), 1u);
    EXPECT_EQ(t.b, std::vector<double>{1.0});
    EXPECT_EQ(t.c, std::vector<double>{0.0});
}

TEST(Registry, UnknownNameListsValidNames) {
    try {
        (void)registry_get("rk45");
        FAIL() << "expected LookupError";
    } catch (const LookupError& e) {
        EXPECT_NE(std::string(e.what()).find("kutta3"), std::string::npos);
    }
}

TEST(Validate, EveryRegistryEntryIsValid) {
    for (const auto& name : registry_names()) {
        EXPECT_TRUE(validate_tableau(registry_get(name)).empty()) << name;
    }
}

TEST(Validate, WeightSumViolation) {
    ButcherTableau t{"bad", {{0, 0}, {1, 0}}, {0.6, 0.6}, {0, 1}};
    const auto v = validate_tableau(t);
    ASSERT_EQ(v.size(), 1u);
    EXPECT_EQ(v[0].condition, "weight-sum");
    EXPECT_NEAR(v[0].residual, 0.2, 1e-15);
}

TEST(Validate, RowSumAndExplicitness) {
    ButcherTableau t{"bad", {{0, 0.1}, {0.5, 0}}, {0.5, 0.5}, {0, 1}};
    const auto v = validate_tableau(t);
    EXPECT_TRUE(has_condition(v, "explicit(a[1][2])"));
    EXPECT_TRUE(has_condition(v, "row-sum(stage 1)"));
    EXPECT_TRUE(has_condition(v, "row-sum(stage 2)"));
}

TEST(Validate, Ralston4RowSumsWithinPrintedPrecision) {
    const auto t = registry_get("ralston4");
    EXPECT_TRUE(validate_tableau(t).empty());
    EXPECT_LT(std::abs(t.a[2][0] + t.a[2][1] - t.c[2]), 1e-7);
}

TEST(Validate, DimensionMismatch) {
    ButcherTableau t{"bad", {{0, 0}, {1, 0}}, {0.5, 0.5}, {0}};
    EXPECT_TRUE(has_condition(validate_tableau(t), "dimension(c)"));
}

TEST(ClassifyOrder, AllRegistryEntries) {
    const std::map<std::string, int> expected{
        {"euler", 1},    {"rf_solver", 1},  {"fireflow_midpoint", 2}, {"heun2", 2},          {"midpoint2", 2},
        {"ralston2", 2}, {"kutta3", 3},     {"heun3", 3},             {"ralston3", 3},       {"houwen3", 3},
        {"ssprk3", 3},   {"classic4", 4},   {"three_eighths4", 4},    {"ralston4", 4}};
    for (const auto& [name, order] : expected) {
        EXPECT_EQ(classify_order(registry_get(name)).satisfied_order, order) << name;
    }
}

TEST(ClassifyOrder, AdvertisedOrderMatchesExceptRfSolver) {
    for (const auto& name : registry_names()) {
        const int satisfied = classify_order(registry_get(name)).satisfied_order;
        if (name == "rf_solver") {
            EXPECT_EQ(advertised_order(name), 2);
            EXPECT_EQ(satisfied, 1);
        } else {
            EXPECT_EQ(satisfied, advertised_order(name)) << name;
        }
    }
}

// Residuals frozen from an exact rational evaluation of the order conditions.
TEST(ClassifyOrder, RfSolverResiduals) {
    const auto rep = classify_order(registry_get("rf_solver"));
    ASSERT_EQ(rep.condition_residuals.size(), 8u);
    const double expected[8] = {0.0, 3.0 / 8, 13.0 / 48, 1.0 / 6, 7.0 / 32, 1.0 / 8, 1.0 / 12, 1.0 / 24};
    for (int k = 0; k < 8; ++k) {
        EXPECT_NEAR(rep.condition_residuals[static_cast<std::size_t>(k)].residual, expected[k], 1e-15) << k;
    }
}

TEST(ClassifyOrder, Heun3FourthOrderResiduals) {
    const auto rep = classify_order(registry_get("heun3"));
    const double expected[4] = {1.0 / 36, 1.0 / 72, 1.0 / 36, 1.0 / 24};
    for (int k = 0; k < 4; ++k) {
        EXPECT_NEAR(rep.condition_residuals[static_cast<std::size_t>(4 + k)].residual, expected[k], 1e-15);
    }
}

TEST(ClassifyOrder, Ralston4ResidualsBelowTolerance) {
    for (const auto& c : classify_order(registry_get("ralston4")).condition_residuals) {
        EXPECT_LT(c.residual, 1e-7) << c.label;
    }
}

TEST(ClassifyOrder, InvalidTableauThrows) {
    ButcherTableau t{"bad", {{0, 0}, {1, 0}}, {0.6, 0.6}, {0, 1}};
    EXPECT_THROW((void)classify_order(t), PreconditionError);
}

TEST(TableauFile, RoundTripIsExact) {
    const auto dir = test::scratch_dir("tableau_roundtrip");
    for (const auto& name : registry_names()) {
        const auto path = (dir / (name + ".json")).string();
        save_tableau(registry_get(name), path);
        const auto loaded = load_tableau(path);
        EXPECT_EQ(loaded.tableau, registry_get(name)) << name;
        EXPECT_TRUE(loaded.warnings.empty());
    }
}

TEST(TableauFile, FlatMatrixAccepted) {
    const auto j = nlohmann::json::parse(R"({"name": "heun2", "r": 2, "a": [0, 0, 1, 0], "b": [0.5, 0.5], "c": [0, 1]})");
    EXPECT_EQ(tableau_from_json(j), registry_get("heun2"));
}

TEST(TableauFile, WeightCountMismatchIsParseError) {
    try {
        (void)load_tableau(kData + "/bad_weights.json");
        FAIL() << "expected ParseError";
    } catch (const ParseError& e) {
        EXPECT_NE(std::string(e.what()).find("dimension mismatch"), std::string::npos);
        EXPECT_NE(std::string(e.what()).find("'b'"), std::string::npos);
    }
}

TEST(TableauFile, SyntaxErrorCarriesLineAndColumn) {
    try {
        (void)load_tableau(kData + "/syntax_error.json");
        FAIL() << "expected ParseError";
    } catch (const ParseError& e) {
        EXPECT_NE(std::string(e.what()).find("syntax_error.json:5:"), std::string::npos) << e.what();
    }
}

TEST(TableauFile, UnknownFieldRejected) {
    const auto j = nlohmann::json::parse(R"({"name": "x", "r": 1, "a": [[0]], "b": [1], "c": [0], "order": 1})");
    EXPECT_THROW((void)tableau_from_json(j), ParseError);
}

TEST(TableauFile, Ralston4DecimalsClassifyAsFourthOrder) {
    const auto loaded = load_tableau(kData + "/ralston4.json");
    EXPECT_TRUE(loaded.warnings.empty());
    EXPECT_EQ(classify_order(loaded.tableau).satisfied_order, 4);
}

TEST(TableauFile, InvalidCoefficientsLoadWithWarnings) {
    const auto dir = test::scratch_dir("tableau_warn");
    const auto path = (dir / "w.json").string();
    save_tableau(ButcherTableau{"w", {{0, 0}, {1, 0}}, {0.6, 0.6}, {0, 1}}, path);
    const auto loaded = load_tableau(path);
    ASSERT_EQ(loaded.warnings.size(), 1u);
    EXPECT_EQ(loaded.warnings[0].condition, "weight-sum");
}

TEST(TableauFile, ResolveByNameOrPath) {
    EXPECT_EQ(resolve_tableau("kutta3").tableau, registry_get("kutta3"));
    EXPECT_EQ(resolve_tableau(kData + "/ralston4.json").tableau.name, "ralston4_file");
}
