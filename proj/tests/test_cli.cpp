#include <gtest/gtest.h>

#include <cstdlib>
#include <map>
#include <sys/wait.h>

#include "common.hpp"

using namespace rkflow;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const std::string kData = RKFLOW_TEST_DATA;

/// Overrides that shrink the toy model so whole commands run in milliseconds.
const std::vector<std::string> kSmallToy{
    "model.d_model=32", "model.n_heads=2", "model.l_multi=1", "model.l_single=2", "model.n_text=4",
    "model.grid_h=4",   "model.grid_w=4",  "model.channels=2", "model.vocab=64",  "prompt=[5,6,7]",
    "edit.source_prompt=[5,6,7]", "edit.target_prompt=[5,9,7]", "edit.steps=3",  "fidelity.n_cases=2",
    "fidelity.prompt_length=3",   "respmap.steps=2",            "respmap.height=8", "respmap.width=8",
    "steps=4"};

struct Outcome {
    int code = 0;
    std::string out;
    std::string err;
};

Outcome run_cli(cli::Invocation inv) {
    std::ostringstream out;
    std::ostringstream err;
    const int code = cli::run(inv, out, err);
    return {code, out.str(), err.str()};
}

cli::Invocation invocation(const std::string& command, std::vector<std::string> overrides, const fs::path& out) {
    cli::Invocation inv;
    inv.command = command;
    inv.overrides = std::move(overrides);
    inv.out = out.string();
    return inv;
}

std::map<std::string, std::string> directory_bytes(const fs::path& dir) {
    std::map<std::string, std::string> files;
    for (const auto& e : fs::directory_iterator(dir)) {
        files[e.path().filename().string()] = test::slurp(e.path());
    }
    return files;
}

/// Small, fast override set per run command.
std::vector<std::string> quick_overrides(const std::string& command) {
    if (command == "convergence") {
        return {"field.kind=linear_scalar", "field.lambda=-1", "convergence.h_list=[0.25,0.125,0.0625]"};
    }
    if (command == "bound-check") {
        return {"field.kind=linear_scalar", "field.lambda=-1", "bound_check.trials=5", "steps=10"};
    }
    if (command == "nfe-bench") {
        return {"field.kind=linear_scalar",
                R"(nfe_bench.methods=[{"label":"Vanilla RF","tableau":"euler","reuse":false,"steps":[30]},)"
                R"({"label":"FireFlow","tableau":"fireflow_midpoint","reuse":true,"steps":[30]}])"};
    }
    return kSmallToy;
}

int shell_status(const std::string& cmd) {
    const int raw = std::system(cmd.c_str());
    return WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
}

} // namespace

TEST(Overrides, DottedPathsAndJsonValues) {
    json cfg = json::object();
    apply_override(cfg, "steps=60");
    apply_override(cfg, "edit.ops.v_i=replace");
    apply_override(cfg, "prompt=[1,2]");
    apply_override(cfg, "field.kind=linear_scalar");
    EXPECT_EQ(cfg["steps"], 60);
    EXPECT_EQ(cfg["edit"]["ops"]["v_i"], "replace");
    EXPECT_EQ(cfg["prompt"], json::array({1, 2}));
    const auto rc = resolve_run_config(cfg);
    EXPECT_EQ(rc.steps, 60);
    EXPECT_EQ(rc.edit.plan.op(Region::v_i), RegionOp::replace);
    EXPECT_EQ(rc.field.kind, "linear_scalar");
}

TEST(Overrides, ArrayIndexAndErrors) {
    json cfg = default_run_config();
    apply_override(cfg, "edit.d_list.0=3");
    EXPECT_EQ(cfg["edit"]["d_list"][0], 3);
    EXPECT_THROW(apply_override(cfg, "steps"), ConfigError);
    EXPECT_THROW(apply_override(cfg, "=3"), ConfigError);
    EXPECT_THROW(apply_override(cfg, "edit.d_list.7=3"), ConfigError);
    EXPECT_THROW(apply_override(cfg, "steps.x=3"), ConfigError);
    EXPECT_THROW(apply_override(cfg, "a..b=3"), ConfigError);
}

TEST(Config, DefaultsResolve) {
    const auto rc = resolve_run_config(json::object());
    EXPECT_EQ(rc.tableau, "heun2");
    EXPECT_EQ(rc.steps, 30);
    EXPECT_EQ(rc.edit.tableau, "kutta3");
    EXPECT_EQ(rc.resolved, default_run_config());
}

TEST(Config, UnknownKeyRejected) {
    try {
        (void)resolve_run_config(json{{"stepz", 3}});
        FAIL() << "expected ConfigViolations";
    } catch (const ConfigViolations& e) {
        ASSERT_EQ(e.violations().size(), 1u);
        EXPECT_EQ(e.violations()[0], "stepz: unknown key");
    }
}

TEST(Config, EveryViolationListed) {
    const json bad{{"steps", 0},
                   {"tableau", "rk45"},
                   {"latent", {{"init", "bogus"}}},
                   {"reuse", "yes"},
                   {"edit", {{"d_list", {0}}}}};
    try {
        (void)resolve_run_config(bad);
        FAIL() << "expected ConfigViolations";
    } catch (const ConfigViolations& e) {
        const auto& v = e.violations();
        auto has = [&](const std::string& prefix) {
            return std::any_of(v.begin(), v.end(), [&](const std::string& s) { return s.rfind(prefix, 0) == 0; });
        };
        EXPECT_TRUE(has("steps:"));
        EXPECT_TRUE(has("tableau:"));
        EXPECT_TRUE(has("latent.init:"));
        EXPECT_TRUE(has("reuse:"));
        EXPECT_TRUE(has("edit"));
        EXPECT_GE(v.size(), 5u);
    }
}

TEST(Config, ReuseNeedsCompatibleTableau) {
    EXPECT_THROW((void)resolve_run_config(json{{"reuse", true}}), ConfigViolations);
    EXPECT_NO_THROW((void)resolve_run_config(json{{"reuse", true}, {"tableau", "fireflow_midpoint"}}));
}

TEST(Config, PromptCheckedAgainstModel) {
    EXPECT_THROW((void)resolve_run_config(json{{"prompt", {0, 3}}}), ConfigViolations);
    EXPECT_THROW((void)resolve_run_config(json{{"prompt", {1, 2, 3, 4, 5, 6, 7, 8, 9}}}), ConfigViolations);
}

TEST(Roundtrip, ConstantFieldCsvRow) {
    const auto dir = test::scratch_dir("cli_constant");
    const auto res = run_cli(invocation("roundtrip", {"field.kind=constant", "field.c=2", "latent.shape=[1,4,4]"}, dir));
    ASSERT_EQ(res.code, 0) << res.err;
    const auto csv = test::slurp(dir / "roundtrip.csv");
    const auto line = csv.substr(csv.find('\n') + 1);
    std::vector<std::string> cells;
    std::stringstream ss(line);
    for (std::string c; std::getline(ss, c, ',');) cells.push_back(c);
    ASSERT_GE(cells.size(), 5u);
    EXPECT_EQ(cells[0], "constant");
    EXPECT_LE(std::stod(cells[4]), 1e-12);
    EXPECT_TRUE(fs::exists(dir / "resolved_config.json"));
}

TEST(NfeBench, VanillaThirtyIsSixty) {
    const auto dir = test::scratch_dir("cli_nfe");
    const auto res = run_cli(invocation("nfe-bench", quick_overrides("nfe-bench"), dir));
    ASSERT_EQ(res.code, 0) << res.err;
    const auto j = json::parse(test::slurp(dir / "nfe_bench.json"));
    ASSERT_EQ(j["rows"].size(), 2u);
    EXPECT_EQ(j["rows"][0]["method"], "Vanilla RF");
    EXPECT_EQ(j["rows"][0]["nfes"], 60);
    EXPECT_EQ(j["rows"][1]["nfes"], 62);
    EXPECT_NE(test::slurp(dir / "nfe_bench.csv").find("Vanilla RF,euler,30,30,30,60,"), std::string::npos);
}

class EveryRunCommand : public ::testing::TestWithParam<std::string> {};

TEST_P(EveryRunCommand, ByteIdenticalRerunsAndResolvedConfigReplay) {
    const std::string command = GetParam();
    const std::string tag = "cli_det_" + std::string(command == "nfe-bench" ? "nfe" : command);
    const auto a = test::scratch_dir(tag + "_a");
    const auto b = test::scratch_dir(tag + "_b");
    const auto c = test::scratch_dir(tag + "_c");
    ASSERT_EQ(run_cli(invocation(command, quick_overrides(command), a)).code, 0);
    ASSERT_EQ(run_cli(invocation(command, quick_overrides(command), b)).code, 0);
    auto replay = invocation(command, {}, c);
    replay.config = (a / "resolved_config.json").string();
    const auto rr = run_cli(replay);
    ASSERT_EQ(rr.code, 0) << rr.err;
    const auto fa = directory_bytes(a);
    EXPECT_GE(fa.size(), 2u);
    EXPECT_EQ(fa, directory_bytes(b));
    EXPECT_EQ(fa, directory_bytes(c));
}

INSTANTIATE_TEST_SUITE_P(Commands, EveryRunCommand,
                         ::testing::Values("solve", "roundtrip", "convergence", "nfe-bench", "edit", "fidelity-bench",
                                           "respmap", "bound-check", "export-traj"),
                         [](const auto& info) {
                             std::string s = info.param;
                             std::replace(s.begin(), s.end(), '-', '_');
                             return s;
                         });

TEST(Seed, ChangesArtifactsAndIsRecorded) {
    const auto a = test::scratch_dir("cli_seed_a");
    const auto b = test::scratch_dir("cli_seed_b");
    auto ia = invocation("solve", kSmallToy, a);
    ia.seed = 1;
    auto ib = invocation("solve", kSmallToy, b);
    ib.seed = 2;
    ASSERT_EQ(run_cli(ia).code, 0);
    ASSERT_EQ(run_cli(ib).code, 0);
    EXPECT_NE(test::slurp(a / "solve.json"), test::slurp(b / "solve.json"));
    EXPECT_EQ(json::parse(test::slurp(a / "resolved_config.json"))["seed"], 1);
}

TEST(Errors, ConfigViolationsExitTwoWithReport) {
    const auto dir = test::scratch_dir("cli_err");
    const auto res = run_cli(invocation("roundtrip", {"steps=0", "latent.init=bogus", "bogus=1"}, dir));
    EXPECT_EQ(res.code, 2);
    const auto j = json::parse(res.err);
    EXPECT_EQ(j["error"]["kind"], "ConfigViolations");
    EXPECT_EQ(j["error"]["violations"].size(), 3u);
    EXPECT_FALSE(fs::exists(dir / "roundtrip.csv"));
}

TEST(Errors, UnknownCommandAndStrayArgument) {
    const auto dir = test::scratch_dir("cli_err2");
    EXPECT_EQ(run_cli(invocation("teleport", {}, dir)).code, 2);
    auto inv = invocation("solve", {}, dir);
    inv.args = {"extra"};
    EXPECT_EQ(run_cli(inv).code, 2);
}

TEST(Errors, StepAboveInverseLipschitzIsInputError) {
    const auto dir = test::scratch_dir("cli_err3");
    const auto rt = run_cli(invocation("bound-check", {"field.kind=linear_scalar", "field.lambda=-50", "steps=10"}, dir));
    EXPECT_EQ(rt.code, 2);
}

TEST(Errors, NumericFailureExitsOne) {
    const auto dir = test::scratch_dir("cli_err4");
    const auto nan = run_cli(invocation("solve", {"field.kind=linear_scalar", "field.lambda=800", "steps=1",
                                                  "tableau=classic4", "latent.shape=[1,1,1]", "latent.init=constant",
                                                  "latent.value=1e300"},
                                        dir));
    EXPECT_EQ(nan.code, 1) << nan.err;
    EXPECT_EQ(json::parse(nan.err)["error"]["kind"], "NumericError");
}

TEST(Errors, ReportKinds) {
    EXPECT_EQ(cli::error_report(LookupError("x"))["error"]["kind"], "LookupError");
    EXPECT_EQ(cli::error_report(ParseError("x"))["error"]["kind"], "ParseError");
    EXPECT_EQ(cli::error_report(std::runtime_error("x"))["error"]["kind"], "Error");
}

TEST(TableauCommand, ListValidateOrder) {
    cli::Invocation list;
    list.command = "tableau";
    list.args = {"list"};
    const auto l = run_cli(list);
    EXPECT_EQ(l.code, 0);
    EXPECT_NE(l.out.find("rf_solver,2,2,1"), std::string::npos);
    EXPECT_NE(l.out.find("classic4,4,4,4"), std::string::npos);

    cli::Invocation val = list;
    val.args = {"validate", kData + "/ralston4.json"};
    const auto v = run_cli(val);
    EXPECT_EQ(v.code, 0);
    EXPECT_EQ(json::parse(v.out)["valid"], true);

    const auto dir = test::scratch_dir("cli_tab");
    save_tableau(ButcherTableau{"w", {{0, 0}, {1, 0}}, {0.6, 0.6}, {0, 1}}, (dir / "w.json").string());
    val.args = {"validate", (dir / "w.json").string()};
    const auto bad = run_cli(val);
    EXPECT_EQ(bad.code, 1);
    EXPECT_EQ(json::parse(bad.out)["violations"][0]["condition"], "weight-sum");

    cli::Invocation ord = list;
    ord.args = {"order", "rf_solver"};
    const auto o = run_cli(ord);
    EXPECT_EQ(o.code, 0);
    EXPECT_EQ(json::parse(o.out)["satisfied_order"], 1);

    ord.args = {"order", kData + "/syntax_error.json"};
    EXPECT_EQ(run_cli(ord).code, 2);
}

TEST(ModelCommand, DumpConfig) {
    cli::Invocation inv;
    inv.command = "model";
    inv.args = {"dump-config"};
    inv.overrides = {"model.d_model=32"};
    const auto r = run_cli(inv);
    ASSERT_EQ(r.code, 0);
    EXPECT_EQ(json::parse(r.out)["model"]["d_model"], 32);
}

TEST(Binary, ExitCodes) {
    const std::string bin = RKFLOW_CLI_BIN;
    const auto dir = test::scratch_dir("cli_bin");
    const std::string quiet = " > " + (dir / "o.txt").string() + " 2> " + (dir / "e.txt").string();
    EXPECT_EQ(shell_status(bin + " tableau list" + quiet), 0);
    EXPECT_EQ(shell_status(bin + " roundtrip --set field.kind=constant --set latent.shape=[1,2,2] --out " +
                           (dir / "rt").string() + quiet),
              0);
    EXPECT_TRUE(fs::exists(dir / "rt" / "roundtrip.csv"));
    EXPECT_EQ(shell_status(bin + " roundtrip --set steps=0 --out " + (dir / "bad").string() + quiet), 2);
    EXPECT_NE(test::slurp(dir / "e.txt").find("ConfigViolations"), std::string::npos);
    EXPECT_NE(shell_status(bin + " no-such-command" + quiet), 0);
}
