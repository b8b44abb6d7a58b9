#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "rkflow/cli.hpp"

namespace {

struct CommonFlags {
    std::string config;
    std::vector<std::string> overrides;
    std::string out;
    std::uint64_t seed = 0;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
    cmd->add_option("--config", f.config, "Run config (JSON)")->check(CLI::ExistingFile);
    cmd->add_option("--set", f.overrides, "Dotted-path override key=value (repeatable)")->take_all();
    cmd->add_option("--out", f.out, "Output directory");
    cmd->add_option("--seed", f.seed, "Top-level seed");
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Runge-Kutta rectified-flow solvers and decoupled attention editing on desk-scale models"};
    app.require_subcommand(1);

    CommonFlags flags;
    rkflow::cli::Invocation inv;

    auto* tableau = app.add_subcommand("tableau", "Inspect Butcher tableaus");
    tableau->require_subcommand(1);
    tableau->add_option("--out", flags.out, "Also write the result here");
    tableau->add_subcommand("list", "Registry with advertised and classified orders");
    std::string tableau_arg;
    for (const char* sub : {"validate", "order"}) {
        auto* s = tableau->add_subcommand(sub, std::string(sub) == "validate" ? "Check tableau invariants"
                                                                                : "Evaluate order conditions");
        s->add_option("tableau", tableau_arg, "Registry name or path to a tableau JSON file")->required();
    }

    auto* model = app.add_subcommand("model", "Toy model utilities");
    model->require_subcommand(1);
    auto* dump = model->add_subcommand("dump-config", "Print the resolved model configuration");
    add_common(dump, flags);

    const std::vector<std::pair<std::string, std::string>> runs{
        {"solve", "Single inversion or denoising solve"},
        {"roundtrip", "Invert then denoise; reconstruction error and metrics"},
        {"convergence", "Empirical convergence orders against a closed-form field"},
        {"nfe-bench", "Steps versus function evaluations table"},
        {"edit", "Semantic edit with attention caching and manipulation"},
        {"fidelity-bench", "Replace / mean / none deviation ordering over seeded cases"},
        {"respmap", "Word-pixel response maps"},
        {"bound-check", "Perturbation experiment against the Lipschitz error bound"},
        {"export-traj", "Trajectory CSV"},
    };
    for (const auto& [name, help] : runs) {
        add_common(app.add_subcommand(name, help), flags);
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    auto* cmd = app.get_subcommands().front();
    inv.command = cmd->get_name();
    for (auto* sub : cmd->get_subcommands()) {
        inv.args.push_back(sub->get_name());
        if (!tableau_arg.empty()) {
            inv.args.push_back(tableau_arg);
        }
        cmd = sub;
    }
    if (!flags.config.empty()) inv.config = flags.config;
    if (!flags.out.empty()) inv.out = flags.out;
    inv.overrides = flags.overrides;
    if (const auto* opt = cmd->get_option_no_throw("--seed"); opt != nullptr && opt->count() > 0) {
        inv.seed = flags.seed;
    }

    return rkflow::cli::run(inv, std::cout, std::cerr);
}
