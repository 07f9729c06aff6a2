// iwl: run verification scenarios from config files.
//
//   iwl run <config> [--out DIR] [--workers N]
//   iwl sweep <config> [--out DIR] [--workers N]
//   iwl catalog [--registry FILE] [--json]
//
// Exit codes: 0 all checks pass, 1 a threshold is violated, 2 bad config.

#include <iostream>

#include <CLI11.hpp>

#include "iwl/cli/runner.hpp"

namespace {

constexpr int kPass = 0;
constexpr int kViolation = 1;
constexpr int kConfigError = 2;

struct RunArgs {
    std::string config;
    std::string out;
    std::size_t workers = 0;
};

int execute(const RunArgs& a, bool sweep) {
    using namespace iwl::cli;
    try {
        Catalog cat = Catalog::builtin();
        ScenarioConfig c = load_config(a.config, cat);
        if (a.workers > 0) c.workers = a.workers;
        if (!a.out.empty()) c.output_dir = a.out;
        const RunResult r = sweep ? run_sweep(cat, c) : run(cat, c);
        write_run(r, c.output_dir);
        std::cout << c.name << " [" << c.formula << "] " << (r.passed ? "PASS" : "FAIL") << " -> " << c.output_dir
                  << "\n";
        for (const auto& v : r.report["violations"]) std::cout << "  violation: " << v.get<std::string>() << "\n";
        return r.passed ? kPass : kViolation;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kConfigError;
    } catch (const std::invalid_argument& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kConfigError;
    } catch (const iwl::SimulationError& e) {
        std::cerr << "simulation failed: " << e.what() << "\n";
        return kViolation;
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Verify Ito-Wentzell-Lions chain rules on simulated paths"};
    app.require_subcommand(1);

    RunArgs run_args, sweep_args;
    auto* run = app.add_subcommand("run", "run one scenario");
    run->add_option("config", run_args.config, "scenario config (JSON)")->required()->check(CLI::ExistingFile);
    run->add_option("--out", run_args.out, "run directory (default: output.dir of the config)");
    run->add_option("--workers", run_args.workers, "worker threads; IWL_WORKERS overrides");

    auto* sweep = app.add_subcommand("sweep", "convergence sweep over the config's sweep table");
    sweep->add_option("config", sweep_args.config, "scenario config (JSON)")->required()->check(CLI::ExistingFile);
    sweep->add_option("--out", sweep_args.out, "run directory (default: output.dir of the config)");
    sweep->add_option("--workers", sweep_args.workers, "worker threads; IWL_WORKERS overrides");

    std::string registry;
    bool as_json = false;
    auto* catalog = app.add_subcommand("catalog", "list templates and their parameters");
    catalog->add_option("--registry", registry, "custom preset file (JSON)");
    catalog->add_flag("--json", as_json, "machine-readable listing");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kPass : kConfigError;
    }

    if (*run) return execute(run_args, false);
    if (*sweep) return execute(sweep_args, true);
    try {
        auto cat = iwl::cli::Catalog::builtin();
        if (!registry.empty())
            cat.load_registry(iwl::cli::parse_json_text(iwl::cli::read_file(registry), registry), registry);
        if (as_json) std::cout << cat.to_json().dump(2) << "\n";
        else cat.print(std::cout);
    } catch (const iwl::cli::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kConfigError;
    }
    return kPass;
}
