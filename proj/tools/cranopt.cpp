// Command-line front end.  Every subcommand reads one JSON config, applies
// the flag overrides, and writes a single output file; computation lives in
// the library.  Exit status is 0 only when every output row succeeded.

#include <cstdint>
#include <exception>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "cranopt/experiment.hpp"

namespace {

struct Overrides {
    std::string config_path;
    std::string out;
    std::uint64_t seed = 0;
    int threads = 0;
    int trials = 0;
    bool fast = false;

    bool has_out = false;
    bool has_seed = false;
    bool has_threads = false;
    bool has_trials = false;
};

void add_common_flags(CLI::App* cmd, Overrides& ov) {
    cmd->add_option("--config", ov.config_path, "JSON experiment config")
        ->required()
        ->check(CLI::ExistingFile);
    cmd->add_option("--out", ov.out,
                    "output path (\"-\" for stdout); overrides the config");
    cmd->add_option("--seed", ov.seed, "override the config seed");
    cmd->add_option("--threads", ov.threads, "worker threads for row batches");
    cmd->add_option("--trials", ov.trials, "override Monte-Carlo trials");
    cmd->add_flag("--fast", ov.fast,
                  "score swap candidates at a fixed regularizer");
}

cranopt::ExperimentConfig load_with_overrides(const CLI::App* cmd,
                                              const Overrides& ov) {
    cranopt::ExperimentConfig cfg = cranopt::load_config(ov.config_path);
    if (cmd->count("--seed")) cfg.seed = ov.seed;
    if (cmd->count("--threads")) cfg.threads = ov.threads;
    if (cmd->count("--trials")) cfg.trials = ov.trials;
    if (cmd->count("--fast")) cfg.fast = true;
    if (cfg.threads < 1 || cfg.trials < 1)
        throw std::invalid_argument("threads and trials must be positive");
    // The header hash must describe the run as overridden, not as written.
    cranopt::canonicalize(cfg);
    return cfg;
}

std::string output_path(const CLI::App* cmd, const Overrides& ov,
                        const cranopt::ExperimentConfig& cfg,
                        const std::string& fallback) {
    if (cmd->count("--out")) return ov.out;
    if (!cfg.output.empty()) return cfg.output;
    return fallback;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"antenna selection, regularizer tuning and power allocation "
                 "for distributed downlinks"};
    app.require_subcommand(1);

    Overrides ov;
    CLI::App* generate =
        app.add_subcommand("generate", "materialize a scenario file");
    CLI::App* solve = app.add_subcommand(
        "solve", "tune antenna sets and powers across the budget axis");
    CLI::App* validate = app.add_subcommand(
        "validate", "compare deterministic predictions with simulation");
    CLI::App* sweep = app.add_subcommand(
        "sweep", "solve, reshaped to long (metric,value) rows");
    CLI::App* scaling = app.add_subcommand(
        "scaling", "rate growth against antenna density");
    for (CLI::App* cmd : {generate, solve, validate, sweep, scaling})
        add_common_flags(cmd, ov);

    CLI11_PARSE(app, argc, argv);
    const CLI::App* cmd = app.get_subcommands().front();

    try {
        const cranopt::ExperimentConfig cfg = load_with_overrides(cmd, ov);
        if (cmd == generate)
            return cranopt::cmd_generate(
                cfg, output_path(cmd, ov, cfg, "scenario.json"));

        cranopt::CsvTable table;
        if (cmd == solve)
            table = cranopt::run_solve(cfg);
        else if (cmd == validate)
            table = cranopt::run_validate(cfg);
        else if (cmd == sweep)
            table = cranopt::run_sweep(cfg);
        else
            table = cranopt::run_scaling(cfg);

        const std::string path =
            output_path(cmd, ov, cfg, table.command + ".csv");
        const int rc = cranopt::emit_table(table, path);
        if (rc != 0)
            std::cerr << "cranopt: " << table.failures
                      << " row(s) failed; see the error column\n";
        return rc;
    } catch (const std::exception& e) {
        std::cerr << "cranopt: " << e.what() << "\n";
        return 1;
    }
}
