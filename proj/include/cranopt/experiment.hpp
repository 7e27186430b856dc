#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "cranopt/scenario.hpp"

// Batch experiment driver behind the command-line tool.  Each command turns a
// JSON config into a CSV table: `solve` tunes antenna sets and powers across
// budget levels, `validate` compares deterministic predictions against channel
// simulations, `scaling` probes how the rate grows with antenna density, and
// `sweep` re-emits solve output in long (metric, value) form for plotting.
//
// Determinism contract: every data row is a pure function of the effective
// config (after command-line overrides), and rows appear sorted by their axis
// tuple no matter how many worker threads ran.  Re-running a config reproduces
// the data rows byte for byte, except the wall_ms column of `solve`, which
// reports actual elapsed time and is excluded from that guarantee.

namespace cranopt {

// Budgets enter configs in dB; everything below this boundary is linear.
double db_to_linear(double db);

// 64-bit FNV-1a, used to stamp output files with a hash of their config.
std::uint64_t fnv1a64(std::string_view text);

struct ExperimentConfig {
    // Base scenario for `generate`, `solve` and `sweep`; optional template
    // (area, pathloss, user/antenna counts) for `validate` and `scaling`.
    Scenario scenario;
    bool has_scenario = false;

    std::vector<double> p0_db{10.0};      // per-antenna budget axis, dB
    std::vector<int> s_list;              // active-antenna axis; empty means
                                          // the scenario's own count
    std::vector<int> m_list{16, 64, 256}; // antenna-density axis for scaling
    std::vector<double> beta_list{0.5, 1.0};  // K/S load axis for validate
    std::vector<std::string> strategies{"s2", "baseline"};

    // "equal", "linear:lo:hi" (evenly spaced over users), or an explicit
    // per-user list given as a JSON array.
    std::string weights_spec = "equal";
    Eigen::VectorXd weights_explicit;

    int trials = 500;      // channel draws per Monte-Carlo row
    int placements = 1;    // independent scenario redraws per axis point
    int threads = 1;
    std::uint64_t seed = 1;
    std::uint64_t max_subsets = 2000000;  // guard for the exhaustive strategy
    bool fast = false;                    // fixed-alpha scoring in swap phase
    std::string output;                   // default depends on the command

    // Effective config serialized with sorted keys; its hash goes into the
    // CSV header so outputs can be traced back to exact inputs.
    std::string canonical;
};

ExperimentConfig parse_config(const std::string& json_text);
ExperimentConfig load_config(const std::string& path);

// Re-serializes the effective config and refreshes `canonical`.  Called after
// command-line overrides so the header hash reflects what actually ran.
void canonicalize(ExperimentConfig& cfg);

// Weight vector for K users according to the config's weight spec.
Eigen::VectorXd resolve_weights(const ExperimentConfig& cfg, int num_users);

// One finished table.  `failures` counts rows whose error column is nonempty;
// the process exit code is 0 only when it stays 0.
struct CsvTable {
    std::string command;
    std::uint64_t config_hash = 0;
    std::uint64_t seed = 0;
    std::vector<std::string> columns;
    std::vector<std::vector<std::string>> rows;
    int failures = 0;
};

void write_table(const CsvTable& table, std::ostream& out);

// Writes to `path`, or to stdout when path is "-".  Returns the process exit
// code: 0 when every row succeeded, 1 otherwise.
int emit_table(const CsvTable& table, const std::string& path);

// Writes the config's scenario (positions materialized) as a scenario file.
int cmd_generate(const ExperimentConfig& cfg, const std::string& path);

CsvTable run_solve(const ExperimentConfig& cfg);
CsvTable run_validate(const ExperimentConfig& cfg);
CsvTable run_sweep(const ExperimentConfig& cfg);
CsvTable run_scaling(const ExperimentConfig& cfg);

}  // namespace cranopt
