#include "cranopt/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>
#include <thread>

#include <nlohmann/json.hpp>

#include "cranopt/antenna_select.hpp"
#include "cranopt/dequiv.hpp"
#include "cranopt/errors.hpp"
#include "cranopt/montecarlo.hpp"
#include "cranopt/power_opt.hpp"
#include "cranopt/rng.hpp"

namespace cranopt {

using nlohmann::json;

double db_to_linear(double db) { return std::pow(10.0, db / 10.0); }

std::uint64_t fnv1a64(std::string_view text) {
    std::uint64_t h = 14695981039346656037ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

namespace {

// Defaults for validate/scaling when the config carries no scenario: a 2 km
// square with pathloss referenced to 1 km, two users, four active antennas.
constexpr double kDefaultSide = 2000.0;
constexpr double kDefaultZeta = 2.5;
constexpr int kDefaultUsers = 2;
constexpr int kDefaultActive = 4;

double default_g0(double zeta) { return std::pow(1000.0, zeta); }

std::vector<double> read_number_list(const json& v, const std::string& key) {
    std::vector<double> out;
    if (v.is_number()) {
        out.push_back(v.get<double>());
    } else if (v.is_array()) {
        for (const json& e : v) {
            if (!e.is_number())
                throw std::invalid_argument("config: " + key +
                                            " must contain numbers");
            out.push_back(e.get<double>());
        }
    } else {
        throw std::invalid_argument("config: " + key +
                                    " must be a number or an array");
    }
    if (out.empty())
        throw std::invalid_argument("config: " + key + " must not be empty");
    return out;
}

std::vector<int> read_int_list(const json& v, const std::string& key) {
    std::vector<int> out;
    for (double x : read_number_list(v, key)) {
        const int n = static_cast<int>(std::lround(x));
        if (double(n) != x)
            throw std::invalid_argument("config: " + key +
                                        " must contain integers");
        out.push_back(n);
    }
    return out;
}

const std::set<std::string>& valid_strategies() {
    static const std::set<std::string> s{"s2", "baseline", "exhaustive",
                                         "all-antennas", "collocated"};
    return s;
}

std::string fmt_g(double x) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.15g", x);
    return buf;
}

std::string fmt_ms(double x) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.3f", x);
    return buf;
}

// Keeps failure messages on one CSV cell.
std::string sanitize(const std::string& msg) {
    std::string out = msg;
    for (char& c : out)
        if (c == ',' || c == '\n' || c == '\r') c = ';';
    return out;
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t tag) {
    return rng::splitmix64(seed ^ rng::splitmix64(tag));
}

std::vector<int> all_indices(int m) {
    std::vector<int> idx(m);
    std::iota(idx.begin(), idx.end(), 0);
    return idx;
}

// Runs fn(0..n-1) on a small pool.  fn must not throw; row functions catch
// their own errors and record them in the row.
void parallel_rows(int threads, int n, const std::function<void(int)>& fn) {
    threads = std::max(1, std::min(threads, n));
    if (threads == 1) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    pool.reserve(threads);
    for (int t = 0; t < threads; ++t)
        pool.emplace_back([&] {
            for (int i = next.fetch_add(1); i < n; i = next.fetch_add(1))
                fn(i);
        });
    for (std::thread& th : pool) th.join();
}

int count_failures(const CsvTable& t) {
    int n = 0;
    for (const std::vector<std::string>& row : t.rows)
        if (!row.empty() && !row.back().empty()) ++n;
    return n;
}

// Fading from every user to a single site at the area center, for the
// collocated comparison strategy.
Eigen::VectorXd center_fading(const Scenario& sc) {
    const double cx = sc.side_length / 2.0;
    const double cy = sc.side_length / 2.0;
    const auto k = sc.user_positions.rows();
    Eigen::VectorXd sigma(k);
    for (Eigen::Index i = 0; i < k; ++i) {
        const double r = std::hypot(sc.user_positions(i, 0) - cx,
                                    sc.user_positions(i, 1) - cy);
        if (r == 0.0)
            throw NumericalError("center_fading: user sits on the site");
        sigma(i) = std::sqrt(sc.g0) * std::pow(r, -sc.zeta / 2.0);
    }
    return sigma;
}

// Worst KKT residual of a tuned policy, recomputed from scratch so the
// reported number does not depend on solver internals.
double policy_kkt_residual(const Eigen::MatrixXd& sigma,
                           const SelectionResult& sel,
                           const Eigen::VectorXd& w, double rho_value) {
    const auto s = static_cast<Eigen::Index>(sel.active_set.size());
    Eigen::MatrixXd sigma_a(sigma.rows(), s);
    for (Eigen::Index c = 0; c < s; ++c)
        sigma_a.col(c) = sigma.col(sel.active_set[static_cast<std::size_t>(c)]);
    const DeState de = solve_de_state(sigma_a, sel.alpha);
    const Eigen::MatrixXd gains =
        effective_gains(de.xi, de.theta, static_cast<int>(s));
    const Eigen::MatrixXd constraint = power_constraint_matrix(de);
    const Eigen::VectorXd rho_a = Eigen::VectorXd::Constant(s, rho_value);
    return kkt_residual(gains, constraint, rho_a, w, sel.p, sel.lambda)
        .max_residual();
}

struct SolveTask {
    std::string strategy;
    double p0_db = 0.0;
    int num_active = 0;
};

}  // namespace

ExperimentConfig parse_config(const std::string& json_text) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::parse_error& e) {
        throw std::invalid_argument(std::string("config: ") + e.what());
    }
    if (!j.is_object())
        throw std::invalid_argument("config: top level must be an object");

    static const std::set<std::string> known{
        "scenario", "scenario_file", "p0_db",      "s_list",
        "m_list",   "beta",          "weights",    "strategies",
        "trials",   "placements",    "threads",    "seed",
        "max_subsets", "fast",       "output"};
    for (const auto& item : j.items())
        if (!known.count(item.key()))
            throw std::invalid_argument("config: unknown key \"" +
                                        item.key() + "\"");

    ExperimentConfig cfg;
    if (j.contains("scenario") && j.contains("scenario_file"))
        throw std::invalid_argument(
            "config: give either scenario or scenario_file, not both");
    if (j.contains("scenario")) {
        cfg.scenario = scenario_from_json_text(j["scenario"].dump());
        cfg.has_scenario = true;
    } else if (j.contains("scenario_file")) {
        cfg.scenario = load_scenario(j["scenario_file"].get<std::string>());
        cfg.has_scenario = true;
    }

    if (j.contains("p0_db")) cfg.p0_db = read_number_list(j["p0_db"], "p0_db");
    if (j.contains("s_list")) cfg.s_list = read_int_list(j["s_list"], "s_list");
    if (j.contains("m_list")) cfg.m_list = read_int_list(j["m_list"], "m_list");
    if (j.contains("beta")) cfg.beta_list = read_number_list(j["beta"], "beta");

    if (j.contains("weights")) {
        const json& w = j["weights"];
        if (w.is_string()) {
            cfg.weights_spec = w.get<std::string>();
        } else if (w.is_array()) {
            const std::vector<double> vals = read_number_list(w, "weights");
            cfg.weights_spec = "explicit";
            cfg.weights_explicit =
                Eigen::Map<const Eigen::VectorXd>(vals.data(),
                                                  Eigen::Index(vals.size()));
        } else {
            throw std::invalid_argument(
                "config: weights must be a string spec or an array");
        }
    }

    if (j.contains("strategies")) {
        cfg.strategies.clear();
        const json& s = j["strategies"];
        if (s.is_string()) {
            cfg.strategies.push_back(s.get<std::string>());
        } else if (s.is_array()) {
            for (const json& e : s) {
                if (!e.is_string())
                    throw std::invalid_argument(
                        "config: strategies must be strings");
                cfg.strategies.push_back(e.get<std::string>());
            }
        } else {
            throw std::invalid_argument(
                "config: strategies must be a string or an array");
        }
        if (cfg.strategies.empty())
            throw std::invalid_argument("config: strategies must not be empty");
        for (const std::string& s2 : cfg.strategies)
            if (!valid_strategies().count(s2))
                throw std::invalid_argument("config: unknown strategy \"" +
                                            s2 + "\"");
        if (std::set<std::string>(cfg.strategies.begin(),
                                  cfg.strategies.end())
                .size() != cfg.strategies.size())
            throw std::invalid_argument("config: duplicate strategy");
    }

    if (j.contains("trials")) cfg.trials = j["trials"].get<int>();
    if (j.contains("placements")) cfg.placements = j["placements"].get<int>();
    if (j.contains("threads")) cfg.threads = j["threads"].get<int>();
    if (j.contains("seed")) cfg.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("max_subsets"))
        cfg.max_subsets = j["max_subsets"].get<std::uint64_t>();
    if (j.contains("fast")) cfg.fast = j["fast"].get<bool>();
    if (j.contains("output")) cfg.output = j["output"].get<std::string>();

    if (cfg.trials < 1)
        throw std::invalid_argument("config: trials must be positive");
    if (cfg.placements < 1)
        throw std::invalid_argument("config: placements must be positive");
    if (cfg.threads < 1)
        throw std::invalid_argument("config: threads must be positive");
    if (cfg.max_subsets < 1)
        throw std::invalid_argument("config: max_subsets must be positive");

    canonicalize(cfg);
    return cfg;
}

ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config file: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_config(buf.str());
}

void canonicalize(ExperimentConfig& cfg) {
    // Keys are emitted sorted, and semantically inert settings (threads,
    // output path) stay out, so two runs that must produce the same rows
    // also stamp the same hash.
    json j;
    if (cfg.has_scenario)
        j["scenario"] = json::parse(scenario_to_json_text(cfg.scenario));
    j["p0_db"] = cfg.p0_db;
    if (!cfg.s_list.empty()) j["s_list"] = cfg.s_list;
    j["m_list"] = cfg.m_list;
    j["beta"] = cfg.beta_list;
    if (cfg.weights_spec == "explicit") {
        std::vector<double> w(cfg.weights_explicit.data(),
                              cfg.weights_explicit.data() +
                                  cfg.weights_explicit.size());
        j["weights"] = w;
    } else {
        j["weights"] = cfg.weights_spec;
    }
    j["strategies"] = cfg.strategies;
    j["trials"] = cfg.trials;
    j["placements"] = cfg.placements;
    j["seed"] = cfg.seed;
    j["max_subsets"] = cfg.max_subsets;
    j["fast"] = cfg.fast;
    cfg.canonical = j.dump();
}

Eigen::VectorXd resolve_weights(const ExperimentConfig& cfg, int num_users) {
    if (num_users < 1)
        throw std::invalid_argument("resolve_weights: need at least one user");
    const std::string& spec = cfg.weights_spec;
    Eigen::VectorXd w;
    if (spec == "equal") {
        w = Eigen::VectorXd::Ones(num_users);
    } else if (spec == "explicit") {
        if (cfg.weights_explicit.size() != num_users)
            throw std::invalid_argument(
                "resolve_weights: explicit weights sized for a different "
                "user count");
        w = cfg.weights_explicit;
    } else if (spec.rfind("linear:", 0) == 0) {
        const std::size_t colon = spec.find(':', 7);
        if (colon == std::string::npos)
            throw std::invalid_argument(
                "resolve_weights: expected linear:lo:hi");
        double lo = 0.0, hi = 0.0;
        try {
            lo = std::stod(spec.substr(7, colon - 7));
            hi = std::stod(spec.substr(colon + 1));
        } catch (const std::exception&) {
            throw std::invalid_argument(
                "resolve_weights: malformed linear:lo:hi bounds");
        }
        w.resize(num_users);
        for (int k = 0; k < num_users; ++k)
            w(k) = num_users == 1
                       ? lo
                       : lo + (hi - lo) * double(k) / double(num_users - 1);
    } else {
        throw std::invalid_argument(
            "resolve_weights: spec must be \"equal\", \"linear:lo:hi\", or "
            "an explicit array");
    }
    if (!(w.array() > 0.0).all())
        throw std::invalid_argument("resolve_weights: weights must be positive");
    return w;
}

void write_table(const CsvTable& table, std::ostream& out) {
    char hash[24];
    std::snprintf(hash, sizeof hash, "%016llx",
                  static_cast<unsigned long long>(table.config_hash));
    out << "# cranopt " << table.command << " config_hash=" << hash
        << " seed=" << table.seed << "\n";
    for (std::size_t c = 0; c < table.columns.size(); ++c)
        out << (c ? "," : "") << table.columns[c];
    out << "\n";
    for (const std::vector<std::string>& row : table.rows) {
        for (std::size_t c = 0; c < row.size(); ++c)
            out << (c ? "," : "") << row[c];
        out << "\n";
    }
}

int emit_table(const CsvTable& table, const std::string& path) {
    if (path == "-") {
        write_table(table, std::cout);
    } else {
        std::ofstream out(path, std::ios::trunc);
        if (!out) throw std::runtime_error("cannot open output file: " + path);
        write_table(table, out);
    }
    return table.failures == 0 ? 0 : 1;
}

int cmd_generate(const ExperimentConfig& cfg, const std::string& path) {
    if (!cfg.has_scenario)
        throw std::invalid_argument("generate: config carries no scenario");
    save_scenario(cfg.scenario, path);
    return 0;
}

CsvTable run_solve(const ExperimentConfig& cfg) {
    if (!cfg.has_scenario)
        throw std::invalid_argument("solve: config carries no scenario");

    const Eigen::MatrixXd sigma = pathloss_matrix(cfg.scenario).sigma;
    const int m = static_cast<int>(sigma.cols());
    const int k = static_cast<int>(sigma.rows());
    const Eigen::VectorXd w = resolve_weights(cfg, k);

    std::vector<double> p0s = cfg.p0_db;
    std::sort(p0s.begin(), p0s.end());
    std::vector<int> s_axis =
        cfg.s_list.empty() ? std::vector<int>{cfg.scenario.num_active}
                           : cfg.s_list;
    std::sort(s_axis.begin(), s_axis.end());

    // Strategy order follows the config; numeric axes ascend.  Full-array
    // strategies have no subset-size axis, so they run once per budget.
    std::vector<SolveTask> tasks;
    for (const std::string& strat : cfg.strategies) {
        const bool full = strat == "all-antennas" || strat == "collocated";
        for (double p0 : p0s) {
            if (full) {
                tasks.push_back({strat, p0, m});
            } else {
                for (int s : s_axis) tasks.push_back({strat, p0, s});
            }
        }
    }

    CsvTable table;
    table.command = "solve";
    table.config_hash = fnv1a64(cfg.canonical);
    table.seed = cfg.seed;
    table.columns = {"strategy", "p0_db",     "s",       "rate_de",
                     "alpha_star", "kkt_resid", "wall_ms", "error"};
    table.rows.assign(tasks.size(), {});

    SelectionOpts sel_opts;
    sel_opts.fast_mode = cfg.fast;

    parallel_rows(cfg.threads, static_cast<int>(tasks.size()), [&](int i) {
        const SolveTask& task = tasks[static_cast<std::size_t>(i)];
        std::vector<std::string> row{task.strategy, fmt_g(task.p0_db),
                                     std::to_string(task.num_active),
                                     "", "", "", "", ""};
        try {
            const double rho_value = db_to_linear(task.p0_db);
            const Eigen::VectorXd rho =
                Eigen::VectorXd::Constant(m, rho_value);
            const Eigen::MatrixXd sigma_used =
                task.strategy == "collocated"
                    ? collocated_fading(center_fading(cfg.scenario), m).sigma
                    : sigma;
            const auto t0 = std::chrono::steady_clock::now();
            SelectionResult sel;
            if (task.strategy == "s2") {
                sel = select_antennas_s2(sigma, w, rho, task.num_active,
                                         sel_opts);
            } else if (task.strategy == "baseline") {
                sel = tune_active_set(
                    sigma, w, rho, baseline_strongest(sigma, task.num_active),
                    sel_opts.tuning);
            } else if (task.strategy == "exhaustive") {
                sel = exhaustive_select(sigma, w, rho, task.num_active,
                                        cfg.max_subsets, sel_opts.tuning);
            } else {
                sel = tune_active_set(sigma_used, w, rho, all_indices(m),
                                      sel_opts.tuning);
            }
            const double wall =
                std::chrono::duration<double, std::milli>(
                    std::chrono::steady_clock::now() - t0)
                    .count();

            row[3] = fmt_g(sel.rate);
            row[4] = fmt_g(sel.alpha);
            row[5] = fmt_g(policy_kkt_residual(sigma_used, sel, w, rho_value));
            row[6] = fmt_ms(wall);
        } catch (const std::exception& e) {
            row[7] = sanitize(e.what());
        }
        table.rows[static_cast<std::size_t>(i)] = std::move(row);
    });

    table.failures = count_failures(table);
    return table;
}

CsvTable run_validate(const ExperimentConfig& cfg) {
    const double side =
        cfg.has_scenario ? cfg.scenario.side_length : kDefaultSide;
    const double zeta = cfg.has_scenario ? cfg.scenario.zeta : kDefaultZeta;
    const double g0 = cfg.has_scenario ? cfg.scenario.g0 : default_g0(zeta);
    const double rho_value = db_to_linear(cfg.p0_db.front());

    if (cfg.s_list.empty())
        throw std::invalid_argument("validate: s_list must be given");
    std::vector<int> s_axis = cfg.s_list;
    std::sort(s_axis.begin(), s_axis.end());
    std::vector<double> betas = cfg.beta_list;
    std::sort(betas.begin(), betas.end());

    struct Task {
        int s = 0;
        double beta = 0.0;
        int rep = 0;
        std::uint64_t tag = 0;
    };
    std::vector<Task> tasks;
    for (std::size_t si = 0; si < s_axis.size(); ++si)
        for (std::size_t bi = 0; bi < betas.size(); ++bi)
            for (int rep = 0; rep < cfg.placements; ++rep)
                tasks.push_back({s_axis[si], betas[bi], rep,
                                 (std::uint64_t(si) << 40) |
                                     (std::uint64_t(bi) << 20) |
                                     std::uint64_t(rep)});

    CsvTable table;
    table.command = "validate";
    table.config_hash = fnv1a64(cfg.canonical);
    table.seed = cfg.seed;
    table.columns = {"s",           "k",           "beta",
                     "rep",         "trials",      "de_rate",
                     "sim_rate",    "rel_rate_err", "rel_pow_err",
                     "stderr",      "error"};
    table.rows.assign(tasks.size(), {});

    parallel_rows(cfg.threads, static_cast<int>(tasks.size()), [&](int i) {
        const Task& task = tasks[static_cast<std::size_t>(i)];
        const int s = task.s;
        int k = std::max(1, static_cast<int>(std::lround(task.beta * s)));
        k = std::min(k, s);
        std::vector<std::string> row{std::to_string(s),
                                     std::to_string(k),
                                     fmt_g(task.beta),
                                     std::to_string(task.rep),
                                     std::to_string(cfg.trials),
                                     "", "", "", "", "", ""};
        try {
            const std::uint64_t sc_seed = mix_seed(cfg.seed, task.tag);
            const int grid = static_cast<int>(std::lround(std::sqrt(double(s))));
            const Scenario sc =
                grid * grid == s
                    ? generate_grid_scenario(grid, k, s, side, g0, zeta,
                                             sc_seed)
                    : generate_uniform_scenario(s, k, s, side, g0, zeta,
                                                sc_seed);
            const Eigen::MatrixXd sigma = pathloss_matrix(sc).sigma;
            const double alpha = task.beta / 10.0;

            // Equal per-user power, scaled so the tightest antenna meets its
            // budget with equality.
            const DeState de = solve_de_state(sigma, alpha);
            const Eigen::VectorXd pbar_unit =
                de_power(de, Eigen::VectorXd::Ones(k));
            const double cap = pbar_unit.maxCoeff();
            if (!(cap > 0.0))
                throw NumericalError("validate: zero unit-power prediction");
            Policy pol;
            pol.active_set = all_indices(s);
            pol.alpha = alpha;
            pol.p = Eigen::VectorXd::Constant(k, rho_value / (s * cap));
            pol.weights = resolve_weights(cfg, k);
            pol.rho = Eigen::VectorXd::Constant(s, rho_value);

            const McReport rep =
                mc_validate(sigma, pol, cfg.trials, rng::splitmix64(sc_seed));
            row[5] = fmt_g(rep.de_rate);
            row[6] = fmt_g(rep.avg_rate);
            row[7] = fmt_g(rep.rel_rate_error);
            row[8] = fmt_g(rep.rel_power_error);
            row[9] = fmt_g(rep.rate_stderr);
        } catch (const std::exception& e) {
            row[10] = sanitize(e.what());
        }
        table.rows[static_cast<std::size_t>(i)] = std::move(row);
    });

    table.failures = count_failures(table);
    return table;
}

CsvTable run_sweep(const ExperimentConfig& cfg) {
    const CsvTable solve = run_solve(cfg);

    CsvTable table;
    table.command = "sweep";
    table.config_hash = solve.config_hash;
    table.seed = solve.seed;
    table.columns = {"strategy", "p0_db", "s", "metric", "value", "error"};
    static const char* metrics[] = {"rate_de", "alpha_star", "kkt_resid",
                                    "wall_ms"};
    for (const std::vector<std::string>& src : solve.rows)
        for (int mi = 0; mi < 4; ++mi)
            table.rows.push_back({src[0], src[1], src[2], metrics[mi],
                                  src[static_cast<std::size_t>(3 + mi)],
                                  src[7]});
    table.failures = count_failures(table);
    return table;
}

CsvTable run_scaling(const ExperimentConfig& cfg) {
    Scenario base;
    if (cfg.has_scenario) {
        base = cfg.scenario;
    } else {
        base = generate_uniform_scenario(kDefaultActive, kDefaultUsers,
                                         kDefaultActive, kDefaultSide,
                                         default_g0(kDefaultZeta),
                                         kDefaultZeta, cfg.seed);
    }
    std::vector<int> ms = cfg.m_list;
    std::sort(ms.begin(), ms.end());

    CsvTable table;
    table.command = "scaling";
    table.config_hash = fnv1a64(cfg.canonical);
    table.seed = cfg.seed;
    table.columns = {"m",     "mean_rate",      "mean_de_rate",
                     "slope", "per_user_slope", "error"};
    try {
        const Eigen::VectorXd w = resolve_weights(cfg, base.num_users);
        SelectionOpts sel_opts;
        sel_opts.fast_mode = cfg.fast;
        const CapacityProbe probe = mc_sum_rate_capacity_probe(
            base, w, db_to_linear(cfg.p0_db.front()), ms, cfg.placements,
            cfg.trials, cfg.seed, sel_opts);
        for (const CapacityPoint& pt : probe.points)
            table.rows.push_back({std::to_string(pt.num_antennas),
                                  fmt_g(pt.mean_rate), fmt_g(pt.mean_de_rate),
                                  fmt_g(probe.slope),
                                  fmt_g(probe.per_user_slope), ""});
    } catch (const std::exception& e) {
        // The fitted slope couples all antenna counts, so a scaling failure
        // cannot be confined to one row.
        table.rows.push_back({"", "", "", "", "", sanitize(e.what())});
    }
    table.failures = count_failures(table);
    return table;
}

}  // namespace cranopt
