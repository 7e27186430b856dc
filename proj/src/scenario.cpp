#include "cranopt/scenario.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <sstream>
#include <stdexcept>
#include <vector>

#include <nlohmann/json.hpp>

#include "cranopt/errors.hpp"
#include "cranopt/rng.hpp"

namespace cranopt {

namespace {

// Substream tags for position draws, distinct from any trial index.
constexpr std::uint64_t kUserPositionStream = 0x75706f73ULL;     // "upos"
constexpr std::uint64_t kAntennaPositionStream = 0x61706f73ULL;  // "apos"

void check_scenario_params(int num_antennas, int num_users, int num_active,
                           double side_length, double g0, double zeta) {
    if (num_antennas < 1)
        throw std::invalid_argument("scenario: need at least one antenna");
    if (num_users < 1) throw std::invalid_argument("scenario: need at least one user");
    if (num_active < num_users || num_active > num_antennas)
        throw std::invalid_argument("scenario: need K <= S <= M");
    if (side_length <= 0.0) throw std::invalid_argument("scenario: side_length must be > 0");
    if (g0 <= 0.0) throw std::invalid_argument("scenario: g0 must be > 0");
    if (zeta <= 2.0) throw std::invalid_argument("scenario: zeta must be > 2");
}

void draw_user_positions(Scenario& sc) {
    auto eng = rng::substream(sc.seed, kUserPositionStream);
    sc.user_positions.resize(sc.num_users, 2);
    for (int k = 0; k < sc.num_users; ++k) {
        sc.user_positions(k, 0) = sc.side_length * rng::uniform01(eng);
        sc.user_positions(k, 1) = sc.side_length * rng::uniform01(eng);
    }
}

}  // namespace

Scenario generate_grid_scenario(int grid_n, int num_users, int num_active,
                                double side_length, double g0, double zeta,
                                std::uint64_t seed) {
    if (grid_n < 1) throw std::invalid_argument("scenario: grid_n must be >= 1");
    check_scenario_params(grid_n * grid_n, num_users, num_active, side_length,
                          g0, zeta);

    Scenario sc;
    sc.side_length = side_length;
    sc.grid_n = grid_n;
    sc.num_users = num_users;
    sc.num_active = num_active;
    sc.g0 = g0;
    sc.zeta = zeta;
    sc.seed = seed;

    const int m = grid_n * grid_n;
    const double h = side_length / grid_n;
    sc.antenna_positions.resize(m, 2);
    for (int i = 0; i < grid_n; ++i)
        for (int j = 0; j < grid_n; ++j) {
            sc.antenna_positions(i * grid_n + j, 0) = (i + 0.5) * h;
            sc.antenna_positions(i * grid_n + j, 1) = (j + 0.5) * h;
        }

    draw_user_positions(sc);
    return sc;
}

Scenario generate_uniform_scenario(int num_antennas, int num_users,
                                   int num_active, double side_length,
                                   double g0, double zeta, std::uint64_t seed) {
    check_scenario_params(num_antennas, num_users, num_active, side_length, g0,
                          zeta);

    Scenario sc;
    sc.side_length = side_length;
    sc.grid_n = 0;
    sc.num_users = num_users;
    sc.num_active = num_active;
    sc.g0 = g0;
    sc.zeta = zeta;
    sc.seed = seed;

    auto eng = rng::substream(seed, kAntennaPositionStream);
    sc.antenna_positions.resize(num_antennas, 2);
    for (int m = 0; m < num_antennas; ++m) {
        sc.antenna_positions(m, 0) = side_length * rng::uniform01(eng);
        sc.antenna_positions(m, 1) = side_length * rng::uniform01(eng);
    }

    draw_user_positions(sc);
    return sc;
}

LargeScaleFading pathloss_matrix(const Scenario& sc) {
    const int k_users = static_cast<int>(sc.user_positions.rows());
    const int m_ant = static_cast<int>(sc.antenna_positions.rows());
    if (k_users == 0 || m_ant == 0)
        throw std::invalid_argument("pathloss_matrix: scenario has no positions");

    LargeScaleFading lsf;
    lsf.sigma.resize(k_users, m_ant);
    const double sqrt_g0 = std::sqrt(sc.g0);
    for (int k = 0; k < k_users; ++k)
        for (int m = 0; m < m_ant; ++m) {
            const double dx = sc.user_positions(k, 0) - sc.antenna_positions(m, 0);
            const double dy = sc.user_positions(k, 1) - sc.antenna_positions(m, 1);
            const double r = std::hypot(dx, dy);
            if (r == 0.0)
                throw NumericalError("pathloss_matrix: user coincides with an antenna");
            lsf.sigma(k, m) = sqrt_g0 * std::pow(r, -0.5 * sc.zeta);
        }
    return lsf;
}

LargeScaleFading collocated_fading(const Eigen::VectorXd& sigma_users,
                                   int num_antennas) {
    if (num_antennas < 1)
        throw std::invalid_argument("collocated_fading: need at least one antenna");
    if (sigma_users.size() == 0 || (sigma_users.array() <= 0.0).any())
        throw std::invalid_argument("collocated_fading: user gains must be positive");
    LargeScaleFading lsf;
    lsf.sigma = sigma_users.replicate(1, num_antennas);
    return lsf;
}

ChannelRealization sample_channel(const Eigen::MatrixXd& sigma,
                                  std::uint64_t seed, std::uint64_t trial) {
    const auto rows = sigma.rows();
    const auto cols = sigma.cols();
    if (rows == 0 || cols == 0)
        throw std::invalid_argument("sample_channel: empty fading matrix");

    auto eng = rng::substream(seed, trial);
    ChannelRealization ch;
    ch.H.resize(rows, cols);
    for (Eigen::Index k = 0; k < rows; ++k)
        for (Eigen::Index m = 0; m < cols; ++m)
            ch.H(k, m) = sigma(k, m) * rng::complex_normal(eng);
    ch.H_normalized = ch.H / std::sqrt(static_cast<double>(cols));
    return ch;
}

double decoupling_ratio(const Eigen::MatrixXd& sigma) {
    const int k_users = static_cast<int>(sigma.rows());
    if (k_users < 2)
        throw std::invalid_argument("decoupling_ratio: needs at least two users");

    // Strongest antenna of each user (squared gains; lowest index on ties).
    std::vector<int> direct(k_users);
    for (int k = 0; k < k_users; ++k) {
        int best = 0;
        for (int m = 1; m < sigma.cols(); ++m)
            if (sigma(k, m) * sigma(k, m) > sigma(k, best) * sigma(k, best)) best = m;
        direct[k] = best;
    }

    double eta = std::numeric_limits<double>::infinity();
    for (int k = 0; k < k_users; ++k) {
        const double own = sigma(k, direct[k]) * sigma(k, direct[k]);
        double cross = 0.0;
        for (int l = 0; l < k_users; ++l) {
            if (l == k) continue;
            cross = std::max(cross, sigma(k, direct[l]) * sigma(k, direct[l]));
        }
        if (cross == 0.0)
            throw NumericalError("decoupling_ratio: zero cross gain");
        eta = std::min(eta, own / cross);
    }
    return eta;
}

double decoupling_probability_bound(int num_users, double zeta, double eta0,
                                    int num_antennas) {
    if (num_users < 1) throw std::invalid_argument("decoupling bound: K >= 1");
    if (num_antennas < 1) throw std::invalid_argument("decoupling bound: M >= 1");
    if (zeta <= 0.0 || eta0 <= 0.0)
        throw std::invalid_argument("decoupling bound: zeta and eta0 must be > 0");
    if (num_users == 1) return 1.0;

    const double root = std::pow(eta0, 1.0 / zeta) + 1.0;
    // Probability that one other user's direct antenna is far enough away;
    // negative values mean the exclusion disk covers the whole area.
    double single = 1.0 - std::numbers::pi * root * root / (2.0 * num_antennas);
    single = std::max(single, 0.0);
    const double bound =
        1.0 - num_users * (1.0 - std::pow(single, num_users - 1));
    return std::clamp(bound, 0.0, 1.0);
}

namespace {

using nlohmann::json;

json positions_to_json(const Eigen::MatrixX2d& mat) {
    json arr = json::array();
    for (Eigen::Index i = 0; i < mat.rows(); ++i)
        arr.push_back({mat(i, 0), mat(i, 1)});
    return arr;
}

Eigen::MatrixX2d positions_from_json(const json& arr, int expected,
                                     const char* what) {
    if (static_cast<int>(arr.size()) != expected)
        throw std::invalid_argument(std::string("scenario json: ") + what +
                                    " has the wrong number of rows");
    Eigen::MatrixX2d mat(expected, 2);
    for (int i = 0; i < expected; ++i) {
        mat(i, 0) = arr.at(i).at(0).get<double>();
        mat(i, 1) = arr.at(i).at(1).get<double>();
    }
    return mat;
}

json scenario_to_json(const Scenario& sc) {
    json j;
    j["side_length_m"] = sc.side_length;
    j["grid_n"] = sc.grid_n;
    j["users"] = sc.num_users;
    j["active_antennas"] = sc.num_active;
    j["g0"] = sc.g0;
    j["zeta"] = sc.zeta;
    j["seed"] = sc.seed;
    j["user_positions"] = positions_to_json(sc.user_positions);
    j["antenna_positions"] = positions_to_json(sc.antenna_positions);
    return j;
}

Scenario scenario_from_json(const json& j) {
    for (const char* key : {"side_length_m", "grid_n", "users", "active_antennas", "zeta", "seed"})
        if (!j.contains(key))
            throw std::invalid_argument(std::string("scenario json: missing key ") + key);

    const int grid_n = j.at("grid_n").get<int>();
    const bool scattered = j.contains("antenna_positions");
    if (grid_n < 1 && !scattered)
        throw std::invalid_argument(
            "scenario json: grid_n < 1 requires explicit antenna_positions");

    Scenario sc;
    if (scattered) {
        // Positions override the generator; reuse it only for validation
        // and the user draw, then overwrite.
        const auto& arr = j.at("antenna_positions");
        sc = generate_uniform_scenario(
            static_cast<int>(arr.size()), j.at("users").get<int>(),
            j.at("active_antennas").get<int>(),
            j.at("side_length_m").get<double>(), j.value("g0", 1.0),
            j.at("zeta").get<double>(), j.at("seed").get<std::uint64_t>());
        sc.grid_n = grid_n;
        sc.antenna_positions =
            positions_from_json(arr, sc.num_antennas(), "antenna_positions");
    } else {
        sc = generate_grid_scenario(
            grid_n, j.at("users").get<int>(), j.at("active_antennas").get<int>(),
            j.at("side_length_m").get<double>(), j.value("g0", 1.0),
            j.at("zeta").get<double>(), j.at("seed").get<std::uint64_t>());
    }

    if (j.contains("user_positions"))
        sc.user_positions = positions_from_json(j.at("user_positions"),
                                                sc.num_users, "user_positions");
    return sc;
}

}  // namespace

Scenario scenario_from_json_text(const std::string& text) {
    return scenario_from_json(json::parse(text));
}

std::string scenario_to_json_text(const Scenario& sc) {
    return scenario_to_json(sc).dump(2);
}

Scenario load_scenario(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::invalid_argument("load_scenario: cannot open " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return scenario_from_json_text(ss.str());
}

void save_scenario(const Scenario& sc, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::invalid_argument("save_scenario: cannot open " + path);
    out << scenario_to_json_text(sc) << '\n';
}

}  // namespace cranopt
