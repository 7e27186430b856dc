#pragma once

#include <cstdint>
#include <string>

#include <Eigen/Dense>

// Downlink deployment geometry: a square service area of side length Rc
// with N*N remote antennas on an even grid and K single-antenna users
// dropped uniformly at random.  Large-scale fading between user k and
// antenna m is the distance-based path gain
//
//     sigma_km = sqrt(g0) * r_km^(-zeta/2),
//
// and a channel realization draws H_km = sigma_km * W_km with W_km
// i.i.d. unit-variance circularly-symmetric complex Gaussian.

namespace cranopt {

struct Scenario {
    double side_length = 0.0;  // Rc > 0, meters
    int grid_n = 0;            // antennas per grid axis; 0 for scattered layouts
    int num_users = 0;         // K
    int num_active = 0;        // S, antennas allowed to transmit (K <= S <= M)
    double g0 = 1.0;           // path gain at unit distance
    double zeta = 2.5;         // path-loss exponent, > 2
    std::uint64_t seed = 0;

    Eigen::MatrixX2d user_positions;     // K x 2
    Eigen::MatrixX2d antenna_positions;  // M x 2; grid layouts use m = i*N + j

    int num_antennas() const {
        return antenna_positions.rows() > 0
                   ? static_cast<int>(antenna_positions.rows())
                   : grid_n * grid_n;
    }
};

struct LargeScaleFading {
    Eigen::MatrixXd sigma;  // K x M amplitude gains (not squared)
};

struct ChannelRealization {
    Eigen::MatrixXcd H;           // K x S
    Eigen::MatrixXcd H_normalized;  // H / sqrt(S)
};

// Builds the grid deployment and draws user positions from `seed`.
// Antenna m = i*grid_n + j sits at ((i+1/2), (j+1/2)) * side/grid_n.
Scenario generate_grid_scenario(int grid_n, int num_users, int num_active,
                                double side_length, double g0, double zeta,
                                std::uint64_t seed);

// Same, but with num_antennas sites dropped uniformly at random, for antenna
// counts that do not fill a square grid.  Antenna and user draws come from
// separate substreams of `seed`.
Scenario generate_uniform_scenario(int num_antennas, int num_users,
                                   int num_active, double side_length,
                                   double g0, double zeta, std::uint64_t seed);

// Distance-based fading amplitudes for every (user, antenna) pair.
// Throws if a user sits exactly on an antenna (zero distance).
LargeScaleFading pathloss_matrix(const Scenario& sc);

// All antennas at one site: every column equals `sigma_users`.
LargeScaleFading collocated_fading(const Eigen::VectorXd& sigma_users,
                                   int num_antennas);

// i.i.d. complex-Gaussian channel draw for trial `trial` of stream `seed`.
// Entries are consumed row-major, so the draw is a pure function of
// (sigma dimensions, seed, trial).
ChannelRealization sample_channel(const Eigen::MatrixXd& sigma,
                                  std::uint64_t seed, std::uint64_t trial);

// Ratio between each user's strongest ("direct") gain and the strongest
// gain it sees toward any other user's direct antenna, minimized over
// users.  Large values mean the users decouple into independent links.
// Requires K >= 2; ties in the argmax go to the lowest antenna index.
double decoupling_ratio(const Eigen::MatrixXd& sigma);

// Closed-form lower bound on Pr(decoupling ratio > eta0) for K users
// dropped uniformly among M grid antennas, clamped to [0, 1].
double decoupling_probability_bound(int num_users, double zeta, double eta0,
                                    int num_antennas);

// JSON (de)serialization of the scenario description.  Writing a scenario
// always materializes user and antenna positions, so a round trip is exact.
Scenario load_scenario(const std::string& path);
void save_scenario(const Scenario& sc, const std::string& path);
Scenario scenario_from_json_text(const std::string& text);
std::string scenario_to_json_text(const Scenario& sc);

}  // namespace cranopt
