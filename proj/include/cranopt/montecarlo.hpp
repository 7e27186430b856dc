#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "cranopt/antenna_select.hpp"
#include "cranopt/dequiv.hpp"
#include "cranopt/scenario.hpp"

// Channel-level simulation of the regularized zero-forcing downlink.
//
// The deterministic equivalents promise that SINRs and antenna powers
// concentrate for large systems; this module measures how close a finite
// system actually gets.  Per realization it evaluates the exact SINR of
// each user (through leave-one-out resolvents) and the exact per-antenna
// transmit powers, then averages over independent channel draws.

namespace cranopt {

// Precoder (H^H H + alpha S I)^{-1} H^H diag(sqrt(p)) for the raw channel H.
// Column k carries user k's stream; antenna j transmits at the squared norm
// of row j.  Exposed mainly as a reference for tests; the fast paths below
// avoid forming it.
Eigen::MatrixXcd rzf_precoder(const Eigen::MatrixXcd& h, double alpha,
                              const Eigen::VectorXd& p);

// Exact per-user SINRs for one normalized channel draw (rows scaled by
// 1/sqrt(S)).  Works entirely with K x K Gram matrices.
Eigen::VectorXd empirical_sinr(const Eigen::MatrixXcd& h_norm, double alpha,
                               const Eigen::VectorXd& p);

// Same quantity evaluated the slow way, one S x S leave-one-out solve per
// user.  Kept as an independent path for cross-checking.
Eigen::VectorXd empirical_sinr_direct(const Eigen::MatrixXcd& h_norm,
                                      double alpha, const Eigen::VectorXd& p);

// Instantaneous transmit power of each active antenna for one draw.
Eigen::VectorXd empirical_power(const Eigen::MatrixXcd& h_norm, double alpha,
                                const Eigen::VectorXd& p);

struct McReport {
    int trials = 0;
    double avg_rate = 0.0;    // mean weighted sum rate over draws, nats
    double rate_stderr = 0.0; // standard error of that mean
    Eigen::VectorXd avg_powers;
    double de_rate = 0.0;
    Eigen::VectorXd de_powers;
    double rel_rate_error = 0.0;   // |de - mc| / mc
    double rel_power_error = 0.0;  // l2 distance over l2 norm
};

// Runs `trials` independent channel draws under a fixed policy and compares
// the averages against the deterministic equivalents.  `sigma_a` holds the
// fading of the already-selected antennas (K x S), so `policy.active_set` is
// not consulted here; alpha, p and weights are.  Throws NumericalError when
// the simulated rate averages to zero, since the relative error would divide
// by it.
McReport mc_validate(const Eigen::MatrixXd& sigma_a, const Policy& policy,
                     int trials, std::uint64_t seed,
                     const FixedPointOpts& fp = {});

struct CapacityPoint {
    int num_antennas = 0;
    double mean_rate = 0.0;     // simulated optimized rate, averaged over placements
    double mean_de_rate = 0.0;  // deterministic-equivalent counterpart
};

struct CapacityProbe {
    std::vector<CapacityPoint> points;  // one per requested antenna count
    double slope = 0.0;           // least-squares slope of mean_rate vs ln(M)
    double per_user_slope = 0.0;  // slope divided by the user count
};

// Measures how the optimized sum rate grows when more antennas are spread
// over the same area while S and K stay fixed.  For each antenna count the
// probe redraws `placements` scenarios, picks S antennas greedily, tunes the
// regularizer and powers, and validates the tuned policy over `trials`
// channel draws.  More antennas shorten the best user-antenna distances, so
// the rate should climb roughly linearly in ln(M); the fitted slope is the
// summary statistic.  Counts with an integer square root are laid out on a
// grid, the rest uniformly at random.
CapacityProbe mc_sum_rate_capacity_probe(const Scenario& base,
                                         const Eigen::VectorXd& w,
                                         double rho_per_antenna,
                                         const std::vector<int>& m_list,
                                         int placements, int trials,
                                         std::uint64_t seed,
                                         const SelectionOpts& selection = {});

}  // namespace cranopt
