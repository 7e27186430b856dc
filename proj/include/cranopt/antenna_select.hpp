#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "cranopt/power_opt.hpp"

// Active-set search on top of the tuned power allocation.
//
// Picking S of M antennas is combinatorial; the greedy heuristic here works
// from the large-scale fading alone.  It first keeps antennas that serve
// exactly one user strongly (no interference risk), then antennas with
// several strong links (cooperation candidates), then fills up by a
// single-user rate proxy, and finally sweeps the chosen set once, offering
// each member's slot to the most promising outsiders and keeping whichever
// set tunes to the higher weighted sum rate.

namespace cranopt {

struct SelectionOpts {
    // An antenna counts as strongly linked to user k when its squared gain
    // is at least kappa times the user's best squared gain.
    double kappa = 1.0 / 3.0;
    // Score replacement candidates at the incumbent set's alpha instead of
    // re-tuning alpha per candidate; one full tune still runs at the end.
    bool fast_mode = false;
    BisectionOpts tuning;
};

struct SelectionEvent {
    int phase = 0;      // 1 direct-link keep, 2 multi-link, 3 fill, 4 swap
    int antenna = -1;   // antenna the phase brought in
    int replaced = -1;  // antenna dropped by a phase-4 swap, -1 otherwise
    double rate = 0.0;  // tuned (or fixed-alpha) rate after the event; only
                        // phase-4 events carry one, earlier phases leave 0
};

struct SelectionResult {
    std::vector<int> active_set;  // ascending
    double alpha = 0.0;
    Eigen::VectorXd p;
    Eigen::VectorXd lambda;
    double rate = 0.0;
    int evaluations = 0;  // optimized-rate solves spent on the search
    std::vector<SelectionEvent> trace;
};

// Tunes alpha and the power allocation for one fixed antenna subset.
// sigma is K x M over all antennas; rho holds all M per-antenna budgets.
SelectionResult tune_active_set(const Eigen::MatrixXd& sigma,
                                const Eigen::VectorXd& w,
                                const Eigen::VectorXd& rho,
                                const std::vector<int>& active_set,
                                const BisectionOpts& tuning = {});

// Each user in turn claims its strongest unclaimed antenna until num_active
// are taken.  This is the classical association rule; it ignores both
// interference and cooperation and serves as the comparison floor.
std::vector<int> baseline_strongest(const Eigen::MatrixXd& sigma,
                                    int num_active);

// The four-phase greedy search described above.
SelectionResult select_antennas_s2(const Eigen::MatrixXd& sigma,
                                   const Eigen::VectorXd& w,
                                   const Eigen::VectorXd& rho, int num_active,
                                   const SelectionOpts& opts = {});

// Tunes every subset of size num_active and returns the best.  Refuses to
// start when the subset count exceeds max_subsets.
SelectionResult exhaustive_select(const Eigen::MatrixXd& sigma,
                                  const Eigen::VectorXd& w,
                                  const Eigen::VectorXd& rho, int num_active,
                                  std::uint64_t max_subsets,
                                  const BisectionOpts& tuning = {});

}  // namespace cranopt
