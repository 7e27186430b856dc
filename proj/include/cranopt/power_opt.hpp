#pragma once

#include <vector>

#include <Eigen/Dense>

#include "cranopt/dequiv.hpp"

// Power allocation and regularization tuning on top of the deterministic
// equivalents: a block-coordinate weighted-MMSE solver for the weighted
// sum rate under linear per-antenna power constraints, first-order
// sensitivity of the optimum with respect to alpha, and a sign-driven
// bisection that tunes alpha itself.

namespace cranopt {

struct KktCertificate {
    double stationarity = 0.0;
    double complementarity_power = 0.0;
    double complementarity_nonneg = 0.0;
    Eigen::VectorXd nu;  // multipliers of p >= 0, clamped nonnegative

    double max_residual() const {
        return std::max({stationarity, complementarity_power,
                         complementarity_nonneg});
    }
};

struct WmmseOpts {
    double rel_tol = 1e-9;      // stop when the surrogate objective stalls
    int max_outer = 2000;
    int dual_max_iter = 500;    // projected-subgradient budget per power step
    double dual_gap_tol = 1e-12;  // relative duality-gap target per power step
    double kkt_target = 1e-8;   // early exit once the certificate is this good
    bool keep_trace = false;
};

struct WmmseResult {
    Eigen::VectorXd p;       // user powers, q .* q
    Eigen::VectorXd lambda;  // per-antenna constraint multipliers
    KktCertificate cert;
    double rate = 0.0;       // weighted sum rate at p, nats
    double objective = 0.0;  // final surrogate objective value
    double dual_gap = 0.0;   // duality gap of the last power step
    int iterations = 0;
    bool converged = false;  // false means the iteration cap was hit
    std::vector<double> objective_trace;
};

// Weighted sum-rate maximization over p >= 0 subject to (R p)_j <= rho_j.
// Alternates closed-form receiver/weight updates with an exact transmit
// power step solved through the Lagrange dual.
WmmseResult wmmse_power(const Eigen::MatrixXd& gains,
                        const Eigen::MatrixXd& constraint,
                        const Eigen::VectorXd& rho, const Eigen::VectorXd& w,
                        const WmmseOpts& opts = {});

// Gradient of the weighted sum rate in p.
Eigen::VectorXd rate_gradient(const Eigen::MatrixXd& gains,
                              const Eigen::VectorXd& w,
                              const Eigen::VectorXd& p);

// First-order optimality scorecard for a (p, lambda) pair.
KktCertificate kkt_residual(const Eigen::MatrixXd& gains,
                            const Eigen::MatrixXd& constraint,
                            const Eigen::VectorXd& rho,
                            const Eigen::VectorXd& w, const Eigen::VectorXd& p,
                            const Eigen::VectorXd& lambda,
                            double p_zero_tol = 1e-10);

// alpha-derivatives of every deterministic-equivalent quantity, obtained
// by differentiating the fixed points and linear systems implicitly.
struct DeDerivatives {
    Eigen::VectorXd dxi;
    Eigen::MatrixXd dtheta;
    Eigen::VectorXd dv;
    Eigen::VectorXd ddelta;
    Eigen::MatrixXd dc_mat;
    Eigen::MatrixXd dgains;
    Eigen::MatrixXd dr_hat;
    Eigen::MatrixXd dr_bar;
    Eigen::MatrixXd dconstraint;
};

DeDerivatives de_derivatives_wrt_alpha(const DeState& de,
                                       double cond_limit = 1e12);

struct SensitivityOpts {
    double active_tol = 1e-7;     // constraint active iff slack < tol * rho_j
    double p_zero_tol = 1e-10;    // p_k zero iff below tol * max(p)
    double degenerate_tol = 1e-8;  // strict-complementarity margin
    double cond_limit = 1e12;
};

// dp/dalpha of the KKT point, by differentiating the active-set KKT
// system.  Throws DegenerateActiveSet when strict complementarity fails
// (active constraint with zero multiplier or vanishing power with zero
// reduced cost), in which case callers fall back to finite differences.
Eigen::VectorXd sensitivity_dp_dalpha(const DeState& de,
                                      const DeDerivatives& der,
                                      const Eigen::VectorXd& p,
                                      const Eigen::VectorXd& lambda,
                                      const Eigen::VectorXd& nu,
                                      const Eigen::VectorXd& rho,
                                      const Eigen::VectorXd& w,
                                      const SensitivityOpts& opts = {});

// Total derivative of the optimized weighted sum rate with respect to
// alpha, combining gain derivatives with the power sensitivity dp.
double dI_dalpha(const DeState& de, const DeDerivatives& der,
                 const Eigen::VectorXd& p, const Eigen::VectorXd& dp,
                 const Eigen::VectorXd& w);

struct BisectionOpts {
    double alpha_min = 1e-6;
    double alpha_max = 10.0;
    double width = 0.0;      // 0 selects 1e-4 * (alpha_max - alpha_min)
    double fd_delta = 1e-5;  // relative step of the finite-difference fallback
    int grid_points = 50;    // log-spaced pre-scan density, at least 2
    WmmseOpts wmmse;
    FixedPointOpts fp;
};

struct AlphaEval {
    double alpha = 0.0;
    double rate = 0.0;
    double slope = 0.0;      // d(rate)/d(alpha) at the optimized powers
    bool fd_fallback = false;
};

struct BisectionResult {
    double alpha = 0.0;
    Eigen::VectorXd p;
    Eigen::VectorXd lambda;
    KktCertificate cert;
    double rate = 0.0;
    int boundary = 0;  // -1 pinned at alpha_min, +1 at alpha_max, 0 interior
    std::vector<AlphaEval> trace;
};

// Tunes alpha in two phases.  A log-spaced scan first locates the best
// basin; the optimized rate is not unimodal in alpha (re-optimized powers
// reorganize with the active set, and a second mode often appears at the
// high-regularization end), so refining without a scan can settle on the
// wrong mode.  Bisection on the sign of the rate derivative then narrows
// the bracketing cells to |b - a| <= width.  Returns the best point seen
// across both phases; boundary reports an endpoint argmax whose
// derivative points outward.
BisectionResult bisection_alpha(const Eigen::MatrixXd& sigma_a,
                                const Eigen::VectorXd& w,
                                const Eigen::VectorXd& rho_a,
                                const BisectionOpts& opts = {});

struct WaterfillResult {
    Eigen::VectorXd p;
    double lambda = 0.0;           // water level multiplier
    double rate = 0.0;             // weighted sum rate at p, nats
    double constraint_value = 0.0;  // should equal the power target
    CollocatedDe de;
};

// Closed-form power allocation for collocated antennas: water-filling
// against the single effective power constraint, with the water level
// found by bisection so the constraint holds with equality.
WaterfillResult waterfill_collocated(const Eigen::VectorXd& sigma_users,
                                     double alpha, double power_target,
                                     const Eigen::VectorXd& w, int num_active,
                                     const FixedPointOpts& fp = {});

}  // namespace cranopt
