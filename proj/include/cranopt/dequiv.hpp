#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include <Eigen/Dense>

// Deterministic equivalents for a regularized zero-forcing downlink.
//
// For a fixed active antenna set A (|A| = S) and regularization factor
// alpha, the random SINRs and per-antenna transmit powers concentrate, as
// the system grows, around deterministic limits that depend only on the
// large-scale fading sigma_A.  This module computes those limits:
//
//   xi    K-vector fixed point        xi_l = (1/S) sum_m sigma_lm^2 / f_m,
//                                     f_m  = alpha + (1/S) sum_i sigma_im^2/(1+xi_i)
//   theta rows solve (I - D) theta_k = d_k   (interference coupling)
//   v     K-vector fixed point        v_l = 1/(alpha + (1/S) sum_m sigma_lm^2/psi_m),
//                                     psi_m = 1 + (1/S) sum_i sigma_im^2 v_i
//   phi   solves (alpha I + diag(delta) - C) phi = c(p)
//
// from which SINRs, per-antenna powers, effective user-pair gains, and the
// linear map p -> per-antenna power (matrix R) all follow in closed form.

namespace cranopt {

struct FixedPointOpts {
    // Per-component residual at the returned point; measured absolutely for
    // components up to one and relative to the component above that.
    double tol = 1e-10;
    int max_iter = 10000;
    double cond_limit = 1e12;  // condition-estimate guard for linear solves
    std::optional<Eigen::VectorXd> init;  // overrides the 1/alpha start
};

// Candidate transmit configuration: which antennas, how much regularization,
// what powers and user weights.  rho holds the full per-antenna budget
// vector; entries are picked out by active_set where needed.
struct Policy {
    std::vector<int> active_set;  // S distinct antenna indices, ascending
    double alpha = 0.0;
    Eigen::VectorXd p;        // K user powers, >= 0
    Eigen::VectorXd weights;  // K positive rate weights
    Eigen::VectorXd rho;      // per-antenna power budgets, > 0
};

// Everything deterministic-equivalent about a fixed (sigma_A, alpha) pair.
// p-dependent quantities (SINR, phi, powers) are functions of this state.
struct DeState {
    Eigen::MatrixXd sigma;  // K x S fading the state was built from
    double alpha = 0.0;

    Eigen::VectorXd xi;     // K
    Eigen::MatrixXd theta;  // K x K, row k = theta_k
    Eigen::VectorXd v;      // K
    Eigen::VectorXd f;      // S, f_m(xi)
    Eigen::VectorXd psi;    // S, psi_m(v)
    Eigen::VectorXd delta;  // K
    Eigen::MatrixXd c_mat;  // K x K coupling matrix C
    Eigen::MatrixXd gains;      // K x K effective gains g_kl
    Eigen::MatrixXd r_hat;      // K x S
    Eigen::MatrixXd r_bar;      // K x K
    Eigen::MatrixXd constraint;  // S x K: (constraint * p)_j = S * power_j(p)

    int num_users() const { return static_cast<int>(sigma.rows()); }
    int num_active() const { return static_cast<int>(sigma.cols()); }
};

Eigen::VectorXd solve_xi(const Eigen::MatrixXd& sigma_a, double alpha,
                         const FixedPointOpts& opts = {});

// Rows theta_k of the interference coupling system; `xi` must already
// satisfy its fixed point for the result to mean anything.
Eigen::MatrixXd solve_theta(const Eigen::MatrixXd& sigma_a, double alpha,
                            const Eigen::VectorXd& xi,
                            double cond_limit = 1e12);

Eigen::VectorXd solve_v(const Eigen::MatrixXd& sigma_a, double alpha,
                        const FixedPointOpts& opts = {});

// Assembles the full state: xi, theta, v, gains, constraint matrix.
DeState solve_de_state(const Eigen::MatrixXd& sigma_a, double alpha,
                       const FixedPointOpts& opts = {});

// Deterministic SINR of each user under powers p.
Eigen::VectorXd de_sinr(const DeState& de, const Eigen::VectorXd& p);

// Solves for phi(p), the correction term in the power map.
Eigen::VectorXd solve_phi(const DeState& de, const Eigen::VectorXd& p,
                          double cond_limit = 1e12);

// Deterministic per-antenna transmit powers under user powers p.
Eigen::VectorXd de_power(const DeState& de, const Eigen::VectorXd& p);

// Effective gain matrix: g_kk through xi, cross gains through theta.
Eigen::MatrixXd effective_gains(const Eigen::VectorXd& xi,
                                const Eigen::MatrixXd& theta, int num_active);

// S x K matrix R with (R p)_j = S * de_power(p)_j for every p >= 0.
Eigen::MatrixXd power_constraint_matrix(const DeState& de,
                                        double cond_limit = 1e12);

// sum_k w_k ln(1 + sinr_k) in nats.
double de_weighted_sum_rate(const DeState& de, const Eigen::VectorXd& p,
                            const Eigen::VectorXd& w);
double weighted_sum_rate_from_gains(const Eigen::MatrixXd& gains,
                                    const Eigen::VectorXd& p,
                                    const Eigen::VectorXd& w);

// Collocated antennas: all columns of sigma equal, everything collapses to
// the scalar fixed point u = 1/(alpha + (1/S) sum_i sigma_i^2/(1+sigma_i^2 u)).
double collocated_u(const Eigen::VectorXd& sigma_users, double alpha,
                    int num_active, const FixedPointOpts& opts = {});

struct CollocatedDe {
    double u = 0.0;
    double f12 = 0.0;      // (1/S) sum_i sigma_i^2 / (1+sigma_i^2 u)^2
    double fbar12 = 0.0;   // same sum weighted by p_i
    Eigen::VectorXd sinr;  // K
    double power = 0.0;    // common per-antenna transmit power
};

CollocatedDe collocated_de(const Eigen::VectorXd& sigma_users, double alpha,
                           int num_active, const Eigen::VectorXd& p,
                           const FixedPointOpts& opts = {});

}  // namespace cranopt
