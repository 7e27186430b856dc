#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "cranopt/dequiv.hpp"
#include "cranopt/errors.hpp"
#include "cranopt/power_opt.hpp"
#include "cranopt/rng.hpp"
#include "cranopt/scenario.hpp"

using namespace cranopt;

namespace {

constexpr double kG0 = 31622776.601683795;  // unit gain at 1 km

struct Instance {
    Eigen::MatrixXd gains;
    Eigen::MatrixXd constraint;
    Eigen::VectorXd rho;
    Eigen::VectorXd w;
    DeState de;
};

// Random but physically plausible problem data: a scattered deployment,
// all antennas active, DE evaluated at a random regularization level.
Instance make_instance(int k, int s, std::uint64_t seed) {
    auto eng = rng::substream(seed, 17);
    const Scenario sc = generate_uniform_scenario(s, k, s, 2000.0, kG0, 2.5,
                                                  seed);
    const Eigen::MatrixXd sigma = pathloss_matrix(sc).sigma;
    const double alpha = std::pow(10.0, -1.5 + 2.0 * rng::uniform01(eng));
    const double rho_val = std::pow(10.0, 1.5 * rng::uniform01(eng));

    Instance inst;
    inst.de = solve_de_state(sigma, alpha);
    inst.gains = inst.de.gains;
    inst.constraint = inst.de.constraint;
    inst.rho = Eigen::VectorXd::Constant(s, rho_val);
    inst.w = Eigen::VectorXd::Ones(k);
    for (int i = 0; i < k; ++i) inst.w(i) = 0.5 + rng::uniform01(eng);
    return inst;
}

// Adaptive 2-D grid search over the feasible box, refined around the best
// cell.  Independent of the solver: rates come straight from the gains.
double grid_oracle_k2(const Eigen::MatrixXd& gains,
                      const Eigen::MatrixXd& constraint,
                      const Eigen::VectorXd& rho, const Eigen::VectorXd& w) {
    REQUIRE(gains.rows() == 2);
    double lo0 = 0.0, lo1 = 0.0;
    double hi0 = (rho.array() / constraint.col(0).array()).minCoeff();
    double hi1 = (rho.array() / constraint.col(1).array()).minCoeff();
    double best = 0.0, bp0 = 0.0, bp1 = 0.0;
    const int n = 400;
    for (int pass = 0; pass < 5; ++pass) {
        best = -1.0;
        for (int i = 0; i <= n; ++i) {
            for (int j = 0; j <= n; ++j) {
                Eigen::VectorXd p(2);
                p << lo0 + (hi0 - lo0) * i / n, lo1 + (hi1 - lo1) * j / n;
                if (((constraint * p).array() > rho.array() * (1.0 + 1e-12))
                        .any())
                    continue;
                const double rate = weighted_sum_rate_from_gains(gains, p, w);
                if (rate > best) {
                    best = rate;
                    bp0 = p(0);
                    bp1 = p(1);
                }
            }
        }
        const double s0 = (hi0 - lo0) / n, s1 = (hi1 - lo1) / n;
        lo0 = std::max(0.0, bp0 - 2.0 * s0);
        hi0 = bp0 + 2.0 * s0;
        lo1 = std::max(0.0, bp1 - 2.0 * s1);
        hi1 = bp1 + 2.0 * s1;
    }
    return best;
}

}  // namespace

TEST_CASE("rate gradient matches finite differences") {
    const Instance inst = make_instance(4, 7, 301);
    Eigen::VectorXd p(4);
    p << 0.4, 1.2, 0.05, 2.3;

    const Eigen::VectorXd grad = rate_gradient(inst.gains, inst.w, p);
    const double h = 1e-6;
    for (int k = 0; k < 4; ++k) {
        Eigen::VectorXd hi = p, lo = p;
        hi(k) += h;
        lo(k) -= h;
        const double fd = (weighted_sum_rate_from_gains(inst.gains, hi, inst.w) -
                           weighted_sum_rate_from_gains(inst.gains, lo, inst.w)) /
                          (2.0 * h);
        CHECK(grad(k) == doctest::Approx(fd).epsilon(1e-6));
    }
}

TEST_CASE("wmmse meets its certificate on random instances") {
    for (std::uint64_t seed : {1u, 2u, 3u, 4u, 5u, 6u, 7u, 8u}) {
        auto eng = rng::substream(seed, 99);
        const int k = 1 + static_cast<int>(eng() % 6);
        const int s = k + static_cast<int>(eng() % 8);
        const Instance inst = make_instance(k, s, seed);

        WmmseOpts opts;
        opts.keep_trace = true;
        const WmmseResult res =
            wmmse_power(inst.gains, inst.constraint, inst.rho, inst.w, opts);

        INFO("seed ", seed, " k=", k, " s=", s);
        CHECK(res.converged);
        CHECK(res.cert.max_residual() <= 1e-8);
        CHECK((res.p.array() >= 0.0).all());
        // Feasible up to certificate slack.
        const Eigen::VectorXd load = inst.constraint * res.p;
        CHECK((load.array() <= inst.rho.array() * (1.0 + 1e-9)).all());
        // Multipliers price only tight rows.
        for (int j = 0; j < s; ++j)
            if (res.lambda(j) > 1e-9)
                CHECK(load(j) >= inst.rho(j) * (1.0 - 1e-6));
        // Each block update minimizes the surrogate cost, so the trace
        // must come down (within roundoff) at every step.
        bool monotone = true;
        for (std::size_t t = 1; t < res.objective_trace.size(); ++t)
            monotone = monotone && res.objective_trace[t] <=
                                       res.objective_trace[t - 1] + 1e-10;
        CHECK(monotone);
    }
}

TEST_CASE("wmmse matches a 2-D grid oracle on two-user instances") {
    for (std::uint64_t seed : {21u, 22u, 23u}) {
        auto eng = rng::substream(seed, 99);
        const int s = 2 + static_cast<int>(eng() % 5);
        const Instance inst = make_instance(2, s, seed);

        const WmmseResult res =
            wmmse_power(inst.gains, inst.constraint, inst.rho, inst.w);
        const double oracle =
            grid_oracle_k2(inst.gains, inst.constraint, inst.rho, inst.w);

        INFO("seed ", seed, " s=", s);
        CHECK(res.rate >= oracle - 1e-6);
        CHECK(res.rate <= oracle + 1e-6);
    }
}

TEST_CASE("wmmse drives an overpriced user to exactly zero power") {
    // On this deployment the optimum parks user 0 at the boundary; the
    // multiplicative surrogate update alone only decays it geometrically,
    // so this pins the polish step's boundary handling.  The rate value
    // was confirmed against a dense 2-D grid search to ten digits.
    const Scenario sc = generate_grid_scenario(3, 2, 3, 2000.0, kG0, 2.5, 7);
    const Eigen::MatrixXd sigma = pathloss_matrix(sc).sigma;
    Eigen::MatrixXd sa(2, 3);
    const int set[3] = {1, 2, 4};
    for (int c = 0; c < 3; ++c) sa.col(c) = sigma.col(set[c]);

    const DeState de = solve_de_state(sa, 3.0);
    const Eigen::VectorXd rho = Eigen::VectorXd::Constant(3, 10.0);
    const Eigen::VectorXd w = Eigen::VectorXd::Ones(2);
    const WmmseResult res = wmmse_power(de.gains, de.constraint, rho, w);

    CHECK(res.converged);
    CHECK(res.p(0) == 0.0);
    CHECK(res.rate == doctest::Approx(5.022116865).epsilon(1e-8));
    CHECK(res.cert.max_residual() <= 1e-8);
}

TEST_CASE("kkt residual flags the defects it is meant to flag") {
    Eigen::MatrixXd gains(2, 2);
    gains << 1.0, 0.1, 0.1, 2.0;
    Eigen::MatrixXd constraint(1, 2);
    constraint << 1.0, 1.0;
    const Eigen::VectorXd rho = Eigen::VectorXd::Constant(1, 4.0);
    const Eigen::VectorXd w = Eigen::VectorXd::Ones(2);

    // A solved instance scores clean.
    const WmmseResult res = wmmse_power(gains, constraint, rho, w);
    CHECK(kkt_residual(gains, constraint, rho, w, res.p, res.lambda)
              .max_residual() <= 1e-8);

    // Unpriced interior point: pure gradient shows up as stationarity.
    Eigen::VectorXd p = Eigen::VectorXd::Constant(2, 0.5);
    Eigen::VectorXd lambda = Eigen::VectorXd::Zero(1);
    const KktCertificate cert =
        kkt_residual(gains, constraint, rho, w, p, lambda);
    const Eigen::VectorXd grad = rate_gradient(gains, w, p);
    CHECK(cert.stationarity ==
          doctest::Approx(grad.cwiseAbs().maxCoeff()).epsilon(1e-12));

    // A multiplier on a slack row is a complementarity defect.
    lambda(0) = 1.0;
    CHECK(kkt_residual(gains, constraint, rho, w, p, lambda)
              .complementarity_power > 0.1);
}

TEST_CASE("alpha derivative of the tuned rate matches finite differences") {
    const Scenario sc =
        generate_uniform_scenario(6, 3, 6, 2000.0, kG0, 2.5, 11);
    const Eigen::MatrixXd sigma = pathloss_matrix(sc).sigma;
    const Eigen::VectorXd rho = Eigen::VectorXd::Constant(6, 10.0);
    const Eigen::VectorXd w = Eigen::VectorXd::Ones(3);

    for (double alpha : {0.08, 0.5, 2.0}) {
        FixedPointOpts fp;
        fp.tol = 1e-13;
        const DeState de = solve_de_state(sigma, alpha, fp);
        const WmmseResult res =
            wmmse_power(de.gains, de.constraint, rho, w);
        REQUIRE(res.converged);

        const DeDerivatives der = de_derivatives_wrt_alpha(de);
        double slope = 0.0;
        bool degenerate = false;
        try {
            const Eigen::VectorXd dp = sensitivity_dp_dalpha(
                de, der, res.p, res.lambda, res.cert.nu, rho, w);
            slope = dI_dalpha(de, der, res.p, dp, w);
        } catch (const DegenerateActiveSet&) {
            degenerate = true;
        }
        if (degenerate) continue;  // FD comparison needs a stable active set

        const double h = 1e-5 * alpha;
        double rates[2];
        int idx = 0;
        for (double a : {alpha + h, alpha - h}) {
            const DeState d2 = solve_de_state(sigma, a, fp);
            rates[idx++] =
                wmmse_power(d2.gains, d2.constraint, rho, w).rate;
        }
        const double fd = (rates[0] - rates[1]) / (2.0 * h);
        INFO("alpha=", alpha, " slope=", slope, " fd=", fd);
        CHECK(std::abs(slope - fd) <=
              1e-3 * std::max({std::abs(fd), std::abs(slope), 1e-6}));
    }
}

TEST_CASE("state derivatives match finite differences componentwise") {
    const Scenario sc =
        generate_uniform_scenario(5, 2, 5, 2000.0, kG0, 2.5, 13);
    const Eigen::MatrixXd sigma = pathloss_matrix(sc).sigma;
    const double alpha = 0.6;
    FixedPointOpts fp;
    fp.tol = 1e-13;

    const DeState de = solve_de_state(sigma, alpha, fp);
    const DeDerivatives der = de_derivatives_wrt_alpha(de);
    const double h = 1e-5 * alpha;
    const DeState hi = solve_de_state(sigma, alpha + h, fp);
    const DeState lo = solve_de_state(sigma, alpha - h, fp);

    auto check_mat = [&](const Eigen::MatrixXd& analytic,
                         const Eigen::MatrixXd& mhi,
                         const Eigen::MatrixXd& mlo, const char* label) {
        const Eigen::MatrixXd fd = (mhi - mlo) / (2.0 * h);
        const double scale = std::max(fd.cwiseAbs().maxCoeff(), 1e-12);
        INFO(label);
        CHECK((analytic - fd).cwiseAbs().maxCoeff() <= 1e-6 * scale);
    };
    check_mat(der.dxi, hi.xi, lo.xi, "dxi");
    check_mat(der.dtheta, hi.theta, lo.theta, "dtheta");
    check_mat(der.dv, hi.v, lo.v, "dv");
    check_mat(der.ddelta, hi.delta, lo.delta, "ddelta");
    check_mat(der.dc_mat, hi.c_mat, lo.c_mat, "dc_mat");
    check_mat(der.dgains, hi.gains, lo.gains, "dgains");
    check_mat(der.dr_hat, hi.r_hat, lo.r_hat, "dr_hat");
    check_mat(der.dr_bar, hi.r_bar, lo.r_bar, "dr_bar");
    check_mat(der.dconstraint, hi.constraint, lo.constraint, "dconstraint");
}

TEST_CASE("sensitivity solver refuses an untrustworthy system") {
    const Instance inst = make_instance(3, 5, 401);
    const WmmseResult res =
        wmmse_power(inst.gains, inst.constraint, inst.rho, inst.w);
    const DeDerivatives der = de_derivatives_wrt_alpha(inst.de);
    SensitivityOpts opts;
    opts.cond_limit = 1.0 + 1e-9;  // nothing passes this
    CHECK_THROWS_AS(sensitivity_dp_dalpha(inst.de, der, res.p, res.lambda,
                                          res.cert.nu, inst.rho, inst.w, opts),
                    DegenerateActiveSet);
}

TEST_CASE("alpha tuner finds the global basin on a two-mode landscape") {
    // This deployment's rate-vs-alpha curve peaks near 0.3, dips, then
    // climbs again toward the upper endpoint; refining without a scan used
    // to return the endpoint mode (rate 5.29) instead of the true one.
    const Scenario sc = generate_grid_scenario(3, 2, 3, 2000.0, kG0, 2.5, 7);
    const Eigen::MatrixXd sigma = pathloss_matrix(sc).sigma;
    Eigen::MatrixXd sa(2, 3);
    const int set[3] = {1, 2, 4};
    for (int c = 0; c < 3; ++c) sa.col(c) = sigma.col(set[c]);
    const Eigen::VectorXd rho = Eigen::VectorXd::Constant(3, 10.0);
    const Eigen::VectorXd w = Eigen::VectorXd::Ones(2);

    const BisectionResult res = bisection_alpha(sa, w, rho);
    CHECK(res.boundary == 0);
    CHECK(res.alpha > 0.1);
    CHECK(res.alpha < 0.6);
    CHECK(res.rate >= 6.4519);
    CHECK(res.cert.max_residual() <= 1e-8);
}

TEST_CASE("alpha tuner beats a fresh 50-point grid within tolerance") {
    for (std::uint64_t seed : {31u, 32u}) {
        const Scenario sc =
            generate_uniform_scenario(5, 2, 5, 2000.0, kG0, 2.5, seed);
        const Eigen::MatrixXd sigma = pathloss_matrix(sc).sigma;
        const Eigen::VectorXd rho = Eigen::VectorXd::Constant(5, 10.0);
        const Eigen::VectorXd w = Eigen::VectorXd::Ones(2);

        const BisectionResult res = bisection_alpha(sigma, w, rho);

        BisectionOpts opts;
        double grid_best = 0.0;
        for (int i = 0; i < 50; ++i) {
            const double a =
                opts.alpha_min *
                std::pow(opts.alpha_max / opts.alpha_min, i / 49.0);
            const DeState de = solve_de_state(sigma, a);
            grid_best = std::max(
                grid_best,
                wmmse_power(de.gains, de.constraint, rho, w).rate);
        }
        INFO("seed ", seed);
        CHECK(res.rate >= grid_best - 1e-4);
    }
}

TEST_CASE("alpha tuner reports boundary pins on one-sided windows") {
    const Scenario sc = generate_grid_scenario(3, 2, 3, 2000.0, kG0, 2.5, 7);
    const Eigen::MatrixXd sigma = pathloss_matrix(sc).sigma;
    Eigen::MatrixXd sa(2, 3);
    const int set[3] = {0, 1, 4};
    for (int c = 0; c < 3; ++c) sa.col(c) = sigma.col(set[c]);
    const Eigen::VectorXd rho = Eigen::VectorXd::Constant(3, 10.0);
    const Eigen::VectorXd w = Eigen::VectorXd::Ones(2);

    // The rate on this subset peaks near alpha = 0.3 and falls on both
    // sides, so a window strictly right of the peak pins to its left edge
    // and a window strictly left of it pins to its right edge.
    BisectionOpts falling;
    falling.alpha_min = 0.4;
    falling.alpha_max = 2.0;
    const BisectionResult left = bisection_alpha(sa, w, rho, falling);
    CHECK(left.boundary == -1);
    CHECK(left.alpha == falling.alpha_min);

    BisectionOpts rising;
    rising.alpha_min = 0.001;
    rising.alpha_max = 0.05;
    const BisectionResult right = bisection_alpha(sa, w, rho, rising);
    CHECK(right.boundary == +1);
    CHECK(right.alpha == rising.alpha_max);
}

TEST_CASE("water filling meets its budget exactly and matches the iterative solver") {
    for (std::uint64_t seed : {41u, 42u, 43u}) {
        auto eng = rng::substream(seed, 7);
        const int k = 2 + static_cast<int>(eng() % 4);
        Eigen::VectorXd su(k);
        for (int i = 0; i < k; ++i) su(i) = 0.3 + 2.0 * rng::uniform01(eng);
        Eigen::VectorXd w(k);
        for (int i = 0; i < k; ++i) w(i) = 0.5 + rng::uniform01(eng);
        const int s = 8;
        const double alpha = 0.2 + rng::uniform01(eng);
        const double target = 5.0 + 10.0 * rng::uniform01(eng);

        const WaterfillResult wf =
            waterfill_collocated(su, alpha, target, w, s);
        INFO("seed ", seed, " k=", k);
        CHECK(std::abs(wf.constraint_value - target) <= 1e-8 * target);
        CHECK((wf.p.array() >= 0.0).all());

        // Same objective, iterative path: the closed form optimizes the
        // decoupled rate with the budget folded into each denominator.
        const CollocatedDe co = collocated_de(su, alpha, s, wf.p);
        const Eigen::ArrayXd s2 = su.array().square();
        const Eigen::ArrayXd den2 = (1.0 + s2 * co.u).square();
        const double af = alpha + co.f12;
        Eigen::MatrixXd gains = Eigen::MatrixXd::Zero(k, k);
        for (int i = 0; i < k; ++i)
            gains(i, i) = s2(i) * s2(i) * co.u * co.u /
                          (s2(i) * target + den2(i));
        Eigen::MatrixXd constraint(1, k);
        for (int i = 0; i < k; ++i)
            constraint(0, i) = s2(i) * co.u / (s * den2(i) * af);
        const Eigen::VectorXd rho = Eigen::VectorXd::Constant(1, target);

        const WmmseResult it = wmmse_power(gains, constraint, rho, w);
        REQUIRE(it.converged);
        const double closed_rate =
            (w.array() *
             (1.0 + gains.diagonal().array() * wf.p.array()).log())
                .sum();
        CHECK(closed_rate == doctest::Approx(it.rate).epsilon(1e-6));
        const double pscale = wf.p.maxCoeff();
        for (int i = 0; i < k; ++i)
            CHECK(std::abs(wf.p(i) - it.p(i)) <= 1e-6 * pscale);
    }
}

TEST_CASE("wmmse rejects malformed inputs") {
    Eigen::MatrixXd gains = Eigen::MatrixXd::Identity(2, 2);
    Eigen::MatrixXd constraint = Eigen::MatrixXd::Ones(1, 2);
    Eigen::VectorXd rho = Eigen::VectorXd::Ones(1);
    Eigen::VectorXd w = Eigen::VectorXd::Ones(2);

    CHECK_THROWS_AS(
        wmmse_power(gains, constraint, -rho, w), std::invalid_argument);
    CHECK_THROWS_AS(
        wmmse_power(gains, constraint, rho, -w), std::invalid_argument);
    CHECK_THROWS_AS(wmmse_power(gains, Eigen::MatrixXd::Ones(1, 3), rho, w),
                    std::invalid_argument);
    Eigen::MatrixXd bad_gains = gains;
    bad_gains(0, 1) = -0.2;
    CHECK_THROWS_AS(wmmse_power(bad_gains, constraint, rho, w),
                    std::invalid_argument);
}
