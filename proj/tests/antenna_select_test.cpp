#include <doctest.h>

#include <algorithm>
#include <vector>

#include "cranopt/antenna_select.hpp"
#include "cranopt/rng.hpp"
#include "cranopt/scenario.hpp"

using namespace cranopt;

namespace {

Eigen::MatrixXd sigma_from(const Eigen::MatrixX2d& users,
                           const Eigen::MatrixX2d& ants) {
    Scenario sc;
    sc.side_length = 2.0;
    sc.num_users = static_cast<int>(users.rows());
    sc.num_active = 2;
    sc.g0 = 1.0;
    sc.zeta = 2.5;
    sc.user_positions = users;
    sc.antenna_positions = ants;
    return pathloss_matrix(sc).sigma;
}

// Three antennas on a 2 km square, two users between them.  Antenna 2 is
// user 1's strongest link but sits almost as close to user 2, so any pair
// containing it wastes most of its power steering around the other user;
// the pair {1, 3} leaves each user one clean antenna.
Eigen::MatrixXd interference_trap_sigma() {
    Eigen::MatrixX2d ants(3, 2), users(2, 2);
    ants << 0.06, 1.00, 0.92, 1.00, 1.80, 1.00;
    users << 0.50, 1.00, 1.40, 1.00;
    return sigma_from(users, ants);
}

// Antenna 2 hovers above both (nearby) users with all four of its pair's
// links strong, so {1, 2} serves both users coherently and beats the
// per-user association {1, 3} even though antenna 3 is user 2's strongest.
Eigen::MatrixXd cooperation_sigma() {
    Eigen::MatrixX2d ants(3, 2), users(2, 2);
    ants << 0.30, 1.00, 0.818, 1.44, 1.82, 1.00;
    users << 0.74, 1.00, 1.26, 1.00;
    return sigma_from(users, ants);
}

}  // namespace

TEST_CASE("baseline association is round-robin strongest unclaimed") {
    Eigen::MatrixXd sigma(2, 4);
    sigma << 1.0, 3.0, 2.0, 0.5,
             0.8, 4.0, 0.3, 2.5;
    // User 0 claims antenna 1; user 1 wanted it too and falls back to 3.
    CHECK(baseline_strongest(sigma, 2) == std::vector<int>({1, 3}));
    // With room for three, the next round gives user 0 its second choice.
    CHECK(baseline_strongest(sigma, 3) == std::vector<int>({1, 2, 3}));

    CHECK_THROWS_AS(baseline_strongest(sigma, 0), std::invalid_argument);
    CHECK_THROWS_AS(baseline_strongest(sigma, 5), std::invalid_argument);
}

TEST_CASE("selection escapes the strong-interferer trap") {
    const Eigen::MatrixXd sigma = interference_trap_sigma();
    const Eigen::VectorXd w = Eigen::VectorXd::Ones(2);
    const Eigen::VectorXd rho = Eigen::VectorXd::Constant(3, 10.0);

    // Per-user association walks straight into the shared antenna.
    const std::vector<int> base = baseline_strongest(sigma, 2);
    CHECK(base == std::vector<int>({1, 2}));

    const SelectionResult ex = exhaustive_select(sigma, w, rho, 2, 10);
    CHECK(ex.active_set == std::vector<int>({0, 2}));

    const SelectionResult s2 = select_antennas_s2(sigma, w, rho, 2);
    CHECK(s2.active_set == ex.active_set);
    CHECK(s2.rate == doctest::Approx(ex.rate).epsilon(1e-9));

    const SelectionResult base_tuned = tune_active_set(sigma, w, rho, base);
    CHECK(s2.rate > base_tuned.rate);
    // The clean pair also beats swapping the trap antenna in for either
    // member, which is what makes this instance a trap in the first place.
    CHECK(tune_active_set(sigma, w, rho, {0, 1}).rate < ex.rate);
    CHECK(base_tuned.rate < ex.rate);
}

TEST_CASE("selection exploits a shared antenna when cooperation pays") {
    const Eigen::MatrixXd sigma = cooperation_sigma();
    const Eigen::VectorXd w = Eigen::VectorXd::Ones(2);
    const Eigen::VectorXd rho = Eigen::VectorXd::Constant(3, 10.0);

    const std::vector<int> base = baseline_strongest(sigma, 2);
    CHECK(base == std::vector<int>({0, 2}));

    const SelectionResult ex = exhaustive_select(sigma, w, rho, 2, 10);
    CHECK(ex.active_set == std::vector<int>({0, 1}));

    const SelectionResult s2 = select_antennas_s2(sigma, w, rho, 2);
    CHECK(s2.active_set == ex.active_set);

    const SelectionResult base_tuned = tune_active_set(sigma, w, rho, base);
    CHECK(s2.rate > base_tuned.rate);
    CHECK(s2.rate - base_tuned.rate > 0.3);  // the gap is structural, not noise
}

TEST_CASE("greedy selection stays close to exhaustive on small instances") {
    int wins = 0;
    for (std::uint64_t seed = 1; seed <= 12; ++seed) {
        auto eng = rng::substream(seed, 3);
        const int k = 2 + static_cast<int>(eng() % 2);
        const int s = k + static_cast<int>(eng() % (5 - k));
        const int m = s + 1 + static_cast<int>(eng() % (10 - s));
        const Scenario sc = generate_uniform_scenario(
            m, k, s, 2000.0, 31622776.601683795, 2.5, seed);
        const Eigen::MatrixXd sigma = pathloss_matrix(sc).sigma;
        const Eigen::VectorXd w = Eigen::VectorXd::Ones(k);
        const Eigen::VectorXd rho = Eigen::VectorXd::Constant(m, 10.0);

        const SelectionResult greedy = select_antennas_s2(sigma, w, rho, s);
        const SelectionResult ex = exhaustive_select(sigma, w, rho, s, 1000);
        const double ratio = greedy.rate / ex.rate;
        INFO("seed ", seed, " m=", m, " s=", s, " k=", k);
        CHECK(ratio >= 0.90);
        if (greedy.rate >= ex.rate - 1e-9) ++wins;

        // Seed 12 is a known structural miss: the optimum needs the weaker
        // user's second single-link antenna, but the swap phase only ever
        // offers the single-link outsider with the globally best proxy, so
        // the heuristic over-serves the stronger user.  Pin the gap so a
        // behavior change (either direction) shows up here.
        if (seed == 12) {
            CHECK(ratio > 0.94);
            CHECK(ratio < 0.96);
        }
    }
    // The heuristic finds the exact optimum on most instances.
    CHECK(wins >= 8);
}

TEST_CASE("selection is equivariant under antenna relabeling") {
    const Scenario sc = generate_uniform_scenario(
        8, 3, 4, 2000.0, 31622776.601683795, 2.5, 123);
    const Eigen::MatrixXd sigma = pathloss_matrix(sc).sigma;
    Eigen::VectorXd w(3);
    w << 1.0, 0.7, 1.3;
    Eigen::VectorXd rho(8);
    for (int j = 0; j < 8; ++j) rho(j) = 8.0 + j;

    const std::vector<int> perm = {5, 2, 7, 0, 3, 6, 1, 4};
    Eigen::MatrixXd sigma_p(3, 8);
    Eigen::VectorXd rho_p(8);
    for (int j = 0; j < 8; ++j) {
        sigma_p.col(j) = sigma.col(perm[j]);
        rho_p(j) = rho(perm[j]);
    }

    const SelectionResult a = select_antennas_s2(sigma, w, rho, 4);
    const SelectionResult b = select_antennas_s2(sigma_p, w, rho_p, 4);

    std::vector<int> mapped;
    for (int j : b.active_set) mapped.push_back(perm[j]);
    std::sort(mapped.begin(), mapped.end());
    CHECK(mapped == a.active_set);
    CHECK(a.rate == doctest::Approx(b.rate).epsilon(1e-9));
    CHECK(a.alpha == doctest::Approx(b.alpha).epsilon(1e-9));
}

TEST_CASE("fast mode freezes alpha during the sweep but still answers well") {
    const Scenario sc = generate_uniform_scenario(
        9, 3, 4, 2000.0, 31622776.601683795, 2.5, 77);
    const Eigen::MatrixXd sigma = pathloss_matrix(sc).sigma;
    const Eigen::VectorXd w = Eigen::VectorXd::Ones(3);
    const Eigen::VectorXd rho = Eigen::VectorXd::Constant(9, 10.0);

    SelectionOpts fast;
    fast.fast_mode = true;
    const SelectionResult quick = select_antennas_s2(sigma, w, rho, 4, fast);
    const SelectionResult full = select_antennas_s2(sigma, w, rho, 4);
    // Fast mode may settle on a different set, but its final answer is a
    // fully tuned solve of that set, so it stays comparable.
    CHECK(quick.rate >= 0.95 * full.rate);
    CHECK(quick.p.size() == 3);
    CHECK((quick.p.array() >= 0.0).all());
    CHECK(quick.evaluations < full.evaluations + 1);
}

TEST_CASE("selection reports its search trace") {
    const Eigen::MatrixXd sigma = interference_trap_sigma();
    const Eigen::VectorXd w = Eigen::VectorXd::Ones(2);
    const Eigen::VectorXd rho = Eigen::VectorXd::Constant(3, 10.0);

    const SelectionResult res = select_antennas_s2(sigma, w, rho, 2);
    CHECK(res.evaluations > 0);
    CHECK(!res.trace.empty());
    for (const SelectionEvent& ev : res.trace) {
        CHECK(ev.phase >= 1);
        CHECK(ev.phase <= 4);
        CHECK(ev.antenna >= 0);
        CHECK(ev.antenna < 3);
        if (ev.phase == 4) {
            CHECK(ev.replaced >= 0);
            CHECK(ev.rate > 0.0);
        }
    }
}

TEST_CASE("selection rejects malformed requests") {
    Eigen::MatrixXd sigma(2, 4);
    sigma << 1.0, 3.0, 2.0, 0.5,
             0.8, 4.0, 0.3, 2.5;
    const Eigen::VectorXd w = Eigen::VectorXd::Ones(2);
    const Eigen::VectorXd rho = Eigen::VectorXd::Constant(4, 10.0);

    // Fewer active antennas than users, or more than exist.
    CHECK_THROWS_AS(select_antennas_s2(sigma, w, rho, 1),
                    std::invalid_argument);
    CHECK_THROWS_AS(select_antennas_s2(sigma, w, rho, 5),
                    std::invalid_argument);

    CHECK_THROWS_AS(tune_active_set(sigma, w, rho, {0, 0}),
                    std::invalid_argument);
    CHECK_THROWS_AS(tune_active_set(sigma, w, rho, {0, 4}),
                    std::invalid_argument);

    // A user with no usable link cannot be served by any subset.
    Eigen::MatrixXd dead = sigma;
    dead.row(1).setZero();
    CHECK_THROWS_AS(select_antennas_s2(dead, w, rho, 2),
                    std::invalid_argument);

    SelectionOpts bad;
    bad.kappa = 1.5;
    CHECK_THROWS_AS(select_antennas_s2(sigma, w, rho, 2, bad),
                    std::invalid_argument);

    // The subset count guard refuses combinatorial blowups upfront.
    Eigen::MatrixXd wide = Eigen::MatrixXd::Ones(2, 10) + sigma(0, 0) *
                           Eigen::MatrixXd::Random(2, 10).cwiseAbs();
    CHECK_THROWS_AS(
        exhaustive_select(wide, w, Eigen::VectorXd::Constant(10, 1.0), 5, 100),
        std::invalid_argument);
}
