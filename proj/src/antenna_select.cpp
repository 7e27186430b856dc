#include "cranopt/antenna_select.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>
#include <string>

namespace cranopt {

namespace {

void check_selection_inputs(const Eigen::MatrixXd& sigma,
                            const Eigen::VectorXd& w,
                            const Eigen::VectorXd& rho, int num_active) {
    const auto k = sigma.rows();
    const auto m = sigma.cols();
    if (k == 0 || m == 0)
        throw std::invalid_argument("selection: empty fading matrix");
    if (!(sigma.array() >= 0.0).all())
        throw std::invalid_argument("selection: fading must be nonnegative");
    if (w.size() != k || (w.array() <= 0.0).any())
        throw std::invalid_argument("selection: weights must be positive");
    if (rho.size() != m || (rho.array() <= 0.0).any())
        throw std::invalid_argument("selection: budgets must be positive");
    if (num_active < k || num_active > m)
        throw std::invalid_argument(
            "selection: need num_users <= num_active <= num_antennas");
    for (Eigen::Index i = 0; i < k; ++i)
        if ((sigma.row(i).array() <= 0.0).all())
            throw std::invalid_argument("selection: user " + std::to_string(i) +
                                        " has no usable antenna");
}

Eigen::MatrixXd pick_columns(const Eigen::MatrixXd& sigma,
                             const std::vector<int>& set) {
    Eigen::MatrixXd out(sigma.rows(), static_cast<Eigen::Index>(set.size()));
    for (std::size_t j = 0; j < set.size(); ++j) out.col(j) = sigma.col(set[j]);
    return out;
}

Eigen::VectorXd pick_entries(const Eigen::VectorXd& rho,
                             const std::vector<int>& set) {
    Eigen::VectorXd out(static_cast<Eigen::Index>(set.size()));
    for (std::size_t j = 0; j < set.size(); ++j) out(j) = rho(set[j]);
    return out;
}

std::vector<int> sorted_copy(std::vector<int> set) {
    std::sort(set.begin(), set.end());
    return set;
}

// Shared precomputation: strongest antenna per user, strong-link membership
// counts, and the single-user rate proxy used by phases 3 and 4.
struct LinkStats {
    Eigen::MatrixXd s2;            // squared gains, K x M
    std::vector<int> members;      // |{k : antenna m is strong for k}|
    Eigen::VectorXd proxy;         // w_k log(1 + s2(k, m)) at m's best user
    std::vector<int> best_antenna; // per user
};

LinkStats link_stats(const Eigen::MatrixXd& sigma, const Eigen::VectorXd& w,
                     double kappa) {
    const auto k = sigma.rows();
    const auto m = sigma.cols();
    LinkStats st;
    st.s2 = sigma.array().square();
    st.best_antenna.resize(k);

    Eigen::VectorXd best_gain(k);
    for (Eigen::Index i = 0; i < k; ++i) {
        Eigen::Index arg = 0;
        st.s2.row(i).maxCoeff(&arg);
        st.best_antenna[i] = static_cast<int>(arg);
        best_gain(i) = st.s2(i, arg);
    }

    st.members.assign(m, 0);
    st.proxy.resize(m);
    for (Eigen::Index j = 0; j < m; ++j) {
        for (Eigen::Index i = 0; i < k; ++i)
            if (st.s2(i, j) >= kappa * best_gain(i)) ++st.members[j];
        Eigen::Index user = 0;
        st.s2.col(j).maxCoeff(&user);
        st.proxy(j) = w(user) * std::log1p(st.s2(user, j));
    }
    return st;
}

SelectionResult tuned_result(const Eigen::MatrixXd& sigma,
                             const Eigen::VectorXd& w,
                             const Eigen::VectorXd& rho,
                             std::vector<int> active,
                             const BisectionOpts& tuning) {
    BisectionResult tuned = bisection_alpha(pick_columns(sigma, active), w,
                                            pick_entries(rho, active), tuning);
    SelectionResult out;
    out.active_set = std::move(active);
    out.alpha = tuned.alpha;
    out.p = std::move(tuned.p);
    out.lambda = std::move(tuned.lambda);
    out.rate = tuned.rate;
    out.evaluations = 1;
    return out;
}

}  // namespace

SelectionResult tune_active_set(const Eigen::MatrixXd& sigma,
                                const Eigen::VectorXd& w,
                                const Eigen::VectorXd& rho,
                                const std::vector<int>& active_set,
                                const BisectionOpts& tuning) {
    check_selection_inputs(sigma, w, rho,
                           static_cast<int>(active_set.size()));
    std::vector<int> set = sorted_copy(active_set);
    if (std::adjacent_find(set.begin(), set.end()) != set.end())
        throw std::invalid_argument("tune_active_set: duplicate antenna");
    if (!set.empty() && (set.front() < 0 || set.back() >= sigma.cols()))
        throw std::invalid_argument("tune_active_set: antenna out of range");
    return tuned_result(sigma, w, rho, std::move(set), tuning);
}

std::vector<int> baseline_strongest(const Eigen::MatrixXd& sigma,
                                    int num_active) {
    const auto k = sigma.rows();
    const auto m = sigma.cols();
    if (k == 0 || m == 0)
        throw std::invalid_argument("baseline: empty fading matrix");
    if (num_active < 1 || num_active > m)
        throw std::invalid_argument("baseline: bad active count");

    const Eigen::MatrixXd s2 = sigma.array().square();
    std::vector<bool> claimed(m, false);
    std::vector<int> active;
    active.reserve(num_active);
    while (static_cast<int>(active.size()) < num_active) {
        for (Eigen::Index i = 0; i < k && static_cast<int>(active.size()) < num_active;
             ++i) {
            int pick = -1;
            double best = -1.0;
            for (Eigen::Index j = 0; j < m; ++j)
                if (!claimed[j] && s2(i, j) > best) {
                    best = s2(i, j);
                    pick = static_cast<int>(j);
                }
            claimed[pick] = true;
            active.push_back(pick);
        }
    }
    std::sort(active.begin(), active.end());
    return active;
}

SelectionResult select_antennas_s2(const Eigen::MatrixXd& sigma,
                                   const Eigen::VectorXd& w,
                                   const Eigen::VectorXd& rho, int num_active,
                                   const SelectionOpts& opts) {
    check_selection_inputs(sigma, w, rho, num_active);
    if (!(opts.kappa > 0.0) || !(opts.kappa < 1.0))
        throw std::invalid_argument("selection: kappa must lie in (0, 1)");

    const auto k = sigma.rows();
    const auto m = sigma.cols();
    const LinkStats st = link_stats(sigma, w, opts.kappa);

    std::vector<int> active;
    active.reserve(num_active);
    std::vector<SelectionEvent> trace;
    auto selected = [&](int j) {
        return std::find(active.begin(), active.end(), j) != active.end();
    };

    // Phase 1: keep each user's best antenna when it is strong for that user
    // alone.  At most one antenna per user, so this cannot overshoot.
    for (Eigen::Index i = 0; i < k; ++i) {
        const int j = st.best_antenna[i];
        if (st.members[j] == 1 && !selected(j)) {
            active.push_back(j);
            trace.push_back({1, j, -1, 0.0});
        }
    }

    // Phase 2: antennas strong for two or more users, heaviest multi-link
    // score first.  The per-link offset dominates the gain sum, so the score
    // orders by link count before total gain.
    if (static_cast<int>(active.size()) < num_active) {
        const Eigen::VectorXd colsum = st.s2.colwise().sum();
        const double offset = (1.0 + 1e-6) * colsum.maxCoeff();
        while (static_cast<int>(active.size()) < num_active) {
            int pick = -1;
            double best = -1.0;
            for (Eigen::Index j = 0; j < m; ++j) {
                if (selected(static_cast<int>(j))) continue;
                const double score = st.members[j] * offset + colsum(j);
                if (score > best) {
                    best = score;
                    pick = static_cast<int>(j);
                }
            }
            if (st.members[pick] < 2) break;
            active.push_back(pick);
            trace.push_back({2, pick, -1, 0.0});
        }
    }

    // Phase 3: fill any remaining slots by the single-user rate proxy.
    while (static_cast<int>(active.size()) < num_active) {
        int pick = -1;
        double best = -1.0;
        for (Eigen::Index j = 0; j < m; ++j)
            if (!selected(static_cast<int>(j)) && st.proxy(j) > best) {
                best = st.proxy(j);
                pick = static_cast<int>(j);
            }
        active.push_back(pick);
        trace.push_back({3, pick, -1, 0.0});
    }

    // Phase 4: one sweep over the chosen slots.  Candidates are outsiders
    // with multi-user potential, plus the best single-link outsider when it
    // beats the incumbent's proxy or the incumbent itself risks interference.
    int evaluations = 0;
    std::map<std::vector<int>, double> scored;
    double alpha_fixed = 0.0;
    double current_rate;
    if (opts.fast_mode) {
        SelectionResult start =
            tuned_result(sigma, w, rho, sorted_copy(active), opts.tuning);
        ++evaluations;
        alpha_fixed = start.alpha;
        current_rate = start.rate;
        scored[sorted_copy(active)] = start.rate;
    } else {
        current_rate = 0.0;  // assigned by the first score() call below
    }

    auto score = [&](const std::vector<int>& set) {
        const std::vector<int> key = sorted_copy(set);
        auto it = scored.find(key);
        if (it != scored.end()) return it->second;
        ++evaluations;
        double rate;
        if (opts.fast_mode) {
            const DeState de = solve_de_state(pick_columns(sigma, key),
                                              alpha_fixed, opts.tuning.fp);
            rate = wmmse_power(de.gains, de.constraint, pick_entries(rho, key),
                               w, opts.tuning.wmmse)
                       .rate;
        } else {
            rate = bisection_alpha(pick_columns(sigma, key), w,
                                   pick_entries(rho, key), opts.tuning)
                       .rate;
        }
        scored.emplace(key, rate);
        return rate;
    };
    if (!opts.fast_mode) current_rate = score(active);

    for (int slot = 0; slot < num_active; ++slot) {
        const int incumbent = active[slot];

        int single_best = -1;
        for (Eigen::Index j = 0; j < m; ++j)
            if (!selected(static_cast<int>(j)) && st.members[j] == 1 &&
                (single_best < 0 || st.proxy(j) > st.proxy(single_best)))
                single_best = static_cast<int>(j);

        std::vector<int> candidates;
        for (Eigen::Index j = 0; j < m; ++j)
            if (!selected(static_cast<int>(j)) && st.members[j] >= 2)
                candidates.push_back(static_cast<int>(j));
        if (single_best >= 0 && (st.proxy(single_best) >= st.proxy(incumbent) ||
                                 st.members[incumbent] > 1))
            candidates.push_back(single_best);
        if (candidates.empty()) continue;

        std::vector<int> trial = active;
        int pick = -1;
        double pick_rate = 0.0;
        for (int candidate : candidates) {
            trial[slot] = candidate;
            const double rate = score(trial);
            if (pick < 0 || rate > pick_rate) {
                pick = candidate;
                pick_rate = rate;
            }
        }
        if (pick_rate > current_rate) {
            active[slot] = pick;
            current_rate = pick_rate;
            trace.push_back({4, pick, incumbent, pick_rate});
        }
    }

    SelectionResult out =
        tuned_result(sigma, w, rho, sorted_copy(active), opts.tuning);
    out.evaluations = evaluations + 1;
    out.trace = std::move(trace);
    return out;
}

SelectionResult exhaustive_select(const Eigen::MatrixXd& sigma,
                                  const Eigen::VectorXd& w,
                                  const Eigen::VectorXd& rho, int num_active,
                                  std::uint64_t max_subsets,
                                  const BisectionOpts& tuning) {
    check_selection_inputs(sigma, w, rho, num_active);
    const auto m = static_cast<int>(sigma.cols());

    // C(m, num_active), capped to avoid overflow before the budget check.
    double subsets = 1.0;
    for (int i = 0; i < num_active; ++i)
        subsets *= static_cast<double>(m - i) / static_cast<double>(i + 1);
    if (subsets > static_cast<double>(max_subsets))
        throw std::invalid_argument(
            "exhaustive_select: " + std::to_string(subsets) +
            " subsets exceed the budget of " + std::to_string(max_subsets));

    std::vector<int> set(num_active);
    for (int i = 0; i < num_active; ++i) set[i] = i;

    SelectionResult best;
    int evaluations = 0;
    while (true) {
        SelectionResult tuned = tuned_result(sigma, w, rho, set, tuning);
        ++evaluations;
        if (evaluations == 1 || tuned.rate > best.rate) best = std::move(tuned);

        // Next combination in lexicographic order.
        int i = num_active - 1;
        while (i >= 0 && set[i] == m - num_active + i) --i;
        if (i < 0) break;
        ++set[i];
        for (int j = i + 1; j < num_active; ++j) set[j] = set[j - 1] + 1;
    }
    best.evaluations = evaluations;
    return best;
}

}  // namespace cranopt
