#include "cranopt/montecarlo.hpp"

#include <cmath>
#include <complex>
#include <cstddef>
#include <stdexcept>
#include <vector>

#include "cranopt/errors.hpp"
#include "cranopt/rng.hpp"
#include "cranopt/scenario.hpp"

namespace cranopt {

namespace {

void check_draw_inputs(const Eigen::MatrixXcd& h, double alpha,
                       const Eigen::VectorXd& p, const char* where) {
    if (h.rows() == 0 || h.cols() == 0)
        throw std::invalid_argument(std::string(where) + ": empty channel");
    if (!(alpha > 0.0))
        throw std::invalid_argument(std::string(where) + ": alpha must be > 0");
    if (p.size() != h.rows() || (p.array() < 0.0).any())
        throw std::invalid_argument(std::string(where) +
                                    ": powers must be nonnegative, one per user");
}

}  // namespace

Eigen::MatrixXcd rzf_precoder(const Eigen::MatrixXcd& h, double alpha,
                              const Eigen::VectorXd& p) {
    check_draw_inputs(h, alpha, p, "rzf_precoder");
    const auto s = h.cols();
    Eigen::MatrixXcd reg = h.adjoint() * h;
    reg.diagonal().array() += alpha * static_cast<double>(s);
    const Eigen::VectorXcd scale = p.cwiseSqrt().cast<std::complex<double>>();
    return reg.llt().solve(h.adjoint()) * scale.asDiagonal();
}

Eigen::VectorXd empirical_sinr(const Eigen::MatrixXcd& h_norm, double alpha,
                               const Eigen::VectorXd& p) {
    check_draw_inputs(h_norm, alpha, p, "empirical_sinr");
    const auto k = h_norm.rows();

    // gram and resolvent commute, so gram * (gram + alpha I)^{-1} is
    // Hermitian with eigenvalues in [0, 1); its diagonal c_k is the loaded
    // quadratic form h_k^H Q h_k, and Sherman-Morrison turns it into the
    // leave-one-out signal term a_k = c_k / (1 - c_k).
    const Eigen::MatrixXcd gram = h_norm * h_norm.adjoint();
    Eigen::MatrixXcd loaded = gram;
    loaded.diagonal().array() += alpha;
    const Eigen::MatrixXcd cross = loaded.llt().solve(gram).adjoint();

    Eigen::VectorXd sinr(k);
    for (Eigen::Index i = 0; i < k; ++i) {
        const double c = std::min(cross(i, i).real(), 1.0 - 1e-15);
        const double a = c / (1.0 - c);
        double b = 0.0;
        for (Eigen::Index l = 0; l < k; ++l)
            if (l != i) b += p(l) * std::norm(cross(l, i));
        b /= (1.0 - c) * (1.0 - c);
        sinr(i) = p(i) * a * a / (b + (1.0 + a) * (1.0 + a));
    }
    return sinr;
}

Eigen::VectorXd empirical_sinr_direct(const Eigen::MatrixXcd& h_norm,
                                      double alpha, const Eigen::VectorXd& p) {
    check_draw_inputs(h_norm, alpha, p, "empirical_sinr_direct");
    const auto k = h_norm.rows();
    const auto s = h_norm.cols();

    Eigen::VectorXd sinr(k);
    for (Eigen::Index i = 0; i < k; ++i) {
        Eigen::MatrixXcd loo = Eigen::MatrixXcd::Zero(s, s);
        for (Eigen::Index l = 0; l < k; ++l)
            if (l != i)
                loo.noalias() += h_norm.row(l).adjoint() * h_norm.row(l);
        loo.diagonal().array() += alpha;

        const Eigen::VectorXcd y = loo.llt().solve(h_norm.row(i).adjoint());
        const double a = (h_norm.row(i) * y).value().real();
        double b = 0.0;
        for (Eigen::Index l = 0; l < k; ++l)
            if (l != i) b += p(l) * std::norm((h_norm.row(l) * y).value());
        sinr(i) = p(i) * a * a / (b + (1.0 + a) * (1.0 + a));
    }
    return sinr;
}

Eigen::VectorXd empirical_power(const Eigen::MatrixXcd& h_norm, double alpha,
                                const Eigen::VectorXd& p) {
    check_draw_inputs(h_norm, alpha, p, "empirical_power");
    const auto s = h_norm.cols();

    Eigen::MatrixXcd loaded = h_norm * h_norm.adjoint();
    loaded.diagonal().array() += alpha;
    const Eigen::VectorXcd scale = p.cwiseSqrt().cast<std::complex<double>>();
    const Eigen::MatrixXcd scaled =
        loaded.llt().solve(Eigen::MatrixXcd(scale.asDiagonal()));
    const Eigen::MatrixXcd precoder = h_norm.adjoint() * scaled;
    return precoder.rowwise().squaredNorm() / static_cast<double>(s);
}

McReport mc_validate(const Eigen::MatrixXd& sigma_a, const Policy& policy,
                     int trials, std::uint64_t seed, const FixedPointOpts& fp) {
    const double alpha = policy.alpha;
    const Eigen::VectorXd& p = policy.p;
    const Eigen::VectorXd& w = policy.weights;
    if (trials < 1)
        throw std::invalid_argument("mc_validate: need at least one trial");
    if (w.size() != sigma_a.rows() || (w.array() <= 0.0).any())
        throw std::invalid_argument("mc_validate: weights must be positive");

    const auto s = sigma_a.cols();
    McReport rep;
    rep.trials = trials;

    std::vector<double> rates;
    rates.reserve(trials);
    Eigen::VectorXd power_sum = Eigen::VectorXd::Zero(s);
    Eigen::VectorXd power_comp = Eigen::VectorXd::Zero(s);
    for (int t = 0; t < trials; ++t) {
        const ChannelRealization draw =
            sample_channel(sigma_a, seed, static_cast<std::uint64_t>(t));
        const Eigen::VectorXd sinr = empirical_sinr(draw.H_normalized, alpha, p);
        rates.push_back((w.array() * sinr.array().log1p()).sum());

        // Compensated accumulation keeps the per-antenna means exact enough
        // for tight relative-error comparisons over many trials.
        const Eigen::VectorXd pw = empirical_power(draw.H_normalized, alpha, p);
        for (Eigen::Index j = 0; j < s; ++j) {
            const double y = pw(j) - power_comp(j);
            const double t2 = power_sum(j) + y;
            power_comp(j) = (t2 - power_sum(j)) - y;
            power_sum(j) = t2;
        }
    }

    double mean = 0.0;
    for (double r : rates) mean += r;
    mean /= trials;
    double var = 0.0;
    for (double r : rates) var += (r - mean) * (r - mean);
    rep.avg_rate = mean;
    rep.rate_stderr =
        trials > 1 ? std::sqrt(var / (trials - 1.0) / trials) : 0.0;
    rep.avg_powers = power_sum / static_cast<double>(trials);

    const DeState de = solve_de_state(sigma_a, alpha, fp);
    rep.de_rate = de_weighted_sum_rate(de, p, w);
    rep.de_powers = de_power(de, p);
    if (rep.avg_rate == 0.0)
        throw NumericalError(
            "mc_validate: simulated rate is zero, relative error undefined");
    rep.rel_rate_error = std::abs(rep.de_rate - rep.avg_rate) /
                         std::abs(rep.avg_rate);
    rep.rel_power_error = (rep.de_powers - rep.avg_powers).norm() /
                          rep.avg_powers.norm();
    return rep;
}

CapacityProbe mc_sum_rate_capacity_probe(const Scenario& base,
                                         const Eigen::VectorXd& w,
                                         double rho_per_antenna,
                                         const std::vector<int>& m_list,
                                         int placements, int trials,
                                         std::uint64_t seed,
                                         const SelectionOpts& selection) {
    if (m_list.empty())
        throw std::invalid_argument("capacity probe: empty antenna-count list");
    if (placements < 1 || trials < 1)
        throw std::invalid_argument(
            "capacity probe: placements and trials must be positive");
    if (rho_per_antenna <= 0.0)
        throw std::invalid_argument("capacity probe: budget must be positive");

    CapacityProbe probe;
    probe.points.reserve(m_list.size());

    for (std::size_t mi = 0; mi < m_list.size(); ++mi) {
        const int m = m_list[mi];
        const int grid = static_cast<int>(std::lround(std::sqrt(double(m))));
        const bool square = grid * grid == m;

        double rate_acc = 0.0;
        double de_acc = 0.0;
        for (int r = 0; r < placements; ++r) {
            // Independent substream per (count, placement) pair so adding
            // antenna counts or placements never perturbs earlier draws.
            const std::uint64_t tag =
                (static_cast<std::uint64_t>(mi) << 32) |
                static_cast<std::uint64_t>(r);
            const std::uint64_t sc_seed =
                rng::splitmix64(seed ^ rng::splitmix64(tag));
            const Scenario sc =
                square ? generate_grid_scenario(grid, base.num_users,
                                                base.num_active,
                                                base.side_length, base.g0,
                                                base.zeta, sc_seed)
                       : generate_uniform_scenario(m, base.num_users,
                                                   base.num_active,
                                                   base.side_length, base.g0,
                                                   base.zeta, sc_seed);
            const Eigen::MatrixXd sigma = pathloss_matrix(sc).sigma;
            const Eigen::VectorXd rho =
                Eigen::VectorXd::Constant(m, rho_per_antenna);

            const SelectionResult sel =
                select_antennas_s2(sigma, w, rho, sc.num_active, selection);
            Eigen::MatrixXd sigma_a(sigma.rows(),
                                    static_cast<Eigen::Index>(sel.active_set.size()));
            for (std::size_t c = 0; c < sel.active_set.size(); ++c)
                sigma_a.col(static_cast<Eigen::Index>(c)) =
                    sigma.col(sel.active_set[c]);

            Policy pol;
            pol.active_set = sel.active_set;
            pol.alpha = sel.alpha;
            pol.p = sel.p;
            pol.weights = w;
            pol.rho = rho;
            const McReport rep =
                mc_validate(sigma_a, pol, trials, rng::splitmix64(sc_seed));
            rate_acc += rep.avg_rate;
            de_acc += rep.de_rate;
        }

        CapacityPoint pt;
        pt.num_antennas = m;
        pt.mean_rate = rate_acc / placements;
        pt.mean_de_rate = de_acc / placements;
        probe.points.push_back(pt);
    }

    // Least-squares fit of mean rate against ln(M).  With a single point the
    // slope stays zero rather than dividing by a vanishing variance.
    const std::size_t n = probe.points.size();
    if (n >= 2) {
        double mx = 0.0, my = 0.0;
        for (const CapacityPoint& pt : probe.points) {
            mx += std::log(double(pt.num_antennas));
            my += pt.mean_rate;
        }
        mx /= double(n);
        my /= double(n);
        double sxx = 0.0, sxy = 0.0;
        for (const CapacityPoint& pt : probe.points) {
            const double dx = std::log(double(pt.num_antennas)) - mx;
            sxx += dx * dx;
            sxy += dx * (pt.mean_rate - my);
        }
        if (sxx > 0.0) probe.slope = sxy / sxx;
    }
    probe.per_user_slope = probe.slope / double(base.num_users);
    return probe;
}

}  // namespace cranopt
