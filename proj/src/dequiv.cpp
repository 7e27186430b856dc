#include "cranopt/dequiv.hpp"

#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>

#include "cranopt/errors.hpp"

namespace cranopt {

namespace {

void check_fading(const Eigen::MatrixXd& sigma_a, const char* what) {
    if (sigma_a.rows() == 0 || sigma_a.cols() == 0)
        throw std::invalid_argument(std::string(what) + ": empty fading matrix");
    if ((sigma_a.array() < 0.0).any())
        throw std::invalid_argument(std::string(what) + ": negative fading entry");
    for (Eigen::Index k = 0; k < sigma_a.rows(); ++k)
        if ((sigma_a.row(k).array() > 0.0).count() == 0)
            throw std::invalid_argument(std::string(what) +
                                        ": user with no positive gain");
}

void check_alpha(double alpha, const char* what) {
    if (!(alpha > 0.0) || !std::isfinite(alpha))
        throw std::invalid_argument(std::string(what) + ": alpha must be > 0");
}

// Residual of a candidate fixed point, absolute for components up to one
// and relative above that, so solutions of magnitude 1e6 are not held to
// an absolute bar below their own roundoff floor.
double residual(const Eigen::VectorXd& next, const Eigen::VectorXd& x) {
    return ((next - x).array().abs() / x.array().abs().max(1.0)).maxCoeff();
}

// Iterates x <- T(x) until the residual is within tol at the point that
// gets returned.  The plain map contracts at a rate that degrades like
// 1 - O(alpha), so each step also tries a Newton candidate for x = T(x)
// built from `jac` (the Jacobian of T) and keeps it whenever it lands
// strictly closer to the fixed point; otherwise the map step stands,
// preserving the global convergence of the plain iteration.
template <class Map, class Jac>
Eigen::VectorXd fixed_point(Map&& map, Jac&& jac, Eigen::VectorXd x,
                            const FixedPointOpts& opts, const char* what) {
    if (opts.tol <= 0.0 || opts.max_iter < 1)
        throw std::invalid_argument(std::string(what) + ": bad solver options");
    const auto k = x.size();
    Eigen::VectorXd t = map(x);
    for (int it = 0; it < opts.max_iter; ++it) {
        const double res = residual(t, x);
        if (res <= opts.tol) {
            Eigen::VectorXd tt = map(t);
            if (residual(tt, t) <= opts.tol) return t;
            x = std::move(t);
            t = std::move(tt);
            continue;
        }
        Eigen::PartialPivLU<Eigen::MatrixXd> lu(
            Eigen::MatrixXd::Identity(k, k) - jac(x));
        const Eigen::VectorXd cand = x + lu.solve(t - x);
        bool accepted = false;
        if (cand.allFinite() && (cand.array() > 0.0).all()) {
            Eigen::VectorXd tc = map(cand);
            if (residual(tc, cand) < res) {
                x = cand;
                t = std::move(tc);
                accepted = true;
            }
        }
        if (!accepted) {
            x = std::move(t);
            t = map(x);
        }
    }
    throw ConvergenceError(std::string(what) + ": no fixed point after " +
                           std::to_string(opts.max_iter) + " iterations");
}

double condition_estimate(const Eigen::MatrixXd& a,
                          const Eigen::PartialPivLU<Eigen::MatrixXd>& lu) {
    // One-norm estimate via the explicit inverse; the systems here are
    // K x K with K at most a few hundred, so this stays cheap.
    const Eigen::MatrixXd inv = lu.inverse();
    return a.cwiseAbs().colwise().sum().maxCoeff() *
           inv.cwiseAbs().colwise().sum().maxCoeff();
}

Eigen::MatrixXd guarded_solve(const Eigen::MatrixXd& a, const Eigen::MatrixXd& rhs,
                              double cond_limit, const char* what) {
    Eigen::PartialPivLU<Eigen::MatrixXd> lu(a);
    if (!(condition_estimate(a, lu) < cond_limit))
        throw NumericalError(std::string(what) + ": system is numerically singular");
    return lu.solve(rhs);
}

}  // namespace

Eigen::VectorXd solve_xi(const Eigen::MatrixXd& sigma_a, double alpha,
                         const FixedPointOpts& opts) {
    check_fading(sigma_a, "solve_xi");
    check_alpha(alpha, "solve_xi");
    const auto k = sigma_a.rows();
    const double s = static_cast<double>(sigma_a.cols());
    const Eigen::MatrixXd s2 = sigma_a.array().square();

    Eigen::VectorXd x0 = opts.init.value_or(Eigen::VectorXd::Constant(k, 1.0 / alpha));
    if (x0.size() != k) throw std::invalid_argument("solve_xi: init has wrong size");

    auto map = [&](const Eigen::VectorXd& x) -> Eigen::VectorXd {
        const Eigen::ArrayXd inv1p = 1.0 / (1.0 + x.array());
        const Eigen::ArrayXd f =
            alpha + (s2.transpose() * inv1p.matrix()).array() / s;
        return (s2 * (1.0 / f).matrix()) / s;
    };
    auto jac = [&](const Eigen::VectorXd& x) -> Eigen::MatrixXd {
        const Eigen::ArrayXd inv1p = 1.0 / (1.0 + x.array());
        const Eigen::ArrayXd f =
            alpha + (s2.transpose() * inv1p.matrix()).array() / s;
        return (s2 * (1.0 / f.square()).matrix().asDiagonal() *
                s2.transpose() / (s * s)) *
               inv1p.square().matrix().asDiagonal();
    };
    return fixed_point(map, jac, std::move(x0), opts, "solve_xi");
}

Eigen::MatrixXd solve_theta(const Eigen::MatrixXd& sigma_a, double alpha,
                            const Eigen::VectorXd& xi, double cond_limit) {
    check_fading(sigma_a, "solve_theta");
    check_alpha(alpha, "solve_theta");
    const auto k = sigma_a.rows();
    if (xi.size() != k) throw std::invalid_argument("solve_theta: xi has wrong size");
    const double s = static_cast<double>(sigma_a.cols());
    const Eigen::MatrixXd s2 = sigma_a.array().square();

    const Eigen::ArrayXd f =
        alpha + (s2.transpose() * (1.0 / (1.0 + xi.array())).matrix()).array() / s;
    // d_mat(l, n) = (1/S) sum_m sigma_lm^2 sigma_nm^2 / f_m^2  (symmetric)
    const Eigen::MatrixXd d_mat =
        (s2 * (1.0 / f.square()).matrix().asDiagonal() * s2.transpose()) / s;
    const Eigen::MatrixXd coupling =
        d_mat * (1.0 / (1.0 + xi.array()).square()).matrix().asDiagonal() / s;

    const auto eye = Eigen::MatrixXd::Identity(k, k);
    // Columns of the solution are theta_k; rows of the returned matrix.
    return guarded_solve(eye - coupling, d_mat, cond_limit, "solve_theta").transpose();
}

Eigen::VectorXd solve_v(const Eigen::MatrixXd& sigma_a, double alpha,
                        const FixedPointOpts& opts) {
    check_fading(sigma_a, "solve_v");
    check_alpha(alpha, "solve_v");
    const auto k = sigma_a.rows();
    const double s = static_cast<double>(sigma_a.cols());
    const Eigen::MatrixXd s2 = sigma_a.array().square();

    Eigen::VectorXd x0 = opts.init.value_or(Eigen::VectorXd::Constant(k, 1.0 / alpha));
    if (x0.size() != k) throw std::invalid_argument("solve_v: init has wrong size");

    auto map = [&](const Eigen::VectorXd& x) -> Eigen::VectorXd {
        const Eigen::ArrayXd psi = 1.0 + (s2.transpose() * x).array() / s;
        return 1.0 / (alpha + (s2 * (1.0 / psi).matrix()).array() / s);
    };
    auto jac = [&](const Eigen::VectorXd& x) -> Eigen::MatrixXd {
        const Eigen::ArrayXd psi = 1.0 + (s2.transpose() * x).array() / s;
        const Eigen::ArrayXd val =
            1.0 / (alpha + (s2 * (1.0 / psi).matrix()).array() / s);
        return val.square().matrix().asDiagonal() *
               (s2 * (1.0 / psi.square()).matrix().asDiagonal() *
                s2.transpose() / (s * s));
    };
    return fixed_point(map, jac, std::move(x0), opts, "solve_v");
}

DeState solve_de_state(const Eigen::MatrixXd& sigma_a, double alpha,
                       const FixedPointOpts& opts) {
    DeState de;
    de.sigma = sigma_a;
    de.alpha = alpha;
    de.xi = solve_xi(sigma_a, alpha, opts);
    de.theta = solve_theta(sigma_a, alpha, de.xi, opts.cond_limit);
    de.v = solve_v(sigma_a, alpha, opts);

    const double s = static_cast<double>(sigma_a.cols());
    const Eigen::MatrixXd s2 = sigma_a.array().square();
    de.f = (alpha +
            (s2.transpose() * (1.0 / (1.0 + de.xi.array())).matrix()).array() / s)
               .matrix();
    de.psi = (1.0 + (s2.transpose() * de.v).array() / s).matrix();
    de.delta = (s2 * (1.0 / de.psi.array()).matrix()) / s;

    // C_ln = (1/S^2) sum_m sigma_lm^2 sigma_nm^2 v_l / psi_m^2
    const Eigen::VectorXd inv_psi2 = (1.0 / de.psi.array().square()).matrix();
    de.c_mat = de.v.asDiagonal() * (s2 * inv_psi2.asDiagonal() * s2.transpose()) /
               (s * s);

    de.gains = effective_gains(de.xi, de.theta, static_cast<int>(s));
    de.r_hat = (1.0 / (alpha * s)) * (s2 * inv_psi2.asDiagonal());

    // r_bar = diag(W 1/psi) - W diag(1/psi^2) W^T with W = (1/S) diag(v) s2.
    const Eigen::MatrixXd w_mat = de.v.asDiagonal() * s2 / s;
    de.r_bar = Eigen::MatrixXd(
        (w_mat * (1.0 / de.psi.array()).matrix()).asDiagonal());
    de.r_bar.noalias() -= w_mat * inv_psi2.asDiagonal() * w_mat.transpose();

    de.constraint = power_constraint_matrix(de, opts.cond_limit);
    return de;
}

Eigen::VectorXd de_sinr(const DeState& de, const Eigen::VectorXd& p) {
    const auto k = de.sigma.rows();
    if (p.size() != k) throw std::invalid_argument("de_sinr: p has wrong size");
    if ((p.array() < 0.0).any()) throw std::invalid_argument("de_sinr: p must be >= 0");
    const double s = static_cast<double>(de.sigma.cols());

    const Eigen::ArrayXd one_xi2 = (1.0 + de.xi.array()).square();
    const Eigen::VectorXd t = (p.array() / one_xi2).matrix();
    Eigen::VectorXd interf = de.theta * t - de.theta.diagonal().cwiseProduct(t);
    return (p.array() * de.xi.array().square() /
            (interf.array() / s + one_xi2))
        .matrix();
}

Eigen::VectorXd solve_phi(const DeState& de, const Eigen::VectorXd& p,
                          double cond_limit) {
    const auto k = de.sigma.rows();
    if (p.size() != k) throw std::invalid_argument("solve_phi: p has wrong size");
    // c(p) = r_bar * p; the system matrix is diagonally dominant for any
    // valid fading, which is what the condition guard protects.
    Eigen::MatrixXd m = -de.c_mat;
    m.diagonal().array() += de.alpha + de.delta.array();
    return guarded_solve(m, de.r_bar * p, cond_limit, "solve_phi");
}

Eigen::VectorXd de_power(const DeState& de, const Eigen::VectorXd& p) {
    const double s = static_cast<double>(de.sigma.cols());
    const Eigen::VectorXd phi = solve_phi(de, p);
    const Eigen::VectorXd weighted = de.v.cwiseProduct(p) - phi;
    const Eigen::MatrixXd s2 = de.sigma.array().square();
    return ((s2.transpose() * weighted).array() /
            (de.alpha * s * s * de.psi.array().square()))
        .matrix();
}

Eigen::MatrixXd effective_gains(const Eigen::VectorXd& xi,
                                const Eigen::MatrixXd& theta, int num_active) {
    const double s = static_cast<double>(num_active);
    const Eigen::ArrayXd one_xi2 = (1.0 + xi.array()).square();
    // Cross gains first, then overwrite the diagonal.
    Eigen::MatrixXd g =
        (1.0 / one_xi2).matrix().asDiagonal() * theta *
        (1.0 / one_xi2).matrix().asDiagonal() / s;
    g.diagonal() = (xi.array().square() / one_xi2).matrix();
    return g;
}

Eigen::MatrixXd power_constraint_matrix(const DeState& de, double cond_limit) {
    Eigen::MatrixXd m = -de.c_mat;
    m.diagonal().array() += de.alpha + de.delta.array();
    Eigen::MatrixXd inner = Eigen::MatrixXd(de.v.asDiagonal()) -
                            guarded_solve(m, de.r_bar, cond_limit,
                                          "power_constraint_matrix");
    return de.r_hat.transpose() * inner;
}

double weighted_sum_rate_from_gains(const Eigen::MatrixXd& gains,
                                    const Eigen::VectorXd& p,
                                    const Eigen::VectorXd& w) {
    const auto k = gains.rows();
    if (p.size() != k || w.size() != k)
        throw std::invalid_argument("weighted_sum_rate: size mismatch");
    double rate = 0.0;
    for (Eigen::Index i = 0; i < k; ++i) {
        double interf = 0.0;
        for (Eigen::Index l = 0; l < k; ++l)
            if (l != i) interf += gains(i, l) * p(l);
        rate += w(i) * std::log1p(gains(i, i) * p(i) / (1.0 + interf));
    }
    return rate;
}

double de_weighted_sum_rate(const DeState& de, const Eigen::VectorXd& p,
                            const Eigen::VectorXd& w) {
    return weighted_sum_rate_from_gains(de.gains, p, w);
}

double collocated_u(const Eigen::VectorXd& sigma_users, double alpha,
                    int num_active, const FixedPointOpts& opts) {
    check_alpha(alpha, "collocated_u");
    if (num_active < 1)
        throw std::invalid_argument("collocated_u: need at least one antenna");
    if ((sigma_users.array() < 0.0).any())
        throw std::invalid_argument("collocated_u: negative gain");
    const double s = static_cast<double>(num_active);
    const Eigen::ArrayXd s2 = sigma_users.array().square();

    auto scalar_map = [&](double u) {
        return 1.0 / (alpha + (s2 / (1.0 + s2 * u)).sum() / s);
    };
    double u = 1.0 / alpha;
    for (int it = 0; it < opts.max_iter; ++it) {
        const double next = scalar_map(u);
        const double scale = std::max(1.0, std::abs(u));
        if (std::abs(next - u) <= opts.tol * scale &&
            std::abs(scalar_map(next) - next) <= opts.tol * scale)
            return next;
        u = next;
    }
    throw ConvergenceError("collocated_u: no fixed point after " +
                           std::to_string(opts.max_iter) + " iterations");
}

CollocatedDe collocated_de(const Eigen::VectorXd& sigma_users, double alpha,
                           int num_active, const Eigen::VectorXd& p,
                           const FixedPointOpts& opts) {
    if (p.size() != sigma_users.size())
        throw std::invalid_argument("collocated_de: p has wrong size");
    if ((p.array() < 0.0).any())
        throw std::invalid_argument("collocated_de: p must be >= 0");

    CollocatedDe out;
    out.u = collocated_u(sigma_users, alpha, num_active, opts);
    const double s = static_cast<double>(num_active);
    const Eigen::ArrayXd s2 = sigma_users.array().square();
    const Eigen::ArrayXd denom2 = (1.0 + s2 * out.u).square();
    out.f12 = (s2 / denom2).sum() / s;
    out.fbar12 = (p.array() * s2 / denom2).sum() / s;

    const double af = alpha + out.f12;
    out.sinr = (p.array() * s2.square() * out.u * out.u * af /
                (out.fbar12 * s2 * out.u + denom2 * af))
                   .matrix();
    out.power = out.fbar12 * out.u / (s * af);
    return out;
}

}  // namespace cranopt
