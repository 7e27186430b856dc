#include "cranopt/power_opt.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "cranopt/errors.hpp"

namespace cranopt {

namespace {

constexpr double kTiny = 1e-300;

void check_wmmse_inputs(const Eigen::MatrixXd& gains,
                        const Eigen::MatrixXd& constraint,
                        const Eigen::VectorXd& rho, const Eigen::VectorXd& w) {
    const auto k = gains.rows();
    if (gains.cols() != k || k == 0)
        throw std::invalid_argument("wmmse: gains must be square and nonempty");
    if ((gains.diagonal().array() <= 0.0).any())
        throw std::invalid_argument("wmmse: direct gains must be positive");
    if (!(gains.array() >= 0.0).all())
        throw std::invalid_argument("wmmse: gains must be nonnegative");
    if (constraint.cols() != k || constraint.rows() == 0)
        throw std::invalid_argument("wmmse: constraint matrix shape mismatch");
    if (!(constraint.array() >= 0.0).all())
        throw std::invalid_argument("wmmse: constraint matrix must be nonnegative");
    if ((constraint.rowwise().sum().array() <= 0.0).any())
        throw std::invalid_argument("wmmse: constraint matrix has an empty row");
    if (rho.size() != constraint.rows() || (rho.array() <= 0.0).any())
        throw std::invalid_argument("wmmse: budgets must be positive, one per row");
    if (w.size() != k || (w.array() <= 0.0).any())
        throw std::invalid_argument("wmmse: weights must be positive");
}

// The transmit power step minimizes
//     h(q) = sum_k a_k (1 - b_k q_k)^2 + c_k q_k^2
// subject to R (q.*q) <= rho.  Given the multipliers the minimizer is
// separable, q_k(lambda) = a_k b_k / (a_k b_k^2 + c_k + (R^T lambda)_k),
// whose support does not depend on lambda, so the concave dual
//     J(lambda) = h(q(lambda)) + lambda^T (R q(lambda)^2 - rho)
// is twice differentiable on lambda >= 0 with
//     grad J = R q^2 - rho,   hess J = -2 R diag(q^2 ./ d) R^T.
// That makes projected Newton ascent with backtracking the natural solver;
// the free set is re-identified each step and a small ridge covers
// rank-deficient constraint rows (all antennas collocated, say).
struct PowerStep {
    Eigen::VectorXd q;
    Eigen::VectorXd lambda;
    double gap = 0.0;
};

class PowerStepSolver {
  public:
    PowerStepSolver(const Eigen::MatrixXd& constraint, const Eigen::VectorXd& rho)
        : r_(constraint), rho_(rho) {}

    PowerStep solve(const Eigen::VectorXd& a, const Eigen::VectorXd& b,
                    const Eigen::VectorXd& c, const Eigen::VectorXd& q_prev,
                    Eigen::VectorXd lambda, int max_iter, double gap_tol) const {
        num_ = a.cwiseProduct(b);
        den0_ = a.cwiseProduct(b.cwiseAbs2()) + c;
        const auto s = r_.rows();
        const double grad_tol =
            std::max(gap_tol, 1e-15) * rho_.maxCoeff();

        double dual = dual_value(a, c, lambda);
        for (int it = 0; it < max_iter; ++it) {
            const Eigen::VectorXd q = minimizer(lambda);
            const Eigen::VectorXd grad = r_ * q.cwiseAbs2() - rho_;

            // First-order optimality: active multipliers meet their budgets,
            // inactive rows are not violated.
            double resid = 0.0;
            std::vector<int> free;
            for (Eigen::Index j = 0; j < s; ++j) {
                resid = std::max(resid, lambda(j) > 0.0
                                            ? std::abs(grad(j))
                                            : std::max(grad(j), 0.0));
                if (lambda(j) > 0.0 || grad(j) > 0.0)
                    free.push_back(static_cast<int>(j));
            }
            if (resid <= grad_tol || free.empty()) break;

            const Eigen::VectorXd d = den0_ + r_.transpose() * lambda;
            const Eigen::ArrayXd sens =
                (d.array() > kTiny)
                    .select(q.array().square() / d.array(), 0.0);
            Eigen::MatrixXd r_free(free.size(), q.size());
            Eigen::VectorXd g_free(free.size());
            for (std::size_t i = 0; i < free.size(); ++i) {
                r_free.row(i) = r_.row(free[i]);
                g_free(i) = grad(free[i]);
            }
            Eigen::MatrixXd curv =
                2.0 * r_free * sens.matrix().asDiagonal() * r_free.transpose();
            curv.diagonal().array() +=
                1e-14 * std::max(1.0, curv.trace()) / double(free.size());

            Eigen::VectorXd dir_free = curv.llt().solve(g_free);
            if (!dir_free.allFinite() || g_free.dot(dir_free) <= 0.0)
                dir_free = g_free / std::max(curv.trace(), kTiny);

            // Backtrack on the projected step until the dual improves.
            bool moved = false;
            for (double t = 1.0; t >= 0x1p-50; t *= 0.5) {
                Eigen::VectorXd trial = lambda;
                for (std::size_t i = 0; i < free.size(); ++i)
                    trial(free[i]) =
                        std::max(0.0, trial(free[i]) + t * dir_free(i));
                const double trial_dual = dual_value(a, c, trial);
                if (trial_dual > dual) {
                    lambda = std::move(trial);
                    dual = trial_dual;
                    moved = true;
                    break;
                }
            }
            if (!moved) break;  // at numerical floor of the line search
        }

        // Final primal: exact minimizer at the returned multipliers, pushed
        // into the feasible set and never worse than the incoming point.
        Eigen::VectorXd q = minimizer(lambda);
        const Eigen::VectorXd load = r_ * q.cwiseAbs2();
        const double viol = (load.array() / rho_.array()).maxCoeff();
        if (viol > 1.0) q /= std::sqrt(viol);
        double primal = primal_value(a, b, c, q);
        const double prev = primal_value(a, b, c, q_prev);
        if (primal > prev) {
            q = q_prev;
            primal = prev;
        }

        PowerStep out;
        out.q = std::move(q);
        out.lambda = std::move(lambda);
        out.gap = primal - dual;
        return out;
    }

  private:
    Eigen::VectorXd minimizer(const Eigen::VectorXd& lambda) const {
        const Eigen::VectorXd d = den0_ + r_.transpose() * lambda;
        return (d.array() > kTiny)
            .select(num_.array() / d.array(), 0.0)
            .matrix();
    }

    double primal_value(const Eigen::VectorXd& a, const Eigen::VectorXd& b,
                        const Eigen::VectorXd& c, const Eigen::VectorXd& q) const {
        return (a.array() * (1.0 - b.array() * q.array()).square() +
                c.array() * q.array().square())
            .sum();
    }

    double dual_value(const Eigen::VectorXd& a, const Eigen::VectorXd& c,
                      const Eigen::VectorXd& lambda) const {
        const Eigen::VectorXd rtl = r_.transpose() * lambda;
        const Eigen::ArrayXd d = (den0_ + rtl).array();
        const Eigen::ArrayXd cl = c.array() + rtl.array();
        double value = 0.0;
        for (Eigen::Index i = 0; i < d.size(); ++i)
            value += d(i) > kTiny ? a(i) * cl(i) / d(i) : a(i);
        return value - lambda.dot(rho_);
    }

    const Eigen::MatrixXd& r_;
    const Eigen::VectorXd& rho_;
    mutable Eigen::VectorXd num_, den0_;
};

double surrogate_objective(const Eigen::MatrixXd& gains, const Eigen::VectorXd& w,
                           const Eigen::VectorXd& ups, const Eigen::VectorXd& omega,
                           const Eigen::VectorXd& b, const Eigen::VectorXd& q) {
    const Eigen::VectorXd p = q.cwiseAbs2();
    const Eigen::ArrayXd cross =
        (gains * p).array() - gains.diagonal().array() * p.array();
    const Eigen::ArrayXd e = (1.0 - b.array() * q.array()).square() +
                             ups.array().square() * cross +
                             ups.array().square();
    return (w.array() * (omega.array() * e - omega.array().log())).sum();
}

// Hessian of the weighted sum rate in p.  With U = 1 + Gp (total receive
// power) and O = U - diag(G) .* p (interference part),
//   H = G^T diag(w/O^2) G restricted to off-diagonal links, minus
//       G^T diag(w/U^2) G,
// which expands to the five-term form below.
Eigen::MatrixXd rate_hessian(const Eigen::MatrixXd& gains,
                             const Eigen::VectorXd& w,
                             const Eigen::VectorXd& p) {
    const Eigen::ArrayXd total = 1.0 + (gains * p).array();
    const Eigen::ArrayXd interf = total - gains.diagonal().array() * p.array();
    const Eigen::VectorXd su = (w.array() / total.square()).matrix();
    const Eigen::VectorXd so = (w.array() / interf.square()).matrix();
    const Eigen::MatrixXd a1 = gains.transpose() * su.asDiagonal() * gains;
    const Eigen::MatrixXd a2 = gains.transpose() * so.asDiagonal() * gains;
    const Eigen::MatrixXd b =
        (so.array() * gains.diagonal().array()).matrix().asDiagonal() * gains;
    Eigen::MatrixXd hess = a2 - a1 - b - b.transpose();
    hess.diagonal() += b.diagonal();
    return hess;
}

// Newton polish of the stationarity system once block descent has stalled:
// solves for (p, lambda) on a working set (positive powers, tight rows),
// with a merit line search that also penalizes leaving the feasible set.
// Block descent alone has two slow failure modes that this cleans up: a
// long linear tail on ill-conditioned instances, and powers that should be
// exactly zero but only decay geometrically (the multiplicative update can
// never reach zero).  Each iteration therefore tries two candidates: the
// plain Newton step on everything currently positive, and an aggressive
// step that pins overpriced users (positive stationarity slack) to zero
// before solving for the rest.
void kkt_polish(const Eigen::MatrixXd& gains, const Eigen::MatrixXd& constraint,
                const Eigen::VectorXd& rho, const Eigen::VectorXd& w,
                double target, Eigen::VectorXd& p, Eigen::VectorXd& lambda) {
    const auto k = gains.rows();
    const auto s = constraint.rows();

    const auto merit_of = [&](const Eigen::VectorXd& pp,
                              const Eigen::VectorXd& ll) {
        const double cert =
            kkt_residual(gains, constraint, rho, w, pp, ll).max_residual();
        const double infeas =
            ((constraint * pp - rho).array() / rho.array()).maxCoeff();
        return std::max(cert,
                        std::max(0.0, infeas) * std::max(1.0, ll.maxCoeff()));
    };

    // Newton step for the working set `pos`, pinning everything else to
    // zero, followed by a backtracking merit line search.  Returns true and
    // updates (p, lambda, merit) when a candidate improves on `merit`.
    const auto try_step = [&](const std::vector<int>& pos,
                              const Eigen::VectorXd& slack,
                              double& merit) -> bool {
        if (pos.empty()) return false;

        // Zero-step base: pinned users drop out even before the Newton move,
        // so row loads and the feasibility residual are measured without them.
        Eigen::VectorXd p_base = Eigen::VectorXd::Zero(k);
        for (const int i : pos) p_base(i) = p(i);
        const Eigen::VectorXd load = constraint * p_base;

        const double lscale = std::max(lambda.maxCoeff(), 1.0);
        std::vector<int> act;
        for (Eigen::Index j = 0; j < s; ++j)
            if (lambda(j) > 1e-12 * lscale || load(j) >= rho(j) * (1.0 - 1e-9))
                act.push_back(static_cast<int>(j));

        // Independent active rows only; duplicated budgets (all antennas at
        // one site, say) would make the saddle system singular.
        std::vector<int> rows;
        if (!act.empty()) {
            Eigen::MatrixXd a_full(act.size(), pos.size());
            for (std::size_t r = 0; r < act.size(); ++r)
                for (std::size_t c = 0; c < pos.size(); ++c)
                    a_full(r, c) = constraint(act[r], pos[c]);
            Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(a_full.transpose());
            qr.setThreshold(1e-12);
            const auto rank = qr.rank();
            for (Eigen::Index r = 0; r < rank; ++r)
                rows.push_back(act[qr.colsPermutation().indices()(r)]);
        }

        const auto np = static_cast<Eigen::Index>(pos.size());
        const auto na = static_cast<Eigen::Index>(rows.size());
        const Eigen::MatrixXd hess = rate_hessian(gains, w, p);
        Eigen::MatrixXd kktm = Eigen::MatrixXd::Zero(np + na, np + na);
        Eigen::VectorXd rhs(np + na);
        for (Eigen::Index i = 0; i < np; ++i) {
            for (Eigen::Index j = 0; j < np; ++j)
                kktm(i, j) = hess(pos[i], pos[j]);
            rhs(i) = slack(pos[i]);  // = -(grad - R^T lambda)
        }
        for (Eigen::Index r = 0; r < na; ++r) {
            for (Eigen::Index i = 0; i < np; ++i) {
                kktm(np + r, i) = constraint(rows[r], pos[i]);
                kktm(i, np + r) = -constraint(rows[r], pos[i]);
            }
            rhs(np + r) = rho(rows[r]) - load(rows[r]);
        }

        const Eigen::VectorXd step =
            Eigen::PartialPivLU<Eigen::MatrixXd>(kktm).solve(rhs);
        if (!step.allFinite()) return false;

        for (double t = 1.0; t >= 0x1p-30; t *= 0.5) {
            Eigen::VectorXd pt = p_base;
            Eigen::VectorXd lt = lambda;
            for (Eigen::Index i = 0; i < np; ++i)
                pt(pos[i]) = std::max(0.0, pt(pos[i]) + t * step(i));
            for (Eigen::Index r = 0; r < na; ++r)
                lt(rows[r]) = std::max(0.0, lt(rows[r]) + t * step(np + r));
            const double mt = merit_of(pt, lt);
            if (mt < merit) {
                p = std::move(pt);
                lambda = std::move(lt);
                merit = mt;
                return true;
            }
        }
        return false;
    };

    double merit = merit_of(p, lambda);
    for (int it = 0; it < 60 && merit > target; ++it) {
        const Eigen::VectorXd grad = rate_gradient(gains, w, p);
        const Eigen::VectorXd slack = constraint.transpose() * lambda - grad;
        const double pmax = std::max(p.maxCoeff(), 1e-30);

        std::vector<int> pos, pos_aggressive;
        for (Eigen::Index i = 0; i < k; ++i) {
            const bool positive = p(i) > 1e-12 * pmax || slack(i) < 0.0;
            if (positive) pos.push_back(static_cast<int>(i));
            if (positive && slack(i) <= 0.0)
                pos_aggressive.push_back(static_cast<int>(i));
        }

        if (try_step(pos, slack, merit)) continue;
        if (pos_aggressive.size() < pos.size() &&
            try_step(pos_aggressive, slack, merit))
            continue;
        return;  // no candidate improves the merit
    }
}

}  // namespace

Eigen::VectorXd rate_gradient(const Eigen::MatrixXd& gains,
                              const Eigen::VectorXd& w,
                              const Eigen::VectorXd& p) {
    const Eigen::ArrayXd total = 1.0 + (gains * p).array();
    const Eigen::ArrayXd interf = total - gains.diagonal().array() * p.array();
    return gains.transpose() * (w.array() / total).matrix() -
           gains.transpose() * (w.array() / interf).matrix() +
           (gains.diagonal().array() * w.array() / interf).matrix();
}

KktCertificate kkt_residual(const Eigen::MatrixXd& gains,
                            const Eigen::MatrixXd& constraint,
                            const Eigen::VectorXd& rho,
                            const Eigen::VectorXd& w, const Eigen::VectorXd& p,
                            const Eigen::VectorXd& lambda, double p_zero_tol) {
    check_wmmse_inputs(gains, constraint, rho, w);
    if (p.size() != gains.rows() || lambda.size() != constraint.rows())
        throw std::invalid_argument("kkt_residual: size mismatch");

    const Eigen::VectorXd grad = rate_gradient(gains, w, p);
    const Eigen::VectorXd slack = constraint.transpose() * lambda - grad;

    KktCertificate cert;
    cert.nu = slack.cwiseMax(0.0);
    const double pmax = p.maxCoeff();
    double stat = 0.0;
    for (Eigen::Index k = 0; k < p.size(); ++k) {
        if (p(k) > p_zero_tol * pmax)
            stat = std::max(stat, std::abs(slack(k)));
        else
            stat = std::max(stat, std::max(0.0, -slack(k)));
    }
    cert.stationarity = stat;
    cert.complementarity_power =
        (lambda.array() * (rho - constraint * p).array()).abs().maxCoeff();
    cert.complementarity_nonneg =
        (cert.nu.array() * p.array()).abs().maxCoeff();
    return cert;
}

WmmseResult wmmse_power(const Eigen::MatrixXd& gains,
                        const Eigen::MatrixXd& constraint,
                        const Eigen::VectorXd& rho, const Eigen::VectorXd& w,
                        const WmmseOpts& opts) {
    check_wmmse_inputs(gains, constraint, rho, w);
    const auto k = gains.rows();
    const auto s = constraint.rows();

    // Largest uniform power that satisfies every budget.
    const Eigen::ArrayXd rowsum = constraint.rowwise().sum().array();
    const double c0 = std::sqrt((rho.array() / rowsum).minCoeff());
    Eigen::VectorXd q = Eigen::VectorXd::Constant(k, c0);
    Eigen::VectorXd lambda = Eigen::VectorXd::Zero(s);

    const Eigen::VectorXd sqrt_gkk = gains.diagonal().cwiseSqrt();
    const PowerStepSolver power_step(constraint, rho);

    WmmseResult out;
    if (opts.keep_trace) out.objective_trace.reserve(64);
    double prev_obj = std::numeric_limits<double>::infinity();

    int it = 0;
    for (; it < opts.max_outer; ++it) {
        const Eigen::VectorXd p = q.cwiseAbs2();
        const Eigen::ArrayXd total = 1.0 + (gains * p).array();
        const Eigen::ArrayXd interf = total - gains.diagonal().array() * p.array();

        // Receiver and weight updates are exact coordinate minimizers.
        const Eigen::VectorXd ups =
            (sqrt_gkk.array() * q.array() / total).matrix();
        const Eigen::VectorXd omega = (total / interf).matrix();

        const Eigen::VectorXd a = w.cwiseProduct(omega);
        const Eigen::VectorXd b = ups.cwiseProduct(sqrt_gkk);
        const Eigen::VectorXd coupling =
            gains.transpose() *
                (w.array() * omega.array() * ups.array().square()).matrix() -
            (w.array() * omega.array() * ups.array().square() *
             gains.diagonal().array())
                .matrix();

        const PowerStep step = power_step.solve(a, b, coupling, q, lambda,
                                                opts.dual_max_iter,
                                                opts.dual_gap_tol);
        q = step.q;
        lambda = step.lambda;
        out.dual_gap = step.gap;

        const double obj = surrogate_objective(gains, w, ups, omega, b, q);
        if (opts.keep_trace) out.objective_trace.push_back(obj);

        const bool stalled =
            std::abs(prev_obj - obj) <= opts.rel_tol * std::max(1.0, std::abs(obj));
        prev_obj = obj;
        out.objective = obj;

        // Convergence means the certificate says so; a stalled surrogate
        // that still fails the certificate is reported as not converged.
        out.cert = kkt_residual(gains, constraint, rho, w, q.cwiseAbs2(), lambda);
        if (opts.kkt_target > 0.0 &&
            out.cert.max_residual() <= opts.kkt_target) {
            out.converged = true;
            break;
        }
        if (stalled) break;
    }
    out.iterations = std::min(it + 1, opts.max_outer);
    out.p = q.cwiseAbs2();
    out.lambda = lambda;
    if (!out.converged && opts.kkt_target > 0.0) {
        kkt_polish(gains, constraint, rho, w, opts.kkt_target, out.p,
                   out.lambda);
        out.cert = kkt_residual(gains, constraint, rho, w, out.p, out.lambda);
        out.converged = out.cert.max_residual() <= opts.kkt_target;
    }
    out.rate = weighted_sum_rate_from_gains(gains, out.p, w);
    return out;
}

DeDerivatives de_derivatives_wrt_alpha(const DeState& de, double cond_limit) {
    const auto k = de.sigma.rows();
    const double s = static_cast<double>(de.sigma.cols());
    const Eigen::MatrixXd s2 = de.sigma.array().square();
    const Eigen::ArrayXd one_xi = 1.0 + de.xi.array();

    DeDerivatives der;

    // d(xi)/d(alpha) from the xi fixed point: (I - D) dxi = -b with
    // b_l = (1/S) sum_m sigma_lm^2 / f_m^2.
    const Eigen::ArrayXd f2 = de.f.array().square();
    const Eigen::MatrixXd d_mat =
        (s2 * (1.0 / f2).matrix().asDiagonal() * s2.transpose()) / s;
    const Eigen::MatrixXd coupling =
        d_mat * (1.0 / one_xi.square()).matrix().asDiagonal() / s;
    const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(k, k);
    Eigen::PartialPivLU<Eigen::MatrixXd> lu_xi(eye - coupling);
    {
        const Eigen::MatrixXd inv = lu_xi.inverse();
        const double cond =
            (eye - coupling).cwiseAbs().colwise().sum().maxCoeff() *
            inv.cwiseAbs().colwise().sum().maxCoeff();
        if (!(cond < cond_limit))
            throw NumericalError("de_derivatives: xi system numerically singular");
    }
    const Eigen::VectorXd b_vec = (s2 * (1.0 / f2).matrix()) / s;
    der.dxi = lu_xi.solve(-b_vec);

    // theta rows: (I - D) dtheta_k = dd_k + dD theta_k.
    const Eigen::ArrayXd df =
        1.0 - (s2.transpose() * (der.dxi.array() / one_xi.square()).matrix()).array() / s;
    const Eigen::MatrixXd dd_mat =
        -2.0 / s *
        (s2 * (df / f2 / de.f.array()).matrix().asDiagonal() * s2.transpose());
    const Eigen::MatrixXd dcoupling =
        (dd_mat * (1.0 / one_xi.square()).matrix().asDiagonal() -
         2.0 * d_mat * (der.dxi.array() / one_xi.cube()).matrix().asDiagonal()) /
        s;
    const Eigen::MatrixXd theta_cols = de.theta.transpose();
    der.dtheta = lu_xi.solve(dd_mat + dcoupling * theta_cols).transpose();

    // v chain: dv = -(alpha I + diag(delta) - C)^{-1} v.
    Eigen::MatrixXd m = -de.c_mat;
    m.diagonal().array() += de.alpha + de.delta.array();
    Eigen::PartialPivLU<Eigen::MatrixXd> lu_m(m);
    {
        const Eigen::MatrixXd inv = lu_m.inverse();
        const double cond = m.cwiseAbs().colwise().sum().maxCoeff() *
                            inv.cwiseAbs().colwise().sum().maxCoeff();
        if (!(cond < cond_limit))
            throw NumericalError("de_derivatives: v system numerically singular");
    }
    der.dv = -lu_m.solve(de.v);

    const Eigen::ArrayXd psi = de.psi.array();
    const Eigen::VectorXd dpsi = (s2.transpose() * der.dv) / s;
    der.ddelta = -(s2 * (dpsi.array() / psi.square()).matrix()) / s;

    // C and r_bar differentiate through v and psi.
    der.dc_mat =
        (der.dv.asDiagonal() * (s2 * (1.0 / psi.square()).matrix().asDiagonal() *
                                s2.transpose()) +
         de.v.asDiagonal() * (s2 * (-2.0 * dpsi.array() / psi.cube())
                                       .matrix()
                                       .asDiagonal() *
                              s2.transpose())) /
        (s * s);

    const Eigen::MatrixXd w_mat = de.v.asDiagonal() * s2 / s;
    const Eigen::MatrixXd dw_mat = der.dv.asDiagonal() * s2 / s;
    der.dr_bar = Eigen::MatrixXd(
        (dw_mat * (1.0 / psi).matrix() -
         w_mat * (dpsi.array() / psi.square()).matrix())
            .asDiagonal());
    der.dr_bar.noalias() -=
        dw_mat * (1.0 / psi.square()).matrix().asDiagonal() * w_mat.transpose();
    der.dr_bar.noalias() -=
        w_mat * (1.0 / psi.square()).matrix().asDiagonal() * dw_mat.transpose();
    der.dr_bar.noalias() +=
        2.0 * w_mat * (dpsi.array() / psi.cube()).matrix().asDiagonal() *
        w_mat.transpose();

    der.dr_hat = -de.r_hat / de.alpha -
                 (2.0 / (de.alpha * s)) *
                     (s2 * (dpsi.array() / psi.cube()).matrix().asDiagonal());

    // Effective gains.
    der.dgains =
        ((1.0 / one_xi.square()).matrix().asDiagonal() * der.dtheta *
             (1.0 / one_xi.square()).matrix().asDiagonal() -
         2.0 * ((der.dxi.array() / one_xi.cube()).matrix().asDiagonal() * de.theta *
                    (1.0 / one_xi.square()).matrix().asDiagonal() +
                (1.0 / one_xi.square()).matrix().asDiagonal() * de.theta *
                    (der.dxi.array() / one_xi.cube()).matrix().asDiagonal())) /
        s;
    der.dgains.diagonal() =
        (2.0 * de.xi.array() * der.dxi.array() / one_xi.cube()).matrix();

    // Constraint matrix: R = r_hat^T (V - M^{-1} r_bar).
    const Eigen::MatrixXd m_inv_rbar = lu_m.solve(de.r_bar);
    Eigen::MatrixXd dm = -der.dc_mat;
    dm.diagonal().array() += 1.0 + der.ddelta.array();
    const Eigen::MatrixXd inner =
        Eigen::MatrixXd(de.v.asDiagonal()) - m_inv_rbar;
    der.dconstraint =
        der.dr_hat.transpose() * inner +
        de.r_hat.transpose() *
            (Eigen::MatrixXd(der.dv.asDiagonal()) -
             lu_m.solve(der.dr_bar - dm * m_inv_rbar));
    return der;
}

Eigen::VectorXd sensitivity_dp_dalpha(const DeState& de,
                                      const DeDerivatives& der,
                                      const Eigen::VectorXd& p,
                                      const Eigen::VectorXd& lambda,
                                      const Eigen::VectorXd& nu,
                                      const Eigen::VectorXd& rho,
                                      const Eigen::VectorXd& w,
                                      const SensitivityOpts& opts) {
    const auto k = de.gains.rows();
    const auto s = de.constraint.rows();
    if (p.size() != k || lambda.size() != s || nu.size() != k ||
        rho.size() != s || w.size() != k)
        throw std::invalid_argument("sensitivity: size mismatch");

    const Eigen::MatrixXd& g = de.gains;
    const Eigen::MatrixXd& dg = der.dgains;
    const Eigen::ArrayXd total = 1.0 + (g * p).array();
    const Eigen::ArrayXd interf = total - g.diagonal().array() * p.array();

    // Hessian of the weighted sum rate at p.
    const Eigen::MatrixXd a1 =
        g.transpose() * (w.array() / total.square()).matrix().asDiagonal() * g;
    const Eigen::MatrixXd a2 =
        g.transpose() * (w.array() / interf.square()).matrix().asDiagonal() * g;
    const Eigen::MatrixXd b_mat =
        (w.array() * g.diagonal().array() / interf.square())
            .matrix()
            .asDiagonal() *
        g;
    Eigen::MatrixXd hess = a2 - a1 - b_mat - b_mat.transpose();
    hess.diagonal() += b_mat.diagonal();

    // Forcing term: negative alpha-derivative of the rate gradient at fixed p.
    const Eigen::VectorXd du0 = dg * p;
    const Eigen::VectorXd domega0 = du0 - p.cwiseProduct(dg.diagonal());
    Eigen::VectorXd e =
        g.transpose() * (w.array() * du0.array() / total.square()).matrix() -
        dg.transpose() * (w.array() / total).matrix() +
        dg.transpose() * (w.array() / interf).matrix() -
        (w.array() / interf * dg.diagonal().array()).matrix() -
        (g.transpose() * (w.array() * domega0.array() / interf.square()).matrix() -
         (w.array() * g.diagonal().array() * domega0.array() / interf.square())
             .matrix());

    // Active sets with strict-complementarity checks.
    const Eigen::VectorXd load = de.constraint * p;
    const double pmax = p.maxCoeff();
    const double lscale = 1.0 + lambda.cwiseAbs().maxCoeff();
    const double nscale = 1.0 + nu.cwiseAbs().maxCoeff();
    std::vector<int> act, pos;
    for (Eigen::Index j = 0; j < s; ++j) {
        if (rho(j) - load(j) < opts.active_tol * rho(j)) {
            if (lambda(j) <= opts.degenerate_tol * lscale)
                throw DegenerateActiveSet(
                    "sensitivity: active power constraint with zero multiplier");
            act.push_back(static_cast<int>(j));
        }
    }
    for (Eigen::Index i = 0; i < k; ++i) {
        if (p(i) > opts.p_zero_tol * pmax) {
            pos.push_back(static_cast<int>(i));
        } else if (nu(i) <= opts.degenerate_tol * nscale) {
            throw DegenerateActiveSet(
                "sensitivity: vanishing power with zero reduced cost");
        }
    }
    if (pos.empty()) return Eigen::VectorXd::Zero(k);

    const auto np = static_cast<Eigen::Index>(pos.size());
    const auto na = static_cast<Eigen::Index>(act.size());
    Eigen::MatrixXd sys = Eigen::MatrixXd::Zero(np + na, np + na);
    Eigen::VectorXd rhs(np + na);

    const Eigen::VectorXd force = der.dconstraint.transpose() * lambda + e;
    for (Eigen::Index i = 0; i < np; ++i) {
        for (Eigen::Index j = 0; j < np; ++j) sys(i, j) = hess(pos[i], pos[j]);
        for (Eigen::Index j = 0; j < na; ++j)
            sys(i, np + j) = -de.constraint(act[j], pos[i]);
        rhs(i) = force(pos[i]);
    }
    const Eigen::VectorXd dload = der.dconstraint * p;
    for (Eigen::Index i = 0; i < na; ++i) {
        for (Eigen::Index j = 0; j < np; ++j)
            sys(np + i, j) = de.constraint(act[i], pos[j]);
        rhs(np + i) = -dload(act[i]);
    }

    Eigen::PartialPivLU<Eigen::MatrixXd> lu(sys);
    {
        const Eigen::MatrixXd inv = lu.inverse();
        const double cond = sys.cwiseAbs().colwise().sum().maxCoeff() *
                            inv.cwiseAbs().colwise().sum().maxCoeff();
        if (!(cond < opts.cond_limit))
            throw DegenerateActiveSet("sensitivity: KKT system singular");
    }
    const Eigen::VectorXd sol = lu.solve(rhs);

    Eigen::VectorXd dp = Eigen::VectorXd::Zero(k);
    for (Eigen::Index i = 0; i < np; ++i) dp(pos[i]) = sol(i);
    return dp;
}

double dI_dalpha(const DeState& de, const DeDerivatives& der,
                 const Eigen::VectorXd& p, const Eigen::VectorXd& dp,
                 const Eigen::VectorXd& w) {
    const Eigen::MatrixXd& g = de.gains;
    const Eigen::MatrixXd& dg = der.dgains;
    const Eigen::ArrayXd total = 1.0 + (g * p).array();
    const Eigen::ArrayXd interf = total - g.diagonal().array() * p.array();

    const Eigen::ArrayXd dtotal = (dg * p + g * dp).array();
    const Eigen::ArrayXd dinterf = dtotal - dg.diagonal().array() * p.array() -
                                   g.diagonal().array() * dp.array();
    return (w.array() * (dtotal / total - dinterf / interf)).sum();
}

namespace {

struct AlphaPoint {
    DeState de;
    WmmseResult res;
    AlphaEval eval;
};

AlphaPoint evaluate_alpha(const Eigen::MatrixXd& sigma_a,
                          const Eigen::VectorXd& w, const Eigen::VectorXd& rho_a,
                          double alpha, const BisectionOpts& opts) {
    AlphaPoint pt;
    pt.de = solve_de_state(sigma_a, alpha, opts.fp);
    pt.res = wmmse_power(pt.de.gains, pt.de.constraint, rho_a, w, opts.wmmse);
    pt.eval.alpha = alpha;
    pt.eval.rate = pt.res.rate;

    const DeDerivatives der = de_derivatives_wrt_alpha(pt.de, opts.fp.cond_limit);
    try {
        const Eigen::VectorXd dp = sensitivity_dp_dalpha(
            pt.de, der, pt.res.p, pt.res.lambda, pt.res.cert.nu, rho_a, w);
        pt.eval.slope = dI_dalpha(pt.de, der, pt.res.p, dp, w);
    } catch (const DegenerateActiveSet&) {
        // Symmetric difference of the re-optimized rate.
        const double h = opts.fd_delta * alpha;
        const DeState de_hi = solve_de_state(sigma_a, alpha + h, opts.fp);
        const DeState de_lo = solve_de_state(sigma_a, alpha - h, opts.fp);
        const double hi =
            wmmse_power(de_hi.gains, de_hi.constraint, rho_a, w, opts.wmmse).rate;
        const double lo =
            wmmse_power(de_lo.gains, de_lo.constraint, rho_a, w, opts.wmmse).rate;
        pt.eval.slope = (hi - lo) / (2.0 * h);
        pt.eval.fd_fallback = true;
    }
    return pt;
}

BisectionResult finish(AlphaPoint&& pt, int boundary,
                       std::vector<AlphaEval>&& trace) {
    BisectionResult out;
    out.alpha = pt.eval.alpha;
    out.p = std::move(pt.res.p);
    out.lambda = std::move(pt.res.lambda);
    out.cert = std::move(pt.res.cert);
    out.rate = pt.res.rate;
    out.boundary = boundary;
    out.trace = std::move(trace);
    return out;
}

}  // namespace

BisectionResult bisection_alpha(const Eigen::MatrixXd& sigma_a,
                                const Eigen::VectorXd& w,
                                const Eigen::VectorXd& rho_a,
                                const BisectionOpts& opts) {
    if (!(opts.alpha_min > 0.0) || !(opts.alpha_max > opts.alpha_min))
        throw std::invalid_argument("bisection_alpha: need 0 < alpha_min < alpha_max");
    if (opts.grid_points < 2)
        throw std::invalid_argument("bisection_alpha: need grid_points >= 2");
    const double width =
        opts.width > 0.0 ? opts.width : 1e-4 * (opts.alpha_max - opts.alpha_min);

    // Phase 1: log-spaced scan to pick the basin.
    const int n = opts.grid_points;
    const double ratio = opts.alpha_max / opts.alpha_min;
    std::vector<double> alphas(n);
    for (int i = 0; i < n; ++i)
        alphas[i] = opts.alpha_min * std::pow(ratio, double(i) / (n - 1));
    alphas.back() = opts.alpha_max;

    std::vector<AlphaEval> scan(n);
    std::vector<AlphaEval> trace;
    trace.reserve(n + 40);
    AlphaPoint best;
    int arg = 0;
    for (int i = 0; i < n; ++i) {
        AlphaPoint pt = evaluate_alpha(sigma_a, w, rho_a, alphas[i], opts);
        scan[i] = pt.eval;
        trace.push_back(pt.eval);
        if (i == 0 || pt.eval.rate > best.eval.rate) {
            best = std::move(pt);
            arg = i;
        }
    }
    if (arg == 0 && scan.front().slope <= 0.0)
        return finish(std::move(best), -1, std::move(trace));
    if (arg == n - 1 && scan.back().slope >= 0.0)
        return finish(std::move(best), +1, std::move(trace));

    // Phase 2: derivative-sign bisection inside the bracketing cells.
    double lo = alphas[std::max(0, arg - 1)];
    double hi = alphas[std::min(n - 1, arg + 1)];
    while (hi - lo > width) {
        const double mid = 0.5 * (lo + hi);
        AlphaPoint pt = evaluate_alpha(sigma_a, w, rho_a, mid, opts);
        trace.push_back(pt.eval);
        const bool record = pt.eval.rate > best.eval.rate;
        const bool downhill = pt.eval.slope <= 0.0;
        if (record) best = std::move(pt);
        if (downhill)
            hi = mid;
        else
            lo = mid;
    }
    AlphaPoint star = evaluate_alpha(sigma_a, w, rho_a, 0.5 * (lo + hi), opts);
    trace.push_back(star.eval);
    if (star.eval.rate >= best.eval.rate)
        return finish(std::move(star), 0, std::move(trace));
    // The refinement never improved on a scan point; keep the scan winner.
    const int boundary = best.eval.alpha == opts.alpha_min   ? -1
                         : best.eval.alpha == opts.alpha_max ? +1
                                                             : 0;
    return finish(std::move(best), boundary, std::move(trace));
}

WaterfillResult waterfill_collocated(const Eigen::VectorXd& sigma_users,
                                     double alpha, double power_target,
                                     const Eigen::VectorXd& w, int num_active,
                                     const FixedPointOpts& fp) {
    const auto k = sigma_users.size();
    if (k == 0) throw std::invalid_argument("waterfill: no users");
    if (w.size() != k || (w.array() <= 0.0).any())
        throw std::invalid_argument("waterfill: weights must be positive");
    if (!(power_target > 0.0))
        throw std::invalid_argument("waterfill: power target must be > 0");

    const double u = collocated_u(sigma_users, alpha, num_active, fp);
    const double s = static_cast<double>(num_active);
    const Eigen::ArrayXd s2 = sigma_users.array().square();
    const Eigen::ArrayXd denom2 = (1.0 + s2 * u).square();
    const double f12 = (s2 / denom2).sum() / s;
    const double af = alpha + f12;

    // Constraint is sum_k coeff_k p_k = power_target.
    const Eigen::ArrayXd coeff = s2 * u / (s * denom2 * af);
    // Water-filling ceiling and floor per user.
    const Eigen::ArrayXd lead = w.array() / coeff;
    const Eigen::ArrayXd off =
        (s2 * power_target + denom2) / (s2 * s2 * u * u).max(kTiny);

    auto powers_at = [&](double level) -> Eigen::ArrayXd {
        return (s2 > 0.0).select((lead / level - off).max(0.0), 0.0);
    };
    auto spent = [&](double level) { return (coeff * powers_at(level)).sum(); };

    double lo = 1.0, hi = 1.0;
    while (spent(lo) <= power_target && lo > 1e-200) lo *= 0.5;
    while (spent(hi) > power_target && hi < 1e200) hi *= 2.0;
    if (!(spent(lo) > power_target))
        throw NumericalError("waterfill: no user has a usable gain");
    for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (spent(mid) > power_target)
            lo = mid;
        else
            hi = mid;
        if ((hi - lo) <= 1e-16 * hi) break;
    }

    WaterfillResult out;
    out.lambda = 0.5 * (lo + hi);
    out.p = powers_at(out.lambda).matrix();
    out.constraint_value = spent(out.lambda);
    out.de = collocated_de(sigma_users, alpha, num_active, out.p, fp);
    out.rate = (w.array() * (1.0 + out.de.sinr.array()).log()).sum();
    return out;
}

}  // namespace cranopt
