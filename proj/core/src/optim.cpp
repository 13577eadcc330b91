#include "optim.hpp"

#include <cmath>
#include <deque>
#include <vector>

namespace volcast::detail {
namespace {

bool finite(double v) { return std::isfinite(v); }

} // namespace

LbfgsResult lbfgs_maximize(const Objective& f, const Eigen::VectorXd& x0,
                           const LbfgsOptions& opts) {
    // Internally minimize -f.
    const auto neg = [&f](const Eigen::VectorXd& x) {
        auto [v, g] = f(x);
        return std::make_pair(-v, Eigen::VectorXd(-g));
    };

    LbfgsResult out;
    out.x = x0;

    auto [fx, gx] = neg(x0);
    if (!finite(fx) || !gx.allFinite()) {
        out.value = -fx;
        out.gradient = -gx;
        return out; // caller decides what a non-finite start means
    }

    std::deque<Eigen::VectorXd> s_hist, y_hist;
    std::deque<double> rho_hist;

    Eigen::VectorXd x = x0, g = gx;
    double fval = fx;

    for (int iter = 0; iter < opts.max_iter; ++iter) {
        if (g.lpNorm<Eigen::Infinity>() <= opts.tol) {
            out.converged = true;
            break;
        }

        // Two-loop recursion for the search direction d = -H·g.
        Eigen::VectorXd q = g;
        const int m = static_cast<int>(s_hist.size());
        std::vector<double> alpha_coef(m);
        for (int i = m - 1; i >= 0; --i) {
            alpha_coef[i] = rho_hist[i] * s_hist[i].dot(q);
            q -= alpha_coef[i] * y_hist[i];
        }
        if (m > 0) {
            const double gamma =
                s_hist.back().dot(y_hist.back()) / y_hist.back().squaredNorm();
            q *= gamma;
        }
        for (int i = 0; i < m; ++i) {
            const double beta = rho_hist[i] * y_hist[i].dot(q);
            q += (alpha_coef[i] - beta) * s_hist[i];
        }
        Eigen::VectorXd d = -q;

        double dg = d.dot(g);
        if (!(dg < 0.0)) { // not a descent direction: fall back to steepest
            d = -g;
            dg = -g.squaredNorm();
            s_hist.clear();
            y_hist.clear();
            rho_hist.clear();
        }

        // Armijo backtracking. First iteration scales by gradient size so a
        // wild initial step cannot overflow the objective.
        double step = (iter == 0 && m == 0)
                          ? std::min(1.0, 1.0 / std::max(1.0, g.norm()))
                          : 1.0;
        constexpr double c1 = 1e-4;
        bool accepted = false;
        Eigen::VectorXd x_new, g_new;
        double f_new = 0.0;
        for (int ls = 0; ls < 50; ++ls) {
            x_new = x + step * d;
            auto [fv, gv] = neg(x_new);
            if (finite(fv) && gv.allFinite() && fv <= fval + c1 * step * dg) {
                f_new = fv;
                g_new = gv;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if (!accepted) break; // stalled: report best iterate so far

        const Eigen::VectorXd s = x_new - x;
        const Eigen::VectorXd yv = g_new - g;
        const double sy = s.dot(yv);
        if (sy > 1e-12 * s.norm() * yv.norm()) { // curvature guard
            s_hist.push_back(s);
            y_hist.push_back(yv);
            rho_hist.push_back(1.0 / sy);
            if (static_cast<int>(s_hist.size()) > opts.memory) {
                s_hist.pop_front();
                y_hist.pop_front();
                rho_hist.pop_front();
            }
        }

        x = std::move(x_new);
        g = std::move(g_new);
        fval = f_new;
        out.iterations = iter + 1;
    }

    out.x = std::move(x);
    out.value = -fval;
    out.gradient = -g;
    if (!out.converged && g.lpNorm<Eigen::Infinity>() <= opts.tol)
        out.converged = true;
    return out;
}

} // namespace volcast::detail
