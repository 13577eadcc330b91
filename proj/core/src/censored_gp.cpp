#include "volcast/censored_gp.hpp"

#include <Eigen/Cholesky>
#include <cmath>
#include <fstream>
#include <limits>

#include "nlohmann/json.hpp"
#include "volcast/errors.hpp"

namespace volcast {
namespace {

constexpr double kSqrt2 = 1.4142135623730950488;
constexpr double kSqrt2Pi = 2.5066282746310005024;
constexpr double kSqrt2OverPi = 0.7978845608028653559;
constexpr double kSqrtPi = 1.7724538509055160273;
constexpr double kInf = std::numeric_limits<double>::infinity();

/// exp(x²)·erfc(x) without overflow: direct product while exp(x²) is
/// representable against erfc's decay, asymptotic series beyond.
double erfcx_stable(double x) {
    if (x < 12.0) return std::exp(x * x) * std::erfc(x);
    const double inv2x2 = 1.0 / (2.0 * x * x);
    double term = 1.0, sum = 1.0;
    for (int k = 1; k <= 20; ++k) {
        term *= -(2.0 * k - 1.0) * inv2x2;
        sum += term;
        if (std::abs(term) < 1e-17 * std::abs(sum)) break;
    }
    return sum / (x * kSqrtPi);
}

/// Upper-tail hazard φ(z)/(1−Φ(z)); the exp factors cancel analytically for
/// large z so this never degenerates to 0/0.
double hazard(double z) {
    if (z < 8.0) return normal_pdf(z) / (0.5 * std::erfc(z / kSqrt2));
    return kSqrt2OverPi / erfcx_stable(z / kSqrt2);
}

} // namespace

double normal_pdf(double z) { return std::exp(-0.5 * z * z) / kSqrt2Pi; }

double normal_cdf(double z) { return 0.5 * std::erfc(-z / kSqrt2); }

TruncatedMoments truncated_gaussian_moments(double mu, double sigma, double lower) {
    if (!(sigma > 0.0))
        throw UsageError("truncated_gaussian_moments: sigma must be > 0");
    TruncatedMoments m;
    if (lower == -kInf) {
        m.mass = 1.0;
        m.mean = mu;
        m.variance = sigma * sigma;
        return m;
    }
    const double z = (lower - mu) / sigma;
    m.mass = std::max(0.5 * std::erfc(z / kSqrt2),
                      std::numeric_limits<double>::min());
    const double h = hazard(z);
    m.mean = std::max(mu + sigma * h, lower); // h(z) > z, so ≥ lower up to rounding
    const double v = 1.0 + z * h - h * h;
    m.variance = sigma * sigma * std::min(std::max(v, 0.0), 1.0);
    return m;
}

namespace {

/// Tilted moments of the latent f under cavity N(mu_cav, var_cav) times the
/// Tobit factor for one censored observation with noise variance sn2.
/// Works through the noisy variable u = f + ε, truncated at the bound.
void tilted_moments(double mu_cav, double var_cav, double sn2, double bound,
                    bool above, double& mhat, double& vhat) {
    const double s2 = var_cav + sn2;
    const double s = std::sqrt(s2);
    double mu_u, var_u;
    if (above) {
        const TruncatedMoments tm = truncated_gaussian_moments(mu_cav, s, bound);
        mu_u = tm.mean;
        var_u = tm.variance;
    } else {
        const TruncatedMoments tm = truncated_gaussian_moments(-mu_cav, s, -bound);
        mu_u = -tm.mean;
        var_u = tm.variance;
    }
    const double r = var_cav / s2;
    mhat = mu_cav + r * (mu_u - mu_cav);
    vhat = std::max(var_cav - r * r * (s2 - var_u), 1e-14 * var_cav);
}

/// Stable posterior recompute from site parameters:
/// Σ = K − (S̃^½K)ᵀ B⁻¹ (S̃^½K) with B = I + S̃^½ K S̃^½, μ = Σ ν̃.
void recompute_posterior(const Eigen::MatrixXd& K, const Eigen::VectorXd& tau,
                         const Eigen::VectorXd& nu, Eigen::MatrixXd& Sigma,
                         Eigen::VectorXd& mu) {
    const Eigen::Index n = K.rows();
    const Eigen::VectorXd sq = tau.cwiseSqrt();
    Eigen::MatrixXd B = sq.asDiagonal() * K * sq.asDiagonal();
    B.diagonal().array() += 1.0;
    Eigen::LLT<Eigen::MatrixXd> llt(B);
    if (llt.info() != Eigen::Success)
        throw ModelError("EP: site-augmented system is not positive definite");
    Eigen::MatrixXd W = sq.asDiagonal() * K;
    Eigen::MatrixXd L = llt.matrixL();
    L.triangularView<Eigen::Lower>().solveInPlace(W);
    Sigma = K - W.transpose() * W;
    mu = Sigma * nu;
    (void)n;
}

} // namespace

CensoredGp CensoredGp::from_parts(Eigen::MatrixXd inputs_std,
                                  std::vector<CensoredTarget> targets_centered,
                                  GpHyperparams hyper_std,
                                  Standardizer standardizer, double center,
                                  EpState state) {
    CensoredGp m;
    m.inputs_ = std::move(inputs_std);
    m.targets_ = std::move(targets_centered);
    m.hyper_ = std::move(hyper_std);
    m.standardizer_ = std::move(standardizer);
    m.center_ = center;
    m.state_ = std::move(state);

    const Eigen::Index n = m.inputs_.rows();
    m.kernel_ = kernel_matrix(m.inputs_, m.inputs_, m.hyper_);
    m.sqrt_tau_ = m.state_.site_precisions.cwiseSqrt();

    Eigen::MatrixXd B = m.sqrt_tau_.asDiagonal() * m.kernel_ *
                        m.sqrt_tau_.asDiagonal();
    B.diagonal().array() += 1.0;
    Eigen::LLT<Eigen::MatrixXd> llt(B);
    if (llt.info() != Eigen::Success)
        throw ModelError("EP: site-augmented system is not positive definite");
    m.chol_b_ = llt.matrixL();

    const Eigen::VectorXd knu = m.kernel_ * m.state_.site_nu;
    m.predict_weights_ =
        m.state_.site_nu -
        (m.sqrt_tau_.asDiagonal() *
         llt.solve(m.sqrt_tau_.asDiagonal() * knu));

    Eigen::MatrixXd Sigma;
    Eigen::VectorXd mu;
    recompute_posterior(m.kernel_, m.state_.site_precisions, m.state_.site_nu,
                        Sigma, mu);
    m.post_mean_ = std::move(mu);
    m.post_var_ = Sigma.diagonal().cwiseMax(0.0);
    (void)n;
    return m;
}

GpHyperparams CensoredGp::raw_hyper() const {
    GpHyperparams h = hyper_;
    h.log_lengthscales =
        hyper_.log_lengthscales + standardizer_.scale.array().log().matrix();
    return h;
}

Eigen::VectorXd CensoredGp::post_mean() const {
    return (post_mean_.array() + center_).matrix();
}

CensoredGp ep_fit(const Eigen::MatrixXd& X, const std::vector<CensoredTarget>& y,
                  const GpHyperparams& raw_hyper, const EpOptions& opts) {
    const Eigen::Index n = X.rows();
    if (n < 1) throw UsageError("ep_fit: at least one observation required");
    if (static_cast<Eigen::Index>(y.size()) != n)
        throw UsageError("ep_fit: X rows and target count differ");
    if (X.cols() != raw_hyper.dim())
        throw UsageError("ep_fit: input dimension and lengthscale count differ");

    const Standardizer s = opts.standardize_inputs
                               ? Standardizer::fit(X)
                               : Standardizer::identity(X.cols());
    const Eigen::MatrixXd Xs = s.apply(X);
    GpHyperparams h = raw_hyper;
    h.log_lengthscales =
        raw_hyper.log_lengthscales - s.scale.array().log().matrix();

    double center = 0.0;
    if (opts.center_targets) {
        double sum = 0.0;
        int exact_count = 0;
        for (const auto& t : y)
            if (t.status == CensorStatus::exact) {
                sum += t.value;
                ++exact_count;
            }
        if (exact_count > 0) {
            center = sum / exact_count;
        } else {
            for (const auto& t : y) sum += t.bound;
            center = sum / static_cast<double>(n);
        }
    }
    std::vector<CensoredTarget> yc = y;
    for (auto& t : yc) {
        t.value -= center;
        t.bound -= center;
    }

    const Eigen::MatrixXd K = kernel_matrix(Xs, Xs, h);
    const double sn2 = h.noise_var();

    Eigen::VectorXd tau = Eigen::VectorXd::Zero(n);
    Eigen::VectorXd nu = Eigen::VectorXd::Zero(n);
    bool any_censored = false;
    for (Eigen::Index i = 0; i < n; ++i) {
        if (yc[i].status == CensorStatus::exact) {
            tau[i] = 1.0 / sn2;
            nu[i] = yc[i].value / sn2;
        } else {
            any_censored = true;
        }
    }

    EpState state;
    state.damping = opts.damping;

    if (any_censored) {
        Eigen::MatrixXd Sigma;
        Eigen::VectorXd mu;
        recompute_posterior(K, tau, nu, Sigma, mu);

        const double eta = opts.damping;
        for (int sweep = 1; sweep <= opts.max_sweeps; ++sweep) {
            double max_delta = 0.0;
            for (Eigen::Index i = 0; i < n; ++i) {
                if (yc[i].status == CensorStatus::exact) continue;
                const double sigma_ii = Sigma(i, i);
                const double tau_cav = 1.0 / sigma_ii - tau[i];
                const double nu_cav = mu[i] / sigma_ii - nu[i];
                if (!(tau_cav > 1e-12)) continue; // invalid cavity: leave site
                const double mu_cav = nu_cav / tau_cav;
                const double var_cav = 1.0 / tau_cav;

                double mhat = 0.0, vhat = 0.0;
                tilted_moments(mu_cav, var_cav, sn2, yc[i].bound,
                               yc[i].status == CensorStatus::censored_above,
                               mhat, vhat);

                const double tau_raw = 1.0 / vhat - tau_cav;
                const double nu_raw = mhat / vhat - nu_cav;
                double tau_new = (1.0 - eta) * tau[i] + eta * tau_raw;
                const double nu_new = (1.0 - eta) * nu[i] + eta * nu_raw;
                if (tau_new < 0.0) tau_new = 0.0;
                if (!std::isfinite(tau_new) || !std::isfinite(nu_new))
                    throw ModelError("EP divergence at sweep " +
                                     std::to_string(sweep) + ", site " +
                                     std::to_string(i));

                const double dtau = tau_new - tau[i];
                max_delta = std::max({max_delta, std::abs(dtau),
                                      std::abs(nu_new - nu[i])});
                tau[i] = tau_new;
                nu[i] = nu_new;

                const double denom = 1.0 + dtau * sigma_ii;
                if (denom > 1e-12) {
                    const Eigen::VectorXd col = Sigma.col(i);
                    Sigma.noalias() -= (dtau / denom) * (col * col.transpose());
                    mu.noalias() = Sigma * nu;
                } else {
                    recompute_posterior(K, tau, nu, Sigma, mu);
                }
            }
            // Guard against accumulated rank-one drift before testing
            // convergence on the next sweep.
            recompute_posterior(K, tau, nu, Sigma, mu);
            state.sweeps = sweep;
            if (max_delta < opts.tol) {
                state.converged = true;
                break;
            }
        }
    } else {
        state.converged = true;
        state.sweeps = 0;
    }

    state.site_precisions = tau;
    state.site_nu = nu;
    state.site_means = Eigen::VectorXd::Zero(n);
    for (Eigen::Index i = 0; i < n; ++i)
        if (tau[i] > 0.0) state.site_means[i] = nu[i] / tau[i];

    return CensoredGp::from_parts(Xs, std::move(yc), std::move(h), s, center,
                                  std::move(state));
}

CensoredPrediction predict_censored(const CensoredGp& model,
                                    const Eigen::MatrixXd& Xstar, double bound) {
    if (Xstar.cols() != model.dim())
        throw UsageError("predict_censored: dimension mismatch");
    CensoredPrediction p;
    const Eigen::Index m = Xstar.rows();
    p.latent_mean.resize(m);
    p.latent_variance.resize(m);
    p.prob_exceeds_bound.resize(m);
    if (m == 0) return p;

    const Eigen::MatrixXd Xs = model.standardizer().apply(Xstar);
    const Eigen::MatrixXd Kstar = kernel_matrix(model.inputs(), Xs, model.hyper());
    p.latent_mean = Kstar.transpose() * model.predict_weights();
    p.latent_mean.array() += model.center();

    Eigen::MatrixXd V = model.sqrt_tau().asDiagonal() * Kstar;
    model.chol_b().triangularView<Eigen::Lower>().solveInPlace(V);
    const double sf2 = model.hyper().signal_var();
    for (Eigen::Index i = 0; i < m; ++i) {
        const double lv = std::max(0.0, sf2 - V.col(i).squaredNorm());
        p.latent_variance[i] = lv;
        const double mean = p.latent_mean[i];
        if (bound == kInf) {
            p.prob_exceeds_bound[i] = 0.0;
        } else if (bound == -kInf) {
            p.prob_exceeds_bound[i] = 1.0;
        } else if (lv > 0.0) {
            p.prob_exceeds_bound[i] = normal_cdf((mean - bound) / std::sqrt(lv));
        } else {
            p.prob_exceeds_bound[i] = mean > bound ? 1.0 : (mean < bound ? 0.0 : 0.5);
        }
    }
    return p;
}

namespace {

nlohmann::json vec_to_json(const Eigen::VectorXd& v) {
    return std::vector<double>(v.data(), v.data() + v.size());
}

Eigen::VectorXd vec_from_json(const nlohmann::json& j) {
    const auto values = j.get<std::vector<double>>();
    return Eigen::Map<const Eigen::VectorXd>(
        values.data(), static_cast<Eigen::Index>(values.size()));
}

std::string status_name(CensorStatus s) {
    switch (s) {
        case CensorStatus::exact: return "exact";
        case CensorStatus::censored_above: return "above";
        case CensorStatus::censored_below: return "below";
    }
    return "exact";
}

CensorStatus status_from_name(const std::string& s) {
    if (s == "exact") return CensorStatus::exact;
    if (s == "above") return CensorStatus::censored_above;
    if (s == "below") return CensorStatus::censored_below;
    throw DataError("model file: unknown censor status '" + s + "'");
}

} // namespace

std::string censored_to_text(const CensoredGp& model) {
    nlohmann::json j;
    j["format"] = "volcast-censored-gp";
    j["version"] = 1;
    j["hyper"] = {{"log_signal_var", model.hyper().log_signal_var},
                  {"log_noise_var", model.hyper().log_noise_var},
                  {"log_lengthscales", vec_to_json(model.hyper().log_lengthscales)}};
    j["standardizer"] = {{"mean", vec_to_json(model.standardizer().mean)},
                         {"scale", vec_to_json(model.standardizer().scale)}};
    j["center"] = model.center();
    nlohmann::json rows = nlohmann::json::array();
    for (Eigen::Index i = 0; i < model.inputs().rows(); ++i) {
        const Eigen::RowVectorXd row = model.inputs().row(i);
        rows.push_back(std::vector<double>(row.data(), row.data() + row.size()));
    }
    j["inputs"] = rows;
    nlohmann::json targets = nlohmann::json::array();
    for (const auto& t : model.targets())
        targets.push_back({{"value", t.value},
                           {"status", status_name(t.status)},
                           {"bound", t.bound}});
    j["targets"] = targets;
    j["state"] = {{"site_precisions", vec_to_json(model.state().site_precisions)},
                  {"site_nu", vec_to_json(model.state().site_nu)},
                  {"converged", model.state().converged},
                  {"sweeps", model.state().sweeps},
                  {"damping", model.state().damping}};
    return j.dump(2) + "\n";
}

CensoredGp censored_from_text(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("model file: not valid JSON: ") + e.what());
    }
    try {
        if (j.at("format") != "volcast-censored-gp")
            throw DataError("model file: unexpected format tag");
        if (j.at("version") != 1)
            throw DataError("model file: unsupported version");

        GpHyperparams h;
        h.log_signal_var = j.at("hyper").at("log_signal_var");
        h.log_noise_var = j.at("hyper").at("log_noise_var");
        h.log_lengthscales = vec_from_json(j.at("hyper").at("log_lengthscales"));

        Standardizer s;
        s.mean = vec_from_json(j.at("standardizer").at("mean"));
        s.scale = vec_from_json(j.at("standardizer").at("scale"));

        const auto& jin = j.at("inputs");
        const Eigen::Index n = static_cast<Eigen::Index>(jin.size());
        Eigen::MatrixXd X(n, h.dim());
        for (Eigen::Index i = 0; i < n; ++i) {
            const auto row = jin[i].get<std::vector<double>>();
            if (static_cast<Eigen::Index>(row.size()) != X.cols())
                throw DataError("model file: ragged matrix");
            X.row(i) = Eigen::Map<const Eigen::RowVectorXd>(row.data(), X.cols());
        }

        std::vector<CensoredTarget> targets;
        for (const auto& jt : j.at("targets")) {
            CensoredTarget t;
            t.value = jt.at("value");
            t.status = status_from_name(jt.at("status").get<std::string>());
            t.bound = jt.at("bound");
            targets.push_back(t);
        }
        if (static_cast<Eigen::Index>(targets.size()) != n)
            throw DataError("model file: inconsistent shapes");

        EpState state;
        state.site_precisions = vec_from_json(j.at("state").at("site_precisions"));
        state.site_nu = vec_from_json(j.at("state").at("site_nu"));
        state.converged = j.at("state").at("converged");
        state.sweeps = j.at("state").at("sweeps");
        state.damping = j.at("state").at("damping");
        if (state.site_precisions.size() != n || state.site_nu.size() != n)
            throw DataError("model file: inconsistent shapes");
        state.site_means = Eigen::VectorXd::Zero(n);
        for (Eigen::Index i = 0; i < n; ++i)
            if (state.site_precisions[i] > 0.0)
                state.site_means[i] = state.site_nu[i] / state.site_precisions[i];

        const double center = j.at("center");
        return CensoredGp::from_parts(std::move(X), std::move(targets),
                                      std::move(h), std::move(s), center,
                                      std::move(state));
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("model file: missing or mistyped field: ") +
                        e.what());
    }
}

} // namespace volcast
