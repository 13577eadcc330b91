#include "volcast/gp.hpp"

#include <Eigen/Cholesky>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "nlohmann/json.hpp"
#include "optim.hpp"
#include "volcast/errors.hpp"
#include "volcast/rng.hpp"

namespace volcast {
namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728112353;

void check_dims(Eigen::Index a, Eigen::Index b, const char* what) {
    if (a != b)
        throw UsageError(std::string(what) + ": dimension mismatch (" +
                         std::to_string(a) + " vs " + std::to_string(b) + ")");
}

/// Scaled squared distance ½ Σ_d ((a_d − b_d)/ℓ_d)².
template <typename VA, typename VB>
double half_sq_dist(const Eigen::DenseBase<VA>& a, const Eigen::DenseBase<VB>& b,
                    const Eigen::VectorXd& ell) {
    double s = 0.0;
    for (Eigen::Index d = 0; d < a.size(); ++d) {
        const double z = (a(d) - b(d)) / ell(d);
        s += z * z;
    }
    return 0.5 * s;
}

/// Exactly symmetric self-kernel with diagonal exactly σ_f².
Eigen::MatrixXd self_kernel(const Eigen::MatrixXd& X, const GpHyperparams& hyper) {
    const Eigen::Index n = X.rows();
    const double sf2 = hyper.signal_var();
    const Eigen::VectorXd ell = hyper.lengthscales();
    Eigen::MatrixXd K(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        K(i, i) = sf2;
        for (Eigen::Index j = i + 1; j < n; ++j) {
            const double v = sf2 * std::exp(-half_sq_dist(X.row(i), X.row(j), ell));
            K(i, j) = v;
            K(j, i) = v;
        }
    }
    return K;
}

struct Factorization {
    Eigen::MatrixXd Kf;    // noise-free kernel
    Eigen::MatrixXd L;     // chol(Kf + σ_n²I + jitter·I)
    Eigen::VectorXd alpha; // (Kf + σ_n²I + jitter·I)⁻¹ y
    double jitter = 0.0;
    double lml = 0.0;
};

/// Cholesky with the escalating-jitter policy: base 1e-10·trace(Kf)/n,
/// ×10 per failure, at most six escalations.
Factorization factorize(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                        const GpHyperparams& hyper) {
    Factorization f;
    f.Kf = self_kernel(X, hyper);
    const Eigen::Index n = X.rows();
    const double sn2 = hyper.noise_var();
    const double base_jitter = 1e-10 * f.Kf.trace() / static_cast<double>(n);

    double jitter = base_jitter;
    for (int attempt = 0; attempt <= 6; ++attempt) {
        Eigen::MatrixXd A = f.Kf;
        A.diagonal().array() += sn2 + jitter;
        Eigen::LLT<Eigen::MatrixXd> llt(A);
        if (llt.info() == Eigen::Success) {
            f.L = llt.matrixL();
            f.jitter = jitter;
            f.alpha = llt.solve(y);
            f.lml = -0.5 * y.dot(f.alpha) - f.L.diagonal().array().log().sum() -
                    0.5 * static_cast<double>(n) * kLog2Pi;
            return f;
        }
        jitter *= 10.0;
    }
    throw ModelError("kernel matrix not positive definite after maximum jitter");
}

Eigen::VectorXd pack(const GpHyperparams& h) {
    Eigen::VectorXd theta(2 + h.dim());
    theta[0] = h.log_signal_var;
    theta[1] = h.log_noise_var;
    theta.tail(h.dim()) = h.log_lengthscales;
    return theta;
}

GpHyperparams unpack(const Eigen::VectorXd& theta) {
    GpHyperparams h;
    h.log_signal_var = theta[0];
    h.log_noise_var = theta[1];
    h.log_lengthscales = theta.tail(theta.size() - 2);
    return h;
}

LmlResult lml_with_grad(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                        const GpHyperparams& hyper) {
    const Factorization f = factorize(X, y, hyper);
    const Eigen::Index n = X.rows();
    const Eigen::Index d = X.cols();

    // A = ααᵀ − K⁻¹ so that dLML/dθ = ½ tr(A · ∂K/∂θ).
    Eigen::MatrixXd Kinv = Eigen::MatrixXd::Identity(n, n);
    f.L.triangularView<Eigen::Lower>().solveInPlace(Kinv);
    f.L.transpose().triangularView<Eigen::Upper>().solveInPlace(Kinv);
    const Eigen::MatrixXd A = f.alpha * f.alpha.transpose() - Kinv;
    const Eigen::MatrixXd M = A.cwiseProduct(f.Kf);

    LmlResult out;
    out.value = f.lml;
    out.gradient.resize(2 + d);
    // The jitter is proportional to σ_f² (trace(Kf)/n = σ_f²), so it shows
    // up in the signal-variance derivative alongside Kf itself.
    out.gradient[0] = 0.5 * (M.sum() + f.jitter * A.trace());
    out.gradient[1] = 0.5 * hyper.noise_var() * A.trace();

    const Eigen::VectorXd row_sums = M.rowwise().sum();
    const Eigen::VectorXd ell = hyper.lengthscales();
    for (Eigen::Index k = 0; k < d; ++k) {
        const Eigen::VectorXd xk = X.col(k);
        const double term =
            row_sums.dot(xk.cwiseProduct(xk)) - xk.dot(M * xk);
        out.gradient[2 + k] = term / (ell[k] * ell[k]);
    }
    return out;
}

double variance_floor(double v) { return std::max(v, 1e-12); }

} // namespace

Standardizer Standardizer::fit(const Eigen::MatrixXd& X) {
    Standardizer s;
    const Eigen::Index d = X.cols();
    s.mean = X.colwise().mean();
    s.scale.resize(d);
    const double n = static_cast<double>(X.rows());
    for (Eigen::Index k = 0; k < d; ++k) {
        const double var = (X.col(k).array() - s.mean[k]).square().sum() / n;
        const double sd = std::sqrt(var);
        s.scale[k] = sd > 0.0 ? sd : 1.0;
    }
    return s;
}

Standardizer Standardizer::identity(Eigen::Index dim) {
    Standardizer s;
    s.mean = Eigen::VectorXd::Zero(dim);
    s.scale = Eigen::VectorXd::Ones(dim);
    return s;
}

Eigen::MatrixXd Standardizer::apply(const Eigen::MatrixXd& X) const {
    check_dims(X.cols(), mean.size(), "Standardizer::apply");
    return ((X.rowwise() - mean.transpose()).array().rowwise() /
            scale.transpose().array())
        .matrix();
}

double kernel_ard(const Eigen::VectorXd& x1, const Eigen::VectorXd& x2,
                  const GpHyperparams& hyper) {
    check_dims(x1.size(), x2.size(), "kernel_ard");
    check_dims(x1.size(), hyper.dim(), "kernel_ard");
    return hyper.signal_var() *
           std::exp(-half_sq_dist(x1, x2, hyper.lengthscales()));
}

Eigen::MatrixXd kernel_matrix(const Eigen::MatrixXd& X1,
                              const Eigen::MatrixXd& X2,
                              const GpHyperparams& hyper) {
    check_dims(X1.cols(), X2.cols(), "kernel_matrix");
    check_dims(X1.cols(), hyper.dim(), "kernel_matrix");
    const double sf2 = hyper.signal_var();
    const Eigen::VectorXd ell = hyper.lengthscales();
    Eigen::MatrixXd K(X1.rows(), X2.rows());
    for (Eigen::Index i = 0; i < X1.rows(); ++i)
        for (Eigen::Index j = 0; j < X2.rows(); ++j)
            K(i, j) = sf2 * std::exp(-half_sq_dist(X1.row(i), X2.row(j), ell));
    return K;
}

LmlResult log_marginal_likelihood(const Eigen::MatrixXd& X,
                                  const Eigen::VectorXd& y,
                                  const GpHyperparams& hyper) {
    if (X.rows() < 1) throw UsageError("log_marginal_likelihood: n must be >= 1");
    check_dims(X.rows(), y.size(), "log_marginal_likelihood");
    check_dims(X.cols(), hyper.dim(), "log_marginal_likelihood");
    return lml_with_grad(X, y, hyper);
}

TrainedGp TrainedGp::from_standardized(Eigen::MatrixXd inputs,
                                       Eigen::VectorXd targets,
                                       GpHyperparams hyper,
                                       Standardizer standardizer,
                                       double center) {
    TrainedGp m;
    m.inputs_ = std::move(inputs);
    m.targets_ = std::move(targets);
    m.hyper_ = std::move(hyper);
    m.standardizer_ = std::move(standardizer);
    m.center_ = center;
    Factorization f = factorize(m.inputs_, m.targets_, m.hyper_);
    m.chol_ = std::move(f.L);
    m.alpha_ = std::move(f.alpha);
    m.jitter_used_ = f.jitter;
    m.final_lml_ = f.lml;
    return m;
}

TrainedGp TrainedGp::train(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                           const GpHyperparams& raw_hyper) {
    if (X.rows() < 1) throw UsageError("TrainedGp::train: n must be >= 1");
    check_dims(X.rows(), y.size(), "TrainedGp::train");
    check_dims(X.cols(), raw_hyper.dim(), "TrainedGp::train");
    const Standardizer s = Standardizer::fit(X);
    GpHyperparams h = raw_hyper;
    h.log_lengthscales =
        raw_hyper.log_lengthscales - s.scale.array().log().matrix();
    const double center = y.mean();
    return from_standardized(s.apply(X), (y.array() - center).matrix(),
                             std::move(h), s, center);
}

GpHyperparams TrainedGp::raw_hyper() const {
    GpHyperparams h = hyper_;
    h.log_lengthscales =
        hyper_.log_lengthscales + standardizer_.scale.array().log().matrix();
    return h;
}

TrainedGp fit(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
              const GpHyperparams& init, const GpFitOptions& opts) {
    if (X.rows() < 2) throw UsageError("fit: n must be >= 2");
    check_dims(X.rows(), y.size(), "fit");
    check_dims(X.cols(), init.dim(), "fit");
    if (opts.restarts < 1) throw UsageError("fit: restarts must be >= 1");

    const Standardizer s = Standardizer::fit(X);
    const Eigen::MatrixXd Xs = s.apply(X);
    const double center = y.mean();
    const Eigen::VectorXd yc = (y.array() - center).matrix();

    GpHyperparams init_std = init;
    init_std.log_lengthscales =
        init.log_lengthscales - s.scale.array().log().matrix();

    // Weak log-normal hyperprior (sd 2 in log space) centered on the
    // initialization. It leaves well-identified optima essentially where
    // maximum likelihood puts them but keeps a restoring gradient on
    // runaway hyperparameters: once a lengthscale collapses far below the
    // data spacing the kernel goes diagonal and its likelihood gradient
    // vanishes, which would otherwise strand the optimizer there.
    constexpr double kPriorSd = 2.0;
    const Eigen::VectorXd prior_center = pack(init_std);
    const detail::Objective objective =
        [&Xs, &yc, &prior_center](const Eigen::VectorXd& theta)
        -> std::pair<double, Eigen::VectorXd> {
        try {
            const LmlResult r = lml_with_grad(Xs, yc, unpack(theta));
            const Eigen::VectorXd dev = theta - prior_center;
            const double value =
                r.value - dev.squaredNorm() / (2.0 * kPriorSd * kPriorSd);
            const Eigen::VectorXd grad =
                r.gradient - dev / (kPriorSd * kPriorSd);
            return {value, grad};
        } catch (const ModelError&) {
            return {-std::numeric_limits<double>::infinity(),
                    Eigen::VectorXd::Zero(theta.size())};
        }
    };

    detail::LbfgsOptions lopts;
    lopts.max_iter = opts.max_iter;
    lopts.tol = opts.tol;

    const Eigen::VectorXd theta0 = pack(init_std);
    bool any_finite = false;
    double best_value = -std::numeric_limits<double>::infinity();
    Eigen::VectorXd best_theta;
    for (int r = 0; r < opts.restarts; ++r) {
        Eigen::VectorXd start = theta0;
        if (r > 0) {
            Rng rng(Rng::stream_seed(opts.seed, static_cast<std::uint64_t>(r)));
            for (Eigen::Index i = 0; i < start.size(); ++i)
                start[i] += 0.5 * rng.normal();
        }
        const detail::LbfgsResult res =
            detail::lbfgs_maximize(objective, start, lopts);
        if (std::isfinite(res.value) && res.value > best_value) {
            best_value = res.value;
            best_theta = res.x;
            any_finite = true;
        }
    }
    if (!any_finite)
        throw ModelError("fit: no restart produced a finite marginal likelihood");

    return TrainedGp::from_standardized(Xs, yc, unpack(best_theta), s, center);
}

TrainedGp fit(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
              const GpFitOptions& opts) {
    if (X.rows() < 2) throw UsageError("fit: n must be >= 2");
    check_dims(X.rows(), y.size(), "fit");
    const double n = static_cast<double>(y.size());
    const double var_y = variance_floor((y.array() - y.mean()).square().sum() / n);

    GpHyperparams init;
    init.log_signal_var = std::log(var_y);
    init.log_noise_var = std::log(0.1 * var_y);
    // Init lengthscales at one standardized deviation times sqrt(dim): two
    // typical points then sit at exponent ≈ −1 regardless of input count.
    // With unit lengthscales the init kernel is e^{−d}-scale, i.e. nearly
    // diagonal for d ≳ 5, and the lengthscale gradients vanish.
    const Standardizer s = Standardizer::fit(X);
    init.log_lengthscales =
        (s.scale.array() * std::sqrt(static_cast<double>(X.cols())))
            .log()
            .matrix();
    return fit(X, y, init, opts);
}

GpPrediction predict(const TrainedGp& model, const Eigen::MatrixXd& Xstar) {
    check_dims(Xstar.cols(), model.dim(), "predict");
    GpPrediction p;
    const Eigen::Index m = Xstar.rows();
    p.mean.resize(m);
    p.variance.resize(m);
    p.latent_variance.resize(m);
    if (m == 0) return p;

    const Eigen::MatrixXd Xs = model.standardizer().apply(Xstar);
    const Eigen::MatrixXd Kstar =
        kernel_matrix(model.inputs(), Xs, model.hyper()); // n×m
    p.mean = Kstar.transpose() * model.alpha();
    p.mean.array() += model.center();

    Eigen::MatrixXd V = Kstar;
    model.chol().triangularView<Eigen::Lower>().solveInPlace(V);
    const double sf2 = model.hyper().signal_var();
    const double sn2 = model.hyper().noise_var();
    for (Eigen::Index i = 0; i < m; ++i) {
        const double lv = std::max(0.0, sf2 - V.col(i).squaredNorm());
        p.latent_variance[i] = lv;
        p.variance[i] = lv + sn2;
    }
    return p;
}

Eigen::VectorXd ard_relevance(const TrainedGp& model) {
    const Eigen::VectorXd inv_ell =
        (-model.hyper().log_lengthscales.array()).exp().matrix();
    return inv_ell / inv_ell.sum();
}

namespace {

nlohmann::json vec_to_json(const Eigen::VectorXd& v) {
    return std::vector<double>(v.data(), v.data() + v.size());
}

Eigen::VectorXd vec_from_json(const nlohmann::json& j) {
    const auto values = j.get<std::vector<double>>();
    return Eigen::Map<const Eigen::VectorXd>(values.data(),
                                             static_cast<Eigen::Index>(values.size()));
}

nlohmann::json mat_to_json(const Eigen::MatrixXd& m) {
    nlohmann::json rows = nlohmann::json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        const Eigen::RowVectorXd row = m.row(i);
        rows.push_back(std::vector<double>(row.data(), row.data() + row.size()));
    }
    return rows;
}

Eigen::MatrixXd mat_from_json(const nlohmann::json& j, Eigen::Index cols_hint) {
    const Eigen::Index rows = static_cast<Eigen::Index>(j.size());
    Eigen::MatrixXd m(rows, rows > 0 ? static_cast<Eigen::Index>(j[0].size())
                                     : cols_hint);
    for (Eigen::Index i = 0; i < rows; ++i) {
        const auto row = j[i].get<std::vector<double>>();
        if (static_cast<Eigen::Index>(row.size()) != m.cols())
            throw DataError("model file: ragged matrix");
        m.row(i) = Eigen::Map<const Eigen::RowVectorXd>(row.data(), m.cols());
    }
    return m;
}

} // namespace

std::string gp_to_text(const TrainedGp& model) {
    nlohmann::json j;
    j["format"] = "volcast-gp";
    j["version"] = 1;
    j["hyper"] = {{"log_signal_var", model.hyper().log_signal_var},
                  {"log_noise_var", model.hyper().log_noise_var},
                  {"log_lengthscales", vec_to_json(model.hyper().log_lengthscales)}};
    j["standardizer"] = {{"mean", vec_to_json(model.standardizer().mean)},
                         {"scale", vec_to_json(model.standardizer().scale)}};
    j["center"] = model.center();
    j["inputs"] = mat_to_json(model.inputs());
    j["targets"] = vec_to_json(model.targets());
    j["alpha"] = vec_to_json(model.alpha());
    j["jitter_used"] = model.jitter_used();
    j["final_lml"] = model.final_lml();
    return j.dump(2) + "\n";
}

TrainedGp gp_from_text(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("model file: not valid JSON: ") + e.what());
    }
    try {
        if (j.at("format") != "volcast-gp")
            throw DataError("model file: unexpected format tag");
        if (j.at("version") != 1)
            throw DataError("model file: unsupported version");
        GpHyperparams h;
        h.log_signal_var = j.at("hyper").at("log_signal_var");
        h.log_noise_var = j.at("hyper").at("log_noise_var");
        h.log_lengthscales = vec_from_json(j.at("hyper").at("log_lengthscales"));

        TrainedGp m;
        m.hyper_ = h;
        m.standardizer_.mean = vec_from_json(j.at("standardizer").at("mean"));
        m.standardizer_.scale = vec_from_json(j.at("standardizer").at("scale"));
        m.center_ = j.at("center");
        m.inputs_ = mat_from_json(j.at("inputs"), h.dim());
        m.targets_ = vec_from_json(j.at("targets"));
        m.alpha_ = vec_from_json(j.at("alpha"));
        m.jitter_used_ = j.at("jitter_used");
        m.final_lml_ = j.at("final_lml");
        if (m.inputs_.rows() != m.targets_.size() ||
            m.inputs_.cols() != h.dim() || m.alpha_.size() != m.targets_.size())
            throw DataError("model file: inconsistent shapes");

        // Rebuild the Cholesky factor at the recorded jitter so a resumed
        // backtest is bit-identical with the saved alpha.
        Eigen::MatrixXd A = self_kernel(m.inputs_, m.hyper_);
        A.diagonal().array() += m.hyper_.noise_var() + m.jitter_used_;
        Eigen::LLT<Eigen::MatrixXd> llt(A);
        if (llt.info() != Eigen::Success)
            throw DataError("model file: stored state is not positive definite");
        m.chol_ = llt.matrixL();
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("model file: missing or mistyped field: ") +
                        e.what());
    }
}

void save_gp(const TrainedGp& model, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write '" + path + "'");
    out << gp_to_text(model);
    if (!out) throw DataError("failed writing '" + path + "'");
}

TrainedGp load_gp(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return gp_from_text(ss.str());
}

} // namespace volcast
