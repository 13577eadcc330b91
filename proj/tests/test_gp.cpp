#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <Eigen/Dense>
#include <cmath>
#include <filesystem>
#include <limits>

#include "volcast/errors.hpp"
#include "volcast/gp.hpp"
#include "volcast/rng.hpp"

using namespace volcast;

namespace {

GpHyperparams make_hyper(double sf2, double sn2,
                         const std::vector<double>& lengthscales) {
    GpHyperparams h;
    h.log_signal_var = std::log(sf2);
    h.log_noise_var = sn2 > 0.0 ? std::log(sn2)
                                : -std::numeric_limits<double>::infinity();
    h.log_lengthscales.resize(static_cast<Eigen::Index>(lengthscales.size()));
    for (std::size_t i = 0; i < lengthscales.size(); ++i)
        h.log_lengthscales[static_cast<Eigen::Index>(i)] =
            std::log(lengthscales[i]);
    return h;
}

// Central finite differences of the marginal likelihood value, the
// independent oracle for the analytic gradient.
Eigen::VectorXd fd_gradient(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                            const GpHyperparams& hyper, double step) {
    const Eigen::Index p = 2 + hyper.dim();
    Eigen::VectorXd grad(p);
    const auto bump = [&](Eigen::Index k, double delta) {
        GpHyperparams h = hyper;
        if (k == 0) h.log_signal_var += delta;
        else if (k == 1) h.log_noise_var += delta;
        else h.log_lengthscales[k - 2] += delta;
        return log_marginal_likelihood(X, y, h).value;
    };
    for (Eigen::Index k = 0; k < p; ++k)
        grad[k] = (bump(k, step) - bump(k, -step)) / (2.0 * step);
    return grad;
}

} // namespace

TEST_CASE("kernel closed forms") {
    const auto hyper = make_hyper(1.0, 0.1, {1.0});
    Eigen::VectorXd a(1), b(1);
    a << 0.0;
    b << std::sqrt(2.0);
    // ½·(√2/1)² = 1 → k = exp(−1).
    CHECK(kernel_ard(a, b, hyper) == doctest::Approx(std::exp(-1.0)).epsilon(1e-12));
    CHECK(kernel_ard(a, a, hyper) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(kernel_ard(a, b, hyper) == kernel_ard(b, a, hyper));

    // Scaling the signal variance scales the kernel linearly.
    const auto hyper3 = make_hyper(3.0, 0.1, {1.0});
    CHECK(kernel_ard(a, b, hyper3) ==
          doctest::Approx(3.0 * std::exp(-1.0)).epsilon(1e-12));

    // Anisotropy: the same offset matters less along a longer lengthscale.
    const auto aniso = make_hyper(1.0, 0.1, {1.0, 2.0});
    Eigen::VectorXd p(2), q1(2), q2(2);
    p << 0.0, 0.0;
    q1 << 1.0, 0.0;
    q2 << 0.0, 1.0;
    CHECK(kernel_ard(p, q1, aniso) == doctest::Approx(std::exp(-0.5)));
    CHECK(kernel_ard(p, q2, aniso) == doctest::Approx(std::exp(-0.125)));

    CHECK_THROWS_AS(kernel_ard(a, p, hyper), UsageError);
}

TEST_CASE("kernel matrix agrees with the scalar kernel and is PSD") {
    Rng rng(4);
    Eigen::MatrixXd X(12, 3);
    for (Eigen::Index i = 0; i < X.size(); ++i) X(i) = rng.normal();
    const auto hyper = make_hyper(2.0, 0.0, {0.7, 1.3, 2.1});
    const Eigen::MatrixXd K = kernel_matrix(X, X, hyper);
    REQUIRE(K.rows() == 12);
    REQUIRE(K.cols() == 12);
    for (Eigen::Index i = 0; i < K.rows(); ++i)
        for (Eigen::Index j = 0; j < K.cols(); ++j)
            CHECK(K(i, j) == doctest::Approx(kernel_ard(X.row(i).transpose(),
                                                        X.row(j).transpose(),
                                                        hyper))
                                 .epsilon(1e-14));
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(K);
    CHECK(es.eigenvalues().minCoeff() > -1e-10);
}

TEST_CASE("marginal likelihood closed form at n=1") {
    Eigen::MatrixXd X(1, 1);
    X << 0.3;
    Eigen::VectorXd y(1);
    y << 0.0;
    // k(x,x) + σ_n² = 0.5 + 0.5 = 1 → value = −½·ln(2π) = −0.918939.
    const auto r0 = log_marginal_likelihood(X, y, make_hyper(0.5, 0.5, {1.0}));
    CHECK(r0.value == doctest::Approx(-0.918939).epsilon(1e-6));

    y << 2.0; // adds −½·y²/1 = −2
    const auto r2 = log_marginal_likelihood(X, y, make_hyper(0.5, 0.5, {1.0}));
    CHECK(r2.value == doctest::Approx(-2.918939).epsilon(1e-6));
}

TEST_CASE("analytic gradient matches central differences") {
    Rng rng(17);
    for (int trial = 0; trial < 5; ++trial) {
        const Eigen::Index n = 4 + trial, d = 1 + trial % 3;
        Eigen::MatrixXd X(n, d);
        Eigen::VectorXd y(n);
        for (Eigen::Index i = 0; i < X.size(); ++i) X(i) = rng.normal();
        for (Eigen::Index i = 0; i < n; ++i) y(i) = rng.normal();
        GpHyperparams hyper = make_hyper(1.0, 0.2, {});
        hyper.log_lengthscales = Eigen::VectorXd::Zero(d);
        for (Eigen::Index k = 0; k < d; ++k)
            hyper.log_lengthscales[k] = 0.3 * rng.normal();

        const auto lml = log_marginal_likelihood(X, y, hyper);
        const Eigen::VectorXd fd = fd_gradient(X, y, hyper, 1e-5);
        const double rel = (lml.gradient - fd).norm() / fd.norm();
        CHECK(rel < 1e-4);
    }
}

TEST_CASE("noiseless GP interpolates its training targets") {
    Eigen::MatrixXd X(8, 1);
    Eigen::VectorXd y(8);
    for (int i = 0; i < 8; ++i) {
        X(i, 0) = static_cast<double>(i);
        y(i) = std::sin(0.9 * i) + 0.2 * i;
    }
    const TrainedGp model = TrainedGp::train(X, y, make_hyper(1.0, 0.0, {1.0}));
    CHECK(model.hyper().noise_var() == 0.0);
    const GpPrediction at_train = predict(model, X);
    for (int i = 0; i < 8; ++i)
        CHECK(std::abs(at_train.mean[i] - y(i)) < 1e-8);
}

TEST_CASE("posterior reverts to the prior far from the data") {
    Eigen::MatrixXd X(5, 1);
    Eigen::VectorXd y(5);
    X << 0.0, 1.0, 2.0, 3.0, 4.0;
    y << 1.0, 2.0, 0.5, 1.5, 2.5;
    const auto hyper = make_hyper(1.7, 0.1, {1.0});
    const TrainedGp model = TrainedGp::train(X, y, hyper);

    Eigen::MatrixXd far(1, 1);
    far << 1e6;
    const GpPrediction p = predict(model, far);
    CHECK(p.mean[0] == doctest::Approx(y.mean()).epsilon(1e-9));
    CHECK(p.latent_variance[0] == doctest::Approx(1.7).epsilon(1e-9));
    CHECK(p.variance[0] == doctest::Approx(1.8).epsilon(1e-9));
}

TEST_CASE("predict on an empty query returns empty vectors") {
    Eigen::MatrixXd X(3, 2);
    X.setRandom();
    Eigen::VectorXd y(3);
    y << 1.0, 2.0, 3.0;
    const TrainedGp model =
        TrainedGp::train(X, y, make_hyper(1.0, 0.1, {1.0, 1.0}));
    const GpPrediction p = predict(model, Eigen::MatrixXd(0, 2));
    CHECK(p.mean.size() == 0);
    CHECK(p.variance.size() == 0);
    CHECK(p.latent_variance.size() == 0);
}

TEST_CASE("predictive variance decomposes into latent plus noise") {
    Rng rng(21);
    Eigen::MatrixXd X(10, 2), Xs(6, 2);
    Eigen::VectorXd y(10);
    for (Eigen::Index i = 0; i < X.size(); ++i) X(i) = rng.normal();
    for (Eigen::Index i = 0; i < Xs.size(); ++i) Xs(i) = rng.normal();
    for (Eigen::Index i = 0; i < y.size(); ++i) y(i) = rng.normal();
    const auto hyper = make_hyper(1.3, 0.25, {0.8, 1.2});
    const TrainedGp model = TrainedGp::train(X, y, hyper);
    const GpPrediction p = predict(model, Xs);
    for (Eigen::Index i = 0; i < 6; ++i) {
        CHECK(p.variance[i] ==
              doctest::Approx(p.latent_variance[i] + 0.25).epsilon(1e-12));
        CHECK(p.latent_variance[i] >= -1e-12);
        CHECK(p.latent_variance[i] <= 1.3 + 1e-12);
    }
}

TEST_CASE("ard relevance normalizes inverse lengthscales") {
    Eigen::MatrixXd X(3, 2);
    X << 0.0, 0.0, 1.0, 1.0, 2.0, 2.0;
    Eigen::VectorXd y(3);
    y << 0.0, 1.0, 0.0;
    // Standardized-space lengthscales (1, 4) → relevance (0.8, 0.2).
    const TrainedGp model = TrainedGp::from_standardized(
        X, y, make_hyper(1.0, 0.1, {1.0, 4.0}), Standardizer::identity(2), 0.0);
    const Eigen::VectorXd rel = ard_relevance(model);
    REQUIRE(rel.size() == 2);
    CHECK(rel[0] == doctest::Approx(0.8).epsilon(1e-12));
    CHECK(rel[1] == doctest::Approx(0.2).epsilon(1e-12));
    CHECK(rel.sum() == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("marginal likelihood is invariant to input reparameterization") {
    Rng rng(31);
    Eigen::MatrixXd X(9, 2);
    Eigen::VectorXd y(9);
    for (Eigen::Index i = 0; i < X.size(); ++i) X(i) = rng.normal();
    for (Eigen::Index i = 0; i < y.size(); ++i) y(i) = rng.normal();
    const auto hyper = make_hyper(1.4, 0.2, {0.9, 1.8});

    // Rescale each column by a power of two and the lengthscales to match;
    // the model is identical, so the likelihood must agree to 1e-10.
    Eigen::MatrixXd Xs = X;
    Xs.col(0) *= 4.0;
    Xs.col(1) *= 0.25;
    const auto hyper_s = make_hyper(1.4, 0.2, {0.9 * 4.0, 1.8 * 0.25});

    const auto a = log_marginal_likelihood(X, y, hyper);
    const auto b = log_marginal_likelihood(Xs, y, hyper_s);
    CHECK(std::abs(a.value - b.value) < 1e-10);
    CHECK(std::abs(a.gradient[0] - b.gradient[0]) < 1e-10);
    CHECK(std::abs(a.gradient[1] - b.gradient[1]) < 1e-10);

    // The same invariance holds end to end through training and prediction.
    const TrainedGp ma = TrainedGp::train(X, y, hyper);
    const TrainedGp mb = TrainedGp::train(Xs, y, hyper_s);
    Eigen::MatrixXd q(3, 2), qs(3, 2);
    for (Eigen::Index i = 0; i < q.size(); ++i) q(i) = rng.normal();
    qs = q;
    qs.col(0) *= 4.0;
    qs.col(1) *= 0.25;
    const GpPrediction pa = predict(ma, q), pb = predict(mb, qs);
    for (int i = 0; i < 3; ++i) {
        CHECK(std::abs(pa.mean[i] - pb.mean[i]) < 1e-10);
        CHECK(std::abs(pa.variance[i] - pb.variance[i]) < 1e-10);
    }
}

TEST_CASE("fit recovers a tiny noise floor on a noiseless prior draw") {
    // Draw f exactly from the prior with σ_f²=1, ℓ=1 via the Cholesky root,
    // then check the optimizer drives the fitted noise essentially to zero.
    const int n = 40;
    Eigen::MatrixXd X(n, 1);
    for (int i = 0; i < n; ++i) X(i, 0) = 8.0 * i / (n - 1.0);
    const auto draw_hyper = make_hyper(1.0, 0.0, {1.0});
    Eigen::MatrixXd K = kernel_matrix(X, X, draw_hyper);
    K.diagonal().array() += 1e-10;
    const Eigen::MatrixXd L = Eigen::LLT<Eigen::MatrixXd>(K).matrixL();
    Rng rng(8);
    Eigen::VectorXd z(n);
    for (int i = 0; i < n; ++i) z(i) = rng.normal();
    const Eigen::VectorXd f = L * z;

    GpFitOptions opts;
    opts.restarts = 3;
    const TrainedGp model = fit(X, f, opts);
    const auto fitted = model.hyper();
    CHECK(fitted.noise_var() <= 1e-3 * fitted.signal_var());
}

TEST_CASE("fit is deterministic for a fixed seed") {
    Rng rng(13);
    Eigen::MatrixXd X(25, 2);
    Eigen::VectorXd y(25);
    for (Eigen::Index i = 0; i < X.size(); ++i) X(i) = rng.normal();
    for (Eigen::Index i = 0; i < y.size(); ++i)
        y(i) = std::sin(X(i, 0)) + 0.1 * rng.normal();
    GpFitOptions opts;
    opts.restarts = 2;
    opts.max_iter = 60;
    opts.seed = 99;
    const TrainedGp a = fit(X, y, opts);
    const TrainedGp b = fit(X, y, opts);
    CHECK(a.hyper().log_signal_var == b.hyper().log_signal_var);
    CHECK(a.hyper().log_noise_var == b.hyper().log_noise_var);
    CHECK((a.hyper().log_lengthscales - b.hyper().log_lengthscales).norm() ==
          0.0);
    CHECK(a.final_lml() == b.final_lml());
}

TEST_CASE("text serialization reproduces the model bit for bit") {
    Rng rng(19);
    Eigen::MatrixXd X(15, 2);
    Eigen::VectorXd y(15);
    for (Eigen::Index i = 0; i < X.size(); ++i) X(i) = rng.normal();
    for (Eigen::Index i = 0; i < y.size(); ++i)
        y(i) = X(i, 0) - 0.5 * X(i, 1) + 0.05 * rng.normal();
    GpFitOptions opts;
    opts.restarts = 1;
    opts.max_iter = 50;
    const TrainedGp model = fit(X, y, opts);

    const std::string text = gp_to_text(model);
    const TrainedGp loaded = gp_from_text(text);
    CHECK(gp_to_text(loaded) == text);

    Eigen::MatrixXd q(4, 2);
    for (Eigen::Index i = 0; i < q.size(); ++i) q(i) = rng.normal();
    const GpPrediction pa = predict(model, q), pb = predict(loaded, q);
    for (int i = 0; i < 4; ++i) {
        CHECK(pa.mean[i] == pb.mean[i]);
        CHECK(pa.variance[i] == pb.variance[i]);
    }

    const auto dir = std::filesystem::temp_directory_path() / "volcast_tests";
    std::filesystem::create_directories(dir);
    const std::string path = (dir / "model.gp").string();
    save_gp(model, path);
    const TrainedGp from_file = load_gp(path);
    CHECK(gp_to_text(from_file) == text);
}

TEST_CASE("input validation") {
    Eigen::MatrixXd X(2, 1);
    X << 0.0, 1.0;
    Eigen::VectorXd y(2);
    y << 0.0, 1.0;
    CHECK_THROWS_AS(log_marginal_likelihood(X, y, make_hyper(1.0, 0.1, {1.0, 1.0})),
                    UsageError);
    CHECK_THROWS_AS(TrainedGp::train(Eigen::MatrixXd(0, 1), Eigen::VectorXd(0),
                                     make_hyper(1.0, 0.1, {1.0})),
                    UsageError);
    GpFitOptions opts;
    opts.restarts = 0;
    CHECK_THROWS_AS(fit(X, y, opts), UsageError);
}
