#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <Eigen/Dense>
#include <cmath>
#include <vector>

#include "volcast/baselines.hpp"
#include "volcast/errors.hpp"
#include "volcast/rng.hpp"

using namespace volcast;

namespace {

double column_std(const Eigen::VectorXd& v) {
    const double mean = v.mean();
    return std::sqrt((v.array() - mean).square().mean());
}

} // namespace

TEST_CASE("persistence repeats the last value") {
    const auto path = persistence_forecast(5.0, 3);
    REQUIRE(path.size() == 3);
    for (const double v : path) CHECK(v == 5.0);
    CHECK(persistence_forecast(-0.2, 1)[0] == -0.2);
    CHECK_THROWS_AS(persistence_forecast(1.0, 0), UsageError);
}

TEST_CASE("mlp fits a noiseless linear map") {
    Rng rng(42);
    const int n = 200, d = 3;
    Eigen::MatrixXd X(n, d);
    Eigen::VectorXd y(n);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < d; ++j) X(i, j) = 2.0 * (rng.uniform() - 0.5);
        y(i) = 1.5 * X(i, 0) - 0.7 * X(i, 1) + 0.2 * X(i, 2) + 0.3;
    }
    MlpSpec spec;
    spec.seed = 1;
    const MlpModel model = mlp_fit(X, y, spec);
    const Eigen::VectorXd pred = model.predict(X);
    const double err = std::sqrt((pred - y).array().square().mean());
    CHECK(err < 0.05 * column_std(y));
    CHECK(model.dim() == d);
}

TEST_CASE("mlp reproduces a constant target almost exactly") {
    Rng rng(7);
    const int n = 60;
    Eigen::MatrixXd X(n, 2);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < 2; ++j) X(i, j) = rng.normal();
    const Eigen::VectorXd y = Eigen::VectorXd::Constant(n, 4.2);
    MlpSpec spec;
    const MlpModel model = mlp_fit(X, y, spec);
    const Eigen::VectorXd pred = model.predict(X);
    for (int i = 0; i < n; ++i) CHECK(std::abs(pred(i) - 4.2) < 1e-3);
}

TEST_CASE("mlp refuses tiny training sets") {
    Eigen::MatrixXd X(19, 2);
    X.setRandom();
    Eigen::VectorXd y(19);
    y.setZero();
    CHECK_THROWS_AS(mlp_fit(X, y, MlpSpec{}), UsageError);
}

TEST_CASE("mlp checkpoint losses are non-increasing") {
    Rng rng(3);
    const int n = 120;
    Eigen::MatrixXd X(n, 2);
    Eigen::VectorXd y(n);
    for (int i = 0; i < n; ++i) {
        X(i, 0) = rng.normal();
        X(i, 1) = rng.normal();
        y(i) = std::sin(X(i, 0)) + 0.1 * rng.normal();
    }
    const MlpModel model = mlp_fit(X, y, MlpSpec{});
    const auto& losses = model.checkpoint_losses();
    REQUIRE(!losses.empty());
    for (std::size_t i = 1; i < losses.size(); ++i)
        CHECK(losses[i] <= losses[i - 1] + 1e-12);
}

TEST_CASE("mlp fit is deterministic for a fixed seed") {
    Rng rng(9);
    const int n = 80;
    Eigen::MatrixXd X(n, 2);
    Eigen::VectorXd y(n);
    for (int i = 0; i < n; ++i) {
        X(i, 0) = rng.normal();
        X(i, 1) = rng.normal();
        y(i) = 0.5 * X(i, 0) * X(i, 1);
    }
    MlpSpec spec;
    spec.seed = 5;
    const MlpModel a = mlp_fit(X, y, spec);
    const MlpModel b = mlp_fit(X, y, spec);
    Eigen::MatrixXd probe(4, 2);
    probe.setRandom();
    const Eigen::VectorXd pa = a.predict(probe), pb = b.predict(probe);
    for (int i = 0; i < probe.rows(); ++i) CHECK(pa(i) == pb(i));
}

TEST_CASE("mlp text serialization round-trips predictions") {
    Rng rng(11);
    const int n = 60;
    Eigen::MatrixXd X(n, 3);
    Eigen::VectorXd y(n);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < 3; ++j) X(i, j) = rng.normal();
        y(i) = X.row(i).sum() + 0.05 * rng.normal();
    }
    const MlpModel model = mlp_fit(X, y, MlpSpec{});
    const std::string text = mlp_to_text(model);
    const MlpModel loaded = mlp_from_text(text);
    const Eigen::VectorXd pa = model.predict(X), pb = loaded.predict(X);
    for (int i = 0; i < n; ++i) CHECK(pa(i) == doctest::Approx(pb(i)).epsilon(1e-12));
    CHECK(mlp_to_text(loaded) == text);
}
