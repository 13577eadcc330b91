#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "volcast/errors.hpp"
#include "volcast/metrics.hpp"
#include "volcast/rng.hpp"

using namespace volcast;

namespace {

std::vector<double> load_column(const std::string& path) {
    std::ifstream in(path);
    REQUIRE_MESSAGE(in.good(), "cannot open ", path);
    std::vector<double> values;
    std::string line;
    bool header_seen = false;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        if (!header_seen) { header_seen = true; continue; }
        values.push_back(std::stod(line));
    }
    return values;
}

std::string data_file(const std::string& name) {
    return std::string(VOLCAST_TEST_DATA_DIR) + "/" + name;
}

} // namespace

TEST_CASE("closed-form point checks") {
    const std::vector<double> e34 = {3.0, 4.0};
    CHECK(rmse(e34) == doctest::Approx(3.535534).epsilon(1e-6));
    const std::vector<double> e13 = {1.0, -3.0};
    CHECK(mae(e13) == doctest::Approx(2.0).epsilon(1e-12));
    const std::vector<double> e11 = {1.0, 1.0};
    CHECK(nmape(e11, 10.0) == doctest::Approx(10.0).epsilon(1e-12));
}

TEST_CASE("error series is actual minus forecast") {
    const std::vector<double> a1 = {0.360}, f1 = {0.379};
    CHECK(error_series(a1, f1)[0] == doctest::Approx(-0.019).epsilon(1e-12));
    const std::vector<double> a2 = {0.280}, f2 = {0.279};
    CHECK(error_series(a2, f2)[0] == doctest::Approx(0.001).epsilon(1e-12));

    const std::vector<double> short_f = {0.1};
    CHECK_THROWS_AS(error_series(a1, {}), UsageError);
    const std::vector<double> a3 = {1.0, 2.0};
    CHECK_THROWS_AS(error_series(a3, short_f), UsageError);
}

TEST_CASE("metric identities over random vectors") {
    // On 1000 random error vectors: rmse ≥ mae (Cauchy–Schwarz), both scale
    // linearly, both vanish only at zero, and rmse² = mean of squares.
    Rng rng(123);
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t n = 1 + static_cast<std::size_t>(rng.uniform() * 16);
        std::vector<double> e(n);
        double sq = 0.0;
        for (auto& v : e) {
            v = 4.0 * (rng.uniform() - 0.5);
            sq += v * v;
        }
        const double r = rmse(e), m = mae(e);
        CHECK(r >= m - 1e-12);
        CHECK(std::abs(r * r - sq / static_cast<double>(n)) < 1e-12);

        std::vector<double> scaled(n);
        for (std::size_t i = 0; i < n; ++i) scaled[i] = 3.0 * e[i];
        CHECK(std::abs(rmse(scaled) - 3.0 * r) < 1e-12);
        CHECK(std::abs(mae(scaled) - 3.0 * m) < 1e-12);
        CHECK(std::abs(nmape(e, 2.0) - 50.0 * m) < 1e-10);
    }
    const std::vector<double> zeros(5, 0.0);
    CHECK(rmse(zeros) == 0.0);
    CHECK(mae(zeros) == 0.0);
    CHECK_THROWS_AS(rmse({}), UsageError);
    CHECK_THROWS_AS(nmape(zeros, 0.0), UsageError);
}

TEST_CASE("reference returns table reproduces the printed MAE") {
    const auto actual = load_column(data_file("reference_returns_actual.csv"));
    const auto forecast =
        load_column(data_file("reference_returns_forecast.csv"));
    REQUIRE(actual.size() == 12);
    REQUIRE(forecast.size() == 12);
    // Independent oracle: re-derive the aggregate with plain arithmetic
    // rather than through the metrics module.
    double abs_sum = 0.0;
    for (std::size_t i = 0; i < actual.size(); ++i)
        abs_sum += std::abs(actual[i] - forecast[i]);
    CHECK(abs_sum / 12.0 == doctest::Approx(0.035842).epsilon(5e-5));

    const auto errors = error_series(actual, forecast);
    CHECK(std::abs(mae(errors) - 0.035842) < 1e-6);
}

TEST_CASE("reference volatility table reproduces the recomputed RMSE") {
    const auto actual =
        load_column(data_file("reference_volatility_actual.csv"));
    const auto forecast =
        load_column(data_file("reference_volatility_forecast.csv"));
    REQUIRE(actual.size() == 12);
    REQUIRE(forecast.size() == 12);
    double sq_sum = 0.0;
    for (std::size_t i = 0; i < actual.size(); ++i) {
        const double e = actual[i] - forecast[i];
        sq_sum += e * e;
    }
    CHECK(std::sqrt(sq_sum / 12.0) == doctest::Approx(0.012107).epsilon(5e-5));

    const auto errors = error_series(actual, forecast);
    CHECK(std::abs(rmse(errors) - 0.012107) < 1e-6);
}

TEST_CASE("report buckets split on the step index") {
    const std::vector<double> actual = {1.0, 2.0, 4.0, 8.0};
    const std::vector<double> forecast = {1.5, 2.5, 3.0, 9.0};
    const std::vector<int> steps = {1, 2, 7, 8};
    const EvalReport rep = make_report(actual, forecast, steps, 6);

    CHECK(rep.full.count == 4);
    CHECK(rep.short_bucket.count == 2);
    CHECK(rep.short_bucket.mae == doctest::Approx(0.5));
    CHECK(rep.normalizer_used == doctest::Approx(8.0));
    CHECK_FALSE(rep.normalizer_fallback);
    // Short bucket NMAPE = mean(|0.5|,|0.5|)/8·100 = 6.25% ≤ 10% → pass.
    CHECK(rep.short_bucket.nmape == doctest::Approx(6.25));
    CHECK(rep.accuracy_pass);

    // Default steps are 1..n.
    const EvalReport def = make_report(actual, forecast, 2);
    CHECK(def.short_bucket.count == 2);
    CHECK(def.full.count == 4);
}

TEST_CASE("normalizer falls back to 1 when every actual is zero") {
    const std::vector<double> actual = {0.0, 0.0};
    const std::vector<double> forecast = {0.2, -0.2};
    const EvalReport rep = make_report(actual, forecast);
    CHECK(rep.normalizer_used == 1.0);
    CHECK(rep.normalizer_fallback);
    CHECK(rep.full.nmape == doctest::Approx(20.0));
    CHECK_FALSE(rep.accuracy_pass);
}

TEST_CASE("identical series yield exact zeros and a pass") {
    const std::vector<double> v = {0.4, 0.5, 0.6};
    const EvalReport rep = make_report(v, v);
    CHECK(rep.full.rmse == 0.0);
    CHECK(rep.full.mae == 0.0);
    CHECK(rep.full.nmape == 0.0);
    CHECK(rep.accuracy_pass);
}

TEST_CASE("report renderers are deterministic and well-formed") {
    const std::vector<double> actual = {0.3, 0.4, 0.5};
    const std::vector<double> forecast = {0.31, 0.38, 0.55};
    const EvalReport rep = make_report(actual, forecast);

    const std::string csv = report_csv(rep);
    CHECK(csv.substr(0, csv.find('\n')) == "step,actual,forecast,error");
    CHECK(csv == report_csv(rep));

    const std::string summary = report_summary(rep);
    CHECK(summary.find("rmse") != std::string::npos);
    CHECK(summary.find("mae") != std::string::npos);
    CHECK(summary.find("nmape") != std::string::npos);

    const std::string json = report_json(rep);
    CHECK(json == report_json(rep));
    CHECK(json.find("\"rmse\"") != std::string::npos);
}
