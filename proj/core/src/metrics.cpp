#include "volcast/metrics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>

#include "nlohmann/json.hpp"
#include "volcast/errors.hpp"

namespace volcast {
namespace {

void require_nonempty(std::span<const double> v, const char* what) {
    if (v.empty()) throw UsageError(std::string(what) + ": empty input");
}

std::string shortest(double v) {
    char buf[32];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    (void)ec;
    return std::string(buf, ptr);
}

std::string fixed6(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return buf;
}

HorizonMetrics bucket_metrics(const EvalReport& r, bool short_only) {
    std::vector<double> e;
    for (std::size_t i = 0; i < r.errors.size(); ++i)
        if (!short_only || r.steps[i] <= r.short_steps) e.push_back(r.errors[i]);
    HorizonMetrics m;
    m.count = e.size();
    if (!e.empty()) {
        m.rmse = rmse(e);
        m.mae = mae(e);
        m.nmape = nmape(e, r.normalizer_used);
    }
    return m;
}

} // namespace

std::vector<double> error_series(std::span<const double> actual,
                                 std::span<const double> forecast) {
    if (actual.size() != forecast.size())
        throw UsageError("error_series: length mismatch (" +
                         std::to_string(actual.size()) + " vs " +
                         std::to_string(forecast.size()) + ")");
    require_nonempty(actual, "error_series");
    std::vector<double> e(actual.size());
    for (std::size_t i = 0; i < actual.size(); ++i)
        e[i] = actual[i] - forecast[i];
    return e;
}

double rmse(std::span<const double> errors) {
    require_nonempty(errors, "rmse");
    double acc = 0.0;
    for (const double e : errors) acc += e * e;
    return std::sqrt(acc / static_cast<double>(errors.size()));
}

double mae(std::span<const double> errors) {
    require_nonempty(errors, "mae");
    double acc = 0.0;
    for (const double e : errors) acc += std::abs(e);
    return acc / static_cast<double>(errors.size());
}

double nmape(std::span<const double> errors, double normalizer) {
    if (!(normalizer > 0.0))
        throw UsageError("nmape: normalizer must be > 0");
    require_nonempty(errors, "nmape");
    return mae(errors) / normalizer * 100.0;
}

EvalReport make_report(std::span<const double> actual,
                       std::span<const double> forecast,
                       std::span<const int> steps, int short_steps) {
    if (steps.size() != actual.size())
        throw UsageError("make_report: steps length mismatch");
    if (short_steps < 1) throw UsageError("make_report: short_steps must be >= 1");

    EvalReport r;
    r.errors = error_series(actual, forecast);
    r.steps.assign(steps.begin(), steps.end());
    r.actual.assign(actual.begin(), actual.end());
    r.forecast.assign(forecast.begin(), forecast.end());
    r.short_steps = short_steps;

    double max_abs = 0.0;
    for (const double a : actual) max_abs = std::max(max_abs, std::abs(a));
    if (max_abs > 0.0) {
        r.normalizer_used = max_abs;
    } else {
        r.normalizer_used = 1.0;
        r.normalizer_fallback = true;
    }

    r.full = bucket_metrics(r, false);
    r.short_bucket = bucket_metrics(r, true);
    r.accuracy_pass = r.short_bucket.count > 0 && r.short_bucket.nmape <= 10.0;
    return r;
}

EvalReport make_report(std::span<const double> actual,
                       std::span<const double> forecast, int short_steps) {
    std::vector<int> steps(actual.size());
    for (std::size_t i = 0; i < steps.size(); ++i)
        steps[i] = static_cast<int>(i) + 1;
    return make_report(actual, forecast, steps, short_steps);
}

std::string report_csv(const EvalReport& report) {
    std::string out = "step,actual,forecast,error\n";
    for (std::size_t i = 0; i < report.errors.size(); ++i) {
        out += std::to_string(report.steps[i]);
        out += ',';
        out += shortest(report.actual[i]);
        out += ',';
        out += shortest(report.forecast[i]);
        out += ',';
        out += shortest(report.errors[i]);
        out += '\n';
    }
    return out;
}

std::string report_summary(const EvalReport& report) {
    std::string out;
    out += "short (steps <= " + std::to_string(report.short_steps) + "): n=" +
           std::to_string(report.short_bucket.count) +
           " rmse=" + fixed6(report.short_bucket.rmse) +
           " mae=" + fixed6(report.short_bucket.mae) +
           " nmape=" + fixed6(report.short_bucket.nmape) + "%\n";
    out += "full: n=" + std::to_string(report.full.count) +
           " rmse=" + fixed6(report.full.rmse) +
           " mae=" + fixed6(report.full.mae) +
           " nmape=" + fixed6(report.full.nmape) + "%\n";
    out += "normalizer=" + shortest(report.normalizer_used);
    if (report.normalizer_fallback) out += " (fallback: all actuals zero)";
    out += "\naccuracy_gate(short nmape <= 10%): ";
    out += report.accuracy_pass ? "PASS" : "FAIL";
    out += '\n';
    return out;
}

std::string report_json(const EvalReport& report) {
    nlohmann::json j;
    j["steps"] = report.steps;
    j["actual"] = report.actual;
    j["forecast"] = report.forecast;
    j["errors"] = report.errors;
    j["normalizer_used"] = report.normalizer_used;
    j["normalizer_fallback"] = report.normalizer_fallback;
    j["short_steps"] = report.short_steps;
    const auto bucket = [](const HorizonMetrics& m) {
        return nlohmann::json{{"count", m.count},
                              {"rmse", m.rmse},
                              {"mae", m.mae},
                              {"nmape", m.nmape}};
    };
    j["short"] = bucket(report.short_bucket);
    j["full"] = bucket(report.full);
    j["accuracy_pass"] = report.accuracy_pass;
    return j.dump(2) + "\n";
}

} // namespace volcast
