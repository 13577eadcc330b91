#pragma once

#include <span>
#include <string>
#include <vector>

namespace volcast {

/// e_i = actual_i − forecast_i. Throws UsageError on length mismatch or
/// empty input.
std::vector<double> error_series(std::span<const double> actual,
                                 std::span<const double> forecast);

/// sqrt((1/n)·Σ e_i²). Throws UsageError on empty input.
double rmse(std::span<const double> errors);

/// (1/n)·Σ |e_i|. Throws UsageError on empty input.
double mae(std::span<const double> errors);

/// (1/n)·Σ |e_i / normalizer| × 100. Throws UsageError when normalizer ≤ 0.
double nmape(std::span<const double> errors, double normalizer);

struct HorizonMetrics {
    std::size_t count = 0;
    double rmse = 0.0;
    double mae = 0.0;
    double nmape = 0.0;
};

/// Evaluation report over step-aligned (actual, forecast) pairs. Each entry
/// carries its horizon step (1-based); the short bucket collects steps up to
/// `short_steps` (1–3 hours at 30-minute bars), `full` covers everything.
/// The NMAPE normalizer is the maximum |actual| over the whole window,
/// falling back to 1 (and recording the fallback) when every actual is 0.
struct EvalReport {
    std::vector<int> steps;
    std::vector<double> actual;
    std::vector<double> forecast;
    std::vector<double> errors;
    double normalizer_used = 1.0;
    bool normalizer_fallback = false;
    int short_steps = 6;
    HorizonMetrics short_bucket; // steps ≤ short_steps
    HorizonMetrics full;
    bool accuracy_pass = false; // short-bucket NMAPE ≤ 10%
};

EvalReport make_report(std::span<const double> actual,
                       std::span<const double> forecast,
                       std::span<const int> steps, int short_steps = 6);

/// Steps default to 1..n (a single forecast window).
EvalReport make_report(std::span<const double> actual,
                       std::span<const double> forecast, int short_steps = 6);

/// Per-step CSV: header step,actual,forecast,error; shortest round-trip
/// number formatting, deterministic bytes.
std::string report_csv(const EvalReport& report);

/// Human-readable summary block (RMSE/MAE/NMAPE per bucket, accuracy gate).
std::string report_summary(const EvalReport& report);

/// The same content as a JSON document.
std::string report_json(const EvalReport& report);

} // namespace volcast
