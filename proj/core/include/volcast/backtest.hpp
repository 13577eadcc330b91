#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "volcast/market_data.hpp"
#include "volcast/metrics.hpp"
#include "volcast/pipeline.hpp"

namespace volcast {

/// Chronological train/test evaluation of one or more pipeline variants.
/// The split is by fraction or by an explicit last-training timestamp; the
/// test span is walked in consecutive non-overlapping windows of
/// pipeline.horizon_bars, refitting the models every `refit_every` windows
/// on all data observed so far (walk-forward). Price levels drift, so a
/// model fitted once at the split degrades as the test span moves away
/// from its training range; periodic refits keep the comparison fair to
/// every variant without ever showing a model data from its own future.
struct BacktestConfig {
    PipelineConfig pipeline; // shared settings; variant/target overridden
    std::vector<Variant> variants = {Variant::gp_direct, Variant::gp_cprice,
                                     Variant::persistence,
                                     Variant::mlp_cprice};
    std::vector<TargetKind> targets = {TargetKind::returns,
                                       TargetKind::volatility};
    double train_fraction = 0.6;
    std::optional<std::int64_t> train_end; // last training timestamp, incl.
    int knn_k = 5;                         // imputation neighbours
    int refit_every = 5;                   // windows between refits; 0 = never

    void validate() const; // throws UsageError
};

struct BacktestResult {
    Variant variant = Variant::gp_cprice;
    TargetKind target = TargetKind::returns;
    EvalReport report;
    std::vector<std::string> warnings;
    double wall_seconds = 0.0; // console diagnostics only, never rendered
};

struct BacktestRun {
    std::uint64_t data_hash = 0;  // caller-supplied input fingerprint
    std::string config_snapshot;  // canonical key=value block
    std::size_t train_bars = 0;
    std::size_t test_bars = 0;
    std::size_t windows = 0;
    std::vector<BacktestResult> results; // variant-major, targets in order
    std::vector<std::string> warnings;
    double wall_seconds = 0.0; // console diagnostics only, never rendered
};

/// Train every (variant, target) pipeline on the training span, forecast
/// each test window from the data observed up to it, and aggregate the
/// step-aligned errors. Deterministic given the data and config.
BacktestRun run_backtest(const MarketSeries& data, const BacktestConfig& config,
                         std::uint64_t data_hash = 0);

/// FNV-1a 64-bit over raw bytes; fnv1a_file hashes a file's exact contents.
std::uint64_t fnv1a(std::string_view bytes);
std::uint64_t fnv1a_file(const std::string& path);

/// Human-readable comparison tables. Identical runs yield identical bytes:
/// timings are reported on the console, never here.
std::string render_backtest(const BacktestRun& run);

/// The same content as a JSON document (also timing-free).
std::string backtest_json(const BacktestRun& run);

} // namespace volcast
