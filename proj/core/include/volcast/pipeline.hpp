#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "volcast/baselines.hpp"
#include "volcast/censored_gp.hpp"
#include "volcast/gp.hpp"
#include "volcast/market_data.hpp"

namespace volcast {

enum class Variant { gp_direct, gp_cprice, persistence, mlp_cprice };
enum class TargetKind { returns, volatility };

std::string variant_name(Variant v);
Variant variant_from_name(const std::string& name);
std::string target_name(TargetKind t);
TargetKind target_from_name(const std::string& name);

struct PipelineConfig {
    Variant variant = Variant::gp_cprice;
    TargetKind target = TargetKind::returns;
    double ard_threshold = 0.1;        // relative to the maximum relevance
    double high_price_quantile = 0.9;
    bool use_high_price_split = false;
    std::optional<double> s_upper;     // target-unit censoring bound
    int horizon_bars = 48;
    int short_horizon_bars = 6;        // 3 hours of 30-minute bars
    std::uint64_t seed = 0;

    int vol_window = 48;               // realized-volatility window: one day
    int max_train_bars = 256;          // most recent rows used for GP stages
    int gp_restarts = 3;
    int gp_max_iter = 100;
    int augment_lags = 4;              // 2 hours of target history
    bool use_augmentation = true;
    MlpSpec mlp_stage1{.hidden = 11};
    MlpSpec mlp_stage2{.hidden = 8};

    void validate() const; // throws UsageError
};

/// One ARD-ranked input.
struct SelectedInput {
    std::string name;
    double relevance = 0.0;
};

struct NamedMatrix {
    std::vector<std::string> names;
    Eigen::MatrixXd values; // one column per name
};

/// Fit a GP over all candidates and keep those whose relevance reaches
/// threshold·(maximum relevance), ordered by relevance descending. Never
/// empty: the top input always qualifies. A single candidate is returned
/// as-is without fitting.
std::vector<SelectedInput> select_inputs_ard(const NamedMatrix& candidates,
                                             const Eigen::VectorXd& target,
                                             double threshold,
                                             const GpFitOptions& opts = {});

/// Partition bars by price ≥ threshold, threshold = empirical quantile of
/// the prices. Whether a thin partition disables the split is the caller's
/// (the pipeline's) decision.
struct PriceSplit {
    MarketSeries normal;
    MarketSeries high;
    double threshold = 0.0;
};
PriceSplit high_price_split(const MarketSeries& data, double quantile);

/// A fitted forecasting pipeline. gp_cprice carries both stages; gp_direct
/// only the target stage; persistence carries nothing (it reads the latest
/// observation at forecast time); mlp_cprice carries the two networks.
struct FittedPipeline {
    Variant variant = Variant::gp_cprice;
    TargetKind target = TargetKind::returns;
    PipelineConfig config;

    std::vector<std::string> stage1_inputs;
    std::vector<std::string> stage2_inputs;
    std::optional<TrainedGp> stage1;

    std::optional<CensoredGp> stage2;      // routing: nmp price < threshold
    std::optional<CensoredGp> stage2_high; // routing: nmp price ≥ threshold
    std::optional<CensoredGp> stage2_aug;  // with target-lag augmentation
    std::optional<CensoredGp> stage2_high_aug;
    bool split_enabled = false;
    double split_threshold = 0.0;

    std::optional<MlpModel> mlp1;
    std::optional<MlpModel> mlp2;

    std::vector<std::string> warnings;
};

FittedPipeline build_gp_direct(const MarketSeries& data,
                               const PipelineConfig& config);
FittedPipeline build_gp_cprice(const MarketSeries& data,
                               const PipelineConfig& config);
FittedPipeline build_mlp_cprice(const MarketSeries& data,
                                const PipelineConfig& config);
FittedPipeline build_persistence(const MarketSeries& data,
                                 const PipelineConfig& config);

/// Dispatch on config.variant.
FittedPipeline build_pipeline(const MarketSeries& data,
                              const PipelineConfig& config);

struct ForecastStep {
    int step = 0; // 1-based horizon position
    std::int64_t timestamp = 0;
    double mean = 0.0;
    double stddev = 0.0;
    bool floored = false;          // volatility clipped up to 0
    bool used_augmentation = false;
    bool routed_high = false;
};

struct ForecastReport {
    TargetKind target = TargetKind::returns;
    std::vector<ForecastStep> steps;
    std::vector<std::string> warnings;
};

/// Forecast the last `horizon_bars` bars of `latest`: those bars supply the
/// externally provided (NMP-side) inputs for each future step, while their
/// prices are never consulted. The bar before them is the forecast origin.
/// For steps within config.short_horizon_bars the most recent observed
/// target values are appended to the inputs (historical augmentation) when
/// the pipeline carries an augmented stage; `allow_augmentation` can switch
/// that off for paired comparisons.
ForecastReport forecast(const FittedPipeline& pipeline,
                        const MarketSeries& latest, int horizon_bars,
                        bool allow_augmentation = true);

/// Stage-1 corrected price path over a whole series: element i is the
/// pipeline's corrected version of bar i−1's external price prediction,
/// i.e. its estimate of the price at bar i. Elements 0–1 are NaN (return
/// inputs read two bars back). Only pipelines with a correction stage
/// (gp_cprice, mlp_cprice) qualify; others raise ModelError. Missing
/// inputs raise DataError.
std::vector<double> corrected_prices(const FittedPipeline& pipeline,
                                     const MarketSeries& series);

/// Versioned text serialization of a fitted pipeline.
std::string pipeline_to_text(const FittedPipeline& pipeline);
FittedPipeline pipeline_from_text(const std::string& text);
void save_pipeline(const FittedPipeline& pipeline, const std::string& path);
FittedPipeline load_pipeline(const std::string& path);

/// Contiguous bar range [begin, end) as a standalone series.
MarketSeries slice_series(const MarketSeries& series, std::size_t begin,
                          std::size_t end);

/// Observed target path aligned to bar indices: element i is the target at
/// bar i (NaN where undefined, e.g. before the volatility window fills).
std::vector<double> target_path(const MarketSeries& series, TargetKind target,
                                int vol_window);

} // namespace volcast
