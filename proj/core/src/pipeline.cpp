#include "volcast/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <limits>
#include <sstream>
#include <utility>

#include "nlohmann/json.hpp"
#include "volcast/errors.hpp"
#include "volcast/rng.hpp"

namespace volcast {

namespace {

using nlohmann::json;

// Seed streams for the fits inside one pipeline build; every stage draws its
// restart perturbations from an independent stream of config.seed.
enum : std::uint64_t {
    kSeedStage1Select = 1,
    kSeedStage1Fit = 2,
    kSeedStage2Select = 3,
    kSeedStage2Fit = 4,
    kSeedStage2High = 5,
    kSeedStage2Aug = 6,
    kSeedStage2HighAug = 7,
    kSeedMlp1 = 8,
    kSeedMlp2 = 9,
};

GpFitOptions gp_opts(const PipelineConfig& config, std::uint64_t slot) {
    GpFitOptions opts;
    opts.max_iter = config.gp_max_iter;
    opts.restarts = config.gp_restarts;
    opts.seed = Rng::stream_seed(config.seed, slot);
    return opts;
}

double need(const std::optional<double>& v, const std::string& col,
            std::size_t bar) {
    if (!v)
        throw DataError("bar " + std::to_string(bar) + ": missing " + col +
                        " (impute the series first)");
    return *v;
}

std::size_t first_target_index(TargetKind target, int vol_window) {
    return target == TargetKind::returns ? 1
                                         : static_cast<std::size_t>(vol_window);
}

// Aligned training table: row r describes the target at bar start + r, with
// every input taken from the bar before it (one-step operational lag).
struct Frame {
    std::vector<std::size_t> bar;   // target bar index per row
    std::vector<std::string> names; // candidate input names
    Eigen::MatrixXd inputs;         // rows × names
    Eigen::VectorXd target;
    Eigen::VectorXd price;          // price at the target bar (stage-1 target)
    Eigen::VectorXd routing;        // nmp price at bar−1 (split routing signal)
    std::vector<BarCensor> censor;  // mark carried by the target bar
    std::vector<double> path;       // target per bar, NaN before first_target
    std::size_t first_target = 0;
    std::size_t start = 0;
};

Frame build_frame(const MarketSeries& data, const PipelineConfig& config) {
    if (!data.has_nmp_price())
        throw DataError("pipeline: series has no nmp_price column");
    data.validate();

    Frame fr;
    fr.path = target_path(data, config.target, config.vol_window);
    fr.first_target = first_target_index(config.target, config.vol_window);
    // nmp_return needs two past nmp values, so targets start at bar 2 even
    // for the returns target.
    fr.start = std::max<std::size_t>(2, fr.first_target);
    const std::size_t n = data.size();
    if (n <= fr.start)
        throw DataError("pipeline: series too short to form training rows");

    fr.names = {"nmp_price", "nmp_return"};
    if (data.has_volume()) fr.names.push_back("volume");
    for (const auto& f : data.feature_names()) fr.names.push_back(f);

    const auto rows = static_cast<Eigen::Index>(n - fr.start);
    const auto cols = static_cast<Eigen::Index>(fr.names.size());
    fr.inputs.resize(rows, cols);
    fr.target.resize(rows);
    fr.price.resize(rows);
    fr.routing.resize(rows);
    fr.censor.resize(static_cast<std::size_t>(rows));
    fr.bar.resize(static_cast<std::size_t>(rows));

    const auto& bars = data.bars();
    for (Eigen::Index r = 0; r < rows; ++r) {
        const std::size_t i = fr.start + static_cast<std::size_t>(r);
        const double nmp1 = need(bars[i - 1].nmp_price, "nmp_price", i - 1);
        const double nmp2 = need(bars[i - 2].nmp_price, "nmp_price", i - 2);
        Eigen::Index c = 0;
        fr.inputs(r, c++) = nmp1;
        fr.inputs(r, c++) = std::log(nmp1 / nmp2);
        if (data.has_volume())
            fr.inputs(r, c++) = need(bars[i - 1].volume, "volume", i - 1);
        for (std::size_t f = 0; f < data.feature_names().size(); ++f)
            fr.inputs(r, c++) =
                need(bars[i - 1].features[f], data.feature_names()[f], i - 1);
        fr.target[r] = fr.path[i];
        fr.price[r] = need(bars[i].price, "price", i);
        fr.routing[r] = nmp1;
        fr.censor[static_cast<std::size_t>(r)] = bars[i].censor;
        fr.bar[static_cast<std::size_t>(r)] = i;
    }
    return fr;
}

Eigen::Index col_of(const std::vector<std::string>& names,
                    const std::string& name) {
    const auto it = std::find(names.begin(), names.end(), name);
    if (it == names.end())
        throw UsageError("pipeline: unknown input column '" + name + "'");
    return static_cast<Eigen::Index>(it - names.begin());
}

Eigen::MatrixXd columns(const Eigen::MatrixXd& X,
                        const std::vector<std::string>& all,
                        const std::vector<std::string>& wanted) {
    Eigen::MatrixXd out(X.rows(), static_cast<Eigen::Index>(wanted.size()));
    for (std::size_t j = 0; j < wanted.size(); ++j)
        out.col(static_cast<Eigen::Index>(j)) = X.col(col_of(all, wanted[j]));
    return out;
}

// Relevance share per candidate column; a lone candidate is trivially 1.
Eigen::VectorXd candidate_relevance(const Eigen::MatrixXd& X,
                                    const Eigen::VectorXd& y,
                                    const GpFitOptions& opts) {
    if (X.cols() == 1) return Eigen::VectorXd::Ones(1);
    return ard_relevance(fit(X, y, opts));
}

// Forced inputs in their given order, then the remaining candidates whose
// relevance reaches threshold·max, strongest first.
std::vector<std::string> forced_plus_extras(
    const std::vector<std::string>& names,
    const std::vector<std::string>& forced, const Eigen::VectorXd& rel,
    double threshold) {
    const double cut = threshold * rel.maxCoeff();
    std::vector<std::string> out = forced;
    std::vector<Eigen::Index> extras;
    for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(names.size()); ++i) {
        const auto& name = names[static_cast<std::size_t>(i)];
        if (std::find(forced.begin(), forced.end(), name) != forced.end())
            continue;
        if (rel[i] >= cut) extras.push_back(i);
    }
    std::stable_sort(extras.begin(), extras.end(),
                     [&rel](Eigen::Index a, Eigen::Index b) {
                         return rel[a] > rel[b];
                     });
    for (const Eigen::Index i : extras)
        out.push_back(names[static_cast<std::size_t>(i)]);
    return out;
}

CensoredTarget make_target(double y, BarCensor mark,
                           const std::optional<double>& s_upper) {
    if (mark == BarCensor::above) return CensoredTarget::above(y);
    if (mark == BarCensor::below) return CensoredTarget::below(y);
    if (s_upper && y >= *s_upper) return CensoredTarget::above(*s_upper);
    return CensoredTarget::exact(y);
}

// One model's worth of training rows for a censored stage.
struct StageRows {
    Eigen::MatrixXd X;
    std::vector<CensoredTarget> y;
    Eigen::VectorXd routing;
    std::vector<std::size_t> bar; // target bar per row
};

StageRows take_rows(const StageRows& in, const std::vector<Eigen::Index>& idx) {
    StageRows out;
    out.X.resize(static_cast<Eigen::Index>(idx.size()), in.X.cols());
    out.routing.resize(static_cast<Eigen::Index>(idx.size()));
    out.y.reserve(idx.size());
    out.bar.reserve(idx.size());
    for (std::size_t k = 0; k < idx.size(); ++k) {
        out.X.row(static_cast<Eigen::Index>(k)) = in.X.row(idx[k]);
        out.routing[static_cast<Eigen::Index>(k)] = in.routing[idx[k]];
        out.y.push_back(in.y[static_cast<std::size_t>(idx[k])]);
        out.bar.push_back(in.bar[static_cast<std::size_t>(idx[k])]);
    }
    return out;
}

StageRows cap_rows(StageRows in, int cap) {
    const Eigen::Index rows = in.X.rows();
    if (rows <= cap) return in;
    const Eigen::Index r0 = rows - cap;
    StageRows out;
    out.X = in.X.bottomRows(cap);
    out.routing = in.routing.tail(cap);
    out.y.assign(in.y.begin() + r0, in.y.end());
    out.bar.assign(in.bar.begin() + r0, in.bar.end());
    return out;
}

// Append the lag columns plus a steps-ahead column and drop rows whose lag
// history is incomplete. At forecast time the lags are always the values
// observed at the origin, which sit 1..short_horizon bars behind the target;
// training therefore assigns each row a stratified distance d (cycling over
// 1..short_horizon by bar index) and reads its lags d bars further back, so
// the model learns how much trust a d-bar-stale lag deserves.
StageRows augment_rows(const StageRows& base, const std::vector<double>& path,
                       std::size_t first_target, int lags, int short_horizon) {
    const auto need =
        static_cast<std::size_t>(lags) + static_cast<std::size_t>(short_horizon);
    std::vector<Eigen::Index> keep;
    for (Eigen::Index r = 0; r < base.X.rows(); ++r)
        if (base.bar[static_cast<std::size_t>(r)] >= first_target + need - 1)
            keep.push_back(r);
    StageRows out = take_rows(base, keep);
    const Eigen::Index d0 = out.X.cols();
    out.X.conservativeResize(Eigen::NoChange, d0 + lags + 1);
    for (Eigen::Index r = 0; r < out.X.rows(); ++r) {
        const std::size_t i = out.bar[static_cast<std::size_t>(r)];
        const auto d = static_cast<std::size_t>(
            1 + i % static_cast<std::size_t>(short_horizon));
        for (int k = 1; k <= lags; ++k)
            out.X(r, d0 + k - 1) = path[i + 1 - d - static_cast<std::size_t>(k)];
        out.X(r, d0 + lags) = static_cast<double>(d);
    }
    return out;
}

// Empirical quantile threshold: the value at rank floor(q·n); everything at
// or above it routes to the high partition.
double quantile_threshold(std::vector<double> vals, double q) {
    std::sort(vals.begin(), vals.end());
    auto idx = static_cast<std::size_t>(
        std::floor(q * static_cast<double>(vals.size())));
    if (idx >= vals.size()) idx = vals.size() - 1;
    return vals[idx];
}

// Hyperparameters from an exact-observations fit, then EP over all rows.
// When fewer than 10 rows are exact the fit falls back to treating bound
// values as observations (with a warning) so the stage stays usable.
CensoredGp fit_censored(const StageRows& rows, const GpFitOptions& opts,
                        std::vector<std::string>& warnings,
                        const std::string& label) {
    std::vector<Eigen::Index> exact;
    for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(rows.y.size()); ++i)
        if (rows.y[static_cast<std::size_t>(i)].status == CensorStatus::exact)
            exact.push_back(i);

    Eigen::MatrixXd Xh;
    Eigen::VectorXd yh;
    if (exact.size() >= 10) {
        Xh.resize(static_cast<Eigen::Index>(exact.size()), rows.X.cols());
        yh.resize(static_cast<Eigen::Index>(exact.size()));
        for (std::size_t k = 0; k < exact.size(); ++k) {
            Xh.row(static_cast<Eigen::Index>(k)) = rows.X.row(exact[k]);
            yh[static_cast<Eigen::Index>(k)] =
                rows.y[static_cast<std::size_t>(exact[k])].value;
        }
    } else {
        warnings.push_back(label +
                           ": fewer than 10 exact observations; "
                           "hyperparameters fitted on censoring bounds");
        Xh = rows.X;
        yh.resize(static_cast<Eigen::Index>(rows.y.size()));
        for (std::size_t k = 0; k < rows.y.size(); ++k)
            yh[static_cast<Eigen::Index>(k)] = rows.y[k].value;
    }
    const TrainedGp hyper_fit = fit(Xh, yh, opts);
    return ep_fit(rows.X, rows.y, hyper_fit.raw_hyper());
}

// Fit the censored stage with its optional high-price split and augmented
// variants; `aug` may have zero rows when augmentation is off or starved.
void fit_stage2_family(FittedPipeline& out, const PipelineConfig& config,
                       const StageRows& base, const StageRows& aug) {
    std::vector<Eigen::Index> lo;
    std::vector<Eigen::Index> hi;
    if (config.use_high_price_split) {
        const std::vector<double> vals(base.routing.data(),
                                       base.routing.data() +
                                           base.routing.size());
        out.split_threshold =
            quantile_threshold(vals, config.high_price_quantile);
        for (Eigen::Index i = 0; i < base.routing.size(); ++i)
            (base.routing[i] >= out.split_threshold ? hi : lo).push_back(i);
        if (lo.size() >= 10 && hi.size() >= 10) {
            out.split_enabled = true;
        } else {
            out.warnings.push_back(
                "high-price split disabled: a partition has fewer than "
                "10 rows");
        }
    }

    if (out.split_enabled) {
        out.stage2 =
            fit_censored(take_rows(base, lo), gp_opts(config, kSeedStage2Fit),
                         out.warnings, "stage 2 (normal partition)");
        out.stage2_high =
            fit_censored(take_rows(base, hi), gp_opts(config, kSeedStage2High),
                         out.warnings, "stage 2 (high partition)");
    } else {
        out.stage2 = fit_censored(base, gp_opts(config, kSeedStage2Fit),
                                  out.warnings, "stage 2");
    }

    if (!config.use_augmentation) return;
    if (aug.y.size() < 10) {
        out.warnings.push_back(
            "augmentation disabled: fewer than 10 rows with full "
            "target-lag history");
        return;
    }
    if (out.split_enabled) {
        std::vector<Eigen::Index> alo;
        std::vector<Eigen::Index> ahi;
        for (Eigen::Index i = 0; i < aug.routing.size(); ++i)
            (aug.routing[i] >= out.split_threshold ? ahi : alo).push_back(i);
        if (alo.size() >= 10 && ahi.size() >= 10) {
            out.stage2_aug = fit_censored(take_rows(aug, alo),
                                          gp_opts(config, kSeedStage2Aug),
                                          out.warnings,
                                          "augmented stage 2 (normal "
                                          "partition)");
            out.stage2_high_aug = fit_censored(
                take_rows(aug, ahi), gp_opts(config, kSeedStage2HighAug),
                out.warnings, "augmented stage 2 (high partition)");
            return;
        }
        out.warnings.push_back(
            "augmented stage fitted without the high-price split: a "
            "partition has fewer than 10 rows");
    }
    out.stage2_aug = fit_censored(aug, gp_opts(config, kSeedStage2Aug),
                                  out.warnings, "augmented stage 2");
}

std::vector<CensoredTarget> censored_targets(
    const Eigen::VectorXd& y, const std::vector<BarCensor>& marks,
    const std::optional<double>& s_upper) {
    std::vector<CensoredTarget> out;
    out.reserve(static_cast<std::size_t>(y.size()));
    for (Eigen::Index i = 0; i < y.size(); ++i)
        out.push_back(make_target(y[i], marks[static_cast<std::size_t>(i)],
                                  s_upper));
    return out;
}

FittedPipeline make_base(Variant variant, const PipelineConfig& config) {
    FittedPipeline out;
    out.variant = variant;
    out.target = config.target;
    out.config = config;
    out.config.variant = variant;
    return out;
}

// Corrected prices must stay positive to admit log-returns; a stage-1
// excursion below zero is floored and reported rather than poisoning the
// downstream inputs with NaNs.
void floor_positive(Eigen::VectorXd& chat, std::vector<std::string>& warnings) {
    bool floored = false;
    for (Eigen::Index i = 0; i < chat.size(); ++i)
        if (!(chat[i] > 0.0)) {
            chat[i] = 1e-12;
            floored = true;
        }
    if (floored)
        warnings.push_back(
            "stage 1 produced a non-positive corrected price; floored");
}

const CensoredGp* pick_stage2(const FittedPipeline& pipeline, bool high,
                              bool aug) {
    if (aug) {
        if (high && pipeline.stage2_high_aug)
            return &*pipeline.stage2_high_aug;
        if (pipeline.stage2_aug) return &*pipeline.stage2_aug;
    }
    if (high && pipeline.stage2_high) return &*pipeline.stage2_high;
    return &*pipeline.stage2;
}

// Name-addressed input values for the forecast window: the row serving
// target bar i reads bars i−1 and i−2 only, plus the corrected-price chain.
struct ForecastInputs {
    const MarketSeries& series;
    const Eigen::VectorXd* chat = nullptr; // chat[j] predicts bar origin + j
    std::size_t origin = 0;

    double value(const std::string& name, std::size_t i) const {
        const auto& bars = series.bars();
        if (name == "nmp_price")
            return need(bars[i - 1].nmp_price, "nmp_price", i - 1);
        if (name == "nmp_return") {
            const double a = need(bars[i - 1].nmp_price, "nmp_price", i - 1);
            const double b = need(bars[i - 2].nmp_price, "nmp_price", i - 2);
            return std::log(a / b);
        }
        if (name == "volume") return need(bars[i - 1].volume, "volume", i - 1);
        if (name == "corrected_price" || name == "corrected_return") {
            const auto j = static_cast<Eigen::Index>(i - origin);
            if (name == "corrected_price") return (*chat)[j];
            return std::log((*chat)[j] / (*chat)[j - 1]);
        }
        const int f = series.feature_index(name);
        if (f < 0)
            throw DataError("forecast: input feature '" + name +
                            "' missing from series");
        return need(bars[i - 1].features[static_cast<std::size_t>(f)], name,
                    i - 1);
    }
};

json mlp_spec_json(const MlpSpec& spec) {
    return json{{"hidden", spec.hidden},
                {"seed", spec.seed},
                {"max_epochs", spec.max_epochs},
                {"learning_rate", spec.learning_rate},
                {"momentum", spec.momentum},
                {"patience", spec.patience},
                {"validation_fraction", spec.validation_fraction}};
}

MlpSpec mlp_spec_from_json(const json& j) {
    MlpSpec spec;
    spec.hidden = j.at("hidden").get<int>();
    spec.seed = j.at("seed").get<std::uint64_t>();
    spec.max_epochs = j.at("max_epochs").get<int>();
    spec.learning_rate = j.at("learning_rate").get<double>();
    spec.momentum = j.at("momentum").get<double>();
    spec.patience = j.at("patience").get<int>();
    spec.validation_fraction = j.at("validation_fraction").get<double>();
    return spec;
}

json config_json(const PipelineConfig& config) {
    json j{{"variant", variant_name(config.variant)},
           {"target", target_name(config.target)},
           {"ard_threshold", config.ard_threshold},
           {"high_price_quantile", config.high_price_quantile},
           {"use_high_price_split", config.use_high_price_split},
           {"horizon_bars", config.horizon_bars},
           {"short_horizon_bars", config.short_horizon_bars},
           {"seed", config.seed},
           {"vol_window", config.vol_window},
           {"max_train_bars", config.max_train_bars},
           {"gp_restarts", config.gp_restarts},
           {"gp_max_iter", config.gp_max_iter},
           {"augment_lags", config.augment_lags},
           {"use_augmentation", config.use_augmentation},
           {"mlp_stage1", mlp_spec_json(config.mlp_stage1)},
           {"mlp_stage2", mlp_spec_json(config.mlp_stage2)}};
    j["s_upper"] = config.s_upper ? json(*config.s_upper) : json(nullptr);
    return j;
}

PipelineConfig config_from_json(const json& j) {
    PipelineConfig config;
    config.variant = variant_from_name(j.at("variant").get<std::string>());
    config.target = target_from_name(j.at("target").get<std::string>());
    config.ard_threshold = j.at("ard_threshold").get<double>();
    config.high_price_quantile = j.at("high_price_quantile").get<double>();
    config.use_high_price_split = j.at("use_high_price_split").get<bool>();
    if (!j.at("s_upper").is_null())
        config.s_upper = j.at("s_upper").get<double>();
    config.horizon_bars = j.at("horizon_bars").get<int>();
    config.short_horizon_bars = j.at("short_horizon_bars").get<int>();
    config.seed = j.at("seed").get<std::uint64_t>();
    config.vol_window = j.at("vol_window").get<int>();
    config.max_train_bars = j.at("max_train_bars").get<int>();
    config.gp_restarts = j.at("gp_restarts").get<int>();
    config.gp_max_iter = j.at("gp_max_iter").get<int>();
    config.augment_lags = j.at("augment_lags").get<int>();
    config.use_augmentation = j.at("use_augmentation").get<bool>();
    config.mlp_stage1 = mlp_spec_from_json(j.at("mlp_stage1"));
    config.mlp_stage2 = mlp_spec_from_json(j.at("mlp_stage2"));
    return config;
}

} // namespace

std::string variant_name(Variant v) {
    switch (v) {
        case Variant::gp_direct: return "gp_direct";
        case Variant::gp_cprice: return "gp_cprice";
        case Variant::persistence: return "persistence";
        case Variant::mlp_cprice: return "mlp_cprice";
    }
    throw UsageError("unknown variant");
}

Variant variant_from_name(const std::string& name) {
    if (name == "gp_direct") return Variant::gp_direct;
    if (name == "gp_cprice") return Variant::gp_cprice;
    if (name == "persistence") return Variant::persistence;
    if (name == "mlp_cprice") return Variant::mlp_cprice;
    throw UsageError("unknown variant: '" + name + "'");
}

std::string target_name(TargetKind t) {
    return t == TargetKind::returns ? "returns" : "volatility";
}

TargetKind target_from_name(const std::string& name) {
    if (name == "returns") return TargetKind::returns;
    if (name == "volatility") return TargetKind::volatility;
    throw UsageError("unknown target: '" + name + "'");
}

void PipelineConfig::validate() const {
    if (!(ard_threshold >= 0.0 && ard_threshold <= 1.0))
        throw UsageError("config: ard_threshold must lie in [0, 1]");
    if (!(high_price_quantile > 0.0 && high_price_quantile < 1.0))
        throw UsageError("config: high_price_quantile must lie in (0, 1)");
    if (s_upper && !std::isfinite(*s_upper))
        throw UsageError("config: s_upper must be finite");
    if (horizon_bars < 1)
        throw UsageError("config: horizon_bars must be at least 1");
    if (short_horizon_bars < 1)
        throw UsageError("config: short_horizon_bars must be at least 1");
    if (vol_window < 2)
        throw UsageError("config: vol_window must be at least 2");
    if (max_train_bars < 10)
        throw UsageError("config: max_train_bars must be at least 10");
    if (gp_restarts < 1)
        throw UsageError("config: gp_restarts must be at least 1");
    if (gp_max_iter < 1)
        throw UsageError("config: gp_max_iter must be at least 1");
    if (augment_lags < 1)
        throw UsageError("config: augment_lags must be at least 1");
    if (mlp_stage1.hidden < 1 || mlp_stage2.hidden < 1)
        throw UsageError("config: mlp hidden units must be at least 1");
}

std::vector<double> target_path(const MarketSeries& series, TargetKind target,
                                int vol_window) {
    if (vol_window < 2)
        throw UsageError("target_path: vol_window must be at least 2");
    const double nan = std::numeric_limits<double>::quiet_NaN();
    std::vector<double> path(series.size(), nan);
    if (series.size() < 2) return path;
    const std::vector<double> rets = log_returns(series);
    if (target == TargetKind::returns) {
        for (std::size_t i = 0; i < rets.size(); ++i) path[i + 1] = rets[i];
        return path;
    }
    if (static_cast<int>(rets.size()) < vol_window) return path;
    const std::vector<double> rv = realized_volatility(rets, vol_window);
    for (std::size_t j = 0; j < rv.size(); ++j)
        path[j + static_cast<std::size_t>(vol_window)] = rv[j];
    return path;
}

std::vector<SelectedInput> select_inputs_ard(const NamedMatrix& candidates,
                                             const Eigen::VectorXd& target,
                                             double threshold,
                                             const GpFitOptions& opts) {
    const auto k = static_cast<Eigen::Index>(candidates.names.size());
    if (k == 0) throw UsageError("select_inputs_ard: no candidate inputs");
    if (candidates.values.cols() != k)
        throw UsageError("select_inputs_ard: names/columns mismatch");
    if (candidates.values.rows() != target.size())
        throw UsageError("select_inputs_ard: rows/target length mismatch");
    if (!(threshold >= 0.0 && threshold <= 1.0))
        throw UsageError("select_inputs_ard: threshold must lie in [0, 1]");
    if (k == 1) return {{candidates.names[0], 1.0}};

    const Eigen::VectorXd rel =
        candidate_relevance(candidates.values, target, opts);
    const double cut = threshold * rel.maxCoeff();
    std::vector<SelectedInput> out;
    for (Eigen::Index i = 0; i < k; ++i)
        if (rel[i] >= cut)
            out.push_back({candidates.names[static_cast<std::size_t>(i)],
                           rel[i]});
    std::stable_sort(out.begin(), out.end(),
                     [](const SelectedInput& a, const SelectedInput& b) {
                         return a.relevance > b.relevance;
                     });
    return out;
}

PriceSplit high_price_split(const MarketSeries& data, double quantile) {
    if (!(quantile > 0.0 && quantile < 1.0))
        throw UsageError("high_price_split: quantile must lie in (0, 1)");
    if (data.empty()) throw UsageError("high_price_split: empty series");

    std::vector<double> prices;
    prices.reserve(data.size());
    for (std::size_t i = 0; i < data.size(); ++i)
        prices.push_back(need(data.bars()[i].price, "price", i));

    PriceSplit split;
    split.threshold = quantile_threshold(prices, quantile);
    std::vector<MarketBar> lo;
    std::vector<MarketBar> hi;
    for (std::size_t i = 0; i < data.size(); ++i)
        (prices[i] >= split.threshold ? hi : lo).push_back(data.bars()[i]);
    split.normal = MarketSeries(std::move(lo), data.feature_names(),
                                data.has_volume(), data.has_nmp_price());
    split.high = MarketSeries(std::move(hi), data.feature_names(),
                              data.has_volume(), data.has_nmp_price());
    return split;
}

MarketSeries slice_series(const MarketSeries& series, std::size_t begin,
                          std::size_t end) {
    if (begin > end || end > series.size())
        throw UsageError("slice_series: invalid range");
    std::vector<MarketBar> bars(series.bars().begin() +
                                    static_cast<std::ptrdiff_t>(begin),
                                series.bars().begin() +
                                    static_cast<std::ptrdiff_t>(end));
    return MarketSeries(std::move(bars), series.feature_names(),
                        series.has_volume(), series.has_nmp_price());
}

FittedPipeline build_gp_direct(const MarketSeries& data,
                               const PipelineConfig& config) {
    config.validate();
    FittedPipeline out = make_base(Variant::gp_direct, config);
    const Frame fr = build_frame(data, config);

    StageRows base;
    base.X = fr.inputs;
    base.y = censored_targets(fr.target, fr.censor, config.s_upper);
    base.routing = fr.routing;
    base.bar = fr.bar;
    base = cap_rows(std::move(base), config.max_train_bars);
    if (base.y.size() < 10)
        throw DataError("pipeline: fewer than 10 usable training rows");

    Eigen::VectorXd tgt(static_cast<Eigen::Index>(base.y.size()));
    for (Eigen::Index i = 0; i < tgt.size(); ++i)
        tgt[i] = base.y[static_cast<std::size_t>(i)].value;
    const auto selected =
        select_inputs_ard({fr.names, base.X}, tgt, config.ard_threshold,
                          gp_opts(config, kSeedStage2Select));
    for (const auto& s : selected) out.stage2_inputs.push_back(s.name);

    base.X = columns(base.X, fr.names, out.stage2_inputs);
    const StageRows aug =
        config.use_augmentation
            ? augment_rows(base, fr.path, fr.first_target,
                           config.augment_lags, config.short_horizon_bars)
            : StageRows{};
    fit_stage2_family(out, config, base, aug);
    return out;
}

FittedPipeline build_gp_cprice(const MarketSeries& data,
                               const PipelineConfig& config) {
    config.validate();
    FittedPipeline out = make_base(Variant::gp_cprice, config);
    const Frame fr = build_frame(data, config);
    const Eigen::Index rows = fr.target.size();
    if (rows < 11) // stage 2 loses one row to the corrected-return lag
        throw DataError("pipeline: fewer than 10 usable training rows");
    const Eigen::Index r0 =
        rows > config.max_train_bars ? rows - config.max_train_bars : 0;
    const Eigen::Index m = rows - r0;

    // Stage 1 corrects the external price prediction; the nmp price is
    // always kept, further inputs qualify by relevance.
    const Eigen::VectorXd rel1 =
        candidate_relevance(fr.inputs.middleRows(r0, m), fr.price.segment(r0, m),
                            gp_opts(config, kSeedStage1Select));
    out.stage1_inputs =
        forced_plus_extras(fr.names, {"nmp_price"}, rel1, config.ard_threshold);
    const Eigen::MatrixXd X1 = columns(fr.inputs, fr.names, out.stage1_inputs);
    out.stage1 = fit(X1.middleRows(r0, m), fr.price.segment(r0, m),
                     gp_opts(config, kSeedStage1Fit));
    Eigen::VectorXd chat = predict(*out.stage1, X1).mean;
    floor_positive(chat, out.warnings);

    // Stage 2 predicts the target from the corrected price. Row k of the
    // stage-2 table serves the target at frame row k+1 so a corrected
    // return is always available.
    std::vector<std::string> c2names = {"corrected_price", "corrected_return",
                                        "nmp_return"};
    std::vector<std::string> forced = {"corrected_price"};
    if (data.has_volume()) {
        c2names.push_back("volume");
        forced.push_back("volume");
    }
    for (const auto& f : data.feature_names()) c2names.push_back(f);

    const Eigen::Index rows2 = rows - 1;
    Eigen::MatrixXd X2cand(rows2, static_cast<Eigen::Index>(c2names.size()));
    for (Eigen::Index r = 0; r < rows2; ++r) {
        const Eigen::Index k = r + 1; // frame row served by this stage-2 row
        Eigen::Index c = 0;
        X2cand(r, c++) = chat[k];
        X2cand(r, c++) = std::log(chat[k] / chat[k - 1]);
        X2cand(r, c++) = fr.inputs(k, col_of(fr.names, "nmp_return"));
        if (data.has_volume())
            X2cand(r, c++) = fr.inputs(k, col_of(fr.names, "volume"));
        for (const auto& f : data.feature_names())
            X2cand(r, c++) = fr.inputs(k, col_of(fr.names, f));
    }

    StageRows base;
    base.X = X2cand;
    base.routing = fr.routing.tail(rows2);
    base.y = censored_targets(
        fr.target.tail(rows2),
        {fr.censor.begin() + 1, fr.censor.end()}, config.s_upper);
    base.bar.assign(fr.bar.begin() + 1, fr.bar.end());
    base = cap_rows(std::move(base), config.max_train_bars);

    Eigen::VectorXd tgt(static_cast<Eigen::Index>(base.y.size()));
    for (Eigen::Index i = 0; i < tgt.size(); ++i)
        tgt[i] = base.y[static_cast<std::size_t>(i)].value;
    const Eigen::VectorXd rel2 = candidate_relevance(
        base.X, tgt, gp_opts(config, kSeedStage2Select));
    out.stage2_inputs =
        forced_plus_extras(c2names, forced, rel2, config.ard_threshold);
    base.X = columns(base.X, c2names, out.stage2_inputs);

    const StageRows aug =
        config.use_augmentation
            ? augment_rows(base, fr.path, fr.first_target,
                           config.augment_lags, config.short_horizon_bars)
            : StageRows{};
    fit_stage2_family(out, config, base, aug);
    return out;
}

FittedPipeline build_mlp_cprice(const MarketSeries& data,
                                const PipelineConfig& config) {
    config.validate();
    FittedPipeline out = make_base(Variant::mlp_cprice, config);
    const Frame fr = build_frame(data, config);
    const Eigen::Index rows = fr.target.size();
    const Eigen::Index r0 =
        rows > config.max_train_bars ? rows - config.max_train_bars : 0;
    const Eigen::Index m = rows - r0;
    if (m < 20)
        throw DataError("mlp_cprice: needs at least 20 training rows");

    out.stage1_inputs = {"nmp_price"};
    if (data.has_volume()) out.stage1_inputs.push_back("volume");
    if (data.feature_index("exchange_rate") >= 0)
        out.stage1_inputs.push_back("exchange_rate");
    else
        out.warnings.push_back(
            "feature 'exchange_rate' not found; stage-1 network proceeds "
            "without it");

    const Eigen::MatrixXd X1 = columns(fr.inputs, fr.names, out.stage1_inputs);
    MlpSpec s1 = config.mlp_stage1;
    s1.seed = Rng::stream_seed(config.seed, kSeedMlp1);
    out.mlp1 = mlp_fit(X1.middleRows(r0, m), fr.price.segment(r0, m), s1);
    Eigen::VectorXd chat = out.mlp1->predict(X1);
    floor_positive(chat, out.warnings);

    // The second network sees only the corrected price.
    out.stage2_inputs = {"corrected_price"};
    MlpSpec s2 = config.mlp_stage2;
    s2.seed = Rng::stream_seed(config.seed, kSeedMlp2);
    out.mlp2 = mlp_fit(chat.segment(r0, m), fr.target.segment(r0, m), s2);
    return out;
}

FittedPipeline build_persistence(const MarketSeries& data,
                                 const PipelineConfig& config) {
    config.validate();
    FittedPipeline out = make_base(Variant::persistence, config);
    const auto path = target_path(data, config.target, config.vol_window);
    std::size_t defined = 0;
    for (const double v : path)
        if (std::isfinite(v)) ++defined;
    if (defined < 10)
        throw DataError("pipeline: fewer than 10 usable training rows");
    return out;
}

FittedPipeline build_pipeline(const MarketSeries& data,
                              const PipelineConfig& config) {
    switch (config.variant) {
        case Variant::gp_direct: return build_gp_direct(data, config);
        case Variant::gp_cprice: return build_gp_cprice(data, config);
        case Variant::persistence: return build_persistence(data, config);
        case Variant::mlp_cprice: return build_mlp_cprice(data, config);
    }
    throw UsageError("unknown variant");
}

ForecastReport forecast(const FittedPipeline& pipeline,
                        const MarketSeries& latest, int horizon_bars,
                        bool allow_augmentation) {
    if (horizon_bars < 1)
        throw UsageError("forecast: horizon must be at least 1 bar");
    const PipelineConfig& config = pipeline.config;
    const std::size_t H = static_cast<std::size_t>(horizon_bars);
    if (latest.size() < H + 2)
        throw DataError("forecast: series too short for the requested horizon");
    const std::size_t o = latest.size() - H - 1; // last observed bar
    const std::size_t first_t =
        first_target_index(config.target, config.vol_window);

    ForecastReport rep;
    rep.target = pipeline.target;
    rep.steps.resize(H);
    const auto& bars = latest.bars();
    for (std::size_t h = 1; h <= H; ++h) {
        rep.steps[h - 1].step = static_cast<int>(h);
        rep.steps[h - 1].timestamp = bars[o + h].timestamp;
    }

    if (pipeline.variant == Variant::persistence) {
        if (o < first_t)
            throw DataError(
                "forecast: no observed target at the forecast origin");
        const auto path = target_path(slice_series(latest, 0, o + 1),
                                      config.target, config.vol_window);
        for (auto& st : rep.steps) st.mean = path[o];
        return rep;
    }

    if (!latest.has_nmp_price())
        throw DataError("forecast: series has no nmp_price column");
    if (o < 2)
        throw DataError(
            "forecast: needs at least two observed bars before the horizon "
            "window");

    ForecastInputs fi{latest, nullptr, o};

    // Corrected-price chain: chat[j] is the stage-1 estimate for bar o + j,
    // computed from the exogenous columns of bar o + j − 1 only, so it stays
    // operational across the whole horizon.
    Eigen::VectorXd chat;
    if (pipeline.variant == Variant::gp_cprice ||
        pipeline.variant == Variant::mlp_cprice) {
        const bool is_gp = pipeline.variant == Variant::gp_cprice;
        if (is_gp && !pipeline.stage1)
            throw ModelError("forecast: pipeline has no fitted stage-1 model");
        if (!is_gp && !pipeline.mlp1)
            throw ModelError("forecast: pipeline has no fitted stage-1 model");
        Eigen::MatrixXd X1(
            static_cast<Eigen::Index>(H + 1),
            static_cast<Eigen::Index>(pipeline.stage1_inputs.size()));
        for (std::size_t j = 0; j <= H; ++j)
            for (std::size_t c = 0; c < pipeline.stage1_inputs.size(); ++c)
                X1(static_cast<Eigen::Index>(j),
                   static_cast<Eigen::Index>(c)) =
                    fi.value(pipeline.stage1_inputs[c], o + j);
        chat = is_gp ? predict(*pipeline.stage1, X1).mean
                     : pipeline.mlp1->predict(X1);
        floor_positive(chat, rep.warnings);
        fi.chat = &chat;
    }

    if (pipeline.variant == Variant::mlp_cprice) {
        if (!pipeline.mlp2)
            throw ModelError("forecast: pipeline has no fitted stage-2 model");
        for (std::size_t h = 1; h <= H; ++h) {
            Eigen::MatrixXd x(1, 1);
            x(0, 0) = chat[static_cast<Eigen::Index>(h)];
            double mean = pipeline.mlp2->predict(x)[0];
            ForecastStep& st = rep.steps[h - 1];
            if (pipeline.target == TargetKind::volatility && mean < 0.0) {
                mean = 0.0;
                st.floored = true;
            }
            st.mean = mean;
        }
        return rep;
    }

    if (!pipeline.stage2)
        throw ModelError("forecast: pipeline has no fitted stage-2 model");

    // Historical augmentation: the lag inputs are the most recent observed
    // targets at the origin, so they sit h bars behind the step-h target.
    // The trailing steps-ahead input tells the augmented model how stale
    // they are; it only serves the short bucket.
    std::vector<double> lags;
    bool lags_ok = false;
    const bool has_aug = pipeline.stage2_aug || pipeline.stage2_high_aug;
    if (has_aug && allow_augmentation && config.use_augmentation) {
        const auto L = static_cast<std::size_t>(config.augment_lags);
        if (o >= first_t + L - 1) {
            const auto path = target_path(slice_series(latest, 0, o + 1),
                                          config.target, config.vol_window);
            lags.resize(L);
            for (std::size_t k = 1; k <= L; ++k) lags[k - 1] = path[o + 1 - k];
            lags_ok = true;
        } else {
            rep.warnings.push_back(
                "augmentation unavailable: insufficient observed target "
                "history");
        }
    }

    const double bound = config.s_upper
                             ? *config.s_upper
                             : std::numeric_limits<double>::infinity();
    const auto base_dim =
        static_cast<Eigen::Index>(pipeline.stage2_inputs.size());
    for (std::size_t h = 1; h <= H; ++h) {
        const std::size_t i = o + h;
        ForecastStep& st = rep.steps[h - 1];
        const bool routed_high =
            pipeline.split_enabled &&
            fi.value("nmp_price", i) >= pipeline.split_threshold;
        const bool want_aug =
            lags_ok && h <= static_cast<std::size_t>(config.short_horizon_bars);
        const CensoredGp* model = pick_stage2(pipeline, routed_high, want_aug);
        const bool with_lags =
            (pipeline.stage2_aug && model == &*pipeline.stage2_aug) ||
            (pipeline.stage2_high_aug && model == &*pipeline.stage2_high_aug);

        Eigen::MatrixXd x(
            1, base_dim + (with_lags ? config.augment_lags + 1 : 0));
        for (Eigen::Index c = 0; c < base_dim; ++c)
            x(0, c) =
                fi.value(pipeline.stage2_inputs[static_cast<std::size_t>(c)],
                         i);
        if (with_lags) {
            for (int k = 0; k < config.augment_lags; ++k)
                x(0, base_dim + k) = lags[static_cast<std::size_t>(k)];
            x(0, base_dim + config.augment_lags) = static_cast<double>(h);
        }

        const CensoredPrediction pr = predict_censored(*model, x, bound);
        double mean = pr.latent_mean[0];
        const double var = std::max(0.0, pr.latent_variance[0]) +
                           model->hyper().noise_var();
        if (pipeline.target == TargetKind::volatility && mean < 0.0) {
            mean = 0.0;
            st.floored = true;
        }
        st.mean = mean;
        st.stddev = std::sqrt(var);
        st.used_augmentation = with_lags;
        st.routed_high = routed_high;
    }
    return rep;
}

std::vector<double> corrected_prices(const FittedPipeline& pipeline,
                                     const MarketSeries& series) {
    const bool is_gp = pipeline.variant == Variant::gp_cprice;
    if (!is_gp && pipeline.variant != Variant::mlp_cprice)
        throw ModelError("corrected_prices: '" +
                         variant_name(pipeline.variant) +
                         "' has no correction stage");
    if ((is_gp && !pipeline.stage1) || (!is_gp && !pipeline.mlp1))
        throw ModelError("corrected_prices: correction stage not fitted");

    const std::size_t n = series.size();
    std::vector<double> out(n, std::numeric_limits<double>::quiet_NaN());
    if (n < 3) return out; // return-type inputs read two bars back

    const ForecastInputs fi{series, nullptr, 0};
    const auto d = static_cast<Eigen::Index>(pipeline.stage1_inputs.size());
    Eigen::MatrixXd X1(static_cast<Eigen::Index>(n - 2), d);
    for (std::size_t i = 2; i < n; ++i)
        for (Eigen::Index c = 0; c < d; ++c)
            X1(static_cast<Eigen::Index>(i - 2), c) =
                fi.value(pipeline.stage1_inputs[static_cast<std::size_t>(c)],
                         i);
    Eigen::VectorXd chat = is_gp ? predict(*pipeline.stage1, X1).mean
                                 : pipeline.mlp1->predict(X1);
    std::vector<std::string> scratch;
    floor_positive(chat, scratch);
    for (std::size_t i = 2; i < n; ++i)
        out[i] = chat[static_cast<Eigen::Index>(i - 2)];
    return out;
}

std::string pipeline_to_text(const FittedPipeline& pipeline) {
    json j;
    j["format"] = "volcast-pipeline";
    j["version"] = 1;
    j["variant"] = variant_name(pipeline.variant);
    j["target"] = target_name(pipeline.target);
    j["config"] = config_json(pipeline.config);
    j["stage1_inputs"] = pipeline.stage1_inputs;
    j["stage2_inputs"] = pipeline.stage2_inputs;
    j["split_enabled"] = pipeline.split_enabled;
    j["split_threshold"] = pipeline.split_threshold;
    j["warnings"] = pipeline.warnings;
    const auto gp_json = [](const std::optional<TrainedGp>& m) {
        return m ? json::parse(gp_to_text(*m)) : json(nullptr);
    };
    const auto cens_json = [](const std::optional<CensoredGp>& m) {
        return m ? json::parse(censored_to_text(*m)) : json(nullptr);
    };
    const auto mlp_json = [](const std::optional<MlpModel>& m) {
        return m ? json::parse(mlp_to_text(*m)) : json(nullptr);
    };
    j["stage1"] = gp_json(pipeline.stage1);
    j["stage2"] = cens_json(pipeline.stage2);
    j["stage2_high"] = cens_json(pipeline.stage2_high);
    j["stage2_aug"] = cens_json(pipeline.stage2_aug);
    j["stage2_high_aug"] = cens_json(pipeline.stage2_high_aug);
    j["mlp1"] = mlp_json(pipeline.mlp1);
    j["mlp2"] = mlp_json(pipeline.mlp2);
    return j.dump(2) + "\n";
}

FittedPipeline pipeline_from_text(const std::string& text) {
    try {
        const json j = json::parse(text);
        if (!j.is_object() || j.value("format", "") != "volcast-pipeline")
            throw DataError("not a pipeline model file");
        if (j.at("version").get<int>() != 1)
            throw DataError("unsupported pipeline model version");

        FittedPipeline p;
        p.variant = variant_from_name(j.at("variant").get<std::string>());
        p.target = target_from_name(j.at("target").get<std::string>());
        p.config = config_from_json(j.at("config"));
        p.stage1_inputs =
            j.at("stage1_inputs").get<std::vector<std::string>>();
        p.stage2_inputs =
            j.at("stage2_inputs").get<std::vector<std::string>>();
        p.split_enabled = j.at("split_enabled").get<bool>();
        p.split_threshold = j.at("split_threshold").get<double>();
        p.warnings = j.at("warnings").get<std::vector<std::string>>();
        if (!j.at("stage1").is_null())
            p.stage1 = gp_from_text(j.at("stage1").dump());
        if (!j.at("stage2").is_null())
            p.stage2 = censored_from_text(j.at("stage2").dump());
        if (!j.at("stage2_high").is_null())
            p.stage2_high = censored_from_text(j.at("stage2_high").dump());
        if (!j.at("stage2_aug").is_null())
            p.stage2_aug = censored_from_text(j.at("stage2_aug").dump());
        if (!j.at("stage2_high_aug").is_null())
            p.stage2_high_aug =
                censored_from_text(j.at("stage2_high_aug").dump());
        if (!j.at("mlp1").is_null())
            p.mlp1 = mlp_from_text(j.at("mlp1").dump());
        if (!j.at("mlp2").is_null())
            p.mlp2 = mlp_from_text(j.at("mlp2").dump());
        return p;
    } catch (const json::exception& e) {
        throw DataError(
            std::string("pipeline model file: missing or mistyped field: ") +
            e.what());
    } catch (const UsageError& e) {
        throw DataError(std::string("pipeline model file: ") + e.what());
    }
}

void save_pipeline(const FittedPipeline& pipeline, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write '" + path + "'");
    out << pipeline_to_text(pipeline);
    if (!out) throw DataError("failed writing '" + path + "'");
}

FittedPipeline load_pipeline(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return pipeline_from_text(ss.str());
}

} // namespace volcast
