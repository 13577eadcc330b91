#include "volcast/synth.hpp"

#include <charconv>
#include <cmath>
#include <fstream>

#include "volcast/errors.hpp"
#include "volcast/rng.hpp"
#include "volcast/time.hpp"

namespace volcast {
namespace {

// Stream ids for Rng::stream_seed, fixed so single-knob config changes do
// not reshuffle unrelated draws.
enum Stream : std::uint64_t {
    kVolPath = 0,
    kReturns = 1,
    kJumpOccurrence = 2,
    kJumpSize = 3,
    kNmpNoise = 4,
    kVolumeNoise = 5,
    kInterestRate = 6,
    kInflation = 7,
    kInsiderNews = 8,
};

constexpr std::int64_t kStartTimestamp = 1577923200; // 2020-01-02T00:00:00Z
constexpr std::int64_t kBarSeconds = 1800;

std::string format_double(double v) {
    char buf[32];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    (void)ec;
    return std::string(buf, ptr);
}

} // namespace

void SynthConfig::validate() const {
    const auto positive = [](double v, const char* name) {
        if (!(v > 0.0))
            throw UsageError(std::string("synth config: ") + name +
                             " must be > 0");
    };
    const auto non_negative = [](double v, const char* name) {
        if (!(v >= 0.0))
            throw UsageError(std::string("synth config: ") + name +
                             " must be >= 0");
    };
    if (days < 1) throw UsageError("synth config: days must be >= 1");
    if (bars_per_day < 1)
        throw UsageError("synth config: bars_per_day must be >= 1");
    positive(base_price, "base_price");
    positive(vol_level, "vol_level");
    positive(volume_base, "volume_base");
    if (!(vol_mean_reversion >= 0.0 && vol_mean_reversion <= 1.0))
        throw UsageError("synth config: vol_mean_reversion must be in [0,1]");
    non_negative(vol_of_vol, "vol_of_vol");
    non_negative(vol_leverage, "vol_leverage");
    non_negative(jump_intensity, "jump_intensity");
    non_negative(jump_scale, "jump_scale");
    non_negative(nmp_bias_const, "nmp_bias_const");
    non_negative(nmp_bias_prop, "nmp_bias_prop");
    non_negative(nmp_bias_state, "nmp_bias_state");
    non_negative(nmp_noise_scale, "nmp_noise_scale");
    non_negative(volume_coupling, "volume_coupling");
    non_negative(volume_noise, "volume_noise");
    non_negative(insider_impact, "insider_impact");
}

SynthConfig shock_preset(std::uint64_t seed) {
    SynthConfig c;
    c.seed = seed;
    c.jump_intensity = 3.0;
    c.jump_scale = 0.04;
    c.vol_of_vol = 0.30;
    c.vol_leverage = 0.5;
    return c;
}

SynthResult generate(const SynthConfig& config) {
    config.validate();
    const int n = config.days * config.bars_per_day;

    Rng vol_rng(Rng::stream_seed(config.seed, kVolPath));
    Rng ret_rng(Rng::stream_seed(config.seed, kReturns));
    Rng jump_occ_rng(Rng::stream_seed(config.seed, kJumpOccurrence));
    Rng jump_size_rng(Rng::stream_seed(config.seed, kJumpSize));
    Rng nmp_rng(Rng::stream_seed(config.seed, kNmpNoise));
    Rng volume_rng(Rng::stream_seed(config.seed, kVolumeNoise));
    Rng ir_rng(Rng::stream_seed(config.seed, kInterestRate));
    Rng inf_rng(Rng::stream_seed(config.seed, kInflation));
    Rng news_rng(Rng::stream_seed(config.seed, kInsiderNews));

    // Pre-draw the per-bar jump streams: occurrence uniforms and sizes are
    // consumed regardless of intensity, so raising the intensity only turns
    // jumps on without disturbing any other draw.
    std::vector<double> jump_u(n), jump_size(n);
    for (int i = 0; i < n; ++i) {
        jump_u[i] = jump_occ_rng.uniform();
        jump_size[i] = std::abs(jump_size_rng.normal()) * config.jump_scale;
    }
    const double jump_prob =
        config.jump_intensity / static_cast<double>(config.bars_per_day);

    const double log_level = std::log(config.vol_level);
    constexpr double kMeanHalfNormal = 0.3989422804014327; // E[max(0, Z)]
    double g = log_level; // latent log-volatility state
    double price = config.base_price;
    // Leverage feeds on the standardized pre-jump return so the volatility
    // path is independent of the jump configuration (keeps "more jumps never
    // means less realized variance" exact) and is centered so the stationary
    // level stays at vol_level. It scales with vol_of_vol: with a frozen
    // volatility state (vol_of_vol 0) there is no leverage channel either,
    // and realized volatility sits exactly at the configured level.
    double prev_shock = 0.0; // −r_core/σ of the previous bar

    std::vector<double> prices(n + 1);
    std::vector<double> returns(n);
    std::vector<double> vols(n);
    std::vector<double> news(n);
    prices[0] = price;

    double interest = 0.05, inflation_v = 0.04;
    std::vector<double> ir_path(n), inf_path(n);

    for (int i = 0; i < n; ++i) {
        g += config.vol_mean_reversion * (log_level - g) +
             config.vol_of_vol *
                 (vol_rng.normal() +
                  config.vol_leverage *
                      (std::max(0.0, prev_shock) - kMeanHalfNormal));
        const double sigma = std::exp(g);
        vols[i] = sigma;

        if (config.emit_features) {
            // Mean-reverting macro decoys: a pure random walk would
            // spuriously regress against any slow-moving target in a short
            // training window and then drift out of range at test time.
            interest += 0.02 * (0.05 - interest) + 0.0005 * ir_rng.normal();
            inflation_v +=
                0.02 * (0.04 - inflation_v) + 0.0005 * inf_rng.normal();
            ir_path[i] = interest;
            inf_path[i] = inflation_v;
            news[i] = news_rng.normal();
        }

        const double eps = ret_rng.normal();
        double r_core = sigma * eps;
        if (config.emit_features)
            r_core += config.insider_impact * config.vol_level * news[i];
        double r = r_core;
        if (jump_u[i] < jump_prob) {
            const double sign = r_core >= 0.0 ? 1.0 : -1.0;
            r += sign * jump_size[i]; // amplifies |r|, never shrinks it
        }
        returns[i] = r;
        price *= std::exp(r);
        prices[i + 1] = price;
        prev_shock = -r_core / sigma;
    }

    std::vector<std::string> feature_names;
    if (config.emit_features)
        feature_names = {"interest_rate", "inflation", "insider_news"};

    std::vector<MarketBar> bars(n);
    for (int i = 0; i < n; ++i) {
        MarketBar& bar = bars[i];
        bar.timestamp = kStartTimestamp + static_cast<std::int64_t>(i) * kBarSeconds;
        bar.price = prices[i];

        const double next = prices[i + 1];
        double distorted =
            next + config.nmp_bias_const + config.nmp_bias_prop * next;
        if (config.emit_features)
            distorted += config.nmp_bias_state * config.vol_level *
                         std::tanh(news[i]) * next;
        bar.nmp_price = distorted * std::exp(config.nmp_noise_scale *
                                             config.vol_level *
                                             nmp_rng.normal());

        // Volume tracks the volatility state (liquidity rises with turmoil)
        // plus the bar's own absolute move, so it carries real information
        // about current volatility the way externally predicted volumes do.
        const double vol_state = std::log(vols[i]) - log_level;
        bar.volume =
            config.volume_base *
            std::exp(config.volume_coupling *
                         (vol_state + 0.5 * std::abs(returns[i]) / vols[i]) +
                     config.volume_noise * volume_rng.normal());
        if (config.emit_features)
            bar.features = {ir_path[i], inf_path[i], news[i]};
    }

    SynthResult result;
    result.series = MarketSeries(std::move(bars), std::move(feature_names),
                                 /*has_volume=*/true, /*has_nmp=*/true);
    result.series.validate();
    result.true_vol = std::move(vols);
    return result;
}

void write_truth_csv(const SynthResult& result, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write '" + path + "'");
    out << "timestamp,true_vol\n";
    for (std::size_t i = 0; i < result.series.size(); ++i)
        out << format_iso8601_utc(result.series.bars()[i].timestamp) << ','
            << format_double(result.true_vol[i]) << '\n';
    if (!out) throw DataError("failed writing '" + path + "'");
}

} // namespace volcast
