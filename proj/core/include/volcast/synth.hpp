#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "volcast/market_data.hpp"

namespace volcast {

/// Seeded synthetic market configuration. Prices follow a positive
/// multiplicative process driven by a mean-reverting log-volatility state
/// plus Poisson-timed jumps; the NMP column carries a distorted view of the
/// next bar's price; volume couples positively to absolute returns.
struct SynthConfig {
    std::uint64_t seed = 0;
    int days = 250;
    int bars_per_day = 48;      // 30-minute bars over 24 hours
    double base_price = 100.0;

    // Log-volatility state: g ← g + mean_reversion·(ln level − g)
    //     + vol_of_vol·(ε + leverage·(centered down-shock of previous bar)),
    // so vol_of_vol 0 freezes the state at the configured level exactly.
    double vol_level = 0.002;       // per-bar return standard deviation
    double vol_mean_reversion = 0.10;
    double vol_of_vol = 0.18;
    double vol_leverage = 0.25;     // asymmetric share of the vol response

    double jump_intensity = 0.5; // expected jumps per day
    double jump_scale = 0.01;    // jump size standard deviation (log units)

    // nmp = next price · (1 + prop bias + state bias·vol_level·tanh(news))
    //       + const bias, all · exp(noise_scale · vol_level · η).
    // The state term models an external forecaster whose error depends on
    // observable conditions (here the news score): it overshoots after good
    // news and undershoots after bad. Zero when features are disabled.
    double nmp_bias_const = 0.5;
    double nmp_bias_prop = 0.002;
    double nmp_bias_state = 2.5; // in vol_level units of relative distortion
    double nmp_noise_scale = 0.25;

    // volume = base · exp(coupling·(vol state + ½|return|/σ) + noise·η):
    // liquidity tracks the volatility state and the bar's own move.
    double volume_base = 1e5;
    double volume_coupling = 1.0;
    double volume_noise = 0.3;

    bool emit_features = true;    // interest_rate, inflation, insider_news
    double insider_impact = 0.5;  // drift from insider_news, in vol_level units

    void validate() const; // throws UsageError on out-of-range values
};

/// Elevated-jump stress preset (frequent large jumps, livelier volatility).
SynthConfig shock_preset(std::uint64_t seed);

struct SynthResult {
    MarketSeries series;           // nmp_price filled for every bar
    std::vector<double> true_vol;  // latent per-bar volatility, one per bar
};

/// Fully deterministic per seed; independent RNG streams per component so
/// changing one scale (e.g. jump intensity) leaves the others' draws intact.
SynthResult generate(const SynthConfig& config);

/// timestamp,true_vol rows matching the generated series.
void write_truth_csv(const SynthResult& result, const std::string& path);

} // namespace volcast
