#include "volcast/config.hpp"

#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <type_traits>

#include "volcast/errors.hpp"

namespace volcast {

namespace {

std::string trim(const std::string& s) {
    std::size_t b = 0;
    std::size_t e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
    T out{};
    const char* first = value.data();
    const char* last = value.data() + value.size();
    const auto [ptr, ec] = std::from_chars(first, last, out);
    if (ec != std::errc{} || ptr != last)
        throw UsageError("config: key '" + key + "': cannot parse '" + value +
                         "'");
    if constexpr (std::is_floating_point_v<T>)
        if (!std::isfinite(out))
            throw UsageError("config: key '" + key + "': value must be finite");
    return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
    if (value == "true" || value == "1" || value == "yes" || value == "on")
        return true;
    if (value == "false" || value == "0" || value == "no" || value == "off")
        return false;
    throw UsageError("config: key '" + key + "': cannot parse '" + value +
                     "' as a boolean");
}

std::string fmt_double(double v) {
    char buf[64];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, ptr);
}

std::string fmt_bool(bool v) { return v ? "true" : "false"; }

std::vector<std::string> split_list(const std::string& key,
                                    const std::string& value) {
    std::vector<std::string> out;
    std::string item;
    std::istringstream in(value);
    while (std::getline(in, item, ',')) {
        item = trim(item);
        if (item.empty())
            throw UsageError("config: key '" + key + "': empty list item");
        out.push_back(item);
    }
    if (out.empty())
        throw UsageError("config: key '" + key + "': empty list");
    return out;
}

// Shared mlp.* keys set both stages; hidden sizes stay per-stage.
bool apply_mlp_key(PipelineConfig& config, const std::string& key,
                   const std::string& value) {
    if (key == "mlp.hidden1") {
        config.mlp_stage1.hidden = parse_number<int>(key, value);
    } else if (key == "mlp.hidden2") {
        config.mlp_stage2.hidden = parse_number<int>(key, value);
    } else if (key == "mlp.max_epochs") {
        config.mlp_stage1.max_epochs = parse_number<int>(key, value);
        config.mlp_stage2.max_epochs = config.mlp_stage1.max_epochs;
    } else if (key == "mlp.learning_rate") {
        config.mlp_stage1.learning_rate = parse_number<double>(key, value);
        config.mlp_stage2.learning_rate = config.mlp_stage1.learning_rate;
    } else if (key == "mlp.momentum") {
        config.mlp_stage1.momentum = parse_number<double>(key, value);
        config.mlp_stage2.momentum = config.mlp_stage1.momentum;
    } else if (key == "mlp.patience") {
        config.mlp_stage1.patience = parse_number<int>(key, value);
        config.mlp_stage2.patience = config.mlp_stage1.patience;
    } else if (key == "mlp.validation_fraction") {
        config.mlp_stage1.validation_fraction =
            parse_number<double>(key, value);
        config.mlp_stage2.validation_fraction =
            config.mlp_stage1.validation_fraction;
    } else {
        return false;
    }
    return true;
}

bool apply_pipeline_key(PipelineConfig& config, const std::string& key,
                        const std::string& value) {
    if (key == "variant") {
        config.variant = variant_from_name(value);
    } else if (key == "target") {
        config.target = target_from_name(value);
    } else if (key == "ard_threshold") {
        config.ard_threshold = parse_number<double>(key, value);
    } else if (key == "high_price_quantile") {
        config.high_price_quantile = parse_number<double>(key, value);
    } else if (key == "use_high_price_split") {
        config.use_high_price_split = parse_bool(key, value);
    } else if (key == "s_upper") {
        if (value.empty())
            config.s_upper.reset();
        else
            config.s_upper = parse_number<double>(key, value);
    } else if (key == "horizon_bars") {
        config.horizon_bars = parse_number<int>(key, value);
    } else if (key == "short_horizon_bars") {
        config.short_horizon_bars = parse_number<int>(key, value);
    } else if (key == "seed") {
        config.seed = parse_number<std::uint64_t>(key, value);
    } else if (key == "vol_window") {
        config.vol_window = parse_number<int>(key, value);
    } else if (key == "max_train_bars") {
        config.max_train_bars = parse_number<int>(key, value);
    } else if (key == "gp_restarts") {
        config.gp_restarts = parse_number<int>(key, value);
    } else if (key == "gp_max_iter") {
        config.gp_max_iter = parse_number<int>(key, value);
    } else if (key == "augment_lags") {
        config.augment_lags = parse_number<int>(key, value);
    } else if (key == "use_augmentation") {
        config.use_augmentation = parse_bool(key, value);
    } else {
        return apply_mlp_key(config, key, value);
    }
    return true;
}

} // namespace

ConfigMap load_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open '" + path + "'");
    ConfigMap map;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        const std::size_t eq = t.find('=');
        if (eq == std::string::npos)
            throw DataError("'" + path + "' line " + std::to_string(lineno) +
                            ": expected key=value");
        const std::string key = trim(t.substr(0, eq));
        if (key.empty())
            throw DataError("'" + path + "' line " + std::to_string(lineno) +
                            ": empty key");
        map[key] = trim(t.substr(eq + 1));
    }
    return map;
}

std::string render_config(const ConfigMap& map) {
    std::string out;
    for (const auto& [key, value] : map) out += key + "=" + value + "\n";
    return out;
}

bool config_bool(const ConfigMap& map, const std::string& key, bool fallback) {
    const auto it = map.find(key);
    return it == map.end() ? fallback : parse_bool(key, it->second);
}

int config_int(const ConfigMap& map, const std::string& key, int fallback) {
    const auto it = map.find(key);
    return it == map.end() ? fallback : parse_number<int>(key, it->second);
}

double config_double(const ConfigMap& map, const std::string& key,
                     double fallback) {
    const auto it = map.find(key);
    return it == map.end() ? fallback : parse_number<double>(key, it->second);
}

std::uint64_t config_u64(const ConfigMap& map, const std::string& key,
                         std::uint64_t fallback) {
    const auto it = map.find(key);
    return it == map.end() ? fallback
                           : parse_number<std::uint64_t>(key, it->second);
}

std::string config_str(const ConfigMap& map, const std::string& key,
                       const std::string& fallback) {
    const auto it = map.find(key);
    return it == map.end() ? fallback : it->second;
}

void apply_pipeline_config(PipelineConfig& config, const ConfigMap& map) {
    for (const auto& [key, value] : map)
        if (!apply_pipeline_key(config, key, value))
            throw UsageError("config: unknown key '" + key + "'");
}

void apply_backtest_config(BacktestConfig& config, const ConfigMap& map) {
    for (const auto& [key, value] : map) {
        if (key == "variants") {
            config.variants.clear();
            for (const auto& name : split_list(key, value))
                config.variants.push_back(variant_from_name(name));
        } else if (key == "targets") {
            config.targets.clear();
            for (const auto& name : split_list(key, value))
                config.targets.push_back(target_from_name(name));
        } else if (key == "train_fraction") {
            config.train_fraction = parse_number<double>(key, value);
        } else if (key == "train_end") {
            if (value.empty())
                config.train_end.reset();
            else
                config.train_end = parse_number<std::int64_t>(key, value);
        } else if (key == "knn_k") {
            config.knn_k = parse_number<int>(key, value);
        } else if (key == "refit_every") {
            config.refit_every = parse_number<int>(key, value);
        } else if (!apply_pipeline_key(config.pipeline, key, value)) {
            throw UsageError("config: unknown key '" + key + "'");
        }
    }
}

void apply_synth_config(SynthConfig& config, const ConfigMap& map) {
    // The preset resolves first so explicit keys can refine it regardless of
    // their order in the file.
    if (const auto preset = map.find("preset"); preset != map.end()) {
        const std::uint64_t seed = config_u64(map, "seed", config.seed);
        if (preset->second == "shock")
            config = shock_preset(seed);
        else if (preset->second != "default")
            throw UsageError("config: unknown preset '" + preset->second +
                             "'");
    }
    for (const auto& [key, value] : map) {
        if (key == "preset") {
            continue;
        } else if (key == "seed") {
            config.seed = parse_number<std::uint64_t>(key, value);
        } else if (key == "days") {
            config.days = parse_number<int>(key, value);
        } else if (key == "bars_per_day") {
            config.bars_per_day = parse_number<int>(key, value);
        } else if (key == "base_price") {
            config.base_price = parse_number<double>(key, value);
        } else if (key == "vol_level") {
            config.vol_level = parse_number<double>(key, value);
        } else if (key == "vol_mean_reversion") {
            config.vol_mean_reversion = parse_number<double>(key, value);
        } else if (key == "vol_of_vol") {
            config.vol_of_vol = parse_number<double>(key, value);
        } else if (key == "vol_leverage") {
            config.vol_leverage = parse_number<double>(key, value);
        } else if (key == "jump_intensity") {
            config.jump_intensity = parse_number<double>(key, value);
        } else if (key == "jump_scale") {
            config.jump_scale = parse_number<double>(key, value);
        } else if (key == "nmp_bias_const") {
            config.nmp_bias_const = parse_number<double>(key, value);
        } else if (key == "nmp_bias_prop") {
            config.nmp_bias_prop = parse_number<double>(key, value);
        } else if (key == "nmp_bias_state") {
            config.nmp_bias_state = parse_number<double>(key, value);
        } else if (key == "nmp_noise_scale") {
            config.nmp_noise_scale = parse_number<double>(key, value);
        } else if (key == "volume_base") {
            config.volume_base = parse_number<double>(key, value);
        } else if (key == "volume_coupling") {
            config.volume_coupling = parse_number<double>(key, value);
        } else if (key == "volume_noise") {
            config.volume_noise = parse_number<double>(key, value);
        } else if (key == "emit_features") {
            config.emit_features = parse_bool(key, value);
        } else if (key == "insider_impact") {
            config.insider_impact = parse_number<double>(key, value);
        } else {
            throw UsageError("config: unknown key '" + key + "'");
        }
    }
}

ConfigMap snapshot_pipeline(const PipelineConfig& config) {
    ConfigMap map;
    map["variant"] = variant_name(config.variant);
    map["target"] = target_name(config.target);
    map["ard_threshold"] = fmt_double(config.ard_threshold);
    map["high_price_quantile"] = fmt_double(config.high_price_quantile);
    map["use_high_price_split"] = fmt_bool(config.use_high_price_split);
    map["s_upper"] = config.s_upper ? fmt_double(*config.s_upper) : "";
    map["horizon_bars"] = std::to_string(config.horizon_bars);
    map["short_horizon_bars"] = std::to_string(config.short_horizon_bars);
    map["seed"] = std::to_string(config.seed);
    map["vol_window"] = std::to_string(config.vol_window);
    map["max_train_bars"] = std::to_string(config.max_train_bars);
    map["gp_restarts"] = std::to_string(config.gp_restarts);
    map["gp_max_iter"] = std::to_string(config.gp_max_iter);
    map["augment_lags"] = std::to_string(config.augment_lags);
    map["use_augmentation"] = fmt_bool(config.use_augmentation);
    map["mlp.hidden1"] = std::to_string(config.mlp_stage1.hidden);
    map["mlp.hidden2"] = std::to_string(config.mlp_stage2.hidden);
    map["mlp.max_epochs"] = std::to_string(config.mlp_stage1.max_epochs);
    map["mlp.learning_rate"] = fmt_double(config.mlp_stage1.learning_rate);
    map["mlp.momentum"] = fmt_double(config.mlp_stage1.momentum);
    map["mlp.patience"] = std::to_string(config.mlp_stage1.patience);
    map["mlp.validation_fraction"] =
        fmt_double(config.mlp_stage1.validation_fraction);
    return map;
}

ConfigMap snapshot_backtest(const BacktestConfig& config) {
    ConfigMap map = snapshot_pipeline(config.pipeline);
    std::string variants;
    for (const Variant v : config.variants) {
        if (!variants.empty()) variants += ",";
        variants += variant_name(v);
    }
    std::string targets;
    for (const TargetKind t : config.targets) {
        if (!targets.empty()) targets += ",";
        targets += target_name(t);
    }
    map["variants"] = variants;
    map["targets"] = targets;
    map["train_fraction"] = fmt_double(config.train_fraction);
    map["train_end"] =
        config.train_end ? std::to_string(*config.train_end) : "";
    map["knn_k"] = std::to_string(config.knn_k);
    map["refit_every"] = std::to_string(config.refit_every);
    return map;
}

ConfigMap snapshot_synth(const SynthConfig& config) {
    ConfigMap map;
    map["seed"] = std::to_string(config.seed);
    map["days"] = std::to_string(config.days);
    map["bars_per_day"] = std::to_string(config.bars_per_day);
    map["base_price"] = fmt_double(config.base_price);
    map["vol_level"] = fmt_double(config.vol_level);
    map["vol_mean_reversion"] = fmt_double(config.vol_mean_reversion);
    map["vol_of_vol"] = fmt_double(config.vol_of_vol);
    map["vol_leverage"] = fmt_double(config.vol_leverage);
    map["jump_intensity"] = fmt_double(config.jump_intensity);
    map["jump_scale"] = fmt_double(config.jump_scale);
    map["nmp_bias_const"] = fmt_double(config.nmp_bias_const);
    map["nmp_bias_prop"] = fmt_double(config.nmp_bias_prop);
    map["nmp_bias_state"] = fmt_double(config.nmp_bias_state);
    map["nmp_noise_scale"] = fmt_double(config.nmp_noise_scale);
    map["volume_base"] = fmt_double(config.volume_base);
    map["volume_coupling"] = fmt_double(config.volume_coupling);
    map["volume_noise"] = fmt_double(config.volume_noise);
    map["emit_features"] = fmt_bool(config.emit_features);
    map["insider_impact"] = fmt_double(config.insider_impact);
    return map;
}

} // namespace volcast
