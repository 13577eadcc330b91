#include <cctype>
#include <charconv>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "nlohmann/json.hpp"
#include "volcast/backtest.hpp"
#include "volcast/config.hpp"
#include "volcast/errors.hpp"
#include "volcast/market_data.hpp"
#include "volcast/metrics.hpp"
#include "volcast/pipeline.hpp"
#include "volcast/synth.hpp"
#include "volcast/time.hpp"

namespace {

using nlohmann::json;

std::string fixed(double v, int prec) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", prec, v);
    return buf;
}

std::string shortest(double v) {
    char buf[64];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, ptr);
}

std::string hash_hex(std::uint64_t h) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "0x%016llx",
                  static_cast<unsigned long long>(h));
    return buf;
}

std::string join(const std::vector<std::string>& parts) {
    std::string out;
    for (const auto& p : parts) {
        if (!out.empty()) out += ", ";
        out += p;
    }
    return out;
}

void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw volcast::DataError("cannot write '" + path + "'");
    out << text;
    if (!out) throw volcast::DataError("failed writing '" + path + "'");
}

// Flags mirror config keys; a flag given on the command line overrides the
// same key from --config.
struct KeyFlag {
    std::string key;
    std::string value;
    CLI::Option* opt = nullptr;
};

struct OverrideSet {
    std::vector<std::unique_ptr<KeyFlag>> flags;

    void add(CLI::App* cmd, const std::string& flag, const std::string& key,
             const std::string& help) {
        auto kf = std::make_unique<KeyFlag>();
        kf->key = key;
        kf->opt = cmd->add_option(flag, kf->value, help);
        flags.push_back(std::move(kf));
    }

    void add_toggle(CLI::App* cmd, const std::string& flag,
                    const std::string& key, const std::string& set_to,
                    const std::string& help) {
        auto kf = std::make_unique<KeyFlag>();
        kf->key = key;
        kf->value = set_to;
        kf->opt = cmd->add_flag(flag, help);
        flags.push_back(std::move(kf));
    }

    void collect(volcast::ConfigMap& into) const {
        for (const auto& kf : flags)
            if (kf->opt->count() > 0) into[kf->key] = kf->value;
    }
};

volcast::ConfigMap merged_config(const std::string& config_path,
                                 const OverrideSet& overrides) {
    volcast::ConfigMap map;
    if (!config_path.empty()) map = volcast::load_config_file(config_path);
    overrides.collect(map);
    return map;
}

volcast::MarketSeries load_imputed(const std::string& path, int knn_k) {
    volcast::MarketSeries series = volcast::load_csv(path);
    if (series.missing_fraction() > 0.0)
        series = volcast::impute_knn(series, knn_k);
    return series;
}

// ---------------------------------------------------------------- simulate

struct SimulateOpts {
    std::string out;
    std::string truth;
    std::string config;
    bool json = false;
    OverrideSet over;
};

void cmd_simulate(const SimulateOpts& o) {
    volcast::SynthConfig cfg;
    volcast::apply_synth_config(cfg, merged_config(o.config, o.over));
    cfg.validate();
    const volcast::SynthResult result = volcast::generate(cfg);
    volcast::write_csv(result.series, o.out);

    std::string truth = o.truth;
    if (truth.empty()) {
        truth = o.out;
        if (truth.size() > 4 && truth.substr(truth.size() - 4) == ".csv")
            truth.erase(truth.size() - 4);
        truth += "_truth.csv";
    }
    volcast::write_truth_csv(result, truth);

    double lo = 0.0;
    double hi = 0.0;
    bool first = true;
    for (const auto& bar : result.series.bars()) {
        if (!bar.price) continue;
        if (first || *bar.price < lo) lo = *bar.price;
        if (first || *bar.price > hi) hi = *bar.price;
        first = false;
    }

    if (o.json) {
        json j{{"bars", result.series.size()},
               {"out", o.out},
               {"truth", truth},
               {"price_min", lo},
               {"price_max", hi},
               {"seed", cfg.seed}};
        std::cout << j.dump(2) << "\n";
        return;
    }
    std::cout << "wrote " << result.series.size() << " bars to " << o.out
              << "\n";
    std::cout << "truth: " << truth << "\n";
    std::cout << "price range: [" << shortest(lo) << ", " << shortest(hi)
              << "]\n";
    std::cout << "seed: " << cfg.seed << "\n";
}

// --------------------------------------------------------------------- fit

struct FitOpts {
    std::string data;
    std::string model;
    std::string config;
    int knn_k = 5;
    bool json = false;
    OverrideSet over;
};

void add_pipeline_flags(CLI::App* cmd, OverrideSet& over) {
    over.add(cmd, "--variant", "variant",
             "gp_direct | gp_cprice | persistence | mlp_cprice");
    over.add(cmd, "--target", "target", "returns | volatility");
    over.add(cmd, "--seed", "seed", "seed for every stochastic fit step");
    over.add(cmd, "--s-upper", "s_upper",
             "upper censoring bound in target units");
    over.add(cmd, "--horizon-bars", "horizon_bars", "forecast window length");
    over.add(cmd, "--short-horizon-bars", "short_horizon_bars",
             "short-bucket cutoff in bars");
    over.add(cmd, "--vol-window", "vol_window",
             "realized-volatility window (bars)");
    over.add(cmd, "--max-train-bars", "max_train_bars",
             "most recent rows used by the model fits");
    over.add(cmd, "--gp-restarts", "gp_restarts",
             "restarts per hyperparameter fit");
    over.add(cmd, "--gp-max-iter", "gp_max_iter",
             "optimizer iterations per restart");
    over.add(cmd, "--ard-threshold", "ard_threshold",
             "relevance share required to keep an input");
    over.add_toggle(cmd, "--use-split", "use_high_price_split", "true",
                    "enable the high-price regime split");
    over.add(cmd, "--high-price-quantile", "high_price_quantile",
             "quantile defining the high-price regime");
    over.add(cmd, "--augment-lags", "augment_lags",
             "observed-target lags for the augmented stage");
    over.add_toggle(cmd, "--no-augmentation", "use_augmentation", "false",
                    "skip the augmented short-horizon stage");
}

void cmd_fit(const FitOpts& o) {
    volcast::PipelineConfig cfg;
    volcast::apply_pipeline_config(cfg, merged_config(o.config, o.over));
    const volcast::MarketSeries series = load_imputed(o.data, o.knn_k);
    const volcast::FittedPipeline pipeline =
        volcast::build_pipeline(series, cfg);
    volcast::save_pipeline(pipeline, o.model);

    if (o.json) {
        json j{{"variant", volcast::variant_name(pipeline.variant)},
               {"target", volcast::target_name(pipeline.target)},
               {"train_bars", series.size()},
               {"stage1_inputs", pipeline.stage1_inputs},
               {"stage2_inputs", pipeline.stage2_inputs},
               {"split_enabled", pipeline.split_enabled},
               {"warnings", pipeline.warnings},
               {"model", o.model}};
        if (pipeline.split_enabled)
            j["split_threshold"] = pipeline.split_threshold;
        std::cout << j.dump(2) << "\n";
        return;
    }
    std::cout << "fitted " << volcast::variant_name(pipeline.variant) << " ("
              << volcast::target_name(pipeline.target) << ") on "
              << series.size() << " bars\n";
    if (!pipeline.stage1_inputs.empty())
        std::cout << "stage1 inputs: " << join(pipeline.stage1_inputs) << "\n";
    if (!pipeline.stage2_inputs.empty())
        std::cout << "stage2 inputs: " << join(pipeline.stage2_inputs) << "\n";
    std::cout << "high_price_split: "
              << (pipeline.split_enabled
                      ? "threshold=" + shortest(pipeline.split_threshold)
                      : std::string("off"))
              << "\n";
    for (const auto& w : pipeline.warnings)
        std::cout << "warning: " << w << "\n";
    std::cout << "model: " << o.model << "\n";
}

// ---------------------------------------------------------------- forecast

struct ForecastOpts {
    std::string model;
    std::string data;
    std::string out;
    int horizon = 0; // 0 = the model's configured horizon
    int knn_k = 5;
    bool json = false;
    bool no_aug = false;
};

void cmd_forecast(const ForecastOpts& o) {
    const volcast::FittedPipeline pipeline = volcast::load_pipeline(o.model);
    const std::uint64_t hash = volcast::fnv1a_file(o.data);
    const volcast::MarketSeries series = load_imputed(o.data, o.knn_k);
    const int horizon =
        o.horizon > 0 ? o.horizon : pipeline.config.horizon_bars;
    const volcast::ForecastReport rep =
        volcast::forecast(pipeline, series, horizon, !o.no_aug);

    const volcast::ConfigMap snapshot =
        volcast::snapshot_pipeline(pipeline.config);

    if (!o.out.empty()) {
        std::string csv;
        csv += "# volcast forecast report\n";
        csv += "# data_hash: " + hash_hex(hash) + "\n";
        std::istringstream cfg_lines(volcast::render_config(snapshot));
        for (std::string line; std::getline(cfg_lines, line);)
            csv += "# " + line + "\n";
        csv += "step,timestamp,mean,stddev,lower,upper,floored,"
               "used_augmentation,routed_high\n";
        for (const auto& st : rep.steps) {
            const double half = 1.96 * st.stddev;
            csv += std::to_string(st.step) + "," +
                   volcast::format_iso8601_utc(st.timestamp) + "," +
                   shortest(st.mean) + "," + shortest(st.stddev) + "," +
                   shortest(st.mean - half) + "," + shortest(st.mean + half) +
                   "," + (st.floored ? "1" : "0") + "," +
                   (st.used_augmentation ? "1" : "0") + "," +
                   (st.routed_high ? "1" : "0") + "\n";
        }
        write_text_file(o.out, csv);
    }

    if (o.json) {
        json j{{"variant", volcast::variant_name(pipeline.variant)},
               {"target", volcast::target_name(rep.target)},
               {"horizon_bars", horizon},
               {"data_hash", hash_hex(hash)},
               {"config", json(snapshot)},
               {"warnings", rep.warnings}};
        j["steps"] = json::array();
        for (const auto& st : rep.steps)
            j["steps"].push_back(
                {{"step", st.step},
                 {"timestamp", volcast::format_iso8601_utc(st.timestamp)},
                 {"mean", st.mean},
                 {"stddev", st.stddev},
                 {"floored", st.floored},
                 {"used_augmentation", st.used_augmentation},
                 {"routed_high", st.routed_high}});
        std::cout << j.dump(2) << "\n";
        return;
    }

    std::cout << "forecast (" << volcast::target_name(rep.target) << ", "
              << volcast::variant_name(pipeline.variant) << ", horizon "
              << horizon << " bars)\n";
    std::cout << "data_hash: " << hash_hex(hash) << "\n";
    std::cout << "step  timestamp             mean          stddev        "
                 "flags\n";
    for (const auto& st : rep.steps) {
        std::string flags;
        if (st.floored) flags += "floored ";
        if (st.used_augmentation) flags += "aug ";
        if (st.routed_high) flags += "high ";
        char line[160];
        std::snprintf(line, sizeof line, "%-5d %-21s %-13.6g %-13.6g %s\n",
                      st.step,
                      volcast::format_iso8601_utc(st.timestamp).c_str(),
                      st.mean, st.stddev, flags.c_str());
        std::cout << line;
    }
    for (const auto& w : rep.warnings) std::cout << "warning: " << w << "\n";
    if (!o.out.empty()) std::cout << "report: " << o.out << "\n";
}

// ---------------------------------------------------------------- backtest

struct BacktestOpts {
    std::string data;
    std::string config;
    std::string out;
    std::string json_out;
    bool json = false;
    OverrideSet over;
};

void cmd_backtest(const BacktestOpts& o) {
    volcast::BacktestConfig cfg;
    volcast::apply_backtest_config(cfg, merged_config(o.config, o.over));
    const std::uint64_t hash = volcast::fnv1a_file(o.data);
    const volcast::MarketSeries series = volcast::load_csv(o.data);
    const volcast::BacktestRun run = volcast::run_backtest(series, cfg, hash);

    if (o.json)
        std::cout << volcast::backtest_json(run);
    else
        std::cout << volcast::render_backtest(run);
    if (!o.out.empty()) write_text_file(o.out, volcast::render_backtest(run));
    if (!o.json_out.empty())
        write_text_file(o.json_out, volcast::backtest_json(run));

    // Timings go to stderr only: report files stay byte-identical across
    // reruns of the same data and config.
    std::cerr << "timings (s):\n";
    for (const auto& r : run.results)
        std::cerr << "  " << volcast::variant_name(r.variant) << " "
                  << volcast::target_name(r.target) << ": "
                  << fixed(r.wall_seconds, 2) << "\n";
    std::cerr << "  total: " << fixed(run.wall_seconds, 2) << "\n";
}

// ----------------------------------------------------------------- metrics

struct MetricsOpts {
    std::string actual;
    std::string forecast;
    bool json = false;
};

struct ValueFile {
    std::vector<double> values;
    std::vector<std::string> notes;
};

ValueFile read_value_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw volcast::DataError("cannot open '" + path + "'");
    ValueFile out;
    std::string line;
    std::size_t lineno = 0;
    bool header_allowed = true;
    while (std::getline(in, line)) {
        ++lineno;
        while (!line.empty() && (line.back() == '\r' || line.back() == '\n'))
            line.pop_back();
        std::size_t b = 0;
        std::size_t e = line.size();
        while (b < e && std::isspace(static_cast<unsigned char>(line[b]))) ++b;
        while (e > b && std::isspace(static_cast<unsigned char>(line[e - 1])))
            --e;
        const std::string t = line.substr(b, e - b);
        if (t.empty()) continue;
        if (t[0] == '#') {
            std::size_t s = 1;
            while (s < t.size() &&
                   std::isspace(static_cast<unsigned char>(t[s])))
                ++s;
            out.notes.push_back(t.substr(s));
            continue;
        }
        double v = 0.0;
        const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
        if (ec == std::errc{} && ptr == t.data() + t.size()) {
            out.values.push_back(v);
            header_allowed = false;
            continue;
        }
        if (header_allowed) { // a single column-name header line
            header_allowed = false;
            continue;
        }
        throw volcast::DataError("'" + path + "' line " +
                                 std::to_string(lineno) +
                                 ": cannot parse '" + t + "' as a number");
    }
    if (out.values.empty())
        throw volcast::DataError("'" + path + "': no values");
    return out;
}

void cmd_metrics(const MetricsOpts& o) {
    const ValueFile actual = read_value_file(o.actual);
    const ValueFile forecast = read_value_file(o.forecast);
    if (actual.values.size() != forecast.values.size())
        throw volcast::DataError(
            "metrics: row count mismatch (" +
            std::to_string(actual.values.size()) + " actuals vs " +
            std::to_string(forecast.values.size()) + " forecasts)");

    // Rows are independent forecast instances: a single bucket.
    const std::vector<int> steps(actual.values.size(), 1);
    const volcast::EvalReport report =
        volcast::make_report(actual.values, forecast.values, steps, 1);

    std::vector<std::string> notes = actual.notes;
    for (const auto& n : forecast.notes) notes.push_back(n);

    if (o.json) {
        json j{{"rows", report.full.count},
               {"rmse", report.full.rmse},
               {"mae", report.full.mae},
               {"mae_percent", fixed(report.full.mae * 100.0, 2)},
               {"nmape", report.full.nmape},
               {"normalizer", report.normalizer_used},
               {"normalizer_fallback", report.normalizer_fallback},
               {"accuracy_pass", report.accuracy_pass},
               {"notes", notes}};
        std::cout << j.dump(2) << "\n";
        return;
    }
    std::cout << "rows: " << report.full.count << "\n";
    std::cout << "rmse: " << fixed(report.full.rmse, 6) << "\n";
    std::cout << "mae: " << fixed(report.full.mae, 6) << " ("
              << fixed(report.full.mae * 100.0, 2) << "%)\n";
    std::cout << "nmape: " << fixed(report.full.nmape, 6) << "%\n";
    std::cout << "normalizer: " << shortest(report.normalizer_used)
              << (report.normalizer_fallback ? " (fallback: all actuals zero)"
                                             : "")
              << "\n";
    std::cout << "accuracy_gate (nmape <= 10%): "
              << (report.accuracy_pass ? "PASS" : "FAIL") << "\n";
    for (const auto& n : notes) std::cout << "note: " << n << "\n";
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"volcast: short-term market volatility and return "
                 "forecasting toolkit"};
    app.require_subcommand(1);

    auto sim = std::make_shared<SimulateOpts>();
    CLI::App* sim_cmd =
        app.add_subcommand("simulate", "generate a synthetic market CSV");
    sim_cmd->add_option("--out", sim->out, "output data CSV")->required();
    sim_cmd->add_option("--truth", sim->truth,
                        "latent-volatility CSV (default: <out>_truth.csv)");
    sim_cmd->add_option("--config", sim->config, "config file (key=value)");
    sim_cmd->add_flag("--json", sim->json, "print the summary as JSON");
    sim->over.add(sim_cmd, "--seed", "seed", "generator seed");
    sim->over.add(sim_cmd, "--days", "days", "trading days to generate");
    sim->over.add(sim_cmd, "--bars-per-day", "bars_per_day", "bars per day");
    sim->over.add(sim_cmd, "--base-price", "base_price", "starting price");
    sim->over.add(sim_cmd, "--vol-level", "vol_level",
                  "stationary per-bar volatility");
    sim->over.add(sim_cmd, "--jump-intensity", "jump_intensity",
                  "expected jumps per day");
    sim->over.add(sim_cmd, "--jump-scale", "jump_scale",
                  "jump size scale (log units)");
    sim->over.add(sim_cmd, "--preset", "preset", "default | shock");
    sim_cmd->callback([sim] { cmd_simulate(*sim); });

    auto fit = std::make_shared<FitOpts>();
    CLI::App* fit_cmd =
        app.add_subcommand("fit", "train a forecasting pipeline");
    fit_cmd->add_option("--data", fit->data, "training data CSV")->required();
    fit_cmd->add_option("--model", fit->model, "output model file")
        ->required();
    fit_cmd->add_option("--config", fit->config, "config file (key=value)");
    fit_cmd->add_option("--knn-k", fit->knn_k,
                        "imputation neighbours (default 5)");
    fit_cmd->add_flag("--json", fit->json, "print the summary as JSON");
    add_pipeline_flags(fit_cmd, fit->over);
    fit_cmd->callback([fit] { cmd_fit(*fit); });

    auto fc = std::make_shared<ForecastOpts>();
    CLI::App* fc_cmd = app.add_subcommand(
        "forecast", "forecast the final bars of a series from a fitted model");
    fc_cmd->add_option("--model", fc->model, "fitted model file")->required();
    fc_cmd->add_option("--data", fc->data,
                       "data CSV; the last horizon bars are the future "
                       "window")
        ->required();
    fc_cmd->add_option("--horizon", fc->horizon,
                       "bars to forecast (default: model horizon)");
    fc_cmd->add_option("--out", fc->out, "write the per-step report CSV here");
    fc_cmd->add_option("--knn-k", fc->knn_k,
                       "imputation neighbours (default 5)");
    fc_cmd->add_flag("--no-augmentation", fc->no_aug,
                     "ignore the augmented short-horizon stage");
    fc_cmd->add_flag("--json", fc->json, "print the report as JSON");
    fc_cmd->callback([fc] { cmd_forecast(*fc); });

    auto bt = std::make_shared<BacktestOpts>();
    CLI::App* bt_cmd = app.add_subcommand(
        "backtest", "train/test comparison of forecasting variants");
    bt_cmd->add_option("--data", bt->data, "data CSV")->required();
    bt_cmd->add_option("--config", bt->config, "config file (key=value)");
    bt_cmd->add_option("--out", bt->out, "write the text report here");
    bt_cmd->add_option("--json-out", bt->json_out,
                       "write the JSON report here");
    bt_cmd->add_flag("--json", bt->json, "print JSON instead of text");
    add_pipeline_flags(bt_cmd, bt->over);
    bt->over.add(bt_cmd, "--variants", "variants",
                 "comma list of variants to run");
    bt->over.add(bt_cmd, "--targets", "targets",
                 "comma list of targets to run");
    bt->over.add(bt_cmd, "--train-fraction", "train_fraction",
                 "fraction of bars used for training");
    bt->over.add(bt_cmd, "--train-end", "train_end",
                 "last training timestamp (epoch seconds)");
    bt->over.add(bt_cmd, "--knn-k", "knn_k", "imputation neighbours");
    bt->over.add(bt_cmd, "--refit-every", "refit_every",
                 "windows between walk-forward refits (0 = fit once)");
    bt_cmd->callback([bt] { cmd_backtest(*bt); });

    auto mt = std::make_shared<MetricsOpts>();
    CLI::App* mt_cmd = app.add_subcommand(
        "metrics", "error metrics between an actual and a forecast series");
    mt_cmd->add_option("--actual", mt->actual, "actual values CSV")
        ->required();
    mt_cmd->add_option("--forecast", mt->forecast, "forecast values CSV")
        ->required();
    mt_cmd->add_flag("--json", mt->json, "print the summary as JSON");
    mt_cmd->callback([mt] { cmd_metrics(*mt); });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    } catch (const volcast::UsageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const volcast::DataError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const volcast::ModelError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
