#include "volcast/backtest.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "nlohmann/json.hpp"
#include "volcast/config.hpp"
#include "volcast/errors.hpp"

namespace volcast {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

void push_unique(std::vector<std::string>& into,
                 const std::vector<std::string>& add) {
    for (const auto& w : add)
        if (std::find(into.begin(), into.end(), w) == into.end())
            into.push_back(w);
}

std::string hash_hex(std::uint64_t h) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "0x%016llx",
                  static_cast<unsigned long long>(h));
    return buf;
}

std::string fixed6(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

void append_cell(std::string& line, const std::string& cell, int width) {
    line += cell;
    for (int i = static_cast<int>(cell.size()); i < width; ++i) line += ' ';
}

} // namespace

void BacktestConfig::validate() const {
    pipeline.validate();
    if (variants.empty()) throw UsageError("config: no variants selected");
    if (targets.empty()) throw UsageError("config: no targets selected");
    for (std::size_t i = 0; i < variants.size(); ++i)
        for (std::size_t j = i + 1; j < variants.size(); ++j)
            if (variants[i] == variants[j])
                throw UsageError("config: duplicate variant '" +
                                 variant_name(variants[i]) + "'");
    for (std::size_t i = 0; i < targets.size(); ++i)
        for (std::size_t j = i + 1; j < targets.size(); ++j)
            if (targets[i] == targets[j])
                throw UsageError("config: duplicate target '" +
                                 target_name(targets[i]) + "'");
    if (!train_end && !(train_fraction > 0.0 && train_fraction < 1.0))
        throw UsageError("config: train_fraction must lie in (0, 1)");
    if (knn_k < 1) throw UsageError("config: knn_k must be at least 1");
    if (refit_every < 0)
        throw UsageError("config: refit_every must be non-negative");
}

std::uint64_t fnv1a(std::string_view bytes) {
    std::uint64_t h = 1469598103934665603ULL;
    for (const char c : bytes) {
        h ^= static_cast<unsigned char>(c);
        h *= 1099511628211ULL;
    }
    return h;
}

std::uint64_t fnv1a_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return fnv1a(ss.str());
}

BacktestRun run_backtest(const MarketSeries& data, const BacktestConfig& config,
                         std::uint64_t data_hash) {
    config.validate();
    const auto t_run = Clock::now();

    const MarketSeries series = data.missing_fraction() > 0.0
                                    ? impute_knn(data, config.knn_k)
                                    : data;
    const std::size_t n = series.size();
    const auto H = static_cast<std::size_t>(config.pipeline.horizon_bars);

    std::size_t split = 0; // first test bar
    if (config.train_end) {
        while (split < n &&
               series.bars()[split].timestamp <= *config.train_end)
            ++split;
    } else {
        split = static_cast<std::size_t>(
            std::floor(config.train_fraction * static_cast<double>(n)));
    }
    if (split < 12) throw DataError("backtest: training span too short");
    if (split >= n)
        throw DataError("backtest: no test bars after the training span");
    const std::size_t windows = (n - split) / H;
    if (windows == 0)
        throw DataError("backtest: test span shorter than one horizon window");

    BacktestRun run;
    run.data_hash = data_hash;
    run.config_snapshot = render_config(snapshot_backtest(config));
    run.train_bars = split;
    run.test_bars = n - split;
    run.windows = windows;

    for (const Variant variant : config.variants) {
        for (const TargetKind target : config.targets) {
            const auto t0 = Clock::now();
            BacktestResult res;
            res.variant = variant;
            res.target = target;

            PipelineConfig pc = config.pipeline;
            pc.variant = variant;
            pc.target = target;
            FittedPipeline pipeline;
            const auto refit = [&](std::size_t end_bar) {
                try {
                    pipeline =
                        build_pipeline(slice_series(series, 0, end_bar), pc);
                } catch (const ModelError& e) {
                    throw ModelError(variant_name(variant) + " (" +
                                     target_name(target) + "): " + e.what());
                }
                push_unique(res.warnings, pipeline.warnings);
            };
            refit(split);

            const auto path = target_path(series, target, pc.vol_window);
            std::vector<double> actual;
            std::vector<double> predicted;
            std::vector<int> steps;
            for (std::size_t w = 0; w < windows; ++w) {
                const std::size_t end = split + (w + 1) * H;
                if (config.refit_every > 0 && w > 0 &&
                    w % static_cast<std::size_t>(config.refit_every) == 0)
                    refit(end - H); // only bars strictly before this window
                const MarketSeries latest = slice_series(series, 0, end);
                const ForecastReport fc =
                    forecast(pipeline, latest, static_cast<int>(H));
                push_unique(res.warnings, fc.warnings);
                for (const ForecastStep& st : fc.steps) {
                    const std::size_t i =
                        end - H + static_cast<std::size_t>(st.step) - 1;
                    if (!std::isfinite(path[i])) continue;
                    actual.push_back(path[i]);
                    predicted.push_back(st.mean);
                    steps.push_back(st.step);
                }
            }
            if (actual.empty())
                throw ModelError("backtest: no evaluable steps for " +
                                 variant_name(variant));
            res.report =
                make_report(actual, predicted, steps, pc.short_horizon_bars);
            res.wall_seconds = seconds_since(t0);
            push_unique(run.warnings, res.warnings);
            run.results.push_back(std::move(res));
        }
    }
    run.wall_seconds = seconds_since(t_run);
    return run;
}

std::string render_backtest(const BacktestRun& run) {
    std::string out;
    out += "backtest report\n";
    out += "===============\n";
    out += "data_hash: " + hash_hex(run.data_hash) + "\n";
    out += "train_bars: " + std::to_string(run.train_bars) + "\n";
    out += "test_bars: " + std::to_string(run.test_bars) + "\n";
    out += "windows: " + std::to_string(run.windows) + "\n";
    out += "\nconfig:\n";
    std::istringstream cfg(run.config_snapshot);
    for (std::string line; std::getline(cfg, line);)
        out += "  " + line + "\n";

    // One comparison table per target, variants in the order they ran.
    std::vector<TargetKind> targets;
    for (const auto& r : run.results)
        if (std::find(targets.begin(), targets.end(), r.target) ==
            targets.end())
            targets.push_back(r.target);

    for (const TargetKind target : targets) {
        out += "\nresults (" + target_name(target) + ")\n";
        std::string head;
        append_cell(head, "variant", 14);
        append_cell(head, "n", 8);
        append_cell(head, "rmse", 12);
        append_cell(head, "mae", 12);
        append_cell(head, "nmape%", 12);
        append_cell(head, "short_rmse", 12);
        append_cell(head, "short_mae", 12);
        append_cell(head, "short_nmape%", 14);
        head += "gate";
        out += head + "\n";
        for (const auto& r : run.results) {
            if (r.target != target) continue;
            std::string line;
            append_cell(line, variant_name(r.variant), 14);
            append_cell(line, std::to_string(r.report.full.count), 8);
            append_cell(line, fixed6(r.report.full.rmse), 12);
            append_cell(line, fixed6(r.report.full.mae), 12);
            append_cell(line, fixed6(r.report.full.nmape), 12);
            append_cell(line, fixed6(r.report.short_bucket.rmse), 12);
            append_cell(line, fixed6(r.report.short_bucket.mae), 12);
            append_cell(line, fixed6(r.report.short_bucket.nmape), 14);
            line += r.report.accuracy_pass ? "PASS" : "FAIL";
            out += line + "\n";
        }
    }

    if (!run.warnings.empty()) {
        out += "\nwarnings:\n";
        for (const auto& w : run.warnings) out += "- " + w + "\n";
    }
    return out;
}

std::string backtest_json(const BacktestRun& run) {
    nlohmann::json j;
    j["format"] = "volcast-backtest";
    j["version"] = 1;
    j["data_hash"] = hash_hex(run.data_hash);
    j["train_bars"] = run.train_bars;
    j["test_bars"] = run.test_bars;
    j["windows"] = run.windows;
    j["config"] = run.config_snapshot;
    j["results"] = nlohmann::json::array();
    for (const auto& r : run.results) {
        nlohmann::json item;
        item["variant"] = variant_name(r.variant);
        item["target"] = target_name(r.target);
        item["report"] = nlohmann::json::parse(report_json(r.report));
        item["warnings"] = r.warnings;
        j["results"].push_back(std::move(item));
    }
    j["warnings"] = run.warnings;
    return j.dump(2) + "\n";
}

} // namespace volcast
