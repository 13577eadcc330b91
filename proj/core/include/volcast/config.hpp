#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "volcast/backtest.hpp"
#include "volcast/pipeline.hpp"
#include "volcast/synth.hpp"

namespace volcast {

/// Flat key=value configuration. Sorted by key, so rendering is canonical.
using ConfigMap = std::map<std::string, std::string>;

/// Parse a config file: one key=value per line, blank lines and lines
/// starting with '#' ignored, whitespace trimmed, later duplicates win.
ConfigMap load_config_file(const std::string& path);

/// Canonical text form: sorted key=value lines.
std::string render_config(const ConfigMap& map);

/// Typed lookups with a fallback when the key is absent. Malformed values
/// throw UsageError naming the key.
bool config_bool(const ConfigMap& map, const std::string& key, bool fallback);
int config_int(const ConfigMap& map, const std::string& key, int fallback);
double config_double(const ConfigMap& map, const std::string& key,
                     double fallback);
std::uint64_t config_u64(const ConfigMap& map, const std::string& key,
                         std::uint64_t fallback);
std::string config_str(const ConfigMap& map, const std::string& key,
                       const std::string& fallback);

/// Overlay recognized keys onto a typed config; unknown keys throw
/// UsageError so typos never silently pass. `mlp.*` keys apply to both
/// stages except the per-stage hidden sizes (mlp.hidden1 / mlp.hidden2).
void apply_pipeline_config(PipelineConfig& config, const ConfigMap& map);
void apply_backtest_config(BacktestConfig& config, const ConfigMap& map);
void apply_synth_config(SynthConfig& config, const ConfigMap& map);

/// Canonical snapshots of the effective settings, for report headers and
/// reproduction. apply(snapshot(c)) restores c.
ConfigMap snapshot_pipeline(const PipelineConfig& config);
ConfigMap snapshot_backtest(const BacktestConfig& config);
ConfigMap snapshot_synth(const SynthConfig& config);

} // namespace volcast
