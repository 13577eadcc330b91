#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace volcast {

/// Censor marker carried by a bar, as encoded in the optional CSV `censor`
/// column (`none|above|below`). An absent column means every bar is exact.
enum class BarCensor { none, above, below };

/// One aligned 30-minute (by default) observation. Prices and the external
/// model's predicted price are strictly positive when present; absent cells
/// are flagged, never zero-filled.
struct MarketBar {
    std::int64_t timestamp = 0; // seconds since epoch, UTC
    std::optional<double> price;
    std::optional<double> volume;
    std::optional<double> nmp_price; // external numerical-market prediction
    std::vector<std::optional<double>> features; // aligned with feature_names()
    BarCensor censor = BarCensor::none;
};

/// Column mapping for load_csv / write_csv. Any header column not named here
/// is treated as a named exogenous feature. timestamp and price columns are
/// required; volume / nmp_price / censor are used when present.
struct CsvSchema {
    std::string timestamp = "timestamp";
    std::string price = "price";
    std::string volume = "volume";
    std::string nmp_price = "nmp_price";
    std::string censor = "censor";
};

/// Ordered, timestamp-aligned bar series. Timestamps are strictly
/// increasing; the missing fraction is always computed from the bars, never
/// cached.
class MarketSeries {
public:
    MarketSeries() = default;
    MarketSeries(std::vector<MarketBar> bars, std::vector<std::string> feature_names,
                 bool has_volume, bool has_nmp);

    const std::vector<MarketBar>& bars() const { return bars_; }
    std::vector<MarketBar>& bars() { return bars_; }
    const std::vector<std::string>& feature_names() const { return feature_names_; }
    std::size_t size() const { return bars_.size(); }
    bool empty() const { return bars_.empty(); }

    bool has_volume() const { return has_volume_; }
    bool has_nmp_price() const { return has_nmp_; }

    /// Median bar spacing in seconds (1800 when fewer than two bars).
    std::int64_t bar_interval() const;

    /// Missing cells divided by total data cells (price, volume, nmp_price
    /// and each feature column that exists in the series).
    double missing_fraction() const;

    /// Throws DataError on non-monotone timestamps or non-positive
    /// price/nmp_price cells.
    void validate() const;

    int feature_index(const std::string& name) const; // -1 when absent

private:
    std::vector<MarketBar> bars_;
    std::vector<std::string> feature_names_;
    bool has_volume_ = false;
    bool has_nmp_ = false;
};

/// Load a bar series from CSV. Empty string means missing; decimal point,
/// no thousands separators; timestamps ISO-8601 UTC. Malformed rows report
/// their 1-based line number. The series is rejected when the missing
/// fraction reaches 0.30.
MarketSeries load_csv(const std::string& path, const CsvSchema& schema = {});

/// Write a series in the same schema load_csv reads (empty string for
/// missing cells, shortest round-trip formatting for doubles).
void write_csv(const MarketSeries& series, const std::string& path,
               const CsvSchema& schema = {});

/// Fill every missing cell with the mean of that column's k nearest present
/// values, nearness measured by time-index distance, ties broken toward the
/// earlier bar. Present cells are never touched; the result has no missing
/// cells, so the operation is idempotent.
MarketSeries impute_knn(const MarketSeries& series, int k);

/// ln(price[i+1] / price[i]); length = bars - 1. Throws DataError when any
/// price is missing or non-positive.
std::vector<double> log_returns(const MarketSeries& series);

/// Rolling root-mean-square of returns: element j covers the window ending
/// at return index j + window - 1. Length = returns - window + 1.
std::vector<double> realized_volatility(std::span<const double> returns, int window);

} // namespace volcast
