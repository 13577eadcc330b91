#include "volcast/market_data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "volcast/errors.hpp"
#include "volcast/time.hpp"

namespace volcast {
namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    std::stringstream ss(line);
    while (std::getline(ss, cell, ',')) out.push_back(cell);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::optional<double> parse_cell(const std::string& raw, std::size_t line_no,
                                 const std::string& column) {
    const std::string s = trim(raw);
    if (s.empty()) return std::nullopt;
    double value = 0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
    if (ec != std::errc{} || ptr != s.data() + s.size())
        throw DataError("line " + std::to_string(line_no) + ": column '" +
                        column + "' is not a number: '" + s + "'");
    if (!std::isfinite(value))
        throw DataError("line " + std::to_string(line_no) + ": column '" +
                        column + "' is not finite");
    return value;
}

std::string format_double(double v) {
    char buf[32];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    (void)ec;
    return std::string(buf, ptr);
}

void append_cell(std::string& row, const std::optional<double>& v) {
    row.push_back(',');
    if (v) row += format_double(*v);
}

} // namespace

MarketSeries::MarketSeries(std::vector<MarketBar> bars,
                           std::vector<std::string> feature_names,
                           bool has_volume, bool has_nmp)
    : bars_(std::move(bars)),
      feature_names_(std::move(feature_names)),
      has_volume_(has_volume),
      has_nmp_(has_nmp) {}

std::int64_t MarketSeries::bar_interval() const {
    if (bars_.size() < 2) return 1800;
    std::vector<std::int64_t> gaps;
    gaps.reserve(bars_.size() - 1);
    for (std::size_t i = 1; i < bars_.size(); ++i)
        gaps.push_back(bars_[i].timestamp - bars_[i - 1].timestamp);
    std::nth_element(gaps.begin(), gaps.begin() + gaps.size() / 2, gaps.end());
    return gaps[gaps.size() / 2];
}

double MarketSeries::missing_fraction() const {
    if (bars_.empty()) return 0.0;
    std::size_t missing = 0, total = 0;
    for (const auto& bar : bars_) {
        total += 1; // price
        missing += !bar.price;
        if (has_volume_) {
            total += 1;
            missing += !bar.volume;
        }
        if (has_nmp_) {
            total += 1;
            missing += !bar.nmp_price;
        }
        for (const auto& f : bar.features) {
            total += 1;
            missing += !f;
        }
    }
    return static_cast<double>(missing) / static_cast<double>(total);
}

void MarketSeries::validate() const {
    for (std::size_t i = 0; i < bars_.size(); ++i) {
        const auto& bar = bars_[i];
        if (i > 0 && bar.timestamp <= bars_[i - 1].timestamp)
            throw DataError("non-monotone timestamps at bar " + std::to_string(i) +
                            " (" + format_iso8601_utc(bar.timestamp) + ")");
        if (bar.price && *bar.price <= 0.0)
            throw DataError("non-positive price at bar " + std::to_string(i));
        if (bar.nmp_price && *bar.nmp_price <= 0.0)
            throw DataError("non-positive nmp_price at bar " + std::to_string(i));
        if (bar.volume && *bar.volume < 0.0)
            throw DataError("negative volume at bar " + std::to_string(i));
        if (bar.features.size() != feature_names_.size())
            throw DataError("feature count mismatch at bar " + std::to_string(i));
    }
}

int MarketSeries::feature_index(const std::string& name) const {
    const auto it = std::find(feature_names_.begin(), feature_names_.end(), name);
    return it == feature_names_.end()
               ? -1
               : static_cast<int>(it - feature_names_.begin());
}

MarketSeries load_csv(const std::string& path, const CsvSchema& schema) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open '" + path + "'");

    std::string line;
    std::size_t line_no = 0;
    // Header
    do {
        if (!std::getline(in, line)) throw DataError("'" + path + "' is empty");
        ++line_no;
    } while (trim(line).empty() || trim(line)[0] == '#');

    const auto header = split_csv_line(line);
    int ts_col = -1, price_col = -1, volume_col = -1, nmp_col = -1, censor_col = -1;
    std::vector<std::string> feature_names;
    std::vector<int> feature_cols;
    for (std::size_t c = 0; c < header.size(); ++c) {
        const std::string name = trim(header[c]);
        if (name == schema.timestamp) ts_col = static_cast<int>(c);
        else if (name == schema.price) price_col = static_cast<int>(c);
        else if (name == schema.volume) volume_col = static_cast<int>(c);
        else if (name == schema.nmp_price) nmp_col = static_cast<int>(c);
        else if (name == schema.censor) censor_col = static_cast<int>(c);
        else {
            feature_names.push_back(name);
            feature_cols.push_back(static_cast<int>(c));
        }
    }
    if (ts_col < 0)
        throw DataError("'" + path + "': header lacks timestamp column '" +
                        schema.timestamp + "'");
    if (price_col < 0)
        throw DataError("'" + path + "': header lacks price column '" +
                        schema.price + "'");

    std::vector<MarketBar> bars;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty() || trim(line)[0] == '#') continue;
        const auto cells = split_csv_line(line);
        if (cells.size() != header.size())
            throw DataError("line " + std::to_string(line_no) + ": expected " +
                            std::to_string(header.size()) + " cells, got " +
                            std::to_string(cells.size()));
        MarketBar bar;
        try {
            bar.timestamp = parse_iso8601_utc(trim(cells[ts_col]));
        } catch (const DataError& e) {
            throw DataError("line " + std::to_string(line_no) + ": " + e.what());
        }
        bar.price = parse_cell(cells[price_col], line_no, schema.price);
        if (volume_col >= 0)
            bar.volume = parse_cell(cells[volume_col], line_no, schema.volume);
        if (nmp_col >= 0)
            bar.nmp_price = parse_cell(cells[nmp_col], line_no, schema.nmp_price);
        if (censor_col >= 0) {
            const std::string c = trim(cells[censor_col]);
            if (c.empty() || c == "none") bar.censor = BarCensor::none;
            else if (c == "above") bar.censor = BarCensor::above;
            else if (c == "below") bar.censor = BarCensor::below;
            else
                throw DataError("line " + std::to_string(line_no) +
                                ": censor must be none|above|below, got '" + c + "'");
        }
        bar.features.reserve(feature_cols.size());
        for (std::size_t f = 0; f < feature_cols.size(); ++f)
            bar.features.push_back(
                parse_cell(cells[feature_cols[f]], line_no, feature_names[f]));
        if (bar.price && *bar.price <= 0.0)
            throw DataError("line " + std::to_string(line_no) +
                            ": price must be strictly positive");
        if (bar.nmp_price && *bar.nmp_price <= 0.0)
            throw DataError("line " + std::to_string(line_no) +
                            ": nmp_price must be strictly positive");
        if (bar.volume && *bar.volume < 0.0)
            throw DataError("line " + std::to_string(line_no) +
                            ": volume must be non-negative");
        bars.push_back(std::move(bar));
    }

    MarketSeries series(std::move(bars), std::move(feature_names), volume_col >= 0,
                        nmp_col >= 0);
    series.validate();
    const double mf = series.missing_fraction();
    if (mf >= 0.30) {
        char buf[64];
        std::snprintf(buf, sizeof(buf), "%.4f", mf);
        throw DataError("'" + path + "': missing fraction exceeds threshold (" +
                        buf + " >= 0.30)");
    }
    return series;
}

void write_csv(const MarketSeries& series, const std::string& path,
               const CsvSchema& schema) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write '" + path + "'");
    const bool any_censor =
        std::any_of(series.bars().begin(), series.bars().end(),
                    [](const MarketBar& b) { return b.censor != BarCensor::none; });
    out << schema.timestamp << ',' << schema.price;
    if (series.has_volume()) out << ',' << schema.volume;
    if (series.has_nmp_price()) out << ',' << schema.nmp_price;
    if (any_censor) out << ',' << schema.censor;
    for (const auto& name : series.feature_names()) out << ',' << name;
    out << '\n';
    for (const auto& bar : series.bars()) {
        std::string row = format_iso8601_utc(bar.timestamp);
        append_cell(row, bar.price);
        if (series.has_volume()) append_cell(row, bar.volume);
        if (series.has_nmp_price()) append_cell(row, bar.nmp_price);
        if (any_censor) {
            row.push_back(',');
            row += bar.censor == BarCensor::above   ? "above"
                   : bar.censor == BarCensor::below ? "below"
                                                    : "none";
        }
        for (const auto& f : bar.features) append_cell(row, f);
        out << row << '\n';
    }
    if (!out) throw DataError("failed writing '" + path + "'");
}

namespace {

// Column accessor pair so the KNN pass can treat price/volume/nmp/features
// uniformly.
struct Column {
    std::string name;
    std::optional<double> (*get)(const MarketBar&, int);
    void (*set)(MarketBar&, int, double);
    int feature = -1;
};

std::vector<Column> data_columns(const MarketSeries& series) {
    std::vector<Column> cols;
    cols.push_back({"price",
                    [](const MarketBar& b, int) { return b.price; },
                    [](MarketBar& b, int, double v) { b.price = v; }});
    if (series.has_volume())
        cols.push_back({"volume",
                        [](const MarketBar& b, int) { return b.volume; },
                        [](MarketBar& b, int, double v) { b.volume = v; }});
    if (series.has_nmp_price())
        cols.push_back({"nmp_price",
                        [](const MarketBar& b, int) { return b.nmp_price; },
                        [](MarketBar& b, int, double v) { b.nmp_price = v; }});
    for (std::size_t f = 0; f < series.feature_names().size(); ++f) {
        Column col{series.feature_names()[f],
                   [](const MarketBar& b, int i) { return b.features[i]; },
                   [](MarketBar& b, int i, double v) { b.features[i] = v; },
                   static_cast<int>(f)};
        cols.push_back(col);
    }
    return cols;
}

} // namespace

MarketSeries impute_knn(const MarketSeries& series, int k) {
    if (k < 1) throw UsageError("impute_knn: k must be >= 1");
    MarketSeries out = series;
    const std::size_t n = out.size();
    if (n == 0) return out;

    for (const auto& col : data_columns(series)) {
        std::vector<std::size_t> present;
        present.reserve(n);
        for (std::size_t i = 0; i < n; ++i)
            if (col.get(series.bars()[i], col.feature)) present.push_back(i);
        if (present.size() == n) continue;
        if (present.size() < static_cast<std::size_t>(k))
            throw DataError("impute_knn: column '" + col.name + "' has only " +
                            std::to_string(present.size()) +
                            " present values, need k=" + std::to_string(k));

        for (std::size_t i = 0; i < n; ++i) {
            if (col.get(series.bars()[i], col.feature)) continue;
            // `present` is sorted by index; walk outward from the insertion
            // point so ties at equal distance pick the earlier bar first.
            auto it = std::lower_bound(present.begin(), present.end(), i);
            std::ptrdiff_t right = it - present.begin();
            std::ptrdiff_t left = right - 1;
            double sum = 0.0;
            for (int taken = 0; taken < k; ++taken) {
                const bool has_left = left >= 0;
                const bool has_right = right < static_cast<std::ptrdiff_t>(present.size());
                bool take_left;
                if (has_left && has_right) {
                    const std::size_t dl = i - present[left];
                    const std::size_t dr = present[right] - i;
                    take_left = dl <= dr; // tie -> earlier bar
                } else {
                    take_left = has_left;
                }
                const std::size_t j = take_left ? present[left--] : present[right++];
                sum += *col.get(series.bars()[j], col.feature);
            }
            col.set(out.bars()[i], col.feature, sum / k);
        }
    }
    return out;
}

std::vector<double> log_returns(const MarketSeries& series) {
    const auto& bars = series.bars();
    if (bars.size() < 2) return {};
    std::vector<double> returns;
    returns.reserve(bars.size() - 1);
    for (std::size_t i = 0; i + 1 < bars.size(); ++i) {
        const auto& a = bars[i].price;
        const auto& b = bars[i + 1].price;
        if (!a || !b)
            throw DataError("log_returns: missing price at bar " +
                            std::to_string(a ? i + 1 : i));
        if (*a <= 0.0 || *b <= 0.0)
            throw DataError("log_returns: non-positive price at bar " +
                            std::to_string(*a <= 0.0 ? i : i + 1));
        returns.push_back(std::log(*b / *a));
    }
    return returns;
}

std::vector<double> realized_volatility(std::span<const double> returns, int window) {
    if (window < 1) throw UsageError("realized_volatility: window must be >= 1");
    if (static_cast<std::size_t>(window) > returns.size())
        throw DataError("realized_volatility: window " + std::to_string(window) +
                        " exceeds " + std::to_string(returns.size()) + " returns");
    std::vector<double> vol;
    vol.reserve(returns.size() - window + 1);
    for (std::size_t j = 0; j + window <= returns.size(); ++j) {
        double acc = 0.0;
        for (int w = 0; w < window; ++w) acc += returns[j + w] * returns[j + w];
        vol.push_back(std::sqrt(acc / window));
    }
    return vol;
}

} // namespace volcast
