#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "volcast/errors.hpp"
#include "volcast/market_data.hpp"
#include "volcast/rng.hpp"
#include "volcast/time.hpp"

using namespace volcast;

namespace {

std::string temp_path(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() / "volcast_tests";
    std::filesystem::create_directories(dir);
    return (dir / name).string();
}

std::string write_file(const std::string& name, const std::string& content) {
    const std::string path = temp_path(name);
    std::ofstream out(path, std::ios::binary);
    out << content;
    return path;
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

const char* kHeader =
    "timestamp,price,volume,nmp_price,interest_rate,inflation,insider_news\n";

// Ten rows, six value columns = 60 data cells. `missing_prices` empties the
// price cell of that many leading rows.
std::string grid_csv(int missing_prices, int missing_volumes = 0,
                     int missing_nmp = 0) {
    std::string text = kHeader;
    for (int i = 0; i < 10; ++i) {
        char ts[32];
        std::snprintf(ts, sizeof ts, "2021-01-04T%02d:00:00Z", i);
        text += ts;
        text += i < missing_prices ? "," : ("," + std::to_string(100 + i));
        text += i < missing_volumes ? "," : ",1000";
        text += i < missing_nmp ? "," : ("," + std::to_string(101 + i));
        text += ",0.05,0.04,0.1\n";
    }
    return text;
}

MarketSeries price_series(const std::vector<double>& prices) {
    std::vector<MarketBar> bars(prices.size());
    for (std::size_t i = 0; i < prices.size(); ++i) {
        bars[i].timestamp = 1800 * static_cast<std::int64_t>(i);
        bars[i].price = prices[i];
    }
    return MarketSeries(std::move(bars), {}, false, false);
}

} // namespace

TEST_CASE("load_csv parses a well-formed file") {
    const auto path = write_file("ok3.csv",
                                 "timestamp,price,volume,nmp_price\n"
                                 "2021-01-04T07:00:00Z,100,500,101\n"
                                 "2021-01-04T07:30:00Z,101,600,102\n"
                                 "2021-01-04T08:00:00Z,99.5,700,100\n");
    const MarketSeries s = load_csv(path);
    REQUIRE(s.size() == 3);
    CHECK(s.missing_fraction() == 0.0);
    CHECK(s.has_volume());
    CHECK(s.has_nmp_price());
    CHECK(s.bars()[0].timestamp == 1609743600);
    CHECK(s.bars()[1].timestamp - s.bars()[0].timestamp == 1800);
    CHECK(*s.bars()[2].price == doctest::Approx(99.5));
    CHECK(s.bar_interval() == 1800);
}

TEST_CASE("missing fraction counts value cells only") {
    const auto path = write_file("miss4.csv", grid_csv(4));
    const MarketSeries s = load_csv(path);
    CHECK(s.missing_fraction() == doctest::Approx(4.0 / 60.0));
}

TEST_CASE("missing fraction at the threshold rejects the file") {
    // 10 volumes + 8 nmp prices = 18 of 60 cells = exactly 0.30.
    const auto path = write_file("miss30.csv", grid_csv(0, 10, 8));
    CHECK_THROWS_WITH_AS(load_csv(path),
                         doctest::Contains("missing fraction exceeds"),
                         DataError);
}

TEST_CASE("malformed rows report their line number") {
    const auto path = write_file("bad.csv",
                                 "timestamp,price\n"
                                 "2021-01-04T07:00:00Z,100\n"
                                 "2021-01-04T07:30:00Z,abc\n");
    CHECK_THROWS_WITH_AS(load_csv(path), doctest::Contains("line 3"),
                         DataError);
}

TEST_CASE("non-monotone timestamps are rejected") {
    const auto path = write_file("nonmono.csv",
                                 "timestamp,price\n"
                                 "2021-01-04T07:30:00Z,100\n"
                                 "2021-01-04T07:00:00Z,101\n");
    CHECK_THROWS_AS(load_csv(path), DataError);
}

TEST_CASE("non-positive prices are rejected") {
    const auto path = write_file("negprice.csv",
                                 "timestamp,price\n"
                                 "2021-01-04T07:00:00Z,-5\n");
    CHECK_THROWS_AS(load_csv(path), DataError);
}

TEST_CASE("csv round-trip preserves every cell") {
    const auto path = write_file("round.csv", grid_csv(2, 1, 3));
    const MarketSeries s = load_csv(path);
    const auto out = temp_path("round_out.csv");
    write_csv(s, out);
    const MarketSeries t = load_csv(out);
    REQUIRE(t.size() == s.size());
    for (std::size_t i = 0; i < s.size(); ++i) {
        CHECK(t.bars()[i].timestamp == s.bars()[i].timestamp);
        CHECK(t.bars()[i].price == s.bars()[i].price);
        CHECK(t.bars()[i].volume == s.bars()[i].volume);
        CHECK(t.bars()[i].nmp_price == s.bars()[i].nmp_price);
        CHECK(t.bars()[i].features == s.bars()[i].features);
    }
    // A second write emits identical bytes.
    const auto out2 = temp_path("round_out2.csv");
    write_csv(t, out2);
    CHECK(read_file(out) == read_file(out2));
}

TEST_CASE("impute_knn is the identity on complete data") {
    const auto path = write_file("complete.csv", grid_csv(0));
    const MarketSeries s = load_csv(path);
    const MarketSeries t = impute_knn(s, 3);
    for (std::size_t i = 0; i < s.size(); ++i) {
        CHECK(t.bars()[i].price == s.bars()[i].price);
        CHECK(t.bars()[i].volume == s.bars()[i].volume);
    }
}

TEST_CASE("impute_knn averages the k nearest present values") {
    MarketSeries s = price_series({10.0, 20.0, 30.0});
    s.bars()[1].price.reset();

    SUBCASE("k=2 takes both neighbours") {
        const MarketSeries t = impute_knn(s, 2);
        CHECK(*t.bars()[1].price == doctest::Approx(15.0));
    }
    SUBCASE("k=1 breaks the distance tie toward the earlier bar") {
        const MarketSeries t = impute_knn(s, 1);
        CHECK(*t.bars()[1].price == doctest::Approx(10.0));
    }
}

TEST_CASE("impute_knn is idempotent and stays within neighbour bounds") {
    Rng rng(7);
    std::vector<MarketBar> bars(40);
    for (std::size_t i = 0; i < bars.size(); ++i) {
        bars[i].timestamp = 1800 * static_cast<std::int64_t>(i);
        bars[i].price = 50.0 + 10.0 * rng.uniform();
        bars[i].volume = 100.0 + 20.0 * rng.uniform();
        if (rng.uniform() < 0.2) bars[i].price.reset();
        if (rng.uniform() < 0.2) bars[i].volume.reset();
    }
    const MarketSeries s(std::move(bars), {}, true, false);
    const MarketSeries once = impute_knn(s, 4);
    const MarketSeries twice = impute_knn(once, 4);
    CHECK(once.missing_fraction() == 0.0);
    for (std::size_t i = 0; i < s.size(); ++i) {
        CHECK(*twice.bars()[i].price == *once.bars()[i].price);
        CHECK(*twice.bars()[i].volume == *once.bars()[i].volume);
        // Present cells are never touched; imputed ones stay in the global
        // value range (a superset of the neighbour range).
        if (s.bars()[i].price) {
            CHECK(*once.bars()[i].price == *s.bars()[i].price);
        } else {
            CHECK(*once.bars()[i].price >= 50.0);
            CHECK(*once.bars()[i].price <= 60.0);
        }
    }
}

TEST_CASE("impute_knn imputed value lies within the neighbour interval") {
    MarketSeries s = price_series({10.0, 12.0, 0.0, 14.0, 30.0});
    s.bars()[2].price.reset();
    const MarketSeries t = impute_knn(s, 2);
    // Nearest two present values are 12 and 14.
    CHECK(*t.bars()[2].price >= 12.0);
    CHECK(*t.bars()[2].price <= 14.0);
    CHECK(*t.bars()[2].price == doctest::Approx(13.0));
}

TEST_CASE("impute_knn rejects k beyond the available values") {
    MarketSeries s = price_series({10.0, 20.0, 30.0});
    s.bars()[1].price.reset();
    CHECK_THROWS_WITH_AS(impute_knn(s, 3), doctest::Contains("need k=3"),
                         DataError);
    CHECK_THROWS_AS(impute_knn(s, 0), UsageError);
}

TEST_CASE("log_returns matches the closed form") {
    CHECK(log_returns(price_series({100.0, 100.0}))[0] == 0.0);

    const auto r = log_returns(price_series({100.0, 110.0, 99.0}));
    REQUIRE(r.size() == 2);
    CHECK(r[0] == doctest::Approx(std::log(1.1)).epsilon(1e-12));
    CHECK(r[1] == doctest::Approx(std::log(0.9)).epsilon(1e-12));
}

TEST_CASE("log_returns of exponential growth is constant") {
    std::vector<double> prices;
    for (int i = 0; i < 50; ++i) prices.push_back(100.0 * std::exp(0.01 * i));
    const auto r = log_returns(price_series(prices));
    for (const double v : r) CHECK(v == doctest::Approx(0.01).epsilon(1e-9));
}

TEST_CASE("log_returns requires complete positive prices") {
    MarketSeries s = price_series({100.0, 101.0});
    s.bars()[1].price.reset();
    CHECK_THROWS_AS(log_returns(s), DataError);
}

TEST_CASE("realized_volatility matches the closed form") {
    const std::vector<double> zeros(8, 0.0);
    for (const double v : realized_volatility(zeros, 4)) CHECK(v == 0.0);

    const std::vector<double> two = {0.1, -0.1};
    const auto rv = realized_volatility(two, 2);
    REQUIRE(rv.size() == 1);
    CHECK(rv[0] == doctest::Approx(0.1).epsilon(1e-12));

    const std::vector<double> one = {-0.3};
    CHECK(realized_volatility(one, 1)[0] == doctest::Approx(0.3));
}

TEST_CASE("realized_volatility is invariant under sign flips") {
    Rng rng(11);
    std::vector<double> r(30), flipped(30);
    for (std::size_t i = 0; i < r.size(); ++i) {
        r[i] = rng.normal();
        flipped[i] = -r[i];
    }
    const auto a = realized_volatility(r, 5);
    const auto b = realized_volatility(flipped, 5);
    REQUIRE(a.size() == r.size() - 4);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("realized_volatility rejects oversized windows") {
    const std::vector<double> r = {0.1, 0.2};
    CHECK_THROWS_AS(realized_volatility(r, 3), DataError);
}

TEST_CASE("iso-8601 parsing is strict UTC") {
    CHECK(parse_iso8601_utc("2021-01-04T07:00:00Z") == 1609743600);
    CHECK(format_iso8601_utc(1609743600) == "2021-01-04T07:00:00Z");
    CHECK(parse_iso8601_utc(format_iso8601_utc(0)) == 0);
    CHECK_THROWS_AS(parse_iso8601_utc("2021-01-04T07:00:00+02:00"),
                    DataError);
    CHECK_THROWS_AS(parse_iso8601_utc("2021-01-04 07:00:00Z"), DataError);
}
