#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "volcast/errors.hpp"
#include "volcast/market_data.hpp"
#include "volcast/synth.hpp"

using namespace volcast;

namespace {

SynthConfig small_config(std::uint64_t seed) {
    SynthConfig c;
    c.seed = seed;
    c.days = 5;
    return c;
}

} // namespace

TEST_CASE("generated series has the advertised shape") {
    const SynthResult r = generate(small_config(1));
    const MarketSeries& s = r.series;
    REQUIRE(s.size() == 5 * 48);
    CHECK(r.true_vol.size() == s.size());
    CHECK(s.has_volume());
    CHECK(s.has_nmp_price());
    REQUIRE(s.feature_names().size() == 3);
    CHECK(s.feature_index("interest_rate") == 0);
    CHECK(s.feature_index("inflation") == 1);
    CHECK(s.feature_index("insider_news") == 2);
    CHECK(s.missing_fraction() == 0.0);

    for (std::size_t i = 0; i < s.size(); ++i) {
        const auto& bar = s.bars()[i];
        CHECK(*bar.price > 0.0);
        CHECK(*bar.nmp_price > 0.0);
        CHECK(*bar.volume > 0.0);
        CHECK(r.true_vol[i] > 0.0);
        if (i > 0)
            CHECK(bar.timestamp - s.bars()[i - 1].timestamp == 1800);
    }
    s.validate(); // must not throw
}

TEST_CASE("same seed reproduces the series bit for bit") {
    const SynthResult a = generate(small_config(42));
    const SynthResult b = generate(small_config(42));
    REQUIRE(a.series.size() == b.series.size());
    for (std::size_t i = 0; i < a.series.size(); ++i) {
        CHECK(*a.series.bars()[i].price == *b.series.bars()[i].price);
        CHECK(*a.series.bars()[i].volume == *b.series.bars()[i].volume);
        CHECK(*a.series.bars()[i].nmp_price == *b.series.bars()[i].nmp_price);
        CHECK(a.series.bars()[i].features == b.series.bars()[i].features);
        CHECK(a.true_vol[i] == b.true_vol[i]);
    }

    const SynthResult c = generate(small_config(43));
    bool any_differ = false;
    for (std::size_t i = 0; i < c.series.size(); ++i)
        any_differ |= (*a.series.bars()[i].price != *c.series.bars()[i].price);
    CHECK(any_differ);
}

TEST_CASE("a distortion-free NMP equals the next price exactly") {
    SynthConfig c = small_config(3);
    c.nmp_bias_const = 0.0;
    c.nmp_bias_prop = 0.0;
    c.nmp_bias_state = 0.0;
    c.nmp_noise_scale = 0.0;
    const SynthResult r = generate(c);
    const auto& bars = r.series.bars();
    for (std::size_t i = 0; i + 1 < bars.size(); ++i)
        CHECK(*bars[i].nmp_price == *bars[i + 1].price);
}

TEST_CASE("bias knobs displace the NMP in the advertised direction") {
    SynthConfig c = small_config(4);
    c.nmp_bias_prop = 0.0;
    c.nmp_bias_state = 0.0;
    c.nmp_noise_scale = 0.0;
    c.nmp_bias_const = 2.0;
    const SynthResult r = generate(c);
    const auto& bars = r.series.bars();
    for (std::size_t i = 0; i + 1 < bars.size(); ++i)
        CHECK(*bars[i].nmp_price - *bars[i + 1].price ==
              doctest::Approx(2.0).epsilon(1e-9));

    c.nmp_bias_const = 0.0;
    c.nmp_bias_prop = 0.01;
    const SynthResult rp = generate(c);
    const auto& bp = rp.series.bars();
    for (std::size_t i = 0; i + 1 < bp.size(); ++i)
        CHECK(*bp[i].nmp_price / *bp[i + 1].price ==
              doctest::Approx(1.01).epsilon(1e-9));
}

TEST_CASE("frozen volatility pins realized volatility to the level") {
    // With jumps and vol-of-vol off, per-bar returns are iid N(drift, level²);
    // averaged over ten seeds the realized volatility must sit within 10% of
    // the configured level.
    double acc = 0.0;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        SynthConfig c;
        c.seed = seed;
        c.days = 10;
        c.jump_intensity = 0.0;
        c.vol_of_vol = 0.0;
        const SynthResult r = generate(c);
        for (const double v : r.true_vol)
            CHECK(v == doctest::Approx(c.vol_level).epsilon(1e-12));
        const auto returns = log_returns(r.series);
        double sq = 0.0;
        for (const double x : returns) sq += x * x;
        acc += std::sqrt(sq / static_cast<double>(returns.size()));
    }
    const double mean_rv = acc / 10.0;
    CHECK(mean_rv > 0.9 * 0.002);
    CHECK(mean_rv < 1.1 * 0.002);
}

TEST_CASE("jumps fatten the tails") {
    SynthConfig calm = small_config(6);
    calm.days = 20;
    calm.jump_intensity = 0.0;
    SynthConfig jumpy = calm;
    jumpy.jump_intensity = 8.0;
    jumpy.jump_scale = 0.05;

    const auto rc = log_returns(generate(calm).series);
    const auto rj = log_returns(generate(jumpy).series);
    const auto count_large = [](const std::vector<double>& r) {
        int n = 0;
        for (const double v : r) n += std::abs(v) > 0.01;
        return n;
    };
    CHECK(count_large(rj) > count_large(rc) + 5);
}

TEST_CASE("per-component RNG streams are independent") {
    // Raising the jump intensity must not disturb the volume draws'
    // relationship to the price path beyond the jump channel itself: the
    // volatility state stream stays identical, so true_vol is unchanged.
    SynthConfig a = small_config(7);
    a.jump_intensity = 0.0;
    SynthConfig b = a;
    b.jump_intensity = 10.0;
    const SynthResult ra = generate(a);
    const SynthResult rb = generate(b);
    for (std::size_t i = 0; i < ra.true_vol.size(); ++i)
        CHECK(ra.true_vol[i] == rb.true_vol[i]);
}

TEST_CASE("disabling features removes the columns and the insider drift") {
    SynthConfig c = small_config(8);
    c.emit_features = false;
    const SynthResult r = generate(c);
    CHECK(r.series.feature_names().empty());
    for (const auto& bar : r.series.bars()) CHECK(bar.features.empty());
}

TEST_CASE("shock preset is a valid, livelier configuration") {
    const SynthConfig c = shock_preset(11);
    CHECK(c.seed == 11);
    CHECK(c.jump_intensity > SynthConfig{}.jump_intensity);
    c.validate();
    SynthConfig small = c;
    small.days = 3;
    const SynthResult r = generate(small);
    CHECK(r.series.size() == 3 * 48);
}

TEST_CASE("config validation rejects nonsense") {
    SynthConfig c;
    c.days = 0;
    CHECK_THROWS_AS(c.validate(), UsageError);
    c = SynthConfig{};
    c.vol_level = 0.0;
    CHECK_THROWS_AS(c.validate(), UsageError);
    c = SynthConfig{};
    c.bars_per_day = -1;
    CHECK_THROWS_AS(c.validate(), UsageError);
    c = SynthConfig{};
    c.jump_intensity = -0.5;
    CHECK_THROWS_AS(c.validate(), UsageError);
}

TEST_CASE("truth csv matches the generated series") {
    const SynthResult r = generate(small_config(9));
    const auto dir = std::filesystem::temp_directory_path() / "volcast_tests";
    std::filesystem::create_directories(dir);
    const std::string path = (dir / "truth.csv").string();
    write_truth_csv(r, path);

    std::ifstream in(path);
    REQUIRE(in.good());
    std::string line;
    std::getline(in, line);
    CHECK(line == "timestamp,true_vol");
    std::size_t rows = 0;
    while (std::getline(in, line)) {
        if (!line.empty()) ++rows;
    }
    CHECK(rows == r.series.size());
}
