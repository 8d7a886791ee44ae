#include <doctest.h>

#include <cmath>
#include <limits>
#include <sstream>

#include "causiam/metrics.hpp"
#include "causiam/rng.hpp"

using namespace causiam;

namespace {
Image random_image(std::uint64_t seed, int h, int w, double lo = 0.0, double hi = 1.0) {
    Image img(h, w);
    Rng rng(seed);
    for (double& v : img.data) v = rng.uniform(lo, hi);
    return img;
}
}  // namespace

TEST_CASE("psnr closed forms") {
    Image a = random_image(1, 16, 16);
    CHECK(std::isinf(psnr(a, a)));

    Image b = a;
    for (double& v : b.data) v += 0.1;
    CHECK(psnr(a, b) == doctest::Approx(20.0).epsilon(1e-12));

    Image c = random_image(2, 16, 16);
    double mse = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) mse += (a.data[i] - c.data[i]) * (a.data[i] - c.data[i]);
    mse /= static_cast<double>(a.data.size());
    CHECK(psnr(a, c) == doctest::Approx(10.0 * std::log10(1.0 / mse)).epsilon(1e-9));

    CHECK_THROWS_AS(psnr(a, Image(8, 8)), ShapeError);
}

TEST_CASE("psnr strictly decreases with noise amplitude") {
    Image a = random_image(3, 32, 32, 0.3, 0.7);
    double prev = std::numeric_limits<double>::infinity();
    for (double amp : {0.01, 0.05, 0.2}) {
        Image noisy = a;
        Rng rng(9);
        for (double& v : noisy.data) v += amp * (rng.uniform() - 0.5);
        double p = psnr(a, noisy);
        CHECK(p < prev);
        prev = p;
    }
}

TEST_CASE("ssim basics") {
    Image a = random_image(4, 24, 24);
    CHECK(ssim(a, a) == doctest::Approx(1.0).epsilon(1e-9));

    Image b = random_image(5, 24, 24);
    CHECK(ssim(a, b) == doctest::Approx(ssim(b, a)).epsilon(1e-12));
    double v = ssim(a, b);
    CHECK(v >= -1.0);
    CHECK(v <= 1.0);

    // Inverted checkerboard is anti-correlated.
    Image cb(16, 16), inv(16, 16);
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < 16; ++y)
            for (int x = 0; x < 16; ++x) {
                double val = (y + x) % 2 ? 1.0 : 0.0;
                cb.at(c, y, x) = val;
                inv.at(c, y, x) = 1.0 - val;
            }
    CHECK(ssim(cb, inv) < 0.0);

    CHECK_THROWS_AS(ssim(Image(8, 8), Image(8, 8)), ParamError);
}

TEST_CASE("aggregate: single report echoes through") {
    AggregateResult agg = aggregate({{"d", 1, 30.0, 0.9}});
    REQUIRE(agg.rows.size() == 1);
    CHECK(agg.rows[0].domain_id == "d");
    CHECK(agg.rows[0].n_images == 1);
    CHECK(agg.rows[0].mean_psnr == 30.0);
    CHECK(agg.rows[0].mean_ssim == 0.9);
    CHECK(agg.grand_psnr == 30.0);
    CHECK_THROWS_AS(aggregate({}), ParamError);
}

TEST_CASE("aggregate: two domains x two rounds plus grand mean oracle") {
    std::vector<MetricSample> samples;
    Rng rng(6);
    for (int round = 1; round <= 2; ++round)
        for (const char* d : {"a", "b"})
            for (int i = 0; i < 3; ++i)
                samples.push_back({d, round, rng.uniform(20.0, 35.0), rng.uniform(0.5, 1.0)});
    AggregateResult agg = aggregate(samples);
    CHECK(agg.rows.size() == 4);
    CHECK(agg.n_total == 12);

    // Streaming-mean oracle.
    double mean = 0.0;
    int n = 0;
    for (const MetricSample& s : samples) {
        ++n;
        mean += (s.psnr - mean) / n;
    }
    CHECK(agg.grand_psnr == doctest::Approx(mean).epsilon(1e-9));

    // Permutation inside a bucket does not change the rows.
    std::swap(samples[0], samples[1]);
    AggregateResult agg2 = aggregate(samples);
    for (std::size_t i = 0; i < agg.rows.size(); ++i) {
        CHECK(agg2.rows[i].domain_id == agg.rows[i].domain_id);
        CHECK(agg2.rows[i].mean_psnr == doctest::Approx(agg.rows[i].mean_psnr).epsilon(1e-12));
    }
}

TEST_CASE("csv rendering and inf serialization") {
    AggregateResult agg = aggregate({{"d", 1, std::numeric_limits<double>::infinity(), 1.0}});
    std::string csv = render_csv(agg);
    std::istringstream in(csv);
    std::string header, row;
    std::getline(in, header);
    std::getline(in, row);
    CHECK(header == "domain_id,round,n_images,mean_psnr,mean_ssim");
    CHECK(row.find("d,1,1,inf,") == 0);
    CHECK(format_metric(std::numeric_limits<double>::infinity()) == "inf");

    // Round trip: parse the CSV back and compare.
    std::istringstream in2(render_csv(aggregate({{"a", 1, 30.25, 0.5}, {"a", 2, 28.0, 0.25}})));
    std::getline(in2, header);
    std::vector<MetricRow> parsed;
    while (std::getline(in2, row)) {
        std::istringstream rs(row);
        MetricRow r;
        std::string tok;
        std::getline(rs, r.domain_id, ',');
        std::getline(rs, tok, ',');
        r.round = std::stoi(tok);
        std::getline(rs, tok, ',');
        r.n_images = std::stoi(tok);
        std::getline(rs, tok, ',');
        r.mean_psnr = std::stod(tok);
        std::getline(rs, tok, ',');
        r.mean_ssim = std::stod(tok);
        parsed.push_back(r);
    }
    REQUIRE(parsed.size() == 2);
    CHECK(parsed[0].mean_psnr == doctest::Approx(30.25).epsilon(1e-4));
    CHECK(parsed[1].round == 2);
}
