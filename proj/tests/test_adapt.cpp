#include <doctest.h>

#include <cmath>
#include <fstream>
#include <limits>

#include "causiam/adapt.hpp"
#include "causiam/rng.hpp"
#include "causiam/synth.hpp"
#include "causiam/wavelet.hpp"

using namespace causiam;

namespace {

Image random_image(std::uint64_t seed, int h, int w, double lo = 0.0, double hi = 1.0) {
    Image img(h, w);
    Rng rng(seed);
    for (double& v : img.data) v = rng.uniform(lo, hi);
    return img;
}

DomainStream tiny_stream(const std::string& id, int n, std::uint64_t seed) {
    GeneratedStream g = gen_domain_stream(id, n, seed, PsfKind::GAUSSIAN, 1.0, 2.0, 32, 32);
    return std::move(g.stream);
}

}  // namespace

TEST_CASE("spatial loss basics and oracle") {
    Image a = random_image(1, 8, 8);
    CHECK(spatial_loss(a, a) == 0.0);

    Image zero(8, 8), one(8, 8);
    for (double& v : one.data) v = 1.0;
    CHECK(spatial_loss(zero, one) == 1.0);

    Image b = random_image(2, 8, 8);
    double naive = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) naive += std::abs(a.data[i] - b.data[i]);
    naive /= static_cast<double>(a.data.size());
    CHECK(spatial_loss(a, b) == doctest::Approx(naive).epsilon(1e-12));

    CHECK_THROWS_AS(spatial_loss(a, Image(4, 4)), ShapeError);
}

TEST_CASE("high frequency loss kills constant offsets") {
    Image a = random_image(3, 8, 8, 0.0, 0.5);
    Image b = a;
    for (double& v : b.data) v += 0.25;
    CHECK(high_freq_loss(a, a) == 0.0);
    CHECK(high_freq_loss(a, b) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(spatial_loss(a, b) == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("high frequency loss on a step edge matches the band arithmetic") {
    Image flat(4, 4);
    Image edge(4, 4);
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < 4; ++y) {
            edge.at(c, y, 1) = 1.0;
            edge.at(c, y, 3) = 1.0;
        }
    // Every 2x2 block of `edge` is (0,1,0,1): f^h = -1/3 everywhere, so the
    // mean absolute difference against the flat image is 1/3.
    CHECK(high_freq_loss(edge, flat) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("consistency loss is the weighted sum") {
    Image a = random_image(4, 8, 8);
    Image b = random_image(5, 8, 8);
    CHECK(consistency_loss(a, b, 0.0) == spatial_loss(a, b));
    CHECK(consistency_loss(a, a, 0.7) == 0.0);
    double want = spatial_loss(a, b) + 0.01 * high_freq_loss(a, b);
    CHECK(consistency_loss(a, b, 0.01) == doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("consistency loss gradient matches finite differences") {
    Image target = random_image(6, 6, 6);
    Image x = random_image(7, 6, 6);
    Tensor g = consistency_loss_grad(x, target, 0.01);
    const double h = 1e-6;
    for (std::size_t i = 0; i < x.data.size(); i += 7) {
        double keep = x.data[i];
        x.data[i] = keep + h;
        double lp = consistency_loss(x, target, 0.01);
        x.data[i] = keep - h;
        double lm = consistency_loss(x, target, 0.01);
        x.data[i] = keep;
        double fd = (lp - lm) / (2 * h);
        CHECK(std::abs(fd - g.data[i]) <= 1e-6);
    }
}

TEST_CASE("ema update endpoints and default rate") {
    AdaptConfig cfg;
    CaParams xi = CaParams::seeded_init(16, 4, 4, 0.05, 1);
    for (double& v : xi.w_q.data) v = 0.0;
    CaParams theta = xi;
    for (double& v : theta.w_q.data) v = 1.0;

    CaParams keep = xi;
    ema_update(keep, theta, 0.0);
    CHECK(keep.w_q.data == xi.w_q.data);

    CaParams full = xi;
    ema_update(full, theta, 1.0);
    CHECK(full.w_q.data == theta.w_q.data);

    CaParams def = xi;
    ema_update(def, theta, cfg.eta);
    for (double v : def.w_q.data) CHECK(v == doctest::Approx(0.9).epsilon(1e-12));

    CaParams half = xi;
    ema_update(half, theta, 0.5);
    for (double v : half.w_q.data) CHECK(v == doctest::Approx(0.5).epsilon(1e-12));

    CHECK_THROWS_AS(ema_update(keep, theta, 1.5), ParamError);
}

TEST_CASE("adapt_step is deterministic and reports consistent losses") {
    DomainStream s = tiny_stream("g", 2, 3);
    AdaptConfig cfg;
    BackboneParams source = BackboneParams::seeded_init(16, 2);

    ModelState st1 = ModelState::init(source, cfg);
    ModelState st2 = ModelState::init(source, cfg);
    AdaptOutput a = adapt_step(st1, cfg, s.pairs[0].blur);
    AdaptOutput b = adapt_step(st2, cfg, s.pairs[0].blur);
    CHECK(a.restored.data == b.restored.data);
    CHECK(a.report.l_consistency == b.report.l_consistency);
    CHECK(a.report.l_consistency ==
          doctest::Approx(a.report.l_spatial + cfg.lambda * a.report.l_hf).epsilon(1e-9));
    CHECK(st1.theta_ca.w_q.data == st2.theta_ca.w_q.data);
}

TEST_CASE("backbone stays frozen through adaptation") {
    DomainStream s = tiny_stream("g", 3, 5);
    AdaptConfig cfg;
    BackboneParams source = BackboneParams::seeded_init(16, 4);
    ModelState st = ModelState::init(source, cfg);
    for (const ImagePair& p : s.pairs) adapt_step(st, cfg, p.blur);
    CHECK(st.backbone.conv1.weight.data == source.conv1.weight.data);
    CHECK(st.backbone.conv4.bias.data == source.conv4.bias.data);
    // ...while the CA parameters actually moved.
    CaParams init = CaParams::seeded_init(16, cfg.heads, cfg.head_dim, cfg.alpha, cfg.ca_seed);
    CHECK(st.theta_ca.w_q.data != init.w_q.data);
}

TEST_CASE("run_stream protocol arithmetic and ordering") {
    DomainStream a = tiny_stream("d1", 2, 11);
    DomainStream b = tiny_stream("d2", 3, 12);
    AdaptConfig cfg;
    ModelState st = ModelState::init(BackboneParams::seeded_init(16, 9), cfg);

    RunResult one = run_stream(st, cfg, {&a}, 1, false);
    CHECK(one.reports.size() == 2);

    ModelState st2 = ModelState::init(BackboneParams::seeded_init(16, 9), cfg);
    RunResult res = run_stream(st2, cfg, {&a, &b}, 3, false);
    REQUIRE(res.reports.size() == 15);
    for (int round = 0; round < 3; ++round) {
        for (int i = 0; i < 2; ++i) CHECK(res.reports[round * 5 + i].domain_id == "d1");
        for (int i = 2; i < 5; ++i) CHECK(res.reports[round * 5 + i].domain_id == "d2");
        CHECK(res.reports[round * 5].round == round + 1);
    }
    for (std::size_t i = 0; i < res.reports.size(); ++i)
        CHECK(res.reports[i].sample_index == static_cast<long>(i));

    CHECK_THROWS_AS(run_stream(st2, cfg, {}, 1), ParamError);
}

TEST_CASE("adaptation never reads ground truth") {
    DomainStream s = tiny_stream("d", 3, 21);
    AdaptConfig cfg;
    ModelState st = ModelState::init(BackboneParams::seeded_init(16, 9), cfg);
    run_stream(st, cfg, {&s}, 2, false);
    for (const ImagePair& p : s.pairs) CHECK(p.sharp_reads == 0);
}

TEST_CASE("NaN loss aborts the step but not the stream") {
    DomainStream s = tiny_stream("d", 2, 31);
    AdaptConfig cfg;
    ModelState st = ModelState::init(BackboneParams::seeded_init(16, 9), cfg);
    st.theta_ca.w_o.data[0] = std::nan("");
    std::vector<double> xi_before = st.xi_ca.w_q.data;
    RunResult res = run_stream(st, cfg, {&s}, 1, false);
    CHECK(res.numeric_errors == 2);
    CHECK(res.reports[0].numeric_error);
    CHECK(res.reports.size() == 2);
    CHECK(st.xi_ca.w_q.data == xi_before);
}

TEST_CASE("alpha 0 equals the no-vspi path") {
    DomainStream s = tiny_stream("d", 3, 41);
    BackboneParams source = BackboneParams::seeded_init(16, 6);

    AdaptConfig a0;
    a0.alpha = 0.0;
    ModelState st_a0 = ModelState::init(source, a0);
    RunResult r_a0 = run_stream(st_a0, a0, {&s}, 1, false);

    AdaptConfig nv;
    nv.ablate = AblateMode::NO_VSPI;
    ModelState st_nv = ModelState::init(source, nv);
    RunResult r_nv = run_stream(st_nv, nv, {&s}, 1, false);

    for (std::size_t i = 0; i < r_a0.reports.size(); ++i)
        CHECK(std::abs(r_a0.reports[i].l_consistency - r_nv.reports[i].l_consistency) <= 1e-6);
}

TEST_CASE("jsonl report round trip with inf handling") {
    StepReport r;
    r.sample_index = 7;
    r.domain_id = "dom";
    r.round = 2;
    r.l_spatial = 0.125;
    r.l_hf = 0.5;
    r.l_consistency = 0.13;
    r.psnr_source = std::numeric_limits<double>::infinity();
    r.psnr_adapted = 31.5;
    r.ssim_source = 0.9;
    r.ssim_adapted = 0.95;
    r.wall_ms = 12.0;

    std::string line = step_report_json(r);
    CHECK(line.find("\"sample_index\":7") != std::string::npos);
    CHECK(line.find("\"domain_id\":\"dom\"") != std::string::npos);
    CHECK(line.find("\"psnr_source\":\"inf\"") != std::string::npos);

    write_reports_jsonl({r}, "/tmp/causiam_reports.jsonl");
    std::vector<StepReport> back = read_reports_jsonl("/tmp/causiam_reports.jsonl");
    REQUIRE(back.size() == 1);
    CHECK(back[0].sample_index == 7);
    CHECK(back[0].domain_id == "dom");
    CHECK(std::isinf(back[0].psnr_source));
    CHECK(back[0].psnr_adapted == 31.5);
    CHECK(back[0].wall_ms == 12.0);
}

TEST_CASE("malformed jsonl reports the line number") {
    {
        std::ofstream f("/tmp/causiam_bad.jsonl");
        f << step_report_json(StepReport{}) << "\n";
        f << "{not json\n";
    }
    try {
        read_reports_jsonl("/tmp/causiam_bad.jsonl");
        FAIL("expected FormatError");
    } catch (const FormatError& e) {
        CHECK(std::string(e.what()).find("line 2") != std::string::npos);
    }
}
