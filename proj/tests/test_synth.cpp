#include <doctest.h>

#include <cmath>

#include "causiam/rng.hpp"
#include "causiam/synth.hpp"

using namespace causiam;

namespace {

PsfModel const_psf(PsfKind kind, int h, int w, double r) {
    PsfModel psf;
    psf.kind = kind;
    psf.radius_map = Tensor({1, h, w});
    for (double& v : psf.radius_map.data) v = r;
    return psf;
}

double channel_std(const Image& img, int c) {
    double mean = 0.0;
    const int n = img.height * img.width;
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) mean += img.at(c, y, x);
    mean /= n;
    double var = 0.0;
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) var += (img.at(c, y, x) - mean) * (img.at(c, y, x) - mean);
    return std::sqrt(var / n);
}

}  // namespace

TEST_CASE("gen_sharp is deterministic and structured") {
    Image a = gen_sharp(0, 64, 64);
    Image b = gen_sharp(0, 64, 64);
    CHECK(a.data == b.data);
    for (int c = 0; c < 3; ++c) CHECK(channel_std(a, c) > 0.05);

    Image other = gen_sharp(1, 64, 64);
    int diff = 0;
    for (std::size_t i = 0; i < a.data.size(); ++i)
        if (a.data[i] != other.data[i]) ++diff;
    CHECK(diff >= static_cast<int>(a.data.size()) / 100);

    CHECK_THROWS_AS(gen_sharp(0, 16, 64), ParamError);
}

TEST_CASE("apply_psf identity and constant invariance") {
    Image x = gen_sharp(3, 32, 32);
    Image same = apply_psf(x, const_psf(PsfKind::DISC, 32, 32, 0.0));
    CHECK(same.data == x.data);

    Image flat(32, 32);
    for (double& v : flat.data) v = 0.4;
    for (PsfKind kind : {PsfKind::DISC, PsfKind::GAUSSIAN}) {
        Image blur = apply_psf(flat, const_psf(kind, 32, 32, 2.5));
        for (double v : blur.data) CHECK(v == doctest::Approx(0.4).epsilon(1e-12));
    }
}

TEST_CASE("disc radius 2 impulse spreads to 13 lattice points at 1/13") {
    Image x(33, 33);
    x.at(0, 16, 16) = 1.0;
    x.at(1, 16, 16) = 1.0;
    x.at(2, 16, 16) = 1.0;
    Image blur = apply_psf(x, const_psf(PsfKind::DISC, 33, 33, 2.0));
    int support = 0;
    for (int y = 0; y < 33; ++y)
        for (int xx = 0; xx < 33; ++xx) {
            double v = blur.at(0, y, xx);
            if (v > 0.0) {
                ++support;
                CHECK(v == doctest::Approx(1.0 / 13.0).epsilon(1e-12));
                CHECK((y - 16) * (y - 16) + (xx - 16) * (xx - 16) <= 4);
            }
        }
    CHECK(support == 13);
}

TEST_CASE("blur is linear before clamping") {
    Image x = gen_sharp(5, 32, 32);
    Image y = gen_sharp(6, 32, 32);
    PsfModel psf = const_psf(PsfKind::GAUSSIAN, 32, 32, 1.7);
    double a = 0.3, b = 0.45;
    Image mix(32, 32);
    for (std::size_t i = 0; i < mix.data.size(); ++i) mix.data[i] = a * x.data[i] + b * y.data[i];
    Image lhs = apply_psf_unclamped(mix, psf);
    Image bx = apply_psf_unclamped(x, psf);
    Image by = apply_psf_unclamped(y, psf);
    for (std::size_t i = 0; i < lhs.data.size(); ++i)
        CHECK(lhs.data[i] == doctest::Approx(a * bx.data[i] + b * by.data[i]).epsilon(1e-10));
}

TEST_CASE("mean intensity preserved for interior-supported content") {
    // Constant margin wider than the kernel support makes the blur mass-
    // preserving despite reflect padding.
    Image x(48, 48);
    for (double& v : x.data) v = 0.5;
    Rng rng(17);
    for (int c = 0; c < 3; ++c)
        for (int y = 12; y < 36; ++y)
            for (int xx = 12; xx < 36; ++xx) x.at(c, y, xx) = rng.uniform(0.1, 0.9);
    PsfModel psf = const_psf(PsfKind::DISC, 48, 48, 2.0);
    Image blur = apply_psf_unclamped(x, psf);
    for (int c = 0; c < 3; ++c) {
        double m0 = 0.0, m1 = 0.0;
        for (int y = 0; y < 48; ++y)
            for (int xx = 0; xx < 48; ++xx) {
                m0 += x.at(c, y, xx);
                m1 += blur.at(c, y, xx);
            }
        CHECK(m0 / (48 * 48) == doctest::Approx(m1 / (48 * 48)).epsilon(1e-6));
    }
}

TEST_CASE("oversized radius rejected") {
    Image x = gen_sharp(8, 32, 32);
    CHECK_THROWS_AS(apply_psf(x, const_psf(PsfKind::DISC, 32, 32, 17.0)), ParamError);
}

TEST_CASE("gen_domain_stream protocol") {
    GeneratedStream g = gen_domain_stream("d", 3, 9, PsfKind::DISC, 1.0, 3.0);
    CHECK(g.stream.pairs.size() == 3);
    CHECK(g.manifest.size() == 3);
    for (const ImagePair& p : g.stream.pairs) CHECK(p.sharp.has_value());

    GeneratedStream disc = gen_domain_stream("d", 3, 9, PsfKind::DISC, 1.0, 3.0);
    GeneratedStream gauss = gen_domain_stream("d", 3, 9, PsfKind::GAUSSIAN, 1.0, 3.0);
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(disc.stream.pairs[i].sharp->data == gauss.stream.pairs[i].sharp->data);
        CHECK(disc.stream.pairs[i].blur.data != gauss.stream.pairs[i].blur.data);
    }

    GeneratedStream zero = gen_domain_stream("d", 2, 9, PsfKind::DISC, 0.0, 0.0);
    for (const ImagePair& p : zero.stream.pairs) CHECK(p.blur.data == p.sharp->data);

    CHECK_THROWS_AS(gen_domain_stream("d", 0, 9, PsfKind::DISC, 1.0, 3.0), ParamError);
    CHECK_THROWS_AS(gen_domain_stream("d", 2, 9, PsfKind::DISC, 3.0, 1.0), ParamError);
}

TEST_CASE("sharp access counting") {
    GeneratedStream g = gen_domain_stream("d", 1, 4, PsfKind::DISC, 1.0, 2.0);
    const ImagePair& p = g.stream.pairs[0];
    CHECK(p.sharp_reads == 0);
    (void)p.sharp_ref();
    CHECK(p.sharp_reads == 1);
    ImagePair empty;
    CHECK_THROWS_AS(empty.sharp_ref(), StateError);
}
