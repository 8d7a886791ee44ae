#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <fstream>

#include "causiam/rng.hpp"
#include "causiam/semantic.hpp"

using namespace causiam;

namespace {

Image random_image(std::uint64_t seed, int h, int w, double lo = 0.0, double hi = 1.0) {
    Image img(h, w);
    Rng rng(seed);
    for (double& v : img.data) v = rng.uniform(lo, hi);
    return img;
}

SemanticTokens random_tokens(std::uint64_t seed, int count) {
    SemanticTokens s;
    s.tokens = Tensor({count, kSemanticChannels});
    Rng rng(seed);
    for (double& v : s.tokens.data) v = rng.uniform(-1.0, 1.0);
    for (int t = 0; t < count; ++t) {
        double norm = 0.0;
        for (int c = 0; c < kSemanticChannels; ++c)
            norm += s.tokens.at2(t, c) * s.tokens.at2(t, c);
        norm = std::sqrt(norm);
        for (int c = 0; c < kSemanticChannels; ++c) s.tokens.at2(t, c) /= norm;
    }
    return s;
}

/// Independent dense oracle for the cross-attention forward pass.
Tensor ca_oracle(const Tensor& z_s, const SemanticTokens& s, const CaParams& p) {
    const int C = z_s.extent(0), H = z_s.extent(1), W = z_s.extent(2);
    const int N = H * W, T = s.tokens.extent(0), hd = p.heads * p.head_dim;
    auto affine = [](const Tensor& w, const Tensor& b, const std::vector<double>& in) {
        std::vector<double> out(static_cast<std::size_t>(w.extent(0)), 0.0);
        for (int o = 0; o < w.extent(0); ++o) {
            double acc = b.data[static_cast<std::size_t>(o)];
            for (int i = 0; i < w.extent(1); ++i)
                acc += w.at2(o, i) * in[static_cast<std::size_t>(i)];
            out[static_cast<std::size_t>(o)] = acc;
        }
        return out;
    };
    // Gather per-position channel vectors.
    std::vector<std::vector<double>> z(static_cast<std::size_t>(N));
    for (int n = 0; n < N; ++n) {
        z[static_cast<std::size_t>(n)].resize(static_cast<std::size_t>(C));
        for (int c = 0; c < C; ++c)
            z[static_cast<std::size_t>(n)][static_cast<std::size_t>(c)] = z_s.at3(c, n / W, n % W);
    }
    std::vector<std::vector<double>> k(static_cast<std::size_t>(T)), v(static_cast<std::size_t>(T));
    for (int t = 0; t < T; ++t) {
        std::vector<double> row(static_cast<std::size_t>(kSemanticChannels));
        for (int c = 0; c < kSemanticChannels; ++c)
            row[static_cast<std::size_t>(c)] = s.tokens.at2(t, c);
        k[static_cast<std::size_t>(t)] = affine(p.w_k, p.b_k, row);
        v[static_cast<std::size_t>(t)] = affine(p.w_v, p.b_v, row);
    }
    Tensor out = z_s;
    for (int n = 0; n < N; ++n) {
        std::vector<double> q = affine(p.w_q, p.b_q, z[static_cast<std::size_t>(n)]);
        std::vector<double> heads_out(static_cast<std::size_t>(hd), 0.0);
        for (int h = 0; h < p.heads; ++h) {
            std::vector<double> logits(static_cast<std::size_t>(T));
            for (int t = 0; t < T; ++t) {
                double dot = 0.0;
                for (int d = 0; d < p.head_dim; ++d)
                    dot += q[static_cast<std::size_t>(h * p.head_dim + d)] *
                           k[static_cast<std::size_t>(t)][static_cast<std::size_t>(h * p.head_dim + d)];
                logits[static_cast<std::size_t>(t)] = dot / std::sqrt(static_cast<double>(p.head_dim));
            }
            double mx = logits[0];
            for (double l : logits) mx = std::max(mx, l);
            double zsum = 0.0;
            for (double& l : logits) {
                l = std::exp(l - mx);
                zsum += l;
            }
            for (int t = 0; t < T; ++t)
                for (int d = 0; d < p.head_dim; ++d)
                    heads_out[static_cast<std::size_t>(h * p.head_dim + d)] +=
                        logits[static_cast<std::size_t>(t)] / zsum *
                        v[static_cast<std::size_t>(t)][static_cast<std::size_t>(h * p.head_dim + d)];
        }
        std::vector<double> proj = affine(p.w_o, p.b_o, heads_out);
        for (int c = 0; c < C; ++c)
            out.at3(c, n / W, n % W) =
                p.alpha * proj[static_cast<std::size_t>(c)] + z_s.at3(c, n / W, n % W);
    }
    return out;
}

}  // namespace

TEST_CASE("encoder: constant image yields identical normalized tokens") {
    Image gray(40, 40);
    for (double& v : gray.data) v = 0.5;
    SemanticTokens s = encode_semantic(gray);
    CHECK(s.count() == 50);
    for (int t = 1; t < 50; ++t)
        for (int c = 0; c < kSemanticChannels; ++c)
            CHECK(s.tokens.at2(t, c) == doctest::Approx(s.tokens.at2(0, c)).epsilon(1e-9));
    for (int t = 0; t < 50; ++t) {
        double norm = 0.0;
        for (int c = 0; c < kSemanticChannels; ++c) norm += s.tokens.at2(t, c) * s.tokens.at2(t, c);
        CHECK(std::sqrt(norm) == doctest::Approx(1.0).epsilon(1e-6));
    }
}

TEST_CASE("encoder clamps its input first") {
    Image a = random_image(5, 30, 30);
    Image b = a;
    b.data[0] = -3.0;
    a.data[0] = 0.0;
    b.data[10] = 7.0;
    a.data[10] = 1.0;
    SemanticTokens sa = encode_semantic(a);
    SemanticTokens sb = encode_semantic(b);
    CHECK(sa.tokens.data == sb.tokens.data);
}

TEST_CASE("encoder is deterministic") {
    Image x = random_image(8, 48, 64);
    CHECK(encode_semantic(x).tokens.data == encode_semantic(x).tokens.data);
}

TEST_CASE("token file round trip and channel validation") {
    SemanticTokens s = random_tokens(3, 5);
    save_tokens(s, "/tmp/causiam_tokens.cstk");
    SemanticTokens back = load_tokens("/tmp/causiam_tokens.cstk");
    CHECK(back.source == TokenSource::EXTERNAL);
    REQUIRE(back.tokens.shape == s.tokens.shape);
    for (std::size_t i = 0; i < s.tokens.data.size(); ++i)
        CHECK(static_cast<float>(back.tokens.data[i]) == static_cast<float>(s.tokens.data[i]));

    // Corrupt the channel count in the header.
    {
        std::ifstream in("/tmp/causiam_tokens.cstk", std::ios::binary);
        std::vector<char> bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
        bytes[9] = 1;  // u32 channels little-endian starts at offset 9 (5 magic + 4 count)
        std::ofstream out("/tmp/causiam_tokens_bad.cstk", std::ios::binary);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    }
    CHECK_THROWS_AS(load_tokens("/tmp/causiam_tokens_bad.cstk"), FormatError);
}

TEST_CASE("ca_forward: alpha 0 is the identity") {
    CaParams p = CaParams::seeded_init(16, 4, 4, 0.0, 7);
    SemanticTokens s = random_tokens(9, 10);
    Tensor z({16, 4, 4});
    Rng rng(10);
    for (double& v : z.data) v = rng.uniform(-1.0, 1.0);
    Tensor out = ca_forward(z, s, p);
    CHECK(out.data == z.data);
}

TEST_CASE("ca_forward: zero W_Q gives uniform attention and spatially constant offset") {
    CaParams p = CaParams::seeded_init(16, 4, 4, 0.1, 7);
    for (double& v : p.w_q.data) v = 0.0;
    for (double& v : p.b_q.data) v = 0.0;
    SemanticTokens s = random_tokens(11, 6);
    Tensor z({16, 3, 3});
    Rng rng(12);
    for (double& v : z.data) v = rng.uniform(-1.0, 1.0);
    CaCache cache;
    Tensor out = ca_forward(z, s, p, &cache);
    // All attention rows uniform 1/T.
    for (double a : cache.attn.data) CHECK(a == doctest::Approx(1.0 / 6.0).epsilon(1e-12));
    // Added offset identical at every spatial position.
    for (int c = 0; c < 16; ++c) {
        double delta = out.at3(c, 0, 0) - z.at3(c, 0, 0);
        for (int y = 0; y < 3; ++y)
            for (int x = 0; x < 3; ++x)
                CHECK(out.at3(c, y, x) - z.at3(c, y, x) == doctest::Approx(delta).epsilon(1e-12));
    }
}

TEST_CASE("ca_forward matches the dense oracle") {
    for (std::uint64_t seed : {1ULL, 2ULL, 3ULL}) {
        CaParams p = CaParams::seeded_init(6, 2, 3, 0.05, seed);
        SemanticTokens s = random_tokens(seed + 50, 4);
        Tensor z({6, 2, 2});
        Rng rng(seed + 100);
        for (double& v : z.data) v = rng.uniform(-1.0, 1.0);
        Tensor got = ca_forward(z, s, p);
        Tensor want = ca_oracle(z, s, p);
        for (std::size_t i = 0; i < got.data.size(); ++i)
            CHECK(got.data[i] == doctest::Approx(want.data[i]).epsilon(1e-12));
    }
}

TEST_CASE("attention rows sum to one") {
    CaParams p = CaParams::seeded_init(16, 4, 4, 0.05, 21);
    SemanticTokens s = random_tokens(22, 7);
    Tensor z({16, 3, 2});
    Rng rng(23);
    for (double& v : z.data) v = rng.uniform(-1.0, 1.0);
    CaCache cache;
    ca_forward(z, s, p, &cache);
    const int T = 7, N = 6;
    for (int h = 0; h < 4; ++h)
        for (int n = 0; n < N; ++n) {
            double row = 0.0;
            for (int t = 0; t < T; ++t)
                row += cache.attn.data[static_cast<std::size_t>((h * N + n) * T + t)];
            CHECK(row == doctest::Approx(1.0).epsilon(1e-6));
        }
}

TEST_CASE("single token attention degenerates to an affine map of V") {
    CaParams p = CaParams::seeded_init(8, 2, 4, 0.05, 31);
    SemanticTokens s = random_tokens(32, 1);
    Tensor z({8, 2, 2});
    Rng rng(33);
    for (double& v : z.data) v = rng.uniform(-1.0, 1.0);
    Tensor out = ca_forward(z, s, p);
    // With one key the attention weight is 1; delta = alpha*(W_O V + b_O),
    // the same at every position.
    for (int c = 0; c < 8; ++c) {
        double delta = out.at3(c, 0, 0) - z.at3(c, 0, 0);
        for (int y = 0; y < 2; ++y)
            for (int x = 0; x < 2; ++x)
                CHECK(out.at3(c, y, x) - z.at3(c, y, x) == doctest::Approx(delta).epsilon(1e-12));
    }
}

TEST_CASE("positive scaling of a row of key logits preserves its argmax") {
    Rng rng(44);
    std::vector<double> logits(9);
    for (double& l : logits) l = rng.uniform(-2.0, 2.0);
    auto argmax = [](const std::vector<double>& v) {
        return std::distance(v.begin(), std::max_element(v.begin(), v.end()));
    };
    auto base = argmax(logits);
    for (double c : {0.1, 1.0, 7.5}) {
        std::vector<double> scaled = logits;
        for (double& l : scaled) l *= c;
        CHECK(argmax(scaled) == base);
    }
}

TEST_CASE("ca_backward matches finite differences for every parameter") {
    CaParams p = CaParams::seeded_init(4, 2, 2, 0.05, 55);
    SemanticTokens s = random_tokens(56, 3);
    Tensor z({4, 2, 2});
    Rng rng(57);
    for (double& v : z.data) v = rng.uniform(-1.0, 1.0);
    Tensor w({4, 2, 2});
    for (double& v : w.data) v = rng.uniform(-1.0, 1.0);

    CaCache cache;
    ca_forward(z, s, p, &cache);
    Tensor grad_z;
    CaGrads grads = ca_backward(p, cache, w, grad_z);

    auto loss = [&]() {
        Tensor out = ca_forward(z, s, p);
        double l = 0.0;
        for (std::size_t i = 0; i < out.data.size(); ++i) l += out.data[i] * w.data[i];
        return l;
    };
    const double h = 1e-4;
    auto fd_check = [&](Tensor& param, const Tensor& grad) {
        REQUIRE(param.shape == grad.shape);
        for (std::size_t i = 0; i < param.data.size(); ++i) {
            double keep = param.data[i];
            param.data[i] = keep + h;
            double lp = loss();
            param.data[i] = keep - h;
            double lm = loss();
            param.data[i] = keep;
            double fd = (lp - lm) / (2 * h);
            double denom = std::max({std::abs(fd), std::abs(grad.data[i]), 1e-6});
            CHECK(std::abs(fd - grad.data[i]) / denom <= 1e-4);
        }
    };
    fd_check(p.w_q, grads.w_q);
    fd_check(p.b_q, grads.b_q);
    fd_check(p.w_k, grads.w_k);
    fd_check(p.b_k, grads.b_k);
    fd_check(p.w_v, grads.w_v);
    fd_check(p.b_v, grads.b_v);
    fd_check(p.w_o, grads.w_o);
    fd_check(p.b_o, grads.b_o);

    // grad wrt z_s by finite differences too.
    for (std::size_t i = 0; i < z.data.size(); i += 2) {
        double keep = z.data[i];
        z.data[i] = keep + h;
        double lp = loss();
        z.data[i] = keep - h;
        double lm = loss();
        z.data[i] = keep;
        double fd = (lp - lm) / (2 * h);
        double denom = std::max({std::abs(fd), std::abs(grad_z.data[i]), 1e-6});
        CHECK(std::abs(fd - grad_z.data[i]) / denom <= 1e-4);
    }
}

TEST_CASE("alpha 0 backward: pass-through gradient, zero weight grads") {
    CaParams p = CaParams::seeded_init(4, 2, 2, 0.0, 66);
    SemanticTokens s = random_tokens(67, 3);
    Tensor z({4, 2, 2});
    Rng rng(68);
    for (double& v : z.data) v = rng.uniform(-1.0, 1.0);
    Tensor w({4, 2, 2});
    for (double& v : w.data) v = rng.uniform(-1.0, 1.0);
    CaCache cache;
    ca_forward(z, s, p, &cache);
    Tensor grad_z;
    CaGrads grads = ca_backward(p, cache, w, grad_z);
    CHECK(grad_z.data == w.data);
    for (const Tensor* t : {&grads.w_q, &grads.b_q, &grads.w_k, &grads.b_k, &grads.w_v, &grads.b_v,
                            &grads.w_o, &grads.b_o})
        for (double v : t->data) CHECK(v == 0.0);
}

TEST_CASE("fan-in token width is enforced") {
    CaParams p = CaParams::seeded_init(4, 2, 2, 0.05, 77);
    SemanticTokens bad;
    bad.tokens = Tensor({3, 16});
    Tensor z({4, 2, 2});
    CHECK_THROWS_AS(ca_forward(z, bad, p), ShapeError);
}
