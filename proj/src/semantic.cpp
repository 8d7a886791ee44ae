#include "causiam/semantic.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "causiam/errors.hpp"
#include "causiam/rng.hpp"

namespace causiam {

Image resize_bilinear(const Image& img, int out_h, int out_w) {
    Image out(out_h, out_w);
    double sy = static_cast<double>(img.height) / out_h;
    double sx = static_cast<double>(img.width) / out_w;
    for (int y = 0; y < out_h; ++y) {
        double fy = (y + 0.5) * sy - 0.5;
        int y0 = static_cast<int>(std::floor(fy));
        double ty = fy - y0;
        int ya = std::clamp(y0, 0, img.height - 1);
        int yb = std::clamp(y0 + 1, 0, img.height - 1);
        for (int x = 0; x < out_w; ++x) {
            double fx = (x + 0.5) * sx - 0.5;
            int x0 = static_cast<int>(std::floor(fx));
            double tx = fx - x0;
            int xa = std::clamp(x0, 0, img.width - 1);
            int xb = std::clamp(x0 + 1, 0, img.width - 1);
            for (int c = 0; c < 3; ++c) {
                double top = img.at(c, ya, xa) * (1 - tx) + img.at(c, ya, xb) * tx;
                double bot = img.at(c, yb, xa) * (1 - tx) + img.at(c, yb, xb) * tx;
                out.at(c, y, x) = top * (1 - ty) + bot * ty;
            }
        }
    }
    return out;
}

namespace {

constexpr int kPatch = 32;
constexpr int kGrid = 7;  // 224/32
constexpr int kStats = 8;

// Fixed 8->512 projection shared by every stand-in encoding.
const Tensor& standin_projection() {
    static Tensor proj = [] {
        Tensor p({kStats, kSemanticChannels});
        Rng rng(0x53454d50524f4a31ULL);  // constant seed; not user-tunable
        for (double& v : p.data) v = rng.normal();
        return p;
    }();
    return proj;
}

void l2_normalize_row(Tensor& t, int row) {
    double norm = 0.0;
    for (int c = 0; c < t.extent(1); ++c) norm += t.at2(row, c) * t.at2(row, c);
    norm = std::sqrt(norm);
    if (norm < 1e-12) {
        // Degenerate token: fall back to a unit vector on channel 0.
        t.at2(row, 0) = 1.0;
        return;
    }
    for (int c = 0; c < t.extent(1); ++c) t.at2(row, c) /= norm;
}

}  // namespace

SemanticTokens encode_semantic(const Image& restored) {
    Image clamped = restored;
    clamped.clamp01();
    Image r = resize_bilinear(clamped, kPatch * kGrid, kPatch * kGrid);

    const Tensor& proj = standin_projection();
    SemanticTokens out;
    out.source = TokenSource::STANDIN;
    out.tokens = Tensor({kGrid * kGrid + 1, kSemanticChannels});

    for (int gy = 0; gy < kGrid; ++gy)
        for (int gx = 0; gx < kGrid; ++gx) {
            double stats[kStats] = {0};
            const int oy = gy * kPatch, ox = gx * kPatch;
            const double n = kPatch * kPatch;
            for (int c = 0; c < 3; ++c) {
                double sum = 0, sum2 = 0;
                for (int y = 0; y < kPatch; ++y)
                    for (int x = 0; x < kPatch; ++x) {
                        double v = r.at(c, oy + y, ox + x);
                        sum += v;
                        sum2 += v * v;
                    }
                double mean = sum / n;
                stats[c] = mean;
                stats[3 + c] = std::sqrt(std::max(0.0, sum2 / n - mean * mean));
            }
            double gh = 0, gv = 0;
            for (int c = 0; c < 3; ++c) {
                for (int y = 0; y < kPatch; ++y)
                    for (int x = 0; x + 1 < kPatch; ++x) {
                        double d = r.at(c, oy + y, ox + x + 1) - r.at(c, oy + y, ox + x);
                        gh += d * d;
                    }
                for (int y = 0; y + 1 < kPatch; ++y)
                    for (int x = 0; x < kPatch; ++x) {
                        double d = r.at(c, oy + y + 1, ox + x) - r.at(c, oy + y, ox + x);
                        gv += d * d;
                    }
            }
            stats[6] = gh / (3.0 * kPatch * (kPatch - 1));
            stats[7] = gv / (3.0 * kPatch * (kPatch - 1));

            int row = gy * kGrid + gx;
            for (int ch = 0; ch < kSemanticChannels; ++ch) {
                double acc = 0.0;
                for (int s = 0; s < kStats; ++s) acc += stats[s] * proj.at2(s, ch);
                out.tokens.at2(row, ch) = acc;
            }
            l2_normalize_row(out.tokens, row);
        }

    // Global token: normalized mean of the patch tokens.
    int global = kGrid * kGrid;
    for (int ch = 0; ch < kSemanticChannels; ++ch) {
        double acc = 0.0;
        for (int row = 0; row < global; ++row) acc += out.tokens.at2(row, ch);
        out.tokens.at2(global, ch) = acc / global;
    }
    l2_normalize_row(out.tokens, global);
    return out;
}

// ---------------- Token file I/O ----------------

namespace {
constexpr char kTokenMagic[5] = {'C', 'S', 'T', 'K', '1'};

void put_u32le(std::ofstream& f, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    f.write(reinterpret_cast<char*>(b), 4);
}

std::uint32_t get_u32le(std::ifstream& f) {
    unsigned char b[4];
    f.read(reinterpret_cast<char*>(b), 4);
    if (!f) throw FormatError("truncated token file");
    return b[0] | b[1] << 8 | b[2] << 16 | static_cast<std::uint32_t>(b[3]) << 24;
}
}  // namespace

SemanticTokens load_tokens(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open token file: " + path);
    char magic[5];
    f.read(magic, 5);
    if (!f || std::memcmp(magic, kTokenMagic, 5) != 0) throw FormatError("bad token file magic");
    std::uint32_t t = get_u32le(f);
    std::uint32_t ch = get_u32le(f);
    if (ch != kSemanticChannels) throw FormatError("token file channel count must be 512");
    if (t == 0) throw FormatError("token file has no tokens");
    SemanticTokens out;
    out.source = TokenSource::EXTERNAL;
    out.tokens = Tensor({static_cast<int>(t), kSemanticChannels});
    std::vector<float> buf(out.tokens.numel());
    f.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * 4));
    if (!f) throw FormatError("truncated token payload");
    for (std::size_t i = 0; i < buf.size(); ++i) out.tokens.data[i] = buf[i];
    return out;
}

void save_tokens(const SemanticTokens& tokens, const std::string& path) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write token file: " + path);
    f.write(kTokenMagic, 5);
    put_u32le(f, static_cast<std::uint32_t>(tokens.tokens.extent(0)));
    put_u32le(f, static_cast<std::uint32_t>(tokens.tokens.extent(1)));
    std::vector<float> buf(tokens.tokens.numel());
    for (std::size_t i = 0; i < buf.size(); ++i) buf[i] = static_cast<float>(tokens.tokens.data[i]);
    f.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * 4));
    if (!f) throw IoError("short write: " + path);
}

// ---------------- Cross-attention ----------------

CaParams CaParams::seeded_init(int channels, int heads, int head_dim, double alpha,
                               std::uint64_t seed) {
    if (alpha < 0.0) throw ParamError("CA alpha must be non-negative");
    CaParams p;
    p.heads = heads;
    p.head_dim = head_dim;
    p.alpha = alpha;
    const int hd = heads * head_dim;
    p.w_q = Tensor({hd, channels});
    p.b_q = Tensor({hd});
    p.w_k = Tensor({hd, kSemanticChannels});
    p.b_k = Tensor({hd});
    p.w_v = Tensor({hd, kSemanticChannels});
    p.b_v = Tensor({hd});
    p.w_o = Tensor({channels, hd});
    p.b_o = Tensor({channels});

    Rng rng(seed ^ 0xca11ab1eULL);
    auto fill = [&](Tensor& t, int fan_in) {
        double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        for (double& v : t.data) v = rng.uniform(-bound, bound);
    };
    fill(p.w_q, channels);
    fill(p.w_k, kSemanticChannels);
    fill(p.w_v, kSemanticChannels);
    if (hd == channels) {
        for (int i = 0; i < channels; ++i) p.w_o.at2(i, i) = 1.0;  // identity start
    } else {
        fill(p.w_o, hd);
    }
    return p;
}

bool CaParams::same_shape(const CaParams& o) const {
    return heads == o.heads && head_dim == o.head_dim && w_q.shape == o.w_q.shape &&
           w_k.shape == o.w_k.shape && w_v.shape == o.w_v.shape && w_o.shape == o.w_o.shape;
}

Tensor ca_forward(const Tensor& z_s, const SemanticTokens& s, const CaParams& p, CaCache* cache) {
    if (z_s.rank() != 3) throw ShapeError("ca_forward expects (C,H,W)");
    const int C = z_s.extent(0), H = z_s.extent(1), W = z_s.extent(2);
    if (p.w_q.extent(1) != C) throw ShapeError("ca_forward: channel count does not match W_Q");
    if (s.tokens.extent(1) != kSemanticChannels) throw ShapeError("semantic token dim must be 512");
    const int N = H * W;
    const int T = s.tokens.extent(0);
    const int hd = p.heads * p.head_dim;
    const double scale = 1.0 / std::sqrt(static_cast<double>(p.head_dim));

    // Flatten spatial positions into query tokens.
    Tensor z_tok({N, C});
    for (int c = 0; c < C; ++c)
        for (int n = 0; n < N; ++n) z_tok.at2(n, c) = z_s.data[static_cast<std::size_t>(c) * N + n];

    Tensor q({N, hd});
    for (int n = 0; n < N; ++n)
        for (int j = 0; j < hd; ++j) {
            double acc = p.b_q[j];
            for (int c = 0; c < C; ++c) acc += p.w_q.at2(j, c) * z_tok.at2(n, c);
            q.at2(n, j) = acc;
        }
    Tensor k({T, hd}), v({T, hd});
    for (int t = 0; t < T; ++t)
        for (int j = 0; j < hd; ++j) {
            double ak = p.b_k[j], av = p.b_v[j];
            for (int c = 0; c < kSemanticChannels; ++c) {
                double sv = s.tokens.at2(t, c);
                ak += p.w_k.at2(j, c) * sv;
                av += p.w_v.at2(j, c) * sv;
            }
            k.at2(t, j) = ak;
            v.at2(t, j) = av;
        }

    Tensor attn({p.heads, N, T});
    Tensor heads_out({N, hd});
    std::vector<double> logits(static_cast<std::size_t>(T));
    for (int h = 0; h < p.heads; ++h) {
        const int off = h * p.head_dim;
        for (int n = 0; n < N; ++n) {
            double max_logit = -1e300;
            for (int t = 0; t < T; ++t) {
                double acc = 0.0;
                for (int d = 0; d < p.head_dim; ++d) acc += q.at2(n, off + d) * k.at2(t, off + d);
                logits[t] = acc * scale;
                max_logit = std::max(max_logit, logits[t]);
            }
            double denom = 0.0;
            for (int t = 0; t < T; ++t) {
                logits[t] = std::exp(logits[t] - max_logit);
                denom += logits[t];
            }
            std::size_t base = (static_cast<std::size_t>(h) * N + n) * T;
            for (int t = 0; t < T; ++t) attn.data[base + t] = logits[t] / denom;
            for (int d = 0; d < p.head_dim; ++d) {
                double acc = 0.0;
                for (int t = 0; t < T; ++t) acc += attn.data[base + t] * v.at2(t, off + d);
                heads_out.at2(n, off + d) = acc;
            }
        }
    }

    Tensor out = z_s;  // residual: z' = alpha * proj + z_s
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            double acc = p.b_o[c];
            for (int j = 0; j < hd; ++j) acc += p.w_o.at2(c, j) * heads_out.at2(n, j);
            out.data[static_cast<std::size_t>(c) * N + n] += p.alpha * acc;
        }

    if (cache) {
        cache->z_tokens = std::move(z_tok);
        cache->q = std::move(q);
        cache->k = std::move(k);
        cache->v = std::move(v);
        cache->attn = std::move(attn);
        cache->heads_out = std::move(heads_out);
        cache->s_tokens = s.tokens;
        cache->h = H;
        cache->w = W;
        cache->valid = true;
    }
    return out;
}

CaGrads ca_backward(const CaParams& p, const CaCache& cache, const Tensor& grad_out,
                    Tensor& grad_z_s) {
    if (!cache.valid) throw StateError("ca_backward: forward cache missing");
    const int C = p.w_q.extent(1);
    const int N = cache.h * cache.w;
    const int T = cache.k.extent(0);
    const int hd = p.heads * p.head_dim;
    const double scale = 1.0 / std::sqrt(static_cast<double>(p.head_dim));

    CaGrads g;
    g.w_q = Tensor(p.w_q.shape);
    g.b_q = Tensor(p.b_q.shape);
    g.w_k = Tensor(p.w_k.shape);
    g.b_k = Tensor(p.b_k.shape);
    g.w_v = Tensor(p.w_v.shape);
    g.b_v = Tensor(p.b_v.shape);
    g.w_o = Tensor(p.w_o.shape);
    g.b_o = Tensor(p.b_o.shape);

    // Residual pass-through.
    grad_z_s = grad_out;

    // grad through out = alpha * (heads_out W_O^T + b_O).
    Tensor g_tok({N, C});  // grad w.r.t. the alpha-scaled projection output per token
    for (int c = 0; c < C; ++c)
        for (int n = 0; n < N; ++n)
            g_tok.at2(n, c) = p.alpha * grad_out.data[static_cast<std::size_t>(c) * N + n];

    Tensor g_heads({N, hd});
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            double gv = g_tok.at2(n, c);
            g.b_o[c] += gv;
            for (int j = 0; j < hd; ++j) {
                g.w_o.at2(c, j) += gv * cache.heads_out.at2(n, j);
                g_heads.at2(n, j) += gv * p.w_o.at2(c, j);
            }
        }

    Tensor g_q({N, hd}), g_k({T, hd}), g_v({T, hd});
    std::vector<double> g_attn(static_cast<std::size_t>(T));
    for (int h = 0; h < p.heads; ++h) {
        const int off = h * p.head_dim;
        for (int n = 0; n < N; ++n) {
            std::size_t base = (static_cast<std::size_t>(h) * N + n) * T;
            // dA and dV from head output = A V.
            double dot = 0.0;
            for (int t = 0; t < T; ++t) {
                double da = 0.0;
                for (int d = 0; d < p.head_dim; ++d)
                    da += g_heads.at2(n, off + d) * cache.v.at2(t, off + d);
                g_attn[t] = da;
                dot += da * cache.attn.data[base + t];
                for (int d = 0; d < p.head_dim; ++d)
                    g_v.at2(t, off + d) += cache.attn.data[base + t] * g_heads.at2(n, off + d);
            }
            // Softmax Jacobian: dlogit = A * (dA - sum(dA*A)).
            for (int t = 0; t < T; ++t) {
                double dlogit = cache.attn.data[base + t] * (g_attn[t] - dot);
                double ds = dlogit * scale;
                for (int d = 0; d < p.head_dim; ++d) {
                    g_q.at2(n, off + d) += ds * cache.k.at2(t, off + d);
                    g_k.at2(t, off + d) += ds * cache.q.at2(n, off + d);
                }
            }
        }
    }

    // Q = z W_Q^T + b_Q: parameter grads plus the query-path grad into z_s.
    for (int n = 0; n < N; ++n)
        for (int j = 0; j < hd; ++j) {
            double gq = g_q.at2(n, j);
            if (gq == 0.0) continue;
            g.b_q[j] += gq;
            for (int c = 0; c < C; ++c) {
                g.w_q.at2(j, c) += gq * cache.z_tokens.at2(n, c);
                grad_z_s.data[static_cast<std::size_t>(c) * N + n] += gq * p.w_q.at2(j, c);
            }
        }
    for (int t = 0; t < T; ++t)
        for (int j = 0; j < hd; ++j) {
            double gk = g_k.at2(t, j), gv = g_v.at2(t, j);
            g.b_k[j] += gk;
            g.b_v[j] += gv;
            for (int c = 0; c < kSemanticChannels; ++c) {
                double sv = cache.s_tokens.at2(t, c);
                g.w_k.at2(j, c) += gk * sv;
                g.w_v.at2(j, c) += gv * sv;
            }
        }
    return g;
}

void for_each_param(CaParams& p, const std::function<void(const std::string&, Tensor&)>& fn) {
    fn("ca.w_q", p.w_q);
    fn("ca.b_q", p.b_q);
    fn("ca.w_k", p.w_k);
    fn("ca.b_k", p.b_k);
    fn("ca.w_v", p.w_v);
    fn("ca.b_v", p.b_v);
    fn("ca.w_o", p.w_o);
    fn("ca.b_o", p.b_o);
}

void for_each_param(const CaParams& p,
                    const std::function<void(const std::string&, const Tensor&)>& fn) {
    fn("ca.w_q", p.w_q);
    fn("ca.b_q", p.b_q);
    fn("ca.w_k", p.w_k);
    fn("ca.b_k", p.b_k);
    fn("ca.w_v", p.w_v);
    fn("ca.b_v", p.b_v);
    fn("ca.w_o", p.w_o);
    fn("ca.b_o", p.b_o);
}

}  // namespace causiam
