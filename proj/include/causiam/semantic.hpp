#pragma once

#include <cstdint>
#include <functional>
#include <string>

#include "causiam/tensor.hpp"

namespace causiam {

constexpr int kSemanticChannels = 512;

enum class TokenSource { STANDIN, EXTERNAL };

/// Universal semantic prior embeddings: T tokens of 512 channels, each
/// L2-normalized. The stand-in encoder emits 49 patch tokens + 1 global.
struct SemanticTokens {
    Tensor tokens;  // (T, 512)
    TokenSource source = TokenSource::STANDIN;

    int count() const { return tokens.extent(0); }
};

/// Stand-in semantic encoder: bilinear resize to 224x224, 7x7 grid of 32x32
/// patches, 8 statistics per patch (channel means, channel stds, horizontal
/// and vertical gradient energies), fixed seeded 8->512 projection,
/// L2 normalization, plus a normalized-mean global token.
SemanticTokens encode_semantic(const Image& restored);

/// "CSTK1" token file: magic, u32 token count, u32 channels (must be 512),
/// little-endian f32 row-major payload.
SemanticTokens load_tokens(const std::string& path);
void save_tokens(const SemanticTokens& tokens, const std::string& path);

Image resize_bilinear(const Image& img, int out_h, int out_w);

// ---------------- Cross-attention module ----------------

/// The only parameters trained at test time. Toy default: 4 heads of dim 4
/// so heads*dim == C and W_O can start as identity.
struct CaParams {
    int heads = 4;
    int head_dim = 4;
    double alpha = 0.05;
    Tensor w_q, b_q;  // (h*d, C), (h*d)
    Tensor w_k, b_k;  // (h*d, 512), (h*d)
    Tensor w_v, b_v;  // (h*d, 512), (h*d)
    Tensor w_o, b_o;  // (C, h*d), (C)

    static CaParams seeded_init(int channels, int heads, int head_dim, double alpha,
                                std::uint64_t seed);
    bool same_shape(const CaParams& o) const;
};

struct CaCache {
    Tensor z_tokens;   // (N, C) flattened queries
    Tensor q, k, v;    // (N, h*d), (T, h*d), (T, h*d)
    Tensor attn;       // (heads, N, T) softmax rows
    Tensor heads_out;  // (N, h*d) concatenated head outputs
    Tensor s_tokens;   // (T, 512)
    int h = 0, w = 0;
    bool valid = false;
};

struct CaGrads {
    Tensor w_q, b_q, w_k, b_k, w_v, b_v, w_o, b_o;
};

/// z_s' = alpha * W_O(multi-head attention(z_s; s)) + z_s, shape-preserving.
Tensor ca_forward(const Tensor& z_s, const SemanticTokens& s, const CaParams& p,
                  CaCache* cache = nullptr);

/// Exact reverse mode. Returns gradients for the CA parameters and writes the
/// pass-through gradient w.r.t. z_s into grad_z_s.
CaGrads ca_backward(const CaParams& p, const CaCache& cache, const Tensor& grad_out,
                    Tensor& grad_z_s);

// Elementwise helpers for EMA / Adam over the CA parameter set.
void for_each_param(CaParams& p, const std::function<void(const std::string&, Tensor&)>& fn);
void for_each_param(const CaParams& p,
                    const std::function<void(const std::string&, const Tensor&)>& fn);

}  // namespace causiam
