#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "causiam/semantic.hpp"
#include "causiam/synth.hpp"
#include "causiam/tensor.hpp"

namespace causiam {

/// Conv weights are stored as (out_ch, in_ch, 3, 3); all convs are stride 1
/// with reflect padding 1, so the network preserves resolution.
struct ConvLayer {
    Tensor weight;  // (out, in, 3, 3)
    Tensor bias;    // (out)
};

/// 4-conv residual encoder-bottleneck-decoder:
///   z_s = relu(conv2(relu(conv1(x))))            (bottleneck, C channels)
///   z   = ca(z_s, tokens)  when a CA module is attached
///   out = clamp(x + conv4(relu(conv3(z))), 0, 1)
struct BackboneParams {
    int channels = 16;
    ConvLayer conv1, conv2, conv3, conv4;

    static BackboneParams seeded_init(int channels, std::uint64_t seed);
    bool same_shape(const BackboneParams& o) const;
};

struct BackboneGrads {
    Tensor conv1_w, conv1_b, conv2_w, conv2_b, conv3_w, conv3_b, conv4_w, conv4_b;
};

/// Cached activations for reverse mode.
struct ForwardCache {
    Image x;
    Tensor a1, r1;       // conv1 out, relu1 out
    Tensor a2, z_s;      // conv2 out, relu2 out (bottleneck)
    CaCache ca;          // present when CA was applied
    bool has_ca = false;
    Tensor z_in3;        // CA output (or z_s) feeding conv3
    Tensor a3, r3;       // conv3 out, relu3 out
    Tensor a4;           // conv4 out (residual delta)
    Tensor pre_clamp;    // x + delta
    bool valid = false;
};

struct ForwardResult {
    Image restored;
    Tensor z_s;
};

ForwardResult forward(const BackboneParams& params, const CaParams* ca, const SemanticTokens* tokens,
                      const Image& x, ForwardCache* cache = nullptr);

struct BackwardResult {
    std::optional<BackboneGrads> backbone;
    std::optional<CaGrads> ca;
};

/// Reverse mode through clamp/residual/convs (and CA when present).
/// The clamp subgradient is 1 inside [0,1] and at the boundary, 0 outside.
BackwardResult backward(const BackboneParams& params, const CaParams* ca, const ForwardCache& cache,
                        const Tensor& grad_restored, bool want_backbone, bool want_ca);

// ---------------- Adam ----------------

struct AdamConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.99;
    double eps = 1e-8;
};

/// One moment pair per named parameter; t is the shared step count.
struct AdamState {
    AdamConfig cfg;
    long t = 0;
    std::map<std::string, Tensor> m, v;
};

/// Bias-corrected Adam update for one named parameter tensor.
/// Throws NumericError on non-finite gradients (the step must be aborted).
void adam_step_param(AdamState& state, const std::string& name, Tensor& param, const Tensor& grad);

/// Advances the shared step counter; call once per optimizer step before
/// updating the individual parameters.
void adam_begin_step(AdamState& state);

// ---------------- Pretraining ----------------

struct PretrainLogEntry {
    int epoch = 0;
    double mean_l1 = 0.0;
};

struct PretrainResult {
    BackboneParams params;
    std::vector<PretrainLogEntry> log;
};

/// Minimizes L1(restored, sharp) over the given streams with Adam.
/// Deterministic for a fixed seed; requires ground truth in every pair.
PretrainResult pretrain(const std::vector<const DomainStream*>& streams, int epochs,
                        std::uint64_t seed, int channels = 16, double lr = 1e-3);

// ---------------- Checkpoint I/O ----------------

/// "CSWT1" container: per-tensor records of (u32 name length, name bytes,
/// u32 rank, u32 extents..., little-endian f32 payload). Bit-exact round-trip.
void save_tensors(const std::string& path, const std::vector<std::pair<std::string, Tensor>>& tensors);
std::vector<std::pair<std::string, Tensor>> load_tensors(const std::string& path);

void save_backbone(const std::string& path, const BackboneParams& params);
BackboneParams load_backbone(const std::string& path);

}  // namespace causiam
