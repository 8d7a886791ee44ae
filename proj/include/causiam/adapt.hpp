#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "causiam/network.hpp"
#include "causiam/semantic.hpp"
#include "causiam/synth.hpp"
#include "causiam/tensor.hpp"

namespace causiam {

enum class AblateMode { NONE, NO_VSPI, NO_HF, NO_SPATIAL, FULL_UPDATE, NO_EMA };

struct AdaptConfig {
    double alpha = 0.05;    // semantic fusion weight
    double eta = 0.9;       // EMA decay rate towards the online model
    double lambda = 0.01;   // high-frequency loss weight
    double lr = 1e-4;
    int iterations = 1;     // K
    int heads = 4;
    int head_dim = 4;
    std::uint64_t ca_seed = 0;
    AblateMode ablate = AblateMode::NONE;
    bool save_images = false;
    std::string image_dir;
};

/// The three parameter sets: the frozen source model, the online model and
/// the offline model. All share the frozen backbone; only CA parameters
/// differ (FULL_UPDATE gives theta/xi their own backbone copies).
struct ModelState {
    BackboneParams backbone;  // zeta; never mutated by adaptation
    CaParams theta_ca;        // online, trainable
    CaParams xi_ca;           // offline, EMA target
    BackboneParams theta_backbone;  // used only under FULL_UPDATE
    BackboneParams xi_backbone;     // used only under FULL_UPDATE
    AdamState adam;
    bool vspi = true;
    bool full_update = false;

    static ModelState init(const BackboneParams& source, const AdaptConfig& cfg);
};

struct StepReport {
    long sample_index = 0;
    std::string domain_id;
    int round = 1;
    double l_spatial = 0.0;
    double l_hf = 0.0;
    double l_consistency = 0.0;
    double psnr_source = 0.0;
    double psnr_adapted = 0.0;
    double ssim_source = 0.0;
    double ssim_adapted = 0.0;
    double wall_ms = 0.0;
    bool has_metrics = false;
    bool numeric_error = false;
    // Loss on the same sample re-evaluated after the optimizer step; used by
    // the per-step improvement statistic.
    double l_consistency_post = 0.0;
};

std::string step_report_json(const StepReport& r);

// ---------------- Losses ----------------

/// Mean absolute difference.
double spatial_loss(const Image& theta_out, const Image& y_mean);

/// L1 distance between averaged high-frequency wavelet bands.
double high_freq_loss(const Image& theta_out, const Image& y_mean);

/// spatial + lambda * high-frequency.
double consistency_loss(const Image& theta_out, const Image& y_mean, double lambda);

/// Gradient of consistency_loss w.r.t. theta_out.
Tensor consistency_loss_grad(const Image& theta_out, const Image& y_mean, double lambda);

/// xi <- (1-eta) * xi + eta * theta, elementwise over the CA parameters.
void ema_update(CaParams& xi_ca, const CaParams& theta_ca, double eta);
void ema_update(BackboneParams& xi, const BackboneParams& theta, double eta);

// ---------------- Adaptation protocol ----------------

struct AdaptOutput {
    Image restored;
    StepReport report;
};

/// One online step on a single test image: semantic tokens from the frozen
/// source restoration, pseudo label from the offline model over the five
/// augmented views, one consistency-loss update of the online CA parameters,
/// then the EMA transfer. The returned image is the offline averaged
/// prediction (the pseudo label of the final iteration).
AdaptOutput adapt_step(ModelState& state, const AdaptConfig& cfg, const Image& x_test);

struct RunResult {
    std::vector<StepReport> reports;
    int numeric_errors = 0;
};

/// Processes the domains strictly in order, `rounds` times, with no reset
/// between domains or rounds. Ground truth (when present) is used only for
/// metrics, never for adaptation.
RunResult run_stream(ModelState& state, const AdaptConfig& cfg,
                     const std::vector<const DomainStream*>& streams, int rounds,
                     bool compute_metrics = true);

void write_reports_jsonl(const std::vector<StepReport>& reports, const std::string& path);
std::vector<StepReport> read_reports_jsonl(const std::string& path);

}  // namespace causiam
