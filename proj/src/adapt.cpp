#include "causiam/adapt.hpp"

#include <chrono>
#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

#include "causiam/augment.hpp"
#include "causiam/image_io.hpp"
#include "causiam/metrics.hpp"
#include "causiam/wavelet.hpp"

namespace causiam {

using nlohmann::json;

ModelState ModelState::init(const BackboneParams& source, const AdaptConfig& cfg) {
    ModelState s;
    s.backbone = source;
    s.vspi = cfg.ablate != AblateMode::NO_VSPI;
    s.full_update = cfg.ablate == AblateMode::FULL_UPDATE;
    s.theta_ca = CaParams::seeded_init(source.channels, cfg.heads, cfg.head_dim, cfg.alpha, cfg.ca_seed);
    s.xi_ca = s.theta_ca;  // same seed; EMA governs divergence
    if (s.full_update) {
        s.theta_backbone = source;
        s.xi_backbone = source;
    }
    s.adam.cfg.lr = cfg.lr;
    return s;
}

// ---------------- Losses ----------------

double spatial_loss(const Image& theta_out, const Image& y_mean) {
    if (!theta_out.same_shape(y_mean)) throw ShapeError("spatial_loss: shape mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < theta_out.data.size(); ++i)
        acc += std::abs(theta_out.data[i] - y_mean.data[i]);
    return acc / static_cast<double>(theta_out.data.size());
}

double high_freq_loss(const Image& theta_out, const Image& y_mean) {
    if (!theta_out.same_shape(y_mean)) throw ShapeError("high_freq_loss: shape mismatch");
    Tensor ha = high_freq_avg(theta_out.to_tensor());
    Tensor hb = high_freq_avg(y_mean.to_tensor());
    double acc = 0.0;
    for (std::size_t i = 0; i < ha.data.size(); ++i) acc += std::abs(ha.data[i] - hb.data[i]);
    return acc / static_cast<double>(ha.data.size());
}

double consistency_loss(const Image& theta_out, const Image& y_mean, double lambda) {
    return spatial_loss(theta_out, y_mean) + lambda * high_freq_loss(theta_out, y_mean);
}

namespace {

Tensor spatial_loss_grad(const Image& theta_out, const Image& y_mean) {
    Tensor g({3, theta_out.height, theta_out.width});
    const double inv = 1.0 / static_cast<double>(theta_out.data.size());
    for (std::size_t i = 0; i < theta_out.data.size(); ++i) {
        double d = theta_out.data[i] - y_mean.data[i];
        g.data[i] = (d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0)) * inv;
    }
    return g;
}

Tensor high_freq_loss_grad(const Image& theta_out, const Image& y_mean) {
    Tensor ha = high_freq_avg(theta_out.to_tensor());
    Tensor hb = high_freq_avg(y_mean.to_tensor());
    Tensor g_bands(ha.shape);
    const double inv = 1.0 / static_cast<double>(ha.data.size());
    for (std::size_t i = 0; i < ha.data.size(); ++i) {
        double d = ha.data[i] - hb.data[i];
        g_bands.data[i] = (d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0)) * inv;
    }
    return high_freq_avg_adjoint(g_bands, theta_out.height, theta_out.width);
}

bool all_finite(const Tensor& t) {
    for (double v : t.data)
        if (!std::isfinite(v)) return false;
    return true;
}

}  // namespace

Tensor consistency_loss_grad(const Image& theta_out, const Image& y_mean, double lambda) {
    Tensor g = spatial_loss_grad(theta_out, y_mean);
    if (lambda != 0.0) {
        Tensor gh = high_freq_loss_grad(theta_out, y_mean);
        gh *= lambda;
        g += gh;
    }
    return g;
}

void ema_update(CaParams& xi_ca, const CaParams& theta_ca, double eta) {
    if (eta < 0.0 || eta > 1.0) throw ParamError("ema_update: eta must lie in [0,1]");
    if (!xi_ca.same_shape(theta_ca)) throw ShapeError("ema_update: CA parameter shapes differ");
    auto blend = [eta](Tensor& xi, const Tensor& theta) {
        for (std::size_t i = 0; i < xi.data.size(); ++i)
            xi.data[i] = (1.0 - eta) * xi.data[i] + eta * theta.data[i];
    };
    blend(xi_ca.w_q, theta_ca.w_q);
    blend(xi_ca.b_q, theta_ca.b_q);
    blend(xi_ca.w_k, theta_ca.w_k);
    blend(xi_ca.b_k, theta_ca.b_k);
    blend(xi_ca.w_v, theta_ca.w_v);
    blend(xi_ca.b_v, theta_ca.b_v);
    blend(xi_ca.w_o, theta_ca.w_o);
    blend(xi_ca.b_o, theta_ca.b_o);
}

void ema_update(BackboneParams& xi, const BackboneParams& theta, double eta) {
    if (eta < 0.0 || eta > 1.0) throw ParamError("ema_update: eta must lie in [0,1]");
    auto blend = [eta](Tensor& a, const Tensor& b) {
        for (std::size_t i = 0; i < a.data.size(); ++i)
            a.data[i] = (1.0 - eta) * a.data[i] + eta * b.data[i];
    };
    blend(xi.conv1.weight, theta.conv1.weight);
    blend(xi.conv1.bias, theta.conv1.bias);
    blend(xi.conv2.weight, theta.conv2.weight);
    blend(xi.conv2.bias, theta.conv2.bias);
    blend(xi.conv3.weight, theta.conv3.weight);
    blend(xi.conv3.bias, theta.conv3.bias);
    blend(xi.conv4.weight, theta.conv4.weight);
    blend(xi.conv4.bias, theta.conv4.bias);
}

// ---------------- Adaptation protocol ----------------

AdaptOutput adapt_step(ModelState& state, const AdaptConfig& cfg, const Image& x_test) {
    if (cfg.iterations < 1) throw ParamError("adapt_step: K must be >= 1");
    const bool use_ca = state.vspi;
    const double eta = cfg.ablate == AblateMode::NO_EMA ? 1.0 : cfg.eta;
    const double lambda = cfg.ablate == AblateMode::NO_HF ? 0.0 : cfg.lambda;

    const BackboneParams& theta_bb = state.full_update ? state.theta_backbone : state.backbone;
    const BackboneParams& xi_bb = state.full_update ? state.xi_backbone : state.backbone;

    AdaptOutput out;
    Image y_mean;
    for (int iter = 0; iter < cfg.iterations; ++iter) {
        SemanticTokens tokens;
        if (use_ca) {
            Image init_restore = forward(state.backbone, nullptr, nullptr, x_test).restored;
            tokens = encode_semantic(init_restore);
        }

        auto offline = [&](const Image& img) {
            return forward(xi_bb, use_ca ? &state.xi_ca : nullptr, use_ca ? &tokens : nullptr, img)
                .restored;
        };
        y_mean = pseudo_label_mean(offline, x_test);

        ForwardCache cache;
        ForwardResult fr = forward(theta_bb, use_ca ? &state.theta_ca : nullptr,
                                   use_ca ? &tokens : nullptr, x_test, &cache);

        out.report.l_spatial = spatial_loss(fr.restored, y_mean);
        out.report.l_hf = high_freq_loss(fr.restored, y_mean);
        out.report.l_consistency = out.report.l_spatial + lambda * out.report.l_hf;

        if (!std::isfinite(out.report.l_consistency)) {
            out.report.numeric_error = true;
            break;  // keep pre-step parameters, continue the stream
        }

        if (use_ca || state.full_update) {
            Tensor grad;
            if (cfg.ablate == AblateMode::NO_SPATIAL) {
                grad = high_freq_loss_grad(fr.restored, y_mean);
                grad *= lambda;
            } else {
                grad = consistency_loss_grad(fr.restored, y_mean, lambda);
            }
            BackwardResult br = backward(theta_bb, use_ca ? &state.theta_ca : nullptr, cache, grad,
                                         state.full_update, use_ca);
            bool finite = true;
            if (br.ca)
                for (const Tensor* t : {&br.ca->w_q, &br.ca->b_q, &br.ca->w_k, &br.ca->b_k,
                                        &br.ca->w_v, &br.ca->b_v, &br.ca->w_o, &br.ca->b_o})
                    finite = finite && all_finite(*t);
            if (br.backbone)
                for (const Tensor* t : {&br.backbone->conv1_w, &br.backbone->conv2_w,
                                        &br.backbone->conv3_w, &br.backbone->conv4_w})
                    finite = finite && all_finite(*t);
            if (!finite) {
                out.report.numeric_error = true;
                break;
            }

            adam_begin_step(state.adam);
            if (br.ca) {
                adam_step_param(state.adam, "ca.w_q", state.theta_ca.w_q, br.ca->w_q);
                adam_step_param(state.adam, "ca.b_q", state.theta_ca.b_q, br.ca->b_q);
                adam_step_param(state.adam, "ca.w_k", state.theta_ca.w_k, br.ca->w_k);
                adam_step_param(state.adam, "ca.b_k", state.theta_ca.b_k, br.ca->b_k);
                adam_step_param(state.adam, "ca.w_v", state.theta_ca.w_v, br.ca->w_v);
                adam_step_param(state.adam, "ca.b_v", state.theta_ca.b_v, br.ca->b_v);
                adam_step_param(state.adam, "ca.w_o", state.theta_ca.w_o, br.ca->w_o);
                adam_step_param(state.adam, "ca.b_o", state.theta_ca.b_o, br.ca->b_o);
            }
            if (br.backbone) {
                adam_step_param(state.adam, "bb.c1w", state.theta_backbone.conv1.weight, br.backbone->conv1_w);
                adam_step_param(state.adam, "bb.c1b", state.theta_backbone.conv1.bias, br.backbone->conv1_b);
                adam_step_param(state.adam, "bb.c2w", state.theta_backbone.conv2.weight, br.backbone->conv2_w);
                adam_step_param(state.adam, "bb.c2b", state.theta_backbone.conv2.bias, br.backbone->conv2_b);
                adam_step_param(state.adam, "bb.c3w", state.theta_backbone.conv3.weight, br.backbone->conv3_w);
                adam_step_param(state.adam, "bb.c3b", state.theta_backbone.conv3.bias, br.backbone->conv3_b);
                adam_step_param(state.adam, "bb.c4w", state.theta_backbone.conv4.weight, br.backbone->conv4_w);
                adam_step_param(state.adam, "bb.c4b", state.theta_backbone.conv4.bias, br.backbone->conv4_b);
            }
        }

        if (use_ca) ema_update(state.xi_ca, state.theta_ca, eta);
        if (state.full_update) ema_update(state.xi_backbone, state.theta_backbone, eta);

        // Post-step loss on the same sample and pseudo label.
        Image post = forward(theta_bb, use_ca ? &state.theta_ca : nullptr,
                             use_ca ? &tokens : nullptr, x_test)
                         .restored;
        out.report.l_consistency_post = spatial_loss(post, y_mean) + lambda * high_freq_loss(post, y_mean);
    }
    out.restored = std::move(y_mean);
    return out;
}

RunResult run_stream(ModelState& state, const AdaptConfig& cfg,
                     const std::vector<const DomainStream*>& streams, int rounds,
                     bool compute_metrics) {
    if (streams.empty()) throw ParamError("run_stream: empty stream list");
    if (rounds < 1) throw ParamError("run_stream: rounds must be >= 1");
    RunResult res;
    long sample_index = 0;
    for (int round = 1; round <= rounds; ++round)
        for (const DomainStream* stream : streams)
            for (const ImagePair& pair : stream->pairs) {
                auto t0 = std::chrono::steady_clock::now();
                AdaptOutput step = adapt_step(state, cfg, pair.blur);
                auto t1 = std::chrono::steady_clock::now();
                step.report.sample_index = sample_index;
                step.report.domain_id = stream->domain_id;
                step.report.round = round;
                step.report.wall_ms =
                    std::chrono::duration_cast<std::chrono::duration<double, std::milli>>(t1 - t0).count();
                if (step.report.numeric_error) ++res.numeric_errors;
                if (compute_metrics && pair.sharp) {
                    const Image& gt = pair.sharp_ref();
                    Image source_out = forward(state.backbone, nullptr, nullptr, pair.blur).restored;
                    step.report.psnr_source = psnr(source_out, gt);
                    step.report.psnr_adapted = psnr(step.restored, gt);
                    step.report.ssim_source = ssim(source_out, gt);
                    step.report.ssim_adapted = ssim(step.restored, gt);
                    step.report.has_metrics = true;
                }
                if (cfg.save_images && !cfg.image_dir.empty())
                    save_image(step.restored, cfg.image_dir + "/restored_" +
                                                  std::to_string(sample_index) + ".png");
                res.reports.push_back(std::move(step.report));
                ++sample_index;
            }
    return res;
}

// ---------------- Report serialization ----------------

namespace {
json metric_value(double v) {
    if (std::isinf(v)) return v > 0 ? json("inf") : json("-inf");
    return json(v);
}

double metric_from(const json& j) {
    if (j.is_string()) {
        std::string s = j.get<std::string>();
        if (s == "inf") return std::numeric_limits<double>::infinity();
        if (s == "-inf") return -std::numeric_limits<double>::infinity();
        throw FormatError("bad metric string: " + s);
    }
    return j.get<double>();
}
}  // namespace

std::string step_report_json(const StepReport& r) {
    json j;
    j["sample_index"] = r.sample_index;
    j["domain_id"] = r.domain_id;
    j["round"] = r.round;
    j["l_spatial"] = r.l_spatial;
    j["l_hf"] = r.l_hf;
    j["l_consistency"] = r.l_consistency;
    j["psnr_source"] = metric_value(r.psnr_source);
    j["psnr_adapted"] = metric_value(r.psnr_adapted);
    j["ssim_source"] = r.ssim_source;
    j["ssim_adapted"] = r.ssim_adapted;
    j["wall_ms"] = r.wall_ms;
    if (r.numeric_error) j["numeric_error"] = true;
    return j.dump();
}

void write_reports_jsonl(const std::vector<StepReport>& reports, const std::string& path) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw IoError("cannot write report file: " + path);
    for (const StepReport& r : reports) f << step_report_json(r) << "\n";
}

std::vector<StepReport> read_reports_jsonl(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open report file: " + path);
    std::vector<StepReport> out;
    std::string line;
    long line_no = 0;
    while (std::getline(f, line)) {
        ++line_no;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::parse_error& e) {
            throw FormatError("malformed JSON at line " + std::to_string(line_no) + ": " + e.what());
        }
        StepReport r;
        r.sample_index = j.at("sample_index").get<long>();
        r.domain_id = j.at("domain_id").get<std::string>();
        r.round = j.at("round").get<int>();
        r.l_spatial = j.at("l_spatial").get<double>();
        r.l_hf = j.at("l_hf").get<double>();
        r.l_consistency = j.at("l_consistency").get<double>();
        r.psnr_source = metric_from(j.at("psnr_source"));
        r.psnr_adapted = metric_from(j.at("psnr_adapted"));
        r.ssim_source = j.at("ssim_source").get<double>();
        r.ssim_adapted = j.at("ssim_adapted").get<double>();
        r.wall_ms = j.at("wall_ms").get<double>();
        r.numeric_error = j.value("numeric_error", false);
        r.has_metrics = true;
        out.push_back(std::move(r));
    }
    return out;
}

}  // namespace causiam
