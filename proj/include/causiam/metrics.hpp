#pragma once

#include <string>
#include <vector>

#include "causiam/tensor.hpp"

namespace causiam {

/// PSNR in dB for images in [0,1]; +inf for identical inputs.
double psnr(const Image& a, const Image& b);

/// Single-scale SSIM: 11x11 Gaussian window (sigma 1.5), K1=0.01, K2=0.03,
/// L=1, channels averaged. Requires min(H,W) >= 11.
double ssim(const Image& a, const Image& b);

struct MetricRow {
    std::string domain_id;
    int round = 0;
    int n_images = 0;
    double mean_psnr = 0.0;
    double mean_ssim = 0.0;
};

struct MetricSample {
    std::string domain_id;
    int round = 0;
    double psnr = 0.0;
    double ssim = 0.0;
};

struct AggregateResult {
    std::vector<MetricRow> rows;  // one per (domain, round), first-seen order
    double grand_psnr = 0.0;      // mean over all samples
    double grand_ssim = 0.0;
    int n_total = 0;
};

AggregateResult aggregate(const std::vector<MetricSample>& samples);

/// Plain-text table, domains across rounds, plus the grand average.
std::string render_table(const AggregateResult& agg);

/// CSV with header domain_id,round,n_images,mean_psnr,mean_ssim.
/// Infinite PSNR values are serialized as the string "inf".
std::string render_csv(const AggregateResult& agg);

std::string format_metric(double v);

}  // namespace causiam
