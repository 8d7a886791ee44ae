#include "causiam/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <sstream>

#include "causiam/errors.hpp"

namespace causiam {

double psnr(const Image& a, const Image& b) {
    if (!a.same_shape(b)) throw ShapeError("psnr: image shapes differ");
    double mse = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        double d = a.data[i] - b.data[i];
        mse += d * d;
    }
    mse /= static_cast<double>(a.data.size());
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(1.0 / mse);
}

namespace {

constexpr int kWin = 11;

const double* gaussian_window() {
    static double w[kWin * kWin];
    static bool init = [] {
        const double sigma = 1.5;
        double sum = 0.0;
        for (int y = 0; y < kWin; ++y)
            for (int x = 0; x < kWin; ++x) {
                double dy = y - kWin / 2, dx = x - kWin / 2;
                w[y * kWin + x] = std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
                sum += w[y * kWin + x];
            }
        for (double& v : w) v /= sum;
        return true;
    }();
    (void)init;
    return w;
}

}  // namespace

double ssim(const Image& a, const Image& b) {
    if (!a.same_shape(b)) throw ShapeError("ssim: image shapes differ");
    if (a.height < kWin || a.width < kWin) throw ParamError("ssim: image smaller than 11x11 window");
    const double* w = gaussian_window();
    const double c1 = 0.01 * 0.01;  // (K1*L)^2 with L=1
    const double c2 = 0.03 * 0.03;
    double total = 0.0;
    for (int c = 0; c < 3; ++c) {
        double acc = 0.0;
        int count = 0;
        for (int y = 0; y + kWin <= a.height; ++y)
            for (int x = 0; x + kWin <= a.width; ++x) {
                double mu_a = 0, mu_b = 0, aa = 0, bb = 0, ab = 0;
                for (int j = 0; j < kWin; ++j)
                    for (int i = 0; i < kWin; ++i) {
                        double wa = w[j * kWin + i];
                        double va = a.at(c, y + j, x + i);
                        double vb = b.at(c, y + j, x + i);
                        mu_a += wa * va;
                        mu_b += wa * vb;
                        aa += wa * va * va;
                        bb += wa * vb * vb;
                        ab += wa * va * vb;
                    }
                double var_a = aa - mu_a * mu_a;
                double var_b = bb - mu_b * mu_b;
                double cov = ab - mu_a * mu_b;
                double s = ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) /
                           ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
                acc += s;
                ++count;
            }
        total += acc / count;
    }
    return total / 3.0;
}

AggregateResult aggregate(const std::vector<MetricSample>& samples) {
    if (samples.empty()) throw ParamError("aggregate: no samples");
    AggregateResult out;
    std::map<std::pair<std::string, int>, std::size_t> index;
    std::vector<double> psnr_sum, ssim_sum;
    for (const MetricSample& s : samples) {
        auto key = std::make_pair(s.domain_id, s.round);
        auto it = index.find(key);
        std::size_t i;
        if (it == index.end()) {
            i = out.rows.size();
            index.emplace(key, i);
            out.rows.push_back({s.domain_id, s.round, 0, 0.0, 0.0});
            psnr_sum.push_back(0.0);
            ssim_sum.push_back(0.0);
        } else {
            i = it->second;
        }
        out.rows[i].n_images += 1;
        psnr_sum[i] += s.psnr;
        ssim_sum[i] += s.ssim;
        out.grand_psnr += s.psnr;
        out.grand_ssim += s.ssim;
    }
    for (std::size_t i = 0; i < out.rows.size(); ++i) {
        out.rows[i].mean_psnr = psnr_sum[i] / out.rows[i].n_images;
        out.rows[i].mean_ssim = ssim_sum[i] / out.rows[i].n_images;
    }
    out.n_total = static_cast<int>(samples.size());
    out.grand_psnr /= out.n_total;
    out.grand_ssim /= out.n_total;
    return out;
}

std::string format_metric(double v) {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    std::ostringstream ss;
    ss.setf(std::ios::fixed);
    ss.precision(4);
    ss << v;
    return ss.str();
}

std::string render_table(const AggregateResult& agg) {
    std::ostringstream ss;
    ss << "domain_id        round  n_images  mean_psnr  mean_ssim\n";
    for (const MetricRow& r : agg.rows) {
        ss << r.domain_id;
        for (std::size_t i = r.domain_id.size(); i < 17; ++i) ss << ' ';
        std::string ps = format_metric(r.mean_psnr), sm = format_metric(r.mean_ssim);
        ss << r.round << "      ";
        std::string n = std::to_string(r.n_images);
        ss << n;
        for (std::size_t i = n.size(); i < 10; ++i) ss << ' ';
        ss << ps;
        for (std::size_t i = ps.size(); i < 11; ++i) ss << ' ';
        ss << sm << "\n";
    }
    ss << "average over " << agg.n_total << " images: psnr=" << format_metric(agg.grand_psnr)
       << " ssim=" << format_metric(agg.grand_ssim) << "\n";
    return ss.str();
}

std::string render_csv(const AggregateResult& agg) {
    std::ostringstream ss;
    ss << "domain_id,round,n_images,mean_psnr,mean_ssim\n";
    for (const MetricRow& r : agg.rows)
        ss << r.domain_id << ',' << r.round << ',' << r.n_images << ',' << format_metric(r.mean_psnr)
           << ',' << format_metric(r.mean_ssim) << "\n";
    return ss.str();
}

}  // namespace causiam
