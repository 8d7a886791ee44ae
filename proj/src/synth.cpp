#include "causiam/synth.hpp"

#include <algorithm>
#include <cmath>

#include "causiam/rng.hpp"

namespace causiam {

const Image& ImagePair::sharp_ref() const {
    if (!sharp) throw StateError("stream pair has no ground truth");
    ++sharp_reads;
    return *sharp;
}

const char* psf_kind_name(PsfKind kind) {
    return kind == PsfKind::DISC ? "disc" : "gaussian";
}

Image gen_sharp(std::uint64_t seed, int h, int w) {
    if (h < 32 || w < 32) throw ParamError("gen_sharp: size must be at least 32");
    Rng rng(seed * 0x9e3779b97f4a7c15ULL + 0x2545f4914f6cdd1dULL);
    Image img(h, w);

    // Base: smooth two-corner gradient per channel.
    double c0[3], c1[3];
    for (int c = 0; c < 3; ++c) {
        c0[c] = rng.uniform(0.1, 0.9);
        c1[c] = rng.uniform(0.1, 0.9);
    }
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                double t = 0.5 * (static_cast<double>(y) / (h - 1) + static_cast<double>(x) / (w - 1));
                img.at(c, y, x) = c0[c] + (c1[c] - c0[c]) * t;
            }

    int n_shapes = rng.uniform_int(8, 14);
    for (int s = 0; s < n_shapes; ++s) {
        int kind = rng.uniform_int(0, 4);
        double col[3];
        for (int c = 0; c < 3; ++c) col[c] = rng.uniform();
        int cx = rng.uniform_int(0, w - 1), cy = rng.uniform_int(0, h - 1);
        int ew = rng.uniform_int(w / 8, w / 2), eh = rng.uniform_int(h / 8, h / 2);
        switch (kind) {
            case 0: {  // filled rectangle
                for (int y = std::max(0, cy - eh / 2); y < std::min(h, cy + eh / 2 + 1); ++y)
                    for (int x = std::max(0, cx - ew / 2); x < std::min(w, cx + ew / 2 + 1); ++x)
                        for (int c = 0; c < 3; ++c) img.at(c, y, x) = col[c];
                break;
            }
            case 1: {  // disc
                int r = std::max(2, std::min(ew, eh) / 2);
                for (int y = std::max(0, cy - r); y < std::min(h, cy + r + 1); ++y)
                    for (int x = std::max(0, cx - r); x < std::min(w, cx + r + 1); ++x)
                        if ((y - cy) * (y - cy) + (x - cx) * (x - cx) <= r * r)
                            for (int c = 0; c < 3; ++c) img.at(c, y, x) = col[c];
                break;
            }
            case 2: {  // checkerboard patch
                int cell = rng.uniform_int(2, 6);
                double col2[3];
                for (int c = 0; c < 3; ++c) col2[c] = rng.uniform();
                for (int y = std::max(0, cy - eh / 2); y < std::min(h, cy + eh / 2 + 1); ++y)
                    for (int x = std::max(0, cx - ew / 2); x < std::min(w, cx + ew / 2 + 1); ++x) {
                        bool a = ((y / cell) + (x / cell)) % 2 == 0;
                        for (int c = 0; c < 3; ++c) img.at(c, y, x) = a ? col[c] : col2[c];
                    }
                break;
            }
            case 3: {  // stripes
                int period = rng.uniform_int(2, 8);
                bool horiz = rng.uniform() < 0.5;
                for (int y = std::max(0, cy - eh / 2); y < std::min(h, cy + eh / 2 + 1); ++y)
                    for (int x = std::max(0, cx - ew / 2); x < std::min(w, cx + ew / 2 + 1); ++x)
                        if (((horiz ? y : x) / period) % 2 == 0)
                            for (int c = 0; c < 3; ++c) img.at(c, y, x) = col[c];
                break;
            }
            case 4: {  // soft radial gradient blob
                int r = std::max(3, std::min(ew, eh));
                for (int y = std::max(0, cy - r); y < std::min(h, cy + r + 1); ++y)
                    for (int x = std::max(0, cx - r); x < std::min(w, cx + r + 1); ++x) {
                        double d = std::sqrt(double((y - cy) * (y - cy) + (x - cx) * (x - cx))) / r;
                        if (d < 1.0)
                            for (int c = 0; c < 3; ++c)
                                img.at(c, y, x) = img.at(c, y, x) * d + col[c] * (1.0 - d);
                    }
                break;
            }
        }
    }
    img.clamp01();
    return img;
}

namespace {

int reflect(int i, int n) {
    // Mirror about the boundary (edge sample not repeated), e.g. -1 -> 1.
    while (i < 0 || i >= n) {
        if (i < 0) i = -i;
        if (i >= n) i = 2 * n - 2 - i;
    }
    return i;
}

Image apply_psf_impl(const Image& sharp, const PsfModel& psf, bool clamp) {
    const Tensor& rm = psf.radius_map;
    if (rm.rank() != 3 || rm.extent(1) != sharp.height || rm.extent(2) != sharp.width)
        throw ShapeError("apply_psf: radius map extent mismatch");
    int h = sharp.height, w = sharp.width;
    double max_allowed = std::min(h, w) / 2.0;

    Image out(h, w);
    std::vector<double> kernel;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double r = rm.at3(0, y, x);
            if (r < 0.0) throw ParamError("apply_psf: negative blur radius");
            if (r > max_allowed) throw ParamError("apply_psf: radius exceeds min(h,w)/2");
            int ext;
            if (psf.kind == PsfKind::DISC) {
                ext = static_cast<int>(std::floor(r));
            } else {
                ext = static_cast<int>(std::ceil(3.0 * (r / 2.0)));
            }
            if (ext == 0 || r == 0.0) {
                for (int c = 0; c < 3; ++c) out.at(c, y, x) = sharp.at(c, y, x);
                continue;
            }
            int side = 2 * ext + 1;
            kernel.assign(static_cast<std::size_t>(side) * side, 0.0);
            double sum = 0.0;
            for (int dy = -ext; dy <= ext; ++dy)
                for (int dx = -ext; dx <= ext; ++dx) {
                    double v = 0.0;
                    if (psf.kind == PsfKind::DISC) {
                        if (dy * dy + dx * dx <= r * r) v = 1.0;
                    } else {
                        double sigma = r / 2.0;
                        v = std::exp(-(dy * dy + dx * dx) / (2.0 * sigma * sigma));
                    }
                    kernel[(dy + ext) * side + (dx + ext)] = v;
                    sum += v;
                }
            for (double& v : kernel) v /= sum;
            for (int c = 0; c < 3; ++c) {
                double acc = 0.0;
                for (int dy = -ext; dy <= ext; ++dy) {
                    int sy = reflect(y + dy, h);
                    for (int dx = -ext; dx <= ext; ++dx) {
                        int sx = reflect(x + dx, w);
                        acc += kernel[(dy + ext) * side + (dx + ext)] * sharp.at(c, sy, sx);
                    }
                }
                out.at(c, y, x) = acc;
            }
        }
    if (clamp) out.clamp01();
    return out;
}

}  // namespace

Image apply_psf(const Image& sharp, const PsfModel& psf) { return apply_psf_impl(sharp, psf, true); }

Image apply_psf_unclamped(const Image& sharp, const PsfModel& psf) {
    return apply_psf_impl(sharp, psf, false);
}

GeneratedStream gen_domain_stream(const std::string& domain_id, int n, std::uint64_t seed,
                                  PsfKind kind, double radius_lo, double radius_hi, int h, int w) {
    if (n < 1) throw ParamError("gen_domain_stream: n must be >= 1");
    if (radius_hi < radius_lo || radius_lo < 0.0) throw ParamError("gen_domain_stream: empty radius range");

    GeneratedStream out;
    out.stream.domain_id = domain_id;
    out.stream.seed = seed;
    for (int i = 0; i < n; ++i) {
        std::uint64_t img_seed = seed * 1000003ULL + static_cast<std::uint64_t>(i);
        Image sharp = gen_sharp(img_seed, h, w);

        // Depth regions: Voronoi cells of 2-4 seeded sites, one radius each.
        // The region layout depends only on img_seed, not on the PSF kind, so
        // DISC and GAUSSIAN variants of the same stream share sharp images.
        Rng rng(img_seed ^ 0xabcdef1234567890ULL);
        int n_regions = rng.uniform_int(2, 4);
        std::vector<int> sx(n_regions), sy(n_regions);
        std::vector<double> radii(n_regions);
        for (int k = 0; k < n_regions; ++k) {
            sx[k] = rng.uniform_int(0, w - 1);
            sy[k] = rng.uniform_int(0, h - 1);
            radii[k] = rng.uniform(radius_lo, radius_hi);
        }
        PsfModel psf;
        psf.kind = kind;
        psf.radius_map = Tensor({1, h, w});
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                int best = 0;
                long bd = (y - sy[0]) * long(y - sy[0]) + (x - sx[0]) * long(x - sx[0]);
                for (int k = 1; k < n_regions; ++k) {
                    long d = (y - sy[k]) * long(y - sy[k]) + (x - sx[k]) * long(x - sx[k]);
                    if (d < bd) {
                        bd = d;
                        best = k;
                    }
                }
                psf.radius_map.at3(0, y, x) = radii[best];
            }

        ImagePair pair;
        pair.blur = apply_psf(sharp, psf);
        pair.sharp = std::move(sharp);
        out.stream.pairs.push_back(std::move(pair));
        out.manifest.push_back({i, kind, radii});
    }
    return out;
}

}  // namespace causiam
