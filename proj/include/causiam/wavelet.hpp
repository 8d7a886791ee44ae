#pragma once

#include "causiam/tensor.hpp"

namespace causiam {

/// One-level orthonormal Haar decomposition of a (C,H,W) tensor.
/// Each band has shape (C, ceil(H/2), ceil(W/2)); odd inputs are
/// reflect-padded by one row/column and cropped again on inverse.
struct WaveletBands {
    Tensor ll, lh, hl, hh;
    int orig_h = 0;
    int orig_w = 0;
};

WaveletBands dwt2(const Tensor& img);
Tensor idwt2(const WaveletBands& bands);

/// High-frequency extraction operator: (LH + HL + HH) / 3.
Tensor high_freq_avg(const Tensor& img);

/// Adjoint of high_freq_avg; maps a gradient on the half-resolution band
/// average back to image space (used by the high-frequency loss backward).
Tensor high_freq_avg_adjoint(const Tensor& grad_bands, int orig_h, int orig_w);

}  // namespace causiam
