#include "causiam/wavelet.hpp"

namespace causiam {

namespace {

// Pad odd spatial extents to even by repeating the edge row/column.
Tensor pad_even(const Tensor& img) {
    int c = img.extent(0), h = img.extent(1), w = img.extent(2);
    int ph = h + (h & 1), pw = w + (w & 1);
    if (ph == h && pw == w) return img;
    Tensor out({c, ph, pw});
    for (int k = 0; k < c; ++k)
        for (int y = 0; y < ph; ++y)
            for (int x = 0; x < pw; ++x)
                out.at3(k, y, x) = img.at3(k, y < h ? y : h - 1, x < w ? x : w - 1);
    return out;
}

}  // namespace

WaveletBands dwt2(const Tensor& img) {
    if (img.rank() != 3 || img.numel() == 0) throw ShapeError("dwt2 expects a non-empty (C,H,W) tensor");
    WaveletBands out;
    out.orig_h = img.extent(1);
    out.orig_w = img.extent(2);
    Tensor src = pad_even(img);
    int c = src.extent(0), h2 = src.extent(1) / 2, w2 = src.extent(2) / 2;
    out.ll = Tensor({c, h2, w2});
    out.lh = Tensor({c, h2, w2});
    out.hl = Tensor({c, h2, w2});
    out.hh = Tensor({c, h2, w2});
    for (int k = 0; k < c; ++k)
        for (int y = 0; y < h2; ++y)
            for (int x = 0; x < w2; ++x) {
                double a = src.at3(k, 2 * y, 2 * x);
                double b = src.at3(k, 2 * y, 2 * x + 1);
                double cc = src.at3(k, 2 * y + 1, 2 * x);
                double d = src.at3(k, 2 * y + 1, 2 * x + 1);
                out.ll.at3(k, y, x) = (a + b + cc + d) / 2.0;
                out.lh.at3(k, y, x) = (a + b - cc - d) / 2.0;
                out.hl.at3(k, y, x) = (a - b + cc - d) / 2.0;
                out.hh.at3(k, y, x) = (a - b - cc + d) / 2.0;
            }
    return out;
}

Tensor idwt2(const WaveletBands& bands) {
    const Tensor& ll = bands.ll;
    if (!ll.same_shape(bands.lh) || !ll.same_shape(bands.hl) || !ll.same_shape(bands.hh))
        throw ShapeError("wavelet band shapes disagree");
    int c = ll.extent(0), h2 = ll.extent(1), w2 = ll.extent(2);
    int oh = bands.orig_h > 0 ? bands.orig_h : 2 * h2;
    int ow = bands.orig_w > 0 ? bands.orig_w : 2 * w2;
    Tensor out({c, oh, ow});
    for (int k = 0; k < c; ++k)
        for (int y = 0; y < h2; ++y)
            for (int x = 0; x < w2; ++x) {
                double l = bands.ll.at3(k, y, x);
                double v = bands.lh.at3(k, y, x);
                double hz = bands.hl.at3(k, y, x);
                double d = bands.hh.at3(k, y, x);
                double a = (l + v + hz + d) / 2.0;
                double b = (l + v - hz - d) / 2.0;
                double cc = (l - v + hz - d) / 2.0;
                double dd = (l - v - hz + d) / 2.0;
                if (2 * y < oh && 2 * x < ow) out.at3(k, 2 * y, 2 * x) = a;
                if (2 * y < oh && 2 * x + 1 < ow) out.at3(k, 2 * y, 2 * x + 1) = b;
                if (2 * y + 1 < oh && 2 * x < ow) out.at3(k, 2 * y + 1, 2 * x) = cc;
                if (2 * y + 1 < oh && 2 * x + 1 < ow) out.at3(k, 2 * y + 1, 2 * x + 1) = dd;
            }
    return out;
}

Tensor high_freq_avg(const Tensor& img) {
    WaveletBands b = dwt2(img);
    Tensor out = b.lh;
    out += b.hl;
    out += b.hh;
    out *= 1.0 / 3.0;
    return out;
}

Tensor high_freq_avg_adjoint(const Tensor& grad_bands, int orig_h, int orig_w) {
    // f^h = (LH+HL+HH)/3 composed with the orthonormal DWT, so the adjoint is
    // the inverse transform applied to (0, g/3, g/3, g/3), with padded-pixel
    // gradients folded back onto the edge samples they were copied from.
    WaveletBands b;
    b.ll = Tensor(grad_bands.shape);
    b.lh = grad_bands;
    b.lh *= 1.0 / 3.0;
    b.hl = b.lh;
    b.hh = b.lh;
    int ph = 2 * grad_bands.extent(1), pw = 2 * grad_bands.extent(2);
    b.orig_h = ph;
    b.orig_w = pw;
    Tensor padded = idwt2(b);
    if (ph == orig_h && pw == orig_w) return padded;
    int c = padded.extent(0);
    Tensor out({c, orig_h, orig_w});
    for (int k = 0; k < c; ++k)
        for (int y = 0; y < ph; ++y)
            for (int x = 0; x < pw; ++x) {
                int sy = y < orig_h ? y : orig_h - 1;
                int sx = x < orig_w ? x : orig_w - 1;
                out.at3(k, sy, sx) += padded.at3(k, y, x);
            }
    return out;
}

}  // namespace causiam
