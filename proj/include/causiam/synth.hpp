#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "causiam/tensor.hpp"

namespace causiam {

enum class PsfKind { DISC, GAUSSIAN };

/// Spatially varying point-spread function: per-pixel blur radius plus the
/// kernel family. DISC is uniform over lattice points within the radius,
/// GAUSSIAN is isotropic with sigma = radius/2. Kernels are normalized.
struct PsfModel {
    PsfKind kind = PsfKind::DISC;
    Tensor radius_map;  // shape (1, H, W), radii in pixels, >= 0
};

struct ImagePair {
    Image blur;
    std::optional<Image> sharp;

    // Counts ground-truth accesses so tests can prove adaptation never
    // touches the sharp image.
    const Image& sharp_ref() const;
    mutable long sharp_reads = 0;
};

struct DomainStream {
    std::string domain_id;
    std::uint64_t seed = 0;
    std::vector<ImagePair> pairs;
};

/// Deterministic procedural scene with broadband frequency content.
Image gen_sharp(std::uint64_t seed, int h, int w);

/// Per-pixel convolution (gather form) with reflect padding; output clamped.
Image apply_psf(const Image& sharp, const PsfModel& psf);

/// Same as apply_psf but without the final clamp (double-precision linearity
/// checks need the raw values).
Image apply_psf_unclamped(const Image& sharp, const PsfModel& psf);

struct StreamEntryInfo {
    int index = 0;
    PsfKind kind = PsfKind::DISC;
    std::vector<double> region_radii;
};

struct GeneratedStream {
    DomainStream stream;
    std::vector<StreamEntryInfo> manifest;
};

/// n pairs of (blurry, sharp); blur radii drawn per image from radius_range
/// over 2-4 seeded depth regions (Voronoi of seeded sites).
GeneratedStream gen_domain_stream(const std::string& domain_id, int n, std::uint64_t seed,
                                  PsfKind kind, double radius_lo, double radius_hi,
                                  int h = 64, int w = 64);

const char* psf_kind_name(PsfKind kind);

}  // namespace causiam
