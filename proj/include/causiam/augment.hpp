#pragma once

#include <array>
#include <functional>

#include "causiam/tensor.hpp"

namespace causiam {

/// The five invertible geometric augmentations (pure pixel permutations).
enum class AugmentOp { HFLIP, VFLIP, ROT90, ROT180, ROT270 };

constexpr std::array<AugmentOp, 5> kAugmentOps = {
    AugmentOp::HFLIP, AugmentOp::VFLIP, AugmentOp::ROT90, AugmentOp::ROT180, AugmentOp::ROT270};

/// Rotations are clockwise; ROT90/ROT270 swap the image dimensions.
Image apply_augment(AugmentOp op, const Image& img);

/// Exact inverse: invert(op, apply(op, x)) == x bit-for-bit.
Image invert_augment(AugmentOp op, const Image& img);

/// Averaged pseudo label over the five augmented views:
/// y_mean = (1/N) sum_n invert(op_n, model(apply(op_n, x))).
Image pseudo_label_mean(const std::function<Image(const Image&)>& model, const Image& x_test);

}  // namespace causiam
