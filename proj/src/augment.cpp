#include "causiam/augment.hpp"

namespace causiam {

Image apply_augment(AugmentOp op, const Image& img) {
    int h = img.height, w = img.width;
    switch (op) {
        case AugmentOp::HFLIP: {
            Image out(h, w);
            for (int c = 0; c < 3; ++c)
                for (int y = 0; y < h; ++y)
                    for (int x = 0; x < w; ++x) out.at(c, y, x) = img.at(c, y, w - 1 - x);
            return out;
        }
        case AugmentOp::VFLIP: {
            Image out(h, w);
            for (int c = 0; c < 3; ++c)
                for (int y = 0; y < h; ++y)
                    for (int x = 0; x < w; ++x) out.at(c, y, x) = img.at(c, h - 1 - y, x);
            return out;
        }
        case AugmentOp::ROT90: {
            Image out(w, h);
            for (int c = 0; c < 3; ++c)
                for (int y = 0; y < w; ++y)
                    for (int x = 0; x < h; ++x) out.at(c, y, x) = img.at(c, h - 1 - x, y);
            return out;
        }
        case AugmentOp::ROT180: {
            Image out(h, w);
            for (int c = 0; c < 3; ++c)
                for (int y = 0; y < h; ++y)
                    for (int x = 0; x < w; ++x) out.at(c, y, x) = img.at(c, h - 1 - y, w - 1 - x);
            return out;
        }
        case AugmentOp::ROT270: {
            Image out(w, h);
            for (int c = 0; c < 3; ++c)
                for (int y = 0; y < w; ++y)
                    for (int x = 0; x < h; ++x) out.at(c, y, x) = img.at(c, x, w - 1 - y);
            return out;
        }
    }
    throw ParamError("unknown augmentation op");
}

Image invert_augment(AugmentOp op, const Image& img) {
    switch (op) {
        case AugmentOp::HFLIP: return apply_augment(AugmentOp::HFLIP, img);
        case AugmentOp::VFLIP: return apply_augment(AugmentOp::VFLIP, img);
        case AugmentOp::ROT90: return apply_augment(AugmentOp::ROT270, img);
        case AugmentOp::ROT180: return apply_augment(AugmentOp::ROT180, img);
        case AugmentOp::ROT270: return apply_augment(AugmentOp::ROT90, img);
    }
    throw ParamError("unknown augmentation op");
}

Image pseudo_label_mean(const std::function<Image(const Image&)>& model, const Image& x_test) {
    Image acc(x_test.height, x_test.width);
    for (AugmentOp op : kAugmentOps) {
        Image restored = invert_augment(op, model(apply_augment(op, x_test)));
        if (!restored.same_shape(acc)) throw ShapeError("model output shape mismatch in pseudo_label_mean");
        for (std::size_t i = 0; i < acc.data.size(); ++i) acc.data[i] += restored.data[i];
    }
    for (double& v : acc.data) v /= static_cast<double>(kAugmentOps.size());
    return acc;
}

}  // namespace causiam
