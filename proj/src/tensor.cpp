#include "causiam/tensor.hpp"

#include <algorithm>

namespace causiam {

Tensor::Tensor(std::vector<int> s) : shape(std::move(s)) {
    std::size_t n = 1;
    for (int e : shape) {
        if (e <= 0) throw ShapeError("tensor extents must be positive");
        n *= static_cast<std::size_t>(e);
    }
    data.assign(n, 0.0);
}

Tensor& Tensor::operator+=(const Tensor& o) {
    if (!same_shape(o)) throw ShapeError("tensor shape mismatch in +=");
    for (std::size_t i = 0; i < data.size(); ++i) data[i] += o.data[i];
    return *this;
}

Tensor& Tensor::operator-=(const Tensor& o) {
    if (!same_shape(o)) throw ShapeError("tensor shape mismatch in -=");
    for (std::size_t i = 0; i < data.size(); ++i) data[i] -= o.data[i];
    return *this;
}

Tensor& Tensor::operator*=(double s) {
    for (double& v : data) v *= s;
    return *this;
}

void Image::clamp01() {
    for (double& v : data) v = std::clamp(v, 0.0, 1.0);
}

Tensor Image::to_tensor() const {
    Tensor t({3, height, width});
    t.data = data;
    return t;
}

Image Image::from_tensor(const Tensor& t) {
    if (t.rank() != 3 || t.extent(0) != 3) throw ShapeError("image tensor must be (3,H,W)");
    Image img(t.extent(1), t.extent(2));
    img.data = t.data;
    return img;
}

}  // namespace causiam
