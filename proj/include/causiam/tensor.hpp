#pragma once

#include <cstddef>
#include <initializer_list>
#include <vector>

#include "causiam/errors.hpp"

namespace causiam {

/// Dense row-major multi-dimensional array of doubles.
struct Tensor {
    std::vector<int> shape;
    std::vector<double> data;

    Tensor() = default;
    explicit Tensor(std::vector<int> s);

    static Tensor zeros(std::vector<int> s) { return Tensor(std::move(s)); }

    std::size_t numel() const { return data.size(); }
    int rank() const { return static_cast<int>(shape.size()); }
    int extent(int d) const { return shape[static_cast<std::size_t>(d)]; }

    double& operator[](std::size_t i) { return data[i]; }
    double operator[](std::size_t i) const { return data[i]; }

    // Flat index for a 3D tensor (c, y, x).
    std::size_t idx3(int c, int y, int x) const {
        return (static_cast<std::size_t>(c) * shape[1] + y) * shape[2] + x;
    }
    double& at3(int c, int y, int x) { return data[idx3(c, y, x)]; }
    double at3(int c, int y, int x) const { return data[idx3(c, y, x)]; }

    std::size_t idx2(int r, int c) const {
        return static_cast<std::size_t>(r) * shape[1] + c;
    }
    double& at2(int r, int c) { return data[idx2(r, c)]; }
    double at2(int r, int c) const { return data[idx2(r, c)]; }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    Tensor& operator+=(const Tensor& o);
    Tensor& operator-=(const Tensor& o);
    Tensor& operator*=(double s);
};

/// RGB image with values in [0,1], stored planar (c, y, x), c in {0,1,2}.
struct Image {
    int height = 0;
    int width = 0;
    std::vector<double> data;  // size 3*height*width

    Image() = default;
    Image(int h, int w) : height(h), width(w), data(static_cast<std::size_t>(3) * h * w, 0.0) {}

    std::size_t idx(int c, int y, int x) const {
        return (static_cast<std::size_t>(c) * height + y) * width + x;
    }
    double& at(int c, int y, int x) { return data[idx(c, y, x)]; }
    double at(int c, int y, int x) const { return data[idx(c, y, x)]; }

    std::size_t numel() const { return data.size(); }

    bool same_shape(const Image& o) const { return height == o.height && width == o.width; }

    /// Clamp all values into [0,1] in place.
    void clamp01();

    Tensor to_tensor() const;
    static Image from_tensor(const Tensor& t);
};

}  // namespace causiam
