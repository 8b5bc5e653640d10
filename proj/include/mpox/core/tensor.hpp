#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "mpox/core/error.hpp"

namespace mpox {

struct Shape3 {
    int h = 0;
    int w = 0;
    int c = 0;

    std::size_t size() const { return static_cast<std::size_t>(h) * w * c; }
    bool operator==(const Shape3&) const = default;
    std::string str() const {
        return std::to_string(h) + "x" + std::to_string(w) + "x" + std::to_string(c);
    }
};

/// Dense H x W x C float tensor, channels last (the Keras layout).
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape3 shape, float fill = 0.0f) : shape_(shape), data_(shape.size(), fill) {
        require(shape.h >= 0 && shape.w >= 0 && shape.c >= 0, ErrorCode::invalid_argument,
                "negative tensor dimension");
    }
    Tensor(int h, int w, int c, float fill = 0.0f) : Tensor(Shape3{h, w, c}, fill) {}
    Tensor(Shape3 shape, std::vector<float> values) : shape_(shape), data_(std::move(values)) {
        require(data_.size() == shape.size(), ErrorCode::invalid_argument,
                "tensor data size does not match shape " + shape.str());
    }

    const Shape3& shape() const { return shape_; }
    int height() const { return shape_.h; }
    int width() const { return shape_.w; }
    int channels() const { return shape_.c; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    float& at(int y, int x, int ch) { return data_[index(y, x, ch)]; }
    float at(int y, int x, int ch) const { return data_[index(y, x, ch)]; }
    float* pixel(int y, int x) { return data_.data() + index(y, x, 0); }
    const float* pixel(int y, int x) const { return data_.data() + index(y, x, 0); }

    // lvalues only: a span into a temporary dangles in range-for
    std::span<float> values() & { return data_; }
    std::span<const float> values() const& { return data_; }
    std::span<const float> values() && = delete;
    float* data() { return data_.data(); }
    const float* data() const { return data_.data(); }
    std::vector<float>& storage() { return data_; }

    void fill(float v) { std::fill(data_.begin(), data_.end(), v); }

    bool operator==(const Tensor& other) const = default;

private:
    std::size_t index(int y, int x, int ch) const {
        return (static_cast<std::size_t>(y) * shape_.w + x) * shape_.c + ch;
    }

    Shape3 shape_{};
    std::vector<float> data_;
};

/// Images are tensors whose pixel values live in [0, 255] until a backbone
/// normalisation is applied.
using ImageTensor = Tensor;

}  // namespace mpox
