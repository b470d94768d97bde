#include "mcactrl/core/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace mcactrl {

std::string shape_str(const Shape& shape) {
    std::string out = "[";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) out += ", ";
        out += std::to_string(shape[i]);
    }
    return out + "]";
}

int64_t shape_numel(const Shape& shape) {
    int64_t n = 1;
    for (int d : shape) {
        if (d < 0) throw std::invalid_argument("negative dimension in shape " + shape_str(shape));
        n *= d;
    }
    return n;
}

Tensor::Tensor(Shape s, float fill) : shape(std::move(s)), data(static_cast<size_t>(shape_numel(shape))) {
    if (fill != 0.0f) std::fill(data.begin(), data.end(), fill);
}

Tensor::Tensor(Shape s, FloatBuffer values) : shape(std::move(s)), data(std::move(values)) {
    if (shape_numel(shape) != static_cast<int64_t>(data.size())) {
        throw std::invalid_argument("tensor data size " + std::to_string(data.size()) + " does not match shape " +
                                    shape_str(shape));
    }
}

Tensor Tensor::reshaped(Shape s) const {
    if (shape_numel(s) != numel()) {
        throw std::invalid_argument("cannot reshape " + shape_str(shape) + " to " + shape_str(s));
    }
    return Tensor(std::move(s), data);
}

Tensor Tensor::batch_item(int index) const {
    if (rank() == 0 || index < 0 || index >= shape[0]) {
        throw std::invalid_argument("batch index " + std::to_string(index) + " out of range for " + shape_str(shape));
    }
    Shape s = shape;
    s[0] = 1;
    const int64_t stride = numel() / shape[0];
    Tensor out(s);
    std::copy_n(data.begin() + index * stride, stride, out.data.begin());
    return out;
}

bool Tensor::all_finite() const {
    return std::all_of(data.begin(), data.end(), [](float v) { return std::isfinite(v); });
}

Tensor concat_batch(std::span<const Tensor> items) {
    if (items.empty()) throw std::invalid_argument("concat_batch: no tensors");
    Shape s = items[0].shape;
    if (s.empty() || s[0] != 1) throw std::invalid_argument("concat_batch: items need a unit leading dim");
    for (const auto& t : items) {
        if (t.shape != s) throw std::invalid_argument("concat_batch: shape mismatch " + shape_str(t.shape));
    }
    s[0] = static_cast<int>(items.size());
    Tensor out(s);
    auto it = out.data.begin();
    for (const auto& t : items) it = std::copy(t.data.begin(), t.data.end(), it);
    return out;
}

float max_abs_diff(const Tensor& a, const Tensor& b) {
    if (a.shape != b.shape) {
        throw std::invalid_argument("max_abs_diff: shape mismatch " + shape_str(a.shape) + " vs " + shape_str(b.shape));
    }
    float m = 0.0f;
    for (size_t i = 0; i < a.data.size(); ++i) m = std::max(m, std::abs(a.data[i] - b.data[i]));
    return m;
}

}  // namespace mcactrl
