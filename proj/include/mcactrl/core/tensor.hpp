#pragma once

#include <cstdint>
#include <initializer_list>
#include <new>
#include <span>
#include <string>
#include <vector>

namespace mcactrl {

using Shape = std::vector<int>;

/// Cache-line aligned storage, so vectorised kernels see the same alignment
/// for every tensor and results do not depend on where the heap put them.
template <class T>
struct AlignedAllocator {
    using value_type = T;
    static constexpr std::align_val_t kAlign{64};

    AlignedAllocator() = default;
    template <class U>
    AlignedAllocator(const AlignedAllocator<U>&) {}

    T* allocate(size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
    void deallocate(T* p, size_t) { ::operator delete(p, kAlign); }
    template <class U>
    bool operator==(const AlignedAllocator<U>&) const { return true; }
};

using FloatBuffer = std::vector<float, AlignedAllocator<float>>;

std::string shape_str(const Shape& shape);
int64_t shape_numel(const Shape& shape);

/// Dense row-major float32 tensor with value semantics.
struct Tensor {
    Shape shape;
    FloatBuffer data;

    Tensor() = default;
    explicit Tensor(Shape s, float fill = 0.0f);
    Tensor(Shape s, FloatBuffer values);
    Tensor(Shape s, std::initializer_list<float> values) : Tensor(std::move(s), FloatBuffer(values)) {}

    int rank() const { return static_cast<int>(shape.size()); }
    int dim(int i) const { return shape.at(static_cast<size_t>(i < 0 ? rank() + i : i)); }
    int64_t numel() const { return static_cast<int64_t>(data.size()); }
    bool empty() const { return data.empty(); }

    float* ptr() { return data.data(); }
    const float* ptr() const { return data.data(); }
    std::span<float> span() { return data; }
    std::span<const float> span() const { return data; }

    float& operator[](int64_t i) { return data[static_cast<size_t>(i)]; }
    float operator[](int64_t i) const { return data[static_cast<size_t>(i)]; }

    /// Same data, new shape; element counts must match.
    Tensor reshaped(Shape s) const;

    /// Copy of batch item `index` along the leading axis, keeping a unit leading dim.
    Tensor batch_item(int index) const;

    bool all_finite() const;
};

/// Stacks equally shaped tensors that each have a unit leading dim.
Tensor concat_batch(std::span<const Tensor> items);

float max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace mcactrl
