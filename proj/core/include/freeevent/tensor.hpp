#pragma once

#include <cstddef>
#include <initializer_list>
#include <new>
#include <span>
#include <string>
#include <vector>

namespace freeevent {

using Shape = std::vector<int>;

/// Cache-line aligned allocator. SIMD reductions peel a prefix that depends on
/// the buffer address, so a fixed alignment keeps results bit-reproducible.
template <class T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};

  AlignedAllocator() = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }

  template <class U>
  friend bool operator==(const AlignedAllocator&, const AlignedAllocator<U>&) noexcept {
    return true;
  }
};

using Buffer = std::vector<double, AlignedAllocator<double>>;

std::string shape_string(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

/// Dense row-major array of doubles. Used for latents (C x H x W), attention
/// maps (heads x queries x keys), feature maps and network parameters.
class Tensor {
public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor zeros_like(const Tensor& other) { return Tensor(other.shape_); }

  const Shape& shape() const noexcept { return shape_; }
  int rank() const noexcept { return static_cast<int>(shape_.size()); }
  int dim(int axis) const { return shape_.at(static_cast<std::size_t>(axis)); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double* data() noexcept { return data_.data(); }
  const double* data() const noexcept { return data_.data(); }
  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }
  Buffer& storage() noexcept { return data_; }
  const Buffer& storage() const noexcept { return data_; }

  double& operator[](std::size_t i) noexcept { return data_[i]; }
  double operator[](std::size_t i) const noexcept { return data_[i]; }

  double& at(int i, int j, int k) { return data_[offset3(i, j, k)]; }
  double at(int i, int j, int k) const { return data_[offset3(i, j, k)]; }

  /// Reinterprets the buffer under a new shape with the same element count.
  Tensor reshaped(Shape shape) const;

  bool same_shape(const Tensor& other) const noexcept { return shape_ == other.shape_; }
  bool all_finite() const noexcept;

  Tensor& operator+=(const Tensor& other);
  Tensor& operator-=(const Tensor& other);
  Tensor& operator*=(double s);

  friend bool operator==(const Tensor& a, const Tensor& b) = default;

private:
  std::size_t offset3(int i, int j, int k) const {
    return (static_cast<std::size_t>(i) * shape_[1] + j) * shape_[2] + k;
  }

  Shape shape_;
  Buffer data_;
};

/// A latent code: rank-3, channels x height x width.
using LatentTensor = Tensor;

Tensor operator+(Tensor a, const Tensor& b);
Tensor operator-(Tensor a, const Tensor& b);
Tensor operator*(double s, Tensor a);

/// Throws ShapeError when shapes differ; `what` names the operation.
void require_same_shape(const Tensor& a, const Tensor& b, const char* what);

double max_abs_diff(const Tensor& a, const Tensor& b);
double l2_norm(const Tensor& a);
double dot(const Tensor& a, const Tensor& b);

}  // namespace freeevent
