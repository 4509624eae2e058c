#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <new>
#include <span>
#include <string>
#include <vector>

namespace dceiflow {

using Shape = std::vector<int>;

std::size_t shape_numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

class Tape;

/// Hands out 64-byte aligned blocks. Vectorized kernels peel a prefix that
/// depends on the address, so a fixed alignment keeps summation order, and
/// therefore every result bit, independent of where the heap places a buffer.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t alignment{64};

  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), alignment)); }
  void deallocate(T* p, std::size_t) { ::operator delete(p, alignment); }

  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const {
    return true;
  }
};

using FloatBuffer = std::vector<float, AlignedAllocator<float>>;

namespace detail {

struct TensorImpl {
  Shape shape;
  std::shared_ptr<FloatBuffer> data;
  FloatBuffer grad;
  bool requires_grad = false;
  bool is_leaf = true;
  const Tape* producer = nullptr;
  bool graph_released = false;

  void ensure_grad() {
    if (grad.empty()) grad.assign(data->size(), 0.0F);
  }
};

}  // namespace detail

/// Dense row-major float32 array with an optional gradient buffer.
///
/// Copies are shallow: two Tensor handles may refer to the same storage.
/// Use clone() for an independent value.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, bool requires_grad = false);
  Tensor(Shape shape, std::vector<float> values, bool requires_grad = false);

  static Tensor full(Shape shape, float value, bool requires_grad = false);
  static Tensor scalar(float value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  int rank() const { return static_cast<int>(shape().size()); }
  /// Extent of dimension i; negative i counts from the back.
  int dim(int i) const;
  std::size_t numel() const;

  std::span<const float> data() const;
  std::span<float> mutable_data();
  float item() const;

  bool requires_grad() const;
  void set_requires_grad(bool value);
  bool has_grad() const;
  std::span<const float> grad() const;
  std::span<float> mutable_grad();
  void zero_grad();

  /// Same storage, not tracked by any tape.
  Tensor detach() const;
  /// Independent copy of the values, not tracked.
  Tensor clone() const;

  bool same_storage(const Tensor& other) const;
  detail::TensorImpl* impl() const { return impl_.get(); }
  const std::shared_ptr<detail::TensorImpl>& impl_ptr() const { return impl_; }

 private:
  std::shared_ptr<detail::TensorImpl> impl_;
};

/// Records differentiable operations in execution order.
///
/// A tape is filled while it is active (see TapeScope) and consumed by a
/// single backward() call.
class Tape {
 public:
  using BackwardFn = std::function<void()>;

  Tape() = default;
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* active();

  void record(std::vector<Tensor> inputs, const Tensor& output, BackwardFn fn);
  std::size_t size() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }

  /// Seeds d(loss)/d(loss) = 1 and runs every recorded backward rule in
  /// reverse order. Intermediate gradients are released afterwards.
  void backward(const Tensor& loss);

 private:
  struct Node {
    std::vector<std::shared_ptr<detail::TensorImpl>> inputs;
    std::shared_ptr<detail::TensorImpl> output;
    BackwardFn fn;
  };
  void release();

  std::vector<Node> nodes_;
  bool consumed_ = false;

  friend class TapeScope;
};

/// Makes a tape the recording target for the current thread.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

/// Backpropagates from a scalar loss through the tape that produced it.
void backward(const Tensor& loss);

namespace detail {
/// Returns the active tape when any input requires a gradient.
Tape* recording_tape(std::initializer_list<const Tensor*> inputs);
Tape* recording_tape(std::span<const Tensor> inputs);
}  // namespace detail

}  // namespace dceiflow
