#include "dceiflow/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <stdexcept>

namespace dceiflow {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (int extent : shape) {
    if (extent < 0) throw std::invalid_argument("negative extent in shape " + shape_to_string(shape));
    n *= static_cast<std::size_t>(extent);
  }
  return n;
}

std::string shape_to_string(const Shape& shape) {
  std::ostringstream out;
  out << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << ", ";
    out << shape[i];
  }
  out << ')';
  return out.str();
}

Tensor::Tensor(Shape shape, bool requires_grad) {
  impl_ = std::make_shared<detail::TensorImpl>();
  const std::size_t n = shape_numel(shape);
  impl_->shape = std::move(shape);
  impl_->data = std::make_shared<FloatBuffer>(n, 0.0F);
  impl_->requires_grad = requires_grad;
}

Tensor::Tensor(Shape shape, std::vector<float> values, bool requires_grad) {
  if (values.size() != shape_numel(shape)) {
    throw std::invalid_argument("tensor value count " + std::to_string(values.size()) +
                                " does not match shape " + shape_to_string(shape));
  }
  impl_ = std::make_shared<detail::TensorImpl>();
  impl_->shape = std::move(shape);
  impl_->data = std::make_shared<FloatBuffer>(values.begin(), values.end());
  impl_->requires_grad = requires_grad;
}

Tensor Tensor::full(Shape shape, float value, bool requires_grad) {
  Tensor t(std::move(shape), requires_grad);
  std::fill(t.impl_->data->begin(), t.impl_->data->end(), value);
  return t;
}

Tensor Tensor::scalar(float value, bool requires_grad) { return full({1}, value, requires_grad); }

const Shape& Tensor::shape() const {
  if (!impl_) throw std::logic_error("use of undefined tensor");
  return impl_->shape;
}

int Tensor::dim(int i) const {
  const int r = rank();
  if (i < 0) i += r;
  if (i < 0 || i >= r) throw std::out_of_range("dimension index out of range for " + shape_to_string(shape()));
  return shape()[static_cast<std::size_t>(i)];
}

std::size_t Tensor::numel() const { return impl_ ? impl_->data->size() : 0; }

std::span<const float> Tensor::data() const {
  if (!impl_) throw std::logic_error("use of undefined tensor");
  return {impl_->data->data(), impl_->data->size()};
}

std::span<float> Tensor::mutable_data() {
  if (!impl_) throw std::logic_error("use of undefined tensor");
  return {impl_->data->data(), impl_->data->size()};
}

float Tensor::item() const {
  if (numel() != 1) throw std::invalid_argument("item() needs a single-element tensor, got " + shape_to_string(shape()));
  return (*impl_->data)[0];
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

void Tensor::set_requires_grad(bool value) {
  if (!impl_) throw std::logic_error("use of undefined tensor");
  if (!impl_->is_leaf) throw std::logic_error("requires_grad can only be changed on leaf tensors");
  impl_->requires_grad = value;
}

bool Tensor::has_grad() const { return impl_ && !impl_->grad.empty(); }

std::span<const float> Tensor::grad() const {
  if (!impl_) throw std::logic_error("use of undefined tensor");
  return {impl_->grad.data(), impl_->grad.size()};
}

std::span<float> Tensor::mutable_grad() {
  if (!impl_) throw std::logic_error("use of undefined tensor");
  impl_->ensure_grad();
  return {impl_->grad.data(), impl_->grad.size()};
}

void Tensor::zero_grad() {
  if (impl_ && !impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0F);
}

Tensor Tensor::detach() const {
  Tensor t;
  t.impl_ = std::make_shared<detail::TensorImpl>();
  t.impl_->shape = shape();
  t.impl_->data = impl_->data;
  return t;
}

Tensor Tensor::clone() const { return Tensor(shape(), std::vector<float>(data().begin(), data().end())); }

bool Tensor::same_storage(const Tensor& other) const {
  return impl_ && other.impl_ && impl_->data == other.impl_->data;
}

namespace {
thread_local Tape* g_active_tape = nullptr;
}

Tape* Tape::active() { return g_active_tape; }

void Tape::record(std::vector<Tensor> inputs, const Tensor& output, BackwardFn fn) {
  if (consumed_) throw std::logic_error("cannot record on a tape that has already run backward");
  Node node;
  node.inputs.reserve(inputs.size());
  for (auto& t : inputs) node.inputs.push_back(t.impl_ptr());
  node.output = output.impl_ptr();
  node.output->requires_grad = true;
  node.output->is_leaf = false;
  node.output->producer = this;
  node.fn = std::move(fn);
  nodes_.push_back(std::move(node));
}

void Tape::backward(const Tensor& loss) {
  if (consumed_) throw std::logic_error("backward() already ran on this tape; record a new one");
  if (!loss.defined() || loss.numel() != 1) {
    throw std::invalid_argument("backward() needs a scalar loss");
  }
  if (loss.impl()->producer != this) {
    throw std::invalid_argument("loss was not produced on this tape (detached graph)");
  }
  loss.impl()->ensure_grad();
  loss.impl()->grad[0] += 1.0F;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    if (it->output->grad.empty()) continue;
    it->fn();
  }
  release();
  consumed_ = true;
}

Tape::~Tape() { release(); }

void Tape::release() {
  for (auto& node : nodes_) {
    node.output->grad.clear();
    node.output->grad.shrink_to_fit();
    node.output->producer = nullptr;
    node.output->graph_released = true;
  }
  nodes_.clear();
}

TapeScope::TapeScope(Tape& tape) : previous_(g_active_tape) {
  if (tape.consumed()) throw std::logic_error("cannot activate a consumed tape");
  g_active_tape = &tape;
}

TapeScope::~TapeScope() { g_active_tape = previous_; }

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) throw std::invalid_argument("backward() needs a scalar loss");
  if (loss.impl()->graph_released) throw std::logic_error("backward() already ran for this graph; record it again");
  const Tape* tape = loss.impl()->producer;
  if (tape == nullptr || !loss.requires_grad()) {
    throw std::invalid_argument("loss is not connected to any recorded graph (detached graph)");
  }
  const_cast<Tape*>(tape)->backward(loss);
}

namespace detail {

Tape* recording_tape(std::initializer_list<const Tensor*> inputs) {
  Tape* tape = Tape::active();
  if (tape == nullptr) return nullptr;
  for (const Tensor* t : inputs) {
    if (t->requires_grad()) return tape;
  }
  return nullptr;
}

Tape* recording_tape(std::span<const Tensor> inputs) {
  Tape* tape = Tape::active();
  if (tape == nullptr) return nullptr;
  for (const Tensor& t : inputs) {
    if (t.requires_grad()) return tape;
  }
  return nullptr;
}

}  // namespace detail

}  // namespace dceiflow
