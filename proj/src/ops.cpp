#include "dceiflow/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <new>
#include <utility>
#include <stdexcept>

namespace dceiflow::ops {

namespace {

using detail::TensorImpl;
using RowMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMatrix>;
using ConstMatMap = Eigen::Map<const RowMatrix>;

const float* values(const Tensor& t) { return t.impl()->data->data(); }
float* values(Tensor& t) { return t.impl()->data->data(); }

void require(bool condition, const std::string& message) {
  if (!condition) throw std::invalid_argument(message);
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  require(a.defined() && b.defined(), std::string(op) + ": undefined operand");
  require(a.shape() == b.shape(), std::string(op) + ": shape mismatch " + shape_to_string(a.shape()) + " vs " +
                                      shape_to_string(b.shape()));
}

// Accumulates `g` into the gradient of `t` when it is tracked.
float* grad_target(TensorImpl* t) {
  if (!t->requires_grad) return nullptr;
  t->ensure_grad();
  return t->grad.data();
}

// Leading extent when the last two dimensions are treated as an image.
std::size_t leading_extent(const Shape& s) {
  std::size_t b = 1;
  for (std::size_t i = 0; i + 2 < s.size(); ++i) b *= static_cast<std::size_t>(s[i]);
  return b;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor out(a.shape());
  const std::size_t n = out.numel();
  const float* pa = values(a);
  const float* pb = values(b);
  float* po = values(out);
  for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i];
  if (Tape* tape = detail::recording_tape({&a, &b})) {
    tape->record({a, b}, out, [ia = a.impl(), ib = b.impl(), io = out.impl(), n]() {
      const float* g = io->grad.data();
      if (float* ga = grad_target(ia))
        for (std::size_t i = 0; i < n; ++i) ga[i] += g[i];
      if (float* gb = grad_target(ib))
        for (std::size_t i = 0; i < n; ++i) gb[i] += g[i];
    });
  }
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  Tensor out(a.shape());
  const std::size_t n = out.numel();
  const float* pa = values(a);
  const float* pb = values(b);
  float* po = values(out);
  for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] - pb[i];
  if (Tape* tape = detail::recording_tape({&a, &b})) {
    tape->record({a, b}, out, [ia = a.impl(), ib = b.impl(), io = out.impl(), n]() {
      const float* g = io->grad.data();
      if (float* ga = grad_target(ia))
        for (std::size_t i = 0; i < n; ++i) ga[i] += g[i];
      if (float* gb = grad_target(ib))
        for (std::size_t i = 0; i < n; ++i) gb[i] -= g[i];
    });
  }
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  Tensor out(a.shape());
  const std::size_t n = out.numel();
  const float* pa = values(a);
  const float* pb = values(b);
  float* po = values(out);
  for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] * pb[i];
  if (Tape* tape = detail::recording_tape({&a, &b})) {
    tape->record({a, b}, out, [ia = a.impl(), ib = b.impl(), io = out.impl(), n]() {
      const float* g = io->grad.data();
      const float* va = ia->data->data();
      const float* vb = ib->data->data();
      if (float* ga = grad_target(ia))
        for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * vb[i];
      if (float* gb = grad_target(ib))
        for (std::size_t i = 0; i < n; ++i) gb[i] += g[i] * va[i];
    });
  }
  return out;
}

Tensor add_scalar(const Tensor& x, float value) {
  Tensor out(x.shape());
  const std::size_t n = out.numel();
  const float* px = values(x);
  float* po = values(out);
  for (std::size_t i = 0; i < n; ++i) po[i] = px[i] + value;
  if (Tape* tape = detail::recording_tape({&x})) {
    tape->record({x}, out, [ix = x.impl(), io = out.impl(), n]() {
      const float* g = io->grad.data();
      float* gx = grad_target(ix);
      for (std::size_t i = 0; i < n; ++i) gx[i] += g[i];
    });
  }
  return out;
}

Tensor scale(const Tensor& x, float factor) {
  Tensor out(x.shape());
  const std::size_t n = out.numel();
  const float* px = values(x);
  float* po = values(out);
  for (std::size_t i = 0; i < n; ++i) po[i] = px[i] * factor;
  if (Tape* tape = detail::recording_tape({&x})) {
    tape->record({x}, out, [ix = x.impl(), io = out.impl(), n, factor]() {
      const float* g = io->grad.data();
      float* gx = grad_target(ix);
      for (std::size_t i = 0; i < n; ++i) gx[i] += g[i] * factor;
    });
  }
  return out;
}

Tensor pow_scalar(const Tensor& x, float exponent) {
  Tensor out(x.shape());
  const std::size_t n = out.numel();
  const float* px = values(x);
  float* po = values(out);
  for (std::size_t i = 0; i < n; ++i) {
    require(!(px[i] <= 0.0F), "pow_scalar: base must be positive");  // NaN propagates
    po[i] = std::pow(px[i], exponent);
  }
  if (Tape* tape = detail::recording_tape({&x})) {
    tape->record({x}, out, [ix = x.impl(), io = out.impl(), n, exponent]() {
      const float* g = io->grad.data();
      const float* vx = ix->data->data();
      const float* vo = io->data->data();
      float* gx = grad_target(ix);
      // d/dx x^e = e * x^e / x
      for (std::size_t i = 0; i < n; ++i) gx[i] += g[i] * exponent * vo[i] / vx[i];
    });
  }
  return out;
}

Tensor relu(const Tensor& x) {
  Tensor out(x.shape());
  const std::size_t n = out.numel();
  const float* px = values(x);
  float* po = values(out);
  for (std::size_t i = 0; i < n; ++i) po[i] = px[i] > 0.0F ? px[i] : 0.0F;
  if (Tape* tape = detail::recording_tape({&x})) {
    tape->record({x}, out, [ix = x.impl(), io = out.impl(), n]() {
      const float* g = io->grad.data();
      const float* vx = ix->data->data();
      float* gx = grad_target(ix);
      for (std::size_t i = 0; i < n; ++i)
        if (vx[i] > 0.0F) gx[i] += g[i];
    });
  }
  return out;
}

Tensor sigmoid(const Tensor& x) {
  Tensor out(x.shape());
  const std::size_t n = out.numel();
  const float* px = values(x);
  float* po = values(out);
  for (std::size_t i = 0; i < n; ++i) po[i] = 1.0F / (1.0F + std::exp(-px[i]));
  if (Tape* tape = detail::recording_tape({&x})) {
    tape->record({x}, out, [ix = x.impl(), io = out.impl(), n]() {
      const float* g = io->grad.data();
      const float* vo = io->data->data();
      float* gx = grad_target(ix);
      for (std::size_t i = 0; i < n; ++i) gx[i] += g[i] * vo[i] * (1.0F - vo[i]);
    });
  }
  return out;
}

Tensor tanh(const Tensor& x) {
  Tensor out(x.shape());
  const std::size_t n = out.numel();
  const float* px = values(x);
  float* po = values(out);
  for (std::size_t i = 0; i < n; ++i) po[i] = std::tanh(px[i]);
  if (Tape* tape = detail::recording_tape({&x})) {
    tape->record({x}, out, [ix = x.impl(), io = out.impl(), n]() {
      const float* g = io->grad.data();
      const float* vo = io->data->data();
      float* gx = grad_target(ix);
      for (std::size_t i = 0; i < n; ++i) gx[i] += g[i] * (1.0F - vo[i] * vo[i]);
    });
  }
  return out;
}

Tensor sum(const Tensor& x) {
  const std::size_t n = x.numel();
  const float* px = values(x);
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += px[i];
  Tensor out = Tensor::scalar(static_cast<float>(acc));
  if (Tape* tape = detail::recording_tape({&x})) {
    tape->record({x}, out, [ix = x.impl(), io = out.impl(), n]() {
      const float g = io->grad[0];
      float* gx = grad_target(ix);
      for (std::size_t i = 0; i < n; ++i) gx[i] += g;
    });
  }
  return out;
}

Tensor mean(const Tensor& x) {
  require(x.numel() > 0, "mean: empty tensor");
  return scale(sum(x), 1.0F / static_cast<float>(x.numel()));
}

Tensor channel_sum(const Tensor& x) {
  require(x.rank() == 4, "channel_sum: expected NCHW, got " + shape_to_string(x.shape()));
  const int batch = x.dim(0), channels = x.dim(1);
  const std::size_t plane = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
  Tensor out({batch, 1, x.dim(2), x.dim(3)});
  const float* px = values(x);
  float* po = values(out);
  for (int n = 0; n < batch; ++n)
    for (int c = 0; c < channels; ++c) {
      const float* src = px + (static_cast<std::size_t>(n) * channels + c) * plane;
      float* dst = po + static_cast<std::size_t>(n) * plane;
      for (std::size_t i = 0; i < plane; ++i) dst[i] += src[i];
    }
  if (Tape* tape = detail::recording_tape({&x})) {
    tape->record({x}, out, [ix = x.impl(), io = out.impl(), batch, channels, plane]() {
      const float* g = io->grad.data();
      float* gx = grad_target(ix);
      for (int n = 0; n < batch; ++n)
        for (int c = 0; c < channels; ++c) {
          float* dst = gx + (static_cast<std::size_t>(n) * channels + c) * plane;
          const float* src = g + static_cast<std::size_t>(n) * plane;
          for (std::size_t i = 0; i < plane; ++i) dst[i] += src[i];
        }
    });
  }
  return out;
}

Tensor concat(std::span<const Tensor> parts, int axis) {
  require(!parts.empty(), "concat: no operands");
  const Shape& first = parts[0].shape();
  const int rank = static_cast<int>(first.size());
  if (axis < 0) axis += rank;
  require(axis >= 0 && axis < rank, "concat: axis out of range");
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const Tensor& p : parts) {
    require(p.rank() == rank, "concat: rank mismatch");
    for (int d = 0; d < rank; ++d)
      if (d != axis)
        require(p.shape()[d] == first[d], "concat: shape mismatch " + shape_to_string(p.shape()) + " vs " +
                                              shape_to_string(first));
    out_shape[axis] += p.shape()[axis];
  }
  std::size_t outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= first[d];
  for (int d = axis + 1; d < rank; ++d) inner *= first[d];
  const std::size_t out_row = static_cast<std::size_t>(out_shape[axis]) * inner;

  Tensor out(out_shape);
  float* po = values(out);
  std::vector<std::size_t> offsets;
  std::size_t offset = 0;
  for (const Tensor& p : parts) {
    offsets.push_back(offset);
    const std::size_t block = static_cast<std::size_t>(p.shape()[axis]) * inner;
    const float* src = values(p);
    for (std::size_t o = 0; o < outer; ++o) std::copy_n(src + o * block, block, po + o * out_row + offset);
    offset += block;
  }
  if (Tape* tape = detail::recording_tape(parts)) {
    std::vector<TensorImpl*> impls;
    std::vector<std::size_t> blocks;
    for (const Tensor& p : parts) {
      impls.push_back(p.impl());
      blocks.push_back(static_cast<std::size_t>(p.shape()[axis]) * inner);
    }
    tape->record(std::vector<Tensor>(parts.begin(), parts.end()), out,
                 [impls, blocks, offsets, io = out.impl(), outer, out_row]() {
                   const float* g = io->grad.data();
                   for (std::size_t k = 0; k < impls.size(); ++k) {
                     float* gp = grad_target(impls[k]);
                     if (gp == nullptr) continue;
                     for (std::size_t o = 0; o < outer; ++o) {
                       const float* src = g + o * out_row + offsets[k];
                       float* dst = gp + o * blocks[k];
                       for (std::size_t i = 0; i < blocks[k]; ++i) dst[i] += src[i];
                     }
                   }
                 });
  }
  return out;
}

Tensor slice(const Tensor& x, int axis, int begin, int end) {
  const int rank = x.rank();
  if (axis < 0) axis += rank;
  require(axis >= 0 && axis < rank, "slice: axis out of range");
  require(0 <= begin && begin <= end && end <= x.shape()[axis], "slice: bad range");
  Shape out_shape = x.shape();
  out_shape[axis] = end - begin;
  std::size_t outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= x.shape()[d];
  for (int d = axis + 1; d < rank; ++d) inner *= x.shape()[d];
  const std::size_t in_row = static_cast<std::size_t>(x.shape()[axis]) * inner;
  const std::size_t block = static_cast<std::size_t>(end - begin) * inner;
  const std::size_t start = static_cast<std::size_t>(begin) * inner;

  Tensor out(out_shape);
  const float* px = values(x);
  float* po = values(out);
  for (std::size_t o = 0; o < outer; ++o) std::copy_n(px + o * in_row + start, block, po + o * block);
  if (Tape* tape = detail::recording_tape({&x})) {
    tape->record({x}, out, [ix = x.impl(), io = out.impl(), outer, in_row, block, start]() {
      const float* g = io->grad.data();
      float* gx = grad_target(ix);
      for (std::size_t o = 0; o < outer; ++o) {
        float* dst = gx + o * in_row + start;
        const float* src = g + o * block;
        for (std::size_t i = 0; i < block; ++i) dst[i] += src[i];
      }
    });
  }
  return out;
}

Tensor reshape(const Tensor& x, Shape shape) {
  require(shape_numel(shape) == x.numel(),
          "reshape: cannot view " + shape_to_string(x.shape()) + " as " + shape_to_string(shape));
  Tensor out = x.detach();
  out.impl()->shape = std::move(shape);
  if (Tape* tape = detail::recording_tape({&x})) {
    tape->record({x}, out, [ix = x.impl(), io = out.impl()]() {
      const float* g = io->grad.data();
      float* gx = grad_target(ix);
      const std::size_t n = io->grad.size();
      for (std::size_t i = 0; i < n; ++i) gx[i] += g[i];
    });
  }
  return out;
}

Tensor transpose2d(const Tensor& x) {
  require(x.rank() == 2, "transpose2d: expected a matrix, got " + shape_to_string(x.shape()));
  const int rows = x.dim(0), cols = x.dim(1);
  Tensor out({cols, rows});
  MatMap(values(out), cols, rows) = ConstMatMap(values(x), rows, cols).transpose();
  if (Tape* tape = detail::recording_tape({&x})) {
    tape->record({x}, out, [ix = x.impl(), io = out.impl(), rows, cols]() {
      float* gx = grad_target(ix);
      MatMap(gx, rows, cols) += ConstMatMap(io->grad.data(), cols, rows).transpose();
    });
  }
  return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require(a.rank() == 2 && b.rank() == 2, "matmul: operands must be matrices");
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  require(b.dim(0) == k, "matmul: inner dimensions differ: " + shape_to_string(a.shape()) + " x " +
                             shape_to_string(b.shape()));
  Tensor out({m, n});
  MatMap(values(out), m, n).noalias() = ConstMatMap(values(a), m, k) * ConstMatMap(values(b), k, n);
  if (Tape* tape = detail::recording_tape({&a, &b})) {
    tape->record({a, b}, out, [ia = a.impl(), ib = b.impl(), io = out.impl(), m, k, n]() {
      ConstMatMap g(io->grad.data(), m, n);
      if (float* ga = grad_target(ia)) MatMap(ga, m, k).noalias() += g * ConstMatMap(ib->data->data(), k, n).transpose();
      if (float* gb = grad_target(ib)) MatMap(gb, k, n).noalias() += ConstMatMap(ia->data->data(), m, k).transpose() * g;
    });
  }
  return out;
}

namespace {

struct ConvGeometry {
  int channels, height, width, kernel, stride, padding, out_height, out_width;
  std::size_t rows() const { return static_cast<std::size_t>(channels) * kernel * kernel; }
  std::size_t cols() const { return static_cast<std::size_t>(out_height) * out_width; }
  bool is_pointwise() const { return kernel == 1 && stride == 1 && padding == 0; }
};

// Output columns [lo, hi) whose input column ox * stride - padding + kx lies
// inside the row.
std::pair<int, int> valid_columns(const ConvGeometry& g, int kx) {
  const int offset = kx - g.padding;
  const int lo = offset >= 0 ? 0 : (-offset + g.stride - 1) / g.stride;
  const int last = g.width - 1 - offset;
  const int hi = last < 0 ? 0 : std::min(g.out_width, last / g.stride + 1);
  return {std::min(lo, hi), hi};
}

void im2col(const float* image, const ConvGeometry& g, float* cols) {
  const std::size_t ncols = g.cols();
  for (int c = 0; c < g.channels; ++c)
    for (int ky = 0; ky < g.kernel; ++ky)
      for (int kx = 0; kx < g.kernel; ++kx) {
        float* row = cols + ((static_cast<std::size_t>(c) * g.kernel + ky) * g.kernel + kx) * ncols;
        const float* plane = image + static_cast<std::size_t>(c) * g.height * g.width;
        const auto [lo, hi] = valid_columns(g, kx);
        const int offset = kx - g.padding;
        for (int oy = 0; oy < g.out_height; ++oy) {
          const int iy = oy * g.stride - g.padding + ky;
          float* dst = row + static_cast<std::size_t>(oy) * g.out_width;
          if (iy < 0 || iy >= g.height) {
            std::fill_n(dst, g.out_width, 0.0F);
            continue;
          }
          const float* src = plane + static_cast<std::size_t>(iy) * g.width;
          std::fill(dst, dst + lo, 0.0F);
          if (g.stride == 1 && hi > lo) {
            std::copy(src + lo + offset, src + hi + offset, dst + lo);
          } else if (g.stride > 1) {
            for (int ox = lo; ox < hi; ++ox) dst[ox] = src[ox * g.stride + offset];
          }
          std::fill(dst + hi, dst + g.out_width, 0.0F);
        }
      }
}

void col2im(const float* cols, const ConvGeometry& g, float* image) {
  const std::size_t ncols = g.cols();
  for (int c = 0; c < g.channels; ++c)
    for (int ky = 0; ky < g.kernel; ++ky)
      for (int kx = 0; kx < g.kernel; ++kx) {
        const float* row = cols + ((static_cast<std::size_t>(c) * g.kernel + ky) * g.kernel + kx) * ncols;
        float* plane = image + static_cast<std::size_t>(c) * g.height * g.width;
        const auto [lo, hi] = valid_columns(g, kx);
        const int offset = kx - g.padding;
        for (int oy = 0; oy < g.out_height; ++oy) {
          const int iy = oy * g.stride - g.padding + ky;
          if (iy < 0 || iy >= g.height) continue;
          const float* src = row + static_cast<std::size_t>(oy) * g.out_width;
          float* dst = plane + static_cast<std::size_t>(iy) * g.width;
          for (int ox = lo; ox < hi; ++ox) dst[ox * g.stride + offset] += src[ox];
        }
      }
}

// Uninitialized 64-byte aligned float storage for buffers that are fully
// overwritten before being read.
class Scratch {
 public:
  explicit Scratch(std::size_t n)
      : data_(n ? static_cast<float*>(::operator new(n * sizeof(float), std::align_val_t{64})) : nullptr) {}
  ~Scratch() {
    if (data_) ::operator delete(data_, std::align_val_t{64});
  }
  Scratch(const Scratch&) = delete;
  Scratch& operator=(const Scratch&) = delete;
  float* data() const { return data_; }

 private:
  float* data_;
};

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, int stride, int padding) {
  require(input.rank() == 4, "conv2d: input must be NCHW, got " + shape_to_string(input.shape()));
  require(weight.rank() == 4, "conv2d: weight must be (Co,Ci,k,k), got " + shape_to_string(weight.shape()));
  require(stride >= 1 && padding >= 0, "conv2d: stride must be >= 1 and padding >= 0");
  require(weight.dim(2) == weight.dim(3), "conv2d: only square kernels are supported");
  require(weight.dim(1) == input.dim(1), "conv2d: channel mismatch, input " + shape_to_string(input.shape()) +
                                             " weight " + shape_to_string(weight.shape()));
  const int batch = input.dim(0), out_channels = weight.dim(0);
  if (bias.defined()) require(bias.rank() == 1 && bias.dim(0) == out_channels, "conv2d: bias shape mismatch");

  ConvGeometry g{input.dim(1), input.dim(2), input.dim(3), weight.dim(2), stride, padding, 0, 0};
  g.out_height = (g.height + 2 * padding - g.kernel) / stride + 1;
  g.out_width = (g.width + 2 * padding - g.kernel) / stride + 1;
  require(g.height + 2 * padding >= g.kernel && g.width + 2 * padding >= g.kernel, "conv2d: kernel larger than input");

  const std::size_t k_rows = g.rows(), p_cols = g.cols();
  const std::size_t in_plane = static_cast<std::size_t>(g.channels) * g.height * g.width;
  const std::size_t out_plane = static_cast<std::size_t>(out_channels) * p_cols;
  Tape* tape = detail::recording_tape({&input, &weight, &bias});

  Tensor out({batch, out_channels, g.out_height, g.out_width});
  ConstMatMap w(values(weight), out_channels, static_cast<Eigen::Index>(k_rows));
  auto cols = std::make_shared<Scratch>(g.is_pointwise() ? 0 : (tape ? batch : 1) * k_rows * p_cols);
  for (int n = 0; n < batch; ++n) {
    const float* src = values(input) + n * in_plane;
    const float* col_ptr = src;
    if (!g.is_pointwise()) {
      float* dst = cols->data() + (tape ? n * k_rows * p_cols : 0);
      im2col(src, g, dst);
      col_ptr = dst;
    }
    MatMap y(values(out) + n * out_plane, out_channels, static_cast<Eigen::Index>(p_cols));
    y.noalias() = w * ConstMatMap(col_ptr, static_cast<Eigen::Index>(k_rows), static_cast<Eigen::Index>(p_cols));
    if (bias.defined()) {
      const float* b = values(bias);
      for (int o = 0; o < out_channels; ++o) y.row(o).array() += b[o];
    }
  }

  if (tape) {
    std::vector<Tensor> inputs{input, weight};
    if (bias.defined()) inputs.push_back(bias);
    tape->record(std::move(inputs), out,
                 [ii = input.impl(), iw = weight.impl(), ib = bias.defined() ? bias.impl() : nullptr,
                  io = out.impl(), cols, g, batch, out_channels, k_rows, p_cols, in_plane, out_plane]() {
                   float* gw = grad_target(iw);
                   float* gb = ib ? grad_target(ib) : nullptr;
                   float* gi = grad_target(ii);
                   ConstMatMap w(iw->data->data(), out_channels, static_cast<Eigen::Index>(k_rows));
                   Scratch dcols(g.is_pointwise() ? 0 : k_rows * p_cols);
                   for (int n = 0; n < batch; ++n) {
                     ConstMatMap gy(io->grad.data() + n * out_plane, out_channels, static_cast<Eigen::Index>(p_cols));
                     const float* col_ptr = g.is_pointwise() ? ii->data->data() + n * in_plane
                                                             : cols->data() + n * k_rows * p_cols;
                     ConstMatMap x(col_ptr, static_cast<Eigen::Index>(k_rows), static_cast<Eigen::Index>(p_cols));
                     if (gw) MatMap(gw, out_channels, static_cast<Eigen::Index>(k_rows)).noalias() += gy * x.transpose();
                     if (gb)
                       for (int o = 0; o < out_channels; ++o) gb[o] += gy.row(o).sum();
                     if (gi) {
                       if (g.is_pointwise()) {
                         MatMap(gi + n * in_plane, static_cast<Eigen::Index>(k_rows), static_cast<Eigen::Index>(p_cols))
                             .noalias() += w.transpose() * gy;
                       } else {
                         MatMap(dcols.data(), static_cast<Eigen::Index>(k_rows), static_cast<Eigen::Index>(p_cols))
                             .noalias() = w.transpose() * gy;
                         col2im(dcols.data(), g, gi + n * in_plane);
                       }
                     }
                   }
                 });
  }
  return out;
}

Tensor grid_sample(const Tensor& input, const Tensor& coords) {
  require(input.rank() == 4, "grid_sample: input must be NCHW, got " + shape_to_string(input.shape()));
  require(coords.rank() == 4 && coords.dim(1) == 2 && coords.dim(0) == input.dim(0),
          "grid_sample: coords must be (N,2,Ho,Wo), got " + shape_to_string(coords.shape()));
  const int batch = input.dim(0), channels = input.dim(1), height = input.dim(2), width = input.dim(3);
  const int out_h = coords.dim(2), out_w = coords.dim(3);
  const std::size_t in_plane = static_cast<std::size_t>(height) * width;
  const std::size_t out_plane = static_cast<std::size_t>(out_h) * out_w;

  Tensor out({batch, channels, out_h, out_w});
  const float* pin = values(input);
  const float* pc = values(coords);
  float* po = values(out);

  // Visits the four bilinear corners of sample (n, i); corners outside the
  // image are skipped.
  auto for_corners = [=](int n, std::size_t i, auto&& fn) {
    const float x = pc[(static_cast<std::size_t>(n) * 2) * out_plane + i];
    const float y = pc[(static_cast<std::size_t>(n) * 2 + 1) * out_plane + i];
    const float fx = std::floor(x), fy = std::floor(y);
    const int x0 = static_cast<int>(fx), y0 = static_cast<int>(fy);
    const float ax = x - fx, ay = y - fy;
    const int xs[2] = {x0, x0 + 1};
    const int ys[2] = {y0, y0 + 1};
    const float wx[2] = {1.0F - ax, ax};
    const float wy[2] = {1.0F - ay, ay};
    // Derivative of each corner weight w.r.t. x and y.
    const float dwx[2] = {-1.0F, 1.0F};
    for (int a = 0; a < 2; ++a)
      for (int b = 0; b < 2; ++b) {
        if (ys[a] < 0 || ys[a] >= height || xs[b] < 0 || xs[b] >= width) continue;
        fn(static_cast<std::size_t>(ys[a]) * width + xs[b], wy[a] * wx[b], dwx[b] * wy[a], dwx[a] * wx[b]);
      }
  };

  for (int n = 0; n < batch; ++n)
    for (std::size_t i = 0; i < out_plane; ++i)
      for_corners(n, i, [&](std::size_t offset, float weight, float, float) {
        for (int c = 0; c < channels; ++c) {
          const std::size_t plane = static_cast<std::size_t>(n) * channels + c;
          po[plane * out_plane + i] += weight * pin[plane * in_plane + offset];
        }
      });

  if (Tape* tape = detail::recording_tape({&input, &coords})) {
    tape->record({input, coords}, out,
                 [ii = input.impl(), ic = coords.impl(), io = out.impl(), for_corners, batch, channels, in_plane,
                  out_plane]() {
                   const float* g = io->grad.data();
                   const float* vin = ii->data->data();
                   float* gi = grad_target(ii);
                   float* gc = grad_target(ic);
                   for (int n = 0; n < batch; ++n)
                     for (std::size_t i = 0; i < out_plane; ++i) {
                       float dx = 0.0F, dy = 0.0F;
                       for_corners(n, i, [&](std::size_t offset, float weight, float wdx, float wdy) {
                         for (int c = 0; c < channels; ++c) {
                           const std::size_t plane = static_cast<std::size_t>(n) * channels + c;
                           const float go = g[plane * out_plane + i];
                           if (gi) gi[plane * in_plane + offset] += weight * go;
                           const float v = vin[plane * in_plane + offset];
                           dx += wdx * v * go;
                           dy += wdy * v * go;
                         }
                       });
                       if (gc) {
                         gc[(static_cast<std::size_t>(n) * 2) * out_plane + i] += dx;
                         gc[(static_cast<std::size_t>(n) * 2 + 1) * out_plane + i] += dy;
                       }
                     }
                 });
  }
  return out;
}

Tensor avg_pool2(const Tensor& x) {
  require(x.rank() >= 2, "avg_pool2: needs at least two dimensions");
  const int height = x.dim(-2), width = x.dim(-1);
  require(height > 0 && width > 0, "avg_pool2: empty input " + shape_to_string(x.shape()));
  // A dimension of extent 1 is kept as is; odd extents drop the last row/column.
  const int out_h = std::max(1, height / 2), out_w = std::max(1, width / 2);
  const int span_y = height > 1 ? 2 : 1, span_x = width > 1 ? 2 : 1;
  const float weight = 1.0F / static_cast<float>(span_y * span_x);
  const std::size_t planes = leading_extent(x.shape());
  Shape out_shape = x.shape();
  out_shape[out_shape.size() - 2] = out_h;
  out_shape[out_shape.size() - 1] = out_w;
  Tensor out(out_shape);
  const float* px = values(x);
  float* po = values(out);
  const std::size_t in_plane = static_cast<std::size_t>(height) * width;
  const std::size_t out_plane = static_cast<std::size_t>(out_h) * out_w;
  for (std::size_t p = 0; p < planes; ++p) {
    const float* src = px + p * in_plane;
    float* dst = po + p * out_plane;
    for (int y = 0; y < out_h; ++y)
      for (int xx = 0; xx < out_w; ++xx) {
        float acc = 0.0F;
        for (int dy = 0; dy < span_y; ++dy)
          for (int dx = 0; dx < span_x; ++dx) acc += src[static_cast<std::size_t>(span_y * y + dy) * width + span_x * xx + dx];
        dst[static_cast<std::size_t>(y) * out_w + xx] = weight * acc;
      }
  }
  if (Tape* tape = detail::recording_tape({&x})) {
    tape->record({x}, out, [ix = x.impl(), io = out.impl(), planes, width, out_h, out_w, in_plane, out_plane, span_y,
                            span_x, weight]() {
      const float* g = io->grad.data();
      float* gx = grad_target(ix);
      for (std::size_t p = 0; p < planes; ++p)
        for (int y = 0; y < out_h; ++y)
          for (int xx = 0; xx < out_w; ++xx) {
            const float v = weight * g[p * out_plane + static_cast<std::size_t>(y) * out_w + xx];
            for (int dy = 0; dy < span_y; ++dy)
              for (int dx = 0; dx < span_x; ++dx) gx[p * in_plane + static_cast<std::size_t>(span_y * y + dy) * width + span_x * xx + dx] += v;
          }
    });
  }
  return out;
}

namespace {

struct Tap {
  int i0, i1;
  float w0, w1;
};

std::vector<Tap> upsample_taps(int in_size, int factor) {
  std::vector<Tap> taps(static_cast<std::size_t>(in_size) * factor);
  for (std::size_t d = 0; d < taps.size(); ++d) {
    float src = (static_cast<float>(d) + 0.5F) / static_cast<float>(factor) - 0.5F;
    if (src < 0.0F) src = 0.0F;
    const int i0 = std::min(static_cast<int>(src), in_size - 1);
    const int i1 = std::min(i0 + 1, in_size - 1);
    const float l = src - static_cast<float>(i0);
    taps[d] = {i0, i1, 1.0F - l, l};
  }
  return taps;
}

}  // namespace

Tensor upsample_bilinear(const Tensor& x, int factor) {
  require(x.rank() >= 2, "upsample_bilinear: needs at least two dimensions");
  require(factor >= 1, "upsample_bilinear: factor must be >= 1");
  const int height = x.dim(-2), width = x.dim(-1);
  const int out_h = height * factor, out_w = width * factor;
  const std::size_t planes = leading_extent(x.shape());
  Shape out_shape = x.shape();
  out_shape[out_shape.size() - 2] = out_h;
  out_shape[out_shape.size() - 1] = out_w;
  Tensor out(out_shape);
  const auto row_taps = upsample_taps(height, factor);
  const auto col_taps = upsample_taps(width, factor);
  const std::size_t in_plane = static_cast<std::size_t>(height) * width;
  const std::size_t out_plane = static_cast<std::size_t>(out_h) * out_w;
  const float* px = values(x);
  float* po = values(out);
  for (std::size_t p = 0; p < planes; ++p) {
    const float* src = px + p * in_plane;
    float* dst = po + p * out_plane;
    for (int y = 0; y < out_h; ++y) {
      const Tap& r = row_taps[y];
      const float* r0 = src + static_cast<std::size_t>(r.i0) * width;
      const float* r1 = src + static_cast<std::size_t>(r.i1) * width;
      for (int xx = 0; xx < out_w; ++xx) {
        const Tap& c = col_taps[xx];
        dst[static_cast<std::size_t>(y) * out_w + xx] =
            r.w0 * (c.w0 * r0[c.i0] + c.w1 * r0[c.i1]) + r.w1 * (c.w0 * r1[c.i0] + c.w1 * r1[c.i1]);
      }
    }
  }
  if (Tape* tape = detail::recording_tape({&x})) {
    tape->record({x}, out, [ix = x.impl(), io = out.impl(), row_taps, col_taps, planes, width, out_h, out_w, in_plane,
                            out_plane]() {
      const float* g = io->grad.data();
      float* gx = grad_target(ix);
      for (std::size_t p = 0; p < planes; ++p) {
        float* dst = gx + p * in_plane;
        const float* src = g + p * out_plane;
        for (int y = 0; y < out_h; ++y) {
          const Tap& r = row_taps[y];
          float* r0 = dst + static_cast<std::size_t>(r.i0) * width;
          float* r1 = dst + static_cast<std::size_t>(r.i1) * width;
          for (int xx = 0; xx < out_w; ++xx) {
            const Tap& c = col_taps[xx];
            const float v = src[static_cast<std::size_t>(y) * out_w + xx];
            r0[c.i0] += r.w0 * c.w0 * v;
            r0[c.i1] += r.w0 * c.w1 * v;
            r1[c.i0] += r.w1 * c.w0 * v;
            r1[c.i1] += r.w1 * c.w1 * v;
          }
        }
      }
    });
  }
  return out;
}

}  // namespace dceiflow::ops
