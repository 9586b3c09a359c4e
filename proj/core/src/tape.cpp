// SPDX-License-Identifier: Apache-2.0
#include "pkt/tape.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <string>

#include "pkt/error.hpp"

namespace pkt {

std::string_view name(UnaryOp op) noexcept {
  switch (op) {
    case UnaryOp::sigmoid: return "sigmoid";
    case UnaryOp::tanh: return "tanh";
    case UnaryOp::log: return "log";
    case UnaryOp::negate: return "negate";
    case UnaryOp::exp: return "exp";
  }
  return "?";
}

std::string_view name(BinaryOp op) noexcept {
  switch (op) {
    case BinaryOp::add: return "add";
    case BinaryOp::sub: return "sub";
    case BinaryOp::mul: return "mul";
    case BinaryOp::matmul: return "matmul";
    case BinaryOp::concat: return "concat";
    case BinaryOp::dot: return "dot";
  }
  return "?";
}

std::string_view name(ReduceOp op) noexcept {
  switch (op) {
    case ReduceOp::mean: return "mean";
    case ReduceOp::max: return "max";
    case ReduceOp::sum: return "sum";
  }
  return "?";
}

namespace {

[[noreturn]] void shape_mismatch(std::string_view op, const Shape& a, const Shape& b) {
  std::ostringstream msg;
  msg << op << ": incompatible shapes " << to_string(a) << " and " << to_string(b);
  throw ShapeError(msg.str());
}

double sigmoid_scalar(double x) {
  if (x >= 0.0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

bool is_suffix(const Shape& shape, const Shape& suffix) {
  if (suffix.size() > shape.size()) return false;
  return std::equal(suffix.rbegin(), suffix.rend(), shape.rbegin());
}

// [outer, n, inner] view of a tensor around `axis`.
struct AxisView {
  std::size_t outer = 1;
  std::size_t n = 1;
  std::size_t inner = 1;
};

AxisView axis_view(const Shape& shape, std::size_t axis) {
  AxisView v;
  for (std::size_t i = 0; i < axis; ++i) v.outer *= shape[i];
  v.n = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) v.inner *= shape[i];
  return v;
}

// c[m,n] += a[m,k] * b[k,n]
void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      if (av == 0.0) continue;
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// da[m,k] += dc[m,n] * b[k,n]^T
void gemm_nt(const double* dc, const double* b, double* da, std::size_t m, std::size_t k,
             std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* grow = dc + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double* brow = b + p * n;
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) s += grow[j] * brow[j];
      da[i * k + p] += s;
    }
  }
}

// db[k,n] += a[m,k]^T * dc[m,n]
void gemm_tn(const double* a, const double* dc, double* db, std::size_t m, std::size_t k,
             std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* grow = dc + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      if (av == 0.0) continue;
      double* drow = db + p * n;
      for (std::size_t j = 0; j < n; ++j) drow[j] += av * grow[j];
    }
  }
}

struct MatmulDims {
  std::size_t batch = 1;
  std::size_t m = 0;
  std::size_t k = 0;
  std::size_t n = 0;
  bool shared_rhs = false;
};

MatmulDims matmul_dims(const Shape& a, const Shape& b) {
  MatmulDims d;
  if (a.size() == 2 && b.size() == 2) {
    d.m = a[0];
    d.k = a[1];
    d.n = b[1];
    if (b[0] != d.k) shape_mismatch("matmul", a, b);
  } else if (a.size() == 3 && b.size() == 3) {
    d.batch = a[0];
    d.m = a[1];
    d.k = a[2];
    d.n = b[2];
    if (b[0] != d.batch || b[1] != d.k) shape_mismatch("matmul", a, b);
  } else if (a.size() == 3 && b.size() == 2) {
    d.batch = a[0];
    d.m = a[1];
    d.k = a[2];
    d.n = b[1];
    d.shared_rhs = true;
    if (b[0] != d.k) shape_mismatch("matmul", a, b);
  } else {
    shape_mismatch("matmul", a, b);
  }
  return d;
}

void check_mask_values(const Tensor& mask, std::string_view op) {
  for (double m : mask.data()) {
    if (m != 0.0 && m != 1.0) {
      throw DomainError(std::string(op) + ": mask entries must be 0 or 1");
    }
  }
}

}  // namespace

Tape::Tape(bool record_gradients) : record_(record_gradients) {}

const Tape::Node& Tape::node(Var v) const {
  if (v.id_ < 0 || static_cast<std::size_t>(v.id_) >= nodes_.size()) {
    throw Error("tape: variable does not belong to this tape");
  }
  return nodes_[static_cast<std::size_t>(v.id_)];
}

Var Tape::push(Node n) {
  nodes_.push_back(std::move(n));
  return Var(static_cast<int>(nodes_.size() - 1));
}

bool Tape::any_needs_grad(std::initializer_list<int> ids) const {
  for (int id : ids) {
    if (id >= 0 && nodes_[static_cast<std::size_t>(id)].needs_grad) return true;
  }
  return false;
}

Var Tape::leaf(Tensor value) {
  Node n;
  n.kind = Kind::leaf;
  n.needs_grad = record_;
  n.value = std::move(value);
  return push(std::move(n));
}

Var Tape::constant(Tensor value) {
  Node n;
  n.kind = Kind::constant;
  n.value = std::move(value);
  return push(std::move(n));
}

const Tensor& Tape::value(Var v) const { return node(v).value; }

const Tensor& Tape::grad(Var v) const {
  const Node& n = node(v);
  if (n.grad.shape() != n.value.shape() || n.grad.size() != n.value.size()) {
    throw Error("tape: no gradient available; call backward() first");
  }
  return n.grad;
}

// ---------------------------------------------------------------------------
// Forward ops

Var Tape::unary(UnaryOp op, Var x) {
  const Node& in = node(x);
  Node n;
  n.kind = Kind::unary;
  n.op = static_cast<std::uint8_t>(op);
  n.a = x.id_;
  n.needs_grad = in.needs_grad;
  n.value = Tensor(in.value.shape());
  const auto src = in.value.data();
  auto dst = n.value.data();
  switch (op) {
    case UnaryOp::sigmoid:
      for (std::size_t i = 0; i < src.size(); ++i) dst[i] = sigmoid_scalar(src[i]);
      break;
    case UnaryOp::tanh:
      for (std::size_t i = 0; i < src.size(); ++i) dst[i] = std::tanh(src[i]);
      break;
    case UnaryOp::log:
      for (std::size_t i = 0; i < src.size(); ++i) {
        if (!(src[i] > 0.0)) {
          std::ostringstream msg;
          msg << "log: non-positive input " << src[i] << " at flat index " << i;
          throw DomainError(msg.str());
        }
        dst[i] = std::log(src[i]);
      }
      break;
    case UnaryOp::negate:
      for (std::size_t i = 0; i < src.size(); ++i) dst[i] = -src[i];
      break;
    case UnaryOp::exp:
      for (std::size_t i = 0; i < src.size(); ++i) dst[i] = std::exp(src[i]);
      break;
  }
  return push(std::move(n));
}

Var Tape::scale(Var x, double factor) {
  const Node& in = node(x);
  Node n;
  n.kind = Kind::scale;
  n.a = x.id_;
  n.c0 = factor;
  n.needs_grad = in.needs_grad;
  n.value = in.value;
  for (double& v : n.value.data()) v *= factor;
  return push(std::move(n));
}

Var Tape::add_scalar(Var x, double offset) {
  const Node& in = node(x);
  Node n;
  n.kind = Kind::add_scalar;
  n.a = x.id_;
  n.c0 = offset;
  n.needs_grad = in.needs_grad;
  n.value = in.value;
  for (double& v : n.value.data()) v += offset;
  return push(std::move(n));
}

Var Tape::pow(Var x, double exponent) {
  const Node& in = node(x);
  Node n;
  n.kind = Kind::pow;
  n.a = x.id_;
  n.c0 = exponent;
  n.needs_grad = in.needs_grad;
  n.value = Tensor(in.value.shape());
  const auto src = in.value.data();
  auto dst = n.value.data();
  for (std::size_t i = 0; i < src.size(); ++i) {
    if (src[i] < 0.0) {
      std::ostringstream msg;
      msg << "pow: negative base " << src[i] << " at flat index " << i;
      throw DomainError(msg.str());
    }
    dst[i] = exponent == 0.0 ? 1.0 : std::pow(src[i], exponent);
  }
  return push(std::move(n));
}

Var Tape::clamp(Var x, double lo, double hi) {
  if (!(lo <= hi)) throw DomainError("clamp: lower bound exceeds upper bound");
  const Node& in = node(x);
  Node n;
  n.kind = Kind::clamp;
  n.a = x.id_;
  n.c0 = lo;
  n.c1 = hi;
  n.needs_grad = in.needs_grad;
  n.value = in.value;
  for (double& v : n.value.data()) v = std::clamp(v, lo, hi);
  return push(std::move(n));
}

Var Tape::binary(BinaryOp op, Var a, Var b) {
  const Node& na = node(a);
  const Node& nb = node(b);
  const Shape& sa = na.value.shape();
  const Shape& sb = nb.value.shape();
  Node n;
  n.kind = Kind::binary;
  n.op = static_cast<std::uint8_t>(op);
  n.a = a.id_;
  n.b = b.id_;
  n.needs_grad = na.needs_grad || nb.needs_grad;

  switch (op) {
    case BinaryOp::add:
    case BinaryOp::sub:
    case BinaryOp::mul: {
      if (!is_suffix(sa, sb)) shape_mismatch(name(op), sa, sb);
      n.value = Tensor(sa);
      const auto x = na.value.data();
      const auto y = nb.value.data();
      auto out = n.value.data();
      const std::size_t period = y.size();
      for (std::size_t i = 0; i < x.size(); ++i) {
        const double yv = y[i % period];
        out[i] = op == BinaryOp::add ? x[i] + yv : op == BinaryOp::sub ? x[i] - yv : x[i] * yv;
      }
      break;
    }
    case BinaryOp::matmul: {
      const MatmulDims d = matmul_dims(sa, sb);
      Shape out_shape = sa.size() == 2 ? Shape{d.m, d.n} : Shape{d.batch, d.m, d.n};
      n.value = Tensor(std::move(out_shape));
      const double* x = na.value.data().data();
      const double* y = nb.value.data().data();
      double* out = n.value.data().data();
      for (std::size_t bi = 0; bi < d.batch; ++bi) {
        gemm_nn(x + bi * d.m * d.k, d.shared_rhs ? y : y + bi * d.k * d.n, out + bi * d.m * d.n,
                d.m, d.k, d.n);
      }
      break;
    }
    case BinaryOp::concat: {
      if (sa.empty() || sb.empty() || sa.size() != sb.size() ||
          !std::equal(sa.begin(), sa.end() - 1, sb.begin())) {
        shape_mismatch("concat", sa, sb);
      }
      Shape out_shape = sa;
      out_shape.back() = sa.back() + sb.back();
      n.value = Tensor(out_shape);
      const std::size_t rows = na.value.size() / sa.back();
      const std::size_t ca = sa.back();
      const std::size_t cb = sb.back();
      const auto x = na.value.data();
      const auto y = nb.value.data();
      auto out = n.value.data();
      for (std::size_t r = 0; r < rows; ++r) {
        std::copy_n(x.begin() + static_cast<std::ptrdiff_t>(r * ca), ca,
                    out.begin() + static_cast<std::ptrdiff_t>(r * (ca + cb)));
        std::copy_n(y.begin() + static_cast<std::ptrdiff_t>(r * cb), cb,
                    out.begin() + static_cast<std::ptrdiff_t>(r * (ca + cb) + ca));
      }
      break;
    }
    case BinaryOp::dot: {
      if (sa.size() != 1 || sa != sb) shape_mismatch("dot", sa, sb);
      double s = 0.0;
      const auto x = na.value.data();
      const auto y = nb.value.data();
      for (std::size_t i = 0; i < x.size(); ++i) s += x[i] * y[i];
      n.value = Tensor::scalar(s);
      break;
    }
  }
  return push(std::move(n));
}

Var Tape::reduce(Var x, ReduceOp op, std::size_t axis) {
  const Node& in = node(x);
  if (axis >= in.value.rank()) {
    throw ShapeError("reduce " + std::string(name(op)) + ": axis " + std::to_string(axis) +
                     " out of range for shape " + to_string(in.value.shape()));
  }
  return reduce(x, op, axis, Tensor(Shape{in.value.dim(axis)}, 1.0));
}

Var Tape::reduce(Var x, ReduceOp op, std::size_t axis, const Tensor& mask) {
  const Node& in = node(x);
  const Shape& shape = in.value.shape();
  const std::string op_name = "reduce " + std::string(name(op));
  if (axis >= shape.size()) {
    throw ShapeError(op_name + ": axis " + std::to_string(axis) + " out of range for shape " +
                     to_string(shape));
  }
  if (mask.rank() != 1 || mask.size() != shape[axis]) {
    shape_mismatch(op_name + " mask", shape, mask.shape());
  }
  check_mask_values(mask, op_name);
  std::size_t kept = 0;
  for (double m : mask.data()) kept += m != 0.0 ? 1 : 0;
  if (kept == 0) throw DomainError(op_name + ": every element along the axis is masked");

  const AxisView v = axis_view(shape, axis);
  Shape out_shape = shape;
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));

  Node n;
  n.kind = Kind::reduce;
  n.op = static_cast<std::uint8_t>(op);
  n.a = x.id_;
  n.axis = axis;
  n.mask = mask;
  n.needs_grad = in.needs_grad;
  n.value = Tensor(out_shape);
  if (op == ReduceOp::max) n.index.assign(v.outer * v.inner, 0);

  const auto src = in.value.data();
  auto dst = n.value.data();
  const auto m = mask.data();
  for (std::size_t o = 0; o < v.outer; ++o) {
    for (std::size_t i = 0; i < v.inner; ++i) {
      const std::size_t out_idx = o * v.inner + i;
      if (op == ReduceOp::max) {
        double best = -std::numeric_limits<double>::infinity();
        std::size_t arg = v.n;
        for (std::size_t k = 0; k < v.n; ++k) {
          if (m[k] == 0.0) continue;
          const double val = src[(o * v.n + k) * v.inner + i];
          if (arg == v.n || val > best) {
            best = val;
            arg = k;
          }
        }
        dst[out_idx] = best;
        n.index[out_idx] = arg;
      } else {
        double s = 0.0;
        for (std::size_t k = 0; k < v.n; ++k) {
          if (m[k] == 0.0) continue;
          s += src[(o * v.n + k) * v.inner + i];
        }
        dst[out_idx] = op == ReduceOp::mean ? s / static_cast<double>(kept) : s;
      }
    }
  }
  return push(std::move(n));
}

Var Tape::softmax_masked(Var logits, const Tensor& mask) {
  const Node& in = node(logits);
  const Shape& shape = in.value.shape();
  if (shape.empty()) shape_mismatch("softmax_masked", shape, mask.shape());
  const std::size_t width = shape.back();
  const bool row_mask = mask.rank() == 1 && mask.size() == width;
  if (!row_mask && mask.shape() != shape) shape_mismatch("softmax_masked", shape, mask.shape());
  check_mask_values(mask, "softmax_masked");

  Node n;
  n.kind = Kind::softmax;
  n.a = logits.id_;
  n.needs_grad = in.needs_grad;
  n.mask = row_mask ? Tensor(shape) : mask;
  if (row_mask) {
    auto full = n.mask.data();
    for (std::size_t i = 0; i < full.size(); ++i) full[i] = mask[i % width];
  }
  n.value = Tensor(shape);

  const auto x = in.value.data();
  const auto mk = n.mask.data();
  auto y = n.value.data();
  const std::size_t rows = in.value.size() / width;
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t base = r * width;
    double hi = -std::numeric_limits<double>::infinity();
    bool any = false;
    for (std::size_t j = 0; j < width; ++j) {
      if (mk[base + j] == 0.0) continue;
      hi = any ? std::max(hi, x[base + j]) : x[base + j];
      any = true;
    }
    if (!any) {
      throw DomainError("softmax_masked: row " + std::to_string(r) + " has no unmasked position");
    }
    double total = 0.0;
    for (std::size_t j = 0; j < width; ++j) {
      if (mk[base + j] == 0.0) continue;
      y[base + j] = std::exp(x[base + j] - hi);
      total += y[base + j];
    }
    for (std::size_t j = 0; j < width; ++j) {
      if (mk[base + j] != 0.0) y[base + j] /= total;
    }
  }
  return push(std::move(n));
}

Var Tape::transpose(Var x) {
  const Node& in = node(x);
  const Shape& s = in.value.shape();
  if (s.size() != 2) throw ShapeError("transpose: expected rank 2, got " + to_string(s));
  Node n;
  n.kind = Kind::transpose;
  n.a = x.id_;
  n.needs_grad = in.needs_grad;
  n.value = Tensor(Shape{s[1], s[0]});
  for (std::size_t i = 0; i < s[0]; ++i) {
    for (std::size_t j = 0; j < s[1]; ++j) n.value[j * s[0] + i] = in.value[i * s[1] + j];
  }
  return push(std::move(n));
}

Var Tape::reshape(Var x, Shape shape) {
  const Node& in = node(x);
  if (shape_size(shape) != in.value.size()) shape_mismatch("reshape", in.value.shape(), shape);
  Node n;
  n.kind = Kind::reshape;
  n.a = x.id_;
  n.needs_grad = in.needs_grad;
  n.value = Tensor(std::move(shape), in.value.values());
  return push(std::move(n));
}

Var Tape::gather_rows(Var table, std::span<const std::size_t> indices) {
  const Node& in = node(table);
  const Shape& s = in.value.shape();
  if (s.size() != 2) throw ShapeError("gather_rows: expected rank-2 table, got " + to_string(s));
  const std::size_t cols = s[1];
  Node n;
  n.kind = Kind::gather;
  n.a = table.id_;
  n.needs_grad = in.needs_grad;
  n.index.assign(indices.begin(), indices.end());
  n.value = Tensor(Shape{indices.size(), cols});
  const auto src = in.value.data();
  auto dst = n.value.data();
  for (std::size_t r = 0; r < indices.size(); ++r) {
    if (indices[r] >= s[0]) {
      throw ShapeError("gather_rows: row " + std::to_string(indices[r]) +
                       " out of range for table " + to_string(s));
    }
    std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(indices[r] * cols), cols,
                dst.begin() + static_cast<std::ptrdiff_t>(r * cols));
  }
  return push(std::move(n));
}

Var Tape::stack(std::span<const Var> parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("stack: no inputs");
  const Shape& s = node(parts[0]).value.shape();
  if (axis > s.size()) {
    throw ShapeError("stack: axis " + std::to_string(axis) + " out of range for shape " +
                     to_string(s));
  }
  Node n;
  n.kind = Kind::stack;
  n.axis = axis;
  for (const Var& p : parts) {
    const Node& pn = node(p);
    if (pn.value.shape() != s) shape_mismatch("stack", s, pn.value.shape());
    n.inputs.push_back(p.id_);
    n.needs_grad = n.needs_grad || pn.needs_grad;
  }
  Shape out_shape = s;
  out_shape.insert(out_shape.begin() + static_cast<std::ptrdiff_t>(axis), parts.size());
  n.value = Tensor(out_shape);
  const AxisView v = axis_view(out_shape, axis);
  auto dst = n.value.data();
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto src = node(parts[k]).value.data();
    for (std::size_t o = 0; o < v.outer; ++o) {
      std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(o * v.inner), v.inner,
                  dst.begin() + static_cast<std::ptrdiff_t>((o * v.n + k) * v.inner));
    }
  }
  return push(std::move(n));
}

Var Tape::slice(Var x, std::size_t axis, std::size_t start, std::size_t length) {
  const Node& in = node(x);
  const Shape& s = in.value.shape();
  if (axis >= s.size() || start + length > s[axis]) {
    throw ShapeError("slice: range [" + std::to_string(start) + ", " +
                     std::to_string(start + length) + ") on axis " + std::to_string(axis) +
                     " out of range for shape " + to_string(s));
  }
  const AxisView v = axis_view(s, axis);
  Shape out_shape = s;
  out_shape[axis] = length;
  Node n;
  n.kind = Kind::slice;
  n.a = x.id_;
  n.axis = axis;
  n.start = start;
  n.needs_grad = in.needs_grad;
  n.value = Tensor(out_shape);
  const auto src = in.value.data();
  auto dst = n.value.data();
  for (std::size_t o = 0; o < v.outer; ++o) {
    std::copy_n(src.begin() + static_cast<std::ptrdiff_t>((o * v.n + start) * v.inner),
                length * v.inner,
                dst.begin() + static_cast<std::ptrdiff_t>(o * length * v.inner));
  }
  return push(std::move(n));
}

Var Tape::expand(Var x, std::size_t axis, std::size_t count) {
  const Node& in = node(x);
  const Shape& s = in.value.shape();
  if (axis >= s.size() || s[axis] != 1) {
    throw ShapeError("expand: axis " + std::to_string(axis) + " of shape " + to_string(s) +
                     " is not of size 1");
  }
  const AxisView v = axis_view(s, axis);
  Shape out_shape = s;
  out_shape[axis] = count;
  Node n;
  n.kind = Kind::expand;
  n.a = x.id_;
  n.axis = axis;
  n.needs_grad = in.needs_grad;
  n.value = Tensor(out_shape);
  const auto src = in.value.data();
  auto dst = n.value.data();
  for (std::size_t o = 0; o < v.outer; ++o) {
    for (std::size_t k = 0; k < count; ++k) {
      std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(o * v.inner), v.inner,
                  dst.begin() + static_cast<std::ptrdiff_t>((o * count + k) * v.inner));
    }
  }
  return push(std::move(n));
}

// ---------------------------------------------------------------------------
// Reverse pass

Tensor& Tape::grad_slot(int id) { return nodes_[static_cast<std::size_t>(id)].grad; }

void Tape::accumulate(int id, std::span<const double> g) {
  Node& target = nodes_[static_cast<std::size_t>(id)];
  if (!target.needs_grad) return;
  auto dst = target.grad.data();
  for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
}

void Tape::backward(Var loss) {
  if (!record_) throw Error("backward: tape was created without gradient recording");
  const Node& out = node(loss);
  if (out.value.size() != 1) {
    throw ShapeError("backward: loss must be a scalar, got shape " +
                     to_string(out.value.shape()));
  }
  for (Node& n : nodes_) {
    if (n.grad.shape() == n.value.shape() && n.grad.size() == n.value.size()) {
      n.grad.fill(0.0);
    } else {
      n.grad = Tensor(n.value.shape());
    }
  }
  grad_slot(loss.id_).fill(1.0);
  for (std::size_t i = static_cast<std::size_t>(loss.id_) + 1; i-- > 0;) {
    const Node& n = nodes_[i];
    if (!n.needs_grad) continue;
    backprop_node(n);
  }
}

void Tape::backprop_node(const Node& n) {
  const auto g = n.grad.data();
  switch (n.kind) {
    case Kind::leaf:
    case Kind::constant:
      return;
    case Kind::unary:
      backprop_unary(n);
      return;
    case Kind::scale: {
      if (!nodes_[static_cast<std::size_t>(n.a)].needs_grad) return;
      auto dst = grad_slot(n.a).data();
      for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i] * n.c0;
      return;
    }
    case Kind::add_scalar:
    case Kind::reshape:
      accumulate(n.a, g);
      return;
    case Kind::pow: {
      if (!nodes_[static_cast<std::size_t>(n.a)].needs_grad || n.c0 == 0.0) return;
      const auto x = nodes_[static_cast<std::size_t>(n.a)].value.data();
      auto dst = grad_slot(n.a).data();
      for (std::size_t i = 0; i < g.size(); ++i) {
        dst[i] += g[i] * n.c0 * std::pow(x[i], n.c0 - 1.0);
      }
      return;
    }
    case Kind::clamp: {
      if (!nodes_[static_cast<std::size_t>(n.a)].needs_grad) return;
      const auto x = nodes_[static_cast<std::size_t>(n.a)].value.data();
      auto dst = grad_slot(n.a).data();
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (x[i] >= n.c0 && x[i] <= n.c1) dst[i] += g[i];
      }
      return;
    }
    case Kind::binary:
      backprop_binary(n);
      return;
    case Kind::reduce:
      backprop_reduce(n);
      return;
    case Kind::softmax:
      backprop_softmax(n);
      return;
    case Kind::transpose: {
      if (!nodes_[static_cast<std::size_t>(n.a)].needs_grad) return;
      const std::size_t rows = n.value.dim(1);
      const std::size_t cols = n.value.dim(0);
      auto dst = grad_slot(n.a).data();
      for (std::size_t i = 0; i < rows; ++i) {
        for (std::size_t j = 0; j < cols; ++j) dst[i * cols + j] += g[j * rows + i];
      }
      return;
    }
    case Kind::gather: {
      if (!nodes_[static_cast<std::size_t>(n.a)].needs_grad) return;
      const std::size_t cols = n.value.dim(1);
      auto dst = grad_slot(n.a).data();
      for (std::size_t r = 0; r < n.index.size(); ++r) {
        double* row = dst.data() + n.index[r] * cols;
        for (std::size_t c = 0; c < cols; ++c) row[c] += g[r * cols + c];
      }
      return;
    }
    case Kind::stack: {
      const AxisView v = axis_view(n.value.shape(), n.axis);
      for (std::size_t k = 0; k < n.inputs.size(); ++k) {
        const int id = n.inputs[k];
        if (!nodes_[static_cast<std::size_t>(id)].needs_grad) continue;
        auto dst = grad_slot(id).data();
        for (std::size_t o = 0; o < v.outer; ++o) {
          const double* src = g.data() + (o * v.n + k) * v.inner;
          double* out = dst.data() + o * v.inner;
          for (std::size_t i = 0; i < v.inner; ++i) out[i] += src[i];
        }
      }
      return;
    }
    case Kind::slice: {
      if (!nodes_[static_cast<std::size_t>(n.a)].needs_grad) return;
      const Shape& in_shape = nodes_[static_cast<std::size_t>(n.a)].value.shape();
      const AxisView v = axis_view(in_shape, n.axis);
      const std::size_t length = n.value.dim(n.axis);
      auto dst = grad_slot(n.a).data();
      for (std::size_t o = 0; o < v.outer; ++o) {
        const double* src = g.data() + o * length * v.inner;
        double* out = dst.data() + (o * v.n + n.start) * v.inner;
        for (std::size_t i = 0; i < length * v.inner; ++i) out[i] += src[i];
      }
      return;
    }
    case Kind::expand: {
      if (!nodes_[static_cast<std::size_t>(n.a)].needs_grad) return;
      const AxisView v = axis_view(n.value.shape(), n.axis);
      auto dst = grad_slot(n.a).data();
      for (std::size_t o = 0; o < v.outer; ++o) {
        for (std::size_t k = 0; k < v.n; ++k) {
          const double* src = g.data() + (o * v.n + k) * v.inner;
          double* out = dst.data() + o * v.inner;
          for (std::size_t i = 0; i < v.inner; ++i) out[i] += src[i];
        }
      }
      return;
    }
  }
}

void Tape::backprop_unary(const Node& n) {
  const Node& in = nodes_[static_cast<std::size_t>(n.a)];
  if (!in.needs_grad) return;
  const auto g = n.grad.data();
  const auto x = in.value.data();
  const auto y = n.value.data();
  auto dst = grad_slot(n.a).data();
  switch (static_cast<UnaryOp>(n.op)) {
    case UnaryOp::sigmoid:
      for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i] * y[i] * (1.0 - y[i]);
      break;
    case UnaryOp::tanh:
      for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i] * (1.0 - y[i] * y[i]);
      break;
    case UnaryOp::log:
      for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i] / x[i];
      break;
    case UnaryOp::negate:
      for (std::size_t i = 0; i < g.size(); ++i) dst[i] -= g[i];
      break;
    case UnaryOp::exp:
      for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i] * y[i];
      break;
  }
}

void Tape::backprop_binary(const Node& n) {
  const Node& na = nodes_[static_cast<std::size_t>(n.a)];
  const Node& nb = nodes_[static_cast<std::size_t>(n.b)];
  const auto g = n.grad.data();
  const auto op = static_cast<BinaryOp>(n.op);
  switch (op) {
    case BinaryOp::add:
    case BinaryOp::sub:
    case BinaryOp::mul: {
      const auto x = na.value.data();
      const auto y = nb.value.data();
      const std::size_t period = y.size();
      if (na.needs_grad) {
        auto da = grad_slot(n.a).data();
        if (op == BinaryOp::mul) {
          for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i] * y[i % period];
        } else {
          for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i];
        }
      }
      if (nb.needs_grad) {
        auto db = grad_slot(n.b).data();
        if (op == BinaryOp::mul) {
          for (std::size_t i = 0; i < g.size(); ++i) db[i % period] += g[i] * x[i];
        } else if (op == BinaryOp::add) {
          for (std::size_t i = 0; i < g.size(); ++i) db[i % period] += g[i];
        } else {
          for (std::size_t i = 0; i < g.size(); ++i) db[i % period] -= g[i];
        }
      }
      return;
    }
    case BinaryOp::matmul: {
      const MatmulDims d = matmul_dims(na.value.shape(), nb.value.shape());
      const double* x = na.value.data().data();
      const double* y = nb.value.data().data();
      for (std::size_t bi = 0; bi < d.batch; ++bi) {
        const double* gb = g.data() + bi * d.m * d.n;
        const double* yb = d.shared_rhs ? y : y + bi * d.k * d.n;
        if (na.needs_grad) {
          gemm_nt(gb, yb, grad_slot(n.a).data().data() + bi * d.m * d.k, d.m, d.k, d.n);
        }
        if (nb.needs_grad) {
          double* db = grad_slot(n.b).data().data() + (d.shared_rhs ? 0 : bi * d.k * d.n);
          gemm_tn(x + bi * d.m * d.k, gb, db, d.m, d.k, d.n);
        }
      }
      return;
    }
    case BinaryOp::concat: {
      const std::size_t ca = na.value.shape().back();
      const std::size_t cb = nb.value.shape().back();
      const std::size_t rows = na.value.size() / ca;
      for (std::size_t r = 0; r < rows; ++r) {
        const double* src = g.data() + r * (ca + cb);
        if (na.needs_grad) {
          double* da = grad_slot(n.a).data().data() + r * ca;
          for (std::size_t j = 0; j < ca; ++j) da[j] += src[j];
        }
        if (nb.needs_grad) {
          double* db = grad_slot(n.b).data().data() + r * cb;
          for (std::size_t j = 0; j < cb; ++j) db[j] += src[ca + j];
        }
      }
      return;
    }
    case BinaryOp::dot: {
      const double go = g[0];
      const auto x = na.value.data();
      const auto y = nb.value.data();
      if (na.needs_grad) {
        auto da = grad_slot(n.a).data();
        for (std::size_t i = 0; i < x.size(); ++i) da[i] += go * y[i];
      }
      if (nb.needs_grad) {
        auto db = grad_slot(n.b).data();
        for (std::size_t i = 0; i < y.size(); ++i) db[i] += go * x[i];
      }
      return;
    }
  }
}

void Tape::backprop_reduce(const Node& n) {
  const Node& in = nodes_[static_cast<std::size_t>(n.a)];
  if (!in.needs_grad) return;
  const AxisView v = axis_view(in.value.shape(), n.axis);
  const auto g = n.grad.data();
  const auto m = n.mask.data();
  auto dst = grad_slot(n.a).data();
  const auto op = static_cast<ReduceOp>(n.op);
  double kept = 0.0;
  for (double mv : m) kept += mv;
  for (std::size_t o = 0; o < v.outer; ++o) {
    for (std::size_t i = 0; i < v.inner; ++i) {
      const std::size_t out_idx = o * v.inner + i;
      if (op == ReduceOp::max) {
        dst[(o * v.n + n.index[out_idx]) * v.inner + i] += g[out_idx];
        continue;
      }
      const double share = op == ReduceOp::mean ? g[out_idx] / kept : g[out_idx];
      for (std::size_t k = 0; k < v.n; ++k) {
        if (m[k] != 0.0) dst[(o * v.n + k) * v.inner + i] += share;
      }
    }
  }
}

void Tape::backprop_softmax(const Node& n) {
  const Node& in = nodes_[static_cast<std::size_t>(n.a)];
  if (!in.needs_grad) return;
  const std::size_t width = n.value.shape().back();
  const std::size_t rows = n.value.size() / width;
  const auto g = n.grad.data();
  const auto y = n.value.data();
  const auto mk = n.mask.data();
  auto dst = grad_slot(n.a).data();
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t base = r * width;
    double inner = 0.0;
    for (std::size_t j = 0; j < width; ++j) inner += y[base + j] * g[base + j];
    for (std::size_t j = 0; j < width; ++j) {
      if (mk[base + j] != 0.0) dst[base + j] += y[base + j] * (g[base + j] - inner);
    }
  }
}

}  // namespace pkt
