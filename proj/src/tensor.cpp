// SPDX-License-Identifier: Apache-2.0
#include <pfrnn/tensor.hpp>

#include <pfrnn/rng.hpp>

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <unordered_set>

namespace pfrnn {

using detail::Node;
using NodePtr = std::shared_ptr<Node>;

std::size_t numel(const Shape &shape) {
  std::size_t n = 1;
  for (auto d : shape)
    n *= d;
  return n;
}

std::string to_string(const Shape &shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i)
    os << (i ? "," : "") << shape[i];
  os << ')';
  return os.str();
}

// ---------------------------------------------------------------------------
// Tensor handle

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad) {
  if (numel(shape) != values.size())
    throw ShapeError("tensor shape " + to_string(shape) + " does not hold " +
                     std::to_string(values.size()) + " values");
  node_ = std::make_shared<Node>();
  node_->shape = std::move(shape);
  node_->value = std::move(values);
  node_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const auto n = numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) { return Tensor({}, {value}, requires_grad); }

Tensor Tensor::vector(std::vector<double> values, bool requires_grad) {
  const auto n = values.size();
  return Tensor({n}, std::move(values), requires_grad);
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> values, bool requires_grad) {
  return Tensor({rows, cols}, std::move(values), requires_grad);
}

Tensor Tensor::from_node(std::shared_ptr<detail::Node> node) {
  Tensor t;
  t.node_ = std::move(node);
  return t;
}

const Shape &Tensor::shape() const {
  if (!node_)
    throw std::logic_error("use of an undefined tensor");
  return node_->shape;
}

std::size_t Tensor::size() const { return node_ ? node_->value.size() : 0; }

std::size_t Tensor::dim(std::size_t axis) const {
  const auto &s = shape();
  if (axis >= s.size())
    throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " + to_string(s));
  return s[axis];
}

std::span<const double> Tensor::values() const {
  if (!node_)
    return {};
  return node_->value;
}

std::span<double> Tensor::data() {
  if (!node_)
    return {};
  return node_->value;
}

double Tensor::item() const {
  if (size() != 1)
    throw ShapeError("item() on tensor of shape " + to_string(shape()));
  return node_->value[0];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

void Tensor::set_requires_grad(bool on) {
  if (!node_->leaf)
    throw std::logic_error("requires_grad can only be set on leaf tensors");
  node_->requires_grad = on;
}

std::vector<double> Tensor::grad() const {
  if (!node_)
    return {};
  if (node_->grad.size() == node_->value.size())
    return node_->grad;
  return std::vector<double>(node_->value.size(), 0.0);
}

bool Tensor::has_grad() const { return node_ && node_->grad.size() == node_->value.size(); }

void Tensor::zero_grad() {
  if (node_)
    node_->grad.assign(node_->value.size(), 0.0);
}

Tensor Tensor::detach() const { return Tensor(shape(), node_->value, false); }

// ---------------------------------------------------------------------------
// Graph construction helpers

namespace {

Tensor make_op(Shape shape, std::vector<double> value, std::vector<NodePtr> parents,
               std::function<void(Node &)> rule) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  n->leaf = false;
  bool rg = false;
  for (const auto &p : parents)
    rg = rg || p->requires_grad;
  if (rg) {
    n->requires_grad = true;
    n->parents = std::move(parents);
    n->backward = std::move(rule);
  }
  return Tensor::from_node(std::move(n));
}

const NodePtr &checked(const Tensor &t) {
  if (!t.defined())
    throw std::logic_error("use of an undefined tensor");
  return t.node_ptr();
}

template <class F, class D>
Tensor unary(const Tensor &t, F f, D dydx) {
  const auto &x = checked(t)->value;
  std::vector<double> y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i)
    y[i] = f(x[i]);
  return make_op(t.shape(), std::move(y), {t.node_ptr()}, [dydx](Node &self) {
    Node &p = *self.parents[0];
    auto &g = p.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i)
      g[i] += self.grad[i] * dydx(p.value[i], self.value[i]);
  });
}

enum class BinOp { Add, Sub, Mul, Div };
enum class Bcast { Same, Suffix, Prefix };

bool is_suffix(const Shape &small, const Shape &big) {
  if (small.size() > big.size())
    return false;
  return std::equal(small.begin(), small.end(), big.end() - static_cast<std::ptrdiff_t>(small.size()));
}

bool is_prefix(const Shape &small, const Shape &big) {
  if (small.size() > big.size())
    return false;
  return std::equal(small.begin(), small.end(), big.begin());
}

double apply(BinOp op, double a, double b) {
  switch (op) {
  case BinOp::Add: return a + b;
  case BinOp::Sub: return a - b;
  case BinOp::Mul: return a * b;
  case BinOp::Div: return a / b;
  }
  return 0.0;
}

Tensor binary(const Tensor &a, const Tensor &b, BinOp op, bool rowwise) {
  const auto &na = checked(a);
  const auto &nb = checked(b);
  const Shape &sa = na->shape;
  const Shape &sb = nb->shape;

  // The larger operand is indexed directly; the smaller one (if any) through
  // a two-level loop: `outer` blocks of `inner` contiguous elements.
  Bcast mode = Bcast::Same;
  bool a_is_big = true;
  if (sa != sb) {
    a_is_big = na->value.size() > nb->value.size() ||
               (na->value.size() == nb->value.size() && sa.size() >= sb.size());
    const Shape &small = a_is_big ? sb : sa;
    const Shape &big = a_is_big ? sa : sb;
    if (numel(small) == 1)
      mode = Bcast::Prefix; // scalar: one block spanning everything
    else if (!rowwise && is_suffix(small, big))
      mode = Bcast::Suffix;
    else if (rowwise && is_prefix(small, big))
      mode = Bcast::Prefix;
    else
      throw ShapeError("cannot broadcast " + to_string(sa) + " with " + to_string(sb));
  }

  const Shape out_shape = a_is_big ? sa : sb;
  const std::size_t n = numel(out_shape);
  const std::size_t n_small = (a_is_big ? nb : na)->value.size();
  const std::size_t inner = mode == Bcast::Suffix ? n_small : (mode == Bcast::Prefix ? n / n_small : n);
  const std::size_t outer = n / std::max<std::size_t>(inner, 1);

  const double *pa = na->value.data();
  const double *pb = nb->value.data();
  std::vector<double> y(n);
  if (mode == Bcast::Same) {
    for (std::size_t i = 0; i < n; ++i)
      y[i] = apply(op, pa[i], pb[i]);
  } else {
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t j = 0; j < inner; ++j) {
        const std::size_t i = o * inner + j;
        const std::size_t s = mode == Bcast::Suffix ? j : o;
        y[i] = a_is_big ? apply(op, pa[i], pb[s]) : apply(op, pa[s], pb[i]);
      }
  }

  auto rule = [op, mode, a_is_big, inner, outer](Node &self) {
    Node &A = *self.parents[0];
    Node &B = *self.parents[1];
    const auto &g = self.grad;
    const auto &va = A.value;
    const auto &vb = B.value;
    double *ga = A.requires_grad ? A.ensure_grad().data() : nullptr;
    double *gb = B.requires_grad ? B.ensure_grad().data() : nullptr;
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t j = 0; j < inner; ++j) {
        const std::size_t i = o * inner + j;
        const std::size_t s = mode == Bcast::Same ? i : (mode == Bcast::Suffix ? j : o);
        const std::size_t ia = a_is_big ? i : s;
        const std::size_t ib = a_is_big ? s : i;
        const double x = va[ia];
        const double z = vb[ib];
        switch (op) {
        case BinOp::Add:
          if (ga) ga[ia] += g[i];
          if (gb) gb[ib] += g[i];
          break;
        case BinOp::Sub:
          if (ga) ga[ia] += g[i];
          if (gb) gb[ib] -= g[i];
          break;
        case BinOp::Mul:
          if (ga) ga[ia] += g[i] * z;
          if (gb) gb[ib] += g[i] * x;
          break;
        case BinOp::Div:
          if (ga) ga[ia] += g[i] / z;
          if (gb) gb[ib] -= g[i] * x / (z * z);
          break;
        }
      }
  };
  return make_op(out_shape, std::move(y), {na, nb}, rule);
}

struct AxisSplit {
  std::size_t outer = 1, n = 1, inner = 1;
};

AxisSplit split_axis(const Shape &s, std::size_t axis) {
  if (axis >= s.size())
    throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " + to_string(s));
  AxisSplit r;
  for (std::size_t i = 0; i < axis; ++i)
    r.outer *= s[i];
  r.n = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i)
    r.inner *= s[i];
  return r;
}

Shape drop_axis(const Shape &s, std::size_t axis) {
  Shape r = s;
  r.erase(r.begin() + static_cast<std::ptrdiff_t>(axis));
  return r;
}

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapC = Eigen::Map<const RowMat>;
using MapM = Eigen::Map<RowMat>;

void require_matrix(const Tensor &t, const char *what) {
  if (t.rank() != 2)
    throw ShapeError(std::string(what) + " expects a matrix, got shape " + to_string(t.shape()));
}

} // namespace

// ---------------------------------------------------------------------------
// Elementwise

Tensor add(const Tensor &a, const Tensor &b) { return binary(a, b, BinOp::Add, false); }
Tensor sub(const Tensor &a, const Tensor &b) { return binary(a, b, BinOp::Sub, false); }
Tensor mul(const Tensor &a, const Tensor &b) { return binary(a, b, BinOp::Mul, false); }
Tensor div(const Tensor &a, const Tensor &b) { return binary(a, b, BinOp::Div, false); }
Tensor add_rowwise(const Tensor &a, const Tensor &b) { return binary(a, b, BinOp::Add, true); }
Tensor sub_rowwise(const Tensor &a, const Tensor &b) { return binary(a, b, BinOp::Sub, true); }
Tensor mul_rowwise(const Tensor &a, const Tensor &b) { return binary(a, b, BinOp::Mul, true); }

Tensor operator+(const Tensor &a, const Tensor &b) { return add(a, b); }
Tensor operator-(const Tensor &a, const Tensor &b) { return sub(a, b); }
Tensor operator*(const Tensor &a, const Tensor &b) { return mul(a, b); }
Tensor operator/(const Tensor &a, const Tensor &b) { return div(a, b); }
Tensor operator-(const Tensor &a) { return neg(a); }

Tensor scale(const Tensor &t, double factor) {
  return unary(t, [factor](double x) { return factor * x; }, [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor &t, double value) {
  return unary(t, [value](double x) { return x + value; }, [](double, double) { return 1.0; });
}

Tensor neg(const Tensor &t) { return scale(t, -1.0); }

Tensor sigmoid(const Tensor &t) {
  return unary(
      t,
      [](double x) {
        if (x >= 0)
          return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor tanh(const Tensor &t) {
  return unary(t, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Tensor relu(const Tensor &t) {
  return unary(t, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor exp(const Tensor &t) {
  return unary(t, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor log(const Tensor &t) {
  for (double v : checked(t)->value)
    if (!(v > 0.0))
      throw DomainError("log of non-positive value " + std::to_string(v));
  return unary(t, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Tensor square(const Tensor &t) {
  return unary(t, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Tensor sqrt(const Tensor &t) {
  for (double v : checked(t)->value)
    if (v < 0.0)
      throw DomainError("sqrt of negative value " + std::to_string(v));
  return unary(t, [](double x) { return std::sqrt(x); }, [](double, double y) { return 0.5 / y; });
}

Tensor clamp(const Tensor &t, double lo, double hi) {
  if (lo > hi)
    throw std::invalid_argument("clamp: lo > hi");
  return unary(
      t, [lo, hi](double x) { return std::clamp(x, lo, hi); },
      [lo, hi](double x, double) { return (x >= lo && x <= hi) ? 1.0 : 0.0; });
}

// ---------------------------------------------------------------------------
// Linear algebra

Tensor matmul(const Tensor &a, const Tensor &b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k)
    throw ShapeError("matmul inner dimensions differ: " + to_string(a.shape()) + " . " + to_string(b.shape()));
  std::vector<double> y(m * n);
  MapM(y.data(), m, n).noalias() = MapC(a.values().data(), m, k) * MapC(b.values().data(), k, n);
  return make_op({m, n}, std::move(y), {a.node_ptr(), b.node_ptr()}, [m, k, n](Node &self) {
    Node &A = *self.parents[0];
    Node &B = *self.parents[1];
    MapC g(self.grad.data(), m, n);
    if (A.requires_grad)
      MapM(A.ensure_grad().data(), m, k).noalias() += g * MapC(B.value.data(), k, n).transpose();
    if (B.requires_grad)
      MapM(B.ensure_grad().data(), k, n).noalias() += MapC(A.value.data(), m, k).transpose() * g;
  });
}

Tensor matmul_nt(const Tensor &a, const Tensor &b) {
  require_matrix(a, "matmul_nt");
  require_matrix(b, "matmul_nt");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
  if (b.dim(1) != k)
    throw ShapeError("matmul_nt inner dimensions differ: " + to_string(a.shape()) + " . " +
                     to_string(b.shape()) + "^T");
  std::vector<double> y(m * n);
  MapM(y.data(), m, n).noalias() = MapC(a.values().data(), m, k) * MapC(b.values().data(), n, k).transpose();
  return make_op({m, n}, std::move(y), {a.node_ptr(), b.node_ptr()}, [m, k, n](Node &self) {
    Node &A = *self.parents[0];
    Node &B = *self.parents[1];
    MapC g(self.grad.data(), m, n);
    if (A.requires_grad)
      MapM(A.ensure_grad().data(), m, k).noalias() += g * MapC(B.value.data(), n, k);
    if (B.requires_grad)
      MapM(B.ensure_grad().data(), n, k).noalias() += g.transpose() * MapC(A.value.data(), m, k);
  });
}

// ---------------------------------------------------------------------------
// Structural

Tensor concat(const std::vector<Tensor> &parts, std::size_t axis) {
  if (parts.empty())
    throw ShapeError("concat of an empty list");
  const Shape &first = checked(parts[0])->shape;
  if (axis >= first.size())
    throw ShapeError("concat axis out of range for shape " + to_string(first));
  Shape out = first;
  out[axis] = 0;
  std::vector<std::size_t> widths;
  for (const auto &p : parts) {
    const Shape &s = checked(p)->shape;
    if (s.size() != first.size())
      throw ShapeError("concat rank mismatch");
    for (std::size_t d = 0; d < s.size(); ++d)
      if (d != axis && s[d] != first[d])
        throw ShapeError("concat shape mismatch: " + to_string(first) + " vs " + to_string(s));
    out[axis] += s[axis];
  }
  const auto split = split_axis(first, axis);
  for (const auto &p : parts)
    widths.push_back(p.dim(axis) * split.inner);
  const std::size_t row = out[axis] * split.inner;

  std::vector<double> y(numel(out));
  std::vector<NodePtr> parents;
  std::size_t offset = 0;
  for (std::size_t pi = 0; pi < parts.size(); ++pi) {
    const auto &v = parts[pi].node()->value;
    for (std::size_t o = 0; o < split.outer; ++o)
      std::copy_n(v.begin() + static_cast<std::ptrdiff_t>(o * widths[pi]), widths[pi],
                  y.begin() + static_cast<std::ptrdiff_t>(o * row + offset));
    offset += widths[pi];
    parents.push_back(parts[pi].node_ptr());
  }
  const std::size_t outer = split.outer;
  return make_op(out, std::move(y), std::move(parents), [widths, outer, row](Node &self) {
    std::size_t offset = 0;
    for (std::size_t pi = 0; pi < self.parents.size(); ++pi) {
      Node &p = *self.parents[pi];
      if (p.requires_grad) {
        auto &g = p.ensure_grad();
        for (std::size_t o = 0; o < outer; ++o)
          for (std::size_t j = 0; j < widths[pi]; ++j)
            g[o * widths[pi] + j] += self.grad[o * row + offset + j];
      }
      offset += widths[pi];
    }
  });
}

Tensor narrow(const Tensor &t, std::size_t axis, std::size_t start, std::size_t length) {
  const Shape &s = checked(t)->shape;
  const auto split = split_axis(s, axis);
  if (start + length > split.n)
    throw ShapeError("narrow [" + std::to_string(start) + "," + std::to_string(start + length) +
                     ") exceeds axis of size " + std::to_string(split.n));
  Shape out = s;
  out[axis] = length;
  const std::size_t src_row = split.n * split.inner;
  const std::size_t dst_row = length * split.inner;
  const std::size_t off = start * split.inner;
  const auto &v = t.node()->value;
  std::vector<double> y(split.outer * dst_row);
  for (std::size_t o = 0; o < split.outer; ++o)
    std::copy_n(v.begin() + static_cast<std::ptrdiff_t>(o * src_row + off), dst_row,
                y.begin() + static_cast<std::ptrdiff_t>(o * dst_row));
  const std::size_t outer = split.outer;
  return make_op(out, std::move(y), {t.node_ptr()}, [outer, src_row, dst_row, off](Node &self) {
    auto &g = self.parents[0]->ensure_grad();
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t j = 0; j < dst_row; ++j)
        g[o * src_row + off + j] += self.grad[o * dst_row + j];
  });
}

Tensor gather_rows(const Tensor &t, std::span<const std::size_t> indices) {
  const Shape &s = checked(t)->shape;
  if (s.empty())
    throw ShapeError("gather_rows on a scalar");
  const std::size_t rows = s[0];
  const std::size_t width = rows ? t.size() / rows : 0;
  for (auto i : indices)
    if (i >= rows)
      throw ShapeError("gather_rows index " + std::to_string(i) + " out of range [0," + std::to_string(rows) + ")");
  Shape out = s;
  out[0] = indices.size();
  const auto &v = t.node()->value;
  std::vector<double> y(indices.size() * width);
  for (std::size_t j = 0; j < indices.size(); ++j)
    std::copy_n(v.begin() + static_cast<std::ptrdiff_t>(indices[j] * width), width,
                y.begin() + static_cast<std::ptrdiff_t>(j * width));
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  return make_op(out, std::move(y), {t.node_ptr()}, [idx = std::move(idx), width](Node &self) {
    auto &g = self.parents[0]->ensure_grad();
    for (std::size_t j = 0; j < idx.size(); ++j)
      for (std::size_t c = 0; c < width; ++c)
        g[idx[j] * width + c] += self.grad[j * width + c];
  });
}

Tensor reshape(const Tensor &t, Shape shape) {
  if (numel(shape) != checked(t)->value.size())
    throw ShapeError("reshape " + to_string(t.shape()) + " -> " + to_string(shape));
  return make_op(std::move(shape), t.node()->value, {t.node_ptr()}, [](Node &self) {
    auto &g = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i)
      g[i] += self.grad[i];
  });
}

// ---------------------------------------------------------------------------
// Reductions

Tensor sum(const Tensor &t) {
  double s = 0.0;
  for (double v : checked(t)->value)
    s += v;
  return make_op({}, {s}, {t.node_ptr()}, [](Node &self) {
    auto &g = self.parents[0]->ensure_grad();
    for (auto &x : g)
      x += self.grad[0];
  });
}

Tensor mean(const Tensor &t) { return scale(sum(t), 1.0 / static_cast<double>(std::max<std::size_t>(t.size(), 1))); }

Tensor sum_axis(const Tensor &t, std::size_t axis) {
  const auto sp = split_axis(checked(t)->shape, axis);
  const auto &v = t.node()->value;
  std::vector<double> y(sp.outer * sp.inner, 0.0);
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t k = 0; k < sp.n; ++k)
      for (std::size_t j = 0; j < sp.inner; ++j)
        y[o * sp.inner + j] += v[(o * sp.n + k) * sp.inner + j];
  return make_op(drop_axis(t.shape(), axis), std::move(y), {t.node_ptr()}, [sp](Node &self) {
    auto &g = self.parents[0]->ensure_grad();
    for (std::size_t o = 0; o < sp.outer; ++o)
      for (std::size_t k = 0; k < sp.n; ++k)
        for (std::size_t j = 0; j < sp.inner; ++j)
          g[(o * sp.n + k) * sp.inner + j] += self.grad[o * sp.inner + j];
  });
}

Tensor logsumexp(const Tensor &t, std::size_t axis) {
  const auto sp = split_axis(checked(t)->shape, axis);
  const auto &v = t.node()->value;
  constexpr double ninf = -std::numeric_limits<double>::infinity();
  std::vector<double> y(sp.outer * sp.inner);
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t j = 0; j < sp.inner; ++j) {
      double m = ninf;
      for (std::size_t k = 0; k < sp.n; ++k)
        m = std::max(m, v[(o * sp.n + k) * sp.inner + j]);
      if (!std::isfinite(m)) {
        y[o * sp.inner + j] = m;
        continue;
      }
      double s = 0.0;
      for (std::size_t k = 0; k < sp.n; ++k)
        s += std::exp(v[(o * sp.n + k) * sp.inner + j] - m);
      y[o * sp.inner + j] = m + std::log(s);
    }
  return make_op(drop_axis(t.shape(), axis), std::move(y), {t.node_ptr()}, [sp](Node &self) {
    Node &p = *self.parents[0];
    auto &g = p.ensure_grad();
    for (std::size_t o = 0; o < sp.outer; ++o)
      for (std::size_t j = 0; j < sp.inner; ++j) {
        const double lse = self.value[o * sp.inner + j];
        if (!std::isfinite(lse))
          continue;
        const double go = self.grad[o * sp.inner + j];
        for (std::size_t k = 0; k < sp.n; ++k) {
          const std::size_t i = (o * sp.n + k) * sp.inner + j;
          g[i] += go * std::exp(p.value[i] - lse);
        }
      }
  });
}

Tensor log_softmax(const Tensor &t) {
  const std::size_t last = checked(t)->shape.empty() ? 0 : t.rank() - 1;
  return sub_rowwise(t, logsumexp(t, last));
}

Tensor norm_last(const Tensor &t) {
  const Shape &s = checked(t)->shape;
  if (s.empty())
    throw ShapeError("norm_last on a scalar");
  const std::size_t w = s.back();
  const std::size_t rows = w ? t.size() / w : 0;
  const auto &v = t.node()->value;
  std::vector<double> y(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    double acc = 0.0;
    for (std::size_t c = 0; c < w; ++c)
      acc += v[r * w + c] * v[r * w + c];
    y[r] = std::sqrt(acc);
  }
  Shape out(s.begin(), s.end() - 1);
  return make_op(out, std::move(y), {t.node_ptr()}, [w, rows](Node &self) {
    Node &p = *self.parents[0];
    auto &g = p.ensure_grad();
    for (std::size_t r = 0; r < rows; ++r) {
      const double nrm = self.value[r];
      if (nrm == 0.0)
        continue;
      for (std::size_t c = 0; c < w; ++c)
        g[r * w + c] += self.grad[r] * p.value[r * w + c] / nrm;
    }
  });
}

// ---------------------------------------------------------------------------
// Convolution

Tensor conv2d(const Tensor &input, const Tensor &kernels, std::size_t stride) {
  if (checked(input)->shape.size() != 3 || checked(kernels)->shape.size() != 4)
    throw ShapeError("conv2d expects C x H x W input and F x C x kh x kw kernels");
  if (stride == 0)
    throw std::invalid_argument("conv2d stride must be positive");
  const std::size_t C = input.dim(0), H = input.dim(1), W = input.dim(2);
  const std::size_t F = kernels.dim(0), kh = kernels.dim(2), kw = kernels.dim(3);
  if (kernels.dim(1) != C)
    throw ShapeError("conv2d channel mismatch: input " + to_string(input.shape()) + ", kernels " +
                     to_string(kernels.shape()));
  if (kh > H || kw > W)
    throw ShapeError("conv2d kernel " + to_string(kernels.shape()) + " larger than input " +
                     to_string(input.shape()));
  const std::size_t Ho = (H - kh) / stride + 1, Wo = (W - kw) / stride + 1;
  const auto &x = input.node()->value;
  const auto &k = kernels.node()->value;
  auto xi = [=](std::size_t c, std::size_t i, std::size_t j) { return (c * H + i) * W + j; };
  auto ki = [=](std::size_t f, std::size_t c, std::size_t i, std::size_t j) { return ((f * C + c) * kh + i) * kw + j; };
  std::vector<double> y(F * Ho * Wo, 0.0);
  for (std::size_t f = 0; f < F; ++f)
    for (std::size_t oi = 0; oi < Ho; ++oi)
      for (std::size_t oj = 0; oj < Wo; ++oj) {
        double acc = 0.0;
        for (std::size_t c = 0; c < C; ++c)
          for (std::size_t i = 0; i < kh; ++i)
            for (std::size_t j = 0; j < kw; ++j)
              acc += x[xi(c, oi * stride + i, oj * stride + j)] * k[ki(f, c, i, j)];
        y[(f * Ho + oi) * Wo + oj] = acc;
      }
  return make_op({F, Ho, Wo}, std::move(y), {input.node_ptr(), kernels.node_ptr()},
                 [=](Node &self) {
                   Node &X = *self.parents[0];
                   Node &K = *self.parents[1];
                   double *gx = X.requires_grad ? X.ensure_grad().data() : nullptr;
                   double *gk = K.requires_grad ? K.ensure_grad().data() : nullptr;
                   for (std::size_t f = 0; f < F; ++f)
                     for (std::size_t oi = 0; oi < Ho; ++oi)
                       for (std::size_t oj = 0; oj < Wo; ++oj) {
                         const double g = self.grad[(f * Ho + oi) * Wo + oj];
                         for (std::size_t c = 0; c < C; ++c)
                           for (std::size_t i = 0; i < kh; ++i)
                             for (std::size_t j = 0; j < kw; ++j) {
                               const std::size_t a = xi(c, oi * stride + i, oj * stride + j);
                               const std::size_t b = ki(f, c, i, j);
                               if (gx) gx[a] += g * K.value[b];
                               if (gk) gk[b] += g * X.value[a];
                             }
                       }
                 });
}

// ---------------------------------------------------------------------------
// Sampling

Tensor sample_uniform(RngStream &rng, double lo, double hi, Shape shape) {
  if (!(lo < hi))
    throw std::invalid_argument("sample_uniform requires lo < hi");
  std::vector<double> v(numel(shape));
  for (auto &x : v)
    x = rng.uniform(lo, hi);
  return Tensor(std::move(shape), std::move(v));
}

Tensor sample_gaussian(RngStream &rng, Shape shape) {
  std::vector<double> v(numel(shape));
  for (auto &x : v)
    x = rng.gaussian();
  return Tensor(std::move(shape), std::move(v));
}

// ---------------------------------------------------------------------------
// Backward sweep

void backward(const Tensor &loss) {
  if (!loss.defined() || loss.size() != 1)
    throw ShapeError("backward requires a scalar loss");
  Node *root = loss.node();
  if (!root->requires_grad)
    return;

  // Iterative post-order DFS over the differentiable subgraph.
  std::vector<Node *> order;
  std::unordered_set<Node *> seen;
  std::vector<std::pair<Node *, std::size_t>> stack{{root, 0}};
  seen.insert(root);
  while (!stack.empty()) {
    auto &[node, next] = stack.back();
    if (next < node->parents.size()) {
      Node *p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second)
        stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (Node *n : order)
    if (!n->leaf)
      n->grad.assign(n->value.size(), 0.0);
  root->ensure_grad()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node *n = *it;
    if (n->backward)
      n->backward(*n);
  }
}

} // namespace pfrnn
