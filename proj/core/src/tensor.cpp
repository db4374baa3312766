#include "hmmt/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cassert>
#include <cmath>
#include <numbers>
#include <sstream>
#include <unordered_set>

#include "hmmt/errors.hpp"

namespace hmmt {

namespace {

std::atomic<std::uint64_t> g_sequence{0};
thread_local bool t_grad_enabled = true;

std::size_t normalize_axis(int axis, std::size_t rank) {
  const int r = static_cast<int>(rank);
  const int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for rank " +
                         std::to_string(rank));
  }
  return static_cast<std::size_t>(a);
}

bool is_suffix(const Shape& full, const Shape& tail) {
  if (tail.size() > full.size()) return false;
  return std::equal(tail.rbegin(), tail.rend(), full.rbegin());
}

// Splits a shape around `axis` into (outer, extent, inner) element counts.
struct AxisSplit {
  std::size_t outer = 1;
  std::size_t extent = 1;
  std::size_t inner = 1;
};

AxisSplit split_at(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

}  // namespace

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::vector<double>& detail::Node::ensure_grad() {
  if (grad.empty()) grad.assign(data.size(), 0.0);
  return grad;
}

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }
bool grad_mode_enabled() { return t_grad_enabled; }

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const auto n = shape_numel(shape);
  return from(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  for (auto e : shape) {
    if (e == 0) throw DimensionError("tensor extents must be positive, got " + shape_to_string(shape));
  }
  if (shape_numel(shape) != values.size()) {
    throw DimensionError("shape " + shape_to_string(shape) + " does not hold " +
                         std::to_string(values.size()) + " values");
  }
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->data = std::move(values);
  node->requires_grad = requires_grad;
  node->sequence = g_sequence.fetch_add(1, std::memory_order_relaxed);
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from({1}, {value}, requires_grad); }

const Shape& Tensor::shape() const {
  if (!node_) throw ContractError("use of undefined tensor");
  return node_->shape;
}

std::size_t Tensor::numel() const { return node_ ? node_->data.size() : 0; }

std::size_t Tensor::dim(int axis) const { return shape()[normalize_axis(axis, rank())]; }

std::span<const double> Tensor::data() const { return node_->data; }
std::span<double> Tensor::mutable_data() { return node_->data; }
std::vector<double> Tensor::to_vector() const { return node_->data; }

double Tensor::item() const {
  if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_to_string(shape()));
  return node_->data[0];
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
  const auto& s = shape();
  if (index.size() != s.size()) throw DimensionError("index rank does not match tensor rank");
  std::size_t flat = 0;
  std::size_t i = 0;
  for (auto v : index) {
    if (v >= s[i]) throw DimensionError("index out of range");
    flat = flat * s[i] + v;
    ++i;
  }
  return node_->data[flat];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }
void Tensor::set_requires_grad(bool value) { node_->requires_grad = value; }
bool Tensor::has_grad() const { return node_ && !node_->grad.empty(); }
std::span<const double> Tensor::grad() const { return node_->grad; }
std::span<double> Tensor::mutable_grad() { return node_->ensure_grad(); }
void Tensor::zero_grad() {
  if (node_) {
    node_->grad.clear();
    node_->grad.shrink_to_fit();
  }
}

Tensor Tensor::detach() const { return from(shape(), node_->data, false); }
Tensor Tensor::clone() const { return from(shape(), node_->data, requires_grad()); }

Tensor Tensor::make_result(Shape shape, std::vector<double> data, std::vector<Tensor> parents,
                           std::function<void(detail::Node&)> backward) {
  Tensor out = from(std::move(shape), std::move(data), false);
#ifndef NDEBUG
  auto finite = [](const std::vector<double>& v) {
    return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
  };
  bool inputs_finite = true;
  for (const auto& p : parents) inputs_finite = inputs_finite && finite(p.node_->data);
  assert(!inputs_finite || finite(out.node_->data));
#endif
  if (!t_grad_enabled) return out;
  bool any = false;
  for (const auto& p : parents) any = any || p.requires_grad();
  if (!any) return out;
  out.node_->requires_grad = true;
  out.node_->parents.reserve(parents.size());
  for (auto& p : parents) out.node_->parents.push_back(p.node_);
  out.node_->backward = std::move(backward);
  return out;
}

void Tensor::backward() const {
  if (!node_) throw ContractError("backward() on undefined tensor");
  if (node_->data.size() != 1) {
    throw ContractError("backward() requires a scalar loss, got shape " + shape_to_string(node_->shape));
  }
  if (!node_->requires_grad) return;

  // Collect every ancestor that participates in differentiation.
  std::vector<detail::Node*> order;
  std::unordered_set<const detail::Node*> seen;
  std::vector<detail::Node*> stack{node_.get()};
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto* n = stack.back();
    stack.pop_back();
    order.push_back(n);
    for (auto& p : n->parents) {
      if (p->requires_grad && seen.insert(p.get()).second) stack.push_back(p.get());
    }
  }
  // Sequence numbers are assigned at creation, so descending order is a
  // valid reverse topological order.
  std::sort(order.begin(), order.end(),
            [](const detail::Node* a, const detail::Node* b) { return a->sequence > b->sequence; });

  // Interior gradients are per-call; only leaves accumulate.
  for (auto* n : order) {
    if (!n->parents.empty()) n->grad.assign(n->data.size(), 0.0);
  }
  node_->ensure_grad()[0] += 1.0;
  for (auto* n : order) {
    if (n->backward && !n->grad.empty()) n->backward(*n);
  }
}

Nonlinearity parse_nonlinearity(const std::string& name) {
  if (name == "relu") return Nonlinearity::kRelu;
  if (name == "gelu") return Nonlinearity::kGelu;
  throw ConfigError("unknown nonlinearity '" + name + "' (valid: relu, gelu)");
}

std::string to_string(Nonlinearity nl) { return nl == Nonlinearity::kRelu ? "relu" : "gelu"; }

// ---------------------------------------------------------------------------
// Elementwise

namespace {

enum class Binary { kAdd, kSub, kMul };

Tensor binary(const Tensor& a, const Tensor& b, Binary kind, const char* name) {
  if (!is_suffix(a.shape(), b.shape())) {
    throw DimensionError(std::string(name) + ": shape " + shape_to_string(b.shape()) +
                         " cannot broadcast onto " + shape_to_string(a.shape()));
  }
  const std::size_t n = a.numel();
  const std::size_t m = b.numel();
  auto ad = a.data();
  auto bd = b.data();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double x = ad[i];
    const double y = bd[i % m];
    out[i] = kind == Binary::kAdd ? x + y : kind == Binary::kSub ? x - y : x * y;
  }
  return Tensor::make_result(a.shape(), std::move(out), {a, b}, [kind, n, m](detail::Node& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    const auto& g = self.grad;
    if (pa.requires_grad) {
      auto& ga = pa.ensure_grad();
      for (std::size_t i = 0; i < n; ++i) ga[i] += kind == Binary::kMul ? g[i] * pb.data[i % m] : g[i];
    }
    if (pb.requires_grad) {
      auto& gb = pb.ensure_grad();
      for (std::size_t i = 0; i < n; ++i) {
        const double gi = kind == Binary::kAdd ? g[i] : kind == Binary::kSub ? -g[i] : g[i] * pa.data[i];
        gb[i % m] += gi;
      }
    }
  });
}

template <class F, class D>
Tensor unary(const Tensor& a, F f, D df) {
  auto ad = a.data();
  std::vector<double> out(ad.size());
  for (std::size_t i = 0; i < ad.size(); ++i) out[i] = f(ad[i]);
  return Tensor::make_result(a.shape(), std::move(out), {a}, [df](detail::Node& self) {
    auto& p = *self.parents[0];
    auto& gp = p.ensure_grad();
    for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += self.grad[i] * df(p.data[i], self.data[i]);
  });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary(a, b, Binary::kAdd, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(a, b, Binary::kSub, "sub"); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(a, b, Binary::kMul, "mul"); }

Tensor scale(const Tensor& a, double factor) {
  return unary(a, [factor](double x) { return x * factor; }, [factor](double, double) { return factor; });
}

Tensor relu(const Tensor& a) {
  return unary(a, [](double x) { return x > 0.0 ? x : 0.0; },
               [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor gelu(const Tensor& a) {
  constexpr double kInvSqrt2 = 0.70710678118654752440;
  const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
  return unary(
      a, [](double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); },
      [inv_sqrt_2pi](double x, double) {
        const double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
        return cdf + x * inv_sqrt_2pi * std::exp(-0.5 * x * x);
      });
}

Tensor tanh(const Tensor& a) {
  return unary(a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Tensor activate(const Tensor& a, Nonlinearity nl) { return nl == Nonlinearity::kRelu ? relu(a) : gelu(a); }

// ---------------------------------------------------------------------------
// Linear algebra and layout

Tensor matmul(const Tensor& a, const Tensor& b) {
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  auto mismatch = [&] {
    return DimensionError("matmul: incompatible shapes " + shape_to_string(sa) + " and " + shape_to_string(sb));
  };
  if (sa.size() < 2 || sb.size() < 2) throw mismatch();
  const std::size_t m = sa[sa.size() - 2], k = sa.back(), k2 = sb[sb.size() - 2], n = sb.back();
  if (k != k2) throw mismatch();
  Shape batch_a(sa.begin(), sa.end() - 2);
  Shape batch_b(sb.begin(), sb.end() - 2);
  Shape batch;
  if (batch_a.empty()) {
    batch = batch_b;
  } else if (batch_b.empty() || batch_a == batch_b) {
    batch = batch_a;
  } else {
    throw mismatch();
  }
  const std::size_t nb = shape_numel(batch);
  const bool share_a = batch_a.empty();
  const bool share_b = batch_b.empty();
  Shape out_shape = batch;
  out_shape.push_back(m);
  out_shape.push_back(n);

  auto ad = a.data();
  auto bd = b.data();
  std::vector<double> out(nb * m * n, 0.0);
  for (std::size_t bi = 0; bi < nb; ++bi) {
    const double* A = ad.data() + (share_a ? 0 : bi * m * k);
    const double* B = bd.data() + (share_b ? 0 : bi * k * n);
    double* C = out.data() + bi * m * n;
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t p = 0; p < k; ++p) {
        const double av = A[i * k + p];
        const double* brow = B + p * n;
        double* crow = C + i * n;
        for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
    }
  }
  return Tensor::make_result(std::move(out_shape), std::move(out), {a, b},
                             [=](detail::Node& self) {
                               auto& pa = *self.parents[0];
                               auto& pb = *self.parents[1];
                               const double* G = self.grad.data();
                               if (pa.requires_grad) {
                                 auto& ga = pa.ensure_grad();
                                 for (std::size_t bi = 0; bi < nb; ++bi) {
                                   const double* B = pb.data.data() + (share_b ? 0 : bi * k * n);
                                   double* GA = ga.data() + (share_a ? 0 : bi * m * k);
                                   const double* Gb = G + bi * m * n;
                                   for (std::size_t i = 0; i < m; ++i) {
                                     for (std::size_t p = 0; p < k; ++p) {
                                       double acc = 0.0;
                                       for (std::size_t j = 0; j < n; ++j) acc += Gb[i * n + j] * B[p * n + j];
                                       GA[i * k + p] += acc;
                                     }
                                   }
                                 }
                               }
                               if (pb.requires_grad) {
                                 auto& gb = pb.ensure_grad();
                                 for (std::size_t bi = 0; bi < nb; ++bi) {
                                   const double* A = pa.data.data() + (share_a ? 0 : bi * m * k);
                                   double* GB = gb.data() + (share_b ? 0 : bi * k * n);
                                   const double* Gb = G + bi * m * n;
                                   for (std::size_t i = 0; i < m; ++i) {
                                     for (std::size_t p = 0; p < k; ++p) {
                                       const double av = A[i * k + p];
                                       for (std::size_t j = 0; j < n; ++j) GB[p * n + j] += av * Gb[i * n + j];
                                     }
                                   }
                                 }
                               }
                             });
}

Tensor permute(const Tensor& a, const std::vector<std::size_t>& order) {
  const auto& s = a.shape();
  const std::size_t r = s.size();
  if (order.size() != r) throw DimensionError("permute: order rank mismatch for " + shape_to_string(s));
  std::vector<bool> used(r, false);
  for (auto o : order) {
    if (o >= r || used[o]) throw DimensionError("permute: invalid axis order");
    used[o] = true;
  }
  Shape out_shape(r);
  for (std::size_t i = 0; i < r; ++i) out_shape[i] = s[order[i]];
  std::vector<std::size_t> in_strides(r, 1);
  for (std::size_t i = r; i-- > 1;) in_strides[i - 1] = in_strides[i] * s[i];
  // Source offset for each output element.
  const std::size_t n = a.numel();
  std::vector<std::size_t> src(n);
  std::vector<std::size_t> idx(r, 0);
  for (std::size_t flat = 0; flat < n; ++flat) {
    std::size_t off = 0;
    for (std::size_t i = 0; i < r; ++i) off += idx[i] * in_strides[order[i]];
    src[flat] = off;
    for (std::size_t i = r; i-- > 0;) {
      if (++idx[i] < out_shape[i]) break;
      idx[i] = 0;
    }
  }
  auto ad = a.data();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = ad[src[i]];
  return Tensor::make_result(std::move(out_shape), std::move(out), {a},
                             [src = std::move(src)](detail::Node& self) {
                               auto& gp = self.parents[0]->ensure_grad();
                               for (std::size_t i = 0; i < src.size(); ++i) gp[src[i]] += self.grad[i];
                             });
}

Tensor transpose(const Tensor& a) {
  const std::size_t r = a.rank();
  if (r < 2) throw DimensionError("transpose needs rank >= 2, got " + shape_to_string(a.shape()));
  std::vector<std::size_t> order(r);
  for (std::size_t i = 0; i < r; ++i) order[i] = i;
  std::swap(order[r - 1], order[r - 2]);
  return permute(a, order);
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw DimensionError("reshape: " + shape_to_string(a.shape()) + " to " + shape_to_string(shape));
  }
  return Tensor::make_result(std::move(shape), a.to_vector(), {a}, [](detail::Node& self) {
    auto& gp = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += self.grad[i];
  });
}

Tensor expand_leading(const Tensor& a, std::size_t count) {
  Shape out_shape{count};
  out_shape.insert(out_shape.end(), a.shape().begin(), a.shape().end());
  const std::size_t m = a.numel();
  auto ad = a.data();
  std::vector<double> out(count * m);
  for (std::size_t c = 0; c < count; ++c) std::copy(ad.begin(), ad.end(), out.begin() + c * m);
  return Tensor::make_result(std::move(out_shape), std::move(out), {a}, [m](detail::Node& self) {
    auto& gp = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) gp[i % m] += self.grad[i];
  });
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw DimensionError("concat of zero tensors");
  const Shape& first = parts.front().shape();
  const std::size_t ax = normalize_axis(axis, first.size());
  Shape out_shape = first;
  out_shape[ax] = 0;
  for (const auto& p : parts) {
    const auto& s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = i == ax || s[i] == first[i];
    if (!ok) {
      throw DimensionError("concat: " + shape_to_string(s) + " incompatible with " + shape_to_string(first) +
                           " along axis " + std::to_string(axis));
    }
    out_shape[ax] += s[ax];
  }
  const auto split = split_at(out_shape, ax);
  std::vector<double> out(shape_numel(out_shape));
  std::vector<std::size_t> offsets;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    offsets.push_back(offset);
    const std::size_t e = p.shape()[ax];
    auto pd = p.data();
    for (std::size_t o = 0; o < split.outer; ++o) {
      std::copy_n(pd.begin() + o * e * split.inner, e * split.inner,
                  out.begin() + (o * split.extent + offset) * split.inner);
    }
    offset += e;
  }
  return Tensor::make_result(std::move(out_shape), std::move(out), parts,
                             [split, offsets](detail::Node& self) {
                               for (std::size_t k = 0; k < self.parents.size(); ++k) {
                                 auto& p = *self.parents[k];
                                 if (!p.requires_grad) continue;
                                 auto& gp = p.ensure_grad();
                                 const std::size_t e = gp.size() / (split.outer * split.inner);
                                 for (std::size_t o = 0; o < split.outer; ++o) {
                                   const double* src = self.grad.data() + (o * split.extent + offsets[k]) * split.inner;
                                   double* dst = gp.data() + o * e * split.inner;
                                   for (std::size_t i = 0; i < e * split.inner; ++i) dst[i] += src[i];
                                 }
                               }
                             });
}

Tensor slice(const Tensor& a, int axis, std::size_t begin, std::size_t end) {
  const std::size_t ax = normalize_axis(axis, a.rank());
  if (begin >= end || end > a.shape()[ax]) {
    throw DimensionError("slice [" + std::to_string(begin) + "," + std::to_string(end) + ") out of range for " +
                         shape_to_string(a.shape()));
  }
  const auto split = split_at(a.shape(), ax);
  Shape out_shape = a.shape();
  out_shape[ax] = end - begin;
  const std::size_t e = end - begin;
  std::vector<double> out(split.outer * e * split.inner);
  auto ad = a.data();
  for (std::size_t o = 0; o < split.outer; ++o) {
    std::copy_n(ad.begin() + (o * split.extent + begin) * split.inner, e * split.inner,
                out.begin() + o * e * split.inner);
  }
  return Tensor::make_result(std::move(out_shape), std::move(out), {a}, [split, begin, e](detail::Node& self) {
    auto& gp = self.parents[0]->ensure_grad();
    for (std::size_t o = 0; o < split.outer; ++o) {
      const double* src = self.grad.data() + o * e * split.inner;
      double* dst = gp.data() + (o * split.extent + begin) * split.inner;
      for (std::size_t i = 0; i < e * split.inner; ++i) dst[i] += src[i];
    }
  });
}

Tensor gather_rows(const Tensor& a, std::span<const std::size_t> rows) {
  if (a.rank() < 1 || rows.empty()) throw DimensionError("gather_rows: empty selection");
  const std::size_t n = a.shape()[0];
  const std::size_t row = a.numel() / n;
  Shape out_shape = a.shape();
  out_shape[0] = rows.size();
  std::vector<double> out(rows.size() * row);
  auto ad = a.data();
  std::vector<std::size_t> picked(rows.begin(), rows.end());
  for (std::size_t i = 0; i < picked.size(); ++i) {
    if (picked[i] >= n) throw DimensionError("gather_rows: row index out of range");
    std::copy_n(ad.begin() + picked[i] * row, row, out.begin() + i * row);
  }
  return Tensor::make_result(std::move(out_shape), std::move(out), {a},
                             [picked = std::move(picked), row](detail::Node& self) {
                               auto& gp = self.parents[0]->ensure_grad();
                               for (std::size_t i = 0; i < picked.size(); ++i) {
                                 for (std::size_t j = 0; j < row; ++j) gp[picked[i] * row + j] += self.grad[i * row + j];
                               }
                             });
}

Tensor embedding(const Tensor& table, std::span<const std::size_t> indices) {
  if (table.rank() != 2) throw DimensionError("embedding table must be rank 2, got " + shape_to_string(table.shape()));
  return gather_rows(table, indices);
}

// ---------------------------------------------------------------------------
// Reductions

Tensor sum(const Tensor& a) {
  double acc = 0.0;
  for (double v : a.data()) acc += v;
  return Tensor::make_result({1}, {acc}, {a}, [](detail::Node& self) {
    auto& gp = self.parents[0]->ensure_grad();
    for (auto& g : gp) g += self.grad[0];
  });
}

Tensor mean(const Tensor& a) {
  const double inv = 1.0 / static_cast<double>(a.numel());
  double acc = 0.0;
  for (double v : a.data()) acc += v;
  return Tensor::make_result({1}, {acc * inv}, {a}, [inv](detail::Node& self) {
    auto& gp = self.parents[0]->ensure_grad();
    for (auto& g : gp) g += self.grad[0] * inv;
  });
}

// ---------------------------------------------------------------------------
// Normalizations

Tensor softmax(const Tensor& a, int axis) {
  const std::size_t ax = normalize_axis(axis, a.rank());
  const auto s = split_at(a.shape(), ax);
  auto ad = a.data();
  std::vector<double> out(ad.size());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.extent * s.inner + in;
      double mx = ad[base];
      for (std::size_t l = 1; l < s.extent; ++l) mx = std::max(mx, ad[base + l * s.inner]);
      double z = 0.0;
      for (std::size_t l = 0; l < s.extent; ++l) {
        const double e = std::exp(ad[base + l * s.inner] - mx);
        out[base + l * s.inner] = e;
        z += e;
      }
      for (std::size_t l = 0; l < s.extent; ++l) out[base + l * s.inner] /= z;
    }
  }
  return Tensor::make_result(a.shape(), std::move(out), {a}, [s](detail::Node& self) {
    auto& gp = self.parents[0]->ensure_grad();
    const auto& y = self.data;
    const auto& g = self.grad;
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t in = 0; in < s.inner; ++in) {
        const std::size_t base = o * s.extent * s.inner + in;
        double dot = 0.0;
        for (std::size_t l = 0; l < s.extent; ++l) dot += g[base + l * s.inner] * y[base + l * s.inner];
        for (std::size_t l = 0; l < s.extent; ++l) {
          const std::size_t i = base + l * s.inner;
          gp[i] += y[i] * (g[i] - dot);
        }
      }
    }
  });
}

Tensor log_softmax(const Tensor& a, int axis) {
  const std::size_t ax = normalize_axis(axis, a.rank());
  const auto s = split_at(a.shape(), ax);
  auto ad = a.data();
  std::vector<double> out(ad.size());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.extent * s.inner + in;
      double mx = ad[base];
      for (std::size_t l = 1; l < s.extent; ++l) mx = std::max(mx, ad[base + l * s.inner]);
      double z = 0.0;
      for (std::size_t l = 0; l < s.extent; ++l) z += std::exp(ad[base + l * s.inner] - mx);
      const double lse = mx + std::log(z);
      for (std::size_t l = 0; l < s.extent; ++l) out[base + l * s.inner] = ad[base + l * s.inner] - lse;
    }
  }
  return Tensor::make_result(a.shape(), std::move(out), {a}, [s](detail::Node& self) {
    auto& gp = self.parents[0]->ensure_grad();
    const auto& y = self.data;
    const auto& g = self.grad;
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t in = 0; in < s.inner; ++in) {
        const std::size_t base = o * s.extent * s.inner + in;
        double gs = 0.0;
        for (std::size_t l = 0; l < s.extent; ++l) gs += g[base + l * s.inner];
        for (std::size_t l = 0; l < s.extent; ++l) {
          const std::size_t i = base + l * s.inner;
          gp[i] += g[i] - std::exp(y[i]) * gs;
        }
      }
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  const std::size_t d = x.shape().back();
  if (gain.numel() != d || bias.numel() != d) {
    throw DimensionError("layer_norm: gain/bias " + shape_to_string(gain.shape()) + " do not match last axis of " +
                         shape_to_string(x.shape()));
  }
  const std::size_t rows = x.numel() / d;
  auto xd = x.data();
  auto gd = gain.data();
  auto bd = bias.data();
  std::vector<double> out(xd.size());
  std::vector<double> xhat(xd.size());
  std::vector<double> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = xd.data() + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += row[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(d);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (row[j] - mu) * inv_std[r];
      xhat[r * d + j] = h;
      out[r * d + j] = h * gd[j] + bd[j];
    }
  }
  return Tensor::make_result(
      x.shape(), std::move(out), {x, gain, bias},
      [d, rows, xhat = std::move(xhat), inv_std = std::move(inv_std)](detail::Node& self) {
        auto& px = *self.parents[0];
        auto& pg = *self.parents[1];
        auto& pb = *self.parents[2];
        const auto& g = self.grad;
        if (pg.requires_grad) {
          auto& gg = pg.ensure_grad();
          for (std::size_t i = 0; i < g.size(); ++i) gg[i % d] += g[i] * xhat[i];
        }
        if (pb.requires_grad) {
          auto& gb = pb.ensure_grad();
          for (std::size_t i = 0; i < g.size(); ++i) gb[i % d] += g[i];
        }
        if (px.requires_grad) {
          auto& gx = px.ensure_grad();
          const double inv_d = 1.0 / static_cast<double>(d);
          for (std::size_t r = 0; r < rows; ++r) {
            double m1 = 0.0, m2 = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
              const double dh = g[r * d + j] * pg.data[j];
              m1 += dh;
              m2 += dh * xhat[r * d + j];
            }
            m1 *= inv_d;
            m2 *= inv_d;
            for (std::size_t j = 0; j < d; ++j) {
              const double dh = g[r * d + j] * pg.data[j];
              gx[r * d + j] += inv_std[r] * (dh - m1 - xhat[r * d + j] * m2);
            }
          }
        }
      });
}

Tensor batch_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, BatchNormState& state, bool training) {
  if (x.rank() != 2) throw DimensionError("batch_norm expects [n, d], got " + shape_to_string(x.shape()));
  const std::size_t n = x.shape()[0];
  const std::size_t d = x.shape()[1];
  if (gain.numel() != d || bias.numel() != d || state.running_mean.numel() != d || state.running_var.numel() != d) {
    throw DimensionError("batch_norm: parameter width does not match " + shape_to_string(x.shape()));
  }
  auto xd = x.data();
  auto gd = gain.data();
  auto bd = bias.data();
  std::vector<double> mu(d, 0.0), inv_std(d, 0.0);
  if (training) {
    std::vector<double> var(d, 0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < d; ++j) mu[j] += xd[i * d + j];
    for (auto& m : mu) m /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < d; ++j) var[j] += (xd[i * d + j] - mu[j]) * (xd[i * d + j] - mu[j]);
    auto rm = state.running_mean.mutable_data();
    auto rv = state.running_var.mutable_data();
    for (std::size_t j = 0; j < d; ++j) {
      const double biased = var[j] / static_cast<double>(n);
      const double unbiased = n > 1 ? var[j] / static_cast<double>(n - 1) : biased;
      inv_std[j] = 1.0 / std::sqrt(biased + state.eps);
      rm[j] = (1.0 - state.momentum) * rm[j] + state.momentum * mu[j];
      rv[j] = (1.0 - state.momentum) * rv[j] + state.momentum * unbiased;
    }
  } else {
    auto rm = state.running_mean.data();
    auto rv = state.running_var.data();
    for (std::size_t j = 0; j < d; ++j) {
      mu[j] = rm[j];
      inv_std[j] = 1.0 / std::sqrt(rv[j] + state.eps);
    }
  }
  std::vector<double> xhat(n * d), out(n * d);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (xd[i * d + j] - mu[j]) * inv_std[j];
      xhat[i * d + j] = h;
      out[i * d + j] = h * gd[j] + bd[j];
    }
  }
  return Tensor::make_result(
      x.shape(), std::move(out), {x, gain, bias},
      [n, d, training, xhat = std::move(xhat), inv_std = std::move(inv_std)](detail::Node& self) {
        auto& px = *self.parents[0];
        auto& pg = *self.parents[1];
        auto& pb = *self.parents[2];
        const auto& g = self.grad;
        if (pg.requires_grad) {
          auto& gg = pg.ensure_grad();
          for (std::size_t i = 0; i < g.size(); ++i) gg[i % d] += g[i] * xhat[i];
        }
        if (pb.requires_grad) {
          auto& gb = pb.ensure_grad();
          for (std::size_t i = 0; i < g.size(); ++i) gb[i % d] += g[i];
        }
        if (!px.requires_grad) return;
        auto& gx = px.ensure_grad();
        if (!training) {
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < d; ++j) gx[i * d + j] += g[i * d + j] * pg.data[j] * inv_std[j];
          return;
        }
        const double inv_n = 1.0 / static_cast<double>(n);
        for (std::size_t j = 0; j < d; ++j) {
          double m1 = 0.0, m2 = 0.0;
          for (std::size_t i = 0; i < n; ++i) {
            const double dh = g[i * d + j] * pg.data[j];
            m1 += dh;
            m2 += dh * xhat[i * d + j];
          }
          m1 *= inv_n;
          m2 *= inv_n;
          for (std::size_t i = 0; i < n; ++i) {
            const double dh = g[i * d + j] * pg.data[j];
            gx[i * d + j] += inv_std[j] * (dh - m1 - xhat[i * d + j] * m2);
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Losses

Tensor cross_entropy(const Tensor& logits, std::span<const int> labels) {
  if (logits.rank() != 2) throw DimensionError("cross_entropy expects [n, C], got " + shape_to_string(logits.shape()));
  const std::size_t n = logits.shape()[0];
  const std::size_t c = logits.shape()[1];
  if (labels.size() != n) throw DimensionError("cross_entropy: label count does not match batch");
  auto ld = logits.data();
  std::vector<double> probs(n * c);
  std::vector<int> y(labels.begin(), labels.end());
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (y[i] < 0 || static_cast<std::size_t>(y[i]) >= c) throw DimensionError("cross_entropy: label out of range");
    const double* row = ld.data() + i * c;
    double mx = row[0];
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += std::exp(row[j] - mx);
    const double lse = mx + std::log(z);
    for (std::size_t j = 0; j < c; ++j) probs[i * c + j] = std::exp(row[j] - lse);
    loss -= row[y[i]] - lse;
  }
  loss /= static_cast<double>(n);
  return Tensor::make_result({1}, {loss}, {logits},
                             [n, c, probs = std::move(probs), y = std::move(y)](detail::Node& self) {
                               auto& gp = self.parents[0]->ensure_grad();
                               const double s = self.grad[0] / static_cast<double>(n);
                               for (std::size_t i = 0; i < n; ++i) {
                                 for (std::size_t j = 0; j < c; ++j) {
                                   const double onehot = static_cast<int>(j) == y[i] ? 1.0 : 0.0;
                                   gp[i * c + j] += s * (probs[i * c + j] - onehot);
                                 }
                               }
                             });
}

Tensor mse(const Tensor& pred, const Tensor& target) {
  if (pred.shape() != target.shape()) {
    throw DimensionError("mse: " + shape_to_string(pred.shape()) + " vs " + shape_to_string(target.shape()));
  }
  return mean(mul(sub(pred, target), sub(pred, target)));
}

}  // namespace hmmt
