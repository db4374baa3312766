#include "hmmt/nn.hpp"

#include <cmath>

#include "hmmt/errors.hpp"

namespace hmmt {

Tensor& ParamStore::add(std::string name, Tensor value, bool trainable) {
  if (index_.contains(name)) throw ConfigError("duplicate parameter name '" + name + "'");
  value.set_requires_grad(trainable);
  index_.emplace(name, entries_.size());
  entries_.push_back({std::move(name), std::move(value), trainable});
  return entries_.back().tensor;
}

bool ParamStore::contains(std::string_view name) const { return index_.contains(std::string(name)); }

const ParamStore::Entry& ParamStore::entry(std::string_view name) const {
  auto it = index_.find(std::string(name));
  if (it == index_.end()) throw ConfigError("unknown parameter '" + std::string(name) + "'");
  return entries_[it->second];
}

Tensor& ParamStore::get(std::string_view name) {
  auto it = index_.find(std::string(name));
  if (it == index_.end()) throw ConfigError("unknown parameter '" + std::string(name) + "'");
  return entries_[it->second].tensor;
}

const Tensor& ParamStore::get(std::string_view name) const { return entry(name).tensor; }

std::size_t ParamStore::trainable_scalars() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.trainable ? e.tensor.numel() : 0;
  return n;
}

void ParamStore::zero_grad() {
  for (auto& e : entries_) e.tensor.zero_grad();
}

Tensor init_normal(const Shape& shape, double stddev, Rng& rng) {
  std::vector<double> values(shape_numel(shape));
  for (auto& v : values) v = stddev * rng.normal();
  return Tensor::from(shape, std::move(values));
}

Tensor init_projection(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  return init_normal({fan_in, fan_out}, 1.0 / std::sqrt(static_cast<double>(fan_in)), rng);
}

LayerNormParams make_layer_norm(ParamStore& store, const std::string& prefix, std::size_t width) {
  LayerNormParams ln;
  ln.gain = store.add(prefix + ".gain", Tensor::full({width}, 1.0));
  ln.bias = store.add(prefix + ".bias", Tensor::zeros({width}));
  return ln;
}

AttentionParams make_attention(ParamStore& store, const std::string& prefix, std::size_t query_dim,
                               std::size_t context_dim, std::size_t heads, std::size_t head_dim,
                               Rng& rng) {
  AttentionParams p;
  p.heads = heads;
  p.head_dim = head_dim;
  const std::size_t inner = heads * head_dim;
  p.wq = store.add(prefix + ".wq", init_projection(query_dim, inner, rng));
  p.wk = store.add(prefix + ".wk", init_projection(context_dim, inner, rng));
  p.wv = store.add(prefix + ".wv", init_projection(context_dim, inner, rng));
  p.wo = store.add(prefix + ".wo", init_projection(inner, query_dim, rng));
  p.bo = store.add(prefix + ".bo", Tensor::zeros({query_dim}));
  return p;
}

FeedForwardParams make_feed_forward(ParamStore& store, const std::string& prefix, std::size_t width,
                                    std::size_t hidden, Rng& rng) {
  FeedForwardParams p;
  p.w1 = store.add(prefix + ".w1", init_projection(width, hidden, rng));
  p.b1 = store.add(prefix + ".b1", Tensor::zeros({hidden}));
  p.w2 = store.add(prefix + ".w2", init_projection(hidden, width, rng));
  p.b2 = store.add(prefix + ".b2", Tensor::zeros({width}));
  return p;
}

Tensor apply(const LayerNormParams& ln, const Tensor& x) { return layer_norm(x, ln.gain, ln.bias); }

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) { return add(matmul(x, w), b); }

namespace {

// [n, L, h*dh] -> [n, h, L, dh]
Tensor split_heads(const Tensor& x, std::size_t heads, std::size_t head_dim) {
  const std::size_t n = x.shape()[0];
  const std::size_t len = x.shape()[1];
  if (heads == 1) return reshape(x, {n, 1, len, head_dim});
  return permute(reshape(x, {n, len, heads, head_dim}), {0, 2, 1, 3});
}

// [n, h, L, dh] -> [n, L, h*dh]
Tensor merge_heads(const Tensor& x) {
  const std::size_t n = x.shape()[0];
  const std::size_t heads = x.shape()[1];
  const std::size_t len = x.shape()[2];
  const std::size_t head_dim = x.shape()[3];
  if (heads == 1) return reshape(x, {n, len, head_dim});
  return reshape(permute(x, {0, 2, 1, 3}), {n, len, heads * head_dim});
}

}  // namespace

Tensor attention(const Tensor& query, const Tensor& context, const AttentionParams& p, Tensor* probs) {
  if (query.rank() != 3 || context.rank() != 3 || query.shape()[0] != context.shape()[0]) {
    throw DimensionError("attention: query " + shape_to_string(query.shape()) + " and context " +
                         shape_to_string(context.shape()) + " must be [n, L, d] with equal n");
  }
  const Tensor q = split_heads(matmul(query, p.wq), p.heads, p.head_dim);
  const Tensor k = split_heads(matmul(context, p.wk), p.heads, p.head_dim);
  const Tensor v = split_heads(matmul(context, p.wv), p.heads, p.head_dim);
  const Tensor scores = scale(matmul(q, transpose(k)), 1.0 / std::sqrt(static_cast<double>(p.head_dim)));
  const Tensor weights = softmax(scores, -1);
  if (probs != nullptr) *probs = weights;
  return linear(merge_heads(matmul(weights, v)), p.wo, p.bo);
}

Tensor feed_forward(const FeedForwardParams& p, const Tensor& x, Nonlinearity nl) {
  return linear(activate(linear(x, p.w1, p.b1), nl), p.w2, p.b2);
}

}  // namespace hmmt
