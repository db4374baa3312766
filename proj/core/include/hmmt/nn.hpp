#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "hmmt/random.hpp"
#include "hmmt/tensor.hpp"

namespace hmmt {

// Named tensors in insertion order. Trainable entries are parameters; the
// rest are buffers (batch-norm running statistics) that are persisted but
// never touched by an optimizer.
class ParamStore {
 public:
  struct Entry {
    std::string name;
    Tensor tensor;
    bool trainable = true;
  };

  // The reference is invalidated by the next add(); Tensor handles share storage, so copy it.
  Tensor& add(std::string name, Tensor value, bool trainable = true);
  bool contains(std::string_view name) const;
  Tensor& get(std::string_view name);
  const Tensor& get(std::string_view name) const;
  const Entry& entry(std::string_view name) const;

  std::vector<Entry>& entries() { return entries_; }
  const std::vector<Entry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  // Sum of trainable scalar counts.
  std::size_t trainable_scalars() const;
  void zero_grad();

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Seeded initializers. The engine is passed by reference so that parameter
// creation order fixes the stream.
Tensor init_normal(const Shape& shape, double stddev, Rng& rng);
// N(0, 1/fan_in) for a [fan_in, fan_out] projection.
Tensor init_projection(std::size_t fan_in, std::size_t fan_out, Rng& rng);

struct LayerNormParams {
  Tensor gain;
  Tensor bias;
};

struct AttentionParams {
  Tensor wq;  // [d_query, heads*head_dim]
  Tensor wk;  // [d_context, heads*head_dim]
  Tensor wv;  // [d_context, heads*head_dim]
  Tensor wo;  // [heads*head_dim, d_query]
  Tensor bo;  // [d_query]
  std::size_t heads = 1;
  std::size_t head_dim = 1;
};

struct FeedForwardParams {
  Tensor w1, b1, w2, b2;
};

LayerNormParams make_layer_norm(ParamStore& store, const std::string& prefix, std::size_t width);
AttentionParams make_attention(ParamStore& store, const std::string& prefix, std::size_t query_dim,
                               std::size_t context_dim, std::size_t heads, std::size_t head_dim,
                               Rng& rng);
FeedForwardParams make_feed_forward(ParamStore& store, const std::string& prefix, std::size_t width,
                                    std::size_t hidden, Rng& rng);

Tensor apply(const LayerNormParams& ln, const Tensor& x);

// Multi-head scaled dot-product attention: softmax(Q K^T / sqrt(head_dim)) V
// followed by the output projection. query [n, Lq, dq], context [n, Lk, dk].
// When `probs` is non-null it receives the attention weights [n, heads, Lq, Lk].
Tensor attention(const Tensor& query, const Tensor& context, const AttentionParams& p, Tensor* probs = nullptr);

Tensor feed_forward(const FeedForwardParams& p, const Tensor& x, Nonlinearity nl);

// x [..., in] times w [in, out] plus b [out].
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

}  // namespace hmmt
