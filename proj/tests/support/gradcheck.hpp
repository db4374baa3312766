#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "hmmt/random.hpp"
#include "hmmt/tensor.hpp"

namespace hmmt::testing {

struct GradcheckResult {
  double max_rel_error = 0.0;
  std::string worst;
};

// |a - n| / max(|a|, |n|, floor)
inline double rel_error(double a, double n, double floor = 1e-6) {
  return std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor});
}

inline Tensor random_tensor(const Shape& shape, Rng& rng, double scale = 1.0, bool requires_grad = true) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = scale * rng.normal();
  return Tensor::from(shape, std::move(v), requires_grad);
}

// Compares autodiff gradients of the scalar `f(inputs)` against central
// differences for every element of every input.
inline GradcheckResult gradcheck(const std::function<Tensor(const std::vector<Tensor>&)>& f,
                                 std::vector<Tensor> inputs, double h = 1e-5) {
  for (auto& x : inputs) x.zero_grad();
  f(inputs).backward();
  std::vector<std::vector<double>> analytic;
  for (auto& x : inputs) {
    analytic.push_back(x.has_grad() ? std::vector<double>(x.grad().begin(), x.grad().end())
                                    : std::vector<double>(x.numel(), 0.0));
  }
  GradcheckResult r;
  NoGradGuard guard;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    auto d = inputs[i].mutable_data();
    for (std::size_t k = 0; k < d.size(); ++k) {
      const double orig = d[k];
      d[k] = orig + h;
      const double up = f(inputs).item();
      d[k] = orig - h;
      const double down = f(inputs).item();
      d[k] = orig;
      const double e = rel_error(analytic[i][k], (up - down) / (2 * h));
      if (e > r.max_rel_error) {
        r.max_rel_error = e;
        r.worst = "input " + std::to_string(i) + " element " + std::to_string(k);
      }
    }
  }
  return r;
}

// Scalar probe of an arbitrary-shape output: sum(out * w) with fixed weights.
inline Tensor probe(const Tensor& out, std::uint64_t seed = 99) {
  Rng rng(seed);
  return sum(mul(out, random_tensor(out.shape(), rng, 1.0, false)));
}

}  // namespace hmmt::testing
