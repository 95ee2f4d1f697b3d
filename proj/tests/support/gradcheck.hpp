#pragma once

// Central finite-difference checks shared by the unit tests and the acceptance
// binary. Each case is a small model around one layer kind; the loss is
// sum(output * R) for a fixed random R, so the upstream gradient is R itself.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "dnnshield/kernels.hpp"
#include "dnnshield/model.hpp"
#include "dnnshield/rng.hpp"

namespace dnnshield::testing {

inline Tensor random_tensor(const Shape& shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(shape);
  for (auto& v : t.storage()) v = rng.uniform(lo, hi);
  return t;
}

// Keeps values away from 0 so a step of h never crosses the ReLU kink.
inline Tensor random_away_from_zero(const Shape& shape, Rng& rng, double gap = 0.01) {
  Tensor t(shape);
  for (auto& v : t.storage()) {
    double x = rng.uniform(-1.0, 1.0);
    v = x < 0 ? x - gap : x + gap;
  }
  return t;
}

inline double dot(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// ||a - n|| / max(||a|| + ||n||, 1e-12)
inline double relative_error(std::span<const double> analytic, std::span<const double> numeric) {
  double diff = 0.0, na = 0.0, nn = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    diff += (analytic[i] - numeric[i]) * (analytic[i] - numeric[i]);
    na += analytic[i] * analytic[i];
    nn += numeric[i] * numeric[i];
  }
  return std::sqrt(diff) / std::max(std::sqrt(na) + std::sqrt(nn), 1e-12);
}

inline std::vector<double> numeric_gradient(std::vector<double>& values, const std::function<double()>& loss,
                                            double h) {
  std::vector<double> g(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double keep = values[i];
    values[i] = keep + h;
    const double up = loss();
    values[i] = keep - h;
    const double down = loss();
    values[i] = keep;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

struct GradCase {
  std::string name;
  double max_error = 0.0;
};

// Checks every weight, bias and Hadamard key gradient of `model` on a batch
// of `batch` inputs. Returns the worst normwise relative error.
inline double check_model_gradients(ModelGraph& model, std::size_t batch, Rng& rng, double h = 1e-5) {
  Shape in = model.input_shape();
  in.insert(in.begin(), batch);
  const Tensor x = random_away_from_zero(in, rng);
  Tape tape;
  const Tensor out = model.forward(x, tape);
  const Tensor r = random_tensor(out.shape(), rng);

  Gradients grads = model.make_gradients(true);
  grads.zero();
  model.backward(tape, r, grads, BackwardOptions{true, true});

  auto loss = [&] { return dot(model.forward(x), r); };
  double worst = 0.0;
  for (std::size_t i = 0; i < model.num_layers(); ++i) {
    auto& l = model.layer(i);
    if (l.weight.empty()) continue;
    const auto nw = numeric_gradient(l.weight.storage(), loss, h);
    worst = std::max(worst, relative_error(grads.weight[i].values(), nw));
    const auto nb = numeric_gradient(l.bias.storage(), loss, h);
    worst = std::max(worst, relative_error(grads.bias[i].values(), nb));
  }
  for (auto& e : model.keys().entries()) {
    if (e.kind() != ProtectionKind::Hadamard) continue;
    const auto nk = numeric_gradient(e.hadamard().values.storage(), loss, h);
    worst = std::max(worst, relative_error(grads.keys.at(e.id).values(), nk));
  }
  return worst;
}

inline ModelGraph make_case_model(const std::string& kind, std::uint64_t seed) {
  using D = LayerDescriptor;
  Rng rng(seed);
  ModelGraph m;
  if (kind == "linear") {
    m = ModelGraph(kind, {5}, {D::linear(5, 4), D::linear(4, 3)});
  } else if (kind == "conv2d") {
    m = ModelGraph(kind, {2, 7, 7}, {D::conv2d(2, 3, 3, 0, 1, 1), D::conv2d(3, 2, 3, 0, 2, 0)});
  } else if (kind == "relu") {
    m = ModelGraph(kind, {5}, {D::linear(5, 6), D::relu(), D::linear(6, 3)});
  } else if (kind == "maxpool2x2") {
    m = ModelGraph(kind, {1, 6, 6}, {D::conv2d(1, 2, 3), D::maxpool2x2(), D::flatten(), D::linear(8, 3)});
  } else if (kind == "flatten") {
    m = ModelGraph(kind, {2, 4, 4}, {D::conv2d(2, 2, 3), D::flatten(), D::linear(8, 3)});
  } else if (kind == "hadamard_dense") {
    m = ModelGraph(kind, {5}, {D::linear(5, 4), D::protection(ProtectionKind::Hadamard, "P1"), D::linear(4, 3)});
    m.keys().add({"P1", generate_hadamard_key({4}, -1, 1, rng.next_u64()), {}});
  } else if (kind == "hadamard_conv") {
    m = ModelGraph(kind, {2, 5, 5},
                   {D::conv2d(2, 3, 3), D::protection(ProtectionKind::Hadamard, "P1"), D::flatten(), D::linear(27, 3)});
    m.keys().add({"P1", generate_hadamard_key({3, 3, 3}, -1, 1, rng.next_u64()), {}});
  } else if (kind == "permutation") {
    m = ModelGraph(kind, {2, 6, 6},
                   {D::conv2d(2, 3, 3), D::protection(ProtectionKind::Permutation, "P1"), D::flatten(),
                    D::linear(48, 3)});
    m.keys().add({"P1", generate_permutation_key(3, 16, rng.next_u64()), {0, 1, 15}});
  } else {
    throw std::invalid_argument("unknown gradient case " + kind);
  }
  m.initialize(rng.next_u64());
  m.validate();
  return m;
}

inline const std::vector<std::string>& gradient_case_names() {
  static const std::vector<std::string> names = {"linear",  "conv2d",        "relu",          "maxpool2x2",
                                                 "flatten", "hadamard_dense", "hadamard_conv", "permutation"};
  return names;
}

// Softmax cross-entropy checked directly on the logits.
inline double check_softmax_ce(std::uint64_t seed, double h = 1e-5) {
  Rng rng(seed);
  Tensor logits = random_tensor({4, 5}, rng, -2.0, 2.0);
  std::vector<int> labels(4);
  for (auto& l : labels) l = static_cast<int>(rng.uniform_int(0, 4));
  const auto res = kernels::softmax_cross_entropy(logits, labels);
  auto loss = [&] { return kernels::softmax_cross_entropy(logits, labels).loss; };
  const auto num = numeric_gradient(logits.storage(), loss, h);
  return relative_error(res.dlogits.values(), num);
}

// Worst error per case over `seeds` seeds starting at first_seed.
inline std::vector<GradCase> run_gradient_suite(std::size_t seeds, std::uint64_t first_seed = 1) {
  std::vector<GradCase> out;
  for (const auto& name : gradient_case_names()) {
    GradCase c{name, 0.0};
    for (std::size_t s = 0; s < seeds; ++s) {
      ModelGraph m = make_case_model(name, first_seed + s);
      Rng rng(first_seed + s + 1000);
      c.max_error = std::max(c.max_error, check_model_gradients(m, 3, rng));
    }
    out.push_back(c);
  }
  GradCase ce{"softmax_cross_entropy", 0.0};
  for (std::size_t s = 0; s < seeds; ++s) ce.max_error = std::max(ce.max_error, check_softmax_ce(first_seed + s));
  out.push_back(ce);
  return out;
}

}  // namespace dnnshield::testing
