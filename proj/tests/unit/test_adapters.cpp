#include <gtest/gtest.h>

#include <limits>

#include "support/generators.hpp"

namespace pole {
namespace {

using testing::Gen;

AdapterParams identity_weights() {
  AdapterParams p;
  p.dim = 2;
  p.hidden = 2;
  p.w1 = {1, 0, 0, 1};
  p.w2 = {1, 0, 0, 1};
  p.gate = {0.5, 0.5};
  return p;
}

std::vector<double> mlp_branch(std::span<const double> v, const AdapterParams& p) {
  std::vector<double> h(p.hidden, 0.0), out(p.dim, 0.0);
  for (std::size_t j = 0; j < p.hidden; ++j) {
    for (std::size_t i = 0; i < p.dim; ++i) h[j] += v[i] * p.w1[i * p.hidden + j];
    h[j] = std::max(0.0, h[j]);
  }
  for (std::size_t d = 0; d < p.dim; ++d)
    for (std::size_t j = 0; j < p.hidden; ++j) out[d] += h[j] * p.w2[j * p.dim + d];
  return out;
}

TEST(AdapterForward, HandExample) {
  const std::vector<double> v{1.0, -1.0};
  EXPECT_EQ(adapter_forward(v, identity_weights()), (std::vector<double>{1.0, -0.5}));
}

TEST(AdapterForward, ZeroGateIsExactIdentity) {
  Gen g(41);
  for (int t = 0; t < 200; ++t) {
    auto p = init_adapter(16, 4, Modality::visual, t);
    const auto v = g.vec(16, -1e3, 1e3);
    const auto out = adapter_forward(v, p);
    for (std::size_t d = 0; d < 16; ++d) EXPECT_LE(testing::ulp_distance(out[d], v[d]), 1u);
  }
}

TEST(AdapterForward, UnitGateIsBranch) {
  Gen g(42);
  auto p = init_adapter(8, 16, Modality::text, 5);
  std::fill(p.gate.begin(), p.gate.end(), 1.0);
  const auto v = g.vec(8);
  const auto out = adapter_forward(v, p);
  const auto branch = mlp_branch(v, p);
  for (std::size_t d = 0; d < 8; ++d) EXPECT_NEAR(out[d], branch[d], 1e-15);
}

TEST(AdapterForward, Preconditions) {
  const auto p = init_adapter(4, 2, Modality::visual, 0);
  EXPECT_THROW(adapter_forward(std::vector<double>{1.0, 2.0}, p), ArgumentError);
  EXPECT_THROW(adapter_forward(EmbeddingVector{{1, 2, 3, 4}, Modality::text}, p), ArgumentError);
  EXPECT_THROW(init_adapter(0, 2, Modality::visual, 0), ArgumentError);
  EXPECT_THROW(init_adapter(4, -1, Modality::visual, 0), ArgumentError);
}

TEST(InitAdapter, SeededAndStartsAtIdentity) {
  EXPECT_EQ(init_adapter(8, 2, Modality::visual, 9), init_adapter(8, 2, Modality::visual, 9));
  EXPECT_NE(init_adapter(8, 2, Modality::visual, 9).w1, init_adapter(8, 2, Modality::visual, 10).w1);
  const auto p = init_adapter(8, 2, Modality::visual, 9);
  for (double g : p.gate) EXPECT_EQ(g, 0.0);
  const double b1 = 1.0 / std::sqrt(8.0), b2 = 1.0 / std::sqrt(2.0);
  for (double w : p.w1) EXPECT_LE(std::abs(w), b1);
  for (double w : p.w2) EXPECT_LE(std::abs(w), b2);
}

// Scalar probe loss: <out, u> + 0.5 |out|^2, so every output coordinate matters.
double probe_loss(const AdapterParams& p, std::span<const double> v, std::span<const double> u) {
  const auto out = adapter_forward(v, p);
  double acc = 0.0;
  for (std::size_t d = 0; d < out.size(); ++d) acc += out[d] * u[d] + 0.5 * out[d] * out[d];
  return acc;
}

// Smallest |pre-activation| of the hidden layer. Finite differences are only
// meaningful when a 1e-3 step cannot cross a ReLU kink.
double kink_margin(const AdapterParams& p, std::span<const double> v) {
  double margin = std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < p.hidden; ++j) {
    double h = 0.0;
    for (std::size_t i = 0; i < p.dim; ++i) h += v[i] * p.w1[i * p.hidden + j];
    margin = std::min(margin, std::abs(h));
  }
  return margin;
}

TEST(AdapterBackward, MatchesCentralDifferences) {
  Gen g(43);
  int probes = 0;
  for (int t = 0; t < 50; ++t) {
    auto p = init_adapter(8, 16, Modality::visual, 100 + t);
    for (auto& x : p.gate) x = g.real(-0.5, 1.5);
    auto v = g.vec(8);
    while (kink_margin(p, v) < 1e-2) v = g.vec(8);
    const auto u = g.vec(8);
    AdapterTape tape;
    const auto out = adapter_forward(v, p, &tape);
    std::vector<double> grad_out(8);
    for (std::size_t d = 0; d < 8; ++d) grad_out[d] = u[d] + out[d];
    auto grads = AdapterGrads::zeros_like(p);
    const auto grad_v = adapter_backward(tape, grad_out, p, grads);

    std::vector<double>* tensors[3] = {&p.w1, &p.w2, &p.gate};
    const std::vector<double>* analytic[3] = {&grads.w1, &grads.w2, &grads.gate};
    for (int which = 0; which < 3; ++which) {
      const std::size_t i = g.index(tensors[which]->size());
      auto f = [&](const std::vector<double>& x) {
        auto q = p;
        *(which == 0 ? &q.w1 : which == 1 ? &q.w2 : &q.gate) = x;
        return probe_loss(q, v, u);
      };
      EXPECT_LT(testing::rel_err((*analytic[which])[i], testing::central_diff(f, *tensors[which], i)), 1e-4)
          << "tensor " << which << " index " << i;
      ++probes;
    }
    const std::size_t i = g.index(8);
    auto fv = [&](const std::vector<double>& x) { return probe_loss(p, x, u); };
    EXPECT_LT(testing::rel_err(grad_v[i], testing::central_diff(fv, v, i)), 1e-4);
  }
  EXPECT_GE(probes, 150);
}

TEST(AdapterBackward, GateGradientNonzeroAtInit) {
  Gen g(44);
  int nonzero = 0;
  for (int t = 0; t < 20; ++t) {
    auto p = init_adapter(8, 16, Modality::text, t);
    const auto v = g.vec(8), u = g.vec(8);
    const auto fd = testing::central_diff(
        [&](const std::vector<double>& x) {
          auto q = p;
          q.gate = x;
          return probe_loss(q, v, u);
        },
        p.gate, g.index(8));
    if (std::abs(fd) > 1e-8) ++nonzero;
  }
  EXPECT_GE(nonzero, 18);
}

TEST(AdapterBackward, GateIsLearned) {
  // Objective rewarding the MLP branch: |out - MLP(v)|^2 summed over a batch.
  Gen g(45);
  auto p = init_adapter(8, 16, Modality::visual, 77);
  std::vector<std::vector<double>> batch;
  for (int i = 0; i < 16; ++i) batch.push_back(g.vec(8));
  auto mean_abs_gate = [&] {
    double s = 0.0;
    for (double x : p.gate) s += std::abs(x);
    return s / 8.0;
  };
  const double before = mean_abs_gate();
  for (int step = 0; step < 100; ++step) {
    auto grads = AdapterGrads::zeros_like(p);
    for (const auto& v : batch) {
      AdapterTape tape;
      const auto out = adapter_forward(v, p, &tape);
      std::vector<double> grad_out(8);
      for (std::size_t d = 0; d < 8; ++d) grad_out[d] = 2.0 * (out[d] - tape.branch[d]);
      adapter_backward(tape, grad_out, p, grads);
    }
    for (std::size_t d = 0; d < 8; ++d) p.gate[d] -= 0.01 * grads.gate[d];
  }
  EXPECT_GT(mean_abs_gate(), before);
  EXPECT_GT(mean_abs_gate(), 0.1);
}

TEST(AdapterPair, Modes) {
  Gen g(46);
  const auto v = g.vec(16);
  const auto none = AdapterPair::make(16, 0, GateMode::none, 0.2, 1);
  EXPECT_FALSE(none.active());
  EXPECT_EQ(none.refine(v, Modality::visual), v);
  const auto fixed = AdapterPair::make(16, 0, GateMode::fixed, 0.2, 1);
  EXPECT_EQ(fixed.visual.hidden, 4u);
  for (double x : fixed.text.gate) EXPECT_EQ(x, 0.2);
  const auto learn = AdapterPair::make(16, 0, GateMode::learnable, 0.2, 1);
  for (double x : learn.visual.gate) EXPECT_EQ(x, 0.0);
  EXPECT_EQ(learn.visual.w1, fixed.visual.w1);
  EXPECT_NE(learn.visual.w1, learn.text.w1);
  EXPECT_EQ(parse_gate_mode("fixed"), GateMode::fixed);
  EXPECT_THROW(parse_gate_mode("sometimes"), ConfigError);
}

}  // namespace
}  // namespace pole
