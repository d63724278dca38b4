#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "pole/clip_bridge.hpp"
#include "pole/errors.hpp"
#include "pole/random.hpp"

namespace pole {

/// Gated residual MLP: out = gate * MLP(v) + (1 - gate) * v with
/// MLP(v) = ReLU(v W1) W2 and a per-dimension gate.
struct AdapterParams {
  std::size_t dim = 0;
  std::size_t hidden = 0;
  std::vector<double> w1;    // dim x hidden
  std::vector<double> w2;    // hidden x dim
  std::vector<double> gate;  // dim
  Modality modality = Modality::visual;

  friend bool operator==(const AdapterParams&, const AdapterParams&) = default;
};

struct AdapterGrads {
  std::vector<double> w1;
  std::vector<double> w2;
  std::vector<double> gate;

  static AdapterGrads zeros_like(const AdapterParams& p) {
    return {std::vector<double>(p.w1.size()), std::vector<double>(p.w2.size()), std::vector<double>(p.gate.size())};
  }
};

/// Values kept from the forward pass for adapter_backward.
struct AdapterTape {
  std::vector<double> input;
  std::vector<double> hidden_pre;  // v W1
  std::vector<double> branch;      // MLP(v)
};

/// Weights drawn uniformly in +-1/sqrt(fan_in) from mt19937_64(seed), W1 then
/// W2, row-major. Gates start at zero so a fresh adapter is the identity.
inline AdapterParams init_adapter(std::int64_t dim, std::int64_t hidden, Modality modality, std::uint64_t seed) {
  if (dim <= 0 || hidden <= 0) throw ArgumentError("adapter dimensions must be positive");
  AdapterParams p;
  p.dim = static_cast<std::size_t>(dim);
  p.hidden = static_cast<std::size_t>(hidden);
  p.modality = modality;
  p.w1.resize(p.dim * p.hidden);
  p.w2.resize(p.hidden * p.dim);
  p.gate.assign(p.dim, 0.0);
  Rng rng(seed);
  const double b1 = 1.0 / std::sqrt(static_cast<double>(p.dim));
  const double b2 = 1.0 / std::sqrt(static_cast<double>(p.hidden));
  for (auto& w : p.w1) w = uniform(rng, -b1, b1);
  for (auto& w : p.w2) w = uniform(rng, -b2, b2);
  return p;
}

inline std::vector<double> adapter_forward(std::span<const double> v, const AdapterParams& p,
                                           AdapterTape* tape = nullptr) {
  if (v.size() != p.dim)
    throw ArgumentError("adapter expects dimension " + std::to_string(p.dim) + ", got " + std::to_string(v.size()));
  std::vector<double> pre(p.hidden, 0.0);
  for (std::size_t i = 0; i < p.dim; ++i) {
    const double vi = v[i];
    const double* row = p.w1.data() + i * p.hidden;
    for (std::size_t j = 0; j < p.hidden; ++j) pre[j] += vi * row[j];
  }
  std::vector<double> branch(p.dim, 0.0);
  for (std::size_t j = 0; j < p.hidden; ++j) {
    const double r = std::max(0.0, pre[j]);
    if (r == 0.0) continue;
    const double* row = p.w2.data() + j * p.dim;
    for (std::size_t d = 0; d < p.dim; ++d) branch[d] += r * row[d];
  }
  std::vector<double> out(p.dim);
  for (std::size_t d = 0; d < p.dim; ++d) out[d] = p.gate[d] * branch[d] + (1.0 - p.gate[d]) * v[d];
  if (tape) {
    tape->input.assign(v.begin(), v.end());
    tape->hidden_pre = std::move(pre);
    tape->branch = std::move(branch);
  }
  return out;
}

inline EmbeddingVector adapter_forward(const EmbeddingVector& v, const AdapterParams& p) {
  if (v.modality != p.modality) throw ArgumentError("adapter modality does not match embedding modality");
  return {adapter_forward(v.values, p), v.modality};
}

/// Accumulates parameter gradients into `grads` and returns dL/dv.
inline std::vector<double> adapter_backward(const AdapterTape& tape, std::span<const double> grad_out,
                                            const AdapterParams& p, AdapterGrads& grads) {
  std::vector<double> grad_in(p.dim);
  std::vector<double> grad_branch(p.dim);
  for (std::size_t d = 0; d < p.dim; ++d) {
    grads.gate[d] += grad_out[d] * (tape.branch[d] - tape.input[d]);
    grad_in[d] = grad_out[d] * (1.0 - p.gate[d]);
    grad_branch[d] = grad_out[d] * p.gate[d];
  }
  std::vector<double> grad_pre(p.hidden, 0.0);
  for (std::size_t j = 0; j < p.hidden; ++j) {
    if (tape.hidden_pre[j] <= 0.0) continue;
    const double r = tape.hidden_pre[j];
    const double* row = p.w2.data() + j * p.dim;
    double* grow = grads.w2.data() + j * p.dim;
    double acc = 0.0;
    for (std::size_t d = 0; d < p.dim; ++d) {
      grow[d] += r * grad_branch[d];
      acc += row[d] * grad_branch[d];
    }
    grad_pre[j] = acc;
  }
  for (std::size_t i = 0; i < p.dim; ++i) {
    const double* row = p.w1.data() + i * p.hidden;
    double* grow = grads.w1.data() + i * p.hidden;
    double acc = 0.0;
    for (std::size_t j = 0; j < p.hidden; ++j) {
      grow[j] += tape.input[i] * grad_pre[j];
      acc += row[j] * grad_pre[j];
    }
    grad_in[i] += acc;
  }
  return grad_in;
}

enum class GateMode { learnable, fixed, none };

inline GateMode parse_gate_mode(const std::string& s) {
  if (s == "learnable") return GateMode::learnable;
  if (s == "fixed") return GateMode::fixed;
  if (s == "none") return GateMode::none;
  throw ConfigError("unknown adapter gate mode '" + s + "' (expected learnable, fixed or none)");
}

inline std::string to_string(GateMode m) {
  switch (m) {
    case GateMode::learnable: return "learnable";
    case GateMode::fixed: return "fixed";
    case GateMode::none: return "none";
  }
  return "none";
}

/// One visual and one text adapter shared across all classes.
struct AdapterPair {
  AdapterParams visual;
  AdapterParams text;
  GateMode mode = GateMode::learnable;
  bool clamp_gate = false;

  bool active() const { return mode != GateMode::none; }

  static AdapterPair make(std::size_t dim, std::size_t hidden, GateMode mode, double fixed_gate, std::uint64_t seed) {
    AdapterPair pair;
    pair.mode = mode;
    const auto d = static_cast<std::int64_t>(dim);
    const auto h = static_cast<std::int64_t>(hidden ? hidden : std::max<std::size_t>(1, dim / 4));
    pair.visual = init_adapter(d, h, Modality::visual, mix_seed(seed, 1));
    pair.text = init_adapter(d, h, Modality::text, mix_seed(seed, 2));
    if (mode == GateMode::fixed) {
      std::fill(pair.visual.gate.begin(), pair.visual.gate.end(), fixed_gate);
      std::fill(pair.text.gate.begin(), pair.text.gate.end(), fixed_gate);
    }
    return pair;
  }

  /// Applies the matching adapter, or passes through when adapters are off.
  std::vector<double> refine(std::span<const double> v, Modality m, AdapterTape* tape = nullptr) const {
    if (!active()) return {v.begin(), v.end()};
    return adapter_forward(v, m == Modality::visual ? visual : text, tape);
  }
};

}  // namespace pole
