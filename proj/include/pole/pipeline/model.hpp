#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include "pole/adapters.hpp"
#include "pole/cam_core.hpp"
#include "pole/class_selector.hpp"
#include "pole/clip_bridge.hpp"
#include "pole/objective.hpp"
#include "pole/pipeline/config.hpp"
#include "pole/prompt_space.hpp"

namespace pole {

/// Trainable state: backbone, CAM head and the two adapters.
struct Model {
  std::unique_ptr<Backbone> backbone;
  ClassifierHead head;
  AdapterPair adapters;

  Model() = default;
  Model(const Model& o) : backbone(o.backbone ? o.backbone->clone() : nullptr), head(o.head), adapters(o.adapters) {}
  Model& operator=(const Model& o) {
    if (this != &o) {
      backbone = o.backbone ? o.backbone->clone() : nullptr;
      head = o.head;
      adapters = o.adapters;
    }
    return *this;
  }
  Model(Model&&) = default;
  Model& operator=(Model&&) = default;

  /// Views of every parameter vector in a fixed order: backbone tensors, head,
  /// visual w1/w2/gate, text w1/w2/gate.
  std::vector<std::vector<double>*> parameters() {
    auto out = backbone->parameters();
    out.push_back(&head.weights);
    for (auto* a : {&adapters.visual, &adapters.text}) {
      out.push_back(&a->w1);
      out.push_back(&a->w2);
      out.push_back(&a->gate);
    }
    return out;
  }

  std::vector<const std::vector<double>*> parameters() const {
    auto out = std::as_const(*backbone).parameters();
    out.push_back(&head.weights);
    for (const auto* a : {&adapters.visual, &adapters.text}) {
      out.push_back(&a->w1);
      out.push_back(&a->w2);
      out.push_back(&a->gate);
    }
    return out;
  }

  std::size_t num_backbone_tensors() const { return backbone->parameters().size(); }
};

inline Model init_model(const RunConfig& cfg, std::size_t num_classes, std::size_t embed_dim) {
  const auto seed = static_cast<std::uint64_t>(cfg.seed);
  Model m;
  m.backbone = make_backbone(cfg.backbone, 3, static_cast<std::size_t>(cfg.backbone_channels),
                             static_cast<std::size_t>(cfg.backbone_stride), mix_seed(seed, 1));
  m.head = ClassifierHead::init(m.backbone->out_channels(), num_classes, mix_seed(seed, 2));
  m.adapters = AdapterPair::make(embed_dim, static_cast<std::size_t>(cfg.adapter_hidden), cfg.gate_mode(),
                                 cfg.adapter_gate_value, mix_seed(seed, 3));
  m.adapters.clamp_gate = cfg.gate_clamp;
  return m;
}

struct CamForward {
  FeatureMap features;
  BackboneTape tape;
  std::vector<double> logits;
  ActivationMaps maps;  // normalized
};

inline CamForward cam_forward(const Model& m, const ImageSample& s) {
  CamForward f;
  f.features = m.backbone->forward(s.pixels, &f.tape);
  f.logits = classification_logits(f.features, m.head);
  f.maps = sigmoid_normalize(compute_raw_cam(f.features, m.head));
  return f;
}

/// Normalized CAMs for evaluation; no tape is kept.
inline ActivationMaps predict_cams(const Model& m, const ImageSample& s) {
  return sigmoid_normalize(compute_raw_cam(m.backbone->forward(s.pixels), m.head));
}

// ---------------------------------------------------------------------------
// One optimisation step's forward and backward pass

/// Latest class-token choice per (image, class); reused once selection is frozen.
using SelectionMemory = std::map<std::pair<std::string, std::size_t>, SelectionRecord>;

struct StepResult {
  double cls_loss = 0.0;
  double cont_loss = 0.0;
  double total = 0.0;
  std::vector<std::vector<double>> grads;  // parallel to Model::parameters()
  std::vector<SelectionRecord> selections;
};

struct StepContext {
  const EncoderPair* encoders = nullptr;
  const PoolMap* pools = nullptr;  // already truncated to the configured pool size
  PromptTemplate tmpl;
  LossWeights weights;
  double lambda_cont = 1.0;
  bool select_after_adapter = false;
};

/// Selection records for a batch. Pairs found in `frozen` are reused; the rest
/// are scored against the current CAMs.
inline std::vector<SelectionRecord> batch_selections(const Model& m, const std::vector<ImageSample>& batch,
                                                     const std::vector<ActivationMaps>& maps, const StepContext& ctx,
                                                     const SelectionMemory* frozen) {
  std::vector<SelectionRecord> out;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto& s = batch[i];
    for (std::size_t k : s.present_classes()) {
      if (frozen) {
        const auto it = frozen->find({s.id, k});
        if (it != frozen->end()) {
          out.push_back(it->second);
          continue;
        }
      }
      ImageSample one = s;
      one.label.assign(s.label.size(), 0);
      one.label[k] = 1;
      auto rec = select_for_batch({one}, {maps[i]}, *ctx.pools, ctx.tmpl, *ctx.encoders,
                                  ctx.select_after_adapter ? &m.adapters : nullptr);
      out.push_back(std::move(rec.front()));
    }
  }
  return out;
}

/// Loss = mean_b [ multi-label classification loss ] + lambda * mean_b [ contrastive loss ],
/// with gradients for every model parameter.
inline StepResult compute_step(const Model& m, const std::vector<ImageSample>& batch, const StepContext& ctx,
                               const SelectionMemory* frozen = nullptr) {
  if (batch.empty()) throw ArgumentError("empty batch");
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  StepResult res;
  const auto params = m.parameters();
  res.grads.reserve(params.size());
  for (auto* p : params) res.grads.emplace_back(p->size(), 0.0);

  std::vector<CamForward> fw;
  fw.reserve(batch.size());
  std::vector<ActivationMaps> maps;
  for (const auto& s : batch) {
    fw.push_back(cam_forward(m, s));
    maps.push_back(fw.back().maps);
    res.cls_loss += multilabel_soft_margin_loss<double>(fw.back().logits, s.label) * inv_b;
  }

  res.selections = batch_selections(m, batch, maps, ctx, frozen);
  ObjectiveResult obj;
  const bool use_cont = ctx.lambda_cont > 0.0;
  if (use_cont) {
    obj = batch_objective(batch, maps, index_selections(res.selections), ctx.tmpl, m.adapters, *ctx.encoders,
                          ctx.weights);
    res.cont_loss = obj.loss;
  }
  res.total = res.cls_loss + ctx.lambda_cont * res.cont_loss;

  const std::size_t nb = m.num_backbone_tensors();
  auto& g_head = res.grads[nb];
  const auto& head = m.head;
  const std::size_t num_c = head.channels, num_k = head.classes;
  std::vector<std::vector<double>> g_backbone(res.grads.begin(), res.grads.begin() + static_cast<std::ptrdiff_t>(nb));

  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto& f = fw[i];
    const Image& z = f.features.values;
    const std::size_t n = z.plane_size();
    const auto dlogit = multilabel_soft_margin_grad<double>(f.logits, batch[i].label);

    // dRaw(k,p): contrastive path through the sigmoid, plus the GAP path of
    // the classification logits (logit_k = mean_p Raw(k,p)).
    Image d_raw(num_k, z.height(), z.width());
    for (std::size_t k = 0; k < num_k; ++k) {
      auto dst = d_raw.plane(k);
      const double from_cls = dlogit[k] * inv_b / static_cast<double>(n);
      const auto pk = f.maps.values.plane(k);
      for (std::size_t p = 0; p < n; ++p) {
        double g = from_cls;
        if (use_cont) g += ctx.lambda_cont * obj.grad_maps[i].plane(k)[p] * pk[p] * (1.0 - pk[p]);
        dst[p] = g;
      }
    }
    Image d_z(num_c, z.height(), z.width());
    for (std::size_t c = 0; c < num_c; ++c) {
      const auto zc = z.plane(c);
      auto dzc = d_z.plane(c);
      for (std::size_t k = 0; k < num_k; ++k) {
        const auto dk = d_raw.plane(k);
        const double w = head(c, k);
        double acc = 0.0;
        for (std::size_t p = 0; p < n; ++p) {
          acc += dk[p] * zc[p];
          dzc[p] += w * dk[p];
        }
        g_head[c * num_k + k] += acc;
      }
    }
    m.backbone->backward(batch[i].pixels, f.tape, d_z, g_backbone);
  }
  for (std::size_t t = 0; t < nb; ++t) res.grads[t] = std::move(g_backbone[t]);

  if (use_cont && m.adapters.active()) {
    const AdapterGrads* src[2] = {&obj.grad_visual, &obj.grad_text};
    for (int a = 0; a < 2; ++a) {
      const std::vector<double>* parts[3] = {&src[a]->w1, &src[a]->w2, &src[a]->gate};
      for (int j = 0; j < 3; ++j) {
        auto& dst = res.grads[nb + 1 + static_cast<std::size_t>(a * 3 + j)];
        for (std::size_t q = 0; q < dst.size(); ++q) dst[q] = ctx.lambda_cont * (*parts[j])[q];
      }
    }
  }
  return res;
}

// ---------------------------------------------------------------------------
// SGD with momentum and L2 weight decay (PyTorch semantics)

struct SgdState {
  std::vector<std::vector<double>> momentum;  // parallel to Model::parameters()
};

inline SgdState init_sgd(Model& m) {
  SgdState s;
  for (auto* p : m.parameters()) s.momentum.emplace_back(p->size(), 0.0);
  return s;
}

/// Cosine annealing from lr0 to 0 over `total_steps`.
inline double scheduled_lr(const RunConfig& cfg, std::int64_t step, std::int64_t total_steps) {
  if (cfg.schedule == "constant" || total_steps <= 0) return cfg.lr;
  const double t = static_cast<double>(step) / static_cast<double>(total_steps);
  return cfg.lr * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
}

/// buf = momentum * buf + (g + wd * p);  p -= lr * buf.
/// Adapter tensors use lr * adapter_lr_mult; gates only move in learnable
/// mode and adapters not at all when disabled.
inline void sgd_step(Model& m, SgdState& state, const std::vector<std::vector<double>>& grads, const RunConfig& cfg,
                     double lr) {
  auto params = m.parameters();
  const std::size_t first_adapter = m.num_backbone_tensors() + 1;
  const GateMode mode = m.adapters.mode;
  for (std::size_t t = 0; t < params.size(); ++t) {
    double rate = lr;
    if (t >= first_adapter) {
      if (mode == GateMode::none) continue;
      const bool is_gate = (t - first_adapter) % 3 == 2;
      if (is_gate && mode != GateMode::learnable) continue;
      rate *= cfg.adapter_lr_mult;
    }
    auto& p = *params[t];
    auto& buf = state.momentum[t];
    const auto& g = grads[t];
    for (std::size_t q = 0; q < p.size(); ++q) {
      buf[q] = cfg.momentum * buf[q] + (g[q] + cfg.weight_decay * p[q]);
      p[q] -= rate * buf[q];
    }
  }
  if (m.adapters.clamp_gate) {
    for (auto* a : {&m.adapters.visual, &m.adapters.text})
      for (auto& v : a->gate) v = std::clamp(v, 0.0, 1.0);
  }
}

}  // namespace pole
