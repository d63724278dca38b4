#pragma once

#include <cmath>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "pole/adapters.hpp"
#include "pole/cam_core.hpp"
#include "pole/class_selector.hpp"
#include "pole/clip_bridge.hpp"
#include "pole/errors.hpp"
#include "pole/prompt_space.hpp"

namespace pole {

struct LossWeights {
  double alpha = 1.0;
  double beta = 1.0;
  double sim_eps = 1e-6;
  std::optional<double> temperature;

  void validate() const {
    if (!(alpha >= 0.0) || !(beta >= 0.0)) throw ArgumentError("loss weights alpha and beta must be nonnegative");
    if (!(sim_eps > 0.0 && sim_eps < 0.5)) throw ArgumentError("sim_eps must lie in (0, 0.5)");
    if (temperature && !(*temperature > 0.0)) throw ArgumentError("temperature must be positive");
  }
};

/// Maps a cosine similarity in [-1,1] into (0,1]: (1+s)/2, or sigmoid(s/T)
/// when a temperature is set. Returns the value and its derivative.
inline std::pair<double, double> squash_similarity(double s, const LossWeights& w) {
  if (w.temperature) {
    const double q = sigmoid(s / *w.temperature);
    return {q, q * (1.0 - q) / *w.temperature};
  }
  return {(1.0 + s) / 2.0, 0.5};
}

// The object term only needs a floor (log q) and the background term only a
// ceiling (log(1-q)), so each side is clamped on the side that can diverge.
inline std::pair<double, double> squash_object(double s, const LossWeights& w) {
  auto [q, dq] = squash_similarity(s, w);
  if (q < w.sim_eps) return {w.sim_eps, 0.0};
  return {q, dq};
}

inline std::pair<double, double> squash_background(double s, const LossWeights& w) {
  auto [q, dq] = squash_similarity(s, w);
  if (q > 1.0 - w.sim_eps) return {1.0 - w.sim_eps, 0.0};
  return {q, dq};
}

namespace detail {

inline void check_contrastive_args(std::size_t n_oo, std::size_t n_bo, std::span<const int> y) {
  if (n_oo != y.size() || n_bo != y.size())
    throw ArgumentError("similarity vectors and label must have the same length");
  check_binary_label(y);
  if (std::none_of(y.begin(), y.end(), [](int v) { return v != 0; }))
    throw ArgumentError("contrastive loss needs at least one present class");
}

}  // namespace detail

/// Object/background contrastive loss on already-squashed similarities q in
/// (0,1]: -alpha * sum_k y_k log q_oo,k - beta * sum_k y_k log(1 - q_bo,k).
inline double contrastive_loss_squashed(std::span<const double> q_oo, std::span<const double> q_bo,
                                        std::span<const int> y, const LossWeights& w) {
  detail::check_contrastive_args(q_oo.size(), q_bo.size(), y);
  double obj = 0.0, bg = 0.0;
  for (std::size_t k = 0; k < y.size(); ++k) {
    if (!y[k]) continue;
    obj += std::log(q_oo[k]);
    bg += std::log(1.0 - q_bo[k]);
  }
  return -w.alpha * obj - w.beta * bg;
}

inline void check_similarity_range(std::span<const double> s, std::span<const int> y) {
  for (std::size_t k = 0; k < s.size(); ++k)
    if (y[k] && !(s[k] >= -1.0 && s[k] <= 1.0))
      throw ArgumentError("similarity " + std::to_string(s[k]) + " outside [-1, 1]");
}

/// Contrastive loss on raw cosine similarities; only classes with y_k = 1 count.
inline double contrastive_loss(std::span<const double> s_oo, std::span<const double> s_bo, std::span<const int> y,
                               const LossWeights& w) {
  detail::check_contrastive_args(s_oo.size(), s_bo.size(), y);
  check_similarity_range(s_oo, y);
  check_similarity_range(s_bo, y);
  std::vector<double> q_oo(y.size(), 1.0), q_bo(y.size(), 0.0);
  for (std::size_t k = 0; k < y.size(); ++k) {
    if (!y[k]) continue;
    q_oo[k] = squash_object(s_oo[k], w).first;
    q_bo[k] = squash_background(s_bo[k], w).first;
  }
  return contrastive_loss_squashed(q_oo, q_bo, y, w);
}

struct ContrastiveGrad {
  std::vector<double> d_oo;
  std::vector<double> d_bo;
};

inline ContrastiveGrad contrastive_loss_grad(std::span<const double> s_oo, std::span<const double> s_bo,
                                             std::span<const int> y, const LossWeights& w) {
  detail::check_contrastive_args(s_oo.size(), s_bo.size(), y);
  ContrastiveGrad g{std::vector<double>(y.size(), 0.0), std::vector<double>(y.size(), 0.0)};
  for (std::size_t k = 0; k < y.size(); ++k) {
    if (!y[k]) continue;
    const auto [qo, dqo] = squash_object(s_oo[k], w);
    const auto [qb, dqb] = squash_background(s_bo[k], w);
    g.d_oo[k] = -w.alpha * dqo / qo;
    g.d_bo[k] = w.beta * dqb / (1.0 - qb);
  }
  return g;
}

// ---------------------------------------------------------------------------
// Batch objective

/// Contrastive term over a batch plus the gradient taps the training loop
/// needs: dL/dP for every normalized map and dL/d(adapter params).
struct ObjectiveResult {
  double loss = 0.0;  // mean over the batch
  std::vector<double> per_sample;
  std::vector<std::vector<double>> s_oo;  // per sample, length K, 0 for absent classes
  std::vector<std::vector<double>> s_bo;
  std::vector<Image> grad_maps;  // same shape as the input maps, already divided by B
  AdapterGrads grad_visual;
  AdapterGrads grad_text;
};

using SelectionIndex = std::map<std::pair<std::string, std::size_t>, SelectionRecord>;

inline SelectionIndex index_selections(const std::vector<SelectionRecord>& records) {
  SelectionIndex idx;
  for (const auto& r : records) idx[{r.image_id, r.class_index}] = r;
  return idx;
}

inline ObjectiveResult batch_objective(const std::vector<ImageSample>& samples, const std::vector<ActivationMaps>& maps,
                                       const SelectionIndex& selections, const PromptTemplate& tmpl,
                                       const AdapterPair& adapters, const EncoderPair& enc, const LossWeights& w) {
  w.validate();
  if (samples.empty()) throw ArgumentError("empty batch");
  if (maps.size() != samples.size()) throw PipelineError("batch objective: maps/sample count mismatch");
  const double inv_b = 1.0 / static_cast<double>(samples.size());
  ObjectiveResult res;
  res.grad_visual = AdapterGrads::zeros_like(adapters.visual);
  res.grad_text = AdapterGrads::zeros_like(adapters.text);

  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& sample = samples[i];
    const auto& m = maps[i];
    if (!m.normalized) throw ArgumentError("batch objective requires normalized maps");
    const std::size_t num_k = m.num_classes();
    const auto& x = sample.pixels;
    const std::size_t h = x.height(), wd = x.width();

    struct ClassWork {
      std::size_t k;
      std::vector<double> up;
      VisualTape tape_o, tape_b;
      AdapterTape at_o, at_b, at_t;
      std::vector<double> a_o, a_b, a_t;
    };
    std::vector<ClassWork> work;
    std::vector<double> s_oo(num_k, 0.0), s_bo(num_k, 0.0);
    ActivationMaps sized = m;
    sized.image_height = h;
    sized.image_width = wd;

    for (std::size_t k : sample.present_classes()) {
      if (k >= num_k) throw PipelineError("sample '" + sample.id + "' has no map for class " + std::to_string(k));
      const auto sel = selections.find({sample.id, k});
      if (sel == selections.end())
        throw PipelineError("no selection record for image '" + sample.id + "' class " + std::to_string(k));
      ClassWork cw;
      cw.k = k;
      cw.up = upsample_map(sized, k);
      Image fg(x.channels(), h, wd), bg(x.channels(), h, wd);
      for (std::size_t c = 0; c < x.channels(); ++c) {
        const auto src = x.plane(c);
        auto f = fg.plane(c);
        auto b = bg.plane(c);
        for (std::size_t p = 0; p < src.size(); ++p) {
          f[p] = src[p] * cw.up[p];
          b[p] = src[p] * (1.0 - cw.up[p]);
        }
      }
      const auto v_io = visual_forward(fg, enc, &cw.tape_o);
      const auto v_ib = visual_forward(bg, enc, &cw.tape_b);
      const auto t = encode_text(tmpl.render(sel->second.chosen_name), enc);
      cw.a_o = adapters.refine(v_io, Modality::visual, &cw.at_o);
      cw.a_b = adapters.refine(v_ib, Modality::visual, &cw.at_b);
      cw.a_t = adapters.refine(t.values, Modality::text, &cw.at_t);
      s_oo[k] = cosine_similarity<double>(cw.a_o, cw.a_t);
      s_bo[k] = cosine_similarity<double>(cw.a_b, cw.a_t);
      work.push_back(std::move(cw));
    }

    const double loss = contrastive_loss(s_oo, s_bo, sample.label, w);
    const auto g = contrastive_loss_grad(s_oo, s_bo, sample.label, w);
    res.per_sample.push_back(loss);
    res.loss += loss * inv_b;

    Image grad_map(num_k, m.values.height(), m.values.width());
    for (auto& cw : work) {
      const double go = g.d_oo[cw.k] * inv_b;
      const double gb = g.d_bo[cw.k] * inv_b;
      const auto co = cosine_similarity_grad(cw.a_o, cw.a_t);
      const auto cb = cosine_similarity_grad(cw.a_b, cw.a_t);
      std::vector<double> d_ao(co.du.size()), d_ab(cb.du.size()), d_at(co.dv.size());
      for (std::size_t d = 0; d < d_ao.size(); ++d) {
        d_ao[d] = go * co.du[d];
        d_ab[d] = gb * cb.du[d];
        d_at[d] = go * co.dv[d] + gb * cb.dv[d];
      }
      std::vector<double> d_vo = d_ao, d_vb = d_ab;
      if (adapters.active()) {
        d_vo = adapter_backward(cw.at_o, d_ao, adapters.visual, res.grad_visual);
        d_vb = adapter_backward(cw.at_b, d_ab, adapters.visual, res.grad_visual);
        adapter_backward(cw.at_t, d_at, adapters.text, res.grad_text);
      }
      const Image d_fg = visual_backward(cw.tape_o, d_vo, enc);
      const Image d_bg = visual_backward(cw.tape_b, d_vb, enc);
      std::vector<double> d_up(h * wd, 0.0);
      for (std::size_t c = 0; c < x.channels(); ++c) {
        const auto src = x.plane(c);
        const auto gf = d_fg.plane(c);
        const auto gbk = d_bg.plane(c);
        for (std::size_t p = 0; p < d_up.size(); ++p) d_up[p] += src[p] * (gf[p] - gbk[p]);
      }
      auto dst = grad_map.plane(cw.k);
      if (h == m.values.height() && wd == m.values.width()) {
        for (std::size_t p = 0; p < d_up.size(); ++p) dst[p] += d_up[p];
      } else {
        const auto ay = ResampleAxis::make(m.values.height(), h);
        const auto ax = ResampleAxis::make(m.values.width(), wd);
        resample_plane_adjoint(d_up, dst, m.values.width(), ay, ax);
      }
    }
    res.s_oo.push_back(std::move(s_oo));
    res.s_bo.push_back(std::move(s_bo));
    res.grad_maps.push_back(std::move(grad_map));
  }
  return res;
}

}  // namespace pole
