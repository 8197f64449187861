// Training recipe: class-weighted cross entropy over non-ignored pixels,
// online hard-example mining on the main branch, polynomial learning-rate
// decay, and SGD with momentum + weight decay.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <numeric>
#include <vector>

#include "ocseg/nn.hpp"
#include "ocseg/tensor.hpp"

namespace ocseg {

struct OhemConfig {
  double theta = 0.7;     // keep pixels whose true-class probability is below
  int64_t min_kept = 1;   // but never fewer than this many

  void validate() const {
    if (!(theta > 0.0) || theta > 1.0)
      throw ContractError("hard-mining theta must be in (0, 1]");
    if (min_kept < 1) throw ContractError("hard-mining min_kept must be >= 1");
  }
};

struct SupervisionConfig {
  double main_weight = 1.0;
  double aux_weight = 0.4;

  void validate() const {
    if (main_weight < 0 || aux_weight < 0)
      throw ContractError("supervision weights must be >= 0");
  }
};

struct ScheduleConfig {
  double base_lr = 0.01;
  int64_t max_iter = 1;
  double power = 0.9;
  double weight_decay = 0.0005;
  double momentum = 0.9;

  void validate() const {
    if (!(base_lr > 0)) throw ContractError("base_lr must be > 0");
    if (!(power > 0)) throw ContractError("schedule power must be > 0");
    if (max_iter < 1) throw ContractError("max_iter must be >= 1");
  }
};

inline double poly_lr(int64_t iter, const ScheduleConfig& cfg) {
  if (iter < 0 || iter > cfg.max_iter)
    throw ContractError("poly_lr: iteration " + std::to_string(iter) +
                        " outside [0, " + std::to_string(cfg.max_iter) + "]");
  const double frac = 1.0 - static_cast<double>(iter) / static_cast<double>(cfg.max_iter);
  return cfg.base_lr * std::pow(frac, cfg.power);
}

// Per-class weights from pixel frequencies: w_c = 1 / ln(1.02 + freq_c).
// Rare classes weigh more; an absent class gets the maximal weight
// 1/ln(1.02). label_maps is any collection of label buffers.
template <typename T>
std::vector<T> class_balance_weights(const std::vector<std::vector<int>>& label_maps,
                                     int num_classes, int ignore_label) {
  std::vector<int64_t> counts(num_classes, 0);
  int64_t total = 0;
  for (const auto& labels : label_maps)
    for (int v : labels) {
      if (v == ignore_label) continue;
      if (v < 0 || v >= num_classes)
        throw DataError("label " + std::to_string(v) + " outside [0, " +
                        std::to_string(num_classes) + ")");
      ++counts[v];
      ++total;
    }
  if (total == 0) throw DataError("no labeled pixels to balance classes over");
  std::vector<T> w(num_classes);
  for (int c = 0; c < num_classes; ++c) {
    const double freq = static_cast<double>(counts[c]) / static_cast<double>(total);
    w[c] = static_cast<T>(1.0 / std::log(1.02 + freq));
  }
  return w;
}

// Per-pixel softmax probability of the labeled class, forward-only (no
// autodiff graph); ignored pixels report 1 so mining never picks them.
template <typename T>
std::vector<T> true_class_probs(const Tensor<T>& logits, const std::vector<int>& labels,
                                int ignore_label) {
  const Shape4 s = logits.shape4();
  const int K = s.channels;
  const int64_t hw = static_cast<int64_t>(s.height) * s.width;
  const int64_t npix = static_cast<int64_t>(s.batch) * hw;
  if (static_cast<int64_t>(labels.size()) != npix)
    throw ShapeError("labels hold " + std::to_string(labels.size()) +
                     " pixels but logits are " + shape_str(logits.shape()));
  std::vector<T> probs(npix, T(1));
  const T* x = logits.data().data();
  for (int64_t p = 0; p < npix; ++p) {
    const int y = labels[p];
    if (y == ignore_label) continue;
    if (y < 0 || y >= K)
      throw DataError("label " + std::to_string(y) + " outside [0, " +
                      std::to_string(K) + ") at pixel " + std::to_string(p));
    const int64_t b = p / hw, i = p % hw;
    const T* col = x + (b * K) * hw + i;
    T mx = col[0];
    for (int k = 1; k < K; ++k) mx = std::max(mx, col[static_cast<int64_t>(k) * hw]);
    T z = T(0);
    for (int k = 0; k < K; ++k)
      z += std::exp(col[static_cast<int64_t>(k) * hw] - mx);
    probs[p] = std::exp(col[static_cast<int64_t>(y) * hw] - mx) / z;
  }
  return probs;
}

// Hard-example mask over the whole batch: pixels whose true-class probability
// is below theta, topped up to min_kept lowest-probability pixels when too
// few qualify. Ties at the boundary resolve by ascending pixel index.
template <typename T>
std::vector<uint8_t> ohem_select(const std::vector<T>& probs,
                                 const std::vector<int>& labels, int ignore_label,
                                 const OhemConfig& cfg) {
  cfg.validate();
  if (probs.size() != labels.size())
    throw ContractError("ohem_select: probs/labels size mismatch");
  std::vector<int64_t> candidates;
  for (int64_t p = 0; p < static_cast<int64_t>(labels.size()); ++p)
    if (labels[p] != ignore_label) candidates.push_back(p);
  if (candidates.empty()) throw DataError("hard mining found no non-ignored pixels");

  std::vector<uint8_t> mask(probs.size(), 0);
  int64_t kept = 0;
  for (int64_t p : candidates)
    if (static_cast<double>(probs[p]) < cfg.theta) {
      mask[p] = 1;
      ++kept;
    }
  if (kept < cfg.min_kept) {
    const int64_t want = std::min<int64_t>(cfg.min_kept, candidates.size());
    std::stable_sort(candidates.begin(), candidates.end(),
                     [&](int64_t a, int64_t b) { return probs[a] < probs[b]; });
    std::fill(mask.begin(), mask.end(), 0);
    for (int64_t i = 0; i < want; ++i) mask[candidates[i]] = 1;
  }
  return mask;
}

// Softmax cross entropy over (B,K,H,W) logits with integer labels, weighted
// per class, averaged over the number of contributing pixels (ignored and
// masked-out pixels contribute neither loss nor count). Empty class_weights
// means uniform.
template <typename T>
Tensor<T> class_balanced_ce(const Tensor<T>& logits, const std::vector<int>& labels,
                            const std::vector<T>& class_weights, int ignore_label,
                            const std::vector<uint8_t>* keep_mask = nullptr) {
  const Shape4 s = logits.shape4();
  const int K = s.channels;
  const int64_t hw = static_cast<int64_t>(s.height) * s.width;
  const int64_t npix = static_cast<int64_t>(s.batch) * hw;
  if (static_cast<int64_t>(labels.size()) != npix)
    throw ShapeError("labels hold " + std::to_string(labels.size()) +
                     " pixels but logits are " + shape_str(logits.shape()));
  if (!class_weights.empty() && static_cast<int>(class_weights.size()) != K)
    throw ShapeError("expected " + std::to_string(K) + " class weights, got " +
                     std::to_string(class_weights.size()));
  if (keep_mask && static_cast<int64_t>(keep_mask->size()) != npix)
    throw ShapeError("keep mask size does not match pixel count");

  // Cache per-pixel probabilities for the backward pass and tally the loss.
  auto probs = std::make_shared<std::vector<T>>(static_cast<size_t>(npix) * K);
  auto kept = std::make_shared<std::vector<int64_t>>();
  const T* x = logits.data().data();
  double loss_sum = 0;
  for (int64_t p = 0; p < npix; ++p) {
    const int y = labels[p];
    if (y == ignore_label) continue;
    if (y < 0 || y >= K)
      throw DataError("label " + std::to_string(y) + " outside [0, " +
                      std::to_string(K) + ") at pixel " + std::to_string(p));
    if (keep_mask && !(*keep_mask)[p]) continue;
    const int64_t b = p / hw, i = p % hw;
    const T* col = x + (b * K) * hw + i;
    T mx = col[0];
    for (int k = 1; k < K; ++k) mx = std::max(mx, col[static_cast<int64_t>(k) * hw]);
    T z = T(0);
    for (int k = 0; k < K; ++k) {
      const T e = std::exp(col[static_cast<int64_t>(k) * hw] - mx);
      (*probs)[static_cast<size_t>(p) * K + k] = e;
      z += e;
    }
    const T inv = T(1) / z;
    for (int k = 0; k < K; ++k) (*probs)[static_cast<size_t>(p) * K + k] *= inv;
    const T w = class_weights.empty() ? T(1) : class_weights[y];
    const double log_py =
        static_cast<double>(col[static_cast<int64_t>(y) * hw] - mx) -
        std::log(static_cast<double>(z));
    loss_sum -= static_cast<double>(w) * log_py;
    kept->push_back(p);
  }
  if (kept->empty())
    throw DataError("cross entropy has no contributing pixels (all ignored or masked)");

  const int64_t M = static_cast<int64_t>(kept->size());
  auto labels_copy = std::make_shared<std::vector<int>>(labels);
  auto weights_copy = std::make_shared<std::vector<T>>(class_weights);
  auto out = detail::make_op_output<T>(
      {1}, {logits.node()},
      [probs, kept, labels_copy, weights_copy, K, hw, M](detail::TensorNode<T>& n) {
        auto& p = n.parents[0];
        p->ensure_grad();
        const T g = n.grad[0] / static_cast<T>(M);
        for (int64_t pix : *kept) {
          const int y = (*labels_copy)[pix];
          const T w = weights_copy->empty() ? T(1) : (*weights_copy)[y];
          const int64_t b = pix / hw, i = pix % hw;
          T* d = p->grad.data() + (b * K) * hw + i;
          const T* pr = probs->data() + static_cast<size_t>(pix) * K;
          for (int k = 0; k < K; ++k) {
            const T delta = (k == y) ? T(1) : T(0);
            d[static_cast<int64_t>(k) * hw] += g * w * (pr[k] - delta);
          }
        }
      });
  out.data()[0] = static_cast<T>(loss_sum / static_cast<double>(M));
  return out;
}

// main_weight * CE(main) + aux_weight * CE(aux); hard mining, when enabled,
// masks the main term only.
template <typename T>
Tensor<T> deep_supervised_loss(const Tensor<T>& main_logits, const Tensor<T>& aux_logits,
                               const std::vector<int>& labels,
                               const std::vector<T>& class_weights, int ignore_label,
                               const SupervisionConfig& sup,
                               const OhemConfig* ohem = nullptr) {
  sup.validate();
  std::vector<uint8_t> mask;
  const std::vector<uint8_t>* mask_ptr = nullptr;
  if (ohem) {
    auto probs = true_class_probs(main_logits, labels, ignore_label);
    mask = ohem_select(probs, labels, ignore_label, *ohem);
    mask_ptr = &mask;
  }
  auto main_term = class_balanced_ce(main_logits, labels, class_weights, ignore_label,
                                     mask_ptr);
  auto aux_term = class_balanced_ce(aux_logits, labels, class_weights, ignore_label);
  return add(scale(main_term, static_cast<T>(sup.main_weight)),
             scale(aux_term, static_cast<T>(sup.aux_weight)));
}

// Momentum SGD with coupled weight decay:
//   v <- momentum*v + grad + weight_decay*param;  param <- param - lr*v.
// The step is refused (no state mutated) if any gradient is non-finite.
// Parameters that never received a gradient buffer are skipped.
template <typename T>
struct SgdOptimizer {
  std::vector<NamedTensor<T>> velocity;

  void init(const std::vector<NamedTensor<T>>& params) {
    velocity.clear();
    for (const auto& p : params)
      velocity.push_back({p.name, Tensor<T>::zeros(p.tensor.shape())});
  }

  void step(std::vector<NamedTensor<T>>& params, T lr, T momentum, T weight_decay) {
    if (velocity.size() != params.size())
      throw ContractError("optimizer state does not match parameter list");
    for (size_t i = 0; i < params.size(); ++i) {
      if (!params[i].tensor.has_grad()) continue;
      for (T g : params[i].tensor.grad())
        if (!std::isfinite(static_cast<double>(g)))
          throw NumericError("non-finite gradient in " + params[i].name +
                             "; step refused");
    }
    for (size_t i = 0; i < params.size(); ++i) {
      auto& p = params[i].tensor;
      if (!p.has_grad()) continue;
      auto v = velocity[i].tensor.data();
      auto w = p.data();
      auto g = p.grad();
      for (size_t j = 0; j < w.size(); ++j) {
        v[j] = momentum * v[j] + g[j] + weight_decay * w[j];
        w[j] -= lr * v[j];
      }
    }
  }
};

}  // namespace ocseg
