// Full segmentation model: toy backbone -> one of five context heads ->
// per-pixel classifier, plus an auxiliary classifier on the stage-4 tap.
// Both logit maps are bilinearly upsampled back to input resolution.
#pragma once

#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "ocseg/backbone.hpp"
#include "ocseg/context_modules.hpp"

namespace ocseg {

enum class ModuleKind { baseline, gp, base_oc, pyramid_oc, asp_oc };

inline ModuleKind parse_module_kind(const std::string& s) {
  if (s == "baseline") return ModuleKind::baseline;
  if (s == "gp") return ModuleKind::gp;
  if (s == "base-oc") return ModuleKind::base_oc;
  if (s == "pyramid-oc") return ModuleKind::pyramid_oc;
  if (s == "asp-oc") return ModuleKind::asp_oc;
  throw UsageError("unknown module kind '" + s +
                   "' (expected baseline, gp, base-oc, pyramid-oc or asp-oc)");
}

inline std::string module_kind_name(ModuleKind k) {
  switch (k) {
    case ModuleKind::baseline: return "baseline";
    case ModuleKind::gp: return "gp";
    case ModuleKind::base_oc: return "base-oc";
    case ModuleKind::pyramid_oc: return "pyramid-oc";
    case ModuleKind::asp_oc: return "asp-oc";
  }
  return "?";
}

struct ModelConfig {
  ModuleKind kind = ModuleKind::base_oc;
  BackboneConfig backbone;
  int mid_channels = 16;
  int out_channels = 16;
  int num_classes = 4;
  std::vector<int> pyramid_scales{1, 2, 3, 6};
  std::vector<int> asp_rates{12, 24, 36};
  bool scale_attention_logits = false;

  ChannelPlan plan() const {
    return ChannelPlan(backbone.feature_channels(), mid_channels, out_channels);
  }
};

template <typename T>
struct SegOutput {
  Tensor<T> main_logits;  // (B, K, H, W) at input resolution
  Tensor<T> aux_logits;   // same
};

template <typename T>
class SegModel {
 public:
  SegModel() = default;

  SegModel(ModelConfig cfg, std::mt19937* rng) : cfg_(std::move(cfg)) {
    if (cfg_.num_classes < 2)
      throw ContractError("model needs at least 2 classes, got " +
                          std::to_string(cfg_.num_classes));
    backbone_ = ToyBackbone<T>(cfg_.backbone, rng);
    const ChannelPlan plan = cfg_.plan();
    switch (cfg_.kind) {
      case ModuleKind::baseline:
        context_ = BaselineModule<T>(plan, rng);
        break;
      case ModuleKind::gp:
        context_ = GlobalPoolModule<T>(plan, rng);
        break;
      case ModuleKind::base_oc:
        context_ = BaseOcModule<T>(plan, rng, cfg_.scale_attention_logits);
        break;
      case ModuleKind::pyramid_oc:
        context_ = PyramidOcModule<T>(plan, cfg_.pyramid_scales, rng,
                                      cfg_.scale_attention_logits);
        break;
      case ModuleKind::asp_oc:
        context_ = AspOcModule<T>(plan, cfg_.asp_rates, rng,
                                  cfg_.scale_attention_logits);
        break;
    }
    classifier_ = Conv2d<T>(cfg_.out_channels, cfg_.num_classes, 1, 1, 0, 1,
                            /*with_bias=*/true, rng);
    aux_classifier_ = Conv2d<T>(cfg_.backbone.aux_channels(), cfg_.num_classes, 1, 1,
                                0, 1, /*with_bias=*/true, rng);
  }

  const ModelConfig& config() const { return cfg_; }

  // Attention modules expose a full-image context map; the two context-free
  // heads do not.
  bool has_context_map() const {
    return cfg_.kind == ModuleKind::base_oc || cfg_.kind == ModuleKind::pyramid_oc ||
           cfg_.kind == ModuleKind::asp_oc;
  }

  SegOutput<T> forward(const Tensor<T>& image, bool training,
                       ObjectContextMap<T>* map_out = nullptr) {
    auto [feats, aux_feats] = backbone_.forward(image, training);
    auto ctx = std::visit(
        [&](auto& m) -> Tensor<T> {
          using M = std::decay_t<decltype(m)>;
          if constexpr (std::is_same_v<M, BaselineModule<T>> ||
                        std::is_same_v<M, GlobalPoolModule<T>>) {
            return m.forward(feats, training);
          } else {
            return m.forward(feats, training, map_out);
          }
        },
        context_);
    auto main = bilinear_upsample(classifier_.forward(ctx),
                                  BackboneConfig::output_stride);
    auto aux = bilinear_upsample(aux_classifier_.forward(aux_feats),
                                 BackboneConfig::output_stride);
    return {main, aux};
  }

  // Registration order is fixed; checkpoints rely on it.
  void collect(std::vector<NamedTensor<T>>& params,
               std::vector<NamedTensor<T>>& buffers) {
    backbone_.collect("backbone", params, buffers);
    std::visit([&](auto& m) { m.collect("context", params, buffers); }, context_);
    classifier_.collect("classifier", params, buffers);
    aux_classifier_.collect("aux_classifier", params, buffers);
  }

  std::vector<NamedTensor<T>> parameters() {
    std::vector<NamedTensor<T>> params, buffers;
    collect(params, buffers);
    return params;
  }

  void zero_grads() {
    std::vector<NamedTensor<T>> params, buffers;
    collect(params, buffers);
    for (auto& p : params) p.tensor.zero_grad();
  }

  // For shape probes and tests that need the head's concat bookkeeping.
  int last_concat_channels() const {
    return std::visit(
        [](const auto& m) -> int {
          using M = std::decay_t<decltype(m)>;
          if constexpr (std::is_same_v<M, BaselineModule<T>>) {
            return 0;
          } else {
            return m.last_concat_channels;
          }
        },
        context_);
  }

 private:
  ModelConfig cfg_;
  ToyBackbone<T> backbone_;
  std::variant<BaselineModule<T>, GlobalPoolModule<T>, BaseOcModule<T>,
               PyramidOcModule<T>, AspOcModule<T>>
      context_;
  Conv2d<T> classifier_;
  Conv2d<T> aux_classifier_;
};

}  // namespace ocseg
