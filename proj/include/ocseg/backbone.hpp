// Five-stage dilated toy backbone. Three stride-2 stages bring the input to
// 1/8 resolution; the last two stages keep stride 1 with dilations 2 and 4,
// growing the receptive field without further downsampling. The stage-4
// output doubles as the auxiliary supervision tap.
#pragma once

#include <random>
#include <utility>
#include <vector>

#include "ocseg/nn.hpp"

namespace ocseg {

struct BackboneConfig {
  std::vector<int> stage_channels{16, 32, 48, 64, 64};

  void validate() const {
    if (stage_channels.size() != 5)
      throw ContractError("backbone expects exactly 5 stage channel counts, got " +
                          std::to_string(stage_channels.size()));
    for (int c : stage_channels)
      if (c < 1) throw ContractError("backbone stage channels must be >= 1");
  }
  int feature_channels() const { return stage_channels[4]; }
  int aux_channels() const { return stage_channels[3]; }
  static constexpr int output_stride = 8;
};

template <typename T>
struct ToyBackbone {
  BackboneConfig cfg;
  std::vector<ConvBnRelu<T>> stages;

  ToyBackbone() = default;
  ToyBackbone(BackboneConfig c, std::mt19937* rng) : cfg(std::move(c)) {
    cfg.validate();
    const auto& ch = cfg.stage_channels;
    stages.emplace_back(3, ch[0], 3, 2, 1, 1, rng);      // 1/2
    stages.emplace_back(ch[0], ch[1], 3, 2, 1, 1, rng);  // 1/4
    stages.emplace_back(ch[1], ch[2], 3, 2, 1, 1, rng);  // 1/8
    stages.emplace_back(ch[2], ch[3], 3, 1, 2, 2, rng);  // dilation 2
    stages.emplace_back(ch[3], ch[4], 3, 1, 4, 4, rng);  // dilation 4
  }

  // Returns (final features, auxiliary tap), both at 1/8 resolution.
  std::pair<Tensor<T>, Tensor<T>> forward(const Tensor<T>& image, bool training) {
    const Shape4 s = image.shape4();
    if (s.height % BackboneConfig::output_stride != 0 ||
        s.width % BackboneConfig::output_stride != 0)
      throw ContractError("backbone input must be divisible by 8, got " +
                          std::to_string(s.height) + "x" + std::to_string(s.width));
    auto h = image;
    Tensor<T> aux;
    for (size_t i = 0; i < stages.size(); ++i) {
      h = stages[i].forward(h, training);
      if (i == 3) aux = h;
    }
    return {h, aux};
  }

  void collect(const std::string& prefix, std::vector<NamedTensor<T>>& params,
               std::vector<NamedTensor<T>>& buffers) {
    for (size_t i = 0; i < stages.size(); ++i)
      stages[i].collect(prefix + ".stage" + std::to_string(i + 1), params, buffers);
  }
};

}  // namespace ocseg
