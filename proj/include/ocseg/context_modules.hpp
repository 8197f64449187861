// The context modules that sit between backbone and classifier. All three
// attention variants share the recipe: reduce the backbone features with a
// 3x3 conv, gather context, concatenate context with features, fuse with a
// 1x1 conv, then refine with a final 1x1 conv. Two context-free ablation
// variants (plain 3x3, global-pool broadcast) serve as comparison baselines.
#pragma once

#include <string>
#include <vector>

#include "ocseg/ocp.hpp"

namespace ocseg {

struct ChannelPlan {
  int backbone_ch;
  int mid_ch;
  int out_ch;
  ChannelPlan(int backbone, int mid, int out)
      : backbone_ch(backbone), mid_ch(mid), out_ch(out) {
    if (backbone < 1 || mid < 1 || out < 1)
      throw ContractError("channel plan entries must be >= 1");
  }
};

inline int default_key_channels(int mid_ch) { return mid_ch > 1 ? mid_ch / 2 : 1; }

// Splits an h x w grid into s x s rectangles; region (r,c) covers rows
// [r*h/s, (r+1)*h/s) and the analogous columns (integer floor division), so
// remainders land in the later bands.
inline std::vector<SpatialBox> pyramid_partition(int h, int w, int s) {
  if (h < 1 || w < 1 || s < 1)
    throw ContractError("pyramid_partition: extents and scale must be >= 1");
  if (s > h || s > w)
    throw ContractError("pyramid_partition: scale " + std::to_string(s) +
                        " exceeds map " + std::to_string(h) + "x" + std::to_string(w));
  std::vector<SpatialBox> boxes;
  boxes.reserve(static_cast<size_t>(s) * s);
  for (int r = 0; r < s; ++r)
    for (int c = 0; c < s; ++c)
      boxes.push_back({r * h / s, (r + 1) * h / s, c * w / s, (c + 1) * w / s});
  return boxes;
}

// reduce -> attention pooling over the full map -> concat(context, features)
// -> fuse -> refine.
template <typename T>
struct BaseOcModule {
  ChannelPlan plan{1, 1, 1};
  ConvBnRelu<T> reduce;  // 3x3 backbone_ch -> mid_ch
  OcpParams<T> ocp;      // mid_ch -> mid_ch
  ConvBnRelu<T> fuse;    // 1x1 2*mid_ch -> out_ch
  ConvBnRelu<T> refine;  // 1x1 out_ch -> out_ch
  int last_concat_channels = 0;

  BaseOcModule() = default;
  BaseOcModule(ChannelPlan p, std::mt19937* rng, bool scale_logits = false)
      : plan(p),
        reduce(p.backbone_ch, p.mid_ch, 3, 1, 1, 1, rng),
        ocp(p.mid_ch, p.mid_ch, default_key_channels(p.mid_ch), rng, scale_logits),
        fuse(2 * p.mid_ch, p.out_ch, 1, 1, 0, 1, rng),
        refine(p.out_ch, p.out_ch, 1, 1, 0, 1, rng) {}

  Tensor<T> forward(const Tensor<T>& x, bool training,
                    ObjectContextMap<T>* map_out = nullptr) {
    auto xr = reduce.forward(x, training);
    auto ctx = ocp_forward(xr, ocp, map_out);
    auto cat = concat_channels<T>({ctx, xr});
    last_concat_channels = cat.dim(1);
    return refine.forward(fuse.forward(cat, training), training);
  }

  void collect(const std::string& prefix, std::vector<NamedTensor<T>>& params,
               std::vector<NamedTensor<T>>& buffers) {
    reduce.collect(prefix + ".reduce", params, buffers);
    ocp.collect(prefix + ".ocp", params, buffers);
    fuse.collect(prefix + ".fuse", params, buffers);
    refine.collect(prefix + ".refine", params, buffers);
  }
};

// reduce -> per-scale region-confined attention pooling (one shared parameter
// set per scale, applied to every region of that scale) -> concat all scale
// outputs with a channel-increased copy of the reduced features -> fuse ->
// refine.
template <typename T>
struct PyramidOcModule {
  ChannelPlan plan{1, 1, 1};
  std::vector<int> scales;
  ConvBnRelu<T> reduce;               // 3x3 backbone_ch -> mid_ch
  std::vector<OcpParams<T>> branch_ocps;  // one per scale, mid_ch -> mid_ch
  ConvBnRelu<T> widen;                // 1x1 mid_ch -> scales*mid_ch
  ConvBnRelu<T> fuse;                 // 1x1 2*scales*mid_ch -> out_ch
  ConvBnRelu<T> refine;               // 1x1 out_ch -> out_ch
  int last_concat_channels = 0;

  PyramidOcModule() = default;
  PyramidOcModule(ChannelPlan p, std::vector<int> scales_, std::mt19937* rng,
                  bool scale_logits = false)
      : plan(p), scales(std::move(scales_)) {
    if (scales.empty()) throw ContractError("pyramid module needs at least one scale");
    for (size_t i = 0; i < scales.size(); ++i) {
      if (scales[i] < 1)
        throw ContractError("pyramid scales must be >= 1");
      if (i > 0 && scales[i] <= scales[i - 1])
        throw ContractError("pyramid scales must be strictly increasing");
    }
    const int S = static_cast<int>(scales.size());
    reduce = ConvBnRelu<T>(p.backbone_ch, p.mid_ch, 3, 1, 1, 1, rng);
    for (int i = 0; i < S; ++i)
      branch_ocps.emplace_back(p.mid_ch, p.mid_ch, default_key_channels(p.mid_ch), rng,
                               scale_logits);
    widen = ConvBnRelu<T>(p.mid_ch, S * p.mid_ch, 1, 1, 0, 1, rng);
    fuse = ConvBnRelu<T>(2 * S * p.mid_ch, p.out_ch, 1, 1, 0, 1, rng);
    refine = ConvBnRelu<T>(p.out_ch, p.out_ch, 1, 1, 0, 1, rng);
  }

  // One scale branch on already-reduced features: partition, pool each region
  // with this scale's shared parameters, paste back. Public so the
  // region-locality guarantee can be probed directly.
  Tensor<T> branch_forward(int scale_index, const Tensor<T>& reduced) const {
    const Shape4 s = reduced.shape4();
    const auto boxes = pyramid_partition(s.height, s.width, scales[scale_index]);
    std::vector<Tensor<T>> parts;
    parts.reserve(boxes.size());
    for (const auto& b : boxes) {
      auto region = boxes.size() == 1
                        ? reduced
                        : slice_spatial(reduced, b.y0, b.y1, b.x0, b.x1);
      parts.push_back(ocp_forward(region, branch_ocps[scale_index]));
    }
    if (parts.size() == 1) return parts[0];
    return assemble_spatial(parts, boxes, s.height, s.width);
  }

  Tensor<T> forward(const Tensor<T>& x, bool training,
                    ObjectContextMap<T>* map_out = nullptr) {
    auto xr = reduce.forward(x, training);
    std::vector<Tensor<T>> pieces;
    for (size_t i = 0; i < scales.size(); ++i) {
      if (map_out && scales[i] == 1)
        pieces.push_back(ocp_forward(xr, branch_ocps[i], map_out));
      else
        pieces.push_back(branch_forward(static_cast<int>(i), xr));
    }
    pieces.push_back(widen.forward(xr, training));
    auto cat = concat_channels(pieces);
    last_concat_channels = cat.dim(1);
    return refine.forward(fuse.forward(cat, training), training);
  }

  void collect(const std::string& prefix, std::vector<NamedTensor<T>>& params,
               std::vector<NamedTensor<T>>& buffers) {
    reduce.collect(prefix + ".reduce", params, buffers);
    for (size_t i = 0; i < branch_ocps.size(); ++i)
      branch_ocps[i].collect(prefix + ".scale" + std::to_string(scales[i]) + ".ocp",
                             params, buffers);
    widen.collect(prefix + ".widen", params, buffers);
    fuse.collect(prefix + ".fuse", params, buffers);
    refine.collect(prefix + ".refine", params, buffers);
  }
};

// Five parallel branches: attention pooling on reduced features, a 1x1 conv,
// and three dilated 3x3 convs straight off the backbone features. No
// image-level pooling branch. Concat -> fuse -> refine.
template <typename T>
struct AspOcModule {
  ChannelPlan plan{1, 1, 1};
  std::vector<int> dilation_rates;
  ConvBnRelu<T> reduce;  // 3x3 backbone_ch -> mid_ch
  OcpParams<T> ocp;      // mid_ch -> mid_ch
  ConvBnRelu<T> proj1x1;               // 1x1 backbone_ch -> mid_ch
  std::vector<ConvBnRelu<T>> dilated;  // 3x3 backbone_ch -> mid_ch, pad = rate
  ConvBnRelu<T> fuse;    // 1x1 5*mid_ch -> out_ch
  ConvBnRelu<T> refine;  // 1x1 out_ch -> out_ch
  int last_concat_channels = 0;

  AspOcModule() = default;
  AspOcModule(ChannelPlan p, std::vector<int> rates, std::mt19937* rng,
              bool scale_logits = false)
      : plan(p), dilation_rates(std::move(rates)) {
    if (dilation_rates.size() != 3)
      throw ContractError("the five-branch module takes exactly three dilation rates, got " +
                          std::to_string(dilation_rates.size()));
    for (int r : dilation_rates)
      if (r < 1) throw ContractError("dilation rates must be >= 1");
    reduce = ConvBnRelu<T>(p.backbone_ch, p.mid_ch, 3, 1, 1, 1, rng);
    ocp = OcpParams<T>(p.mid_ch, p.mid_ch, default_key_channels(p.mid_ch), rng,
                       scale_logits);
    proj1x1 = ConvBnRelu<T>(p.backbone_ch, p.mid_ch, 1, 1, 0, 1, rng);
    for (int r : dilation_rates)
      dilated.emplace_back(p.backbone_ch, p.mid_ch, 3, 1, r, r, rng);
    fuse = ConvBnRelu<T>(5 * p.mid_ch, p.out_ch, 1, 1, 0, 1, rng);
    refine = ConvBnRelu<T>(p.out_ch, p.out_ch, 1, 1, 0, 1, rng);
  }

  Tensor<T> forward(const Tensor<T>& x, bool training,
                    ObjectContextMap<T>* map_out = nullptr) {
    std::vector<Tensor<T>> pieces;
    pieces.push_back(ocp_forward(reduce.forward(x, training), ocp, map_out));
    pieces.push_back(proj1x1.forward(x, training));
    for (auto& d : dilated) pieces.push_back(d.forward(x, training));
    auto cat = concat_channels(pieces);
    last_concat_channels = cat.dim(1);
    return refine.forward(fuse.forward(cat, training), training);
  }

  void collect(const std::string& prefix, std::vector<NamedTensor<T>>& params,
               std::vector<NamedTensor<T>>& buffers) {
    reduce.collect(prefix + ".reduce", params, buffers);
    ocp.collect(prefix + ".ocp", params, buffers);
    proj1x1.collect(prefix + ".proj1x1", params, buffers);
    for (size_t i = 0; i < dilated.size(); ++i)
      dilated[i].collect(prefix + ".dilated" + std::to_string(dilation_rates[i]),
                         params, buffers);
    fuse.collect(prefix + ".fuse", params, buffers);
    refine.collect(prefix + ".refine", params, buffers);
  }
};

// Context-free comparison head: the whole module is one 3x3 conv block of
// equal output width.
template <typename T>
struct BaselineModule {
  ChannelPlan plan{1, 1, 1};
  ConvBnRelu<T> block;  // 3x3 backbone_ch -> out_ch

  BaselineModule() = default;
  BaselineModule(ChannelPlan p, std::mt19937* rng)
      : plan(p), block(p.backbone_ch, p.out_ch, 3, 1, 1, 1, rng) {}

  Tensor<T> forward(const Tensor<T>& x, bool training) {
    return block.forward(x, training);
  }

  void collect(const std::string& prefix, std::vector<NamedTensor<T>>& params,
               std::vector<NamedTensor<T>>& buffers) {
    block.collect(prefix + ".block", params, buffers);
  }
};

// Global-pool comparison head: one pooled vector, projected and broadcast,
// stands in for per-pixel context. Same concat/fuse/refine tail as the
// attention modules. The pooled projection uses bias + ReLU and no batch
// norm (normalizing a per-image 1x1 map over the batch would erase it).
template <typename T>
struct GlobalPoolModule {
  ChannelPlan plan{1, 1, 1};
  ConvBnRelu<T> reduce;   // 3x3 backbone_ch -> mid_ch
  Conv2d<T> pool_proj;    // 1x1 mid_ch -> mid_ch, with bias
  ConvBnRelu<T> fuse;     // 1x1 2*mid_ch -> out_ch
  ConvBnRelu<T> refine;   // 1x1 out_ch -> out_ch
  int last_concat_channels = 0;

  GlobalPoolModule() = default;
  GlobalPoolModule(ChannelPlan p, std::mt19937* rng)
      : plan(p),
        reduce(p.backbone_ch, p.mid_ch, 3, 1, 1, 1, rng),
        pool_proj(p.mid_ch, p.mid_ch, 1, 1, 0, 1, /*with_bias=*/true, rng),
        fuse(2 * p.mid_ch, p.out_ch, 1, 1, 0, 1, rng),
        refine(p.out_ch, p.out_ch, 1, 1, 0, 1, rng) {}

  Tensor<T> forward(const Tensor<T>& x, bool training) {
    auto xr = reduce.forward(x, training);
    const Shape4 s = xr.shape4();
    auto g = relu(pool_proj.forward(global_avg_pool(xr)));
    auto cat = concat_channels<T>({broadcast_spatial(g, s.height, s.width), xr});
    last_concat_channels = cat.dim(1);
    return refine.forward(fuse.forward(cat, training), training);
  }

  void collect(const std::string& prefix, std::vector<NamedTensor<T>>& params,
               std::vector<NamedTensor<T>>& buffers) {
    reduce.collect(prefix + ".reduce", params, buffers);
    pool_proj.collect(prefix + ".pool_proj", params, buffers);
    fuse.collect(prefix + ".fuse", params, buffers);
    refine.collect(prefix + ".refine", params, buffers);
  }
};

}  // namespace ocseg
