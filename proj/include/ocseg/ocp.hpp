// Object context pooling: every position attends over all positions of the
// same feature map. A learned query/key product is row-softmaxed into a
// dense affinity map (each row is that pixel's "object context" distribution),
// and a learned value projection is averaged under those weights.
#pragma once

#include <cmath>
#include <random>

#include "ocseg/nn.hpp"

namespace ocseg {

// Dense pixel-to-pixel affinities. weights is (B, N, N) with N = height*width;
// weights[b][p][i] is how much position p draws from position i, and each row
// sums to 1.
template <typename T>
struct ObjectContextMap {
  Tensor<T> weights;
  int height = 0;
  int width = 0;
};

// The three 1x1 projections. Plain convolutions, no bias, no normalization:
// the softmax normalizes the logits and the surrounding module normalizes the
// output.
template <typename T>
struct OcpParams {
  Conv2d<T> query_proj, key_proj, value_proj;
  int key_channels = 0;
  int out_channels = 0;
  // Optional 1/sqrt(key_channels) damping of the attention logits; off by
  // default so the affinities match the plain exponentiated dot product.
  bool scale_logits = false;

  OcpParams() = default;
  OcpParams(int in_ch, int out_ch, int key_ch, std::mt19937* rng,
            bool scale_logits_ = false)
      : key_channels(key_ch), out_channels(out_ch), scale_logits(scale_logits_) {
    if (in_ch < 1 || out_ch < 1 || key_ch < 1)
      throw ContractError("object context pooling: channel counts must be >= 1");
    query_proj = Conv2d<T>(in_ch, key_ch, 1, 1, 0, 1, /*with_bias=*/false, rng);
    key_proj = Conv2d<T>(in_ch, key_ch, 1, 1, 0, 1, /*with_bias=*/false, rng);
    value_proj = Conv2d<T>(in_ch, out_ch, 1, 1, 0, 1, /*with_bias=*/false, rng);
    // Start the key projection equal to the query projection (they train
    // independently afterwards). The initial logit q(x_p).k(x_i) is then a
    // positive-semidefinite similarity kernel, so the first attention maps
    // favor positions that look like the query instead of an arbitrary random
    // direction — a warm start toward object-consistent pooling that avoids
    // collapsing onto a few unrelated anchor cells early in training.
    if (rng) {
      auto qd = query_proj.weight.data();
      std::copy(qd.begin(), qd.end(), key_proj.weight.data().begin());
    }
  }

  void collect(const std::string& prefix, std::vector<NamedTensor<T>>& params,
               std::vector<NamedTensor<T>>& buffers) {
    query_proj.collect(prefix + ".query", params, buffers);
    key_proj.collect(prefix + ".key", params, buffers);
    value_proj.collect(prefix + ".value", params, buffers);
  }
};

// Pairwise softmax(q . k) over all positions of x.
template <typename T>
ObjectContextMap<T> estimate_context(const Tensor<T>& x, const OcpParams<T>& p) {
  const Shape4 xs = x.shape4();
  const int B = xs.batch, H = xs.height, W = xs.width;
  const int N = H * W;
  const int K = p.key_channels;

  auto q = reshape(p.query_proj.forward(x), {B, K, N});
  auto k = reshape(p.key_proj.forward(x), {B, K, N});
  auto logits = bmm(transpose_last2(q), k);  // (B, N, N): row p, column i
  if (p.scale_logits)
    logits = scale(logits, T(1) / std::sqrt(static_cast<T>(K)));
  auto w = reshape(softmax_rows(reshape(logits, {B * N, N})), {B, N, N});
  return {w, H, W};
}

// Weighted average of the value projection under a context map: output at
// position p is sum_i weights[p][i] * value(x)[i].
template <typename T>
Tensor<T> aggregate_context(const Tensor<T>& x, const ObjectContextMap<T>& map,
                            const OcpParams<T>& p) {
  const Shape4 xs = x.shape4();
  const int B = xs.batch, H = xs.height, W = xs.width;
  const int N = H * W;
  if (map.height != H || map.width != W)
    throw ShapeError("aggregate_context: map is " + std::to_string(map.height) + "x" +
                     std::to_string(map.width) + " but input is " + std::to_string(H) +
                     "x" + std::to_string(W));
  if (map.weights.rank() != 3 || map.weights.dim(0) != B || map.weights.dim(1) != N ||
      map.weights.dim(2) != N)
    throw ShapeError("aggregate_context: weight shape " + shape_str(map.weights.shape()) +
                     " does not match " + std::to_string(B) + " maps of " +
                     std::to_string(N) + " positions");
  auto v = reshape(p.value_proj.forward(x), {B, p.out_channels, N});
  auto c = bmm(v, transpose_last2(map.weights));  // c[b][o][p] = sum_i v[o][i] w[p][i]
  return reshape(c, {B, p.out_channels, H, W});
}

// Full pooling pass. When map_out is given the estimated context map is also
// handed back (the visualizer wants it).
template <typename T>
Tensor<T> ocp_forward(const Tensor<T>& x, const OcpParams<T>& p,
                      ObjectContextMap<T>* map_out = nullptr) {
  auto map = estimate_context(x, p);
  auto out = aggregate_context(x, map, p);
  if (map_out) *map_out = map;
  return out;
}

}  // namespace ocseg
