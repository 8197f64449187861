// Test-time inference: single forward or multi-scale + horizontal-flip
// averaging of per-pixel class probabilities.
#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "ocseg/dataset.hpp"
#include "ocseg/model.hpp"
#include "ocseg/tensor.hpp"

namespace ocseg {

// Nearest multiple of 8, never below 8; scaled inputs must keep the
// backbone's stride-8 divisibility.
inline int round_to_stride(double v) {
  const long m = std::lround(v / 8.0);
  return static_cast<int>(m < 1 ? 8 : m * 8);
}

template <typename T>
Tensor<T> sample_to_input(const SegmentationSample<T>& s) {
  auto t = Tensor<T>::zeros({1, 3, s.height, s.width});
  std::copy(s.image.begin(), s.image.end(), t.data().begin());
  return t;
}

namespace detail {

// In-place per-pixel softmax over the channel axis of a (1,K,H,W) buffer.
template <typename T>
void softmax_channels_raw(T* x, int k, int64_t hw) {
  for (int64_t p = 0; p < hw; ++p) {
    T mx = x[p];
    for (int c = 1; c < k; ++c) mx = std::max(mx, x[c * hw + p]);
    T z = T(0);
    for (int c = 0; c < k; ++c) {
      x[c * hw + p] = std::exp(x[c * hw + p] - mx);
      z += x[c * hw + p];
    }
    const T inv = T(1) / z;
    for (int c = 0; c < k; ++c) x[c * hw + p] *= inv;
  }
}

template <typename T>
void mirror_lr_raw(T* x, int c, int h, int w) {
  for (int i = 0; i < c; ++i)
    for (int y = 0; y < h; ++y) {
      T* row = x + (static_cast<int64_t>(i) * h + y) * w;
      std::reverse(row, row + w);
    }
}

}  // namespace detail

// Averaged class-probability map (1,K,H,W) over the requested scales, and
// optionally each scale's mirrored twin (un-mirrored before averaging).
// Scaled sizes are rounded to the nearest multiple of 8.
template <typename T>
Tensor<T> ms_flip_infer(SegModel<T>& model, const Tensor<T>& image,
                        const std::vector<double>& scales, bool flip) {
  if (scales.empty()) throw ContractError("ms_flip_infer needs at least one scale");
  const Shape4 s = image.shape4();
  if (s.batch != 1 || s.channels != 3)
    throw ShapeError("ms_flip_infer expects a single (1,3,H,W) image, got " +
                     shape_str(image.shape()));
  const int h = s.height, w = s.width;
  const int64_t hw = static_cast<int64_t>(h) * w;
  const int k = model.config().num_classes;

  auto acc = Tensor<T>::zeros({1, k, h, w});
  int runs = 0;
  for (double sc : scales) {
    if (!(sc > 0)) throw ContractError("inference scale must be > 0");
    const int sh = round_to_stride(sc * h), sw = round_to_stride(sc * w);
    for (int pass = 0; pass < (flip ? 2 : 1); ++pass) {
      auto scaled = Tensor<T>::zeros({1, 3, sh, sw});
      if (sh == h && sw == w)
        std::copy(image.data().begin(), image.data().end(), scaled.data().begin());
      else
        bilinear_resize_raw(image.data().data(), 3, h, w, scaled.data().data(), sh, sw);
      if (pass == 1) detail::mirror_lr_raw(scaled.data().data(), 3, sh, sw);

      auto logits = model.forward(scaled, /*training=*/false).main_logits;
      std::vector<T> back(static_cast<size_t>(k) * hw);
      if (sh == h && sw == w)
        std::copy(logits.data().begin(), logits.data().end(), back.begin());
      else
        bilinear_resize_raw(logits.data().data(), k, sh, sw, back.data(), h, w);
      if (pass == 1) detail::mirror_lr_raw(back.data(), k, h, w);
      detail::softmax_channels_raw(back.data(), k, hw);
      auto a = acc.data();
      for (size_t i = 0; i < back.size(); ++i) a[i] += back[i];
      ++runs;
    }
  }
  auto a = acc.data();
  const T inv = T(1) / static_cast<T>(runs);
  for (auto& v : a) v *= inv;
  return acc;
}

// Per-pixel argmax of a (1,K,H,W) map; ties go to the lowest class id.
template <typename T>
std::vector<int> argmax_channels(const Tensor<T>& probs) {
  const Shape4 s = probs.shape4();
  if (s.batch != 1) throw ContractError("argmax_channels expects batch 1");
  const int64_t hw = static_cast<int64_t>(s.height) * s.width;
  std::vector<int> out(static_cast<size_t>(hw));
  const T* x = probs.data().data();
  for (int64_t p = 0; p < hw; ++p) {
    int best = 0;
    T bv = x[p];
    for (int c = 1; c < s.channels; ++c)
      if (x[c * hw + p] > bv) {
        bv = x[c * hw + p];
        best = c;
      }
    out[static_cast<size_t>(p)] = best;
  }
  return out;
}

}  // namespace ocseg
