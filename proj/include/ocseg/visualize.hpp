// Attention-map export: turn one query pixel's context-map row into a
// grayscale heatmap at input resolution, and mark the query on a copy of the
// input image.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "ocseg/image_io.hpp"
#include "ocseg/nn.hpp"
#include "ocseg/ocp.hpp"

namespace ocseg {

// Input-resolution pixel -> feature-grid cell (stride 8).
inline std::pair<int, int> query_feature_cell(int y, int x, int img_h, int img_w,
                                              int stride = 8) {
  if (y < 0 || y >= img_h || x < 0 || x >= img_w)
    throw UsageError("query pixel (" + std::to_string(y) + "," + std::to_string(x) +
                     ") outside the " + std::to_string(img_h) + "x" +
                     std::to_string(img_w) + " image");
  return {y / stride, x / stride};
}

// One row of the context map as a heatmap PGM: min-max normalized to
// [0,255] (a constant row maps to all-0), then upsampled 8x bilinearly.
template <typename T>
ImageU8 attention_row_heatmap(const ObjectContextMap<T>& map, int fy, int fx,
                              int stride = 8) {
  const int fh = map.height, fw = map.width;
  if (fy < 0 || fy >= fh || fx < 0 || fx >= fw)
    throw UsageError("query cell outside the " + std::to_string(fh) + "x" +
                     std::to_string(fw) + " feature grid");
  const int64_t n = static_cast<int64_t>(fh) * fw;
  const int64_t q = static_cast<int64_t>(fy) * fw + fx;
  const T* row = map.weights.data().data() + q * n;  // batch item 0

  T lo = row[0], hi = row[0];
  for (int64_t i = 1; i < n; ++i) {
    lo = std::min(lo, row[i]);
    hi = std::max(hi, row[i]);
  }
  std::vector<T> norm(static_cast<size_t>(n), T(0));
  if (hi > lo)
    for (int64_t i = 0; i < n; ++i)
      norm[static_cast<size_t>(i)] = (row[i] - lo) / (hi - lo) * T(255);

  ImageU8 img;
  img.height = fh * stride;
  img.width = fw * stride;
  img.channels = 1;
  std::vector<T> big(static_cast<size_t>(img.height) * img.width);
  bilinear_resize_raw(norm.data(), 1, fh, fw, big.data(), img.height, img.width);
  img.pixels.resize(big.size());
  for (size_t i = 0; i < big.size(); ++i) {
    const double v = std::min(std::max(static_cast<double>(big[i]), 0.0), 255.0);
    img.pixels[i] = static_cast<uint8_t>(std::lround(v));
  }
  return img;
}

// Copy of the input with a red crosshair over the query pixel.
inline ImageU8 mark_query_pixel(ImageU8 img, int y, int x) {
  if (img.channels != 3) throw ContractError("query marking needs an RGB image");
  if (y < 0 || y >= img.height || x < 0 || x >= img.width)
    throw UsageError("query pixel (" + std::to_string(y) + "," + std::to_string(x) +
                     ") outside the " + std::to_string(img.height) + "x" +
                     std::to_string(img.width) + " image");
  auto paint = [&](int py, int px) {
    if (py < 0 || py >= img.height || px < 0 || px >= img.width) return;
    uint8_t* p = img.pixels.data() + (static_cast<size_t>(py) * img.width + px) * 3;
    p[0] = 255;
    p[1] = 0;
    p[2] = 0;
  };
  for (int d = -3; d <= 3; ++d) {
    paint(y + d, x);
    paint(y, x + d);
  }
  return img;
}

// Fraction of a query row's attention mass that lands on cells of the given
// class, using labels already sampled to the feature grid.
template <typename T>
double attention_mass_on_class(const ObjectContextMap<T>& map,
                               const std::vector<int>& feature_labels, int fy, int fx,
                               int cls) {
  const int64_t n = static_cast<int64_t>(map.height) * map.width;
  if (static_cast<int64_t>(feature_labels.size()) != n)
    throw ContractError("feature-grid labels do not match the context map");
  if (fy < 0 || fy >= map.height || fx < 0 || fx >= map.width)
    throw ContractError("query cell outside the context map");
  const T* row =
      map.weights.data().data() + (static_cast<int64_t>(fy) * map.width + fx) * n;
  double mass = 0;
  for (int64_t i = 0; i < n; ++i)
    if (feature_labels[static_cast<size_t>(i)] == cls)
      mass += static_cast<double>(row[i]);
  return mass;
}

}  // namespace ocseg
