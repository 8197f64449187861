// Synthetic shape-segmentation data: generator, disk import/export glue, and
// the flip/scale/crop augmentation used during training.
//
// The task is deliberately built so that local color cannot identify the
// class: all shape kinds draw their fill brightness from one shared
// distribution, and that range overlaps the background range. Telling a
// rectangle pixel from a disk pixel requires looking at the extent of the
// object it belongs to.
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <random>
#include <string>
#include <vector>

#include "ocseg/common.hpp"
#include "ocseg/image_io.hpp"
#include "ocseg/nn.hpp"

namespace ocseg {

template <typename T>
struct SegmentationSample {
  int height = 0;
  int width = 0;
  std::vector<T> image;    // 3 channel planes of H*W reals in [0,1]
  std::vector<int> labels;  // H*W class ids, row-major

  bool operator==(const SegmentationSample&) const = default;
};

enum class ShapeKind { rectangle, disk, triangle };

// Geometry kept in integer coordinates so membership tests are exact.
struct ShapeSpec {
  ShapeKind kind = ShapeKind::rectangle;
  int class_id = 1;
  // rectangle: inclusive corners (y0,x0)-(y1,x1)
  // disk: center (cy,cx) = (y0,x0), radius = y1
  // triangle: vertices (y0,x0), (y1,x1), (y2,x2)
  int y0 = 0, x0 = 0, y1 = 0, x1 = 0, y2 = 0, x2 = 0;

  bool contains(int y, int x) const {
    switch (kind) {
      case ShapeKind::rectangle:
        return y >= y0 && y <= y1 && x >= x0 && x <= x1;
      case ShapeKind::disk: {
        const int64_t dy = y - y0, dx = x - x0, r = y1;
        return dy * dy + dx * dx <= r * r;
      }
      case ShapeKind::triangle: {
        // Same-side test: all edge cross products share a sign (or are 0).
        const int64_t e0 = cross(y0, x0, y1, x1, y, x);
        const int64_t e1 = cross(y1, x1, y2, x2, y, x);
        const int64_t e2 = cross(y2, x2, y0, x0, y, x);
        return (e0 >= 0 && e1 >= 0 && e2 >= 0) || (e0 <= 0 && e1 <= 0 && e2 <= 0);
      }
    }
    return false;
  }

  // Bounding box, inclusive.
  void bbox(int& by0, int& bx0, int& by1, int& bx1) const {
    switch (kind) {
      case ShapeKind::rectangle:
        by0 = y0, bx0 = x0, by1 = y1, bx1 = x1;
        return;
      case ShapeKind::disk:
        by0 = y0 - y1, bx0 = x0 - y1, by1 = y0 + y1, bx1 = x0 + y1;
        return;
      case ShapeKind::triangle:
        by0 = std::min({y0, y1, y2}), bx0 = std::min({x0, x1, x2});
        by1 = std::max({y0, y1, y2}), bx1 = std::max({x0, x1, x2});
        return;
    }
  }

 private:
  static int64_t cross(int ay, int ax, int by, int bx, int py, int px) {
    return static_cast<int64_t>(bx - ax) * (py - ay) -
           static_cast<int64_t>(by - ay) * (px - ax);
  }
};

template <typename T>
struct GeneratedSample {
  SegmentationSample<T> sample;
  std::vector<ShapeSpec> shapes;
};

struct ShapeGenConfig {
  int height = 64;
  int width = 64;
  int num_classes = 4;  // background + up to {rectangle, disk, triangle}
  int min_shapes = 1;
  int max_shapes = 4;
  int ignore_label = 255;
  // Primary shape extents as a fraction of the canvas edge, scaled by 1/16:
  // [min_extent_16, max_extent_16] sixteenths. Defaults give [h/4, 3h/8].
  int min_extent_16 = 4;
  int max_extent_16 = 6;

  void validate() const {
    if (height < 16 || width < 16)
      throw ContractError("shape generator needs at least a 16x16 canvas");
    if (num_classes < 2)
      throw ContractError("shape generator needs num_classes >= 2");
    if (min_shapes < 0 || max_shapes < min_shapes)
      throw ContractError("shape count range is invalid");
    if (min_extent_16 < 1 || max_extent_16 < min_extent_16 || max_extent_16 > 14)
      throw ContractError("shape extent range is invalid");
  }
};

namespace detail {

inline uint8_t quantize_unit(double v) {
  v = std::min(std::max(v, 0.0), 1.0);
  return static_cast<uint8_t>(std::lround(v * 255.0));
}

}  // namespace detail

// Deterministic per (cfg, seed). Shapes never overlap (bounding boxes kept
// disjoint); placement that fails 100 times raises a data error.
template <typename T>
std::vector<GeneratedSample<T>> generate_shapes(uint64_t seed, int n,
                                                const ShapeGenConfig& cfg) {
  cfg.validate();
  if (n < 0) throw ContractError("sample count must be >= 0");
  std::mt19937 rng(static_cast<uint32_t>(seed ^ (seed >> 32)));
  const int h = cfg.height, w = cfg.width;
  const int kinds_available = std::min(cfg.num_classes - 1, 3);

  std::vector<GeneratedSample<T>> out;
  out.reserve(static_cast<size_t>(n));
  for (int s = 0; s < n; ++s) {
    GeneratedSample<T> g;
    g.sample.height = h;
    g.sample.width = w;
    g.sample.labels.assign(static_cast<size_t>(h) * w, 0);

    std::uniform_real_distribution<double> bg_dist(0.2, 0.5);
    std::uniform_real_distribution<double> fill_dist(0.4, 0.9);
    std::uniform_real_distribution<double> noise(-0.05, 0.05);
    const double bg = bg_dist(rng);

    // One fill level per class, drawn fresh every image: ambiguous against
    // the background and against the other classes' draws in *other* images,
    // but spaced within this image, so a pixel's brightness only means
    // something relative to the image's own palette. Telling classes apart
    // therefore requires comparing against the rest of the image.
    std::array<double, 4> class_fill{};
    for (int c = 1; c <= kinds_available; ++c) {
      double fill = fill_dist(rng);
      auto distinct = [&] {
        if (std::fabs(fill - bg) < 0.08) return false;
        for (int p = 1; p < c; ++p)
          if (std::fabs(fill - class_fill[static_cast<size_t>(p)]) < 0.08)
            return false;
        return true;
      };
      while (!distinct()) fill = fill_dist(rng);
      class_fill[static_cast<size_t>(c)] = fill;
    }

    std::uniform_int_distribution<int> count_dist(cfg.min_shapes, cfg.max_shapes);
    const int want = count_dist(rng);
    std::vector<std::array<int, 4>> boxes;  // y0,x0,y1,x1 of accepted shapes
    std::vector<double> fills;
    // Primary extents from the configured range (sixteenths of the edge),
    // clamped so placement margins stay feasible.
    auto extent_range = [&cfg](int edge) {
      int lo = std::max(8, edge * cfg.min_extent_16 / 16);
      int hi = std::max(lo + 2, edge * cfg.max_extent_16 / 16);
      hi = std::min(hi, edge - 4);
      lo = std::min(lo, hi);
      return std::pair<int, int>(lo, hi);
    };
    auto half_extent_range = [&cfg](int edge, int floor_lo, int floor_hi) {
      int lo = std::max(floor_lo, edge * cfg.min_extent_16 / 32);
      int hi = std::max(std::max(lo + 1, floor_hi), edge * cfg.max_extent_16 / 32);
      hi = std::min(hi, (edge - 4) / 2);
      lo = std::min(lo, hi);
      return std::pair<int, int>(lo, hi);
    };
    for (int k = 0; k < want; ++k) {
      bool placed = false;
      for (int attempt = 0; attempt < 100 && !placed; ++attempt) {
        std::uniform_int_distribution<int> kind_dist(0, kinds_available - 1);
        const int kind = kind_dist(rng);
        ShapeSpec spec;
        spec.class_id = kind + 1;
        // Extents sit around [h/4, 3h/8]: big enough for a stride-8 head to
        // trace the outline. Once thirty placement attempts have failed the
        // canvas is crowded, so the remaining attempts fall back to small extents
        // instead of erroring out.
        const bool cramped = attempt >= 30;
        const int m = std::min(h, w);
        if (kind == 0) {
          spec.kind = ShapeKind::rectangle;
          const auto [hlo, hhi] = extent_range(h);
          const auto [wlo, whi] = extent_range(w);
          std::uniform_int_distribution<int> hd(cramped ? 8 : hlo,
                                                cramped ? std::max(8, h / 4) : hhi);
          std::uniform_int_distribution<int> wd(cramped ? 8 : wlo,
                                                cramped ? std::max(8, w / 4) : whi);
          const int sh = hd(rng), sw = wd(rng);
          std::uniform_int_distribution<int> yd(1, h - sh - 2), xd(1, w - sw - 2);
          spec.y0 = yd(rng);
          spec.x0 = xd(rng);
          spec.y1 = spec.y0 + sh - 1;
          spec.x1 = spec.x0 + sw - 1;
        } else if (kind == 1) {
          spec.kind = ShapeKind::disk;
          const auto [rlo, rhi] = half_extent_range(m, 4, 5);
          std::uniform_int_distribution<int> rd(cramped ? 4 : rlo,
                                                cramped ? std::max(4, m / 8) : rhi);
          const int r = rd(rng);
          std::uniform_int_distribution<int> yd(r + 1, h - r - 2), xd(r + 1, w - r - 2);
          spec.y0 = yd(rng);
          spec.x0 = xd(rng);
          spec.y1 = r;
        } else {
          spec.kind = ShapeKind::triangle;
          // Upright isoceles: apex above a horizontal base.
          const auto [hlo, hhi] = extent_range(h);
          const auto [blo, bhi] = half_extent_range(w, 5, 6);
          std::uniform_int_distribution<int> hd(cramped ? 8 : hlo,
                                                cramped ? std::max(8, h / 4) : hhi);
          std::uniform_int_distribution<int> bd(cramped ? 5 : blo,
                                                cramped ? std::max(5, w / 8) : bhi);
          const int th = hd(rng), half = bd(rng);
          std::uniform_int_distribution<int> yd(1, h - th - 2),
              xd(half + 1, w - half - 2);
          const int ay = yd(rng), ax = xd(rng);
          spec.y0 = ay;
          spec.x0 = ax;
          spec.y1 = ay + th - 1;
          spec.x1 = ax - half;
          spec.y2 = ay + th - 1;
          spec.x2 = ax + half;
        }
        int by0, bx0, by1, bx1;
        spec.bbox(by0, bx0, by1, bx1);
        bool clash = false;
        for (const auto& b : boxes)
          if (by0 <= b[2] && b[0] <= by1 && bx0 <= b[3] && b[1] <= bx1) {
            clash = true;
            break;
          }
        if (clash) continue;
        boxes.push_back({by0, bx0, by1, bx1});
        fills.push_back(class_fill[static_cast<size_t>(spec.class_id)]);
        g.shapes.push_back(spec);
        placed = true;
      }
      if (!placed)
        throw DataError("could not place shape " + std::to_string(k + 1) +
                        " after 100 attempts on a " + std::to_string(h) + "x" +
                        std::to_string(w) + " canvas");
    }

    std::vector<int> owner(static_cast<size_t>(h) * w, -1);
    for (size_t k = 0; k < g.shapes.size(); ++k) {
      const auto& spec = g.shapes[k];
      int by0, bx0, by1, bx1;
      spec.bbox(by0, bx0, by1, bx1);
      for (int y = std::max(0, by0); y <= std::min(h - 1, by1); ++y)
        for (int x = std::max(0, bx0); x <= std::min(w - 1, bx1); ++x)
          if (spec.contains(y, x)) {
            g.sample.labels[static_cast<size_t>(y) * w + x] = spec.class_id;
            owner[static_cast<size_t>(y) * w + x] = static_cast<int>(k);
          }
    }

    // Render to bytes first, then derive the float image from the bytes, so
    // an exported-then-reloaded dataset is bitwise identical to this one.
    std::vector<uint8_t> bytes(static_cast<size_t>(3) * h * w);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const int own = owner[static_cast<size_t>(y) * w + x];
        const double base = own < 0 ? bg : fills[static_cast<size_t>(own)];
        for (int c = 0; c < 3; ++c)
          bytes[(static_cast<size_t>(c) * h + y) * w + x] =
              detail::quantize_unit(base + noise(rng));
      }
    g.sample.image.resize(bytes.size());
    for (size_t i = 0; i < bytes.size(); ++i)
      g.sample.image[i] = static_cast<T>(bytes[i]) / T(255);
    out.push_back(std::move(g));
  }
  return out;
}

template <typename T>
ImageU8 sample_image_to_u8(const SegmentationSample<T>& s) {
  ImageU8 img;
  img.width = s.width;
  img.height = s.height;
  img.channels = 3;
  img.pixels.resize(static_cast<size_t>(3) * s.height * s.width);
  const size_t plane = static_cast<size_t>(s.height) * s.width;
  for (size_t p = 0; p < plane; ++p)
    for (int c = 0; c < 3; ++c)
      img.pixels[p * 3 + c] =
          detail::quantize_unit(static_cast<double>(s.image[c * plane + p]));
  return img;
}

template <typename T>
ImageU8 sample_labels_to_u8(const SegmentationSample<T>& s) {
  ImageU8 img;
  img.width = s.width;
  img.height = s.height;
  img.channels = 1;
  img.pixels.resize(s.labels.size());
  for (size_t i = 0; i < s.labels.size(); ++i) {
    const int v = s.labels[i];
    if (v < 0 || v > 255)
      throw DataError("label " + std::to_string(v) + " does not fit in a byte");
    img.pixels[i] = static_cast<uint8_t>(v);
  }
  return img;
}

template <typename T>
SegmentationSample<T> sample_from_u8(const ImageU8& rgb, const ImageU8& labels) {
  if (rgb.channels != 3 || labels.channels != 1)
    throw ContractError("expected a 3-channel image and a 1-channel label map");
  if (rgb.width != labels.width || rgb.height != labels.height)
    throw DataError("image and label map dimensions disagree");
  SegmentationSample<T> s;
  s.height = rgb.height;
  s.width = rgb.width;
  const size_t plane = static_cast<size_t>(s.height) * s.width;
  s.image.resize(3 * plane);
  for (size_t p = 0; p < plane; ++p)
    for (int c = 0; c < 3; ++c)
      s.image[c * plane + p] = static_cast<T>(rgb.pixels[p * 3 + c]) / T(255);
  s.labels.resize(plane);
  for (size_t i = 0; i < plane; ++i) s.labels[i] = labels.pixels[i];
  return s;
}

// Deterministic augmentation core: optional horizontal flip, uniform rescale
// (bilinear image / nearest labels), then crop-or-pad back to the original
// extent. off_y/off_x position the crop window (image larger than target) or
// the image inside the padded canvas (image smaller); padding uses black for
// the image and ignore_label for labels.
template <typename T>
SegmentationSample<T> augment_with(const SegmentationSample<T>& s, bool flip,
                                   double scale, int off_y, int off_x,
                                   int ignore_label = 255) {
  if (!(scale > 0)) throw ContractError("augmentation scale must be > 0");
  const int h = s.height, w = s.width;
  const size_t plane = static_cast<size_t>(h) * w;

  SegmentationSample<T> cur = s;
  if (flip) {
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < h; ++y)
        std::reverse(cur.image.begin() + (static_cast<size_t>(c) * h + y) * w,
                     cur.image.begin() + (static_cast<size_t>(c) * h + y) * w + w);
    for (int y = 0; y < h; ++y)
      std::reverse(cur.labels.begin() + static_cast<size_t>(y) * w,
                   cur.labels.begin() + static_cast<size_t>(y) * w + w);
  }

  const int sh = std::max(1, static_cast<int>(std::lround(h * scale)));
  const int sw = std::max(1, static_cast<int>(std::lround(w * scale)));
  if (sh != h || sw != w) {
    SegmentationSample<T> scaled;
    scaled.height = sh;
    scaled.width = sw;
    scaled.image.resize(static_cast<size_t>(3) * sh * sw);
    bilinear_resize_raw(cur.image.data(), 3, h, w, scaled.image.data(), sh, sw);
    scaled.labels.resize(static_cast<size_t>(sh) * sw);
    nearest_resize_raw(cur.labels.data(), h, w, scaled.labels.data(), sh, sw);
    cur = std::move(scaled);
  }

  if (cur.height == h && cur.width == w && off_y == 0 && off_x == 0) return cur;

  const int range_y = std::abs(cur.height - h), range_x = std::abs(cur.width - w);
  if (off_y < 0 || off_y > range_y || off_x < 0 || off_x > range_x)
    throw ContractError("crop/pad offset outside valid range");

  SegmentationSample<T> out;
  out.height = h;
  out.width = w;
  out.image.assign(3 * plane, T(0));
  out.labels.assign(plane, ignore_label);
  const int copy_h = std::min(h, cur.height), copy_w = std::min(w, cur.width);
  const int src_y = cur.height >= h ? off_y : 0, src_x = cur.width >= w ? off_x : 0;
  const int dst_y = cur.height >= h ? 0 : off_y, dst_x = cur.width >= w ? 0 : off_x;
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < copy_h; ++y)
      std::copy_n(cur.image.begin() +
                      (static_cast<size_t>(c) * cur.height + src_y + y) * cur.width +
                      src_x,
                  copy_w,
                  out.image.begin() + (static_cast<size_t>(c) * h + dst_y + y) * w +
                      dst_x);
  for (int y = 0; y < copy_h; ++y)
    std::copy_n(cur.labels.begin() + static_cast<size_t>(src_y + y) * cur.width + src_x,
                copy_w,
                out.labels.begin() + static_cast<size_t>(dst_y + y) * w + dst_x);
  return out;
}

// Training-time policy: flip with probability 1/2, scale uniform in [0.5, 2],
// random crop/pad offsets.
template <typename T>
SegmentationSample<T> augment(const SegmentationSample<T>& s, std::mt19937& rng,
                              int ignore_label = 255) {
  std::uniform_int_distribution<int> coin(0, 1);
  std::uniform_real_distribution<double> scale_dist(0.5, 2.0);
  const bool flip = coin(rng) == 1;
  const double scale = scale_dist(rng);
  const int sh = std::max(1, static_cast<int>(std::lround(s.height * scale)));
  const int sw = std::max(1, static_cast<int>(std::lround(s.width * scale)));
  std::uniform_int_distribution<int> oy(0, std::abs(sh - s.height));
  std::uniform_int_distribution<int> ox(0, std::abs(sw - s.width));
  const int off_y = oy(rng);
  const int off_x = ox(rng);
  return augment_with(s, flip, scale, off_y, off_x, ignore_label);
}

// --- dataset directories -------------------------------------------------

// Writes sample files NNNN.ppm / NNNN.pgm plus manifest.txt into dir.
template <typename T>
void export_dataset(const std::string& dir,
                    const std::vector<SegmentationSample<T>>& samples) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir + ": " + ec.message());
  std::vector<ManifestEntry> entries;
  char name[32];
  for (size_t i = 0; i < samples.size(); ++i) {
    std::snprintf(name, sizeof(name), "%04zu", i);
    const std::string img_rel = std::string(name) + ".ppm";
    const std::string lab_rel = std::string(name) + ".pgm";
    write_ppm((std::filesystem::path(dir) / img_rel).string(),
              sample_image_to_u8(samples[i]));
    write_pgm((std::filesystem::path(dir) / lab_rel).string(),
              sample_labels_to_u8(samples[i]));
    entries.push_back({img_rel, lab_rel});
  }
  write_manifest((std::filesystem::path(dir) / "manifest.txt").string(), entries);
}

template <typename T>
std::vector<SegmentationSample<T>> load_dataset(const std::string& manifest_path) {
  std::vector<SegmentationSample<T>> samples;
  for (const auto& e : read_manifest(manifest_path))
    samples.push_back(sample_from_u8<T>(read_ppm(e.image_path), read_pgm(e.label_path)));
  if (samples.empty()) throw DataError("manifest " + manifest_path + " lists no samples");
  return samples;
}

}  // namespace ocseg
