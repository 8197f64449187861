// Binary netpbm images (PPM P6 for color, PGM P5 for labels/heatmaps) and
// the tab-separated dataset manifest. Writers emit a canonical header so
// repeated runs produce byte-identical files.
#pragma once

#include <cctype>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "ocseg/common.hpp"

namespace ocseg {

struct ImageU8 {
  int width = 0;
  int height = 0;
  int channels = 0;  // 1 (grayscale) or 3 (interleaved RGB)
  std::vector<uint8_t> pixels;

  int64_t expected_bytes() const {
    return static_cast<int64_t>(width) * height * channels;
  }
};

namespace detail {

inline void write_netpbm(const std::string& path, const ImageU8& img,
                         const char* magic, int channels) {
  if (img.channels != channels)
    throw ContractError(std::string(magic) + " writer needs " +
                        std::to_string(channels) + " channel(s), image has " +
                        std::to_string(img.channels));
  if (img.width < 1 || img.height < 1)
    throw ContractError("cannot write empty image to " + path);
  if (static_cast<int64_t>(img.pixels.size()) != img.expected_bytes())
    throw ContractError("pixel buffer size does not match dimensions for " + path);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path + " for writing");
  f << magic << "\n" << img.width << " " << img.height << "\n255\n";
  f.write(reinterpret_cast<const char*>(img.pixels.data()),
          static_cast<std::streamsize>(img.pixels.size()));
  if (!f) throw IoError("short write to " + path);
}

// One header token; skips whitespace and '#' comment lines.
inline int read_header_int(std::istream& f, const std::string& path) {
  int c = f.get();
  while (c != EOF) {
    if (c == '#') {
      while (c != EOF && c != '\n') c = f.get();
    } else if (std::isspace(c)) {
      c = f.get();
    } else {
      break;
    }
  }
  if (c == EOF || !std::isdigit(c)) throw DataError("malformed netpbm header in " + path);
  int64_t v = 0;
  while (c != EOF && std::isdigit(c)) {
    v = v * 10 + (c - '0');
    if (v > 1 << 30) throw DataError("absurd dimension in " + path);
    c = f.get();
  }
  if (c != EOF) f.unget();
  return static_cast<int>(v);
}

inline ImageU8 read_netpbm(const std::string& path, const char* magic, int channels) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path);
  char m0 = 0, m1 = 0;
  f.get(m0);
  f.get(m1);
  if (!f || m0 != magic[0] || m1 != magic[1])
    throw DataError(path + " is not a " + magic + " file");
  ImageU8 img;
  img.width = read_header_int(f, path);
  img.height = read_header_int(f, path);
  const int maxval = read_header_int(f, path);
  if (maxval != 255) throw DataError(path + ": only maxval 255 is supported");
  f.get();  // the single whitespace byte separating header from raster
  img.channels = channels;
  img.pixels.resize(static_cast<size_t>(img.expected_bytes()));
  f.read(reinterpret_cast<char*>(img.pixels.data()),
         static_cast<std::streamsize>(img.pixels.size()));
  if (f.gcount() != static_cast<std::streamsize>(img.pixels.size()))
    throw DataError(path + ": truncated pixel data");
  return img;
}

}  // namespace detail

inline void write_ppm(const std::string& path, const ImageU8& img) {
  detail::write_netpbm(path, img, "P6", 3);
}

inline ImageU8 read_ppm(const std::string& path) {
  return detail::read_netpbm(path, "P6", 3);
}

inline void write_pgm(const std::string& path, const ImageU8& img) {
  detail::write_netpbm(path, img, "P5", 1);
}

inline ImageU8 read_pgm(const std::string& path) {
  return detail::read_netpbm(path, "P5", 1);
}

struct ManifestEntry {
  std::string image_path;
  std::string label_path;
  bool operator==(const ManifestEntry&) const = default;
};

inline void write_manifest(const std::string& path,
                           const std::vector<ManifestEntry>& entries) {
  std::ofstream f(path, std::ios::binary);  // binary: no newline translation
  if (!f) throw IoError("cannot open " + path + " for writing");
  for (const auto& e : entries) f << e.image_path << "\t" << e.label_path << "\n";
  if (!f) throw IoError("short write to " + path);
}

// Entries come back with paths resolved relative to the manifest's directory
// (absolute entries pass through untouched).
inline std::vector<ManifestEntry> read_manifest(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open " + path);
  const auto base = std::filesystem::path(path).parent_path();
  auto resolve = [&](const std::string& p) {
    std::filesystem::path fp(p);
    return fp.is_absolute() ? fp.string() : (base / fp).string();
  };
  std::vector<ManifestEntry> entries;
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos || tab == 0 || tab + 1 >= line.size() ||
        line.find('\t', tab + 1) != std::string::npos)
      throw DataError(path + " line " + std::to_string(lineno) +
                      ": expected exactly \"image<TAB>label\"");
    entries.push_back({resolve(line.substr(0, tab)), resolve(line.substr(tab + 1))});
  }
  return entries;
}

}  // namespace ocseg
