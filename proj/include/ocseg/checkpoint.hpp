// Binary checkpoint container: magic "OCN1", format version, then a flat
// list of named f32 tensors (name length, name, rank, dims, raw data), all
// little-endian. Optimizer velocities, the training RNG, and the iteration
// counter ride along as reserved tensor names ("__opt__/...", "__rng__",
// "__iter__"), so one file captures a resumable training state.
#pragma once

#include <bit>
#include <cstdint>
#include <fstream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "ocseg/common.hpp"
#include "ocseg/model.hpp"
#include "ocseg/training.hpp"

namespace ocseg {

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

struct TensorRecord {
  std::string name;
  std::vector<uint32_t> dims;
  std::vector<float> data;

  int64_t numel() const {
    int64_t n = 1;
    for (uint32_t d : dims) n *= d;
    return n;
  }
};

inline constexpr uint32_t kCheckpointVersion = 1;

namespace detail {

inline void put_u32(std::ostream& f, uint32_t v) {
  f.write(reinterpret_cast<const char*>(&v), 4);
}

inline uint32_t get_u32(std::istream& f, const std::string& path) {
  uint32_t v = 0;
  f.read(reinterpret_cast<char*>(&v), 4);
  if (!f) throw DataError(path + ": truncated checkpoint");
  return v;
}

}  // namespace detail

inline void write_checkpoint_records(const std::string& path,
                                     const std::vector<TensorRecord>& records) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path + " for writing");
  f.write("OCN1", 4);
  detail::put_u32(f, kCheckpointVersion);
  detail::put_u32(f, static_cast<uint32_t>(records.size()));
  for (const auto& r : records) {
    detail::put_u32(f, static_cast<uint32_t>(r.name.size()));
    f.write(r.name.data(), static_cast<std::streamsize>(r.name.size()));
    detail::put_u32(f, static_cast<uint32_t>(r.dims.size()));
    for (uint32_t d : r.dims) detail::put_u32(f, d);
    f.write(reinterpret_cast<const char*>(r.data.data()),
            static_cast<std::streamsize>(r.data.size() * sizeof(float)));
  }
  if (!f) throw IoError("short write to " + path);
}

inline std::vector<TensorRecord> read_checkpoint_records(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path);
  char magic[4] = {};
  f.read(magic, 4);
  if (!f || std::string(magic, 4) != "OCN1")
    throw DataError(path + " is not an OCN1 checkpoint");
  const uint32_t version = detail::get_u32(f, path);
  if (version != kCheckpointVersion)
    throw DataError(path + ": unsupported checkpoint version " +
                    std::to_string(version));
  const uint32_t count = detail::get_u32(f, path);
  std::vector<TensorRecord> records;
  records.reserve(count);
  for (uint32_t i = 0; i < count; ++i) {
    TensorRecord r;
    const uint32_t name_len = detail::get_u32(f, path);
    if (name_len > 4096) throw DataError(path + ": absurd tensor name length");
    r.name.resize(name_len);
    f.read(r.name.data(), name_len);
    const uint32_t rank = detail::get_u32(f, path);
    if (rank > 8) throw DataError(path + ": absurd tensor rank");
    r.dims.resize(rank);
    int64_t n = 1;
    for (uint32_t d = 0; d < rank; ++d) {
      r.dims[d] = detail::get_u32(f, path);
      n *= r.dims[d];
      if (n > (int64_t{1} << 32)) throw DataError(path + ": absurd tensor size");
    }
    r.data.resize(static_cast<size_t>(n));
    f.read(reinterpret_cast<char*>(r.data.data()),
           static_cast<std::streamsize>(r.data.size() * sizeof(float)));
    if (!f) throw DataError(path + ": truncated checkpoint");
    records.push_back(std::move(r));
  }
  return records;
}

// --- RNG <-> tensor words -------------------------------------------------
// mt19937 serializes textually; the decimal tokens are 32-bit words, stored
// bit-cast into f32 slots. Only raw byte copies touch these floats, so NaN
// patterns survive.

inline std::vector<float> rng_to_words(const std::mt19937& rng) {
  std::ostringstream os;
  os << rng;
  std::istringstream is(os.str());
  std::vector<float> words;
  uint64_t v;
  while (is >> v) words.push_back(std::bit_cast<float>(static_cast<uint32_t>(v)));
  return words;
}

inline void rng_from_words(std::mt19937& rng, const std::vector<float>& words) {
  std::ostringstream os;
  for (size_t i = 0; i < words.size(); ++i) {
    if (i) os << ' ';
    os << std::bit_cast<uint32_t>(words[i]);
  }
  std::istringstream is(os.str());
  is >> rng;
  if (!is) throw DataError("checkpoint RNG state is malformed");
}

// --- model-level save/load -----------------------------------------------

namespace detail {

template <typename T>
TensorRecord record_from_tensor(const std::string& name, const Tensor<T>& t) {
  TensorRecord r;
  r.name = name;
  for (int64_t d : t.shape()) r.dims.push_back(static_cast<uint32_t>(d));
  r.data.reserve(static_cast<size_t>(t.numel()));
  for (T v : t.data()) r.data.push_back(static_cast<float>(v));
  return r;
}

template <typename T>
void tensor_from_record(const TensorRecord& r, Tensor<T>& t) {
  bool same = static_cast<int64_t>(r.dims.size()) == t.rank();
  if (same)
    for (size_t i = 0; i < r.dims.size(); ++i)
      same = same && static_cast<int64_t>(r.dims[i]) == t.shape()[i];
  if (!same || r.numel() != t.numel())
    throw ShapeError("checkpoint tensor " + r.name + " has the wrong shape for " +
                     shape_str(t.shape()));
  auto dst = t.data();
  for (size_t i = 0; i < r.data.size(); ++i) dst[i] = static_cast<T>(r.data[i]);
}

}  // namespace detail

// Saves parameters and buffers; optimizer/RNG/iteration only when provided.
template <typename T>
void save_checkpoint(const std::string& path, SegModel<T>& model,
                     const SgdOptimizer<T>* opt = nullptr,
                     const std::mt19937* rng = nullptr, int64_t iteration = -1) {
  std::vector<NamedTensor<T>> params, buffers;
  model.collect(params, buffers);
  std::vector<TensorRecord> records;
  for (const auto& p : params)
    records.push_back(detail::record_from_tensor(p.name, p.tensor));
  for (const auto& b : buffers)
    records.push_back(detail::record_from_tensor(b.name, b.tensor));
  if (opt) {
    if (opt->velocity.size() != params.size())
      throw ContractError("optimizer state does not match the model");
    for (const auto& v : opt->velocity)
      records.push_back(detail::record_from_tensor("__opt__/" + v.name, v.tensor));
  }
  if (rng) {
    TensorRecord r;
    r.name = "__rng__";
    r.data = rng_to_words(*rng);
    r.dims = {static_cast<uint32_t>(r.data.size())};
    records.push_back(std::move(r));
  }
  if (iteration >= 0) {
    TensorRecord r;
    r.name = "__iter__";
    r.dims = {1};
    r.data = {static_cast<float>(iteration)};
    records.push_back(std::move(r));
  }
  write_checkpoint_records(path, records);
}

// Restores whatever the file carries into the given slots. Model tensors are
// mandatory; optimizer/RNG/iteration are required only when a non-null slot
// asks for them.
template <typename T>
void load_checkpoint(const std::string& path, SegModel<T>& model,
                     SgdOptimizer<T>* opt = nullptr, std::mt19937* rng = nullptr,
                     int64_t* iteration = nullptr) {
  auto records = read_checkpoint_records(path);
  std::map<std::string, const TensorRecord*> by_name;
  for (const auto& r : records) {
    if (!by_name.emplace(r.name, &r).second)
      throw DataError(path + ": duplicate tensor " + r.name);
  }
  auto find = [&](const std::string& name) -> const TensorRecord& {
    auto it = by_name.find(name);
    if (it == by_name.end())
      throw DataError(path + " is missing tensor " + name);
    return *it->second;
  };

  std::vector<NamedTensor<T>> params, buffers;
  model.collect(params, buffers);
  for (auto& p : params) detail::tensor_from_record(find(p.name), p.tensor);
  for (auto& b : buffers) detail::tensor_from_record(find(b.name), b.tensor);
  if (opt) {
    opt->init(params);
    for (auto& v : opt->velocity)
      detail::tensor_from_record(find("__opt__/" + v.name), v.tensor);
  }
  if (rng) {
    const auto& r = find("__rng__");
    rng_from_words(*rng, r.data);
  }
  if (iteration) {
    const auto& r = find("__iter__");
    if (r.data.size() != 1) throw DataError(path + ": malformed iteration record");
    *iteration = static_cast<int64_t>(r.data[0]);
  }
}

// Class count recorded in a checkpoint, read without building a model.
inline int checkpoint_num_classes(const std::string& path) {
  for (const auto& r : read_checkpoint_records(path))
    if (r.name == "classifier.weight" && !r.dims.empty())
      return static_cast<int>(r.dims[0]);
  throw DataError(path + " has no classifier tensor");
}

}  // namespace ocseg
