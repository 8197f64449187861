// Shared error types and small utilities used across the library.
#pragma once

#include <cstdint>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace ocseg {

// Error families. The CLI maps these onto exit codes: UsageError -> 2,
// everything else -> 1.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ShapeError : Error {
  using Error::Error;
};
struct ContractError : Error {
  using Error::Error;
};
struct NumericError : Error {
  using Error::Error;
};
struct DataError : Error {
  using Error::Error;
};
struct IoError : Error {
  using Error::Error;
};
struct UsageError : Error {
  using Error::Error;
};

inline int64_t shape_numel(const std::vector<int>& shape) {
  int64_t n = 1;
  for (int d : shape) n *= d;
  return n;
}

inline std::string shape_str(const std::vector<int>& shape) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << "x";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

// (batch, channels, height, width) extents of a rank-4 feature map.
struct Shape4 {
  int batch = 0;
  int channels = 0;
  int height = 0;
  int width = 0;

  Shape4() = default;
  Shape4(int b, int c, int h, int w) : batch(b), channels(c), height(h), width(w) {
    if (b < 1 || c < 1 || h < 1 || w < 1)
      throw ContractError("Shape4: all extents must be >= 1, got " +
                          shape_str({b, c, h, w}));
  }

  int pixels() const { return height * width; }
};

}  // namespace ocseg
