#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "pdemix/scalar_field.hpp"

namespace pdemix {

/// Parameters a synthetic sample was generated with.
struct GroundTruth {
  std::size_t component_id = 0;
  double z_x = 0.0;
  double z_r = 0.0;

  friend bool operator==(const GroundTruth&, const GroundTruth&) = default;
};

/// One individual's observation sequence. frames[0] is the initial field.
struct SampleRecord {
  std::string id;
  std::vector<ScalarField> frames;
  std::vector<double> times;
  std::optional<GroundTruth> truth;

  std::size_t rows() const { return frames.empty() ? 0 : frames.front().rows(); }
  std::size_t cols() const { return frames.empty() ? 0 : frames.front().cols(); }

  friend bool operator==(const SampleRecord&, const SampleRecord&) = default;
};

}  // namespace pdemix
