#pragma once

#include <cstdint>
#include <vector>

#include "cccnet/params.hpp"

namespace cccnet {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// First/second moment buffers aligned with a ModelParams ordering.
struct AdamState {
  AdamConfig config;
  std::uint64_t step = 0;
  std::vector<std::vector<Scalar>> first_moment;
  std::vector<std::vector<Scalar>> second_moment;

  AdamState() = default;
  AdamState(const ModelParams& params, AdamConfig cfg);

  /// Stores the moments as `adam.m.<name>` / `adam.v.<name>` entries plus an
  /// `adam.step` scalar, for resumable training state.
  void export_to(const ModelParams& params, ModelParams& out) const;
  void import_from(const ModelParams& params, const ModelParams& in);
};

/// One bias-corrected Adam update over every parameter, then zeroes the
/// gradients. Throws InvalidArgument naming the first parameter without a
/// gradient buffer.
void adam_step(ModelParams& params, AdamState& state);

}  // namespace cccnet
