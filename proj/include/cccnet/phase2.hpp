#pragma once

#include <cstdint>
#include <vector>

#include "cccnet/params.hpp"

namespace cccnet {

struct Phase2Config {
  /// Widths of the four ReLU conv layers of the regression branch
  /// (7x7, pool, 5x5, pool, 5x5, 5x5); a 1x1 conv to one channel follows.
  std::vector<std::size_t> regression_widths{20, 40, 20, 10};
  /// Mask-net widths: one 7x7 layer then 5x5 layers; the last must be 2.
  std::vector<std::size_t> mask_net_widths{16, 16, 16, 8, 2};

  void validate() const;
};

/// Crowd-map model: regression branch, two-mask attention net and the 1x1
/// fusion layer. Parameters are prefixed "regression.", "mask." and
/// "fusion.".
struct Phase2Model {
  Phase2Config config;
  ModelParams params;

  static Phase2Model create(const Phase2Config& config, std::uint64_t seed);

  ModelParams regression_params() const { return params.subset("regression."); }
  ModelParams mask_params() const { return params.subset("mask."); }
  ModelParams fusion_params() const { return params.subset("fusion."); }
};

/// 1 x H x W image -> 1 x H/4 x W/4 non-negative regression map.
Tensor regression_forward(const Tensor& image, const Phase2Model& model);

/// Two sigmoid masks (regression gate, detection gate) from the stacked
/// [regression, downsampled image, detection] channels.
Tensor mask_forward(const Tensor& regression_map, const Tensor& detection_map,
                    const Tensor& image_small, const Phase2Model& model);

struct Phase2Output {
  Tensor regression;  // 1 x h x w
  Tensor masks;       // 2 x h x w
  Tensor crowd;       // 1 x h x w
};

/// Fuses a regression map and a detection crowd map (sit + stand basic maps)
/// through the masks; `image` is full resolution and is block-averaged by 4.
Phase2Output fuse(const Tensor& regression_map, const Tensor& detection_map,
                  const Tensor& image, const Phase2Model& model);

/// regression_forward followed by fuse.
Phase2Output phase2_forward(const Tensor& image, const Tensor& detection_map,
                            const Phase2Model& model);

}  // namespace cccnet
