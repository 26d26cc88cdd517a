#include "cccnet/phase2.hpp"

#include <random>

#include "cccnet/density.hpp"
#include "cccnet/error.hpp"
#include "cccnet/ops.hpp"

namespace cccnet {

namespace {

constexpr std::size_t kRegressionKernels[] = {7, 5, 5, 5};

std::string reg_layer(std::size_t i) { return "regression.conv" + std::to_string(i + 1); }
std::string mask_layer(std::size_t i) { return "mask.conv" + std::to_string(i + 1); }

}  // namespace

void Phase2Config::validate() const {
  if (regression_widths.size() != 4) {
    throw ConfigError("regression_widths needs 4 entries, got " +
                      std::to_string(regression_widths.size()));
  }
  if (mask_net_widths.size() != 5) {
    throw ConfigError("mask_net_widths needs 5 entries, got " +
                      std::to_string(mask_net_widths.size()));
  }
  if (mask_net_widths.back() != 2) {
    throw ConfigError("mask_net_widths must end with 2 (one mask per input map)");
  }
  for (auto w : regression_widths)
    if (w == 0) throw ConfigError("regression_widths entries must be positive");
  for (auto w : mask_net_widths)
    if (w == 0) throw ConfigError("mask_net_widths entries must be positive");
}

Phase2Model Phase2Model::create(const Phase2Config& config, std::uint64_t seed) {
  config.validate();
  Phase2Model m;
  m.config = config;
  std::mt19937_64 rng(seed);
  std::size_t in = 1;
  for (std::size_t i = 0; i < 4; ++i) {
    add_conv(m.params, reg_layer(i), in, config.regression_widths[i], kRegressionKernels[i], rng);
    in = config.regression_widths[i];
  }
  add_conv(m.params, reg_layer(4), in, 1, 1, rng, 0.1);

  in = 3;
  for (std::size_t i = 0; i < 5; ++i) {
    const bool last = i == 4;
    add_conv(m.params, mask_layer(i), in, config.mask_net_widths[i], i == 0 ? 7 : 5, rng,
             last ? 0.1 : 1.0);
    in = config.mask_net_widths[i];
  }
  // Starts as an even blend of the two gated maps.
  m.params.add("fusion.weight", Tensor::full({1, 2, 1, 1}, Scalar{1}, true));
  m.params.add("fusion.bias", Tensor::zeros({1}, true));
  return m;
}

Tensor regression_forward(const Tensor& image, const Phase2Model& model) {
  if (image.rank() != 3 || image.dim(0) != 1) {
    throw ShapeError("regression_forward: image must be 1xHxW, got " + shape_str(image.shape()));
  }
  if (image.dim(1) % kDensityScale != 0 || image.dim(2) % kDensityScale != 0) {
    throw ShapeError("regression_forward: image size " + shape_str(image.shape()) +
                     " not divisible by 4");
  }
  Tensor x = relu(apply_conv(model.params, reg_layer(0), image));
  x = maxpool2(x);
  x = relu(apply_conv(model.params, reg_layer(1), x));
  x = maxpool2(x);
  x = relu(apply_conv(model.params, reg_layer(2), x));
  x = relu(apply_conv(model.params, reg_layer(3), x));
  return relu(apply_conv(model.params, reg_layer(4), x));
}

Tensor mask_forward(const Tensor& regression_map, const Tensor& detection_map,
                    const Tensor& image_small, const Phase2Model& model) {
  // Channel order is fixed: regression, image, detection.
  Tensor x = concat_channels({regression_map, image_small, detection_map});
  for (std::size_t i = 0; i < 5; ++i) {
    x = apply_conv(model.params, mask_layer(i), x);
    x = i + 1 < 5 ? relu(x) : sigmoid(x);
  }
  return x;
}

Phase2Output fuse(const Tensor& regression_map, const Tensor& detection_map,
                  const Tensor& image, const Phase2Model& model) {
  if (regression_map.shape() != detection_map.shape()) {
    throw ShapeError("fuse: regression map " + shape_str(regression_map.shape()) +
                     " and detection map " + shape_str(detection_map.shape()) + " differ");
  }
  if (regression_map.rank() != 3 || regression_map.dim(0) != 1) {
    throw ShapeError("fuse: maps must be 1xhxw, got " + shape_str(regression_map.shape()));
  }
  const Tensor small = avgpool_down(image, kDensityScale);
  if (small.dim(1) != regression_map.dim(1) || small.dim(2) != regression_map.dim(2)) {
    throw ShapeError("fuse: image " + shape_str(image.shape()) +
                     " does not downsample to map size " + shape_str(regression_map.shape()));
  }
  Phase2Output out;
  out.regression = regression_map;
  out.masks = mask_forward(regression_map, detection_map, small, model);
  const Tensor gated = concat_channels({mul(channel(out.masks, 0), regression_map),
                                        mul(channel(out.masks, 1), detection_map)});
  out.crowd = relu(apply_conv(model.params, "fusion", gated));
  return out;
}

Phase2Output phase2_forward(const Tensor& image, const Tensor& detection_map,
                            const Phase2Model& model) {
  return fuse(regression_forward(image, model), detection_map, image, model);
}

}  // namespace cccnet
