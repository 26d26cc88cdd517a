#include "cccnet/phase3.hpp"

#include <random>
#include <string>

#include "cccnet/error.hpp"
#include "cccnet/ops.hpp"

namespace cccnet {

namespace {

constexpr std::size_t kBranchKernels[] = {5, 3, 3, 3, 1};

std::string branch_layer(Category c, std::size_t i) {
  return std::string(branch_prefix(c)) + "branch.conv" + std::to_string(i + 1);
}

std::string primary_layer(Category c) { return std::string(branch_prefix(c)) + "primary"; }
std::string final_layer(Category c) { return std::string(branch_prefix(c)) + "final"; }

void check_map(const Tensor& t, const Shape& expected, const char* what) {
  if (t.shape() != expected) {
    throw ShapeError(std::string(what) + " has shape " + shape_str(t.shape()) +
                     ", expected " + shape_str(expected));
  }
}

// 7x7 fusion that starts as 0.5 * subtracted + 0.5 * primary at the centre
// tap, plus small seeded noise on the remaining taps.
void add_final_conv(ModelParams& params, const std::string& name, std::mt19937_64& rng) {
  std::normal_distribution<double> noise(0.0, 0.01);
  std::vector<Scalar> w(2 * 7 * 7);
  for (auto& v : w) v = static_cast<Scalar>(noise(rng));
  w[0 * 49 + 24] = Scalar{0.5};
  w[1 * 49 + 24] = Scalar{0.5};
  params.add(name + ".weight", Tensor::from_data({1, 2, 7, 7}, std::move(w), true));
  params.add(name + ".bias", Tensor::zeros({1}, true));
}

}  // namespace

std::string_view branch_prefix(Category c) {
  return c == Category::Sitting ? "sit." : "stand.";
}

void Phase3Config::validate() const {
  if (branch_widths.size() != 5) {
    throw ConfigError("branch_widths needs 5 entries, got " + std::to_string(branch_widths.size()));
  }
  if (branch_widths.back() != 2) {
    throw ConfigError("branch_widths must end with 2 (bi-channel attention)");
  }
  for (auto w : branch_widths)
    if (w == 0) throw ConfigError("branch_widths entries must be positive");
}

Phase3Model Phase3Model::create(const Phase3Config& config, std::uint64_t seed) {
  config.validate();
  Phase3Model m;
  m.config = config;
  std::mt19937_64 rng(seed);
  for (Category c : {Category::Sitting, Category::Standing}) {
    std::size_t in = 3;
    for (std::size_t i = 0; i < 5; ++i) {
      add_conv(m.params, branch_layer(c, i), in, config.branch_widths[i], kBranchKernels[i], rng,
               i == 4 ? 0.1 : 1.0);
      in = config.branch_widths[i];
    }
    m.params.add(primary_layer(c) + ".weight", Tensor::full({1, 2, 1, 1}, Scalar{1}, true));
    m.params.add(primary_layer(c) + ".bias", Tensor::zeros({1}, true));
  }
  for (Category c : {Category::Sitting, Category::Standing}) {
    add_final_conv(m.params, final_layer(c), rng);
  }
  return m;
}

ModelParams Phase3Model::pretrain_params(Category c) const {
  const std::string p(branch_prefix(c));
  const ModelParams branch = params.subset(p + "branch.");
  const ModelParams primary = params.subset(p + "primary.");
  return ModelParams::merged({&branch, &primary});
}

ModelParams Phase3Model::final_params() const {
  const ModelParams sit = params.subset("sit.final.");
  const ModelParams stand = params.subset("stand.final.");
  return ModelParams::merged({&sit, &stand});
}

Tensor branch_attention(const Tensor& category_map, const Tensor& crowd_map,
                        const Tensor& image_small, const Phase3Model& model, Category c) {
  if (category_map.rank() != 3 || category_map.dim(0) != 1) {
    throw ShapeError("branch input maps must be 1xhxw, got " + shape_str(category_map.shape()));
  }
  check_map(crowd_map, category_map.shape(), "crowd map");
  check_map(image_small, category_map.shape(), "downsampled image");
  // Channel order: category map, crowd map, image.
  Tensor x = concat_channels({category_map, crowd_map, image_small});
  for (std::size_t i = 0; i < 5; ++i) {
    x = apply_conv(model.params, branch_layer(c, i), x);
    x = i + 1 < 5 ? relu(x) : sigmoid(x);
  }
  return x;
}

BranchOutput branch_primary(const Tensor& category_map, const Tensor& crowd_map,
                            const Tensor& image_small, const Phase3Model& model,
                            Category c) {
  BranchOutput out;
  out.attention = branch_attention(category_map, crowd_map, image_small, model, c);
  const Tensor gated = concat_channels({mul(channel(out.attention, 0), category_map),
                                        mul(channel(out.attention, 1), crowd_map)});
  out.primary = relu(apply_conv(model.params, primary_layer(c), gated));
  return out;
}

CrossOutput cross_refine(const Tensor& primary_sit, const Tensor& primary_stand,
                         const Tensor& crowd_map, const Phase3Model& model) {
  check_map(primary_stand, primary_sit.shape(), "primary standing map");
  check_map(crowd_map, primary_sit.shape(), "crowd map");
  CrossOutput out;
  out.subtracted_stand = sub(crowd_map, primary_sit);
  out.subtracted_sit = sub(crowd_map, primary_stand);
  out.final_stand = relu(apply_conv(model.params, final_layer(Category::Standing),
                                    concat_channels({out.subtracted_stand, primary_stand})));
  out.final_sit = relu(apply_conv(model.params, final_layer(Category::Sitting),
                                  concat_channels({out.subtracted_sit, primary_sit})));
  return out;
}

Phase3Output phase3_forward(const Phase3Inputs& in, const Phase3Model& model) {
  Phase3Output out;
  out.sit = branch_primary(in.sit_map, in.crowd_map, in.image_small, model, Category::Sitting);
  out.stand = branch_primary(in.stand_map, in.crowd_map, in.image_small, model, Category::Standing);
  out.cross = cross_refine(out.sit.primary, out.stand.primary, in.crowd_map, model);
  return out;
}

std::pair<double, double> categorized_counts(const Tensor& final_sit, const Tensor& final_stand) {
  double s = 0.0, t = 0.0;
  for (Scalar v : final_sit.data()) s += static_cast<double>(v);
  for (Scalar v : final_stand.data()) t += static_cast<double>(v);
  return {s, t};
}

std::pair<double, double> categorized_counts(const DensityMap& final_sit,
                                             const DensityMap& final_stand) {
  return {count(final_sit), count(final_stand)};
}

}  // namespace cccnet
