#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "cccnet/density.hpp"
#include "cccnet/params.hpp"

namespace cccnet {

struct Phase3Config {
  /// Segregation branch: 5x5, 3x3, 3x3, 3x3, 1x1 convs; the last width is
  /// the 2-channel attention output.
  std::vector<std::size_t> branch_widths{20, 20, 20, 10, 2};

  void validate() const;
};

/// Two category branches ("sit.", "stand.") each with a 5-layer attention
/// CNN ("<cat>.branch."), a 1x1 primary fusion ("<cat>.primary.") and a 7x7
/// cross-connection fusion ("<cat>.final.").
struct Phase3Model {
  Phase3Config config;
  ModelParams params;

  static Phase3Model create(const Phase3Config& config, std::uint64_t seed);

  /// Parameters trained during branch pre-training (attention + primary).
  ModelParams pretrain_params(Category c) const;
  ModelParams final_params() const;
};

std::string_view branch_prefix(Category c);

/// Inputs are quarter resolution, 1 x h x w each.
Tensor branch_attention(const Tensor& category_map, const Tensor& crowd_map,
                        const Tensor& image_small, const Phase3Model& model, Category c);

struct BranchOutput {
  Tensor attention;  // 2 x h x w
  Tensor primary;    // 1 x h x w
};

/// relu(conv1x1([A0 * category_map, A1 * crowd_map])).
BranchOutput branch_primary(const Tensor& category_map, const Tensor& crowd_map,
                            const Tensor& image_small, const Phase3Model& model,
                            Category c);

struct CrossOutput {
  Tensor subtracted_sit;    // crowd - primary_stand
  Tensor subtracted_stand;  // crowd - primary_sit
  Tensor final_sit;
  Tensor final_stand;
};

/// Each final map sees the crowd map minus the other branch's primary map,
/// stacked with its own primary map, through a 7x7 conv and ReLU.
CrossOutput cross_refine(const Tensor& primary_sit, const Tensor& primary_stand,
                         const Tensor& crowd_map, const Phase3Model& model);

struct Phase3Inputs {
  Tensor sit_map;      // basic sitting map from detection
  Tensor stand_map;    // basic standing map from detection
  Tensor crowd_map;    // total crowd map
  Tensor image_small;  // image block-averaged by 4
};

struct Phase3Output {
  BranchOutput sit;
  BranchOutput stand;
  CrossOutput cross;
};

Phase3Output phase3_forward(const Phase3Inputs& in, const Phase3Model& model);

/// (sum of final sitting map, sum of final standing map).
std::pair<double, double> categorized_counts(const Tensor& final_sit, const Tensor& final_stand);
std::pair<double, double> categorized_counts(const DensityMap& final_sit,
                                             const DensityMap& final_stand);

}  // namespace cccnet
