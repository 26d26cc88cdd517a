#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "cccnet/density.hpp"
#include "cccnet/phase2.hpp"
#include "cccnet/phase3.hpp"
#include "cccnet/synth.hpp"
#include "cccnet/training.hpp"

namespace cccnet {

/// Everything a run depends on besides the data. Defaults reproduce the
/// full-scale schedules; desk-scale runs override epochs and rates.
struct PipelineConfig {
  std::uint64_t seed = 0;
  LossConfig loss;
  KernelConfig kernel;
  double refine_margin = 0.15;
  Phase2Config phase2;
  Phase3Config phase3;
  std::array<TrainSchedule, 4> schedules{
      default_schedule(Phase::Classifier), default_schedule(Phase::Crowd),
      default_schedule(Phase::RefinePretrain), default_schedule(Phase::RefineJoint)};
  SceneConfig scene;
  std::size_t scenes = 100;
  double density_threshold = 25.0;

  TrainSchedule& schedule(Phase p) { return schedules[static_cast<std::size_t>(p)]; }
  const TrainSchedule& schedule(Phase p) const {
    return schedules[static_cast<std::size_t>(p)];
  }

  void validate() const;
};

/// key = value lines with optional [section] headers; '#' starts a comment.
/// Values are numbers, true/false, or comma lists (optionally bracketed).
/// Keys: seed, scenes, refine_margin, density_threshold, regression_widths,
/// mask_net_widths, branch_widths; [loss] sigma_crowd sigma_regression_aux
/// sigma_sit sigma_stand; [kernel] k beta fallback_sigma min_sigma
/// truncation; [phase1] [phase2] [phase3_pre] [phase3_joint] lr epochs batch
/// saddle; [saddle] window escape_lr rel_threshold escape_epochs; [scene]
/// height width min_persons max_persons sitting_fraction occlusion noise
/// sitting_zone_bias unit_min unit_max max_attempts min_visible_joints.
/// Unknown keys and malformed values raise ConfigError.
PipelineConfig parse_config(std::string_view text, PipelineConfig base = {});
PipelineConfig load_config(const std::filesystem::path& path, PipelineConfig base = {});

/// Canonical text form; parse_config(config_to_text(c)) == c.
std::string config_to_text(const PipelineConfig& config);

}  // namespace cccnet
