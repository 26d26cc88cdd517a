#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "cccnet/density.hpp"
#include "cccnet/keypoints.hpp"
#include "cccnet/tensor.hpp"
#include "cccnet/training.hpp"

namespace cccnet {

struct SceneConfig {
  std::size_t height = 64;
  std::size_t width = 64;
  std::size_t min_persons = 1;
  std::size_t max_persons = 10;
  double sitting_fraction = 0.5;
  /// Allowed overlap between figure boxes (intersection over the smaller
  /// box); also drives which joints end up covered.
  double occlusion = 0.3;
  double noise = 0.03;
  /// Probability that a person is placed in its category's zone (sitting in
  /// the lower half of the frame, standing in the upper half).
  double sitting_zone_bias = 0.7;
  /// Head unit range in pixels (figure height is about 8 units); 0 picks a
  /// range proportional to the image size.
  double unit_min = 0.0;
  double unit_max = 0.0;
  std::size_t max_attempts = 200;
  /// A person is detected only if the nose and at least this many joints
  /// are uncovered.
  std::size_t min_visible_joints = 12;
  std::uint64_t seed = 0;

  void validate() const;
  std::pair<double, double> unit_range() const;
};

struct SceneSample {
  std::string id;
  Tensor image;  // 1 x H x W in [0, 1]
  std::vector<PersonAnnotation> annotations;
  /// Detected persons only; `person` indexes into annotations.
  std::vector<KeypointRecord> keypoints;
  std::size_t requested_persons = 0;
  bool placement_incomplete = false;
};

/// Draws one scene. Persons are rejection-sampled onto the canvas; covered
/// joints get confidence 0 and coordinates (0, 0); a person whose nose is
/// covered or who keeps fewer than min_visible_joints visible joints is not
/// detected (no keypoint record).
SceneSample generate_scene(const SceneConfig& cfg, std::mt19937_64& rng,
                           std::string id = "scene");
SceneSample generate_scene(const SceneConfig& cfg);

/// Scale-free posture feature: (ankle_y - hip_y) / (hip_y - nose_y) using
/// joint-pair means. Separates the two pose templates when unoccluded.
double leg_extent_ratio(const KeypointRecord& record);
inline constexpr double kLegExtentThreshold = 0.72;

// Raw image file: "CCIM", u32 version, u32 H, u32 W, H*W f32 row-major.
inline constexpr std::uint32_t kImageVersion = 1;
void write_image(const std::filesystem::path& path, const Tensor& image);
Tensor read_image(const std::filesystem::path& path);

struct CorpusScene {
  std::string id;
  Tensor image;
  ImageAnnotations annotations;
  ImageKeypoints keypoints;
};

struct Corpus {
  std::filesystem::path root;
  std::vector<CorpusScene> scenes;
  DatasetSplit split;
};

/// Writes images/, annotations/, keypoints/, manifest.json and split.json.
/// Scene i uses an RNG seeded from (seed, i), so output is byte-identical
/// for equal arguments.
void generate_corpus(const std::filesystem::path& dir, std::size_t n_scenes,
                     const SceneConfig& cfg, std::uint64_t seed);

Corpus load_corpus(const std::filesystem::path& dir);

/// FNV-1a 64 over every regular file (relative path and contents), visited
/// in sorted path order.
std::uint64_t directory_checksum(const std::filesystem::path& dir);

}  // namespace cccnet
