#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <set>
#include <string>
#include <vector>

#include "cccnet/config.hpp"
#include "cccnet/phase1.hpp"
#include "cccnet/phase2.hpp"
#include "cccnet/phase3.hpp"
#include "cccnet/trainer.hpp"

namespace cccnet {

struct SceneRecord {
  std::string id;
  Tensor image;  // 1 x H x W
  std::vector<PersonAnnotation> persons;
  std::vector<KeypointRecord> keypoints;
  CategoryMaps gt;  // quarter resolution
};

/// Scenes plus the persisted split. Every scene() lookup is recorded so tests
/// can audit which indices a training phase touched.
class Dataset {
 public:
  Dataset(std::vector<SceneRecord> scenes, DatasetSplit split);

  /// Loads a corpus directory and renders ground-truth maps with `kernel`.
  static Dataset load(const std::filesystem::path& corpus_dir, const KernelConfig& kernel);
  /// Builds records from generated scenes (no disk round trip).
  static Dataset from_samples(const std::vector<SceneSample>& samples, DatasetSplit split,
                              const KernelConfig& kernel);

  std::size_t size() const noexcept { return scenes_.size(); }
  const DatasetSplit& split() const noexcept { return split_; }
  const SceneRecord& scene(std::size_t index) const;

  const std::set<std::size_t>& accessed() const noexcept { return accessed_; }
  void clear_access_log() const { accessed_.clear(); }

 private:
  std::vector<SceneRecord> scenes_;
  DatasetSplit split_;
  mutable std::set<std::size_t> accessed_;
};

/// Artifact file names inside a model directory.
namespace artifact {
inline constexpr const char* kPhase1 = "phase1.cccp";
inline constexpr const char* kPhase2 = "phase2.cccp";
inline constexpr const char* kSitPre = "phase3_sit_pre.cccp";
inline constexpr const char* kStandPre = "phase3_stand_pre.cccp";
inline constexpr const char* kPhase3 = "phase3.cccp";
}  // namespace artifact

struct RunOptions {
  /// Continue from the saved training state if one exists.
  bool resume = false;
  /// Stop after this many epochs in total (training state is still saved).
  std::size_t stop_at = std::numeric_limits<std::size_t>::max();
  std::function<void(const std::string& stage, const EpochRecord&)> progress;
};

struct PhaseResult {
  std::vector<std::filesystem::path> artifacts;
  /// One entry per epoch for every trainer in the phase (3-pre has two).
  std::vector<std::pair<std::string, EpochRecord>> log;
  bool complete = false;
};

/// Trains one phase on the training split, keeping the best-on-validation
/// parameters. Phase k reads the frozen artifacts of earlier phases from
/// `model_dir` and fails with MissingArtifactError naming any absent file.
/// Writes the phase checkpoint(s), a resumable *.state.cccp and a CSV log
/// (epoch, split, loss, lr, escape).
PhaseResult run_phase(Phase phase, const Dataset& data, const PipelineConfig& config,
                      const std::filesystem::path& model_dir, const RunOptions& options = {});

struct ModelBundle {
  ClassifierModel classifier;
  Phase2Model phase2;
  Phase3Model phase3;
};

/// Loads all final checkpoints; missing files raise MissingArtifactError.
ModelBundle load_bundle(const std::filesystem::path& model_dir, const PipelineConfig& config);

struct Inference {
  Phase1Result phase1;
  DensityMap crowd;
  DensityMap final_sit;
  DensityMap final_stand;

  double sdbc_sit() const { return count(phase1.maps.sitting); }
  double sdbc_stand() const { return count(phase1.maps.standing); }
  double sit() const { return count(final_sit); }
  double stand() const { return count(final_stand); }
};

/// Full three-phase forward pass for one image and its keypoint records.
Inference infer(const ModelBundle& models, const Tensor& image,
                std::span<const KeypointRecord> keypoints, const PipelineConfig& config);

/// Deterministic per-purpose seed derived from the run seed.
std::uint64_t derive_seed(std::uint64_t seed, std::string_view purpose);

}  // namespace cccnet
