#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cccnet/tensor.hpp"

namespace cccnet {

enum class Phase { Classifier, Crowd, RefinePretrain, RefineJoint };

std::string_view phase_name(Phase p);  // "1", "2", "3-pre", "3-joint"
Phase parse_phase(std::string_view name);

/// Loss weights. sigma_sit > sigma_stand counters the drift toward the
/// standing branch during joint training.
struct LossConfig {
  double sigma_crowd = 3.5e4;
  double sigma_regression_aux = 3.5e2;
  double sigma_stand = 3.5e4;
  double sigma_sit = 1.2 * 3.5e4;

  void validate() const;
};

struct SaddleConfig {
  bool enabled = false;
  std::size_t window = 15;
  double escape_lr = 5e-4;
  double rel_threshold = 1e-4;
  std::size_t escape_epochs = 5;
};

struct TrainSchedule {
  Phase phase = Phase::Classifier;
  double learning_rate = 8e-3;
  std::size_t epochs = 10000;
  std::size_t batch_size = 512;
  SaddleConfig saddle;

  void validate() const;
};

/// Full-scale schedule for each phase: 1 -> lr 8e-3, 10000 epochs, batch 512;
/// 2 -> lr 1e-6, 1500 epochs, batch 64 with saddle escape; 3-pre -> lr 1e-5,
/// 1000 epochs; 3-joint -> lr 1e-6, 1000 epochs, batch 64.
TrainSchedule default_schedule(Phase phase);

/// sigma / n * sum over pixels of (pred - gt)^2 for one image. Summing this
/// over the n images of a batch gives the batch loss.
Tensor weighted_mse(const Tensor& pred, const Tensor& gt, double sigma, std::size_t n);
/// Batch form: sigma / n * sum_i ||pred_i - gt_i||^2 with n = preds.size().
Tensor weighted_mse(std::span<const Tensor> preds, std::span<const Tensor> gts,
                    double sigma);

/// Crowd-map loss plus the regression-branch auxiliary loss, one image of n.
Tensor phase2_loss(const Tensor& final_map, const Tensor& regression_map,
                   const Tensor& gt_map, const LossConfig& cfg, std::size_t n);

/// sigma_sit-weighted sitting error plus sigma_stand-weighted standing error.
Tensor phase3_joint_loss(const Tensor& final_sit, const Tensor& final_stand,
                         const Tensor& gt_sit, const Tensor& gt_stand,
                         const LossConfig& cfg, std::size_t n);

enum class SaddleState { Normal, Escape };

/// Escape when the relative change across the last `window` losses is below
/// rel_threshold. Histories shorter than the window are Normal.
SaddleState saddle_monitor(std::span<const double> loss_history, std::size_t window,
                           double rel_threshold);

/// Per-epoch learning-rate control with saddle escape: on Escape the rate
/// snaps to escape_lr for escape_epochs epochs, then back to the base rate,
/// and the monitoring window restarts.
class LearningRateController {
 public:
  LearningRateController() = default;
  LearningRateController(double base_lr, SaddleConfig saddle);

  double current_lr() const noexcept { return current_; }
  bool escaping() const noexcept { return remaining_ > 0; }
  std::size_t escape_epochs_remaining() const noexcept { return remaining_; }
  const std::vector<double>& history() const noexcept { return history_; }

  /// Records the finished epoch's training loss. Returns true if this call
  /// triggered an escape.
  bool observe(double epoch_loss);

  std::vector<double> export_state() const;
  void import_state(std::span<const double> state);

 private:
  double base_ = 0.0;
  double current_ = 0.0;
  SaddleConfig saddle_;
  std::size_t remaining_ = 0;
  std::vector<double> history_;
};

struct DatasetSplit {
  std::uint64_t seed = 0;
  std::size_t total = 0;
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
  std::vector<std::size_t> test;
};

/// Seeded shuffle, then train = floor(0.7 n), validation = floor(0.15 n),
/// test = the rest.
DatasetSplit split_dataset(std::size_t n, std::uint64_t seed);

std::string split_to_json(const DatasetSplit& split);
DatasetSplit split_from_json(std::string_view text);

}  // namespace cccnet
