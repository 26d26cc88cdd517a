#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <span>

#include "cccnet/adam.hpp"
#include "cccnet/params.hpp"
#include "cccnet/training.hpp"

namespace cccnet {

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double validation = 0.0;  // lower is better
  double learning_rate = 0.0;
  bool escape = false;
};

/// Callbacks the phase supplies. train_batch must run forward and backward
/// for the given training-sample indices and return the batch loss; the
/// trainer then takes one Adam step. validate returns a lower-is-better
/// score for best-snapshot selection.
struct TrainerCallbacks {
  std::function<double(std::span<const std::size_t> batch)> train_batch;
  std::function<double()> validate;
};

/// Deterministic mini-batch Adam loop with saddle escape and best-on-
/// validation snapshots. Sample order in epoch e depends only on (seed, e),
/// so a run restored from export_state() continues on the same trajectory.
class Trainer {
 public:
  Trainer(ModelParams params, TrainSchedule schedule, std::uint64_t seed,
          std::size_t train_size);

  /// Trains until schedule.epochs epochs (or `stop_at`, if smaller) have
  /// completed in total.
  void run(const TrainerCallbacks& callbacks,
           const std::function<void(const EpochRecord&)>& on_epoch = {},
           std::size_t stop_at = static_cast<std::size_t>(-1));

  std::size_t epochs_done() const noexcept { return epoch_; }
  bool has_best() const noexcept { return has_best_; }
  double best_validation() const noexcept { return best_value_; }
  /// Best snapshot, or the current parameters if no epoch has finished.
  const ModelParams& best_params() const;
  const ModelParams& params() const noexcept { return params_; }
  const LearningRateController& lr_controller() const noexcept { return lr_; }

  /// Full training state: parameters, optimizer moments, best snapshot, epoch
  /// counter and learning-rate controller, as a checkpoint-ready collection.
  ModelParams export_state() const;
  void import_state(const ModelParams& state);

  /// Shuffled training order for one epoch.
  static std::vector<std::size_t> epoch_order(std::uint64_t seed, std::size_t epoch,
                                              std::size_t n);

 private:
  ModelParams params_;
  TrainSchedule schedule_;
  std::uint64_t seed_;
  std::size_t train_size_;
  AdamState adam_;
  LearningRateController lr_;
  std::size_t epoch_ = 0;
  bool has_best_ = false;
  double best_value_ = 0.0;
  ModelParams best_;
};

}  // namespace cccnet
