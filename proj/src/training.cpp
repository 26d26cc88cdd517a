#include "cccnet/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include <json.hpp>

#include "cccnet/error.hpp"
#include "cccnet/ops.hpp"

namespace cccnet {

std::string_view phase_name(Phase p) {
  switch (p) {
    case Phase::Classifier: return "1";
    case Phase::Crowd: return "2";
    case Phase::RefinePretrain: return "3-pre";
    case Phase::RefineJoint: return "3-joint";
  }
  return "?";
}

Phase parse_phase(std::string_view name) {
  if (name == "1") return Phase::Classifier;
  if (name == "2") return Phase::Crowd;
  if (name == "3-pre") return Phase::RefinePretrain;
  if (name == "3-joint") return Phase::RefineJoint;
  throw ConfigError("unknown phase \"" + std::string(name) +
                    "\" (expected 1, 2, 3-pre or 3-joint)");
}

void LossConfig::validate() const {
  for (double s : {sigma_crowd, sigma_regression_aux, sigma_stand, sigma_sit}) {
    if (!(s >= 0.0) || !std::isfinite(s)) throw ConfigError("loss weights must be finite and >= 0");
  }
  if (!(sigma_crowd > 0.0 && sigma_stand > 0.0 && sigma_sit > 0.0)) {
    throw ConfigError("sigma_crowd, sigma_sit and sigma_stand must be positive");
  }
  if (!(sigma_sit > sigma_stand)) {
    throw ConfigError("sigma_sit must exceed sigma_stand");
  }
}

void TrainSchedule::validate() const {
  if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
  if (epochs == 0) throw ConfigError("epochs must be positive");
  if (batch_size == 0) throw ConfigError("batch size must be positive");
  if (saddle.enabled) {
    if (saddle.window < 2) throw ConfigError("saddle window must be at least 2");
    if (!(saddle.escape_lr > 0.0)) throw ConfigError("saddle escape lr must be positive");
    if (saddle.escape_epochs == 0) throw ConfigError("saddle escape epochs must be positive");
  }
}

TrainSchedule default_schedule(Phase phase) {
  TrainSchedule s;
  s.phase = phase;
  switch (phase) {
    case Phase::Classifier:
      s.learning_rate = 8e-3;
      s.epochs = 10000;
      s.batch_size = 512;
      break;
    case Phase::Crowd:
      s.learning_rate = 1e-6;
      s.epochs = 1500;
      s.batch_size = 64;
      s.saddle.enabled = true;
      break;
    case Phase::RefinePretrain:
      s.learning_rate = 1e-5;
      s.epochs = 1000;
      s.batch_size = 64;
      break;
    case Phase::RefineJoint:
      s.learning_rate = 1e-6;
      s.epochs = 1000;
      s.batch_size = 64;
      break;
  }
  return s;
}

Tensor weighted_mse(const Tensor& pred, const Tensor& gt, double sigma, std::size_t n) {
  if (pred.shape() != gt.shape()) {
    throw ShapeError("weighted_mse: prediction " + shape_str(pred.shape()) +
                     " vs ground truth " + shape_str(gt.shape()));
  }
  if (n == 0) throw InvalidArgument("weighted_mse: image count must be positive");
  return scale(sum_all(square(sub(pred, gt))), static_cast<Scalar>(sigma / static_cast<double>(n)));
}

Tensor weighted_mse(std::span<const Tensor> preds, std::span<const Tensor> gts,
                    double sigma) {
  if (preds.size() != gts.size() || preds.empty()) {
    throw ShapeError("weighted_mse: need matching non-empty batches");
  }
  Tensor total = weighted_mse(preds[0], gts[0], sigma, preds.size());
  for (std::size_t i = 1; i < preds.size(); ++i) {
    total = add(total, weighted_mse(preds[i], gts[i], sigma, preds.size()));
  }
  return total;
}

Tensor phase2_loss(const Tensor& final_map, const Tensor& regression_map,
                   const Tensor& gt_map, const LossConfig& cfg, std::size_t n) {
  Tensor loss = weighted_mse(final_map, gt_map, cfg.sigma_crowd, n);
  if (cfg.sigma_regression_aux > 0.0) {
    loss = add(loss, weighted_mse(regression_map, gt_map, cfg.sigma_regression_aux, n));
  }
  return loss;
}

Tensor phase3_joint_loss(const Tensor& final_sit, const Tensor& final_stand,
                         const Tensor& gt_sit, const Tensor& gt_stand,
                         const LossConfig& cfg, std::size_t n) {
  return add(weighted_mse(final_sit, gt_sit, cfg.sigma_sit, n),
             weighted_mse(final_stand, gt_stand, cfg.sigma_stand, n));
}

SaddleState saddle_monitor(std::span<const double> loss_history, std::size_t window,
                           double rel_threshold) {
  if (loss_history.empty()) throw InvalidArgument("saddle_monitor: empty loss history");
  if (window < 2 || loss_history.size() < window) return SaddleState::Normal;
  const double first = loss_history[loss_history.size() - window];
  const double last = loss_history.back();
  if (first == 0.0) return SaddleState::Normal;
  return std::abs((first - last) / first) < rel_threshold ? SaddleState::Escape
                                                          : SaddleState::Normal;
}

LearningRateController::LearningRateController(double base_lr, SaddleConfig saddle)
    : base_(base_lr), current_(base_lr), saddle_(saddle) {}

bool LearningRateController::observe(double epoch_loss) {
  if (remaining_ > 0) {
    if (--remaining_ == 0) current_ = base_;
    return false;
  }
  if (!saddle_.enabled) return false;
  // Histories are kept at single precision so saved training state resumes
  // onto exactly the same decisions.
  history_.push_back(static_cast<double>(static_cast<float>(epoch_loss)));
  if (saddle_monitor(history_, saddle_.window, saddle_.rel_threshold) == SaddleState::Escape) {
    current_ = saddle_.escape_lr;
    remaining_ = saddle_.escape_epochs;
    history_.clear();
    return true;
  }
  if (history_.size() > saddle_.window) history_.erase(history_.begin());
  return false;
}

std::vector<double> LearningRateController::export_state() const {
  std::vector<double> s{static_cast<double>(remaining_), current_};
  s.insert(s.end(), history_.begin(), history_.end());
  return s;
}

void LearningRateController::import_state(std::span<const double> state) {
  if (state.size() < 2) throw FormatError("learning-rate state too short");
  remaining_ = static_cast<std::size_t>(state[0]);
  current_ = remaining_ > 0 ? saddle_.escape_lr : base_;
  history_.assign(state.begin() + 2, state.end());
}

DatasetSplit split_dataset(std::size_t n, std::uint64_t seed) {
  if (n < 3) throw InvalidArgument("split_dataset: need at least 3 items, got " + std::to_string(n));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  // Fisher-Yates with an explicit draw so the permutation does not depend on
  // the standard library's shuffle implementation.
  for (std::size_t i = n - 1; i > 0; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % (i + 1));
    std::swap(order[i], order[j]);
  }
  const std::size_t n_train = n * 7 / 10;
  const std::size_t n_val = n * 15 / 100;
  DatasetSplit split;
  split.seed = seed;
  split.total = n;
  split.train.assign(order.begin(), order.begin() + static_cast<long>(n_train));
  split.validation.assign(order.begin() + static_cast<long>(n_train),
                          order.begin() + static_cast<long>(n_train + n_val));
  split.test.assign(order.begin() + static_cast<long>(n_train + n_val), order.end());
  return split;
}

std::string split_to_json(const DatasetSplit& split) {
  nlohmann::json doc = {{"seed", split.seed},
                        {"total", split.total},
                        {"train", split.train},
                        {"validation", split.validation},
                        {"test", split.test}};
  return doc.dump(1) + "\n";
}

DatasetSplit split_from_json(std::string_view text) {
  try {
    const auto doc = nlohmann::json::parse(text);
    DatasetSplit s;
    s.seed = doc.at("seed").get<std::uint64_t>();
    s.total = doc.at("total").get<std::size_t>();
    s.train = doc.at("train").get<std::vector<std::size_t>>();
    s.validation = doc.at("validation").get<std::vector<std::size_t>>();
    s.test = doc.at("test").get<std::vector<std::size_t>>();
    if (s.train.size() + s.validation.size() + s.test.size() != s.total) {
      throw FormatError("split: partition sizes do not add up to total");
    }
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("split: ") + e.what());
  }
}

}  // namespace cccnet
