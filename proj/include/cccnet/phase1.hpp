#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "cccnet/density.hpp"
#include "cccnet/keypoints.hpp"
#include "cccnet/params.hpp"
#include "cccnet/trainer.hpp"
#include "cccnet/training.hpp"

namespace cccnet {

/// Keypoint MLP 51 -> 34 -> 17 -> 12 -> 6 -> 1 with leaky-ReLU hidden layers and a
/// sigmoid output giving P(Standing).
struct ClassifierModel {
  static constexpr std::array<std::size_t, 6> kWidths{51, 34, 17, 12, 6, 1};

  ModelParams params;

  static ClassifierModel create(std::uint64_t seed);
  /// Parameter layout without meaningful values (for checkpoint loading).
  static ClassifierModel empty();
};

/// Network input for one record: joint coordinates relative to the centroid
/// of the visible joints, divided by their extent, followed by confidence.
/// Joints with zero confidence contribute (0, 0, 0).
std::vector<Scalar> pose_features(const KeypointRecord& record);

/// B x 51 features -> B x 1 probabilities.
Tensor classifier_forward(const ClassifierModel& model, const Tensor& features);

double classify(const KeypointRecord& record, const ClassifierModel& model);
std::vector<double> classify_all(std::span<const KeypointRecord> records,
                                 const ClassifierModel& model);

inline Category label_from_probability(double p) {
  return p >= 0.5 ? Category::Standing : Category::Sitting;
}

/// Differentiable BCE for a single probability (label 1 = Standing).
Tensor bce_loss(const Tensor& probability, int label);

/// W = 2 * (confidence sum over joints 1..10) + (confidence sum over 11..16).
double sample_weight(const KeypointRecord& record);

/// s(x, y) = a x + b y + c over the nose position; s >= 0.5 means Standing.
struct DecisionPlane {
  double a = 0.0;
  double b = 0.0;
  double c = 0.0;

  double score(double x, double y) const { return a * x + b * y + c; }
  Category label(double x, double y) const {
    return score(x, y) >= 0.5 ? Category::Standing : Category::Sitting;
  }
};

struct PlaneFit {
  DecisionPlane plane;
  bool fitted = false;
  std::string reason;  // why the fit was skipped, empty when fitted
};

/// Weighted least squares of {0,1} labels on (x_nose, y_nose, 1). Records
/// with non-positive weight are ignored. A singular system (fewer than three
/// usable records, or collinear noses) yields fitted = false.
PlaneFit fit_plane(std::span<const KeypointRecord> records,
                   std::span<const int> baseline_labels, std::span<const double> weights);

/// Classifier label, except where |p - 0.5| < margin and a plane was fitted,
/// in which case the plane decides.
std::vector<Category> refine_labels(std::span<const double> probabilities,
                                    const PlaneFit& plane,
                                    std::span<const KeypointRecord> records,
                                    double margin);

inline constexpr double kDefaultRefineMargin = 0.15;

/// Renders nose points into separate sitting/standing maps.
CategoryMaps basic_category_maps(std::span<const KeypointRecord> records,
                                 std::span<const Category> labels,
                                 std::size_t image_h, std::size_t image_w,
                                 const KernelConfig& kernel = {});

struct Phase1Result {
  std::vector<double> probabilities;
  std::vector<Category> baseline;
  std::vector<Category> refined;
  PlaneFit plane;
  CategoryMaps maps;
};

/// Classify, refine and render for one image.
Phase1Result run_phase1(std::span<const KeypointRecord> records,
                        const ClassifierModel& model, std::size_t image_h,
                        std::size_t image_w, double margin,
                        const KernelConfig& kernel = {});

struct ClassMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  bool precision_defined = true;
  bool recall_defined = true;
  bool f1_defined = true;
};

struct ClassificationReport {
  ClassMetrics sitting;
  ClassMetrics standing;
  double accuracy = 0.0;
  std::size_t true_positive = 0;   // standing predicted standing
  std::size_t false_positive = 0;  // sitting predicted standing
  std::size_t false_negative = 0;  // standing predicted sitting
  std::size_t true_negative = 0;
};

/// Standing is the positive class. Undefined ratios are reported as 0 with
/// the matching *_defined flag cleared.
ClassificationReport classification_metrics(std::span<const Category> predicted,
                                            std::span<const Category> truth);

struct ClassifierSample {
  std::vector<Scalar> features;
  Scalar label = 0;  // 1 = Standing
};

std::vector<ClassifierSample> make_samples(std::span<const KeypointRecord> records);

struct ClassifierTrainLog {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double validation_accuracy = 0.0;
  double learning_rate = 0.0;
};

/// Adam on mean BCE. The snapshot with the best validation accuracy (train
/// accuracy when no validation samples exist) is written back into `model`.
/// `on_epoch`, when set, receives one entry per epoch.
void train_classifier(ClassifierModel& model, std::span<const ClassifierSample> train,
                      std::span<const ClassifierSample> validation,
                      const TrainSchedule& schedule, std::uint64_t seed,
                      const std::function<void(const ClassifierTrainLog&)>& on_epoch = {});

/// Trainer callbacks for mean-BCE training; validation scores are negated
/// accuracy. The model and sample spans must outlive the callbacks.
TrainerCallbacks classifier_callbacks(const ClassifierModel& model,
                                      std::span<const ClassifierSample> train,
                                      std::span<const ClassifierSample> validation);

double classifier_accuracy(const ClassifierModel& model,
                           std::span<const ClassifierSample> samples);

}  // namespace cccnet
