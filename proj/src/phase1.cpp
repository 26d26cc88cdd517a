#include "cccnet/phase1.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <random>

#include "cccnet/error.hpp"
#include "cccnet/ops.hpp"
#include "cccnet/trainer.hpp"

namespace cccnet {

namespace {

std::string layer_name(std::size_t i) { return "classifier.fc" + std::to_string(i + 1); }

constexpr Scalar kHiddenSlope = Scalar{0.01};

}  // namespace

ClassifierModel ClassifierModel::create(std::uint64_t seed) {
  ClassifierModel m;
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i + 1 < kWidths.size(); ++i) {
    add_dense(m.params, layer_name(i), kWidths[i], kWidths[i + 1], rng);
    // Small positive hidden biases keep the narrow ReLU layers from starting
    // (or being pushed) entirely inactive.
    if (i + 2 < kWidths.size()) {
      for (auto& b : m.params.at(layer_name(i) + ".bias").mutable_data()) b = Scalar{0.1};
    }
  }
  return m;
}

ClassifierModel ClassifierModel::empty() { return create(0); }

std::vector<Scalar> pose_features(const KeypointRecord& record) {
  double cx = 0.0, cy = 0.0;
  double min_x = 0.0, max_x = 0.0, min_y = 0.0, max_y = 0.0;
  std::size_t visible = 0;
  for (const auto& j : record.joints) {
    if (j.confidence <= 0.0) continue;
    if (visible == 0) {
      min_x = max_x = j.x;
      min_y = max_y = j.y;
    }
    min_x = std::min(min_x, j.x);
    max_x = std::max(max_x, j.x);
    min_y = std::min(min_y, j.y);
    max_y = std::max(max_y, j.y);
    cx += j.x;
    cy += j.y;
    ++visible;
  }
  std::vector<Scalar> out(kKeypointValues, Scalar{0});
  if (visible == 0) return out;
  cx /= static_cast<double>(visible);
  cy /= static_cast<double>(visible);
  const double extent = std::max({max_x - min_x, max_y - min_y, 1.0});
  for (std::size_t i = 0; i < kJointCount; ++i) {
    const auto& j = record.joints[i];
    if (j.confidence <= 0.0) continue;
    out[3 * i] = static_cast<Scalar>((j.x - cx) / extent);
    out[3 * i + 1] = static_cast<Scalar>((j.y - cy) / extent);
    out[3 * i + 2] = static_cast<Scalar>(j.confidence);
  }
  return out;
}

Tensor classifier_forward(const ClassifierModel& model, const Tensor& features) {
  Tensor x = features;
  const std::size_t layers = ClassifierModel::kWidths.size() - 1;
  for (std::size_t i = 0; i < layers; ++i) {
    x = apply_dense(model.params, layer_name(i), x);
    x = (i + 1 < layers) ? leaky_relu(x, kHiddenSlope) : sigmoid(x);
  }
  return x;
}

std::vector<double> classify_all(std::span<const KeypointRecord> records,
                                 const ClassifierModel& model) {
  if (records.empty()) return {};
  std::vector<Scalar> feats;
  feats.reserve(records.size() * kKeypointValues);
  for (const auto& r : records) {
    const auto f = pose_features(r);
    feats.insert(feats.end(), f.begin(), f.end());
  }
  // Inference runs on detached parameters so no graph is recorded.
  ClassifierModel frozen;
  for (const auto& e : model.params) frozen.params.add(e.name, e.tensor.detach());
  const Tensor p = classifier_forward(
      frozen, Tensor::from_data({records.size(), kKeypointValues}, std::move(feats)));
  return {p.data().begin(), p.data().end()};
}

double classify(const KeypointRecord& record, const ClassifierModel& model) {
  return classify_all(std::span(&record, 1), model).front();
}

Tensor bce_loss(const Tensor& probability, int label) {
  if (label != 0 && label != 1) throw InvalidArgument("bce_loss: label must be 0 or 1");
  const Scalar target = static_cast<Scalar>(label);
  return binary_cross_entropy(probability, std::span(&target, 1));
}

double sample_weight(const KeypointRecord& record) {
  double upper = 0.0, lower = 0.0;
  for (std::size_t i = kUpperBodyBegin; i < kLowerBodyBegin; ++i) upper += record.joints[i].confidence;
  for (std::size_t i = kLowerBodyBegin; i < kJointCount; ++i) lower += record.joints[i].confidence;
  return 2.0 * upper + lower;
}

PlaneFit fit_plane(std::span<const KeypointRecord> records,
                   std::span<const int> baseline_labels, std::span<const double> weights) {
  if (records.size() != baseline_labels.size() || records.size() != weights.size()) {
    throw ShapeError("fit_plane: records, labels and weights must align");
  }
  PlaneFit fit;
  double wsum = 0.0, mx = 0.0, my = 0.0;
  std::size_t usable = 0;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (!(weights[i] > 0.0)) continue;
    ++usable;
    wsum += weights[i];
    mx += weights[i] * records[i].nose().x;
    my += weights[i] * records[i].nose().y;
  }
  if (usable < 3) {
    fit.reason = "fewer than 3 records with positive weight";
    return fit;
  }
  mx /= wsum;
  my /= wsum;
  double sx = 0.0, sy = 0.0;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (!(weights[i] > 0.0)) continue;
    sx += weights[i] * std::pow(records[i].nose().x - mx, 2);
    sy += weights[i] * std::pow(records[i].nose().y - my, 2);
  }
  sx = std::sqrt(sx / wsum);
  sy = std::sqrt(sy / wsum);
  if (sx < 1e-9 || sy < 1e-9) {
    fit.reason = "collinear nose positions";
    return fit;
  }

  // Normal equations in standardised coordinates: [u, v, 1].
  double a[3][4] = {};
  for (std::size_t i = 0; i < records.size(); ++i) {
    const double w = weights[i];
    if (!(w > 0.0)) continue;
    const double phi[3] = {(records[i].nose().x - mx) / sx, (records[i].nose().y - my) / sy, 1.0};
    const double y = baseline_labels[i] != 0 ? 1.0 : 0.0;
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) a[r][c] += w * phi[r] * phi[c];
      a[r][3] += w * y * phi[r];
    }
  }
  double scale = 0.0;
  for (auto& row : a)
    for (int c = 0; c < 3; ++c) scale = std::max(scale, std::abs(row[c]));
  for (int col = 0; col < 3; ++col) {
    int pivot = col;
    for (int r = col + 1; r < 3; ++r) {
      if (std::abs(a[r][col]) > std::abs(a[pivot][col])) pivot = r;
    }
    if (std::abs(a[pivot][col]) < 1e-10 * scale) {
      fit.reason = "collinear nose positions";
      return fit;
    }
    if (pivot != col) std::swap(a[pivot], a[col]);
    for (int r = 0; r < 3; ++r) {
      if (r == col) continue;
      const double f = a[r][col] / a[col][col];
      for (int c = col; c < 4; ++c) a[r][c] -= f * a[col][c];
    }
  }
  const double ku = a[0][3] / a[0][0], kv = a[1][3] / a[1][1], k1 = a[2][3] / a[2][2];
  fit.plane.a = ku / sx;
  fit.plane.b = kv / sy;
  fit.plane.c = k1 - ku * mx / sx - kv * my / sy;
  if (!std::isfinite(fit.plane.a) || !std::isfinite(fit.plane.b) || !std::isfinite(fit.plane.c)) {
    fit = PlaneFit{};
    fit.reason = "non-finite plane coefficients";
    return fit;
  }
  fit.fitted = true;
  return fit;
}

std::vector<Category> refine_labels(std::span<const double> probabilities,
                                    const PlaneFit& plane,
                                    std::span<const KeypointRecord> records,
                                    double margin) {
  if (probabilities.size() != records.size()) {
    throw ShapeError("refine_labels: probabilities and records must align");
  }
  std::vector<Category> out;
  out.reserve(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    const double p = probabilities[i];
    if (plane.fitted && std::abs(p - 0.5) < margin) {
      out.push_back(plane.plane.label(records[i].nose().x, records[i].nose().y));
    } else {
      out.push_back(label_from_probability(p));
    }
  }
  return out;
}

CategoryMaps basic_category_maps(std::span<const KeypointRecord> records,
                                 std::span<const Category> labels,
                                 std::size_t image_h, std::size_t image_w,
                                 const KernelConfig& kernel) {
  if (records.size() != labels.size()) {
    throw ShapeError("basic_category_maps: records and labels must align");
  }
  std::vector<PersonAnnotation> points;
  points.reserve(records.size());
  // Detected noses can fall just outside the frame; pin them to the border.
  const double max_x = std::nextafter(static_cast<double>(image_w), 0.0);
  const double max_y = std::nextafter(static_cast<double>(image_h), 0.0);
  for (std::size_t i = 0; i < records.size(); ++i) {
    points.push_back({{std::clamp(records[i].nose().x, 0.0, max_x),
                       std::clamp(records[i].nose().y, 0.0, max_y)},
                      labels[i]});
  }
  return render_category_maps(points, image_h, image_w, kDensityScale, kernel);
}

Phase1Result run_phase1(std::span<const KeypointRecord> records,
                        const ClassifierModel& model, std::size_t image_h,
                        std::size_t image_w, double margin, const KernelConfig& kernel) {
  Phase1Result r;
  r.probabilities = classify_all(records, model);
  std::vector<int> baseline_int;
  std::vector<double> weights;
  for (std::size_t i = 0; i < records.size(); ++i) {
    r.baseline.push_back(label_from_probability(r.probabilities[i]));
    baseline_int.push_back(r.baseline.back() == Category::Standing ? 1 : 0);
    weights.push_back(sample_weight(records[i]));
  }
  if (records.size() >= 3) {
    r.plane = fit_plane(records, baseline_int, weights);
  } else {
    r.plane.reason = "fewer than 3 records";
  }
  r.refined = refine_labels(r.probabilities, r.plane, records, margin);
  r.maps = basic_category_maps(records, r.refined, image_h, image_w, kernel);
  return r;
}

ClassificationReport classification_metrics(std::span<const Category> predicted,
                                            std::span<const Category> truth) {
  if (predicted.size() != truth.size()) {
    throw ShapeError("classification_metrics: predicted and truth must align");
  }
  if (predicted.empty()) throw InvalidArgument("classification_metrics: empty input");
  ClassificationReport rep;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    const bool p = predicted[i] == Category::Standing;
    const bool t = truth[i] == Category::Standing;
    if (p && t) ++rep.true_positive;
    else if (p && !t) ++rep.false_positive;
    else if (!p && t) ++rep.false_negative;
    else ++rep.true_negative;
  }
  auto ratio = [](std::size_t num, std::size_t den, bool& defined) {
    defined = den > 0;
    return defined ? static_cast<double>(num) / static_cast<double>(den) : 0.0;
  };
  auto finish = [&](ClassMetrics& m, std::size_t tp, std::size_t fp, std::size_t fn) {
    m.precision = ratio(tp, tp + fp, m.precision_defined);
    m.recall = ratio(tp, tp + fn, m.recall_defined);
    m.f1_defined = m.precision_defined && m.recall_defined && (m.precision + m.recall) > 0.0;
    m.f1 = m.f1_defined ? 2.0 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
  };
  finish(rep.standing, rep.true_positive, rep.false_positive, rep.false_negative);
  finish(rep.sitting, rep.true_negative, rep.false_negative, rep.false_positive);
  rep.accuracy = static_cast<double>(rep.true_positive + rep.true_negative) /
                 static_cast<double>(predicted.size());
  return rep;
}

std::vector<ClassifierSample> make_samples(std::span<const KeypointRecord> records) {
  std::vector<ClassifierSample> out;
  for (const auto& r : records) {
    if (!r.label) continue;
    out.push_back({pose_features(r), *r.label == Category::Standing ? Scalar{1} : Scalar{0}});
  }
  return out;
}

namespace {

Tensor stack_features(std::span<const ClassifierSample> samples,
                      std::span<const std::size_t> idx, std::vector<Scalar>& labels) {
  std::vector<Scalar> feats;
  feats.reserve(idx.size() * kKeypointValues);
  labels.clear();
  for (std::size_t i : idx) {
    feats.insert(feats.end(), samples[i].features.begin(), samples[i].features.end());
    labels.push_back(samples[i].label);
  }
  return Tensor::from_data({idx.size(), kKeypointValues}, std::move(feats));
}

}  // namespace

double classifier_accuracy(const ClassifierModel& model,
                           std::span<const ClassifierSample> samples) {
  if (samples.empty()) return 0.0;
  std::vector<std::size_t> idx(samples.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::vector<Scalar> labels;
  ClassifierModel frozen;
  for (const auto& e : model.params) frozen.params.add(e.name, e.tensor.detach());
  const Tensor p = classifier_forward(frozen, stack_features(samples, idx, labels));
  std::size_t correct = 0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if ((p.at(i) >= Scalar{0.5}) == (labels[i] > Scalar{0.5})) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(samples.size());
}

TrainerCallbacks classifier_callbacks(const ClassifierModel& model,
                                      std::span<const ClassifierSample> train,
                                      std::span<const ClassifierSample> validation) {
  auto labels = std::make_shared<std::vector<Scalar>>();
  TrainerCallbacks cb;
  cb.train_batch = [&model, train, labels](std::span<const std::size_t> idx) {
    const Tensor feats = stack_features(train, idx, *labels);
    Tensor loss = binary_cross_entropy(classifier_forward(model, feats), *labels);
    backward(loss);
    return static_cast<double>(loss.item());
  };
  cb.validate = [&model, train, validation] {
    return -classifier_accuracy(model, validation.empty() ? train : validation);
  };
  return cb;
}

void train_classifier(ClassifierModel& model, std::span<const ClassifierSample> train,
                      std::span<const ClassifierSample> validation,
                      const TrainSchedule& schedule, std::uint64_t seed,
                      const std::function<void(const ClassifierTrainLog&)>& on_epoch) {
  Trainer trainer(model.params, schedule, seed, train.size());
  trainer.run(classifier_callbacks(model, train, validation), [&](const EpochRecord& r) {
    if (on_epoch) on_epoch({r.epoch, r.train_loss, -r.validation, r.learning_rate});
  });
  model.params.assign_values(trainer.best_params());
}

}  // namespace cccnet
