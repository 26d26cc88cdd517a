#pragma once

#include <span>
#include <string>
#include <vector>

#include "cccnet/pipeline.hpp"

namespace cccnet {

double mae(std::span<const double> preds, std::span<const double> truths);
double rmse(std::span<const double> preds, std::span<const double> truths);

struct ErrorStats {
  double mae = 0.0;
  double rmse = 0.0;
  std::size_t samples = 0;
};

struct ImageCounts {
  std::string id;
  double pred_sit = 0.0;
  double pred_stand = 0.0;
  double gt_sit = 0.0;
  double gt_stand = 0.0;
};

struct BandStats {
  ErrorStats pooled;  // sitting and standing errors together
  ErrorStats sitting;
  ErrorStats standing;
  std::size_t images = 0;
};

enum class EvalMode { Sdbc, Cccnet };
std::string_view eval_mode_name(EvalMode m);

struct EvalReport {
  EvalMode mode = EvalMode::Cccnet;
  ErrorStats sitting;
  ErrorStats standing;
  ErrorStats total;    // error of the summed count
  ErrorStats overall;  // sitting and standing errors pooled
  BandStats low;       // ground-truth total below the threshold
  BandStats high;
  double threshold = 25.0;
  std::vector<ImageCounts> images;
};

/// Metrics from per-image counts (fractional, never rounded).
EvalReport build_report(EvalMode mode, std::vector<ImageCounts> images, double threshold);

struct EvalPair {
  EvalReport sdbc;
  EvalReport cccnet;
};

/// Runs both modes over the test split.
EvalPair evaluate(const ModelBundle& models, const Dataset& data, const PipelineConfig& config);

std::string report_to_json(const EvalReport& report);
std::string reports_to_json(const EvalPair& pair);
/// mode,id,pred_sit,pred_stand,gt_sit,gt_stand
std::string reports_to_csv(const EvalPair& pair);

}  // namespace cccnet
