#include "cccnet/eval.hpp"

#include <charconv>
#include <cmath>

#include <json.hpp>

#include "cccnet/error.hpp"

namespace cccnet {

namespace {

void check(std::span<const double> p, std::span<const double> t, const char* what) {
  if (p.empty()) throw InvalidArgument(std::string(what) + ": empty input");
  if (p.size() != t.size()) {
    throw ShapeError(std::string(what) + ": " + std::to_string(p.size()) + " predictions vs " +
                     std::to_string(t.size()) + " truths");
  }
}

ErrorStats stats(const std::vector<double>& p, const std::vector<double>& t) {
  if (p.empty()) return {};
  return {mae(p, t), rmse(p, t), p.size()};
}

BandStats band(const std::vector<ImageCounts>& images) {
  BandStats b;
  b.images = images.size();
  std::vector<double> ps, ts, pt, tt, pp, tp;
  for (const auto& im : images) {
    ps.push_back(im.pred_sit);
    ts.push_back(im.gt_sit);
    pt.push_back(im.pred_stand);
    tt.push_back(im.gt_stand);
  }
  pp = ps;
  pp.insert(pp.end(), pt.begin(), pt.end());
  tp = ts;
  tp.insert(tp.end(), tt.begin(), tt.end());
  b.sitting = stats(ps, ts);
  b.standing = stats(pt, tt);
  b.pooled = stats(pp, tp);
  return b;
}

nlohmann::json stats_json(const ErrorStats& s) {
  return {{"mae", s.mae}, {"rmse", s.rmse}, {"samples", s.samples}};
}

nlohmann::json band_json(const BandStats& b) {
  nlohmann::json j = stats_json(b.pooled);
  j["images"] = b.images;
  j["sitting"] = stats_json(b.sitting);
  j["standing"] = stats_json(b.standing);
  return j;
}

nlohmann::json report_json(const EvalReport& r) {
  nlohmann::json images = nlohmann::json::array();
  for (const auto& im : r.images) {
    images.push_back({{"id", im.id},
                      {"pred_sit", im.pred_sit},
                      {"pred_stand", im.pred_stand},
                      {"gt_sit", im.gt_sit},
                      {"gt_stand", im.gt_stand}});
  }
  return {{"mode", eval_mode_name(r.mode)},
          {"category",
           {{"sitting", stats_json(r.sitting)},
            {"standing", stats_json(r.standing)},
            {"total", stats_json(r.total)}}},
          {"overall", stats_json(r.overall)},
          {"density_threshold", r.threshold},
          {"density_band", {{"low", band_json(r.low)}, {"high", band_json(r.high)}}},
          {"images", images}};
}

std::string fmt(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ec == std::errc() ? ptr : buf);
}

}  // namespace

double mae(std::span<const double> preds, std::span<const double> truths) {
  check(preds, truths, "mae");
  double s = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) s += std::abs(preds[i] - truths[i]);
  return s / static_cast<double>(preds.size());
}

double rmse(std::span<const double> preds, std::span<const double> truths) {
  check(preds, truths, "rmse");
  double s = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const double d = preds[i] - truths[i];
    s += d * d;
  }
  return std::sqrt(s / static_cast<double>(preds.size()));
}

std::string_view eval_mode_name(EvalMode m) { return m == EvalMode::Sdbc ? "sdbc" : "cccnet"; }

EvalReport build_report(EvalMode mode, std::vector<ImageCounts> images, double threshold) {
  if (images.empty()) throw InvalidArgument("evaluation needs at least one image");
  EvalReport r;
  r.mode = mode;
  r.threshold = threshold;
  std::vector<ImageCounts> low, high;
  for (const auto& im : images) {
    (im.gt_sit + im.gt_stand < threshold ? low : high).push_back(im);
  }
  const BandStats all = band(images);
  r.sitting = all.sitting;
  r.standing = all.standing;
  r.overall = all.pooled;
  std::vector<double> p, t;
  for (const auto& im : images) {
    p.push_back(im.pred_sit + im.pred_stand);
    t.push_back(im.gt_sit + im.gt_stand);
  }
  r.total = stats(p, t);
  r.low = band(low);
  r.high = band(high);
  r.images = std::move(images);
  return r;
}

EvalPair evaluate(const ModelBundle& models, const Dataset& data, const PipelineConfig& config) {
  std::vector<ImageCounts> sdbc, full;
  for (std::size_t i : data.split().test) {
    const auto& s = data.scene(i);
    const Inference inf = infer(models, s.image, s.keypoints, config);
    double gs = 0.0, gt = 0.0;
    for (const auto& p : s.persons) (p.category == Category::Sitting ? gs : gt) += 1.0;
    sdbc.push_back({s.id, inf.sdbc_sit(), inf.sdbc_stand(), gs, gt});
    full.push_back({s.id, inf.sit(), inf.stand(), gs, gt});
  }
  return {build_report(EvalMode::Sdbc, std::move(sdbc), config.density_threshold),
          build_report(EvalMode::Cccnet, std::move(full), config.density_threshold)};
}

std::string report_to_json(const EvalReport& report) { return report_json(report).dump(1) + "\n"; }

std::string reports_to_json(const EvalPair& pair) {
  nlohmann::json j = {{"reports", {report_json(pair.sdbc), report_json(pair.cccnet)}}};
  return j.dump(1) + "\n";
}

std::string reports_to_csv(const EvalPair& pair) {
  std::string out = "mode,id,pred_sit,pred_stand,gt_sit,gt_stand\n";
  for (const EvalReport* r : {&pair.sdbc, &pair.cccnet}) {
    for (const auto& im : r->images) {
      out += std::string(eval_mode_name(r->mode)) + "," + im.id + "," + fmt(im.pred_sit) + "," +
             fmt(im.pred_stand) + "," + fmt(im.gt_sit) + "," + fmt(im.gt_stand) + "\n";
    }
  }
  return out;
}

}  // namespace cccnet
