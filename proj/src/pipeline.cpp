#include "cccnet/pipeline.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "cccnet/binary_io.hpp"
#include "cccnet/error.hpp"
#include "cccnet/ops.hpp"
#include "cccnet/synth.hpp"

namespace cccnet {

namespace fs = std::filesystem;

Dataset::Dataset(std::vector<SceneRecord> scenes, DatasetSplit split)
    : scenes_(std::move(scenes)), split_(std::move(split)) {
  if (split_.total != scenes_.size()) {
    throw InvalidArgument("dataset split covers " + std::to_string(split_.total) +
                          " scenes, dataset has " + std::to_string(scenes_.size()));
  }
}

const SceneRecord& Dataset::scene(std::size_t index) const {
  if (index >= scenes_.size()) {
    throw InvalidArgument("scene index " + std::to_string(index) + " out of range");
  }
  accessed_.insert(index);
  return scenes_[index];
}

Dataset Dataset::load(const fs::path& corpus_dir, const KernelConfig& kernel) {
  Corpus corpus = load_corpus(corpus_dir);
  std::vector<SceneRecord> records;
  for (auto& s : corpus.scenes) {
    SceneRecord r;
    r.id = s.id;
    r.image = s.image;
    r.persons = s.annotations.persons;
    r.keypoints = s.keypoints.persons;
    r.gt = render_category_maps(r.persons, s.annotations.height, s.annotations.width,
                                kDensityScale, kernel);
    records.push_back(std::move(r));
  }
  return Dataset(std::move(records), corpus.split);
}

Dataset Dataset::from_samples(const std::vector<SceneSample>& samples, DatasetSplit split,
                              const KernelConfig& kernel) {
  std::vector<SceneRecord> records;
  for (const auto& s : samples) {
    SceneRecord r;
    r.id = s.id;
    r.image = s.image;
    r.persons = s.annotations;
    r.keypoints = s.keypoints;
    r.gt = render_category_maps(r.persons, s.image.dim(1), s.image.dim(2), kDensityScale, kernel);
    records.push_back(std::move(r));
  }
  return Dataset(std::move(records), std::move(split));
}

std::uint64_t derive_seed(std::uint64_t seed, std::string_view purpose) {
  std::uint64_t h = 1469598103934665603ull;
  for (char c : purpose) {
    h ^= static_cast<std::uint8_t>(c);
    h *= 1099511628211ull;
  }
  // splitmix64 finaliser
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ull * (h | 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

namespace {

ModelParams frozen_copy(const ModelParams& p) {
  ModelParams out;
  for (const auto& e : p) out.add(e.name, e.tensor.detach());
  return out;
}

ClassifierModel frozen(const ClassifierModel& m) { return {frozen_copy(m.params)}; }
Phase2Model frozen(const Phase2Model& m) { return {m.config, frozen_copy(m.params)}; }
Phase3Model frozen(const Phase3Model& m) { return {m.config, frozen_copy(m.params)}; }

fs::path require_artifact(const fs::path& dir, const char* name) {
  const fs::path p = dir / name;
  if (!fs::exists(p)) throw MissingArtifactError("missing checkpoint: " + p.string());
  return p;
}

ClassifierModel load_classifier(const fs::path& dir) {
  ClassifierModel m = ClassifierModel::empty();
  load_checkpoint_into(require_artifact(dir, artifact::kPhase1), m.params);
  return frozen(m);
}

Phase2Model load_phase2(const fs::path& dir, const PipelineConfig& cfg) {
  Phase2Model m = Phase2Model::create(cfg.phase2, 0);
  load_checkpoint_into(require_artifact(dir, artifact::kPhase2), m.params);
  return frozen(m);
}

std::string fmt(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ec == std::errc() ? ptr : buf);
}

/// Training-and-validation index lists; test indices never enter here.
struct Partition {
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
};

Partition partition(const Dataset& data) {
  Partition p{data.split().train, data.split().validation};
  if (p.train.empty()) throw InvalidArgument("training split is empty");
  return p;
}

// Quarter-resolution inputs derived from frozen upstream models.
struct Cached {
  Tensor image;
  Tensor image_small;
  Tensor sit;     // basic sitting map
  Tensor stand;   // basic standing map
  Tensor detect;  // sit + stand
  Tensor crowd;   // phase-2 output (phase 3 only)
  Tensor gt_total, gt_sit, gt_stand;
};

Cached cache_scene(const SceneRecord& s, const ClassifierModel& classifier,
                   const Phase2Model* phase2, const PipelineConfig& cfg) {
  Cached c;
  c.image = s.image;
  c.image_small = avgpool_down(s.image, kDensityScale);
  const auto p1 = run_phase1(s.keypoints, classifier, s.image.dim(1), s.image.dim(2),
                             cfg.refine_margin, cfg.kernel);
  c.sit = to_tensor(p1.maps.sitting);
  c.stand = to_tensor(p1.maps.standing);
  c.detect = to_tensor(p1.maps.total());
  if (phase2) c.crowd = phase2_forward(s.image, c.detect, *phase2).crowd.detach();
  c.gt_total = to_tensor(s.gt.total());
  c.gt_sit = to_tensor(s.gt.sitting);
  c.gt_stand = to_tensor(s.gt.standing);
  return c;
}

std::vector<Cached> cache_all(const Dataset& data, const std::vector<std::size_t>& idx,
                              const ClassifierModel& classifier, const Phase2Model* phase2,
                              const PipelineConfig& cfg) {
  std::vector<Cached> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(cache_scene(data.scene(i), classifier, phase2, cfg));
  return out;
}

/// Runs one Trainer with state/log/checkpoint handling under `stage`.
class Stage {
 public:
  Stage(std::string name, const fs::path& dir, const RunOptions& opts, PhaseResult& result)
      : name_(std::move(name)), dir_(dir), opts_(opts), result_(result) {}

  fs::path state_path() const { return dir_ / (name_ + ".state.cccp"); }
  fs::path log_path() const { return dir_ / (name_ + "_log.csv"); }

  /// Returns true when the schedule completed.
  bool train(Trainer& trainer, const TrainerCallbacks& cb, std::size_t total_epochs,
             const std::function<double(double)>& validation_value = {}) {
    std::vector<std::string> rows;
    if (opts_.resume && fs::exists(state_path())) {
      trainer.import_state(load_checkpoint(state_path()));
      rows = previous_rows(trainer.epochs_done());
    }
    trainer.run(
        cb,
        [&](const EpochRecord& r) {
          const double v = validation_value ? validation_value(r.validation) : r.validation;
          const std::string lr = fmt(r.learning_rate), esc = r.escape ? "1" : "0";
          rows.push_back(std::to_string(r.epoch) + ",train," + fmt(r.train_loss) + "," + lr + "," + esc);
          rows.push_back(std::to_string(r.epoch) + ",validation," + fmt(v) + "," + lr + "," + esc);
          result_.log.emplace_back(name_, r);
          if (opts_.progress) opts_.progress(name_, r);
        },
        opts_.stop_at);
    save_checkpoint(state_path(), trainer.export_state());
    std::string csv = "epoch,split,loss,lr,escape\n";
    for (const auto& row : rows) csv += row + "\n";
    binio::write_text(log_path(), csv);
    result_.artifacts.push_back(state_path());
    result_.artifacts.push_back(log_path());
    return trainer.epochs_done() >= total_epochs;
  }

 private:
  std::vector<std::string> previous_rows(std::size_t epochs_done) const {
    std::vector<std::string> rows;
    if (!fs::exists(log_path())) return rows;
    std::istringstream in(binio::read_text(log_path()));
    std::string line;
    std::getline(in, line);  // header
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      if (std::stoull(line.substr(0, line.find(','))) < epochs_done) rows.push_back(line);
    }
    return rows;
  }

  std::string name_;
  fs::path dir_;
  const RunOptions& opts_;
  PhaseResult& result_;
};

void finish(PhaseResult& result, const fs::path& path, const ModelParams& params) {
  save_checkpoint(path, params);
  result.artifacts.push_back(path);
}

PhaseResult train_phase1(const Dataset& data, const PipelineConfig& cfg, const fs::path& dir,
                         const RunOptions& opts) {
  PhaseResult result;
  const auto part = partition(data);
  std::vector<KeypointRecord> train_records, val_records;
  for (std::size_t i : part.train) {
    const auto& k = data.scene(i).keypoints;
    train_records.insert(train_records.end(), k.begin(), k.end());
  }
  for (std::size_t i : part.validation) {
    const auto& k = data.scene(i).keypoints;
    val_records.insert(val_records.end(), k.begin(), k.end());
  }
  const auto train = make_samples(train_records);
  const auto validation = make_samples(val_records);
  if (train.empty()) throw InvalidArgument("phase 1: no labelled keypoint records in training split");

  ClassifierModel model = ClassifierModel::create(derive_seed(cfg.seed, "phase1.init"));
  const auto& schedule = cfg.schedule(Phase::Classifier);
  Trainer trainer(model.params, schedule, derive_seed(cfg.seed, "phase1.order"), train.size());
  Stage stage("phase1", dir, opts, result);
  // Validation rows hold the error rate (1 - accuracy).
  result.complete = stage.train(trainer, classifier_callbacks(model, train, validation),
                                schedule.epochs, [](double v) { return 1.0 + v; });
  if (result.complete) finish(result, dir / artifact::kPhase1, trainer.best_params());
  return result;
}

double validation_sum(const std::vector<Cached>& val, const std::function<double(const Cached&)>& f) {
  double total = 0.0;
  for (const auto& c : val) total += f(c);
  return total;
}

PhaseResult train_phase2(const Dataset& data, const PipelineConfig& cfg, const fs::path& dir,
                         const RunOptions& opts) {
  PhaseResult result;
  const ClassifierModel classifier = load_classifier(dir);
  const auto part = partition(data);
  const auto train = cache_all(data, part.train, classifier, nullptr, cfg);
  const auto val = cache_all(data, part.validation, classifier, nullptr, cfg);

  Phase2Model model = Phase2Model::create(cfg.phase2, derive_seed(cfg.seed, "phase2.init"));
  const auto& schedule = cfg.schedule(Phase::Crowd);
  Trainer trainer(model.params, schedule, derive_seed(cfg.seed, "phase2.order"), train.size());

  TrainerCallbacks cb;
  cb.train_batch = [&](std::span<const std::size_t> idx) {
    double total = 0.0;
    for (std::size_t i : idx) {
      const auto& c = train[i];
      const auto out = phase2_forward(c.image, c.detect, model);
      Tensor loss = phase2_loss(out.crowd, out.regression, c.gt_total, cfg.loss, idx.size());
      total += static_cast<double>(loss.item());
      backward(loss);
    }
    return total;
  };
  cb.validate = [&] {
    const Phase2Model f = frozen(model);
    const auto& set = val.empty() ? train : val;
    return validation_sum(set, [&](const Cached& c) {
      const auto out = phase2_forward(c.image, c.detect, f);
      return static_cast<double>(
          phase2_loss(out.crowd, out.regression, c.gt_total, cfg.loss, set.size()).item());
    });
  };
  Stage stage("phase2", dir, opts, result);
  result.complete = stage.train(trainer, cb, schedule.epochs);
  if (result.complete) finish(result, dir / artifact::kPhase2, trainer.best_params());
  return result;
}

Phase3Model initial_phase3(const PipelineConfig& cfg) {
  return Phase3Model::create(cfg.phase3, derive_seed(cfg.seed, "phase3.init"));
}

Phase3Inputs inputs_of(const Cached& c) { return {c.sit, c.stand, c.crowd, c.image_small}; }

PhaseResult train_phase3_pre(const Dataset& data, const PipelineConfig& cfg, const fs::path& dir,
                             const RunOptions& opts) {
  PhaseResult result;
  const ClassifierModel classifier = load_classifier(dir);
  const Phase2Model phase2 = load_phase2(dir, cfg);
  const auto part = partition(data);
  const auto train = cache_all(data, part.train, classifier, &phase2, cfg);
  const auto val = cache_all(data, part.validation, classifier, &phase2, cfg);

  Phase3Model model = initial_phase3(cfg);
  const auto& schedule = cfg.schedule(Phase::RefinePretrain);
  bool complete = true;
  for (Category cat : {Category::Sitting, Category::Standing}) {
    const bool sit = cat == Category::Sitting;
    const double sigma = sit ? cfg.loss.sigma_sit : cfg.loss.sigma_stand;
    auto primary_loss = [&, sit, sigma, cat](const Cached& c, const Phase3Model& m, std::size_t n) {
      const auto out = branch_primary(sit ? c.sit : c.stand, c.crowd, c.image_small, m, cat);
      return weighted_mse(out.primary, sit ? c.gt_sit : c.gt_stand, sigma, n);
    };
    const std::string name = sit ? "phase3_sit_pre" : "phase3_stand_pre";
    Trainer trainer(model.pretrain_params(cat), schedule,
                    derive_seed(cfg.seed, name + ".order"), train.size());
    TrainerCallbacks cb;
    cb.train_batch = [&](std::span<const std::size_t> idx) {
      double total = 0.0;
      for (std::size_t i : idx) {
        Tensor loss = primary_loss(train[i], model, idx.size());
        total += static_cast<double>(loss.item());
        backward(loss);
      }
      return total;
    };
    cb.validate = [&] {
      const Phase3Model f = frozen(model);
      const auto& set = val.empty() ? train : val;
      return validation_sum(set, [&](const Cached& c) {
        return static_cast<double>(primary_loss(c, f, set.size()).item());
      });
    };
    Stage stage(name, dir, opts, result);
    const bool done = stage.train(trainer, cb, schedule.epochs);
    complete = complete && done;
    if (done) finish(result, dir / (sit ? artifact::kSitPre : artifact::kStandPre),
                     trainer.best_params());
  }
  result.complete = complete;
  return result;
}

PhaseResult train_phase3_joint(const Dataset& data, const PipelineConfig& cfg, const fs::path& dir,
                               const RunOptions& opts) {
  PhaseResult result;
  const fs::path sit_pre = require_artifact(dir, artifact::kSitPre);
  const fs::path stand_pre = require_artifact(dir, artifact::kStandPre);
  const ClassifierModel classifier = load_classifier(dir);
  const Phase2Model phase2 = load_phase2(dir, cfg);
  const auto part = partition(data);
  const auto train = cache_all(data, part.train, classifier, &phase2, cfg);
  const auto val = cache_all(data, part.validation, classifier, &phase2, cfg);

  Phase3Model model = initial_phase3(cfg);
  {
    ModelParams sit = model.pretrain_params(Category::Sitting);
    ModelParams stand = model.pretrain_params(Category::Standing);
    load_checkpoint_into(sit_pre, sit);
    load_checkpoint_into(stand_pre, stand);
  }
  auto joint_loss = [&](const Cached& c, const Phase3Model& m, std::size_t n) {
    const auto out = phase3_forward(inputs_of(c), m);
    return phase3_joint_loss(out.cross.final_sit, out.cross.final_stand, c.gt_sit, c.gt_stand,
                             cfg.loss, n);
  };
  const auto& schedule = cfg.schedule(Phase::RefineJoint);
  Trainer trainer(model.params, schedule, derive_seed(cfg.seed, "phase3.order"), train.size());
  TrainerCallbacks cb;
  cb.train_batch = [&](std::span<const std::size_t> idx) {
    double total = 0.0;
    for (std::size_t i : idx) {
      Tensor loss = joint_loss(train[i], model, idx.size());
      total += static_cast<double>(loss.item());
      backward(loss);
    }
    return total;
  };
  cb.validate = [&] {
    const Phase3Model f = frozen(model);
    const auto& set = val.empty() ? train : val;
    return validation_sum(set, [&](const Cached& c) {
      return static_cast<double>(joint_loss(c, f, set.size()).item());
    });
  };
  Stage stage("phase3", dir, opts, result);
  result.complete = stage.train(trainer, cb, schedule.epochs);
  if (result.complete) finish(result, dir / artifact::kPhase3, trainer.best_params());
  return result;
}

}  // namespace

PhaseResult run_phase(Phase phase, const Dataset& data, const PipelineConfig& config,
                      const fs::path& model_dir, const RunOptions& options) {
  config.validate();
  std::error_code ec;
  fs::create_directories(model_dir, ec);
  if (ec) throw IoError("cannot create model directory " + model_dir.string());
  switch (phase) {
    case Phase::Classifier:
      return train_phase1(data, config, model_dir, options);
    case Phase::Crowd:
      return train_phase2(data, config, model_dir, options);
    case Phase::RefinePretrain:
      return train_phase3_pre(data, config, model_dir, options);
    case Phase::RefineJoint:
      return train_phase3_joint(data, config, model_dir, options);
  }
  throw InvalidArgument("unknown phase");
}

ModelBundle load_bundle(const fs::path& model_dir, const PipelineConfig& config) {
  ModelBundle b;
  b.classifier = load_classifier(model_dir);
  b.phase2 = load_phase2(model_dir, config);
  Phase3Model m = Phase3Model::create(config.phase3, 0);
  load_checkpoint_into(require_artifact(model_dir, artifact::kPhase3), m.params);
  b.phase3 = frozen(m);
  return b;
}

Inference infer(const ModelBundle& models, const Tensor& image,
                std::span<const KeypointRecord> keypoints, const PipelineConfig& config) {
  if (image.rank() != 3 || image.dim(0) != 1) {
    throw ShapeError("infer: image must be 1xHxW, got " + shape_str(image.shape()));
  }
  Inference r;
  r.phase1 = run_phase1(keypoints, models.classifier, image.dim(1), image.dim(2),
                        config.refine_margin, config.kernel);
  const Tensor detect = to_tensor(r.phase1.maps.total());
  const auto p2 = phase2_forward(image, detect, models.phase2);
  const Phase3Inputs in{to_tensor(r.phase1.maps.sitting), to_tensor(r.phase1.maps.standing),
                        p2.crowd, avgpool_down(image, kDensityScale)};
  const auto p3 = phase3_forward(in, models.phase3);
  r.crowd = from_tensor(p2.crowd);
  r.final_sit = from_tensor(p3.cross.final_sit);
  r.final_stand = from_tensor(p3.cross.final_stand);
  return r;
}

}  // namespace cccnet
