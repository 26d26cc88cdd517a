// Acceptance run: one PASS/FAIL line per criterion. Arguments select a subset
// (e.g. `cccnet_acceptance 3 7`); no arguments runs all ten.

#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <numeric>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "cccnet/binary_io.hpp"
#include "cccnet/config.hpp"
#include "cccnet/eval.hpp"
#include "cccnet/ops.hpp"
#include "cccnet/phase1.hpp"
#include "cccnet/phase3.hpp"
#include "cccnet/pipeline.hpp"
#include "cccnet/synth.hpp"
#include "cccnet/training.hpp"

using namespace cccnet;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

struct Shell {
  int code = -1;
  std::string out;
};

Shell run_shell(const std::string& cmd) {
  Shell s;
  FILE* p = popen(cmd.c_str(), "r");
  if (p == nullptr) return s;
  char buf[4096];
  while (std::fgets(buf, sizeof buf, p) != nullptr) s.out += buf;
  const int status = pclose(p);
  s.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return s;
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / "cccnet_acceptance" / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

double truth_count(const SceneRecord& s, Category c) {
  return static_cast<double>(std::count_if(s.persons.begin(), s.persons.end(),
                                           [c](const PersonAnnotation& a) { return a.category == c; }));
}

Dataset synthetic_dataset(const PipelineConfig& cfg, std::size_t n_train, std::size_t n_val,
                          std::size_t n_test) {
  std::vector<SceneSample> samples;
  std::mt19937_64 rng(cfg.seed);
  const std::size_t total = n_train + n_val + n_test;
  for (std::size_t i = 0; i < total; ++i) {
    samples.push_back(generate_scene(cfg.scene, rng, "s" + std::to_string(i)));
  }
  DatasetSplit split;
  split.total = total;
  for (std::size_t i = 0; i < total; ++i) {
    (i < n_train ? split.train : i < n_train + n_val ? split.validation : split.test).push_back(i);
  }
  return Dataset::from_samples(samples, split, cfg.kernel);
}

void train_all_phases(const Dataset& data, const PipelineConfig& cfg, const fs::path& dir) {
  for (Phase p : {Phase::Classifier, Phase::Crowd, Phase::RefinePretrain, Phase::RefineJoint}) {
    run_phase(p, data, cfg, dir);
  }
}

// 1. Finite-difference gradient suite in 64-bit mode (separate binary).
Outcome gradient_suite() {
  const auto t0 = Clock::now();
  const Shell s = run_shell(std::string(CCCNET_GRADCHECK_PATH) + " 20 1e-4");
  const double secs = seconds_since(t0);
  const auto at = s.out.find("summary");
  const std::string summary =
      at == std::string::npos ? "no summary" : s.out.substr(at, s.out.find('\n', at) - at);
  return {s.code == 0 && secs < 120, summary + fmt(" wall=%.1fs", secs)};
}

// 2. Rendered density integrates to the annotation count.
Outcome mass_conservation() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<std::size_t> size(0, 200);
  std::uniform_real_distribution<double> pos(0.0, 256.0);
  std::bernoulli_distribution standing(0.5);
  double worst = 0.0;
  bool ok = true;
  for (int set = 0; set < 100; ++set) {
    std::vector<PersonAnnotation> a(size(rng));
    for (auto& p : a) {
      p.head = {pos(rng), pos(rng)};
      p.category = standing(rng) ? Category::Standing : Category::Sitting;
    }
    const double n = static_cast<double>(a.size());
    const double err = std::abs(count(render_density(a, 256, 256)) - n);
    const double rel = err / std::max(1.0, n);
    worst = std::max(worst, rel);
    ok = ok && err < 1e-3 * std::max(1.0, n);
  }
  const double secs = seconds_since(t0);
  return {ok && secs < 30, fmt("worst |count-|A||/max(1,|A|)=%.3e over 100 sets, %.2fs", worst, secs)};
}

// 3. Loss and sample-weight arithmetic on hand-built cases.
Outcome formula_fidelity() {
  std::vector<std::string> bad;
  const auto expect = [&](const std::string& what, double got, double want) {
    if (got != want) bad.push_back(what + fmt("=%.9g want %.9g", got, want));
  };
  // Uniform difference 1 over P pixels, one image: sigma * P.
  for (std::size_t p : {1u, 16u, 64u}) {
    const Tensor pred = Tensor::full({1, 1, p}, Scalar{3});
    const Tensor gt = Tensor::full({1, 1, p}, Scalar{2});
    expect(fmt("uniform P=%zu", p), weighted_mse(pred, gt, 350.0, 1).item(), 350.0 * p);
  }
  const Tensor a = Tensor::from_data({1, 2, 2}, {1, 2, 3, 4});
  const Tensor z = Tensor::zeros({1, 2, 2});
  expect("sigma 2 n 2 on (1,2,3,4)", weighted_mse(a, z, 2.0, 2).item(), 30.0);
  const std::vector<Tensor> preds{a, Tensor::from_data({1, 2, 2}, {0, 0, 0, 2})};
  const std::vector<Tensor> gts{z, z};
  expect("batch (30 + 4) sigma 4 n 2", weighted_mse(preds, gts, 4.0).item(), 68.0);

  KeypointRecord r;
  for (auto& j : r.joints) j.confidence = 1.0;
  expect("W all 1", sample_weight(r), 26.0);
  for (auto& j : r.joints) j.confidence = 0.0;
  expect("W all 0", sample_weight(r), 0.0);
  for (std::size_t j = kUpperBodyBegin; j < kLowerBodyBegin; ++j) r.joints[j].confidence = 0.5;
  for (std::size_t j = kLowerBodyBegin; j < kJointCount; ++j) r.joints[j].confidence = 1.0;
  expect("W upper 0.5 lower 1", sample_weight(r), 16.0);

  std::string detail = "7 weighted_mse/W cases exact";
  if (!bad.empty()) {
    detail.clear();
    for (const auto& b : bad) detail += b + "; ";
  }
  return {bad.empty(), detail};
}

// 4. Classifier reaches >= 95% on held-out unoccluded poses.
Outcome classifier_learnability() {
  const auto t0 = Clock::now();
  SceneConfig sc;
  sc.occlusion = 0.0;
  sc.height = sc.width = 128;
  sc.min_persons = 6;
  sc.max_persons = 10;
  std::mt19937_64 rng(404);
  std::vector<KeypointRecord> records;
  while (records.size() < 500) {
    const SceneSample s = generate_scene(sc, rng);
    records.insert(records.end(), s.keypoints.begin(), s.keypoints.end());
  }
  records.resize(500);
  const std::span<const KeypointRecord> all(records);
  const auto train = make_samples(all.subspan(0, 350));
  const auto val = make_samples(all.subspan(350, 50));
  const auto test = make_samples(all.subspan(400));

  ClassifierModel m = ClassifierModel::create(41);
  TrainSchedule sched = default_schedule(Phase::Classifier);
  sched.learning_rate = 8e-3;
  sched.epochs = 2000;
  train_classifier(m, train, val, sched, 42);
  const double acc = classifier_accuracy(m, test);
  const double secs = seconds_since(t0);
  return {acc >= 0.95 && secs < 300,
          fmt("held-out accuracy %.3f on 100 of 500 persons, %.1fs", acc, secs)};
}

// 5. Plane refinement repairs noisy low-confidence labels.
Outcome plane_refinement() {
  int wins = 0;
  std::string per_seed;
  for (int seed = 0; seed < 10; ++seed) {
    std::mt19937_64 rng(500 + seed);
    SceneConfig sc;
    sc.height = sc.width = 256;
    sc.min_persons = 40;
    sc.max_persons = 60;
    sc.occlusion = 0.5;
    std::size_t base_ok = 0, refined_ok = 0, total = 0;
    for (int image = 0; image < 4; ++image) {
      const SceneSample s = generate_scene(sc, rng);
      const auto& recs = s.keypoints;
      const std::size_t n = recs.size();
      total += n;
      std::vector<double> w(n);
      for (std::size_t i = 0; i < n; ++i) w[i] = sample_weight(recs[i]);
      // Low confidence: the lightest 30% by sample weight.
      std::vector<std::size_t> order(n);
      std::iota(order.begin(), order.end(), std::size_t{0});
      std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return w[x] < w[y]; });
      const std::size_t n_low = std::max<std::size_t>(1, n * 3 / 10);
      const std::size_t n_flip = std::min(n_low, (n + 19) / 20);
      std::vector<std::size_t> low(order.begin(), order.begin() + static_cast<long>(n_low));
      std::shuffle(low.begin(), low.end(), rng);
      std::vector<bool> is_low(n, false), flipped(n, false);
      for (std::size_t i : low) is_low[i] = true;
      for (std::size_t i = 0; i < n_flip; ++i) flipped[low[i]] = true;

      // The classifier is unsure about low-confidence records and sure about
      // the rest; noisy labels sit on the wrong side of 0.5.
      std::uniform_real_distribution<double> unsure(0.02, 0.12);
      std::vector<double> prob(n);
      std::vector<int> baseline(n);
      for (std::size_t i = 0; i < n; ++i) {
        const int truth = *recs[i].label == Category::Standing ? 1 : 0;
        baseline[i] = flipped[i] ? 1 - truth : truth;
        const double side = baseline[i] == 1 ? 1.0 : -1.0;
        prob[i] = is_low[i] ? 0.5 + side * unsure(rng) : 0.5 + side * 0.45;
      }
      const PlaneFit fit = fit_plane(recs, baseline, w);
      const auto refined = refine_labels(prob, fit, recs, kDefaultRefineMargin);
      for (std::size_t i = 0; i < n; ++i) {
        const Category truth = *recs[i].label;
        base_ok += (baseline[i] == 1) == (truth == Category::Standing);
        refined_ok += refined[i] == truth;
      }
    }
    wins += refined_ok > base_ok ? 1 : 0;
    per_seed += refined_ok > base_ok ? '+' : '-';
  }
  return {wins >= 8, fmt("refined beats baseline on %d/10 seeds [%s]", wins, per_seed.c_str())};
}

constexpr const char* kOverfitConfig = R"(seed = 5
[phase1]
epochs = 300
batch = 64
[phase2]
lr = 1e-3
epochs = 300
batch = 1
[phase3_pre]
lr = 1e-3
epochs = 200
batch = 1
[phase3_joint]
lr = 5e-4
epochs = 200
batch = 1
[scene]
occlusion = 0.3
)";

// 6. Phase 2 then Phase 3 memorise eight small scenes.
Outcome overfit_oracle() {
  const auto t0 = Clock::now();
  const PipelineConfig cfg = parse_config(kOverfitConfig);
  const Dataset data = synthetic_dataset(cfg, 8, 0, 0);
  const fs::path dir = scratch("overfit");
  train_all_phases(data, cfg, dir);
  const ModelBundle b = load_bundle(dir, cfg);
  double worst_total = 0.0, worst_cat = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const SceneRecord& s = data.scene(i);
    const Inference inf = infer(b, s.image, s.keypoints, cfg);
    const double gs = truth_count(s, Category::Sitting), gt = truth_count(s, Category::Standing);
    worst_total = std::max(worst_total, std::abs(inf.sit() + inf.stand() - gs - gt));
    worst_cat = std::max({worst_cat, std::abs(inf.sit() - gs), std::abs(inf.stand() - gt)});
  }
  const double secs = seconds_since(t0);
  return {worst_total < 0.5 && worst_cat < 1.0 && secs < 900,
          fmt("worst total error %.3f (<0.5), worst category error %.3f (<1.0), %.1fs", worst_total,
              worst_cat, secs)};
}

// 7. A loss on one category map reaches the other branch.
Outcome cross_reachability() {
  std::mt19937_64 rng(7);
  Phase3Model m = Phase3Model::create(Phase3Config{}, 7);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const auto map = [&](double hi) {
    std::vector<Scalar> v(16 * 16);
    for (auto& x : v) x = static_cast<Scalar>(hi * u(rng));
    return Tensor::from_data({1, 16, 16}, v);
  };
  Phase3Inputs in;
  in.sit_map = map(0.5);
  in.stand_map = map(0.5);
  in.crowd_map = map(1.0);
  in.image_small = map(1.0);
  const Tensor gt = Tensor::zeros({1, 16, 16});
  const auto nonzero = [](const ModelParams& p) {
    for (const auto& e : p) {
      if (!e.tensor.has_grad()) continue;
      for (Scalar g : e.tensor.grad()) {
        if (g != 0) return true;
      }
    }
    return false;
  };
  bool ok = true;
  std::string detail;
  for (Category loss_on : {Category::Sitting, Category::Standing}) {
    m.params.clear_grad();
    const Phase3Output o = phase3_forward(in, m);
    backward(weighted_mse(loss_on == Category::Sitting ? o.cross.final_sit : o.cross.final_stand,
                          gt, 1.0, 1));
    const Category other = loss_on == Category::Sitting ? Category::Standing : Category::Sitting;
    const bool reach = nonzero(m.pretrain_params(other));
    ok = ok && reach;
    detail += fmt("%sloss on final_%s -> %s branch grad %s", detail.empty() ? "" : "; ",
                  std::string(category_name(loss_on)).c_str(),
                  std::string(category_name(other)).c_str(), reach ? "nonzero" : "ZERO");
  }
  return {ok, detail};
}

constexpr const char* kDirectionalConfig = R"(seed = 11
[phase1]
epochs = 200
batch = 64
[phase2]
lr = 1e-3
epochs = 60
batch = 2
[phase3_pre]
lr = 1e-3
epochs = 60
batch = 2
[phase3_joint]
lr = 3e-4
epochs = 60
batch = 2
[scene]
height = 64
width = 64
min_persons = 20
max_persons = 60
occlusion = 0.6
unit_min = 1.2
unit_max = 1.6
)";

// 8. Full pipeline beats the keypoint-only maps per category.
Outcome directional() {
  const auto t0 = Clock::now();
  const PipelineConfig cfg = parse_config(kDirectionalConfig);
  const Dataset data = synthetic_dataset(cfg, 48, 8, 32);
  const fs::path dir = scratch("directional");
  train_all_phases(data, cfg, dir);
  const EvalPair r = evaluate(load_bundle(dir, cfg), data, cfg);
  const bool ok = r.cccnet.sitting.mae <= r.sdbc.sitting.mae &&
                  r.cccnet.standing.mae <= r.sdbc.standing.mae && r.cccnet.images.size() == 32;
  return {ok, fmt("MAE sit/stand: full %.3f/%.3f vs keypoint-only %.3f/%.3f on %zu test scenes, %.1fs",
                  r.cccnet.sitting.mae, r.cccnet.standing.mae, r.sdbc.sitting.mae,
                  r.sdbc.standing.mae, r.cccnet.images.size(), seconds_since(t0))};
}

constexpr const char* kCliConfig = R"(seed = 3
scenes = 12
regression_widths = 6, 6, 6, 6
mask_net_widths = 4, 4, 4, 4, 2
branch_widths = 4, 4, 4, 4, 2
[scene]
height = 32
width = 32
max_persons = 5
[phase1]
epochs = 30
batch = 32
[phase2]
lr = 2e-3
epochs = 8
batch = 2
saddle = true
[phase3_pre]
lr = 1e-3
epochs = 4
batch = 2
[phase3_joint]
lr = 1e-3
epochs = 4
batch = 2
)";

// 9. Reruns of every CLI stage are byte-identical.
Outcome determinism() {
  const fs::path root = scratch("determinism");
  const fs::path cfg = root / "run.cfg";
  binio::write_text(cfg, kCliConfig);
  const std::string cli = std::string(CCCNET_CLI_PATH);
  const auto ok = [&](const std::string& args) {
    return run_shell(cli + " " + args + " 2>&1").code == 0;
  };
  std::vector<std::string> diffs;
  bool ran = true;
  for (const char* run : {"a", "b"}) {
    const fs::path r = root / run;
    ran = ran && ok("gen --config " + cfg.string() + " --out " + (r / "data").string());
  }
  if (directory_checksum(root / "a" / "data") != directory_checksum(root / "b" / "data")) {
    diffs.push_back("gen");
  }
  for (const char* phase : {"1", "2", "3-pre", "3-joint"}) {
    for (const char* run : {"a", "b"}) {
      const fs::path r = root / run;
      ran = ran && ok(std::string("train --quiet --phase ") + phase + " --config " + cfg.string() +
                      " --data " + (r / "data").string() + " --out " + (r / "models").string());
    }
    if (directory_checksum(root / "a" / "models") != directory_checksum(root / "b" / "models")) {
      diffs.push_back(std::string("train ") + phase);
    }
  }
  for (const char* run : {"a", "b"}) {
    const fs::path r = root / run;
    ran = ran && ok("eval --config " + cfg.string() + " --models " + (r / "models").string() +
                    " --data " + (r / "data").string() + " --out " + (r / "eval").string());
  }
  if (directory_checksum(root / "a" / "eval") != directory_checksum(root / "b" / "eval")) {
    diffs.push_back("eval");
  }
  std::string detail = "gen, train 1/2/3-pre/3-joint and eval byte-identical across reruns";
  if (!ran) detail = "a CLI stage exited non-zero";
  if (!diffs.empty()) {
    detail = "differs:";
    for (const auto& d : diffs) detail += " " + d;
  }
  return {ran && diffs.empty(), detail};
}

// 10. Saddle escape timing and restoration.
Outcome saddle_behaviour() {
  SaddleConfig sc;
  sc.enabled = true;
  const double base = 1e-3;
  LearningRateController flat(base, sc);
  std::vector<double> lrs;  // rate used by each epoch
  std::size_t trigger_epoch = 0;
  for (std::size_t e = 0; e < 22; ++e) {
    lrs.push_back(flat.current_lr());
    if (flat.observe(2.0) && trigger_epoch == 0) trigger_epoch = e + 1;
  }
  std::size_t escaped = 0;
  for (double lr : lrs) escaped += lr == sc.escape_lr ? 1 : 0;
  bool ok = trigger_epoch == sc.window && escaped == sc.escape_epochs;
  for (std::size_t e = 0; e < lrs.size(); ++e) {
    const bool in_escape = e >= sc.window && e < sc.window + sc.escape_epochs;
    ok = ok && lrs[e] == (in_escape ? sc.escape_lr : base);
  }

  LearningRateController falling(base, sc);
  bool fired = false;
  for (std::size_t e = 0; e < 500; ++e) {
    fired = fired || falling.observe(10.0 / (1.0 + static_cast<double>(e)));
    fired = fired || falling.current_lr() != base;
  }
  const std::vector<double> flat15(15, 1.0);
  const bool monitor = saddle_monitor(flat15, 15, 1e-4) == SaddleState::Escape &&
                       saddle_monitor(std::span(flat15).first(14), 15, 1e-4) == SaddleState::Normal;
  return {ok && !fired && monitor,
          fmt("flat loss: escape after epoch %zu, %zu epochs at %.0e, then %.0e; falling loss "
              "triggered=%s",
              trigger_epoch, escaped, sc.escape_lr, lrs.back(), fired ? "yes" : "no")};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"gradient suite", gradient_suite},
      {"mass conservation", mass_conservation},
      {"formula fidelity", formula_fidelity},
      {"phase-1 learnability", classifier_learnability},
      {"plane refinement", plane_refinement},
      {"overfit oracle", overfit_oracle},
      {"cross-connection reachability", cross_reachability},
      {"directional comparison", directional},
      {"determinism", determinism},
      {"saddle monitor", saddle_behaviour},
  };
  std::set<std::size_t> wanted;
  for (int i = 1; i < argc; ++i) wanted.insert(static_cast<std::size_t>(std::atoi(argv[i])));

  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    if (!wanted.empty() && wanted.count(i + 1) == 0) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += o.pass ? 0 : 1;
    std::printf("%s %zu %s: %s\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first,
                o.detail.c_str());
    std::fflush(stdout);
  }
  fs::remove_all(fs::temp_directory_path() / "cccnet_acceptance");
  return failures == 0 ? 0 : 1;
}
