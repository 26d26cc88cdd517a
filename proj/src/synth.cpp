#include "cccnet/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>

#include <json.hpp>

#include "cccnet/binary_io.hpp"
#include "cccnet/error.hpp"

namespace cccnet {

namespace {

struct Box {
  double x0, y0, x1, y1;
  double area() const { return std::max(0.0, x1 - x0) * std::max(0.0, y1 - y0); }
};

double intersection(const Box& a, const Box& b) {
  const double w = std::min(a.x1, b.x1) - std::max(a.x0, b.x0);
  const double h = std::min(a.y1, b.y1) - std::max(a.y0, b.y0);
  return (w > 0.0 && h > 0.0) ? w * h : 0.0;
}

// Pose templates in head units, nose at the origin, y pointing down.
using Template = std::array<Point, kJointCount>;

constexpr Template kStandingPose{{{0.0, 0.0},
                                  {-0.25, -0.2}, {0.25, -0.2},
                                  {-0.5, -0.05}, {0.5, -0.05},
                                  {-0.9, 1.1}, {0.9, 1.1},
                                  {-1.1, 2.3}, {1.1, 2.3},
                                  {-1.2, 3.4}, {1.2, 3.4},
                                  {-0.5, 3.7}, {0.5, 3.7},
                                  {-0.55, 5.5}, {0.55, 5.5},
                                  {-0.55, 7.3}, {0.55, 7.3}}};

constexpr Template kSittingPose{{{0.0, 0.0},
                                 {-0.25, -0.2}, {0.25, -0.2},
                                 {-0.5, -0.05}, {0.5, -0.05},
                                 {-0.9, 1.0}, {0.9, 1.0},
                                 {-1.1, 2.2}, {1.1, 2.2},
                                 {-0.7, 3.1}, {0.7, 3.1},
                                 {-0.5, 3.4}, {0.5, 3.4},
                                 {-0.9, 3.6}, {0.9, 3.6},
                                 {-0.8, 5.0}, {0.8, 5.0}}};

// Figure extent (head units) covering the drawn shapes and every joint.
constexpr Box kStandingBox{-1.25, -0.7, 1.25, 7.45};
constexpr Box kSittingBox{-1.3, -0.7, 1.3, 5.15};

constexpr double kHeadRadius = 0.7;
// Keypoint jitter: 3 px for a head unit of 24 px, scaled with figure size and
// truncated at 1.5 sigma.
constexpr double kJitterPerUnit = 3.0 / 24.0;
constexpr double kJitterTruncation = 1.5;

struct Figure {
  Category category;
  double nx, ny, u;
  float tone;
  Box box;  // pixels

  const Template& pose() const {
    return category == Category::Standing ? kStandingPose : kSittingPose;
  }

  bool covers(double px, double py) const {
    const double x = (px - nx) / u, y = (py - ny) / u;
    auto in_rect = [&](double x0, double x1, double y0, double y1) {
      return x >= x0 && x <= x1 && y >= y0 && y <= y1;
    };
    auto in_ellipse = [&](double cx, double cy, double rx, double ry) {
      const double dx = (x - cx) / rx, dy = (y - cy) / ry;
      return dx * dx + dy * dy <= 1.0;
    };
    if (x * x + y * y <= kHeadRadius * kHeadRadius) return true;
    if (category == Category::Standing) {
      return in_ellipse(0.0, 2.4, 0.9, 1.5) || in_rect(-0.8, -0.3, 3.6, 7.4) ||
             in_rect(0.3, 0.8, 3.6, 7.4);
    }
    return in_ellipse(0.0, 2.2, 0.9, 1.3) || in_rect(-1.3, 1.3, 3.3, 4.0) ||
           in_rect(-1.0, -0.55, 4.0, 5.1) || in_rect(0.55, 1.0, 4.0, 5.1);
  }

  bool head_covers(double px, double py) const {
    const double x = (px - nx) / u, y = (py - ny) / u;
    return x * x + y * y <= kHeadRadius * kHeadRadius;
  }
};

Box figure_box(Category c, double nx, double ny, double u) {
  const Box& t = c == Category::Standing ? kStandingBox : kSittingBox;
  return {nx + t.x0 * u, ny + t.y0 * u, nx + t.x1 * u, ny + t.y1 * u};
}

double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

bool bernoulli(std::mt19937_64& rng, double p) {
  return std::uniform_real_distribution<double>(0.0, 1.0)(rng) < p;
}

}  // namespace

void SceneConfig::validate() const {
  if (height == 0 || width == 0) throw ConfigError("scene size must be positive");
  if (height % kDensityScale != 0 || width % kDensityScale != 0) {
    throw ConfigError("scene size must be divisible by 4");
  }
  if (min_persons > max_persons) throw ConfigError("min_persons exceeds max_persons");
  for (double f : {sitting_fraction, occlusion, sitting_zone_bias}) {
    if (!(f >= 0.0 && f <= 1.0)) throw ConfigError("scene fractions must lie in [0,1]");
  }
  if (!(noise >= 0.0)) throw ConfigError("noise must be non-negative");
  if (unit_min < 0.0 || unit_max < unit_min) throw ConfigError("invalid unit range");
  if (max_attempts == 0) throw ConfigError("max_attempts must be positive");
  if (min_visible_joints > kJointCount) throw ConfigError("min_visible_joints exceeds 17");
}

std::pair<double, double> SceneConfig::unit_range() const {
  if (unit_max > 0.0) return {unit_min > 0.0 ? unit_min : unit_max, unit_max};
  const double base = static_cast<double>(std::min(height, width)) / 64.0;
  return {1.4 * base, 2.2 * base};
}

SceneSample generate_scene(const SceneConfig& cfg) {
  std::mt19937_64 rng(cfg.seed);
  return generate_scene(cfg, rng);
}

SceneSample generate_scene(const SceneConfig& cfg, std::mt19937_64& rng, std::string id) {
  cfg.validate();
  const double H = static_cast<double>(cfg.height), W = static_cast<double>(cfg.width);
  const auto [umin, umax] = cfg.unit_range();

  SceneSample scene;
  scene.id = std::move(id);
  scene.requested_persons = static_cast<std::size_t>(
      std::uniform_int_distribution<std::size_t>(cfg.min_persons, cfg.max_persons)(rng));

  std::vector<Figure> figures;
  for (std::size_t p = 0; p < scene.requested_persons; ++p) {
    const Category cat =
        bernoulli(rng, cfg.sitting_fraction) ? Category::Sitting : Category::Standing;
    const double u = umax > umin ? uniform(rng, umin, umax) : umin;
    const bool zoned = bernoulli(rng, cfg.sitting_zone_bias);
    const float tone = static_cast<float>(uniform(rng, 0.55, 0.95));
    const Box& t = cat == Category::Standing ? kStandingBox : kSittingBox;
    const double xlo = -t.x0 * u, xhi = W - t.x1 * u;
    double ylo = -t.y0 * u, yhi = H - t.y1 * u;
    if (zoned) {
      if (cat == Category::Sitting) ylo = std::max(ylo, H / 2.0);
      else yhi = std::min(yhi, H / 2.0);
    }
    bool placed = false;
    if (xhi > xlo && yhi > ylo) {
      for (std::size_t attempt = 0; attempt < cfg.max_attempts && !placed; ++attempt) {
        const double nx = uniform(rng, xlo, xhi), ny = uniform(rng, ylo, yhi);
        const Box box = figure_box(cat, nx, ny, u);
        bool ok = true;
        for (const auto& f : figures) {
          const double inter = intersection(box, f.box);
          if (inter <= 0.0) continue;
          if (inter / std::min(box.area(), f.box.area()) > cfg.occlusion || cfg.occlusion == 0.0) {
            ok = false;
            break;
          }
        }
        if (ok) {
          figures.push_back({cat, nx, ny, u, tone, box});
          placed = true;
        }
      }
    }
    if (!placed) scene.placement_incomplete = true;
  }

  // Painter's order: figures lower in the frame are nearer and drawn later.
  std::vector<std::size_t> order(figures.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return figures[a].box.y1 < figures[b].box.y1;
  });

  const std::size_t h = cfg.height, w = cfg.width;
  std::vector<Scalar> pixels(h * w);
  const double background = uniform(rng, 0.1, 0.3);
  std::normal_distribution<double> pixel_noise(0.0, 1.0);
  for (auto& v : pixels) v = static_cast<Scalar>(background + cfg.noise * pixel_noise(rng));
  std::vector<int> owner(h * w, -1);
  for (std::size_t idx : order) {
    const Figure& f = figures[idx];
    const long x0 = std::max<long>(0, static_cast<long>(std::floor(f.box.x0)));
    const long x1 = std::min<long>(static_cast<long>(w) - 1, static_cast<long>(std::ceil(f.box.x1)));
    const long y0 = std::max<long>(0, static_cast<long>(std::floor(f.box.y0)));
    const long y1 = std::min<long>(static_cast<long>(h) - 1, static_cast<long>(std::ceil(f.box.y1)));
    for (long y = y0; y <= y1; ++y) {
      for (long x = x0; x <= x1; ++x) {
        const double px = static_cast<double>(x) + 0.5, py = static_cast<double>(y) + 0.5;
        if (!f.covers(px, py)) continue;
        const std::size_t i = static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x);
        const float tone = f.head_covers(px, py) ? std::min(1.0f, f.tone + 0.05f) : f.tone;
        pixels[i] = static_cast<Scalar>(tone + cfg.noise * 0.5 * pixel_noise(rng));
        owner[i] = static_cast<int>(idx);
      }
    }
  }
  for (auto& v : pixels) v = std::clamp(v, Scalar{0}, Scalar{1});
  scene.image = Tensor::from_data({1, h, w}, std::move(pixels));

  std::normal_distribution<double> jitter(0.0, 1.0);
  std::uniform_real_distribution<double> conf(0.9, 1.0);
  for (std::size_t idx = 0; idx < figures.size(); ++idx) {
    const Figure& f = figures[idx];
    scene.annotations.push_back({{f.nx, f.ny}, f.category});

    KeypointRecord rec;
    rec.image_id = scene.id;
    rec.label = f.category;
    rec.person = static_cast<int>(idx);
    std::size_t visible = 0;
    bool nose_visible = false;
    const double sigma = kJitterPerUnit * f.u;
    for (std::size_t j = 0; j < kJointCount; ++j) {
      const Point t = f.pose()[j];
      const double tx = f.nx + t.x * f.u, ty = f.ny + t.y * f.u;
      const double jx = std::clamp(jitter(rng), -kJitterTruncation, kJitterTruncation) * sigma;
      const double jy = std::clamp(jitter(rng), -kJitterTruncation, kJitterTruncation) * sigma;
      const double c = conf(rng);
      const long px = std::clamp<long>(static_cast<long>(std::floor(tx)), 0, static_cast<long>(w) - 1);
      const long py = std::clamp<long>(static_cast<long>(std::floor(ty)), 0, static_cast<long>(h) - 1);
      const int own = owner[static_cast<std::size_t>(py) * w + static_cast<std::size_t>(px)];
      const bool covered = own >= 0 && own != static_cast<int>(idx);
      if (covered) {
        rec.joints[j] = {0.0, 0.0, 0.0};
      } else {
        rec.joints[j] = {tx + jx, ty + jy, c};
        ++visible;
        if (j == kNose) nose_visible = true;
      }
    }
    if (nose_visible && visible >= cfg.min_visible_joints) scene.keypoints.push_back(rec);
  }
  return scene;
}

double leg_extent_ratio(const KeypointRecord& r) {
  const auto& j = r.joints;
  for (std::size_t k : {std::size_t{kNose}, std::size_t{kLeftHip}, std::size_t{kRightHip},
                        std::size_t{kLeftAnkle}, std::size_t{kRightAnkle}}) {
    if (j[k].confidence <= 0.0) return std::numeric_limits<double>::quiet_NaN();
  }
  const double hip = 0.5 * (j[kLeftHip].y + j[kRightHip].y);
  const double ankle = 0.5 * (j[kLeftAnkle].y + j[kRightAnkle].y);
  return (ankle - hip) / (hip - j[kNose].y);
}

void write_image(const std::filesystem::path& path, const Tensor& image) {
  if (image.rank() != 3 || image.dim(0) != 1) {
    throw ShapeError("write_image: expected 1xHxW, got " + shape_str(image.shape()));
  }
  binio::Writer w;
  w.magic("CCIM");
  w.u32(kImageVersion);
  w.u32(static_cast<std::uint32_t>(image.dim(1)));
  w.u32(static_cast<std::uint32_t>(image.dim(2)));
  for (Scalar v : image.data()) w.f32(static_cast<float>(v));
  binio::write_file(path, w.bytes());
}

Tensor read_image(const std::filesystem::path& path) {
  const auto bytes = binio::read_file(path);
  binio::Reader r(bytes, "image " + path.filename().string());
  r.expect_magic("CCIM");
  const auto version = r.u32();
  if (version != kImageVersion) {
    throw FormatError("image: unsupported version " + std::to_string(version));
  }
  const std::size_t h = r.u32(), w = r.u32();
  if (h == 0 || w == 0) throw FormatError("image: zero dimension");
  if (h * w * 4 > r.remaining()) throw FormatError("image: truncated file");
  std::vector<Scalar> px(h * w);
  for (auto& v : px) v = static_cast<Scalar>(r.f32());
  r.expect_end();
  return Tensor::from_data({1, h, w}, std::move(px));
}

namespace {

std::string scene_name(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "scene_%04zu", i);
  return buf;
}

nlohmann::json scene_config_json(const SceneConfig& c) {
  return {{"height", c.height},           {"width", c.width},
          {"min_persons", c.min_persons}, {"max_persons", c.max_persons},
          {"sitting_fraction", c.sitting_fraction},
          {"occlusion", c.occlusion},     {"noise", c.noise},
          {"sitting_zone_bias", c.sitting_zone_bias},
          {"unit_min", c.unit_min},       {"unit_max", c.unit_max},
          {"max_attempts", c.max_attempts},
          {"min_visible_joints", c.min_visible_joints}};
}

}  // namespace

void generate_corpus(const std::filesystem::path& dir, std::size_t n_scenes,
                     const SceneConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir / "images", ec);
  fs::create_directories(dir / "annotations", ec);
  fs::create_directories(dir / "keypoints", ec);
  if (ec) throw IoError("cannot create corpus directories under " + dir.string());

  nlohmann::json scenes = nlohmann::json::array();
  for (std::size_t i = 0; i < n_scenes; ++i) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(i), 0xc0de5u};
    std::mt19937_64 rng(seq);
    const std::string name = scene_name(i);
    const SceneSample s = generate_scene(cfg, rng, name);

    write_image(dir / "images" / (name + ".ccim"), s.image);
    ImageAnnotations ann{name, cfg.height, cfg.width, s.annotations};
    binio::write_text(dir / "annotations" / (name + ".json"), annotations_to_json(ann));
    binio::write_text(dir / "keypoints" / (name + ".json"),
                      keypoints_to_json(ImageKeypoints{name, s.keypoints}));
    scenes.push_back({{"id", name},
                      {"image", "images/" + name + ".ccim"},
                      {"annotations", "annotations/" + name + ".json"},
                      {"keypoints", "keypoints/" + name + ".json"},
                      {"persons", s.annotations.size()},
                      {"detected", s.keypoints.size()},
                      {"placement_incomplete", s.placement_incomplete}});
  }
  nlohmann::json manifest = {{"format", "cccnet-corpus"},
                             {"version", 1},
                             {"seed", seed},
                             {"config", scene_config_json(cfg)},
                             {"scenes", scenes}};
  binio::write_text(dir / "manifest.json", manifest.dump(1) + "\n");
  if (n_scenes >= 3) binio::write_text(dir / "split.json", split_to_json(split_dataset(n_scenes, seed)));
}

Corpus load_corpus(const std::filesystem::path& dir) {
  const auto manifest_path = dir / "manifest.json";
  if (!std::filesystem::exists(manifest_path)) {
    throw MissingArtifactError("missing corpus manifest: " + manifest_path.string());
  }
  Corpus corpus;
  corpus.root = dir;
  try {
    const auto manifest = nlohmann::json::parse(binio::read_text(manifest_path));
    for (const auto& s : manifest.at("scenes")) {
      CorpusScene scene;
      scene.id = s.at("id").get<std::string>();
      scene.image = read_image(dir / s.at("image").get<std::string>());
      scene.annotations = read_annotations(dir / s.at("annotations").get<std::string>());
      scene.keypoints = read_keypoints(dir / s.at("keypoints").get<std::string>());
      corpus.scenes.push_back(std::move(scene));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("corpus manifest: ") + e.what());
  }
  const auto split_path = dir / "split.json";
  if (std::filesystem::exists(split_path)) {
    corpus.split = split_from_json(binio::read_text(split_path));
    if (corpus.split.total != corpus.scenes.size()) {
      throw FormatError("split.json covers " + std::to_string(corpus.split.total) +
                        " scenes, corpus has " + std::to_string(corpus.scenes.size()));
    }
  } else {
    throw MissingArtifactError("missing dataset split: " + split_path.string());
  }
  return corpus;
}

std::uint64_t directory_checksum(const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::recursive_directory_iterator(dir)) {
    if (e.is_regular_file()) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::uint64_t hash = 1469598103934665603ull;
  auto mix = [&](std::uint8_t b) {
    hash ^= b;
    hash *= 1099511628211ull;
  };
  for (const auto& f : files) {
    for (char c : std::filesystem::relative(f, dir).generic_string()) mix(static_cast<std::uint8_t>(c));
    mix(0);
    for (std::uint8_t b : binio::read_file(f)) mix(b);
  }
  return hash;
}

}  // namespace cccnet
