#include "cccnet/config.hpp"

#include <charconv>
#include <functional>
#include <map>
#include <sstream>

#include "cccnet/binary_io.hpp"
#include "cccnet/error.hpp"

namespace cccnet {

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

struct Value {
  std::string key;
  std::string_view text;
  std::size_t line;

  [[noreturn]] void fail(const std::string& what) const {
    throw ConfigError("line " + std::to_string(line) + ": " + key + ": " + what + " (got '" +
                      std::string(text) + "')");
  }

  double number() const {
    double v = 0.0;
    const auto* end = text.data() + text.size();
    const auto [ptr, ec] = std::from_chars(text.data(), end, v);
    if (ec != std::errc() || ptr != end) fail("expected a number");
    return v;
  }

  std::size_t count() const {
    std::size_t v = 0;
    const auto* end = text.data() + text.size();
    const auto [ptr, ec] = std::from_chars(text.data(), end, v);
    if (ec != std::errc() || ptr != end) fail("expected a non-negative integer");
    return v;
  }

  std::uint64_t u64() const {
    std::uint64_t v = 0;
    const auto* end = text.data() + text.size();
    const auto [ptr, ec] = std::from_chars(text.data(), end, v);
    if (ec != std::errc() || ptr != end) fail("expected a non-negative integer");
    return v;
  }

  bool boolean() const {
    if (text == "true" || text == "1") return true;
    if (text == "false" || text == "0") return false;
    fail("expected true or false");
  }

  std::vector<std::size_t> counts() const {
    std::string_view body = text;
    if (body.size() >= 2 && body.front() == '[' && body.back() == ']') {
      body = body.substr(1, body.size() - 2);
    }
    std::vector<std::size_t> out;
    while (!body.empty()) {
      const auto comma = body.find(',');
      const auto item = trim(body.substr(0, comma));
      Value v{key, item, line};
      out.push_back(v.count());
      if (comma == std::string_view::npos) break;
      body = body.substr(comma + 1);
    }
    if (out.empty()) fail("expected a comma-separated list");
    return out;
  }
};

using Setter = std::function<void(PipelineConfig&, const Value&)>;

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = [] {
    std::map<std::string, Setter> t;
    t["seed"] = [](PipelineConfig& c, const Value& v) { c.seed = v.u64(); };
    t["scenes"] = [](PipelineConfig& c, const Value& v) { c.scenes = v.count(); };
    t["refine_margin"] = [](PipelineConfig& c, const Value& v) { c.refine_margin = v.number(); };
    t["density_threshold"] = [](PipelineConfig& c, const Value& v) {
      c.density_threshold = v.number();
    };
    t["regression_widths"] = [](PipelineConfig& c, const Value& v) {
      c.phase2.regression_widths = v.counts();
    };
    t["mask_net_widths"] = [](PipelineConfig& c, const Value& v) {
      c.phase2.mask_net_widths = v.counts();
    };
    t["branch_widths"] = [](PipelineConfig& c, const Value& v) {
      c.phase3.branch_widths = v.counts();
    };

    t["loss.sigma_crowd"] = [](PipelineConfig& c, const Value& v) { c.loss.sigma_crowd = v.number(); };
    t["loss.sigma_regression_aux"] = [](PipelineConfig& c, const Value& v) {
      c.loss.sigma_regression_aux = v.number();
    };
    t["loss.sigma_sit"] = [](PipelineConfig& c, const Value& v) { c.loss.sigma_sit = v.number(); };
    t["loss.sigma_stand"] = [](PipelineConfig& c, const Value& v) { c.loss.sigma_stand = v.number(); };

    t["kernel.k"] = [](PipelineConfig& c, const Value& v) {
      c.kernel.k = static_cast<int>(v.count());
    };
    t["kernel.beta"] = [](PipelineConfig& c, const Value& v) { c.kernel.beta = v.number(); };
    t["kernel.fallback_sigma"] = [](PipelineConfig& c, const Value& v) {
      c.kernel.fallback_sigma = v.number();
    };
    t["kernel.min_sigma"] = [](PipelineConfig& c, const Value& v) { c.kernel.min_sigma = v.number(); };
    t["kernel.truncation"] = [](PipelineConfig& c, const Value& v) {
      c.kernel.truncation = v.number();
    };

    const std::pair<const char*, Phase> phases[] = {{"phase1", Phase::Classifier},
                                                     {"phase2", Phase::Crowd},
                                                     {"phase3_pre", Phase::RefinePretrain},
                                                     {"phase3_joint", Phase::RefineJoint}};
    for (const auto& [name, phase] : phases) {
      const std::string p = std::string(name) + ".";
      const Phase ph = phase;
      t[p + "lr"] = [ph](PipelineConfig& c, const Value& v) {
        c.schedule(ph).learning_rate = v.number();
      };
      t[p + "epochs"] = [ph](PipelineConfig& c, const Value& v) { c.schedule(ph).epochs = v.count(); };
      t[p + "batch"] = [ph](PipelineConfig& c, const Value& v) {
        c.schedule(ph).batch_size = v.count();
      };
      t[p + "saddle"] = [ph](PipelineConfig& c, const Value& v) {
        c.schedule(ph).saddle.enabled = v.boolean();
      };
    }

    // Saddle settings are shared by every phase that enables the monitor.
    auto all_saddles = [](PipelineConfig& c, auto&& f) {
      for (auto& s : c.schedules) f(s.saddle);
    };
    t["saddle.window"] = [all_saddles](PipelineConfig& c, const Value& v) {
      const auto n = v.count();
      all_saddles(c, [n](SaddleConfig& s) { s.window = n; });
    };
    t["saddle.escape_lr"] = [all_saddles](PipelineConfig& c, const Value& v) {
      const auto x = v.number();
      all_saddles(c, [x](SaddleConfig& s) { s.escape_lr = x; });
    };
    t["saddle.rel_threshold"] = [all_saddles](PipelineConfig& c, const Value& v) {
      const auto x = v.number();
      all_saddles(c, [x](SaddleConfig& s) { s.rel_threshold = x; });
    };
    t["saddle.escape_epochs"] = [all_saddles](PipelineConfig& c, const Value& v) {
      const auto n = v.count();
      all_saddles(c, [n](SaddleConfig& s) { s.escape_epochs = n; });
    };

    t["scene.height"] = [](PipelineConfig& c, const Value& v) { c.scene.height = v.count(); };
    t["scene.width"] = [](PipelineConfig& c, const Value& v) { c.scene.width = v.count(); };
    t["scene.min_persons"] = [](PipelineConfig& c, const Value& v) { c.scene.min_persons = v.count(); };
    t["scene.max_persons"] = [](PipelineConfig& c, const Value& v) { c.scene.max_persons = v.count(); };
    t["scene.sitting_fraction"] = [](PipelineConfig& c, const Value& v) {
      c.scene.sitting_fraction = v.number();
    };
    t["scene.occlusion"] = [](PipelineConfig& c, const Value& v) { c.scene.occlusion = v.number(); };
    t["scene.noise"] = [](PipelineConfig& c, const Value& v) { c.scene.noise = v.number(); };
    t["scene.sitting_zone_bias"] = [](PipelineConfig& c, const Value& v) {
      c.scene.sitting_zone_bias = v.number();
    };
    t["scene.unit_min"] = [](PipelineConfig& c, const Value& v) { c.scene.unit_min = v.number(); };
    t["scene.unit_max"] = [](PipelineConfig& c, const Value& v) { c.scene.unit_max = v.number(); };
    t["scene.max_attempts"] = [](PipelineConfig& c, const Value& v) {
      c.scene.max_attempts = v.count();
    };
    t["scene.min_visible_joints"] = [](PipelineConfig& c, const Value& v) {
      c.scene.min_visible_joints = v.count();
    };
    return t;
  }();
  return table;
}

}  // namespace

void PipelineConfig::validate() const {
  loss.validate();
  phase2.validate();
  phase3.validate();
  scene.validate();
  for (const auto& s : schedules) s.validate();
  if (kernel.k < 1) throw ConfigError("kernel.k must be at least 1");
  if (!(kernel.beta > 0.0)) throw ConfigError("kernel.beta must be positive");
  if (!(kernel.fallback_sigma > 0.0) || !(kernel.min_sigma > 0.0) || !(kernel.truncation > 0.0)) {
    throw ConfigError("kernel sigmas and truncation must be positive");
  }
  if (!(refine_margin >= 0.0 && refine_margin <= 0.5)) {
    throw ConfigError("refine_margin must lie in [0, 0.5]");
  }
  if (!(density_threshold > 0.0)) throw ConfigError("density_threshold must be positive");
}

PipelineConfig parse_config(std::string_view text, PipelineConfig base) {
  std::string section;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') {
        throw ConfigError("line " + std::to_string(line_no) + ": malformed section header");
      }
      section = std::string(trim(line.substr(1, line.size() - 2)));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError("line " + std::to_string(line_no) + ": expected key = value");
    }
    const std::string key_part(trim(line.substr(0, eq)));
    std::string_view value = trim(line.substr(eq + 1));
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"') {
      value = value.substr(1, value.size() - 2);
    }
    const std::string key = section.empty() ? key_part : section + "." + key_part;
    const auto it = setters().find(key);
    if (it == setters().end()) {
      throw ConfigError("line " + std::to_string(line_no) + ": unknown key '" + key + "'");
    }
    it->second(base, Value{key, value, line_no});
  }
  base.validate();
  return base;
}

PipelineConfig load_config(const std::filesystem::path& path, PipelineConfig base) {
  if (!std::filesystem::exists(path)) {
    throw MissingArtifactError("missing config file: " + path.string());
  }
  return parse_config(binio::read_text(path), std::move(base));
}

namespace {

std::string num(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ec == std::errc() ? ptr : buf);
}

std::string list(const std::vector<std::size_t>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

}  // namespace

std::string config_to_text(const PipelineConfig& c) {
  std::ostringstream o;
  o << "seed = " << c.seed << "\n"
    << "scenes = " << c.scenes << "\n"
    << "refine_margin = " << num(c.refine_margin) << "\n"
    << "density_threshold = " << num(c.density_threshold) << "\n"
    << "regression_widths = " << list(c.phase2.regression_widths) << "\n"
    << "mask_net_widths = " << list(c.phase2.mask_net_widths) << "\n"
    << "branch_widths = " << list(c.phase3.branch_widths) << "\n\n";
  o << "[loss]\n"
    << "sigma_crowd = " << num(c.loss.sigma_crowd) << "\n"
    << "sigma_regression_aux = " << num(c.loss.sigma_regression_aux) << "\n"
    << "sigma_sit = " << num(c.loss.sigma_sit) << "\n"
    << "sigma_stand = " << num(c.loss.sigma_stand) << "\n\n";
  o << "[kernel]\n"
    << "k = " << c.kernel.k << "\n"
    << "beta = " << num(c.kernel.beta) << "\n"
    << "fallback_sigma = " << num(c.kernel.fallback_sigma) << "\n"
    << "min_sigma = " << num(c.kernel.min_sigma) << "\n"
    << "truncation = " << num(c.kernel.truncation) << "\n\n";
  const char* names[] = {"phase1", "phase2", "phase3_pre", "phase3_joint"};
  for (std::size_t i = 0; i < 4; ++i) {
    const auto& s = c.schedules[i];
    o << "[" << names[i] << "]\n"
      << "lr = " << num(s.learning_rate) << "\n"
      << "epochs = " << s.epochs << "\n"
      << "batch = " << s.batch_size << "\n"
      << "saddle = " << (s.saddle.enabled ? "true" : "false") << "\n\n";
  }
  const auto& sd = c.schedules[1].saddle;
  o << "[saddle]\n"
    << "window = " << sd.window << "\n"
    << "escape_lr = " << num(sd.escape_lr) << "\n"
    << "rel_threshold = " << num(sd.rel_threshold) << "\n"
    << "escape_epochs = " << sd.escape_epochs << "\n\n";
  o << "[scene]\n"
    << "height = " << c.scene.height << "\n"
    << "width = " << c.scene.width << "\n"
    << "min_persons = " << c.scene.min_persons << "\n"
    << "max_persons = " << c.scene.max_persons << "\n"
    << "sitting_fraction = " << num(c.scene.sitting_fraction) << "\n"
    << "occlusion = " << num(c.scene.occlusion) << "\n"
    << "noise = " << num(c.scene.noise) << "\n"
    << "sitting_zone_bias = " << num(c.scene.sitting_zone_bias) << "\n"
    << "unit_min = " << num(c.scene.unit_min) << "\n"
    << "unit_max = " << num(c.scene.unit_max) << "\n"
    << "max_attempts = " << c.scene.max_attempts << "\n"
    << "min_visible_joints = " << c.scene.min_visible_joints << "\n";
  return o.str();
}

}  // namespace cccnet
