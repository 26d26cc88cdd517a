#include "cccnet/params.hpp"

#include <algorithm>
#include <cmath>

#include "cccnet/binary_io.hpp"
#include "cccnet/error.hpp"
#include "cccnet/ops.hpp"

namespace cccnet {

Tensor& ModelParams::add(std::string name, Tensor tensor) {
  if (contains(name)) throw InvalidArgument("duplicate parameter name: " + name);
  if (!tensor.defined()) throw InvalidArgument("undefined tensor for parameter " + name);
  entries_.push_back({std::move(name), std::move(tensor)});
  return entries_.back().tensor;
}

bool ModelParams::contains(std::string_view name) const {
  return std::any_of(entries_.begin(), entries_.end(),
                     [&](const ParamEntry& e) { return e.name == name; });
}

Tensor& ModelParams::at(std::string_view name) {
  for (auto& e : entries_) {
    if (e.name == name) return e.tensor;
  }
  throw InvalidArgument("unknown parameter: " + std::string(name));
}

const Tensor& ModelParams::at(std::string_view name) const {
  return const_cast<ModelParams*>(this)->at(name);
}

std::size_t ModelParams::scalar_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.tensor.numel();
  return n;
}

void ModelParams::zero_grad() {
  for (auto& e : entries_) e.tensor.zero_grad();
}

void ModelParams::clear_grad() {
  for (auto& e : entries_) e.tensor.clear_grad();
}

ModelParams ModelParams::subset(std::string_view prefix) const {
  ModelParams out;
  for (const auto& e : entries_) {
    if (e.name.starts_with(prefix)) out.entries_.push_back(e);
  }
  return out;
}

ModelParams ModelParams::clone() const {
  ModelParams out;
  for (const auto& e : entries_) out.entries_.push_back({e.name, e.tensor.clone()});
  return out;
}

void ModelParams::assign_values(const ModelParams& other) {
  if (other.size() != size()) {
    throw ShapeError("parameter count mismatch: " + std::to_string(size()) + " vs " +
                     std::to_string(other.size()));
  }
  for (std::size_t i = 0; i < size(); ++i) {
    auto& dst = entries_[i];
    const auto& src = other.entries_[i];
    if (dst.name != src.name) {
      throw ShapeError("parameter order mismatch: " + dst.name + " vs " + src.name);
    }
    if (dst.tensor.shape() != src.tensor.shape()) {
      throw ShapeError("parameter " + dst.name + " has shape " +
                       shape_str(dst.tensor.shape()) + ", source has " +
                       shape_str(src.tensor.shape()));
    }
    auto d = dst.tensor.mutable_data();
    auto s = src.tensor.data();
    std::copy(s.begin(), s.end(), d.begin());
  }
}

ModelParams ModelParams::merged(std::initializer_list<const ModelParams*> parts) {
  ModelParams out;
  for (const ModelParams* p : parts) {
    for (const auto& e : *p) out.add(e.name, e.tensor);
  }
  return out;
}

void add_conv(ModelParams& params, const std::string& name, std::size_t in_ch,
              std::size_t out_ch, std::size_t kernel, std::mt19937_64& rng,
              double weight_scale) {
  const double fan_in = static_cast<double>(in_ch * kernel * kernel);
  std::normal_distribution<double> normal(0.0, weight_scale * std::sqrt(2.0 / fan_in));
  std::vector<Scalar> w(out_ch * in_ch * kernel * kernel);
  for (auto& v : w) v = static_cast<Scalar>(normal(rng));
  params.add(name + ".weight",
             Tensor::from_data({out_ch, in_ch, kernel, kernel}, std::move(w), true));
  params.add(name + ".bias", Tensor::zeros({out_ch}, true));
}

void add_dense(ModelParams& params, const std::string& name, std::size_t in,
               std::size_t out, std::mt19937_64& rng, double weight_scale) {
  std::normal_distribution<double> normal(0.0, weight_scale * std::sqrt(2.0 / static_cast<double>(in)));
  std::vector<Scalar> w(out * in);
  for (auto& v : w) v = static_cast<Scalar>(normal(rng));
  params.add(name + ".weight", Tensor::from_data({out, in}, std::move(w), true));
  params.add(name + ".bias", Tensor::zeros({out}, true));
}

Tensor apply_conv(const ModelParams& params, const std::string& name,
                  const Tensor& input) {
  const Tensor& w = params.at(name + ".weight");
  return conv2d(input, w, params.at(name + ".bias"), w.dim(2) / 2);
}

Tensor apply_dense(const ModelParams& params, const std::string& name,
                   const Tensor& input) {
  return dense(input, params.at(name + ".weight"), params.at(name + ".bias"));
}

std::vector<std::uint8_t> encode_checkpoint(const ModelParams& params) {
  binio::Writer w;
  w.magic("CCCP");
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(params.size()));
  for (const auto& e : params) {
    w.str(e.name);
    const auto& shape = e.tensor.shape();
    w.u32(static_cast<std::uint32_t>(shape.size()));
    for (auto extent : shape) w.u32(static_cast<std::uint32_t>(extent));
    for (Scalar v : e.tensor.data()) w.f32(static_cast<float>(v));
  }
  return std::move(w.bytes());
}

ModelParams decode_checkpoint(std::span<const std::uint8_t> bytes) {
  binio::Reader r(bytes, "checkpoint");
  r.expect_magic("CCCP");
  const auto version = r.u32();
  if (version != kCheckpointVersion) {
    throw FormatError("checkpoint: unsupported version " + std::to_string(version));
  }
  const auto count = r.u32();
  ModelParams params;
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = r.str();
    const auto rank = r.u32();
    Shape shape(rank);
    for (auto& extent : shape) {
      extent = r.u32();
      if (extent == 0) throw FormatError("checkpoint: zero extent in " + name);
    }
    const std::size_t n = shape_numel(shape);
    if (n * 4 > r.remaining()) throw FormatError("checkpoint: truncated file");
    std::vector<Scalar> data(n);
    for (auto& v : data) v = static_cast<Scalar>(r.f32());
    params.add(std::move(name), Tensor::from_data(std::move(shape), std::move(data), true));
  }
  r.expect_end();
  return params;
}

void save_checkpoint(const std::filesystem::path& path, const ModelParams& params) {
  binio::write_file(path, encode_checkpoint(params));
}

ModelParams load_checkpoint(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) {
    throw MissingArtifactError("missing checkpoint: " + path.string());
  }
  return decode_checkpoint(binio::read_file(path));
}

void load_checkpoint_into(const std::filesystem::path& path, ModelParams& params) {
  const ModelParams loaded = load_checkpoint(path);
  for (auto& e : params) {
    if (!loaded.contains(e.name)) {
      throw FormatError("checkpoint " + path.string() + " lacks parameter " + e.name);
    }
  }
  ModelParams ordered;
  for (const auto& e : params) ordered.add(e.name, loaded.at(e.name));
  params.assign_values(ordered);
}

}  // namespace cccnet
