#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "cccnet/tensor.hpp"

namespace cccnet {

struct ParamEntry {
  std::string name;
  Tensor tensor;
};

/// Named, ordered collection of trainable tensors. Entries are handles, so a
/// subset() or merged() view shares storage with the collection it came from.
class ModelParams {
 public:
  Tensor& add(std::string name, Tensor tensor);
  bool contains(std::string_view name) const;
  Tensor& at(std::string_view name);
  const Tensor& at(std::string_view name) const;

  std::size_t size() const noexcept { return entries_.size(); }
  bool empty() const noexcept { return entries_.empty(); }
  auto begin() noexcept { return entries_.begin(); }
  auto end() noexcept { return entries_.end(); }
  auto begin() const noexcept { return entries_.begin(); }
  auto end() const noexcept { return entries_.end(); }
  const ParamEntry& entry(std::size_t i) const { return entries_.at(i); }

  std::size_t scalar_count() const;
  void zero_grad();
  void clear_grad();

  /// Entries whose names start with `prefix`, sharing storage.
  ModelParams subset(std::string_view prefix) const;
  /// Deep copy with independent storage.
  ModelParams clone() const;
  /// Copies values from `other`, which must have identical names and shapes.
  void assign_values(const ModelParams& other);

  static ModelParams merged(std::initializer_list<const ModelParams*> parts);

 private:
  std::vector<ParamEntry> entries_;
};

/// He-normal initialised conv layer registered as `<name>.weight` and
/// `<name>.bias`.
void add_conv(ModelParams& params, const std::string& name, std::size_t in_ch,
              std::size_t out_ch, std::size_t kernel, std::mt19937_64& rng,
              double weight_scale = 1.0);
void add_dense(ModelParams& params, const std::string& name, std::size_t in,
               std::size_t out, std::mt19937_64& rng, double weight_scale = 1.0);

/// conv2d using the `<name>.weight` / `<name>.bias` entries, with
/// shape-preserving padding.
Tensor apply_conv(const ModelParams& params, const std::string& name,
                  const Tensor& input);
Tensor apply_dense(const ModelParams& params, const std::string& name,
                   const Tensor& input);

// Parameter checkpoint: "CCCP", u32 version, u32 count, then per entry
// u32 name length + UTF-8 name, u32 rank, u32 extents, f32 values; all
// little-endian.
inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::filesystem::path& path, const ModelParams& params);
ModelParams load_checkpoint(const std::filesystem::path& path);
/// Loads a checkpoint into existing params; names and shapes must match.
void load_checkpoint_into(const std::filesystem::path& path, ModelParams& params);

std::vector<std::uint8_t> encode_checkpoint(const ModelParams& params);
ModelParams decode_checkpoint(std::span<const std::uint8_t> bytes);

}  // namespace cccnet
