#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string_view>
#include <vector>

#include "cccnet/tensor.hpp"

namespace cccnet {

enum class Category : std::uint8_t { Sitting = 0, Standing = 1 };

std::string_view category_name(Category c);
Category parse_category(std::string_view name);

struct Point {
  double x = 0.0;
  double y = 0.0;
};

/// Ground-truth head location (full-resolution pixels) with its posture.
struct PersonAnnotation {
  Point head;
  Category category = Category::Standing;
};

/// Geometry-adaptive kernel constants. Sigmas are in output-grid units and
/// clamped to [min_sigma, min(grid_h, grid_w) / 4].
struct KernelConfig {
  int k = 3;
  double beta = 0.3;
  double fallback_sigma = 4.0;
  double min_sigma = 0.5;
  double truncation = 4.0;  // kernel radius in sigmas
};

inline constexpr std::size_t kDensityScale = 4;

/// Non-negative grid at 1/scale of the source image; its sum is a count.
struct DensityMap {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t scale = kDensityScale;
  std::vector<float> cells;

  DensityMap() = default;
  DensityMap(std::size_t h, std::size_t w, std::size_t s = kDensityScale)
      : height(h), width(w), scale(s), cells(h * w, 0.0f) {}

  float& at(std::size_t y, std::size_t x) { return cells[y * width + x]; }
  float at(std::size_t y, std::size_t x) const { return cells[y * width + x]; }
};

/// beta times the mean distance to the k nearest neighbours; points with fewer
/// than k neighbours get fallback_sigma. No clamping is applied here.
std::vector<double> adaptive_sigmas(std::span<const Point> points, int k,
                                    double beta, double fallback_sigma);

double clamp_sigma(double sigma, const KernelConfig& cfg, std::size_t grid_h,
                   std::size_t grid_w);

/// Renders one unit-mass truncated Gaussian per annotation at
/// (x / scale, y / scale). Image size must be divisible by scale.
DensityMap render_density(std::span<const PersonAnnotation> annotations,
                          std::size_t image_h, std::size_t image_w,
                          std::size_t scale = kDensityScale,
                          const KernelConfig& cfg = {});

struct CategoryMaps {
  DensityMap sitting;
  DensityMap standing;
  DensityMap total() const;
};

/// Sigmas are computed over all annotations together, then each kernel goes
/// to the map of its category, so sitting + standing equals the joint render.
CategoryMaps render_category_maps(std::span<const PersonAnnotation> annotations,
                                  std::size_t image_h, std::size_t image_w,
                                  std::size_t scale = kDensityScale,
                                  const KernelConfig& cfg = {});

/// 64-bit accumulated sum of all cells.
double count(const DensityMap& map);

DensityMap add_maps(const DensityMap& a, const DensityMap& b);

/// 1 x H x W tensor view of a map (copy).
Tensor to_tensor(const DensityMap& map);
/// Rejects negative cells with InvariantError.
DensityMap from_tensor(const Tensor& t, std::size_t scale = kDensityScale);

// Density map file: "CCDM", u32 version, u32 H, u32 W, u32 scale, H*W f32.
inline constexpr std::uint32_t kDensityMapVersion = 1;

std::vector<std::uint8_t> encode_map(const DensityMap& map);
DensityMap decode_map(std::span<const std::uint8_t> bytes);
void write_map(const std::filesystem::path& path, const DensityMap& map);
DensityMap read_map(const std::filesystem::path& path);

/// 8-bit binary PGM, max-normalised (an all-zero map renders black).
void write_pgm(const std::filesystem::path& path, const DensityMap& map);

}  // namespace cccnet
