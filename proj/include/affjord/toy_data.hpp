#pragma once

#include "affjord/core_math.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace affjord {

enum class DatasetFamily { gaussian_grid, hash_gaussian, glyph_text, rings, checkerboard };

DatasetFamily parse_dataset_family(const std::string& name);
std::string to_string(DatasetFamily f);

/// 2D Gaussian truncated at Mahalanobis radius kTruncationRadius.
struct GaussianComponent {
  double weight = 1.0;
  Eigen::Vector2d mean = Eigen::Vector2d::Zero();
  Eigen::Matrix2d cov = Eigen::Matrix2d::Identity();
};

inline constexpr double kTruncationRadius = 5.0;
inline constexpr double kToyBound = 5.0;  // samples lie in [-5, 5]^2

/// Rectangular 0/1 raster; row 0 is the top row.
struct Glyph {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::uint8_t> cells;  // row-major
  bool at(std::size_t r, std::size_t c) const { return cells[r * cols + c] != 0; }
  std::size_t filled() const;
};

/// Text format: one row per line, characters '0'/'1' (also '.'/'#'); blank
/// lines and lines starting with "//" are skipped. Throws ParseError on
/// ragged rows or other characters.
Glyph parse_glyph(const std::string& text);
Glyph load_glyph(const std::string& path);
/// Built-in "TY" raster.
Glyph default_glyph();

struct DatasetSpec {
  DatasetFamily family = DatasetFamily::gaussian_grid;
  /// Mixture families (gaussian-grid, hash-gaussian); weights sum to 1.
  std::vector<GaussianComponent> components;
  /// glyph-text: letter raster and the blob cluster drawn next to it.
  Glyph glyph;
  std::vector<GaussianComponent> blobs;
  double glyph_weight = 0.7;
  /// Extra isotropic jitter for rejection families (glyph, rings).
  double noise = 0.05;

  void validate() const;
};

DatasetSpec gaussian_grid_spec(std::size_t grid_size = 3, double spacing = 2.0,
                               double scale = 0.3);
DatasetSpec gaussian_mixture_spec(std::vector<GaussianComponent> components);
DatasetSpec hash_gaussian_spec();
DatasetSpec glyph_text_spec(Glyph glyph = default_glyph());
DatasetSpec rings_spec(double noise = 0.08);
DatasetSpec checkerboard_spec();
DatasetSpec default_spec(DatasetFamily family);

/// n x 2 i.i.d. draws, deterministic in (spec, seed).
Matrix sample_batch(const DatasetSpec& spec, std::size_t n, std::uint64_t seed);

/// Exact log-density of the mixture families; nullopt for rejection families.
/// Points outside the truncated support give -infinity.
std::optional<double> true_log_density(const DatasetSpec& spec, const Eigen::Vector2d& point);

/// Per-coordinate affine map to zero mean and unit scale.
struct Standardization {
  Vector mean;
  Vector scale;

  static Standardization identity(std::size_t dim);
  Matrix apply(const Matrix& x) const;
  Matrix invert(const Matrix& z) const;
  /// sum_i log scale_i: log p_raw(x) = log p_std(apply(x)) - log_scale_sum().
  double log_scale_sum() const;
};

Standardization fit_standardization(const Matrix& data);

}  // namespace affjord
