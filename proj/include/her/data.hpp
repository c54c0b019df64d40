#pragma once

#include "her/core_model.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>

namespace her {

// HERF feature file, little-endian:
//   "HERF" | u32 version=1 | u32 dtype (0=f32, 1=f64) | u64 d | u64 n
//   | d*n values, column-major | n x u32 labels | n x u8 views
enum class Dtype : std::uint32_t { f32 = 0, f64 = 1 };

inline constexpr std::size_t kFeatureHeaderBytes = 28;
inline constexpr std::size_t kModelHeaderBytes = 33;

void save_features(const FeatureMatrix& features, const std::filesystem::path& path,
                   Dtype dtype = Dtype::f64);
FeatureMatrix load_features(const std::filesystem::path& path);

void write_features(const FeatureMatrix& features, std::ostream& out, Dtype dtype = Dtype::f64);
FeatureMatrix read_features(std::istream& in);

// HERM model file, little-endian:
//   "HERM" | u32 version=1 | u64 d | u64 c | f64 lambda | u8 has_t_inverse
//   | c x u32 class ids | d*c f64 projection, column-major | [d*d f64 T^-1]
void save_model(const HerModel& model, const std::filesystem::path& path);
HerModel load_model(const std::filesystem::path& path);

void write_model(const HerModel& model, std::ostream& out);
HerModel read_model(std::istream& in);

// One sample per line: label, view (probe|gallery|0|1), then d reals.
// Blank lines and lines starting with '#' are skipped.
FeatureMatrix import_text(const std::filesystem::path& path);
FeatureMatrix parse_text(std::istream& in);

struct SyntheticSpec {
  Index identities = 100;
  Index images_per_view = 1;
  Index dim = 64;
  double identity_spread = 1.0;  // std-dev of identity centers
  double view_shift = 1.0;       // norm of the global gallery-view offset
  double noise = 0.5;            // per-image std-dev
  std::uint64_t seed = 0;
};

struct SyntheticData {
  FeatureMatrix probe;
  FeatureMatrix gallery;

  // Probe columns followed by gallery columns.
  FeatureMatrix combined() const { return FeatureMatrix::concat(probe, gallery); }
};

// Identity j gets a latent center; probe images are center + noise, gallery
// images are center + shift + noise. Identities are labelled 1..c.
SyntheticData generate_synthetic(const SyntheticSpec& spec);

}  // namespace her
