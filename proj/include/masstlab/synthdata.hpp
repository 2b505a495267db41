#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "masstlab/matrix.hpp"
#include "masstlab/rng.hpp"

namespace masstlab {

// Block rotation: a stack of orthonormal 2D planes, each rotated by the
// same fixed angle, identity on the complement. A small shared set of these
// stands in for the pose/age factors of real identity imagery; they must
// carry enough of the space's energy to dominate raw cosine geometry, which
// is what makes the embedding task learnable rather than trivial.
struct VariationTransform {
  Matrix plane_u;  // one plane axis per row
  Matrix plane_v;  // matching second axes, orthonormal to everything above
  double angle = 0.0;

  Vector apply(std::span<const double> x) const;
};

struct IdentityUniverse {
  int num_ids = 0;
  int input_dim = 0;
  Matrix centers;  // unit rows, pairwise |cos| <= 0.95
  double noise_scale = 0.15;
  std::vector<VariationTransform> variations;
  std::uint64_t seed = 0;
};

enum class RegimeKind { Deep, Shallow, Longtail };

struct Regime {
  RegimeKind kind = RegimeKind::Shallow;
  int depth = 44;  // samples per id in the deep regime
  double r = 0.0;  // long-tail exponent

  static Regime deep(int depth = 44) { return {RegimeKind::Deep, depth, 0.0}; }
  static Regime shallow() { return {RegimeKind::Shallow, 2, 0.0}; }
  static Regime longtail(double r, int num_org = 44) { return {RegimeKind::Longtail, num_org, r}; }

  // Tag syntax: "deep:<depth>" | "shallow" | "longtail:<r>".
  static Regime parse(std::string_view tag);
  std::string tag() const;
};

// Samples grouped by id (ids 0..num_ids-1, rows sorted by id).
struct SampledDataset {
  int num_ids = 0;
  int input_dim = 0;
  Regime regime;
  std::vector<int> sample_ids;  // non-decreasing
  Matrix samples;               // unit rows
  std::vector<int> offsets;     // per-id start row, length num_ids + 1

  int count_of(int id) const { return offsets[id + 1] - offsets[id]; }
  int total() const { return samples.rows; }
  std::span<const double> sample(int row) const { return samples.row(row); }
};

IdentityUniverse generate_universe(int num_ids, int input_dim, std::uint64_t seed,
                                   double noise_scale = 0.15, int num_variations = 4);

// Per-rank intra-class counts: max(2, floor(num_org * (index + 1)^-r)) with
// 0-based index, so the head class keeps num_org. Non-increasing in index.
std::vector<int> long_tail_counts(int num_org, int num_ids, double r);

SampledDataset sample_dataset(const IdentityUniverse& universe, const Regime& regime);

// Two distinct samples of the id, uniform without replacement:
// (gallery, probe).
std::pair<Vector, Vector> draw_pair(const SampledDataset& data, int id, Rng& rng);

// File format: header "masstlab-data v1 <num_ids> <input_dim> <regime>",
// then one "<id>,<v1>,...,<vD>" line per sample at 17 significant digits.
void save_dataset(const SampledDataset& data, const std::filesystem::path& path);
SampledDataset load_dataset(const std::filesystem::path& path);

}  // namespace masstlab
