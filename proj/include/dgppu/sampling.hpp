#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dgppu/phantom.hpp"
#include "dgppu/types.hpp"

namespace dgppu {

struct Normalization {
  Eigen::Vector3d centroid = Eigen::Vector3d::Zero();
  double scale = 1.0;  // max distance to centroid, 1 when degenerate

  bool operator==(const Normalization&) const = default;
};

struct NormalizedPoints {
  Matrix coords;  // n x 3, inside the unit ball
  Normalization norm;
};

// Centre on the centroid and divide by the max radius. Requires >= 1 row.
NormalizedPoints normalize(const Matrix& points);
Matrix denormalize(const Matrix& normalized, const Normalization& norm);

struct AugmentConfig {
  BoneLabel target_label = BoneLabel::Patella;
  double jitter_sigma = 0.0;       // mm, per-axis Gaussian sigma
  double jitter_clip = 0.0;        // mm, bound on the jitter vector length
  double translation_range = 0.0;  // mm, per-axis uniform bound

  // sigma 0.01, clip 0.05, range 0.1, each times the cloud normalization scale.
  static AugmentConfig defaults_for(const LabeledCloud& cloud);
  void validate() const;
};

// Appends one jittered, translated copy of every target-class point. Copies
// follow the originals, keep the source provenance, and are marked synthetic.
// A cloud without target points is returned unchanged (with a warning).
LabeledCloud augment_minority(const LabeledCloud& cloud, const AugmentConfig& cfg,
                              std::uint64_t seed);

struct SampleConfig {
  std::size_t n_clouds = 500;
  std::size_t n_points = 1024;
  std::uint64_t seed = 0;

  void validate() const;
};

struct BatchSample {
  std::string cloud_ref;
  std::size_t batch_index = 0;
  std::vector<std::size_t> indices;  // with replacement, size n_points
  Normalization norm;

  bool operator==(const BatchSample&) const = default;
};

// One batch. Its generator is seeded from (cfg.seed, batch_index) only.
BatchSample sample_batch(const LabeledCloud& cloud, const SampleConfig& cfg,
                         std::size_t batch_index);
std::vector<BatchSample> sample_batches(const LabeledCloud& cloud, const SampleConfig& cfg);

// Normalized n_points x 3 coordinates of a batch.
Matrix batch_coordinates(const LabeledCloud& cloud, const BatchSample& batch);
std::vector<BoneLabel> batch_labels(const LabeledCloud& cloud, const BatchSample& batch);

// P[every one of n_batches batches holds >= k minority points] where each
// batch draws n_points with per-draw minority probability p_minority.
double min_class_guarantee(double p_minority, std::size_t n_points, std::size_t k,
                           std::size_t n_batches);
// log P[Binomial(n, p) >= k], evaluated in log space.
double log_binomial_upper_tail(std::size_t n, std::size_t k, double p);
// Smallest p (bisection, 1e-15) with min_class_guarantee(p, ...) >= target.
double solve_minority_fraction(double target, std::size_t n_points, std::size_t k,
                               std::size_t n_batches);

LabelCounts class_histogram(const LabeledCloud& cloud);
LabelCounts class_histogram(const LabeledCloud& cloud, const BatchSample& batch);

struct BatchSet {
  std::string cloud_ref;
  SampleConfig config;
  std::vector<BatchSample> batches;
};

// Directory of per-batch columnar files plus index.json.
void save_batch_set(const std::filesystem::path& dir, const LabeledCloud& cloud,
                    const BatchSet& set);
BatchSet load_batch_set(const std::filesystem::path& dir);

}  // namespace dgppu
