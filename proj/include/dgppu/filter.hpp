#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dgppu/graph.hpp"
#include "dgppu/model.hpp"
#include "dgppu/phantom.hpp"
#include "dgppu/sampling.hpp"

namespace dgppu {

// How per-batch flags combine across the batches that drew a point.
enum class VoteRule { Any, Majority };

std::string_view to_string(VoteRule rule);
std::optional<VoteRule> parse_vote_rule(std::string_view name);

struct FilterConfig {
  std::size_t k = 20;
  VoteRule vote_rule = VoteRule::Majority;
  bool include_residual_pass = true;
  std::uint64_t seed = 0;
  std::size_t n_clouds = 500;   // batches drawn, as in training
  std::size_t n_points = 1024;  // points per batch
  bool record_batches = true;   // keep per-batch predictions and flags in the report
  std::size_t threads = 1;      // batch-level parallelism; output does not depend on it

  void validate() const;
  SampleConfig sample_config() const { return SampleConfig{n_clouds, n_points, seed}; }
};

struct PointVerdict {
  std::size_t point_index = 0;
  std::size_t appearances = 0;
  std::size_t flags = 0;
  LabelCounts label_votes{};
  BoneLabel final_label = BoneLabel::Femur;
  bool deleted = false;

  bool decided() const { return appearances > 0; }
  bool operator==(const PointVerdict&) const = default;
};

// One evaluated batch. Only the first `scored` entries receive verdicts; the
// remainder is padding used to give residual chunks a full neighbourhood.
struct BatchRecord {
  std::size_t batch_index = 0;
  bool residual = false;
  std::size_t scored = 0;
  std::vector<std::size_t> indices;
  std::vector<BoneLabel> predicted;
  std::vector<std::uint8_t> flags;

  bool operator==(const BatchRecord&) const = default;
};

struct FilterReport {
  std::string scan_id;
  FilterConfig config;
  std::vector<PointVerdict> verdicts;
  std::vector<std::size_t> retained;
  std::vector<std::size_t> deleted;
  std::size_t residual_points = 0;
  std::map<std::pair<std::string, int>, std::size_t> deletions_per_frame;
  std::vector<BatchRecord> batches;  // empty unless record_batches
};

// flag[i] = some neighbour of i carries a different predicted label.
std::vector<std::uint8_t> flag_batch(std::span<const BoneLabel> predicted, const KnnGraph& graph);

// Tallies every scored occurrence (duplicates count separately). Plurality
// label with ties to the lowest code. Points never drawn stay undecided.
std::vector<PointVerdict> aggregate_verdicts(const std::vector<BatchRecord>& records,
                                             std::size_t cloud_size, VoteRule rule);

// Labels for one normalized batch; `indices` are the cloud rows it was drawn from.
using BatchPredictor =
    std::function<std::vector<BoneLabel>(const Matrix& coords, std::span<const std::size_t> indices)>;

// Wraps a trained network. The network must outlive the predictor.
BatchPredictor network_predictor(const Network& net);
// Returns each point's stored label: the ground-truth reference for calibration.
BatchPredictor oracle_predictor(const LabeledCloud& cloud);

// Evaluates undecided points once, in ascending chunks of n_points padded
// with the nearest decided points. Returns one record per chunk.
std::vector<BatchRecord> residual_pass(const LabeledCloud& cloud, const BatchPredictor& predictor,
                                       const std::vector<PointVerdict>& verdicts,
                                       const FilterConfig& cfg);
std::vector<BatchRecord> residual_pass(const LabeledCloud& cloud, const Network& net,
                                       const std::vector<PointVerdict>& verdicts,
                                       const FilterConfig& cfg);

struct FilterResult {
  LabeledCloud retained;
  LabeledCloud deleted;
  FilterReport report;
};

// Throws Validation when cfg.k differs from the network's k.
FilterResult filter_cloud(const LabeledCloud& cloud, const Network& net, const FilterConfig& cfg);
FilterResult filter_cloud(const LabeledCloud& cloud, const BatchPredictor& predictor,
                          const FilterConfig& cfg);

std::string report_to_string(const FilterReport& report);
FilterReport report_from_string(const std::string& text);

}  // namespace dgppu
