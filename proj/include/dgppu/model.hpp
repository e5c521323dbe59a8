#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dgppu/graph.hpp"
#include "dgppu/phantom.hpp"
#include "dgppu/sampling.hpp"
#include "dgppu/types.hpp"

namespace dgppu {

struct Architecture {
  std::vector<std::size_t> edge_widths = {64, 64, 128};
  std::size_t head_hidden = 128;
  std::size_t k = 20;
  double slope = 0.2;  // leaky rectifier slope for x < 0
  std::size_t input_dim = 3;

  // Per-point layer outputs plus the broadcast global max of the last layer.
  std::size_t head_input() const;
  void validate() const;
  bool operator==(const Architecture&) const = default;
};

// h(x_i, x_j) = act(W^T [x_i, x_j - x_i] + b), max over the k edges of i.
struct EdgeConvLayer {
  Matrix weight;  // (2 * d_in) x d_out
  RowVector bias;  // d_out

  std::size_t in_dim() const { return static_cast<std::size_t>(weight.rows()) / 2; }
  std::size_t out_dim() const { return static_cast<std::size_t>(weight.cols()); }
  bool operator==(const EdgeConvLayer&) const = default;
};

struct DenseLayer {
  Matrix weight;  // d_in x d_out
  RowVector bias;

  bool operator==(const DenseLayer&) const = default;
};

struct Parameters {
  std::vector<EdgeConvLayer> edge;
  DenseLayer hidden;
  DenseLayer output;

  std::size_t size() const;
  // Fixed order: per edge layer weight then bias, hidden, output.
  std::vector<double> flatten() const;
  void assign(std::span<const double> flat);
  static Parameters zeros(const Architecture& arch);
  bool operator==(const Parameters&) const = default;
};

struct Network {
  Architecture arch;
  Parameters params;

  // Uniform fan-in initialisation: U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
  static Network init(const Architecture& arch, std::uint64_t seed);
  bool operator==(const Network&) const = default;
};

double leaky_relu(double x, double slope);

struct EdgeLayerCache {
  KnnGraph graph;
  Matrix input;                      // n x d_in
  Matrix pre_max;                    // n x d_out, max edge pre-activation
  std::vector<std::uint32_t> argmax;  // n * d_out, neighbour attaining the max
  Matrix output;                     // n x d_out
};

struct ForwardCache {
  std::vector<EdgeLayerCache> layers;
  Matrix head_input;                        // n x head_input()
  std::vector<std::uint32_t> global_argmax;  // per channel of the last layer
  Matrix hidden_pre;
  Matrix hidden;
  Matrix logits;  // n x 3
};

// The first graph is built on coordinates, the rest on the previous layer's
// features. Throws InsufficientPoints when n <= k.
ForwardCache forward(const Network& net, const Matrix& coords);
// Same computation on caller-supplied graphs (one per edge layer).
ForwardCache forward_with_graphs(const Network& net, const Matrix& coords,
                                 const std::vector<KnnGraph>& graphs);

// (n * k) x (2 d) rows [x_i, x_j - x_i], edge r of point i at row i * k + r.
Matrix edge_features(const Matrix& x, const KnnGraph& graph);
// Edge layer evaluated directly on edge_features; reference for tests.
Matrix edge_conv_reference(const EdgeConvLayer& layer, const Matrix& x, const KnnGraph& graph,
                           double slope);

// Mean softmax cross-entropy with log-sum-exp stabilisation.
double loss_ce(const Matrix& logits, std::span<const BoneLabel> labels);
Matrix softmax(const Matrix& logits);

// Gradient of loss_ce(forward(...)) with the graphs held fixed.
Parameters backward(const Network& net, const ForwardCache& cache,
                    std::span<const BoneLabel> labels);

struct AdamConfig {
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
};

// Bias-corrected Adam update for step t >= 1.
void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state,
               const AdamConfig& cfg, std::size_t t);

struct ClassificationMetrics {
  double accuracy = 0.0;
  std::array<double, kNumClasses> precision{};
  std::array<double, kNumClasses> recall{};
  std::array<double, kNumClasses> f1{};
  std::array<double, kNumClasses> iou{};
  double macro_precision = 0.0;
  double macro_recall = 0.0;
  double macro_f1 = 0.0;
  double macro_iou = 0.0;
  std::array<std::array<std::size_t, kNumClasses>, kNumClasses> confusion{};  // [truth][pred]
};

// Zero denominators give 0.
ClassificationMetrics evaluate_metrics(std::span<const BoneLabel> predicted,
                                       std::span<const BoneLabel> truth);

struct Prediction {
  std::vector<BoneLabel> labels;  // argmax, ties to the lowest class code
  Matrix probabilities;           // n x 3, rows sum to 1
};

Prediction predict(const Network& net, const Matrix& coords);

struct TrainConfig {
  AdamConfig adam;
  std::size_t patience = 10;
  std::size_t max_epochs = 100;
  double val_fraction = 0.2;
  std::uint64_t seed = 0;

  void validate() const;
};

struct EpochMetrics {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_loss = 0.0;
  ClassificationMetrics val;
};

// Tracks validation loss; an epoch improves only on a strictly lower loss.
class EarlyStopping {
 public:
  explicit EarlyStopping(std::size_t patience) : patience_(patience) {}

  // Returns true when this epoch is the new best.
  bool observe(double val_loss);
  bool should_stop() const { return since_best_ >= patience_; }
  std::size_t best_epoch() const { return best_epoch_; }
  double best_loss() const { return best_loss_; }
  std::size_t epochs() const { return epochs_; }

 private:
  std::size_t patience_;
  std::size_t epochs_ = 0;
  std::size_t best_epoch_ = 0;
  std::size_t since_best_ = 0;
  double best_loss_ = 0.0;
};

struct EarlyStopTrace {
  std::size_t stopped_after = 0;  // epochs run
  std::size_t best_epoch = 0;
  bool triggered = false;
};

// Replays a validation-loss trace through EarlyStopping.
EarlyStopTrace replay_early_stopping(std::span<const double> val_losses, std::size_t patience,
                                     std::size_t max_epochs);

struct TrainingBatch {
  Matrix coords;  // normalized, n x 3
  std::vector<BoneLabel> labels;
  std::optional<Position> position;
};

// Materializes sampled batches (normalized coordinates plus labels).
std::vector<TrainingBatch> training_batches(const LabeledCloud& cloud,
                                            std::span<const BatchSample> samples,
                                            std::optional<Position> position);

struct TrainResult {
  Network net;  // parameters of the best validation epoch
  std::vector<EpochMetrics> history;
  std::size_t best_epoch = 0;
  bool stopped_early = false;
  std::vector<std::size_t> val_batches;
};

// Overrides the measured validation loss of an epoch (1-based); test hook.
using ValLossHook = std::function<double(std::size_t epoch, double measured)>;
using EpochCallback = std::function<void(const EpochMetrics&)>;

// Seeded 80/20-style split (stratified by position when every batch has one),
// one Adam step per training batch, early stopping with restore-best.
TrainResult train(const std::vector<TrainingBatch>& batches, const Architecture& arch,
                  const TrainConfig& cfg, const EpochCallback& on_epoch = {},
                  const ValLossHook& val_hook = {});

std::string metrics_csv_header();
std::string metrics_csv_row(const EpochMetrics& m);

struct CheckpointMeta {
  std::uint64_t seed = 0;
  std::size_t best_epoch = 0;
  std::size_t epochs_run = 0;
  std::size_t n_points = 0;
  std::vector<std::string> training_scans;
};

// Binary container: magic, JSON header (architecture + meta + shapes),
// little-endian float64 parameters, CRC-32 of everything before it.
std::string encode_checkpoint(const Network& net, const CheckpointMeta& meta);
Network decode_checkpoint(const std::string& bytes, CheckpointMeta* meta = nullptr);
void save_checkpoint(const std::filesystem::path& path, const Network& net,
                     const CheckpointMeta& meta);
Network load_checkpoint(const std::filesystem::path& path, CheckpointMeta* meta = nullptr);

}  // namespace dgppu
