#include "dgppu/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "dgppu/error.hpp"
#include "dgppu/io.hpp"
#include "dgppu/log.hpp"
#include "dgppu/rng.hpp"

namespace dgppu {

std::size_t Architecture::head_input() const {
  return std::accumulate(edge_widths.begin(), edge_widths.end(), std::size_t{0}) +
         (edge_widths.empty() ? 0 : edge_widths.back());
}

void Architecture::validate() const {
  if (edge_widths.empty()) fail(ErrorKind::InvalidConfig, "network needs at least one edge layer");
  for (auto w : edge_widths) {
    if (w == 0) fail(ErrorKind::InvalidConfig, "edge layer width must be >= 1");
  }
  if (head_hidden == 0) fail(ErrorKind::InvalidConfig, "head_hidden must be >= 1");
  if (k == 0) fail(ErrorKind::InvalidConfig, "k must be >= 1");
  if (input_dim == 0) fail(ErrorKind::InvalidConfig, "input_dim must be >= 1");
  if (!(slope >= 0.0 && slope < 1.0)) fail(ErrorKind::InvalidConfig, "slope must be in [0, 1)");
}

std::size_t Parameters::size() const {
  std::size_t n = 0;
  for (const auto& l : edge) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
  n += static_cast<std::size_t>(hidden.weight.size() + hidden.bias.size());
  n += static_cast<std::size_t>(output.weight.size() + output.bias.size());
  return n;
}

namespace {

template <typename Params, typename Fn>
void for_each_block(Params& p, Fn&& fn) {
  for (auto& l : p.edge) {
    fn(l.weight.data(), static_cast<std::size_t>(l.weight.size()));
    fn(l.bias.data(), static_cast<std::size_t>(l.bias.size()));
  }
  fn(p.hidden.weight.data(), static_cast<std::size_t>(p.hidden.weight.size()));
  fn(p.hidden.bias.data(), static_cast<std::size_t>(p.hidden.bias.size()));
  fn(p.output.weight.data(), static_cast<std::size_t>(p.output.weight.size()));
  fn(p.output.bias.data(), static_cast<std::size_t>(p.output.bias.size()));
}

}  // namespace

std::vector<double> Parameters::flatten() const {
  std::vector<double> flat;
  flat.reserve(size());
  for_each_block(*this, [&](const double* data, std::size_t n) {
    flat.insert(flat.end(), data, data + n);
  });
  return flat;
}

void Parameters::assign(std::span<const double> flat) {
  if (flat.size() != size()) fail(ErrorKind::InvalidInput, "parameter vector has wrong length");
  std::size_t offset = 0;
  for_each_block(*this, [&](double* data, std::size_t n) {
    std::copy_n(flat.data() + offset, n, data);
    offset += n;
  });
}

Parameters Parameters::zeros(const Architecture& arch) {
  Parameters p;
  std::size_t d = arch.input_dim;
  for (auto w : arch.edge_widths) {
    const auto rows = static_cast<Eigen::Index>(2 * d);
    const auto cols = static_cast<Eigen::Index>(w);
    p.edge.push_back(EdgeConvLayer{Matrix::Zero(rows, cols), RowVector::Zero(cols)});
    d = w;
  }
  const auto h_in = static_cast<Eigen::Index>(arch.head_input());
  const auto h = static_cast<Eigen::Index>(arch.head_hidden);
  p.hidden = DenseLayer{Matrix::Zero(h_in, h), RowVector::Zero(h)};
  p.output = DenseLayer{Matrix::Zero(h, kNumClasses), RowVector::Zero(kNumClasses)};
  return p;
}

Network Network::init(const Architecture& arch, std::uint64_t seed) {
  arch.validate();
  Network net{arch, Parameters::zeros(arch)};
  SplitMix64 rng(derive_seed(seed, 0x1417));
  auto fill = [&](Matrix& w, RowVector& b) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(w.rows()));
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = rng.uniform(-bound, bound);
    for (Eigen::Index i = 0; i < b.size(); ++i) b.data()[i] = rng.uniform(-bound, bound);
  };
  for (auto& l : net.params.edge) fill(l.weight, l.bias);
  fill(net.params.hidden.weight, net.params.hidden.bias);
  fill(net.params.output.weight, net.params.output.bias);
  return net;
}

double leaky_relu(double x, double slope) { return x > 0.0 ? x : slope * x; }

namespace {

double leaky_grad(double x, double slope) { return x > 0.0 ? 1.0 : slope; }

Matrix apply_leaky(const Matrix& m, double slope) {
  return m.unaryExpr([slope](double x) { return leaky_relu(x, slope); });
}

// pre(i, j) = x_i (W_top - W_bottom) + x_j W_bottom + b, which equals
// [x_i, x_j - x_i] W + b with a single n x d product per half.
void edge_layer_forward(const EdgeConvLayer& layer, const Matrix& x, KnnGraph graph,
                        double slope, EdgeLayerCache& cache) {
  const auto d = static_cast<Eigen::Index>(layer.in_dim());
  const auto out = static_cast<Eigen::Index>(layer.out_dim());
  const auto n = x.rows();
  const Matrix w_center = layer.weight.topRows(d) - layer.weight.bottomRows(d);
  Matrix a = x * w_center;
  a.rowwise() += layer.bias;
  const Matrix b = x * layer.weight.bottomRows(d);

  cache.input = x;
  cache.pre_max.resize(n, out);
  cache.argmax.assign(static_cast<std::size_t>(n * out), 0);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto nbrs = graph.row(static_cast<std::size_t>(i));
    double* best = cache.pre_max.data() + i * out;
    std::uint32_t* arg = cache.argmax.data() + i * out;
    const double* ai = a.data() + i * out;
    {
      const double* bj = b.data() + static_cast<Eigen::Index>(nbrs[0]) * out;
      for (Eigen::Index c = 0; c < out; ++c) {
        best[c] = ai[c] + bj[c];
        arg[c] = nbrs[0];
      }
    }
    for (std::size_t r = 1; r < nbrs.size(); ++r) {
      const double* bj = b.data() + static_cast<Eigen::Index>(nbrs[r]) * out;
      for (Eigen::Index c = 0; c < out; ++c) {
        const double v = ai[c] + bj[c];
        if (v > best[c]) {
          best[c] = v;
          arg[c] = nbrs[r];
        }
      }
    }
  }
  cache.output = apply_leaky(cache.pre_max, slope);
  cache.graph = std::move(graph);
}

ForwardCache run_forward(const Network& net, const Matrix& coords,
                         const std::vector<KnnGraph>* graphs) {
  const auto& arch = net.arch;
  const auto n = static_cast<std::size_t>(coords.rows());
  if (static_cast<std::size_t>(coords.cols()) != arch.input_dim) {
    fail(ErrorKind::InvalidInput, "forward: coordinate width does not match the network");
  }
  if (n <= arch.k) {
    fail(ErrorKind::InsufficientPoints, "forward: need more than k=" + std::to_string(arch.k) +
                                            " points, got " + std::to_string(n));
  }
  if (graphs && graphs->size() != net.params.edge.size()) {
    fail(ErrorKind::InvalidInput, "forward: one graph per edge layer required");
  }
  ForwardCache cache;
  cache.layers.resize(net.params.edge.size());
  const Matrix* x = &coords;
  for (std::size_t l = 0; l < net.params.edge.size(); ++l) {
    KnnGraph g = graphs ? (*graphs)[l] : (l == 0 ? knn_graph(*x, arch.k) : feature_knn(*x, arch.k));
    if (g.n != n || g.k != arch.k) fail(ErrorKind::InvalidInput, "forward: graph shape mismatch");
    edge_layer_forward(net.params.edge[l], *x, std::move(g), arch.slope, cache.layers[l]);
    x = &cache.layers[l].output;
  }

  const auto rows = static_cast<Eigen::Index>(n);
  cache.head_input.resize(rows, static_cast<Eigen::Index>(arch.head_input()));
  Eigen::Index col = 0;
  for (const auto& layer : cache.layers) {
    cache.head_input.middleCols(col, layer.output.cols()) = layer.output;
    col += layer.output.cols();
  }
  const Matrix& last = cache.layers.back().output;
  cache.global_argmax.resize(static_cast<std::size_t>(last.cols()));
  for (Eigen::Index c = 0; c < last.cols(); ++c) {
    Eigen::Index best = 0;
    for (Eigen::Index i = 1; i < rows; ++i) {
      if (last(i, c) > last(best, c)) best = i;
    }
    cache.global_argmax[static_cast<std::size_t>(c)] = static_cast<std::uint32_t>(best);
    cache.head_input.col(col + c).setConstant(last(best, c));
  }

  cache.hidden_pre = cache.head_input * net.params.hidden.weight;
  cache.hidden_pre.rowwise() += net.params.hidden.bias;
  cache.hidden = apply_leaky(cache.hidden_pre, arch.slope);
  cache.logits = cache.hidden * net.params.output.weight;
  cache.logits.rowwise() += net.params.output.bias;
  return cache;
}

void check_labels(const Matrix& logits, std::span<const BoneLabel> labels) {
  if (logits.cols() != kNumClasses || static_cast<std::size_t>(logits.rows()) != labels.size()) {
    fail(ErrorKind::InvalidInput, "logits and labels disagree in shape");
  }
}

}  // namespace

ForwardCache forward(const Network& net, const Matrix& coords) {
  return run_forward(net, coords, nullptr);
}

ForwardCache forward_with_graphs(const Network& net, const Matrix& coords,
                                 const std::vector<KnnGraph>& graphs) {
  return run_forward(net, coords, &graphs);
}

Matrix edge_features(const Matrix& x, const KnnGraph& graph) {
  const auto d = x.cols();
  Matrix e(static_cast<Eigen::Index>(graph.n * graph.k), 2 * d);
  for (std::size_t i = 0; i < graph.n; ++i) {
    const auto nbrs = graph.row(i);
    for (std::size_t r = 0; r < graph.k; ++r) {
      const auto row = static_cast<Eigen::Index>(i * graph.k + r);
      const auto xi = x.row(static_cast<Eigen::Index>(i));
      e.block(row, 0, 1, d) = xi;
      e.block(row, d, 1, d) = x.row(static_cast<Eigen::Index>(nbrs[r])) - xi;
    }
  }
  return e;
}

Matrix edge_conv_reference(const EdgeConvLayer& layer, const Matrix& x, const KnnGraph& graph,
                           double slope) {
  Matrix pre = edge_features(x, graph) * layer.weight;
  pre.rowwise() += layer.bias;
  const Matrix act = apply_leaky(pre, slope);
  Matrix out(static_cast<Eigen::Index>(graph.n), act.cols());
  for (std::size_t i = 0; i < graph.n; ++i) {
    out.row(static_cast<Eigen::Index>(i)) =
        act.middleRows(static_cast<Eigen::Index>(i * graph.k), static_cast<Eigen::Index>(graph.k))
            .colwise()
            .maxCoeff();
  }
  return out;
}

Matrix softmax(const Matrix& logits) {
  Matrix p(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double top = logits.row(i).maxCoeff();
    p.row(i) = (logits.row(i).array() - top).exp();
    p.row(i) /= p.row(i).sum();
  }
  return p;
}

double loss_ce(const Matrix& logits, std::span<const BoneLabel> labels) {
  check_labels(logits, labels);
  if (labels.empty()) return 0.0;
  double total = 0.0;
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double top = logits.row(i).maxCoeff();
    const double lse = top + std::log((logits.row(i).array() - top).exp().sum());
    total += lse - logits(i, code(labels[static_cast<std::size_t>(i)]));
  }
  return total / static_cast<double>(labels.size());
}

Parameters backward(const Network& net, const ForwardCache& cache,
                    std::span<const BoneLabel> labels) {
  check_labels(cache.logits, labels);
  const double slope = net.arch.slope;
  const auto n = cache.logits.rows();
  Parameters grad = Parameters::zeros(net.arch);

  Matrix d_logits = softmax(cache.logits);
  for (Eigen::Index i = 0; i < n; ++i) d_logits(i, code(labels[static_cast<std::size_t>(i)])) -= 1.0;
  d_logits /= static_cast<double>(n);

  grad.output.weight = cache.hidden.transpose() * d_logits;
  grad.output.bias = d_logits.colwise().sum();
  Matrix d_hidden = d_logits * net.params.output.weight.transpose();
  d_hidden = d_hidden.cwiseProduct(
      cache.hidden_pre.unaryExpr([slope](double x) { return leaky_grad(x, slope); }));
  grad.hidden.weight = cache.head_input.transpose() * d_hidden;
  grad.hidden.bias = d_hidden.colwise().sum();
  const Matrix d_head = d_hidden * net.params.hidden.weight.transpose();

  // Split the head gradient back into per-layer blocks; the global-max block
  // routes to the point that attained each channel's maximum.
  const std::size_t layers = cache.layers.size();
  std::vector<Matrix> d_out(layers);
  Eigen::Index col = 0;
  for (std::size_t l = 0; l < layers; ++l) {
    const auto w = cache.layers[l].output.cols();
    d_out[l] = d_head.middleCols(col, w);
    col += w;
  }
  const RowVector d_global = d_head.middleCols(col, cache.layers.back().output.cols()).colwise().sum();
  for (Eigen::Index c = 0; c < d_global.size(); ++c) {
    d_out.back()(cache.global_argmax[static_cast<std::size_t>(c)], c) += d_global(c);
  }

  for (std::size_t l = layers; l-- > 0;) {
    const auto& lc = cache.layers[l];
    const auto& layer = net.params.edge[l];
    const auto d = static_cast<Eigen::Index>(layer.in_dim());
    const auto out = static_cast<Eigen::Index>(layer.out_dim());
    const Matrix d_pre = d_out[l].cwiseProduct(
        lc.pre_max.unaryExpr([slope](double x) { return leaky_grad(x, slope); }));
    // d_pre flows to the centre term of every point and to the neighbour
    // term of the edge that attained the max.
    Matrix d_nbr = Matrix::Zero(n, out);
    for (Eigen::Index i = 0; i < n; ++i) {
      const std::uint32_t* arg = lc.argmax.data() + i * out;
      for (Eigen::Index c = 0; c < out; ++c) d_nbr(arg[c], c) += d_pre(i, c);
    }
    const Matrix xt_center = lc.input.transpose() * d_pre;
    const Matrix xt_nbr = lc.input.transpose() * d_nbr;
    auto& g = grad.edge[l];
    g.weight.topRows(d) = xt_center;
    g.weight.bottomRows(d) = xt_nbr - xt_center;
    g.bias = d_pre.colwise().sum();
    if (l > 0) {
      const Matrix w_center = layer.weight.topRows(d) - layer.weight.bottomRows(d);
      d_out[l - 1] += d_pre * w_center.transpose() + d_nbr * layer.weight.bottomRows(d).transpose();
    }
  }
  return grad;
}

void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state,
               const AdamConfig& cfg, std::size_t t) {
  if (t < 1) fail(ErrorKind::InvalidInput, "adam_step: t must be >= 1");
  if (grads.size() != params.size()) fail(ErrorKind::InvalidInput, "adam_step: shape mismatch");
  if (state.m.empty()) {
    state.m.assign(params.size(), 0.0);
    state.v.assign(params.size(), 0.0);
  }
  if (state.m.size() != params.size() || state.v.size() != params.size()) {
    fail(ErrorKind::InvalidInput, "adam_step: state shape mismatch");
  }
  const double td = static_cast<double>(t);
  const double c1 = 1.0 - std::pow(cfg.beta1, td);
  const double c2 = 1.0 - std::pow(cfg.beta2, td);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
    state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
    const double m_hat = state.m[i] / c1;
    const double v_hat = state.v[i] / c2;
    params[i] -= cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.eps);
  }
}

ClassificationMetrics evaluate_metrics(std::span<const BoneLabel> predicted,
                                       std::span<const BoneLabel> truth) {
  if (predicted.size() != truth.size()) {
    fail(ErrorKind::InvalidInput, "evaluate_metrics: length mismatch");
  }
  ClassificationMetrics m;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    ++m.confusion[static_cast<std::size_t>(code(truth[i]))][static_cast<std::size_t>(code(predicted[i]))];
  }
  auto ratio = [](std::size_t num, std::size_t den) {
    return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
  };
  std::size_t correct = 0;
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    const std::size_t tp = m.confusion[c][c];
    std::size_t fp = 0;
    std::size_t fn = 0;
    for (std::size_t o = 0; o < kNumClasses; ++o) {
      if (o == c) continue;
      fp += m.confusion[o][c];
      fn += m.confusion[c][o];
    }
    correct += tp;
    m.precision[c] = ratio(tp, tp + fp);
    m.recall[c] = ratio(tp, tp + fn);
    const double s = m.precision[c] + m.recall[c];
    m.f1[c] = s == 0.0 ? 0.0 : 2.0 * m.precision[c] * m.recall[c] / s;
    m.iou[c] = ratio(tp, tp + fp + fn);
  }
  m.accuracy = ratio(correct, truth.size());
  auto mean = [](const std::array<double, kNumClasses>& a) {
    return std::accumulate(a.begin(), a.end(), 0.0) / kNumClasses;
  };
  m.macro_precision = mean(m.precision);
  m.macro_recall = mean(m.recall);
  m.macro_f1 = mean(m.f1);
  m.macro_iou = mean(m.iou);
  return m;
}

namespace {

std::vector<BoneLabel> labels_from_logits(const Matrix& logits) {
  std::vector<BoneLabel> labels(static_cast<std::size_t>(logits.rows()));
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    int best = 0;
    for (int c = 1; c < kNumClasses; ++c) {
      if (logits(i, c) > logits(i, best)) best = c;
    }
    labels[static_cast<std::size_t>(i)] = static_cast<BoneLabel>(best);
  }
  return labels;
}

}  // namespace

Prediction predict(const Network& net, const Matrix& coords) {
  const ForwardCache cache = forward(net, coords);
  Prediction p;
  p.probabilities = softmax(cache.logits);
  p.labels = labels_from_logits(cache.logits);
  return p;
}

void TrainConfig::validate() const {
  if (!(adam.lr > 0.0)) fail(ErrorKind::InvalidConfig, "lr must be > 0");
  if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0 && adam.beta2 >= 0.0 && adam.beta2 < 1.0)) {
    fail(ErrorKind::InvalidConfig, "Adam betas must be in [0, 1)");
  }
  if (!(adam.eps > 0.0)) fail(ErrorKind::InvalidConfig, "eps must be > 0");
  if (patience < 1) fail(ErrorKind::InvalidConfig, "patience must be >= 1");
  if (max_epochs < 1) fail(ErrorKind::InvalidConfig, "max_epochs must be >= 1");
  if (!(val_fraction > 0.0 && val_fraction < 1.0)) {
    fail(ErrorKind::InvalidConfig, "val_fraction must be in (0, 1)");
  }
}

bool EarlyStopping::observe(double val_loss) {
  ++epochs_;
  if (epochs_ == 1 || val_loss < best_loss_) {
    best_loss_ = val_loss;
    best_epoch_ = epochs_;
    since_best_ = 0;
    return true;
  }
  ++since_best_;
  return false;
}

EarlyStopTrace replay_early_stopping(std::span<const double> val_losses, std::size_t patience,
                                     std::size_t max_epochs) {
  EarlyStopping stopper(patience);
  EarlyStopTrace trace;
  for (double loss : val_losses) {
    if (stopper.epochs() >= max_epochs) break;
    stopper.observe(loss);
    if (stopper.should_stop()) {
      trace.triggered = true;
      break;
    }
  }
  trace.stopped_after = stopper.epochs();
  trace.best_epoch = stopper.best_epoch();
  return trace;
}

namespace {

// Seeded split; stratified by position when every batch carries one.
std::vector<std::size_t> choose_validation(const std::vector<TrainingBatch>& batches,
                                           const TrainConfig& cfg) {
  const bool stratify = std::all_of(batches.begin(), batches.end(),
                                    [](const TrainingBatch& b) { return b.position.has_value(); });
  std::vector<std::vector<std::size_t>> groups(stratify ? kAllPositions.size() : 1);
  for (std::size_t i = 0; i < batches.size(); ++i) {
    const std::size_t g = stratify ? static_cast<std::size_t>(*batches[i].position) : 0;
    groups[g].push_back(i);
  }
  SplitMix64 rng(derive_seed(cfg.seed, 0x5917));
  std::vector<std::size_t> val;
  for (auto& group : groups) {
    if (group.empty()) continue;
    shuffle(group, rng);
    const auto take = static_cast<std::size_t>(
        std::llround(cfg.val_fraction * static_cast<double>(group.size())));
    val.insert(val.end(), group.begin(),
               group.begin() + static_cast<std::ptrdiff_t>(std::min(take, group.size())));
  }
  if (val.empty()) val.push_back(groups[0].empty() ? 0 : groups[0].front());
  if (val.size() == batches.size()) val.pop_back();
  std::sort(val.begin(), val.end());
  return val;
}

}  // namespace

std::vector<TrainingBatch> training_batches(const LabeledCloud& cloud,
                                            std::span<const BatchSample> samples,
                                            std::optional<Position> position) {
  std::vector<TrainingBatch> out;
  out.reserve(samples.size());
  for (const auto& s : samples) {
    out.push_back(TrainingBatch{batch_coordinates(cloud, s), batch_labels(cloud, s), position});
  }
  return out;
}

TrainResult train(const std::vector<TrainingBatch>& batches, const Architecture& arch,
                  const TrainConfig& cfg, const EpochCallback& on_epoch,
                  const ValLossHook& val_hook) {
  cfg.validate();
  arch.validate();
  if (batches.size() < 2) fail(ErrorKind::InvalidConfig, "train: need at least 2 batches");
  for (const auto& b : batches) {
    if (static_cast<std::size_t>(b.coords.rows()) != b.labels.size()) {
      fail(ErrorKind::InvalidInput, "train: batch coordinates and labels differ in length");
    }
  }

  TrainResult result;
  result.val_batches = choose_validation(batches, cfg);
  std::vector<std::size_t> train_batches;
  for (std::size_t i = 0; i < batches.size(); ++i) {
    if (!std::binary_search(result.val_batches.begin(), result.val_batches.end(), i)) {
      train_batches.push_back(i);
    }
  }

  Network net = Network::init(arch, cfg.seed);
  result.net = net;
  std::vector<double> flat = net.params.flatten();
  AdamState adam;
  std::size_t step = 0;
  EarlyStopping stopper(cfg.patience);

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    SplitMix64 order_rng(derive_seed(cfg.seed, 0x10000 + epoch));
    std::vector<std::size_t> order = train_batches;
    shuffle(order, order_rng);

    double train_loss = 0.0;
    for (auto bi : order) {
      const auto& batch = batches[bi];
      const ForwardCache cache = forward(net, batch.coords);
      train_loss += loss_ce(cache.logits, batch.labels);
      const std::vector<double> grad = backward(net, cache, batch.labels).flatten();
      adam_step(flat, grad, adam, cfg.adam, ++step);
      net.params.assign(flat);
    }

    EpochMetrics m;
    m.epoch = epoch;
    m.train_loss = train_loss / static_cast<double>(order.size());
    std::vector<BoneLabel> predicted;
    std::vector<BoneLabel> truth;
    double val_loss = 0.0;
    for (auto bi : result.val_batches) {
      const auto& batch = batches[bi];
      const ForwardCache cache = forward(net, batch.coords);
      val_loss += loss_ce(cache.logits, batch.labels);
      const auto labels = labels_from_logits(cache.logits);
      predicted.insert(predicted.end(), labels.begin(), labels.end());
      truth.insert(truth.end(), batch.labels.begin(), batch.labels.end());
    }
    m.val_loss = val_loss / static_cast<double>(result.val_batches.size());
    if (val_hook) m.val_loss = val_hook(epoch, m.val_loss);
    m.val = evaluate_metrics(predicted, truth);
    result.history.push_back(m);
    if (on_epoch) on_epoch(m);

    if (stopper.observe(m.val_loss)) result.net = net;
    if (stopper.should_stop()) {
      result.stopped_early = true;
      log::info("early stop after epoch " + std::to_string(epoch) + ", best epoch " +
                std::to_string(stopper.best_epoch()));
      break;
    }
  }
  result.best_epoch = stopper.best_epoch();
  return result;
}

std::string metrics_csv_header() {
  std::string h = "epoch,train_loss,val_loss,accuracy";
  for (const char* metric : {"precision", "recall", "f1", "iou"}) {
    for (auto label : kAllLabels) h += "," + std::string(metric) + "_" + std::string(to_string(label));
  }
  h += ",macro_precision,macro_recall,macro_f1,macro_iou\n";
  return h;
}

std::string metrics_csv_row(const EpochMetrics& m) {
  std::string row = std::to_string(m.epoch) + "," + format_double(m.train_loss) + "," +
                    format_double(m.val_loss) + "," + format_double(m.val.accuracy);
  for (const auto* values : {&m.val.precision, &m.val.recall, &m.val.f1, &m.val.iou}) {
    for (double v : *values) row += "," + format_double(v);
  }
  for (double v : {m.val.macro_precision, m.val.macro_recall, m.val.macro_f1, m.val.macro_iou}) {
    row += "," + format_double(v);
  }
  return row + "\n";
}

}  // namespace dgppu
