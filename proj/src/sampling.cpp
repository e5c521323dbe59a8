#include "dgppu/sampling.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <sstream>

#include <nlohmann/json.hpp>

#include "dgppu/error.hpp"
#include "dgppu/io.hpp"
#include "dgppu/log.hpp"
#include "dgppu/rng.hpp"

namespace dgppu {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

NormalizedPoints normalize(const Matrix& points) {
  if (points.rows() < 1 || points.cols() != 3) {
    fail(ErrorKind::InvalidInput, "normalize: need an n x 3 matrix with n >= 1");
  }
  NormalizedPoints out;
  out.norm.centroid = points.colwise().mean().transpose();
  out.coords = points.rowwise() - out.norm.centroid.transpose();
  const double radius = out.coords.rowwise().norm().maxCoeff();
  out.norm.scale = radius > 0.0 ? radius : 1.0;
  out.coords /= out.norm.scale;
  return out;
}

Matrix denormalize(const Matrix& normalized, const Normalization& norm) {
  Matrix out = normalized * norm.scale;
  out.rowwise() += norm.centroid.transpose();
  return out;
}

AugmentConfig AugmentConfig::defaults_for(const LabeledCloud& cloud) {
  const double scale = cloud.empty() ? 1.0 : normalize(cloud.coordinates()).norm.scale;
  AugmentConfig cfg;
  cfg.jitter_sigma = 0.01 * scale;
  cfg.jitter_clip = 0.05 * scale;
  cfg.translation_range = 0.1 * scale;
  return cfg;
}

void AugmentConfig::validate() const {
  if (!(jitter_sigma >= 0.0) || !(jitter_clip > 0.0) || !(translation_range >= 0.0)) {
    fail(ErrorKind::InvalidConfig,
         "augment: need jitter_sigma >= 0, jitter_clip > 0, translation_range >= 0");
  }
}

LabeledCloud augment_minority(const LabeledCloud& cloud, const AugmentConfig& cfg,
                              std::uint64_t seed) {
  if (cloud.empty()) fail(ErrorKind::EmptyInput, "augment_minority: empty cloud");
  cfg.validate();
  LabeledCloud out = cloud;
  SplitMix64 rng(derive_seed(seed, 0xA6));
  const Eigen::Vector3d shift(rng.uniform(-cfg.translation_range, cfg.translation_range),
                              rng.uniform(-cfg.translation_range, cfg.translation_range),
                              rng.uniform(-cfg.translation_range, cfg.translation_range));
  std::size_t added = 0;
  for (const auto& p : cloud.points) {
    if (p.label != cfg.target_label) continue;
    Eigen::Vector3d jitter(cfg.jitter_sigma * rng.normal(), cfg.jitter_sigma * rng.normal(),
                           cfg.jitter_sigma * rng.normal());
    const double len = jitter.norm();
    if (len > cfg.jitter_clip) jitter *= cfg.jitter_clip / len;
    WorldPoint copy = p;
    copy.xyz = p.xyz + jitter + shift;
    copy.synthetic = true;
    out.points.push_back(std::move(copy));
    ++added;
  }
  if (added == 0) {
    log::warn("augment_minority: cloud '" + cloud.source + "' has no " +
              std::string(to_string(cfg.target_label)) + " points; returned unchanged");
  }
  return out;
}

void SampleConfig::validate() const {
  if (n_clouds < 1) fail(ErrorKind::InvalidConfig, "sample: n_clouds must be >= 1");
  if (n_points < 2) fail(ErrorKind::InvalidConfig, "sample: n_points must be >= 2");
}

BatchSample sample_batch(const LabeledCloud& cloud, const SampleConfig& cfg,
                         std::size_t batch_index) {
  if (cloud.empty()) fail(ErrorKind::EmptyInput, "sample_batches: empty cloud");
  cfg.validate();
  SplitMix64 rng(derive_seed(cfg.seed, batch_index));
  BatchSample batch;
  batch.cloud_ref = cloud.source;
  batch.batch_index = batch_index;
  batch.indices.resize(cfg.n_points);
  for (auto& idx : batch.indices) idx = static_cast<std::size_t>(rng.below(cloud.size()));
  batch.norm = normalize(cloud.coordinates(batch.indices)).norm;
  return batch;
}

std::vector<BatchSample> sample_batches(const LabeledCloud& cloud, const SampleConfig& cfg) {
  if (cloud.empty()) fail(ErrorKind::EmptyInput, "sample_batches: empty cloud");
  cfg.validate();
  std::vector<BatchSample> out;
  out.reserve(cfg.n_clouds);
  for (std::size_t b = 0; b < cfg.n_clouds; ++b) out.push_back(sample_batch(cloud, cfg, b));
  return out;
}

Matrix batch_coordinates(const LabeledCloud& cloud, const BatchSample& batch) {
  Matrix coords = cloud.coordinates(batch.indices);
  coords.rowwise() -= batch.norm.centroid.transpose();
  coords /= batch.norm.scale;
  return coords;
}

std::vector<BoneLabel> batch_labels(const LabeledCloud& cloud, const BatchSample& batch) {
  std::vector<BoneLabel> labels;
  labels.reserve(batch.indices.size());
  for (auto idx : batch.indices) labels.push_back(cloud.points.at(idx).label);
  return labels;
}

namespace {

double log_binomial_pmf(std::size_t n, std::size_t j, double log_p, double log_q) {
  const double nn = static_cast<double>(n);
  const double jj = static_cast<double>(j);
  return std::lgamma(nn + 1.0) - std::lgamma(jj + 1.0) - std::lgamma(nn - jj + 1.0) +
         jj * log_p + (nn - jj) * log_q;
}

// log(sum exp(terms)) over pmf(j) for j in [lo, hi].
double log_pmf_range(std::size_t n, std::size_t lo, std::size_t hi, double p) {
  const double log_p = std::log(p);
  const double log_q = std::log1p(-p);
  std::vector<double> terms;
  terms.reserve(hi - lo + 1);
  for (std::size_t j = lo; j <= hi; ++j) terms.push_back(log_binomial_pmf(n, j, log_p, log_q));
  const double top = *std::max_element(terms.begin(), terms.end());
  double acc = 0.0;
  for (double t : terms) acc += std::exp(t - top);
  return top + std::log(acc);
}

}  // namespace

double log_binomial_upper_tail(std::size_t n, std::size_t k, double p) {
  if (!(p >= 0.0 && p <= 1.0)) fail(ErrorKind::Domain, "probability must be in [0, 1]");
  if (k == 0) return 0.0;
  if (k > n) return -std::numeric_limits<double>::infinity();
  if (p == 0.0) return -std::numeric_limits<double>::infinity();
  if (p == 1.0) return 0.0;
  const double mean = static_cast<double>(n) * p;
  if (static_cast<double>(k - 1) < mean) {
    // Upper tail is the bulk: go through the small lower tail.
    const double log_lower = log_pmf_range(n, 0, k - 1, p);
    return std::log1p(-std::exp(log_lower));
  }
  return log_pmf_range(n, k, n, p);
}

double min_class_guarantee(double p_minority, std::size_t n_points, std::size_t k,
                           std::size_t n_batches) {
  if (!(p_minority >= 0.0 && p_minority <= 1.0)) {
    fail(ErrorKind::Domain, "min_class_guarantee: probability must be in [0, 1]");
  }
  if (k > n_points) fail(ErrorKind::Domain, "min_class_guarantee: k must not exceed n_points");
  if (k == 0) return 1.0;
  if (p_minority == 0.0) return 0.0;
  const double log_q = log_binomial_upper_tail(n_points, k, p_minority);
  return std::exp(static_cast<double>(n_batches) * log_q);
}

double solve_minority_fraction(double target, std::size_t n_points, std::size_t k,
                               std::size_t n_batches) {
  if (!(target > 0.0 && target < 1.0)) {
    fail(ErrorKind::Domain, "solve_minority_fraction: target must be in (0, 1)");
  }
  double lo = 0.0;
  double hi = 1.0;
  while (hi - lo > 1e-15) {
    const double mid = 0.5 * (lo + hi);
    if (min_class_guarantee(mid, n_points, k, n_batches) >= target) {
      hi = mid;
    } else {
      lo = mid;
    }
  }
  return hi;
}

LabelCounts class_histogram(const LabeledCloud& cloud) {
  LabelCounts counts{};
  for (const auto& p : cloud.points) ++counts[static_cast<std::size_t>(code(p.label))];
  return counts;
}

LabelCounts class_histogram(const LabeledCloud& cloud, const BatchSample& batch) {
  LabelCounts counts{};
  for (auto idx : batch.indices) {
    ++counts[static_cast<std::size_t>(code(cloud.points.at(idx).label))];
  }
  return counts;
}

namespace {

std::string batch_file_name(std::size_t batch_index) {
  std::ostringstream ss;
  ss << "batch_" << std::setw(5) << std::setfill('0') << batch_index << ".csv";
  return ss.str();
}

}  // namespace

void save_batch_set(const fs::path& dir, const LabeledCloud& cloud, const BatchSet& set) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) fail(ErrorKind::Io, "cannot create '" + dir.string() + "'");
  ojson index;
  index["format"] = "dgppu-batch-set";
  index["version"] = 1;
  index["cloud_ref"] = set.cloud_ref;
  index["prng"] = SplitMix64::kAlgorithm;
  index["seed"] = set.config.seed;
  index["n_clouds"] = set.config.n_clouds;
  index["n_points"] = set.config.n_points;
  ojson entries = ojson::array();
  for (const auto& b : set.batches) {
    const Matrix coords = batch_coordinates(cloud, b);
    std::string text = "index,x,y,z,label\n";
    for (std::size_t i = 0; i < b.indices.size(); ++i) {
      const auto r = static_cast<Eigen::Index>(i);
      text += std::to_string(b.indices[i]) + ',' + format_double(coords(r, 0)) + ',' +
              format_double(coords(r, 1)) + ',' + format_double(coords(r, 2)) + ',' +
              std::to_string(code(cloud.points.at(b.indices[i]).label)) + '\n';
    }
    const std::string name = batch_file_name(b.batch_index);
    write_text_file(dir / name, text);
    entries.push_back({{"file", name},
                       {"batch_index", b.batch_index},
                       {"centroid", {b.norm.centroid.x(), b.norm.centroid.y(), b.norm.centroid.z()}},
                       {"scale", b.norm.scale}});
  }
  index["batches"] = std::move(entries);
  write_text_file(dir / "index.json", index.dump(1) + "\n");
}

BatchSet load_batch_set(const fs::path& dir) {
  const std::string text = read_text_file(dir / "index.json");
  ojson index;
  try {
    index = ojson::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(line_of_offset(text, e.byte), std::string("index.json: ") + e.what());
  }
  BatchSet set;
  try {
    if (index.at("format") != "dgppu-batch-set") fail(ErrorKind::Schema, "not a batch set");
    set.cloud_ref = index.at("cloud_ref").get<std::string>();
    set.config.seed = index.at("seed").get<std::uint64_t>();
    set.config.n_clouds = index.at("n_clouds").get<std::size_t>();
    set.config.n_points = index.at("n_points").get<std::size_t>();
    for (const auto& e : index.at("batches")) {
      BatchSample b;
      b.cloud_ref = set.cloud_ref;
      b.batch_index = e.at("batch_index").get<std::size_t>();
      const auto& c = e.at("centroid");
      b.norm.centroid = {c.at(0).get<double>(), c.at(1).get<double>(), c.at(2).get<double>()};
      b.norm.scale = e.at("scale").get<double>();
      const std::string body = read_text_file(dir / e.at("file").get<std::string>());
      std::istringstream in(body);
      std::string line;
      std::getline(in, line);
      std::size_t line_no = 1;
      while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const auto comma = line.find(',');
        b.indices.push_back(static_cast<std::size_t>(
            parse_double(std::string_view(line).substr(0, comma), line_no)));
      }
      if (b.indices.size() != set.config.n_points) {
        fail(ErrorKind::Corruption, "batch " + std::to_string(b.batch_index) +
                                        ": expected " + std::to_string(set.config.n_points) +
                                        " indices");
      }
      set.batches.push_back(std::move(b));
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Schema, std::string("index.json: ") + e.what());
  }
  return set;
}

}  // namespace dgppu
