#include "dgppu/filter.hpp"
#include "dgppu/io.hpp"

#include <algorithm>
#include <limits>
#include <thread>

#include <nlohmann/json.hpp>

#include "dgppu/error.hpp"
#include "dgppu/log.hpp"
#include "dgppu/rng.hpp"

namespace dgppu {

using ojson = nlohmann::ordered_json;

std::string_view to_string(VoteRule rule) { return rule == VoteRule::Any ? "any" : "majority"; }

std::optional<VoteRule> parse_vote_rule(std::string_view name) {
  if (name == "any") return VoteRule::Any;
  if (name == "majority") return VoteRule::Majority;
  return std::nullopt;
}

void FilterConfig::validate() const {
  if (k < 1) fail(ErrorKind::InvalidConfig, "filter: k must be >= 1");
  if (n_clouds < 1) fail(ErrorKind::InvalidConfig, "filter: n_clouds must be >= 1");
  if (n_points < k + 1) {
    fail(ErrorKind::InvalidConfig, "filter: n_points must exceed k");
  }
  if (threads < 1) fail(ErrorKind::InvalidConfig, "filter: threads must be >= 1");
}

std::vector<std::uint8_t> flag_batch(std::span<const BoneLabel> predicted, const KnnGraph& graph) {
  if (predicted.size() != graph.n) {
    fail(ErrorKind::InvalidInput, "flag_batch: " + std::to_string(predicted.size()) +
                                      " labels for a graph over " + std::to_string(graph.n) +
                                      " points");
  }
  std::vector<std::uint8_t> flags(graph.n, 0);
  for (std::size_t i = 0; i < graph.n; ++i) {
    for (auto j : graph.row(i)) {
      if (predicted[j] != predicted[i]) {
        flags[i] = 1;
        break;
      }
    }
  }
  return flags;
}

std::vector<PointVerdict> aggregate_verdicts(const std::vector<BatchRecord>& records,
                                             std::size_t cloud_size, VoteRule rule) {
  std::vector<PointVerdict> verdicts(cloud_size);
  for (std::size_t i = 0; i < cloud_size; ++i) verdicts[i].point_index = i;
  for (const auto& r : records) {
    if (r.scored > r.indices.size() || r.predicted.size() != r.indices.size() ||
        r.flags.size() != r.indices.size()) {
      fail(ErrorKind::Corruption, "batch " + std::to_string(r.batch_index) + ": ragged record");
    }
    for (std::size_t s = 0; s < r.scored; ++s) {
      const std::size_t idx = r.indices[s];
      if (idx >= cloud_size) {
        fail(ErrorKind::Corruption, "batch " + std::to_string(r.batch_index) + ": index " +
                                        std::to_string(idx) + " outside cloud of " +
                                        std::to_string(cloud_size));
      }
      auto& v = verdicts[idx];
      ++v.appearances;
      v.flags += r.flags[s] ? 1 : 0;
      ++v.label_votes[static_cast<std::size_t>(code(r.predicted[s]))];
    }
  }
  for (auto& v : verdicts) {
    if (!v.decided()) continue;
    std::size_t best = 0;
    for (std::size_t c = 1; c < kNumClasses; ++c) {
      if (v.label_votes[c] > v.label_votes[best]) best = c;
    }
    v.final_label = static_cast<BoneLabel>(best);
    v.deleted = rule == VoteRule::Any ? v.flags >= 1 : 2 * v.flags > v.appearances;
  }
  return verdicts;
}

namespace {

BatchRecord evaluate_batch(const LabeledCloud& cloud, const BatchPredictor& predictor,
                           std::vector<std::size_t> indices, std::size_t scored, std::size_t k) {
  BatchRecord record;
  record.scored = scored;
  const Matrix coords = normalize(cloud.coordinates(indices)).coords;
  record.predicted = predictor(coords, indices);
  if (record.predicted.size() != indices.size()) {
    fail(ErrorKind::InvalidInput, "predictor returned the wrong number of labels");
  }
  record.flags = flag_batch(record.predicted, knn_graph(coords, k));
  record.indices = std::move(indices);
  return record;
}

template <typename Fn>
void parallel_for(std::size_t count, std::size_t threads, Fn&& fn) {
  threads = std::max<std::size_t>(1, std::min(threads, count));
  if (threads == 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(threads);
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < threads; ++t) {
    pool.emplace_back([&, t] {
      try {
        for (std::size_t i = t; i < count; i += threads) fn(i);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace

std::vector<BatchRecord> residual_pass(const LabeledCloud& cloud, const BatchPredictor& predictor,
                                       const std::vector<PointVerdict>& verdicts,
                                       const FilterConfig& cfg) {
  std::vector<std::size_t> undecided;
  std::vector<std::size_t> decided;
  for (const auto& v : verdicts) (v.decided() ? decided : undecided).push_back(v.point_index);
  std::vector<BatchRecord> records;
  if (undecided.empty()) return records;

  const Matrix coords = cloud.coordinates();
  for (std::size_t start = 0; start < undecided.size(); start += cfg.n_points) {
    const std::size_t end = std::min(undecided.size(), start + cfg.n_points);
    std::vector<std::size_t> chunk(undecided.begin() + static_cast<std::ptrdiff_t>(start),
                                   undecided.begin() + static_cast<std::ptrdiff_t>(end));
    const std::size_t scored = chunk.size();
    const std::size_t missing = cfg.n_points - scored;
    if (missing > 0) {
      // Nearest decided points to the chunk, by (distance, index).
      std::vector<std::pair<double, std::size_t>> nearest;
      nearest.reserve(decided.size());
      for (auto d : decided) {
        double best = std::numeric_limits<double>::infinity();
        for (auto c : chunk) {
          best = std::min(best, (coords.row(static_cast<Eigen::Index>(d)) -
                                 coords.row(static_cast<Eigen::Index>(c)))
                                    .squaredNorm());
        }
        nearest.emplace_back(best, d);
      }
      const std::size_t take = std::min(missing, nearest.size());
      std::partial_sort(nearest.begin(), nearest.begin() + static_cast<std::ptrdiff_t>(take),
                        nearest.end());
      for (std::size_t i = 0; i < take; ++i) chunk.push_back(nearest[i].second);
      // Tiny clouds: cycle what we have.
      for (std::size_t i = 0; chunk.size() < cfg.n_points; ++i) chunk.push_back(chunk[i]);
    }
    BatchRecord record = evaluate_batch(cloud, predictor, std::move(chunk), scored, cfg.k);
    record.batch_index = cfg.n_clouds + records.size();
    record.residual = true;
    records.push_back(std::move(record));
  }
  return records;
}

BatchPredictor network_predictor(const Network& net) {
  return [&net](const Matrix& coords, std::span<const std::size_t>) {
    return predict(net, coords).labels;
  };
}

BatchPredictor oracle_predictor(const LabeledCloud& cloud) {
  return [&cloud](const Matrix&, std::span<const std::size_t> indices) {
    std::vector<BoneLabel> out;
    out.reserve(indices.size());
    for (auto i : indices) out.push_back(cloud.points[i].label);
    return out;
  };
}

std::vector<BatchRecord> residual_pass(const LabeledCloud& cloud, const Network& net,
                                       const std::vector<PointVerdict>& verdicts,
                                       const FilterConfig& cfg) {
  return residual_pass(cloud, network_predictor(net), verdicts, cfg);
}

FilterResult filter_cloud(const LabeledCloud& cloud, const Network& net, const FilterConfig& cfg) {
  if (cfg.n_points <= net.arch.k) {
    fail(ErrorKind::InvalidConfig, "filter_cloud: n_points must exceed the network's k");
  }
  if (cfg.k != net.arch.k) {
    fail(ErrorKind::Validation, "filter k=" + std::to_string(cfg.k) +
                                    " does not match the network's k=" +
                                    std::to_string(net.arch.k));
  }
  return filter_cloud(cloud, network_predictor(net), cfg);
}

FilterResult filter_cloud(const LabeledCloud& cloud, const BatchPredictor& predictor,
                          const FilterConfig& cfg) {
  cfg.validate();
  if (cloud.empty()) fail(ErrorKind::EmptyInput, "filter_cloud: empty cloud");
  if (cloud.size() < cfg.k + 1) {
    fail(ErrorKind::InsufficientPoints, "filter_cloud: cloud of " + std::to_string(cloud.size()) +
                                            " points cannot support k=" + std::to_string(cfg.k));
  }
  if (cfg.n_points <= cfg.k) {
    fail(ErrorKind::InvalidConfig, "filter_cloud: n_points must exceed k");
  }

  const auto samples = sample_batches(cloud, cfg.sample_config());
  std::vector<BatchRecord> records(samples.size());
  parallel_for(samples.size(), cfg.threads, [&](std::size_t b) {
    records[b] = evaluate_batch(cloud, predictor, samples[b].indices, samples[b].indices.size(), cfg.k);
    records[b].batch_index = samples[b].batch_index;
  });

  std::vector<PointVerdict> verdicts = aggregate_verdicts(records, cloud.size(), cfg.vote_rule);
  FilterResult result;
  if (cfg.include_residual_pass) {
    auto extra = residual_pass(cloud, predictor, verdicts, cfg);
    for (const auto& r : extra) result.report.residual_points += r.scored;
    if (!extra.empty()) {
      records.insert(records.end(), std::make_move_iterator(extra.begin()),
                     std::make_move_iterator(extra.end()));
      verdicts = aggregate_verdicts(records, cloud.size(), cfg.vote_rule);
    }
  }

  auto& report = result.report;
  report.scan_id = cloud.source;
  report.config = cfg;
  result.retained.source = cloud.source;
  result.deleted.source = cloud.source;
  for (const auto& v : verdicts) {
    const auto& p = cloud.points[v.point_index];
    if (v.deleted) {
      report.deleted.push_back(v.point_index);
      result.deleted.points.push_back(p);
      ++report.deletions_per_frame[{p.provenance.scan_id, p.provenance.frame_index}];
    } else {
      report.retained.push_back(v.point_index);
      result.retained.points.push_back(p);
    }
  }
  report.verdicts = std::move(verdicts);
  if (cfg.record_batches) report.batches = std::move(records);
  log::info("filter " + cloud.source + ": deleted " + std::to_string(report.deleted.size()) +
            " of " + std::to_string(cloud.size()) + " points");
  return result;
}

std::string report_to_string(const FilterReport& report) {
  ojson j;
  j["format"] = "dgppu-filter-report";
  j["version"] = 1;
  j["scan_id"] = report.scan_id;
  const auto& c = report.config;
  j["config"] = {{"k", c.k},
                 {"vote_rule", std::string(to_string(c.vote_rule))},
                 {"include_residual_pass", c.include_residual_pass},
                 {"seed", c.seed},
                 {"n_clouds", c.n_clouds},
                 {"n_points", c.n_points},
                 {"record_batches", c.record_batches},
                 {"prng", SplitMix64::kAlgorithm}};
  j["summary"] = {{"points", report.verdicts.size()},
                  {"retained", report.retained.size()},
                  {"deleted", report.deleted.size()},
                  {"residual_points", report.residual_points}};
  ojson frames = ojson::array();
  for (const auto& [key, count] : report.deletions_per_frame) {
    frames.push_back({{"scan_id", key.first}, {"frame", key.second}, {"deleted", count}});
  }
  j["deletions_per_frame"] = std::move(frames);

  ojson appear = ojson::array(), flags = ojson::array(), votes = ojson::array(),
        label = ojson::array(), deleted = ojson::array();
  for (const auto& v : report.verdicts) {
    appear.push_back(v.appearances);
    flags.push_back(v.flags);
    votes.push_back({v.label_votes[0], v.label_votes[1], v.label_votes[2]});
    label.push_back(code(v.final_label));
    deleted.push_back(v.deleted ? 1 : 0);
  }
  j["verdicts"] = {{"appearances", std::move(appear)},
                   {"flags", std::move(flags)},
                   {"label_votes", std::move(votes)},
                   {"final_label", std::move(label)},
                   {"deleted", std::move(deleted)}};
  j["retained"] = report.retained;
  j["deleted"] = report.deleted;
  ojson batches = ojson::array();
  for (const auto& r : report.batches) {
    ojson pred = ojson::array();
    for (auto l : r.predicted) pred.push_back(code(l));
    batches.push_back({{"batch_index", r.batch_index},
                       {"residual", r.residual},
                       {"scored", r.scored},
                       {"indices", r.indices},
                       {"predicted", std::move(pred)},
                       {"flags", r.flags}});
  }
  j["batches"] = std::move(batches);
  return j.dump() + "\n";
}

FilterReport report_from_string(const std::string& text) {
  ojson j;
  try {
    j = ojson::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(line_of_offset(text, e.byte), std::string("filter report: ") + e.what());
  }
  FilterReport r;
  try {
    if (j.at("format") != "dgppu-filter-report") fail(ErrorKind::Schema, "not a filter report");
    r.scan_id = j.at("scan_id").get<std::string>();
    const auto& c = j.at("config");
    r.config.k = c.at("k").get<std::size_t>();
    const auto rule = parse_vote_rule(c.at("vote_rule").get<std::string>());
    if (!rule) fail(ErrorKind::Schema, "unknown vote_rule");
    r.config.vote_rule = *rule;
    r.config.include_residual_pass = c.at("include_residual_pass").get<bool>();
    r.config.seed = c.at("seed").get<std::uint64_t>();
    r.config.n_clouds = c.at("n_clouds").get<std::size_t>();
    r.config.n_points = c.at("n_points").get<std::size_t>();
    r.config.record_batches = c.at("record_batches").get<bool>();
    r.residual_points = j.at("summary").at("residual_points").get<std::size_t>();
    for (const auto& f : j.at("deletions_per_frame")) {
      r.deletions_per_frame[{f.at("scan_id").get<std::string>(), f.at("frame").get<int>()}] =
          f.at("deleted").get<std::size_t>();
    }
    const auto& v = j.at("verdicts");
    const auto& appear = v.at("appearances");
    const std::size_t n = appear.size();
    for (std::size_t i = 0; i < n; ++i) {
      PointVerdict pv;
      pv.point_index = i;
      pv.appearances = appear.at(i).get<std::size_t>();
      pv.flags = v.at("flags").at(i).get<std::size_t>();
      for (std::size_t c2 = 0; c2 < kNumClasses; ++c2) {
        pv.label_votes[c2] = v.at("label_votes").at(i).at(c2).get<std::size_t>();
      }
      const auto lbl = label_from_code(v.at("final_label").at(i).get<int>());
      if (!lbl) fail(ErrorKind::Schema, "verdict " + std::to_string(i) + ": unknown label code");
      pv.final_label = *lbl;
      pv.deleted = v.at("deleted").at(i).get<int>() != 0;
      r.verdicts.push_back(pv);
    }
    r.retained = j.at("retained").get<std::vector<std::size_t>>();
    r.deleted = j.at("deleted").get<std::vector<std::size_t>>();
    for (const auto& b : j.at("batches")) {
      BatchRecord rec;
      rec.batch_index = b.at("batch_index").get<std::size_t>();
      rec.residual = b.at("residual").get<bool>();
      rec.scored = b.at("scored").get<std::size_t>();
      rec.indices = b.at("indices").get<std::vector<std::size_t>>();
      for (const auto& p : b.at("predicted")) {
        const auto lbl = label_from_code(p.get<int>());
        if (!lbl) fail(ErrorKind::Schema, "batch record: unknown label code");
        rec.predicted.push_back(*lbl);
      }
      rec.flags = b.at("flags").get<std::vector<std::uint8_t>>();
      r.batches.push_back(std::move(rec));
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Schema, std::string("filter report: ") + e.what());
  }
  if (r.retained.size() + r.deleted.size() != r.verdicts.size()) {
    fail(ErrorKind::Corruption, "filter report: retained and deleted do not cover all points");
  }
  return r;
}

}  // namespace dgppu
