#include <algorithm>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "dgppu/config.hpp"
#include "dgppu/error.hpp"
#include "dgppu/filter.hpp"
#include "dgppu/inversion.hpp"
#include "dgppu/io.hpp"
#include "dgppu/log.hpp"
#include "dgppu/model.hpp"
#include "dgppu/phantom.hpp"
#include "dgppu/rng.hpp"
#include "dgppu/sampling.hpp"

namespace fs = std::filesystem;
using namespace dgppu;

namespace {

enum ExitCode : int {
  kOk = 0,
  kOther = 1,
  kUsage = 2,
  kValidation = 3,
  kIo = 4,
  kCorruption = 5,
};

int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidConfig:
      return kUsage;
    case ErrorKind::Validation:
    case ErrorKind::WrongFrame:
    case ErrorKind::Parse:
    case ErrorKind::Schema:
      return kValidation;
    case ErrorKind::Io:
      return kIo;
    case ErrorKind::Corruption:
      return kCorruption;
    default:
      return kOther;
  }
}

class Table {
 public:
  explicit Table(std::vector<std::string> header) : header_(std::move(header)) {}

  void row(std::vector<std::string> cells) { rows_.push_back(std::move(cells)); }

  void print(std::ostream& out, bool csv) const {
    if (csv) {
      auto line = [&](const std::vector<std::string>& cells) {
        for (std::size_t i = 0; i < cells.size(); ++i) out << (i ? "," : "") << cells[i];
        out << '\n';
      };
      line(header_);
      for (const auto& r : rows_) line(r);
      return;
    }
    std::vector<std::size_t> width(header_.size());
    for (std::size_t i = 0; i < header_.size(); ++i) width[i] = header_[i].size();
    for (const auto& r : rows_) {
      for (std::size_t i = 0; i < r.size() && i < width.size(); ++i) {
        width[i] = std::max(width[i], r[i].size());
      }
    }
    auto line = [&](const std::vector<std::string>& cells) {
      for (std::size_t i = 0; i < cells.size(); ++i) {
        if (i) out << "  ";
        if (i == 0) {
          out << std::left << std::setw(static_cast<int>(width[i])) << cells[i];
        } else {
          out << std::right << std::setw(static_cast<int>(width[i])) << cells[i];
        }
      }
      out << '\n';
    };
    line(header_);
    for (const auto& r : rows_) line(r);
  }

 private:
  std::vector<std::string> header_;
  std::vector<std::vector<std::string>> rows_;
};

std::string fixed(double v, int digits) {
  std::ostringstream ss;
  ss << std::fixed << std::setprecision(digits) << v;
  return ss.str();
}

struct Globals {
  std::string config_path;
  std::vector<std::string> overrides;
  bool csv = false;
  bool verbose = false;
};

CliConfig resolve_config(const Globals& g) {
  CliConfig cfg = g.config_path.empty() ? CliConfig{} : load_config(g.config_path);
  for (const auto& o : g.overrides) apply_override(cfg, o);
  return cfg;
}

std::string keys_footer() {
  std::ostringstream out;
  out << "Config keys (JSON file via --config, or --set key=value):\n";
  for (const auto& k : config_keys()) {
    out << "  " << std::left << std::setw(30) << k.name << std::setw(20) << k.type << k.help
        << '\n';
  }
  out << "Exit codes: 0 ok, 1 other failure, 2 usage/config, 3 validation, 4 I/O, 5 corruption.";
  return out.str();
}

std::vector<std::string> scan_ids(const std::vector<Position>& positions, ScanKind kind) {
  std::vector<std::string> out;
  for (auto p : positions) out.push_back(default_scan_id(p, kind));
  return out;
}

fs::path manifest_path(const CliConfig& cfg, const std::string& scan_id) {
  return cfg.paths.data_dir / (scan_id + ".manifest.json");
}

ScanRecord load_scan(const CliConfig& cfg, const std::string& scan_id) {
  const auto path = manifest_path(cfg, scan_id);
  if (!fs::exists(path)) {
    fail(ErrorKind::Io, "missing manifest '" + path.string() + "' (run gen-phantom first)");
  }
  return load_manifest(path);
}

std::string counts_cell(const LabelCounts& c) {
  return std::to_string(c[0]) + "/" + std::to_string(c[1]) + "/" + std::to_string(c[2]);
}

// ---- gen-phantom ----------------------------------------------------------

int cmd_gen_phantom(const Globals& g) {
  CliConfig cfg = resolve_config(g);
  if (cfg.thorough_positions.empty() && cfg.partial_positions.empty()) {
    std::cerr << "gen-phantom: empty position list\n";
    return kUsage;
  }
  cfg.validate();
  std::error_code ec;
  fs::create_directories(cfg.paths.data_dir, ec);
  if (ec || !fs::is_directory(cfg.paths.data_dir)) {
    fail(ErrorKind::Io, "cannot create output directory '" + cfg.paths.data_dir.string() + "'");
  }

  Table table({"scan_id", "position", "kind", "frames", "points", "femur/patella/tibia",
               "artifacts", "floaters"});
  nlohmann::ordered_json index;
  index["format"] = "dgppu-dataset";
  index["seed"] = cfg.seed;
  index["phantom_seed"] = phantom_seed(cfg);
  index["prng"] = SplitMix64::kAlgorithm;
  index["scans"] = nlohmann::ordered_json::array();

  auto emit = [&](Position p, ScanKind kind) {
    PhantomConfig pc = cfg.phantom;
    pc.position = p;
    pc.kind = kind;
    const ScanRecord scan = gen_phantom(pc, phantom_seed(cfg));
    const LabeledCloud cloud = build_cloud(scan);
    save_manifest(manifest_path(cfg, scan.scan_id), scan);
    save_cloud_csv(cfg.paths.data_dir / (scan.scan_id + ".cloud.csv"), cloud);
    save_cloud_ply(cfg.paths.data_dir / (scan.scan_id + ".ply"), cloud);
    std::size_t artifacts = 0;
    std::size_t floaters = 0;
    for (const auto& f : scan.frames) {
      for (const auto& pt : f.points) {
        artifacts += pt.is_artifact();
        floaters += pt.artifact == ArtifactKind::Floater;
      }
    }
    table.row({scan.scan_id, std::string(to_string(p)), std::string(to_string(kind)),
               std::to_string(scan.frames.size()), std::to_string(cloud.size()),
               counts_cell(class_histogram(cloud)), std::to_string(artifacts),
               std::to_string(floaters)});
    index["scans"].push_back(scan.scan_id);
  };
  for (auto p : cfg.thorough_positions) emit(p, ScanKind::Thorough);
  for (auto p : cfg.partial_positions) emit(p, ScanKind::Partial);
  index["config"] = nlohmann::ordered_json::parse(config_to_string(cfg));
  write_text_file(cfg.paths.data_dir / "dataset.json", index.dump(2) + "\n");
  table.print(std::cout, g.csv);
  return kOk;
}

// ---- sample ---------------------------------------------------------------

LabeledCloud training_cloud(const CliConfig& cfg, const ScanRecord& scan, std::size_t index) {
  LabeledCloud cloud = build_cloud(scan);
  if (!cfg.augment.enabled) return cloud;
  return augment_minority(cloud, cfg.augment.resolve(cloud), augment_seed(cfg, index));
}

int cmd_sample(const Globals& g, std::vector<std::string> scans, bool write) {
  CliConfig cfg = resolve_config(g);
  cfg.validate();
  if (scans.empty()) scans = scan_ids(cfg.thorough_positions, ScanKind::Thorough);
  Table table({"scan_id", "points", "batches", "n_points", "coverage", "min_femur",
               "min_patella", "min_tibia", "guarantee"});
  for (std::size_t s = 0; s < scans.size(); ++s) {
    const LabeledCloud cloud = training_cloud(cfg, load_scan(cfg, scans[s]), s);
    SampleConfig sc = cfg.sample;
    sc.seed = sample_seed(cfg, s);
    const auto batches = sample_batches(cloud, sc);
    std::vector<char> seen(cloud.size(), 0);
    LabelCounts min_counts{sc.n_points, sc.n_points, sc.n_points};
    for (const auto& b : batches) {
      for (auto i : b.indices) seen[i] = 1;
      const auto h = class_histogram(cloud, b);
      for (std::size_t c = 0; c < kNumClasses; ++c) min_counts[c] = std::min(min_counts[c], h[c]);
    }
    const auto hist = class_histogram(cloud);
    const auto minority = *std::min_element(hist.begin(), hist.end());
    const double p = static_cast<double>(minority) / static_cast<double>(cloud.size());
    const double coverage = static_cast<double>(std::count(seen.begin(), seen.end(), 1)) /
                            static_cast<double>(cloud.size());
    table.row({scans[s], std::to_string(cloud.size()), std::to_string(batches.size()),
               std::to_string(sc.n_points), fixed(coverage, 4), std::to_string(min_counts[0]),
               std::to_string(min_counts[1]), std::to_string(min_counts[2]),
               format_double(min_class_guarantee(p, sc.n_points, cfg.model.k, sc.n_clouds))});
    if (write) {
      save_batch_set(cfg.paths.data_dir / "batches" / scans[s], cloud,
                     BatchSet{cloud.source, sc, batches});
    }
  }
  table.print(std::cout, g.csv);
  return kOk;
}

// ---- train ----------------------------------------------------------------

int cmd_train(const Globals& g) {
  CliConfig cfg = resolve_config(g);
  cfg.validate();
  const auto scans = scan_ids(cfg.thorough_positions, ScanKind::Thorough);
  if (scans.empty()) fail(ErrorKind::InvalidConfig, "train: no thorough positions configured");

  std::vector<TrainingBatch> batches;
  for (std::size_t s = 0; s < scans.size(); ++s) {
    const ScanRecord scan = load_scan(cfg, scans[s]);
    const LabeledCloud cloud = training_cloud(cfg, scan, s);
    SampleConfig sc = cfg.sample;
    sc.seed = sample_seed(cfg, s);
    const auto samples = sample_batches(cloud, sc);
    auto b = training_batches(cloud, samples, scan.position);
    batches.insert(batches.end(), std::make_move_iterator(b.begin()),
                   std::make_move_iterator(b.end()));
    log::info("train: " + scans[s] + " contributed " + std::to_string(samples.size()) +
              " batches");
  }

  TrainConfig tc = cfg.train;
  tc.seed = train_seed(cfg);
  std::string metrics = metrics_csv_header();
  const TrainResult result = train(batches, cfg.model, tc, [&](const EpochMetrics& m) {
    metrics += metrics_csv_row(m);
    log::info("epoch " + std::to_string(m.epoch) + " train_loss " + format_double(m.train_loss) +
              " val_loss " + format_double(m.val_loss));
  });

  CheckpointMeta meta;
  meta.seed = tc.seed;
  meta.best_epoch = result.best_epoch;
  meta.epochs_run = result.history.size();
  meta.n_points = cfg.sample.n_points;
  meta.training_scans = scans;
  save_checkpoint(cfg.paths.checkpoint, result.net, meta);
  write_text_file(cfg.paths.metrics, metrics);

  const auto& best = result.history.at(result.best_epoch - 1);
  if (result.stopped_early) {
    std::cout << "early stopping after epoch " << result.history.size() << " (patience "
              << tc.patience << "); best epoch " << result.best_epoch << '\n';
  } else {
    std::cout << "reached max_epochs " << tc.max_epochs << "; best epoch " << result.best_epoch
              << '\n';
  }
  Table table({"best_epoch", "val_loss", "accuracy", "macro_f1", "macro_iou", "train_seed"});
  table.row({std::to_string(result.best_epoch), format_double(best.val_loss),
             fixed(best.val.accuracy, 4), fixed(best.val.macro_f1, 4),
             fixed(best.val.macro_iou, 4), std::to_string(tc.seed)});
  table.print(std::cout, g.csv);
  return kOk;
}

// ---- filter ---------------------------------------------------------------

Network load_network(const CliConfig& cfg, CheckpointMeta* meta) {
  if (!fs::exists(cfg.paths.checkpoint)) {
    fail(ErrorKind::Io, "missing checkpoint '" + cfg.paths.checkpoint.string() + "'");
  }
  Network net = load_checkpoint(cfg.paths.checkpoint, meta);
  if (net.arch.input_dim != 3) {
    fail(ErrorKind::Validation, "checkpoint expects " + std::to_string(net.arch.input_dim) +
                                    "-dimensional input, manifests carry 3-D points");
  }
  return net;
}

int cmd_filter(const Globals& g, std::vector<std::string> scans) {
  CliConfig cfg = resolve_config(g);
  cfg.validate();
  if (scans.empty()) scans = scan_ids(cfg.partial_positions, ScanKind::Partial);
  CheckpointMeta meta;
  const Network net = load_network(cfg, &meta);
  FilterConfig fc = cfg.filter;
  fc.seed = filter_seed(cfg);

  std::error_code ec;
  fs::create_directories(cfg.paths.reports_dir, ec);
  if (ec) fail(ErrorKind::Io, "cannot create '" + cfg.paths.reports_dir.string() + "'");

  Table table({"scan_id", "points", "retained", "deleted", "residual_points", "filter_seed"});
  for (const auto& id : scans) {
    if (std::find(meta.training_scans.begin(), meta.training_scans.end(), id) !=
        meta.training_scans.end()) {
      log::warn("filter: " + id + " was part of the training data");
    }
    const LabeledCloud cloud = build_cloud(load_scan(cfg, id));
    const FilterResult r = filter_cloud(cloud, net, fc);
    write_text_file(cfg.paths.reports_dir / (id + ".report.json"), report_to_string(r.report));
    save_cloud_csv(cfg.paths.reports_dir / (id + ".retained.csv"), r.retained);
    save_cloud_csv(cfg.paths.reports_dir / (id + ".deleted.csv"), r.deleted);
    table.row({id, std::to_string(cloud.size()), std::to_string(r.report.retained.size()),
               std::to_string(r.report.deleted.size()), std::to_string(r.report.residual_points),
               std::to_string(fc.seed)});
  }
  table.print(std::cout, g.csv);
  return kOk;
}

// ---- invert ---------------------------------------------------------------

int cmd_invert(const Globals& g, std::vector<std::string> scans, bool svg) {
  CliConfig cfg = resolve_config(g);
  cfg.validate();
  if (scans.empty()) scans = scan_ids(cfg.partial_positions, ScanKind::Partial);
  Table table({"scan_id", "frames", "frames_with_deletions", "failed_frames", "deleted_pixels"});
  for (const auto& id : scans) {
    const ScanRecord scan = load_scan(cfg, id);
    const LabeledCloud cloud = build_cloud(scan);
    const auto report_path = cfg.paths.reports_dir / (id + ".report.json");
    if (!fs::exists(report_path)) {
      fail(ErrorKind::Io, "missing filter report '" + report_path.string() + "'");
    }
    const FilterReport report = report_from_string(read_text_file(report_path));
    OverlaySet set{id, scan.position, invert_cloud(report, cloud, scan)};
    save_overlays(cfg.paths.overlays_dir / id, set, svg);
    std::size_t with_deletions = 0;
    std::size_t failed = 0;
    std::size_t pixels = 0;
    for (const auto& o : set.overlays) {
      with_deletions += o.has_deletions();
      failed += o.has_deletions() && o.failed();
      pixels += o.deleted.size();
    }
    table.row({id, std::to_string(set.overlays.size()), std::to_string(with_deletions),
               std::to_string(failed), std::to_string(pixels)});
  }
  table.print(std::cout, g.csv);
  return kOk;
}

// ---- eval -----------------------------------------------------------------

int cmd_eval(const Globals& g, std::vector<std::string> scans,
             const std::vector<std::string>& overlay_dirs, const std::string& json_out) {
  std::vector<fs::path> dirs(overlay_dirs.begin(), overlay_dirs.end());
  if (dirs.empty()) {
    CliConfig cfg = resolve_config(g);
    cfg.validate();
    if (scans.empty()) scans = scan_ids(cfg.partial_positions, ScanKind::Partial);
    for (const auto& id : scans) dirs.push_back(cfg.paths.overlays_dir / id);
  }
  std::vector<PrecisionSummary> summaries;
  for (const auto& d : dirs) {
    if (!fs::exists(d / "index.json")) fail(ErrorKind::Io, "missing overlays in '" + d.string() + "'");
    const OverlaySet set = load_overlays(d);
    summaries.push_back(frame_precision(set.overlays, set.position));
  }
  std::cout << precision_table(summaries, g.csv);
  if (!json_out.empty()) write_text_file(json_out, summaries_to_json(summaries));
  return kOk;
}

// ---- kprob ----------------------------------------------------------------

struct KprobArgs {
  double p = -1.0;
  std::size_t n = 0;
  std::optional<std::size_t> k;
  std::size_t batches = 0;
  double solve = -1.0;
};

int cmd_kprob(const Globals& g, KprobArgs a) {
  CliConfig cfg = resolve_config(g);
  if (a.n == 0) a.n = cfg.sample.n_points;
  if (a.batches == 0) a.batches = cfg.sample.n_clouds;
  const std::size_t k = a.k.value_or(cfg.model.k);
  Table table({"p", "n", "k", "batches", "probability"});
  if (a.solve >= 0.0) {
    const double p = solve_minority_fraction(a.solve, a.n, k, a.batches);
    table.row({format_double(p), std::to_string(a.n), std::to_string(k),
               std::to_string(a.batches), format_double(min_class_guarantee(p, a.n, k, a.batches))});
  } else {
    if (a.p < 0.0) fail(ErrorKind::InvalidConfig, "kprob: --p is required unless --solve is given");
    table.row({format_double(a.p), std::to_string(a.n), std::to_string(k),
               std::to_string(a.batches), format_double(min_class_guarantee(a.p, a.n, k, a.batches))});
  }
  table.print(std::cout, g.csv);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dgppu: dynamic-graph post-processing for labeled ultrasound point clouds"};
  app.fallthrough();
  app.require_subcommand(1);
  Globals g;
  app.add_option("-c,--config", g.config_path, "JSON pipeline config")->check(CLI::ExistingFile);
  app.add_option("--set", g.overrides, "override a config key, e.g. --set train.lr=0.01");
  app.add_flag("--csv", g.csv, "print tables as CSV");
  app.add_flag("-v,--verbose", g.verbose, "log progress to stderr");
  app.footer(keys_footer());

  auto* gen = app.add_subcommand("gen-phantom", "generate phantom scans (manifests, CSV, PLY)");
  auto* sample = app.add_subcommand("sample", "augment and sample batches, report coverage");
  auto* trn = app.add_subcommand("train", "augment, sample and train; writes checkpoint + metrics");
  auto* flt = app.add_subcommand("filter", "flag and delete mixed-neighbourhood points");
  auto* inv = app.add_subcommand("invert", "map filter verdicts back onto source frames");
  auto* evl = app.add_subcommand("eval", "frame-level precision per position and mean");
  auto* kpr = app.add_subcommand("kprob", "probability that every batch holds k minority points");

  std::vector<std::string> scans;
  bool write_batches = false;
  bool svg = false;
  std::vector<std::string> overlay_dirs;
  KprobArgs kp;
  sample->add_option("--scan", scans, "scan ids (default: thorough scans)");
  sample->add_flag("--write", write_batches, "write batch sets under <data_dir>/batches");
  flt->add_option("--scan", scans, "scan ids (default: partial scans)");
  inv->add_option("--scan", scans, "scan ids (default: partial scans)");
  inv->add_flag("--svg", svg, "also render an SVG per frame with deletions");
  evl->add_option("--scan", scans, "scan ids (default: partial scans)");
  evl->add_option("--overlays", overlay_dirs, "overlay directories to evaluate instead of scans");
  std::string json_out;
  evl->add_option("--json", json_out, "also write the summary as JSON");
  kpr->add_option("--p", kp.p, "minority class fraction")->check(CLI::Range(0.0, 1.0));
  kpr->add_option("--n", kp.n, "points per batch (default sample.n_points)");
  kpr->add_option("--k", kp.k, "required minority points per batch (default model.k)");
  kpr->add_option("--batches", kp.batches, "number of batches (default sample.n_clouds)");
  kpr->add_option("--solve", kp.solve, "find the minority fraction reaching this probability")
      ->check(CLI::Range(0.0, 1.0));
  for (auto* sub : {gen, sample, trn, flt, inv, evl, kpr}) sub->footer(keys_footer());

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }
  if (g.verbose) log::set_level(log::Level::Info);

  try {
    if (*gen) return cmd_gen_phantom(g);
    if (*sample) return cmd_sample(g, scans, write_batches);
    if (*trn) return cmd_train(g);
    if (*flt) return cmd_filter(g, scans);
    if (*inv) return cmd_invert(g, scans, svg);
    if (*evl) return cmd_eval(g, scans, overlay_dirs, json_out);
    if (*kpr) return cmd_kprob(g, kp);
  } catch (const Error& e) {
    std::cerr << "error (" << to_string(e.kind()) << "): " << e.what() << '\n';
    return exit_code_for(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kOther;
  }
  return kOther;
}
