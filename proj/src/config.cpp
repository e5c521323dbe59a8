#include "dgppu/config.hpp"

#include <algorithm>
#include <functional>
#include <map>

#include <nlohmann/json.hpp>

#include "dgppu/error.hpp"
#include "dgppu/io.hpp"
#include "dgppu/rng.hpp"

namespace dgppu {

namespace {

using ojson = nlohmann::ordered_json;

struct KeyBinding {
  ConfigKey doc;
  std::function<void(CliConfig&, const ojson&)> set;
  std::function<ojson(const CliConfig&)> get;
};

template <typename T>
T as(const ojson& v, const std::string& key) {
  try {
    return v.get<T>();
  } catch (const nlohmann::json::exception&) {
    fail(ErrorKind::InvalidConfig, "config key '" + key + "' has the wrong type");
  }
}

std::size_t as_count(const ojson& v, const std::string& key) {
  if (!v.is_number_unsigned()) {
    fail(ErrorKind::InvalidConfig, "config key '" + key + "' must be a non-negative integer");
  }
  return v.get<std::size_t>();
}

std::vector<Position> as_positions(const ojson& v, const std::string& key) {
  std::vector<Position> out;
  for (const auto& name : as<std::vector<std::string>>(v, key)) {
    const auto p = parse_position(name);
    if (!p) fail(ErrorKind::InvalidConfig, "config key '" + key + "': unknown position " + name);
    out.push_back(*p);
  }
  return out;
}

ojson positions_json(const std::vector<Position>& ps) {
  ojson out = ojson::array();
  for (auto p : ps) out.push_back(std::string(to_string(p)));
  return out;
}

ojson optional_json(const std::optional<double>& v) { return v ? ojson(*v) : ojson(nullptr); }

std::optional<double> as_optional(const ojson& v, const std::string& key) {
  if (v.is_null()) return std::nullopt;
  return as<double>(v, key);
}

#define DGPPU_SCALAR(NAME, TYPE, HELP, FIELD, CONVERT)                          \
  KeyBinding {                                                                  \
    {NAME, TYPE, HELP}, [](CliConfig& c, const ojson& v) { c.FIELD = CONVERT; }, \
        [](const CliConfig& c) { return ojson(c.FIELD); }                       \
  }

std::vector<KeyBinding> make_bindings() {
  std::vector<KeyBinding> b;
  b.push_back(DGPPU_SCALAR("seed", "uint", "master seed; every stage seed derives from it", seed,
                           as<std::uint64_t>(v, "seed")));
  b.push_back({{"dataset.thorough_positions", "[P0..P3]", "positions scanned thoroughly (training)"},
               [](CliConfig& c, const ojson& v) {
                 c.thorough_positions = as_positions(v, "dataset.thorough_positions");
               },
               [](const CliConfig& c) { return positions_json(c.thorough_positions); }});
  b.push_back({{"dataset.partial_positions", "[P0..P3]", "positions scanned partially (test)"},
               [](CliConfig& c, const ojson& v) {
                 c.partial_positions = as_positions(v, "dataset.partial_positions");
               },
               [](const CliConfig& c) { return positions_json(c.partial_positions); }});

  b.push_back(DGPPU_SCALAR("phantom.frame_count", "int", "frames in a thorough sweep",
                           phantom.frame_count, as<int>(v, "phantom.frame_count")));
  b.push_back(DGPPU_SCALAR("phantom.line_density", "float", "surface samples per mm along a line",
                           phantom.line_density, as<double>(v, "phantom.line_density")));
  b.push_back(DGPPU_SCALAR("phantom.artifact_rate", "float", "artifacts per true bone point",
                           phantom.artifact_rate, as<double>(v, "phantom.artifact_rate")));
  b.push_back(DGPPU_SCALAR("phantom.floater_fraction", "float",
                           "share of artifacts placed in inter-bone gaps",
                           phantom.floater_fraction, as<double>(v, "phantom.floater_fraction")));
  b.push_back(DGPPU_SCALAR("phantom.noise_scale", "float", "mm, in-plane jitter of bone samples",
                           phantom.noise_scale, as<double>(v, "phantom.noise_scale")));
  b.push_back(DGPPU_SCALAR("phantom.gap", "float", "mm, minimum distance between bone surfaces",
                           phantom.gap, as<double>(v, "phantom.gap")));
  b.push_back(DGPPU_SCALAR("phantom.floater_margin", "float",
                           "fraction of the gap kept clear of floaters at each side",
                           phantom.floater_margin, as<double>(v, "phantom.floater_margin")));
  b.push_back(DGPPU_SCALAR("phantom.pixel_sx", "float", "mm per pixel along u", phantom.pixel_sx,
                           as<double>(v, "phantom.pixel_sx")));
  b.push_back(DGPPU_SCALAR("phantom.pixel_sy", "float", "mm per pixel along v", phantom.pixel_sy,
                           as<double>(v, "phantom.pixel_sy")));
  b.push_back(DGPPU_SCALAR("phantom.partial_frame_stride", "int",
                           "partial sweeps keep every n-th frame", phantom.partial_frame_stride,
                           as<int>(v, "phantom.partial_frame_stride")));
  b.push_back(DGPPU_SCALAR("phantom.partial_line_keep", "float",
                           "probability a line survives in a partial sweep",
                           phantom.partial_line_keep, as<double>(v, "phantom.partial_line_keep")));

  b.push_back(DGPPU_SCALAR("sample.n_clouds", "uint", "training batches drawn per scan",
                           sample.n_clouds, as_count(v, "sample.n_clouds")));
  b.push_back(DGPPU_SCALAR("sample.n_points", "uint", "points per training batch",
                           sample.n_points, as_count(v, "sample.n_points")));

  b.push_back(DGPPU_SCALAR("augment.enabled", "bool", "duplicate the minority class before sampling",
                           augment.enabled, as<bool>(v, "augment.enabled")));
  b.push_back({{"augment.target_label", "femur|patella|tibia", "class to duplicate"},
               [](CliConfig& c, const ojson& v) {
                 const auto l = parse_label(as<std::string>(v, "augment.target_label"));
                 if (!l) fail(ErrorKind::InvalidConfig, "augment.target_label: unknown label");
                 c.augment.target_label = *l;
               },
               [](const CliConfig& c) { return ojson(std::string(to_string(c.augment.target_label))); }});
  b.push_back({{"augment.jitter_sigma", "float|null", "mm; null means 0.01 x cloud scale"},
               [](CliConfig& c, const ojson& v) {
                 c.augment.jitter_sigma = as_optional(v, "augment.jitter_sigma");
               },
               [](const CliConfig& c) { return optional_json(c.augment.jitter_sigma); }});
  b.push_back({{"augment.jitter_clip", "float|null", "mm; null means 0.05 x cloud scale"},
               [](CliConfig& c, const ojson& v) {
                 c.augment.jitter_clip = as_optional(v, "augment.jitter_clip");
               },
               [](const CliConfig& c) { return optional_json(c.augment.jitter_clip); }});
  b.push_back({{"augment.translation_range", "float|null", "mm; null means 0.1 x cloud scale"},
               [](CliConfig& c, const ojson& v) {
                 c.augment.translation_range = as_optional(v, "augment.translation_range");
               },
               [](const CliConfig& c) { return optional_json(c.augment.translation_range); }});

  b.push_back({{"model.edge_widths", "[uint]", "output width of each edge convolution"},
               [](CliConfig& c, const ojson& v) {
                 c.model.edge_widths = as<std::vector<std::size_t>>(v, "model.edge_widths");
               },
               [](const CliConfig& c) { return ojson(c.model.edge_widths); }});
  b.push_back(DGPPU_SCALAR("model.head_hidden", "uint", "width of the hidden head layer",
                           model.head_hidden, as_count(v, "model.head_hidden")));
  b.push_back(DGPPU_SCALAR("model.k", "uint", "neighbours per point in every graph", model.k,
                           as_count(v, "model.k")));
  b.push_back(DGPPU_SCALAR("model.slope", "float", "leaky rectifier slope", model.slope,
                           as<double>(v, "model.slope")));

  b.push_back(DGPPU_SCALAR("train.lr", "float", "Adam learning rate", train.adam.lr,
                           as<double>(v, "train.lr")));
  b.push_back(DGPPU_SCALAR("train.beta1", "float", "Adam first moment decay", train.adam.beta1,
                           as<double>(v, "train.beta1")));
  b.push_back(DGPPU_SCALAR("train.beta2", "float", "Adam second moment decay", train.adam.beta2,
                           as<double>(v, "train.beta2")));
  b.push_back(DGPPU_SCALAR("train.eps", "float", "Adam epsilon", train.adam.eps,
                           as<double>(v, "train.eps")));
  b.push_back(DGPPU_SCALAR("train.patience", "uint", "epochs without improvement before stopping",
                           train.patience, as_count(v, "train.patience")));
  b.push_back(DGPPU_SCALAR("train.max_epochs", "uint", "hard epoch limit", train.max_epochs,
                           as_count(v, "train.max_epochs")));
  b.push_back(DGPPU_SCALAR("train.val_fraction", "float", "share of batches held out",
                           train.val_fraction, as<double>(v, "train.val_fraction")));

  b.push_back(DGPPU_SCALAR("filter.k", "uint", "neighbours used for flagging (must equal model.k)",
                           filter.k, as_count(v, "filter.k")));
  b.push_back({{"filter.vote_rule", "any|majority", "how batch flags combine per point"},
               [](CliConfig& c, const ojson& v) {
                 const auto r = parse_vote_rule(as<std::string>(v, "filter.vote_rule"));
                 if (!r) fail(ErrorKind::InvalidConfig, "filter.vote_rule: expected any or majority");
                 c.filter.vote_rule = *r;
               },
               [](const CliConfig& c) { return ojson(std::string(to_string(c.filter.vote_rule))); }});
  b.push_back(DGPPU_SCALAR("filter.include_residual_pass", "bool",
                           "evaluate points no batch drew", filter.include_residual_pass,
                           as<bool>(v, "filter.include_residual_pass")));
  b.push_back(DGPPU_SCALAR("filter.n_clouds", "uint", "batches drawn per filtered scan",
                           filter.n_clouds, as_count(v, "filter.n_clouds")));
  b.push_back(DGPPU_SCALAR("filter.n_points", "uint", "points per filter batch", filter.n_points,
                           as_count(v, "filter.n_points")));
  b.push_back(DGPPU_SCALAR("filter.record_batches", "bool", "store per-batch flags in reports",
                           filter.record_batches, as<bool>(v, "filter.record_batches")));
  b.push_back(DGPPU_SCALAR("filter.threads", "uint", "worker threads (results do not depend on it)",
                           filter.threads, as_count(v, "filter.threads")));

  auto path_key = [](const char* name, const char* help, std::filesystem::path PathSettings::*field) {
    return KeyBinding{{name, "path", help},
                      [name, field](CliConfig& c, const ojson& v) {
                        c.paths.*field = as<std::string>(v, name);
                      },
                      [field](const CliConfig& c) { return ojson((c.paths.*field).string()); }};
  };
  b.push_back(path_key("paths.data_dir", "manifests and clouds", &PathSettings::data_dir));
  b.push_back(path_key("paths.checkpoint", "trained network file", &PathSettings::checkpoint));
  b.push_back(path_key("paths.metrics", "per-epoch metrics CSV", &PathSettings::metrics));
  b.push_back(path_key("paths.reports_dir", "filter reports and clouds", &PathSettings::reports_dir));
  b.push_back(path_key("paths.overlays_dir", "per-frame overlays", &PathSettings::overlays_dir));
  return b;
}

#undef DGPPU_SCALAR

const std::vector<KeyBinding>& bindings() {
  static const std::vector<KeyBinding> b = make_bindings();
  return b;
}

const KeyBinding& binding(const std::string& name) {
  for (const auto& b : bindings()) {
    if (b.doc.name == name) return b;
  }
  fail(ErrorKind::InvalidConfig, "unknown config key '" + name + "'");
}

}  // namespace

AugmentConfig AugmentSettings::resolve(const LabeledCloud& cloud) const {
  AugmentConfig cfg = AugmentConfig::defaults_for(cloud);
  cfg.target_label = target_label;
  if (jitter_sigma) cfg.jitter_sigma = *jitter_sigma;
  if (jitter_clip) cfg.jitter_clip = *jitter_clip;
  if (translation_range) cfg.translation_range = *translation_range;
  cfg.validate();
  return cfg;
}

void CliConfig::validate() const {
  if (thorough_positions.empty() && partial_positions.empty()) {
    fail(ErrorKind::InvalidConfig, "dataset lists no positions");
  }
  phantom.validate();
  sample.validate();
  model.validate();
  train.validate();
  filter.validate();
  if (filter.k != model.k) {
    fail(ErrorKind::InvalidConfig, "filter.k (" + std::to_string(filter.k) +
                                       ") must equal model.k (" + std::to_string(model.k) + ")");
  }
}

const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = [] {
    std::vector<ConfigKey> out;
    for (const auto& b : bindings()) out.push_back(b.doc);
    return out;
  }();
  return keys;
}

CliConfig config_from_string(const std::string& text) {
  ojson doc;
  try {
    doc = ojson::parse(text, nullptr, true, /*ignore_comments=*/true);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(line_of_offset(text, e.byte), std::string("config: ") + e.what());
  }
  if (!doc.is_object()) fail(ErrorKind::InvalidConfig, "config must be a JSON object");
  CliConfig cfg;
  for (const auto& [section, body] : doc.items()) {
    if (section == "seed") {
      binding("seed").set(cfg, body);
      continue;
    }
    const bool known = std::any_of(bindings().begin(), bindings().end(), [&](const KeyBinding& b) {
      return b.doc.name.rfind(section + ".", 0) == 0;
    });
    if (!body.is_object() || !known) {
      fail(ErrorKind::InvalidConfig, "unknown config key '" + section + "'");
    }
    for (const auto& [key, value] : body.items()) {
      binding(section + "." + key).set(cfg, value);
    }
  }
  return cfg;
}

CliConfig load_config(const std::filesystem::path& path) {
  return config_from_string(read_text_file(path));
}

std::string config_to_string(const CliConfig& cfg) {
  ojson doc = ojson::object();
  for (const auto& b : bindings()) {
    const auto& name = b.doc.name;
    const auto dot = name.find('.');
    if (dot == std::string::npos) {
      doc[name] = b.get(cfg);
    } else {
      doc[name.substr(0, dot)][name.substr(dot + 1)] = b.get(cfg);
    }
  }
  return doc.dump(2) + "\n";
}

void apply_override(CliConfig& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    fail(ErrorKind::InvalidConfig, "override '" + assignment + "' is not key=value");
  }
  const std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  ojson value = ojson::parse(raw, nullptr, /*allow_exceptions=*/false);
  if (value.is_discarded()) value = raw;
  binding(key).set(cfg, value);
}

std::uint64_t phantom_seed(const CliConfig& cfg) { return derive_seed(cfg.seed, 0x9a47); }
std::uint64_t sample_seed(const CliConfig& cfg, std::size_t scan_index) {
  return derive_seed(derive_seed(cfg.seed, 0x5a3b), scan_index);
}
std::uint64_t augment_seed(const CliConfig& cfg, std::size_t scan_index) {
  return derive_seed(derive_seed(cfg.seed, 0xa09e), scan_index);
}
std::uint64_t train_seed(const CliConfig& cfg) { return derive_seed(cfg.seed, 0x7a1f); }
std::uint64_t filter_seed(const CliConfig& cfg) { return derive_seed(cfg.seed, 0xf117); }

}  // namespace dgppu
