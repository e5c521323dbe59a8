#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "dgppu/filter.hpp"
#include "dgppu/model.hpp"
#include "dgppu/phantom.hpp"
#include "dgppu/sampling.hpp"

namespace dgppu {

struct AugmentSettings {
  bool enabled = true;
  BoneLabel target_label = BoneLabel::Patella;
  // Unset values fall back to AugmentConfig::defaults_for(cloud).
  std::optional<double> jitter_sigma;
  std::optional<double> jitter_clip;
  std::optional<double> translation_range;

  AugmentConfig resolve(const LabeledCloud& cloud) const;
};

struct PathSettings {
  std::filesystem::path data_dir = "data";
  std::filesystem::path checkpoint = "model.dgppu";
  std::filesystem::path metrics = "metrics.csv";
  std::filesystem::path reports_dir = "reports";
  std::filesystem::path overlays_dir = "overlays";
};

// Whole-pipeline configuration. Sections: seed, dataset, phantom, sample,
// augment, model, train, filter, paths.
struct CliConfig {
  std::uint64_t seed = 0;
  std::vector<Position> thorough_positions = {Position::P0, Position::P1, Position::P2,
                                              Position::P3};
  std::vector<Position> partial_positions = {Position::P1, Position::P2, Position::P3};
  PhantomConfig phantom;
  SampleConfig sample;
  AugmentSettings augment;
  Architecture model;
  TrainConfig train;
  FilterConfig filter;
  PathSettings paths;

  void validate() const;
};

struct ConfigKey {
  std::string name;  // "section.key" or "seed"
  std::string type;
  std::string help;
};

const std::vector<ConfigKey>& config_keys();

// Parses a JSON config document. Unknown sections or keys are rejected with
// ErrorKind::InvalidConfig; malformed text raises ParseError.
CliConfig config_from_string(const std::string& text);
CliConfig load_config(const std::filesystem::path& path);
std::string config_to_string(const CliConfig& cfg);

// "section.key=value"; value is read as JSON, falling back to a bare string.
void apply_override(CliConfig& cfg, const std::string& assignment);

// Derived per-stage seeds, so each stage can be rerun in isolation.
std::uint64_t phantom_seed(const CliConfig& cfg);
std::uint64_t sample_seed(const CliConfig& cfg, std::size_t scan_index);
std::uint64_t augment_seed(const CliConfig& cfg, std::size_t scan_index);
std::uint64_t train_seed(const CliConfig& cfg);
std::uint64_t filter_seed(const CliConfig& cfg);

}  // namespace dgppu
