#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dgppu/types.hpp"

namespace dgppu {

// Ground-truth provenance of an injected false positive. Only the phantom
// generator knows these; real scans carry ArtifactKind::None throughout.
enum class ArtifactKind : std::uint8_t { None = 0, NearSurface = 1, Floater = 2 };

struct FramePoint {
  double u = 0.0;  // pixel column
  double v = 0.0;  // pixel row
  BoneLabel label = BoneLabel::Femur;
  int line_id = 0;
  ArtifactKind artifact = ArtifactKind::None;

  bool is_artifact() const { return artifact != ArtifactKind::None; }
  bool operator==(const FramePoint&) const = default;
};

// Maps pixel (u, v) in one probe frame to world millimetres:
//   world = rotation * (sx * u, sy * v, 0) + translation
struct FrameTransform {
  int frame_index = 0;
  double sx = 1.0;  // mm / pixel along u
  double sy = 1.0;  // mm / pixel along v
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();

  // Throws ErrorKind::Validation on bad spacing or a non-rotation matrix.
  void validate() const;
  bool operator==(const FrameTransform&) const = default;
};

inline constexpr double kRotationTolerance = 1e-9;

struct Frame {
  FrameTransform transform;
  std::vector<FramePoint> points;

  bool operator==(const Frame&) const = default;
};

struct ScanRecord {
  std::string scan_id;
  Position position = Position::P0;
  ScanKind kind = ScanKind::Thorough;
  std::vector<Frame> frames;

  std::size_t point_count() const;
  const Frame* find_frame(int frame_index) const;
  // Frame indices strictly ascending, transforms valid.
  void validate() const;
  bool operator==(const ScanRecord&) const = default;
};

struct Provenance {
  std::string scan_id;
  int frame_index = 0;
  double u = 0.0;
  double v = 0.0;

  bool operator==(const Provenance&) const = default;
};

struct WorldPoint {
  Eigen::Vector3d xyz = Eigen::Vector3d::Zero();
  BoneLabel label = BoneLabel::Femur;
  Provenance provenance;
  bool is_artifact = false;
  // Set on augmentation copies; provenance then names the source point.
  bool synthetic = false;

  bool operator==(const WorldPoint&) const = default;
};

struct LabeledCloud {
  std::string source;
  std::vector<WorldPoint> points;

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
  Matrix coordinates() const;
  Matrix coordinates(const std::vector<std::size_t>& indices) const;
  bool operator==(const LabeledCloud&) const = default;
};

struct PhantomConfig {
  Position position = Position::P0;
  ScanKind kind = ScanKind::Thorough;
  int frame_count = 45;             // frames in a thorough sweep
  double line_density = 2.0;        // surface samples per mm along a line
  double artifact_rate = 0.04;      // injected artifacts per true bone point
  double floater_fraction = 0.25;   // share of artifacts placed in inter-bone gaps
  double noise_scale = 0.1;         // mm, in-plane jitter of true surface samples
  double gap = 16.0;                // mm, minimum distance between bone surfaces
  double floater_margin = 0.3;      // fraction of the local gap kept clear at each side
  double pixel_sx = 0.2;            // mm / pixel
  double pixel_sy = 0.2;
  int partial_frame_stride = 3;     // partial sweeps keep every n-th frame
  double partial_line_keep = 0.85;  // probability a line survives in a partial sweep

  // Throws ErrorKind::InvalidConfig.
  void validate() const;
};

std::string default_scan_id(Position position, ScanKind kind);

// Throws ErrorKind::InvalidInput for non-finite pixels.
Eigen::Vector3d project_frame(const FrameTransform& t, double u, double v);

ScanRecord gen_phantom(const PhantomConfig& cfg, std::uint64_t seed);

// One WorldPoint per FramePoint, frame-major. Throws ErrorKind::EmptyInput.
LabeledCloud build_cloud(const ScanRecord& scan);

}  // namespace dgppu
