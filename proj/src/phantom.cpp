#include "dgppu/phantom.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <optional>

#include "dgppu/error.hpp"
#include "dgppu/rng.hpp"

namespace dgppu {

void FrameTransform::validate() const {
  if (!(std::isfinite(sx) && sx > 0.0 && std::isfinite(sy) && sy > 0.0)) {
    fail(ErrorKind::Validation,
         "frame " + std::to_string(frame_index) + ": pixel spacing must be positive");
  }
  if (!rotation.allFinite() || !translation.allFinite()) {
    fail(ErrorKind::Validation,
         "frame " + std::to_string(frame_index) + ": non-finite pose");
  }
  const double ortho = (rotation.transpose() * rotation - Eigen::Matrix3d::Identity())
                           .cwiseAbs()
                           .maxCoeff();
  if (ortho > kRotationTolerance ||
      std::abs(rotation.determinant() - 1.0) > kRotationTolerance) {
    fail(ErrorKind::Validation,
         "frame " + std::to_string(frame_index) + ": rotation is not orthonormal with det +1");
  }
}

std::size_t ScanRecord::point_count() const {
  std::size_t n = 0;
  for (const auto& f : frames) n += f.points.size();
  return n;
}

const Frame* ScanRecord::find_frame(int frame_index) const {
  auto it = std::lower_bound(
      frames.begin(), frames.end(), frame_index,
      [](const Frame& f, int idx) { return f.transform.frame_index < idx; });
  if (it == frames.end() || it->transform.frame_index != frame_index) return nullptr;
  return &*it;
}

void ScanRecord::validate() const {
  for (std::size_t i = 0; i < frames.size(); ++i) {
    const auto& t = frames[i].transform;
    if (t.frame_index < 0) {
      fail(ErrorKind::Validation, "negative frame index");
    }
    if (i > 0 && t.frame_index <= frames[i - 1].transform.frame_index) {
      fail(ErrorKind::Validation, "frame indices must be unique and ascending (frame " +
                                      std::to_string(t.frame_index) + ")");
    }
    t.validate();
    for (const auto& p : frames[i].points) {
      if (!std::isfinite(p.u) || !std::isfinite(p.v)) {
        fail(ErrorKind::Validation,
             "frame " + std::to_string(t.frame_index) + ": non-finite pixel");
      }
    }
  }
}

Matrix LabeledCloud::coordinates() const {
  Matrix m(static_cast<Eigen::Index>(points.size()), 3);
  for (std::size_t i = 0; i < points.size(); ++i) {
    m.row(static_cast<Eigen::Index>(i)) = points[i].xyz.transpose();
  }
  return m;
}

Matrix LabeledCloud::coordinates(const std::vector<std::size_t>& indices) const {
  Matrix m(static_cast<Eigen::Index>(indices.size()), 3);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    m.row(static_cast<Eigen::Index>(i)) = points.at(indices[i]).xyz.transpose();
  }
  return m;
}

void PhantomConfig::validate() const {
  auto bad = [](const std::string& what) { fail(ErrorKind::InvalidConfig, what); };
  if (frame_count < 1) bad("phantom needs at least one frame");
  if (!(line_density > 0.0)) bad("phantom needs at least one line (line_density > 0)");
  if (!(artifact_rate >= 0.0 && artifact_rate < 1.0)) bad("artifact_rate must be in [0, 1)");
  if (!(floater_fraction >= 0.0 && floater_fraction <= 1.0)) {
    bad("floater_fraction must be in [0, 1]");
  }
  if (!(noise_scale >= 0.0)) bad("noise_scale must be >= 0");
  if (!(gap > 0.0)) bad("gap must be > 0");
  if (!(floater_margin >= 0.0 && floater_margin < 0.5)) bad("floater_margin must be in [0, 0.5)");
  if (!(pixel_sx > 0.0 && pixel_sy > 0.0)) bad("pixel spacing must be > 0");
  if (partial_frame_stride < 1) bad("partial_frame_stride must be >= 1");
  if (!(partial_line_keep > 0.0 && partial_line_keep <= 1.0)) {
    bad("partial_line_keep must be in (0, 1]");
  }
}

std::string default_scan_id(Position position, ScanKind kind) {
  return std::string(to_string(position)) + "_" + std::string(to_string(kind));
}

Eigen::Vector3d project_frame(const FrameTransform& t, double u, double v) {
  if (!std::isfinite(u) || !std::isfinite(v)) {
    fail(ErrorKind::InvalidInput, "project_frame: non-finite pixel coordinate");
  }
  const Eigen::Vector3d in_plane(t.sx * u, t.sy * v, 0.0);
  return t.rotation * in_plane + t.translation;
}

namespace {

// Surface sample noise is a Gaussian clipped at this many sigmas.
constexpr double kNoiseClip = 3.0;

// Quadric height fields, depth (world z) in mm below the probe, for the three
// bones. World x runs along the leg (proximal positive), y is mediolateral.
struct KneeGeometry {
  double gap;
  double patella_x;
  double tibia_slope;
  double pad;  // room for clipped sample noise, so the gap survives jitter

  static constexpr double kLength = 45.0;
  static constexpr double kPatellaHalfX = 12.0;
  static constexpr double kPatellaHalfY = 10.0;

  double femur_depth(double x, double y) const {
    return 20.0 + 0.012 * y * y + 0.003 * (x - 25.0) * (x - 25.0);
  }
  bool in_femur(double x, double y) const {
    return x >= 0.5 * gap + pad && x <= kLength && std::abs(y) <= 20.0;
  }

  double tibia_depth(double x, double y) const {
    return 21.0 + 0.01 * y * y - tibia_slope * x;
  }
  bool in_tibia(double x, double y) const {
    return x <= -0.5 * gap - pad && x >= -kLength && std::abs(y) <= 21.0;
  }

  double patella_rho2(double x, double y) const {
    const double dx = (x - patella_x) / kPatellaHalfX;
    const double dy = y / kPatellaHalfY;
    return dx * dx + dy * dy;
  }
  bool in_patella(double x, double y) const { return patella_rho2(x, y) <= 1.0; }
  // Dome over the femur, closest to it at the rim. The extra 10% vertical
  // clearance covers the surface slope (at most ~0.3) under the patella.
  double patella_depth(double x, double y) const {
    return femur_depth(x, y) - 1.1 * gap - 2.0 * pad - (1.0 - patella_rho2(x, y));
  }

  bool contains(BoneLabel b, double x, double y) const {
    switch (b) {
      case BoneLabel::Femur: return in_femur(x, y);
      case BoneLabel::Patella: return in_patella(x, y);
      case BoneLabel::Tibia: return in_tibia(x, y);
    }
    return false;
  }
  double depth(BoneLabel b, double x, double y) const {
    switch (b) {
      case BoneLabel::Femur: return femur_depth(x, y);
      case BoneLabel::Patella: return patella_depth(x, y);
      case BoneLabel::Tibia: return tibia_depth(x, y);
    }
    return 0.0;
  }
};

KneeGeometry geometry_for(Position position, double gap, double noise) {
  constexpr std::array<double, 4> patella_x = {16.0, 20.0, 24.0, 28.0};
  constexpr std::array<double, 4> tibia_slope = {0.25, 0.16, 0.08, 0.0};
  const auto i = static_cast<std::size_t>(position);
  return KneeGeometry{gap, patella_x[i], tibia_slope[i], kNoiseClip * noise};
}

// Probe sweep: parallel vertical planes. In-plane u runs along the leg
// (rotated by a small per-position yaw), v is depth.
struct Sweep {
  static constexpr double kAxisStart = -50.0;  // world x at u = 0
  static constexpr double kExtent = 100.0;     // mm covered along u
  static constexpr double kHalfWidth = 22.0;   // slices span [-22, 22] mm
  static constexpr double kDepthStart = -80.0;  // world z at v = 0, below all tissue

  Eigen::Matrix3d rotation;

  explicit Sweep(Position position) {
    const double yaw =
        (2.0 * static_cast<double>(position) - 3.0) * std::numbers::pi / 180.0;
    const double c = std::cos(yaw);
    const double s = std::sin(yaw);
    rotation.col(0) = Eigen::Vector3d(c, s, 0.0);
    rotation.col(1) = Eigen::Vector3d(0.0, 0.0, 1.0);
    rotation.col(2) = rotation.col(0).cross(rotation.col(1));
  }

  Eigen::Vector3d origin(double slice_offset) const {
    return kAxisStart * rotation.col(0) + kDepthStart * rotation.col(1) -
           slice_offset * rotation.col(2);
  }
};

struct LineBuilder {
  std::vector<FramePoint> points;
  std::array<std::optional<int>, kNumClasses> line_of_label{};
  int next_line = 0;

  int line_for(BoneLabel label) {
    auto& slot = line_of_label[static_cast<std::size_t>(code(label))];
    if (!slot) slot = next_line++;
    return *slot;
  }
};

}  // namespace

ScanRecord gen_phantom(const PhantomConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  SplitMix64 rng(derive_seed(seed, 16u * static_cast<unsigned>(cfg.position) +
                                       static_cast<unsigned>(cfg.kind)));
  const KneeGeometry knee = geometry_for(cfg.position, cfg.gap, cfg.noise_scale);
  auto jitter = [&] { return cfg.noise_scale * std::clamp(rng.normal(), -kNoiseClip, kNoiseClip); };
  const Sweep sweep(cfg.position);
  const Eigen::Vector3d axis = sweep.rotation.col(0);
  const double step = 1.0 / cfg.line_density;
  const auto samples_per_line = static_cast<int>(std::floor(Sweep::kExtent / step)) + 1;

  ScanRecord scan;
  scan.scan_id = default_scan_id(cfg.position, cfg.kind);
  scan.position = cfg.position;
  scan.kind = cfg.kind;

  std::vector<LineBuilder> builders;
  std::vector<double> slice_offsets;

  for (int k = 0; k < cfg.frame_count; ++k) {
    if (cfg.kind == ScanKind::Partial &&
        k % cfg.partial_frame_stride != cfg.partial_frame_stride / 2) {
      continue;
    }
    const double offset =
        cfg.frame_count == 1
            ? 0.0
            : -Sweep::kHalfWidth + 2.0 * Sweep::kHalfWidth * k / (cfg.frame_count - 1);
    FrameTransform t;
    t.frame_index = k;
    t.sx = cfg.pixel_sx;
    t.sy = cfg.pixel_sy;
    t.rotation = sweep.rotation;
    t.translation = sweep.origin(offset);

    LineBuilder lines;
    for (BoneLabel bone : kAllLabels) {
      std::vector<FramePoint> line;
      for (int j = 0; j < samples_per_line; ++j) {
        const double a = j * step;
        const Eigen::Vector3d w = t.translation + a * axis;
        if (!knee.contains(bone, w.x(), w.y())) continue;
        const double along = a + jitter();
        const double depth = knee.depth(bone, w.x(), w.y()) + jitter();
        line.push_back(FramePoint{along / t.sx, (depth - Sweep::kDepthStart) / t.sy, bone, 0,
                                  ArtifactKind::None});
      }
      if (line.empty()) continue;
      if (cfg.kind == ScanKind::Partial && !rng.bernoulli(cfg.partial_line_keep)) continue;
      const int id = lines.line_for(bone);
      for (auto& p : line) {
        p.line_id = id;
        lines.points.push_back(p);
      }
    }
    scan.frames.push_back(Frame{t, {}});
    builders.push_back(std::move(lines));
    slice_offsets.push_back(offset);
  }

  std::size_t true_points = 0;
  for (const auto& b : builders) true_points += b.points.size();
  if (true_points == 0) {
    fail(ErrorKind::InvalidConfig, "phantom configuration produced zero lines");
  }

  const auto n_artifacts =
      static_cast<std::size_t>(std::llround(cfg.artifact_rate * static_cast<double>(true_points)));
  const auto n_floaters = static_cast<std::size_t>(
      std::llround(cfg.floater_fraction * static_cast<double>(n_artifacts)));
  const std::size_t n_near = n_artifacts - n_floaters;

  // Near-surface outliers: copies of true samples pushed off the surface.
  for (std::size_t i = 0; i < n_near; ++i) {
    std::size_t pick = rng.below(true_points);
    std::size_t f = 0;
    while (pick >= builders[f].points.size()) {
      pick -= builders[f].points.size();
      ++f;
    }
    FramePoint p = builders[f].points[pick];
    const double sign = rng.bernoulli(0.5) ? 1.0 : -1.0;
    const double shift = rng.uniform(1.0, 2.5);
    p.v += sign * shift / scan.frames[f].transform.sy;
    p.artifact = ArtifactKind::NearSurface;
    builders[f].points.push_back(p);
  }

  // Floaters between patella and femur, and across the femorotibial gap.
  std::vector<std::size_t> patella_frames;
  for (std::size_t f = 0; f < scan.frames.size(); ++f) {
    const auto& t = scan.frames[f].transform;
    for (int j = 0; j < samples_per_line; ++j) {
      const Eigen::Vector3d w = t.translation + (j * step) * axis;
      if (knee.in_patella(w.x(), w.y())) {
        patella_frames.push_back(f);
        break;
      }
    }
  }

  const double m = cfg.floater_margin;
  for (std::size_t i = 0; i < n_floaters; ++i) {
    const bool patellofemoral = !patella_frames.empty() && rng.bernoulli(0.6);
    const std::size_t f = patellofemoral ? patella_frames[rng.below(patella_frames.size())]
                                         : static_cast<std::size_t>(rng.below(scan.frames.size()));
    const auto& t = scan.frames[f].transform;
    BoneLabel label;
    double a = 0.0;
    double depth = 0.0;
    if (patellofemoral) {
      // Rejection-sample a point of the patella footprint on this slice.
      Eigen::Vector3d w;
      do {
        a = rng.uniform(0.0, Sweep::kExtent);
        w = t.translation + a * axis;
      } while (!knee.in_patella(w.x(), w.y()));
      const double top = knee.patella_depth(w.x(), w.y());
      const double bottom = knee.femur_depth(w.x(), w.y());
      const double local_gap = bottom - top;
      depth = rng.uniform(top + m * local_gap, bottom - m * local_gap);
      label = rng.bernoulli(0.5) ? BoneLabel::Patella : BoneLabel::Femur;
    } else {
      const double half = (0.5 * cfg.gap + knee.pad) * (1.0 - 2.0 * m);
      const double x = rng.uniform(-half, half);
      // Solve for the along-line offset hitting this leg coordinate.
      a = (x - t.translation.x()) / axis.x();
      const double y = t.translation.y() + a * axis.y();
      const double d_femur = knee.femur_depth(0.5 * cfg.gap + knee.pad, y);
      const double d_tibia = knee.tibia_depth(-0.5 * cfg.gap - knee.pad, y);
      depth = rng.uniform(std::min(d_femur, d_tibia) - 1.0, std::max(d_femur, d_tibia) + 1.0);
      label = rng.bernoulli(0.5) ? BoneLabel::Femur : BoneLabel::Tibia;
    }
    const int id = builders[f].line_for(label);
    builders[f].points.push_back(FramePoint{a / t.sx, (depth - Sweep::kDepthStart) / t.sy, label,
                                            id, ArtifactKind::Floater});
  }

  for (std::size_t f = 0; f < scan.frames.size(); ++f) {
    scan.frames[f].points = std::move(builders[f].points);
  }
  return scan;
}

LabeledCloud build_cloud(const ScanRecord& scan) {
  if (scan.point_count() == 0) {
    fail(ErrorKind::EmptyInput, "build_cloud: scan '" + scan.scan_id + "' has no points");
  }
  LabeledCloud cloud;
  cloud.source = scan.scan_id;
  cloud.points.reserve(scan.point_count());
  for (const auto& frame : scan.frames) {
    for (const auto& p : frame.points) {
      WorldPoint w;
      w.xyz = project_frame(frame.transform, p.u, p.v);
      w.label = p.label;
      w.provenance = Provenance{scan.scan_id, frame.transform.frame_index, p.u, p.v};
      w.is_artifact = p.is_artifact();
      cloud.points.push_back(std::move(w));
    }
  }
  return cloud;
}

}  // namespace dgppu
