#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dgppu/filter.hpp"
#include "dgppu/phantom.hpp"

namespace dgppu {

// Largest out-of-plane residual (mm) accepted when mapping a world point
// back into its frame, and the pixel tolerance of the provenance audit.
inline constexpr double kPlaneTolerance = 1e-6;
inline constexpr double kProvenanceTolerance = 1e-6;

struct PixelCoords {
  double u = 0.0;
  double v = 0.0;
};

// Undoes project_frame: pose inverse, then scaling inverse. Throws
// ErrorKind::WrongFrame when the point does not lie on the frame plane.
PixelCoords invert_point(const Eigen::Vector3d& xyz, const FrameTransform& t);

struct OverlayPixel {
  double u = 0.0;
  double v = 0.0;
  BoneLabel label = BoneLabel::Femur;
  int line_id = 0;

  bool operator==(const OverlayPixel&) const = default;
};

struct LineStats {
  int line_id = 0;
  std::size_t total = 0;
  std::size_t retained = 0;
  bool whole_line_deleted = false;

  bool operator==(const LineStats&) const = default;
};

struct FrameOverlay {
  std::string scan_id;
  int frame_index = 0;
  std::vector<OverlayPixel> retained;
  std::vector<OverlayPixel> deleted;
  std::vector<LineStats> lines;  // ascending line_id

  bool has_deletions() const { return !deleted.empty(); }
  // A destroyed line (nothing retained) or a line reduced to a single point.
  bool failed() const;
  bool operator==(const FrameOverlay&) const = default;
};

// Routes every point of the filtered cloud to its source frame and audits the
// transform chain against the stored pixel provenance. Throws Corruption on
// any inconsistency between report, cloud and scan.
std::vector<FrameOverlay> invert_cloud(const FilterReport& report, const LabeledCloud& cloud,
                                       const ScanRecord& scan);

// Builds line statistics from pixel lists (used by invert_cloud and fixtures).
void recompute_line_stats(FrameOverlay& overlay);

struct PrecisionSummary {
  Position position = Position::P0;
  std::size_t frames_with_deletions = 0;
  std::size_t ok_frames = 0;
  std::optional<double> precision;  // empty when no frame had deletions

  bool applicable() const { return precision.has_value(); }
};

PrecisionSummary frame_precision(std::span<const FrameOverlay> overlays, Position position);

// Unweighted mean over applicable summaries. Throws when there are none.
double mean_precision(std::span<const PrecisionSummary> summaries);

// Percentage with one decimal, e.g. 0.98387 -> "98.4".
std::string format_percent(double fraction);

std::string precision_table(std::span<const PrecisionSummary> summaries, bool csv);
// Machine-readable form of the same table (JSON, mean included when defined).
std::string summaries_to_json(std::span<const PrecisionSummary> summaries);

struct OverlaySet {
  std::string scan_id;
  Position position = Position::P0;
  std::vector<FrameOverlay> overlays;
};

std::string overlay_to_string(const FrameOverlay& overlay);
FrameOverlay overlay_from_string(const std::string& text);
// index.json plus one JSON file per frame (and an SVG scatter when render_svg).
void save_overlays(const std::filesystem::path& dir, const OverlaySet& set, bool render_svg);
OverlaySet load_overlays(const std::filesystem::path& dir);
std::string render_overlay_svg(const FrameOverlay& overlay);

}  // namespace dgppu
