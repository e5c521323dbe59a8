#include "dgppu/inversion.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <iomanip>
#include <map>
#include <sstream>

#include <nlohmann/json.hpp>

#include "dgppu/error.hpp"
#include "dgppu/io.hpp"

namespace dgppu {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

PixelCoords invert_point(const Eigen::Vector3d& xyz, const FrameTransform& t) {
  const Eigen::Vector3d local = t.rotation.transpose() * (xyz - t.translation);
  if (!(std::abs(local.z()) <= kPlaneTolerance)) {
    fail(ErrorKind::WrongFrame, "point lies " + format_double(local.z()) +
                                    " mm off the plane of frame " +
                                    std::to_string(t.frame_index));
  }
  return PixelCoords{local.x() / t.sx, local.y() / t.sy};
}

bool FrameOverlay::failed() const {
  return std::any_of(lines.begin(), lines.end(), [](const LineStats& l) {
    return l.whole_line_deleted || l.retained == 1;
  });
}

void recompute_line_stats(FrameOverlay& overlay) {
  std::map<int, LineStats> lines;
  for (const auto& p : overlay.retained) {
    auto& l = lines[p.line_id];
    l.line_id = p.line_id;
    ++l.total;
    ++l.retained;
  }
  for (const auto& p : overlay.deleted) {
    auto& l = lines[p.line_id];
    l.line_id = p.line_id;
    ++l.total;
  }
  overlay.lines.clear();
  for (auto& [id, l] : lines) {
    l.whole_line_deleted = l.retained == 0;
    overlay.lines.push_back(l);
  }
}

std::vector<FrameOverlay> invert_cloud(const FilterReport& report, const LabeledCloud& cloud,
                                       const ScanRecord& scan) {
  auto corrupt = [](const std::string& what) { fail(ErrorKind::Corruption, what); };
  if (report.scan_id != scan.scan_id || cloud.source != scan.scan_id) {
    corrupt("invert_cloud: report '" + report.scan_id + "', cloud '" + cloud.source +
            "' and scan '" + scan.scan_id + "' disagree");
  }
  if (report.verdicts.size() != cloud.size()) {
    corrupt("invert_cloud: report covers " + std::to_string(report.verdicts.size()) +
            " points but the cloud has " + std::to_string(cloud.size()));
  }

  // Frame points by exact pixel, consumed once each.
  struct FrameIndex {
    std::multimap<std::pair<double, double>, std::size_t> by_pixel;
    FrameOverlay overlay;
  };
  std::map<int, FrameIndex> frames;
  for (const auto& f : scan.frames) {
    auto& fi = frames[f.transform.frame_index];
    fi.overlay.scan_id = scan.scan_id;
    fi.overlay.frame_index = f.transform.frame_index;
    for (std::size_t i = 0; i < f.points.size(); ++i) {
      fi.by_pixel.emplace(std::make_pair(f.points[i].u, f.points[i].v), i);
    }
  }

  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const auto& p = cloud.points[i];
    const std::string where = "point " + std::to_string(i);
    if (p.synthetic) corrupt(where + " is an augmentation copy");
    if (p.provenance.scan_id != scan.scan_id) corrupt(where + " belongs to another scan");
    const Frame* frame = scan.find_frame(p.provenance.frame_index);
    if (!frame) corrupt(where + " names missing frame " + std::to_string(p.provenance.frame_index));
    PixelCoords px;
    try {
      px = invert_point(p.xyz, frame->transform);
    } catch (const Error& e) {
      corrupt(where + ": " + e.what());
    }
    if (std::abs(px.u - p.provenance.u) > kProvenanceTolerance ||
        std::abs(px.v - p.provenance.v) > kProvenanceTolerance) {
      corrupt(where + " inverts to (" + format_double(px.u) + ", " + format_double(px.v) +
              ") but its provenance says (" + format_double(p.provenance.u) + ", " +
              format_double(p.provenance.v) + ")");
    }
    auto& fi = frames.at(p.provenance.frame_index);
    auto it = fi.by_pixel.find({p.provenance.u, p.provenance.v});
    if (it == fi.by_pixel.end()) corrupt(where + " has no matching frame pixel");
    const FramePoint& fp = frame->points[it->second];
    fi.by_pixel.erase(it);
    const OverlayPixel pixel{p.provenance.u, p.provenance.v, fp.label, fp.line_id};
    (report.verdicts[i].deleted ? fi.overlay.deleted : fi.overlay.retained).push_back(pixel);
  }

  std::vector<FrameOverlay> out;
  out.reserve(frames.size());
  for (auto& [idx, fi] : frames) {
    recompute_line_stats(fi.overlay);
    out.push_back(std::move(fi.overlay));
  }
  return out;
}

PrecisionSummary frame_precision(std::span<const FrameOverlay> overlays, Position position) {
  PrecisionSummary s;
  s.position = position;
  for (const auto& o : overlays) {
    if (!o.has_deletions()) continue;
    ++s.frames_with_deletions;
    if (!o.failed()) ++s.ok_frames;
  }
  if (s.frames_with_deletions > 0) {
    s.precision = static_cast<double>(s.ok_frames) / static_cast<double>(s.frames_with_deletions);
  }
  return s;
}

double mean_precision(std::span<const PrecisionSummary> summaries) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& s : summaries) {
    if (!s.applicable()) continue;
    sum += *s.precision;
    ++n;
  }
  if (n == 0) fail(ErrorKind::InvalidInput, "mean_precision: no applicable summaries");
  return sum / static_cast<double>(n);
}

std::string format_percent(double fraction) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.1f", 100.0 * fraction);
  return buf;
}

std::string precision_table(std::span<const PrecisionSummary> summaries, bool csv) {
  std::ostringstream out;
  if (csv) {
    out << "position,frames_with_deletions,ok_frames,precision,precision_percent\n";
  } else {
    out << std::left << std::setw(10) << "position" << std::right << std::setw(24)
        << "frames_with_deletions" << std::setw(12) << "ok_frames" << std::setw(12)
        << "precision" << '\n';
  }
  bool any = false;
  for (const auto& s : summaries) {
    const std::string value = s.applicable() ? format_double(*s.precision) : "n/a";
    const std::string pct = s.applicable() ? format_percent(*s.precision) : "n/a";
    any = any || s.applicable();
    if (csv) {
      out << to_string(s.position) << ',' << s.frames_with_deletions << ',' << s.ok_frames << ','
          << value << ',' << pct << '\n';
    } else {
      out << std::left << std::setw(10) << to_string(s.position) << std::right << std::setw(24)
          << s.frames_with_deletions << std::setw(12) << s.ok_frames << std::setw(12) << pct
          << '\n';
    }
  }
  if (any) {
    const double mean = mean_precision(summaries);
    if (csv) {
      out << "mean,,," << format_double(mean) << ',' << format_percent(mean) << '\n';
    } else {
      out << std::left << std::setw(10) << "mean" << std::right << std::setw(48)
          << format_percent(mean) << '\n';
    }
  }
  return out.str();
}

std::string summaries_to_json(std::span<const PrecisionSummary> summaries) {
  ojson doc;
  doc["format"] = "dgppu-precision";
  ojson rows = ojson::array();
  bool any = false;
  for (const auto& s : summaries) {
    ojson r;
    r["position"] = std::string(to_string(s.position));
    r["frames_with_deletions"] = s.frames_with_deletions;
    r["ok_frames"] = s.ok_frames;
    r["precision"] = s.applicable() ? ojson(*s.precision) : ojson(nullptr);
    rows.push_back(std::move(r));
    any = any || s.applicable();
  }
  doc["positions"] = std::move(rows);
  doc["mean_precision"] = any ? ojson(mean_precision(summaries)) : ojson(nullptr);
  return doc.dump(2) + "\n";
}

namespace {

ojson pixels_to_json(const std::vector<OverlayPixel>& pixels) {
  ojson u = ojson::array(), v = ojson::array(), label = ojson::array(), line = ojson::array();
  for (const auto& p : pixels) {
    u.push_back(p.u);
    v.push_back(p.v);
    label.push_back(code(p.label));
    line.push_back(p.line_id);
  }
  return ojson{{"u", u}, {"v", v}, {"label", label}, {"line_id", line}};
}

std::vector<OverlayPixel> pixels_from_json(const ojson& j) {
  std::vector<OverlayPixel> out;
  const auto& u = j.at("u");
  for (std::size_t i = 0; i < u.size(); ++i) {
    const auto label = label_from_code(j.at("label").at(i).get<int>());
    if (!label) fail(ErrorKind::Schema, "overlay: unknown label code");
    out.push_back(OverlayPixel{u.at(i).get<double>(), j.at("v").at(i).get<double>(), *label,
                               j.at("line_id").at(i).get<int>()});
  }
  return out;
}

std::string frame_file(const std::string& scan_id, int frame, const char* ext) {
  std::ostringstream ss;
  ss << scan_id << "_frame_" << std::setw(5) << std::setfill('0') << frame << ext;
  return ss.str();
}

}  // namespace

std::string overlay_to_string(const FrameOverlay& overlay) {
  ojson j;
  j["format"] = "dgppu-frame-overlay";
  j["scan_id"] = overlay.scan_id;
  j["frame_index"] = overlay.frame_index;
  j["retained"] = pixels_to_json(overlay.retained);
  j["deleted"] = pixels_to_json(overlay.deleted);
  ojson lines = ojson::array();
  for (const auto& l : overlay.lines) {
    lines.push_back({{"line_id", l.line_id},
                     {"total", l.total},
                     {"retained", l.retained},
                     {"whole_line_deleted", l.whole_line_deleted}});
  }
  j["lines"] = std::move(lines);
  return j.dump(1) + "\n";
}

FrameOverlay overlay_from_string(const std::string& text) {
  FrameOverlay o;
  try {
    const auto j = ojson::parse(text);
    if (j.at("format") != "dgppu-frame-overlay") fail(ErrorKind::Schema, "not a frame overlay");
    o.scan_id = j.at("scan_id").get<std::string>();
    o.frame_index = j.at("frame_index").get<int>();
    o.retained = pixels_from_json(j.at("retained"));
    o.deleted = pixels_from_json(j.at("deleted"));
    for (const auto& l : j.at("lines")) {
      o.lines.push_back(LineStats{l.at("line_id").get<int>(), l.at("total").get<std::size_t>(),
                                  l.at("retained").get<std::size_t>(),
                                  l.at("whole_line_deleted").get<bool>()});
    }
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(line_of_offset(text, e.byte), std::string("overlay: ") + e.what());
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Schema, std::string("overlay: ") + e.what());
  }
  // Line statistics must agree with the pixel lists.
  FrameOverlay check = o;
  recompute_line_stats(check);
  if (check.lines != o.lines) {
    fail(ErrorKind::Corruption, "overlay frame " + std::to_string(o.frame_index) +
                                    ": line statistics disagree with pixels");
  }
  return o;
}

std::string render_overlay_svg(const FrameOverlay& overlay) {
  double max_u = 1.0;
  double max_v = 1.0;
  for (const auto* set : {&overlay.retained, &overlay.deleted}) {
    for (const auto& p : *set) {
      max_u = std::max(max_u, p.u);
      max_v = std::max(max_v, p.v);
    }
  }
  std::ostringstream out;
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << std::ceil(max_u + 10)
      << "\" height=\"" << std::ceil(max_v + 10) << "\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"black\"/>\n";
  for (const auto& p : overlay.retained) {
    out << "<circle cx=\"" << p.u << "\" cy=\"" << p.v << "\" r=\"1.5\" fill=\"white\"/>\n";
  }
  for (const auto& p : overlay.deleted) {
    out << "<circle cx=\"" << p.u << "\" cy=\"" << p.v << "\" r=\"2\" fill=\"red\"/>\n";
  }
  out << "</svg>\n";
  return out.str();
}

void save_overlays(const fs::path& dir, const OverlaySet& set, bool render_svg) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) fail(ErrorKind::Io, "cannot create '" + dir.string() + "'");
  ojson index;
  index["format"] = "dgppu-overlay-set";
  index["scan_id"] = set.scan_id;
  index["position"] = std::string(to_string(set.position));
  ojson files = ojson::array();
  for (const auto& o : set.overlays) {
    const std::string name = frame_file(set.scan_id, o.frame_index, ".json");
    write_text_file(dir / name, overlay_to_string(o));
    if (render_svg && o.has_deletions()) {
      write_text_file(dir / frame_file(set.scan_id, o.frame_index, ".svg"), render_overlay_svg(o));
    }
    files.push_back(name);
  }
  index["frames"] = std::move(files);
  write_text_file(dir / "index.json", index.dump(1) + "\n");
}

OverlaySet load_overlays(const fs::path& dir) {
  OverlaySet set;
  std::vector<std::string> files;
  std::string index_text;
  try {
    index_text = read_text_file(dir / "index.json");
    const auto index = ojson::parse(index_text);
    if (index.at("format") != "dgppu-overlay-set") fail(ErrorKind::Schema, "not an overlay set");
    set.scan_id = index.at("scan_id").get<std::string>();
    const auto pos = parse_position(index.at("position").get<std::string>());
    if (!pos) fail(ErrorKind::Schema, "overlay set: bad position");
    set.position = *pos;
    files = index.at("frames").get<std::vector<std::string>>();
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(line_of_offset(index_text, e.byte), std::string("overlay index: ") + e.what());
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Schema, std::string("overlay index: ") + e.what());
  }
  for (const auto& f : files) set.overlays.push_back(overlay_from_string(read_text_file(dir / f)));
  return set;
}

}  // namespace dgppu
