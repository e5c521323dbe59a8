#include <gtest/gtest.h>

#include <filesystem>
#include <functional>
#include <map>

#include <nlohmann/json.hpp>

#include "dgppu/error.hpp"
#include "dgppu/inversion.hpp"
#include "support/fixtures.hpp"

namespace fs = std::filesystem;
using namespace dgppu;

namespace {

ErrorKind kind_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no dgppu::Error thrown";
  return ErrorKind::Io;
}

ScanRecord small_scan() {
  PhantomConfig cfg;
  cfg.position = Position::P1;
  cfg.kind = ScanKind::Partial;
  cfg.frame_count = 15;
  return gen_phantom(cfg, 5);
}

// Report with an explicit deletion mask and no batches.
FilterReport report_for(const LabeledCloud& cloud, const std::vector<bool>& deleted) {
  FilterReport r;
  r.scan_id = cloud.source;
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    PointVerdict v;
    v.point_index = i;
    v.appearances = 1;
    v.deleted = deleted[i];
    r.verdicts.push_back(v);
    (deleted[i] ? r.deleted : r.retained).push_back(i);
  }
  return r;
}

}  // namespace

TEST(InvertPoint, IdentityPose) {
  FrameTransform t;
  const auto px = invert_point(Eigen::Vector3d(3, 4, 0), t);
  EXPECT_EQ(px.u, 3.0);
  EXPECT_EQ(px.v, 4.0);
}

TEST(InvertPoint, RoundTripOverRandomTransforms) {
  SplitMix64 rng(2024);
  double worst = 0.0;
  for (int i = 0; i < 10000; ++i) {
    const auto t = fixture::random_transform(rng, i);
    const double u = rng.uniform(0, 1000), v = rng.uniform(0, 1000);
    const auto px = invert_point(project_frame(t, u, v), t);
    worst = std::max({worst, std::abs(px.u - u), std::abs(px.v - v)});
  }
  EXPECT_LT(worst, 1e-9);
}

TEST(InvertPoint, OffPlaneIsWrongFrame) {
  SplitMix64 rng(7);
  for (int i = 0; i < 1000; ++i) {
    const auto t = fixture::random_transform(rng, i);
    const Eigen::Vector3d normal = t.rotation.col(2);
    const Eigen::Vector3d p = project_frame(t, rng.uniform(0, 500), rng.uniform(0, 500)) + normal;
    EXPECT_EQ(kind_of([&] { invert_point(p, t); }), ErrorKind::WrongFrame);
  }
}

TEST(InvertCloud, NothingDeleted) {
  const auto scan = small_scan();
  const auto cloud = build_cloud(scan);
  const auto overlays = invert_cloud(report_for(cloud, std::vector<bool>(cloud.size(), false)), cloud, scan);
  ASSERT_EQ(overlays.size(), scan.frames.size());
  for (std::size_t f = 0; f < overlays.size(); ++f) {
    EXPECT_EQ(overlays[f].frame_index, scan.frames[f].transform.frame_index);
    EXPECT_FALSE(overlays[f].has_deletions());
    EXPECT_FALSE(overlays[f].failed());
    for (const auto& l : overlays[f].lines) EXPECT_FALSE(l.whole_line_deleted);
  }
}

TEST(InvertCloud, DeletingALineMarksIt) {
  const auto scan = small_scan();
  const auto cloud = build_cloud(scan);
  const auto& target = scan.frames[2];
  const int line = target.points.front().line_id;
  std::vector<bool> del(cloud.size(), false);
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const auto& pv = cloud.points[i].provenance;
    if (pv.frame_index != target.transform.frame_index) continue;
    for (const auto& fp : target.points)
      if (fp.u == pv.u && fp.v == pv.v && fp.line_id == line) del[i] = true;
  }
  const auto overlays = invert_cloud(report_for(cloud, del), cloud, scan);
  const auto& o = overlays[2];
  EXPECT_TRUE(o.has_deletions());
  EXPECT_TRUE(o.failed());
  for (const auto& l : o.lines) EXPECT_EQ(l.whole_line_deleted, l.line_id == line);
  for (std::size_t f = 0; f < overlays.size(); ++f)
    if (f != 2) EXPECT_FALSE(overlays[f].has_deletions());
}

TEST(InvertCloud, LineTotalsMatchDirectRecount) {
  const auto scan = small_scan();
  const auto cloud = build_cloud(scan);
  SplitMix64 rng(9);
  std::vector<bool> del(cloud.size());
  for (std::size_t i = 0; i < del.size(); ++i) del[i] = rng.bernoulli(0.2);
  const auto overlays = invert_cloud(report_for(cloud, del), cloud, scan);

  // Direct recount: cloud point -> scan point by exact provenance.
  std::map<std::pair<int, int>, std::pair<std::size_t, std::size_t>> want;  // (frame, line) -> (total, kept)
  for (const auto& f : scan.frames)
    for (const auto& p : f.points) ++want[{f.transform.frame_index, p.line_id}].first;
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    if (del[i]) continue;
    const auto& pv = cloud.points[i].provenance;
    for (const auto& p : scan.find_frame(pv.frame_index)->points)
      if (p.u == pv.u && p.v == pv.v) {
        ++want[{pv.frame_index, p.line_id}].second;
        break;
      }
  }
  std::size_t lines = 0;
  for (const auto& o : overlays) {
    for (const auto& l : o.lines) {
      const auto& w = want.at({o.frame_index, l.line_id});
      EXPECT_EQ(l.total, w.first);
      EXPECT_EQ(l.retained, w.second);
      EXPECT_EQ(l.whole_line_deleted, l.retained == 0);
      ++lines;
    }
  }
  EXPECT_EQ(lines, want.size());
}

TEST(InvertCloud, CorruptionCases) {
  const auto scan = small_scan();
  const auto cloud = build_cloud(scan);
  const auto report = report_for(cloud, std::vector<bool>(cloud.size(), false));

  auto wrong_id = report;
  wrong_id.scan_id = "other";
  EXPECT_EQ(kind_of([&] { invert_cloud(wrong_id, cloud, scan); }), ErrorKind::Corruption);

  auto short_report = report;
  short_report.verdicts.pop_back();
  EXPECT_EQ(kind_of([&] { invert_cloud(short_report, cloud, scan); }), ErrorKind::Corruption);

  auto moved = cloud;  // slid along the frame plane: pixel audit fails
  moved.points[3].xyz += scan.find_frame(moved.points[3].provenance.frame_index)->transform.rotation.col(0);
  EXPECT_EQ(kind_of([&] { invert_cloud(report, moved, scan); }), ErrorKind::Corruption);

  auto lifted = cloud;  // off the plane
  lifted.points[4].xyz += scan.find_frame(lifted.points[4].provenance.frame_index)->transform.rotation.col(2);
  EXPECT_EQ(kind_of([&] { invert_cloud(report, lifted, scan); }), ErrorKind::Corruption);

  auto missing = cloud;
  missing.points[5].provenance.frame_index = 9999;
  EXPECT_EQ(kind_of([&] { invert_cloud(report, missing, scan); }), ErrorKind::Corruption);

  auto synthetic = cloud;
  synthetic.points[6].synthetic = true;
  EXPECT_EQ(kind_of([&] { invert_cloud(report, synthetic, scan); }), ErrorKind::Corruption);

  auto dup = cloud;  // one pixel claimed twice
  dup.points[1] = dup.points[0];
  EXPECT_EQ(kind_of([&] { invert_cloud(report, dup, scan); }), ErrorKind::Corruption);
}

TEST(FramePrecision, FailureModes) {
  EXPECT_FALSE(fixture::make_overlay("s", 0, 0).failed());
  EXPECT_FALSE(fixture::make_overlay("s", 0, 1).failed());
  EXPECT_TRUE(fixture::make_overlay("s", 0, 2).failed());
  EXPECT_TRUE(fixture::make_overlay("s", 0, 3).failed());
}

TEST(FramePrecision, ReferenceCounts) {
  const double expect[] = {fixture::kReferencePrecisionP1, fixture::kReferencePrecisionP2, fixture::kReferencePrecisionP3};
  std::vector<PrecisionSummary> summaries;
  for (std::size_t i = 0; i < 3; ++i) {
    const auto& c = fixture::reference_counts()[i];
    const auto overlays = fixture::counted_overlays("x", c.frames, c.failures);
    const auto s = frame_precision(overlays, c.position);
    EXPECT_EQ(s.frames_with_deletions, static_cast<std::size_t>(c.frames));
    EXPECT_EQ(s.ok_frames, static_cast<std::size_t>(c.frames - c.failures));
    ASSERT_TRUE(s.applicable());
    EXPECT_NEAR(*s.precision, expect[i], 1e-15);
    summaries.push_back(s);
  }
  EXPECT_EQ(format_percent(*summaries[0].precision), "98.4");
  EXPECT_EQ(format_percent(*summaries[1].precision), "97.0");
  EXPECT_EQ(format_percent(*summaries[2].precision), "99.2");
  const double mean = mean_precision(summaries);
  EXPECT_NEAR(mean, fixture::kReferenceMean, 1e-15);
  EXPECT_EQ(format_percent(mean), "98.2");
  // Pooled frames would give 624/635, which is not what is reported.
  EXPECT_GT(std::abs(mean - 624.0 / 635.0), 5e-4);
}

TEST(FramePrecision, NotApplicableAndMeanErrors) {
  std::vector<FrameOverlay> none = {fixture::make_overlay("s", 0, 0), fixture::make_overlay("s", 1, 0)};
  const auto s = frame_precision(none, Position::P2);
  EXPECT_FALSE(s.applicable());
  EXPECT_EQ(s.frames_with_deletions, 0u);
  const std::vector<PrecisionSummary> only_na = {s};
  EXPECT_EQ(kind_of([&] { mean_precision(only_na); }), ErrorKind::InvalidInput);
  EXPECT_EQ(kind_of([&] { mean_precision(std::vector<PrecisionSummary>{}); }), ErrorKind::InvalidInput);
}

TEST(FramePrecision, MeanProperties) {
  PrecisionSummary a{Position::P1, 10, 9, 0.9};
  PrecisionSummary na{Position::P2, 0, 0, std::nullopt};
  EXPECT_EQ(mean_precision(std::vector<PrecisionSummary>{a}), 0.9);
  EXPECT_EQ(mean_precision(std::vector<PrecisionSummary>{a, na}), 0.9);
  EXPECT_DOUBLE_EQ(mean_precision(std::vector<PrecisionSummary>{a, a, a}), 0.9);
  PrecisionSummary p{Position::P1, 5, 5, 1.0};
  EXPECT_EQ(mean_precision(std::vector<PrecisionSummary>{p, p}), 1.0);
}

TEST(FramePrecision, RemovingAFailureIncreasesPrecision) {
  auto overlays = fixture::counted_overlays("x", 20, 4);
  const double before = *frame_precision(overlays, Position::P1).precision;
  for (auto it = overlays.begin(); it != overlays.end(); ++it) {
    if (it->failed()) {
      overlays.erase(it);
      break;
    }
  }
  EXPECT_GT(*frame_precision(overlays, Position::P1).precision, before);
}

TEST(PrecisionTable, CsvAndFixedWidth) {
  std::vector<PrecisionSummary> s;
  for (const auto& c : fixture::reference_counts()) {
    s.push_back(frame_precision(fixture::counted_overlays("x", c.frames, c.failures), c.position));
  }
  const auto csv = precision_table(s, true);
  EXPECT_EQ(csv.rfind("position,frames_with_deletions,ok_frames,precision,precision_percent\n", 0), 0u);
  EXPECT_NE(csv.find("P1,186,183,"), std::string::npos);
  EXPECT_NE(csv.find("P2,200,194,"), std::string::npos);
  EXPECT_NE(csv.find("P3,249,247,"), std::string::npos);
  EXPECT_NE(csv.find(",98.2\n"), std::string::npos);
  const auto text = precision_table(s, false);
  for (const char* pct : {"98.4", "97.0", "99.2", "98.2"}) EXPECT_NE(text.find(pct), std::string::npos) << pct;
  const auto json = nlohmann::json::parse(summaries_to_json(s));
  EXPECT_EQ(json.at("format"), "dgppu-precision");
}

TEST(Overlays, RoundTripAndTamperDetection) {
  const auto o = fixture::make_overlay("scan", 7, 3);
  const auto text = overlay_to_string(o);
  EXPECT_EQ(overlay_from_string(text), o);
  auto j = nlohmann::json::parse(text);
  j["lines"][0]["retained"] = 99;
  EXPECT_EQ(kind_of([&] { overlay_from_string(j.dump()); }), ErrorKind::Corruption);
  EXPECT_EQ(kind_of([&] { overlay_from_string("[]"); }), ErrorKind::Schema);
}

TEST(Overlays, DirectoryRoundTrip) {
  const auto dir = fs::temp_directory_path() / "dgppu_overlays_test";
  fs::remove_all(dir);
  OverlaySet set{"P3_partial", Position::P3, fixture::counted_overlays("P3_partial", 6, 2, 2)};
  save_overlays(dir, set, true);
  const auto back = load_overlays(dir);
  EXPECT_EQ(back.scan_id, set.scan_id);
  EXPECT_EQ(back.position, set.position);
  EXPECT_EQ(back.overlays, set.overlays);
  std::size_t svgs = 0;
  for (const auto& e : fs::directory_iterator(dir)) svgs += e.path().extension() == ".svg";
  EXPECT_EQ(svgs, 6u);
  EXPECT_NE(render_overlay_svg(set.overlays.back()).find("<svg"), std::string::npos);
  EXPECT_EQ(kind_of([&] { load_overlays(dir / "nope"); }), ErrorKind::Io);
}
