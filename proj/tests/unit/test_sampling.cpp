#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "dgppu/error.hpp"
#include "dgppu/sampling.hpp"
#include "support/fixtures.hpp"
#include "support/oracles.hpp"

namespace fs = std::filesystem;
using namespace dgppu;

namespace {

LabeledCloud labeled_cloud(std::size_t femur, std::size_t patella, std::size_t tibia,
                           std::uint64_t seed = 1) {
  SplitMix64 rng(seed);
  LabeledCloud c;
  c.source = "fixture";
  auto add = [&](BoneLabel l, std::size_t n, double x0) {
    for (std::size_t i = 0; i < n; ++i) {
      WorldPoint w;
      w.xyz = Eigen::Vector3d(x0 + rng.uniform(0, 10), rng.uniform(0, 10), rng.uniform(0, 10));
      w.label = l;
      w.provenance = {"fixture", static_cast<int>(i % 7), static_cast<double>(i), 1.0};
      c.points.push_back(w);
    }
  };
  add(BoneLabel::Femur, femur, 0);
  add(BoneLabel::Patella, patella, 20);
  add(BoneLabel::Tibia, tibia, 40);
  return c;
}

struct Tuple {
  long num, den;
  unsigned n, k, batches;
};

}  // namespace

TEST(Normalize, SinglePoint) {
  Matrix x(1, 3);
  x << 4, 5, 6;
  const auto r = normalize(x);
  EXPECT_TRUE(r.coords.isZero());
  EXPECT_EQ(r.norm.scale, 1.0);
  EXPECT_TRUE(r.norm.centroid.isApprox(Eigen::Vector3d(4, 5, 6)));
}

TEST(Normalize, SphereOfRadiusFive) {
  Matrix x(6, 3);
  x << 6, 1, 1, -4, 1, 1, 1, 6, 1, 1, -4, 1, 1, 1, 6, 1, 1, -4;
  const auto r = normalize(x);
  EXPECT_NEAR((r.norm.centroid - Eigen::Vector3d(1, 1, 1)).norm(), 0.0, 1e-15);
  EXPECT_NEAR(r.norm.scale, 5.0, 1e-15);
}

TEST(Normalize, RoundTripAndUnitBall) {
  for (std::uint64_t s = 0; s < 20; ++s) {
    const Matrix x = fixture::random_matrix(50, 3, s, -300, 300);
    const auto r = normalize(x);
    for (Eigen::Index i = 0; i < r.coords.rows(); ++i) EXPECT_LE(r.coords.row(i).norm(), 1.0 + 1e-12);
    const Matrix back = denormalize(r.coords, r.norm);
    EXPECT_LE((back - x).cwiseAbs().maxCoeff(), 1e-12 * x.cwiseAbs().maxCoeff());
  }
}

TEST(Augment, DoublesThePatella) {
  const auto cloud = labeled_cloud(500, 100, 400);
  const auto out = augment_minority(cloud, AugmentConfig::defaults_for(cloud), 3);
  const auto before = class_histogram(cloud);
  const auto after = class_histogram(out);
  EXPECT_EQ(after[0], 500u);
  EXPECT_EQ(after[1], 200u);
  EXPECT_EQ(after[2], 400u);
  (void)before;
  // Originals verbatim and first; copies flagged synthetic.
  for (std::size_t i = 0; i < cloud.size(); ++i) EXPECT_EQ(out.points[i], cloud.points[i]);
  for (std::size_t i = cloud.size(); i < out.size(); ++i) {
    EXPECT_TRUE(out.points[i].synthetic);
    EXPECT_EQ(out.points[i].label, BoneLabel::Patella);
  }
}

TEST(Augment, NoTargetPointsMeansUnchanged) {
  const auto cloud = labeled_cloud(30, 0, 30);
  EXPECT_EQ(augment_minority(cloud, AugmentConfig::defaults_for(cloud), 3), cloud);
}

TEST(Augment, CopiesStayWithinClipPlusTranslation) {
  const auto cloud = labeled_cloud(50, 300, 50, 9);
  AugmentConfig cfg;
  cfg.jitter_sigma = 0.4;
  cfg.jitter_clip = 0.5;
  cfg.translation_range = 0.3;
  const auto out = augment_minority(cloud, cfg, 11);
  // Pair each copy with its source through provenance.
  std::map<std::pair<int, double>, Eigen::Vector3d> source;
  for (const auto& p : cloud.points) {
    if (p.label == BoneLabel::Patella) source[{p.provenance.frame_index, p.provenance.u}] = p.xyz;
  }
  const double bound = cfg.jitter_clip + cfg.translation_range * std::sqrt(3.0);
  std::size_t copies = 0;
  for (const auto& p : out.points) {
    if (!p.synthetic) continue;
    ++copies;
    const auto& s = source.at({p.provenance.frame_index, p.provenance.u});
    EXPECT_LE((p.xyz - s).norm(), bound + 1e-12);
  }
  EXPECT_EQ(copies, 300u);
}

TEST(Augment, InvalidConfig) {
  AugmentConfig cfg;
  cfg.jitter_sigma = -1;
  cfg.jitter_clip = 1;
  EXPECT_THROW(cfg.validate(), Error);
  cfg.jitter_sigma = 0.1;
  cfg.jitter_clip = 0.0;
  EXPECT_THROW(cfg.validate(), Error);
}

TEST(SampleBatches, DefaultsGive512000Draws) {
  const auto cloud = labeled_cloud(600, 150, 650);
  SampleConfig cfg;
  const auto batches = sample_batches(cloud, cfg);
  ASSERT_EQ(batches.size(), 500u);
  std::size_t draws = 0;
  for (const auto& b : batches) {
    EXPECT_EQ(b.indices.size(), 1024u);
    for (auto i : b.indices) EXPECT_LT(i, cloud.size());
    EXPECT_GT(b.norm.scale, 0.0);
    draws += b.indices.size();
  }
  EXPECT_EQ(draws, 512000u);
}

TEST(SampleBatches, OnePointCloud) {
  const auto cloud = labeled_cloud(1, 0, 0);
  const auto batches = sample_batches(cloud, SampleConfig{3, 16, 1});
  for (const auto& b : batches)
    for (auto i : b.indices) EXPECT_EQ(i, 0u);
}

TEST(SampleBatches, EmptyCloudAndBadConfig) {
  LabeledCloud empty;
  EXPECT_THROW(sample_batches(empty, SampleConfig{}), Error);
  const auto cloud = labeled_cloud(5, 5, 5);
  EXPECT_THROW(sample_batches(cloud, SampleConfig{0, 16, 1}), Error);
  EXPECT_THROW(sample_batches(cloud, SampleConfig{4, 1, 1}), Error);
}

TEST(SampleBatches, OrderIndependentSeeding) {
  const auto cloud = labeled_cloud(100, 20, 80);
  const SampleConfig cfg{40, 64, 1234};
  const auto all = sample_batches(cloud, cfg);
  for (std::size_t b : {39u, 0u, 17u}) EXPECT_EQ(sample_batch(cloud, cfg, b), all[b]);
  EXPECT_EQ(sample_batches(cloud, cfg), all);
}

TEST(SampleBatches, ClassFrequenciesWithinFourSigma) {
  const auto cloud = labeled_cloud(600, 150, 650);
  const auto batches = sample_batches(cloud, SampleConfig{500, 1024, 77});
  LabelCounts drawn{};
  std::size_t total = 0;
  for (const auto& b : batches) {
    const auto h = class_histogram(cloud, b);
    for (std::size_t c = 0; c < kNumClasses; ++c) drawn[c] += h[c];
    total += b.indices.size();
  }
  const auto hist = class_histogram(cloud);
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    const double p = static_cast<double>(hist[c]) / static_cast<double>(cloud.size());
    const double mean = p * static_cast<double>(total);
    const double sigma = std::sqrt(static_cast<double>(total) * p * (1 - p));
    EXPECT_LT(std::abs(static_cast<double>(drawn[c]) - mean), 4 * sigma) << "class " << c;
  }
}

TEST(ClassHistogram, MatchesRecount) {
  EXPECT_EQ(class_histogram(LabeledCloud{}), (LabelCounts{0, 0, 0}));
  const auto cloud = labeled_cloud(13, 4, 9);
  EXPECT_EQ(class_histogram(cloud), (LabelCounts{13, 4, 9}));
  const auto b = sample_batch(cloud, SampleConfig{1, 50, 5}, 0);
  LabelCounts recount{};
  for (auto i : b.indices) ++recount[static_cast<std::size_t>(code(cloud.points[i].label))];
  EXPECT_EQ(class_histogram(cloud, b), recount);
}

TEST(BatchSet, RoundTrip) {
  const auto cloud = labeled_cloud(20, 10, 20);
  const SampleConfig cfg{5, 32, 8};
  const BatchSet set{cloud.source, cfg, sample_batches(cloud, cfg)};
  const auto dir = fs::temp_directory_path() / "dgppu_batchset";
  fs::remove_all(dir);
  save_batch_set(dir, cloud, set);
  const auto back = load_batch_set(dir);
  EXPECT_EQ(back.cloud_ref, set.cloud_ref);
  EXPECT_EQ(back.batches, set.batches);
  EXPECT_EQ(back.config.seed, cfg.seed);
}

TEST(Guarantee, TrivialCases) {
  EXPECT_EQ(min_class_guarantee(0.3, 1024, 0, 500), 1.0);
  EXPECT_EQ(min_class_guarantee(0.0, 1024, 0, 500), 1.0);
  EXPECT_EQ(min_class_guarantee(0.0, 1024, 1, 500), 0.0);
  EXPECT_EQ(min_class_guarantee(0.0, 1024, 20, 500), 0.0);
  EXPECT_EQ(min_class_guarantee(1.0, 1024, 1024, 3), 1.0);
}

TEST(Guarantee, DomainErrors) {
  auto kind = [](auto fn) {
    try {
      fn();
    } catch (const Error& e) {
      return e.kind();
    }
    return ErrorKind::Io;
  };
  EXPECT_EQ(kind([] { min_class_guarantee(-0.1, 10, 1, 1); }), ErrorKind::Domain);
  EXPECT_EQ(kind([] { min_class_guarantee(1.5, 10, 1, 1); }), ErrorKind::Domain);
  EXPECT_EQ(kind([] { min_class_guarantee(NAN, 10, 1, 1); }), ErrorKind::Domain);
  EXPECT_EQ(kind([] { min_class_guarantee(0.5, 10, 11, 1); }), ErrorKind::Domain);
}

TEST(Guarantee, MatchesExactRationalOracle) {
  const std::vector<Tuple> tuples = {
      {1, 20, 1024, 20, 500}, {1, 25, 1024, 20, 500}, {3, 100, 256, 5, 50},
      {1, 10, 100, 10, 20},   {1, 2, 40, 20, 7},      {1, 3, 30, 1, 1000},
      {1, 1000, 1024, 1, 3},  {9, 10, 50, 45, 2},     {1, 7, 64, 9, 100},
  };
  for (const auto& t : tuples) {
    const double p = static_cast<double>(t.num) / static_cast<double>(t.den);
    const double oracle = fixture::rational_guarantee(t.num, t.den, t.n, t.k, t.batches);
    EXPECT_NEAR(min_class_guarantee(p, t.n, t.k, t.batches), oracle, 1e-10)
        << t.num << "/" << t.den << " n=" << t.n << " k=" << t.k << " B=" << t.batches;
  }
}

TEST(Guarantee, FrozenHighPrecisionValues) {
  // tests/oracles/derived_values.py
  EXPECT_NEAR(min_class_guarantee(0.05, 1024, 20, 500), 0.9999345903455397201, 1e-12);
  EXPECT_NEAR(min_class_guarantee(0.04, 1024, 20, 500), 0.96036301769787883899, 1e-12);
  EXPECT_NEAR(min_class_guarantee(0.03, 256, 5, 50), 0.0021313644704896410106, 1e-12);
}

TEST(Guarantee, MonotoneInPAndK) {
  double prev = 0.0;
  for (double p = 0.0; p <= 0.2; p += 0.0025) {
    const double v = min_class_guarantee(p, 1024, 20, 500);
    EXPECT_GE(v, prev);
    prev = v;
  }
  prev = 1.0;
  for (std::size_t k = 0; k <= 80; ++k) {
    const double v = min_class_guarantee(0.04, 1024, k, 500);
    EXPECT_LE(v, prev);
    prev = v;
  }
}

TEST(Guarantee, MonteCarloWithinThreeStandardErrors) {
  const double p = 0.04;
  const std::size_t n = 1024, k = 20, batches = 500, trials = 20000;
  std::mt19937_64 gen(2024);
  std::binomial_distribution<int> draw(static_cast<int>(n), p);
  std::size_t ok = 0;
  for (std::size_t t = 0; t < trials; ++t) {
    bool all = true;
    for (std::size_t b = 0; b < batches && all; ++b) all = draw(gen) >= static_cast<int>(k);
    ok += all;
  }
  const double est = static_cast<double>(ok) / trials;
  const double exact = min_class_guarantee(p, n, k, batches);
  const double se = std::sqrt(exact * (1 - exact) / trials);
  EXPECT_LT(std::abs(est - exact), 3 * se) << est << " vs " << exact;
}

TEST(Guarantee, SolveForTheTargetProbability) {
  const double p = solve_minority_fraction(0.9695, 1024, 20, 500);
  EXPECT_NEAR(p, fixture::kReferencePStar, 1e-9);
  EXPECT_LT(std::abs(min_class_guarantee(p, 1024, 20, 500) - 0.9695), 5e-4);
  EXPECT_LT(min_class_guarantee(p - 1e-4, 1024, 20, 500), min_class_guarantee(p, 1024, 20, 500));
  EXPECT_GT(min_class_guarantee(p + 1e-4, 1024, 20, 500), min_class_guarantee(p, 1024, 20, 500));
}
