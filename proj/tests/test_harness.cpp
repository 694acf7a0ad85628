#include <gtest/gtest.h>

#include <algorithm>

#include "ptqrel/harness.hpp"
#include "ptqrel/reference.hpp"
#include "support.hpp"

using namespace ptqrel;

namespace {

struct SmallWorkload {
  ModelGraph model;
  LabeledDataset train, test;
};

const SmallWorkload& small() {
  static const SmallWorkload w = [] {
    SyntheticSpec s;
    s.class_count = 4;
    s.height = 8;
    s.width = 8;
    s.train_size = 400;
    s.test_size = 200;
    auto [train, test] = gen_synthetic(s, 2);
    TrainConfig c;
    c.hidden = {16};
    c.epochs = 5;
    return SmallWorkload{train_mlp(train, c), std::move(train), std::move(test)};
  }();
  return w;
}

TrialSpec w4a4(MetricKind metric = MetricKind::MSE, std::size_t calib = 32) {
  TrialSpec t;
  t.metric = metric;
  t.weight_bits = t.act_bits = 4;
  t.calib.size = calib;
  return t;
}

TrialResult fake_trial(std::uint64_t seed, double avg, std::vector<double> per_class) {
  return {seed, std::move(per_class), avg, "x"};
}

PerClassAccuracy fake_fp(std::vector<double> per_class, double avg) {
  return {std::move(per_class), avg, {}, {}};
}

}  // namespace

TEST(Trial, IsDeterministicPerSeed) {
  const auto& w = small();
  const TrialResult a = run_trial(w.model, w.train, w.test, w4a4(), 3);
  const TrialResult b = run_trial(w.model, w.train, w.test, w4a4(), 3);
  EXPECT_EQ(a, b);
  EXPECT_EQ(a.seed, 3u);
  EXPECT_EQ(a.per_class.size(), 4u);
  EXPECT_NE(a.config_digest, run_trial(w.model, w.train, w.test, w4a4(), 4).config_digest);
}

TEST(Trial, PassthroughEqualsFullPrecision) {
  const auto& w = small();
  TrialSpec spec = w4a4();
  spec.quantize = false;
  const auto fp = evaluate(w.model, w.test);
  for (std::uint64_t seed : {0u, 1u, 7u}) {
    const TrialResult r = run_trial(w.model, w.train, w.test, spec, seed);
    EXPECT_EQ(r.average, fp.average);
    EXPECT_EQ(r.per_class, fp.per_class);
  }
  const ReliabilityReport rep = run_benchmark(w.model, w.train, w.test, spec, 4, 0);
  for (const auto& c : rep.categories) {
    EXPECT_EQ(c.std, 0.0);
    EXPECT_EQ(c.mean_drop, 0.0);
  }
}

TEST(Trial, PinnedReferenceW4A4SeedZero) {
  const ReferenceWorkload ref = build_reference(SyntheticSpec{}, 0, TrainConfig{});
  TrialSpec spec = w4a4(MetricKind::MSE, 256);
  const TrialResult r = run_trial(ref.model, ref.train, ref.test, spec, 0);
  // Frozen from the first run of this configuration.
  const std::vector<double> pinned{0.91, 0.92, 0.975, 1.0, 0.94, 0.85, 0.955, 0.83, 0.935, 0.96};
  ASSERT_EQ(r.per_class.size(), pinned.size());
  for (std::size_t c = 0; c < pinned.size(); ++c) EXPECT_DOUBLE_EQ(r.per_class[c], pinned[c]) << c;
  EXPECT_DOUBLE_EQ(r.average, 0.9275);
  EXPECT_EQ(r.config_digest, "0696200ebe2f2464");
}

TEST(Benchmark, SingleTrialHasZeroSpread) {
  const auto& w = small();
  const ReliabilityReport r = run_benchmark(w.model, w.train, w.test, w4a4(), 1, 5);
  for (const auto& c : r.categories) {
    EXPECT_EQ(c.std, 0.0);
    EXPECT_EQ(c.drop.q1, c.drop.q3);
  }
}

TEST(Benchmark, StatisticsRecomputeFromTrials) {
  const auto& w = small();
  const ReliabilityReport r = run_benchmark(w.model, w.train, w.test, w4a4(), 6, 10);
  ASSERT_EQ(r.trials.size(), 6u);
  for (std::size_t i = 0; i < 6; ++i) EXPECT_EQ(r.trials[i].seed, 10 + i);
  const auto fp = evaluate(w.model, w.test);
  EXPECT_EQ(r.average().fp, fp.average);
  double sum = 0.0;
  for (const auto& t : r.trials) sum += t.average;
  EXPECT_NEAR(r.average().mean, sum / 6.0, 1e-15);
  EXPECT_NEAR(r.average().mean_drop, fp.average - r.average().mean, 1e-15);
  for (std::size_t c = 0; c < 4; ++c) {
    double s = 0.0, sq = 0.0;
    for (const auto& t : r.trials) s += t.per_class[c];
    const double mean = s / 6.0;
    for (const auto& t : r.trials) sq += (t.per_class[c] - mean) * (t.per_class[c] - mean);
    EXPECT_NEAR(r.cls(c).mean, mean, 1e-15);
    EXPECT_NEAR(r.cls(c).std, std::sqrt(sq / 6.0), 1e-15);
    EXPECT_EQ(r.cls(c).name, "Class " + std::to_string(c));
  }
}

TEST(Benchmark, WorkerCountDoesNotChangeTheReport) {
  const auto& w = small();
  const auto one = run_benchmark(w.model, w.train, w.test, w4a4(MetricKind::KL), 5, 0, 1);
  const auto three = run_benchmark(w.model, w.train, w.test, w4a4(MetricKind::KL), 5, 0, 3);
  EXPECT_EQ(to_json(one).dump(), to_json(three).dump());
}

TEST(Benchmark, FirstFailureStopsTheRun) {
  const auto& w = small();
  TrialSpec spec = w4a4(MetricKind::MSE, w.train.size() + 1);
  try {
    run_benchmark(w.model, w.train, w.test, spec, 5, 0);
    ADD_FAILURE();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::TrialFailed);
    EXPECT_NE(std::string(e.what()).find("0 of 5 trials completed"), std::string::npos) << e.what();
    EXPECT_NE(std::string(e.what()).find("seed 0"), std::string::npos) << e.what();
  }
  EXPECT_THROW(run_benchmark(w.model, w.train, w.test, w4a4(), 0, 0), Error);
}

TEST(Aggregate, IsInvariantToTrialOrder) {
  ptqtest::Pcg32 rng(81);
  std::vector<TrialResult> trials;
  for (std::uint64_t s = 0; s < 40; ++s) {
    std::vector<double> pc(3);
    for (double& v : pc) v = rng.unit();
    trials.push_back(fake_trial(s, rng.unit(), pc));
  }
  const auto fp = fake_fp({0.9, 0.8, 0.7}, 0.8);
  const std::string base = to_json(aggregate(fp, trials)).dump();
  for (int k = 0; k < 5; ++k) {
    for (std::size_t i = trials.size(); i > 1; --i) std::swap(trials[i - 1], trials[rng.index(i)]);
    EXPECT_EQ(to_json(aggregate(fp, trials)).dump(), base);
  }
  EXPECT_THROW(aggregate(fp, {}), Error);
  EXPECT_THROW(aggregate(fp, {fake_trial(0, 0.5, {0.5})}), Error);
}

TEST(Boxplot, OneToNine) {
  const BoxplotStats b = boxplot_stats({9, 1, 8, 2, 7, 3, 6, 4, 5});
  EXPECT_EQ(b.q1, 2.5);
  EXPECT_EQ(b.median, 5.0);
  EXPECT_EQ(b.q3, 7.5);
  EXPECT_EQ(b.lo_whisker, 1.0);
  EXPECT_EQ(b.hi_whisker, 9.0);
  EXPECT_TRUE(b.outliers.empty());
}

TEST(Boxplot, AllEqual) {
  const BoxplotStats b = boxplot_stats(std::vector<double>(7, 0.25));
  EXPECT_EQ(b.q1, 0.25);
  EXPECT_EQ(b.q3, 0.25);
  EXPECT_EQ(b.lo_whisker, 0.25);
  EXPECT_EQ(b.hi_whisker, 0.25);
  EXPECT_TRUE(b.outliers.empty());
}

TEST(Boxplot, FarPointIsAnOutlier) {
  const BoxplotStats b = boxplot_stats({1, 2, 3, 4, 5, 6, 100});
  EXPECT_EQ(b.q1, 2.0);
  EXPECT_EQ(b.median, 4.0);
  EXPECT_EQ(b.q3, 6.0);
  EXPECT_EQ(b.hi_whisker, 6.0);
  EXPECT_EQ(b.outliers, std::vector<double>{100.0});
}

TEST(Boxplot, FivePointsWithLargeMaximumHaveNoOutlier) {
  // Hinges 1.5 and 52 put the upper fence at 127.75.
  const BoxplotStats b = boxplot_stats({1, 2, 3, 4, 100});
  EXPECT_EQ(b.q1, 1.5);
  EXPECT_EQ(b.median, 3.0);
  EXPECT_EQ(b.q3, 52.0);
  EXPECT_EQ(b.hi_whisker, 100.0);
  EXPECT_TRUE(b.outliers.empty());
}

TEST(Boxplot, SmallSamples) {
  const BoxplotStats one = boxplot_stats({3.0});
  EXPECT_EQ(one.q1, 3.0);
  EXPECT_EQ(one.q3, 3.0);
  const BoxplotStats two = boxplot_stats({1.0, 3.0});
  EXPECT_EQ(two.q1, 1.0);
  EXPECT_EQ(two.median, 2.0);
  EXPECT_EQ(two.q3, 3.0);
  EXPECT_THROW(boxplot_stats({}), Error);
}

TEST(Boxplot, HingesBracketTheMedianProperty) {
  ptqtest::Pcg32 rng(82);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> v(1 + rng.index(60));
    for (double& x : v) x = rng.normal();
    const BoxplotStats b = boxplot_stats(v);
    EXPECT_LE(b.lo_whisker, b.q1);
    EXPECT_LE(b.q1, b.median);
    EXPECT_LE(b.median, b.q3);
    EXPECT_LE(b.q3, b.hi_whisker);
    const double iqr = b.q3 - b.q1;
    std::size_t outside = 0;
    for (double x : v) outside += x < b.q1 - 1.5 * iqr || x > b.q3 + 1.5 * iqr;
    EXPECT_EQ(b.outliers.size(), outside);
  }
}

TEST(WorstGroup, PicksLowestMeanThenLargestDropThenLowestIndex) {
  const auto fp = fake_fp({0.9, 0.95, 0.8}, 0.88);
  const auto r = aggregate(fp, {fake_trial(0, 0.8, {0.7, 0.6, 0.9})});
  EXPECT_EQ(worst_group(r).class_id, 1u);
  EXPECT_NEAR(worst_group(r).mean_drop, 0.35, 1e-12);

  const auto tie = aggregate(fp, {fake_trial(0, 0.8, {0.6, 0.6, 0.9})});
  EXPECT_EQ(worst_group(tie).class_id, 1u);  // same mean, larger drop

  const auto fp_flat = fake_fp({0.9, 0.9, 0.9}, 0.9);
  EXPECT_EQ(worst_group(aggregate(fp_flat, {fake_trial(0, 0.8, {0.9, 0.6, 0.6})})).class_id, 1u);
}

TEST(ReportCsv, GoldenTable) {
  const auto fp = fake_fp({0.9, 0.85}, 0.875);
  const auto r = aggregate(fp, {fake_trial(0, 0.85, {0.9, 0.8}), fake_trial(1, 0.8, {0.8, 0.8})},
                           {{"quant", {{"enabled", true}, {"metric", "mse"}, {"wbits", 4}, {"abits", 4}}}});
  const ReliabilityReport reports[] = {r};
  EXPECT_EQ(report_csv(reports),
            "Category,FP,W4A4 MSE\n"
            "Average,87.5,82.5\xC2\xB1" "2.5\n"
            "Class 0,90.0,85.0\xC2\xB1" "5.0\n"
            "Class 1,85.0,80.0\xC2\xB1" "0.0\n");
  EXPECT_EQ(boxplot_csv(r),
            "category,mean_drop,q1,median,q3,lo_whisker,hi_whisker,outliers\n"
            "Average,5.0000,2.5000,5.0000,7.5000,2.5000,7.5000,\n"
            "Class 0,5.0000,0.0000,5.0000,10.0000,0.0000,10.0000,\n"
            "Class 1,5.0000,5.0000,5.0000,5.0000,5.0000,5.0000,\n");
  const std::string labels[] = {"custom"};
  EXPECT_EQ(report_csv(reports, labels).substr(0, 20), "Category,FP,custom\nA");
}

TEST(ReportCsv, LabelsFollowTheConfig) {
  ReliabilityReport r;
  EXPECT_EQ(report_label(r), "Quantized");
  r.config = {{"quant", {{"enabled", false}}}};
  EXPECT_EQ(report_label(r), "FP32");
  r.config = {{"quant", {{"enabled", true}, {"metric", "minmax"}, {"wbits", 8}, {"abits", 6}}}};
  EXPECT_EQ(report_label(r), "W8A6 MinMax");
  r.config["quant"]["metric"] = "cosine";
  EXPECT_EQ(report_label(r), "W8A6 Cosine");
  r.config["quant"]["metric"] = "kl";
  EXPECT_EQ(report_label(r), "W8A6 KL");
}

TEST(ReportJson, RoundTripsExactly) {
  const auto& w = small();
  const auto r = run_benchmark(w.model, w.train, w.test, w4a4(), 3, 0, 1, {{"note", "x"}});
  const auto j = to_json(r);
  EXPECT_EQ(to_json(report_from_json(nlohmann::json::parse(j.dump()))).dump(), j.dump());
  EXPECT_TRUE(j.contains("worst_group"));
  EXPECT_THROW(report_from_json(nlohmann::json::object()), Error);
}
