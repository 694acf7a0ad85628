// Acceptance run: one PASS/FAIL line per criterion, non-zero exit if any fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>

#include "oracles.hpp"
#include "ptqrel/cli.hpp"
#include "ptqrel/ptqrel.hpp"
#include "support.hpp"

using namespace ptqrel;
namespace fs = std::filesystem;

namespace {

int failures = 0;

void report(const char* id, bool pass, const std::string& detail) {
  std::printf("%s %s  %s\n", id, pass ? "PASS" : "FAIL", detail.c_str());
  std::fflush(stdout);
  if (!pass) ++failures;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, auto... args) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

void p1_quantizer_contract() {
  const auto t0 = std::chrono::steady_clock::now();
  const QuantParams grid[] = {{2, 0.5, true},   {4, 0.1, false},  {4, 0.03, true},
                              {6, 0.01, true},  {8, 0.005, false}, {8, 1.0, true}};
  ptqtest::Pcg32 rng(1001);
  std::size_t bound_violations = 0, order_violations = 0, idempotence_violations = 0;
  for (const QuantParams& p : grid) {
    const double lo = p.scale * static_cast<double>(p.qmin()), hi = p.scale * static_cast<double>(p.qmax());
    std::vector<float> xs(10000);
    for (float& x : xs) x = static_cast<float>(rng.uniform(lo * 1.5 - p.scale, hi * 1.5 + p.scale));
    for (float x : xs) {
      if (x >= lo && x <= hi && std::fabs(dequantize(quantize(x, p), p) - x) > p.scale / 2) ++bound_violations;
      const float once = fake_quant(x, p);
      if (fake_quant(once, p) != once) ++idempotence_violations;
    }
    std::sort(xs.begin(), xs.end());
    for (std::size_t i = 1; i < xs.size(); ++i) {
      if (quantize(xs[i], p) < quantize(xs[i - 1], p)) ++order_violations;
    }
  }
  const double secs = seconds_since(t0);
  report("P1", bound_violations + order_violations + idempotence_violations == 0 && secs < 5.0,
         fmt("6 grids x 10000 scalars: %zu bound, %zu order, %zu idempotence violations; %.2f s",
             bound_violations, order_violations, idempotence_violations, secs));
}

void p2_search_oracle() {
  const auto t0 = std::chrono::steady_clock::now();
  ptqtest::Pcg32 rng(1002);
  std::size_t checked = 0, mismatches = 0;
  for (int t = 0; t < 200; ++t) {
    const std::size_t n = 64 + rng.index(4096 - 64 + 1);
    const Tensor x = t % 2 ? ptqtest::signed_activations(rng, n) : ptqtest::relu_activations(rng, n);
    const bool is_signed = minmax(x).first < 0.0f;
    const double peak = max_abs(x);
    for (auto [metric, objective] : {std::pair{MetricKind::MSE, oracle::Objective::MSE},
                                     std::pair{MetricKind::Cosine, oracle::Objective::Cosine},
                                     std::pair{MetricKind::KL, oracle::Objective::KL}}) {
      for (int bits : {4, 6, 8}) {
        const QuantParams got = calibrate_search(x, bits, metric);
        const auto want = oracle::brute_force(objective, x.data(), bits, is_signed);
        const double chosen = got.scale * static_cast<double>(got.qmax()) / peak * 100.0;
        ++checked;
        if (got.is_signed != is_signed || std::llround(chosen) != static_cast<long long>(want.candidate)) {
          ++mismatches;
        }
      }
    }
  }
  const double secs = seconds_since(t0);
  report("P2", mismatches == 0 && secs < 60.0,
         fmt("%zu searches, %zu differ from brute force; %.1f s", checked, mismatches, secs));
}

void p3_metric_formulas() {
  double minmax_err = 0.0;
  ptqtest::Pcg32 rng(1003);
  for (int t = 0; t < 50; ++t) {
    Tensor x = ptqtest::relu_activations(rng, 20 + rng.index(200));
    x[0] = 0.0f;
    const auto [lo, hi] = minmax(x);
    const int bits = 2 + static_cast<int>(rng.index(7));
    const double want = (static_cast<double>(hi) - lo) / (std::ldexp(1.0, bits) - 1.0);
    minmax_err = std::max(minmax_err, std::fabs(calibrate_minmax(x, bits).scale - want));
  }

  // Hand-evaluated smoothed KL: normalise, add 1e-9 per bin, renormalise.
  const auto hand_kl = [](std::vector<double> p, std::vector<double> q) {
    const double sp = std::accumulate(p.begin(), p.end(), 0.0), sq = std::accumulate(q.begin(), q.end(), 0.0);
    const double z = 1.0 + 1e-9 * static_cast<double>(p.size());
    double s = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double a = (p[i] / sp + 1e-9) / z, b = (q[i] / sq + 1e-9) / z;
      s += a * std::log(a / b);
    }
    return s;
  };
  const std::vector<std::pair<std::vector<double>, std::vector<double>>> kl_fixtures{
      {{1, 1}, {1, 3}},
      {{1, 2, 3, 4}, {4, 3, 2, 1}},
      {{5, 0, 0, 5}, {1, 1, 1, 1}},
      {{1, 0, 2, 0, 3, 0, 4, 0}, {1, 1, 2, 2, 3, 3, 4, 4}},
      {{2, 2, 2, 2, 2, 2, 2, 2}, {2, 2, 2, 2, 2, 2, 2, 2}},
      {{1, 1, 1, 1, 1, 1, 1, 1}, {8, 0, 0, 0, 0, 0, 0, 0}},
  };
  double kl_err = 0.0;
  for (const auto& [p, q] : kl_fixtures) kl_err = std::max(kl_err, std::fabs(kl_divergence(p, q) - hand_kl(p, q)));
  // 0.5 ln(4/3) up to the smoothing term.
  const bool kl_closed_form = std::fabs(kl_divergence(std::vector<double>{1, 1}, std::vector<double>{1, 3}) -
                                        0.5 * std::log(4.0 / 3.0)) < 1e-8;

  const std::vector<float> a{1, 0}, same{2, 0}, orth{0, 3}, diag{1, 1};
  const double cos_err = std::max({std::fabs(cosine_distance(a, same) - 0.0), std::fabs(cosine_distance(a, orth) - 1.0),
                                   std::fabs(cosine_distance(a, diag) - (1.0 - 1.0 / std::sqrt(2.0)))});
  report("P3", minmax_err <= 1e-12 && kl_err <= 1e-9 && kl_closed_form && cos_err <= 1e-7,
         fmt("minmax max err %.2e, kl max err %.2e, cosine max err %.2e", minmax_err, kl_err, cos_err));
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

void p4_determinism() {
  const fs::path dir = ptqtest::scratch_dir("acceptance-determinism");
  const auto bench = [&](const std::string& out) {
    const std::vector<std::string> args{"ptqbench", "bench",       "--metric", "kl", "--wbits", "4", "--abits", "4",
                                        "--trials", "4",           "--calib-size", "64", "--noise", "0.25",
                                        "--seed",   "7",           "--out",    (dir / out).string()};
    std::vector<const char*> argv;
    for (const auto& s : args) argv.push_back(s.c_str());
    std::ostringstream sink;
    return cli::cli_main(static_cast<int>(argv.size()), argv.data(), sink, sink);
  };
  const int a = bench("a"), b = bench("b");
  const std::string ja = slurp(dir / "a" / "report.json"), jb = slurp(dir / "b" / "report.json");
  report("P4", a == 0 && b == 0 && !ja.empty() && ja == jb,
         fmt("exit codes %d/%d, report.json %zu bytes, identical: %s", a, b, ja.size(), ja == jb ? "yes" : "no"));
}

struct Suite {
  const ReferenceWorkload& ref;

  ReliabilityReport run(MetricKind metric, int bits, std::size_t calib_size = 256, double noise = 0.0) const {
    TrialSpec spec;
    spec.metric = metric;
    spec.weight_bits = spec.act_bits = bits;
    spec.calib.size = calib_size;
    spec.calib.noise_fraction = noise;
    return run_benchmark(ref.model, ref.train, ref.test, spec, 50, 0);
  }
};

double mean_class_std(const ReliabilityReport& r) {
  double s = 0.0;
  for (std::size_t c = 0; c < r.class_count(); ++c) s += r.cls(c).std;
  return s / static_cast<double>(r.class_count());
}

void p10_harness_algebra() {
  ptqtest::Pcg32 rng(1010);
  const PerClassAccuracy fp{{0.9, 0.8, 0.95}, (0.9 + 0.8 + 0.95) / 3, {}, {}};
  std::vector<TrialResult> trials;
  for (std::uint64_t s = 0; s < 37; ++s) {
    TrialResult t{s, {rng.uniform(0.5, 1), rng.uniform(0.5, 1), rng.uniform(0.5, 1)}, 0.0, "x"};
    t.average = (t.per_class[0] + t.per_class[1] + t.per_class[2]) / 3;
    trials.push_back(t);
  }
  const ReliabilityReport r = aggregate(fp, trials);
  double err = 0.0;
  for (std::size_t k = 0; k < r.categories.size(); ++k) {
    std::vector<double> v;
    for (const auto& t : trials) v.push_back(k == 0 ? t.average : t.per_class[k - 1]);
    double sum = 0.0;
    for (double x : v) sum += x;
    const double mean = sum / static_cast<double>(v.size());
    double sq = 0.0;
    for (double x : v) sq += (x - mean) * (x - mean);
    const auto& c = r.categories[k];
    err = std::max({err, std::fabs(c.mean - mean), std::fabs(c.std - std::sqrt(sq / static_cast<double>(v.size()))),
                    std::fabs(c.mean_drop - (c.fp - c.mean))});
  }
  std::vector<TrialResult> shuffled = trials;
  for (std::size_t i = shuffled.size(); i > 1; --i) std::swap(shuffled[i - 1], shuffled[rng.index(i)]);
  const bool order_free = to_json(aggregate(fp, shuffled)) == to_json(r);
  const BoxplotStats b = boxplot_stats({1, 2, 3, 4, 5, 6, 7, 8, 9});
  const bool box = b.q1 == 2.5 && b.median == 5.0 && b.q3 == 7.5 && b.outliers.empty();
  report("P10", err <= 1e-12 && order_free && box,
         fmt("identity max err %.2e, order-free %s, [1..9] box %g/%g/%g", err, order_free ? "yes" : "no", b.q1,
             b.median, b.q3));
}

}  // namespace

int main() {
  p1_quantizer_contract();
  p2_search_oracle();
  p3_metric_formulas();
  p4_determinism();

  const ReferenceWorkload ref = build_reference(SyntheticSpec{}, 0, TrainConfig{});
  const Suite suite{ref};
  std::printf("reference workload: FP average %.4f\n", ref.fp_accuracy.average);

  const auto t5 = std::chrono::steady_clock::now();
  const ReliabilityReport w8 = suite.run(MetricKind::MSE, 8);
  const ReliabilityReport w6 = suite.run(MetricKind::MSE, 6);
  const ReliabilityReport w4 = suite.run(MetricKind::MSE, 4);
  const double secs5 = seconds_since(t5);
  const double fp = ref.fp_accuracy.average;
  report("P5",
         fp >= w8.average().mean && w8.average().mean >= w6.average().mean && w6.average().mean >= w4.average().mean &&
             w8.average().std <= w4.average().std && secs5 < 300.0,
         fmt("mean FP %.4f W8A8 %.4f W6A6 %.4f W4A4 %.4f; std W8A8 %.4f W4A4 %.4f; %.0f s", fp, w8.average().mean,
             w6.average().mean, w4.average().mean, w8.average().std, w4.average().std, secs5));

  const ReliabilityReport mm = suite.run(MetricKind::MinMax, 4);
  report("P6", w4.average().mean >= mm.average().mean && mean_class_std(mm) >= mean_class_std(w4),
         fmt("W4A4 mean MSE %.4f MinMax %.4f; mean class std MinMax %.4f MSE %.4f", w4.average().mean,
             mm.average().mean, mean_class_std(mm), mean_class_std(w4)));

  std::size_t above = 0;
  for (std::size_t c = 0; c < w4.class_count(); ++c) above += w4.cls(c).std > w4.average().std ? 1 : 0;
  report("P7", above >= 7,
         fmt("%zu of %zu classes have std above the Average std %.4f", above, w4.class_count(), w4.average().std));

  const ReliabilityReport noisy = suite.run(MetricKind::MSE, 4, 256, 0.5);
  report("P8", noisy.average().mean <= w4.average().mean,
         fmt("W4A4 MSE mean at 50%% noise %.4f, clean %.4f", noisy.average().mean, w4.average().mean));

  const ReliabilityReport one = suite.run(MetricKind::MSE, 4, 1);
  const ReliabilityReport thirty_two = suite.run(MetricKind::MSE, 4, 32);
  report("P9", thirty_two.average().std <= one.average().std,
         fmt("std(Average) size 32 %.4f, size 1 %.4f", thirty_two.average().std, one.average().std));

  p10_harness_algebra();

  std::printf("%d criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
