#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "ptqrel/calib_set.hpp"
#include "ptqrel/calibrator.hpp"
#include "ptqrel/engine.hpp"
#include "ptqrel/error.hpp"
#include "ptqrel/format.hpp"
#include "ptqrel/model.hpp"
#include "ptqrel/quantizer.hpp"

namespace ptqrel {

// Everything that defines one trial except its seed.
struct TrialSpec {
  CalibSpec calib;
  MetricKind metric = MetricKind::MSE;
  int weight_bits = 8;
  int act_bits = 8;
  SearchConfig search;
  bool quantize = true;  // false: full-precision passthrough
};

struct TrialResult {
  std::uint64_t seed = 0;
  std::vector<double> per_class;
  double average = 0.0;
  std::string config_digest;

  bool operator==(const TrialResult&) const = default;
};

inline void validate(const TrialSpec& spec) {
  validate(spec.calib);
  if (spec.quantize && (!supported_bitwidth(spec.weight_bits) || !supported_bitwidth(spec.act_bits))) {
    throw Error(ErrorKind::InvalidArgument, "bit-widths must lie in [2, 8]");
  }
}

// Build the calibration set for `seed`, calibrate, evaluate on the test split.
inline TrialResult run_trial(const ModelGraph& model, const LabeledDataset& train,
                             const LabeledDataset& test, const TrialSpec& spec, std::uint64_t seed) {
  validate(spec);
  TrialResult r;
  r.seed = seed;
  try {
    PerClassAccuracy acc;
    if (spec.quantize) {
      CalibSpec calib_spec = spec.calib;
      calib_spec.seed = seed;
      const LabeledDataset calib = build_calibration_set(train, calib_spec);
      const QuantConfig config = calibrate_network(model, calib, spec.metric, spec.weight_bits,
                                                   spec.act_bits, spec.search);
      r.config_digest = config_digest(config);
      acc = evaluate(model, test, &config);
    } else {
      r.config_digest = "full-precision";
      acc = evaluate(model, test);
    }
    r.per_class = std::move(acc.per_class);
    r.average = acc.average;
  } catch (const Error& e) {
    throw Error(e.kind(), "trial seed " + std::to_string(seed) + ": " + e.what());
  }
  return r;
}

struct BoxplotStats {
  double q1 = 0.0, median = 0.0, q3 = 0.0;
  double lo_whisker = 0.0, hi_whisker = 0.0;
  std::vector<double> outliers;
};

namespace detail {

inline double sorted_median(std::span<const double> v) {
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : (v[n / 2 - 1] + v[n / 2]) / 2.0;
}

}  // namespace detail

// Tukey hinges: quartiles are medians of the lower and upper halves, the
// overall median excluded from both halves when n is odd. Whiskers reach the
// most extreme samples within 1.5 IQR of the hinges.
inline BoxplotStats boxplot_stats(std::vector<double> samples) {
  if (samples.empty()) throw Error(ErrorKind::EmptySamples, "box plot of no samples");
  std::sort(samples.begin(), samples.end());
  const std::size_t n = samples.size();
  BoxplotStats b;
  b.median = detail::sorted_median(samples);
  if (n == 1) {
    b.q1 = b.q3 = b.median;
  } else {
    const std::size_t half = n / 2;
    b.q1 = detail::sorted_median(std::span(samples).first(half));
    b.q3 = detail::sorted_median(std::span(samples).last(half));
  }
  const double iqr = b.q3 - b.q1;
  const double lo_fence = b.q1 - 1.5 * iqr, hi_fence = b.q3 + 1.5 * iqr;
  b.lo_whisker = b.q1;
  b.hi_whisker = b.q3;
  for (double v : samples) {
    if (v < lo_fence || v > hi_fence) {
      b.outliers.push_back(v);
    } else {
      b.lo_whisker = std::min(b.lo_whisker, v);
      b.hi_whisker = std::max(b.hi_whisker, v);
    }
  }
  return b;
}

struct CategoryStats {
  std::string name;  // "Average" or "Class <c>"
  double fp = 0.0;
  double mean = 0.0;
  double std = 0.0;  // population
  double mean_drop = 0.0;
  BoxplotStats drop;
};

struct ReliabilityReport {
  nlohmann::json config = nlohmann::json::object();
  std::size_t trial_count = 0;
  PerClassAccuracy fp;
  std::vector<CategoryStats> categories;  // Average first, then Class 0..C-1
  std::vector<TrialResult> trials;        // sorted by seed

  const CategoryStats& average() const { return categories.front(); }
  const CategoryStats& cls(std::size_t c) const { return categories.at(c + 1); }
  std::size_t class_count() const noexcept { return categories.empty() ? 0 : categories.size() - 1; }
};

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;
};

// Sequential sum in the given order; population standard deviation.
inline MeanStd mean_std(std::span<const double> values) {
  const auto n = static_cast<double>(values.size());
  double sum = 0.0;
  for (double v : values) sum += v;
  const double mean = sum / n;
  double sq = 0.0;
  for (double v : values) sq += (v - mean) * (v - mean);
  return {mean, std::sqrt(sq / n)};
}

// Aggregation is order-free: trials are sorted by seed before any sum.
inline ReliabilityReport aggregate(const PerClassAccuracy& fp, std::vector<TrialResult> trials,
                                   nlohmann::json config = nlohmann::json::object()) {
  if (trials.empty()) throw Error(ErrorKind::EmptySamples, "no trials to aggregate");
  std::sort(trials.begin(), trials.end(),
            [](const TrialResult& a, const TrialResult& b) { return a.seed < b.seed; });
  const std::size_t classes = fp.per_class.size();
  for (const auto& t : trials) {
    if (t.per_class.size() != classes) {
      throw Error(ErrorKind::ShapeMismatch, "trial class count differs from baseline");
    }
  }
  ReliabilityReport report;
  report.config = std::move(config);
  report.trial_count = trials.size();
  report.fp = fp;

  const auto category = [&](std::string name, double fp_value, auto&& pick) {
    std::vector<double> acc, drop;
    for (const auto& t : trials) {
      acc.push_back(pick(t));
      drop.push_back(fp_value - pick(t));
    }
    const MeanStd ms = mean_std(acc);
    CategoryStats s{std::move(name), fp_value, ms.mean, ms.std, mean_std(drop).mean,
                    boxplot_stats(drop)};
    report.categories.push_back(std::move(s));
  };
  category("Average", fp.average, [](const TrialResult& t) { return t.average; });
  for (std::size_t c = 0; c < classes; ++c) {
    category("Class " + std::to_string(c), fp.per_class[c],
             [c](const TrialResult& t) { return t.per_class[c]; });
  }
  report.trials = std::move(trials);
  return report;
}

// Trials use seeds base_seed .. base_seed + trial_count - 1, spread over
// `workers` threads. The first failure stops further dispatch and is rethrown
// with the number of trials that completed.
inline ReliabilityReport run_benchmark(const ModelGraph& model, const LabeledDataset& train,
                                       const LabeledDataset& test, const TrialSpec& spec,
                                       std::size_t trial_count, std::uint64_t base_seed,
                                       std::size_t workers = 1,
                                       nlohmann::json config = nlohmann::json::object()) {
  if (trial_count == 0) throw Error(ErrorKind::InvalidArgument, "trial_count must be >= 1");
  validate(spec);
  const PerClassAccuracy fp = evaluate(model, test);
  std::vector<std::optional<TrialResult>> results(trial_count);
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::mutex error_mutex;
  std::optional<Error> first_error;

  const auto work = [&] {
    while (!failed.load()) {
      const std::size_t i = next.fetch_add(1);
      if (i >= trial_count) return;
      try {
        results[i] = run_trial(model, train, test, spec, base_seed + i);
      } catch (const Error& e) {
        std::lock_guard lock(error_mutex);
        if (!first_error) first_error = e;
        failed = true;
      }
    }
  };
  const std::size_t width = std::clamp<std::size_t>(workers, 1, trial_count);
  if (width == 1) {
    work();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < width; ++w) pool.emplace_back(work);
  }

  std::vector<TrialResult> done;
  for (auto& r : results) {
    if (r) done.push_back(std::move(*r));
  }
  if (first_error) {
    throw Error(ErrorKind::TrialFailed, std::string(first_error->what()) + " (" +
                                            std::to_string(done.size()) + " of " +
                                            std::to_string(trial_count) + " trials completed)");
  }
  return aggregate(fp, std::move(done), std::move(config));
}

struct WorstGroup {
  std::size_t class_id = 0;
  double mean_accuracy = 0.0;
  double mean_drop = 0.0;
};

// Lowest mean accuracy; ties go to the larger mean drop, then the lower index.
inline WorstGroup worst_group(const ReliabilityReport& report) {
  if (report.class_count() == 0) throw Error(ErrorKind::EmptySamples, "report has no classes");
  std::size_t best = 0;
  for (std::size_t c = 1; c < report.class_count(); ++c) {
    const auto& a = report.cls(c);
    const auto& b = report.cls(best);
    if (a.mean < b.mean || (a.mean == b.mean && a.mean_drop > b.mean_drop)) best = c;
  }
  return {best, report.cls(best).mean, report.cls(best).mean_drop};
}

// ---- serialization -------------------------------------------------------

inline nlohmann::json to_json(const BoxplotStats& b) {
  return {{"q1", b.q1}, {"median", b.median}, {"q3", b.q3},
          {"lo_whisker", b.lo_whisker}, {"hi_whisker", b.hi_whisker}, {"outliers", b.outliers}};
}

inline BoxplotStats boxplot_from_json(const nlohmann::json& j) {
  return {j.at("q1").get<double>(), j.at("median").get<double>(), j.at("q3").get<double>(),
          j.at("lo_whisker").get<double>(), j.at("hi_whisker").get<double>(),
          j.at("outliers").get<std::vector<double>>()};
}

// Canonical form: object keys sorted, doubles in shortest round-trip form.
inline nlohmann::json to_json(const ReliabilityReport& r) {
  nlohmann::json cats = nlohmann::json::array();
  for (const auto& c : r.categories) {
    cats.push_back({{"name", c.name}, {"fp", c.fp}, {"mean", c.mean}, {"std", c.std},
                    {"mean_drop", c.mean_drop}, {"drop", to_json(c.drop)}});
  }
  nlohmann::json trials = nlohmann::json::array();
  for (const auto& t : r.trials) {
    trials.push_back({{"seed", t.seed}, {"average", t.average}, {"per_class", t.per_class},
                      {"config_digest", t.config_digest}});
  }
  nlohmann::json j{{"config", r.config},
                   {"trial_count", r.trial_count},
                   {"fp", {{"average", r.fp.average}, {"per_class", r.fp.per_class},
                           {"correct", r.fp.correct}, {"total", r.fp.total}}},
                   {"categories", std::move(cats)},
                   {"trials", std::move(trials)}};
  if (r.class_count()) {
    const WorstGroup w = worst_group(r);
    j["worst_group"] = {{"class", w.class_id}, {"mean_accuracy", w.mean_accuracy},
                        {"mean_drop", w.mean_drop}};
  }
  return j;
}

inline ReliabilityReport report_from_json(const nlohmann::json& j) {
  try {
    ReliabilityReport r;
    r.config = j.at("config");
    r.trial_count = j.at("trial_count").get<std::size_t>();
    const auto& fp = j.at("fp");
    r.fp = {fp.at("per_class").get<std::vector<double>>(), fp.at("average").get<double>(),
            fp.at("correct").get<std::vector<std::size_t>>(),
            fp.at("total").get<std::vector<std::size_t>>()};
    for (const auto& c : j.at("categories")) {
      r.categories.push_back({c.at("name").get<std::string>(), c.at("fp").get<double>(),
                              c.at("mean").get<double>(), c.at("std").get<double>(),
                              c.at("mean_drop").get<double>(), boxplot_from_json(c.at("drop"))});
    }
    for (const auto& t : j.at("trials")) {
      r.trials.push_back({t.at("seed").get<std::uint64_t>(), t.at("per_class").get<std::vector<double>>(),
                          t.at("average").get<double>(), t.at("config_digest").get<std::string>()});
    }
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::InvalidArgument, std::string("malformed report: ") + e.what());
  }
}

inline std::string percent_cell(double fraction) { return format_fixed(100.0 * fraction, 1); }

// Column label such as "W4A4 MSE" derived from the echoed config.
inline std::string report_label(const ReliabilityReport& r) {
  const auto& c = r.config;
  if (!c.contains("quant")) return "Quantized";
  const auto& q = c.at("quant");
  if (!q.value("enabled", true)) return "FP32";
  std::string metric = q.value("metric", std::string("?"));
  std::transform(metric.begin(), metric.end(), metric.begin(), ::toupper);
  if (metric == "MINMAX") metric = "MinMax";
  if (metric == "COSINE") metric = "Cosine";
  return "W" + std::to_string(q.value("wbits", 0)) + "A" + std::to_string(q.value("abits", 0)) +
         " " + metric;
}

// Rows Average, Class 0..C-1; the FP column from the first report, then one
// "mean±std" column (percent, one decimal) per report.
inline std::string report_csv(std::span<const ReliabilityReport> reports,
                              std::span<const std::string> labels = {}) {
  if (reports.empty()) throw Error(ErrorKind::InvalidArgument, "no reports to render");
  std::string out = "Category,FP";
  for (std::size_t k = 0; k < reports.size(); ++k) {
    out += "," + (k < labels.size() ? labels[k] : report_label(reports[k]));
  }
  out += "\n";
  for (std::size_t row = 0; row < reports[0].categories.size(); ++row) {
    const auto& first = reports[0].categories[row];
    out += first.name + "," + percent_cell(first.fp);
    for (const auto& r : reports) {
      const auto& c = r.categories.at(row);
      out += "," + percent_cell(c.mean) + "\xC2\xB1" + percent_cell(c.std);
    }
    out += "\n";
  }
  return out;
}

// Accuracy-drop box plot per category, in percentage points (4 decimals).
inline std::string boxplot_csv(const ReliabilityReport& r) {
  const auto pp = [](double v) { return format_fixed(100.0 * v, 4); };
  std::string out = "category,mean_drop,q1,median,q3,lo_whisker,hi_whisker,outliers\n";
  for (const auto& c : r.categories) {
    out += c.name + "," + pp(c.mean_drop) + "," + pp(c.drop.q1) + "," + pp(c.drop.median) + "," +
           pp(c.drop.q3) + "," + pp(c.drop.lo_whisker) + "," + pp(c.drop.hi_whisker) + ",";
    for (std::size_t k = 0; k < c.drop.outliers.size(); ++k) {
      if (k) out += ";";
      out += pp(c.drop.outliers[k]);
    }
    out += "\n";
  }
  return out;
}

}  // namespace ptqrel
