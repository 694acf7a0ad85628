// Train the reference MLP, quantize it once at W4A4, then measure how much
// the result moves across ten calibration draws.

#include <cstdio>

#include "ptqrel/ptqrel.hpp"

using namespace ptqrel;

int main() {
  const ReferenceWorkload ref = build_reference(SyntheticSpec{}, 0, TrainConfig{});
  std::printf("FP32 accuracy: %.4f\n", ref.fp_accuracy.average);

  CalibSpec calib;
  calib.size = 256;
  calib.seed = 1;
  const LabeledDataset calib_set = build_calibration_set(ref.train, calib);
  const QuantConfig config = calibrate_network(ref.model, calib_set, MetricKind::MSE, 4, 4);
  std::printf("W4A4 MSE, one draw: %.4f (config %s)\n", evaluate(ref.model, ref.test, &config).average,
              config_digest(config).c_str());

  TrialSpec spec;
  spec.weight_bits = spec.act_bits = 4;
  const ReliabilityReport report = run_benchmark(ref.model, ref.train, ref.test, spec, 10, 0);
  const ReliabilityReport reports[] = {report};
  std::printf("\n%s\n%s", report_csv(reports).c_str(), boxplot_csv(report).c_str());
  const WorstGroup worst = worst_group(report);
  std::printf("\nworst class: %zu (mean accuracy %.4f, mean drop %.4f)\n", worst.class_id, worst.mean_accuracy,
              worst.mean_drop);
}
