#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <toml.hpp>

#include "ptqrel/archive.hpp"
#include "ptqrel/calib_set.hpp"
#include "ptqrel/calibrator.hpp"
#include "ptqrel/engine.hpp"
#include "ptqrel/error.hpp"
#include "ptqrel/harness.hpp"
#include "ptqrel/hash.hpp"
#include "ptqrel/quantizer.hpp"
#include "ptqrel/reference.hpp"

namespace ptqrel::cli {

inline constexpr std::string_view kToolName = "ptqbench";
inline constexpr std::string_view kToolVersion = "0.1.0";
inline constexpr std::string_view kReference = "reference";

// Malformed flags or configuration. Maps to exit code 1; everything else that
// escapes a subcommand maps to 2.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::string_view kConfigSchema =
    R"(Experiment config (TOML). Every key is optional; flags override the file.

  [model]      source     = "reference" | "<model archive path>"
  [data]       train      = "reference" | "<dataset archive path>"
               test       = "reference" | "<dataset archive path>"
  [reference]  data_seed  = 0          # synthetic data seed
               train_seed = 0          # MLP init/shuffle seed
  [quant]      enabled    = true
               metric     = "minmax" | "mse" | "cosine" | "kl"
               wbits      = 2..8
               abits      = 2..8
  [calib]      size       = 256
               noise      = 0.0        # fraction replaced by uniform noise images
               bias_class = <class id> # omit for uniform sampling
               bias_p     = 0.5
  [search]     candidates = 100
               kl_bins    = 2048
  [run]        trials     = 50
               seed       = 0          # base seed; trial i uses seed + i
               workers    = 1
               out        = "ptqbench-out"

Relative paths in the file resolve against the file's directory.
)";

struct ExperimentConfig {
  std::string model = std::string(kReference);
  std::string train = std::string(kReference);
  std::string test = std::string(kReference);
  std::uint64_t data_seed = 0;
  std::uint64_t train_seed = 0;
  bool quantize = true;
  MetricKind metric = MetricKind::MSE;
  int weight_bits = 8;
  int act_bits = 8;
  CalibSpec calib;
  SearchConfig search;
  std::size_t trials = 50;
  std::uint64_t seed = 0;
  std::size_t workers = 1;
  std::string out = "ptqbench-out";
  std::string quant_config;  // evaluate only: stored QuantConfig to apply
};

inline void validate(const ExperimentConfig& c) {
  if (c.quantize && (!supported_bitwidth(c.weight_bits) || !supported_bitwidth(c.act_bits))) {
    throw UsageError("wbits and abits must lie in [" + std::to_string(kMinBits) + ", " +
                     std::to_string(kMaxBits) + "]");
  }
  if (c.trials == 0) throw UsageError("trials must be >= 1");
  if (c.workers == 0) throw UsageError("workers must be >= 1");
  if (c.search.candidate_count == 0 || c.search.kl_bins == 0) {
    throw UsageError("search candidates and kl_bins must be >= 1");
  }
  if (c.out.empty()) throw UsageError("output directory must not be empty");
  try {
    validate(c.calib);
  } catch (const Error& e) {
    throw UsageError(e.what());
  }
}

namespace detail {

inline std::string resolve_path(const std::string& value, const std::filesystem::path& base) {
  if (value == kReference || value.empty()) return value;
  const std::filesystem::path p(value);
  return p.is_absolute() ? value : (base / p).lexically_normal().string();
}

template <class T>
T toml_value(const toml::node& node, std::string_view key) {
  if constexpr (std::is_same_v<T, std::string>) {
    if (auto v = node.value<std::string>()) return *v;
  } else if constexpr (std::is_same_v<T, bool>) {
    if (auto v = node.value_exact<bool>()) return *v;
  } else if constexpr (std::is_floating_point_v<T>) {
    if (auto v = node.value<double>()) return *v;
  } else {
    if (auto v = node.value_exact<std::int64_t>()) {
      if (*v < 0) throw UsageError("config key '" + std::string(key) + "' must be >= 0");
      return static_cast<T>(*v);
    }
  }
  throw UsageError("config key '" + std::string(key) + "' has the wrong type");
}

}  // namespace detail

// Applies a parsed TOML document; unknown tables or keys are usage errors.
inline void apply_toml(ExperimentConfig& c, const toml::table& doc,
                       const std::filesystem::path& base = {}) {
  using detail::toml_value;
  std::optional<int> bias_class;
  double bias_p = c.calib.bias ? c.calib.bias->probability : 0.5;
  if (c.calib.bias) bias_class = c.calib.bias->class_id;
  for (auto&& [section_key, section_node] : doc) {
    const std::string section(section_key.str());
    const toml::table* table = section_node.as_table();
    if (!table) throw UsageError("config entry '" + section + "' must be a table");
    for (auto&& [k, node] : *table) {
      const std::string key = section + "." + std::string(k.str());
      if (key == "model.source") c.model = detail::resolve_path(toml_value<std::string>(node, key), base);
      else if (key == "data.train") c.train = detail::resolve_path(toml_value<std::string>(node, key), base);
      else if (key == "data.test") c.test = detail::resolve_path(toml_value<std::string>(node, key), base);
      else if (key == "reference.data_seed") c.data_seed = toml_value<std::uint64_t>(node, key);
      else if (key == "reference.train_seed") c.train_seed = toml_value<std::uint64_t>(node, key);
      else if (key == "quant.enabled") c.quantize = toml_value<bool>(node, key);
      else if (key == "quant.metric") {
        try {
          c.metric = metric_from_string(toml_value<std::string>(node, key));
        } catch (const Error& e) {
          throw UsageError(e.what());
        }
      }
      else if (key == "quant.wbits") c.weight_bits = toml_value<int>(node, key);
      else if (key == "quant.abits") c.act_bits = toml_value<int>(node, key);
      else if (key == "calib.size") c.calib.size = toml_value<std::size_t>(node, key);
      else if (key == "calib.noise") c.calib.noise_fraction = toml_value<double>(node, key);
      else if (key == "calib.bias_class") bias_class = toml_value<int>(node, key);
      else if (key == "calib.bias_p") bias_p = toml_value<double>(node, key);
      else if (key == "search.candidates") c.search.candidate_count = toml_value<std::size_t>(node, key);
      else if (key == "search.kl_bins") c.search.kl_bins = toml_value<std::size_t>(node, key);
      else if (key == "run.trials") c.trials = toml_value<std::size_t>(node, key);
      else if (key == "run.seed") c.seed = toml_value<std::uint64_t>(node, key);
      else if (key == "run.workers") c.workers = toml_value<std::size_t>(node, key);
      else if (key == "run.out") c.out = detail::resolve_path(toml_value<std::string>(node, key), base);
      else throw UsageError("unknown config key '" + key + "'");
    }
  }
  if (bias_class) c.calib.bias = ClassBias{*bias_class, bias_p};
}

inline ExperimentConfig load_config_file(const std::filesystem::path& path) {
  ExperimentConfig c;
  toml::table doc;
  try {
    doc = toml::parse_file(path.string());
  } catch (const toml::parse_error& e) {
    std::ostringstream msg;
    msg << path.string() << ": " << e.description() << " (line " << e.source().begin.line << ")";
    throw UsageError(msg.str());
  }
  apply_toml(c, doc, path.parent_path());
  return c;
}

// Experiment echo. `with_environment` adds the output directory and worker
// count, which never influence results and stay out of report.json.
inline nlohmann::json to_json(const ExperimentConfig& c, bool with_environment) {
  nlohmann::json bias = nullptr;
  if (c.calib.bias) bias = {{"class", c.calib.bias->class_id}, {"p", c.calib.bias->probability}};
  nlohmann::json j{
      {"model", {{"source", c.model}}},
      {"data", {{"train", c.train}, {"test", c.test}}},
      {"reference", {{"data_seed", c.data_seed}, {"train_seed", c.train_seed}}},
      {"quant", {{"enabled", c.quantize}, {"metric", std::string(to_string(c.metric))},
                 {"wbits", c.weight_bits}, {"abits", c.act_bits}}},
      {"calib", {{"size", c.calib.size}, {"noise", c.calib.noise_fraction}, {"bias", bias}}},
      {"search", {{"candidates", c.search.candidate_count}, {"kl_bins", c.search.kl_bins}}},
      {"run", {{"trials", c.trials}, {"seed", c.seed}}}};
  if (!c.quant_config.empty()) j["quant"]["config_file"] = c.quant_config;
  if (with_environment) {
    j["run"]["workers"] = c.workers;
    j["run"]["out"] = c.out;
  }
  return j;
}

inline ExperimentConfig config_from_json(const nlohmann::json& j) {
  try {
    ExperimentConfig c;
    c.model = j.at("model").at("source").get<std::string>();
    c.train = j.at("data").at("train").get<std::string>();
    c.test = j.at("data").at("test").get<std::string>();
    c.data_seed = j.at("reference").at("data_seed").get<std::uint64_t>();
    c.train_seed = j.at("reference").at("train_seed").get<std::uint64_t>();
    const auto& q = j.at("quant");
    c.quantize = q.at("enabled").get<bool>();
    c.metric = metric_from_string(q.at("metric").get<std::string>());
    c.weight_bits = q.at("wbits").get<int>();
    c.act_bits = q.at("abits").get<int>();
    c.quant_config = q.value("config_file", std::string());
    const auto& cal = j.at("calib");
    c.calib.size = cal.at("size").get<std::size_t>();
    c.calib.noise_fraction = cal.at("noise").get<double>();
    if (!cal.at("bias").is_null()) {
      c.calib.bias = ClassBias{cal["bias"].at("class").get<int>(), cal["bias"].at("p").get<double>()};
    }
    c.search.candidate_count = j.at("search").at("candidates").get<std::size_t>();
    c.search.kl_bins = j.at("search").at("kl_bins").get<std::size_t>();
    const auto& run = j.at("run");
    c.trials = run.at("trials").get<std::size_t>();
    c.seed = run.at("seed").get<std::uint64_t>();
    c.workers = run.value("workers", std::size_t{1});
    c.out = run.value("out", c.out);
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(std::string("malformed experiment config: ") + e.what());
  }
}

inline TrialSpec trial_spec(const ExperimentConfig& c) {
  TrialSpec t;
  t.calib = c.calib;
  t.metric = c.metric;
  t.weight_bits = c.weight_bits;
  t.act_bits = c.act_bits;
  t.search = c.search;
  t.quantize = c.quantize;
  return t;
}

struct Workload {
  ModelGraph model;
  LabeledDataset train;
  LabeledDataset test;
};

inline std::string archive_digest(const ModelGraph& m) { return hex64(fnv1a64(encode_archive(m))); }
inline std::string archive_digest(const LabeledDataset& d) { return hex64(fnv1a64(encode_archive(d))); }

inline LabeledDataset load_split(const std::string& path, Split expected) {
  LabeledDataset d = load_dataset(path);
  if (d.split != expected) {
    throw Error(ErrorKind::InvalidArgument, path + " holds the " + std::string(to_string(d.split)) +
                                                " split, expected " + std::string(to_string(expected)));
  }
  return d;
}

// The reference workload is trained at most once even when several sources
// point at it.
inline Workload load_workload(const ExperimentConfig& c, bool need_train = true) {
  std::optional<ReferenceWorkload> ref;
  const auto reference = [&]() -> ReferenceWorkload& {
    if (!ref) {
      TrainConfig tc;
      tc.seed = c.train_seed;
      ref = build_reference(SyntheticSpec{}, c.data_seed, tc);
    }
    return *ref;
  };
  Workload w;
  w.model = c.model == kReference ? reference().model : load_model(c.model);
  if (need_train) w.train = c.train == kReference ? reference().train : load_split(c.train, Split::Train);
  w.test = c.test == kReference ? reference().test : load_split(c.test, Split::Test);
  return w;
}

// ---- output files ---------------------------------------------------------

class OutputDir {
 public:
  explicit OutputDir(std::filesystem::path dir) : dir_(std::move(dir)) {
    std::error_code ec;
    std::filesystem::create_directories(dir_, ec);
    if (ec) throw Error(ErrorKind::IoFailure, "cannot create " + dir_.string() + ": " + ec.message());
  }

  void write(const std::string& name, std::span<const std::uint8_t> bytes) {
    const auto path = dir_ / name;
    std::ofstream f(path, std::ios::binary);
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw Error(ErrorKind::IoFailure, "cannot write " + path.string());
    digests_[name] = hex64(fnv1a64(bytes));
  }

  void write(const std::string& name, std::string_view text) {
    write(name, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
  }

  // manifest.json: command, config echo, input digests, output digests.
  void write_manifest(std::string_view command, nlohmann::json config, nlohmann::json inputs) {
    const nlohmann::json manifest{{"tool", kToolName},   {"version", kToolVersion},
                                  {"command", command},  {"config", std::move(config)},
                                  {"inputs", std::move(inputs)}, {"outputs", digests_}};
    const std::string text = manifest.dump(2) + "\n";
    std::ofstream f(dir_ / "manifest.json", std::ios::binary);
    f << text;
    if (!f) throw Error(ErrorKind::IoFailure, "cannot write " + (dir_ / "manifest.json").string());
  }

  const std::map<std::string, std::string>& digests() const noexcept { return digests_; }
  const std::filesystem::path& path() const noexcept { return dir_; }

 private:
  std::filesystem::path dir_;
  std::map<std::string, std::string> digests_;
};

inline nlohmann::json read_json_file(const std::string& path) {
  const auto bytes = read_file_bytes(path);
  try {
    return nlohmann::json::parse(bytes.begin(), bytes.end());
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::InvalidArgument, path + ": " + e.what());
  }
}

inline std::string file_digest(const std::string& path) { return hex64(fnv1a64(read_file_bytes(path))); }

// ---- command line -----------------------------------------------------------

// Flags shared by the experiment subcommands; unset flags leave the config
// file (or the default) in force.
struct Overrides {
  std::string config_file;
  std::string manifest;
  std::optional<std::string> model, train, test, out, metric;
  std::optional<std::uint64_t> data_seed, train_seed, seed;
  std::optional<std::size_t> trials, calib_size, workers;
  std::optional<int> wbits, abits, bias_class;
  std::optional<double> noise, bias_p;
  bool no_quant = false;
};

inline void add_experiment_options(CLI::App* app, Overrides& o) {
  app->add_option("--config", o.config_file, "TOML experiment config")->check(CLI::ExistingFile);
  app->add_option("--manifest", o.manifest, "re-run the command recorded in a manifest.json")
      ->check(CLI::ExistingFile);
  app->add_option("--model", o.model, "model archive path or 'reference'");
  app->add_option("--train", o.train, "training-split dataset archive or 'reference'");
  app->add_option("--test", o.test, "test-split dataset archive or 'reference'");
  app->add_option("--data-seed", o.data_seed, "reference workload data seed");
  app->add_option("--train-seed", o.train_seed, "reference workload training seed");
  app->add_option("--metric", o.metric, "minmax, mse, cosine or kl")
      ->check(CLI::IsMember({"minmax", "mse", "cosine", "kl"}));
  app->add_option("--wbits", o.wbits, "weight bit-width");
  app->add_option("--abits", o.abits, "activation bit-width");
  app->add_flag("--no-quant", o.no_quant, "full-precision passthrough");
  app->add_option("--calib-size", o.calib_size, "calibration set size");
  app->add_option("--noise", o.noise, "fraction of calibration images replaced by noise");
  app->add_option("--bias-class", o.bias_class, "over-represented class");
  app->add_option("--bias-p", o.bias_p, "probability of drawing the biased class");
  app->add_option("--trials", o.trials, "number of seeded trials");
  app->add_option("--seed", o.seed, "base seed");
  app->add_option("--workers", o.workers, "worker threads");
  app->add_option("--out", o.out, "output directory");
}

inline bool only_environment_flags(const Overrides& o) {
  return o.config_file.empty() && !o.model && !o.train && !o.test && !o.metric && !o.data_seed &&
         !o.train_seed && !o.seed && !o.trials && !o.calib_size && !o.wbits && !o.abits &&
         !o.bias_class && !o.noise && !o.bias_p && !o.no_quant;
}

struct Manifest {
  std::string command;
  nlohmann::json config;
  nlohmann::json inputs;
  nlohmann::json outputs;
};

inline Manifest load_manifest(const std::string& path, std::string_view command) {
  const nlohmann::json j = read_json_file(path);
  if (j.value("tool", std::string()) != kToolName) throw UsageError(path + " is not a " + std::string(kToolName) + " manifest");
  Manifest m{j.value("command", std::string()), j.value("config", nlohmann::json::object()),
             j.value("inputs", nlohmann::json::object()), j.value("outputs", nlohmann::json::object())};
  if (m.command != command) {
    throw UsageError(path + " records '" + m.command + "', not '" + std::string(command) + "'");
  }
  return m;
}

inline ExperimentConfig resolve(const Overrides& o, std::optional<Manifest>& manifest,
                                std::string_view command) {
  ExperimentConfig c;
  if (!o.manifest.empty()) {
    if (!only_environment_flags(o)) throw UsageError("--manifest combines only with --out and --workers");
    manifest = load_manifest(o.manifest, command);
    c = config_from_json(manifest->config);
  } else if (!o.config_file.empty()) {
    c = load_config_file(o.config_file);
  }
  if (o.model) c.model = *o.model;
  if (o.train) c.train = *o.train;
  if (o.test) c.test = *o.test;
  if (o.data_seed) c.data_seed = *o.data_seed;
  if (o.train_seed) c.train_seed = *o.train_seed;
  if (o.metric) c.metric = metric_from_string(*o.metric);
  if (o.wbits) c.weight_bits = *o.wbits;
  if (o.abits) c.act_bits = *o.abits;
  if (o.no_quant) c.quantize = false;
  if (o.calib_size) c.calib.size = *o.calib_size;
  if (o.noise) c.calib.noise_fraction = *o.noise;
  if (o.bias_class) c.calib.bias = ClassBias{*o.bias_class, o.bias_p.value_or(0.5)};
  else if (o.bias_p) {
    if (!c.calib.bias) throw UsageError("--bias-p needs a bias class");
    c.calib.bias->probability = *o.bias_p;
  }
  if (o.trials) c.trials = *o.trials;
  if (o.seed) c.seed = *o.seed;
  if (o.workers) c.workers = *o.workers;
  if (o.out) c.out = *o.out;
  validate(c);
  return c;
}

inline nlohmann::json workload_inputs(const Workload& w) {
  nlohmann::json j{{"model", archive_digest(w.model)}, {"test", archive_digest(w.test)}};
  // Evaluation without calibration never loads the training split.
  if (w.train.images.rank() > 0) j["train"] = archive_digest(w.train);
  return j;
}

inline void check_inputs(const std::optional<Manifest>& m, const nlohmann::json& inputs) {
  if (!m) return;
  for (const auto& [name, digest] : m->inputs.items()) {
    if (!inputs.contains(name) || inputs[name] != digest) {
      throw Error(ErrorKind::InvalidArgument, "input '" + name + "' differs from the manifest");
    }
  }
}

inline void check_outputs(const std::optional<Manifest>& m, const OutputDir& dir) {
  if (!m) return;
  for (const auto& [name, digest] : m->outputs.items()) {
    const auto it = dir.digests().find(name);
    if (it == dir.digests().end() || it->second != digest.get<std::string>()) {
      throw Error(ErrorKind::InvalidArgument, "output '" + name + "' does not reproduce the manifest");
    }
  }
}

inline nlohmann::json accuracy_json(const PerClassAccuracy& a) {
  return {{"average", a.average}, {"per_class", a.per_class}, {"correct", a.correct}, {"total", a.total}};
}

// ---- subcommands ------------------------------------------------------------

inline int run_train_reference(const Overrides& o, std::ostream& out) {
  std::optional<Manifest> manifest;
  ExperimentConfig c = resolve(o, manifest, "train-reference");
  TrainConfig tc;
  tc.seed = c.train_seed;
  const ReferenceWorkload ref = build_reference(SyntheticSpec{}, c.data_seed, tc);
  OutputDir dir(c.out);
  dir.write("model.ptqr", encode_archive(ref.model));
  dir.write("train.ptqr", encode_archive(ref.train));
  dir.write("test.ptqr", encode_archive(ref.test));
  dir.write_manifest("train-reference", to_json(c, true), nlohmann::json::object());
  check_outputs(manifest, dir);
  out << "fp_accuracy " << ref.model.metadata.at("reported_fp_accuracy") << "\n";
  return 0;
}

inline int run_calibrate(const Overrides& o, std::ostream& out) {
  std::optional<Manifest> manifest;
  const ExperimentConfig c = resolve(o, manifest, "calibrate");
  if (!c.quantize) throw UsageError("calibrate needs quantization enabled");
  const Workload w = load_workload(c);
  const nlohmann::json inputs = workload_inputs(w);
  check_inputs(manifest, inputs);
  CalibSpec calib = c.calib;
  calib.seed = c.seed;
  const QuantConfig q = calibrate_network(w.model, build_calibration_set(w.train, calib), c.metric,
                                          c.weight_bits, c.act_bits, c.search);
  OutputDir dir(c.out);
  dir.write("quant_config.json", to_json(q).dump(2) + "\n");
  dir.write_manifest("calibrate", to_json(c, true), inputs);
  check_outputs(manifest, dir);
  out << "config_digest " << config_digest(q) << "\n";
  return 0;
}

inline int run_evaluate(const Overrides& o, const std::string& quant_config, std::ostream& out) {
  std::optional<Manifest> manifest;
  ExperimentConfig c = resolve(o, manifest, "evaluate");
  if (!quant_config.empty()) c.quant_config = quant_config;
  const bool from_file = !c.quant_config.empty();
  const Workload w = load_workload(c, c.quantize && !from_file);
  nlohmann::json inputs = workload_inputs(w);
  if (!c.quantize || from_file) inputs.erase("train");
  if (from_file) inputs["quant_config"] = file_digest(c.quant_config);
  check_inputs(manifest, inputs);

  PerClassAccuracy acc;
  std::string digest = "full-precision";
  if (from_file) {
    QuantConfig q;
    try {
      q = quant_config_from_json(read_json_file(c.quant_config));
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorKind::InvalidArgument, c.quant_config + ": " + e.what());
    }
    digest = config_digest(q);
    acc = evaluate(w.model, w.test, &q);
  } else if (c.quantize) {
    CalibSpec calib = c.calib;
    calib.seed = c.seed;
    const QuantConfig q = calibrate_network(w.model, build_calibration_set(w.train, calib), c.metric,
                                            c.weight_bits, c.act_bits, c.search);
    digest = config_digest(q);
    acc = evaluate(w.model, w.test, &q);
  } else {
    acc = evaluate(w.model, w.test);
  }
  nlohmann::json result = accuracy_json(acc);
  result["config_digest"] = digest;
  const std::string text = result.dump(2) + "\n";
  OutputDir dir(c.out);
  dir.write("accuracy.json", text);
  dir.write_manifest("evaluate", to_json(c, true), inputs);
  check_outputs(manifest, dir);
  out << text;
  return 0;
}

inline int run_bench(const Overrides& o, std::ostream& out) {
  std::optional<Manifest> manifest;
  const ExperimentConfig c = resolve(o, manifest, "bench");
  const Workload w = load_workload(c);
  const nlohmann::json inputs = workload_inputs(w);
  check_inputs(manifest, inputs);
  const ReliabilityReport report = run_benchmark(w.model, w.train, w.test, trial_spec(c), c.trials,
                                                 c.seed, c.workers, to_json(c, false));
  OutputDir dir(c.out);
  dir.write("report.json", to_json(report).dump(2) + "\n");
  dir.write("report.csv", report_csv(std::span(&report, 1)));
  dir.write("boxplot.csv", boxplot_csv(report));
  dir.write_manifest("bench", to_json(c, true), inputs);
  check_outputs(manifest, dir);
  const auto& avg = report.average();
  out << report_label(report) << ": Average " << percent_cell(avg.mean) << "\xC2\xB1"
      << percent_cell(avg.std) << " over " << report.trial_count << " trials (FP "
      << percent_cell(avg.fp) << ")\n";
  return 0;
}

inline int run_report(const std::vector<std::string>& inputs_in, const std::string& manifest_path,
                      std::optional<std::string> out_dir, std::ostream& out) {
  std::vector<std::string> paths = inputs_in;
  std::optional<Manifest> manifest;
  if (!manifest_path.empty()) {
    if (!paths.empty()) throw UsageError("--manifest replaces the report arguments");
    manifest = load_manifest(manifest_path, "report");
    try {
      paths = manifest->config.at("reports").get<std::vector<std::string>>();
      if (!out_dir) out_dir = manifest->config.at("out").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
      throw UsageError(std::string("malformed manifest: ") + e.what());
    }
  }
  if (paths.empty()) throw UsageError("report needs at least one report.json");
  std::vector<ReliabilityReport> reports;
  nlohmann::json inputs = nlohmann::json::object();
  for (std::size_t k = 0; k < paths.size(); ++k) {
    reports.push_back(report_from_json(read_json_file(paths[k])));
    inputs["report" + std::to_string(k)] = file_digest(paths[k]);
  }
  check_inputs(manifest, inputs);
  const std::string csv = report_csv(reports);
  if (!out_dir) {
    out << csv;
    return 0;
  }
  OutputDir dir(*out_dir);
  dir.write("report.csv", csv);
  if (reports.size() == 1) {
    dir.write("boxplot.csv", boxplot_csv(reports[0]));
  } else {
    for (std::size_t k = 0; k < reports.size(); ++k) {
      dir.write("boxplot-" + std::to_string(k) + ".csv", boxplot_csv(reports[k]));
    }
  }
  dir.write_manifest("report", {{"reports", paths}, {"out", *out_dir}}, inputs);
  check_outputs(manifest, dir);
  out << csv;
  return 0;
}

// Exit codes: 0 success, 1 usage error, 2 runtime error.
inline int cli_main(int argc, const char* const* argv, std::ostream& out = std::cout,
                    std::ostream& err = std::cerr) {
  CLI::App app{"Post-training quantization reliability benchmark", std::string(kToolName)};
  app.set_version_flag("--version", std::string(kToolVersion));
  app.require_subcommand(1);

  Overrides train_ref, calib, eval, bench;
  std::string quant_config;
  std::vector<std::string> report_inputs;
  std::string report_manifest;
  std::optional<std::string> report_out;

  auto* s_train = app.add_subcommand("train-reference", "train the built-in reference MLP and write its archives");
  s_train->add_option("--config", train_ref.config_file, "TOML experiment config")->check(CLI::ExistingFile);
  s_train->add_option("--manifest", train_ref.manifest, "re-run a recorded manifest.json")->check(CLI::ExistingFile);
  s_train->add_option("--data-seed", train_ref.data_seed, "synthetic data seed");
  s_train->add_option("--train-seed", train_ref.train_seed, "MLP training seed");
  s_train->add_option("--out", train_ref.out, "output directory");

  auto* s_calib = app.add_subcommand("calibrate", "calibrate one seed and write its QuantConfig");
  add_experiment_options(s_calib, calib);
  auto* s_eval = app.add_subcommand("evaluate", "FP or quantized per-class accuracy");
  add_experiment_options(s_eval, eval);
  s_eval->add_option("--quant-config", quant_config, "apply a stored QuantConfig JSON")
      ->check(CLI::ExistingFile);
  auto* s_bench = app.add_subcommand("bench", "run the seeded trials and write the reliability report");
  add_experiment_options(s_bench, bench);
  auto* s_report = app.add_subcommand("report", "render report.json files as CSV tables");
  s_report->add_option("reports", report_inputs, "report.json files, one column each")
      ->check(CLI::ExistingFile);
  s_report->add_option("--manifest", report_manifest, "re-run a recorded manifest.json")->check(CLI::ExistingFile);
  s_report->add_option("--out", report_out, "write report.csv and boxplot CSVs here");

  app.footer(std::string(kConfigSchema));

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForVersion&) {
    out << kToolVersion << "\n";
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << "\n\n" << app.help();
    return 1;
  }

  try {
    if (s_train->parsed()) return run_train_reference(train_ref, out);
    if (s_calib->parsed()) return run_calibrate(calib, out);
    if (s_eval->parsed()) return run_evaluate(eval, quant_config, out);
    if (s_bench->parsed()) return run_bench(bench, out);
    return run_report(report_inputs, report_manifest, report_out, out);
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n\n" << kConfigSchema;
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace ptqrel::cli
