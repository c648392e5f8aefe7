// resablate: train small residual networks, zero their kernels, report and prune.
//
// Exit codes: 0 success, 2 usage or validation error, 3 runtime or IO error.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "resablate/ablation.hpp"
#include "resablate/checkpoint.hpp"
#include "resablate/report.hpp"
#include "resablate/train.hpp"

using namespace resablate;
namespace fs = std::filesystem;

namespace {

constexpr int kUsage = 2;
constexpr int kRuntime = 3;

struct Failure {
  int code;
  std::string message;
};

std::string read_file(const fs::path& path, int code_if_missing) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Failure{code_if_missing, "cannot read " + path.string()};
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, const std::string& text) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw Failure{kRuntime, "cannot write " + path.string()};
    out << text;
    if (!out.flush()) throw Failure{kRuntime, "cannot write " + path.string()};
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw Failure{kRuntime, "cannot write " + path.string() + ": " + ec.message()};
}

struct DataFlags {
  std::optional<std::uint64_t> seed;
  std::size_t train_count = 2000;
  std::size_t test_count = 500;
  std::string cifar_dir;

  void attach(CLI::App* cmd) {
    cmd->add_option("--data-seed", seed, "Dataset seed (default: the model seed)");
    cmd->add_option("--train-count", train_count, "Training samples to synthesize")->capture_default_str();
    cmd->add_option("--test-count", test_count, "Evaluation samples to synthesize")->capture_default_str();
    cmd->add_option("--cifar-dir", cifar_dir, "Load CIFAR-10 binary batches from this directory instead");
  }

  DataOptions options(std::uint64_t model_seed) const {
    return {seed.value_or(model_seed), train_count, test_count, cifar_dir};
  }
};

DatasetPair datasets_for(const ResNetConfig& config, const DataOptions& options) {
  return make_datasets(config.task == Task::segment, config.num_classes, config.input_size, options);
}

Model load_model(const std::string& path) {
  try {
    return load_checkpoint(path);
  } catch (const std::exception& e) {
    throw Failure{kRuntime, e.what()};
  }
}

void print_summary(const ReportSet& reports) { std::cout << reports_to_text(reports); }

// ---- train ----

struct TrainFlags {
  std::string config_path;
  std::string out;
  std::string history;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> epochs, batch_size, decay_epoch;
  std::optional<float> lr, momentum, weight_decay;
  std::optional<std::string> task;
  bool quiet = false;
  DataFlags data;
};

template <typename T>
void take(const nlohmann::json& j, const char* key, T& dst) {
  if (j.contains(key)) dst = j.at(key).get<T>();
}

int cmd_train(const TrainFlags& f) {
  ResNetConfig config;
  Hyperparams hyper;
  DataFlags data = f.data;
  if (!f.config_path.empty()) {
    if (!fs::exists(f.config_path)) throw Failure{kUsage, "config file not found: " + f.config_path};
    const std::string text = read_file(f.config_path, kUsage);
    try {
      config = ResNetConfig::from_text(text);
      const nlohmann::json j = nlohmann::json::parse(text);
      if (j.contains("train")) {
        const nlohmann::json& t = j["train"];
        take(t, "epochs", hyper.epochs);
        take(t, "batch_size", hyper.batch_size);
        take(t, "lr", hyper.lr);
        take(t, "momentum", hyper.momentum);
        take(t, "weight_decay", hyper.weight_decay);
        take(t, "decay_epoch", hyper.decay_epoch);
        if (t.contains("lr_schedule")) {
          const std::string s = t["lr_schedule"].get<std::string>();
          if (s == "constant") hyper.lr_schedule = LrSchedule::constant;
          else if (s == "step_decay") hyper.lr_schedule = LrSchedule::step_decay;
          else throw ConfigError("unknown lr_schedule '" + s + "'");
        }
      }
      if (j.contains("data")) {
        const nlohmann::json& d = j["data"];
        if (d.contains("seed")) data.seed = d["seed"].get<std::uint64_t>();
        take(d, "train_count", data.train_count);
        take(d, "test_count", data.test_count);
        take(d, "cifar_dir", data.cifar_dir);
      }
    } catch (const ConfigError& e) {
      throw Failure{kUsage, f.config_path + ": " + e.what()};
    } catch (const nlohmann::json::exception& e) {
      throw Failure{kUsage, f.config_path + ": " + e.what()};
    }
  }
  if (f.task) {
    config.task = parse_task(*f.task);
    config.num_classes = config.task == Task::segment ? 1 : 10;
  }
  if (f.seed) config.seed = *f.seed;
  hyper.seed = config.seed;
  if (f.epochs) hyper.epochs = *f.epochs;
  if (f.batch_size) hyper.batch_size = *f.batch_size;
  if (f.decay_epoch) hyper.decay_epoch = *f.decay_epoch;
  if (f.lr) hyper.lr = *f.lr;
  if (f.momentum) hyper.momentum = *f.momentum;
  if (f.weight_decay) hyper.weight_decay = *f.weight_decay;
  config.validate();
  hyper.validate();

  const DatasetPair sets = datasets_for(config, data.options(config.seed));
  TrainResult result = train(build_model(config), sets.train, sets.test, hyper, [&](const EpochRecord& e) {
    if (!f.quiet) {
      std::printf("epoch %3zu  loss %.5f  test %.4f\n", e.epoch + 1, e.train_loss, e.test_metric);
      std::fflush(stdout);
    }
  });
  try {
    save_checkpoint(result.model, f.out);
  } catch (const std::exception& e) {
    throw Failure{kRuntime, e.what()};
  }
  const std::string history_path = f.history.empty() ? f.out + ".history.json" : f.history;
  write_file(history_path, emit_history(config, hyper, sets.train.descriptor, result.history));
  const double final_metric = result.history.empty() ? evaluate(result.model, sets.test) : result.history.back().test_metric;
  std::printf("final %s %.4f\ncheckpoint %s\nhistory %s\n",
              config.task == Task::classify ? "accuracy" : "dice", final_metric, f.out.c_str(),
              history_path.c_str());
  return 0;
}

// ---- ablate ----

struct AblateFlags {
  std::string checkpoint;
  std::string protocol = "all";
  double tau = kDefaultTau;
  std::string out;
  unsigned workers = 0;
  DataFlags data;
};

int cmd_ablate(const AblateFlags& f) {
  std::vector<Protocol> protocols;
  if (f.protocol == "all") {
    protocols = {Protocol::e1, Protocol::e2, Protocol::e3};
  } else {
    const Protocol p = parse_protocol(f.protocol);
    if (p == Protocol::custom) throw Failure{kUsage, "protocol must be e1, e2, e3 or all"};
    protocols = {p};
  }
  if (!(f.tau > 0.0)) throw Failure{kUsage, "--tau must be positive"};
  const Model model = load_model(f.checkpoint);
  const DatasetPair sets = datasets_for(model.config, f.data.options(model.config.seed));
  ReportSet reports;
  for (Protocol p : protocols) reports[p] = run_protocol(p, model, sets.test, f.tau, {f.workers});
  print_summary(reports);
  if (!f.out.empty()) write_file(f.out, emit_reports(reports));
  return 0;
}

// ---- report ----

struct ReportFlags {
  std::string report;
  std::string format = "text";
  std::string compare;
  std::string out;
};

int cmd_report(const ReportFlags& f) {
  const std::string text = read_file(f.report, kRuntime);
  ReportSet reports;
  try {
    reports = parse_reports(text);
  } catch (const FormatError& e) {
    throw Failure{kUsage, f.report + ": " + e.what()};
  }
  std::string body;
  if (f.format == "text") body = reports_to_text(reports);
  else if (f.format == "csv") body = reports_to_csv(reports);
  else if (f.format == "svg") body = reports_to_svg(reports);
  else throw Failure{kUsage, "unknown format '" + f.format + "'"};

  if (!f.compare.empty()) {
    const ReferencePattern& ref = reference_pattern(f.compare);
    const auto it = reports.find(ref.protocol);
    if (it == reports.end()) {
      throw Failure{kUsage, "report has no " + std::string(to_string(ref.protocol)) + " results to compare with " + ref.id};
    }
    const std::string cmp = comparison_to_text(compare_to_reference(it->second, ref));
    if (f.format == "text") body += cmp;
    else std::cerr << cmp;
  }
  if (f.out.empty()) std::cout << body;
  else write_file(f.out, body);
  return 0;
}

// ---- prune ----

struct PruneFlags {
  std::string checkpoint;
  std::string report;
  std::string out;
  DataFlags data;
};

int cmd_prune(const PruneFlags& f) {
  const Model model = load_model(f.checkpoint);
  ReportSet reports;
  try {
    reports = parse_reports(read_file(f.report, kRuntime));
  } catch (const FormatError& e) {
    throw Failure{kUsage, f.report + ": " + e.what()};
  }
  const std::string fp = fingerprint(model);
  std::vector<LayerAddress> targets;
  for (const auto& [p, r] : reports) {
    if (r.fingerprint != fp) {
      throw Failure{kUsage, "report " + std::string(to_string(p)) + " was produced from model " + r.fingerprint +
                                ", checkpoint is " + fp};
    }
    for (const AblationResult& res : r.results) {
      if (!res.trivial) continue;
      for (const LayerAddress& a : res.spec.targets) {
        if (a.slot == Slot::conv1 || a.slot == Slot::conv2) targets.push_back(a);
      }
    }
  }
  std::sort(targets.begin(), targets.end());
  targets.erase(std::unique(targets.begin(), targets.end()), targets.end());

  const Model pruned = fold_and_prune(model, targets);
  const DatasetPair sets = datasets_for(model.config, f.data.options(model.config.seed));
  const double metric = evaluate(pruned, sets.test);
  const double zeroed = targets.empty() ? evaluate(model, sets.test)
                                        : evaluate(zero_kernels(model, {targets, Protocol::custom}), sets.test);
  try {
    save_checkpoint(pruned, f.out);
  } catch (const std::exception& e) {
    throw Failure{kRuntime, e.what()};
  }
  std::printf("folded %zu kernels:", targets.size());
  for (const LayerAddress& a : targets) std::printf(" %s", a.str().c_str());
  std::printf("\nparameters %zu -> %zu (-%zu)\n", model.parameter_count(), pruned.parameter_count(),
              model.parameter_count() - pruned.parameter_count());
  const char* metric_name = model.config.task == Task::classify ? "accuracy" : "dice";
  std::printf("pruned %s %.6f  zero-ablated %s %.6f\n", metric_name, metric, metric_name, zeroed);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Residual network training and layer ablation"};
  app.require_subcommand(1);

  TrainFlags tf;
  CLI::App* train_cmd = app.add_subcommand("train", "Train a model and write a checkpoint and history file");
  train_cmd->add_option("--config", tf.config_path, "JSON config: model fields plus optional \"train\" and \"data\" sections");
  train_cmd->add_option("--out,--checkpoint", tf.out, "Checkpoint to write")->required();
  train_cmd->add_option("--history", tf.history, "History file (default: <checkpoint>.history.json)");
  train_cmd->add_option("--seed", tf.seed, "Seed for weights, shuffling and data");
  train_cmd->add_option("--task", tf.task, "classify or segment");
  train_cmd->add_option("--epochs", tf.epochs, "Training epochs");
  train_cmd->add_option("--batch-size", tf.batch_size, "Minibatch size");
  train_cmd->add_option("--lr", tf.lr, "Learning rate");
  train_cmd->add_option("--momentum", tf.momentum, "SGD momentum");
  train_cmd->add_option("--weight-decay", tf.weight_decay, "L2 weight decay");
  train_cmd->add_option("--decay-epoch", tf.decay_epoch, "Epoch from which the learning rate is scaled by 0.1");
  train_cmd->add_flag("--quiet", tf.quiet, "Do not print per-epoch progress");
  tf.data.attach(train_cmd);

  AblateFlags af;
  CLI::App* ablate_cmd = app.add_subcommand("ablate", "Zero kernels per protocol and write a triviality report");
  ablate_cmd->add_option("--checkpoint", af.checkpoint, "Trained checkpoint")->required();
  ablate_cmd->add_option("--protocol", af.protocol, "e1, e2, e3 or all")->capture_default_str();
  ablate_cmd->add_option("--tau", af.tau, "Triviality threshold on |baseline - ablated|")->capture_default_str();
  ablate_cmd->add_option("--out", af.out, "Report file to write");
  ablate_cmd->add_option("--workers", af.workers, "Concurrent evaluations (0: hardware concurrency)")->capture_default_str();
  af.data.attach(ablate_cmd);

  ReportFlags rf;
  CLI::App* report_cmd = app.add_subcommand("report", "Render a report as text, csv or svg");
  report_cmd->add_option("--report,report", rf.report, "Report file")->required();
  report_cmd->add_option("--format", rf.format, "text, csv or svg")->capture_default_str();
  report_cmd->add_option("--compare", rf.compare, "Reference pattern: cifar10-e2, cifar10-e3, t1-e2, t1-e3");
  report_cmd->add_option("--out", rf.out, "Write output here instead of stdout");

  PruneFlags pf;
  CLI::App* prune_cmd = app.add_subcommand("prune", "Fold trivial conv1/conv2 kernels into BN constants");
  prune_cmd->add_option("--checkpoint", pf.checkpoint, "Checkpoint the report was produced from")->required();
  prune_cmd->add_option("--report", pf.report, "Triviality report")->required();
  prune_cmd->add_option("--out", pf.out, "Pruned checkpoint to write")->required();
  pf.data.attach(prune_cmd);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kUsage;
  }

  try {
    if (*train_cmd) return cmd_train(tf);
    if (*ablate_cmd) return cmd_ablate(af);
    if (*report_cmd) return cmd_report(rf);
    if (*prune_cmd) return cmd_prune(pf);
  } catch (const Failure& f) {
    std::cerr << "error: " << f.message << "\n";
    return f.code;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const UnsupportedTargetError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntime;
  }
  return kUsage;
}
