#pragma once

#include <string>
#include <vector>

#include "resablate/data.hpp"
#include "resablate/model.hpp"

namespace resablate {

enum class Protocol { e1, e2, e3, custom };

std::string_view to_string(Protocol p);
Protocol parse_protocol(std::string_view text);

struct AblationSpec {
  std::vector<LayerAddress> targets;
  Protocol protocol = Protocol::custom;

  // Throws ConfigError: empty target set, unknown address, or a head target.
  void validate(const Model& model) const;
};

enum class Verdict { trivial, non_trivial };

struct AblationResult {
  std::string label;  // address for single-kernel sweeps, "block<k>" for block protocols
  AblationSpec spec;
  std::string metric_name;  // "accuracy" or "dice"
  double baseline = 0.0;
  double ablated = 0.0;
  double delta = 0.0;  // baseline - ablated
  bool trivial = false;
  double tau = 0.0;
};

struct TrivialityReport {
  std::string fingerprint;
  Task task = Task::classify;
  Protocol protocol = Protocol::e1;
  std::string metric_name;
  double baseline = 0.0;
  double tau = 0.0;
  std::vector<AblationResult> results;
  std::uint64_t seed = 0;
  std::string dataset;  // descriptor text
};

inline constexpr double kDefaultTau = 0.01;

// trivial iff |baseline - ablated| <= tau; tau must be positive.
Verdict classify_triviality(double baseline, double ablated, double tau);

// Deep copy with every targeted kernel set exactly to zero; BN state untouched.
Model zero_kernels(const Model& model, const AblationSpec& spec);

// Eval-mode network output with the target kernel's contribution replaced by the
// closed-form BN constant instead of a zero convolution. Targets: conv1, conv2, proj.
Tensor<float> analytic_ablated_forward(const Model& model, const Tensor<float>& x,
                                       const LayerAddress& target);

// Single residual unit evaluated in closed form with `slot` ablated.
Tensor<float> analytic_unit_forward(const Tensor<float>& x, const ResidualUnit& unit, Slot slot);

// Number of concurrent evaluation workers; 0 picks the hardware concurrency.
struct SweepOptions {
  unsigned workers = 0;
};

std::vector<AblationSpec> protocol_e1_specs(const Model& model);
// One spec per block; a block whose stage has a single unit yields an empty spec.
std::vector<AblationSpec> protocol_e2_specs(const Model& model);
std::vector<AblationSpec> protocol_e3_specs(const Model& model);

TrivialityReport run_protocol_e1(const Model& model, const LabeledDataset& eval_set, double tau,
                                 const SweepOptions& options = {});
TrivialityReport run_protocol_e2(const Model& model, const LabeledDataset& eval_set, double tau,
                                 const SweepOptions& options = {});
TrivialityReport run_protocol_e3(const Model& model, const LabeledDataset& eval_set, double tau,
                                 const SweepOptions& options = {});
TrivialityReport run_protocol(Protocol protocol, const Model& model, const LabeledDataset& eval_set,
                              double tau, const SweepOptions& options = {});

// Replaces ablated branches by their stored constants. conv2 folds the whole branch,
// conv1 folds the branch input, proj folds the shortcut.
Model fold_and_prune(const Model& model, const std::vector<LayerAddress>& trivial_addresses);

}  // namespace resablate
