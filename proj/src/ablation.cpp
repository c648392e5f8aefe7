#include "resablate/ablation.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <future>
#include <thread>

#include "resablate/train.hpp"

namespace resablate {

std::string_view to_string(Protocol p) {
  switch (p) {
    case Protocol::e1: return "e1";
    case Protocol::e2: return "e2";
    case Protocol::e3: return "e3";
    case Protocol::custom: return "custom";
  }
  return "custom";
}

Protocol parse_protocol(std::string_view text) {
  if (text == "e1") return Protocol::e1;
  if (text == "e2") return Protocol::e2;
  if (text == "e3") return Protocol::e3;
  if (text == "custom") return Protocol::custom;
  throw ConfigError("unknown protocol '" + std::string(text) + "'");
}

void AblationSpec::validate(const Model& model) const {
  if (targets.empty()) throw ConfigError("ablation spec has no targets");
  for (const LayerAddress& a : targets) {
    if (a.slot == Slot::head) throw ConfigError("the head is never ablated (" + a.str() + ")");
    if (!model.has_address(a)) throw ConfigError("model has no kernel at " + a.str());
  }
}

Verdict classify_triviality(double baseline, double ablated, double tau) {
  if (!(tau > 0.0)) throw ConfigError("tau must be positive");
  // Metrics are ratios like 83/100, so a delta of exactly tau can land one ulp above it.
  const double slack = 1e-9 * tau;
  return std::abs(baseline - ablated) <= tau + slack ? Verdict::trivial : Verdict::non_trivial;
}

Model zero_kernels(const Model& model, const AblationSpec& spec) {
  spec.validate(model);
  Model out = model;
  for (const LayerAddress& a : spec.targets) out.kernel(a).set_zero();
  return out;
}

namespace {

Tensor<float> constant_map(std::span<const float> values, std::size_t n, std::size_t h, std::size_t w) {
  Tensor<float> t({n, values.size(), h, w});
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t c = 0; c < values.size(); ++c) {
      float* p = t.plane(b, c);
      std::fill(p, p + h * w, values[c]);
    }
  }
  return t;
}

Tensor<float> conv_bn(const Tensor<float>& x, const ConvBn& c) {
  return batchnorm_eval(conv2d(x, c.conv), c.bn);
}

}  // namespace

Tensor<float> analytic_unit_forward(const Tensor<float>& x, const ResidualUnit& unit, Slot slot) {
  if (!unit.conv1 || !unit.conv2 || (unit.projection && !unit.proj)) {
    throw ConfigError("closed-form ablation needs an unfolded unit");
  }
  if (slot == Slot::proj && !unit.projection) throw ConfigError("unit has no projection");
  const Shape4& s = x.shape();
  const std::size_t oh = (s.h - 1) / unit.stride + 1;
  const std::size_t ow = (s.w - 1) / unit.stride + 1;

  Tensor<float> branch;
  switch (slot) {
    case Slot::conv1: {
      // BN(x * 0) = c' per channel, so conv2 sees the constant map relu(c').
      std::vector<float> c1 = unit.conv1->bn.zero_input_constant();
      for (float& v : c1) v = std::max(v, 0.0f);
      branch = conv_bn(constant_map(c1, s.n, oh, ow), *unit.conv2);
      break;
    }
    case Slot::conv2:
      branch = constant_map(unit.conv2->bn.zero_input_constant(), s.n, oh, ow);
      break;
    case Slot::proj: {
      Tensor<float> mid = conv_bn(x, *unit.conv1);
      relu_inplace(mid);
      branch = conv_bn(mid, *unit.conv2);
      break;
    }
    default:
      throw UnsupportedTargetError("no closed form for ablating this slot");
  }
  Tensor<float> shortcut;
  if (slot == Slot::proj) {
    shortcut = constant_map(unit.proj->bn.zero_input_constant(), s.n, oh, ow);
  } else if (unit.projection) {
    shortcut = conv_bn(x, *unit.proj);
  } else {
    shortcut = x;
  }
  Tensor<float> out = add(shortcut, branch);
  relu_inplace(out);
  return out;
}

Tensor<float> analytic_ablated_forward(const Model& model, const Tensor<float>& x,
                                       const LayerAddress& target) {
  if (!target.in_residual_unit()) {
    throw UnsupportedTargetError("no closed form for ablating " + target.str());
  }
  if (!model.has_address(target)) throw ConfigError("model has no kernel at " + target.str());
  Tensor<float> h = stem_forward(x, model.stem);
  for (std::size_t s = 0; s < model.stages.size(); ++s) {
    for (std::size_t u = 0; u < model.stages[s].size(); ++u) {
      const ResidualUnit& unit = model.stages[s][u];
      if (static_cast<int>(s) == target.stage && static_cast<int>(u) == target.unit) {
        h = analytic_unit_forward(h, unit, target.slot);
      } else {
        h = residual_forward(h, unit);
      }
    }
  }
  return head_forward(model, h);
}

std::vector<AblationSpec> protocol_e1_specs(const Model& model) {
  std::vector<AblationSpec> out;
  for (const LayerAddress& a : sweepable_addresses(model)) out.push_back({{a}, Protocol::e1});
  return out;
}

std::vector<AblationSpec> protocol_e2_specs(const Model& model) {
  std::vector<AblationSpec> out;
  for (const LayerBlock& block : partition_layer_blocks(model)) {
    AblationSpec spec{{}, Protocol::e2};
    for (const LayerAddress& a : block.members) {
      // The first unit holds the channel change, its projection and the adjacent conv2.
      if (a.unit > 0 && (a.slot == Slot::conv1 || a.slot == Slot::conv2)) spec.targets.push_back(a);
    }
    out.push_back(std::move(spec));
  }
  return out;
}

std::vector<AblationSpec> protocol_e3_specs(const Model& model) {
  std::vector<AblationSpec> out;
  for (std::size_t s = 1; s < model.stages.size(); ++s) {
    const LayerAddress a = LayerAddress::in_unit(static_cast<int>(s), 0, Slot::proj);
    if (model.has_address(a)) out.push_back({{a}, Protocol::e3});
  }
  return out;
}

namespace {

std::string metric_name(const Model& model) {
  return model.config.task == Task::classify ? "accuracy" : "dice";
}

// Evaluates each spec on its own zeroed copy; results come back in spec order.
std::vector<double> evaluate_specs(const Model& model, const LabeledDataset& eval_set,
                                   const std::vector<AblationSpec>& specs, double baseline,
                                   unsigned workers) {
  std::vector<double> out(specs.size(), baseline);
  if (workers == 0) workers = std::max(1u, std::thread::hardware_concurrency());
  auto run = [&](std::size_t i) {
    if (!specs[i].targets.empty()) out[i] = evaluate(zero_kernels(model, specs[i]), eval_set);
  };
  if (workers == 1 || specs.size() < 2) {
    for (std::size_t i = 0; i < specs.size(); ++i) run(i);
    return out;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::future<void>> pool;
  for (unsigned w = 0; w < std::min<std::size_t>(workers, specs.size()); ++w) {
    pool.push_back(std::async(std::launch::async, [&] {
      for (std::size_t i = next++; i < specs.size(); i = next++) run(i);
    }));
  }
  for (auto& f : pool) f.get();
  return out;
}

std::string spec_label(const AblationSpec& spec, std::size_t block_index) {
  if (spec.protocol == Protocol::e1 || (spec.protocol == Protocol::custom && spec.targets.size() == 1)) {
    return spec.targets.front().str();
  }
  if (spec.protocol == Protocol::custom) return "custom" + std::to_string(block_index);
  return "block" + std::to_string(block_index + 1);
}

TrivialityReport run_specs(Protocol protocol, const Model& model, const LabeledDataset& eval_set,
                           double tau, const std::vector<AblationSpec>& specs,
                           const SweepOptions& options) {
  if (!(tau > 0.0)) throw ConfigError("tau must be positive");
  if (eval_set.size() == 0) throw DataError("evaluation set is empty");
  for (const AblationSpec& s : specs) {
    if (!s.targets.empty()) s.validate(model);
  }
  TrivialityReport report;
  report.fingerprint = fingerprint(model);
  report.task = model.config.task;
  report.protocol = protocol;
  report.metric_name = metric_name(model);
  report.baseline = evaluate(model, eval_set);
  report.tau = tau;
  report.seed = eval_set.descriptor.seed;
  report.dataset = eval_set.descriptor.to_text();
  const std::vector<double> ablated =
      evaluate_specs(model, eval_set, specs, report.baseline, options.workers);
  for (std::size_t i = 0; i < specs.size(); ++i) {
    AblationResult r;
    const std::size_t block = protocol == Protocol::e3 ? static_cast<std::size_t>(specs[i].targets.front().stage)
                                                       : i;
    r.label = spec_label(specs[i], block);
    r.spec = specs[i];
    r.metric_name = report.metric_name;
    r.baseline = report.baseline;
    r.ablated = ablated[i];
    r.delta = report.baseline - ablated[i];
    r.tau = tau;
    r.trivial = classify_triviality(report.baseline, ablated[i], tau) == Verdict::trivial;
    report.results.push_back(std::move(r));
  }
  return report;
}

}  // namespace

TrivialityReport run_protocol_e1(const Model& model, const LabeledDataset& eval_set, double tau,
                                 const SweepOptions& options) {
  return run_specs(Protocol::e1, model, eval_set, tau, protocol_e1_specs(model), options);
}

TrivialityReport run_protocol_e2(const Model& model, const LabeledDataset& eval_set, double tau,
                                 const SweepOptions& options) {
  return run_specs(Protocol::e2, model, eval_set, tau, protocol_e2_specs(model), options);
}

TrivialityReport run_protocol_e3(const Model& model, const LabeledDataset& eval_set, double tau,
                                 const SweepOptions& options) {
  return run_specs(Protocol::e3, model, eval_set, tau, protocol_e3_specs(model), options);
}

TrivialityReport run_protocol(Protocol protocol, const Model& model, const LabeledDataset& eval_set,
                              double tau, const SweepOptions& options) {
  switch (protocol) {
    case Protocol::e1: return run_protocol_e1(model, eval_set, tau, options);
    case Protocol::e2: return run_protocol_e2(model, eval_set, tau, options);
    case Protocol::e3: return run_protocol_e3(model, eval_set, tau, options);
    case Protocol::custom: break;
  }
  throw ConfigError("custom protocols need explicit specs");
}

Model fold_and_prune(const Model& model, const std::vector<LayerAddress>& trivial_addresses) {
  Model out = model;
  for (const LayerAddress& a : trivial_addresses) {
    if (!a.in_residual_unit()) throw UnsupportedTargetError("cannot fold " + a.str());
    out.unit(a.stage, a.unit);  // range check
  }
  std::vector<LayerAddress> sorted = trivial_addresses;
  std::sort(sorted.begin(), sorted.end());
  sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
  auto contains = [&](int stage, int unit, Slot slot) {
    return std::binary_search(sorted.begin(), sorted.end(), LayerAddress::in_unit(stage, unit, slot));
  };
  for (std::size_t s = 0; s < out.stages.size(); ++s) {
    for (std::size_t u = 0; u < out.stages[s].size(); ++u) {
      ResidualUnit& unit = out.stages[s][u];
      const int si = static_cast<int>(s);
      const int ui = static_cast<int>(u);
      if (contains(si, ui, Slot::conv2) && unit.conv2) {
        unit.folded_conv2 = unit.conv2->bn.zero_input_constant();
        unit.conv2.reset();
        unit.conv1.reset();
        unit.folded_conv1.reset();
      } else if (contains(si, ui, Slot::conv1) && unit.conv1) {
        std::vector<float> c = unit.conv1->bn.zero_input_constant();
        for (float& v : c) v = std::max(v, 0.0f);
        unit.folded_conv1 = std::move(c);
        unit.conv1.reset();
      }
      if (contains(si, ui, Slot::proj)) {
        if (!unit.projection) throw ConfigError("unit s" + std::to_string(s) + ".u" + std::to_string(u) + " has no projection");
        if (unit.proj) {
          unit.folded_proj = unit.proj->bn.zero_input_constant();
          unit.proj.reset();
        }
      }
    }
  }
  return out;
}

}  // namespace resablate
