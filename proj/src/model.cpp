#include "resablate/model.hpp"

#include <charconv>
#include <cmath>
#include <json.hpp>
#include <random>
#include <cstdlib>

namespace resablate {

std::string_view to_string(Task task) { return task == Task::classify ? "classify" : "segment"; }

Task parse_task(std::string_view text) {
  if (text == "classify") return Task::classify;
  if (text == "segment") return Task::segment;
  throw ConfigError("unknown task '" + std::string(text) + "'");
}

void ResNetConfig::validate() const {
  if (stage_widths.size() != units_per_stage.size()) {
    throw ConfigError("stage_widths and units_per_stage differ in length");
  }
  if (stage_widths.size() < 2) throw ConfigError("at least two stages are required");
  for (std::size_t i = 0; i < stage_widths.size(); ++i) {
    if (stage_widths[i] == 0) throw ConfigError("stage width must be positive");
    if (units_per_stage[i] == 0) throw ConfigError("units per stage must be positive");
    if (i > 0 && stage_widths[i] <= stage_widths[i - 1]) {
      throw ConfigError("stage widths must strictly increase");
    }
  }
  if (input_channels == 0) throw ConfigError("input_channels must be positive");
  if (input_channels == stage_widths[0]) {
    throw ConfigError("stem must change the channel count");
  }
  const std::size_t factor = std::size_t{1} << (stage_widths.size() - 1);
  if (input_size == 0 || input_size % factor != 0) {
    throw ConfigError("input_size must be a positive multiple of " + std::to_string(factor));
  }
  if (task == Task::classify && num_classes < 2) {
    throw ConfigError("classification needs at least two classes");
  }
  if (task == Task::segment && num_classes != 1) {
    throw ConfigError("segmentation models use num_classes = 1 (foreground logit)");
  }
}

std::string ResNetConfig::to_text() const {
  nlohmann::ordered_json j;
  j["stage_widths"] = stage_widths;
  j["units_per_stage"] = units_per_stage;
  j["input_channels"] = input_channels;
  j["input_size"] = input_size;
  j["num_classes"] = num_classes;
  j["task"] = std::string(to_string(task));
  j["seed"] = seed;
  return j.dump();
}

ResNetConfig ResNetConfig::from_text(std::string_view text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  ResNetConfig c;
  try {
    if (j.contains("stage_widths")) c.stage_widths = j.at("stage_widths").get<std::vector<std::size_t>>();
    if (j.contains("units_per_stage")) c.units_per_stage = j.at("units_per_stage").get<std::vector<std::size_t>>();
    if (j.contains("input_channels")) c.input_channels = j.at("input_channels").get<std::size_t>();
    if (j.contains("input_size")) c.input_size = j.at("input_size").get<std::size_t>();
    if (j.contains("task")) c.task = parse_task(j.at("task").get<std::string>());
    if (c.task == Task::segment) c.num_classes = 1;
    if (j.contains("num_classes")) c.num_classes = j.at("num_classes").get<std::size_t>();
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config field has the wrong type: ") + e.what());
  }
  c.validate();
  return c;
}

namespace {

std::string_view slot_name(Slot s) {
  switch (s) {
    case Slot::stem: return "stem";
    case Slot::conv1: return "conv1";
    case Slot::conv2: return "conv2";
    case Slot::proj: return "proj";
    case Slot::head: return "head";
  }
  return "?";
}

int slot_rank(Slot s) {
  switch (s) {
    case Slot::conv1: return 0;
    case Slot::conv2: return 1;
    case Slot::proj: return 2;
    default: return 3;
  }
}

int parse_index(std::string_view text, std::string_view whole) {
  int v = -1;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size() || v < 0) {
    throw ConfigError("malformed layer address '" + std::string(whole) + "'");
  }
  return v;
}

}  // namespace

std::string LayerAddress::str() const {
  switch (slot) {
    case Slot::stem: return "stem";
    case Slot::head: return "head." + std::to_string(index);
    default:
      return "s" + std::to_string(stage) + ".u" + std::to_string(unit) + "." +
             std::string(slot_name(slot));
  }
}

LayerAddress LayerAddress::parse(std::string_view text) {
  if (text == "stem") return stem();
  if (text.starts_with("head.")) return head(parse_index(text.substr(5), text));
  const auto d1 = text.find('.');
  const auto d2 = d1 == std::string_view::npos ? d1 : text.find('.', d1 + 1);
  if (d2 == std::string_view::npos || text[0] != 's' || text[d1 + 1] != 'u') {
    throw ConfigError("malformed layer address '" + std::string(text) + "'");
  }
  const int stage = parse_index(text.substr(1, d1 - 1), text);
  const int unit = parse_index(text.substr(d1 + 2, d2 - d1 - 2), text);
  const std::string_view s = text.substr(d2 + 1);
  Slot slot;
  if (s == "conv1") slot = Slot::conv1;
  else if (s == "conv2") slot = Slot::conv2;
  else if (s == "proj") slot = Slot::proj;
  else throw ConfigError("malformed layer address '" + std::string(text) + "'");
  return in_unit(stage, unit, slot);
}

std::strong_ordering operator<=>(const LayerAddress& a, const LayerAddress& b) {
  auto group = [](const LayerAddress& x) {
    return x.slot == Slot::stem ? 0 : (x.slot == Slot::head ? 2 : 1);
  };
  if (auto c = group(a) <=> group(b); c != 0) return c;
  if (auto c = a.stage <=> b.stage; c != 0) return c;
  if (auto c = a.unit <=> b.unit; c != 0) return c;
  if (auto c = slot_rank(a.slot) <=> slot_rank(b.slot); c != 0) return c;
  return a.index <=> b.index;
}

const ResidualUnit& Model::unit(int stage, int u) const {
  if (stage < 0 || static_cast<std::size_t>(stage) >= stages.size() || u < 0 ||
      static_cast<std::size_t>(u) >= stages[stage].size()) {
    throw ConfigError("no residual unit at stage " + std::to_string(stage) + ", unit " +
                      std::to_string(u));
  }
  return stages[stage][u];
}

ResidualUnit& Model::unit(int stage, int u) {
  return const_cast<ResidualUnit&>(static_cast<const Model&>(*this).unit(stage, u));
}

namespace {

const std::optional<ConvBn>* unit_slot(const ResidualUnit& u, Slot slot) {
  switch (slot) {
    case Slot::conv1: return &u.conv1;
    case Slot::conv2: return &u.conv2;
    case Slot::proj: return &u.proj;
    default: return nullptr;
  }
}

std::size_t head_kernel_count(const Model& m) {
  return m.config.task == Task::classify ? 1 : m.segmenter.up.size() + 1;
}

}  // namespace

bool Model::has_address(const LayerAddress& a) const {
  switch (a.slot) {
    case Slot::stem: return true;
    case Slot::head: return a.index >= 0 && static_cast<std::size_t>(a.index) < head_kernel_count(*this);
    default:
      if (a.stage < 0 || static_cast<std::size_t>(a.stage) >= stages.size() || a.unit < 0 ||
          static_cast<std::size_t>(a.unit) >= stages[a.stage].size()) {
        return false;
      }
      return unit_slot(stages[a.stage][a.unit], a.slot)->has_value();
  }
}

const ConvKernel<float>& Model::kernel(const LayerAddress& a) const {
  if (!has_address(a)) throw ConfigError("model has no kernel at " + a.str());
  switch (a.slot) {
    case Slot::stem: return stem.conv;
    case Slot::head:
      if (config.task == Task::classify) return classifier.fc;
      if (static_cast<std::size_t>(a.index) < segmenter.up.size()) return segmenter.up[a.index].conv;
      return segmenter.out;
    default: return (*unit_slot(stages[a.stage][a.unit], a.slot))->conv;
  }
}

ConvKernel<float>& Model::kernel(const LayerAddress& a) {
  return const_cast<ConvKernel<float>&>(static_cast<const Model&>(*this).kernel(a));
}

const BatchNormState<float>* Model::batchnorm_of(const LayerAddress& a) const {
  if (!has_address(a)) throw ConfigError("model has no kernel at " + a.str());
  switch (a.slot) {
    case Slot::stem: return &stem.bn;
    case Slot::head:
      if (config.task == Task::segment && static_cast<std::size_t>(a.index) < segmenter.up.size()) {
        return &segmenter.up[a.index].bn;
      }
      return nullptr;
    default: return &(*unit_slot(stages[a.stage][a.unit], a.slot))->bn;
  }
}

namespace {

std::size_t convbn_params(const ConvBn& c) { return c.conv.weights.size() + c.bn.parameter_count(); }

}  // namespace

std::size_t Model::parameter_count() const {
  std::size_t total = convbn_params(stem);
  for (const auto& stage : stages) {
    for (const auto& u : stage) {
      for (const auto* slot : {&u.conv1, &u.conv2, &u.proj}) {
        if (slot->has_value()) total += convbn_params(**slot);
      }
      for (const auto* f : {&u.folded_conv1, &u.folded_conv2, &u.folded_proj}) {
        if (f->has_value()) total += (*f)->size();
      }
    }
  }
  if (config.task == Task::classify) {
    total += classifier.fc.weights.size() + classifier.bias.size();
  } else {
    for (const auto& c : segmenter.up) total += convbn_params(c);
    total += segmenter.out.weights.size() + segmenter.bias.size();
  }
  return total;
}

namespace {

void init_uniform(std::vector<float>& w, std::size_t fan_in, float gain, std::mt19937_64& rng) {
  const float bound = gain / std::sqrt(static_cast<float>(fan_in));
  std::uniform_real_distribution<float> dist(-bound, bound);
  for (float& v : w) v = dist(rng);
}

// He-uniform bound sqrt(6 / fan_in) for relu-followed convolutions.
ConvBn make_convbn(std::size_t out, std::size_t in, std::size_t k, std::size_t stride,
                   std::mt19937_64& rng) {
  ConvBn c{ConvKernel<float>(out, in, k, k, stride, k / 2), BatchNormState<float>(out)};
  init_uniform(c.conv.weights, c.conv.patch_size(), std::sqrt(6.0f), rng);
  return c;
}

}  // namespace

Model build_model(const ResNetConfig& config) {
  config.validate();
  std::mt19937_64 rng(config.seed);
  Model m;
  m.config = config;
  m.stem = make_convbn(config.stage_widths[0], config.input_channels, 3, 1, rng);
  std::size_t in = config.stage_widths[0];
  for (std::size_t s = 0; s < config.stage_widths.size(); ++s) {
    const std::size_t width = config.stage_widths[s];
    std::vector<ResidualUnit> stage;
    for (std::size_t u = 0; u < config.units_per_stage[s]; ++u) {
      ResidualUnit unit;
      unit.in_channels = in;
      unit.out_channels = width;
      unit.stride = (s > 0 && u == 0) ? 2 : 1;
      unit.projection = (s > 0 && u == 0);
      unit.conv1 = make_convbn(width, in, 3, unit.stride, rng);
      unit.conv2 = make_convbn(width, width, 3, 1, rng);
      if (unit.projection) {
        unit.proj = make_convbn(width, in, 1, unit.stride, rng);
        unit.proj->conv.padding = 0;
      }
      stage.push_back(std::move(unit));
      in = width;
    }
    m.stages.push_back(std::move(stage));
  }
  if (config.task == Task::classify) {
    m.classifier.fc = ConvKernel<float>(config.num_classes, in, 1, 1, 1, 0);
    init_uniform(m.classifier.fc.weights, in, 1.0f, rng);
    m.classifier.bias.assign(config.num_classes, 0.0f);
  } else {
    std::size_t c = in;
    for (std::size_t i = 0; i + 1 < config.stage_widths.size(); ++i) {
      const std::size_t next = std::max<std::size_t>(c / 2, 4);
      m.segmenter.up.push_back(make_convbn(next, c, 3, 1, rng));
      c = next;
    }
    m.segmenter.out = ConvKernel<float>(1, c, 1, 1, 1, 0);
    init_uniform(m.segmenter.out.weights, c, 1.0f, rng);
    m.segmenter.bias.assign(1, 0.0f);
  }
  return m;
}

std::vector<LayerInfo> list_layers(const Model& model) {
  std::vector<LayerInfo> out;
  const auto& cfg = model.config;
  out.push_back({LayerAddress::stem(), true, cfg.input_channels, cfg.stage_widths[0]});
  for (std::size_t s = 0; s < model.stages.size(); ++s) {
    for (std::size_t u = 0; u < model.stages[s].size(); ++u) {
      const ResidualUnit& unit = model.stages[s][u];
      const int si = static_cast<int>(s);
      const int ui = static_cast<int>(u);
      if (unit.conv1) {
        out.push_back({LayerAddress::in_unit(si, ui, Slot::conv1),
                       unit.in_channels != unit.out_channels, unit.in_channels, unit.out_channels});
      }
      if (unit.conv2) {
        out.push_back({LayerAddress::in_unit(si, ui, Slot::conv2), false, unit.out_channels,
                       unit.out_channels});
      }
      if (unit.proj) {
        out.push_back({LayerAddress::in_unit(si, ui, Slot::proj),
                       unit.in_channels != unit.out_channels, unit.in_channels, unit.out_channels});
      }
    }
  }
  if (cfg.task == Task::classify) {
    out.push_back({LayerAddress::head(0), false, model.classifier.fc.in_channels,
                   model.classifier.fc.out_channels});
  } else {
    int i = 0;
    for (const auto& c : model.segmenter.up) {
      out.push_back({LayerAddress::head(i++), false, c.conv.in_channels, c.conv.out_channels});
    }
    out.push_back({LayerAddress::head(i), false, model.segmenter.out.in_channels,
                   model.segmenter.out.out_channels});
  }
  return out;
}

std::vector<LayerBlock> partition_layer_blocks(const Model& model) {
  std::vector<LayerBlock> blocks(model.stages.size());
  for (std::size_t s = 0; s < blocks.size(); ++s) blocks[s].stage = static_cast<int>(s);
  for (const LayerInfo& info : list_layers(model)) {
    if (info.address.in_residual_unit()) blocks[info.address.stage].members.push_back(info.address);
  }
  return blocks;
}

std::vector<LayerAddress> sweepable_addresses(const Model& model) {
  std::vector<LayerAddress> out;
  for (const LayerInfo& info : list_layers(model)) {
    if (info.address.slot != Slot::head) out.push_back(info.address);
  }
  return out;
}

namespace {

Tensor<float> convbn(const Tensor<float>& x, const ConvBn& c) {
  return batchnorm_eval(conv2d(x, c.conv), c.bn);
}

Tensor<float> convbn(const Tensor<float>& x, ConvBn& c, BnMode mode) {
  return batchnorm(conv2d(x, c.conv), c.bn, mode);
}

// Constant map of per-channel values with the given batch and spatial extent.
Tensor<float> broadcast_channels(std::span<const float> values, std::size_t n, std::size_t h,
                                 std::size_t w) {
  Tensor<float> t({n, values.size(), h, w});
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t c = 0; c < values.size(); ++c) {
      float* p = t.plane(b, c);
      std::fill(p, p + h * w, values[c]);
    }
  }
  return t;
}

std::size_t strided_extent(std::size_t extent, std::size_t stride) {
  return (extent - 1) / stride + 1;
}

void check_unit_input(const Tensor<float>& x, const ResidualUnit& unit) {
  if (x.shape().c != unit.in_channels) {
    throw ConfigError("residual unit expects " + std::to_string(unit.in_channels) +
                      " channels, got " + std::to_string(x.shape().c));
  }
}

Tensor<float> unit_branch(const Tensor<float>& x, const ResidualUnit& unit) {
  const Shape4& s = x.shape();
  const std::size_t oh = strided_extent(s.h, unit.stride);
  const std::size_t ow = strided_extent(s.w, unit.stride);
  if (unit.folded_conv2) return broadcast_channels(*unit.folded_conv2, s.n, oh, ow);
  Tensor<float> mid;
  if (unit.folded_conv1) {
    mid = broadcast_channels(*unit.folded_conv1, s.n, oh, ow);
  } else {
    mid = convbn(x, *unit.conv1);
    relu_inplace(mid);
  }
  return convbn(mid, *unit.conv2);
}

Tensor<float> unit_shortcut(const Tensor<float>& x, const ResidualUnit& unit) {
  if (!unit.projection) return x;
  const Shape4& s = x.shape();
  if (unit.folded_proj) {
    return broadcast_channels(*unit.folded_proj, s.n, strided_extent(s.h, unit.stride),
                              strided_extent(s.w, unit.stride));
  }
  return convbn(x, *unit.proj);
}

Tensor<float> unit_forward_train(const Tensor<float>& x, ResidualUnit& unit, BnMode mode) {
  check_unit_input(x, unit);
  if (!unit.conv1 || !unit.conv2 || (unit.projection && !unit.proj)) {
    throw ConfigError("folded residual units support eval mode only");
  }
  Tensor<float> mid = convbn(x, *unit.conv1, mode);
  relu_inplace(mid);
  Tensor<float> branch = convbn(mid, *unit.conv2, mode);
  Tensor<float> out = unit.projection ? add(convbn(x, *unit.proj, mode), branch) : add(x, branch);
  relu_inplace(out);
  return out;
}

}  // namespace

Tensor<float> residual_forward(const Tensor<float>& x, const ResidualUnit& unit) {
  check_unit_input(x, unit);
  Tensor<float> out = add(unit_shortcut(x, unit), unit_branch(x, unit));
  relu_inplace(out);
  return out;
}

Tensor<float> residual_forward_identity(const Tensor<float>& x, const ResidualUnit& unit) {
  if (unit.projection) throw ConfigError("unit has a projection shortcut");
  return residual_forward(x, unit);
}

Tensor<float> residual_forward_identity(const Tensor<float>& x, ResidualUnit& unit, BnMode mode) {
  if (unit.projection) throw ConfigError("unit has a projection shortcut");
  if (mode == BnMode::eval) return residual_forward(x, unit);
  return unit_forward_train(x, unit, mode);
}

Tensor<float> residual_forward_projection(const Tensor<float>& x, const ResidualUnit& unit) {
  if (!unit.projection) throw ConfigError("unit has an identity shortcut");
  return residual_forward(x, unit);
}

Tensor<float> residual_forward_projection(const Tensor<float>& x, ResidualUnit& unit,
                                          BnMode mode) {
  if (!unit.projection) throw ConfigError("unit has an identity shortcut");
  if (mode == BnMode::eval) return residual_forward(x, unit);
  return unit_forward_train(x, unit, mode);
}

Tensor<float> stem_forward(const Tensor<float>& x, const ConvBn& stem) {
  Tensor<float> y = convbn(x, stem);
  relu_inplace(y);
  return y;
}

Tensor<float> head_forward(const Model& model, const Tensor<float>& features) {
  if (model.config.task == Task::classify) {
    return linear<float>(global_avg_pool(features), model.classifier.fc.weights,
                         model.classifier.bias, model.classifier.fc.out_channels);
  }
  Tensor<float> h = features;
  for (const ConvBn& c : model.segmenter.up) {
    h = convbn(upsample_nearest2x(h), c);
    relu_inplace(h);
  }
  return add_channel_constant<float>(conv2d(h, model.segmenter.out), model.segmenter.bias);
}

namespace {

void check_batch(const Model& model, const Tensor<float>& batch) {
  const Shape4& s = batch.shape();
  const auto& cfg = model.config;
  if (s.c != cfg.input_channels || s.h != cfg.input_size || s.w != cfg.input_size || s.n == 0) {
    throw ConfigError("batch shape " + s.str() + " does not match model input " +
                      std::to_string(cfg.input_channels) + "x" + std::to_string(cfg.input_size) +
                      "x" + std::to_string(cfg.input_size));
  }
}

}  // namespace

Tensor<float> forward(const Model& model, const Tensor<float>& batch) {
  check_batch(model, batch);
  Tensor<float> h = stem_forward(batch, model.stem);
  for (const auto& stage : model.stages) {
    for (const auto& unit : stage) h = residual_forward(h, unit);
  }
  return head_forward(model, h);
}

Tensor<float> forward(Model& model, const Tensor<float>& batch, BnMode mode) {
  if (mode == BnMode::eval) return forward(static_cast<const Model&>(model), batch);
  check_batch(model, batch);
  Tensor<float> h = convbn(batch, model.stem, mode);
  relu_inplace(h);
  for (auto& stage : model.stages) {
    for (auto& unit : stage) h = unit_forward_train(h, unit, mode);
  }
  if (model.config.task == Task::classify) return head_forward(model, h);
  for (ConvBn& c : model.segmenter.up) {
    h = convbn(upsample_nearest2x(h), c, mode);
    relu_inplace(h);
  }
  return add_channel_constant<float>(conv2d(h, model.segmenter.out), model.segmenter.bias);
}

namespace {

void push_convbn(std::vector<std::span<float>>& out, ConvBn& c) {
  out.emplace_back(c.conv.weights);
  out.emplace_back(c.bn.gamma);
  out.emplace_back(c.bn.beta);
}

}  // namespace

std::vector<std::span<float>> trainable_parameters(Model& model) {
  std::vector<std::span<float>> out;
  push_convbn(out, model.stem);
  for (auto& stage : model.stages) {
    for (auto& u : stage) {
      for (auto* slot : {&u.conv1, &u.conv2, &u.proj}) {
        if (slot->has_value()) push_convbn(out, **slot);
      }
    }
  }
  if (model.config.task == Task::classify) {
    out.emplace_back(model.classifier.fc.weights);
    out.emplace_back(model.classifier.bias);
  } else {
    for (auto& c : model.segmenter.up) push_convbn(out, c);
    out.emplace_back(model.segmenter.out.weights);
    out.emplace_back(model.segmenter.bias);
  }
  return out;
}

Model zeros_like(const Model& model) {
  Model z = model;
  for (std::span<float> p : trainable_parameters(z)) std::fill(p.begin(), p.end(), 0.0f);
  return z;
}

}  // namespace resablate
