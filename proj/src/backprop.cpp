#include "resablate/backprop.hpp"

namespace resablate {

namespace {

struct UnitTape {
  Tensor<float> input;
  BnCache<float> bn1;
  Tensor<float> mid;  // relu(bn1), the input of conv2
  BnCache<float> bn2;
  BnCache<float> bn_proj;
  Tensor<float> output;  // post-relu unit output
};

struct UpTape {
  Tensor<float> input;  // upsampled input of the conv
  BnCache<float> bn;
  Tensor<float> output;
};

struct Tape {
  const Tensor<float>* batch = nullptr;
  BnCache<float> stem_bn;
  Tensor<float> stem_out;
  std::vector<UnitTape> units;
  Tensor<float> features;
  std::vector<UpTape> ups;
};

Tensor<float> convbn_train(const Tensor<float>& x, ConvBn& c, BnCache<float>& cache) {
  return batchnorm(conv2d(x, c.conv), c.bn, BnMode::train, &cache);
}

// Writes kernel/gamma/beta gradients into `g` and returns the input gradient.
Tensor<float> convbn_backward(const Tensor<float>& input, const ConvBn& c,
                              const BnCache<float>& cache, const Tensor<float>& grad_out,
                              ConvBn& g) {
  BnGrads<float> bg = batchnorm_train_backward<float>(cache, c.bn.gamma, grad_out);
  g.bn.gamma = std::move(bg.grad_gamma);
  g.bn.beta = std::move(bg.grad_beta);
  ConvGrads<float> cg = conv2d_grad(input, c.conv, bg.grad_input);
  g.conv.weights = std::move(cg.grad_kernel);
  return std::move(cg.grad_input);
}

void accumulate(Tensor<float>& dst, const Tensor<float>& src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

void body_forward(Model& model, const Tensor<float>& batch, Tape& tape) {
  const auto& cfg = model.config;
  if (batch.shape().c != cfg.input_channels || batch.shape().h != cfg.input_size ||
      batch.shape().w != cfg.input_size) {
    throw ConfigError("batch shape " + batch.shape().str() + " does not match model input");
  }
  if (batch.shape().n < 2) throw ConfigError("training batches need at least two samples");
  tape.batch = &batch;
  Tensor<float> h = convbn_train(batch, model.stem, tape.stem_bn);
  relu_inplace(h);
  tape.stem_out = h;
  for (auto& stage : model.stages) {
    for (auto& unit : stage) {
      if (!unit.conv1 || !unit.conv2 || (unit.projection && !unit.proj)) {
        throw ConfigError("folded models cannot be trained");
      }
      UnitTape ut;
      ut.input = std::move(h);
      ut.mid = convbn_train(ut.input, *unit.conv1, ut.bn1);
      relu_inplace(ut.mid);
      Tensor<float> out = convbn_train(ut.mid, *unit.conv2, ut.bn2);
      if (unit.projection) {
        accumulate(out, convbn_train(ut.input, *unit.proj, ut.bn_proj));
      } else {
        accumulate(out, ut.input);
      }
      relu_inplace(out);
      ut.output = out;
      h = std::move(out);
      tape.units.push_back(std::move(ut));
    }
  }
  tape.features = std::move(h);
}

void body_backward(const Model& model, const Tape& tape, Tensor<float> grad, Model& grads) {
  std::size_t idx = tape.units.size();
  for (std::size_t s = model.stages.size(); s-- > 0;) {
    for (std::size_t u = model.stages[s].size(); u-- > 0;) {
      const UnitTape& ut = tape.units[--idx];
      const ResidualUnit& unit = model.stages[s][u];
      ResidualUnit& gu = grads.stages[s][u];
      const Tensor<float> g_sum = relu_grad(ut.output, grad);
      Tensor<float> g_mid = convbn_backward(ut.mid, *unit.conv2, ut.bn2, g_sum, *gu.conv2);
      g_mid = relu_grad(ut.mid, g_mid);
      Tensor<float> g_in = convbn_backward(ut.input, *unit.conv1, ut.bn1, g_mid, *gu.conv1);
      if (unit.projection) {
        accumulate(g_in, convbn_backward(ut.input, *unit.proj, ut.bn_proj, g_sum, *gu.proj));
      } else {
        accumulate(g_in, g_sum);
      }
      grad = std::move(g_in);
    }
  }
  grad = relu_grad(tape.stem_out, grad);
  convbn_backward(*tape.batch, model.stem, tape.stem_bn, grad, grads.stem);
}

}  // namespace

float classification_step(Model& model, const Tensor<float>& batch,
                          std::span<const std::int32_t> labels, Model& grads) {
  if (model.config.task != Task::classify) throw ConfigError("model is not a classifier");
  Tape tape;
  body_forward(model, batch, tape);
  const Tensor<float> pooled = global_avg_pool(tape.features);
  const auto& head = model.classifier;
  const Tensor<float> logits =
      linear<float>(pooled, head.fc.weights, head.bias, head.fc.out_channels);
  LossAndGrad<float> lg = softmax_cross_entropy(logits, labels);
  LinearGrads<float> hg = linear_grad<float>(pooled, head.fc.weights, head.fc.out_channels, lg.grad);
  grads.classifier.fc.weights = std::move(hg.grad_weight);
  grads.classifier.bias = std::move(hg.grad_bias);
  body_backward(model, tape, global_avg_pool_grad(tape.features.shape(), hg.grad_input), grads);
  return lg.loss;
}

float segmentation_step(Model& model, const Tensor<float>& batch, const Tensor<float>& masks,
                        Model& grads) {
  if (model.config.task != Task::segment) throw ConfigError("model is not a segmenter");
  Tape tape;
  body_forward(model, batch, tape);
  auto& head = model.segmenter;
  Tensor<float> h = tape.features;
  for (ConvBn& c : head.up) {
    UpTape ut;
    ut.input = upsample_nearest2x(h);
    ut.output = convbn_train(ut.input, c, ut.bn);
    relu_inplace(ut.output);
    h = ut.output;
    tape.ups.push_back(std::move(ut));
  }
  const Tensor<float> logits = add_channel_constant<float>(conv2d(h, head.out), head.bias);
  if (masks.shape() != logits.shape()) {
    throw ConfigError("mask shape " + masks.shape().str() + " does not match output " +
                      logits.shape().str());
  }
  const Tensor<float> prob = sigmoid(logits);
  LossAndGrad<float> lg = soft_dice_loss(prob, masks);
  Tensor<float> g_logits(logits.shape());
  for (std::size_t i = 0; i < g_logits.size(); ++i) {
    g_logits[i] = lg.grad[i] * prob[i] * (1.0f - prob[i]);
  }
  grads.segmenter.bias.assign(1, 0.0f);
  double bias_grad = 0.0;
  for (std::size_t i = 0; i < g_logits.size(); ++i) bias_grad += g_logits[i];
  grads.segmenter.bias[0] = static_cast<float>(bias_grad);
  ConvGrads<float> og = conv2d_grad(h, head.out, g_logits);
  grads.segmenter.out.weights = std::move(og.grad_kernel);
  Tensor<float> grad = std::move(og.grad_input);
  for (std::size_t i = head.up.size(); i-- > 0;) {
    const UpTape& ut = tape.ups[i];
    grad = relu_grad(ut.output, grad);
    grad = convbn_backward(ut.input, head.up[i], ut.bn, grad, grads.segmenter.up[i]);
    grad = upsample_nearest2x_grad(grad);
  }
  body_backward(model, tape, std::move(grad), grads);
  return lg.loss;
}

}  // namespace resablate
