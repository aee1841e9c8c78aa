#include "posefer/fusionnet.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "posefer/error.hpp"
#include "posefer/rng.hpp"
#include "posefer/serialize.hpp"

namespace posefer {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

constexpr std::array<std::string_view, kLayerCount> kLayerNames{
    "conv1", "conv2_1", "conv2_2", "conv3", "conv4", "conv5", "fc6", "expr_head", "pose_head"};

// Conv slots in ForwardTrace arrays follow the Layer enum order.
constexpr int kConv1 = 0;
constexpr int kConv2_1 = 1;
constexpr int kConv2_2 = 2;
constexpr int kConv3 = 3;
constexpr int kConv4 = 4;
constexpr int kConv5 = 5;

[[noreturn]] void shape_error(std::string_view layer, const std::string& detail) {
  throw Error(ErrorCode::ShapeMismatch, std::string(layer) + ": " + detail);
}

const ConvSpec& conv_spec(const NetSpec& spec, int slot) {
  switch (slot) {
    case kConv1: return spec.conv1;
    case kConv2_1: return spec.conv2_1;
    case kConv2_2: return spec.conv2_2;
    case kConv3: return spec.conv3;
    case kConv4: return spec.conv4;
    default: return spec.conv5;
  }
}

Eigen::MatrixXd im2col(const Tensor& in, const ConvSpec& c, int out_h, int out_w) {
  const int channels = in.dims[0];
  const int h = in.dims[1];
  const int w = in.dims[2];
  Eigen::MatrixXd cols = Eigen::MatrixXd::Zero(channels * c.k * c.k, out_h * out_w);
  for (int ch = 0; ch < channels; ++ch) {
    for (int ky = 0; ky < c.k; ++ky) {
      for (int kx = 0; kx < c.k; ++kx) {
        const int row = (ch * c.k + ky) * c.k + kx;
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * c.stride - c.pad + ky;
          if (iy < 0 || iy >= h) continue;
          for (int ox = 0; ox < out_w; ++ox) {
            const int ix = ox * c.stride - c.pad + kx;
            if (ix < 0 || ix >= w) continue;
            cols(row, oy * out_w + ox) = in.values((ch * h + iy) * w + ix);
          }
        }
      }
    }
  }
  return cols;
}

Eigen::VectorXd col2im(const Eigen::MatrixXd& dcols, int channels, int h, int w, const ConvSpec& c, int out_h,
                       int out_w) {
  Eigen::VectorXd d = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(channels) * h * w);
  for (int ch = 0; ch < channels; ++ch) {
    for (int ky = 0; ky < c.k; ++ky) {
      for (int kx = 0; kx < c.k; ++kx) {
        const int row = (ch * c.k + ky) * c.k + kx;
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * c.stride - c.pad + ky;
          if (iy < 0 || iy >= h) continue;
          for (int ox = 0; ox < out_w; ++ox) {
            const int ix = ox * c.stride - c.pad + kx;
            if (ix < 0 || ix >= w) continue;
            d((ch * h + iy) * w + ix) += dcols(row, oy * out_w + ox);
          }
        }
      }
    }
  }
  return d;
}

Tensor relu(const Tensor& t) {
  Tensor out = t;
  out.values = t.values.cwiseMax(0.0);
  return out;
}

Eigen::VectorXd relu_backward(const Eigen::VectorXd& grad, const Eigen::VectorXd& pre) {
  return (pre.array() > 0.0).select(grad, 0.0);
}

void conv_forward(const Tensor& in, const ConvSpec& c, const LayerParams& p, Eigen::MatrixXd& cols, Tensor& pre) {
  const int oh = conv_output_size(in.dims[1], c);
  const int ow = conv_output_size(in.dims[2], c);
  cols = im2col(in, c, oh, ow);
  pre = Tensor({c.out, oh, ow});
  Eigen::Map<RowMatrix> out(pre.values.data(), c.out, oh * ow);
  out.noalias() = p.weights * cols;
  out.colwise() += p.bias;
}

/// Returns the gradient with respect to the conv input; accumulates the
/// parameter gradients into `g`.
Eigen::VectorXd conv_backward(const Eigen::VectorXd& dpre, const Tensor& out_shape, const Eigen::MatrixXd& cols,
                              const ConvSpec& c, const LayerParams& p, const std::vector<int>& in_dims,
                              LayerParams& g, bool need_input) {
  const int spatial = out_shape.dims[1] * out_shape.dims[2];
  Eigen::Map<const RowMatrix> d(dpre.data(), c.out, spatial);
  g.weights.noalias() = d * cols.transpose();
  g.bias = d.rowwise().sum();
  if (!need_input) return {};
  const Eigen::MatrixXd dcols = p.weights.transpose() * d;
  return col2im(dcols, in_dims[0], in_dims[1], in_dims[2], c, out_shape.dims[1], out_shape.dims[2]);
}

Tensor max_pool(const Tensor& in, const PoolSpec& p, std::vector<int>& argmax) {
  const int channels = in.dims[0];
  const int h = in.dims[1];
  const int w = in.dims[2];
  const int oh = pool_output_size(h, p);
  const int ow = pool_output_size(w, p);
  Tensor out({channels, oh, ow});
  argmax.assign(static_cast<std::size_t>(out.size()), 0);
  for (int ch = 0; ch < channels; ++ch) {
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        int best = -1;
        double best_v = 0.0;
        for (int y = oy * p.stride; y < std::min(oy * p.stride + p.k, h); ++y) {
          for (int x = ox * p.stride; x < std::min(ox * p.stride + p.k, w); ++x) {
            const int idx = (ch * h + y) * w + x;
            if (best < 0 || in.values(idx) > best_v) {
              best = idx;
              best_v = in.values(idx);
            }
          }
        }
        const int o = (ch * oh + oy) * ow + ox;
        out.values(o) = best_v;
        argmax[static_cast<std::size_t>(o)] = best;
      }
    }
  }
  return out;
}

Eigen::VectorXd max_pool_backward(const Eigen::VectorXd& dout, const std::vector<int>& argmax, Eigen::Index in_size) {
  Eigen::VectorXd d = Eigen::VectorXd::Zero(in_size);
  for (std::size_t i = 0; i < argmax.size(); ++i) d(argmax[i]) += dout(static_cast<Eigen::Index>(i));
  return d;
}

Tensor image_tensor(const GrayImage& image) {
  Tensor t({1, image.height(), image.width()});
  t.values = Eigen::Map<const Eigen::VectorXd>(image.pixels.data(), image.pixels.size());
  return t;
}

void check_params(const FusionNetParams& params, const NetSpec& spec) {
  const auto ref = zero_params(spec);
  for (int i = 0; i < kLayerCount; ++i) {
    const auto& a = params.layers[static_cast<std::size_t>(i)];
    const auto& b = ref.layers[static_cast<std::size_t>(i)];
    if (a.weights.rows() != b.weights.rows() || a.weights.cols() != b.weights.cols() ||
        a.bias.size() != b.bias.size()) {
      shape_error(kLayerNames[static_cast<std::size_t>(i)],
                  "parameters are " + std::to_string(a.weights.rows()) + "x" + std::to_string(a.weights.cols()) +
                      ", spec needs " + std::to_string(b.weights.rows()) + "x" + std::to_string(b.weights.cols()));
    }
  }
}

void check_input(const NetSpec& spec, const GrayImage& image, const Eigen::VectorXd& handcrafted) {
  if (image.width() != spec.input_size || image.height() != spec.input_size) {
    shape_error("input", "image is " + std::to_string(image.width()) + "x" + std::to_string(image.height()) +
                             ", spec needs " + std::to_string(spec.input_size));
  }
  if (handcrafted.size() != spec.handcrafted_dim) {
    shape_error("fc6", "handcrafted vector has " + std::to_string(handcrafted.size()) + " entries, spec needs " +
                           std::to_string(spec.handcrafted_dim));
  }
}

double cross_entropy(const Eigen::VectorXd& logits, int label) {
  const double m = logits.maxCoeff();
  return m + std::log((logits.array() - m).exp().sum()) - logits(label);
}

void check_labels(const NetSpec& spec, int pose_label, int expr_label) {
  if (pose_label < 0 || pose_label >= spec.pose_classes) {
    throw Error(ErrorCode::LabelOutOfRange, "pose label " + std::to_string(pose_label));
  }
  if (expr_label < 0 || expr_label >= kExpressionCount) {
    throw Error(ErrorCode::LabelOutOfRange, "expression label " + std::to_string(expr_label));
  }
}

}  // namespace

Tensor::Tensor(std::vector<int> d) : dims(std::move(d)) {
  const auto n = std::accumulate(dims.begin(), dims.end(), Eigen::Index{1},
                                 [](Eigen::Index a, int b) { return a * b; });
  values = Eigen::VectorXd::Zero(n);
}

std::string_view layer_name(Layer layer) { return kLayerNames[static_cast<std::size_t>(layer)]; }

int conv_output_size(int in, const ConvSpec& c) {
  if (c.k < 1 || c.stride < 1 || c.pad < 0 || in + 2 * c.pad < c.k) return 0;
  return (in + 2 * c.pad - c.k) / c.stride + 1;
}

int pool_output_size(int in, const PoolSpec& p) {
  if (p.k < 1 || p.stride < 1 || in < 1) return 0;
  if (in <= p.k) return 1;
  int out = (in - p.k + p.stride - 1) / p.stride + 1;
  while ((out - 1) * p.stride >= in) --out;
  return out;
}

NetGeometry net_geometry(const NetSpec& spec) {
  NetGeometry g;
  auto conv = [](int in, const ConvSpec& c, std::string_view name) {
    if (c.out < 1) shape_error(name, "needs at least one output channel");
    const int out = conv_output_size(in, c);
    if (out < 1) shape_error(name, "input of size " + std::to_string(in) + " is too small");
    return out;
  };
  auto pool = [](int in, const PoolSpec& p, std::string_view name) {
    const int out = pool_output_size(in, p);
    if (out < 1) shape_error(name, "invalid pooling window");
    return out;
  };
  if (spec.pose_classes < 1) shape_error("pose_head", "needs at least one pose class");
  if (spec.handcrafted_dim < 0 || spec.fc6 < 1) shape_error("fc6", "invalid width");
  g.conv1 = conv(spec.input_size, spec.conv1, "conv1");
  g.conv2_1 = conv(g.conv1, spec.conv2_1, "conv2_1");
  if (g.conv2_1 != g.conv1) {
    shape_error("conv2_1", "must keep its input size " + std::to_string(g.conv1) + ", got " +
                               std::to_string(g.conv2_1));
  }
  g.pool2_1 = pool(g.conv2_1, spec.pool2_1, "pool2_1");
  g.conv2_2 = conv(g.conv1, spec.conv2_2, "conv2_2");
  if (g.pool2_1 != g.conv2_2) {
    shape_error("concat", "pool2_1 is " + std::to_string(g.pool2_1) + " wide but conv2_2 is " +
                              std::to_string(g.conv2_2));
  }
  g.concat_channels = spec.conv2_1.out + spec.conv2_2.out;
  g.conv3 = conv(g.conv2_2, spec.conv3, "conv3");
  g.conv4 = conv(g.conv3, spec.conv4, "conv4");
  g.conv5 = conv(g.conv4, spec.conv5, "conv5");
  g.pool5 = pool(g.conv5, spec.pool5, "pool5");
  g.flatten = spec.conv5.out * g.pool5 * g.pool5;
  g.pose_in = spec.conv2_1.out * g.pool2_1 * g.pool2_1;
  g.fc6_in = g.flatten + spec.handcrafted_dim;
  return g;
}

Eigen::Index FusionNetParams::parameter_count() const {
  Eigen::Index n = 0;
  for (const auto& l : layers) n += l.weights.size() + l.bias.size();
  return n;
}

FusionNetParams zero_params(const NetSpec& spec) {
  const auto g = net_geometry(spec);
  FusionNetParams p;
  auto conv = [&](Layer l, const ConvSpec& c, int in) {
    p[l].weights = Eigen::MatrixXd::Zero(c.out, in * c.k * c.k);
    p[l].bias = Eigen::VectorXd::Zero(c.out);
  };
  auto fc = [&](Layer l, int out, int in) {
    p[l].weights = Eigen::MatrixXd::Zero(out, in);
    p[l].bias = Eigen::VectorXd::Zero(out);
  };
  conv(Layer::Conv1, spec.conv1, 1);
  conv(Layer::Conv2_1, spec.conv2_1, spec.conv1.out);
  conv(Layer::Conv2_2, spec.conv2_2, spec.conv1.out);
  conv(Layer::Conv3, spec.conv3, g.concat_channels);
  conv(Layer::Conv4, spec.conv4, spec.conv3.out);
  conv(Layer::Conv5, spec.conv5, spec.conv4.out);
  fc(Layer::Fc6, spec.fc6, g.fc6_in);
  fc(Layer::ExprHead, kExpressionCount, spec.fc6);
  fc(Layer::PoseHead, spec.pose_classes, g.pose_in);
  return p;
}

FusionNetParams init_params(const NetSpec& spec, std::uint64_t seed) {
  auto p = zero_params(spec);
  Rng rng(seed);
  for (int i = 0; i < kLayerCount; ++i) {
    auto& w = p.layers[static_cast<std::size_t>(i)].weights;
    double fan_in = static_cast<double>(w.cols());
    double fan_out = static_cast<double>(w.rows());
    if (i <= kConv5) {
      const auto& c = conv_spec(spec, i);
      fan_out *= c.k * c.k;
    }
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
    for (Eigen::Index r = 0; r < w.rows(); ++r) {
      for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = rng.uniform(-limit, limit);
    }
  }
  return p;
}

ForwardResult forward(const FusionNetParams& params, const NetSpec& spec, const GrayImage& image,
                      const Eigen::VectorXd& handcrafted) {
  ForwardResult r;
  auto& t = r.trace;
  t.spec = spec;
  t.geometry = net_geometry(spec);
  check_input(spec, image, handcrafted);
  check_params(params, spec);
  t.input = image_tensor(image);
  t.handcrafted = handcrafted;

  auto run_conv = [&](int slot, const Tensor& in) {
    conv_forward(in, conv_spec(spec, slot), params.layers[static_cast<std::size_t>(slot)],
                 t.cols[static_cast<std::size_t>(slot)], t.pre[static_cast<std::size_t>(slot)]);
    t.post[static_cast<std::size_t>(slot)] = relu(t.pre[static_cast<std::size_t>(slot)]);
    return t.post[static_cast<std::size_t>(slot)];
  };

  const Tensor c1 = run_conv(kConv1, t.input);
  const Tensor c21 = run_conv(kConv2_1, c1);
  t.pool2_1 = max_pool(c21, spec.pool2_1, t.pool2_1_argmax);
  const Tensor c22 = run_conv(kConv2_2, c1);

  t.concat = Tensor({t.geometry.concat_channels, t.geometry.conv2_2, t.geometry.conv2_2});
  t.concat.values << t.pool2_1.values, c22.values;

  run_conv(kConv3, t.concat);
  run_conv(kConv4, t.post[kConv3]);
  run_conv(kConv5, t.post[kConv4]);
  t.pool5 = max_pool(t.post[kConv5], spec.pool5, t.pool5_argmax);

  t.fc6_in.resize(t.geometry.fc6_in);
  t.fc6_in << t.pool5.values, handcrafted;
  t.fc6_pre = params[Layer::Fc6].weights * t.fc6_in + params[Layer::Fc6].bias;
  t.fc6_post = t.fc6_pre.cwiseMax(0.0);
  t.expr_logits = params[Layer::ExprHead].weights * t.fc6_post + params[Layer::ExprHead].bias;

  t.pose_in = t.pool2_1.values;
  t.pose_logits = params[Layer::PoseHead].weights * t.pose_in + params[Layer::PoseHead].bias;

  r.pose_logits = t.pose_logits;
  r.expr_logits = t.expr_logits;
  return r;
}

Eigen::VectorXd softmax(const Eigen::VectorXd& logits) {
  const Eigen::ArrayXd e = (logits.array() - logits.maxCoeff()).exp();
  return (e / e.sum()).matrix();
}

double joint_loss(const Eigen::VectorXd& pose_logits, const Eigen::VectorXd& expr_logits, int pose_label,
                  int expr_label, const LossWeights& weights) {
  if (pose_label < 0 || pose_label >= pose_logits.size()) {
    throw Error(ErrorCode::LabelOutOfRange, "pose label " + std::to_string(pose_label));
  }
  if (expr_label < 0 || expr_label >= expr_logits.size()) {
    throw Error(ErrorCode::LabelOutOfRange, "expression label " + std::to_string(expr_label));
  }
  double loss = 0.0;
  if (weights.lambda_pose != 0.0) loss += weights.lambda_pose * cross_entropy(pose_logits, pose_label);
  if (weights.lambda_expr != 0.0) loss += weights.lambda_expr * cross_entropy(expr_logits, expr_label);
  return loss;
}

Gradients backward(const FusionNetParams& params, const NetSpec& spec, const ForwardTrace& trace, int pose_label,
                   int expr_label, const LossWeights& weights) {
  if (serialize_net_spec(trace.spec) != serialize_net_spec(spec) || trace.expr_logits.size() != kExpressionCount ||
      trace.pose_logits.size() != spec.pose_classes) {
    throw Error(ErrorCode::TraceMismatch, "trace was recorded for a different network");
  }
  check_params(params, spec);
  check_labels(spec, pose_label, expr_label);
  const auto& g = trace.geometry;

  Gradients grads;
  // Heads.
  Eigen::VectorXd dexpr = softmax(trace.expr_logits);
  dexpr(expr_label) -= 1.0;
  dexpr *= weights.lambda_expr;
  Eigen::VectorXd dpose = softmax(trace.pose_logits);
  dpose(pose_label) -= 1.0;
  dpose *= weights.lambda_pose;

  grads[Layer::ExprHead].weights = dexpr * trace.fc6_post.transpose();
  grads[Layer::ExprHead].bias = dexpr;
  const Eigen::VectorXd dfc6_pre =
      relu_backward(params[Layer::ExprHead].weights.transpose() * dexpr, trace.fc6_pre);
  grads[Layer::Fc6].weights = dfc6_pre * trace.fc6_in.transpose();
  grads[Layer::Fc6].bias = dfc6_pre;
  // Only the pool5 part of fc6's input is differentiated; the handcrafted
  // tail is a constant.
  const Eigen::VectorXd dpool5 =
      params[Layer::Fc6].weights.leftCols(g.flatten).transpose() * dfc6_pre;

  grads[Layer::PoseHead].weights = dpose * trace.pose_in.transpose();
  grads[Layer::PoseHead].bias = dpose;

  auto back_conv = [&](int slot, const Eigen::VectorXd& dpost, const std::vector<int>& in_dims, bool need_input) {
    const auto s = static_cast<std::size_t>(slot);
    const Eigen::VectorXd dpre = relu_backward(dpost, trace.pre[s].values);
    return conv_backward(dpre, trace.pre[s], trace.cols[s], conv_spec(spec, slot), params.layers[s], in_dims,
                         grads.layers[s], need_input);
  };

  const Eigen::VectorXd dpost5 = max_pool_backward(dpool5, trace.pool5_argmax, trace.post[kConv5].size());
  const Eigen::VectorXd dpost4 = back_conv(kConv5, dpost5, trace.post[kConv4].dims, true);
  const Eigen::VectorXd dpost3 = back_conv(kConv4, dpost4, trace.post[kConv3].dims, true);
  const Eigen::VectorXd dconcat = back_conv(kConv3, dpost3, trace.concat.dims, true);

  const Eigen::Index pool_len = trace.pool2_1.size();
  const Eigen::VectorXd dpool21 =
      dconcat.head(pool_len) + params[Layer::PoseHead].weights.transpose() * dpose;
  const Eigen::VectorXd dpost22 = dconcat.tail(dconcat.size() - pool_len);
  const Eigen::VectorXd dpost21 = max_pool_backward(dpool21, trace.pool2_1_argmax, trace.post[kConv2_1].size());

  Eigen::VectorXd dpost1 = back_conv(kConv2_1, dpost21, trace.post[kConv1].dims, true);
  dpost1 += back_conv(kConv2_2, dpost22, trace.post[kConv1].dims, true);
  back_conv(kConv1, dpost1, trace.input.dims, false);
  return grads;
}

double train_step(FusionNetParams& params, const NetSpec& spec, std::span<const FusionSample> batch,
                  const LossWeights& weights, double learning_rate) {
  if (batch.empty()) throw Error(ErrorCode::ShapeMismatch, "batch: empty");
  if (weights.lambda_pose < 0 || weights.lambda_expr < 0 ||
      (weights.lambda_pose == 0 && weights.lambda_expr == 0)) {
    throw Error(ErrorCode::InvalidConfig, "loss weights must be non-negative and not both zero");
  }
  Gradients total;
  double loss = 0.0;
  bool first = true;
  for (const auto& s : batch) {
    const auto fwd = forward(params, spec, s.image, s.handcrafted);
    loss += joint_loss(fwd.pose_logits, fwd.expr_logits, s.pose, s.expr, weights);
    auto g = backward(params, spec, fwd.trace, s.pose, s.expr, weights);
    if (first) {
      total = std::move(g);
      first = false;
    } else {
      for (int i = 0; i < kLayerCount; ++i) {
        total.layers[static_cast<std::size_t>(i)].weights += g.layers[static_cast<std::size_t>(i)].weights;
        total.layers[static_cast<std::size_t>(i)].bias += g.layers[static_cast<std::size_t>(i)].bias;
      }
    }
  }
  const double step = learning_rate / static_cast<double>(batch.size());
  if (step != 0.0) {
    for (int i = 0; i < kLayerCount; ++i) {
      params.layers[static_cast<std::size_t>(i)].weights -= step * total.layers[static_cast<std::size_t>(i)].weights;
      params.layers[static_cast<std::size_t>(i)].bias -= step * total.layers[static_cast<std::size_t>(i)].bias;
    }
  }
  return loss / static_cast<double>(batch.size());
}

FusionTrainResult train_fusion(std::span<const FusionSample> samples, const NetSpec& spec,
                               const FusionTrainConfig& config) {
  if (samples.empty()) throw Error(ErrorCode::ShapeMismatch, "training set: empty");
  if (config.batch_size < 1) throw Error(ErrorCode::InvalidConfig, "batch size must be positive");
  FusionTrainResult result;
  result.params = init_params(spec, config.seed);
  Rng rng(config.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<FusionSample> batch;

  auto run_epoch = [&](const LossWeights& w) {
    rng.shuffle(order);
    double sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
      const auto end = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      batch.clear();
      for (auto k = start; k < end; ++k) batch.push_back(samples[order[k]]);
      sum += train_step(result.params, spec, batch, w, config.learning_rate) * static_cast<double>(batch.size());
    }
    result.epoch_loss.push_back(sum / static_cast<double>(order.size()));
  };

  if (config.weights.lambda_pose > 0) {
    for (int e = 0; e < config.pose_epochs; ++e) run_epoch({config.weights.lambda_pose, 0.0});
  }
  for (int e = 0; e < config.joint_epochs; ++e) run_epoch(config.weights);
  return result;
}

Eigen::VectorXd pose_probabilities(const FusionNetParams& params, const NetSpec& spec, const GrayImage& image) {
  net_geometry(spec);
  check_input(spec, image, Eigen::VectorXd::Zero(spec.handcrafted_dim));
  check_params(params, spec);
  const Tensor in = image_tensor(image);
  Eigen::MatrixXd cols;
  Tensor c1;
  conv_forward(in, spec.conv1, params[Layer::Conv1], cols, c1);
  c1 = relu(c1);
  Tensor c21;
  conv_forward(c1, spec.conv2_1, params[Layer::Conv2_1], cols, c21);
  c21 = relu(c21);
  std::vector<int> argmax;
  const Tensor pooled = max_pool(c21, spec.pool2_1, argmax);
  return softmax(params[Layer::PoseHead].weights * pooled.values + params[Layer::PoseHead].bias);
}

PoseClass predict_pose_cnn(const FusionNetParams& params, const NetSpec& spec, const GrayImage& image) {
  const Eigen::VectorXd p = pose_probabilities(params, spec, image);
  return PoseClass{argmax_lowest(std::span<const double>(p.data(), static_cast<std::size_t>(p.size()))) + 1};
}

Prediction predict_expression(const FusionNetParams& params, const NetSpec& spec, const GrayImage& image,
                              const Eigen::VectorXd& handcrafted) {
  const auto r = forward(params, spec, image, handcrafted);
  const Eigen::VectorXd p = softmax(r.expr_logits);
  Prediction out;
  for (int c = 0; c < kExpressionCount; ++c) out.scores[static_cast<std::size_t>(c)] = p(c);
  out.label = static_cast<Expression>(argmax_lowest(out.scores));
  return out;
}

PoseClass fuse_pose_estimates(PoseClass cnn_pose, double cnn_confidence, PoseClass landmark_pose, double threshold) {
  if (cnn_pose == landmark_pose) return cnn_pose;
  return cnn_confidence >= threshold ? cnn_pose : landmark_pose;
}

// ---------------------------------------------------------------------------
// text spec: `key value` lines and `layer out=.. k=.. stride=.. pad=..`

std::string serialize_net_spec(const NetSpec& spec) {
  std::ostringstream os;
  os << "input_size " << spec.input_size << "\n"
     << "handcrafted_dim " << spec.handcrafted_dim << "\n"
     << "pose_classes " << spec.pose_classes << "\n";
  auto conv = [&](std::string_view name, const ConvSpec& c) {
    os << name << " kind=conv out=" << c.out << " k=" << c.k << " stride=" << c.stride << " pad=" << c.pad << "\n";
  };
  auto pool = [&](std::string_view name, const PoolSpec& p) {
    os << name << " kind=maxpool k=" << p.k << " stride=" << p.stride << "\n";
  };
  conv("conv1", spec.conv1);
  conv("conv2_1", spec.conv2_1);
  pool("pool2_1", spec.pool2_1);
  conv("conv2_2", spec.conv2_2);
  conv("conv3", spec.conv3);
  conv("conv4", spec.conv4);
  conv("conv5", spec.conv5);
  pool("pool5", spec.pool5);
  os << "fc6 kind=fc out=" << spec.fc6 << "\n";
  return os.str();
}

NetSpec parse_net_spec(std::string_view text) {
  NetSpec spec;
  std::istringstream in{std::string(text)};
  std::string line;
  int line_no = 0;
  auto fail = [&](const std::string& msg) {
    throw Error(ErrorCode::InvalidConfig, "net spec line " + std::to_string(line_no) + ": " + msg);
  };
  auto to_int = [&](const std::string& s) {
    int v = 0;
    bool ok = false;
    try {
      std::size_t used = 0;
      v = std::stoi(s, &used);
      ok = used == s.size();
    } catch (const std::logic_error&) {
    }
    if (!ok) fail("bad integer '" + s + "'");
    return v;
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    std::string key;
    if (!(ls >> key)) continue;
    std::vector<std::pair<std::string, std::string>> attrs;
    std::string tok;
    std::string bare;
    while (ls >> tok) {
      const auto eq = tok.find('=');
      if (eq == std::string::npos) {
        bare = tok;
      } else {
        attrs.emplace_back(tok.substr(0, eq), tok.substr(eq + 1));
      }
    }
    auto attr = [&](const std::string& name, int& target) {
      for (const auto& [k, v] : attrs) {
        if (k == name) target = to_int(v);
      }
    };
    auto conv = [&](ConvSpec& c) {
      attr("out", c.out);
      attr("k", c.k);
      attr("stride", c.stride);
      attr("pad", c.pad);
    };
    auto pool = [&](PoolSpec& p) {
      attr("k", p.k);
      attr("stride", p.stride);
    };
    if (key == "input_size") {
      spec.input_size = to_int(bare);
    } else if (key == "handcrafted_dim") {
      spec.handcrafted_dim = to_int(bare);
    } else if (key == "pose_classes") {
      spec.pose_classes = to_int(bare);
    } else if (key == "conv1") {
      conv(spec.conv1);
    } else if (key == "conv2_1") {
      conv(spec.conv2_1);
    } else if (key == "conv2_2") {
      conv(spec.conv2_2);
    } else if (key == "conv3") {
      conv(spec.conv3);
    } else if (key == "conv4") {
      conv(spec.conv4);
    } else if (key == "conv5") {
      conv(spec.conv5);
    } else if (key == "pool2_1") {
      pool(spec.pool2_1);
    } else if (key == "pool5") {
      pool(spec.pool5);
    } else if (key == "fc6") {
      attr("out", spec.fc6);
    } else {
      fail("unknown layer '" + key + "'");
    }
  }
  net_geometry(spec);
  return spec;
}

// ---------------------------------------------------------------------------
// Same container layout as classifier models, kind 3.

namespace {
constexpr char kModelMagic[4] = {'P', 'F', 'M', 'D'};
constexpr std::uint32_t kModelVersion = 1;
constexpr std::uint32_t kKindFusion = 3;
}  // namespace

void save_fusion_params(const FusionNetParams& params, const NetSpec& spec, const std::string& path) {
  check_params(params, spec);
  BinaryWriter w;
  w.bytes(std::string_view(kModelMagic, 4));
  w.u32(kModelVersion);
  w.u32(kKindFusion);
  w.u32(kExpressionCount);
  for (auto e : kAllExpressions) w.str(expression_name(e));
  w.u64(static_cast<std::uint64_t>(spec.handcrafted_dim));
  w.str(serialize_net_spec(spec));
  for (const auto& l : params.layers) {
    w.matrix(l.weights);
    w.f64s(std::span<const double>(l.bias.data(), static_cast<std::size_t>(l.bias.size())));
  }
  w.save(path);
}

FusionNetParams load_fusion_params(const std::string& path, NetSpec* spec_out) {
  auto r = BinaryReader::load(path);
  if (r.bytes(4) != std::string_view(kModelMagic, 4)) throw Error(ErrorCode::ParseError, path + ": not a model file");
  if (r.u32() != kModelVersion) throw Error(ErrorCode::ParseError, path + ": unsupported model version");
  if (r.u32() != kKindFusion) throw Error(ErrorCode::ParseError, path + ": not a fusion network");
  if (r.u32() != kExpressionCount) throw Error(ErrorCode::ParseError, path + ": unexpected class count");
  for (auto e : kAllExpressions) {
    if (r.str() != expression_name(e)) throw Error(ErrorCode::ParseError, path + ": class names differ");
  }
  r.u64();
  const NetSpec spec = parse_net_spec(r.str());
  FusionNetParams params;
  for (auto& l : params.layers) {
    l.weights = r.matrix();
    const auto b = r.f64s();
    l.bias = Eigen::Map<const Eigen::VectorXd>(b.data(), static_cast<Eigen::Index>(b.size()));
  }
  check_params(params, spec);
  if (spec_out) *spec_out = spec;
  return params;
}

}  // namespace posefer
