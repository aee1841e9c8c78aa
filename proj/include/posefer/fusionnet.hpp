#pragma once

// Two-branch convolutional network trained from scratch.
//
//   image -> conv1 -+-> conv2_1 -> pool2_1 -+-> pose head (fc -> K logits)
//                   |                       |
//                   +-> conv2_2 ------------+-> concat -> conv3 -> conv4 -> conv5
//                                                -> pool5 -> flatten ++ handcrafted
//                                                -> fc6 -> expression head (fc -> 7 logits)
//
// ReLU follows every conv and fc6. Feature maps are C x H x W, row-major.
// The handcrafted vector is treated as a constant input: no gradient is
// computed for it.

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "posefer/classify.hpp"
#include "posefer/image.hpp"
#include "posefer/posecluster.hpp"

namespace posefer {

struct Tensor {
  std::vector<int> dims;
  /// Row-major values; size equals the product of dims.
  Eigen::VectorXd values;

  Tensor() = default;
  explicit Tensor(std::vector<int> d);
  Eigen::Index size() const { return values.size(); }
};

struct ConvSpec {
  int out = 16;
  int k = 3;
  int stride = 1;
  int pad = 1;
};

struct PoolSpec {
  int k = 2;
  int stride = 2;
};

struct NetSpec {
  int input_size = 64;
  int handcrafted_dim = 0;
  int pose_classes = 5;
  ConvSpec conv1{16, 5, 2, 2};
  ConvSpec conv2_1{16, 3, 1, 1};
  PoolSpec pool2_1{2, 2};
  ConvSpec conv2_2{16, 3, 2, 1};
  ConvSpec conv3{32, 3, 1, 1};
  ConvSpec conv4{32, 3, 2, 1};
  ConvSpec conv5{64, 3, 1, 1};
  PoolSpec pool5{2, 2};
  int fc6 = 128;
};

/// Spatial sizes of every map for a given spec; throws ShapeMismatch naming
/// the first layer that cannot be built.
struct NetGeometry {
  int conv1 = 0;
  int conv2_1 = 0;
  int pool2_1 = 0;
  int conv2_2 = 0;
  int concat_channels = 0;
  int conv3 = 0;
  int conv4 = 0;
  int conv5 = 0;
  int pool5 = 0;
  int flatten = 0;
  int pose_in = 0;
  int fc6_in = 0;
};
NetGeometry net_geometry(const NetSpec& spec);

int conv_output_size(int in, const ConvSpec& c);
/// Ceiling-mode pooling output size.
int pool_output_size(int in, const PoolSpec& p);

enum class Layer : int { Conv1, Conv2_1, Conv2_2, Conv3, Conv4, Conv5, Fc6, ExprHead, PoseHead };
inline constexpr int kLayerCount = 9;
std::string_view layer_name(Layer layer);

struct LayerParams {
  /// Conv: out x (in * k * k), column index (c * k + ky) * k + kx. Fc: out x in.
  Eigen::MatrixXd weights;
  Eigen::VectorXd bias;
};

struct FusionNetParams {
  std::array<LayerParams, kLayerCount> layers;

  LayerParams& operator[](Layer l) { return layers[static_cast<std::size_t>(l)]; }
  const LayerParams& operator[](Layer l) const { return layers[static_cast<std::size_t>(l)]; }
  Eigen::Index parameter_count() const;
};

/// Xavier-uniform weights in +-sqrt(6 / (fan_in + fan_out)), zero biases.
FusionNetParams init_params(const NetSpec& spec, std::uint64_t seed);
FusionNetParams zero_params(const NetSpec& spec);

struct LossWeights {
  double lambda_pose = 1.0;
  double lambda_expr = 1.0;
};

struct ForwardTrace {
  NetSpec spec;
  NetGeometry geometry;
  Tensor input;
  Eigen::VectorXd handcrafted;
  /// Per conv layer: the im2col matrix of its input and its pre-activation.
  std::array<Eigen::MatrixXd, 6> cols;
  std::array<Tensor, 6> pre;
  std::array<Tensor, 6> post;
  Tensor pool2_1;
  std::vector<int> pool2_1_argmax;
  Tensor concat;
  Tensor pool5;
  std::vector<int> pool5_argmax;
  Eigen::VectorXd fc6_in;
  Eigen::VectorXd fc6_pre;
  Eigen::VectorXd fc6_post;
  Eigen::VectorXd pose_in;
  Eigen::VectorXd pose_logits;
  Eigen::VectorXd expr_logits;
};

struct ForwardResult {
  Eigen::VectorXd pose_logits;
  Eigen::VectorXd expr_logits;
  ForwardTrace trace;
};

ForwardResult forward(const FusionNetParams& params, const NetSpec& spec, const GrayImage& image,
                      const Eigen::VectorXd& handcrafted);

Eigen::VectorXd softmax(const Eigen::VectorXd& logits);

/// lambda_pose * CE(pose) + lambda_expr * CE(expr); labels are 0-based.
double joint_loss(const Eigen::VectorXd& pose_logits, const Eigen::VectorXd& expr_logits, int pose_label,
                  int expr_label, const LossWeights& weights);

struct Gradients {
  std::array<LayerParams, kLayerCount> layers;

  LayerParams& operator[](Layer l) { return layers[static_cast<std::size_t>(l)]; }
  const LayerParams& operator[](Layer l) const { return layers[static_cast<std::size_t>(l)]; }
};

Gradients backward(const FusionNetParams& params, const NetSpec& spec, const ForwardTrace& trace, int pose_label,
                   int expr_label, const LossWeights& weights);

struct FusionSample {
  GrayImage image;
  Eigen::VectorXd handcrafted;
  /// 0-based pose and expression indices.
  int pose = 0;
  int expr = 0;
};

/// One SGD step on the batch-mean gradient; returns the batch-mean loss
/// measured before the update.
double train_step(FusionNetParams& params, const NetSpec& spec, std::span<const FusionSample> batch,
                  const LossWeights& weights, double learning_rate);

struct FusionTrainConfig {
  /// Phase 1 trains the pose branch alone (lambda_expr = 0).
  int pose_epochs = 3;
  /// Phase 2 trains both heads with `weights`.
  int joint_epochs = 10;
  int batch_size = 16;
  double learning_rate = 0.01;
  LossWeights weights;
  std::uint64_t seed = 1;
};

struct FusionTrainResult {
  FusionNetParams params;
  std::vector<double> epoch_loss;
};

FusionTrainResult train_fusion(std::span<const FusionSample> samples, const NetSpec& spec,
                               const FusionTrainConfig& config);

/// Pose probabilities from conv1 and the pose branch only.
Eigen::VectorXd pose_probabilities(const FusionNetParams& params, const NetSpec& spec, const GrayImage& image);
PoseClass predict_pose_cnn(const FusionNetParams& params, const NetSpec& spec, const GrayImage& image);

Prediction predict_expression(const FusionNetParams& params, const NetSpec& spec, const GrayImage& image,
                              const Eigen::VectorXd& handcrafted);

/// Agreement wins; otherwise the CNN class if its confidence reaches
/// `threshold`, else the landmark class.
PoseClass fuse_pose_estimates(PoseClass cnn_pose, double cnn_confidence, PoseClass landmark_pose,
                              double threshold = 0.6);

std::string serialize_net_spec(const NetSpec& spec);
NetSpec parse_net_spec(std::string_view text);

void save_fusion_params(const FusionNetParams& params, const NetSpec& spec, const std::string& path);
FusionNetParams load_fusion_params(const std::string& path, NetSpec* spec_out = nullptr);

}  // namespace posefer
