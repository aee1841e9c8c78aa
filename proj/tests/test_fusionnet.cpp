#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "oracles.hpp"
#include "posefer/fusionnet.hpp"
#include "posefer/pipeline.hpp"
#include "posefer/synth.hpp"

using namespace posefer;

namespace {

std::vector<FusionSample> toy_batch(const NetSpec& spec, int n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<FusionSample> out;
  for (int i = 0; i < n; ++i) {
    FusionSample s;
    s.image = oracle::random_image(rng, spec.input_size);
    s.handcrafted = Eigen::VectorXd(spec.handcrafted_dim);
    for (auto& v : s.handcrafted) v = rng.normal();
    s.pose = i % spec.pose_classes;
    s.expr = i % kExpressionCount;
    out.push_back(std::move(s));
  }
  return out;
}

double max_abs(const Gradients& g) {
  double m = 0.0;
  for (const auto& l : g.layers) {
    if (l.weights.size() > 0) m = std::max(m, l.weights.cwiseAbs().maxCoeff());
    if (l.bias.size() > 0) m = std::max(m, l.bias.cwiseAbs().maxCoeff());
  }
  return m;
}

bool params_equal(const FusionNetParams& a, const FusionNetParams& b) {
  for (std::size_t i = 0; i < a.layers.size(); ++i) {
    if (a.layers[i].weights != b.layers[i].weights || a.layers[i].bias != b.layers[i].bias) return false;
  }
  return true;
}

}  // namespace

TEST(NetGeometry, BranchSizesLineUpForSupportedInputs) {
  for (int size : {32, 64, 96}) {
    NetSpec spec;
    spec.input_size = size;
    const auto g = net_geometry(spec);
    EXPECT_EQ(g.conv1, (size + 1) / 2) << size;
    EXPECT_EQ(g.conv2_1, g.conv1) << size;
    EXPECT_EQ(g.conv2_2, (g.conv1 + 1) / 2) << size;
    EXPECT_EQ(g.pool2_1, g.conv2_2) << size;
    EXPECT_EQ(g.concat_channels, 32);
    EXPECT_EQ(g.flatten, spec.conv5.out * g.pool5 * g.pool5);
    EXPECT_EQ(g.pose_in, spec.conv2_1.out * g.pool2_1 * g.pool2_1);
    EXPECT_EQ(g.fc6_in, g.flatten + spec.handcrafted_dim);
  }
}

TEST(NetGeometry, OutputSizesFollowTheUsualFormulas) {
  EXPECT_EQ(conv_output_size(64, ConvSpec{16, 5, 2, 2}), 32);
  EXPECT_EQ(conv_output_size(7, ConvSpec{1, 3, 2, 1}), 4);
  EXPECT_EQ(pool_output_size(7, PoolSpec{2, 2}), 4);
  EXPECT_EQ(pool_output_size(8, PoolSpec{2, 2}), 4);
}

TEST(NetGeometry, UnbuildableSpecNamesTheLayer) {
  NetSpec spec;
  spec.conv2_1.pad = 0;  // conv2_1 would shrink the map
  try {
    (void)net_geometry(spec);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ShapeMismatch);
    EXPECT_NE(std::string(e.what()).find("conv2_1"), std::string::npos);
  }
}

TEST(Forward, TraceShapesMatchGeometry) {
  NetSpec spec;
  spec.handcrafted_dim = 10;
  const auto params = init_params(spec, 3);
  Rng rng(3);
  const auto r = forward(params, spec, oracle::random_image(rng, 64), Eigen::VectorXd::Zero(10));
  const auto& t = r.trace;
  EXPECT_EQ(t.concat.dims, (std::vector<int>{32, 16, 16}));
  EXPECT_EQ(t.post[1].dims, t.post[0].dims);  // conv2_1 keeps conv1's spatial size
  EXPECT_EQ(t.pool2_1.dims, (std::vector<int>{16, 16, 16}));
  EXPECT_EQ(t.pool5.dims, (std::vector<int>{64, 4, 4}));
  EXPECT_EQ(t.fc6_in.size(), 64 * 16 + 10);
  EXPECT_EQ(r.pose_logits.size(), 5);
  EXPECT_EQ(r.expr_logits.size(), 7);
  for (const auto& tensor : t.post) EXPECT_GE(tensor.values.minCoeff(), 0.0);
}

TEST(Forward, ZeroParamsGiveZeroLogitsAndUniformSoftmax) {
  const auto spec = oracle::toy_net_spec();
  Rng rng(4);
  const auto r = forward(zero_params(spec), spec, oracle::random_image(rng, 16), Eigen::VectorXd::Ones(3));
  EXPECT_EQ(r.pose_logits, Eigen::VectorXd::Zero(5));
  EXPECT_EQ(r.expr_logits, Eigen::VectorXd::Zero(7));
  EXPECT_NEAR((softmax(r.expr_logits).array() - 1.0 / 7.0).abs().maxCoeff(), 0.0, 1e-15);
}

TEST(Forward, WrongInputsRaiseShapeMismatch) {
  const auto spec = oracle::toy_net_spec();
  const auto params = init_params(spec, 1);
  EXPECT_THROW((void)forward(params, spec, GrayImage(15, 16), Eigen::VectorXd::Zero(3)), Error);
  try {
    (void)forward(params, spec, GrayImage(16, 16), Eigen::VectorXd::Zero(4));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ShapeMismatch);
  }
  auto other = spec;
  other.conv3.out = 5;
  EXPECT_THROW((void)forward(params, other, GrayImage(16, 16), Eigen::VectorXd::Zero(3)), Error);
}

TEST(Softmax, SumsToOneAndSurvivesLargeLogits) {
  Rng rng(5);
  for (int t = 0; t < 100; ++t) {
    Eigen::VectorXd z(7);
    for (auto& v : z) v = rng.normal(0, 30);
    const auto p = softmax(z);
    EXPECT_NEAR(p.sum(), 1.0, 1e-12);
    EXPECT_GE(p.minCoeff(), 0.0);
  }
  const auto p = softmax(Eigen::Vector3d(1000, 0, -1000));
  EXPECT_NEAR(p(0), 1.0, 1e-15);
}

TEST(JointLoss, UniformLogits) {
  EXPECT_NEAR(joint_loss(Eigen::VectorXd::Zero(5), Eigen::VectorXd::Zero(7), 2, 3, LossWeights{}),
              std::log(5.0) + std::log(7.0), 1e-14);
}

TEST(JointLoss, LargeMarginSaturates) {
  Eigen::VectorXd pose = Eigen::VectorXd::Zero(5);
  Eigen::VectorXd expr = Eigen::VectorXd::Zero(7);
  pose(1) = 50;
  expr(4) = 50;
  const double loss = joint_loss(pose, expr, 1, 4, LossWeights{});
  EXPECT_GE(loss, 0.0);
  EXPECT_LT(loss, 1e-10);
}

TEST(JointLoss, ZeroPoseWeightLeavesExpressionTerm) {
  Rng rng(6);
  Eigen::VectorXd pose(5), expr(7);
  for (auto& v : pose) v = rng.normal();
  for (auto& v : expr) v = rng.normal();
  const double expr_only = joint_loss(pose, expr, 0, 2, LossWeights{0.0, 1.0});
  const double direct = std::log(expr.array().exp().sum()) - expr(2);
  EXPECT_NEAR(expr_only, direct, 1e-12);
}

TEST(JointLoss, LabelsOutOfRange) {
  for (auto [p, e] : {std::pair{5, 0}, std::pair{-1, 0}, std::pair{0, 7}}) {
    try {
      (void)joint_loss(Eigen::VectorXd::Zero(5), Eigen::VectorXd::Zero(7), p, e, LossWeights{});
      FAIL();
    } catch (const Error& err) {
      EXPECT_EQ(err.code(), ErrorCode::LabelOutOfRange);
    }
  }
}

TEST(Backward, MatchesCentralDifferencesOnToyNet) {
  for (std::uint64_t seed : {1, 2, 3}) {
    const auto r = oracle::fusion_gradient_check(seed);
    EXPECT_GT(r.checked, 500);
    EXPECT_LT(r.max_relative_error, 1e-4) << "seed " << seed;
  }
}

TEST(Backward, ZeroPoseWeightMeansExpressionPathOnly) {
  const auto spec = oracle::toy_net_spec();
  Rng rng(7);
  const auto image = oracle::random_image(rng, 16);
  const Eigen::VectorXd hc = Eigen::Vector3d(0.3, -1, 2);
  const auto params = init_params(spec, 7);
  const LossWeights w{0.0, 1.0};
  const auto g = backward(params, spec, forward(params, spec, image, hc).trace, 2, 5, w);
  EXPECT_EQ(g[Layer::PoseHead].weights.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(g[Layer::PoseHead].bias.cwiseAbs().maxCoeff(), 0.0);
  // Detaching the pose head (zero weights) cannot change any other gradient.
  auto detached = params;
  detached[Layer::PoseHead].weights.setZero();
  detached[Layer::PoseHead].bias.setZero();
  const auto gd = backward(detached, spec, forward(detached, spec, image, hc).trace, 2, 5, w);
  for (auto layer : {Layer::Conv1, Layer::Conv2_1, Layer::Conv2_2, Layer::Conv3, Layer::Fc6}) {
    EXPECT_EQ(g[layer].weights, gd[layer].weights) << layer_name(layer);
  }
}

TEST(Backward, HandcraftedInputGetsNoGradient) {
  // fc6 is the only layer touching the handcrafted tail; its weight gradient
  // there is the outer product with a constant input and nothing flows back.
  const auto spec = oracle::toy_net_spec();
  Rng rng(8);
  const auto image = oracle::random_image(rng, 16);
  const auto params = init_params(spec, 8);
  const auto a = backward(params, spec, forward(params, spec, image, Eigen::Vector3d(1, 2, 3)).trace, 0, 0, {});
  const auto b = backward(params, spec, forward(params, spec, image, Eigen::Vector3d(-5, 0, 9)).trace, 0, 0, {});
  // Changing the handcrafted vector changes fc6 activations, but the conv
  // layers only see it through dfc6 via the pool5 columns of fc6.
  const auto g = net_geometry(spec);
  EXPECT_EQ(a[Layer::Fc6].weights.cols(), g.fc6_in);
  EXPECT_NE(a[Layer::Fc6].weights.rightCols(3), b[Layer::Fc6].weights.rightCols(3));
}

TEST(Backward, SaturatedLogitsGiveTinyGradients) {
  auto spec = oracle::toy_net_spec();
  Rng rng(9);
  auto params = init_params(spec, 9);
  // Force the heads to favour the true labels by a margin of 1000.
  params[Layer::PoseHead].weights.setZero();
  params[Layer::PoseHead].bias.setZero();
  params[Layer::PoseHead].bias(3) = 1e3;
  params[Layer::ExprHead].weights.setZero();
  params[Layer::ExprHead].bias.setZero();
  params[Layer::ExprHead].bias(6) = 1e3;
  const auto fwd = forward(params, spec, oracle::random_image(rng, 16), Eigen::Vector3d::Zero());
  EXPECT_LT(max_abs(backward(params, spec, fwd.trace, 3, 6, {})), 1e-6);
}

TEST(Backward, ForeignTraceIsRejected) {
  const auto spec = oracle::toy_net_spec();
  auto other = spec;
  other.fc6 = 7;
  Rng rng(10);
  const auto params = init_params(other, 1);
  const auto fwd = forward(params, other, oracle::random_image(rng, 16), Eigen::Vector3d::Zero());
  try {
    (void)backward(init_params(spec, 1), spec, fwd.trace, 0, 0, {});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::TraceMismatch);
  }
}

TEST(TrainStep, ZeroLearningRateKeepsParams) {
  const auto spec = oracle::toy_net_spec();
  auto params = init_params(spec, 11);
  const auto before = params;
  const auto batch = toy_batch(spec, 4, 11);
  const double loss = train_step(params, spec, batch, {}, 0.0);
  EXPECT_GT(loss, 0.0);
  EXPECT_TRUE(params_equal(params, before));
}

TEST(TrainStep, MemorizesASmallBatch) {
  const auto spec = oracle::toy_net_spec();
  auto params = init_params(spec, 12);
  const auto batch = toy_batch(spec, 8, 12);
  double loss = 0.0;
  for (int step = 0; step < 200; ++step) loss = train_step(params, spec, batch, {}, 0.2);
  // train_step reports the loss before its update; measure after the last one.
  double final_loss = 0.0;
  for (const auto& s : batch) {
    const auto r = forward(params, spec, s.image, s.handcrafted);
    final_loss += joint_loss(r.pose_logits, r.expr_logits, s.pose, s.expr, {}) / 8.0;
  }
  EXPECT_LT(final_loss, 0.05) << "last reported " << loss;
}

TEST(TrainStep, SmallStepsMostlyDecreaseLoss) {
  const auto spec = oracle::toy_net_spec();
  auto params = init_params(spec, 13);
  const auto batch = toy_batch(spec, 8, 13);
  std::vector<double> losses;
  for (int step = 0; step < 100; ++step) losses.push_back(train_step(params, spec, batch, {}, 1e-3));
  int decreasing = 0;
  for (std::size_t i = 1; i < losses.size(); ++i) {
    if (losses[i] <= losses[i - 1]) ++decreasing;
  }
  EXPECT_GE(decreasing, static_cast<int>(std::ceil(0.95 * static_cast<double>(losses.size() - 1))));
}

TEST(TrainStep, IsBitwiseReproducible) {
  const auto spec = oracle::toy_net_spec();
  const auto batch = toy_batch(spec, 6, 14);
  auto a = init_params(spec, 14);
  auto b = init_params(spec, 14);
  for (int i = 0; i < 5; ++i) {
    EXPECT_EQ(train_step(a, spec, batch, {}, 0.1), train_step(b, spec, batch, {}, 0.1));
  }
  EXPECT_TRUE(params_equal(a, b));
}

TEST(TrainStep, RejectsBadInputs) {
  const auto spec = oracle::toy_net_spec();
  auto params = init_params(spec, 15);
  EXPECT_THROW((void)train_step(params, spec, std::vector<FusionSample>{}, {}, 0.1), Error);
  EXPECT_THROW((void)train_step(params, spec, toy_batch(spec, 2, 1), LossWeights{0, 0}, 0.1), Error);
}

TEST(PredictPoseCnn, MatchesFullForwardArgmax) {
  const auto spec = oracle::toy_net_spec();
  const auto params = init_params(spec, 16);
  Rng rng(16);
  for (int i = 0; i < 50; ++i) {
    const auto image = oracle::random_image(rng, 16);
    const auto r = forward(params, spec, image, Eigen::Vector3d::Zero());
    Eigen::Index arg = 0;
    r.pose_logits.maxCoeff(&arg);
    EXPECT_EQ(predict_pose_cnn(params, spec, image).id, static_cast<int>(arg) + 1);
    EXPECT_NEAR((pose_probabilities(params, spec, image) - softmax(r.pose_logits)).norm(), 0.0, 1e-14);
    EXPECT_EQ(predict_pose_cnn(params, spec, image), predict_pose_cnn(params, spec, image));
  }
}

TEST(PredictPoseCnn, AgreesWithLandmarkPoseOnSyntheticFaces) {
  SynthConfig sc;
  sc.n_samples = 1000;
  sc.image_size = 32;
  sc.seed = 17;
  const auto data = synth_generate(sc);
  std::vector<Shape> shapes;
  for (const auto& s : data.dataset.samples) shapes.push_back(s.landmarks);
  const auto stage = fit_pose_stage(shapes, 5);

  NetSpec spec;
  spec.input_size = 32;
  spec.conv1.out = 8;
  spec.conv2_1.out = 8;
  std::vector<FusionSample> train, test;
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    FusionSample f;
    f.image = data.dataset.samples[i].image;
    f.handcrafted = Eigen::VectorXd(0);
    f.pose = assign_pose(stage.model, stage.aligned[i]).id - 1;
    f.expr = index_of(*data.dataset.samples[i].label);
    (i % 5 == 0 ? test : train).push_back(std::move(f));
  }
  FusionTrainConfig fc;
  fc.pose_epochs = 15;
  fc.joint_epochs = 0;
  fc.learning_rate = 0.05;
  fc.seed = 17;
  const auto trained = train_fusion(train, spec, fc);
  int agree = 0;
  for (const auto& f : test) agree += predict_pose_cnn(trained.params, spec, f.image).id == f.pose + 1;
  EXPECT_GE(static_cast<double>(agree) / static_cast<double>(test.size()), 0.85);
}

TEST(FusePoseEstimates, Rule) {
  EXPECT_EQ(fuse_pose_estimates({2}, 0.1, {2}).id, 2);
  EXPECT_EQ(fuse_pose_estimates({1}, 0.9, {2}).id, 1);
  EXPECT_EQ(fuse_pose_estimates({1}, 0.4, {2}).id, 2);
  EXPECT_EQ(fuse_pose_estimates({1}, 0.6, {2}).id, 1);
}

TEST(NetSpecText, RoundTrips) {
  auto spec = oracle::toy_net_spec();
  spec.pool5 = PoolSpec{3, 2};
  const auto back = parse_net_spec(serialize_net_spec(spec));
  EXPECT_EQ(serialize_net_spec(back), serialize_net_spec(spec));
  EXPECT_EQ(back.conv5.out, 4);
  EXPECT_EQ(back.pool5.k, 3);
  EXPECT_THROW((void)parse_net_spec("input_size sixty"), Error);
}

TEST(FusionParamsFile, RoundTrips) {
  const auto spec = oracle::toy_net_spec();
  const auto params = init_params(spec, 18);
  const auto path = (std::filesystem::temp_directory_path() / "posefer_net.bin").string();
  save_fusion_params(params, spec, path);
  NetSpec loaded_spec;
  const auto loaded = load_fusion_params(path, &loaded_spec);
  EXPECT_TRUE(params_equal(params, loaded));
  EXPECT_EQ(serialize_net_spec(loaded_spec), serialize_net_spec(spec));
  std::filesystem::remove(path);
}

TEST(InitParams, XavierBoundsAndZeroBias) {
  NetSpec spec;
  const auto p = init_params(spec, 19);
  const double conv3_bound = std::sqrt(6.0 / (32 * 9 + 32 * 9));
  EXPECT_LE(p[Layer::Conv3].weights.cwiseAbs().maxCoeff(), conv3_bound);
  EXPECT_GT(p[Layer::Conv3].weights.cwiseAbs().maxCoeff(), 0.9 * conv3_bound);
  for (const auto& l : p.layers) EXPECT_EQ(l.bias.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(p.parameter_count(), [&] {
    Eigen::Index n = 0;
    for (const auto& l : p.layers) n += l.weights.size() + l.bias.size();
    return n;
  }());
}
