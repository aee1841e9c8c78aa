#pragma once

// Expression classifiers on hand-crafted features: one-vs-rest linear hinge
// model trained by SGD, a Gini random forest, class balancing, hard-example
// mining and confusion matrices.

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "posefer/posecluster.hpp"

namespace posefer {

enum class Expression : int { Neutral = 0, Happy, Sad, Fear, Angry, Surprise, Disgust };

inline constexpr int kExpressionCount = 7;
inline constexpr std::array<Expression, kExpressionCount> kAllExpressions{
    Expression::Neutral, Expression::Happy, Expression::Sad,     Expression::Fear,
    Expression::Angry,   Expression::Surprise, Expression::Disgust};

std::string_view expression_name(Expression e);
/// Case-insensitive match against the seven label names.
std::optional<Expression> parse_expression(std::string_view name);
inline int index_of(Expression e) { return static_cast<int>(e); }

using ClassScores = std::array<double, kExpressionCount>;

struct LabeledSample {
  Eigen::VectorXd feature;
  Expression label = Expression::Neutral;
  PoseClass pose;
  std::string group_id;
};

enum class Balancing { None, Undersample, Oversample, ClassWeights };
std::string_view balancing_name(Balancing b);
Balancing parse_balancing(std::string_view name);

struct ForestConfig {
  int trees = 50;
  /// 0 means unbounded.
  int max_depth = 0;
  int min_leaf = 1;
  bool bootstrap = true;
  /// Features tried per node; 0 means round(sqrt(D)).
  int features_per_node = 0;
};

struct TrainConfig {
  int epochs = 30;
  double learning_rate = 0.1;
  double l2_lambda = 1e-4;
  std::uint64_t seed = 1;
  Balancing balancing = Balancing::None;
  double hard_mining_band = 0.0;
  /// Per-class hinge weights; filled by balance() under ClassWeights.
  ClassScores class_weights{1, 1, 1, 1, 1, 1, 1};
  ForestConfig forest;
};

struct LinearModel {
  /// One row per expression class.
  Eigen::MatrixXd weights;
  Eigen::VectorXd bias;
  TrainConfig config;
  /// Full-set objective (mean weighted hinge + lambda ||W||^2) after each epoch.
  std::vector<double> objective_history;

  Eigen::Index dim() const { return weights.cols(); }
};

struct TreeNode {
  /// -1 marks a leaf.
  int feature = -1;
  double threshold = 0.0;
  int left = -1;
  int right = -1;
  ClassScores counts{};
};

struct DecisionTree {
  /// nodes[0] is the root; children always follow their parent.
  std::vector<TreeNode> nodes;

  const TreeNode& leaf_for(const Eigen::VectorXd& x) const;
};

struct ForestModel {
  std::vector<DecisionTree> trees;
  Eigen::Index dim = 0;
  ForestConfig config;
  /// Out-of-bag accuracy; NaN when no sample was ever out of bag.
  double oob_accuracy = 0.0;
};

using Classifier = std::variant<LinearModel, ForestModel>;

struct Prediction {
  Expression label = Expression::Neutral;
  ClassScores scores{};
};

/// Index of the largest score; ties go to the lowest index.
int argmax_lowest(std::span<const double> scores);

LinearModel train_linear(std::span<const LabeledSample> samples, const TrainConfig& config);
ForestModel train_forest(std::span<const LabeledSample> samples, const TrainConfig& config);
Classifier train_classifier(std::span<const LabeledSample> samples, const TrainConfig& config, bool forest);

/// Objective used for LinearModel::objective_history.
double linear_objective(const LinearModel& model, std::span<const LabeledSample> samples,
                        const TrainConfig& config);

Prediction predict(const LinearModel& model, const Eigen::VectorXd& feature);
Prediction predict(const ForestModel& model, const Eigen::VectorXd& feature);
Prediction predict(const Classifier& model, const Eigen::VectorXd& feature);

struct BalanceResult {
  std::vector<LabeledSample> samples;
  /// majority_count / class_count for present classes, 1 elsewhere.
  ClassScores class_weights{1, 1, 1, 1, 1, 1, 1};
};

/// Equalizes class counts over the classes present in `samples`.
BalanceResult balance(std::span<const LabeledSample> samples, Balancing strategy, std::uint64_t seed);

/// Samples that are misclassified or whose top-two score margin is below
/// `band`, in input order.
std::vector<LabeledSample> mine_hard_examples(const Classifier& model, std::span<const LabeledSample> samples,
                                              double band);

struct ConfusionMatrix {
  /// Rows are true labels, columns predictions.
  Eigen::Matrix<std::int64_t, kExpressionCount, kExpressionCount> counts =
      Eigen::Matrix<std::int64_t, kExpressionCount, kExpressionCount>::Zero();

  void add(Expression truth, Expression predicted) { ++counts(index_of(truth), index_of(predicted)); }
  std::int64_t total() const { return counts.sum(); }
  std::int64_t correct() const { return counts.trace(); }
  ConfusionMatrix& operator+=(const ConfusionMatrix& other) {
    counts += other.counts;
    return *this;
  }
  bool operator==(const ConfusionMatrix& other) const { return counts == other.counts; }
};

ConfusionMatrix evaluate(const Classifier& model, std::span<const LabeledSample> samples);

/// trace / total; throws EmptyMatrix when the matrix holds no samples.
double confusion_accuracy(const ConfusionMatrix& matrix);

void save_classifier(const Classifier& model, const std::string& path);
Classifier load_classifier(const std::string& path);

}  // namespace posefer
