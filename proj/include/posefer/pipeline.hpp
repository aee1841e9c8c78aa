#pragma once

// End-to-end orchestration: grouped split, GPA and pose model, hand-crafted
// features, per-pose and pose-agnostic classifiers, evaluation.

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "posefer/classify.hpp"
#include "posefer/dataset.hpp"
#include "posefer/error.hpp"
#include "posefer/features.hpp"
#include "posefer/fusionnet.hpp"
#include "posefer/posecluster.hpp"
#include "posefer/report.hpp"

namespace posefer {

enum class ClassifierKind { Linear, Forest, Fusion };
std::string_view classifier_name(ClassifierKind kind);
ClassifierKind parse_classifier(std::string_view name);

struct FeatureToggles {
  bool sift = true;
  bool tplbp_grid = true;
  bool tplbp_region = false;
  bool geom = true;

  bool any() const { return sift || tplbp_grid || tplbp_region || geom; }
};

/// Comma list of sift, tplbp (grid), tplbp_grid, tplbp_region, geom.
FeatureToggles parse_feature_list(std::string_view list);
std::string format_feature_list(const FeatureToggles& f);

struct PipelineConfig {
  int k_poses = 5;
  FeatureToggles features;
  /// Variance share kept by the SIFT PCA reduction.
  double pca_fraction = 0.95;
  /// Training rows used to fit the SIFT PCA; 0 means all.
  int pca_max_fit_samples = 800;
  /// 0 picks the radius from the landmark spacing of each face.
  double sift_patch_radius = 0.0;
  TplbpParams tplbp;
  ClassifierKind classifier = ClassifierKind::Linear;
  /// Combined features have roughly unit norm, so the step is larger than
  /// the classifier default. The stronger L2 term keeps one linear model from
  /// memorizing pose-specific appearance.
  TrainConfig train = [] {
    TrainConfig t;
    t.learning_rate = 1.0;
    t.l2_lambda = 0.01;
    return t;
  }();
  bool hard_mining = false;
  NetSpec net;
  FusionTrainConfig fusion;
  /// In fusion mode, combine the CNN pose with the landmark pose.
  bool cnn_pose = true;
  std::uint64_t seed = 1;
  double train_ratio = 0.70;
  /// Mirror every sample before splitting.
  bool add_flips = false;
  /// Include per-stage wall time in the report (breaks byte-identical output).
  bool timing = false;

  void validate() const;
};

std::vector<std::pair<std::string, std::string>> config_entries(const PipelineConfig& config);
std::string format_pipeline_config(const PipelineConfig& config);
/// `key: value` lines; unknown keys are rejected. Starts from `base`.
PipelineConfig parse_pipeline_config(const std::string& text, PipelineConfig base = {});
PipelineConfig load_pipeline_config(const std::string& path, PipelineConfig base = {});

/// Error raised inside a pipeline stage; the message is prefixed with it.
class PipelineError : public Error {
 public:
  PipelineError(std::string stage, const Error& inner);
  const std::string& stage() const noexcept { return stage_; }

 private:
  std::string stage_;
};

// ---------------------------------------------------------------------------
// stages

struct PoseStage {
  PoseModel model;
  /// GPA-aligned training shapes, in input order.
  std::vector<Shape> aligned;
};

PoseStage fit_pose_stage(std::span<const Shape> landmarks, int k);

/// Per-family feature vectors of one face, each normalized to zero mean and
/// unit norm. Missing families are empty.
struct RawFeatures {
  Eigen::VectorXd sift;
  Eigen::VectorXd tplbp_grid;
  Eigen::VectorXd tplbp_region;
  Eigen::VectorXd geom;
};

RawFeatures extract_raw(const Sample& sample, const Shape& normalized_shape, const PipelineConfig& config);

/// SIFT PCA plus per-dimension standardization fitted on training rows. Each
/// family block is scaled to the same expected squared norm.
struct FeatureTransform {
  FeatureToggles features;
  std::optional<PcaReducer> sift_reducer;
  Eigen::VectorXd mean;
  Eigen::VectorXd scale;
  /// Length of each family block in the combined vector, in family order.
  std::vector<std::pair<FeatureFamily, Eigen::Index>> blocks;

  Eigen::Index dim() const { return mean.size(); }
};

FeatureTransform fit_transform(std::span<const RawFeatures> train, const PipelineConfig& config);
Eigen::VectorXd apply_transform(const FeatureTransform& transform, const RawFeatures& raw);

std::string serialize_transform(const FeatureTransform& transform);
FeatureTransform deserialize_transform(const std::string& text);

/// Per-pose classifiers plus the pose-agnostic one.
struct ModelBundle {
  std::map<int, Classifier> per_pose;
  Classifier agnostic;
  std::vector<std::string> warnings;
};

/// Balances, trains and optionally mines hard examples.
Classifier train_with_policy(std::span<const LabeledSample> samples, const PipelineConfig& config,
                             std::uint64_t seed);

ModelBundle train_models(std::span<const LabeledSample> train, const PipelineConfig& config);

/// Builds a report from per-sample predictions.
struct EvalRecord {
  Expression truth = Expression::Neutral;
  int pose = 1;
  Expression pose_aware = Expression::Neutral;
  Expression agnostic = Expression::Neutral;
};

Report build_report(std::span<const EvalRecord> records, int k, std::span<const std::int64_t> train_counts,
                    std::span<const int> fallback_poses);

Report evaluate_models(const ModelBundle& models, std::span<const LabeledSample> test, int k,
                       std::span<const std::int64_t> train_counts);

Report run_pipeline(const PipelineConfig& config, const Dataset& dataset);

}  // namespace posefer
