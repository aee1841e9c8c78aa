#pragma once

// Synthetic faces with known yaw and expression: a bilaterally symmetric
// 68-point template with depth, symmetric expression deformations, an
// orthographic yaw rotation and a crude stroke renderer.

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "posefer/classify.hpp"
#include "posefer/dataset.hpp"
#include "posefer/rng.hpp"

namespace posefer {

struct SynthConfig {
  int n_samples = 2000;
  double yaw_min_deg = -60.0;
  double yaw_max_deg = 60.0;
  int image_size = 64;
  /// Landmark jitter in template units (face half-width = 1).
  double noise_sigma = 0.01;
  /// Additive Gaussian pixel noise.
  double pixel_noise = 0.02;
  /// Spread of the per-identity shape parameters.
  double identity_sigma = 0.04;
  /// Expression intensity is drawn uniformly from [min, 1].
  double intensity_min = 0.6;
  /// Views rendered per identity; views of one identity share a group id.
  int views_per_identity = 1;
  /// Class proportions in Expression order; normalized internally.
  std::array<double, kExpressionCount> label_distribution{0.45, 0.40, 0.03, 0.03, 0.03, 0.03, 0.03};
  /// Beyond |yaw| > confound_yaw_deg each label is rendered with its partner
  /// archetype (see confounded_archetype), so the appearance of an
  /// expression depends on head pose.
  bool confound = false;
  double confound_yaw_deg = 30.0;
  /// Only used to validate n_samples >= 7 * k_poses.
  int k_poses = 5;
  std::uint64_t seed = 1;

  void validate() const;
  /// No landmark jitter and no identity variation.
  static SynthConfig noise_free();
};

/// Template points as (x, y, z): x to the image right, y down, z toward the
/// camera. Mirror pairs of the default flip permutation have (-x, y, z).
const Eigen::Matrix<double, kLandmarkCount, 3>& synth_template();

/// Per-landmark (dx, dy) of an expression at full intensity; mirror
/// symmetric like the template.
Eigen::Matrix<double, kLandmarkCount, 2> expression_displacement(Expression e);

/// Archetype pairs swapped by the confound: Neutral/Happy, Sad/Fear,
/// Angry/Surprise; Disgust is kept.
Expression confounded_archetype(Expression e);

inline constexpr int kIdentityParams = 5;

struct FaceParams {
  double yaw_deg = 0.0;
  Expression expression = Expression::Neutral;
  double intensity = 1.0;
  /// Symmetric shape offsets: face width, eye spacing, mouth width, nose
  /// length, jaw length.
  Eigen::Matrix<double, kIdentityParams, 1> identity = Eigen::Matrix<double, kIdentityParams, 1>::Zero();
};

/// Landmarks in template units before projection to pixels.
Eigen::Matrix<double, kLandmarkCount, 3> face_points(const FaceParams& face, bool confound, double confound_yaw_deg);

/// Orthographic yaw about the vertical axis, x' = x cos(yaw) + z sin(yaw),
/// then scaled into a size x size image centered at (size - 1) / 2.
Shape project_face(const Eigen::Matrix<double, kLandmarkCount, 3>& points, double yaw_deg, int size);

Shape synth_landmarks(const FaceParams& face, const SynthConfig& config);

/// Face ellipse plus dark strokes through brows, eyes, nose, mouth and jaw.
GrayImage render_face(const Shape& landmarks, int size, double pixel_noise, Rng& rng);

struct SynthTruth {
  double yaw_deg = 0.0;
  Expression expression = Expression::Neutral;
  int identity = 0;
};

struct SynthDataset {
  Dataset dataset;
  std::vector<SynthTruth> truth;
};

SynthDataset synth_generate(const SynthConfig& config);

/// Writes images/, pts/, manifest.csv and truth.csv under `dir`; returns the
/// manifest as written.
DatasetManifest write_synth_dataset(const SynthDataset& data, const std::string& dir);

}  // namespace posefer
