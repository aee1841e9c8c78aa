#pragma once

// Head-pose classes from normalized landmarks: PCA over vectorized shapes,
// quantile thresholds on the first-axis projection, one central shape per
// class, and nearest-centroid assignment.

#include <compare>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "posefer/pca.hpp"
#include "posefer/shape.hpp"

namespace posefer {

/// 1-based pose class; 1 is the extreme right turn, k the extreme left turn.
struct PoseClass {
  int id = 1;
  auto operator<=>(const PoseClass&) const = default;
};

struct PoseModel {
  /// GPA mean shape new samples are aligned to before assignment.
  Shape mean_shape;
  PcaBasis basis;
  int k = 5;
  /// k-1 strictly increasing cut points on the first-axis projection.
  std::vector<double> thresholds;
  /// centroids[c] is the central shape of class c+1.
  std::vector<Shape> centroids;
  /// +1 if class ids grow with the projection, -1 if they shrink.
  int direction = 1;
};

struct PoseFitOptions {
  int k = 5;
  /// Fixed cut points instead of equal-frequency quantiles.
  std::optional<std::vector<double>> thresholds;
};

/// One column per shape, laid out as (x_1..x_N, y_1..y_N).
Eigen::MatrixXd shape_matrix(std::span<const Shape> shapes);

double project_first(const PcaBasis& basis, const Eigen::VectorXd& shape_vec);

/// Equal-frequency cut points at midpoints between quantile neighbours.
std::vector<double> split_poses(std::span<const double> projections, int k);

/// 0-based bin of a projection given increasing thresholds.
int projection_bin(std::span<const double> thresholds, double projection);

/// Pointwise mean of each group, re-centered and scaled to unit size.
std::vector<Shape> compute_centroids(std::span<const std::vector<Shape>> groups);

/// Summed squared point distance to each centroid, indexed by class id - 1.
std::vector<double> centroid_distances(const PoseModel& model, const Shape& normalized_shape);

/// Nearest centroid; ties go to the lowest class id.
PoseClass assign_pose(const PoseModel& model, const Shape& normalized_shape);

/// Class implied by the first-axis threshold split alone.
PoseClass threshold_pose(const PoseModel& model, const Shape& normalized_shape);

/// Procrustes-aligns a raw landmark shape onto the model's mean shape.
Shape normalize_for_model(const PoseModel& model, const Shape& shape);

/// pca_fit -> project_first -> split_poses -> grouping -> compute_centroids.
/// `normalized` are GPA-aligned shapes, `gpa_mean` the GPA mean.
PoseModel fit_pose_model(std::span<const Shape> normalized, const Shape& gpa_mean,
                         const PoseFitOptions& options = {});

std::string serialize_pose_model(const PoseModel& model);
PoseModel deserialize_pose_model(const std::string& text);
void save_pose_model(const PoseModel& model, const std::string& path);
PoseModel load_pose_model(const std::string& path);

}  // namespace posefer
