#include "posefer/posecluster.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "posefer/serialize.hpp"

namespace posefer {

namespace {

constexpr int kNoseTip = 30;

int class_of_bin(const PoseModel& model, int bin) {
  return model.direction > 0 ? bin + 1 : model.k - bin;
}

}  // namespace

Eigen::MatrixXd shape_matrix(std::span<const Shape> shapes) {
  if (shapes.empty()) return {};
  const auto rows = 2 * shapes.front().rows();
  Eigen::MatrixXd m(rows, static_cast<Eigen::Index>(shapes.size()));
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    if (shapes[i].rows() * 2 != rows) {
      throw Error(ErrorCode::ShapeSizeMismatch, "shape_matrix: shapes differ in point count");
    }
    m.col(static_cast<Eigen::Index>(i)) = vectorize(shapes[i]);
  }
  return m;
}

double project_first(const PcaBasis& basis, const Eigen::VectorXd& shape_vec) {
  if (shape_vec.size() != basis.dim()) {
    throw Error(ErrorCode::DimensionMismatch, "project_first: vector length " +
                                                  std::to_string(shape_vec.size()) + " vs basis " +
                                                  std::to_string(basis.dim()));
  }
  if (basis.axis_count() == 0) throw Error(ErrorCode::DimensionMismatch, "project_first: empty basis");
  return (shape_vec - basis.mean).dot(basis.axes.col(0));
}

std::vector<double> split_poses(std::span<const double> projections, int k) {
  if (k < 1) throw Error(ErrorCode::InvalidConfig, "split_poses: k must be positive");
  if (k == 1) return {};
  std::vector<double> sorted(projections.begin(), projections.end());
  std::sort(sorted.begin(), sorted.end());
  const auto m = static_cast<long>(sorted.size());
  std::vector<double> unique_values = sorted;
  unique_values.erase(std::unique(unique_values.begin(), unique_values.end()), unique_values.end());
  if (static_cast<long>(unique_values.size()) < k) {
    throw Error(ErrorCode::NotEnoughDistinctValues,
                std::to_string(unique_values.size()) + " distinct projections for k=" +
                    std::to_string(k));
  }

  // A cut before index b is valid when sorted[b-1] < sorted[b]. Take the
  // valid cut nearest to the ideal quantile boundary, keeping cuts ordered
  // and leaving room for the remaining classes.
  std::vector<long> valid;
  for (long b = 1; b < m; ++b) {
    if (sorted[static_cast<std::size_t>(b - 1)] < sorted[static_cast<std::size_t>(b)]) valid.push_back(b);
  }
  std::vector<double> thresholds;
  std::size_t lo = 0;
  for (int j = 1; j < k; ++j) {
    const long target = (static_cast<long>(j) * m) / k;
    const std::size_t remaining = static_cast<std::size_t>(k - 1 - j);
    const std::size_t hi = valid.size() - 1 - remaining;
    std::size_t best = lo;
    long best_gap = std::labs(valid[lo] - target);
    for (std::size_t i = lo + 1; i <= hi; ++i) {
      const long gap = std::labs(valid[i] - target);
      if (gap < best_gap) {
        best = i;
        best_gap = gap;
      }
    }
    const long b = valid[best];
    thresholds.push_back(0.5 * (sorted[static_cast<std::size_t>(b - 1)] + sorted[static_cast<std::size_t>(b)]));
    lo = best + 1;
  }
  return thresholds;
}

int projection_bin(std::span<const double> thresholds, double projection) {
  return static_cast<int>(std::upper_bound(thresholds.begin(), thresholds.end(), projection) -
                          thresholds.begin());
}

std::vector<Shape> compute_centroids(std::span<const std::vector<Shape>> groups) {
  std::vector<Shape> centroids;
  centroids.reserve(groups.size());
  for (std::size_t g = 0; g < groups.size(); ++g) {
    const auto& group = groups[g];
    if (group.empty()) throw Error(ErrorCode::EmptyGroup, "group " + std::to_string(g + 1) + " is empty");
    Shape sum = Shape::Zero(group.front().rows(), 2);
    for (const auto& s : group) {
      if (s.rows() != sum.rows()) throw Error(ErrorCode::ShapeSizeMismatch, "compute_centroids");
      sum += s;
    }
    centroids.push_back(normalize_shape(sum / static_cast<double>(group.size())));
  }
  return centroids;
}

std::vector<double> centroid_distances(const PoseModel& model, const Shape& normalized_shape) {
  std::vector<double> d;
  d.reserve(model.centroids.size());
  for (const auto& c : model.centroids) {
    if (c.rows() != normalized_shape.rows()) {
      throw Error(ErrorCode::ShapeSizeMismatch, "assign_pose: point count differs from model");
    }
    d.push_back(squared_distance(normalized_shape, c));
  }
  return d;
}

PoseClass assign_pose(const PoseModel& model, const Shape& normalized_shape) {
  const auto d = centroid_distances(model, normalized_shape);
  const auto best = std::min_element(d.begin(), d.end());
  return {static_cast<int>(best - d.begin()) + 1};
}

PoseClass threshold_pose(const PoseModel& model, const Shape& normalized_shape) {
  const double p = project_first(model.basis, vectorize(normalized_shape));
  return {class_of_bin(model, projection_bin(model.thresholds, p))};
}

Shape normalize_for_model(const PoseModel& model, const Shape& shape) {
  return procrustes_align(shape, model.mean_shape).shape;
}

PoseModel fit_pose_model(std::span<const Shape> normalized, const Shape& gpa_mean,
                         const PoseFitOptions& options) {
  if (options.k < 1) throw Error(ErrorCode::InvalidConfig, "pose class count must be positive");
  if (normalized.size() < static_cast<std::size_t>(std::max(options.k, 2))) {
    throw Error(ErrorCode::InsufficientSamples,
                std::to_string(normalized.size()) + " shapes for k=" + std::to_string(options.k));
  }
  PoseModel model;
  model.k = options.k;
  model.mean_shape = gpa_mean;
  model.basis = pca_fit(shape_matrix(normalized));

  const auto n = normalized.front().rows();
  if (n == kLandmarkCount) {
    // Turning toward the subject's left moves the nose tip to +x in the image.
    model.direction = model.basis.axes(kNoseTip, 0) >= 0 ? 1 : -1;
  }

  std::vector<double> proj;
  proj.reserve(normalized.size());
  for (const auto& s : normalized) proj.push_back(project_first(model.basis, vectorize(s)));

  if (options.thresholds) {
    model.thresholds = *options.thresholds;
    if (static_cast<int>(model.thresholds.size()) != options.k - 1 ||
        !std::is_sorted(model.thresholds.begin(), model.thresholds.end()) ||
        std::adjacent_find(model.thresholds.begin(), model.thresholds.end()) != model.thresholds.end()) {
      throw Error(ErrorCode::InvalidConfig, "fixed thresholds must be k-1 strictly increasing values");
    }
  } else {
    model.thresholds = split_poses(proj, options.k);
  }

  std::vector<std::vector<Shape>> groups(static_cast<std::size_t>(options.k));
  for (std::size_t i = 0; i < normalized.size(); ++i) {
    const int cls = class_of_bin(model, projection_bin(model.thresholds, proj[i]));
    groups[static_cast<std::size_t>(cls - 1)].push_back(normalized[i]);
  }
  model.centroids = compute_centroids(groups);
  return model;
}

std::string serialize_pose_model(const PoseModel& model) {
  KeyValueText kv;
  kv.set("format", std::string("posefer-pose-model"));
  kv.set("version", 1LL);
  kv.set("k", static_cast<long long>(model.k));
  kv.set("direction", static_cast<long long>(model.direction));
  kv.set("points", static_cast<long long>(model.mean_shape.rows()));
  kv.set("mean_shape", Eigen::MatrixXd(model.mean_shape));
  kv.set("thresholds", std::span<const double>(model.thresholds));
  kv.set("pca_mean", Eigen::MatrixXd(model.basis.mean));
  kv.set("pca_axes", model.basis.axes);
  kv.set("pca_variances", Eigen::MatrixXd(model.basis.variances));
  kv.set("pca_total_variance", model.basis.total_variance);
  for (std::size_t c = 0; c < model.centroids.size(); ++c) {
    kv.set("centroid_" + std::to_string(c + 1), Eigen::MatrixXd(model.centroids[c]));
  }
  return kv.str();
}

PoseModel deserialize_pose_model(const std::string& text) {
  const auto kv = KeyValueText::parse(text);
  if (kv.get("format") != "posefer-pose-model") throw Error(ErrorCode::ParseError, "not a pose model");
  if (kv.get_int("version") != 1) throw Error(ErrorCode::ParseError, "unsupported pose model version");
  PoseModel model;
  model.k = static_cast<int>(kv.get_int("k"));
  model.direction = static_cast<int>(kv.get_int("direction"));
  model.mean_shape = kv.get_matrix("mean_shape");
  model.thresholds = kv.has("thresholds") && !kv.get("thresholds").empty() ? kv.get_doubles("thresholds")
                                                                            : std::vector<double>{};
  model.basis.mean = kv.get_matrix("pca_mean");
  model.basis.axes = kv.get_matrix("pca_axes");
  model.basis.variances = kv.get_matrix("pca_variances");
  model.basis.total_variance = kv.get_double("pca_total_variance");
  for (int c = 1; c <= model.k; ++c) {
    model.centroids.push_back(kv.get_matrix("centroid_" + std::to_string(c)));
  }
  if (model.mean_shape.cols() != 2 || static_cast<int>(model.thresholds.size()) != model.k - 1) {
    throw Error(ErrorCode::ParseError, "inconsistent pose model");
  }
  return model;
}

void save_pose_model(const PoseModel& model, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path);
  out << serialize_pose_model(model);
}

PoseModel load_pose_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return deserialize_pose_model(ss.str());
}

}  // namespace posefer
