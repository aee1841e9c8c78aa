#pragma once

// Landmark shapes and Procrustes superimposition.
//
// A shape is an N x 2 Eigen matrix, one landmark per row. All operations are
// free functions templated on the scalar type so they accept Eigen
// expressions (blocks, maps, products) as well as plain matrices.

#include <cmath>
#include <cstddef>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "posefer/error.hpp"

namespace posefer {

template <typename Scalar>
using ShapeT = Eigen::Matrix<Scalar, Eigen::Dynamic, 2>;
using Shape = ShapeT<double>;

template <typename Scalar>
using Point2T = Eigen::Matrix<Scalar, 1, 2>;
using Point2 = Point2T<double>;

/// Mirror table: entry j is the source landmark index for output slot j.
using Permutation = std::vector<int>;

inline constexpr int kLandmarkCount = 68;

/// Maps a shape onto the frame of a reference:
///   aligned = R(theta) * (p - (tx, ty)) / s_ratio
template <typename Scalar>
struct SimilarityTransformT {
  Scalar tx = 0;
  Scalar ty = 0;
  Scalar s_ratio = 1;
  Scalar theta = 0;

  template <typename Derived>
  ShapeT<Scalar> apply(const Eigen::MatrixBase<Derived>& shape) const {
    Eigen::Matrix<Scalar, 2, 2> rot;
    rot << std::cos(theta), -std::sin(theta), std::sin(theta), std::cos(theta);
    const Point2T<Scalar> t(tx, ty);
    return ((shape.rowwise() - t) / s_ratio) * rot.transpose();
  }
};
using SimilarityTransform = SimilarityTransformT<double>;

template <typename Scalar>
struct AlignmentT {
  ShapeT<Scalar> shape;
  SimilarityTransformT<Scalar> transform;
};
using Alignment = AlignmentT<double>;

template <typename Scalar>
struct CenteredT {
  ShapeT<Scalar> shape;
  Point2T<Scalar> centroid;
};
using Centered = CenteredT<double>;

template <typename Scalar>
struct GpaResultT {
  ShapeT<Scalar> mean_shape;
  std::vector<ShapeT<Scalar>> aligned_shapes;
  int iterations_run = 0;
  Scalar final_mean_delta = 0;
  /// RMS point displacement of the mean at each iteration.
  std::vector<Scalar> delta_history;
};
using GpaResult = GpaResultT<double>;

struct GpaOptions {
  int max_iterations = 100;
  double tolerance = 1e-10;
};

template <typename Derived>
void validate_shape(const Eigen::MatrixBase<Derived>& shape) {
  if (shape.cols() != 2) {
    throw Error(ErrorCode::InvalidShape, "shape must have 2 columns");
  }
  if (shape.rows() < 2) {
    throw Error(ErrorCode::InvalidShape, "shape needs at least 2 points");
  }
  if (!shape.allFinite()) {
    throw Error(ErrorCode::InvalidShape, "shape has non-finite coordinates");
  }
}

template <typename Derived>
CenteredT<typename Derived::Scalar> center(const Eigen::MatrixBase<Derived>& shape) {
  using Scalar = typename Derived::Scalar;
  // Evaluate once so lazy expressions (including random ones) are read a single time.
  const ShapeT<Scalar> s = shape;
  const Point2T<Scalar> c = s.colwise().mean();
  return {s.rowwise() - c, c};
}

/// RMS distance of the points from their centroid.
template <typename Derived>
typename Derived::Scalar scale_of(const Eigen::MatrixBase<Derived>& shape) {
  using Scalar = typename Derived::Scalar;
  const ShapeT<Scalar> s = shape;
  const Point2T<Scalar> c = s.colwise().mean();
  return std::sqrt((s.rowwise() - c).squaredNorm() / static_cast<Scalar>(s.rows()));
}

/// Rotates every point counter-clockwise (in a y-up frame) by theta about the origin.
template <typename Derived>
ShapeT<typename Derived::Scalar> rotate(const Eigen::MatrixBase<Derived>& shape,
                                        typename Derived::Scalar theta) {
  using Scalar = typename Derived::Scalar;
  Eigen::Matrix<Scalar, 2, 2> rot;
  rot << std::cos(theta), -std::sin(theta), std::sin(theta), std::cos(theta);
  return shape * rot.transpose();
}

/// Wraps an angle into [-pi, pi).
template <typename Scalar>
Scalar wrap_angle(Scalar theta) {
  const Scalar two_pi = 2 * std::numbers::pi_v<Scalar>;
  Scalar wrapped = std::fmod(theta + std::numbers::pi_v<Scalar>, two_pi);
  if (wrapped < 0) wrapped += two_pi;
  wrapped -= std::numbers::pi_v<Scalar>;
  if (wrapped >= std::numbers::pi_v<Scalar>) wrapped -= two_pi;
  return wrapped;
}

/// Summed squared point distance between two shapes of equal size.
template <typename DerivedA, typename DerivedB>
typename DerivedA::Scalar squared_distance(const Eigen::MatrixBase<DerivedA>& a,
                                           const Eigen::MatrixBase<DerivedB>& b) {
  return (a - b).squaredNorm();
}

/// RMS point displacement between two shapes of equal size.
template <typename DerivedA, typename DerivedB>
typename DerivedA::Scalar rms_displacement(const Eigen::MatrixBase<DerivedA>& a,
                                           const Eigen::MatrixBase<DerivedB>& b) {
  using Scalar = typename DerivedA::Scalar;
  return std::sqrt((a - b).squaredNorm() / static_cast<Scalar>(a.rows()));
}

/// Rotation angle minimizing sum_i |R(theta) p_i - c_i|^2 for two centered
/// shapes p (shape) and c (reference).
template <typename DerivedA, typename DerivedB>
typename DerivedA::Scalar optimal_rotation(const Eigen::MatrixBase<DerivedA>& shape,
                                           const Eigen::MatrixBase<DerivedB>& reference) {
  using Scalar = typename DerivedA::Scalar;
  if (shape.rows() != reference.rows()) {
    throw Error(ErrorCode::ShapeSizeMismatch, "optimal_rotation: point counts differ");
  }
  if (scale_of(shape) == Scalar(0) || scale_of(reference) == Scalar(0)) {
    throw Error(ErrorCode::DegenerateShape, "optimal_rotation: zero-scale shape");
  }
  const auto x = shape.col(0);
  const auto y = shape.col(1);
  const auto xc = reference.col(0);
  const auto yc = reference.col(1);
  const Scalar sin_term = (x.cwiseProduct(yc) - y.cwiseProduct(xc)).sum();
  const Scalar cos_term = (x.cwiseProduct(xc) + y.cwiseProduct(yc)).sum();
  return wrap_angle(std::atan2(sin_term, cos_term));
}

/// Translation, scaling and rotation of `shape` onto `reference`. The result
/// is centered at the origin and has the reference's scale.
template <typename DerivedA, typename DerivedB>
AlignmentT<typename DerivedA::Scalar> procrustes_align(const Eigen::MatrixBase<DerivedA>& shape,
                                                       const Eigen::MatrixBase<DerivedB>& reference) {
  using Scalar = typename DerivedA::Scalar;
  validate_shape(shape);
  validate_shape(reference);
  if (shape.rows() != reference.rows()) {
    throw Error(ErrorCode::ShapeSizeMismatch,
                "procrustes_align: " + std::to_string(shape.rows()) + " vs " +
                    std::to_string(reference.rows()) + " points");
  }
  const Scalar s_shape = scale_of(shape);
  const Scalar s_ref = scale_of(reference);
  if (s_shape == Scalar(0) || s_ref == Scalar(0)) {
    throw Error(ErrorCode::DegenerateShape, "procrustes_align: zero-scale shape");
  }
  const auto centered = center(shape);
  const ShapeT<Scalar> ref_centered = center(reference).shape;
  SimilarityTransformT<Scalar> transform;
  transform.tx = centered.centroid(0);
  transform.ty = centered.centroid(1);
  transform.s_ratio = s_shape / s_ref;
  const ShapeT<Scalar> rescaled = centered.shape / transform.s_ratio;
  transform.theta = optimal_rotation(rescaled, ref_centered);
  return {rotate(rescaled, transform.theta), transform};
}

/// Centers a shape and scales it to unit RMS radius.
template <typename Derived>
ShapeT<typename Derived::Scalar> normalize_shape(const Eigen::MatrixBase<Derived>& shape) {
  using Scalar = typename Derived::Scalar;
  const Scalar s = scale_of(shape);
  if (s == Scalar(0)) {
    throw Error(ErrorCode::DegenerateShape, "normalize_shape: zero-scale shape");
  }
  return center(shape).shape / s;
}

/// Iterative generalized Procrustes analysis.
template <typename Scalar>
GpaResultT<Scalar> gpa(std::span<const ShapeT<Scalar>> shapes, const GpaOptions& options = {}) {
  if (shapes.size() < 2) {
    throw Error(ErrorCode::InsufficientSamples, "gpa needs at least 2 shapes");
  }
  const auto n_points = shapes.front().rows();
  std::vector<ShapeT<Scalar>> normalized;
  normalized.reserve(shapes.size());
  for (const auto& s : shapes) {
    validate_shape(s);
    if (s.rows() != n_points) {
      throw Error(ErrorCode::ShapeSizeMismatch, "gpa: shapes differ in point count");
    }
    normalized.push_back(normalize_shape(s));
  }

  // Start from the plain average so the result does not depend on input
  // order. Rotated inputs can cancel out; fall back to the first shape then.
  ShapeT<Scalar> mean = ShapeT<Scalar>::Zero(n_points, 2);
  for (const auto& s : normalized) mean += s;
  mean /= static_cast<Scalar>(normalized.size());
  mean = scale_of(mean) > Scalar(0.05) ? normalize_shape(mean) : normalized.front();

  GpaResultT<Scalar> result;
  result.aligned_shapes.resize(shapes.size());
  for (int it = 0; it < options.max_iterations; ++it) {
    ShapeT<Scalar> sum = ShapeT<Scalar>::Zero(n_points, 2);
    for (std::size_t i = 0; i < normalized.size(); ++i) {
      result.aligned_shapes[i] = procrustes_align(normalized[i], mean).shape;
      sum += result.aligned_shapes[i];
    }
    ShapeT<Scalar> next = normalize_shape(sum);
    // Keep the mean's orientation pinned to the previous estimate.
    next = rotate(next, optimal_rotation(next, mean));
    const Scalar delta = rms_displacement(next, mean);
    mean = std::move(next);
    result.delta_history.push_back(delta);
    result.iterations_run = it + 1;
    result.final_mean_delta = delta;
    if (delta < options.tolerance) break;
  }
  for (std::size_t i = 0; i < normalized.size(); ++i) {
    result.aligned_shapes[i] = procrustes_align(normalized[i], mean).shape;
  }
  result.mean_shape = std::move(mean);
  return result;
}

template <typename Scalar>
GpaResultT<Scalar> gpa(const std::vector<ShapeT<Scalar>>& shapes, const GpaOptions& options = {}) {
  return gpa(std::span<const ShapeT<Scalar>>(shapes), options);
}

/// Throws InvalidPermutation unless `perm` is a bijection on 0..n-1 that is
/// its own inverse.
void validate_permutation(const Permutation& perm, std::size_t n);

/// Mirror a shape horizontally and reorder its points. With `mirror_extent`
/// the new x is extent - x (image flip); without it the new x is -x.
template <typename Derived>
ShapeT<typename Derived::Scalar> flip_reorder(const Eigen::MatrixBase<Derived>& shape,
                                              const Permutation& perm,
                                              std::optional<double> mirror_extent = std::nullopt) {
  using Scalar = typename Derived::Scalar;
  validate_permutation(perm, static_cast<std::size_t>(shape.rows()));
  ShapeT<Scalar> out(shape.rows(), 2);
  const Scalar extent = mirror_extent ? static_cast<Scalar>(*mirror_extent) : Scalar(0);
  for (Eigen::Index j = 0; j < shape.rows(); ++j) {
    const auto src = perm[static_cast<std::size_t>(j)];
    out(j, 0) = extent - shape(src, 0);
    out(j, 1) = shape(src, 1);
  }
  return out;
}

/// The conventional left/right mirror table for the 68-point layout.
const Permutation& default_flip_permutation();

/// Reads a `src_index dst_index` table (0-based, `#` comments). Pairs are
/// symmetric; indices that never appear map to themselves.
Permutation load_permutation(const std::string& path, std::size_t n = kLandmarkCount);

/// Stacks a shape as (x_1..x_N, y_1..y_N).
template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, 1> vectorize(
    const Eigen::MatrixBase<Derived>& shape) {
  Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, 1> v(2 * shape.rows());
  v << shape.col(0), shape.col(1);
  return v;
}

template <typename Derived>
ShapeT<typename Derived::Scalar> unvectorize(const Eigen::MatrixBase<Derived>& v) {
  const auto n = v.size() / 2;
  ShapeT<typename Derived::Scalar> s(n, 2);
  s.col(0) = v.head(n);
  s.col(1) = v.tail(n);
  return s;
}

}  // namespace posefer
