#pragma once

// Hand-crafted face descriptors: upright SIFT at landmark positions, LBP and
// three-patch LBP histograms, geometric landmark vectors, normalization and
// PCA reduction.

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "posefer/image.hpp"
#include "posefer/pca.hpp"
#include "posefer/shape.hpp"

namespace posefer {

enum class FeatureFamily : std::uint32_t { Sift = 1, TplbpGrid = 2, TplbpRegion = 3, Geom = 4, Combined = 5 };

std::string_view family_name(FeatureFamily family);
FeatureFamily parse_family(std::string_view name);

struct FeatureVector {
  FeatureFamily family = FeatureFamily::Combined;
  Eigen::VectorXd values;

  Eigen::Index dim() const { return values.size(); }
};

inline constexpr Eigen::Index kSiftDescriptorDim = 128;
inline constexpr Eigen::Index kSiftFaceDim = kSiftDescriptorDim * kLandmarkCount;  // 8704
inline constexpr Eigen::Index kGeomDim = 2 * kLandmarkCount;                        // 136
inline constexpr int kLbpBins = 256;

// ---------------------------------------------------------------------------
// gradients and SIFT

struct GradientField {
  PixelMatrix magnitude;
  /// Radians in [0, 2*pi), measured from +x toward +y (image rows grow down).
  PixelMatrix orientation;
};

/// Central differences in the interior, one-sided differences on the border.
GradientField image_gradients(const GrayImage& image);

struct SiftParams {
  /// Half-width of the square descriptor support, in pixels.
  double patch_radius = 8.0;
  int spatial_bins = 4;
  int orientation_bins = 8;
  double clip_threshold = 0.2;

  void validate() const;
};

/// 2.5 x the mean nearest-neighbour landmark spacing, clamped to [6, 24] px.
double default_patch_radius(const Shape& landmarks);

/// Upright 128-d descriptor centered on `point`. Support outside the image
/// contributes nothing.
Eigen::VectorXd sift_descriptor_at(const GradientField& gradients, const Point2& point,
                                   const SiftParams& params);
Eigen::VectorXd sift_descriptor_at(const GrayImage& image, const Point2& point, const SiftParams& params);

/// One descriptor per landmark, concatenated in landmark order.
FeatureVector sift_face_feature(const GrayImage& image, const Shape& landmarks, const SiftParams& params);

// ---------------------------------------------------------------------------
// LBP / TPLBP

/// Basic LBP: bit i is set when ring sample i is strictly brighter than the
/// center. Samples start east and go counter-clockwise (north is -y).
std::uint8_t lbp_code(const GrayImage& image, int x, int y, double radius);

struct TplbpParams {
  double ring_radius = 2.0;
  int patch_count = 8;
  int patch_size = 3;
  int alpha = 2;
  double tau = 0.01;
  int grid_rows = 4;
  int grid_cols = 4;

  void validate() const;
  /// Distance from a coded pixel to the image border needed for all patches.
  int margin() const;
};

/// Bit i is set when D(P_i, P_c) - D(P_{(i+alpha) mod S}, P_c) >= tau, with D
/// the summed squared difference between w x w patches.
std::uint8_t tplbp_code(const GrayImage& image, int x, int y, const TplbpParams& params);

/// Codes for every pixel far enough from the border.
struct CodeMap {
  int x0 = 0;
  int y0 = 0;
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> codes;

  std::uint8_t at(int x, int y) const {
    return codes[static_cast<std::size_t>(y - y0) * static_cast<std::size_t>(width) +
                 static_cast<std::size_t>(x - x0)];
  }
};

CodeMap tplbp_code_map(const GrayImage& image, const TplbpParams& params);

/// Pixel rectangle [x, x+width) x [y, y+height).
struct Rect {
  int x = 0;
  int y = 0;
  int width = 0;
  int height = 0;
};

FeatureVector tplbp_grid_feature(const GrayImage& image, const TplbpParams& params);
FeatureVector tplbp_region_feature(const GrayImage& image, std::span<const Rect> regions,
                                   const TplbpParams& params);

/// Brows, eyes, nose and mouth bounding boxes with 20% padding, clipped to
/// the codable area of a width x height image.
std::vector<Rect> default_face_regions(const Shape& landmarks, int width, int height,
                                       const TplbpParams& params);

// ---------------------------------------------------------------------------
// geometry, normalization, reduction

/// (x_1..x_68, y_1..y_68)
FeatureVector geometric_feature(const Shape& landmarks);

/// Zero mean, unit Euclidean norm; a zero-norm input maps to zeros.
Eigen::VectorXd normalize_feature(const Eigen::VectorXd& v);

struct PcaReducer {
  Eigen::VectorXd mean;
  /// One kept axis per column.
  Eigen::MatrixXd projection;
  double retained_fraction = 0.95;
  /// Kept variance / total variance actually achieved.
  double retained_ratio = 1.0;
  Eigen::VectorXd kept_variances;
  double discarded_variance = 0.0;

  Eigen::Index in_dim() const { return mean.size(); }
  Eigen::Index out_dim() const { return projection.cols(); }
};

/// Keeps the fewest leading axes whose variance share reaches `fraction`.
/// `samples` holds one sample per column.
PcaReducer pca_reduce_fit(const Eigen::MatrixXd& samples, double fraction);
PcaReducer pca_reduce_fit(std::span<const Eigen::VectorXd> samples, double fraction);

Eigen::VectorXd pca_reduce_apply(const PcaReducer& reducer, const Eigen::VectorXd& v);

FeatureVector combine_features(std::span<const FeatureVector> parts);

std::string serialize_reducer(const PcaReducer& reducer);
PcaReducer deserialize_reducer(const std::string& text);

// ---------------------------------------------------------------------------
// feature matrix container: magic, version, family, rows, cols, element
// width, then row-major little-endian doubles.

struct FeatureMatrix {
  FeatureFamily family = FeatureFamily::Combined;
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rows;
};

void write_feature_matrix(const FeatureMatrix& matrix, const std::string& path);
FeatureMatrix read_feature_matrix(const std::string& path);

}  // namespace posefer
