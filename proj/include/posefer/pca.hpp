#pragma once

#include <Eigen/Dense>

namespace posefer {

/// Principal axes of a sample set. `axes` holds one unit axis per column,
/// ordered by descending variance; each axis is signed so that its
/// largest-magnitude entry is positive.
struct PcaBasis {
  Eigen::VectorXd mean;
  Eigen::MatrixXd axes;
  Eigen::VectorXd variances;
  /// Trace of the sample covariance.
  double total_variance = 0.0;

  Eigen::Index dim() const { return mean.size(); }
  Eigen::Index axis_count() const { return axes.cols(); }
};

/// PCA of the columns of `samples` (one sample per column). Variances use the
/// unbiased 1/(M-1) normalization. Small problems go through a thin SVD of
/// the centered data; when both sides are large, the eigendecomposition of
/// the smaller Gram/scatter matrix is used instead.
PcaBasis pca_fit(const Eigen::MatrixXd& samples);

/// Flips each column so that its largest-magnitude entry is positive.
void canonicalize_axis_signs(Eigen::MatrixXd& axes);

}  // namespace posefer
