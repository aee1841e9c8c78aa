#include "posefer/pca.hpp"

#include <string>

#include "posefer/error.hpp"

namespace posefer {

namespace {

constexpr Eigen::Index kSvdLimit = 600;

}  // namespace

void canonicalize_axis_signs(Eigen::MatrixXd& axes) {
  for (Eigen::Index c = 0; c < axes.cols(); ++c) {
    Eigen::Index arg = 0;
    axes.col(c).cwiseAbs().maxCoeff(&arg);
    if (axes(arg, c) < 0) axes.col(c) = -axes.col(c);
  }
}

PcaBasis pca_fit(const Eigen::MatrixXd& samples) {
  const Eigen::Index dim = samples.rows();
  const Eigen::Index count = samples.cols();
  if (count < 2) {
    throw Error(ErrorCode::InsufficientSamples,
                "pca_fit needs at least 2 samples, got " + std::to_string(count));
  }
  if (!samples.allFinite()) throw Error(ErrorCode::InvalidShape, "pca_fit: non-finite entries");

  PcaBasis basis;
  basis.mean = samples.rowwise().mean();
  const Eigen::MatrixXd centered = samples.colwise() - basis.mean;
  const double denom = static_cast<double>(count - 1);
  basis.total_variance = centered.squaredNorm() / denom;

  if (std::min(dim, count) <= kSvdLimit) {
    Eigen::BDCSVD<Eigen::MatrixXd> svd(centered, Eigen::ComputeThinU);
    basis.axes = svd.matrixU();
    basis.variances = svd.singularValues().array().square() / denom;
  } else if (count < dim) {
    // Gram route: eigenvectors v of Xc^T Xc map to axes Xc v / sigma.
    const Eigen::MatrixXd gram = centered.transpose() * centered;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gram);
    const Eigen::VectorXd lambda = eig.eigenvalues().reverse();
    const Eigen::MatrixXd vecs = eig.eigenvectors().rowwise().reverse();
    const double cutoff = std::max(lambda(0), 0.0) * 1e-12;
    Eigen::Index kept = 0;
    while (kept < lambda.size() && lambda(kept) > cutoff) ++kept;
    basis.axes = centered * vecs.leftCols(kept);
    for (Eigen::Index c = 0; c < kept; ++c) basis.axes.col(c) /= std::sqrt(lambda(c));
    basis.variances = lambda.head(kept) / denom;
  } else {
    const Eigen::MatrixXd scatter = centered * centered.transpose();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(scatter);
    basis.axes = eig.eigenvectors().rowwise().reverse();
    basis.variances = (eig.eigenvalues().reverse().array().max(0.0)) / denom;
  }
  canonicalize_axis_signs(basis.axes);
  return basis;
}

}  // namespace posefer
