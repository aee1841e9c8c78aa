#pragma once

#include <string>

#include <Eigen/Dense>

namespace posefer {

using PixelMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Grayscale image with intensities in [0, 1]; pixels(y, x), row-major.
struct GrayImage {
  PixelMatrix pixels;

  GrayImage() = default;
  explicit GrayImage(PixelMatrix p);
  GrayImage(int width, int height, double fill = 0.0);

  int width() const { return static_cast<int>(pixels.cols()); }
  int height() const { return static_cast<int>(pixels.rows()); }
  double at(int x, int y) const { return pixels(y, x); }
  double& at(int x, int y) { return pixels(y, x); }
};

/// Bilinear sample at (x, y); coordinates are clamped to the image.
double sample_bilinear(const GrayImage& image, double x, double y);

GrayImage resize_bilinear(const GrayImage& image, int width, int height);

/// Mirror about the vertical axis: column c moves to width-1-c.
GrayImage flip_horizontal(const GrayImage& image);

/// Binary (P5) or ASCII (P2) PGM.
GrayImage read_pgm(const std::string& path);
void write_pgm(const GrayImage& image, const std::string& path);

}  // namespace posefer
