#include "posefer/features.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <limits>
#include <numbers>

#include "posefer/error.hpp"
#include "posefer/serialize.hpp"

namespace posefer {

std::string_view family_name(FeatureFamily family) {
  switch (family) {
    case FeatureFamily::Sift: return "sift";
    case FeatureFamily::TplbpGrid: return "tplbp_grid";
    case FeatureFamily::TplbpRegion: return "tplbp_region";
    case FeatureFamily::Geom: return "geom";
    case FeatureFamily::Combined: return "combined";
  }
  return "unknown";
}

FeatureFamily parse_family(std::string_view name) {
  if (name == "sift") return FeatureFamily::Sift;
  if (name == "tplbp_grid" || name == "tplbp") return FeatureFamily::TplbpGrid;
  if (name == "tplbp_region") return FeatureFamily::TplbpRegion;
  if (name == "geom") return FeatureFamily::Geom;
  if (name == "combined") return FeatureFamily::Combined;
  throw Error(ErrorCode::InvalidConfig, "unknown feature family '" + std::string(name) + "'");
}

// ---------------------------------------------------------------------------

GradientField image_gradients(const GrayImage& image) {
  const int w = image.width();
  const int h = image.height();
  if (w < 3 || h < 3) throw Error(ErrorCode::ImageTooSmall, "gradients need at least 3x3 pixels");
  GradientField g;
  g.magnitude.resize(h, w);
  g.orientation.resize(h, w);
  constexpr double two_pi = 2.0 * std::numbers::pi;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double gx;
      if (x == 0) gx = image.at(1, y) - image.at(0, y);
      else if (x == w - 1) gx = image.at(w - 1, y) - image.at(w - 2, y);
      else gx = 0.5 * (image.at(x + 1, y) - image.at(x - 1, y));
      double gy;
      if (y == 0) gy = image.at(x, 1) - image.at(x, 0);
      else if (y == h - 1) gy = image.at(x, h - 1) - image.at(x, h - 2);
      else gy = 0.5 * (image.at(x, y + 1) - image.at(x, y - 1));
      const double mag = std::hypot(gx, gy);
      g.magnitude(y, x) = mag;
      double theta = mag > 0 ? std::atan2(gy, gx) : 0.0;
      if (theta < 0) theta += two_pi;
      if (theta >= two_pi) theta -= two_pi;
      g.orientation(y, x) = theta;
    }
  }
  return g;
}

void SiftParams::validate() const {
  if (!(patch_radius > 0)) throw Error(ErrorCode::InvalidConfig, "SIFT patch radius must be positive");
  if (spatial_bins * spatial_bins * orientation_bins != kSiftDescriptorDim) {
    throw Error(ErrorCode::InvalidConfig, "SIFT bins must give a 128-d descriptor");
  }
  if (!(clip_threshold > 0)) throw Error(ErrorCode::InvalidConfig, "SIFT clip threshold must be positive");
}

double default_patch_radius(const Shape& landmarks) {
  const auto n = landmarks.rows();
  if (n < 2) return 6.0;
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < n; ++j) {
      if (i == j) continue;
      best = std::min(best, (landmarks.row(i) - landmarks.row(j)).norm());
    }
    total += best;
  }
  return std::clamp(2.5 * total / static_cast<double>(n), 6.0, 24.0);
}

Eigen::VectorXd sift_descriptor_at(const GradientField& gradients, const Point2& point,
                                   const SiftParams& params) {
  params.validate();
  const int w = static_cast<int>(gradients.magnitude.cols());
  const int h = static_cast<int>(gradients.magnitude.rows());
  const double px = point(0);
  const double py = point(1);
  if (!(px >= 0 && py >= 0 && px <= w - 1 && py <= h - 1)) {
    throw Error(ErrorCode::PointOutOfImage, "keypoint (" + std::to_string(px) + ", " +
                                                std::to_string(py) + ") outside image");
  }
  const int nb = params.spatial_bins;
  const int no = params.orientation_bins;
  const double radius = params.patch_radius;
  const double bin_width = 2.0 * radius / nb;
  const double sigma = radius;
  const double inv_two_sigma2 = 1.0 / (2.0 * sigma * sigma);
  const double orient_scale = no / (2.0 * std::numbers::pi);

  Eigen::VectorXd hist = Eigen::VectorXd::Zero(kSiftDescriptorDim);
  const int x_lo = std::max(0, static_cast<int>(std::ceil(px - radius)));
  const int x_hi = std::min(w - 1, static_cast<int>(std::floor(px + radius)));
  const int y_lo = std::max(0, static_cast<int>(std::ceil(py - radius)));
  const int y_hi = std::min(h - 1, static_cast<int>(std::floor(py + radius)));
  for (int y = y_lo; y <= y_hi; ++y) {
    for (int x = x_lo; x <= x_hi; ++x) {
      const double mag = gradients.magnitude(y, x);
      if (mag == 0.0) continue;
      const double dx = x - px;
      const double dy = y - py;
      const double weight = mag * std::exp(-(dx * dx + dy * dy) * inv_two_sigma2);
      const double rb = dy / bin_width + 0.5 * nb - 0.5;
      const double cb = dx / bin_width + 0.5 * nb - 0.5;
      const double ob = gradients.orientation(y, x) * orient_scale;
      const int r0 = static_cast<int>(std::floor(rb));
      const int c0 = static_cast<int>(std::floor(cb));
      const int o0 = static_cast<int>(std::floor(ob));
      const double fr = rb - r0;
      const double fc = cb - c0;
      const double fo = ob - o0;
      for (int ir = 0; ir < 2; ++ir) {
        const int r = r0 + ir;
        if (r < 0 || r >= nb) continue;
        const double wr = ir ? fr : 1.0 - fr;
        for (int ic = 0; ic < 2; ++ic) {
          const int c = c0 + ic;
          if (c < 0 || c >= nb) continue;
          const double wc = ic ? fc : 1.0 - fc;
          for (int io = 0; io < 2; ++io) {
            const int o = ((o0 + io) % no + no) % no;
            const double wo = io ? fo : 1.0 - fo;
            hist((r * nb + c) * no + o) += weight * wr * wc * wo;
          }
        }
      }
    }
  }

  const double n1 = hist.norm();
  if (n1 == 0.0) return hist;
  hist /= n1;
  hist = hist.cwiseMin(params.clip_threshold);
  const double n2 = hist.norm();
  if (n2 > 0.0) hist /= n2;
  return hist;
}

Eigen::VectorXd sift_descriptor_at(const GrayImage& image, const Point2& point, const SiftParams& params) {
  return sift_descriptor_at(image_gradients(image), point, params);
}

FeatureVector sift_face_feature(const GrayImage& image, const Shape& landmarks, const SiftParams& params) {
  const auto grads = image_gradients(image);
  FeatureVector out{FeatureFamily::Sift, Eigen::VectorXd(kSiftDescriptorDim * landmarks.rows())};
  for (Eigen::Index i = 0; i < landmarks.rows(); ++i) {
    out.values.segment(i * kSiftDescriptorDim, kSiftDescriptorDim) =
        sift_descriptor_at(grads, landmarks.row(i), params);
  }
  return out;
}

// ---------------------------------------------------------------------------

namespace {

// Ring offset i of S, starting east and turning counter-clockwise on screen.
std::array<double, 2> ring_offset(int i, int count, double radius) {
  const double angle = 2.0 * std::numbers::pi * i / count;
  std::array<double, 2> d{radius * std::cos(angle), -radius * std::sin(angle)};
  for (auto& v : d) {
    if (std::abs(v - std::round(v)) < 1e-9) v = std::round(v);
  }
  return d;
}

// Integer + fractional decomposition of a ring offset, shared by every
// sample taken along that direction.
struct Shift {
  int ix = 0;
  int iy = 0;
  double fx = 0.0;
  double fy = 0.0;

  explicit Shift(const std::array<double, 2>& d) {
    ix = static_cast<int>(std::floor(d[0]));
    iy = static_cast<int>(std::floor(d[1]));
    fx = d[0] - ix;
    fy = d[1] - iy;
  }

  double sample(const GrayImage& img, int x, int y) const {
    const int x0 = x + ix;
    const int y0 = y + iy;
    double top = img.at(x0, y0);
    double bottom = 0.0;
    if (fx > 0) top = (1 - fx) * top + fx * img.at(x0 + 1, y0);
    if (fy > 0) {
      bottom = img.at(x0, y0 + 1);
      if (fx > 0) bottom = (1 - fx) * bottom + fx * img.at(x0 + 1, y0 + 1);
      return (1 - fy) * top + fy * bottom;
    }
    return top;
  }
};

std::vector<Shift> ring_shifts(const TplbpParams& params) {
  std::vector<Shift> shifts;
  for (int i = 0; i < params.patch_count; ++i) {
    shifts.emplace_back(ring_offset(i, params.patch_count, params.ring_radius));
  }
  return shifts;
}

std::uint8_t code_from_distances(const std::array<double, 8>& d, const TplbpParams& params) {
  std::uint8_t code = 0;
  for (int i = 0; i < 8; ++i) {
    const int j = (i + params.alpha) % 8;
    if (d[static_cast<std::size_t>(i)] - d[static_cast<std::size_t>(j)] >= params.tau) {
      code = static_cast<std::uint8_t>(code | (1u << i));
    }
  }
  return code;
}

}  // namespace

std::uint8_t lbp_code(const GrayImage& image, int x, int y, double radius) {
  const double center = image.at(x, y);
  std::uint8_t code = 0;
  for (int i = 0; i < 8; ++i) {
    const auto d = ring_offset(i, 8, radius);
    const double sx = x + d[0];
    const double sy = y + d[1];
    if (sx < 0 || sy < 0 || sx > image.width() - 1 || sy > image.height() - 1) {
      throw Error(ErrorCode::RingOutOfImage, "LBP ring at (" + std::to_string(x) + ", " +
                                                 std::to_string(y) + ") leaves the image");
    }
    if (sample_bilinear(image, sx, sy) > center) code = static_cast<std::uint8_t>(code | (1u << i));
  }
  return code;
}

void TplbpParams::validate() const {
  if (patch_count != 8) throw Error(ErrorCode::InvalidConfig, "TPLBP uses 8 ring patches");
  if (patch_size < 1 || patch_size % 2 == 0) throw Error(ErrorCode::InvalidConfig, "TPLBP patch size must be odd");
  if (alpha <= 0 || alpha >= patch_count) throw Error(ErrorCode::InvalidConfig, "TPLBP alpha must be in (0, S)");
  if (!(ring_radius > 0)) throw Error(ErrorCode::InvalidConfig, "TPLBP ring radius must be positive");
  if (tau < 0) throw Error(ErrorCode::InvalidConfig, "TPLBP tau must be non-negative");
  if (grid_rows < 1 || grid_cols < 1) throw Error(ErrorCode::InvalidConfig, "TPLBP grid must be at least 1x1");
}

int TplbpParams::margin() const { return static_cast<int>(std::ceil(ring_radius)) + patch_size / 2; }

std::uint8_t tplbp_code(const GrayImage& image, int x, int y, const TplbpParams& params) {
  params.validate();
  const int m = params.margin();
  if (x < m || y < m || x > image.width() - 1 - m || y > image.height() - 1 - m) {
    throw Error(ErrorCode::PatchOutOfImage, "TPLBP patches at (" + std::to_string(x) + ", " +
                                                std::to_string(y) + ") leave the image");
  }
  const auto shifts = ring_shifts(params);
  const int half = params.patch_size / 2;
  std::array<double, 8> dist{};
  for (int i = 0; i < 8; ++i) {
    double sum = 0.0;
    for (int v = -half; v <= half; ++v) {
      for (int u = -half; u <= half; ++u) {
        const double diff = shifts[static_cast<std::size_t>(i)].sample(image, x + u, y + v) - image.at(x + u, y + v);
        sum += diff * diff;
      }
    }
    dist[static_cast<std::size_t>(i)] = sum;
  }
  return code_from_distances(dist, params);
}

CodeMap tplbp_code_map(const GrayImage& image, const TplbpParams& params) {
  params.validate();
  const int m = params.margin();
  const int half = params.patch_size / 2;
  CodeMap map;
  map.x0 = m;
  map.y0 = m;
  map.width = std::max(0, image.width() - 2 * m);
  map.height = std::max(0, image.height() - 2 * m);
  map.codes.assign(static_cast<std::size_t>(map.width) * static_cast<std::size_t>(map.height), 0);
  if (map.width == 0 || map.height == 0) return map;

  // Squared differences between each shifted image and the original over the
  // coded area grown by the patch half-width; patch distances are window sums
  // taken in the same order as tplbp_code so both agree bit for bit.
  const int ex0 = m - half;
  const int ey0 = m - half;
  const int ew = map.width + 2 * half;
  const int eh = map.height + 2 * half;
  const auto shifts = ring_shifts(params);
  std::vector<PixelMatrix> sq(8, PixelMatrix(eh, ew));
  for (int i = 0; i < 8; ++i) {
    for (int yy = 0; yy < eh; ++yy) {
      for (int xx = 0; xx < ew; ++xx) {
        const int x = ex0 + xx;
        const int y = ey0 + yy;
        const double diff = shifts[static_cast<std::size_t>(i)].sample(image, x, y) - image.at(x, y);
        sq[static_cast<std::size_t>(i)](yy, xx) = diff * diff;
      }
    }
  }
  std::array<double, 8> dist{};
  for (int y = 0; y < map.height; ++y) {
    for (int x = 0; x < map.width; ++x) {
      for (int i = 0; i < 8; ++i) {
        const auto& s = sq[static_cast<std::size_t>(i)];
        double sum = 0.0;
        for (int v = 0; v < params.patch_size; ++v) {
          for (int u = 0; u < params.patch_size; ++u) sum += s(y + v, x + u);
        }
        dist[static_cast<std::size_t>(i)] = sum;
      }
      map.codes[static_cast<std::size_t>(y) * static_cast<std::size_t>(map.width) + static_cast<std::size_t>(x)] =
          code_from_distances(dist, params);
    }
  }
  return map;
}

FeatureVector tplbp_grid_feature(const GrayImage& image, const TplbpParams& params) {
  params.validate();
  const int span = static_cast<int>(std::ceil(2.0 * params.ring_radius)) + params.patch_size;
  if (image.width() < params.grid_cols * span || image.height() < params.grid_rows * span) {
    throw Error(ErrorCode::ImageTooSmall, "image " + std::to_string(image.width()) + "x" +
                                              std::to_string(image.height()) + " too small for the TPLBP grid");
  }
  const auto map = tplbp_code_map(image, params);
  const int rows = params.grid_rows;
  const int cols = params.grid_cols;
  FeatureVector out{FeatureFamily::TplbpGrid, Eigen::VectorXd::Zero(static_cast<Eigen::Index>(rows) * cols * kLbpBins)};
  for (int y = 0; y < map.height; ++y) {
    const int cell_r = static_cast<int>(static_cast<long>(y) * rows / map.height);
    for (int x = 0; x < map.width; ++x) {
      const int cell_c = static_cast<int>(static_cast<long>(x) * cols / map.width);
      const auto code = map.codes[static_cast<std::size_t>(y) * static_cast<std::size_t>(map.width) + static_cast<std::size_t>(x)];
      out.values((cell_r * cols + cell_c) * kLbpBins + code) += 1.0;
    }
  }
  return out;
}

FeatureVector tplbp_region_feature(const GrayImage& image, std::span<const Rect> regions,
                                   const TplbpParams& params) {
  params.validate();
  for (const auto& r : regions) {
    if (r.width <= 0 || r.height <= 0 || r.x < 0 || r.y < 0 || r.x + r.width > image.width() ||
        r.y + r.height > image.height()) {
      throw Error(ErrorCode::RegionOutOfImage, "region outside the image");
    }
  }
  const auto map = tplbp_code_map(image, params);
  FeatureVector out{FeatureFamily::TplbpRegion,
                    Eigen::VectorXd::Zero(static_cast<Eigen::Index>(regions.size()) * kLbpBins)};
  for (std::size_t k = 0; k < regions.size(); ++k) {
    const auto& r = regions[k];
    const int x_lo = std::max(r.x, map.x0);
    const int y_lo = std::max(r.y, map.y0);
    const int x_hi = std::min(r.x + r.width, map.x0 + map.width);
    const int y_hi = std::min(r.y + r.height, map.y0 + map.height);
    if (x_lo >= x_hi || y_lo >= y_hi) {
      throw Error(ErrorCode::RegionOutOfImage, "region " + std::to_string(k) + " holds no codable pixel");
    }
    for (int y = y_lo; y < y_hi; ++y) {
      for (int x = x_lo; x < x_hi; ++x) {
        out.values(static_cast<Eigen::Index>(k) * kLbpBins + map.at(x, y)) += 1.0;
      }
    }
  }
  return out;
}

std::vector<Rect> default_face_regions(const Shape& landmarks, int width, int height,
                                       const TplbpParams& params) {
  if (landmarks.rows() != kLandmarkCount) {
    throw Error(ErrorCode::WrongPointCount, "face regions need 68 landmarks");
  }
  const std::array<std::pair<int, int>, 6> groups{{{17, 21}, {22, 26}, {36, 41}, {42, 47}, {27, 35}, {48, 67}}};
  const int m = params.margin();
  const int lo_x = m;
  const int lo_y = m;
  const int hi_x = width - m;  // exclusive
  const int hi_y = height - m;
  if (hi_x <= lo_x || hi_y <= lo_y) throw Error(ErrorCode::ImageTooSmall, "image too small for face regions");
  std::vector<Rect> regions;
  for (const auto& [first, last] : groups) {
    const auto block = landmarks.middleRows(first, last - first + 1);
    const double min_x = block.col(0).minCoeff();
    const double max_x = block.col(0).maxCoeff();
    const double min_y = block.col(1).minCoeff();
    const double max_y = block.col(1).maxCoeff();
    const double pad_x = 0.2 * (max_x - min_x);
    const double pad_y = 0.2 * (max_y - min_y);
    int x0 = static_cast<int>(std::floor(min_x - pad_x));
    int y0 = static_cast<int>(std::floor(min_y - pad_y));
    int x1 = static_cast<int>(std::ceil(max_x + pad_x)) + 1;
    int y1 = static_cast<int>(std::ceil(max_y + pad_y)) + 1;
    x0 = std::clamp(x0, lo_x, hi_x - 1);
    y0 = std::clamp(y0, lo_y, hi_y - 1);
    x1 = std::clamp(x1, x0 + 1, hi_x);
    y1 = std::clamp(y1, y0 + 1, hi_y);
    regions.push_back({x0, y0, x1 - x0, y1 - y0});
  }
  return regions;
}

// ---------------------------------------------------------------------------

FeatureVector geometric_feature(const Shape& landmarks) {
  if (landmarks.rows() != kLandmarkCount) {
    throw Error(ErrorCode::WrongPointCount,
                "geometric feature needs 68 landmarks, got " + std::to_string(landmarks.rows()));
  }
  return {FeatureFamily::Geom, vectorize(landmarks)};
}

Eigen::VectorXd normalize_feature(const Eigen::VectorXd& v) {
  if (v.size() == 0) return v;
  const Eigen::VectorXd centered = v.array() - v.mean();
  const double n = centered.norm();
  if (n == 0.0) return Eigen::VectorXd::Zero(v.size());
  return centered / n;
}

PcaReducer pca_reduce_fit(const Eigen::MatrixXd& samples, double fraction) {
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    throw Error(ErrorCode::InvalidConfig, "retained fraction must be in (0, 1]");
  }
  const auto basis = pca_fit(samples);
  PcaReducer reducer;
  reducer.mean = basis.mean;
  reducer.retained_fraction = fraction;
  const double total = basis.total_variance;
  Eigen::Index keep = basis.axis_count();
  double kept = 0.0;
  for (Eigen::Index i = 0; i < basis.axis_count(); ++i) {
    kept += basis.variances(i);
    if (kept >= fraction * total) {
      keep = i + 1;
      break;
    }
  }
  keep = std::max<Eigen::Index>(std::min<Eigen::Index>(1, basis.axis_count()), keep);
  reducer.projection = basis.axes.leftCols(keep);
  reducer.kept_variances = basis.variances.head(keep);
  const double kept_sum = reducer.kept_variances.sum();
  reducer.retained_ratio = total > 0 ? kept_sum / total : 1.0;
  reducer.discarded_variance = std::max(0.0, total - kept_sum);
  return reducer;
}

PcaReducer pca_reduce_fit(std::span<const Eigen::VectorXd> samples, double fraction) {
  if (samples.size() < 2) throw Error(ErrorCode::InsufficientSamples, "pca_reduce_fit needs at least 2 samples");
  Eigen::MatrixXd m(samples.front().size(), static_cast<Eigen::Index>(samples.size()));
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (samples[i].size() != m.rows()) throw Error(ErrorCode::DimensionMismatch, "pca_reduce_fit: unequal dims");
    m.col(static_cast<Eigen::Index>(i)) = samples[i];
  }
  return pca_reduce_fit(m, fraction);
}

Eigen::VectorXd pca_reduce_apply(const PcaReducer& reducer, const Eigen::VectorXd& v) {
  if (v.size() != reducer.in_dim()) {
    throw Error(ErrorCode::DimensionMismatch, "pca_reduce_apply: vector length " + std::to_string(v.size()) +
                                                  " vs reducer " + std::to_string(reducer.in_dim()));
  }
  return reducer.projection.transpose() * (v - reducer.mean);
}

FeatureVector combine_features(std::span<const FeatureVector> parts) {
  Eigen::Index total = 0;
  for (const auto& p : parts) total += p.dim();
  FeatureVector out{FeatureFamily::Combined, Eigen::VectorXd(total)};
  Eigen::Index offset = 0;
  for (const auto& p : parts) {
    out.values.segment(offset, p.dim()) = p.values;
    offset += p.dim();
  }
  return out;
}

std::string serialize_reducer(const PcaReducer& reducer) {
  KeyValueText kv;
  kv.set("format", std::string("posefer-pca-reducer"));
  kv.set("version", 1LL);
  kv.set("retained_fraction", reducer.retained_fraction);
  kv.set("retained_ratio", reducer.retained_ratio);
  kv.set("discarded_variance", reducer.discarded_variance);
  kv.set("mean", Eigen::MatrixXd(reducer.mean));
  kv.set("projection", reducer.projection);
  kv.set("kept_variances", Eigen::MatrixXd(reducer.kept_variances));
  return kv.str();
}

PcaReducer deserialize_reducer(const std::string& text) {
  const auto kv = KeyValueText::parse(text);
  if (kv.get("format") != "posefer-pca-reducer") throw Error(ErrorCode::ParseError, "not a PCA reducer");
  if (kv.get_int("version") != 1) throw Error(ErrorCode::ParseError, "unsupported reducer version");
  PcaReducer r;
  r.retained_fraction = kv.get_double("retained_fraction");
  r.retained_ratio = kv.get_double("retained_ratio");
  r.discarded_variance = kv.get_double("discarded_variance");
  r.mean = kv.get_matrix("mean");
  r.projection = kv.get_matrix("projection");
  r.kept_variances = kv.get_matrix("kept_variances");
  return r;
}

namespace {
constexpr char kFeatureMagic[4] = {'P', 'F', 'F', 'M'};
constexpr std::uint32_t kFeatureVersion = 1;
}  // namespace

void write_feature_matrix(const FeatureMatrix& matrix, const std::string& path) {
  BinaryWriter w;
  w.bytes(std::string_view(kFeatureMagic, 4));
  w.u32(kFeatureVersion);
  w.u32(static_cast<std::uint32_t>(matrix.family));
  w.u64(static_cast<std::uint64_t>(matrix.rows.rows()));
  w.u64(static_cast<std::uint64_t>(matrix.rows.cols()));
  w.u32(8);
  w.bytes(std::string_view(reinterpret_cast<const char*>(matrix.rows.data()),
                           static_cast<std::size_t>(matrix.rows.size()) * sizeof(double)));
  w.save(path);
}

FeatureMatrix read_feature_matrix(const std::string& path) {
  auto r = BinaryReader::load(path);
  if (r.bytes(4) != std::string_view(kFeatureMagic, 4)) throw Error(ErrorCode::ParseError, path + ": bad magic");
  if (r.u32() != kFeatureVersion) throw Error(ErrorCode::ParseError, path + ": unsupported version");
  FeatureMatrix m;
  const auto family = r.u32();
  if (family < 1 || family > 5) throw Error(ErrorCode::ParseError, path + ": unknown family tag");
  m.family = static_cast<FeatureFamily>(family);
  const auto rows = r.u64();
  const auto cols = r.u64();
  if (r.u32() != 8) throw Error(ErrorCode::ParseError, path + ": element width must be 8");
  const auto raw = r.bytes(rows * cols * sizeof(double));
  m.rows.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  std::memcpy(m.rows.data(), raw.data(), raw.size());
  if (!r.at_end()) throw Error(ErrorCode::ParseError, path + ": trailing bytes");
  return m;
}

}  // namespace posefer
