#include "posefer/synth.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>

#include "posefer/error.hpp"
#include "posefer/rng.hpp"
#include "posefer/serialize.hpp"

namespace posefer {

namespace {

using Points3 = Eigen::Matrix<double, kLandmarkCount, 3>;
using Disp = Eigen::Matrix<double, kLandmarkCount, 2>;

double deg2rad(double d) { return d * std::numbers::pi / 180.0; }

// Fills the mirror partner of every point with x != 0 from the left half.
template <typename M>
void mirror_fill(M& m, const std::vector<int>& defined, bool negate_x) {
  const auto& perm = default_flip_permutation();
  for (int j : defined) {
    const int k = perm[static_cast<std::size_t>(j)];
    if (k == j) continue;
    m.row(k) = m.row(j);
    if (negate_x) m(k, 0) = -m(j, 0);
  }
}

Points3 build_template() {
  Points3 p = Points3::Zero();
  std::vector<int> left;
  auto set = [&](int j, double x, double y, double z) {
    p.row(j) << x, y, z;
    left.push_back(j);
  };
  for (int i = 0; i < 8; ++i) {
    const double t = std::numbers::pi * i / 16.0;
    set(i, -std::cos(t), -0.2 + 1.15 * std::sin(t), -0.5 + 0.7 * std::sin(t));
  }
  set(8, 0.0, 0.95, 0.2);
  const double bx[] = {-0.80, -0.65, -0.48, -0.32, -0.15};
  const double by[] = {-0.42, -0.50, -0.53, -0.51, -0.46};
  const double bz[] = {0.25, 0.33, 0.38, 0.40, 0.42};
  for (int i = 0; i < 5; ++i) set(17 + i, bx[i], by[i], bz[i]);
  set(27, 0.0, -0.35, 0.45);
  set(28, 0.0, -0.20, 0.55);
  set(29, 0.0, -0.05, 0.65);
  set(30, 0.0, 0.10, 0.75);
  set(31, -0.18, 0.22, 0.45);
  set(32, -0.09, 0.25, 0.52);
  set(33, 0.0, 0.27, 0.56);
  set(36, -0.60, -0.28, 0.22);
  set(37, -0.50, -0.33, 0.28);
  set(38, -0.38, -0.33, 0.30);
  set(39, -0.27, -0.27, 0.30);
  set(40, -0.38, -0.23, 0.30);
  set(41, -0.50, -0.23, 0.28);
  set(48, -0.36, 0.55, 0.30);
  set(49, -0.22, 0.48, 0.40);
  set(50, -0.08, 0.45, 0.46);
  set(51, 0.0, 0.46, 0.48);
  set(57, 0.0, 0.67, 0.45);
  set(58, -0.08, 0.66, 0.44);
  set(59, -0.22, 0.63, 0.38);
  set(60, -0.28, 0.55, 0.34);
  set(61, -0.10, 0.52, 0.44);
  set(62, 0.0, 0.52, 0.46);
  set(66, 0.0, 0.58, 0.45);
  set(67, -0.10, 0.58, 0.43);
  mirror_fill(p, left, true);
  return p;
}

// Left-half displacements; mirror partners get (-dx, dy).
Disp build_displacement(Expression e) {
  Disp d = Disp::Zero();
  std::vector<int> touched;
  auto add = [&](std::initializer_list<int> idx, double dx, double dy) {
    for (int j : idx) {
      d(j, 0) += dx;
      d(j, 1) += dy;
      touched.push_back(j);
    }
  };
  const auto brows = {17, 18, 19, 20, 21};
  switch (e) {
    case Expression::Neutral:
      break;
    case Expression::Happy:
      add({48, 60}, -0.08, -0.10);
      add({49, 59}, -0.04, -0.05);
      add({57, 58, 66, 67}, 0.0, 0.02);
      add({40, 41}, 0.0, -0.04);
      break;
    case Expression::Sad:
      add({48, 60}, 0.03, 0.10);
      add({49, 59}, 0.0, 0.04);
      add({20, 21}, 0.02, -0.10);
      add({17, 18}, 0.0, 0.04);
      add({37, 38}, 0.0, 0.02);
      break;
    case Expression::Fear:
      add(brows, 0.0, -0.09);
      add({20, 21}, 0.03, 0.0);
      add({37, 38}, 0.0, -0.05);
      add({40, 41}, 0.0, 0.02);
      add({48, 60}, -0.07, 0.03);
      add({57, 58, 59, 66, 67}, 0.0, 0.06);
      add({6, 7, 8}, 0.0, 0.04);
      break;
    case Expression::Angry:
      add(brows, 0.0, 0.08);
      add({20, 21}, 0.05, 0.02);
      add({37, 38}, 0.0, 0.04);
      add({40, 41}, 0.0, -0.03);
      add({49, 50, 51, 61, 62}, 0.0, 0.03);
      add({57, 58, 59, 66, 67}, 0.0, -0.03);
      add({48, 60}, 0.04, 0.0);
      break;
    case Expression::Surprise:
      add(brows, 0.0, -0.14);
      add({37, 38}, 0.0, -0.07);
      add({40, 41}, 0.0, 0.03);
      add({57, 58, 59}, 0.0, 0.16);
      add({66, 67}, 0.0, 0.14);
      add({6, 7, 8}, 0.0, 0.12);
      add({5}, 0.0, 0.06);
      add({48, 60}, 0.05, 0.06);
      break;
    case Expression::Disgust:
      add({49, 50, 51, 61, 62}, 0.0, -0.09);
      add({31, 32, 33}, 0.0, -0.05);
      add({30}, 0.0, -0.03);
      add({20, 21}, 0.0, 0.06);
      add({40, 41}, 0.0, -0.05);
      add({48, 60}, 0.02, 0.05);
      break;
  }
  std::sort(touched.begin(), touched.end());
  touched.erase(std::unique(touched.begin(), touched.end()), touched.end());
  mirror_fill(d, touched, true);
  return d;
}

double segment_distance(double px, double py, double ax, double ay, double bx, double by) {
  const double vx = bx - ax;
  const double vy = by - ay;
  const double len2 = vx * vx + vy * vy;
  double t = len2 > 0 ? ((px - ax) * vx + (py - ay) * vy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const double dx = px - (ax + t * vx);
  const double dy = py - (ay + t * vy);
  return std::sqrt(dx * dx + dy * dy);
}

}  // namespace

void SynthConfig::validate() const {
  if (k_poses < 1 || n_samples < kExpressionCount * k_poses) {
    throw Error(ErrorCode::InvalidConfig, "n_samples must be at least 7 * k_poses");
  }
  if (!(yaw_min_deg <= yaw_max_deg) || std::abs(yaw_min_deg) >= 90 || std::abs(yaw_max_deg) >= 90) {
    throw Error(ErrorCode::InvalidConfig, "yaw range must lie inside (-90, 90) degrees");
  }
  if (image_size < 16) throw Error(ErrorCode::InvalidConfig, "image size must be at least 16");
  if (noise_sigma < 0 || pixel_noise < 0 || identity_sigma < 0) {
    throw Error(ErrorCode::InvalidConfig, "noise levels must be non-negative");
  }
  if (!(intensity_min >= 0 && intensity_min <= 1)) throw Error(ErrorCode::InvalidConfig, "intensity_min in [0, 1]");
  if (views_per_identity < 1) throw Error(ErrorCode::InvalidConfig, "views_per_identity must be positive");
  double sum = 0;
  for (double p : label_distribution) {
    if (p < 0) throw Error(ErrorCode::InvalidConfig, "label proportions must be non-negative");
    sum += p;
  }
  if (!(sum > 0)) throw Error(ErrorCode::InvalidConfig, "label proportions sum to zero");
}

SynthConfig SynthConfig::noise_free() {
  SynthConfig c;
  c.noise_sigma = 0.0;
  c.identity_sigma = 0.0;
  return c;
}

const Eigen::Matrix<double, kLandmarkCount, 3>& synth_template() {
  static const Points3 p = build_template();
  return p;
}

Eigen::Matrix<double, kLandmarkCount, 2> expression_displacement(Expression e) {
  static const std::array<Disp, kExpressionCount> table = [] {
    std::array<Disp, kExpressionCount> t;
    for (auto ex : kAllExpressions) t[static_cast<std::size_t>(index_of(ex))] = build_displacement(ex);
    return t;
  }();
  return table[static_cast<std::size_t>(index_of(e))];
}

Expression confounded_archetype(Expression e) {
  switch (e) {
    case Expression::Neutral: return Expression::Happy;
    case Expression::Happy: return Expression::Neutral;
    case Expression::Sad: return Expression::Fear;
    case Expression::Fear: return Expression::Sad;
    case Expression::Angry: return Expression::Surprise;
    case Expression::Surprise: return Expression::Angry;
    case Expression::Disgust: return Expression::Disgust;
  }
  return e;
}

Eigen::Matrix<double, kLandmarkCount, 3> face_points(const FaceParams& face, bool confound, double confound_yaw_deg) {
  Points3 p = synth_template();
  const auto& id = face.identity;
  for (int j = 0; j < kLandmarkCount; ++j) {
    double& x = p(j, 0);
    double& y = p(j, 1);
    const double side = x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0);
    x *= 1.0 + id(0);
    if (j >= 17 && j <= 26) x += side * id(1);
    if (j >= 36 && j <= 47) x += side * id(1);
    if (j >= 48) x *= 1.0 + id(2);
    if (j >= 27 && j <= 35) y += id(3) * (y + 0.35);
    if (y > 0.5) y += id(4) * (y - 0.5);
  }
  const bool swapped = confound && std::abs(face.yaw_deg) > confound_yaw_deg;
  const Expression shown = swapped ? confounded_archetype(face.expression) : face.expression;
  p.leftCols<2>() += face.intensity * expression_displacement(shown);
  return p;
}

Shape project_face(const Eigen::Matrix<double, kLandmarkCount, 3>& points, double yaw_deg, int size) {
  const double c = std::cos(deg2rad(yaw_deg));
  const double s = std::sin(deg2rad(yaw_deg));
  const double center = 0.5 * (size - 1);
  const double scale = 0.36 * (size - 1);
  Shape out(kLandmarkCount, 2);
  for (int j = 0; j < kLandmarkCount; ++j) {
    const double x = points(j, 0) * c + points(j, 2) * s;
    out(j, 0) = center + scale * x;
    out(j, 1) = center + scale * (points(j, 1) - 0.25);
  }
  return out;
}

Shape synth_landmarks(const FaceParams& face, const SynthConfig& config) {
  return project_face(face_points(face, config.confound, config.confound_yaw_deg), face.yaw_deg, config.image_size);
}

GrayImage render_face(const Shape& landmarks, int size, double pixel_noise, Rng& rng) {
  GrayImage img(size, size, 0.15);
  // Face ellipse fitted to the jaw and brows.
  const auto jaw = landmarks.topRows(17);
  const double x_lo = jaw.col(0).minCoeff();
  const double x_hi = jaw.col(0).maxCoeff();
  const double y_top = landmarks.middleRows(17, 10).col(1).minCoeff();
  const double y_bot = jaw.col(1).maxCoeff();
  const double cx = 0.5 * (x_lo + x_hi);
  const double cy = 0.5 * (y_top + y_bot);
  const double ax = 0.55 * (x_hi - x_lo) + 1.0;
  const double ay = 0.62 * (y_bot - y_top) + 1.0;
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const double u = (x - cx) / ax;
      const double v = (y - cy) / ay;
      const double r = std::sqrt(u * u + v * v);
      // Roughly one pixel of soft edge.
      const double cover = std::clamp((1.0 - r) * std::min(ax, ay) + 0.5, 0.0, 1.0);
      img.at(x, y) = 0.15 + cover * 0.5;
    }
  }

  // Distance to the nearest stroke.
  PixelMatrix dist = PixelMatrix::Constant(size, size, 1e9);
  auto stroke = [&](int from, int to, bool closed) {
    const int last = closed ? to + 1 : to;
    for (int j = from; j < last; ++j) {
      const int a = j;
      const int b = j == to ? from : j + 1;
      const double ax_ = landmarks(a, 0), ay_ = landmarks(a, 1);
      const double bx_ = landmarks(b, 0), by_ = landmarks(b, 1);
      const int x0 = std::max(0, static_cast<int>(std::floor(std::min(ax_, bx_) - 2)));
      const int x1 = std::min(size - 1, static_cast<int>(std::ceil(std::max(ax_, bx_) + 2)));
      const int y0 = std::max(0, static_cast<int>(std::floor(std::min(ay_, by_) - 2)));
      const int y1 = std::min(size - 1, static_cast<int>(std::ceil(std::max(ay_, by_) + 2)));
      for (int y = y0; y <= y1; ++y) {
        for (int x = x0; x <= x1; ++x) {
          dist(y, x) = std::min(dist(y, x), segment_distance(x, y, ax_, ay_, bx_, by_));
        }
      }
    }
  };
  stroke(0, 16, false);
  stroke(17, 21, false);
  stroke(22, 26, false);
  stroke(27, 30, false);
  stroke(31, 35, false);
  stroke(36, 41, true);
  stroke(42, 47, true);
  stroke(48, 59, true);
  stroke(60, 67, true);

  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const double cover = std::clamp(1.3 - dist(y, x), 0.0, 1.0);
      double v = img.at(x, y) * (1.0 - cover) + 0.05 * cover;
      if (pixel_noise > 0) v += rng.normal(0.0, pixel_noise);
      img.at(x, y) = std::clamp(v, 0.0, 1.0);
    }
  }
  return img;
}

SynthDataset synth_generate(const SynthConfig& config) {
  config.validate();
  Rng rng(config.seed);
  std::array<double, kExpressionCount> cumulative{};
  double total = 0;
  for (int c = 0; c < kExpressionCount; ++c) {
    total += config.label_distribution[static_cast<std::size_t>(c)];
    cumulative[static_cast<std::size_t>(c)] = total;
  }

  SynthDataset out;
  out.dataset.samples.reserve(static_cast<std::size_t>(config.n_samples));
  FaceParams face;
  for (int i = 0; i < config.n_samples; ++i) {
    const int identity = i / config.views_per_identity;
    if (i % config.views_per_identity == 0) {
      for (int k = 0; k < kIdentityParams; ++k) face.identity(k) = rng.normal(0.0, config.identity_sigma);
    }
    face.yaw_deg = rng.uniform(config.yaw_min_deg, config.yaw_max_deg);
    const double u = rng.uniform() * total;
    int label = 0;
    while (label + 1 < kExpressionCount && u >= cumulative[static_cast<std::size_t>(label)]) ++label;
    face.expression = static_cast<Expression>(label);
    face.intensity = rng.uniform(config.intensity_min, 1.0);

    Shape landmarks = synth_landmarks(face, config);
    if (config.noise_sigma > 0) {
      const double px = config.noise_sigma * 0.36 * (config.image_size - 1);
      for (int j = 0; j < kLandmarkCount; ++j) {
        landmarks(j, 0) += rng.normal(0.0, px);
        landmarks(j, 1) += rng.normal(0.0, px);
      }
    }
    Sample s;
    s.image = render_face(landmarks, config.image_size, config.pixel_noise, rng);
    s.landmarks = std::move(landmarks);
    s.label = face.expression;
    char group[32];
    std::snprintf(group, sizeof group, "id%05d", identity);
    s.group_id = group;
    s.yaw_deg = face.yaw_deg;
    out.dataset.samples.push_back(std::move(s));
    out.truth.push_back({face.yaw_deg, face.expression, identity});
  }
  return out;
}

DatasetManifest write_synth_dataset(const SynthDataset& data, const std::string& dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(fs::path(dir) / "images", ec);
  fs::create_directories(fs::path(dir) / "pts", ec);
  if (ec) throw Error(ErrorCode::IoError, "cannot create " + dir + ": " + ec.message());
  DatasetManifest m;
  m.base_dir = dir;
  std::ostringstream truth;
  truth << "index,yaw_deg,expression,identity\n";
  for (std::size_t i = 0; i < data.dataset.samples.size(); ++i) {
    const auto& s = data.dataset.samples[i];
    char stem[32];
    std::snprintf(stem, sizeof stem, "%05zu", i);
    ManifestEntry e;
    e.image_path = std::string("images/") + stem + ".pgm";
    e.pts_path = std::string("pts/") + stem + ".pts";
    e.label = s.label;
    e.group_id = s.group_id;
    write_pgm(s.image, (fs::path(dir) / e.image_path).string());
    save_pts(s.landmarks, (fs::path(dir) / e.pts_path).string());
    m.entries.push_back(std::move(e));
    if (i < data.truth.size()) {
      const auto& t = data.truth[i];
      truth << i << ',' << format_double(t.yaw_deg) << ',' << expression_name(t.expression) << ',' << t.identity
            << '\n';
    }
  }
  std::ofstream(fs::path(dir) / "manifest.csv") << format_manifest(m);
  std::ofstream(fs::path(dir) / "truth.csv") << truth.str();
  return m;
}

}  // namespace posefer
