#include "posefer/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>

#include "posefer/rng.hpp"
#include "posefer/serialize.hpp"

namespace posefer {

namespace {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  // splitmix64 finalizer
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (salt + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

template <typename F>
auto run_stage(std::string_view stage, std::vector<std::pair<std::string, double>>& timing, F&& body) {
  const auto start = std::chrono::steady_clock::now();
  auto record = [&] {
    const std::chrono::duration<double> d = std::chrono::steady_clock::now() - start;
    timing.emplace_back(std::string(stage), d.count());
  };
  try {
    if constexpr (std::is_void_v<decltype(body())>) {
      body();
      record();
    } else {
      auto r = body();
      record();
      return r;
    }
  } catch (const PipelineError&) {
    throw;
  } catch (const Error& e) {
    throw PipelineError(std::string(stage), e);
  }
}

std::string bool_text(bool b) { return b ? "true" : "false"; }

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw Error(ErrorCode::InvalidConfig, key + ": expected true or false, got '" + v + "'");
}

long long parse_int(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const long long r = std::stoll(v, &used);
    if (used == v.size()) return r;
  } catch (const std::logic_error&) {
  }
  throw Error(ErrorCode::InvalidConfig, key + ": expected an integer, got '" + v + "'");
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    if (!v.empty() && v.front() != '-') {
      const unsigned long long r = std::stoull(v, &used);
      if (used == v.size()) return r;
    }
  } catch (const std::logic_error&) {
  }
  throw Error(ErrorCode::InvalidConfig, key + ": expected an unsigned integer, got '" + v + "'");
}

double parse_real(const std::string& key, const std::string& v) {
  try {
    return parse_double(v);
  } catch (const Error&) {
    throw Error(ErrorCode::InvalidConfig, key + ": expected a number, got '" + v + "'");
  }
}

std::vector<std::size_t> fit_subset(std::size_t n, int cap, std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  if (cap <= 0 || n <= static_cast<std::size_t>(cap)) return idx;
  Rng rng(seed);
  rng.shuffle(idx);
  idx.resize(static_cast<std::size_t>(cap));
  std::sort(idx.begin(), idx.end());
  return idx;
}

Eigen::VectorXd concat_raw(const FeatureTransform& t, const RawFeatures& raw, const Eigen::VectorXd& sift_reduced) {
  Eigen::VectorXd out(t.dim());
  Eigen::Index offset = 0;
  for (const auto& [family, len] : t.blocks) {
    const Eigen::VectorXd* part = nullptr;
    switch (family) {
      case FeatureFamily::Sift: part = &sift_reduced; break;
      case FeatureFamily::TplbpGrid: part = &raw.tplbp_grid; break;
      case FeatureFamily::TplbpRegion: part = &raw.tplbp_region; break;
      case FeatureFamily::Geom: part = &raw.geom; break;
      case FeatureFamily::Combined: break;
    }
    if (!part || part->size() != len) {
      throw Error(ErrorCode::DimensionMismatch, std::string(family_name(family)) + " block has " +
                                                    std::to_string(part ? part->size() : 0) + " entries, expected " +
                                                    std::to_string(len));
    }
    out.segment(offset, len) = *part;
    offset += len;
  }
  return out;
}

Eigen::VectorXd reduce_sift(const FeatureTransform& t, const RawFeatures& raw) {
  if (!t.sift_reducer) return {};
  return normalize_feature(pca_reduce_apply(*t.sift_reducer, raw.sift));
}

GrayImage fit_to_net(const GrayImage& image, int size) {
  if (image.width() == size && image.height() == size) return image;
  return resize_bilinear(image, size, size);
}

}  // namespace

std::string_view classifier_name(ClassifierKind kind) {
  switch (kind) {
    case ClassifierKind::Linear: return "linear";
    case ClassifierKind::Forest: return "forest";
    case ClassifierKind::Fusion: return "fusion";
  }
  return "linear";
}

ClassifierKind parse_classifier(std::string_view name) {
  if (name == "linear") return ClassifierKind::Linear;
  if (name == "forest") return ClassifierKind::Forest;
  if (name == "fusion") return ClassifierKind::Fusion;
  throw Error(ErrorCode::InvalidConfig, "unknown classifier '" + std::string(name) + "'");
}

FeatureToggles parse_feature_list(std::string_view list) {
  FeatureToggles f{false, false, false, false};
  std::size_t pos = 0;
  while (pos <= list.size()) {
    auto end = list.find(',', pos);
    if (end == std::string_view::npos) end = list.size();
    auto item = list.substr(pos, end - pos);
    while (!item.empty() && item.front() == ' ') item.remove_prefix(1);
    while (!item.empty() && item.back() == ' ') item.remove_suffix(1);
    if (!item.empty()) {
      switch (parse_family(item)) {
        case FeatureFamily::Sift: f.sift = true; break;
        case FeatureFamily::TplbpGrid: f.tplbp_grid = true; break;
        case FeatureFamily::TplbpRegion: f.tplbp_region = true; break;
        case FeatureFamily::Geom: f.geom = true; break;
        case FeatureFamily::Combined: f = FeatureToggles{true, true, true, true}; break;
      }
    }
    pos = end + 1;
  }
  return f;
}

std::string format_feature_list(const FeatureToggles& f) {
  std::vector<std::string> parts;
  if (f.sift) parts.emplace_back("sift");
  if (f.tplbp_grid) parts.emplace_back("tplbp_grid");
  if (f.tplbp_region) parts.emplace_back("tplbp_region");
  if (f.geom) parts.emplace_back("geom");
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) out += (i ? "," : "") + parts[i];
  return out;
}

void PipelineConfig::validate() const {
  if (k_poses < 1) throw Error(ErrorCode::InvalidConfig, "k_poses must be positive");
  if (!(train_ratio > 0.0 && train_ratio < 1.0)) throw Error(ErrorCode::InvalidConfig, "train_ratio must be in (0, 1)");
  if (!features.any()) throw Error(ErrorCode::InvalidConfig, "enable at least one feature family");
  if (!(pca_fraction > 0.0 && pca_fraction <= 1.0)) throw Error(ErrorCode::InvalidConfig, "pca_fraction in (0, 1]");
  if (!(train.learning_rate > 0)) throw Error(ErrorCode::InvalidConfig, "learning rate must be positive");
  if (train.hard_mining_band < 0) throw Error(ErrorCode::InvalidConfig, "hard_mining_band must be non-negative");
  if (sift_patch_radius < 0) throw Error(ErrorCode::InvalidConfig, "sift_patch_radius must be non-negative");
  tplbp.validate();
}

std::vector<std::pair<std::string, std::string>> config_entries(const PipelineConfig& c) {
  std::vector<std::pair<std::string, std::string>> e;
  auto add = [&](std::string k, std::string v) { e.emplace_back(std::move(k), std::move(v)); };
  add("k_poses", std::to_string(c.k_poses));
  add("features", format_feature_list(c.features));
  add("pca_fraction", format_double(c.pca_fraction));
  add("pca_max_fit_samples", std::to_string(c.pca_max_fit_samples));
  add("sift_patch_radius", format_double(c.sift_patch_radius));
  add("tplbp.ring_radius", format_double(c.tplbp.ring_radius));
  add("tplbp.patch_size", std::to_string(c.tplbp.patch_size));
  add("tplbp.alpha", std::to_string(c.tplbp.alpha));
  add("tplbp.tau", format_double(c.tplbp.tau));
  add("tplbp.grid_rows", std::to_string(c.tplbp.grid_rows));
  add("tplbp.grid_cols", std::to_string(c.tplbp.grid_cols));
  add("classifier", std::string(classifier_name(c.classifier)));
  add("train.epochs", std::to_string(c.train.epochs));
  add("train.learning_rate", format_double(c.train.learning_rate));
  add("train.l2_lambda", format_double(c.train.l2_lambda));
  add("train.balancing", std::string(balancing_name(c.train.balancing)));
  add("train.hard_mining_band", format_double(c.train.hard_mining_band));
  add("hard_mining", bool_text(c.hard_mining));
  add("forest.trees", std::to_string(c.train.forest.trees));
  add("forest.max_depth", std::to_string(c.train.forest.max_depth));
  add("forest.min_leaf", std::to_string(c.train.forest.min_leaf));
  add("forest.bootstrap", bool_text(c.train.forest.bootstrap));
  add("forest.features_per_node", std::to_string(c.train.forest.features_per_node));
  add("net.input_size", std::to_string(c.net.input_size));
  add("net.fc6", std::to_string(c.net.fc6));
  add("fusion.pose_epochs", std::to_string(c.fusion.pose_epochs));
  add("fusion.joint_epochs", std::to_string(c.fusion.joint_epochs));
  add("fusion.batch_size", std::to_string(c.fusion.batch_size));
  add("fusion.learning_rate", format_double(c.fusion.learning_rate));
  add("fusion.lambda_pose", format_double(c.fusion.weights.lambda_pose));
  add("fusion.lambda_expr", format_double(c.fusion.weights.lambda_expr));
  add("cnn_pose", bool_text(c.cnn_pose));
  add("seed", std::to_string(c.seed));
  add("train_ratio", format_double(c.train_ratio));
  add("add_flips", bool_text(c.add_flips));
  add("timing", bool_text(c.timing));
  return e;
}

std::string format_pipeline_config(const PipelineConfig& config) {
  std::string out;
  for (const auto& [k, v] : config_entries(config)) out += k + ": " + v + "\n";
  return out;
}

PipelineConfig parse_pipeline_config(const std::string& text, PipelineConfig c) {
  const auto kv = KeyValueText::parse(text);
  using Setter = std::function<void(const std::string&, const std::string&)>;
  auto int_into = [](int& target) -> Setter {
    return [&target](const std::string& k, const std::string& v) { target = static_cast<int>(parse_int(k, v)); };
  };
  auto real_into = [](double& target) -> Setter {
    return [&target](const std::string& k, const std::string& v) { target = parse_real(k, v); };
  };
  auto bool_into = [](bool& target) -> Setter {
    return [&target](const std::string& k, const std::string& v) { target = parse_bool(k, v); };
  };
  const std::map<std::string, Setter> setters{
      {"k_poses", int_into(c.k_poses)},
      {"features", [&](const std::string&, const std::string& v) { c.features = parse_feature_list(v); }},
      {"pca_fraction", real_into(c.pca_fraction)},
      {"pca_max_fit_samples", int_into(c.pca_max_fit_samples)},
      {"sift_patch_radius", real_into(c.sift_patch_radius)},
      {"tplbp.ring_radius", real_into(c.tplbp.ring_radius)},
      {"tplbp.patch_size", int_into(c.tplbp.patch_size)},
      {"tplbp.alpha", int_into(c.tplbp.alpha)},
      {"tplbp.tau", real_into(c.tplbp.tau)},
      {"tplbp.grid_rows", int_into(c.tplbp.grid_rows)},
      {"tplbp.grid_cols", int_into(c.tplbp.grid_cols)},
      {"classifier", [&](const std::string&, const std::string& v) { c.classifier = parse_classifier(v); }},
      {"train.epochs", int_into(c.train.epochs)},
      {"train.learning_rate", real_into(c.train.learning_rate)},
      {"train.l2_lambda", real_into(c.train.l2_lambda)},
      {"train.balancing", [&](const std::string&, const std::string& v) { c.train.balancing = parse_balancing(v); }},
      {"train.hard_mining_band", real_into(c.train.hard_mining_band)},
      {"hard_mining", bool_into(c.hard_mining)},
      {"forest.trees", int_into(c.train.forest.trees)},
      {"forest.max_depth", int_into(c.train.forest.max_depth)},
      {"forest.min_leaf", int_into(c.train.forest.min_leaf)},
      {"forest.bootstrap", bool_into(c.train.forest.bootstrap)},
      {"forest.features_per_node", int_into(c.train.forest.features_per_node)},
      {"net.input_size", int_into(c.net.input_size)},
      {"net.fc6", int_into(c.net.fc6)},
      {"fusion.pose_epochs", int_into(c.fusion.pose_epochs)},
      {"fusion.joint_epochs", int_into(c.fusion.joint_epochs)},
      {"fusion.batch_size", int_into(c.fusion.batch_size)},
      {"fusion.learning_rate", real_into(c.fusion.learning_rate)},
      {"fusion.lambda_pose", real_into(c.fusion.weights.lambda_pose)},
      {"fusion.lambda_expr", real_into(c.fusion.weights.lambda_expr)},
      {"cnn_pose", bool_into(c.cnn_pose)},
      {"seed", [&](const std::string& k, const std::string& v) { c.seed = parse_u64(k, v); }},
      {"train_ratio", real_into(c.train_ratio)},
      {"add_flips", bool_into(c.add_flips)},
      {"timing", bool_into(c.timing)},
  };
  for (const auto& key : kv.keys()) {
    const auto it = setters.find(key);
    if (it == setters.end()) throw Error(ErrorCode::InvalidConfig, "unknown config key '" + key + "'");
    it->second(key, kv.get(key));
  }
  c.validate();
  return c;
}

PipelineConfig load_pipeline_config(const std::string& path, PipelineConfig base) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open config " + path);
  std::ostringstream os;
  os << in.rdbuf();
  return parse_pipeline_config(os.str(), std::move(base));
}

PipelineError::PipelineError(std::string stage, const Error& inner)
    : Error(inner.code(), "stage " + stage + ": " + inner.what()), stage_(std::move(stage)) {}

// ---------------------------------------------------------------------------

PoseStage fit_pose_stage(std::span<const Shape> landmarks, int k) {
  auto g = gpa(landmarks);
  PoseStage s;
  PoseFitOptions options;
  options.k = k;
  s.model = fit_pose_model(g.aligned_shapes, g.mean_shape, options);
  s.aligned = std::move(g.aligned_shapes);
  return s;
}

RawFeatures extract_raw(const Sample& sample, const Shape& normalized_shape, const PipelineConfig& config) {
  RawFeatures r;
  const auto& f = config.features;
  if (f.sift) {
    SiftParams p;
    p.patch_radius = config.sift_patch_radius > 0 ? config.sift_patch_radius : default_patch_radius(sample.landmarks);
    r.sift = normalize_feature(sift_face_feature(sample.image, sample.landmarks, p).values);
  }
  if (f.tplbp_grid) r.tplbp_grid = normalize_feature(tplbp_grid_feature(sample.image, config.tplbp).values);
  if (f.tplbp_region) {
    const auto regions =
        default_face_regions(sample.landmarks, sample.image.width(), sample.image.height(), config.tplbp);
    r.tplbp_region = normalize_feature(tplbp_region_feature(sample.image, regions, config.tplbp).values);
  }
  if (f.geom) r.geom = normalize_feature(geometric_feature(normalized_shape).values);
  return r;
}

FeatureTransform fit_transform(std::span<const RawFeatures> train, const PipelineConfig& config) {
  if (train.empty()) throw Error(ErrorCode::InsufficientSamples, "no training rows for the feature transform");
  FeatureTransform t;
  t.features = config.features;
  const auto& first = train.front();
  if (config.features.sift) {
    const auto subset = fit_subset(train.size(), config.pca_max_fit_samples, mix_seed(config.seed, 101));
    Eigen::MatrixXd m(first.sift.size(), static_cast<Eigen::Index>(subset.size()));
    for (std::size_t i = 0; i < subset.size(); ++i) m.col(static_cast<Eigen::Index>(i)) = train[subset[i]].sift;
    t.sift_reducer = pca_reduce_fit(m, config.pca_fraction);
    t.blocks.emplace_back(FeatureFamily::Sift, t.sift_reducer->out_dim());
  }
  if (config.features.tplbp_grid) t.blocks.emplace_back(FeatureFamily::TplbpGrid, first.tplbp_grid.size());
  if (config.features.tplbp_region) t.blocks.emplace_back(FeatureFamily::TplbpRegion, first.tplbp_region.size());
  if (config.features.geom) t.blocks.emplace_back(FeatureFamily::Geom, first.geom.size());
  Eigen::Index dim = 0;
  for (const auto& b : t.blocks) dim += b.second;
  t.mean = Eigen::VectorXd::Zero(dim);
  t.scale = Eigen::VectorXd::Ones(dim);

  Eigen::MatrixXd rows(dim, static_cast<Eigen::Index>(train.size()));
  for (std::size_t i = 0; i < train.size(); ++i) {
    rows.col(static_cast<Eigen::Index>(i)) = concat_raw(t, train[i], reduce_sift(t, train[i]));
  }
  t.mean = rows.rowwise().mean();
  const double n = static_cast<double>(train.size());
  const double families = static_cast<double>(t.blocks.size());
  Eigen::Index offset = 0;
  for (const auto& [family, len] : t.blocks) {
    const double block = std::sqrt(static_cast<double>(len) * families);
    for (Eigen::Index d = offset; d < offset + len; ++d) {
      const double var = (rows.row(d).array() - t.mean(d)).square().sum() / std::max(1.0, n - 1.0);
      const double sd = std::sqrt(var);
      // Constant dimensions carry nothing; drop them instead of dividing by ~0.
      t.scale(d) = sd > 1e-12 ? 1.0 / (sd * block) : 0.0;
    }
    offset += len;
  }
  return t;
}

Eigen::VectorXd apply_transform(const FeatureTransform& t, const RawFeatures& raw) {
  const Eigen::VectorXd x = concat_raw(t, raw, reduce_sift(t, raw));
  return ((x - t.mean).array() * t.scale.array()).matrix();
}

std::string serialize_transform(const FeatureTransform& t) {
  KeyValueText kv;
  kv.set("format", std::string("posefer-feature-transform"));
  kv.set("version", 1LL);
  kv.set("features", format_feature_list(t.features));
  std::vector<double> lens;
  for (const auto& b : t.blocks) lens.push_back(static_cast<double>(b.second));
  kv.set("block_lengths", lens);
  kv.set("mean", std::span<const double>(t.mean.data(), static_cast<std::size_t>(t.mean.size())));
  kv.set("scale", std::span<const double>(t.scale.data(), static_cast<std::size_t>(t.scale.size())));
  if (t.sift_reducer) {
    const auto inner = KeyValueText::parse(serialize_reducer(*t.sift_reducer));
    for (const auto& key : inner.keys()) kv.set("sift." + key, inner.get(key));
  }
  return kv.str();
}

FeatureTransform deserialize_transform(const std::string& text) {
  const auto kv = KeyValueText::parse(text);
  if (!kv.has("format") || kv.get("format") != "posefer-feature-transform") {
    throw Error(ErrorCode::ParseError, "not a feature transform");
  }
  if (kv.get_int("version") != 1) throw Error(ErrorCode::ParseError, "unsupported feature transform version");
  FeatureTransform t;
  t.features = parse_feature_list(kv.get("features"));
  const auto mean = kv.get_doubles("mean");
  const auto scale = kv.get_doubles("scale");
  t.mean = Eigen::Map<const Eigen::VectorXd>(mean.data(), static_cast<Eigen::Index>(mean.size()));
  t.scale = Eigen::Map<const Eigen::VectorXd>(scale.data(), static_cast<Eigen::Index>(scale.size()));
  KeyValueText inner;
  for (const auto& key : kv.keys()) {
    if (key.rfind("sift.", 0) == 0) inner.set(key.substr(5), kv.get(key));
  }
  if (t.features.sift) t.sift_reducer = deserialize_reducer(inner.str());
  const auto lens = kv.get_doubles("block_lengths");
  std::vector<FeatureFamily> fams;
  if (t.features.sift) fams.push_back(FeatureFamily::Sift);
  if (t.features.tplbp_grid) fams.push_back(FeatureFamily::TplbpGrid);
  if (t.features.tplbp_region) fams.push_back(FeatureFamily::TplbpRegion);
  if (t.features.geom) fams.push_back(FeatureFamily::Geom);
  if (lens.size() != fams.size()) throw Error(ErrorCode::ParseError, "feature transform block count mismatch");
  Eigen::Index total = 0;
  for (std::size_t i = 0; i < fams.size(); ++i) {
    t.blocks.emplace_back(fams[i], static_cast<Eigen::Index>(lens[i]));
    total += static_cast<Eigen::Index>(lens[i]);
  }
  if (total != t.mean.size() || total != t.scale.size()) {
    throw Error(ErrorCode::ParseError, "feature transform dimensions are inconsistent");
  }
  return t;
}

// ---------------------------------------------------------------------------

Classifier train_with_policy(std::span<const LabeledSample> samples, const PipelineConfig& config,
                             std::uint64_t seed) {
  if (config.classifier == ClassifierKind::Fusion) {
    throw Error(ErrorCode::InvalidConfig, "the fusion network is trained by run_pipeline");
  }
  const bool forest = config.classifier == ClassifierKind::Forest;
  TrainConfig tc = config.train;
  tc.seed = seed;
  auto balanced = balance(samples, tc.balancing, mix_seed(seed, 1));
  if (tc.balancing == Balancing::ClassWeights) tc.class_weights = balanced.class_weights;
  Classifier model = train_classifier(balanced.samples, tc, forest);
  if (config.hard_mining) {
    const auto hard = mine_hard_examples(model, samples, tc.hard_mining_band);
    if (!hard.empty()) {
      auto retrain = balanced.samples;
      retrain.insert(retrain.end(), hard.begin(), hard.end());
      model = train_classifier(retrain, tc, forest);
    }
  }
  return model;
}

ModelBundle train_models(std::span<const LabeledSample> train, const PipelineConfig& config) {
  ModelBundle b;
  for (int p = 1; p <= config.k_poses; ++p) {
    std::vector<LabeledSample> subset;
    std::set<Expression> labels;
    for (const auto& s : train) {
      if (s.pose.id == p) {
        subset.push_back(s);
        labels.insert(s.label);
      }
    }
    if (labels.size() < 2) {
      b.warnings.push_back("pose " + std::to_string(p) + " has " + std::to_string(subset.size()) +
                           " training samples covering fewer than 2 classes; using the pose-agnostic model");
      continue;
    }
    b.per_pose.emplace(p, train_with_policy(subset, config, mix_seed(config.seed, 1000 + p)));
  }
  b.agnostic = train_with_policy(train, config, mix_seed(config.seed, 1000));
  return b;
}

Report build_report(std::span<const EvalRecord> records, int k, std::span<const std::int64_t> train_counts,
                    std::span<const int> fallback_poses) {
  Report r;
  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (int p = 1; p <= k; ++p) {
    PoseResult pr;
    pr.pose = p;
    if (static_cast<std::size_t>(p - 1) < train_counts.size()) pr.train_count = train_counts[static_cast<std::size_t>(p - 1)];
    pr.fallback = std::find(fallback_poses.begin(), fallback_poses.end(), p) != fallback_poses.end();
    r.per_pose.push_back(pr);
  }
  for (const auto& rec : records) {
    if (rec.pose < 1 || rec.pose > k) {
      throw Error(ErrorCode::DimensionMismatch, "pose " + std::to_string(rec.pose) + " outside 1.." + std::to_string(k));
    }
    r.per_pose[static_cast<std::size_t>(rec.pose - 1)].matrix.add(rec.truth, rec.pose_aware);
    r.agnostic.add(rec.truth, rec.agnostic);
  }
  double sum = 0.0;
  int counted = 0;
  for (auto& pr : r.per_pose) {
    pr.test_count = pr.matrix.total();
    pr.accuracy = pr.test_count > 0 ? confusion_accuracy(pr.matrix) : nan;
    if (pr.test_count > 0) {
      sum += pr.accuracy;
      ++counted;
    }
    r.pose_aware += pr.matrix;
  }
  r.mean_pose_accuracy = counted ? sum / counted : nan;
  r.pose_aware_accuracy = r.pose_aware.total() > 0 ? confusion_accuracy(r.pose_aware) : nan;
  r.agnostic_accuracy = r.agnostic.total() > 0 ? confusion_accuracy(r.agnostic) : nan;
  r.test_count = static_cast<std::int64_t>(records.size());
  r.train_count = std::accumulate(train_counts.begin(), train_counts.end(), std::int64_t{0});
  return r;
}

Report evaluate_models(const ModelBundle& models, std::span<const LabeledSample> test, int k,
                       std::span<const std::int64_t> train_counts) {
  std::vector<EvalRecord> records;
  records.reserve(test.size());
  for (const auto& s : test) {
    EvalRecord rec;
    rec.truth = s.label;
    rec.pose = s.pose.id;
    const auto it = models.per_pose.find(s.pose.id);
    const Classifier& routed = it != models.per_pose.end() ? it->second : models.agnostic;
    rec.pose_aware = predict(routed, s.feature).label;
    rec.agnostic = predict(models.agnostic, s.feature).label;
    records.push_back(rec);
  }
  std::vector<int> fallback;
  for (int p = 1; p <= k; ++p) {
    if (!models.per_pose.count(p)) fallback.push_back(p);
  }
  auto r = build_report(records, k, train_counts, fallback);
  r.warnings = models.warnings;
  return r;
}

Report run_pipeline(const PipelineConfig& config, const Dataset& input) {
  std::vector<std::pair<std::string, double>> timing;
  run_stage("config", timing, [&] { config.validate(); });

  Dataset flipped;
  const Dataset* data = &input;
  if (config.add_flips) {
    flipped = input;
    run_stage("flip", timing, [&] { add_flips(flipped); });
    data = &flipped;
  }
  const auto& samples = data->samples;

  const auto split = run_stage("split", timing, [&] {
    for (std::size_t i = 0; i < samples.size(); ++i) {
      if (!samples[i].label) throw Error(ErrorCode::UnknownLabel, "sample " + std::to_string(i) + " is unlabeled");
    }
    std::vector<std::string> groups;
    groups.reserve(samples.size());
    for (const auto& s : samples) groups.push_back(s.group_id);
    return split_grouped(groups, config.train_ratio, config.seed);
  });

  // Pose model on training landmarks; normalized shapes for every sample.
  std::vector<Shape> normalized(samples.size());
  std::vector<PoseClass> poses(samples.size());
  PoseAgreement agreement{"threshold", 0, 0, 0.0};
  PoseModel pose_model;
  run_stage("pose", timing, [&] {
    std::vector<Shape> train_shapes;
    for (auto i : split.train) train_shapes.push_back(samples[i].landmarks);
    auto stage = fit_pose_stage(train_shapes, config.k_poses);
    for (std::size_t j = 0; j < split.train.size(); ++j) normalized[split.train[j]] = std::move(stage.aligned[j]);
    for (auto i : split.test) normalized[i] = normalize_for_model(stage.model, samples[i].landmarks);
    for (std::size_t i = 0; i < samples.size(); ++i) poses[i] = assign_pose(stage.model, normalized[i]);
    for (auto i : split.test) {
      ++agreement.compared;
      if (threshold_pose(stage.model, normalized[i]) == poses[i]) ++agreement.agreed;
    }
    pose_model = std::move(stage.model);
  });

  std::vector<RawFeatures> raw(samples.size());
  run_stage("features", timing, [&] {
    for (std::size_t i = 0; i < samples.size(); ++i) raw[i] = extract_raw(samples[i], normalized[i], config);
  });

  std::vector<LabeledSample> train;
  std::vector<LabeledSample> test;
  run_stage("transform", timing, [&] {
    std::vector<RawFeatures> train_raw;
    train_raw.reserve(split.train.size());
    for (auto i : split.train) train_raw.push_back(raw[i]);
    const auto transform = fit_transform(train_raw, config);
    auto make = [&](std::size_t i) {
      return LabeledSample{apply_transform(transform, raw[i]), *samples[i].label, poses[i], samples[i].group_id};
    };
    for (auto i : split.train) train.push_back(make(i));
    for (auto i : split.test) test.push_back(make(i));
  });
  raw.clear();
  raw.shrink_to_fit();

  std::vector<std::int64_t> train_counts(static_cast<std::size_t>(config.k_poses), 0);
  for (const auto& s : train) ++train_counts[static_cast<std::size_t>(s.pose.id - 1)];

  Report report;
  if (config.classifier != ClassifierKind::Fusion) {
    const auto models = run_stage("train", timing, [&] { return train_models(train, config); });
    report = run_stage("evaluate", timing, [&] { return evaluate_models(models, test, config.k_poses, train_counts); });
    report.agreement.push_back(agreement);
  } else {
    NetSpec spec = config.net;
    spec.pose_classes = config.k_poses;
    spec.handcrafted_dim = static_cast<int>(train.front().feature.size());
    auto fusion_samples = [&](const std::vector<std::size_t>& idx, const std::vector<LabeledSample>& rows) {
      std::vector<FusionSample> out;
      out.reserve(idx.size());
      for (std::size_t j = 0; j < idx.size(); ++j) {
        out.push_back({fit_to_net(samples[idx[j]].image, spec.input_size), rows[j].feature, rows[j].pose.id - 1,
                       index_of(rows[j].label)});
      }
      return out;
    };
    const auto train_fs = fusion_samples(split.train, train);
    FusionTrainConfig fc = config.fusion;
    fc.seed = mix_seed(config.seed, 2000);
    const auto joint = run_stage("train", timing, [&] { return train_fusion(train_fs, spec, fc); });
    FusionTrainConfig agnostic_fc = fc;
    agnostic_fc.weights.lambda_pose = 0.0;
    if (agnostic_fc.weights.lambda_expr == 0.0) agnostic_fc.weights.lambda_expr = 1.0;
    const auto agnostic = run_stage("train_agnostic", timing, [&] { return train_fusion(train_fs, spec, agnostic_fc); });

    PoseAgreement cnn_agreement{"cnn", 0, 0, 0.0};
    report = run_stage("evaluate", timing, [&] {
      std::vector<EvalRecord> records;
      for (std::size_t j = 0; j < split.test.size(); ++j) {
        const auto& s = samples[split.test[j]];
        const GrayImage img = fit_to_net(s.image, spec.input_size);
        PoseClass pose = test[j].pose;
        if (config.cnn_pose) {
          const Eigen::VectorXd probs = pose_probabilities(joint.params, spec, img);
          Eigen::Index best = 0;
          probs.maxCoeff(&best);
          const PoseClass cnn{static_cast<int>(best) + 1};
          ++cnn_agreement.compared;
          if (cnn == pose) ++cnn_agreement.agreed;
          pose = fuse_pose_estimates(cnn, probs(best), pose);
        }
        EvalRecord rec;
        rec.truth = test[j].label;
        rec.pose = pose.id;
        rec.pose_aware = predict_expression(joint.params, spec, img, test[j].feature).label;
        rec.agnostic = predict_expression(agnostic.params, spec, img, test[j].feature).label;
        records.push_back(rec);
      }
      return build_report(records, config.k_poses, train_counts, {});
    });
    report.agreement.push_back(agreement);
    if (config.cnn_pose) report.agreement.push_back(cnn_agreement);
  }
  for (auto& a : report.agreement) {
    a.rate = a.compared ? static_cast<double>(a.agreed) / static_cast<double>(a.compared)
                        : std::numeric_limits<double>::quiet_NaN();
  }
  report.train_count = static_cast<std::int64_t>(split.train.size());
  report.test_count = static_cast<std::int64_t>(split.test.size());
  report.achieved_train_ratio = split.achieved_ratio;
  report.config = config_entries(config);
  std::vector<std::string> warnings = data->warnings;
  warnings.insert(warnings.end(), report.warnings.begin(), report.warnings.end());
  report.warnings = std::move(warnings);
  if (config.timing) report.timing = std::move(timing);
  return report;
}

}  // namespace posefer
