#include "posefer/classify.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>
#include <numeric>

#include "posefer/error.hpp"
#include "posefer/rng.hpp"
#include "posefer/serialize.hpp"

namespace posefer {

namespace {

constexpr std::array<std::string_view, kExpressionCount> kExpressionNames{
    "Neutral", "Happy", "Sad", "Fear", "Angry", "Surprise", "Disgust"};

std::string lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

Eigen::Index check_samples(std::span<const LabeledSample> samples) {
  if (samples.empty()) throw Error(ErrorCode::SingleClassData, "no training samples");
  const auto dim = samples.front().feature.size();
  std::array<bool, kExpressionCount> present{};
  for (const auto& s : samples) {
    if (s.feature.size() != dim) {
      throw Error(ErrorCode::DimensionMismatch, "training features differ in length (" +
                                                    std::to_string(s.feature.size()) + " vs " +
                                                    std::to_string(dim) + ")");
    }
    present[static_cast<std::size_t>(index_of(s.label))] = true;
  }
  if (std::count(present.begin(), present.end(), true) < 2) {
    throw Error(ErrorCode::SingleClassData, "training data holds a single class");
  }
  return dim;
}

}  // namespace

std::string_view expression_name(Expression e) { return kExpressionNames[static_cast<std::size_t>(index_of(e))]; }

std::optional<Expression> parse_expression(std::string_view name) {
  const auto key = lower(name);
  for (int i = 0; i < kExpressionCount; ++i) {
    if (lower(kExpressionNames[static_cast<std::size_t>(i)]) == key) return static_cast<Expression>(i);
  }
  return std::nullopt;
}

std::string_view balancing_name(Balancing b) {
  switch (b) {
    case Balancing::None: return "none";
    case Balancing::Undersample: return "undersample";
    case Balancing::Oversample: return "oversample";
    case Balancing::ClassWeights: return "class_weights";
  }
  return "none";
}

Balancing parse_balancing(std::string_view name) {
  const auto key = lower(name);
  if (key == "none") return Balancing::None;
  if (key == "undersample") return Balancing::Undersample;
  if (key == "oversample") return Balancing::Oversample;
  if (key == "class_weights") return Balancing::ClassWeights;
  throw Error(ErrorCode::InvalidConfig, "unknown balancing strategy '" + std::string(name) + "'");
}

int argmax_lowest(std::span<const double> scores) {
  int best = 0;
  for (int i = 1; i < static_cast<int>(scores.size()); ++i) {
    if (scores[static_cast<std::size_t>(i)] > scores[static_cast<std::size_t>(best)]) best = i;
  }
  return best;
}

// ---------------------------------------------------------------------------
// linear

double linear_objective(const LinearModel& model, std::span<const LabeledSample> samples,
                        const TrainConfig& config) {
  double loss = 0.0;
  for (const auto& s : samples) {
    const Eigen::VectorXd scores = model.weights * s.feature + model.bias;
    const double w = config.class_weights[static_cast<std::size_t>(index_of(s.label))];
    for (int c = 0; c < kExpressionCount; ++c) {
      const double t = index_of(s.label) == c ? 1.0 : -1.0;
      loss += w * std::max(0.0, 1.0 - t * scores(c));
    }
  }
  return loss / static_cast<double>(samples.size()) + config.l2_lambda * model.weights.squaredNorm();
}

LinearModel train_linear(std::span<const LabeledSample> samples, const TrainConfig& config) {
  const auto dim = check_samples(samples);
  if (!(config.learning_rate > 0)) throw Error(ErrorCode::InvalidConfig, "learning rate must be positive");
  LinearModel model;
  model.config = config;
  model.weights = Eigen::MatrixXd::Zero(kExpressionCount, dim);
  model.bias = Eigen::VectorXd::Zero(kExpressionCount);

  Rng rng(config.seed);
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  // An epoch that raises the full-set objective is rolled back and the step
  // halved, so objective_history never increases.
  double step_scale = 1.0;
  double objective = linear_objective(model, samples, config);
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const double eta = step_scale * config.learning_rate / (1.0 + epoch);
    const double shrink = 1.0 - 2.0 * eta * config.l2_lambda;
    const Eigen::MatrixXd prev_weights = model.weights;
    const Eigen::VectorXd prev_bias = model.bias;
    rng.shuffle(order);
    for (const auto i : order) {
      const auto& s = samples[i];
      const int truth = index_of(s.label);
      const double w = config.class_weights[static_cast<std::size_t>(truth)];
      for (int c = 0; c < kExpressionCount; ++c) {
        const double t = truth == c ? 1.0 : -1.0;
        const double score = model.weights.row(c).dot(s.feature) + model.bias(c);
        model.weights.row(c) *= shrink;
        if (t * score < 1.0) {
          model.weights.row(c) += (eta * w * t) * s.feature.transpose();
          model.bias(c) += eta * w * t;
        }
      }
    }
    const double next = linear_objective(model, samples, config);
    if (next > objective) {
      model.weights = prev_weights;
      model.bias = prev_bias;
      step_scale *= 0.5;
    } else {
      objective = next;
    }
    model.objective_history.push_back(objective);
  }
  return model;
}

Prediction predict(const LinearModel& model, const Eigen::VectorXd& feature) {
  if (feature.size() != model.dim()) {
    throw Error(ErrorCode::DimensionMismatch, "feature length " + std::to_string(feature.size()) +
                                                  " vs model " + std::to_string(model.dim()));
  }
  const Eigen::VectorXd s = model.weights * feature + model.bias;
  Prediction p;
  for (int c = 0; c < kExpressionCount; ++c) p.scores[static_cast<std::size_t>(c)] = s(c);
  p.label = static_cast<Expression>(argmax_lowest(p.scores));
  return p;
}

// ---------------------------------------------------------------------------
// forest

const TreeNode& DecisionTree::leaf_for(const Eigen::VectorXd& x) const {
  const TreeNode* node = &nodes.front();
  while (node->feature >= 0) {
    node = &nodes[static_cast<std::size_t>(x(node->feature) <= node->threshold ? node->left : node->right)];
  }
  return *node;
}

namespace {

double gini(const ClassScores& counts, double n) {
  if (n <= 0) return 0.0;
  double sum_sq = 0.0;
  for (double c : counts) sum_sq += c * c;
  return 1.0 - sum_sq / (n * n);
}

class TreeBuilder {
 public:
  TreeBuilder(std::span<const LabeledSample> samples, const ForestConfig& config, int features_per_node, Rng& rng)
      : samples_(samples), config_(config), mtry_(features_per_node), rng_(rng) {
    dim_ = samples.front().feature.size();
  }

  DecisionTree build(std::vector<std::size_t> indices) {
    DecisionTree tree;
    grow(tree, std::move(indices), 0);
    return tree;
  }

 private:
  struct Split {
    int feature = -1;
    double threshold = 0.0;
    double impurity = std::numeric_limits<double>::infinity();
  };

  int grow(DecisionTree& tree, std::vector<std::size_t> indices, int depth) {
    const int id = static_cast<int>(tree.nodes.size());
    tree.nodes.emplace_back();
    ClassScores counts{};
    for (auto i : indices) counts[static_cast<std::size_t>(index_of(samples_[i].label))] += 1.0;
    tree.nodes[static_cast<std::size_t>(id)].counts = counts;

    const auto n = indices.size();
    const bool pure = std::count_if(counts.begin(), counts.end(), [](double c) { return c > 0; }) <= 1;
    const bool depth_limited = config_.max_depth > 0 && depth >= config_.max_depth;
    if (pure || depth_limited || n < 2 * static_cast<std::size_t>(config_.min_leaf)) return id;

    const auto split = find_split(indices);
    if (split.feature < 0) return id;

    std::vector<std::size_t> left;
    std::vector<std::size_t> right;
    for (auto i : indices) {
      (samples_[i].feature(split.feature) <= split.threshold ? left : right).push_back(i);
    }
    indices.clear();
    indices.shrink_to_fit();
    const int l = grow(tree, std::move(left), depth + 1);
    const int r = grow(tree, std::move(right), depth + 1);
    auto& node = tree.nodes[static_cast<std::size_t>(id)];
    node.feature = split.feature;
    node.threshold = split.threshold;
    node.left = l;
    node.right = r;
    return id;
  }

  Split find_split(const std::vector<std::size_t>& indices) {
    // Visit features in random order; stop once mtry were examined and at
    // least one valid split exists.
    std::vector<int> order(static_cast<std::size_t>(dim_));
    std::iota(order.begin(), order.end(), 0);
    Split best;
    const auto n = indices.size();
    std::vector<std::pair<double, int>> column(n);
    int examined = 0;
    for (std::size_t k = 0; k < order.size(); ++k) {
      if (examined >= mtry_ && best.feature >= 0) break;
      const std::size_t pick = k + static_cast<std::size_t>(rng_.below(order.size() - k));
      std::swap(order[k], order[pick]);
      const int f = order[k];
      ++examined;
      for (std::size_t j = 0; j < n; ++j) {
        const auto& s = samples_[indices[j]];
        column[j] = {s.feature(f), index_of(s.label)};
      }
      std::sort(column.begin(), column.end());
      if (column.front().first == column.back().first) continue;
      ClassScores left{};
      ClassScores right{};
      for (const auto& [v, c] : column) right[static_cast<std::size_t>(c)] += 1.0;
      for (std::size_t j = 0; j + 1 < n; ++j) {
        const auto c = static_cast<std::size_t>(column[j].second);
        left[c] += 1.0;
        right[c] -= 1.0;
        if (column[j].first == column[j + 1].first) continue;
        const auto nl = static_cast<double>(j + 1);
        const auto nr = static_cast<double>(n - j - 1);
        if (nl < config_.min_leaf || nr < config_.min_leaf) continue;
        const double impurity = (nl * gini(left, nl) + nr * gini(right, nr)) / static_cast<double>(n);
        if (impurity < best.impurity) {
          best.impurity = impurity;
          best.feature = f;
          best.threshold = 0.5 * (column[j].first + column[j + 1].first);
          // Midpoints can round onto the upper value for adjacent doubles.
          if (!(best.threshold < column[j + 1].first)) best.threshold = column[j].first;
        }
      }
    }
    return best;
  }

  std::span<const LabeledSample> samples_;
  ForestConfig config_;
  int mtry_;
  Rng& rng_;
  Eigen::Index dim_ = 0;
};

int tree_vote(const DecisionTree& tree, const Eigen::VectorXd& x) {
  return argmax_lowest(tree.leaf_for(x).counts);
}

}  // namespace

ForestModel train_forest(std::span<const LabeledSample> samples, const TrainConfig& config) {
  const auto dim = check_samples(samples);
  const auto& fc = config.forest;
  if (fc.trees < 1 || fc.min_leaf < 1) throw Error(ErrorCode::InvalidConfig, "forest needs trees >= 1, min_leaf >= 1");
  const int mtry = fc.features_per_node > 0
                       ? std::min<int>(fc.features_per_node, static_cast<int>(dim))
                       : std::max(1, static_cast<int>(std::lround(std::sqrt(static_cast<double>(dim)))));
  ForestModel model;
  model.dim = dim;
  model.config = fc;

  Rng rng(config.seed);
  TreeBuilder builder(samples, fc, mtry, rng);
  const auto n = samples.size();
  std::vector<ClassScores> oob_votes(n, ClassScores{});
  std::vector<bool> ever_oob(n, false);
  for (int t = 0; t < fc.trees; ++t) {
    std::vector<std::size_t> bag(n);
    std::vector<bool> in_bag(n, !fc.bootstrap);
    if (fc.bootstrap) {
      for (auto& b : bag) {
        b = static_cast<std::size_t>(rng.below(n));
        in_bag[b] = true;
      }
      std::sort(bag.begin(), bag.end());
    } else {
      std::iota(bag.begin(), bag.end(), std::size_t{0});
    }
    model.trees.push_back(builder.build(std::move(bag)));
    for (std::size_t i = 0; i < n; ++i) {
      if (in_bag[i]) continue;
      ever_oob[i] = true;
      oob_votes[i][static_cast<std::size_t>(tree_vote(model.trees.back(), samples[i].feature))] += 1.0;
    }
  }
  std::size_t oob_total = 0;
  std::size_t oob_correct = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!ever_oob[i]) continue;
    ++oob_total;
    if (argmax_lowest(oob_votes[i]) == index_of(samples[i].label)) ++oob_correct;
  }
  model.oob_accuracy = oob_total ? static_cast<double>(oob_correct) / static_cast<double>(oob_total)
                                 : std::numeric_limits<double>::quiet_NaN();
  return model;
}

Prediction predict(const ForestModel& model, const Eigen::VectorXd& feature) {
  if (feature.size() != model.dim) {
    throw Error(ErrorCode::DimensionMismatch, "feature length " + std::to_string(feature.size()) +
                                                  " vs model " + std::to_string(model.dim));
  }
  Prediction p;
  for (const auto& tree : model.trees) p.scores[static_cast<std::size_t>(tree_vote(tree, feature))] += 1.0;
  for (auto& s : p.scores) s /= static_cast<double>(model.trees.size());
  p.label = static_cast<Expression>(argmax_lowest(p.scores));
  return p;
}

Prediction predict(const Classifier& model, const Eigen::VectorXd& feature) {
  return std::visit([&](const auto& m) { return predict(m, feature); }, model);
}

Classifier train_classifier(std::span<const LabeledSample> samples, const TrainConfig& config, bool forest) {
  if (forest) return train_forest(samples, config);
  return train_linear(samples, config);
}

// ---------------------------------------------------------------------------

BalanceResult balance(std::span<const LabeledSample> samples, Balancing strategy, std::uint64_t seed) {
  BalanceResult out;
  if (strategy == Balancing::None) {
    out.samples.assign(samples.begin(), samples.end());
    return out;
  }
  if (samples.empty()) throw Error(ErrorCode::EmptyClass, "cannot balance an empty sample set");
  std::array<std::vector<std::size_t>, kExpressionCount> by_class;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    by_class[static_cast<std::size_t>(index_of(samples[i].label))].push_back(i);
  }
  std::size_t min_count = samples.size();
  std::size_t max_count = 0;
  for (const auto& idx : by_class) {
    if (idx.empty()) continue;
    min_count = std::min(min_count, idx.size());
    max_count = std::max(max_count, idx.size());
  }

  Rng rng(seed);
  switch (strategy) {
    case Balancing::Undersample:
      for (auto idx : by_class) {
        if (idx.empty()) continue;
        rng.shuffle(idx);
        idx.resize(min_count);
        std::sort(idx.begin(), idx.end());
        for (auto i : idx) out.samples.push_back(samples[i]);
      }
      break;
    case Balancing::Oversample:
      for (const auto& idx : by_class) {
        if (idx.empty()) continue;
        for (auto i : idx) out.samples.push_back(samples[i]);
        for (std::size_t k = idx.size(); k < max_count; ++k) {
          out.samples.push_back(samples[idx[static_cast<std::size_t>(rng.below(idx.size()))]]);
        }
      }
      break;
    case Balancing::ClassWeights:
      out.samples.assign(samples.begin(), samples.end());
      for (int c = 0; c < kExpressionCount; ++c) {
        const auto& idx = by_class[static_cast<std::size_t>(c)];
        if (!idx.empty()) {
          out.class_weights[static_cast<std::size_t>(c)] =
              static_cast<double>(max_count) / static_cast<double>(idx.size());
        }
      }
      break;
    case Balancing::None:
      break;
  }
  return out;
}

std::vector<LabeledSample> mine_hard_examples(const Classifier& model, std::span<const LabeledSample> samples,
                                              double band) {
  std::vector<LabeledSample> hard;
  for (const auto& s : samples) {
    const auto p = predict(model, s.feature);
    auto sorted = p.scores;
    std::partial_sort(sorted.begin(), sorted.begin() + 2, sorted.end(), std::greater<>());
    const double margin = sorted[0] - sorted[1];
    if (p.label != s.label || margin < band) hard.push_back(s);
  }
  return hard;
}

ConfusionMatrix evaluate(const Classifier& model, std::span<const LabeledSample> samples) {
  ConfusionMatrix m;
  for (const auto& s : samples) m.add(s.label, predict(model, s.feature).label);
  return m;
}

double confusion_accuracy(const ConfusionMatrix& matrix) {
  const auto total = matrix.total();
  if (total <= 0) throw Error(ErrorCode::EmptyMatrix, "confusion matrix holds no samples");
  return static_cast<double>(matrix.correct()) / static_cast<double>(total);
}

// ---------------------------------------------------------------------------
// model container: magic, version, kind, class names, dims, parameters

namespace {

constexpr char kModelMagic[4] = {'P', 'F', 'M', 'D'};
constexpr std::uint32_t kModelVersion = 1;
constexpr std::uint32_t kKindLinear = 1;
constexpr std::uint32_t kKindForest = 2;

void write_header(BinaryWriter& w, std::uint32_t kind, std::uint64_t dim) {
  w.bytes(std::string_view(kModelMagic, 4));
  w.u32(kModelVersion);
  w.u32(kind);
  w.u32(kExpressionCount);
  for (auto name : kExpressionNames) w.str(name);
  w.u64(dim);
}

void write_config(BinaryWriter& w, const TrainConfig& c) {
  w.i32(c.epochs);
  w.f64(c.learning_rate);
  w.f64(c.l2_lambda);
  w.u64(c.seed);
  w.u32(static_cast<std::uint32_t>(c.balancing));
  w.f64(c.hard_mining_band);
  for (double v : c.class_weights) w.f64(v);
  w.i32(c.forest.trees);
  w.i32(c.forest.max_depth);
  w.i32(c.forest.min_leaf);
  w.u32(c.forest.bootstrap ? 1 : 0);
  w.i32(c.forest.features_per_node);
}

TrainConfig read_config(BinaryReader& r) {
  TrainConfig c;
  c.epochs = r.i32();
  c.learning_rate = r.f64();
  c.l2_lambda = r.f64();
  c.seed = r.u64();
  c.balancing = static_cast<Balancing>(r.u32());
  c.hard_mining_band = r.f64();
  for (double& v : c.class_weights) v = r.f64();
  c.forest.trees = r.i32();
  c.forest.max_depth = r.i32();
  c.forest.min_leaf = r.i32();
  c.forest.bootstrap = r.u32() != 0;
  c.forest.features_per_node = r.i32();
  return c;
}

}  // namespace

void save_classifier(const Classifier& model, const std::string& path) {
  BinaryWriter w;
  if (const auto* lin = std::get_if<LinearModel>(&model)) {
    write_header(w, kKindLinear, static_cast<std::uint64_t>(lin->dim()));
    write_config(w, lin->config);
    w.matrix(lin->weights);
    w.f64s(std::span<const double>(lin->bias.data(), static_cast<std::size_t>(lin->bias.size())));
    w.f64s(lin->objective_history);
  } else {
    const auto& forest = std::get<ForestModel>(model);
    write_header(w, kKindForest, static_cast<std::uint64_t>(forest.dim));
    TrainConfig c;
    c.forest = forest.config;
    write_config(w, c);
    w.f64(forest.oob_accuracy);
    w.u64(forest.trees.size());
    for (const auto& tree : forest.trees) {
      w.u64(tree.nodes.size());
      for (const auto& node : tree.nodes) {
        w.i32(node.feature);
        w.f64(node.threshold);
        w.i32(node.left);
        w.i32(node.right);
        for (double v : node.counts) w.f64(v);
      }
    }
  }
  w.save(path);
}

Classifier load_classifier(const std::string& path) {
  auto r = BinaryReader::load(path);
  if (r.bytes(4) != std::string_view(kModelMagic, 4)) throw Error(ErrorCode::ParseError, path + ": not a model file");
  if (r.u32() != kModelVersion) throw Error(ErrorCode::ParseError, path + ": unsupported model version");
  const auto kind = r.u32();
  if (r.u32() != kExpressionCount) throw Error(ErrorCode::ParseError, path + ": unexpected class count");
  for (auto name : kExpressionNames) {
    if (r.str() != name) throw Error(ErrorCode::ParseError, path + ": class names differ");
  }
  const auto dim = static_cast<Eigen::Index>(r.u64());
  const auto config = read_config(r);
  if (kind == kKindLinear) {
    LinearModel m;
    m.config = config;
    m.weights = r.matrix();
    const auto bias = r.f64s();
    m.bias = Eigen::Map<const Eigen::VectorXd>(bias.data(), static_cast<Eigen::Index>(bias.size()));
    m.objective_history = r.f64s();
    if (m.weights.rows() != kExpressionCount || m.weights.cols() != dim || m.bias.size() != kExpressionCount) {
      throw Error(ErrorCode::ParseError, path + ": inconsistent linear model");
    }
    return m;
  }
  if (kind == kKindForest) {
    ForestModel m;
    m.dim = dim;
    m.config = config.forest;
    m.oob_accuracy = r.f64();
    const auto trees = r.u64();
    for (std::uint64_t t = 0; t < trees; ++t) {
      DecisionTree tree;
      const auto count = r.u64();
      for (std::uint64_t k = 0; k < count; ++k) {
        TreeNode node;
        node.feature = r.i32();
        node.threshold = r.f64();
        node.left = r.i32();
        node.right = r.i32();
        for (double& v : node.counts) v = r.f64();
        const auto limit = static_cast<int>(count);
        if (node.feature >= dim || (node.feature >= 0 && (node.left <= static_cast<int>(k) || node.left >= limit ||
                                                          node.right <= static_cast<int>(k) || node.right >= limit))) {
          throw Error(ErrorCode::ParseError, path + ": corrupt tree node");
        }
        tree.nodes.push_back(node);
      }
      if (tree.nodes.empty()) throw Error(ErrorCode::ParseError, path + ": empty tree");
      m.trees.push_back(std::move(tree));
    }
    return m;
  }
  throw Error(ErrorCode::ParseError, path + ": unknown model kind");
}

}  // namespace posefer
