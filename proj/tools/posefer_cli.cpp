// posefer command line: synthetic data, staged processing and the full
// pipeline. Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric
// failure.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "posefer/dataset.hpp"
#include "posefer/error.hpp"
#include "posefer/features.hpp"
#include "posefer/pipeline.hpp"
#include "posefer/posecluster.hpp"
#include "posefer/report.hpp"
#include "posefer/synth.hpp"

namespace fs = std::filesystem;
using namespace posefer;

namespace {

struct CommonOptions {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<int> poses;
  std::string features;
  std::string classifier;
  std::string out;
  std::string format = "text";
};

void add_common(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("--config", o.config_path, "Pipeline config file (key: value lines)");
  cmd->add_option("--seed", o.seed, "Random seed");
  cmd->add_option("--poses", o.poses, "Number of pose classes")->check(CLI::PositiveNumber);
  cmd->add_option("--features", o.features, "Comma list: sift, tplbp, tplbp_region, geom");
  cmd->add_option("--classifier", o.classifier, "linear | forest | fusion");
  cmd->add_option("--out", o.out, "Output directory");
  cmd->add_option("--format", o.format, "Report format: text | csv | json")
      ->check(CLI::IsMember({"text", "csv", "json"}));
}

PipelineConfig resolve_config(const CommonOptions& o) {
  PipelineConfig c;
  if (!o.config_path.empty()) c = load_pipeline_config(o.config_path);
  if (o.seed) c.seed = *o.seed;
  if (o.poses) c.k_poses = *o.poses;
  if (!o.features.empty()) c.features = parse_feature_list(o.features);
  if (!o.classifier.empty()) c.classifier = parse_classifier(o.classifier);
  c.validate();
  return c;
}

fs::path require_out(const CommonOptions& o) {
  if (o.out.empty()) throw Error(ErrorCode::InvalidConfig, "--out is required");
  fs::create_directories(o.out);
  return o.out;
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out << text;
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

std::string extension(ReportFormat f) {
  switch (f) {
    case ReportFormat::Text: return "txt";
    case ReportFormat::Csv: return "csv";
    case ReportFormat::Json: return "json";
  }
  return "txt";
}

void output_report(const Report& r, const CommonOptions& o) {
  const auto format = parse_report_format(o.format);
  if (o.out.empty()) {
    std::cout << format_report(r, format);
    return;
  }
  fs::create_directories(o.out);
  const auto path = fs::path(o.out) / ("report." + extension(format));
  emit_report(r, format, path.string());
  std::cerr << "wrote " << path.string() << "\n";
}

// index.csv written by `extract`: row,label,group,pose
struct IndexRow {
  std::optional<Expression> label;
  std::string group;
  int pose = 1;
};

std::vector<IndexRow> read_index(const fs::path& path) {
  std::istringstream in(read_file(path));
  std::string line;
  std::vector<IndexRow> rows;
  std::getline(in, line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string row, label, group, pose;
    std::getline(ls, row, ',');
    std::getline(ls, label, ',');
    std::getline(ls, group, ',');
    std::getline(ls, pose);
    IndexRow r;
    if (!label.empty()) {
      r.label = parse_expression(label);
      if (!r.label) throw Error(ErrorCode::UnknownLabel, path.string() + ": label '" + label + "'");
    }
    r.group = group;
    try {
      r.pose = std::stoi(pose);
    } catch (const std::logic_error&) {
      throw Error(ErrorCode::ParseError, path.string() + ": bad pose '" + pose + "'");
    }
    rows.push_back(std::move(r));
  }
  return rows;
}

const std::vector<FeatureFamily>& raw_families() {
  static const std::vector<FeatureFamily> f{FeatureFamily::Sift, FeatureFamily::TplbpGrid, FeatureFamily::TplbpRegion,
                                            FeatureFamily::Geom};
  return f;
}

Eigen::VectorXd& raw_part(RawFeatures& r, FeatureFamily f) {
  switch (f) {
    case FeatureFamily::Sift: return r.sift;
    case FeatureFamily::TplbpGrid: return r.tplbp_grid;
    case FeatureFamily::TplbpRegion: return r.tplbp_region;
    default: return r.geom;
  }
}

bool enabled(const FeatureToggles& t, FeatureFamily f) {
  switch (f) {
    case FeatureFamily::Sift: return t.sift;
    case FeatureFamily::TplbpGrid: return t.tplbp_grid;
    case FeatureFamily::TplbpRegion: return t.tplbp_region;
    case FeatureFamily::Geom: return t.geom;
    default: return false;
  }
}

std::vector<RawFeatures> read_raw(const fs::path& dir, const FeatureToggles& toggles, std::size_t rows) {
  std::vector<RawFeatures> raw(rows);
  for (auto f : raw_families()) {
    if (!enabled(toggles, f)) continue;
    const auto path = dir / (std::string(family_name(f)) + ".bin");
    const auto m = read_feature_matrix(path.string());
    if (static_cast<std::size_t>(m.rows.rows()) != rows) {
      throw Error(ErrorCode::DimensionMismatch, path.string() + " row count differs from index.csv");
    }
    for (std::size_t i = 0; i < rows; ++i) raw_part(raw[i], f) = m.rows.row(static_cast<Eigen::Index>(i)).transpose();
  }
  return raw;
}

// ---------------------------------------------------------------------------

int cmd_synth(const CommonOptions& o, SynthConfig sc) {
  if (o.seed) sc.seed = *o.seed;
  if (o.poses) sc.k_poses = *o.poses;
  const auto dir = require_out(o);
  const auto data = synth_generate(sc);
  write_synth_dataset(data, dir.string());
  std::cerr << "wrote " << data.dataset.samples.size() << " samples to " << dir.string() << "\n";
  return 0;
}

int cmd_fit_pose(const CommonOptions& o, const std::string& manifest_path) {
  const auto config = resolve_config(o);
  const auto dir = require_out(o);
  const auto manifest = load_manifest(manifest_path);
  std::vector<Shape> shapes;
  for (const auto& e : manifest.entries) {
    shapes.push_back(load_pts((fs::path(manifest.base_dir) / e.pts_path).string()));
  }
  const auto stage = fit_pose_stage(shapes, config.k_poses);
  save_pose_model(stage.model, (dir / "pose_model.txt").string());
  std::ostringstream os;
  os << "row,group,pose\n";
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    os << i << ',' << manifest.entries[i].group_id << ',' << assign_pose(stage.model, stage.aligned[i]).id << '\n';
  }
  write_file(dir / "poses.csv", os.str());
  std::cerr << "fitted " << config.k_poses << " pose classes on " << shapes.size() << " shapes\n";
  return 0;
}

int cmd_extract(const CommonOptions& o, const std::string& manifest_path, const std::string& pose_model_path) {
  const auto config = resolve_config(o);
  const auto dir = require_out(o);
  const auto manifest = load_manifest(manifest_path);
  const auto data = load_dataset(manifest);
  const auto model = load_pose_model(pose_model_path);
  std::vector<RawFeatures> raw;
  std::ostringstream index;
  index << "row,label,group,pose\n";
  for (std::size_t i = 0; i < data.samples.size(); ++i) {
    const auto& s = data.samples[i];
    const auto normalized = normalize_for_model(model, s.landmarks);
    raw.push_back(extract_raw(s, normalized, config));
    index << i << ',' << (s.label ? expression_name(*s.label) : "") << ',' << s.group_id << ','
          << assign_pose(model, normalized).id << '\n';
  }
  for (auto f : raw_families()) {
    if (!enabled(config.features, f) || raw.empty()) continue;
    FeatureMatrix m;
    m.family = f;
    m.rows.resize(static_cast<Eigen::Index>(raw.size()), raw_part(raw.front(), f).size());
    for (std::size_t i = 0; i < raw.size(); ++i) m.rows.row(static_cast<Eigen::Index>(i)) = raw_part(raw[i], f).transpose();
    write_feature_matrix(m, (dir / (std::string(family_name(f)) + ".bin")).string());
  }
  write_file(dir / "index.csv", index.str());
  write_file(dir / "config.txt", format_pipeline_config(config));
  std::cerr << "extracted " << format_feature_list(config.features) << " for " << raw.size() << " samples\n";
  return 0;
}

int cmd_train(const CommonOptions& o, const std::string& features_dir) {
  auto config = resolve_config(o);
  if (config.classifier == ClassifierKind::Fusion) {
    throw Error(ErrorCode::InvalidConfig, "the fusion classifier needs images; use the pipeline subcommand");
  }
  const auto dir = require_out(o);
  const auto index = read_index(fs::path(features_dir) / "index.csv");
  const auto raw = read_raw(features_dir, config.features, index.size());
  const auto transform = fit_transform(raw, config);
  std::vector<LabeledSample> train;
  std::vector<std::int64_t> counts(static_cast<std::size_t>(config.k_poses), 0);
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (!index[i].label) throw Error(ErrorCode::UnknownLabel, "row " + std::to_string(i) + " is unlabeled");
    if (index[i].pose < 1 || index[i].pose > config.k_poses) {
      throw Error(ErrorCode::DimensionMismatch, "row " + std::to_string(i) + " has pose outside 1..k");
    }
    ++counts[static_cast<std::size_t>(index[i].pose - 1)];
    train.push_back({apply_transform(transform, raw[i]), *index[i].label, PoseClass{index[i].pose}, index[i].group});
  }
  const auto models = train_models(train, config);
  write_file(dir / "transform.txt", serialize_transform(transform));
  write_file(dir / "config.txt", format_pipeline_config(config));
  save_classifier(models.agnostic, (dir / "model_agnostic.bin").string());
  for (const auto& [pose, model] : models.per_pose) {
    save_classifier(model, (dir / ("model_pose_" + std::to_string(pose) + ".bin")).string());
  }
  std::ostringstream os;
  for (std::size_t p = 0; p < counts.size(); ++p) os << (p ? " " : "") << counts[p];
  write_file(dir / "train_counts.txt", os.str() + "\n");
  for (const auto& w : models.warnings) std::cerr << "warning: " << w << "\n";
  std::cerr << "trained " << models.per_pose.size() << " pose models and one pose-agnostic model\n";
  return 0;
}

int cmd_evaluate(CommonOptions o, const std::string& features_dir, const std::string& models_dir) {
  const fs::path mdir(models_dir);
  if (o.config_path.empty()) o.config_path = (mdir / "config.txt").string();
  const auto config = resolve_config(o);
  const auto transform = deserialize_transform(read_file(mdir / "transform.txt"));
  const auto index = read_index(fs::path(features_dir) / "index.csv");
  const auto raw = read_raw(features_dir, transform.features, index.size());
  ModelBundle models;
  models.agnostic = load_classifier((mdir / "model_agnostic.bin").string());
  for (int p = 1; p <= config.k_poses; ++p) {
    const auto path = mdir / ("model_pose_" + std::to_string(p) + ".bin");
    if (fs::exists(path)) models.per_pose.emplace(p, load_classifier(path.string()));
  }
  std::vector<std::int64_t> counts;
  std::istringstream cs(read_file(mdir / "train_counts.txt"));
  for (std::int64_t v; cs >> v;) counts.push_back(v);
  std::vector<LabeledSample> test;
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (!index[i].label) throw Error(ErrorCode::UnknownLabel, "row " + std::to_string(i) + " is unlabeled");
    test.push_back({apply_transform(transform, raw[i]), *index[i].label, PoseClass{index[i].pose}, index[i].group});
  }
  auto report = evaluate_models(models, test, config.k_poses, counts);
  report.config = config_entries(config);
  output_report(report, o);
  return 0;
}

int cmd_pipeline(const CommonOptions& o, const std::string& manifest_path, SynthConfig sc) {
  const auto config = resolve_config(o);
  Dataset data;
  if (!manifest_path.empty()) {
    data = load_dataset(load_manifest(manifest_path));
  } else {
    sc.k_poses = config.k_poses;
    sc.seed = config.seed;
    data = synth_generate(sc).dataset;
  }
  const auto report = run_pipeline(config, data);
  output_report(report, o);
  return 0;
}

int exit_code(const Error& e) {
  switch (category_of(e.code())) {
    case ErrorCategory::Usage: return 1;
    case ErrorCategory::Numeric: return 3;
    case ErrorCategory::Data: return 2;
  }
  return 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Pose-aware facial expression recognition"};
  app.require_subcommand(1);

  CommonOptions synth_o, fit_o, extract_o, train_o, eval_o, pipe_o;
  SynthConfig synth_c;
  std::string fit_manifest, extract_manifest, extract_pose_model, train_features, eval_features, eval_models;
  std::string pipe_manifest;
  SynthConfig pipe_sc;
  pipe_sc.n_samples = 1000;

  auto* synth = app.add_subcommand("synth", "Write a synthetic dataset with known yaw and expression");
  add_common(synth, synth_o);
  synth->add_option("--n", synth_c.n_samples, "Number of samples");
  synth->add_option("--image-size", synth_c.image_size, "Rendered image size in pixels");
  synth->add_option("--noise", synth_c.noise_sigma, "Landmark jitter (face half-width = 1)");
  synth->add_option("--views", synth_c.views_per_identity, "Views per identity (one group each)");
  synth->add_flag("--confound", synth_c.confound, "Swap expression archetypes beyond 30 degrees of yaw");
  synth->add_option("--yaw-max", synth_c.yaw_max_deg, "Yaw is drawn uniformly from [-yaw-max, yaw-max]");

  auto* fit = app.add_subcommand("fit-pose", "Fit the pose model on a manifest's landmarks");
  add_common(fit, fit_o);
  fit->add_option("--manifest", fit_manifest, "Manifest CSV")->required();

  auto* extract = app.add_subcommand("extract", "Extract per-family feature matrices");
  add_common(extract, extract_o);
  extract->add_option("--manifest", extract_manifest, "Manifest CSV")->required();
  extract->add_option("--pose-model", extract_pose_model, "Pose model from fit-pose")->required();

  auto* train = app.add_subcommand("train", "Train per-pose and pose-agnostic classifiers");
  add_common(train, train_o);
  train->add_option("--feature-dir", train_features, "Directory written by extract")->required();

  auto* evaluate = app.add_subcommand("evaluate", "Evaluate trained classifiers on extracted features");
  add_common(evaluate, eval_o);
  evaluate->add_option("--feature-dir", eval_features, "Directory written by extract")->required();
  evaluate->add_option("--models", eval_models, "Directory written by train")->required();

  auto* pipeline = app.add_subcommand("pipeline", "Run every stage and emit a report");
  add_common(pipeline, pipe_o);
  pipeline->add_option("--manifest", pipe_manifest, "Manifest CSV; omit to use synthetic data");
  pipeline->add_option("--synth", pipe_sc.n_samples, "Synthetic sample count when no manifest is given");
  pipeline->add_flag("--confound", pipe_sc.confound, "Synthetic data with yaw-dependent expressions");
  pipeline->add_option("--yaw-max", pipe_sc.yaw_max_deg, "Synthetic yaw range is [-yaw-max, yaw-max]");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }
  if (synth->count("--yaw-max") > 0) synth_c.yaw_min_deg = -synth_c.yaw_max_deg;
  if (pipeline->count("--yaw-max") > 0) pipe_sc.yaw_min_deg = -pipe_sc.yaw_max_deg;

  try {
    if (synth->parsed()) return cmd_synth(synth_o, synth_c);
    if (fit->parsed()) return cmd_fit_pose(fit_o, fit_manifest);
    if (extract->parsed()) return cmd_extract(extract_o, extract_manifest, extract_pose_model);
    if (train->parsed()) return cmd_train(train_o, train_features);
    if (evaluate->parsed()) return cmd_evaluate(eval_o, eval_features, eval_models);
    if (pipeline->parsed()) return cmd_pipeline(pipe_o, pipe_manifest, pipe_sc);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code(e);
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
