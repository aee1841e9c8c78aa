#include "posefer/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_map>

#include "posefer/error.hpp"
#include "posefer/rng.hpp"
#include "posefer/serialize.hpp"

namespace posefer {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path);
  out << text;
  if (!out) throw Error(ErrorCode::IoError, "write failed for " + path);
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) out.push_back(trim(cell));
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::string resolve(const std::string& base, const std::string& path) {
  if (base.empty() || std::filesystem::path(path).is_absolute()) return path;
  return (std::filesystem::path(base) / path).string();
}

}  // namespace

Shape parse_pts(const std::string& text, const std::string& source) {
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  auto fail = [&](const std::string& msg) -> void {
    throw Error(ErrorCode::ParseError, source + ":" + std::to_string(line_no) + ": " + msg);
  };
  auto next = [&]() -> std::optional<std::string> {
    while (std::getline(in, line)) {
      ++line_no;
      auto t = trim(line);
      if (!t.empty()) return t;
    }
    return std::nullopt;
  };
  auto header = [&](std::string_view key) -> std::string {
    const auto l = next();
    if (!l) fail("missing '" + std::string(key) + ":' header");
    const auto colon = l->find(':');
    if (colon == std::string::npos || trim(std::string_view(*l).substr(0, colon)) != key) {
      fail("expected '" + std::string(key) + ":' header, got '" + *l + "'");
    }
    return trim(std::string_view(*l).substr(colon + 1));
  };

  if (header("version").empty()) fail("empty version");
  const auto count_text = header("n_points");
  long n = 0;
  try {
    std::size_t used = 0;
    n = std::stol(count_text, &used);
    if (used != count_text.size() || n <= 0) fail("bad n_points '" + count_text + "'");
  } catch (const std::logic_error&) {
    fail("bad n_points '" + count_text + "'");
  }
  const auto open = next();
  if (!open || *open != "{") fail("expected '{'");

  std::vector<Point2> points;
  bool closed = false;
  while (const auto l = next()) {
    if (*l == "}") {
      closed = true;
      break;
    }
    std::istringstream ls(*l);
    std::string xs, ys, extra;
    if (!(ls >> xs >> ys) || (ls >> extra)) fail("expected 'x y', got '" + *l + "'");
    try {
      points.emplace_back(parse_double(xs), parse_double(ys));
    } catch (const Error&) {
      fail("bad coordinate line '" + *l + "'");
    }
  }
  if (!closed) fail("missing '}'");
  if (next()) fail("trailing content after '}'");
  if (static_cast<long>(points.size()) != n) {
    throw Error(ErrorCode::PointCountMismatch, source + ": n_points is " + std::to_string(n) + " but " +
                                                   std::to_string(points.size()) + " coordinates were read");
  }
  Shape shape(points.size(), 2);
  for (std::size_t i = 0; i < points.size(); ++i) shape.row(static_cast<Eigen::Index>(i)) = points[i].transpose();
  return shape;
}

Shape load_pts(const std::string& path) { return parse_pts(read_text(path), path); }

std::string format_pts(const Shape& shape) {
  std::ostringstream os;
  os << "version: 1\nn_points: " << shape.rows() << "\n{\n";
  for (Eigen::Index i = 0; i < shape.rows(); ++i) {
    os << format_double(shape(i, 0)) << ' ' << format_double(shape(i, 1)) << '\n';
  }
  os << "}\n";
  return os.str();
}

void save_pts(const Shape& shape, const std::string& path) { write_text(path, format_pts(shape)); }

DatasetManifest parse_manifest(const std::string& text, const std::string& source) {
  DatasetManifest m;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  bool have_header = false;
  bool has_flip = false;
  std::set<std::pair<std::string, std::string>> seen;
  while (std::getline(in, line)) {
    ++line_no;
    const auto t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    const auto cells = split_csv(t);
    auto fail = [&](ErrorCode code, const std::string& msg) {
      throw Error(code, source + ":" + std::to_string(line_no) + ": " + msg);
    };
    if (!have_header) {
      const bool base = cells.size() >= 4 && cells[0] == "image" && cells[1] == "pts" && cells[2] == "label" &&
                        cells[3] == "group";
      has_flip = cells.size() == 5 && cells[4] == "flip_of";
      if (!base || (cells.size() != 4 && !has_flip)) fail(ErrorCode::ParseError, "expected header image,pts,label,group");
      have_header = true;
      continue;
    }
    const std::size_t want = has_flip ? 5 : 4;
    if (cells.size() != want && !(has_flip && cells.size() == 4)) {
      fail(ErrorCode::ParseError, "expected " + std::to_string(want) + " columns, got " + std::to_string(cells.size()));
    }
    ManifestEntry e;
    e.image_path = cells[0];
    e.pts_path = cells[1];
    e.group_id = cells[3];
    e.line = line_no;
    if (e.image_path.empty() || e.pts_path.empty()) fail(ErrorCode::ParseError, "empty path");
    if (e.group_id.empty()) fail(ErrorCode::ParseError, "empty group id");
    if (!cells[2].empty()) {
      e.label = parse_expression(cells[2]);
      if (!e.label) fail(ErrorCode::UnknownLabel, "unknown expression label '" + cells[2] + "'");
    }
    if (has_flip && cells.size() == 5 && !cells[4].empty()) {
      try {
        std::size_t used = 0;
        const long v = std::stol(cells[4], &used);
        if (used != cells[4].size() || v < 0) throw std::invalid_argument("flip_of");
        e.flip_of = static_cast<std::size_t>(v);
      } catch (const std::logic_error&) {
        fail(ErrorCode::ParseError, "bad flip_of '" + cells[4] + "'");
      }
    }
    if (!seen.emplace(e.image_path, e.pts_path).second) {
      m.warnings.push_back(source + ":" + std::to_string(line_no) + ": duplicate (image, pts) pair " + e.image_path +
                           ", " + e.pts_path);
    }
    m.entries.push_back(std::move(e));
  }
  if (!have_header) throw Error(ErrorCode::ParseError, source + ": missing header");
  for (const auto& e : m.entries) {
    if (!e.flip_of) continue;
    if (*e.flip_of >= m.entries.size()) {
      throw Error(ErrorCode::ParseError, source + ":" + std::to_string(e.line) + ": flip_of out of range");
    }
    if (m.entries[*e.flip_of].group_id != e.group_id) {
      throw Error(ErrorCode::ParseError, source + ":" + std::to_string(e.line) + ": flip pair must share group id");
    }
  }
  return m;
}

DatasetManifest load_manifest(const std::string& path) {
  auto m = parse_manifest(read_text(path), path);
  m.base_dir = std::filesystem::path(path).parent_path().string();
  return m;
}

std::string format_manifest(const DatasetManifest& manifest) {
  const bool flips = std::any_of(manifest.entries.begin(), manifest.entries.end(),
                                 [](const ManifestEntry& e) { return e.flip_of.has_value(); });
  std::ostringstream os;
  os << "image,pts,label,group" << (flips ? ",flip_of" : "") << '\n';
  for (const auto& e : manifest.entries) {
    os << e.image_path << ',' << e.pts_path << ',' << (e.label ? expression_name(*e.label) : "") << ','
       << e.group_id;
    if (flips) {
      os << ',';
      if (e.flip_of) os << *e.flip_of;
    }
    os << '\n';
  }
  return os.str();
}

Dataset load_dataset(const DatasetManifest& manifest) {
  Dataset d;
  d.warnings = manifest.warnings;
  d.samples.reserve(manifest.entries.size());
  for (const auto& e : manifest.entries) {
    Sample s;
    s.image = read_pgm(resolve(manifest.base_dir, e.image_path));
    s.landmarks = load_pts(resolve(manifest.base_dir, e.pts_path));
    s.label = e.label;
    s.group_id = e.group_id;
    d.samples.push_back(std::move(s));
  }
  return d;
}

void add_flips(Dataset& dataset, const Permutation& perm) {
  const auto n = dataset.samples.size();
  dataset.samples.reserve(2 * n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& s = dataset.samples[i];
    Sample f;
    f.image = flip_horizontal(s.image);
    f.landmarks = flip_reorder(s.landmarks, perm, static_cast<double>(s.image.width() - 1));
    f.label = s.label;
    f.group_id = s.group_id;
    if (s.yaw_deg) f.yaw_deg = -*s.yaw_deg;
    dataset.samples.push_back(std::move(f));
  }
}

SplitResult split_grouped(std::span<const std::string> group_ids, double ratio, std::uint64_t seed) {
  if (!(ratio > 0.0 && ratio < 1.0)) throw Error(ErrorCode::InvalidConfig, "train ratio must be in (0, 1)");
  std::vector<std::string> groups;
  std::unordered_map<std::string, std::vector<std::size_t>> members;
  for (std::size_t i = 0; i < group_ids.size(); ++i) {
    auto [it, inserted] = members.try_emplace(group_ids[i]);
    if (inserted) groups.push_back(group_ids[i]);
    it->second.push_back(i);
  }
  if (groups.size() < 2) {
    throw Error(ErrorCode::TooFewGroups, "grouped split needs at least 2 groups, got " + std::to_string(groups.size()));
  }
  Rng rng(seed);
  rng.shuffle(groups);

  const double target = ratio * static_cast<double>(group_ids.size());
  std::vector<bool> to_train(groups.size(), false);
  double train_count = 0.0;
  for (std::size_t g = 0; g < groups.size(); ++g) {
    const auto size = static_cast<double>(members[groups[g]].size());
    if (std::abs(train_count + size - target) < std::abs(train_count - target)) {
      to_train[g] = true;
      train_count += size;
    }
  }
  // Both sides must be non-empty.
  if (std::none_of(to_train.begin(), to_train.end(), [](bool b) { return b; })) to_train.front() = true;
  if (std::all_of(to_train.begin(), to_train.end(), [](bool b) { return b; })) to_train.back() = false;

  SplitResult r;
  for (std::size_t g = 0; g < groups.size(); ++g) {
    auto& side = to_train[g] ? r.train : r.test;
    const auto& idx = members[groups[g]];
    side.insert(side.end(), idx.begin(), idx.end());
  }
  std::sort(r.train.begin(), r.train.end());
  std::sort(r.test.begin(), r.test.end());
  r.achieved_ratio = static_cast<double>(r.train.size()) / static_cast<double>(group_ids.size());
  return r;
}

SplitResult split_grouped(const DatasetManifest& manifest, double ratio, std::uint64_t seed) {
  std::vector<std::string> ids;
  ids.reserve(manifest.entries.size());
  for (const auto& e : manifest.entries) ids.push_back(e.group_id);
  return split_grouped(ids, ratio, seed);
}

}  // namespace posefer
