#pragma once

// Landmark files, label manifests, in-memory datasets and grouped splits.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "posefer/classify.hpp"
#include "posefer/image.hpp"
#include "posefer/shape.hpp"

namespace posefer {

/// `version: 1`, `n_points: N`, `{`, N lines of `x y`, `}`.
Shape load_pts(const std::string& path);
Shape parse_pts(const std::string& text, const std::string& source = "<text>");
std::string format_pts(const Shape& shape);
void save_pts(const Shape& shape, const std::string& path);

struct ManifestEntry {
  std::string image_path;
  std::string pts_path;
  std::optional<Expression> label;
  std::string group_id;
  /// Index of the entry this one mirrors.
  std::optional<std::size_t> flip_of;
  /// 1-based line in the source file; 0 for generated entries.
  int line = 0;
};

struct DatasetManifest {
  std::vector<ManifestEntry> entries;
  /// Relative paths resolve against this directory.
  std::string base_dir;
  std::vector<std::string> warnings;
};

/// CSV with header `image,pts,label,group` and an optional fifth column
/// `flip_of` holding a 0-based entry index. An empty label is unlabeled.
DatasetManifest load_manifest(const std::string& path);
DatasetManifest parse_manifest(const std::string& text, const std::string& source = "<text>");
std::string format_manifest(const DatasetManifest& manifest);

struct Sample {
  GrayImage image;
  Shape landmarks;
  std::optional<Expression> label;
  std::string group_id;
  /// Generator yaw in degrees when known.
  std::optional<double> yaw_deg;
};

struct Dataset {
  std::vector<Sample> samples;
  std::vector<std::string> warnings;
};

Dataset load_dataset(const DatasetManifest& manifest);

/// Appends a mirrored copy of every sample: flipped image and flip_reorder'd
/// landmarks mirrored about x = (width - 1) / 2, same group id.
void add_flips(Dataset& dataset, const Permutation& perm = default_flip_permutation());

struct SplitResult {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
  double achieved_ratio = 0.0;
};

/// Shuffles distinct groups with `seed` and assigns each whole group to the
/// side that brings the train fraction closest to `ratio`.
SplitResult split_grouped(std::span<const std::string> group_ids, double ratio, std::uint64_t seed);
SplitResult split_grouped(const DatasetManifest& manifest, double ratio, std::uint64_t seed);

}  // namespace posefer
