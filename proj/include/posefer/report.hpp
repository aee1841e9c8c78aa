#pragma once

// Evaluation report: per-pose and pose-agnostic confusion matrices, pose
// agreement statistics and a config echo. Emitted as text, CSV or JSON.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "posefer/classify.hpp"

namespace posefer {

struct PoseResult {
  int pose = 1;
  std::int64_t train_count = 0;
  std::int64_t test_count = 0;
  ConfusionMatrix matrix;
  /// NaN when the pose received no test samples.
  double accuracy = 0.0;
  /// The pose had too little training data and used the pose-agnostic model.
  bool fallback = false;
};

struct PoseAgreement {
  /// What the landmark pose was compared against, e.g. "threshold" or "cnn".
  std::string reference;
  std::int64_t compared = 0;
  std::int64_t agreed = 0;
  double rate = 0.0;
};

struct Report {
  std::vector<PoseResult> per_pose;
  ConfusionMatrix pose_aware;
  double pose_aware_accuracy = 0.0;
  /// Unweighted mean over poses with test samples.
  double mean_pose_accuracy = 0.0;
  ConfusionMatrix agnostic;
  double agnostic_accuracy = 0.0;
  std::vector<PoseAgreement> agreement;
  std::int64_t train_count = 0;
  std::int64_t test_count = 0;
  double achieved_train_ratio = 0.0;
  /// Ordered key/value echo of the configuration.
  std::vector<std::pair<std::string, std::string>> config;
  std::vector<std::string> warnings;
  /// Seconds per stage; only present when timing was requested.
  std::optional<std::vector<std::pair<std::string, double>>> timing;

  bool operator==(const Report& other) const;
};

enum class ReportFormat { Text, Csv, Json };
ReportFormat parse_report_format(std::string_view name);

std::string report_to_json(const Report& report);
Report report_from_json(const std::string& text);

struct CsvCell {
  /// Pose id as text, or "agnostic".
  std::string pose;
  Expression truth = Expression::Neutral;
  Expression predicted = Expression::Neutral;
  std::int64_t count = 0;
};

/// One row per (pose, true, pred, count), all 49 cells of every matrix.
std::string report_to_csv(const Report& report);
std::vector<CsvCell> parse_report_csv(const std::string& text);

/// Confusion matrices with row and column labels in expression order.
std::string report_to_text(const Report& report);
std::string confusion_to_text(const ConfusionMatrix& matrix, std::string_view title);

std::string format_report(const Report& report, ReportFormat format);
void emit_report(const Report& report, ReportFormat format, const std::string& path);

}  // namespace posefer
