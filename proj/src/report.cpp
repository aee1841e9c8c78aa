#include "posefer/report.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "posefer/error.hpp"

namespace posefer {

namespace {

using nlohmann::json;

bool same_double(double a, double b) { return (std::isnan(a) && std::isnan(b)) || a == b; }

json number(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

double read_number(const json& j) {
  return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>();
}

json matrix_json(const ConfusionMatrix& m) {
  json rows = json::array();
  for (int r = 0; r < kExpressionCount; ++r) {
    json row = json::array();
    for (int c = 0; c < kExpressionCount; ++c) row.push_back(m.counts(r, c));
    rows.push_back(row);
  }
  return rows;
}

ConfusionMatrix matrix_from_json(const json& j) {
  if (!j.is_array() || j.size() != kExpressionCount) throw Error(ErrorCode::ParseError, "confusion matrix needs 7 rows");
  ConfusionMatrix m;
  for (int r = 0; r < kExpressionCount; ++r) {
    const auto& row = j.at(static_cast<std::size_t>(r));
    if (!row.is_array() || row.size() != kExpressionCount) {
      throw Error(ErrorCode::ParseError, "confusion matrix rows need 7 entries");
    }
    for (int c = 0; c < kExpressionCount; ++c) {
      const auto v = row.at(static_cast<std::size_t>(c)).get<std::int64_t>();
      if (v < 0) throw Error(ErrorCode::ParseError, "negative confusion count");
      m.counts(r, c) = v;
    }
  }
  return m;
}

std::string fixed(double v, int digits = 4) {
  if (std::isnan(v)) return "n/a";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

}  // namespace

bool Report::operator==(const Report& o) const {
  auto same_pose = [](const PoseResult& a, const PoseResult& b) {
    return a.pose == b.pose && a.train_count == b.train_count && a.test_count == b.test_count &&
           a.matrix == b.matrix && same_double(a.accuracy, b.accuracy) && a.fallback == b.fallback;
  };
  auto same_agreement = [](const PoseAgreement& a, const PoseAgreement& b) {
    return a.reference == b.reference && a.compared == b.compared && a.agreed == b.agreed &&
           same_double(a.rate, b.rate);
  };
  if (per_pose.size() != o.per_pose.size() || agreement.size() != o.agreement.size()) return false;
  for (std::size_t i = 0; i < per_pose.size(); ++i) {
    if (!same_pose(per_pose[i], o.per_pose[i])) return false;
  }
  for (std::size_t i = 0; i < agreement.size(); ++i) {
    if (!same_agreement(agreement[i], o.agreement[i])) return false;
  }
  if (timing.has_value() != o.timing.has_value()) return false;
  if (timing) {
    if (timing->size() != o.timing->size()) return false;
    for (std::size_t i = 0; i < timing->size(); ++i) {
      if ((*timing)[i].first != (*o.timing)[i].first || !same_double((*timing)[i].second, (*o.timing)[i].second)) {
        return false;
      }
    }
  }
  return pose_aware == o.pose_aware && same_double(pose_aware_accuracy, o.pose_aware_accuracy) &&
         same_double(mean_pose_accuracy, o.mean_pose_accuracy) && agnostic == o.agnostic &&
         same_double(agnostic_accuracy, o.agnostic_accuracy) && train_count == o.train_count &&
         test_count == o.test_count && same_double(achieved_train_ratio, o.achieved_train_ratio) &&
         config == o.config && warnings == o.warnings;
}

ReportFormat parse_report_format(std::string_view name) {
  if (name == "text") return ReportFormat::Text;
  if (name == "csv") return ReportFormat::Csv;
  if (name == "json") return ReportFormat::Json;
  throw Error(ErrorCode::InvalidConfig, "unknown report format '" + std::string(name) + "'");
}

std::string report_to_json(const Report& r) {
  json j;
  j["format"] = "posefer-report";
  j["version"] = 1;
  json labels = json::array();
  for (auto e : kAllExpressions) labels.push_back(std::string(expression_name(e)));
  j["labels"] = labels;
  json poses = json::array();
  for (const auto& p : r.per_pose) {
    poses.push_back({{"pose", p.pose},
                     {"train_count", p.train_count},
                     {"test_count", p.test_count},
                     {"accuracy", number(p.accuracy)},
                     {"fallback", p.fallback},
                     {"confusion", matrix_json(p.matrix)}});
  }
  j["per_pose"] = poses;
  j["pose_aware"] = {{"accuracy", number(r.pose_aware_accuracy)},
                     {"mean_pose_accuracy", number(r.mean_pose_accuracy)},
                     {"confusion", matrix_json(r.pose_aware)}};
  j["agnostic"] = {{"accuracy", number(r.agnostic_accuracy)}, {"confusion", matrix_json(r.agnostic)}};
  json agreement = json::array();
  for (const auto& a : r.agreement) {
    agreement.push_back(
        {{"reference", a.reference}, {"compared", a.compared}, {"agreed", a.agreed}, {"rate", number(a.rate)}});
  }
  j["pose_agreement"] = agreement;
  j["split"] = {{"train_count", r.train_count},
                {"test_count", r.test_count},
                {"achieved_train_ratio", number(r.achieved_train_ratio)}};
  json config = json::array();
  for (const auto& [k, v] : r.config) config.push_back({k, v});
  j["config"] = config;
  j["warnings"] = r.warnings;
  if (r.timing) {
    json timing = json::array();
    for (const auto& [k, v] : *r.timing) timing.push_back({{"stage", k}, {"seconds", number(v)}});
    j["timing"] = timing;
  }
  return j.dump(2) + "\n";
}

Report report_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("report JSON: ") + e.what());
  }
  try {
    if (j.at("format").get<std::string>() != "posefer-report") throw Error(ErrorCode::ParseError, "not a report");
    Report r;
    for (const auto& p : j.at("per_pose")) {
      PoseResult pr;
      pr.pose = p.at("pose").get<int>();
      pr.train_count = p.at("train_count").get<std::int64_t>();
      pr.test_count = p.at("test_count").get<std::int64_t>();
      pr.accuracy = read_number(p.at("accuracy"));
      pr.fallback = p.at("fallback").get<bool>();
      pr.matrix = matrix_from_json(p.at("confusion"));
      r.per_pose.push_back(std::move(pr));
    }
    r.pose_aware_accuracy = read_number(j.at("pose_aware").at("accuracy"));
    r.mean_pose_accuracy = read_number(j.at("pose_aware").at("mean_pose_accuracy"));
    r.pose_aware = matrix_from_json(j.at("pose_aware").at("confusion"));
    r.agnostic_accuracy = read_number(j.at("agnostic").at("accuracy"));
    r.agnostic = matrix_from_json(j.at("agnostic").at("confusion"));
    for (const auto& a : j.at("pose_agreement")) {
      r.agreement.push_back({a.at("reference").get<std::string>(), a.at("compared").get<std::int64_t>(),
                             a.at("agreed").get<std::int64_t>(), read_number(a.at("rate"))});
    }
    r.train_count = j.at("split").at("train_count").get<std::int64_t>();
    r.test_count = j.at("split").at("test_count").get<std::int64_t>();
    r.achieved_train_ratio = read_number(j.at("split").at("achieved_train_ratio"));
    for (const auto& kv : j.at("config")) r.config.emplace_back(kv.at(0).get<std::string>(), kv.at(1).get<std::string>());
    r.warnings = j.at("warnings").get<std::vector<std::string>>();
    if (j.contains("timing")) {
      r.timing.emplace();
      for (const auto& t : j.at("timing")) {
        r.timing->emplace_back(t.at("stage").get<std::string>(), read_number(t.at("seconds")));
      }
    }
    return r;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("report JSON: ") + e.what());
  }
}

std::string report_to_csv(const Report& r) {
  std::ostringstream os;
  os << "pose,true,pred,count\n";
  auto cells = [&](const std::string& pose, const ConfusionMatrix& m) {
    for (auto t : kAllExpressions) {
      for (auto p : kAllExpressions) {
        os << pose << ',' << expression_name(t) << ',' << expression_name(p) << ','
           << m.counts(index_of(t), index_of(p)) << '\n';
      }
    }
  };
  for (const auto& p : r.per_pose) cells(std::to_string(p.pose), p.matrix);
  cells("agnostic", r.agnostic);
  return os.str();
}

std::vector<CsvCell> parse_report_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::vector<CsvCell> out;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line_no == 1) {
      if (line != "pose,true,pred,count") throw Error(ErrorCode::ParseError, "report CSV: bad header");
      continue;
    }
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string pose, t, p, count;
    if (!std::getline(ls, pose, ',') || !std::getline(ls, t, ',') || !std::getline(ls, p, ',') ||
        !std::getline(ls, count)) {
      throw Error(ErrorCode::ParseError, "report CSV line " + std::to_string(line_no) + ": expected 4 fields");
    }
    const auto te = parse_expression(t);
    const auto pe = parse_expression(p);
    if (!te || !pe) throw Error(ErrorCode::UnknownLabel, "report CSV line " + std::to_string(line_no));
    CsvCell cell{pose, *te, *pe, 0};
    try {
      cell.count = std::stoll(count);
    } catch (const std::logic_error&) {
      throw Error(ErrorCode::ParseError, "report CSV line " + std::to_string(line_no) + ": bad count");
    }
    out.push_back(std::move(cell));
  }
  return out;
}

std::string confusion_to_text(const ConfusionMatrix& m, std::string_view title) {
  std::ostringstream os;
  char buf[64];
  os << title << "\n";
  std::snprintf(buf, sizeof buf, "%-10s", "true\\pred");
  os << buf;
  for (auto e : kAllExpressions) {
    std::snprintf(buf, sizeof buf, "%9s", std::string(expression_name(e)).c_str());
    os << buf;
  }
  os << "    total\n";
  for (auto t : kAllExpressions) {
    std::snprintf(buf, sizeof buf, "%-10s", std::string(expression_name(t)).c_str());
    os << buf;
    for (auto p : kAllExpressions) {
      std::snprintf(buf, sizeof buf, "%9lld", static_cast<long long>(m.counts(index_of(t), index_of(p))));
      os << buf;
    }
    std::snprintf(buf, sizeof buf, "%9lld", static_cast<long long>(m.counts.row(index_of(t)).sum()));
    os << buf << "\n";
  }
  std::snprintf(buf, sizeof buf, "%-10s", "total");
  os << buf;
  for (auto p : kAllExpressions) {
    std::snprintf(buf, sizeof buf, "%9lld", static_cast<long long>(m.counts.col(index_of(p)).sum()));
    os << buf;
  }
  std::snprintf(buf, sizeof buf, "%9lld", static_cast<long long>(m.total()));
  os << buf << "\n";
  std::snprintf(buf, sizeof buf, "correct %lld / %lld", static_cast<long long>(m.correct()),
                static_cast<long long>(m.total()));
  os << buf << "\n";
  return os.str();
}

std::string report_to_text(const Report& r) {
  std::ostringstream os;
  os << "Pose-aware accuracy:   " << fixed(r.pose_aware_accuracy) << "\n"
     << "Mean per-pose accuracy: " << fixed(r.mean_pose_accuracy) << "\n"
     << "Pose-agnostic accuracy: " << fixed(r.agnostic_accuracy) << "\n"
     << "Split: " << r.train_count << " train / " << r.test_count << " test (train ratio "
     << fixed(r.achieved_train_ratio) << ")\n";
  for (const auto& a : r.agreement) {
    os << "Pose agreement with " << a.reference << ": " << a.agreed << " / " << a.compared << " (" << fixed(a.rate)
       << ")\n";
  }
  os << "\n";
  for (const auto& p : r.per_pose) {
    std::ostringstream title;
    title << "Pose " << p.pose << " (train " << p.train_count << ", test " << p.test_count << ", accuracy "
          << fixed(p.accuracy) << (p.fallback ? ", pose-agnostic fallback" : "") << ")";
    os << confusion_to_text(p.matrix, title.str()) << "\n";
  }
  os << confusion_to_text(r.agnostic, "Pose-agnostic") << "\n";
  if (!r.warnings.empty()) {
    os << "Warnings:\n";
    for (const auto& w : r.warnings) os << "  " << w << "\n";
  }
  if (r.timing) {
    os << "Timing (s):\n";
    for (const auto& [k, v] : *r.timing) os << "  " << k << ": " << fixed(v, 3) << "\n";
  }
  return os.str();
}

std::string format_report(const Report& report, ReportFormat format) {
  switch (format) {
    case ReportFormat::Text: return report_to_text(report);
    case ReportFormat::Csv: return report_to_csv(report);
    case ReportFormat::Json: return report_to_json(report);
  }
  return {};
}

void emit_report(const Report& report, ReportFormat format, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot write report to " + path);
  out << format_report(report, format);
  out.flush();
  if (!out) throw Error(ErrorCode::IoError, "write failed for " + path);
}

}  // namespace posefer
