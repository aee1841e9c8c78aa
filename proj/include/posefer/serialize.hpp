#pragma once

// Two on-disk containers shared by the fitted models:
//  - KeyValueText: versioned `key: values` lines, doubles written with the
//    shortest representation that round-trips exactly.
//  - BinaryWriter / BinaryReader: little-endian fixed-width fields.

#include <cstdint>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace posefer {

std::string format_double(double value);
double parse_double(std::string_view text);

class KeyValueText {
 public:
  KeyValueText() = default;

  void set(const std::string& key, const std::string& value);
  void set(const std::string& key, double value);
  void set(const std::string& key, long long value);
  void set(const std::string& key, std::span<const double> values);
  void set(const std::string& key, const Eigen::MatrixXd& matrix);

  bool has(const std::string& key) const;
  const std::string& get(const std::string& key) const;
  double get_double(const std::string& key) const;
  long long get_int(const std::string& key) const;
  std::vector<double> get_doubles(const std::string& key) const;
  /// Matrices are stored as `rows cols v00 v01 ...` in row-major order.
  Eigen::MatrixXd get_matrix(const std::string& key) const;

  const std::vector<std::string>& keys() const { return order_; }

  std::string str() const;
  static KeyValueText parse(std::string_view text);

  void save(const std::string& path) const;
  static KeyValueText load(const std::string& path);

 private:
  std::map<std::string, std::string> values_;
  std::vector<std::string> order_;
};

class BinaryWriter {
 public:
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void i32(std::int32_t v);
  void f64(double v);
  void str(std::string_view s);
  void bytes(std::string_view raw);
  void f64s(std::span<const double> values);
  void matrix(const Eigen::MatrixXd& m);

  const std::string& buffer() const { return buffer_; }
  void save(const std::string& path) const;

 private:
  std::string buffer_;
};

class BinaryReader {
 public:
  explicit BinaryReader(std::string buffer) : buffer_(std::move(buffer)) {}
  static BinaryReader load(const std::string& path);

  std::uint32_t u32();
  std::uint64_t u64();
  std::int32_t i32();
  double f64();
  std::string str();
  std::string bytes(std::size_t n);
  std::vector<double> f64s();
  Eigen::MatrixXd matrix();

  bool at_end() const { return pos_ == buffer_.size(); }

 private:
  void need(std::size_t n) const;

  std::string buffer_;
  std::size_t pos_ = 0;
};

}  // namespace posefer
