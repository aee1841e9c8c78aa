#include "posefer/serialize.hpp"

#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <sstream>

#include "posefer/error.hpp"

namespace posefer {

static_assert(std::endian::native == std::endian::little,
              "binary containers assume a little-endian host");

std::string format_double(double value) {
  char buf[64];
  const auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  if (ec != std::errc()) throw Error(ErrorCode::IoError, "cannot format double");
  return std::string(buf, end);
}

double parse_double(std::string_view text) {
  double value = 0;
  const auto* first = text.data();
  const auto* last = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc() || ptr != last) {
    throw Error(ErrorCode::ParseError, "not a number: '" + std::string(text) + "'");
  }
  return value;
}

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string_view> split_ws(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && (s[i] == ' ' || s[i] == '\t')) ++i;
    const auto start = i;
    while (i < s.size() && s[i] != ' ' && s[i] != '\t') ++i;
    if (i > start) out.push_back(s.substr(start, i - start));
  }
  return out;
}

}  // namespace

void KeyValueText::set(const std::string& key, const std::string& value) {
  if (key.empty() || key.find(':') != std::string::npos || value.find('\n') != std::string::npos) {
    throw Error(ErrorCode::InvalidConfig, "invalid key/value for '" + key + "'");
  }
  if (!values_.contains(key)) order_.push_back(key);
  values_[key] = value;
}

void KeyValueText::set(const std::string& key, double value) { set(key, format_double(value)); }

void KeyValueText::set(const std::string& key, long long value) { set(key, std::to_string(value)); }

void KeyValueText::set(const std::string& key, std::span<const double> values) {
  std::string joined;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) joined += ' ';
    joined += format_double(values[i]);
  }
  set(key, joined);
}

void KeyValueText::set(const std::string& key, const Eigen::MatrixXd& matrix) {
  std::string joined = std::to_string(matrix.rows()) + " " + std::to_string(matrix.cols());
  for (Eigen::Index r = 0; r < matrix.rows(); ++r) {
    for (Eigen::Index c = 0; c < matrix.cols(); ++c) {
      joined += ' ';
      joined += format_double(matrix(r, c));
    }
  }
  set(key, joined);
}

bool KeyValueText::has(const std::string& key) const { return values_.contains(key); }

const std::string& KeyValueText::get(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) throw Error(ErrorCode::ParseError, "missing field '" + key + "'");
  return it->second;
}

double KeyValueText::get_double(const std::string& key) const { return parse_double(get(key)); }

long long KeyValueText::get_int(const std::string& key) const {
  const auto& text = get(key);
  long long value = 0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw Error(ErrorCode::ParseError, "field '" + key + "' is not an integer");
  }
  return value;
}

std::vector<double> KeyValueText::get_doubles(const std::string& key) const {
  std::vector<double> out;
  for (const auto tok : split_ws(get(key))) out.push_back(parse_double(tok));
  return out;
}

Eigen::MatrixXd KeyValueText::get_matrix(const std::string& key) const {
  const auto values = get_doubles(key);
  if (values.size() < 2) throw Error(ErrorCode::ParseError, "field '" + key + "' is not a matrix");
  const auto rows = static_cast<Eigen::Index>(values[0]);
  const auto cols = static_cast<Eigen::Index>(values[1]);
  if (rows < 0 || cols < 0 || values.size() != static_cast<std::size_t>(rows * cols) + 2) {
    throw Error(ErrorCode::ParseError, "field '" + key + "' has wrong element count");
  }
  Eigen::MatrixXd m(rows, cols);
  std::size_t k = 2;
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = values[k++];
  return m;
}

std::string KeyValueText::str() const {
  std::string out;
  for (const auto& key : order_) {
    out += key;
    out += ": ";
    out += values_.at(key);
    out += '\n';
  }
  return out;
}

KeyValueText KeyValueText::parse(std::string_view text) {
  KeyValueText kv;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    auto line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) {
      if (end == text.size()) break;
      continue;
    }
    const auto colon = line.find(':');
    if (colon == std::string_view::npos) {
      throw Error(ErrorCode::ParseError, "line " + std::to_string(line_no) + ": expected 'key: value'");
    }
    kv.set(std::string(trim(line.substr(0, colon))), std::string(trim(line.substr(colon + 1))));
    if (end == text.size()) break;
  }
  return kv;
}

void KeyValueText::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path);
  out << str();
  if (!out) throw Error(ErrorCode::IoError, "write failed: " + path);
}

KeyValueText KeyValueText::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

template <typename T>
static void append_raw(std::string& buf, T v) {
  char raw[sizeof(T)];
  std::memcpy(raw, &v, sizeof(T));
  buf.append(raw, sizeof(T));
}

void BinaryWriter::u32(std::uint32_t v) { append_raw(buffer_, v); }
void BinaryWriter::u64(std::uint64_t v) { append_raw(buffer_, v); }
void BinaryWriter::i32(std::int32_t v) { append_raw(buffer_, v); }
void BinaryWriter::f64(double v) { append_raw(buffer_, v); }

void BinaryWriter::str(std::string_view s) {
  u64(s.size());
  buffer_.append(s);
}

void BinaryWriter::bytes(std::string_view raw) { buffer_.append(raw); }

void BinaryWriter::f64s(std::span<const double> values) {
  u64(values.size());
  for (double v : values) f64(v);
}

void BinaryWriter::matrix(const Eigen::MatrixXd& m) {
  u64(static_cast<std::uint64_t>(m.rows()));
  u64(static_cast<std::uint64_t>(m.cols()));
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) f64(m(r, c));
}

void BinaryWriter::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path);
  out.write(buffer_.data(), static_cast<std::streamsize>(buffer_.size()));
  if (!out) throw Error(ErrorCode::IoError, "write failed: " + path);
}

BinaryReader BinaryReader::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return BinaryReader(ss.str());
}

void BinaryReader::need(std::size_t n) const {
  if (buffer_.size() - pos_ < n) throw Error(ErrorCode::ParseError, "truncated binary file");
}

template <typename T>
static T read_raw(const std::string& buf, std::size_t& pos) {
  T v;
  std::memcpy(&v, buf.data() + pos, sizeof(T));
  pos += sizeof(T);
  return v;
}

std::uint32_t BinaryReader::u32() {
  need(4);
  return read_raw<std::uint32_t>(buffer_, pos_);
}
std::uint64_t BinaryReader::u64() {
  need(8);
  return read_raw<std::uint64_t>(buffer_, pos_);
}
std::int32_t BinaryReader::i32() {
  need(4);
  return read_raw<std::int32_t>(buffer_, pos_);
}
double BinaryReader::f64() {
  need(8);
  return read_raw<double>(buffer_, pos_);
}

std::string BinaryReader::str() {
  const auto n = u64();
  return bytes(n);
}

std::string BinaryReader::bytes(std::size_t n) {
  need(n);
  std::string s = buffer_.substr(pos_, n);
  pos_ += n;
  return s;
}

std::vector<double> BinaryReader::f64s() {
  const auto n = u64();
  need(n * 8);
  std::vector<double> out(n);
  for (auto& v : out) v = f64();
  return out;
}

Eigen::MatrixXd BinaryReader::matrix() {
  const auto rows = u64();
  const auto cols = u64();
  need(rows * cols * 8);
  Eigen::MatrixXd m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = f64();
  return m;
}

}  // namespace posefer
