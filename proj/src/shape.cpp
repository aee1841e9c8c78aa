#include "posefer/shape.hpp"

#include <fstream>
#include <sstream>
#include <utility>

namespace posefer {

void validate_permutation(const Permutation& perm, std::size_t n) {
  if (perm.size() != n) {
    throw Error(ErrorCode::InvalidPermutation,
                "table has " + std::to_string(perm.size()) + " entries for " + std::to_string(n) +
                    " points");
  }
  std::vector<bool> seen(n, false);
  for (std::size_t j = 0; j < n; ++j) {
    const int src = perm[j];
    if (src < 0 || static_cast<std::size_t>(src) >= n || seen[static_cast<std::size_t>(src)]) {
      throw Error(ErrorCode::InvalidPermutation, "not a bijection at slot " + std::to_string(j));
    }
    seen[static_cast<std::size_t>(src)] = true;
  }
  for (std::size_t j = 0; j < n; ++j) {
    if (static_cast<std::size_t>(perm[static_cast<std::size_t>(perm[j])]) != j) {
      throw Error(ErrorCode::InvalidPermutation, "not an involution at slot " + std::to_string(j));
    }
  }
}

namespace {

Permutation build_default_flip() {
  Permutation perm(kLandmarkCount);
  for (int i = 0; i < kLandmarkCount; ++i) perm[static_cast<std::size_t>(i)] = i;
  const std::pair<int, int> pairs[] = {
      // jaw
      {0, 16}, {1, 15}, {2, 14}, {3, 13}, {4, 12}, {5, 11}, {6, 10}, {7, 9},
      // brows
      {17, 26}, {18, 25}, {19, 24}, {20, 23}, {21, 22},
      // nostrils
      {31, 35}, {32, 34},
      // eyes
      {36, 45}, {37, 44}, {38, 43}, {39, 42}, {40, 47}, {41, 46},
      // outer lip
      {48, 54}, {49, 53}, {50, 52}, {55, 59}, {56, 58},
      // inner lip
      {60, 64}, {61, 63}, {65, 67},
  };
  for (const auto& [a, b] : pairs) {
    perm[static_cast<std::size_t>(a)] = b;
    perm[static_cast<std::size_t>(b)] = a;
  }
  return perm;
}

}  // namespace

const Permutation& default_flip_permutation() {
  static const Permutation table = build_default_flip();
  return table;
}

Permutation load_permutation(const std::string& path, std::size_t n) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open permutation table " + path);
  Permutation perm(n);
  for (std::size_t i = 0; i < n; ++i) perm[i] = static_cast<int>(i);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream fields(line);
    long src = 0;
    long dst = 0;
    if (!(fields >> src)) continue;
    std::string extra;
    if (!(fields >> dst) || (fields >> extra)) {
      throw Error(ErrorCode::ParseError, path + ":" + std::to_string(line_no) + ": expected 'src dst'");
    }
    if (src < 0 || dst < 0 || static_cast<std::size_t>(src) >= n || static_cast<std::size_t>(dst) >= n) {
      throw Error(ErrorCode::InvalidPermutation,
                  path + ":" + std::to_string(line_no) + ": index out of range");
    }
    perm[static_cast<std::size_t>(src)] = static_cast<int>(dst);
    perm[static_cast<std::size_t>(dst)] = static_cast<int>(src);
  }
  validate_permutation(perm, n);
  return perm;
}

}  // namespace posefer
