#include "posefer/image.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

#include "posefer/error.hpp"

namespace posefer {

GrayImage::GrayImage(PixelMatrix p) : pixels(std::move(p)) {
  if (!pixels.allFinite() || (pixels.size() > 0 && (pixels.minCoeff() < 0.0 || pixels.maxCoeff() > 1.0))) {
    throw Error(ErrorCode::InvalidConfig, "image intensities must lie in [0, 1]");
  }
}

GrayImage::GrayImage(int width, int height, double fill) : pixels(PixelMatrix::Constant(height, width, fill)) {}

double sample_bilinear(const GrayImage& image, double x, double y) {
  const double cx = std::clamp(x, 0.0, static_cast<double>(image.width() - 1));
  const double cy = std::clamp(y, 0.0, static_cast<double>(image.height() - 1));
  const int x0 = std::min(static_cast<int>(cx), image.width() - 1);
  const int y0 = std::min(static_cast<int>(cy), image.height() - 1);
  const int x1 = std::min(x0 + 1, image.width() - 1);
  const int y1 = std::min(y0 + 1, image.height() - 1);
  const double fx = cx - x0;
  const double fy = cy - y0;
  const double top = (1 - fx) * image.at(x0, y0) + fx * image.at(x1, y0);
  const double bottom = (1 - fx) * image.at(x0, y1) + fx * image.at(x1, y1);
  return (1 - fy) * top + fy * bottom;
}

GrayImage resize_bilinear(const GrayImage& image, int width, int height) {
  if (width == image.width() && height == image.height()) return image;
  GrayImage out(width, height);
  const double sx = static_cast<double>(image.width()) / width;
  const double sy = static_cast<double>(image.height()) / height;
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      out.at(x, y) = sample_bilinear(image, (x + 0.5) * sx - 0.5, (y + 0.5) * sy - 0.5);
    }
  }
  return out;
}

GrayImage flip_horizontal(const GrayImage& image) {
  GrayImage out;
  out.pixels = image.pixels.rowwise().reverse();
  return out;
}

namespace {

std::string next_token(std::istream& in) {
  std::string tok;
  char c;
  while (in.get(c)) {
    if (c == '#') {
      std::string skip;
      std::getline(in, skip);
      continue;
    }
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!tok.empty()) return tok;
      continue;
    }
    tok += c;
  }
  return tok;
}

}  // namespace

GrayImage read_pgm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open image " + path);
  const std::string magic = next_token(in);
  if (magic != "P5" && magic != "P2") throw Error(ErrorCode::ParseError, path + ": not a PGM file");
  int width = 0;
  int height = 0;
  int maxval = 0;
  try {
    width = std::stoi(next_token(in));
    height = std::stoi(next_token(in));
    maxval = std::stoi(next_token(in));
  } catch (const std::exception&) {
    throw Error(ErrorCode::ParseError, path + ": malformed PGM header");
  }
  if (width <= 0 || height <= 0 || maxval <= 0 || maxval > 65535) {
    throw Error(ErrorCode::ParseError, path + ": bad PGM dimensions");
  }
  GrayImage img(width, height);
  if (magic == "P5") {
    const int bytes_per = maxval > 255 ? 2 : 1;
    std::string raw(static_cast<std::size_t>(width) * height * bytes_per, '\0');
    in.read(raw.data(), static_cast<std::streamsize>(raw.size()));
    if (in.gcount() != static_cast<std::streamsize>(raw.size())) {
      throw Error(ErrorCode::ParseError, path + ": truncated PGM data");
    }
    for (int i = 0; i < width * height; ++i) {
      int v = static_cast<unsigned char>(raw[static_cast<std::size_t>(i * bytes_per)]);
      if (bytes_per == 2) v = v * 256 + static_cast<unsigned char>(raw[static_cast<std::size_t>(i * 2 + 1)]);
      img.pixels(i / width, i % width) = static_cast<double>(v) / maxval;
    }
  } else {
    for (int i = 0; i < width * height; ++i) {
      const auto tok = next_token(in);
      if (tok.empty()) throw Error(ErrorCode::ParseError, path + ": truncated PGM data");
      img.pixels(i / width, i % width) = std::clamp(std::stod(tok) / maxval, 0.0, 1.0);
    }
  }
  return img;
}

void write_pgm(const GrayImage& image, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot write image " + path);
  out << "P5\n" << image.width() << ' ' << image.height() << "\n255\n";
  std::string raw(static_cast<std::size_t>(image.width()) * image.height(), '\0');
  for (int y = 0; y < image.height(); ++y) {
    for (int x = 0; x < image.width(); ++x) {
      const double v = std::clamp(image.at(x, y), 0.0, 1.0);
      raw[static_cast<std::size_t>(y) * image.width() + x] = static_cast<char>(std::lround(v * 255.0));
    }
  }
  out.write(raw.data(), static_cast<std::streamsize>(raw.size()));
  if (!out) throw Error(ErrorCode::IoError, "write failed: " + path);
}

}  // namespace posefer
