#pragma once

// Raster file formats:
//   * binary PGM (P5), 8-bit, for eye images and normalized irises;
//   * raw normalized iris: text header line "IRIS H W\n" followed by H*W
//     little-endian float32 values, row-major.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "irismatch/binary_io.hpp"
#include "irismatch/image.hpp"

namespace irismatch {

namespace detail {

inline std::string pgm_token(std::istream& in) {
  std::string token;
  char c;
  while (in.get(c)) {
    if (c == '#') {
      std::string skip;
      std::getline(in, skip);
      continue;
    }
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!token.empty()) return token;
      continue;
    }
    token.push_back(c);
  }
  if (token.empty()) throw FormatError("pgm: truncated header");
  return token;
}

inline std::size_t pgm_number(std::istream& in) {
  const std::string t = pgm_token(in);
  if (t.empty() || !std::all_of(t.begin(), t.end(), [](char ch) { return ch >= '0' && ch <= '9'; })) {
    throw FormatError("pgm: bad header field '" + t + "'");
  }
  return std::stoul(t);
}

}  // namespace detail

inline GrayImage read_pgm(std::istream& in) {
  if (detail::pgm_token(in) != "P5") throw FormatError("pgm: only binary P5 rasters are supported");
  GrayImage img;
  img.width = detail::pgm_number(in);
  img.height = detail::pgm_number(in);
  const std::size_t maxval = detail::pgm_number(in);
  if (img.width == 0 || img.height == 0) throw FormatError("pgm: empty raster");
  if (maxval == 0 || maxval > 255) throw FormatError("pgm: only 8-bit rasters are supported");
  // Exactly one whitespace byte separates the header from the raster; the
  // token reader already consumed it.
  const std::string raw = io::read_bytes(in, img.width * img.height);
  img.pixels.resize(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) img.pixels[i] = static_cast<unsigned char>(raw[i]);
  return img;
}

inline void write_pgm(std::ostream& out, const GrayImage& img) {
  out << "P5\n" << img.width << ' ' << img.height << "\n255\n";
  std::string raw(img.pixels.size(), '\0');
  for (std::size_t i = 0; i < raw.size(); ++i) {
    raw[i] = static_cast<char>(static_cast<unsigned char>(std::clamp(std::lround(img.pixels[i]), 0L, 255L)));
  }
  out.write(raw.data(), static_cast<std::streamsize>(raw.size()));
}

inline void write_iris_raw(std::ostream& out, const NormalizedIris& img) {
  out << "IRIS " << img.height << ' ' << img.width << '\n';
  for (double v : img.pixels) io::write_f32(out, static_cast<float>(v));
}

inline NormalizedIris read_iris_raw(std::istream& in) {
  std::string header;
  if (!std::getline(in, header)) throw FormatError("iris: missing header");
  std::istringstream hs(header);
  std::string tag;
  std::size_t h = 0, w = 0;
  if (!(hs >> tag >> h >> w) || tag != "IRIS" || h == 0 || w == 0) {
    throw FormatError("iris: malformed header '" + header + "'");
  }
  NormalizedIris img(h, w);
  for (double& v : img.pixels) v = static_cast<double>(io::read_f32(in));
  return img;
}

inline GrayImage to_gray(const NormalizedIris& iris) {
  GrayImage g(iris.height, iris.width);
  for (std::size_t i = 0; i < g.pixels.size(); ++i) g.pixels[i] = 255.0 * std::clamp(iris.pixels[i], 0.0, 1.0);
  return g;
}

/// Reads a normalized iris stored either as raw "IRIS" or as an 8-bit PGM
/// (scaled to [0, 1]); the format is detected from the first bytes.
inline NormalizedIris load_normalized_iris(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  char head[2] = {0, 0};
  in.read(head, 2);
  in.clear();
  in.seekg(0);
  try {
    if (head[0] == 'P' && head[1] == '5') {
      const GrayImage g = read_pgm(in);
      NormalizedIris img(g.height, g.width);
      for (std::size_t i = 0; i < g.pixels.size(); ++i) img.pixels[i] = g.pixels[i] / 255.0;
      return img;
    }
    return read_iris_raw(in);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

inline void save_normalized_iris(const NormalizedIris& img, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  if (path.extension() == ".pgm") {
    write_pgm(out, to_gray(img));
  } else {
    write_iris_raw(out, img);
  }
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

inline GrayImage load_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  return read_pgm(in);
}

}  // namespace irismatch
