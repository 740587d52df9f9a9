#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "acquire/image.hpp"

namespace acquire {

class ImageIoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

template <typename T>
T byteswap_if_big_endian(T value) {
  if constexpr (std::endian::native == std::endian::big) {
    std::array<unsigned char, sizeof(T)> bytes;
    std::memcpy(bytes.data(), &value, sizeof(T));
    std::reverse(bytes.begin(), bytes.end());
    std::memcpy(&value, bytes.data(), sizeof(T));
  }
  return value;
}

template <typename T>
void write_le(std::ostream& out, T value) {
  value = byteswap_if_big_endian(value);
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_le(std::istream& in) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) throw ImageIoError("unexpected end of file");
  return byteswap_if_big_endian(value);
}

// Reads the next whitespace-separated PNM header token, skipping comments.
inline std::string pnm_token(std::istream& in) {
  std::string token;
  int c;
  while ((c = in.get()) != EOF) {
    if (c == '#') {
      while ((c = in.get()) != EOF && c != '\n') {
      }
      continue;
    }
    if (std::isspace(c)) {
      if (!token.empty()) break;
      continue;
    }
    token.push_back(static_cast<char>(c));
  }
  if (token.empty()) throw ImageIoError("truncated PGM header");
  return token;
}

}  // namespace detail

inline constexpr char kF64ImageMagic[6] = {'F', '6', '4', 'I', 'M', 'G'};

/// Raw float64 image: magic "F64IMG", rows and cols as little-endian uint32,
/// then rows*cols little-endian doubles in column-major order.
inline void write_f64img(const Image& image, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ImageIoError("cannot open " + path.string() + " for writing");
  out.write(kF64ImageMagic, sizeof(kF64ImageMagic));
  detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(image.rows()));
  detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(image.cols()));
  for (Eigen::Index i = 0; i < image.data().size(); ++i) detail::write_le<double>(out, image.data()[i]);
  if (!out) throw ImageIoError("write failed for " + path.string());
}

inline Image read_f64img(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ImageIoError("cannot open " + path.string());
  char magic[sizeof(kF64ImageMagic)];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kF64ImageMagic, sizeof(magic)) != 0)
    throw ImageIoError(path.string() + ": not an F64IMG file");
  const auto rows = detail::read_le<std::uint32_t>(in);
  const auto cols = detail::read_le<std::uint32_t>(in);
  if (rows == 0 || cols == 0) throw ImageIoError(path.string() + ": empty image");
  Vector data(static_cast<Eigen::Index>(rows) * cols);
  for (Eigen::Index i = 0; i < data.size(); ++i) data[i] = detail::read_le<double>(in);
  return Image(rows, cols, std::move(data));
}

/// Reads binary (P5) or ASCII (P2) graymaps with maxval up to 65535.
/// Intensities are returned as raw integer levels.
inline Image read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ImageIoError("cannot open " + path.string());
  const std::string magic = detail::pnm_token(in);
  if (magic != "P5" && magic != "P2") throw ImageIoError(path.string() + ": unsupported PGM type " + magic);
  const long cols = std::stol(detail::pnm_token(in));
  const long rows = std::stol(detail::pnm_token(in));
  const long maxval = std::stol(detail::pnm_token(in));
  if (cols <= 0 || rows <= 0 || maxval <= 0 || maxval > 65535)
    throw ImageIoError(path.string() + ": bad PGM header");

  std::vector<double> values(static_cast<std::size_t>(rows * cols));
  if (magic == "P5") {
    const bool wide = maxval > 255;
    for (auto& v : values) {
      if (wide) {
        unsigned char b[2];
        in.read(reinterpret_cast<char*>(b), 2);
        v = static_cast<double>((b[0] << 8) | b[1]);  // PGM is big-endian
      } else {
        v = static_cast<double>(static_cast<unsigned char>(in.get()));
      }
      if (!in) throw ImageIoError(path.string() + ": truncated pixel data");
    }
  } else {
    for (auto& v : values) v = static_cast<double>(std::stol(detail::pnm_token(in)));
  }
  return from_row_major(values.data(), static_cast<std::size_t>(rows), static_cast<std::size_t>(cols));
}

/// Writes a P5 graymap. Intensities in [0, white] map linearly onto
/// [0, maxval]; values outside are clamped. `white <= 0` means the image max.
inline void write_pgm(const Image& image, const std::filesystem::path& path, int bits = 8, double white = 0.0) {
  if (bits != 8 && bits != 16) throw std::invalid_argument("write_pgm: bits must be 8 or 16");
  const int maxval = bits == 8 ? 255 : 65535;
  if (white <= 0.0) white = image.max() > 0.0 ? image.max() : 1.0;

  std::ofstream out(path, std::ios::binary);
  if (!out) throw ImageIoError("cannot open " + path.string() + " for writing");
  out << "P5\n" << image.cols() << ' ' << image.rows() << '\n' << maxval << '\n';
  for (std::size_t k = 0; k < image.rows(); ++k) {
    for (std::size_t l = 0; l < image.cols(); ++l) {
      const double level = std::clamp(image(k, l) / white, 0.0, 1.0) * maxval;
      const auto q = static_cast<unsigned>(std::lround(level));
      if (bits == 16) out.put(static_cast<char>(q >> 8));
      out.put(static_cast<char>(q & 0xff));
    }
  }
  if (!out) throw ImageIoError("write failed for " + path.string());
}

}  // namespace acquire
