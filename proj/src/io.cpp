#include "amref/io.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace amref::io {

namespace {

void expect_magic(std::istream& in, const std::string& want,
                  const std::filesystem::path& path) {
  std::string magic;
  in >> magic;
  if (magic != want) {
    throw std::runtime_error("bad magic in " + path.string() + ": " + magic);
  }
}

}  // namespace

double quantize16(double v) {
  double q = std::round(std::min(std::max(v, 0.0), 1.0) * 65535.0);
  return q / 65535.0;
}

void write_pgm16(const std::filesystem::path& path, const Matrix& image) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "P5\n" << image.cols() << " " << image.rows() << "\n65535\n";
  for (Eigen::Index r = 0; r < image.rows(); ++r) {
    for (Eigen::Index c = 0; c < image.cols(); ++c) {
      auto v = static_cast<std::uint16_t>(
          std::round(std::min(std::max(image(r, c), 0.0), 1.0) * 65535.0));
      out.put(static_cast<char>(v >> 8));
      out.put(static_cast<char>(v & 0xff));
    }
  }
}

Matrix read_pgm16(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  expect_magic(in, "P5", path);
  int w, h, maxval;
  in >> w >> h >> maxval;
  if (maxval != 65535) throw std::runtime_error("expected 16-bit PGM: " + path.string());
  in.get();
  Matrix img(h, w);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      int hi = in.get(), lo = in.get();
      if (hi < 0 || lo < 0) throw std::runtime_error("truncated PGM: " + path.string());
      img(r, c) = static_cast<double>((hi << 8) | lo) / 65535.0;
    }
  }
  return img;
}

void write_mask_pgm(const std::filesystem::path& path, const Matrix& mask) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "P5\n" << mask.cols() << " " << mask.rows() << "\n255\n";
  for (Eigen::Index r = 0; r < mask.rows(); ++r)
    for (Eigen::Index c = 0; c < mask.cols(); ++c)
      out.put(mask(r, c) > 0.5 ? static_cast<char>(255) : 0);
}

Matrix read_mask_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  expect_magic(in, "P5", path);
  int w, h, maxval;
  in >> w >> h >> maxval;
  if (maxval != 255) throw std::runtime_error("expected 8-bit PGM: " + path.string());
  in.get();
  Matrix mask(h, w);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      int v = in.get();
      if (v < 0) throw std::runtime_error("truncated PGM: " + path.string());
      mask(r, c) = v > 127 ? 1.0 : 0.0;
    }
  }
  return mask;
}

void write_ppm(const std::filesystem::path& path, const Matrix& r,
               const Matrix& g, const Matrix& b) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "P6\n" << r.cols() << " " << r.rows() << "\n255\n";
  auto q = [](double v) {
    return static_cast<char>(
        std::lround(std::min(std::max(v, 0.0), 1.0) * 255.0));
  };
  for (Eigen::Index y = 0; y < r.rows(); ++y) {
    for (Eigen::Index x = 0; x < r.cols(); ++x) {
      out.put(q(r(y, x)));
      out.put(q(g(y, x)));
      out.put(q(b(y, x)));
    }
  }
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

std::uint64_t fnv1a(const std::string& bytes) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::string fnv1a_hex(const std::string& bytes) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(fnv1a(bytes)));
  return std::string(buf);
}

}  // namespace amref::io
