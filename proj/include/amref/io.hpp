#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <string>

namespace amref::io {

using Matrix = Eigen::MatrixXd;

// 16-bit binary PGM, values quantized as round(p * 65535).
void write_pgm16(const std::filesystem::path& path, const Matrix& image);
Matrix read_pgm16(const std::filesystem::path& path);

// 8-bit binary PGM for binary masks (0 / 255).
void write_mask_pgm(const std::filesystem::path& path, const Matrix& mask);
Matrix read_mask_pgm(const std::filesystem::path& path);

// 24-bit binary PPM.
void write_ppm(const std::filesystem::path& path, const Matrix& r,
               const Matrix& g, const Matrix& b);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& text);

std::uint64_t fnv1a(const std::string& bytes);
std::string fnv1a_hex(const std::string& bytes);

// Quantizes pixels to the on-disk 16-bit grid so in-memory and reloaded
// datasets are bit-identical.
double quantize16(double v);

}  // namespace amref::io
