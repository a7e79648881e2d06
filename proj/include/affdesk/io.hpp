#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "affdesk/common.hpp"

namespace aff {

// binary 8-bit PGM (P5); values are clamped to [0, 1] and quantized
void write_pgm(const std::filesystem::path& path, const Image& img);
Image read_pgm(const std::filesystem::path& path);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path,
                     const std::string& content);

// CSV with a header row; fields never contain commas or newlines here, so
// no quoting is applied
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

std::string csv_to_string(const CsvTable& table);
void write_csv(const std::filesystem::path& path, const CsvTable& table);
CsvTable read_csv(const std::filesystem::path& path);

// fixed-precision float formatting used everywhere output must be
// byte-stable
std::string format_double(double v, int precision = 6);

// FNV-1a 64-bit
std::uint64_t fnv1a(const std::string& bytes);

// minimal SVG line-chart writer (fixed viewport, axes, legend)
struct SvgSeries {
  std::string label;
  std::string color;
  std::vector<double> xs;
  std::vector<double> ys;
};

std::string render_svg_chart(const std::string& title,
                             const std::vector<SvgSeries>& series,
                             const std::string& x_label,
                             const std::string& y_label);

}  // namespace aff
