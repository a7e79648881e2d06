#include "affdesk/io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace aff {

void write_pgm(const std::filesystem::path& path, const Image& img) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open for writing: " + path.string());
  f << "P5\n" << img.width << " " << img.height << "\n255\n";
  std::vector<unsigned char> buf(img.size());
  for (size_t i = 0; i < img.size(); ++i) {
    const double v = std::clamp(img.data[i], 0.0, 1.0);
    buf[i] = static_cast<unsigned char>(std::lround(v * 255.0));
  }
  f.write(reinterpret_cast<const char*>(buf.data()),
          static_cast<std::streamsize>(buf.size()));
  if (!f) throw IoError("write failed: " + path.string());
}

Image read_pgm(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open: " + path.string());
  std::string magic;
  f >> magic;
  if (magic != "P5") throw SchemaError("not a binary PGM: " + path.string());
  int w = 0, h = 0, maxv = 0;
  f >> w >> h >> maxv;
  if (!f || w <= 0 || h <= 0 || maxv != 255)
    throw SchemaError("unsupported PGM header: " + path.string());
  f.get();  // single whitespace after header
  std::vector<unsigned char> buf(static_cast<size_t>(w) * h);
  f.read(reinterpret_cast<char*>(buf.data()),
         static_cast<std::streamsize>(buf.size()));
  if (f.gcount() != static_cast<std::streamsize>(buf.size()))
    throw SchemaError("truncated PGM: " + path.string());
  Image img(w, h);
  for (size_t i = 0; i < buf.size(); ++i) img.data[i] = buf[i] / 255.0;
  return img;
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open: " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void write_text_file(const std::filesystem::path& path,
                     const std::string& content) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open for writing: " + path.string());
  f.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!f) throw IoError("write failed: " + path.string());
}

std::string csv_to_string(const CsvTable& table) {
  std::ostringstream ss;
  for (size_t i = 0; i < table.header.size(); ++i) {
    if (i) ss << ",";
    ss << table.header[i];
  }
  ss << "\n";
  for (const auto& row : table.rows) {
    if (row.size() != table.header.size())
      throw ShapeMismatch("csv row width does not match header");
    for (size_t i = 0; i < row.size(); ++i) {
      if (i) ss << ",";
      ss << row[i];
    }
    ss << "\n";
  }
  return ss.str();
}

void write_csv(const std::filesystem::path& path, const CsvTable& table) {
  write_text_file(path, csv_to_string(table));
}

CsvTable read_csv(const std::filesystem::path& path) {
  const std::string text = read_text_file(path);
  CsvTable t;
  std::istringstream ss(text);
  std::string line;
  bool first = true;
  while (std::getline(ss, line)) {
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::istringstream ls(line);
    std::string field;
    while (std::getline(ls, field, ',')) fields.push_back(field);
    if (!line.empty() && line.back() == ',') fields.push_back("");
    if (first) {
      t.header = fields;
      first = false;
    } else {
      t.rows.push_back(fields);
    }
  }
  if (first) throw IoError("empty csv: " + path.string());
  return t;
}

std::string format_double(double v, int precision) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", precision, v);
  // avoid the two representations of zero
  std::string s(buf);
  if (s.find_first_not_of("-0.") == std::string::npos &&
      s.find('-') != std::string::npos)
    s = s.substr(1);
  return s;
}

std::uint64_t fnv1a(const std::string& bytes) {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

namespace {

constexpr int kChartW = 640;
constexpr int kChartH = 400;
constexpr int kMarginL = 60;
constexpr int kMarginR = 140;
constexpr int kMarginT = 40;
constexpr int kMarginB = 50;

std::string fmt_tick(double v) {
  std::string s = format_double(v, 3);
  while (!s.empty() && s.back() == '0') s.pop_back();
  if (!s.empty() && s.back() == '.') s.pop_back();
  return s.empty() ? "0" : s;
}

}  // namespace

std::string render_svg_chart(const std::string& title,
                             const std::vector<SvgSeries>& series,
                             const std::string& x_label,
                             const std::string& y_label) {
  double xmin = 0, xmax = 1, ymin = 0, ymax = 1;
  bool any = false;
  for (const auto& s : series)
    for (size_t i = 0; i < s.xs.size(); ++i) {
      if (!any) {
        xmin = xmax = s.xs[i];
        ymin = ymax = s.ys[i];
        any = true;
      }
      xmin = std::min(xmin, s.xs[i]);
      xmax = std::max(xmax, s.xs[i]);
      ymin = std::min(ymin, s.ys[i]);
      ymax = std::max(ymax, s.ys[i]);
    }
  if (xmax - xmin < 1e-12) xmax = xmin + 1.0;
  if (ymax - ymin < 1e-12) ymax = ymin + 1.0;

  const double plot_w = kChartW - kMarginL - kMarginR;
  const double plot_h = kChartH - kMarginT - kMarginB;
  auto px = [&](double x) {
    return kMarginL + (x - xmin) / (xmax - xmin) * plot_w;
  };
  auto py = [&](double y) {
    return kMarginT + plot_h - (y - ymin) / (ymax - ymin) * plot_h;
  };

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kChartW
      << "\" height=\"" << kChartH << "\" viewBox=\"0 0 " << kChartW << " "
      << kChartH << "\">\n";
  svg << "<rect width=\"" << kChartW << "\" height=\"" << kChartH
      << "\" fill=\"white\"/>\n";
  svg << "<text x=\"" << kChartW / 2 << "\" y=\"24\" text-anchor=\"middle\" "
      << "font-family=\"sans-serif\" font-size=\"16\">" << title
      << "</text>\n";

  // axes
  svg << "<line x1=\"" << kMarginL << "\" y1=\"" << kMarginT + plot_h
      << "\" x2=\"" << kMarginL + plot_w << "\" y2=\"" << kMarginT + plot_h
      << "\" stroke=\"black\"/>\n";
  svg << "<line x1=\"" << kMarginL << "\" y1=\"" << kMarginT << "\" x2=\""
      << kMarginL << "\" y2=\"" << kMarginT + plot_h
      << "\" stroke=\"black\"/>\n";

  for (int i = 0; i <= 4; ++i) {
    const double xv = xmin + (xmax - xmin) * i / 4.0;
    const double yv = ymin + (ymax - ymin) * i / 4.0;
    svg << "<text x=\"" << format_double(px(xv), 1) << "\" y=\""
        << kMarginT + plot_h + 18
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
           "font-size=\"11\">"
        << fmt_tick(xv) << "</text>\n";
    svg << "<text x=\"" << kMarginL - 6 << "\" y=\""
        << format_double(py(yv) + 4, 1)
        << "\" text-anchor=\"end\" font-family=\"sans-serif\" "
           "font-size=\"11\">"
        << fmt_tick(yv) << "</text>\n";
  }
  svg << "<text x=\"" << kMarginL + plot_w / 2 << "\" y=\"" << kChartH - 12
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
         "font-size=\"13\">"
      << x_label << "</text>\n";
  svg << "<text x=\"16\" y=\"" << kMarginT + plot_h / 2
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
         "font-size=\"13\" transform=\"rotate(-90 16 "
      << kMarginT + plot_h / 2 << ")\">" << y_label << "</text>\n";

  int li = 0;
  for (const auto& s : series) {
    svg << "<polyline fill=\"none\" stroke=\"" << s.color
        << "\" stroke-width=\"1.5\" points=\"";
    for (size_t i = 0; i < s.xs.size(); ++i) {
      if (i) svg << " ";
      svg << format_double(px(s.xs[i]), 2) << ","
          << format_double(py(s.ys[i]), 2);
    }
    svg << "\"/>\n";
    const int ly = kMarginT + 14 + 18 * li;
    svg << "<line x1=\"" << kMarginL + plot_w + 10 << "\" y1=\"" << ly
        << "\" x2=\"" << kMarginL + plot_w + 34 << "\" y2=\"" << ly
        << "\" stroke=\"" << s.color << "\" stroke-width=\"1.5\"/>\n";
    svg << "<text x=\"" << kMarginL + plot_w + 40 << "\" y=\"" << ly + 4
        << "\" font-family=\"sans-serif\" font-size=\"12\">" << s.label
        << "</text>\n";
    ++li;
  }
  svg << "</svg>\n";
  return svg.str();
}

}  // namespace aff
