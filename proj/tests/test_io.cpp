#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <unistd.h>

#include "affdesk/common.hpp"
#include "affdesk/io.hpp"

using namespace aff;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
  static int counter = 0;
  const fs::path dir =
      fs::temp_directory_path() / ("affdesk_io_" + std::to_string(getpid()) +
                                   "_" + std::to_string(counter++));
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("pgm round trip preserves quantized values") {
  Image img(13, 9);
  Rng rng(3);
  for (double& v : img.data) v = rng.uniform();
  img.at(0, 0) = -0.5;  // clamped
  img.at(1, 0) = 1.5;

  const fs::path path = temp_dir() / "img.pgm";
  write_pgm(path, img);
  const Image back = read_pgm(path);
  REQUIRE(back.width == 13);
  REQUIRE(back.height == 9);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      const double clamped = std::clamp(img.at(x, y), 0.0, 1.0);
      CHECK(std::abs(back.at(x, y) - clamped) <= 0.5 / 255.0 + 1e-12);
    }

  // a second write is byte-identical
  const fs::path path2 = temp_dir() / "img2.pgm";
  write_pgm(path2, img);
  CHECK(read_text_file(path) == read_text_file(path2));

  // re-encoding the decoded image is lossless
  const fs::path path3 = temp_dir() / "img3.pgm";
  write_pgm(path3, back);
  CHECK(read_text_file(path) == read_text_file(path3));
}

TEST_CASE("pgm reader rejects other formats") {
  const fs::path path = temp_dir() / "bad.pgm";
  write_text_file(path, "P2\n2 2\n255\n0 0 0 0\n");
  CHECK_THROWS_AS(read_pgm(path), SchemaError);
  CHECK_THROWS_AS(read_pgm(temp_dir() / "missing.pgm"), IoError);
}

TEST_CASE("csv round trip") {
  CsvTable table;
  table.header = {"iteration", "metric", "value"};
  table.rows = {{"0", "success", "0.25"}, {"1", "success", "0.5"}};
  const fs::path path = temp_dir() / "t.csv";
  write_csv(path, table);
  const CsvTable back = read_csv(path);
  CHECK(back.header == table.header);
  CHECK(back.rows == table.rows);

  CHECK(csv_to_string(table) ==
        "iteration,metric,value\n0,success,0.25\n1,success,0.5\n");
}

TEST_CASE("format_double is stable") {
  CHECK(format_double(0.25, 6) == "0.250000");
  CHECK(format_double(-1.5, 3) == "-1.500");
  CHECK(format_double(-0.0000001, 3) == "0.000");  // no negative zero
  CHECK(format_double(2.0 / 3.0, 9) == "0.666666667");
}

TEST_CASE("fnv1a hashes are order sensitive and stable") {
  CHECK(fnv1a("") == 0xcbf29ce484222325ULL);
  CHECK(fnv1a("a") != fnv1a("b"));
  CHECK(fnv1a("ab") != fnv1a("ba"));
  CHECK(fnv1a("seed=1") == fnv1a("seed=1"));
}

TEST_CASE("svg chart output is deterministic and well formed") {
  SvgSeries s1;
  s1.label = "success";
  s1.color = "#1f77b4";
  s1.xs = {0, 1, 2};
  s1.ys = {0.1, 0.4, 0.35};
  SvgSeries s2;
  s2.label = "baseline";
  s2.color = "#d62728";
  s2.xs = {0, 1, 2};
  s2.ys = {0.05, 0.06, 0.04};

  const std::string svg = render_svg_chart("demo", {s1, s2}, "iteration",
                                           "rate");
  CHECK(svg == render_svg_chart("demo", {s1, s2}, "iteration", "rate"));
  CHECK(svg.find("<svg") != std::string::npos);
  CHECK(svg.find("</svg>") != std::string::npos);
  CHECK(svg.find("success") != std::string::npos);
  CHECK(svg.find("baseline") != std::string::npos);
  CHECK(svg.find("iteration") != std::string::npos);

  // single-point series still renders
  SvgSeries one;
  one.label = "single";
  one.color = "#2ca02c";
  one.xs = {0};
  one.ys = {0.5};
  const std::string single = render_svg_chart("one", {one}, "x", "y");
  CHECK(single.find("</svg>") != std::string::npos);
}
