#pragma once

#include <filesystem>

namespace aff {

// renders every stats_*.csv and curves_*.csv under out_dir into SVG line
// charts plus a combined summary table at out_dir/report/
void write_report(const std::filesystem::path& out_dir);

}  // namespace aff
