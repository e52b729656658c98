#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace gap::plot {

struct Series {
  std::vector<double> x;
  std::vector<double> y;
  std::uint32_t rgb = 0x1f77b4;
  bool markers = false;  // scatter instead of a connected line
};

// Minimal raster plot: axes box, light grid, autoscaled data area. No text;
// reports describe axes alongside the image files.
void render_png(const std::string& path, const std::vector<Series>& series,
                int width = 900, int height = 500);

}  // namespace gap::plot
