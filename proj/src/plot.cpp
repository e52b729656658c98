#include "gap/plot.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <png.h>

#include "gap/common.hpp"

namespace gap::plot {

namespace {

struct Canvas {
  int w, h;
  std::vector<unsigned char> rgb;  // 3 bytes per pixel
  Canvas(int w_, int h_) : w(w_), h(h_), rgb(static_cast<std::size_t>(w_) * h_ * 3, 255) {}
  void set(int x, int y, std::uint32_t c) {
    if (x < 0 || x >= w || y < 0 || y >= h) return;
    const std::size_t i = (static_cast<std::size_t>(y) * w + x) * 3;
    rgb[i] = static_cast<unsigned char>((c >> 16) & 0xff);
    rgb[i + 1] = static_cast<unsigned char>((c >> 8) & 0xff);
    rgb[i + 2] = static_cast<unsigned char>(c & 0xff);
  }
  void line(int x0, int y0, int x1, int y1, std::uint32_t c) {
    const int dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
    const int sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
    int err = dx + dy;
    while (true) {
      set(x0, y0, c);
      if (x0 == x1 && y0 == y1) break;
      const int e2 = 2 * err;
      if (e2 >= dy) {
        err += dy;
        x0 += sx;
      }
      if (e2 <= dx) {
        err += dx;
        y0 += sy;
      }
    }
  }
  void dot(int x, int y, std::uint32_t c) {
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx) set(x + dx, y + dy, c);
  }
};

void write_png_file(const std::string& path, const Canvas& cv) {
  FILE* fp = std::fopen(path.c_str(), "wb");
  if (!fp) throw ValidationError("render_png: cannot open " + path);
  png_structp png =
      png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    throw NumericError("render_png: libpng failure for " + path);
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, cv.w, cv.h, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < cv.h; ++y)
    png_write_row(png, const_cast<unsigned char*>(
                           cv.rgb.data() + static_cast<std::size_t>(y) * cv.w * 3));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  std::fclose(fp);
}

}  // namespace

void render_png(const std::string& path, const std::vector<Series>& series,
                int width, int height) {
  Canvas cv(width, height);
  const int ml = 50, mr = 20, mt = 20, mb = 40;
  const int px0 = ml, px1 = width - mr, py0 = mt, py1 = height - mb;

  double xmin = std::numeric_limits<double>::infinity(), xmax = -xmin;
  double ymin = xmin, ymax = -xmin;
  for (const auto& s : series)
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      xmin = std::min(xmin, s.x[i]);
      xmax = std::max(xmax, s.x[i]);
      ymin = std::min(ymin, s.y[i]);
      ymax = std::max(ymax, s.y[i]);
    }
  if (!std::isfinite(xmin)) {
    xmin = 0;
    xmax = 1;
    ymin = 0;
    ymax = 1;
  }
  if (xmax - xmin < 1e-12) xmax = xmin + 1.0;
  if (ymax - ymin < 1e-12) ymax = ymin + 1.0;

  auto tx = [&](double x) {
    return px0 + static_cast<int>((x - xmin) / (xmax - xmin) * (px1 - px0));
  };
  auto ty = [&](double y) {
    return py1 - static_cast<int>((y - ymin) / (ymax - ymin) * (py1 - py0));
  };

  // Grid and frame.
  for (int k = 1; k < 5; ++k) {
    const int gx = px0 + k * (px1 - px0) / 5;
    const int gy = py0 + k * (py1 - py0) / 5;
    cv.line(gx, py0, gx, py1, 0xe6e6e6);
    cv.line(px0, gy, px1, gy, 0xe6e6e6);
  }
  cv.line(px0, py0, px0, py1, 0x303030);
  cv.line(px0, py1, px1, py1, 0x303030);

  for (const auto& s : series) {
    const std::size_t n = std::min(s.x.size(), s.y.size());
    if (s.markers) {
      for (std::size_t i = 0; i < n; ++i) cv.dot(tx(s.x[i]), ty(s.y[i]), s.rgb);
    } else {
      for (std::size_t i = 1; i < n; ++i)
        cv.line(tx(s.x[i - 1]), ty(s.y[i - 1]), tx(s.x[i]), ty(s.y[i]), s.rgb);
    }
  }
  write_png_file(path, cv);
}

}  // namespace gap::plot
