#pragma once

// Minimal SVG plotting (line charts) and grayscale PNG encoding for image
// overlays. No external plotting dependency; PNG uses zlib for the deflate
// stream and CRCs.

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "shapeseg/geometry.hpp"
#include "shapeseg/util.hpp"

namespace shapeseg {

namespace detail {

inline void put_be32(std::string& out, std::uint32_t v) {
  out.push_back(static_cast<char>((v >> 24) & 0xff));
  out.push_back(static_cast<char>((v >> 16) & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
  out.push_back(static_cast<char>(v & 0xff));
}

inline void png_chunk(std::string& out, const char type[4], const std::string& payload) {
  put_be32(out, static_cast<std::uint32_t>(payload.size()));
  const std::size_t start = out.size();
  out.append(type, 4);
  out += payload;
  const auto crc =
      crc32(0, reinterpret_cast<const Bytef*>(out.data() + start), static_cast<uInt>(4 + payload.size()));
  put_be32(out, static_cast<std::uint32_t>(crc));
}

}  // namespace detail

// 8-bit grayscale PNG.
inline std::string png_encode_gray(const std::vector<std::uint8_t>& pixels, int width,
                                   int height) {
  if (pixels.size() != static_cast<std::size_t>(width) * height)
    throw std::invalid_argument("png_encode_gray: size mismatch");
  std::string raw;
  raw.reserve(pixels.size() + height);
  for (int i = 0; i < height; ++i) {
    raw.push_back('\0');  // filter type 0 per scanline
    raw.append(reinterpret_cast<const char*>(pixels.data() + static_cast<std::size_t>(i) * width),
               static_cast<std::size_t>(width));
  }
  uLongf comp_len = compressBound(static_cast<uLong>(raw.size()));
  std::string compressed(comp_len, '\0');
  if (compress2(reinterpret_cast<Bytef*>(compressed.data()), &comp_len,
                reinterpret_cast<const Bytef*>(raw.data()), static_cast<uLong>(raw.size()),
                9) != Z_OK)
    throw RuntimeError("png_encode_gray: deflate failed");
  compressed.resize(comp_len);

  std::string ihdr;
  detail::put_be32(ihdr, static_cast<std::uint32_t>(width));
  detail::put_be32(ihdr, static_cast<std::uint32_t>(height));
  ihdr.push_back(8);   // bit depth
  ihdr.push_back(0);   // grayscale
  ihdr.push_back(0);   // compression
  ihdr.push_back(0);   // filter
  ihdr.push_back(0);   // no interlace

  std::string out = "\x89PNG\r\n\x1a\n";
  detail::png_chunk(out, "IHDR", ihdr);
  detail::png_chunk(out, "IDAT", compressed);
  detail::png_chunk(out, "IEND", "");
  return out;
}

inline std::string base64_encode(const std::string& in) {
  static const char chars[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
  std::string out;
  out.reserve((in.size() + 2) / 3 * 4);
  std::size_t i = 0;
  while (i + 2 < in.size()) {
    const std::uint32_t v = (static_cast<std::uint8_t>(in[i]) << 16) |
                            (static_cast<std::uint8_t>(in[i + 1]) << 8) |
                            static_cast<std::uint8_t>(in[i + 2]);
    out.push_back(chars[(v >> 18) & 63]);
    out.push_back(chars[(v >> 12) & 63]);
    out.push_back(chars[(v >> 6) & 63]);
    out.push_back(chars[v & 63]);
    i += 3;
  }
  if (i + 1 == in.size()) {
    const std::uint32_t v = static_cast<std::uint8_t>(in[i]) << 16;
    out.push_back(chars[(v >> 18) & 63]);
    out.push_back(chars[(v >> 12) & 63]);
    out += "==";
  } else if (i + 2 == in.size()) {
    const std::uint32_t v =
        (static_cast<std::uint8_t>(in[i]) << 16) | (static_cast<std::uint8_t>(in[i + 1]) << 8);
    out.push_back(chars[(v >> 18) & 63]);
    out.push_back(chars[(v >> 12) & 63]);
    out.push_back(chars[(v >> 6) & 63]);
    out.push_back('=');
  }
  return out;
}

// Simple line chart with axes, tick labels and a legend.
class LineChart {
 public:
  LineChart(std::string title, std::string x_label, std::string y_label)
      : title_(std::move(title)), x_label_(std::move(x_label)), y_label_(std::move(y_label)) {}

  void add_series(std::string name, std::string color, std::vector<double> x,
                  std::vector<double> y) {
    series_.push_back({std::move(name), std::move(color), std::move(x), std::move(y)});
  }

  std::string render(int width = 720, int height = 480) const {
    double x_min = 1e300, x_max = -1e300, y_min = 1e300, y_max = -1e300;
    for (const auto& s : series_) {
      for (std::size_t i = 0; i < s.x.size(); ++i) {
        if (!std::isfinite(s.y[i])) continue;
        x_min = std::min(x_min, s.x[i]);
        x_max = std::max(x_max, s.x[i]);
        y_min = std::min(y_min, s.y[i]);
        y_max = std::max(y_max, s.y[i]);
      }
    }
    if (x_min > x_max) {
      x_min = 0;
      x_max = 1;
      y_min = 0;
      y_max = 1;
    }
    if (y_max - y_min < 1e-12) {
      y_max += 1.0;
      y_min -= 1.0;
    }
    if (x_max - x_min < 1e-12) x_max = x_min + 1.0;
    const double ml = 70, mr = 20, mt = 40, mb = 55;
    const double pw = width - ml - mr, ph = height - mt - mb;
    auto sx = [&](double x) { return ml + (x - x_min) / (x_max - x_min) * pw; };
    auto sy = [&](double y) { return mt + (1.0 - (y - y_min) / (y_max - y_min)) * ph; };

    std::string svg = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" +
                      std::to_string(width) + "\" height=\"" + std::to_string(height) + "\">\n";
    svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    svg += "<text x=\"" + std::to_string(width / 2) +
           "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\" font-family=\"sans-serif\">" +
           title_ + "</text>\n";
    // Axes.
    svg += "<line x1=\"" + fmt(ml) + "\" y1=\"" + fmt(mt) + "\" x2=\"" + fmt(ml) + "\" y2=\"" +
           fmt(mt + ph) + "\" stroke=\"black\"/>\n";
    svg += "<line x1=\"" + fmt(ml) + "\" y1=\"" + fmt(mt + ph) + "\" x2=\"" + fmt(ml + pw) +
           "\" y2=\"" + fmt(mt + ph) + "\" stroke=\"black\"/>\n";
    for (int t = 0; t <= 5; ++t) {
      const double xv = x_min + (x_max - x_min) * t / 5.0;
      const double yv = y_min + (y_max - y_min) * t / 5.0;
      svg += "<text x=\"" + fmt(sx(xv)) + "\" y=\"" + fmt(mt + ph + 18) +
             "\" text-anchor=\"middle\" font-size=\"11\" font-family=\"sans-serif\">" +
             short_num(xv) + "</text>\n";
      svg += "<text x=\"" + fmt(ml - 8) + "\" y=\"" + fmt(sy(yv) + 4) +
             "\" text-anchor=\"end\" font-size=\"11\" font-family=\"sans-serif\">" +
             short_num(yv) + "</text>\n";
      svg += "<line x1=\"" + fmt(ml) + "\" y1=\"" + fmt(sy(yv)) + "\" x2=\"" + fmt(ml + pw) +
             "\" y2=\"" + fmt(sy(yv)) + "\" stroke=\"#dddddd\" stroke-width=\"0.5\"/>\n";
    }
    svg += "<text x=\"" + std::to_string(width / 2) + "\" y=\"" + fmt(height - 12) +
           "\" text-anchor=\"middle\" font-size=\"12\" font-family=\"sans-serif\">" + x_label_ +
           "</text>\n";
    svg += "<text x=\"16\" y=\"" + fmt(mt + ph / 2) +
           "\" text-anchor=\"middle\" font-size=\"12\" font-family=\"sans-serif\" "
           "transform=\"rotate(-90 16 " +
           fmt(mt + ph / 2) + ")\">" + y_label_ + "</text>\n";

    double legend_y = mt + 10;
    for (const auto& s : series_) {
      std::string pts;
      for (std::size_t i = 0; i < s.x.size(); ++i) {
        if (!std::isfinite(s.y[i])) continue;
        pts += fmt(sx(s.x[i])) + "," + fmt(sy(s.y[i])) + " ";
      }
      svg += "<polyline points=\"" + pts + "\" fill=\"none\" stroke=\"" + s.color +
             "\" stroke-width=\"1.6\"/>\n";
      svg += "<line x1=\"" + fmt(ml + pw - 150) + "\" y1=\"" + fmt(legend_y) + "\" x2=\"" +
             fmt(ml + pw - 130) + "\" y2=\"" + fmt(legend_y) + "\" stroke=\"" + s.color +
             "\" stroke-width=\"2\"/>\n";
      svg += "<text x=\"" + fmt(ml + pw - 124) + "\" y=\"" + fmt(legend_y + 4) +
             "\" font-size=\"11\" font-family=\"sans-serif\">" + s.name + "</text>\n";
      legend_y += 16;
    }
    svg += "</svg>\n";
    return svg;
  }

 private:
  struct Series {
    std::string name, color;
    std::vector<double> x, y;
  };
  static std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.1f", v);
    return buf;
  }
  static std::string short_num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.3g", v);
    return buf;
  }
  std::string title_;
  std::string x_label_, y_label_;
  std::vector<Series> series_;
};

struct OverlayContour {
  std::vector<Point2> points_mm;
  std::string color;
  std::string label;
};

// Grayscale image with contour polylines on top, Fig-3 style.
inline std::string overlay_svg(const std::vector<float>& image, const GridSpec& grid,
                               const std::vector<OverlayContour>& contours, int scale = 8) {
  std::vector<std::uint8_t> pixels(image.size());
  for (std::size_t i = 0; i < image.size(); ++i) {
    const double v = std::clamp(static_cast<double>(image[i]), 0.0, 1.0);
    pixels[i] = static_cast<std::uint8_t>(std::lround(v * 255.0));
  }
  const std::string png = png_encode_gray(pixels, grid.width, grid.height);
  const int w = grid.width * scale, h = grid.height * scale;
  const double mm2px = scale / grid.pixel_size;

  std::string svg = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(w) +
                    "\" height=\"" + std::to_string(h + 24) + "\">\n";
  svg += "<image x=\"0\" y=\"0\" width=\"" + std::to_string(w) + "\" height=\"" +
         std::to_string(h) +
         "\" style=\"image-rendering:pixelated\" xlink:href=\"data:image/png;base64," +
         base64_encode(png) + "\" xmlns:xlink=\"http://www.w3.org/1999/xlink\"/>\n";
  double legend_x = 6;
  for (const auto& c : contours) {
    std::string pts;
    for (const Point2& p : c.points_mm) {
      char buf[48];
      std::snprintf(buf, sizeof(buf), "%.1f,%.1f ", p.x * mm2px, p.y * mm2px);
      pts += buf;
    }
    if (!c.points_mm.empty()) {
      char buf[48];
      std::snprintf(buf, sizeof(buf), "%.1f,%.1f", c.points_mm.front().x * mm2px,
                    c.points_mm.front().y * mm2px);
      pts += buf;
    }
    svg += "<polyline points=\"" + pts + "\" fill=\"none\" stroke=\"" + c.color +
           "\" stroke-width=\"1.5\"/>\n";
    svg += "<text x=\"" + std::to_string(legend_x) + "\" y=\"" + std::to_string(h + 16) +
           "\" font-size=\"12\" font-family=\"sans-serif\" fill=\"" + c.color + "\">" + c.label +
           "</text>\n";
    legend_x += 120;
  }
  svg += "</svg>\n";
  return svg;
}

}  // namespace shapeseg
