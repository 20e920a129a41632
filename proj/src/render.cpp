#include "ssl2/report/render.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "ssl2/core/errors.hpp"

namespace ssl2 {

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 24));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

void png_chunk(std::vector<std::uint8_t>& out, const char type[4],
               const std::vector<std::uint8_t>& data) {
  put_u32(out, static_cast<std::uint32_t>(data.size()));
  std::vector<std::uint8_t> body(type, type + 4);
  body.insert(body.end(), data.begin(), data.end());
  out.insert(out.end(), body.begin(), body.end());
  put_u32(out, static_cast<std::uint32_t>(crc32(0L, body.data(), static_cast<uInt>(body.size()))));
}

}  // namespace

void write_png_rgb(const std::string& path, int width, int height,
                   const std::vector<std::uint8_t>& rgb) {
  if (rgb.size() != static_cast<std::size_t>(width) * height * 3)
    throw ShapeMismatch("write_png_rgb: pixel buffer size mismatch");

  // filter byte 0 per scanline
  std::vector<std::uint8_t> raw;
  raw.reserve(static_cast<std::size_t>(height) * (1 + static_cast<std::size_t>(width) * 3));
  for (int y = 0; y < height; ++y) {
    raw.push_back(0);
    const auto* row = rgb.data() + static_cast<std::size_t>(y) * width * 3;
    raw.insert(raw.end(), row, row + static_cast<std::size_t>(width) * 3);
  }
  uLongf bound = compressBound(static_cast<uLong>(raw.size()));
  std::vector<std::uint8_t> compressed(bound);
  if (compress2(compressed.data(), &bound, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK)
    throw IOError("png deflate failed");
  compressed.resize(bound);

  std::vector<std::uint8_t> out{0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  std::vector<std::uint8_t> ihdr;
  put_u32(ihdr, static_cast<std::uint32_t>(width));
  put_u32(ihdr, static_cast<std::uint32_t>(height));
  ihdr.push_back(8);   // bit depth
  ihdr.push_back(2);   // truecolour
  ihdr.push_back(0);   // deflate
  ihdr.push_back(0);   // filter
  ihdr.push_back(0);   // no interlace
  png_chunk(out, "IHDR", ihdr);
  png_chunk(out, "IDAT", compressed);
  png_chunk(out, "IEND", {});

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IOError("cannot write " + path);
  f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
  if (!f) throw IOError("write failed: " + path);
}

void render_overlay_png(const std::string& path, const Volume<float>& flair,
                        const Volume<float>& gt_mask, const Volume<float>& pred_mask,
                        index_t slice) {
  if (flair.extent != gt_mask.extent || flair.extent != pred_mask.extent)
    throw ShapeMismatch("render_overlay_png: extents differ");
  const auto& e = flair.extent;
  if (slice < 0) {
    index_t best = 0, best_count = -1;
    for (index_t z = 0; z < e[2]; ++z) {
      index_t count = 0;
      for (index_t x = 0; x < e[0]; ++x)
        for (index_t y = 0; y < e[1]; ++y) count += gt_mask.at(x, y, z) > 0.5f;
      if (count > best_count) {
        best_count = count;
        best = z;
      }
    }
    slice = best;
  }
  const int w = static_cast<int>(e[1]);
  const int h = static_cast<int>(e[0]);
  std::vector<std::uint8_t> rgb(static_cast<std::size_t>(w) * h * 3);
  for (index_t x = 0; x < e[0]; ++x)
    for (index_t y = 0; y < e[1]; ++y) {
      const float v = std::clamp(flair.at(x, y, slice), 0.0f, 1.0f);
      auto g = static_cast<std::uint8_t>(v * 255.0f);
      std::uint8_t r = g, gg = g, b = g;
      const bool gt = gt_mask.at(x, y, slice) > 0.5f;
      const bool pr = pred_mask.at(x, y, slice) > 0.5f;
      if (gt && pr) {  // true positive: green
        r = 0;
        gg = 220;
        b = 0;
      } else if (gt && !pr) {  // false negative: red
        r = 220;
        gg = 0;
        b = 0;
      } else if (!gt && pr) {  // false positive: yellow
        r = 230;
        gg = 230;
        b = 0;
      }
      const std::size_t px = (static_cast<std::size_t>(x) * w + static_cast<std::size_t>(y)) * 3;
      rgb[px] = r;
      rgb[px + 1] = gg;
      rgb[px + 2] = b;
    }
  write_png_rgb(path, w, h, rgb);
}

void render_boxplot_svg(const std::string& path, const std::string& title,
                        const std::vector<std::string>& labels,
                        const std::vector<std::vector<double>>& groups) {
  if (labels.size() != groups.size()) throw ShapeMismatch("render_boxplot_svg: labels/groups mismatch");
  if (groups.empty()) throw NoResults("render_boxplot_svg: nothing to plot");

  const int W = 160 + static_cast<int>(groups.size()) * 110;
  const int H = 420;
  const double plot_x0 = 80, plot_y0 = 40, plot_y1 = 330;

  double lo = 1e300, hi = -1e300;
  for (const auto& g : groups)
    for (double v : g) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  if (!(hi > lo)) {
    lo -= 0.05;
    hi += 0.05;
  }
  const double pad = 0.08 * (hi - lo);
  lo -= pad;
  hi += pad;
  auto ypix = [&](double v) { return plot_y1 - (v - lo) / (hi - lo) * (plot_y1 - plot_y0); };

  auto quantile = [](std::vector<double> v, double q) {
    std::sort(v.begin(), v.end());
    const double h = q * static_cast<double>(v.size() - 1);
    const auto i = static_cast<std::size_t>(std::floor(h));
    const double frac = h - std::floor(h);
    if (i + 1 < v.size()) return v[i] * (1 - frac) + v[i + 1] * frac;
    return v[i];
  };

  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IOError("cannot write " + path);
  f << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\">\n";
  f << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  f << "<text x=\"" << W / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"15\" "
       "font-family=\"sans-serif\">" << title << "</text>\n";
  // y axis with ticks
  f << "<line x1=\"" << plot_x0 << "\" y1=\"" << plot_y0 << "\" x2=\"" << plot_x0 << "\" y2=\""
    << plot_y1 << "\" stroke=\"black\"/>\n";
  for (int t = 0; t <= 5; ++t) {
    const double v = lo + (hi - lo) * t / 5.0;
    const double y = ypix(v);
    f << "<line x1=\"" << plot_x0 - 4 << "\" y1=\"" << y << "\" x2=\"" << plot_x0 << "\" y2=\"" << y
      << "\" stroke=\"black\"/>\n";
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.3f", v);
    f << "<text x=\"" << plot_x0 - 8 << "\" y=\"" << y + 4
      << "\" text-anchor=\"end\" font-size=\"11\" font-family=\"sans-serif\">" << buf << "</text>\n";
  }

  for (std::size_t i = 0; i < groups.size(); ++i) {
    const auto& g = groups[i];
    if (g.empty()) continue;
    const double cx = plot_x0 + 60 + static_cast<double>(i) * 110;
    const double bw = 58;
    const double q1 = quantile(g, 0.25), q2 = quantile(g, 0.5), q3 = quantile(g, 0.75);
    const double iqr = q3 - q1;
    double wlo = 1e300, whi = -1e300;
    for (double v : g) {
      if (v >= q1 - 1.5 * iqr) wlo = std::min(wlo, v);
      if (v <= q3 + 1.5 * iqr) whi = std::max(whi, v);
    }
    const int shade = 60 + static_cast<int>(160.0 * static_cast<double>(i) /
                                            std::max<std::size_t>(1, groups.size() - 1));
    f << "<line x1=\"" << cx << "\" y1=\"" << ypix(wlo) << "\" x2=\"" << cx << "\" y2=\""
      << ypix(whi) << "\" stroke=\"black\"/>\n";
    for (double wv : {wlo, whi})
      f << "<line x1=\"" << cx - bw / 4 << "\" y1=\"" << ypix(wv) << "\" x2=\"" << cx + bw / 4
        << "\" y2=\"" << ypix(wv) << "\" stroke=\"black\"/>\n";
    f << "<rect x=\"" << cx - bw / 2 << "\" y=\"" << ypix(q3) << "\" width=\"" << bw
      << "\" height=\"" << ypix(q1) - ypix(q3) << "\" fill=\"rgb(" << shade << "," << shade
      << ",220)\" stroke=\"black\"/>\n";
    f << "<line x1=\"" << cx - bw / 2 << "\" y1=\"" << ypix(q2) << "\" x2=\"" << cx + bw / 2
      << "\" y2=\"" << ypix(q2) << "\" stroke=\"black\" stroke-width=\"2\"/>\n";
    for (double v : g)
      if (v < q1 - 1.5 * iqr || v > q3 + 1.5 * iqr)
        f << "<circle cx=\"" << cx << "\" cy=\"" << ypix(v) << "\" r=\"2.5\" fill=\"black\"/>\n";
    f << "<text x=\"" << cx << "\" y=\"" << plot_y1 + 18 << "\" text-anchor=\"middle\" "
         "font-size=\"10\" font-family=\"sans-serif\" transform=\"rotate(18 " << cx << " "
      << plot_y1 + 18 << ")\">" << labels[i] << "</text>\n";
  }
  f << "</svg>\n";
  if (!f) throw IOError("write failed: " + path);
}

}  // namespace ssl2
