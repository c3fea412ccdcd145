#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "skild/errors.hpp"

namespace skild {

// Minimal self-contained SVG emitter for heatmaps and learning curves. No
// display server, no external plotting dependency.
class SvgCanvas {
 public:
  SvgCanvas(double width, double height) : w_(width), h_(height) {
    body_ += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + num(w_) + "\" height=\"" +
             num(h_) + "\" viewBox=\"0 0 " + num(w_) + " " + num(h_) + "\">\n";
    body_ += "<rect x=\"0\" y=\"0\" width=\"" + num(w_) + "\" height=\"" + num(h_) +
             "\" fill=\"white\"/>\n";
  }

  void rect(double x, double y, double w, double h, const std::string& fill,
            double opacity = 1.0) {
    body_ += "<rect x=\"" + num(x) + "\" y=\"" + num(y) + "\" width=\"" + num(w) +
             "\" height=\"" + num(h) + "\" fill=\"" + fill + "\"";
    if (opacity < 1.0) body_ += " fill-opacity=\"" + num(opacity) + "\"";
    body_ += "/>\n";
  }

  void circle(double x, double y, double r, const std::string& fill, double opacity = 1.0) {
    body_ += "<circle cx=\"" + num(x) + "\" cy=\"" + num(y) + "\" r=\"" + num(r) + "\" fill=\"" +
             fill + "\"";
    if (opacity < 1.0) body_ += " fill-opacity=\"" + num(opacity) + "\"";
    body_ += "/>\n";
  }

  void polyline(const std::vector<std::pair<double, double>>& pts, const std::string& stroke,
                double width = 1.5) {
    if (pts.empty()) return;
    body_ += "<polyline fill=\"none\" stroke=\"" + stroke + "\" stroke-width=\"" + num(width) +
             "\" points=\"";
    for (const auto& [x, y] : pts) body_ += num(x) + "," + num(y) + " ";
    body_ += "\"/>\n";
  }

  void polygon(const std::vector<std::pair<double, double>>& pts, const std::string& fill,
               double opacity) {
    if (pts.empty()) return;
    body_ += "<polygon fill=\"" + fill + "\" fill-opacity=\"" + num(opacity) + "\" points=\"";
    for (const auto& [x, y] : pts) body_ += num(x) + "," + num(y) + " ";
    body_ += "\"/>\n";
  }

  void line(double x0, double y0, double x1, double y1, const std::string& stroke,
            double width = 1.0) {
    body_ += "<line x1=\"" + num(x0) + "\" y1=\"" + num(y0) + "\" x2=\"" + num(x1) + "\" y2=\"" +
             num(y1) + "\" stroke=\"" + stroke + "\" stroke-width=\"" + num(width) + "\"/>\n";
  }

  void text(double x, double y, const std::string& s, double size = 12.0,
            const std::string& fill = "#333333") {
    body_ += "<text x=\"" + num(x) + "\" y=\"" + num(y) + "\" font-family=\"sans-serif\" " +
             "font-size=\"" + num(size) + "\" fill=\"" + fill + "\">" + s + "</text>\n";
  }

  void save(const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) raise(ErrorKind::IoError, "cannot write " + path);
    os << body_ << "</svg>\n";
  }

  double width() const { return w_; }
  double height() const { return h_; }

 private:
  static std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6g", v);
    return buf;
  }

  double w_, h_;
  std::string body_;
};

// Blue-white-red diverging map for t in [0,1].
inline std::string heat_color(double t) {
  t = std::clamp(t, 0.0, 1.0);
  const auto lerp = [](double a, double b, double u) { return a + (b - a) * u; };
  double r, g, b;
  if (t < 0.5) {
    const double u = t / 0.5;
    r = lerp(0.13, 0.97, u);
    g = lerp(0.31, 0.96, u);
    b = lerp(0.73, 0.94, u);
  } else {
    const double u = (t - 0.5) / 0.5;
    r = lerp(0.97, 0.77, u);
    g = lerp(0.96, 0.02, u);
    b = lerp(0.94, 0.11, u);
  }
  char buf[8];
  std::snprintf(buf, sizeof(buf), "#%02x%02x%02x", static_cast<int>(r * 255),
                static_cast<int>(g * 255), static_cast<int>(b * 255));
  return buf;
}

inline const std::vector<std::string>& curve_palette() {
  static const std::vector<std::string> p = {"#d62728", "#1f77b4", "#2ca02c", "#9467bd",
                                             "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"};
  return p;
}

}  // namespace skild
