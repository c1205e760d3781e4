#include "tpc/plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

namespace tpc {
namespace {

constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};
constexpr int kMargin = 48;

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4g", v);
  return buf;
}

void header(std::ostringstream& os, const std::string& title, int w, int h) {
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\" viewBox=\"0 0 " << w
     << ' ' << h << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << w / 2 << "\" y=\"18\" text-anchor=\"middle\" font-size=\"14\">" << escape(title) << "</text>\n";
  os << "<line x1=\"" << kMargin << "\" y1=\"" << h - kMargin << "\" x2=\"" << w - kMargin / 2 << "\" y2=\""
     << h - kMargin << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << kMargin << "\" y1=\"" << kMargin / 2 + 8 << "\" x2=\"" << kMargin << "\" y2=\"" << h - kMargin
     << "\" stroke=\"black\"/>\n";
}

}  // namespace

std::string line_chart_svg(const std::string& title, const std::vector<Series>& series, int width, int height) {
  double xmin = std::numeric_limits<double>::infinity();
  double xmax = -xmin;
  double ymin = xmin;
  double ymax = -xmin;
  for (const auto& s : series) {
    for (std::size_t i = 0; i < std::min(s.x.size(), s.y.size()); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
      xmin = std::min(xmin, s.x[i]);
      xmax = std::max(xmax, s.x[i]);
      ymin = std::min(ymin, s.y[i]);
      ymax = std::max(ymax, s.y[i]);
    }
  }
  if (!std::isfinite(xmin)) xmin = 0, xmax = 1, ymin = 0, ymax = 1;
  if (xmax == xmin) xmax = xmin + 1;
  if (ymax == ymin) ymax = ymin + 1;
  const double pw = width - 1.5 * kMargin;
  const double ph = height - 1.5 * kMargin - 8;
  auto px = [&](double x) { return kMargin + (x - xmin) / (xmax - xmin) * pw; };
  auto py = [&](double y) { return height - kMargin - (y - ymin) / (ymax - ymin) * ph; };

  std::ostringstream os;
  header(os, title, width, height);
  os << "<text x=\"" << kMargin << "\" y=\"" << height - kMargin + 14 << "\">" << num(xmin) << "</text>\n";
  os << "<text x=\"" << width - kMargin / 2 << "\" y=\"" << height - kMargin + 14 << "\" text-anchor=\"end\">"
     << num(xmax) << "</text>\n";
  os << "<text x=\"" << kMargin - 4 << "\" y=\"" << height - kMargin << "\" text-anchor=\"end\">" << num(ymin)
     << "</text>\n";
  os << "<text x=\"" << kMargin - 4 << "\" y=\"" << py(ymax) + 4 << "\" text-anchor=\"end\">" << num(ymax)
     << "</text>\n";
  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    const char* color = kPalette[k % std::size(kPalette)];
    os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < std::min(s.x.size(), s.y.size()); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
      os << num(px(s.x[i])) << ',' << num(py(s.y[i])) << ' ';
    }
    os << "\"/>\n";
    os << "<text x=\"" << width - kMargin / 2 << "\" y=\"" << kMargin / 2 + 14 * (k + 1) << "\" text-anchor=\"end\" fill=\""
       << color << "\">" << escape(s.label) << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

std::string bar_chart_svg(const std::string& title, const std::vector<double>& values, int width, int height) {
  double ymax = 0;
  for (double v : values) {
    if (std::isfinite(v)) ymax = std::max(ymax, v);
  }
  if (ymax <= 0) ymax = 1;
  const double pw = width - 1.5 * kMargin;
  const double ph = height - 1.5 * kMargin - 8;
  const double slot = values.empty() ? pw : pw / static_cast<double>(values.size());

  std::ostringstream os;
  header(os, title, width, height);
  os << "<text x=\"" << kMargin - 4 << "\" y=\"" << height - kMargin - ph + 4 << "\" text-anchor=\"end\">" << num(ymax)
     << "</text>\n";
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double v = std::isfinite(values[i]) ? std::max(0.0, values[i]) : 0.0;
    const double bh = v / ymax * ph;
    const double x = kMargin + slot * static_cast<double>(i) + slot * 0.1;
    os << "<rect x=\"" << num(x) << "\" y=\"" << num(height - kMargin - bh) << "\" width=\"" << num(slot * 0.8)
       << "\" height=\"" << num(bh) << "\" fill=\"" << kPalette[0] << "\"/>\n";
    os << "<text x=\"" << num(x + slot * 0.4) << "\" y=\"" << height - kMargin + 14 << "\" text-anchor=\"middle\">"
       << i + 1 << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

}  // namespace tpc
