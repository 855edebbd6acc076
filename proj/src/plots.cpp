#include "opcap/plots.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

namespace opcap {

namespace {

constexpr int kWidth = 640, kHeight = 400;
constexpr int kLeft = 60, kRight = 150, kTop = 40, kBottom = 50;
const char* const kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf"};

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

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

void header(std::ostringstream& os, const std::string& title) {
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
     << "\" font-family=\"sans-serif\" font-size=\"12\">\n"
     << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
     << "<text x=\"" << kWidth / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << escape(title)
     << "</text>\n";
}

void axes(std::ostringstream& os, double y_lo, double y_hi) {
  const int x0 = kLeft, x1 = kWidth - kRight, y0 = kHeight - kBottom, y1 = kTop;
  os << "<line x1=\"" << x0 << "\" y1=\"" << y0 << "\" x2=\"" << x1 << "\" y2=\"" << y0 << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << x0 << "\" y1=\"" << y0 << "\" x2=\"" << x0 << "\" y2=\"" << y1 << "\" stroke=\"black\"/>\n";
  for (int k = 0; k <= 4; ++k) {
    const double v = y_lo + (y_hi - y_lo) * k / 4.0;
    const double y = y0 - (y0 - y1) * k / 4.0;
    os << "<text x=\"" << x0 - 6 << "\" y=\"" << y + 4 << "\" text-anchor=\"end\">" << num(v) << "</text>\n";
    os << "<line x1=\"" << x0 << "\" y1=\"" << y << "\" x2=\"" << x1 << "\" y2=\"" << y
       << "\" stroke=\"#ddd\"/>\n";
  }
}

void legend(std::ostringstream& os, const std::vector<std::string>& names) {
  for (std::size_t i = 0; i < names.size(); ++i) {
    const int y = kTop + 10 + static_cast<int>(i) * 18;
    os << "<rect x=\"" << kWidth - kRight + 12 << "\" y=\"" << y - 9 << "\" width=\"12\" height=\"12\" fill=\""
       << kColors[i % std::size(kColors)] << "\"/>\n";
    os << "<text x=\"" << kWidth - kRight + 30 << "\" y=\"" << y + 1 << "\">" << escape(names[i]) << "</text>\n";
  }
}

}  // namespace

std::string line_chart_svg(const std::string& title, const std::string& x_label, const std::vector<Series>& series) {
  double x_lo = std::numeric_limits<double>::infinity(), x_hi = -x_lo, y_lo = x_lo, y_hi = -x_lo;
  for (const auto& s : series) {
    for (const auto& [x, y] : s.points) {
      x_lo = std::min(x_lo, x);
      x_hi = std::max(x_hi, x);
      y_lo = std::min(y_lo, y);
      y_hi = std::max(y_hi, y);
    }
  }
  if (!std::isfinite(x_lo)) x_lo = 0, x_hi = 1, y_lo = 0, y_hi = 1;
  y_lo = std::min(y_lo, 0.0);
  if (x_hi == x_lo) x_hi = x_lo + 1;
  if (y_hi == y_lo) y_hi = y_lo + 1;

  std::ostringstream os;
  header(os, title);
  axes(os, y_lo, y_hi);
  const double pw = kWidth - kLeft - kRight, ph = kHeight - kTop - kBottom;
  os << "<text x=\"" << kLeft + pw / 2 << "\" y=\"" << kHeight - 12 << "\" text-anchor=\"middle\">" << escape(x_label)
     << "</text>\n";
  os << "<text x=\"" << kLeft << "\" y=\"" << kHeight - kBottom + 16 << "\" text-anchor=\"middle\">" << num(x_lo)
     << "</text>\n";
  os << "<text x=\"" << kWidth - kRight << "\" y=\"" << kHeight - kBottom + 16 << "\" text-anchor=\"middle\">"
     << num(x_hi) << "</text>\n";
  std::vector<std::string> names;
  for (std::size_t i = 0; i < series.size(); ++i) {
    names.push_back(series[i].name);
    os << "<polyline fill=\"none\" stroke-width=\"2\" stroke=\"" << kColors[i % std::size(kColors)]
       << "\" points=\"";
    for (const auto& [x, y] : series[i].points) {
      os << num(kLeft + (x - x_lo) / (x_hi - x_lo) * pw) << ',' << num(kTop + ph - (y - y_lo) / (y_hi - y_lo) * ph)
         << ' ';
    }
    os << "\"/>\n";
  }
  legend(os, names);
  os << "</svg>\n";
  return os.str();
}

std::string bar_chart_svg(const std::string& title, const std::vector<std::string>& categories,
                          const std::vector<BarGroup>& groups) {
  double y_hi = 0.0;
  for (const auto& g : groups) {
    for (double v : g.values) y_hi = std::max(y_hi, v);
  }
  if (y_hi <= 0.0) y_hi = 1.0;

  std::ostringstream os;
  header(os, title);
  axes(os, 0.0, y_hi);
  const double pw = kWidth - kLeft - kRight, ph = kHeight - kTop - kBottom;
  const double slot = categories.empty() ? pw : pw / static_cast<double>(categories.size());
  const double bar = slot * 0.8 / std::max<std::size_t>(groups.size(), 1);
  for (std::size_t c = 0; c < categories.size(); ++c) {
    const double cx = kLeft + slot * static_cast<double>(c);
    os << "<text x=\"" << num(cx + slot / 2) << "\" y=\"" << kHeight - kBottom + 16 << "\" text-anchor=\"middle\">"
       << escape(categories[c]) << "</text>\n";
    for (std::size_t g = 0; g < groups.size(); ++g) {
      const double v = c < groups[g].values.size() ? groups[g].values[c] : 0.0;
      const double h = std::max(0.0, v) / y_hi * ph;
      os << "<rect x=\"" << num(cx + slot * 0.1 + bar * static_cast<double>(g)) << "\" y=\""
         << num(kTop + ph - h) << "\" width=\"" << num(bar) << "\" height=\"" << num(h) << "\" fill=\""
         << kColors[g % std::size(kColors)] << "\"><title>" << escape(groups[g].name) << ' '
         << escape(categories[c]) << ": " << num(v) << "</title></rect>\n";
    }
  }
  std::vector<std::string> names;
  for (const auto& g : groups) names.push_back(g.name);
  legend(os, names);
  os << "</svg>\n";
  return os.str();
}

}  // namespace opcap
