#include "util/svg.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

#include "util/error.hpp"

namespace sftok {

namespace {

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                          "#9467bd", "#8c564b", "#17becf", "#7f7f7f"};

std::string fmt(double v) {
  std::ostringstream oss;
  oss << std::setprecision(6) << v;
  return oss.str();
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '<') out += "&lt;";
    else if (c == '>') out += "&gt;";
    else if (c == '&') out += "&amp;";
    else out += c;
  }
  return out;
}

}  // namespace

void write_line_plot_svg(const std::string& path, const std::string& title,
                         const std::string& xlabel, const std::string& ylabel,
                         const std::vector<PlotSeries>& series, int width,
                         int height) {
  check(!series.empty(), ErrorCode::invalid_argument, "plot: no series");
  double xmin = std::numeric_limits<double>::infinity(), xmax = -xmin;
  double ymin = xmin, ymax = -xmin;
  for (const auto& s : series) {
    check(s.x.size() == s.y.size() && !s.x.empty(), ErrorCode::invalid_argument,
          "plot: series '" + s.label + "' malformed");
    for (double v : s.x) {
      xmin = std::min(xmin, v);
      xmax = std::max(xmax, v);
    }
    for (double v : s.y) {
      ymin = std::min(ymin, v);
      ymax = std::max(ymax, v);
    }
  }
  if (xmax == xmin) xmax = xmin + 1.0;
  if (ymax == ymin) ymax = ymin + 1.0;
  const double pad_y = 0.05 * (ymax - ymin);
  ymin -= pad_y;
  ymax += pad_y;

  const int ml = 70, mr = 20, mt = 40, mb = 55;
  const double pw = width - ml - mr, ph = height - mt - mb;
  auto px = [&](double x) { return ml + (x - xmin) / (xmax - xmin) * pw; };
  auto py = [&](double y) { return mt + (ymax - y) / (ymax - ymin) * ph; };

  std::ofstream out(path);
  check(out.good(), ErrorCode::io, "cannot write " + path);
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width
      << "\" height=\"" << height << "\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out << "<text x=\"" << width / 2 << "\" y=\"22\" text-anchor=\"middle\" "
      << "font-family=\"sans-serif\" font-size=\"15\">" << escape(title)
      << "</text>\n";

  out << "<rect x=\"" << ml << "\" y=\"" << mt << "\" width=\"" << fmt(pw)
      << "\" height=\"" << fmt(ph)
      << "\" fill=\"none\" stroke=\"#333\" stroke-width=\"1\"/>\n";

  const int nticks = 5;
  for (int i = 0; i <= nticks; ++i) {
    double tx = xmin + (xmax - xmin) * i / nticks;
    double ty = ymin + (ymax - ymin) * i / nticks;
    out << "<line x1=\"" << fmt(px(tx)) << "\" y1=\"" << mt + ph << "\" x2=\""
        << fmt(px(tx)) << "\" y2=\"" << mt + ph + 5
        << "\" stroke=\"#333\"/>\n";
    out << "<text x=\"" << fmt(px(tx)) << "\" y=\"" << mt + ph + 20
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
        << "font-size=\"11\">" << fmt(tx) << "</text>\n";
    out << "<line x1=\"" << ml - 5 << "\" y1=\"" << fmt(py(ty)) << "\" x2=\""
        << ml << "\" y2=\"" << fmt(py(ty)) << "\" stroke=\"#333\"/>\n";
    out << "<text x=\"" << ml - 8 << "\" y=\"" << fmt(py(ty) + 4)
        << "\" text-anchor=\"end\" font-family=\"sans-serif\" "
        << "font-size=\"11\">" << fmt(ty) << "</text>\n";
  }
  out << "<text x=\"" << width / 2 << "\" y=\"" << height - 12
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
      << "font-size=\"13\">" << escape(xlabel) << "</text>\n";
  out << "<text x=\"18\" y=\"" << height / 2
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\""
      << " transform=\"rotate(-90 18 " << height / 2 << ")\">"
      << escape(ylabel) << "</text>\n";

  for (size_t si = 0; si < series.size(); ++si) {
    const auto& s = series[si];
    const char* color = kPalette[si % 8];
    out << "<polyline fill=\"none\" stroke=\"" << color
        << "\" stroke-width=\"1.5\" points=\"";
    for (size_t i = 0; i < s.x.size(); ++i)
      out << fmt(px(s.x[i])) << "," << fmt(py(s.y[i])) << " ";
    out << "\"/>\n";
    const int ly = mt + 16 + static_cast<int>(si) * 16;
    out << "<line x1=\"" << ml + 10 << "\" y1=\"" << ly << "\" x2=\""
        << ml + 34 << "\" y2=\"" << ly << "\" stroke=\"" << color
        << "\" stroke-width=\"2\"/>\n";
    out << "<text x=\"" << ml + 40 << "\" y=\"" << ly + 4
        << "\" font-family=\"sans-serif\" font-size=\"11\">"
        << escape(s.label) << "</text>\n";
  }
  out << "</svg>\n";
  check(out.good(), ErrorCode::io, "write failed for " + path);
}

}  // namespace sftok
