#include "borrowdet/svgplot.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "borrowdet/common.hpp"

namespace borrowdet::svgplot {

namespace {

constexpr double kPi = 3.14159265358979323846;

std::string xml_escape(const std::string& text) {
  std::string out;
  out.reserve(text.size());
  for (const char c : text) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string num(double v) {
  std::ostringstream s;
  s.precision(6);
  s << v;
  return s.str();
}

double normal_pdf(double x, double mean, double variance) {
  const double d = x - mean;
  return std::exp(-0.5 * d * d / variance) / std::sqrt(2.0 * kPi * variance);
}

}  // namespace

std::string render_histogram(const std::vector<double>& scores,
                             const gmmthresh::ThresholdDecision& decision,
                             const PlotOptions& options) {
  if (scores.empty()) throw ValidationError("plot: empty score set");
  if (options.bins < 1) throw ValidationError("plot: bins must be positive");
  if (options.width < 100 || options.height < 100) {
    throw ValidationError("plot: canvas must be at least 100x100");
  }

  const auto [lo_it, hi_it] = std::minmax_element(scores.begin(), scores.end());
  double x_lo = std::min(*lo_it, decision.value);
  double x_hi = std::max(*hi_it, decision.value);
  if (x_hi == x_lo) {
    x_lo -= 0.5;
    x_hi += 0.5;
  }
  const double pad = 0.05 * (x_hi - x_lo);
  x_lo -= pad;
  x_hi += pad;

  const int bins = options.bins;
  const double bin_width = (x_hi - x_lo) / bins;
  std::vector<double> density(static_cast<std::size_t>(bins), 0.0);
  for (const double s : scores) {
    int b = static_cast<int>((s - x_lo) / bin_width);
    b = std::clamp(b, 0, bins - 1);
    density[static_cast<std::size_t>(b)] += 1.0;
  }
  const double n = static_cast<double>(scores.size());
  for (auto& d : density) d /= n * bin_width;

  // mixture curves sampled across the x range
  const int curve_points = 200;
  std::vector<std::vector<std::pair<double, double>>> curves;
  if (decision.fit) {
    for (const auto& component : decision.fit->components) {
      std::vector<std::pair<double, double>> curve;
      curve.reserve(static_cast<std::size_t>(curve_points) + 1);
      for (int i = 0; i <= curve_points; ++i) {
        const double x = x_lo + (x_hi - x_lo) * i / curve_points;
        curve.emplace_back(x, component.weight * normal_pdf(x, component.mean,
                                                            component.variance));
      }
      curves.push_back(std::move(curve));
    }
  }

  double y_max = 0.0;
  for (const double d : density) y_max = std::max(y_max, d);
  for (const auto& curve : curves) {
    for (const auto& [x, y] : curve) y_max = std::max(y_max, y);
  }
  if (y_max <= 0.0) y_max = 1.0;
  y_max *= 1.08;

  const double margin_left = 56.0, margin_right = 16.0;
  const double margin_top = 40.0, margin_bottom = 44.0;
  const double plot_w = options.width - margin_left - margin_right;
  const double plot_h = options.height - margin_top - margin_bottom;
  const auto px = [&](double x) { return margin_left + (x - x_lo) / (x_hi - x_lo) * plot_w; };
  const auto py = [&](double y) { return margin_top + (1.0 - y / y_max) * plot_h; };

  std::ostringstream svg;
  svg << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << options.width
      << "\" height=\"" << options.height << "\" viewBox=\"0 0 " << options.width << " "
      << options.height << "\">\n";
  svg << "  <rect x=\"0\" y=\"0\" width=\"" << options.width << "\" height=\""
      << options.height << "\" fill=\"white\"/>\n";
  svg << "  <text x=\"" << num(margin_left) << "\" y=\"24\" font-family=\"sans-serif\" "
         "font-size=\"15\">"
      << xml_escape(options.title) << "</text>\n";

  svg << "  <g class=\"histogram\" fill=\"#b8cbe4\" stroke=\"#7a93b5\" stroke-width=\"0.5\">\n";
  for (int b = 0; b < bins; ++b) {
    const double d = density[static_cast<std::size_t>(b)];
    if (d <= 0.0) continue;
    const double x0 = px(x_lo + b * bin_width);
    const double x1 = px(x_lo + (b + 1) * bin_width);
    const double y0 = py(d);
    svg << "    <rect x=\"" << num(x0) << "\" y=\"" << num(y0) << "\" width=\""
        << num(x1 - x0) << "\" height=\"" << num(py(0.0) - y0) << "\"/>\n";
  }
  svg << "  </g>\n";

  const char* curve_colors[] = {"#c0392b", "#27ae60"};
  for (std::size_t c = 0; c < curves.size(); ++c) {
    svg << "  <path class=\"component\" fill=\"none\" stroke=\""
        << curve_colors[c % 2] << "\" stroke-width=\"1.8\" d=\"";
    for (std::size_t i = 0; i < curves[c].size(); ++i) {
      svg << (i == 0 ? "M" : " L") << num(px(curves[c][i].first)) << " "
          << num(py(curves[c][i].second));
    }
    svg << "\"/>\n";
  }

  const double tx = px(decision.value);
  svg << "  <line class=\"threshold\" x1=\"" << num(tx) << "\" y1=\"" << num(margin_top)
      << "\" x2=\"" << num(tx) << "\" y2=\"" << num(margin_top + plot_h)
      << "\" stroke=\"#2c3e50\" stroke-width=\"1.5\" stroke-dasharray=\"6 4\"/>\n";

  // axes with end-point labels
  svg << "  <line x1=\"" << num(margin_left) << "\" y1=\"" << num(margin_top + plot_h)
      << "\" x2=\"" << num(margin_left + plot_w) << "\" y2=\"" << num(margin_top + plot_h)
      << "\" stroke=\"black\" stroke-width=\"1\"/>\n";
  svg << "  <line x1=\"" << num(margin_left) << "\" y1=\"" << num(margin_top) << "\" x2=\""
      << num(margin_left) << "\" y2=\"" << num(margin_top + plot_h)
      << "\" stroke=\"black\" stroke-width=\"1\"/>\n";
  svg << "  <text x=\"" << num(margin_left) << "\" y=\"" << num(options.height - 20.0)
      << "\" font-family=\"sans-serif\" font-size=\"12\">" << num(x_lo) << "</text>\n";
  svg << "  <text x=\"" << num(margin_left + plot_w - 40.0) << "\" y=\""
      << num(options.height - 20.0) << "\" font-family=\"sans-serif\" font-size=\"12\">"
      << num(x_hi) << "</text>\n";
  svg << "  <text x=\"8\" y=\"" << num(margin_top + 6.0)
      << "\" font-family=\"sans-serif\" font-size=\"12\">" << num(y_max) << "</text>\n";

  // legend: threshold method + value, then one entry per component
  double legend_y = margin_top + 18.0;
  const double legend_x = margin_left + plot_w - 250.0;
  svg << "  <text class=\"legend\" x=\"" << num(legend_x) << "\" y=\"" << num(legend_y)
      << "\" font-family=\"sans-serif\" font-size=\"12\">threshold "
      << xml_escape(format_double(decision.value)) << " ("
      << xml_escape(gmmthresh::method_name(decision.method)) << ")</text>\n";
  for (std::size_t c = 0; c < curves.size(); ++c) {
    legend_y += 16.0;
    const auto& component = decision.fit->components[c];
    svg << "  <text class=\"legend\" x=\"" << num(legend_x) << "\" y=\"" << num(legend_y)
        << "\" font-family=\"sans-serif\" font-size=\"12\" fill=\"" << curve_colors[c % 2]
        << "\">component " << (c + 1) << ": w=" << xml_escape(format_double(component.weight))
        << " mean=" << xml_escape(format_double(component.mean)) << "</text>\n";
  }

  svg << "</svg>\n";
  return svg.str();
}

}  // namespace borrowdet::svgplot
