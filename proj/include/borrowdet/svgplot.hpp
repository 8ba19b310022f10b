#pragma once

#include <string>
#include <vector>

#include "borrowdet/gmmthresh.hpp"

namespace borrowdet::svgplot {

struct PlotOptions {
  int width = 720;
  int height = 480;
  int bins = 50;
  std::string title = "similarity scores";
};

// Standalone SVG: density-normalized histogram of the scores, one weighted
// normal-density curve per fitted mixture component (class "component"), a
// dashed vertical line at the decision threshold (class "threshold"), and a
// legend naming the threshold method.
std::string render_histogram(const std::vector<double>& scores,
                             const gmmthresh::ThresholdDecision& decision,
                             const PlotOptions& options);

}  // namespace borrowdet::svgplot
