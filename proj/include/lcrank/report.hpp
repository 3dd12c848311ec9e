#pragma once

// Reads results CSVs back and renders figure analogues as standalone SVG:
// a correlation-vs-length line chart for ranking rows and a per-policy
// regret/epochs bar chart for replay rows. Charts use a fixed 800x500
// viewBox and no external plotting dependency.

#include <string>
#include <vector>

#include "lcrank/search_sim.hpp"

namespace lcrank {

// Inverse of results_csv; leading '#' comment lines are skipped.
std::vector<ResultRow> parse_results_csv(const std::string& text);
std::vector<ResultRow> read_results_csv(const std::string& path);

// Mean spearman per (dataset, policy, length fraction), one polyline each.
// Throws ValidationError when no ranking rows are present.
std::string ranking_chart_svg(const std::vector<ResultRow>& rows);

// Mean regret and mean epochs per (dataset, policy), side-by-side bars.
// Throws ValidationError when no replay rows are present.
std::string replay_chart_svg(const std::vector<ResultRow>& rows);

}  // namespace lcrank
