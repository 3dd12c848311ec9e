#include "lcrank/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>

namespace lcrank {

namespace {

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  for (char ch : line) {
    if (ch == ',') {
      fields.push_back(field);
      field.clear();
    } else {
      field.push_back(ch);
    }
  }
  fields.push_back(field);
  return fields;
}

double parse_double(const std::string& s, int line_no) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str() || *end != '\0')
    throw ValidationError("line " + std::to_string(line_no) + ": bad number \"" + s + "\"");
  return v;
}

// Chart coordinates only need plot precision, not round-trip precision.
std::string coord(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

std::string svg_escape(const std::string& s) {
  std::string out;
  for (char ch : s) {
    switch (ch) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out.push_back(ch);
    }
  }
  return out;
}

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                          "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"};
constexpr int kPaletteSize = 8;

constexpr double kWidth = 800.0;
constexpr double kHeight = 500.0;
constexpr double kMarginLeft = 70.0;
constexpr double kMarginRight = 30.0;
constexpr double kMarginTop = 40.0;
constexpr double kMarginBottom = 60.0;

struct Frame {
  double x0 = kMarginLeft;
  double x1 = kWidth - kMarginRight;
  double y0 = kHeight - kMarginBottom;  // y axis grows upward from here
  double y1 = kMarginTop;

  double x(double t) const { return x0 + t * (x1 - x0); }  // t in [0,1]
  double y(double t) const { return y0 + t * (y1 - y0); }
};

void open_svg(std::ostringstream& out, const std::string& title) {
  out << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
      << "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 800 500\">\n"
      << "<rect x=\"0\" y=\"0\" width=\"800\" height=\"500\" fill=\"white\"/>\n"
      << "<text x=\"400\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">" << svg_escape(title)
      << "</text>\n";
}

void axes(std::ostringstream& out, const Frame& f, const std::string& x_label,
          const std::string& y_label) {
  out << "<line x1=\"" << coord(f.x0) << "\" y1=\"" << coord(f.y0) << "\" x2=\"" << coord(f.x1)
      << "\" y2=\"" << coord(f.y0) << "\" stroke=\"black\"/>\n"
      << "<line x1=\"" << coord(f.x0) << "\" y1=\"" << coord(f.y0) << "\" x2=\"" << coord(f.x0)
      << "\" y2=\"" << coord(f.y1) << "\" stroke=\"black\"/>\n"
      << "<text x=\"" << coord((f.x0 + f.x1) / 2.0) << "\" y=\"" << coord(kHeight - 16.0)
      << "\" text-anchor=\"middle\" font-size=\"13\">" << svg_escape(x_label) << "</text>\n"
      << "<text x=\"18\" y=\"" << coord((f.y0 + f.y1) / 2.0)
      << "\" text-anchor=\"middle\" font-size=\"13\" transform=\"rotate(-90 18 "
      << coord((f.y0 + f.y1) / 2.0) << ")\">" << svg_escape(y_label) << "</text>\n";
}

}  // namespace

std::vector<ResultRow> parse_results_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  bool header_seen = false;
  std::vector<ResultRow> rows;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    if (!header_seen) {
      if (line != "protocol,dataset,policy,seed,length_fraction,spearman,regret,epochs")
        throw ValidationError("line " + std::to_string(line_no) + ": unexpected header \"" + line +
                              "\"");
      header_seen = true;
      continue;
    }
    const std::vector<std::string> f = split_fields(line);
    if (f.size() != 8)
      throw ValidationError("line " + std::to_string(line_no) + ": expected 8 fields, got " +
                            std::to_string(f.size()));
    ResultRow row;
    row.protocol = f[0];
    row.dataset = f[1];
    row.policy = f[2];
    row.seed = static_cast<std::uint64_t>(std::strtoull(f[3].c_str(), nullptr, 10));
    if (!f[4].empty()) row.length_fraction = parse_double(f[4], line_no);
    if (!f[5].empty()) row.spearman_value = parse_double(f[5], line_no);
    if (!f[6].empty()) row.regret = parse_double(f[6], line_no);
    if (!f[7].empty()) row.epochs = static_cast<long long>(std::strtoll(f[7].c_str(), nullptr, 10));
    rows.push_back(std::move(row));
  }
  if (!header_seen) throw ValidationError("no results header found");
  return rows;
}

std::vector<ResultRow> read_results_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open \"" + path + "\"");
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_results_csv(text);
}

std::string ranking_chart_svg(const std::vector<ResultRow>& rows) {
  // (dataset, policy) -> fraction -> spearman values
  std::map<std::pair<std::string, std::string>, std::map<double, std::vector<double>>> series;
  double max_fraction = 0.0;
  for (const ResultRow& r : rows) {
    if (r.protocol != "ranking" || !r.length_fraction || !r.spearman_value) continue;
    series[{r.dataset, r.policy}][*r.length_fraction].push_back(*r.spearman_value);
    max_fraction = std::max(max_fraction, *r.length_fraction);
  }
  if (series.empty()) throw ValidationError("no ranking rows to chart");
  if (max_fraction == 0.0) max_fraction = 1.0;

  Frame f;
  std::ostringstream out;
  open_svg(out, "Rank correlation vs. observed curve length");
  axes(out, f, "observed fraction of the curve", "mean Spearman correlation");

  // y spans [-1, 1] with a zero line; x spans [0, max fraction].
  auto ypos = [&](double rho) { return f.y((rho + 1.0) / 2.0); };
  auto xpos = [&](double frac) { return f.x(frac / max_fraction); };
  out << "<line x1=\"" << coord(f.x0) << "\" y1=\"" << coord(ypos(0.0)) << "\" x2=\""
      << coord(f.x1) << "\" y2=\"" << coord(ypos(0.0))
      << "\" stroke=\"#cccccc\" stroke-dasharray=\"4 4\"/>\n";
  for (double tick : {-1.0, -0.5, 0.0, 0.5, 1.0})
    out << "<text x=\"" << coord(f.x0 - 8.0) << "\" y=\"" << coord(ypos(tick) + 4.0)
        << "\" text-anchor=\"end\" font-size=\"11\">" << coord(tick) << "</text>\n";

  int color = 0;
  double legend_y = kMarginTop + 8.0;
  for (const auto& [key, per_fraction] : series) {
    const char* stroke = kPalette[color % kPaletteSize];
    std::ostringstream points;
    for (const auto& [fraction, values] : per_fraction) {
      double mean = 0.0;
      for (double v : values) mean += v;
      mean /= static_cast<double>(values.size());
      points << coord(xpos(fraction)) << ',' << coord(ypos(mean)) << ' ';
      out << "<text x=\"" << coord(xpos(fraction)) << "\" y=\"" << coord(f.y0 + 16.0)
          << "\" text-anchor=\"middle\" font-size=\"11\">" << coord(fraction) << "</text>\n";
    }
    out << "<polyline fill=\"none\" stroke=\"" << stroke << "\" stroke-width=\"2\" points=\""
        << points.str() << "\"/>\n";
    out << "<text x=\"" << coord(f.x1 - 4.0) << "\" y=\"" << coord(legend_y)
        << "\" text-anchor=\"end\" font-size=\"12\" fill=\"" << stroke << "\">"
        << svg_escape(key.first + " / " + key.second) << "</text>\n";
    legend_y += 16.0;
    ++color;
  }
  out << "</svg>\n";
  return out.str();
}

std::string replay_chart_svg(const std::vector<ResultRow>& rows) {
  struct Cell {
    std::vector<double> regrets;
    std::vector<double> epochs;
  };
  std::map<std::pair<std::string, std::string>, Cell> cells;
  for (const ResultRow& r : rows) {
    if (r.protocol != "replay") continue;
    Cell& c = cells[{r.dataset, r.policy}];
    if (r.regret) c.regrets.push_back(*r.regret);
    if (r.epochs) c.epochs.push_back(static_cast<double>(*r.epochs));
  }
  if (cells.empty()) throw ValidationError("no replay rows to chart");

  double max_epochs = 0.0, max_regret = 0.0;
  for (const auto& [key, c] : cells) {
    for (double e : c.epochs) max_epochs = std::max(max_epochs, e);
    for (double g : c.regrets) max_regret = std::max(max_regret, g);
  }
  if (max_epochs == 0.0) max_epochs = 1.0;
  if (max_regret == 0.0) max_regret = 1.0;

  Frame f;
  std::ostringstream out;
  open_svg(out, "Replay cost and regret per policy");
  axes(out, f, "policy", "mean epochs (solid) / mean regret (hatched)");

  const double slot = (f.x1 - f.x0) / static_cast<double>(cells.size());
  int i = 0;
  for (const auto& [key, c] : cells) {
    const double cx = f.x0 + slot * (static_cast<double>(i) + 0.5);
    const double bar_w = std::min(40.0, slot / 3.0);
    double mean_epochs = 0.0;
    for (double e : c.epochs) mean_epochs += e;
    if (!c.epochs.empty()) mean_epochs /= static_cast<double>(c.epochs.size());
    double mean_regret = 0.0;
    for (double g : c.regrets) mean_regret += g;
    if (!c.regrets.empty()) mean_regret /= static_cast<double>(c.regrets.size());

    const double eh = (f.y0 - f.y1) * (mean_epochs / max_epochs);
    const double rh = (f.y0 - f.y1) * (mean_regret / max_regret);
    const char* stroke = kPalette[i % kPaletteSize];
    out << "<rect x=\"" << coord(cx - bar_w) << "\" y=\"" << coord(f.y0 - eh) << "\" width=\""
        << coord(bar_w) << "\" height=\"" << coord(eh) << "\" fill=\"" << stroke << "\"/>\n";
    out << "<rect x=\"" << coord(cx) << "\" y=\"" << coord(f.y0 - rh) << "\" width=\""
        << coord(bar_w) << "\" height=\"" << coord(rh) << "\" fill=\"" << stroke
        << "\" fill-opacity=\"0.4\"/>\n";
    out << "<text x=\"" << coord(cx) << "\" y=\"" << coord(f.y0 + 16.0)
        << "\" text-anchor=\"middle\" font-size=\"11\">" << svg_escape(key.first + "/" + key.second)
        << "</text>\n";
    out << "<text x=\"" << coord(cx - bar_w / 2.0) << "\" y=\"" << coord(f.y0 - eh - 4.0)
        << "\" text-anchor=\"middle\" font-size=\"10\">" << coord(mean_epochs) << "</text>\n";
    out << "<text x=\"" << coord(cx + bar_w / 2.0) << "\" y=\"" << coord(f.y0 - rh - 4.0)
        << "\" text-anchor=\"middle\" font-size=\"10\">" << coord(mean_regret) << "</text>\n";
    ++i;
  }
  out << "</svg>\n";
  return out.str();
}

}  // namespace lcrank
