#include "plot.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace dualobs::cli {

using nlohmann::json;

namespace {

constexpr double kW = 640, kH = 420, kLeft = 70, kRight = 170, kTop = 40, kBottom = 50;
const char* const kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                               "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};

std::string esc(const std::string& s) {
  std::string o;
  for (char c : s) {
    switch (c) {
      case '<': o += "&lt;"; break;
      case '>': o += "&gt;"; break;
      case '&': o += "&amp;"; break;
      case '"': o += "&quot;"; break;
      default: o += c;
    }
  }
  return o;
}

std::string num(double v) {
  std::ostringstream os;
  os << std::setprecision(4) << v;
  return os.str();
}

struct Axis {
  double lo = 0, hi = 1;
  bool log = false;
  double map(double v, double a, double b) const {
    const double u = log ? (std::log10(v) - lo) / (hi - lo) : (v - lo) / (hi - lo);
    return a + u * (b - a);
  }
};

Axis make_axis(const std::vector<Series>& s, bool use_x, bool log) {
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (const auto& ser : s)
    for (double v : use_x ? ser.x : ser.y) {
      if (!std::isfinite(v) || (log && v <= 0)) continue;
      const double w = log ? std::log10(v) : v;
      lo = std::min(lo, w);
      hi = std::max(hi, w);
    }
  if (!std::isfinite(lo)) lo = 0, hi = 1;
  if (hi - lo < 1e-12) {
    lo -= 0.5;
    hi += 0.5;
  }
  if (!log && !use_x && lo > 0 && lo < 0.5 * hi) lo = 0;
  return {lo, hi, log};
}

double cell(const json& regions, const char* key) {
  if (!regions.contains(key) || regions.at(key).is_null()) return std::nan("");
  return regions.at(key).get<double>();
}

const char* const kRegionCols[] = {"in_x_in_t", "in_x_ext_t", "ext_x_in_t", "ext_x_ext_t",
                                   "in_x", "ext_x", "all"};

}  // namespace

std::string line_chart_svg(const std::vector<Series>& series, const ChartOptions& opt) {
  const Axis ax = make_axis(series, true, opt.log_x), ay = make_axis(series, false, opt.log_y);
  const double x0 = kLeft, x1 = kW - kRight, y0 = kH - kBottom, y1 = kTop;
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH
     << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << kW / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" << esc(opt.title)
     << "</text>\n";
  os << "<line x1=\"" << x0 << "\" y1=\"" << y0 << "\" x2=\"" << x1 << "\" y2=\"" << y0
     << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << x0 << "\" y1=\"" << y0 << "\" x2=\"" << x0 << "\" y2=\"" << y1
     << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double fx = ax.lo + (ax.hi - ax.lo) * i / 4, fy = ay.lo + (ay.hi - ay.lo) * i / 4;
    const double px = x0 + (x1 - x0) * i / 4, py = y0 + (y1 - y0) * i / 4;
    os << "<text x=\"" << px << "\" y=\"" << y0 + 16 << "\" text-anchor=\"middle\">"
       << num(ax.log ? std::pow(10.0, fx) : fx) << "</text>\n";
    os << "<text x=\"" << x0 - 6 << "\" y=\"" << py + 4 << "\" text-anchor=\"end\">"
       << num(ay.log ? std::pow(10.0, fy) : fy) << "</text>\n";
    os << "<line x1=\"" << x0 << "\" y1=\"" << py << "\" x2=\"" << x1 << "\" y2=\"" << py
       << "\" stroke=\"#ddd\"/>\n";
  }
  os << "<text x=\"" << (x0 + x1) / 2 << "\" y=\"" << kH - 12 << "\" text-anchor=\"middle\">"
     << esc(opt.x_label) << "</text>\n";
  os << "<text transform=\"translate(16," << (y0 + y1) / 2 << ") rotate(-90)\" text-anchor=\"middle\">"
     << esc(opt.y_label) << "</text>\n";
  for (std::size_t s = 0; s < series.size(); ++s) {
    const char* color = kColors[s % std::size(kColors)];
    os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < series[s].x.size(); ++i) {
      const double x = series[s].x[i], y = series[s].y[i];
      if (!std::isfinite(x) || !std::isfinite(y) || (ax.log && x <= 0) || (ay.log && y <= 0)) continue;
      os << ax.map(x, x0, x1) << ',' << ay.map(y, y0, y1) << ' ';
    }
    os << "\"/>\n";
    const double ly = kTop + 18.0 * s + 10;
    os << "<line x1=\"" << x1 + 12 << "\" y1=\"" << ly << "\" x2=\"" << x1 + 32 << "\" y2=\"" << ly
       << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    os << "<text x=\"" << x1 + 36 << "\" y=\"" << ly + 4 << "\">" << esc(series[s].label) << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

std::string series_csv(const std::vector<Series>& series) {
  std::ostringstream os;
  os << std::setprecision(9) << "series,x,y\n";
  for (const auto& s : series)
    for (std::size_t i = 0; i < s.x.size(); ++i) os << s.label << ',' << s.x[i] << ',' << s.y[i] << '\n';
  return os.str();
}

std::string region_table_csv(const std::vector<json>& reports) {
  std::ostringstream os;
  os << std::setprecision(9) << "method,split,horizon_frames";
  for (const char* c : kRegionCols) os << ',' << c;
  os << '\n';
  for (const auto& r : reports) {
    os << r.at("method").get<std::string>() << ',' << r.at("split").get<std::string>() << ','
       << r.at("horizon_frames").get<int>();
    for (const char* c : kRegionCols) {
      const double v = cell(r.at("regions"), c);
      os << ',';
      if (std::isfinite(v)) os << v;
    }
    os << '\n';
  }
  return os.str();
}

std::string region_table_svg(const std::vector<json>& reports) {
  const double cw = 92, rh = 26, lw = 150;
  const double w = lw + cw * std::size(kRegionCols) + 20, h = rh * (reports.size() + 2) + 30;
  double vmax = 0;
  for (const auto& r : reports)
    for (const char* c : kRegionCols) {
      const double v = cell(r.at("regions"), c);
      if (std::isfinite(v)) vmax = std::max(vmax, v);
    }
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
     << "\" font-family=\"sans-serif\" font-size=\"12\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"10\" y=\"20\" font-size=\"14\">MSE x 1e-3 by region</text>\n";
  for (std::size_t c = 0; c < std::size(kRegionCols); ++c)
    os << "<text x=\"" << lw + cw * (c + 0.5) << "\" y=\"" << 30 + rh * 0.7
       << "\" text-anchor=\"middle\">" << kRegionCols[c] << "</text>\n";
  for (std::size_t r = 0; r < reports.size(); ++r) {
    const double y = 30 + rh * (r + 1);
    os << "<text x=\"10\" y=\"" << y + rh * 0.65 << "\">" << esc(reports[r].at("method").get<std::string>())
       << "</text>\n";
    for (std::size_t c = 0; c < std::size(kRegionCols); ++c) {
      const double v = cell(reports[r].at("regions"), kRegionCols[c]);
      // Shade by log-relative magnitude; empty regions stay grey.
      std::string fill = "#eeeeee";
      if (std::isfinite(v) && vmax > 0) {
        const double u = v <= 0 ? 0.0 : std::clamp(1.0 + std::log10(v / vmax) / 4.0, 0.0, 1.0);
        const int g = static_cast<int>(std::lround(255 - 150 * u));
        std::ostringstream f;
        f << "rgb(255," << g << ',' << g << ')';
        fill = f.str();
      }
      os << "<rect x=\"" << lw + cw * c << "\" y=\"" << y << "\" width=\"" << cw << "\" height=\"" << rh
         << "\" fill=\"" << fill << "\" stroke=\"white\"/>\n";
      os << "<text x=\"" << lw + cw * (c + 0.5) << "\" y=\"" << y + rh * 0.65 << "\" text-anchor=\"middle\">"
         << (std::isfinite(v) ? num(v) : "-") << "</text>\n";
    }
  }
  os << "</svg>\n";
  return os.str();
}

std::vector<Series> per_frame_series(const std::vector<json>& reports) {
  std::vector<Series> out;
  for (const auto& r : reports) {
    Series s{r.at("method").get<std::string>(), {}, {}};
    const auto& pf = r.at("per_frame");
    for (std::size_t f = 0; f < pf.size(); ++f) {
      s.x.push_back(static_cast<double>(f));
      s.y.push_back(pf[f].is_null() ? std::nan("") : pf[f].get<double>());
    }
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<Series> runtime_series(const json& profile) {
  Series s{"seconds (min over repetitions)", {}, {}};
  for (const auto& e : profile.at("by_queries")) {
    s.x.push_back(e.at("queries").get<double>());
    s.y.push_back(e.at("seconds").at("min").get<double>());
  }
  return {s};
}

std::vector<Series> rollout_series(const json& profile) {
  Series steps{"rollout steps", {}, {}}, secs{"seconds x 1e3", {}, {}};
  for (const auto& e : profile.at("by_time_points")) {
    steps.x.push_back(e.at("time_points").get<double>());
    steps.y.push_back(e.at("rollout_steps").get<double>());
    secs.x.push_back(e.at("time_points").get<double>());
    secs.y.push_back(1e3 * e.at("seconds").at("min").get<double>());
  }
  return {steps, secs};
}

std::vector<Series> metrics_series(const std::string& csv) {
  std::istringstream in(csv);
  std::string line;
  if (!std::getline(in, line)) throw std::invalid_argument("metrics table is empty");
  std::vector<std::string> header;
  {
    std::istringstream h(line);
    std::string f;
    while (std::getline(h, f, ',')) header.push_back(f);
  }
  auto col = [&](const std::string& name) {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw std::invalid_argument("metrics table lacks column '" + name + "'");
    return static_cast<std::size_t>(it - header.begin());
  };
  const std::size_t ce = col("epoch"), cc = col("l_continuous"), cd = col("l_dynamics"), cv = col("val_ext_x");
  Series lc{"l_continuous", {}, {}}, ld{"l_dynamics", {}, {}}, val{"val_ext_x", {}, {}};
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<double> v;
    std::istringstream r(line);
    std::string f;
    while (std::getline(r, f, ',')) v.push_back(std::stod(f));
    if (v.size() != header.size()) throw std::invalid_argument("ragged metrics row");
    lc.x.push_back(v[ce]);
    lc.y.push_back(v[cc]);
    ld.x.push_back(v[ce]);
    ld.y.push_back(v[cd]);
    if (v[cv] >= 0) {
      val.x.push_back(v[ce]);
      val.y.push_back(v[cv]);
    }
  }
  return {lc, ld, val};
}

}  // namespace dualobs::cli
