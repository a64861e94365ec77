#include "onlinehoi/plot.hpp"

#include "onlinehoi/archive.hpp"
#include "onlinehoi/errors.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

namespace onlinehoi::plot {

namespace {

using nlohmann::json;

constexpr double kWidth = 640, kHeight = 400, kLeft = 70, kRight = 20, kTop = 40, kBottom = 50;
constexpr const char* kPalette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b"};

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

std::string px(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
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

std::string comment_safe(std::string s) {
  for (std::size_t i = s.find("--"); i != std::string::npos; i = s.find("--", i)) s.replace(i, 2, "- ");
  return s;
}

std::string header(double w, double h, const std::string& title, const std::string& provenance) {
  std::ostringstream os;
  os << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
     << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << px(w) << "\" height=\"" << px(h) << "\" viewBox=\"0 0 "
     << px(w) << " " << px(h) << "\" font-family=\"sans-serif\" font-size=\"11\">\n"
     << "<!-- " << comment_safe(escape(provenance)) << " -->\n"
     << "<metadata>" << escape(provenance) << "</metadata>\n"
     << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
     << "<text x=\"" << px(w / 2) << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" << escape(title) << "</text>\n";
  return os.str();
}

struct Range {
  double lo, hi;
  double map(double v, double a, double b) const { return hi > lo ? a + (v - lo) / (hi - lo) * (b - a) : (a + b) / 2; }
};

Range padded(double lo, double hi) {
  if (!(hi > lo)) {
    const double pad = std::max(1.0, std::abs(lo)) * 0.5;
    return {lo - pad, hi + pad};
  }
  const double pad = 0.05 * (hi - lo);
  return {lo - pad, hi + pad};
}

void y_axis(std::ostringstream& os, const Range& r, double x0, double y_top, double y_bottom, double x1, bool log10) {
  os << "<line x1=\"" << px(x0) << "\" y1=\"" << px(y_top) << "\" x2=\"" << px(x0) << "\" y2=\"" << px(y_bottom)
     << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double v = r.lo + (r.hi - r.lo) * i / 4.0;
    const double y = r.map(v, y_bottom, y_top);
    os << "<line x1=\"" << px(x0) << "\" y1=\"" << px(y) << "\" x2=\"" << px(x1) << "\" y2=\"" << px(y)
       << "\" stroke=\"#dddddd\"/>\n"
       << "<text x=\"" << px(x0 - 4) << "\" y=\"" << px(y + 4) << "\" text-anchor=\"end\">"
       << (log10 ? "1e" + num(v) : num(v)) << "</text>\n";
  }
}

std::string provenance_of(const json& report) {
  std::string s = "config_hash " + report.value("config_hash", std::string("?")) + " version " +
                  report.value("version", std::string("?"));
  if (report.contains("seed")) s += " seed " + report["seed"].dump();
  return s;
}

}  // namespace

std::string line_chart(const std::string& title, const std::vector<Series>& series, const std::string& provenance) {
  double lo = INFINITY, hi = -INFINITY;
  std::size_t n = 0;
  for (const auto& s : series) {
    n = std::max(n, s.y.size());
    for (double v : s.y)
      if (std::isfinite(v)) lo = std::min(lo, v), hi = std::max(hi, v);
  }
  if (!std::isfinite(lo)) throw InvalidParameter("line chart: no finite values");
  const bool log10 = lo > 0 && hi / lo > 50;
  auto tf = [&](double v) { return log10 ? std::log10(v) : v; };
  const Range yr = padded(tf(lo), tf(hi));
  const Range xr{0.0, static_cast<double>(std::max<std::size_t>(n, 2) - 1)};
  const double x0 = kLeft, x1 = kWidth - kRight, y0 = kHeight - kBottom, y1 = kTop;

  std::ostringstream os;
  os << header(kWidth, kHeight, title, provenance);
  y_axis(os, yr, x0, y1, y0, x1, log10);
  os << "<line x1=\"" << px(x0) << "\" y1=\"" << px(y0) << "\" x2=\"" << px(x1) << "\" y2=\"" << px(y0) << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double v = xr.lo + (xr.hi - xr.lo) * i / 4.0;
    os << "<text x=\"" << px(xr.map(v, x0, x1)) << "\" y=\"" << px(y0 + 16) << "\" text-anchor=\"middle\">"
       << num(std::round(v)) << "</text>\n";
  }
  os << "<text x=\"" << px((x0 + x1) / 2) << "\" y=\"" << px(kHeight - 10) << "\" text-anchor=\"middle\">step</text>\n";
  for (std::size_t s = 0; s < series.size(); ++s) {
    const char* color = kPalette[s % std::size(kPalette)];
    os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < series[s].y.size(); ++i) {
      if (!std::isfinite(series[s].y[i]) || (log10 && series[s].y[i] <= 0)) continue;
      os << px(xr.map(static_cast<double>(i), x0, x1)) << "," << px(yr.map(tf(series[s].y[i]), y0, y1)) << " ";
    }
    os << "\"/>\n"
       << "<text x=\"" << px(x1 - 4) << "\" y=\"" << px(y1 + 14 + 14 * s) << "\" text-anchor=\"end\" fill=\"" << color << "\">"
       << escape(series[s].name) << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

std::string bar_chart(const std::string& title, const std::vector<Panel>& panels, const std::string& provenance) {
  if (panels.empty()) throw InvalidParameter("bar chart: no panels");
  const double panel_h = 220;
  const double height = kTop + panel_h * static_cast<double>(panels.size()) + 10;
  std::ostringstream os;
  os << header(kWidth, height, title, provenance);
  for (std::size_t p = 0; p < panels.size(); ++p) {
    const auto& bars = panels[p].bars;
    const double top = kTop + panel_h * static_cast<double>(p) + 20, bottom = top + panel_h - 70;
    double lo = 0.0, hi = 0.0;
    for (const auto& b : bars) {
      lo = std::min({lo, b.value, b.has_range ? b.lo : b.value});
      hi = std::max({hi, b.value, b.has_range ? b.hi : b.value});
    }
    const Range r = padded(lo, hi);
    const double x0 = kLeft, x1 = kWidth - kRight;
    os << "<text x=\"" << px(x0) << "\" y=\"" << px(top - 6) << "\" font-size=\"12\">" << escape(panels[p].title) << "</text>\n";
    y_axis(os, r, x0, top, bottom, x1, false);
    const double zero = r.map(0.0, bottom, top);
    os << "<line x1=\"" << px(x0) << "\" y1=\"" << px(zero) << "\" x2=\"" << px(x1) << "\" y2=\"" << px(zero) << "\" stroke=\"black\"/>\n";
    const double slot = (x1 - x0) / static_cast<double>(std::max<std::size_t>(bars.size(), 1));
    for (std::size_t i = 0; i < bars.size(); ++i) {
      const auto& b = bars[i];
      const double cx = x0 + slot * (static_cast<double>(i) + 0.5), w = slot * 0.6;
      const double y = r.map(b.value, bottom, top);
      os << "<rect x=\"" << px(cx - w / 2) << "\" y=\"" << px(std::min(y, zero)) << "\" width=\"" << px(w) << "\" height=\""
         << px(std::abs(zero - y)) << "\" fill=\"" << kPalette[i % std::size(kPalette)] << "\"/>\n";
      if (b.has_range) {
        const double ylo = r.map(b.lo, bottom, top), yhi = r.map(b.hi, bottom, top);
        os << "<line x1=\"" << px(cx) << "\" y1=\"" << px(ylo) << "\" x2=\"" << px(cx) << "\" y2=\"" << px(yhi)
           << "\" stroke=\"black\"/>\n"
           << "<line x1=\"" << px(cx - 6) << "\" y1=\"" << px(ylo) << "\" x2=\"" << px(cx + 6) << "\" y2=\"" << px(ylo)
           << "\" stroke=\"black\"/>\n"
           << "<line x1=\"" << px(cx - 6) << "\" y1=\"" << px(yhi) << "\" x2=\"" << px(cx + 6) << "\" y2=\"" << px(yhi)
           << "\" stroke=\"black\"/>\n";
      }
      os << "<text x=\"" << px(cx) << "\" y=\"" << px(bottom + 16) << "\" text-anchor=\"middle\">" << escape(b.label)
         << "</text>\n"
         << "<text x=\"" << px(cx) << "\" y=\"" << px(bottom + 30) << "\" text-anchor=\"middle\" fill=\"#555555\">"
         << num(b.value) << "</text>\n";
    }
  }
  os << "</svg>\n";
  return os.str();
}

std::string trajectory_overlay(const std::string& title, const std::vector<std::array<double, 2>>& truth,
                               const std::vector<std::array<double, 2>>& generated, const std::vector<double>& error,
                               const std::string& provenance) {
  if (truth.empty() || truth.size() != generated.size() || error.size() != truth.size())
    throw InvalidParameter("trajectory overlay: series lengths differ or are empty");
  double xlo = INFINITY, xhi = -INFINITY, ylo = INFINITY, yhi = -INFINITY, emax = 0.0;
  for (std::size_t t = 0; t < truth.size(); ++t) {
    for (const auto* p : {&truth[t], &generated[t]}) {
      xlo = std::min(xlo, (*p)[0]), xhi = std::max(xhi, (*p)[0]);
      ylo = std::min(ylo, (*p)[1]), yhi = std::max(yhi, (*p)[1]);
    }
    emax = std::max(emax, error[t]);
  }
  const Range xr = padded(xlo, xhi), yr = padded(ylo, yhi);
  const double strip = 40;
  const double height = kHeight + strip;
  const double x0 = kLeft, x1 = kWidth - kRight, y0 = kHeight - kBottom, y1 = kTop;
  std::ostringstream os;
  os << header(kWidth, height, title, provenance);
  y_axis(os, yr, x0, y1, y0, x1, false);
  auto path = [&](const std::vector<std::array<double, 2>>& pts, const char* color, const char* dash) {
    os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\"" << dash << " points=\"";
    for (const auto& p : pts) os << px(xr.map(p[0], x0, x1)) << "," << px(yr.map(p[1], y0, y1)) << " ";
    os << "\"/>\n";
  };
  for (std::size_t t = 0; t < generated.size(); ++t) {
    const double e = emax > 0 ? error[t] / emax : 0.0;
    os << "<circle cx=\"" << px(xr.map(generated[t][0], x0, x1)) << "\" cy=\"" << px(yr.map(generated[t][1], y0, y1))
       << "\" r=\"" << px(2 + 10 * e) << "\" fill=\"#d62728\" fill-opacity=\"" << px(0.1 + 0.4 * e) << "\"/>\n";
  }
  path(truth, kPalette[0], "");
  path(generated, kPalette[1], " stroke-dasharray=\"4 2\"");
  os << "<text x=\"" << px(x1 - 4) << "\" y=\"" << px(y1 + 14) << "\" text-anchor=\"end\" fill=\"" << kPalette[0]
     << "\">ground truth</text>\n"
     << "<text x=\"" << px(x1 - 4) << "\" y=\"" << px(y1 + 28) << "\" text-anchor=\"end\" fill=\"" << kPalette[1]
     << "\">generated</text>\n"
     << "<text x=\"" << px(x1 - 4) << "\" y=\"" << px(y1 + 42) << "\" text-anchor=\"end\" fill=\"#d62728\">per-frame error (max "
     << num(emax) << ")</text>\n";
  const double sy = kHeight - 10, cell = (x1 - x0) / static_cast<double>(error.size());
  for (std::size_t t = 0; t < error.size(); ++t) {
    os << "<rect x=\"" << px(x0 + cell * static_cast<double>(t)) << "\" y=\"" << px(sy) << "\" width=\"" << px(cell)
       << "\" height=\"" << px(strip - 10) << "\" fill=\"#d62728\" fill-opacity=\"" << px(emax > 0 ? error[t] / emax : 0.0)
       << "\"/>\n";
  }
  os << "<text x=\"" << px(x0 - 4) << "\" y=\"" << px(sy + 18) << "\" text-anchor=\"end\">error/frame</text>\n";
  os << "</svg>\n";
  return os.str();
}

PlotResult plot_reports(const std::vector<std::filesystem::path>& reports, const std::filesystem::path& out_dir) {
  PlotResult res;
  auto emit = [&](const std::string& name, const std::string& svg) {
    const auto path = out_dir / (name + ".svg");
    archive::write_file_atomic(path, svg);
    res.written.push_back(path);
  };
  for (const auto& file : reports) {
    json r;
    try {
      r = json::parse(archive::read_file(file));
    } catch (const json::parse_error& e) {
      res.warnings.push_back("skipping " + file.string() + ": " + e.what());
      continue;
    }
    const std::string prov = provenance_of(r);
    const std::string kind = r.value("kind", std::string());
    if (kind == "ablation") {
      if (!r.contains("families") || r["families"].empty()) {
        res.warnings.push_back("skipping " + file.string() + ": no ablation families");
        continue;
      }
      for (const auto& fam : r["families"]) {
        std::vector<Panel> panels;
        for (const auto& col : fam["columns"]) {
          Panel panel{col.get<std::string>(), {}};
          for (const auto& row : fam["rows"]) {
            if (!row["metrics"].contains(panel.title)) continue;
            const auto& m = row["metrics"][panel.title];
            panel.bars.push_back({row["label"].get<std::string>(), m["mean"].get<double>(), true, m["min"].get<double>(),
                                  m["max"].get<double>()});
          }
          if (panel.bars.empty()) res.warnings.push_back("ablation " + fam["name"].get<std::string>() + ": no values for " + panel.title);
          else panels.push_back(panel);
        }
        if (panels.empty()) continue;
        emit("ablation_" + fam["name"].get<std::string>(), bar_chart("ablation: " + fam["name"].get<std::string>(), panels, prov));
      }
      continue;
    }
    if (kind != "report") {
      res.warnings.push_back("skipping " + file.string() + ": not a report");
      continue;
    }
    const std::string stem = r.value("name", std::string("run")) + "_seed" + (r.contains("seed") ? r["seed"].dump() : "0");
    if (r.contains("losses") && !r["losses"].empty()) {
      emit(stem + "_loss", line_chart(stem + " training loss", {{"loss", r["losses"].get<std::vector<double>>()}}, prov));
    } else {
      res.warnings.push_back(stem + ": missing loss series, skipped");
    }
    if (r.contains("metrics") && r.contains("columns")) {
      Panel panel{"metrics", {}};
      for (const auto& c : r["columns"])
        if (r["metrics"].contains(c.get<std::string>()))
          panel.bars.push_back({c.get<std::string>(), r["metrics"][c.get<std::string>()].get<double>()});
      emit(stem + "_metrics", bar_chart(stem + " metrics", {panel}, prov));
    } else {
      res.warnings.push_back(stem + ": missing metrics, skipped");
    }
    if (r.contains("trajectory")) {
      const auto& tr = r["trajectory"];
      std::vector<std::array<double, 2>> gt, gen;
      auto to2 = [](const json& row) {
        std::array<double, 2> p{0.0, 0.0};
        for (std::size_t d = 0; d < std::min<std::size_t>(2, row.size()); ++d) p[d] = row[d].get<double>();
        return p;
      };
      for (const auto& row : tr["ground_truth"]) gt.push_back(to2(row));
      for (const auto& row : tr["generated"]) gen.push_back(to2(row));
      emit(stem + "_trajectory",
           trajectory_overlay(stem + " reactor path (dims 0, 1)", gt, gen, tr["error"].get<std::vector<double>>(), prov));
    } else if (r.value("task", std::string()) == "generation") {
      res.warnings.push_back(stem + ": missing trajectory, skipped");
    }
  }
  return res;
}

}  // namespace onlinehoi::plot
