#include "fssl/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

#include "fssl/error.hpp"

namespace fssl {

namespace fs = std::filesystem;

namespace {

bool is_run(const fs::path& p) { return fs::exists(p / "metrics.csv") && fs::exists(p / "summary.json"); }

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string xml_escape(const std::string& s) {
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

ReportRow row_for(const RunRecord& r) {
  ReportRow row;
  row.run = r.dir.filename().string();
  if (row.run.empty()) row.run = r.dir.parent_path().filename().string();
  const auto& cfg = r.summary.at("config");
  row.mu = cfg.at("attack").at("mu").get<double>();
  row.seed = cfg.at("seed").get<std::uint64_t>();
  row.alpha = cfg.at("federation").at("alpha").get<double>();
  row.defense = cfg.at("defense").at("name").get<std::string>();
  row.attack = cfg.at("attack").at("enabled").get<bool>();
  row.acc = r.acc.back();
  row.asr = r.asr.back();
  if (r.summary.contains("persistence") && !r.summary["persistence"].empty()) {
    const auto& last = r.summary["persistence"].back();
    if (!last["retention"].is_null()) row.retention = last["retention"].get<double>();
  }
  return row;
}

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                          "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

}  // namespace

Report build_report(const std::vector<fs::path>& paths) {
  std::vector<fs::path> dirs;
  for (const auto& p : paths) {
    if (is_run(p)) {
      dirs.push_back(p);
      continue;
    }
    if (fs::is_directory(p)) {
      std::vector<fs::path> children;
      for (const auto& e : fs::directory_iterator(p)) {
        if (e.is_directory() && is_run(e.path())) children.push_back(e.path());
      }
      std::sort(children.begin(), children.end());
      dirs.insert(dirs.end(), children.begin(), children.end());
    }
  }
  if (dirs.empty()) throw Error(ErrorKind::MissingMetrics, "no completed runs found");

  std::vector<std::pair<ReportRow, RunRecord>> items;
  for (const auto& d : dirs) {
    RunRecord rec = load_run(d);
    ReportRow row;
    try {
      row = row_for(rec);
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorKind::MissingMetrics, d.string() + "/summary.json: " + e.what());
    }
    items.emplace_back(std::move(row), std::move(rec));
  }
  std::stable_sort(items.begin(), items.end(), [](const auto& a, const auto& b) {
    if (a.first.mu != b.first.mu) return a.first.mu < b.first.mu;
    return a.first.run < b.first.run;
  });
  Report rep;
  for (auto& [row, rec] : items) {
    rep.rows.push_back(std::move(row));
    rep.runs.push_back(std::move(rec));
  }
  return rep;
}

std::string Report::table_csv() const {
  std::string out = "run,mu,seed,alpha,defense,attack,acc,asr,retention\n";
  for (const auto& r : rows) {
    out += r.run + ',' + fmt("%g", r.mu) + ',' + std::to_string(r.seed) + ',' + fmt("%g", r.alpha) + ',' + r.defense +
           ',' + (r.attack ? "1" : "0") + ',' + fmt("%.4f", r.acc) + ',' + fmt("%.4f", r.asr) + ',' +
           (r.retention ? fmt("%.2f", *r.retention) : "") + '\n';
  }
  return out;
}

std::string Report::table_text() const {
  std::size_t w = 3;
  for (const auto& r : rows) w = std::max(w, r.run.size());
  std::string out;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-*s %6s %6s %6s %-10s %8s %8s %10s\n", static_cast<int>(w), "run", "mu", "seed",
                "alpha", "defense", "ACC(%)", "ASR(%)", "retain(%)");
  out += buf;
  for (const auto& r : rows) {
    const std::string ret = r.retention ? fmt("%.2f", *r.retention) : "-";
    std::snprintf(buf, sizeof buf, "%-*s %6.2f %6llu %6g %-10s %8.2f %8.2f %10s\n", static_cast<int>(w),
                  r.run.c_str(), r.mu, static_cast<unsigned long long>(r.seed), r.alpha, r.defense.c_str(),
                  100.0 * r.acc, 100.0 * r.asr, ret.c_str());
    out += buf;
  }
  return out;
}

std::string svg_line_plot(const std::string& title, const std::string& x_label, const std::string& y_label,
                          const std::vector<Series>& series) {
  const double width = 640, height = 400, left = 60, right = 160, top = 40, bottom = 50;
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  for (const auto& s : series) {
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.y[i])) continue;
      x0 = std::min(x0, s.x[i]);
      x1 = std::max(x1, s.x[i]);
      y0 = std::min(y0, s.y[i]);
      y1 = std::max(y1, s.y[i]);
    }
  }
  if (!std::isfinite(x0)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (x1 == x0) x1 = x0 + 1;
  if (y1 == y0) y1 = y0 + 1;
  const double pw = width - left - right, ph = height - top - bottom;
  auto sx = [&](double x) { return left + (x - x0) / (x1 - x0) * pw; };
  auto sy = [&](double y) { return top + (1.0 - (y - y0) / (y1 - y0)) * ph; };

  std::string out = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"400\" font-family=\"sans-serif\" "
                    "font-size=\"12\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out += "<text x=\"" + fmt("%.1f", left + pw / 2) + "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" +
         xml_escape(title) + "</text>\n";
  out += "<rect x=\"" + fmt("%.1f", left) + "\" y=\"" + fmt("%.1f", top) + "\" width=\"" + fmt("%.1f", pw) +
         "\" height=\"" + fmt("%.1f", ph) + "\" fill=\"none\" stroke=\"black\"/>\n";
  for (int t = 0; t <= 4; ++t) {
    const double xv = x0 + (x1 - x0) * t / 4.0, yv = y0 + (y1 - y0) * t / 4.0;
    out += "<text x=\"" + fmt("%.1f", sx(xv)) + "\" y=\"" + fmt("%.1f", top + ph + 16) +
           "\" text-anchor=\"middle\">" + fmt("%g", std::round(xv * 100) / 100) + "</text>\n";
    out += "<text x=\"" + fmt("%.1f", left - 6) + "\" y=\"" + fmt("%.1f", sy(yv) + 4) + "\" text-anchor=\"end\">" +
           fmt("%.2f", yv) + "</text>\n";
  }
  out += "<text x=\"" + fmt("%.1f", left + pw / 2) + "\" y=\"" + fmt("%.1f", height - 12) +
         "\" text-anchor=\"middle\">" + xml_escape(x_label) + "</text>\n";
  out += "<text x=\"16\" y=\"" + fmt("%.1f", top + ph / 2) + "\" text-anchor=\"middle\" transform=\"rotate(-90 16 " +
         fmt("%.1f", top + ph / 2) + ")\">" + xml_escape(y_label) + "</text>\n";
  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    const char* color = kPalette[k % std::size(kPalette)];
    std::string pts;
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.y[i])) continue;
      pts += fmt("%.1f", sx(s.x[i])) + ',' + fmt("%.1f", sy(s.y[i])) + ' ';
    }
    out += "<polyline fill=\"none\" stroke-width=\"1.5\" stroke=\"" + std::string(color) + "\" points=\"" + pts +
           "\"/>\n";
    const double ly = top + 14 + 16.0 * static_cast<double>(k);
    out += "<line x1=\"" + fmt("%.1f", width - right + 10) + "\" y1=\"" + fmt("%.1f", ly - 4) + "\" x2=\"" +
           fmt("%.1f", width - right + 30) + "\" y2=\"" + fmt("%.1f", ly - 4) + "\" stroke=\"" + color +
           "\" stroke-width=\"2\"/>\n";
    out += "<text x=\"" + fmt("%.1f", width - right + 34) + "\" y=\"" + fmt("%.1f", ly) + "\">" +
           xml_escape(s.label) + "</text>\n";
  }
  out += "</svg>\n";
  return out;
}

void write_report(const Report& report, const fs::path& out_dir) {
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw Error(ErrorKind::IoError, "cannot create " + out_dir.string() + ": " + ec.message());
  auto write_text = [](const fs::path& p, const std::string& text) {
    std::ofstream f(p, std::ios::binary);
    if (!f || !(f << text)) throw Error(ErrorKind::IoError, "cannot write " + p.string());
  };
  write_text(out_dir / "table.txt", report.table_text());
  write_text(out_dir / "table.csv", report.table_csv());

  std::vector<Series> acc, asr, persistence;
  for (std::size_t i = 0; i < report.runs.size(); ++i) {
    const RunRecord& r = report.runs[i];
    const std::string label = report.rows[i].run;
    std::vector<double> x(r.rounds.begin(), r.rounds.end());
    acc.push_back({label, x, r.acc});
    asr.push_back({label, x, r.asr});
    if (r.summary.contains("persistence") && !r.summary["persistence"].empty()) {
      Series s{label, {}, {}};
      for (const auto& p : r.summary["persistence"]) {
        s.x.push_back(p["round"].get<double>());
        s.y.push_back(p["retention"].is_null() ? std::nan("") : p["retention"].get<double>());
      }
      persistence.push_back(std::move(s));
    }
  }
  write_text(out_dir / "acc.svg", svg_line_plot("Clean accuracy", "round", "ACC", acc));
  write_text(out_dir / "asr.svg", svg_line_plot("Attack success rate", "round", "ASR", asr));
  if (!persistence.empty()) {
    write_text(out_dir / "persistence.svg",
               svg_line_plot("Backdoor retention after the attacker stops", "round", "retention (%)", persistence));
  }
}

}  // namespace fssl
