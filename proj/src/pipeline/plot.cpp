#include "bce/pipeline/plot.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace bce::pipeline {

ParsedLog parse_loss_log(const std::string& text) {
  ParsedLog out;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      LogEntry e;
      e.step = j.at("step").get<long long>();
      e.loss.l_n = j.at("l_n").get<double>();
      e.loss.l_r = j.at("l_r").get<double>();
      e.loss.l_e = j.at("l_e").get<double>();
      e.loss.l_c = j.at("l_c").get<double>();
      e.loss.total = j.at("total").get<double>();
      if (j.contains("eval_f1")) e.eval_f1 = j.at("eval_f1").get<double>();
      out.entries.push_back(e);
    } catch (const nlohmann::json::exception&) {
      ++out.skipped;
    }
  }
  return out;
}

ParsedLog read_loss_log(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open loss log '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_loss_log(ss.str());
}

namespace {

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

struct Series {
  std::string name;
  std::string color;
  std::vector<std::pair<double, double>> points;
};

void write_svg(const std::filesystem::path& path, const std::string& title,
               const std::vector<Series>& series) {
  constexpr double kW = 640, kH = 400, kPad = 48;
  double x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  bool any = false;
  for (const auto& s : series) {
    for (const auto& [x, y] : s.points) {
      if (!std::isfinite(y)) continue;
      if (!any) {
        x0 = x1 = x;
        y0 = y1 = y;
        any = true;
      }
      x0 = std::min(x0, x);
      x1 = std::max(x1, x);
      y0 = std::min(y0, y);
      y1 = std::max(y1, y);
    }
  }
  if (x1 == x0) x1 = x0 + 1;
  if (y1 == y0) y1 = y0 + 1;
  auto px = [&](double x) { return kPad + (x - x0) / (x1 - x0) * (kW - 2 * kPad); };
  auto py = [&](double y) { return kH - kPad - (y - y0) / (y1 - y0) * (kH - 2 * kPad); };

  std::ofstream os(path);
  if (!os) throw DataError("cannot write '" + path.string() + "'");
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH << "\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << kW / 2 << "\" y=\"20\" text-anchor=\"middle\" font-family=\"sans-serif\">"
     << title << "</text>\n";
  os << "<line x1=\"" << kPad << "\" y1=\"" << kH - kPad << "\" x2=\"" << kW - kPad << "\" y2=\""
     << kH - kPad << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << kPad << "\" y1=\"" << kPad << "\" x2=\"" << kPad << "\" y2=\"" << kH - kPad
     << "\" stroke=\"black\"/>\n";
  os << "<text x=\"" << kPad << "\" y=\"" << kH - kPad + 16 << "\" font-size=\"10\">" << num(x0)
     << "</text><text x=\"" << kW - kPad << "\" y=\"" << kH - kPad + 16
     << "\" font-size=\"10\" text-anchor=\"end\">" << num(x1) << "</text>\n";
  os << "<text x=\"" << kPad - 4 << "\" y=\"" << kH - kPad << "\" font-size=\"10\" text-anchor=\"end\">"
     << num(y0) << "</text><text x=\"" << kPad - 4 << "\" y=\"" << kPad
     << "\" font-size=\"10\" text-anchor=\"end\">" << num(y1) << "</text>\n";
  int legend = 0;
  for (const auto& s : series) {
    os << "<polyline fill=\"none\" stroke=\"" << s.color << "\" points=\"";
    for (const auto& [x, y] : s.points) {
      if (std::isfinite(y)) os << px(x) << "," << py(y) << " ";
    }
    os << "\"/>\n";
    os << "<text x=\"" << kW - kPad << "\" y=\"" << kPad + 14 * legend++ << "\" font-size=\"11\" "
       << "text-anchor=\"end\" fill=\"" << s.color << "\">" << s.name << "</text>\n";
  }
  os << "</svg>\n";
}

}  // namespace

PlotOutputs plot_metrics(const ParsedLog& log, const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  PlotOutputs out{out_dir / "loss_table.csv", out_dir / "loss_curves.svg", out_dir / "eval_f1.svg",
                  out_dir / "final_metrics.csv"};

  {
    std::ofstream csv(out.csv);
    if (!csv) throw DataError("cannot write '" + out.csv.string() + "'");
    csv << "step,l_n,l_r,l_e,l_c,total,eval_f1\n";
    for (const auto& e : log.entries) {
      csv << e.step << "," << num(e.loss.l_n) << "," << num(e.loss.l_r) << "," << num(e.loss.l_e)
          << "," << num(e.loss.l_c) << "," << num(e.loss.total) << ","
          << (e.eval_f1 ? num(*e.eval_f1) : "") << "\n";
    }
  }

  std::vector<Series> losses{{"l_n", "#1f77b4", {}}, {"l_r", "#d62728", {}}, {"l_e", "#2ca02c", {}},
                             {"l_c", "#9467bd", {}}, {"total", "#000000", {}}};
  Series f1{"eval_f1", "#ff7f0e", {}};
  for (const auto& e : log.entries) {
    const auto x = static_cast<double>(e.step);
    losses[0].points.emplace_back(x, e.loss.l_n);
    losses[1].points.emplace_back(x, e.loss.l_r);
    losses[2].points.emplace_back(x, e.loss.l_e);
    losses[3].points.emplace_back(x, e.loss.l_c);
    losses[4].points.emplace_back(x, e.loss.total);
    if (e.eval_f1) f1.points.emplace_back(x, *e.eval_f1);
  }
  write_svg(out.loss_svg, "training loss", losses);
  write_svg(out.eval_svg, "eval change F1", {f1});

  std::ofstream fin(out.final_csv);
  if (!fin) throw DataError("cannot write '" + out.final_csv.string() + "'");
  fin << "metric,value\n";
  if (!log.entries.empty()) {
    const auto& last = log.entries.back();
    fin << "step," << last.step << "\n"
        << "l_n," << num(last.loss.l_n) << "\nl_r," << num(last.loss.l_r) << "\nl_e,"
        << num(last.loss.l_e) << "\nl_c," << num(last.loss.l_c) << "\ntotal,"
        << num(last.loss.total) << "\n";
    const auto it = std::find_if(log.entries.rbegin(), log.entries.rend(),
                                 [](const LogEntry& e) { return e.eval_f1.has_value(); });
    if (it != log.entries.rend()) fin << "eval_f1," << num(*it->eval_f1) << "\n";
  }
  return out;
}

}  // namespace bce::pipeline
