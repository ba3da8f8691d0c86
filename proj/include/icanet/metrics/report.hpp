#pragma once

#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>

#include "icanet/metrics/metrics.hpp"

namespace icanet::metrics {

namespace detail {

inline std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

inline void write_file(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot write " + path);
  f << text;
  if (!f) throw Error("write failed: " + path);
}

}  // namespace detail

/// One row per image plus a trailing "mean" summary row.
inline std::string per_image_csv(const MetricsReport& r) {
  std::ostringstream os;
  os << "id,mae,f_max,wf,s_measure,e_max,degenerate\n";
  for (const auto& m : r.rows) {
    os << detail::csv_field(m.id) << ',' << detail::num(m.mae) << ',' << detail::num(m.f_max) << ','
       << detail::num(m.wf) << ',' << detail::num(m.s) << ',' << detail::num(m.e_max) << ','
       << (m.wf_degenerate || m.s_degenerate || m.e_degenerate ? 1 : 0) << '\n';
  }
  os << "mean," << detail::num(r.mae) << ',' << detail::num(r.f_measure) << ',' << detail::num(r.wf) << ','
     << detail::num(r.s_measure) << ',' << detail::num(r.e_measure) << ',' << r.degenerate << '\n';
  return os.str();
}

/// 256 rows: threshold, mean precision, mean recall, mean F, mean E.
inline std::string curves_csv(const MetricsReport& r) {
  std::ostringstream os;
  os << "threshold,precision,recall,f_measure,e_measure\n";
  for (std::size_t t = 0; t < kThresholds; ++t) {
    os << t << ',' << detail::num(r.pr_curve[t].precision) << ',' << detail::num(r.pr_curve[t].recall) << ','
       << detail::num(r.f_curve[t]) << ',' << detail::num(r.e_curve[t]) << '\n';
  }
  return os.str();
}

inline std::string summary_table(const MetricsReport& r) {
  std::ostringstream os;
  char line[96];
  std::snprintf(line, sizeof line, "%-10s %8s\n", "metric", "value");
  os << line;
  const std::pair<const char*, double> rows[] = {
      {"MAE", r.mae}, {"maxF", r.f_measure}, {"wF", r.wf}, {"S", r.s_measure}, {"maxE", r.e_measure}};
  for (const auto& [name, v] : rows) {
    std::snprintf(line, sizeof line, "%-10s %8.4f\n", name, v);
    os << line;
  }
  if (r.miou) {
    std::snprintf(line, sizeof line, "%-10s %8.4f\n", "mIoU", r.miou->miou);
    os << line;
  }
  os << "images: " << r.images << ", fallbacks used: " << r.degenerate << '\n';
  return os.str();
}

inline void write_reports(const MetricsReport& r, const std::string& dir) {
  detail::write_file(dir + "/per_image.csv", per_image_csv(r));
  detail::write_file(dir + "/curves.csv", curves_csv(r));
  detail::write_file(dir + "/summary.txt", summary_table(r));
}

}  // namespace icanet::metrics
