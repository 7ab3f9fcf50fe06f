#pragma once

#include <algorithm>
#include <cstdio>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "tiersql/metrics.hpp"

namespace tiersql {

struct ParetoPoint {
  std::string name;
  double ex = 0.0;
  double avg_tokens = 0.0;

  bool operator==(const ParetoPoint&) const = default;
};

inline bool dominates(const ParetoPoint& a, const ParetoPoint& b) {
  return a.ex >= b.ex && a.avg_tokens <= b.avg_tokens && (a.ex > b.ex || a.avg_tokens < b.avg_tokens);
}

/// Points no other point dominates, cheapest first.
inline std::vector<ParetoPoint> pareto_frontier(const std::vector<ParetoPoint>& points) {
  std::vector<ParetoPoint> out;
  for (const auto& p : points) {
    bool dominated = false;
    for (const auto& o : points) dominated = dominated || dominates(o, p);
    if (!dominated) out.push_back(p);
  }
  std::stable_sort(out.begin(), out.end(), [](const ParetoPoint& a, const ParetoPoint& b) {
    if (a.avg_tokens != b.avg_tokens) return a.avg_tokens < b.avg_tokens;
    return a.ex > b.ex;
  });
  return out;
}

// ---------------------------------------------------------------------------

struct MethodRow {
  std::string name;
  std::size_t queries = 0;
  std::size_t scored = 0;
  std::size_t correct = 0;
  std::size_t errors = 0;
  double ex = 0.0;
  std::map<Difficulty, metrics::Tally> by_difficulty;
  double avg_tokens = 0.0;
  std::optional<double> pgr;
  std::optional<double> tep;
  std::optional<double> utr;
  std::optional<double> agreement;
  std::optional<double> kendall_tau;
  std::optional<metrics::DisagreementMatrix> disagreement;
  std::array<std::size_t, kTierCount> routed{};
  std::int64_t wall_clock_ms = 0;
};

struct MetricReport {
  double mu = 4.0;
  std::vector<std::string> phases;
  std::string basic_baseline;
  std::string advanced_baseline;
  std::vector<MethodRow> rows;
  std::vector<std::string> notices;
  std::vector<ParetoPoint> frontier;
};

struct ReportInputs {
  // method name -> its traces; iteration order decides row order
  std::vector<std::pair<std::string, std::vector<RunTrace>>> methods;
  std::map<std::string, Difficulty> difficulty_of;
  double mu = 4.0;
  metrics::PhaseSet phases = metrics::default_phases();
  std::string basic_baseline = "Basic";
  std::string advanced_baseline = "Advanced";
};

inline MethodRow summarize(const std::string& name, const std::vector<RunTrace>& traces,
                           const ReportInputs& in) {
  MethodRow row;
  row.name = name;
  row.queries = traces.size();
  const auto verdicts = metrics::verdicts(traces);
  row.scored = verdicts.size();
  row.correct = static_cast<std::size_t>(std::count(verdicts.begin(), verdicts.end(), true));
  if (!verdicts.empty()) row.ex = metrics::ex(verdicts);
  row.by_difficulty = metrics::ex_by_difficulty(traces, in.difficulty_of);
  if (!traces.empty()) row.avg_tokens = metrics::avg_tokens(traces, in.mu, in.phases);
  row.wall_clock_ms = metrics::total_wall_clock_ms(traces);
  std::vector<Tier> oracle, routed;
  for (const auto& t : traces) {
    ++row.routed[tier_index(t.chosen_tier)];
    if (t.error) ++row.errors;
    if (t.oracle_label) {
      oracle.push_back(*t.oracle_label);
      routed.push_back(t.chosen_tier);
    }
  }
  if (!oracle.empty()) {
    row.disagreement = metrics::disagreement(oracle, routed);
    row.utr = metrics::utr(*row.disagreement);
    row.agreement = metrics::agreement(*row.disagreement);
    if (oracle.size() >= 2) {
      std::vector<double> x, y;
      for (std::size_t i = 0; i < oracle.size(); ++i) {
        x.push_back(static_cast<double>(tier_index(oracle[i])));
        y.push_back(static_cast<double>(tier_index(routed[i])));
      }
      const double tau = metrics::kendall_tau(x, y);
      if (!std::isnan(tau)) row.kendall_tau = tau;
    }
  }
  return row;
}

inline MetricReport build_report(const ReportInputs& in) {
  if (in.methods.empty()) throw Error(ErrorCode::kUndefinedMetric, "report over no methods");
  MetricReport rep;
  rep.mu = in.mu;
  for (Phase p : in.phases) rep.phases.emplace_back(phase_name(p));
  for (const auto& [name, traces] : in.methods) {
    if (traces.empty()) throw Error(ErrorCode::kUndefinedMetric, "method " + name + " has no traces");
    rep.rows.push_back(summarize(name, traces, in));
  }

  const MethodRow* basic = nullptr;
  const MethodRow* advanced = nullptr;
  for (const auto& r : rep.rows) {
    if (r.name == in.basic_baseline) basic = &r;
    if (r.name == in.advanced_baseline) advanced = &r;
  }
  if (basic == nullptr || advanced == nullptr) {
    rep.notices.push_back("PGR and TEP omitted: baseline runs '" + in.basic_baseline + "' and '" +
                          in.advanced_baseline + "' are both required");
  } else {
    rep.basic_baseline = basic->name;
    rep.advanced_baseline = advanced->name;
    const double ex_b = basic->ex, ex_a = advanced->ex, t_b = basic->avg_tokens;
    bool gap_noted = false, baseline_noted = false;
    for (auto& r : rep.rows) {
      try {
        r.pgr = metrics::pgr(r.ex, ex_b, ex_a);
      } catch (const Error& e) {
        if (!gap_noted) rep.notices.push_back(std::string("PGR omitted: ") + e.what());
        gap_noted = true;
      }
      try {
        r.tep = metrics::tep(r.ex, ex_b, r.avg_tokens, t_b);
      } catch (const Error& e) {
        if (e.code() == ErrorCode::kUndefinedBaseline && !baseline_noted) {
          rep.notices.push_back(std::string("TEP omitted: ") + e.what());
          baseline_noted = true;
        }
      }
    }
  }

  std::vector<ParetoPoint> points;
  for (const auto& r : rep.rows) points.push_back({r.name, r.ex, r.avg_tokens});
  rep.frontier = pareto_frontier(points);
  return rep;
}

// ---------------------------------------------------------------------------
// Rendering. Fractions internally, percentages here.

namespace detail {

inline std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

inline std::string opt_fmt(const char* f, const std::optional<double>& v, double scale = 1.0) {
  return v ? fmt(f, *v * scale) : "-";
}

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + '"';
}

}  // namespace detail

inline std::string report_text(const MetricReport& rep) {
  using detail::fmt;
  using detail::opt_fmt;
  std::ostringstream os;
  std::string phases;
  for (const auto& p : rep.phases) phases += (phases.empty() ? "" : "+") + p;
  os << "mu = " << fmt("%g", rep.mu) << ", token phases = " << phases << "\n\n";
  char line[512];
  std::snprintf(line, sizeof line, "%-14s %5s %8s %12s %8s %10s %7s %7s %8s %10s\n", "method", "N", "EX(%)",
                "avg tokens", "PGR", "TEP(e-2)", "UTR", "agree", "tau", "time(s)");
  os << line;
  for (const auto& r : rep.rows) {
    std::snprintf(line, sizeof line, "%-14s %5zu %8s %12s %8s %10s %7s %7s %8s %10s\n", r.name.c_str(), r.queries,
                  fmt("%.2f", r.ex * 100).c_str(), fmt("%.2f", r.avg_tokens).c_str(),
                  opt_fmt("%.3f", r.pgr).c_str(), opt_fmt("%.3f", r.tep, 100).c_str(),
                  opt_fmt("%.3f", r.utr).c_str(), opt_fmt("%.3f", r.agreement).c_str(),
                  opt_fmt("%.3f", r.kendall_tau).c_str(),
                  fmt("%.2f", static_cast<double>(r.wall_clock_ms) / 1000.0).c_str());
    os << line;
  }

  bool any_difficulty = false;
  for (const auto& r : rep.rows) any_difficulty = any_difficulty || !r.by_difficulty.empty();
  if (any_difficulty) {
    os << "\nEX by difficulty (%)\n";
    std::snprintf(line, sizeof line, "%-14s %12s %12s %12s\n", "method", "simple", "moderate", "challenging");
    os << line;
    for (const auto& r : rep.rows) {
      std::string cells[3];
      for (Difficulty d : kAllDifficulties) {
        auto it = r.by_difficulty.find(d);
        cells[static_cast<int>(d)] = it == r.by_difficulty.end()
                                         ? "-"
                                         : fmt("%.2f", it->second.rate() * 100) + " (" +
                                               std::to_string(it->second.total) + ")";
      }
      std::snprintf(line, sizeof line, "%-14s %12s %12s %12s\n", r.name.c_str(), cells[0].c_str(),
                    cells[1].c_str(), cells[2].c_str());
      os << line;
    }
  }

  for (const auto& r : rep.rows) {
    if (!r.disagreement) continue;
    os << "\nDisagreement (rows oracle, columns routed): " << r.name << "\n";
    std::snprintf(line, sizeof line, "%-14s %8s %8s %8s\n", "", "Basic", "Interm.", "Advanced");
    os << line;
    for (Tier o : kAllTiers) {
      std::snprintf(line, sizeof line, "%-14s %8lld %8lld %8lld\n", std::string(tier_name(o)).c_str(),
                    static_cast<long long>(r.disagreement->at(o, Tier::kBasic)),
                    static_cast<long long>(r.disagreement->at(o, Tier::kIntermediate)),
                    static_cast<long long>(r.disagreement->at(o, Tier::kAdvanced)));
      os << line;
    }
  }

  os << "\nPareto frontier:";
  for (const auto& p : rep.frontier) os << " " << p.name;
  os << "\n";
  for (const auto& n : rep.notices) os << "note: " << n << "\n";
  return os.str();
}

inline std::string report_csv(const MetricReport& rep) {
  using detail::fmt;
  auto opt = [](const std::optional<double>& v) { return v ? fmt("%.10g", *v) : std::string(); };
  std::ostringstream os;
  os << "method,queries,scored,correct,errors,ex,avg_tokens,pgr,tep,utr,agreement,kendall_tau,"
        "routed_basic,routed_intermediate,routed_advanced,wall_clock_ms\n";
  for (const auto& r : rep.rows) {
    os << detail::csv_field(r.name) << ',' << r.queries << ',' << r.scored << ',' << r.correct << ','
       << r.errors << ',' << fmt("%.10g", r.ex) << ',' << fmt("%.10g", r.avg_tokens) << ',' << opt(r.pgr)
       << ',' << opt(r.tep) << ',' << opt(r.utr) << ',' << opt(r.agreement) << ',' << opt(r.kendall_tau)
       << ',' << r.routed[0] << ',' << r.routed[1] << ',' << r.routed[2] << ',' << r.wall_clock_ms << '\n';
  }
  return os.str();
}

inline ojson report_json(const MetricReport& rep) {
  auto opt = [](const std::optional<double>& v) { return v ? ojson(*v) : ojson(nullptr); };
  ojson j;
  j["mu"] = rep.mu;
  j["phases"] = rep.phases;
  j["baselines"] = {{"basic", rep.basic_baseline}, {"advanced", rep.advanced_baseline}};
  ojson rows = ojson::array();
  for (const auto& r : rep.rows) {
    ojson row;
    row["method"] = r.name;
    row["queries"] = r.queries;
    row["scored"] = r.scored;
    row["correct"] = r.correct;
    row["errors"] = r.errors;
    row["ex"] = r.ex;
    ojson by = ojson::object();
    for (const auto& [d, tally] : r.by_difficulty) {
      by[std::string(difficulty_name(d))] = {{"correct", tally.correct}, {"total", tally.total}};
    }
    row["ex_by_difficulty"] = std::move(by);
    row["avg_tokens"] = r.avg_tokens;
    row["pgr"] = opt(r.pgr);
    row["tep"] = opt(r.tep);
    row["utr"] = opt(r.utr);
    row["agreement"] = opt(r.agreement);
    row["kendall_tau"] = opt(r.kendall_tau);
    row["routed"] = {{"Basic", r.routed[0]}, {"Intermediate", r.routed[1]}, {"Advanced", r.routed[2]}};
    if (r.disagreement) {
      ojson m = ojson::array();
      for (const auto& line : r.disagreement->counts) m.push_back(line);
      row["disagreement"] = std::move(m);
    }
    row["wall_clock_ms"] = r.wall_clock_ms;
    rows.push_back(std::move(row));
  }
  j["methods"] = std::move(rows);
  ojson frontier = ojson::array();
  for (const auto& p : rep.frontier) frontier.push_back({{"method", p.name}, {"ex", p.ex}, {"avg_tokens", p.avg_tokens}});
  j["pareto_frontier"] = std::move(frontier);
  j["notices"] = rep.notices;
  return j;
}

/// EX against average tokens with the frontier drawn through its points.
inline std::string pareto_svg(const std::vector<ParetoPoint>& points, const std::vector<ParetoPoint>& frontier) {
  using detail::fmt;
  constexpr double W = 640, H = 420, L = 70, R = 30, T = 30, B = 60;
  double x_lo = 0, x_hi = 1, y_lo = 0, y_hi = 1;
  if (!points.empty()) {
    x_lo = x_hi = points[0].avg_tokens;
    y_lo = y_hi = points[0].ex * 100;
    for (const auto& p : points) {
      x_lo = std::min(x_lo, p.avg_tokens);
      x_hi = std::max(x_hi, p.avg_tokens);
      y_lo = std::min(y_lo, p.ex * 100);
      y_hi = std::max(y_hi, p.ex * 100);
    }
  }
  const double xpad = std::max((x_hi - x_lo) * 0.08, 1.0), ypad = std::max((y_hi - y_lo) * 0.1, 1.0);
  x_lo -= xpad;
  x_hi += xpad;
  y_lo -= ypad;
  y_hi += ypad;
  auto sx = [&](double x) { return L + (x - x_lo) / (x_hi - x_lo) * (W - L - R); };
  auto sy = [&](double y) { return H - B - (y - y_lo) / (y_hi - y_lo) * (H - T - B); };
  auto esc = [](const std::string& s) {
    std::string o;
    for (char c : s) {
      if (c == '<') o += "&lt;";
      else if (c == '>') o += "&gt;";
      else if (c == '&') o += "&amp;";
      else o += c;
    }
    return o;
  };

  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
     << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B
     << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double xv = x_lo + (x_hi - x_lo) * i / 4, yv = y_lo + (y_hi - y_lo) * i / 4;
    os << "<text x=\"" << fmt("%.1f", sx(xv)) << "\" y=\"" << H - B + 18 << "\" text-anchor=\"middle\">"
       << fmt("%.0f", xv) << "</text>\n";
    os << "<text x=\"" << L - 8 << "\" y=\"" << fmt("%.1f", sy(yv) + 4) << "\" text-anchor=\"end\">"
       << fmt("%.1f", yv) << "</text>\n";
  }
  os << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 15
     << "\" text-anchor=\"middle\">average weighted tokens</text>\n";
  os << "<text x=\"18\" y=\"" << (T + H - B) / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 18 "
     << (T + H - B) / 2 << ")\">EX (%)</text>\n";
  if (frontier.size() > 1) {
    os << "<polyline fill=\"none\" stroke=\"#c0392b\" stroke-dasharray=\"5,3\" points=\"";
    for (const auto& p : frontier) os << fmt("%.1f", sx(p.avg_tokens)) << ',' << fmt("%.1f", sy(p.ex * 100)) << ' ';
    os << "\"/>\n";
  }
  for (const auto& p : points) {
    const bool on = std::find(frontier.begin(), frontier.end(), p) != frontier.end();
    os << "<circle cx=\"" << fmt("%.1f", sx(p.avg_tokens)) << "\" cy=\"" << fmt("%.1f", sy(p.ex * 100))
       << "\" r=\"5\" fill=\"" << (on ? "#c0392b" : "#2c3e50") << "\"/>\n";
    os << "<text x=\"" << fmt("%.1f", sx(p.avg_tokens) + 8) << "\" y=\"" << fmt("%.1f", sy(p.ex * 100) - 6)
       << "\">" << esc(p.name) << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

}  // namespace tiersql
