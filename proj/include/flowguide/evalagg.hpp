#pragma once

// Mean-rank tables from per-view ranking records. Each record ranks every compared method for one
// (object, view, criterion). Scores are averaged over the views of an object first, then over
// objects.

#include <algorithm>
#include <cstdio>
#include <istream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "flowguide/common.hpp"
#include "json.hpp"

namespace flowguide {

enum class Criterion { fidelity, clarity, integration, quality, adaptation, overall };

inline constexpr Criterion kAllCriteria[] = {Criterion::fidelity,  Criterion::clarity,    Criterion::integration,
                                             Criterion::quality,   Criterion::adaptation, Criterion::overall};

inline const char* to_string(Criterion c) noexcept {
  switch (c) {
    case Criterion::fidelity: return "fidelity";
    case Criterion::clarity: return "clarity";
    case Criterion::integration: return "integration";
    case Criterion::quality: return "quality";
    case Criterion::adaptation: return "adaptation";
    case Criterion::overall: return "overall";
  }
  return "unknown";
}

inline std::optional<Criterion> parse_criterion(const std::string& s) {
  for (Criterion c : kAllCriteria) {
    if (s == to_string(c)) return c;
  }
  return std::nullopt;
}

struct RankingRecord {
  std::string object_id;
  std::string view_id;
  Criterion criterion = Criterion::overall;
  std::map<std::string, int> ranks;  // method -> rank, a permutation of 1..M

  friend bool operator==(const RankingRecord&, const RankingRecord&) = default;
};

struct ParseIssue {
  std::size_t line = 0;  // 1-based
  ErrorKind kind = ErrorKind::ParseError;
  std::string message;
};

struct ParseResult {
  std::vector<RankingRecord> records;
  std::vector<ParseIssue> issues;  // lenient mode only; strict mode throws instead
};

namespace detail {

inline RankingRecord record_from_line(const std::string& line, std::size_t line_no) {
  using nlohmann::json;
  json j;
  try {
    j = json::parse(line);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::ParseError, "line " + std::to_string(line_no) + ": " + e.what(), line_no);
  }
  auto fail = [&](const std::string& why) {
    return Error(ErrorKind::ParseError, "line " + std::to_string(line_no) + ": " + why, line_no);
  };
  if (!j.is_object()) throw fail("expected a JSON object");
  for (const char* key : {"object_id", "view_id", "criterion", "ranks"}) {
    if (!j.contains(key)) throw fail(std::string("missing '") + key + "'");
  }
  for (const auto& [key, _] : j.items()) {
    if (key != "object_id" && key != "view_id" && key != "criterion" && key != "ranks") {
      throw fail("unknown key '" + key + "'");
    }
  }
  auto id = [&](const char* key) {
    const auto& v = j[key];
    if (v.is_string()) return v.get<std::string>();
    if (v.is_number_integer()) return std::to_string(v.get<long long>());
    throw fail(std::string("'") + key + "' must be a string or integer");
  };

  RankingRecord r;
  r.object_id = id("object_id");
  r.view_id = id("view_id");
  if (!j["criterion"].is_string()) throw fail("'criterion' must be a string");
  const auto crit = parse_criterion(j["criterion"].get<std::string>());
  if (!crit) throw fail("unknown criterion '" + j["criterion"].get<std::string>() + "'");
  r.criterion = *crit;

  const auto& ranks = j["ranks"];
  if (!ranks.is_object() || ranks.empty()) throw fail("'ranks' must be a non-empty object");
  for (const auto& [method, value] : ranks.items()) {
    if (!value.is_number_integer()) throw fail("rank of '" + method + "' is not an integer");
    r.ranks[method] = value.get<int>();
  }
  const int m = static_cast<int>(r.ranks.size());
  std::set<int> seen;
  for (const auto& [method, rank] : r.ranks) {
    if (rank < 1 || rank > m || !seen.insert(rank).second) {
      throw Error(ErrorKind::NotAPermutation,
                  "line " + std::to_string(line_no) + ": ranks are not a permutation of 1.." + std::to_string(m),
                  line_no);
    }
  }
  return r;
}

}  // namespace detail

/// One JSON object per line; blank lines are skipped. Strict mode throws on the first malformed
/// line and on an empty stream. Lenient mode skips bad lines and reports them in `issues`.
inline ParseResult parse_records(std::istream& in, bool strict) {
  ParseResult out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.records.push_back(detail::record_from_line(line, line_no));
    } catch (const Error& e) {
      if (strict) throw;
      out.issues.push_back({line_no, e.kind(), e.what()});
    }
  }
  if (strict && out.records.empty()) throw Error(ErrorKind::NoRecords, "no ranking records in input");
  return out;
}

enum class Averaging { per_object, flat };

/// Mean rank per method for one criterion. A record that does not rank a method is excluded
/// from that method's mean.
inline std::map<std::string, double> aggregate(const std::vector<RankingRecord>& records, Criterion criterion,
                                               Averaging averaging = Averaging::per_object) {
  // method -> object -> (sum, count)
  std::map<std::string, std::map<std::string, std::pair<double, std::size_t>>> acc;
  bool any = false;
  for (const auto& r : records) {
    if (r.criterion != criterion) continue;
    any = true;
    for (const auto& [method, rank] : r.ranks) {
      const std::string object = averaging == Averaging::flat ? std::string() : r.object_id;
      auto& slot = acc[method][object];
      slot.first += rank;
      slot.second += 1;
    }
  }
  detail::require(any, ErrorKind::NoRecords, std::string("no records for criterion ") + to_string(criterion));

  std::map<std::string, double> out;
  for (const auto& [method, objects] : acc) {
    double sum = 0;
    for (const auto& [object, s] : objects) sum += s.first / static_cast<double>(s.second);
    out[method] = sum / static_cast<double>(objects.size());
  }
  return out;
}

/// Two decimals, as in published ranking tables.
inline std::string format_rank(double value) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", value);
  return buf;
}

/// criterion -> method -> mean rank
using RankTable = std::map<Criterion, std::map<std::string, double>>;

inline RankTable aggregate_all(const std::vector<RankingRecord>& records, Averaging averaging = Averaging::per_object) {
  RankTable table;
  for (Criterion c : kAllCriteria) {
    const bool present =
        std::any_of(records.begin(), records.end(), [c](const RankingRecord& r) { return r.criterion == c; });
    if (present) table[c] = aggregate(records, c, averaging);
  }
  return table;
}

namespace detail {
inline std::vector<std::string> table_methods(const RankTable& table) {
  std::set<std::string> methods;
  for (const auto& [c, row] : table) {
    for (const auto& [m, v] : row) methods.insert(m);
  }
  return {methods.begin(), methods.end()};
}
}  // namespace detail

/// Methods as rows, criteria as columns; missing cells print "-".
inline std::string render_table(const RankTable& table) {
  const auto methods = detail::table_methods(table);
  std::size_t name_w = 6;
  for (const auto& m : methods) name_w = std::max(name_w, m.size());
  std::string out;
  auto pad = [](std::string s, std::size_t w, bool left) {
    if (s.size() >= w) return s;
    return left ? s + std::string(w - s.size(), ' ') : std::string(w - s.size(), ' ') + s;
  };
  std::vector<std::size_t> widths;
  out += pad("method", name_w, true);
  for (const auto& [c, _] : table) {
    widths.push_back(std::max<std::size_t>(std::string(to_string(c)).size(), 4));
    out += "  " + pad(to_string(c), widths.back(), false);
  }
  out += "\n";
  for (const auto& m : methods) {
    out += pad(m, name_w, true);
    std::size_t col = 0;
    for (const auto& [c, row] : table) {
      const auto it = row.find(m);
      out += "  " + pad(it == row.end() ? "-" : format_rank(it->second), widths[col++], false);
    }
    out += "\n";
  }
  return out;
}

inline std::string render_csv(const RankTable& table) {
  const auto methods = detail::table_methods(table);
  std::string out = "method";
  for (const auto& [c, _] : table) out += std::string(",") + to_string(c);
  out += "\n";
  for (const auto& m : methods) {
    out += m;
    for (const auto& [c, row] : table) {
      const auto it = row.find(m);
      out += "," + (it == row.end() ? std::string() : format_rank(it->second));
    }
    out += "\n";
  }
  return out;
}

}  // namespace flowguide
