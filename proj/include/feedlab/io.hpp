#pragma once

// File formats: CSV catalogs, snapshot and creation tables, JSON profiles,
// feed/simulation configs and every report the CLI writes.

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "feedlab/allocator.hpp"
#include "feedlab/error.hpp"
#include "feedlab/estimation.hpp"
#include "feedlab/simulator.hpp"
#include "feedlab/snapshot.hpp"
#include "feedlab/types.hpp"

namespace feedlab::io {

using json = nlohmann::json;

namespace detail {

[[noreturn]] inline void parse_fail(std::string_view op, const std::string& msg) {
  feedlab::detail::fail(ErrorKind::parse, "io", op, msg);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// CSV

/// Round-trip formatting with 17 significant digits.
inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

using CsvRow = std::vector<std::string>;

/// RFC 4180-style split: quoted fields may contain commas, doubled quotes and
/// newlines.
inline std::vector<CsvRow> parse_csv(std::string_view text) {
  std::vector<CsvRow> rows;
  CsvRow row;
  std::string field;
  bool quoted = false;
  bool any = false;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field += c;
      }
      continue;
    }
    switch (c) {
      case '"': quoted = true; any = true; break;
      case ',':
        row.push_back(std::move(field));
        field.clear();
        any = true;
        break;
      case '\r': break;
      case '\n':
        if (any || !field.empty()) {
          row.push_back(std::move(field));
          rows.push_back(std::move(row));
        }
        row.clear();
        field.clear();
        any = false;
        break;
      default: field += c; any = true;
    }
  }
  if (quoted) detail::parse_fail("parse_csv", "unterminated quoted field");
  if (any || !field.empty()) {
    row.push_back(std::move(field));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline std::string csv_field(std::string_view s) {
  if (s.find_first_of(",\"\n\r") == std::string_view::npos) return std::string(s);
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + '"';
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) detail::parse_fail("read_file", "cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) detail::parse_fail("write_file", "cannot write '" + path + "'");
  out << content;
}

/// Rows of a CSV with the exact expected header, as string tables.
inline std::vector<CsvRow> read_table(std::string_view text, const CsvRow& header,
                                      std::string_view op) {
  auto rows = parse_csv(text);
  if (rows.empty()) detail::parse_fail(op, "missing header");
  if (rows.front() != header) {
    std::string want;
    for (const auto& h : header) want += (want.empty() ? "" : ",") + h;
    detail::parse_fail(op, "expected header '" + want + "'");
  }
  rows.erase(rows.begin());
  for (std::size_t i = 0; i < rows.size(); ++i)
    if (rows[i].size() != header.size())
      detail::parse_fail(op, "row " + std::to_string(i + 2) + " has " +
                                 std::to_string(rows[i].size()) + " fields");
  return rows;
}

inline double to_double(const std::string& s, std::string_view op) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    detail::parse_fail(op, "not a number: '" + s + "'");
  }
}

inline std::uint64_t to_uint(const std::string& s, std::string_view op) {
  try {
    if (s.empty() || s[0] == '-') throw std::invalid_argument(s);
    std::size_t used = 0;
    const auto v = std::stoull(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    detail::parse_fail(op, "not a non-negative integer: '" + s + "'");
  }
}

// publisher_id,rate
inline PublisherCatalog catalog_from_csv(std::string_view text) {
  PublisherCatalog c;
  for (auto& row : read_table(text, {"publisher_id", "rate"}, "catalog_from_csv"))
    c.add(row[0], to_double(row[1], "catalog_from_csv"));
  return c;
}

inline std::string catalog_to_csv(const PublisherCatalog& c) {
  std::string out = "publisher_id,rate\n";
  for (const auto& p : c.publishers()) out += csv_field(p.id) + "," + format_double(p.rate) + "\n";
  return out;
}

// user_id,snapshot_id,position,publisher_id,post_id
inline const CsvRow& snapshot_header() {
  static const CsvRow h{"user_id", "snapshot_id", "position", "publisher_id", "post_id"};
  return h;
}

inline SnapshotDataset snapshots_from_csv(std::string_view text) {
  SnapshotDataset d;
  auto rows = read_table(text, snapshot_header(), "snapshots_from_csv");
  d.records.reserve(rows.size());
  for (auto& row : rows) {
    const auto pos = to_uint(row[2], "snapshots_from_csv");
    d.records.push_back({std::move(row[0]), to_uint(row[1], "snapshots_from_csv"),
                         static_cast<int>(pos), std::move(row[3]), std::move(row[4])});
  }
  d.validate();
  return d;
}

inline std::string snapshots_to_csv(const SnapshotDataset& d) {
  std::string out = "user_id,snapshot_id,position,publisher_id,post_id\n";
  for (const auto& r : d.records) {
    out += csv_field(r.user_id);
    out += ',';
    out += std::to_string(r.snapshot_id);
    out += ',';
    out += std::to_string(r.position);
    out += ',';
    out += csv_field(r.publisher_id);
    out += ',';
    out += csv_field(r.post_id);
    out += '\n';
  }
  return out;
}

// publisher_id,created_count
inline std::map<std::string, std::uint64_t> creations_from_csv(std::string_view text) {
  std::map<std::string, std::uint64_t> c;
  for (auto& row : read_table(text, {"publisher_id", "created_count"}, "creations_from_csv"))
    c[row[0]] += to_uint(row[1], "creations_from_csv");
  return c;
}

inline std::string creations_to_csv(const std::map<std::string, std::uint64_t>& c) {
  std::string out = "publisher_id,created_count\n";
  for (const auto& [id, n] : c) out += csv_field(id) + "," + std::to_string(n) + "\n";
  return out;
}

// ---------------------------------------------------------------------------
// JSON inputs

inline json parse_json(std::string_view text, std::string_view op) {
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    detail::parse_fail(op, e.what());
  }
}

template <class F>
auto guarded(std::string_view op, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const json::exception& e) {
    detail::parse_fail(op, e.what());
  }
}

/// Either [{"publisher_id": .., "rate": ..}, ...] or {"id": rate, ...}.
inline PublisherCatalog catalog_from_json(const json& j) {
  return guarded("catalog_from_json", [&] {
    PublisherCatalog c;
    if (j.is_array()) {
      for (const auto& p : j) c.add(p.at("publisher_id").get<std::string>(), p.at("rate").get<double>());
    } else if (j.is_object()) {
      for (const auto& [id, rate] : j.items()) c.add(id, rate.get<double>());
    } else {
      detail::parse_fail("catalog_from_json", "catalog must be an array or an object");
    }
    return c;
  });
}

/// `likes` is an array of liked publisher ids (an object id -> 0/1 is also
/// accepted); `filter_probs` defaults to 1 per publisher.
inline UserProfile profile_from_json(const json& j) {
  return guarded("profile_from_json", [&] {
    UserProfile p;
    p.user_id = j.at("user_id").get<std::string>();
    if (j.contains("likes")) {
      const auto& likes = j.at("likes");
      if (likes.is_array()) {
        for (const auto& id : likes) p.likes[id.get<std::string>()] = true;
      } else {
        for (const auto& [id, v] : likes.items())
          p.likes[id] = v.is_boolean() ? v.get<bool>() : v.get<int>() != 0;
      }
    }
    if (j.contains("weights"))
      for (const auto& [k, v] : j.at("weights").items()) p.weights[k] = v.get<double>();
    if (j.contains("filter_probs"))
      for (const auto& [k, v] : j.at("filter_probs").items()) p.filter_probs[k] = v.get<double>();
    p.validate();
    return p;
  });
}

inline json to_json(const UserProfile& p) {
  json likes = json::array();
  for (const auto& [id, l] : p.likes)
    if (l) likes.push_back(id);
  return {{"user_id", p.user_id},
          {"likes", likes},
          {"weights", p.weights},
          {"filter_probs", p.filter_probs}};
}

/// Profiles file: a single profile object or an array of them.
inline std::vector<UserProfile> profiles_from_json(const json& j) {
  std::vector<UserProfile> out;
  if (j.is_array())
    for (const auto& p : j) out.push_back(profile_from_json(p));
  else
    out.push_back(profile_from_json(j));
  return out;
}

inline FeedConfig feed_config_from_json(const json& j) {
  return guarded("feed_config_from_json", [&] {
    FeedConfig f;
    f.K = j.at("K").get<int>();
    if (j.contains("ttl_by_class"))
      for (const auto& [k, v] : j.at("ttl_by_class").items()) f.ttl_by_class[k] = v.get<double>();
    f.validate();
    return f;
  });
}

inline json to_json(const FeedConfig& f) { return {{"K", f.K}, {"ttl_by_class", f.ttl_by_class}}; }

/// Simulation settings; catalog, profile and feed are supplied separately.
/// {"mode", "horizon": {"time": T} | {"arrivals": N}, "warmup", "seed",
///  "snapshot_interval", "replications", "ttl_distribution", "topk_view",
///  "threads"}
inline void apply_sim_settings(const json& j, sim::SimConfig& c) {
  guarded("sim_config_from_json", [&] {
    if (j.contains("mode")) {
      const auto m = j.at("mode").get<std::string>();
      if (m == "ttl") c.mode = sim::Mode::ttl;
      else if (m == "finite_fifo") c.mode = sim::Mode::finite_fifo;
      else detail::parse_fail("sim_config_from_json", "unknown mode '" + m + "'");
    }
    if (j.contains("horizon")) {
      const auto& h = j.at("horizon");
      if (h.is_number()) {
        c.horizon_kind = sim::HorizonKind::time;
        c.horizon = h.get<double>();
      } else if (h.contains("time")) {
        c.horizon_kind = sim::HorizonKind::time;
        c.horizon = h.at("time").get<double>();
      } else {
        c.horizon_kind = sim::HorizonKind::arrivals;
        c.horizon = h.at("arrivals").get<double>();
      }
    }
    if (j.contains("warmup")) c.warmup = j.at("warmup").get<double>();
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("snapshot_interval")) c.snapshot_interval = j.at("snapshot_interval").get<double>();
    if (j.contains("replications")) c.replications = j.at("replications").get<int>();
    if (j.contains("ttl_distribution")) {
      const auto d = j.at("ttl_distribution").get<std::string>();
      if (d == "deterministic") c.ttl_distribution = sim::TtlDistribution::deterministic;
      else if (d == "exponential") c.ttl_distribution = sim::TtlDistribution::exponential;
      else detail::parse_fail("sim_config_from_json", "unknown ttl_distribution '" + d + "'");
    }
    if (j.contains("topk_view")) c.topk_view = j.at("topk_view").get<bool>();
    if (j.contains("threads")) c.threads = j.at("threads").get<unsigned>();
    return 0;
  });
}

inline json sim_settings_to_json(const sim::SimConfig& c) {
  json horizon;
  horizon[std::string(sim::to_string(c.horizon_kind))] = c.horizon;
  return {{"mode", sim::to_string(c.mode)},
          {"horizon", horizon},
          {"warmup", c.warmup},
          {"seed", c.seed},
          {"snapshot_interval", c.snapshot_interval},
          {"replications", c.replications},
          {"ttl_distribution", sim::to_string(c.ttl_distribution)},
          {"topk_view", c.topk_view},
          {"K", c.feed.K}};
}

// ---------------------------------------------------------------------------
// JSON reports

/// {"user_id": .., "publishers": {id: {occupancy, visibility, hit_prob,
/// effective_rate}}}
inline json to_json(const FeedMetrics& m) {
  json pubs = json::object();
  for (const auto& [id, n] : m.occupancy) {
    json e = {{"occupancy", n}};
    if (auto it = m.visibility.find(id); it != m.visibility.end()) e["visibility"] = it->second;
    if (auto it = m.hit_prob.find(id); it != m.hit_prob.end()) e["hit_prob"] = it->second;
    if (auto it = m.effective_rates.find(id); it != m.effective_rates.end())
      e["effective_rate"] = it->second;
    pubs[id] = e;
  }
  return {{"user_id", m.user_id}, {"publishers", pubs}};
}

inline FeedMetrics feed_metrics_from_json(const json& j) {
  return guarded("feed_metrics_from_json", [&] {
    FeedMetrics m;
    m.user_id = j.value("user_id", "");
    for (const auto& [id, e] : j.at("publishers").items()) {
      m.occupancy[id] = e.at("occupancy").get<double>();
      if (e.contains("visibility")) m.visibility[id] = e.at("visibility").get<double>();
      if (e.contains("hit_prob")) m.hit_prob[id] = e.at("hit_prob").get<double>();
      if (e.contains("effective_rate")) m.effective_rates[id] = e.at("effective_rate").get<double>();
    }
    return m;
  });
}

inline json to_json(const sim::SimResult& r) {
  json ci = json::object(), se = json::object();
  for (const auto& [id, h] : r.ci_halfwidth) ci[id] = {{"occupancy", h.occupancy}, {"visibility", h.visibility}};
  for (const auto& [id, h] : r.std_error) se[id] = {{"occupancy", h.occupancy}, {"visibility", h.visibility}};
  return {{"metrics", to_json(r.metrics)},
          {"ci_halfwidth", ci},
          {"std_error", se},
          {"generated_counts", r.generated_counts},
          {"admitted_counts", r.admitted_counts},
          {"events_processed", r.events_processed},
          {"snapshots_taken", r.snapshots_taken},
          {"replications", r.replications}};
}

inline json optional_number(const std::optional<double>& v) {
  return v ? json(*v) : json(nullptr);
}

inline json to_json(const alloc::AllocationResult& r) {
  json j = {{"criterion", alloc::to_string(r.criterion)},
            {"alpha", std::isfinite(r.alpha) ? json(r.alpha) : json("inf")},
            {"hit_mode", to_string(r.hit_mode)},
            {"K", r.K},
            {"occupancy", r.occupancy},
            {"ttl", r.ttl},
            {"multiplier", optional_number(r.multiplier)},
            {"kkt_residual", r.kkt_residual}};
  if (!r.class_occupancy.empty()) {
    j["class_occupancy"] = r.class_occupancy;
    j["class_ttl"] = r.class_ttl;
  }
  return j;
}

inline json to_json(const alloc::BiasReport& b) {
  return {{"scenario", b.scenario}, {"K", b.K}, {"bias", b.bias}, {"baseline_occupancy", b.baseline_occupancy}};
}

/// key,occupancy,ttl,bias (empty cells where a value does not apply).
inline std::string allocation_to_csv(const alloc::AllocationResult& r, const alloc::BiasReport* bias) {
  std::string out = "key,occupancy,ttl,bias\n";
  for (const auto& [key, n] : r.occupancy) {
    out += csv_field(key) + "," + format_double(n) + ",";
    if (auto it = r.ttl.find(key); it != r.ttl.end()) out += format_double(it->second);
    out += ",";
    if (bias)
      if (auto it = bias->bias.find(key); it != bias->bias.end()) out += format_double(it->second);
    out += "\n";
  }
  return out;
}

inline json to_json(const est::RegressionReport& r) {
  return {{"beta0", r.beta0},         {"beta1", r.beta1}, {"r_squared", r.r_squared},
          {"rmse", r.rmse},           {"p_value_beta1", r.p_value_beta1},
          {"t_statistic", std::isfinite(r.t_statistic) ? json(r.t_statistic) : json(nullptr)},
          {"se_beta1", r.se_beta1},   {"n", r.n}};
}

/// [{"user_id", "publisher_id", "occupancy", "visibility"}]
inline json to_json(const est::PairMap<est::PairMetrics>& t) {
  json a = json::array();
  for (const auto& [k, v] : t)
    a.push_back({{"user_id", k.user_id}, {"publisher_id", k.publisher_id},
                 {"occupancy", v.occupancy}, {"visibility", v.visibility}});
  return a;
}

inline json to_json(const est::PairMap<double>& t) {
  json a = json::array();
  for (const auto& [k, v] : t)
    a.push_back({{"user_id", k.user_id}, {"publisher_id", k.publisher_id}, {"value", v}});
  return a;
}

inline est::PairMap<est::PairMetrics> pair_table_from_json(const json& a) {
  return guarded("pair_table_from_json", [&] {
    est::PairMap<est::PairMetrics> t;
    for (const auto& e : a)
      t[{e.at("user_id").get<std::string>(), e.at("publisher_id").get<std::string>()}] = {
          e.at("occupancy").get<double>(), e.value("visibility", 0.0)};
    return t;
  });
}

inline json to_json(const est::TwoClassTtl& t) {
  return {{"ttl0", optional_number(t.ttl0)},
          {"ttl1", optional_number(t.ttl1)},
          {"impressions0", t.impressions0},
          {"impressions1", t.impressions1},
          {"generated0", t.generated0},
          {"generated1", t.generated1}};
}

inline std::string dump(const json& j) { return j.dump(2) + "\n"; }

/// Long-format plot table: user,publisher,metric,K,value,scenario.
struct LongTable {
  std::string text = "user,publisher,metric,K,value,scenario\n";

  void add(std::string_view user, std::string_view publisher, std::string_view metric, int K,
           double value, std::string_view scenario) {
    text += csv_field(user) + "," + csv_field(publisher) + "," + csv_field(metric) + "," +
            std::to_string(K) + "," + format_double(value) + "," + csv_field(scenario) + "\n";
  }

  void add(const FeedMetrics& m, int K, std::string_view scenario) {
    for (const auto& [id, v] : m.occupancy) add(m.user_id, id, "occupancy", K, v, scenario);
    for (const auto& [id, v] : m.visibility) add(m.user_id, id, "visibility", K, v, scenario);
    for (const auto& [id, v] : m.hit_prob) add(m.user_id, id, "hit_prob", K, v, scenario);
    for (const auto& [id, v] : m.effective_rates) add(m.user_id, id, "effective_rate", K, v, scenario);
  }

  void add(const est::PairMap<est::PairMetrics>& t, int K, std::string_view scenario) {
    for (const auto& [k, v] : t) {
      add(k.user_id, k.publisher_id, "occupancy", K, v.occupancy, scenario);
      add(k.user_id, k.publisher_id, "visibility", K, v.visibility, scenario);
    }
  }
};

}  // namespace feedlab::io
