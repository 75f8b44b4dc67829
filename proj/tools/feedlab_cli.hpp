#pragma once

// Command-line front end. `run` is callable in-process so the tests can drive
// every subcommand without spawning a shell.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "feedlab/feedlab.hpp"

namespace feedlab::cli {

using io::json;

struct Options {
  std::string catalog;
  std::vector<std::string> profiles;
  std::string feed_config;
  std::string sim_config;
  std::string request;
  std::string dataset;
  std::string creations;
  std::optional<int> K;
  std::string criterion;
  std::optional<double> alpha;
  std::string hit_mode;
  std::optional<std::uint64_t> seed;
  std::optional<int> replications;
  std::optional<double> tol;
  std::string out;
  std::string format = "json";

  std::string model_kind = "ttl";
  std::string level = "publisher";
  std::string mode;
  std::optional<double> horizon;
  std::optional<double> arrivals;
  std::optional<double> warmup;
  std::optional<double> snapshot_interval;
  std::string ttl_distribution;
  bool topk_view = false;
  std::optional<unsigned> threads;
  std::string snapshots_out;
  std::string creations_out;
  std::string visibility_model = "ttl";
  bool restrict_k = false;
  std::string occupancy;
  std::string baseline = "uniform";
  std::string scenario;
  std::string table = "allocation";
  std::string model;
  std::string measured;
  std::string model_table = "model";
  std::string measured_table = "measured";
  std::string metric = "occupancy";
};

namespace detail {

[[noreturn]] inline void usage(std::string_view op, const std::string& msg) {
  feedlab::detail::fail(ErrorKind::parse, "cli", op, msg);
}

inline json load_json(const std::string& path, std::string_view op) {
  return io::parse_json(io::read_file(path), op);
}

inline PublisherCatalog load_catalog(const std::string& path) {
  if (path.ends_with(".json")) return io::catalog_from_json(load_json(path, "catalog"));
  return io::catalog_from_csv(io::read_file(path));
}

inline std::vector<UserProfile> load_profiles(const std::vector<std::string>& paths) {
  std::vector<UserProfile> out;
  for (const auto& p : paths)
    for (auto& prof : io::profiles_from_json(load_json(p, "profile"))) out.push_back(std::move(prof));
  return out;
}

inline std::optional<std::uint64_t> env_seed() {
  const char* s = std::getenv("FEEDLAB_SEED");
  if (s == nullptr || *s == '\0') return std::nullopt;
  return io::to_uint(s, "FEEDLAB_SEED");
}

inline HitMode hit_mode_or(const std::string& s, HitMode fallback) {
  if (s.empty()) return fallback;
  auto m = parse_hit_mode(s);
  if (!m) usage("hit_mode", "unknown hit mode '" + s + "'");
  return *m;
}

inline void emit(const Options& o, const std::string& text, std::ostream& out) {
  if (o.out.empty())
    out << text;
  else
    io::write_file(o.out, text);
}

/// One feed's worth of occupancy/visibility per (user, publisher), pulled from
/// any report the CLI writes: pair tables, FeedMetrics, SimResult,
/// AllocationResult, or arrays of those.
struct PairSource {
  est::PairMap<est::PairMetrics> pairs;
  std::optional<int> K;
};

inline void collect(const json& j, const std::string& table, PairSource& src) {
  if (j.is_array()) {
    for (const auto& e : j) {
      if (e.is_object() && e.contains("publisher_id")) {
        auto t = io::pair_table_from_json(json::array({e}));
        src.pairs.insert(t.begin(), t.end());
      } else {
        collect(e, table, src);
      }
    }
    return;
  }
  if (!j.is_object()) usage("load_pairs", "unrecognized occupancy source");
  if (j.contains("K") && j.at("K").is_number_integer() && !src.K) src.K = j.at("K").get<int>();
  if (j.contains(table) && j.at(table).is_array()) {
    auto t = io::pair_table_from_json(j.at(table));
    src.pairs.insert(t.begin(), t.end());
  } else if (j.contains("publishers")) {
    const auto m = io::feed_metrics_from_json(j);
    for (const auto& [id, n] : m.occupancy) {
      auto v = m.visibility.find(id);
      src.pairs[{m.user_id, id}] = {n, v == m.visibility.end() ? 0.0 : v->second};
    }
  } else if (j.contains("metrics")) {
    collect(j.at("metrics"), table, src);
  } else if (j.contains("occupancy") && j.at("occupancy").is_object()) {
    const std::string user = j.value("user_id", "");
    for (const auto& [id, n] : j.at("occupancy").items())
      src.pairs[{user, id}] = {n.get<double>(), core::ttl_visibility(n.get<double>())};
  } else {
    usage("load_pairs", "no '" + table + "' table, feed metrics or allocation in source");
  }
}

inline PairSource load_pairs(const std::string& path, const std::string& table) {
  PairSource src;
  io::guarded("load_pairs", [&] {
    collect(load_json(path, "load_pairs"), table, src);
    return 0;
  });
  return src;
}

inline std::map<std::string, std::map<std::string, double>> by_user(
    const est::PairMap<est::PairMetrics>& pairs) {
  std::map<std::string, std::map<std::string, double>> out;
  for (const auto& [k, v] : pairs) out[k.user_id][k.publisher_id] = v.occupancy;
  return out;
}

inline json one_or_many(std::vector<json> items) {
  if (items.size() == 1) return std::move(items.front());
  return json(std::move(items));
}

// ---------------------------------------------------------------------------

inline void cmd_model(const Options& o, std::ostream& out) {
  const auto catalog = load_catalog(o.catalog);
  const auto profiles = load_profiles(o.profiles);
  FeedConfig feed;
  if (!o.feed_config.empty()) feed = io::feed_config_from_json(load_json(o.feed_config, "feed_config"));
  if (o.K) feed.K = *o.K;
  const auto kind = core::parse_model_kind(o.model_kind);
  if (!kind) usage("model", "unknown model kind '" + o.model_kind + "'");
  const auto mode = hit_mode_or(o.hit_mode, core::default_hit_mode(*kind));

  std::vector<json> docs;
  io::LongTable table;
  for (const auto& p : profiles) {
    const auto m = core::evaluate_model(catalog, p, feed, *kind, mode);
    auto j = io::to_json(m);
    j["K"] = feed.K;
    j["model"] = core::to_string(*kind);
    j["hit_mode"] = to_string(mode);
    docs.push_back(std::move(j));
    table.add(m, feed.K, core::to_string(*kind));
  }
  emit(o, o.format == "csv" ? table.text : io::dump(one_or_many(std::move(docs))), out);
}

inline void cmd_simulate(const Options& o, std::ostream& out) {
  sim::SimConfig cfg;
  cfg.catalog = load_catalog(o.catalog);
  if (!o.feed_config.empty()) cfg.feed = io::feed_config_from_json(load_json(o.feed_config, "feed_config"));
  std::optional<std::uint64_t> seed = o.seed;
  if (!o.sim_config.empty()) {
    const auto j = load_json(o.sim_config, "sim_config");
    io::apply_sim_settings(j, cfg);
    if (!seed && j.contains("seed")) seed = cfg.seed;
  }
  if (!seed) seed = env_seed();
  if (seed) cfg.seed = *seed;
  if (o.K) cfg.feed.K = *o.K;
  if (!o.mode.empty()) {
    if (o.mode == "ttl") cfg.mode = sim::Mode::ttl;
    else if (o.mode == "finite_fifo") cfg.mode = sim::Mode::finite_fifo;
    else usage("simulate", "unknown mode '" + o.mode + "'");
  }
  if (o.horizon && o.arrivals) usage("simulate", "--horizon and --arrivals are exclusive");
  if (o.horizon) {
    cfg.horizon_kind = sim::HorizonKind::time;
    cfg.horizon = *o.horizon;
  }
  if (o.arrivals) {
    cfg.horizon_kind = sim::HorizonKind::arrivals;
    cfg.horizon = *o.arrivals;
  }
  if (o.warmup) cfg.warmup = *o.warmup;
  if (o.snapshot_interval) cfg.snapshot_interval = *o.snapshot_interval;
  if (o.replications) cfg.replications = *o.replications;
  if (o.threads) cfg.threads = *o.threads;
  if (o.topk_view) cfg.topk_view = true;
  if (!o.ttl_distribution.empty()) {
    if (o.ttl_distribution == "deterministic") cfg.ttl_distribution = sim::TtlDistribution::deterministic;
    else if (o.ttl_distribution == "exponential") cfg.ttl_distribution = sim::TtlDistribution::exponential;
    else usage("simulate", "unknown ttl distribution '" + o.ttl_distribution + "'");
  }

  const bool record = !o.snapshots_out.empty() || !o.creations_out.empty();
  std::vector<json> docs;
  io::LongTable table;
  SnapshotDataset all;
  for (const auto& p : load_profiles(o.profiles)) {
    cfg.profile = p;
    auto run = sim::simulate_run(cfg, record);
    auto j = io::to_json(run.result);
    j["config"] = io::sim_settings_to_json(cfg);
    docs.push_back(std::move(j));
    table.add(run.result.metrics, cfg.feed.K, "simulated");
    // Every user sees the same publishing process, so creation counts agree.
    if (all.creation_counts.empty()) all.creation_counts = run.snapshots.creation_counts;
    all.records.insert(all.records.end(), std::make_move_iterator(run.snapshots.records.begin()),
                       std::make_move_iterator(run.snapshots.records.end()));
  }
  if (!o.snapshots_out.empty()) io::write_file(o.snapshots_out, io::snapshots_to_csv(all));
  if (!o.creations_out.empty()) io::write_file(o.creations_out, io::creations_to_csv(all.creation_counts));
  emit(o, o.format == "csv" ? table.text : io::dump(one_or_many(std::move(docs))), out);
}

inline void cmd_allocate(const Options& o, std::ostream& out) {
  json req = json::object();
  if (!o.request.empty()) req = load_json(o.request, "allocate_request");
  // Paths inside a request are relative to the request file.
  auto resolve = [&](const std::string& p) {
    const std::filesystem::path path(p);
    if (path.is_absolute() || o.request.empty()) return p;
    return (std::filesystem::path(o.request).parent_path() / path).string();
  };

  PublisherCatalog catalog;
  if (!o.catalog.empty()) {
    catalog = load_catalog(o.catalog);
  } else if (req.contains("catalog")) {
    const auto& c = req.at("catalog");
    catalog = c.is_string() ? load_catalog(resolve(c.get<std::string>())) : io::catalog_from_json(c);
  } else {
    usage("allocate", "a catalog is required");
  }
  UserProfile profile;
  if (!o.profiles.empty()) {
    const auto ps = load_profiles(o.profiles);
    if (ps.size() != 1) usage("allocate", "allocate takes exactly one profile");
    profile = ps.front();
  } else if (req.contains("profile")) {
    const auto& p = req.at("profile");
    profile = p.is_string() ? load_profiles({resolve(p.get<std::string>())}).front() : io::profile_from_json(p);
  } else {
    profile.user_id = "user";
  }

  auto from_req = [&](const char* key) -> std::optional<json> {
    if (req.contains(key)) return req.at(key);
    return std::nullopt;
  };
  const int K = io::guarded("allocate_request", [&] {
    if (o.K) return *o.K;
    if (auto k = from_req("K")) return k->get<int>();
    usage("allocate", "K is required");
  });
  const std::string crit_name = !o.criterion.empty() ? o.criterion
                                : from_req("criterion") ? req.at("criterion").get<std::string>()
                                                        : "proportional";
  const auto criterion = alloc::parse_criterion(crit_name);
  if (!criterion) usage("allocate", "unknown criterion '" + crit_name + "'");
  const double alpha = o.alpha ? *o.alpha : req.value("alpha", 1.0);
  const double tol = o.tol ? *o.tol : req.value("tol", 1e-10);
  const auto mode = hit_mode_or(!o.hit_mode.empty() ? o.hit_mode : req.value("hit_mode", std::string()),
                                HitMode::normalized_occupancy);
  const std::string level = o.level != "publisher" ? o.level : req.value("level", o.level);

  alloc::AllocationResult r;
  if (level == "class") {
    r = alloc::class_based_allocate(profile, catalog, K, *criterion, alpha, tol);
  } else if (level == "publisher") {
    std::map<std::string, double> weights, rates;
    for (const auto& p : catalog.publishers()) {
      weights[p.id] = profile.weight(p.id);
      rates[p.id] = p.rate;
    }
    r = alloc::allocate(weights, rates, *criterion, {alpha, mode}, K, tol);
  } else {
    usage("allocate", "unknown level '" + level + "'");
  }

  const auto baseline = core::uniform_fifo_baseline(catalog, K);
  const auto bias = alloc::compute_bias(r.occupancy, baseline.occupancy, K,
                                        o.scenario.empty() ? alloc::scenario_label(*criterion) : o.scenario);
  if (o.format == "csv") {
    emit(o, io::allocation_to_csv(r, &bias), out);
    return;
  }
  auto j = io::to_json(r);
  j["user_id"] = profile.user_id;
  j["level"] = level;
  j["bias"] = io::to_json(bias);
  emit(o, io::dump(j), out);
}

inline void cmd_estimate(const Options& o, std::ostream& out) {
  if (!o.K) usage("estimate", "--k is required");
  const int K = *o.K;
  const auto data = io::snapshots_from_csv(io::read_file(o.dataset));
  std::map<std::string, std::uint64_t> creations;
  if (!o.creations.empty()) creations = io::creations_from_csv(io::read_file(o.creations));
  std::vector<std::string> pubs;
  for (const auto& [id, _] : creations) pubs.push_back(id);

  const auto vis = o.visibility_model == "ttl"           ? est::VisibilityModel::ttl
                   : o.visibility_model == "finite_fifo" ? est::VisibilityModel::finite_fifo
                                                         : (usage("estimate", "unknown visibility model '" +
                                                                                  o.visibility_model + "'"),
                                                            est::VisibilityModel::ttl);
  const auto measured = est::measured_metrics(data, K, pubs);
  const auto rates = est::effective_rate(data, pubs);
  const auto model = est::multiclass_model(rates, K, vis);
  const auto counts = est::dataset_counts(data);

  json j = {{"K", K},
            {"measured", io::to_json(measured)},
            {"effective_rate", io::to_json(rates)},
            {"model", io::to_json(model)},
            {"snapshots", counts.snapshots}};
  io::LongTable table;
  table.add(measured, K, "measured");
  table.add(model, K, "multiclass_model");
  for (const auto& [k, v] : rates) table.add(k.user_id, k.publisher_id, "effective_rate", K, v, "measured");

  const auto profiles = load_profiles(o.profiles);
  if (!creations.empty() && !profiles.empty()) {
    const auto ttl = est::two_class_ttl(data, creations, profiles,
                                        o.restrict_k ? std::optional<int>(K) : std::nullopt);
    const auto two = est::two_class_model(data, creations, profiles, ttl);
    j["two_class_ttl"] = io::to_json(ttl);
    j["two_class_model"] = io::to_json(two);
    table.add(two, K, "two_class_model");
  }
  emit(o, o.format == "csv" ? table.text : io::dump(j), out);
}

inline void cmd_bias(const Options& o, std::ostream& out) {
  if (o.occupancy.empty()) usage("bias", "--occupancy is required");
  const auto scen = load_pairs(o.occupancy, o.table);
  const auto users = by_user(scen.pairs);
  std::optional<int> K = o.K ? o.K : scen.K;

  std::map<std::string, std::map<std::string, double>> base_by_user;
  std::map<std::string, double> uniform;
  const bool use_uniform = o.baseline == "uniform";
  if (use_uniform) {
    if (o.catalog.empty()) usage("bias", "the uniform baseline needs --catalog");
    if (!K) usage("bias", "--k is required");
    uniform = core::uniform_fifo_baseline(load_catalog(o.catalog), *K).occupancy;
  } else {
    const auto b = load_pairs(o.baseline, o.table);
    if (!K) K = b.K;
    if (!K) usage("bias", "--k is required");
    base_by_user = by_user(b.pairs);
  }

  std::vector<json> docs;
  io::LongTable table;
  for (const auto& [user, occ] : users) {
    const std::map<std::string, double>* base = &uniform;
    if (!use_uniform) {
      auto it = base_by_user.find(user);
      if (it == base_by_user.end() && base_by_user.size() == 1) it = base_by_user.begin();
      if (it == base_by_user.end()) usage("bias", "baseline has no entry for user '" + user + "'");
      base = &it->second;
    }
    const auto rep = alloc::compute_bias(occ, *base, *K, o.scenario.empty() ? "custom" : o.scenario);
    auto j = io::to_json(rep);
    j["user_id"] = user;
    docs.push_back(std::move(j));
    for (const auto& [id, b] : rep.bias) table.add(user, id, "bias", *K, b, rep.scenario);
  }
  if (docs.empty()) usage("bias", "occupancy source is empty");
  emit(o, o.format == "csv" ? table.text : io::dump(one_or_many(std::move(docs))), out);
}

inline void cmd_validate(const Options& o, std::ostream& out) {
  if (o.model.empty() || o.measured.empty()) usage("validate", "--model and --measured are required");
  if (o.metric != "occupancy" && o.metric != "visibility")
    usage("validate", "unknown metric '" + o.metric + "'");
  const auto model = load_pairs(o.model, o.model_table);
  const auto measured = load_pairs(o.measured, o.measured_table);
  std::vector<double> x, y;
  for (const auto& [k, m] : model.pairs) {
    auto it = measured.pairs.find(k);
    if (it == measured.pairs.end()) continue;
    const bool occ = o.metric == "occupancy";
    x.push_back(occ ? m.occupancy : m.visibility);
    y.push_back(occ ? it->second.occupancy : it->second.visibility);
  }
  const auto rep = est::ols_validate(x, y);
  if (o.format == "csv") {
    std::string s = "beta0,beta1,r_squared,rmse,p_value_beta1,n\n";
    s += io::format_double(rep.beta0) + "," + io::format_double(rep.beta1) + "," +
         io::format_double(rep.r_squared) + "," + io::format_double(rep.rmse) + "," +
         io::format_double(rep.p_value_beta1) + "," + std::to_string(rep.n) + "\n";
    emit(o, s, out);
    return;
  }
  auto j = io::to_json(rep);
  j["metric"] = o.metric;
  emit(o, io::dump(j), out);
}

inline std::string error_record(std::string_view kind, std::string_view module, std::string_view op,
                                std::string_view msg) {
  return json{{"error", {{"kind", kind}, {"module", module}, {"operation", op}, {"message", msg}}}}.dump() +
         "\n";
}

}  // namespace detail

/// Exit status: 0 success, 1 library or input error, 2 usage error.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout,
               std::ostream& err = std::cerr) {
  Options o;
  CLI::App app{"feedlab: feed occupancy models, simulation, fair allocation and estimation"};
  app.require_subcommand(1, 1);

  auto common = [&](CLI::App* s) {
    s->add_option("--out", o.out, "Output file (default stdout)");
    s->add_option("--format", o.format, "json or csv")->check(CLI::IsMember({"json", "csv"}));
  };
  auto add_k = [&](CLI::App* s) { s->add_option("--k", o.K, "Feed positions of interest")->check(CLI::PositiveNumber); };

  auto* model = app.add_subcommand("model", "Analytical metrics from a catalog and profile");
  model->add_option("--catalog", o.catalog)->required();
  model->add_option("--profile", o.profiles)->required();
  model->add_option("--feed-config", o.feed_config);
  model->add_option("--model-kind", o.model_kind)
      ->check(CLI::IsMember({"ttl", "filtered_fifo", "finite_fifo", "uniform_fifo"}));
  model->add_option("--hit-mode", o.hit_mode);
  add_k(model);
  common(model);

  auto* simulate = app.add_subcommand("simulate", "Monte Carlo simulation of a feed");
  simulate->add_option("--catalog", o.catalog)->required();
  simulate->add_option("--profile", o.profiles)->required();
  simulate->add_option("--feed-config", o.feed_config);
  simulate->add_option("--sim-config", o.sim_config);
  simulate->add_option("--seed", o.seed);
  simulate->add_option("--replications", o.replications);
  simulate->add_option("--mode", o.mode);
  simulate->add_option("--horizon", o.horizon, "Simulated time horizon");
  simulate->add_option("--arrivals", o.arrivals, "Horizon as a count of generated posts");
  simulate->add_option("--warmup", o.warmup);
  simulate->add_option("--snapshot-interval", o.snapshot_interval);
  simulate->add_option("--ttl-distribution", o.ttl_distribution);
  simulate->add_flag("--topk-view", o.topk_view);
  simulate->add_option("--threads", o.threads);
  simulate->add_option("--snapshots-out", o.snapshots_out);
  simulate->add_option("--creations-out", o.creations_out);
  add_k(simulate);
  common(simulate);

  auto* allocate = app.add_subcommand("allocate", "Fair allocation of the feed budget");
  allocate->add_option("--request", o.request);
  allocate->add_option("--catalog", o.catalog);
  allocate->add_option("--profile", o.profiles);
  allocate->add_option("--criterion", o.criterion)
      ->check(CLI::IsMember({"proportional", "potential_delay", "max_min", "generic"}));
  allocate->add_option("--alpha", o.alpha);
  allocate->add_option("--hit-mode", o.hit_mode);
  allocate->add_option("--tol", o.tol);
  allocate->add_option("--level", o.level)->check(CLI::IsMember({"publisher", "class"}));
  allocate->add_option("--scenario", o.scenario);
  add_k(allocate);
  common(allocate);

  auto* estimate = app.add_subcommand("estimate", "Measured metrics and parameter estimates");
  estimate->add_option("--dataset", o.dataset)->required();
  estimate->add_option("--creations", o.creations);
  estimate->add_option("--profile", o.profiles);
  estimate->add_option("--visibility-model", o.visibility_model);
  estimate->add_flag("--restrict-k", o.restrict_k, "Count class impressions in the top K only");
  add_k(estimate);
  common(estimate);

  auto* bias = app.add_subcommand("bias", "Bias of a scenario against a baseline");
  bias->add_option("--occupancy", o.occupancy, "Scenario occupancy source");
  bias->add_option("--baseline", o.baseline, "'uniform' or an occupancy source");
  bias->add_option("--catalog", o.catalog);
  bias->add_option("--scenario", o.scenario);
  bias->add_option("--table", o.table, "Pair table to read from estimate reports");
  add_k(bias);
  common(bias);

  auto* validate = app.add_subcommand("validate", "OLS of measured against model values");
  validate->add_option("--model", o.model);
  validate->add_option("--measured", o.measured);
  validate->add_option("--model-table", o.model_table);
  validate->add_option("--measured-table", o.measured_table);
  validate->add_option("--metric", o.metric);
  common(validate);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << detail::error_record("parse_error", "cli", "arguments", e.what());
    return 2;
  }

  const std::string name = app.get_subcommands().front()->get_name();
  try {
    if (name == "model") detail::cmd_model(o, out);
    else if (name == "simulate") detail::cmd_simulate(o, out);
    else if (name == "allocate") detail::cmd_allocate(o, out);
    else if (name == "estimate") detail::cmd_estimate(o, out);
    else if (name == "bias") detail::cmd_bias(o, out);
    else detail::cmd_validate(o, out);
  } catch (const Error& e) {
    err << detail::error_record(to_string(e.kind()), e.module(), e.operation(), e.detail());
    return e.module() == "cli" ? 2 : 1;
  } catch (const std::exception& e) {
    err << detail::error_record("internal", "cli", name, e.what());
    return 1;
  }
  return 0;
}

}  // namespace feedlab::cli
