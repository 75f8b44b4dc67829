#pragma once

// Discrete-event Monte Carlo engine for a single user's feed. Publishers emit
// Poisson posts; each post is admitted with the user's filter probability and
// then either lives for a TTL (ttl mode) or enters a K-slot shift register
// (finite_fifo mode).

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <deque>
#include <exception>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <queue>
#include <string>
#include <string_view>
#include <thread>
#include <utility>
#include <vector>

#include "feedlab/error.hpp"
#include "feedlab/rng.hpp"
#include "feedlab/snapshot.hpp"
#include "feedlab/types.hpp"

namespace feedlab::sim {

enum class Mode { ttl, finite_fifo };
enum class HorizonKind { time, arrivals };
enum class TtlDistribution { deterministic, exponential };

inline std::string_view to_string(Mode m) { return m == Mode::ttl ? "ttl" : "finite_fifo"; }
inline std::string_view to_string(HorizonKind h) {
  return h == HorizonKind::time ? "time" : "arrivals";
}
inline std::string_view to_string(TtlDistribution d) {
  return d == TtlDistribution::deterministic ? "deterministic" : "exponential";
}

struct SimConfig {
  PublisherCatalog catalog;
  UserProfile profile;
  FeedConfig feed;
  Mode mode = Mode::ttl;
  HorizonKind horizon_kind = HorizonKind::time;
  double horizon = 1000.0;      // simulated time, or number of generated posts
  double warmup = 0.2;          // leading fraction of the horizon discarded
  std::uint64_t seed = 1;
  double snapshot_interval = 1.0;
  int replications = 1;
  TtlDistribution ttl_distribution = TtlDistribution::deterministic;
  // TTL mode: count only the K most recent live posts in the time averages.
  bool topk_view = false;
  unsigned threads = 0;  // 0 = hardware concurrency

  void validate() const {
    auto bad = [](const std::string& msg) {
      detail::fail(ErrorKind::domain, "simulator", "SimConfig", msg);
    };
    feed.validate();
    profile.validate();
    if (catalog.empty()) bad("empty catalog");
    if (!(horizon > 0.0) || !std::isfinite(horizon)) bad("horizon must be positive");
    if (!(warmup >= 0.0 && warmup < 1.0)) bad("warmup fraction must lie in [0, 1)");
    if (horizon_kind == HorizonKind::arrivals && std::floor(horizon) != horizon)
      bad("arrival horizon must be an integer count");
    if (!(snapshot_interval > 0.0) || !std::isfinite(snapshot_interval))
      bad("snapshot_interval must be > 0");
    if (replications < 1) bad("replications must be >= 1");
    if (mode == Mode::ttl)
      for (const auto& p : catalog.publishers()) (void)feed.ttl_for(p.id, profile.liked(p.id));
  }
};

struct MetricPair {
  double occupancy = 0.0;
  double visibility = 0.0;
};

struct SimResult {
  FeedMetrics metrics;                              // replication means
  std::map<std::string, MetricPair> ci_halfwidth;   // 95% normal-approximation
  std::map<std::string, MetricPair> std_error;
  std::map<std::string, std::uint64_t> generated_counts;  // whole horizon, all replications
  std::map<std::string, std::uint64_t> admitted_counts;
  std::uint64_t events_processed = 0;
  std::uint64_t snapshots_taken = 0;
  int replications = 0;
  std::vector<FeedMetrics> per_replication;
};

struct SimulationRun {
  SimResult result;
  SnapshotDataset snapshots;
};

namespace detail {

struct ReplicationOutput {
  std::vector<double> occupancy;
  std::vector<double> visibility;
  std::vector<double> eff_rate;
  std::vector<std::uint64_t> generated;
  std::vector<std::uint64_t> admitted;
  std::vector<std::uint64_t> created_in_window;
  std::uint64_t events = 0;
  std::uint64_t snapshots = 0;
  std::uint64_t admitted_total = 0;
  std::vector<SnapshotRecord> records;
};

struct LivePost {
  std::size_t publisher;
  std::uint64_t sequence;  // per-publisher generation index
};

inline ReplicationOutput run_replication(const SimConfig& cfg, int rep, bool record) {
  const auto& pubs = cfg.catalog.publishers();
  const std::size_t J = pubs.size();
  const int K = cfg.feed.K;
  const bool ttl_mode = cfg.mode == Mode::ttl;
  const bool time_horizon = cfg.horizon_kind == HorizonKind::time;
  constexpr double inf = std::numeric_limits<double>::infinity();

  // Publishing is user-independent: every user simulated with the same seed
  // sees the same posts. Filtering and TTL draws come from per-user streams.
  std::vector<rng::Stream> streams, decisions;
  std::vector<double> filter(J), ttl(J, 0.0);
  streams.reserve(J);
  decisions.reserve(J);
  const auto user_seed = rng::splitmix64(cfg.seed ^ rng::fnv1a64("user/" + cfg.profile.user_id));
  for (std::size_t j = 0; j < J; ++j) {
    streams.emplace_back(rng::stream_seed(cfg.seed, static_cast<std::uint64_t>(rep), pubs[j].id));
    decisions.emplace_back(rng::stream_seed(user_seed, static_cast<std::uint64_t>(rep), pubs[j].id));
    filter[j] = cfg.profile.filter_prob(pubs[j].id);
    if (ttl_mode) ttl[j] = cfg.feed.ttl_for(pubs[j].id, cfg.profile.liked(pubs[j].id));
  }

  using Arrival = std::pair<double, std::size_t>;
  std::priority_queue<Arrival, std::vector<Arrival>, std::greater<>> arrivals;
  for (std::size_t j = 0; j < J; ++j)
    if (pubs[j].rate > 0.0) arrivals.emplace(streams[j].exponential(pubs[j].rate), j);

  // TTL state: live posts keyed by global admission order, plus expiries.
  std::map<std::uint64_t, LivePost> live;
  using Expiry = std::pair<double, std::uint64_t>;
  std::priority_queue<Expiry, std::vector<Expiry>, std::greater<>> expiries;
  // FIFO state: slot 1 at the front.
  std::deque<LivePost> slots;

  ReplicationOutput out;
  out.occupancy.assign(J, 0.0);
  out.visibility.assign(J, 0.0);
  out.eff_rate.assign(J, 0.0);
  out.generated.assign(J, 0);
  out.admitted.assign(J, 0);
  out.created_in_window.assign(J, 0);
  std::vector<std::uint64_t> admitted_in_window(J, 0);
  std::vector<long> counts(J, 0);
  std::vector<double> last_t(J, 0.0);

  bool measuring = false;
  double t_w = 0.0;
  const auto total_arrivals = static_cast<std::uint64_t>(cfg.horizon);
  const auto warm_arrivals =
      time_horizon ? 0 : static_cast<std::uint64_t>(std::floor(cfg.warmup * cfg.horizon));
  if (time_horizon) t_w = cfg.warmup * cfg.horizon;
  std::uint64_t arrivals_seen = 0;
  std::uint64_t global_seq = 0;
  std::uint64_t snap_k = 1;
  const std::uint64_t snap_max =
      time_horizon ? static_cast<std::uint64_t>(
                         std::floor((cfg.horizon - t_w) / cfg.snapshot_interval + 1e-9))
                   : std::numeric_limits<std::uint64_t>::max();

  auto touch = [&](std::size_t j, double t) {
    if (measuring) {
      const double dt = t - last_t[j];
      out.occupancy[j] += static_cast<double>(counts[j]) * dt;
      if (counts[j] > 0) out.visibility[j] += dt;
    }
    last_t[j] = t;
  };

  auto start_window = [&](double t) {
    measuring = true;
    t_w = t;
    std::fill(last_t.begin(), last_t.end(), t);
  };

  // Counts of the posts that enter the time averages.
  std::vector<long> view(J, 0);
  auto refresh_counts = [&](double t) {
    if (!(ttl_mode && cfg.topk_view)) return;
    std::fill(view.begin(), view.end(), 0);
    int taken = 0;
    for (auto it = live.rbegin(); it != live.rend() && taken < K; ++it, ++taken)
      ++view[it->second.publisher];
    for (std::size_t j = 0; j < J; ++j)
      if (view[j] != counts[j]) {
        touch(j, t);
        counts[j] = view[j];
      }
  };

  auto post_id = [&](const LivePost& p) {
    return pubs[p.publisher].id + "#" + std::to_string(rep) + "." + std::to_string(p.sequence);
  };

  auto take_snapshot = [&]() {
    ++out.snapshots;
    ++out.events;
    if (!record) return;
    const std::uint64_t id = out.snapshots;
    int pos = 0;
    auto emit = [&](const LivePost& p) {
      out.records.push_back({cfg.profile.user_id, id, ++pos, pubs[p.publisher].id, post_id(p)});
    };
    if (ttl_mode) {
      for (auto it = live.rbegin(); it != live.rend() && pos < K; ++it) emit(it->second);
    } else {
      for (const auto& p : slots) emit(p);
    }
    if (pos == 0) out.records.push_back({cfg.profile.user_id, id, 0, "", ""});
  };

  if (!time_horizon && warm_arrivals == 0) start_window(0.0);
  if (time_horizon && t_w == 0.0) start_window(0.0);

  double t_end = 0.0;
  while (true) {
    const double t_arr = arrivals.empty() ? inf : arrivals.top().first;
    const double t_exp = expiries.empty() ? inf : expiries.top().first;
    const bool is_expiry = t_exp <= t_arr;
    double t_next = is_expiry ? t_exp : t_arr;
    bool final = false;
    if (time_horizon) {
      if (t_next > cfg.horizon) {
        t_next = cfg.horizon;
        final = true;
      }
      if (!measuring && t_w <= t_next) start_window(t_w);
    } else if (!is_expiry) {
      if (t_arr == inf)
        feedlab::detail::fail(ErrorKind::insufficient_data, "simulator", "simulate",
                              "no publisher generates posts");
      if (!measuring && arrivals_seen + 1 == warm_arrivals) start_window(t_arr);
    }

    // At the end of a time horizon the remaining instants are taken even if
    // rounding pushed the last one a hair past the horizon.
    while (measuring && snap_k <= snap_max &&
           ((final && time_horizon) ||
            t_w + static_cast<double>(snap_k) * cfg.snapshot_interval <= t_next)) {
      take_snapshot();
      ++snap_k;
    }

    if (final) {
      t_end = t_next;
      for (std::size_t j = 0; j < J; ++j) touch(j, t_end);
      break;
    }

    ++out.events;
    if (is_expiry) {
      const auto seq = expiries.top().second;
      expiries.pop();
      auto it = live.find(seq);
      const std::size_t j = it->second.publisher;
      live.erase(it);
      if (cfg.topk_view) {
        refresh_counts(t_exp);
      } else {
        touch(j, t_exp);
        --counts[j];
      }
      continue;
    }

    const std::size_t j = arrivals.top().second;
    arrivals.pop();
    ++arrivals_seen;
    const std::uint64_t seq = out.generated[j]++;
    if (measuring) ++out.created_in_window[j];
    if (decisions[j].bernoulli(filter[j])) {
      ++out.admitted[j];
      ++out.admitted_total;
      if (measuring) ++admitted_in_window[j];
      const LivePost post{j, seq};
      if (ttl_mode) {
        double life = ttl[j];
        if (cfg.ttl_distribution == TtlDistribution::exponential && life > 0.0)
          life = decisions[j].exponential(1.0 / life);
        live.emplace(global_seq, post);
        expiries.emplace(t_arr + life, global_seq);
        ++global_seq;
        if (cfg.topk_view) {
          refresh_counts(t_arr);
        } else {
          touch(j, t_arr);
          ++counts[j];
        }
      } else {
        touch(j, t_arr);
        ++counts[j];
        slots.push_front(post);
        if (slots.size() > static_cast<std::size_t>(K)) {
          const std::size_t evicted = slots.back().publisher;
          touch(evicted, t_arr);
          --counts[evicted];
          slots.pop_back();
        }
      }
    }
    arrivals.emplace(t_arr + streams[j].exponential(pubs[j].rate), j);
    // An arrival horizon closes at the N-th generated post.
    if (!time_horizon && arrivals_seen == total_arrivals) {
      t_end = t_arr;
      for (std::size_t i = 0; i < J; ++i) touch(i, t_end);
      break;
    }
  }

  if (out.admitted_total == 0)
    feedlab::detail::fail(ErrorKind::insufficient_data, "simulator", "simulate",
                          "no post was admitted over the horizon in replication " +
                              std::to_string(rep));
  const double window = t_end - t_w;
  if (!(window > 0.0))
    feedlab::detail::fail(ErrorKind::insufficient_data, "simulator", "simulate",
                          "empty measurement window in replication " + std::to_string(rep));
  for (std::size_t j = 0; j < J; ++j) {
    out.occupancy[j] /= window;
    out.visibility[j] /= window;
    out.eff_rate[j] = static_cast<double>(admitted_in_window[j]) / window;
  }
  return out;
}

inline std::vector<ReplicationOutput> run_all(const SimConfig& cfg, bool record) {
  const auto R = static_cast<std::size_t>(cfg.replications);
  std::vector<ReplicationOutput> outs(R);
  std::vector<std::exception_ptr> errors(R);
  unsigned workers = cfg.threads != 0 ? cfg.threads : std::thread::hardware_concurrency();
  workers = std::max(1u, std::min<unsigned>(workers, static_cast<unsigned>(R)));
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t r = next++; r < R; r = next++) {
      try {
        outs[r] = run_replication(cfg, static_cast<int>(r), record);
      } catch (...) {
        errors[r] = std::current_exception();
      }
    }
  };
  if (workers == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
  return outs;
}

}  // namespace detail

/// Runs every replication and merges them in replication order. Snapshot ids
/// are renumbered to run consecutively across replications.
inline SimulationRun simulate_run(const SimConfig& cfg, bool record_snapshots) {
  cfg.validate();
  if (!(cfg.catalog.total_rate() > 0.0))
    feedlab::detail::fail(ErrorKind::insufficient_data, "simulator", "simulate",
                          "catalog total rate is zero");
  auto outs = detail::run_all(cfg, record_snapshots);
  const auto& pubs = cfg.catalog.publishers();
  const std::size_t J = pubs.size();
  const double R = static_cast<double>(outs.size());

  SimulationRun run;
  SimResult& res = run.result;
  res.replications = cfg.replications;
  res.metrics.user_id = cfg.profile.user_id;
  for (std::size_t j = 0; j < J; ++j) {
    const auto& id = pubs[j].id;
    double sn = 0, sv = 0, se = 0;
    for (const auto& o : outs) {
      sn += o.occupancy[j];
      sv += o.visibility[j];
      se += o.eff_rate[j];
    }
    const double mn = sn / R, mv = sv / R;
    double qn = 0, qv = 0;
    for (const auto& o : outs) {
      qn += (o.occupancy[j] - mn) * (o.occupancy[j] - mn);
      qv += (o.visibility[j] - mv) * (o.visibility[j] - mv);
    }
    MetricPair err;
    if (outs.size() > 1) {
      err.occupancy = std::sqrt(qn / (R - 1.0) / R);
      err.visibility = std::sqrt(qv / (R - 1.0) / R);
    }
    res.metrics.occupancy[id] = mn;
    res.metrics.visibility[id] = mv;
    res.metrics.hit_prob[id] = mv;
    res.metrics.effective_rates[id] = se / R;
    res.std_error[id] = err;
    res.ci_halfwidth[id] = {1.96 * err.occupancy, 1.96 * err.visibility};
    std::uint64_t g = 0, a = 0, c = 0;
    for (const auto& o : outs) {
      g += o.generated[j];
      a += o.admitted[j];
      c += o.created_in_window[j];
    }
    res.generated_counts[id] = g;
    res.admitted_counts[id] = a;
    if (record_snapshots) run.snapshots.creation_counts[id] = c;
  }
  std::uint64_t offset = 0;
  for (auto& o : outs) {
    res.events_processed += o.events;
    res.snapshots_taken += o.snapshots;
    FeedMetrics m;
    m.user_id = cfg.profile.user_id;
    for (std::size_t j = 0; j < J; ++j) {
      m.occupancy[pubs[j].id] = o.occupancy[j];
      m.visibility[pubs[j].id] = o.visibility[j];
      m.hit_prob[pubs[j].id] = o.visibility[j];
      m.effective_rates[pubs[j].id] = o.eff_rate[j];
    }
    res.per_replication.push_back(std::move(m));
    if (record_snapshots) {
      for (auto& rec : o.records) {
        rec.snapshot_id += offset;
        run.snapshots.records.push_back(std::move(rec));
      }
      offset += o.snapshots;
    }
  }
  return run;
}

inline SimResult simulate(const SimConfig& cfg) { return simulate_run(cfg, false).result; }

/// Ordered top-K contents at every snapshot instant after warmup.
inline SnapshotDataset sample_snapshots(const SimConfig& cfg) {
  return simulate_run(cfg, true).snapshots;
}

}  // namespace feedlab::sim
