#pragma once

// Analytical occupancy and visibility of publishers in a user's feed under the
// TTL (M/G/inf) model and its FIFO special cases.

#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "feedlab/error.hpp"
#include "feedlab/types.hpp"

namespace feedlab::core {

namespace detail {

inline void require(bool ok, ErrorKind kind, std::string_view op, const std::string& msg) {
  if (!ok) feedlab::detail::fail(kind, "core_model", op, msg);
}

inline void require_k(int K, std::string_view op) {
  require(K >= 1, ErrorKind::domain, op, "K must be >= 1");
}

inline void require_shares(double eff, double total, std::string_view op) {
  require(eff >= 0.0, ErrorKind::domain, op, "effective rate must be >= 0");
  require(total > 0.0, ErrorKind::degenerate_input, op, "total rate must be > 0");
  require(eff <= total, ErrorKind::domain, op, "effective rate exceeds total rate");
}

}  // namespace detail

/// Little's law: expected number of live posts of a publisher.
inline double ttl_occupancy(double rate, double ttl) {
  detail::require(rate >= 0.0, ErrorKind::domain, "ttl_occupancy", "rate must be >= 0");
  detail::require(ttl >= 0.0, ErrorKind::domain, "ttl_occupancy", "ttl must be >= 0");
  return rate * ttl;
}

/// P[at least one post present] for an M/G/inf queue with mean occupancy N.
inline double ttl_visibility(double occupancy) {
  detail::require(occupancy >= 0.0, ErrorKind::domain, "ttl_visibility",
                  "occupancy must be >= 0");
  return -std::expm1(-occupancy);
}

/// Common TTL that makes the expected feed size equal K.
inline double ttl_budget_timer(const std::map<std::string, double>& effective_rates, int K) {
  detail::require_k(K, "ttl_budget_timer");
  double total = 0.0;
  for (const auto& [id, r] : effective_rates) {
    detail::require(r >= 0.0, ErrorKind::domain, "ttl_budget_timer",
                    "negative rate for '" + id + "'");
    total += r;
  }
  detail::require(total > 0.0, ErrorKind::degenerate_input, "ttl_budget_timer",
                  "total effective rate is zero");
  return static_cast<double>(K) / total;
}

inline double filtered_fifo_occupancy(double eff_rate, double total_rate, int K) {
  detail::require_k(K, "filtered_fifo_occupancy");
  detail::require_shares(eff_rate, total_rate, "filtered_fifo_occupancy");
  return eff_rate * static_cast<double>(K) / total_rate;
}

/// Mean sojourn of a post in a K-slot FIFO fed at total_rate.
inline double fifo_system_time(double total_rate, int K) {
  detail::require_k(K, "fifo_system_time");
  detail::require(total_rate > 0.0, ErrorKind::degenerate_input, "fifo_system_time",
                  "total rate must be > 0");
  return static_cast<double>(K) / total_rate;
}

/// Probability that a publisher has at least one post among the K slots of a
/// FIFO feed: 1 - (others/total)^K.
inline double finite_fifo_visibility(double eff_rate, double total_rate, int K) {
  detail::require_k(K, "finite_fifo_visibility");
  detail::require_shares(eff_rate, total_rate, "finite_fifo_visibility");
  if (K == 1) return filtered_fifo_occupancy(eff_rate, total_rate, 1);
  const double shift = (total_rate - eff_rate) / total_rate;
  return 1.0 - std::pow(shift, K);
}

/// Stationary law of the topmost position X of a publisher's posts in a K-slot
/// FIFO; index x-1 holds P[X = x] and index K holds the "not in feed" state.
inline std::vector<double> fifo_ctmc_distribution(double eff_rate, double other_rate, int K) {
  detail::require_k(K, "fifo_ctmc_distribution");
  detail::require(eff_rate > 0.0, ErrorKind::degenerate_input, "fifo_ctmc_distribution",
                  "effective rate must be > 0; the chain is absorbed at K+1");
  detail::require(other_rate >= 0.0, ErrorKind::domain, "fifo_ctmc_distribution",
                  "other rate must be >= 0");
  const double total = eff_rate + other_rate;
  const double shift = other_rate / total;
  const double enter = eff_rate / total;
  std::vector<double> pi(static_cast<std::size_t>(K) + 1);
  double tail = 1.0;  // shift^(x-1)
  for (int x = 1; x <= K; ++x) {
    pi[x - 1] = tail * enter;
    tail *= shift;
  }
  pi[K] = std::pow(shift, K);
  return pi;
}

/// Occupancy of every publisher when all posts are filtered with the same
/// probability. The same for every user.
inline FeedMetrics uniform_fifo_baseline(const PublisherCatalog& catalog, int K) {
  detail::require_k(K, "uniform_fifo_baseline");
  detail::require(!catalog.empty(), ErrorKind::degenerate_input, "uniform_fifo_baseline",
                  "empty catalog");
  const double total = catalog.total_rate();
  detail::require(total > 0.0, ErrorKind::degenerate_input, "uniform_fifo_baseline",
                  "catalog total rate is zero");
  FeedMetrics m;
  for (const auto& p : catalog.publishers()) {
    const double n = p.rate * static_cast<double>(K) / total;
    m.occupancy[p.id] = n;
    m.visibility[p.id] = ttl_visibility(n);
    m.hit_prob[p.id] = n / static_cast<double>(K);
    m.effective_rates[p.id] = p.rate;
  }
  return m;
}

/// h(N) for the three hit-probability instantiations.
inline double hit_probability(double occupancy, int K, HitMode mode) {
  detail::require_k(K, "hit_probability");
  detail::require(occupancy >= 0.0, ErrorKind::domain, "hit_probability",
                  "occupancy must be >= 0");
  const double k = static_cast<double>(K);
  switch (mode) {
    case HitMode::normalized_occupancy:
      detail::require(occupancy <= k, ErrorKind::domain, "hit_probability",
                      "occupancy exceeds K");
      return occupancy / k;
    case HitMode::ttl_visibility:
      return -std::expm1(-occupancy);
    case HitMode::fifo_visibility:
      detail::require(occupancy <= k, ErrorKind::domain, "hit_probability",
                      "occupancy exceeds K");
      if (K == 1) return occupancy;
      return 1.0 - std::pow(1.0 - occupancy / k, K);
  }
  return 0.0;
}

/// dh/dN; the caller guarantees 0 <= N <= K for the bounded modes.
inline double hit_probability_derivative(double occupancy, int K, HitMode mode) {
  const double k = static_cast<double>(K);
  switch (mode) {
    case HitMode::normalized_occupancy: return 1.0 / k;
    case HitMode::ttl_visibility: return std::exp(-occupancy);
    case HitMode::fifo_visibility:
      if (K == 1) return 1.0;
      return std::pow(1.0 - occupancy / k, K - 1);
  }
  return 0.0;
}

// Whole-feed models for one user.

enum class ModelKind { ttl, filtered_fifo, finite_fifo, uniform_fifo };

inline std::string_view to_string(ModelKind m) {
  switch (m) {
    case ModelKind::ttl: return "ttl";
    case ModelKind::filtered_fifo: return "filtered_fifo";
    case ModelKind::finite_fifo: return "finite_fifo";
    case ModelKind::uniform_fifo: return "uniform_fifo";
  }
  return "unknown";
}

inline std::optional<ModelKind> parse_model_kind(std::string_view s) {
  if (s == "ttl") return ModelKind::ttl;
  if (s == "filtered_fifo") return ModelKind::filtered_fifo;
  if (s == "finite_fifo") return ModelKind::finite_fifo;
  if (s == "uniform_fifo") return ModelKind::uniform_fifo;
  return std::nullopt;
}

inline HitMode default_hit_mode(ModelKind m) {
  switch (m) {
    case ModelKind::ttl:
    case ModelKind::filtered_fifo: return HitMode::ttl_visibility;
    case ModelKind::finite_fifo: return HitMode::fifo_visibility;
    case ModelKind::uniform_fifo: return HitMode::normalized_occupancy;
  }
  return HitMode::normalized_occupancy;
}

/// Effective (post-filter) rate of every catalog publisher at this user.
inline std::map<std::string, double> effective_rates(const PublisherCatalog& catalog,
                                                     const UserProfile& profile) {
  std::map<std::string, double> rates;
  for (const auto& p : catalog.publishers()) rates[p.id] = profile.filter_prob(p.id) * p.rate;
  return rates;
}

inline FeedMetrics evaluate_model(const PublisherCatalog& catalog, const UserProfile& profile,
                                  const FeedConfig& feed, ModelKind kind, HitMode hit_mode) {
  feed.validate();
  profile.validate();
  const int K = feed.K;
  FeedMetrics m;
  m.user_id = profile.user_id;
  if (kind == ModelKind::uniform_fifo) {
    m = uniform_fifo_baseline(catalog, K);
    m.user_id = profile.user_id;
  } else {
    m.effective_rates = effective_rates(catalog, profile);
    const double total = m.total_effective_rate();
    for (const auto& p : catalog.publishers()) {
      const double eff = m.effective_rates[p.id];
      double n = 0.0;
      double vis = 0.0;
      switch (kind) {
        case ModelKind::ttl:
          n = ttl_occupancy(eff, feed.ttl_for(p.id, profile.liked(p.id)));
          vis = ttl_visibility(n);
          break;
        case ModelKind::filtered_fifo:
          n = filtered_fifo_occupancy(eff, total, K);
          vis = ttl_visibility(n);
          break;
        case ModelKind::finite_fifo:
          n = filtered_fifo_occupancy(eff, total, K);
          vis = finite_fifo_visibility(eff, total, K);
          break;
        case ModelKind::uniform_fifo: break;
      }
      m.occupancy[p.id] = n;
      m.visibility[p.id] = vis;
    }
  }
  m.hit_prob.clear();
  for (const auto& [id, n] : m.occupancy) m.hit_prob[id] = hit_probability(n, K, hit_mode);
  return m;
}

}  // namespace feedlab::core
