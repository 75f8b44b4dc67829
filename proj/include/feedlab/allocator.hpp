#pragma once

// Utility-maximizing split of the K-slot feed budget across publishers or
// like-classes, and the occupancy bias against the unfiltered FIFO baseline.

#include <algorithm>
#include <cmath>
#include <concepts>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "feedlab/core_model.hpp"
#include "feedlab/error.hpp"
#include "feedlab/types.hpp"

namespace feedlab::alloc {

enum class Criterion { proportional, potential_delay, max_min, generic };

inline std::string_view to_string(Criterion c) {
  switch (c) {
    case Criterion::proportional: return "proportional";
    case Criterion::potential_delay: return "potential_delay";
    case Criterion::max_min: return "max_min";
    case Criterion::generic: return "generic";
  }
  return "unknown";
}

inline std::optional<Criterion> parse_criterion(std::string_view s) {
  if (s == "proportional") return Criterion::proportional;
  if (s == "potential_delay") return Criterion::potential_delay;
  if (s == "max_min") return Criterion::max_min;
  if (s == "generic") return Criterion::generic;
  return std::nullopt;
}

/// Bias scenario label for a criterion (Face is reserved for measurements).
inline std::string scenario_label(Criterion c) {
  switch (c) {
    case Criterion::proportional: return "PropF";
    case Criterion::potential_delay: return "PotentF";
    case Criterion::max_min: return "MaxMinF";
    case Criterion::generic: return "custom";
  }
  return "custom";
}

struct UtilitySpec {
  double alpha = 1.0;
  HitMode hit_mode = HitMode::normalized_occupancy;
};

struct AllocationResult {
  std::map<std::string, double> occupancy;
  std::map<std::string, double> ttl;
  std::optional<double> multiplier;  // none for max-min
  Criterion criterion = Criterion::proportional;
  double alpha = 1.0;
  HitMode hit_mode = HitMode::normalized_occupancy;
  double kkt_residual = 0.0;
  int K = 1;
  // Filled by class_based_allocate only.
  std::map<std::string, double> class_occupancy;
  std::map<std::string, double> class_ttl;

  double total_occupancy() const noexcept {
    double total = 0.0;
    for (const auto& [_, n] : occupancy) total += n;
    return total;
  }
};

struct BiasReport {
  std::map<std::string, double> bias;
  std::string scenario;
  std::map<std::string, double> baseline_occupancy;
  int K = 1;
};

namespace detail {

inline void require(bool ok, ErrorKind kind, std::string_view op, const std::string& msg) {
  if (!ok) feedlab::detail::fail(kind, "allocator", op, msg);
}

}  // namespace detail

/// w * h^-alpha, the derivative of the alpha-fair utility in h. Infinite at
/// h = 0 when alpha > 0.
inline double alpha_fair_marginal(double h, double weight, double alpha) {
  detail::require(h >= 0.0, ErrorKind::domain, "alpha_fair_marginal", "h must be >= 0");
  detail::require(weight > 0.0, ErrorKind::domain, "alpha_fair_marginal", "weight must be > 0");
  detail::require(alpha >= 0.0, ErrorKind::domain, "alpha_fair_marginal", "alpha must be >= 0");
  return weight * std::pow(h, -alpha);
}

/// h such that alpha_fair_marginal(h, weight, alpha) == marginal.
inline double inverse_alpha_fair_marginal(double marginal, double weight, double alpha) {
  detail::require(alpha > 0.0, ErrorKind::domain, "inverse_alpha_fair_marginal",
                  "marginal is constant in h when alpha = 0");
  detail::require(marginal > 0.0 && weight > 0.0, ErrorKind::domain,
                  "inverse_alpha_fair_marginal", "marginal and weight must be > 0");
  return std::pow(weight / marginal, 1.0 / alpha);
}

inline double alpha_fair_utility(double h, double weight, double alpha) {
  if (alpha == 1.0) return weight * std::log(h);
  return weight * std::pow(h, 1.0 - alpha) / (1.0 - alpha);
}

/// A strictly decreasing, continuous composite marginal g(N) on [0, K] with
/// an inverse clipped to [0, K].
template <class M>
concept CompositeMarginal = requires(const M& m, double x) {
  { m(x) } -> std::convertible_to<double>;
  { m.inverse(x) } -> std::convertible_to<double>;
};

/// g(N) = U'(h(N)) h'(N) for an alpha-fair utility composed with a hit mode.
class AlphaFairMarginal {
 public:
  AlphaFairMarginal(double weight, double alpha, HitMode mode, int K)
      : weight_(weight), alpha_(alpha), mode_(mode), K_(K) {
    detail::require(weight > 0.0 && std::isfinite(weight), ErrorKind::domain, "water_fill",
                    "weights must be positive");
    detail::require(alpha >= 0.0, ErrorKind::domain, "water_fill", "alpha must be >= 0");
    detail::require(K >= 1, ErrorKind::domain, "water_fill", "K must be >= 1");
    const bool linear_hit = mode == HitMode::normalized_occupancy ||
                            (mode == HitMode::fifo_visibility && K == 1);
    detail::require(!(alpha == 0.0 && linear_hit), ErrorKind::domain, "water_fill",
                    "marginal utility is constant (alpha = 0 with a linear hit probability)");
  }

  double operator()(double n) const {
    const double h = core::hit_probability(std::clamp(n, 0.0, double(K_)), K_, mode_);
    const double dh = core::hit_probability_derivative(n, K_, mode_);
    if (dh == 0.0) return 0.0;
    return weight_ * std::pow(h, -alpha_) * dh;
  }

  double inverse(double beta) const {
    const double k = static_cast<double>(K_);
    if (mode_ == HitMode::normalized_occupancy) {
      return std::min(k, k * std::pow(weight_ / (k * beta), 1.0 / alpha_));
    }
    if ((*this)(0.0) <= beta) return 0.0;
    if ((*this)(k) >= beta) return k;
    double lo = 0.0;
    double hi = k;
    for (int i = 0; i < 200 && hi - lo > 0.0; ++i) {
      const double mid = 0.5 * (lo + hi);
      if (mid <= lo || mid >= hi) break;
      if ((*this)(mid) > beta)
        lo = mid;
      else
        hi = mid;
    }
    return 0.5 * (lo + hi);
  }

  double weight() const noexcept { return weight_; }

 private:
  double weight_;
  double alpha_;
  HitMode mode_;
  int K_;
};

struct WaterFillSolution {
  std::vector<double> occupancy;
  double multiplier = 0.0;
  double kkt_residual = 0.0;
  long iterations = 0;
};

/// Largest relative KKT violation: budget mismatch, unequal marginals among
/// keys with positive occupancy, and zero-occupancy keys whose marginal at 0
/// exceeds the multiplier.
template <CompositeMarginal M>
double kkt_residual(std::span<const M> marginals, std::span<const double> occupancy,
                    double multiplier, int K) {
  double sum = 0.0;
  for (double n : occupancy) sum += n;
  double worst = std::abs(sum - K) / K;
  const double scale = multiplier > 0.0 ? multiplier : 1.0;
  for (std::size_t j = 0; j < marginals.size(); ++j) {
    if (occupancy[j] < 0.0) return std::numeric_limits<double>::infinity();
    const double g = marginals[j](occupancy[j]);
    if (occupancy[j] > 0.0)
      worst = std::max(worst, std::abs(g - multiplier) / scale);
    else
      worst = std::max(worst, std::max(0.0, g - multiplier) / scale);
  }
  return worst;
}

/// Bisection on the multiplier: N_j(beta) = g_j^{-1}(beta) clipped to [0, K],
/// and beta is moved until the occupancies fill exactly K slots.
template <CompositeMarginal M>
WaterFillSolution water_fill(std::span<const M> marginals, int K, double tol = 1e-10,
                             long max_iterations = 1'000'000) {
  detail::require(K >= 1, ErrorKind::domain, "water_fill", "K must be >= 1");
  detail::require(!marginals.empty(), ErrorKind::degenerate_input, "water_fill", "no keys");
  detail::require(tol > 0.0, ErrorKind::domain, "water_fill", "tol must be > 0");
  const std::size_t J = marginals.size();
  const double k = static_cast<double>(K);
  WaterFillSolution sol;
  sol.occupancy.assign(J, 0.0);

  if (J == 1) {
    sol.occupancy[0] = k;
    sol.multiplier = marginals[0](k);
    sol.kkt_residual =
        kkt_residual<M>(marginals, sol.occupancy, sol.multiplier, K);
    return sol;
  }

  auto fill = [&](double beta) {
    double s = 0.0;
    for (std::size_t j = 0; j < J; ++j) {
      sol.occupancy[j] = marginals[j].inverse(beta);
      s += sol.occupancy[j];
    }
    return s;
  };

  // At the equal split every key's marginal brackets the optimum.
  double lo = std::numeric_limits<double>::infinity();
  double hi = 0.0;
  for (const auto& g : marginals) {
    const double v = g(k / static_cast<double>(J));
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  detail::require(lo > 0.0 && std::isfinite(hi), ErrorKind::domain, "water_fill",
                  "marginal utility must be positive and finite on (0, K)");

  long it = 0;
  while (it < max_iterations) {
    ++it;
    const double mid = std::sqrt(lo) * std::sqrt(hi);
    if (!(mid > lo && mid < hi)) break;
    const double s = fill(mid);
    if (s == k) {
      // Exact fill, possibly on a flat stretch where capped or zero keys
      // leave the sum unchanged; any multiplier here is optimal.
      lo = hi = mid;
      break;
    }
    if (s > k)
      lo = mid;
    else
      hi = mid;
  }
  sol.iterations = it;
  const double beta = std::sqrt(lo) * std::sqrt(hi);
  double sum = fill(beta);

  // Rescale away the rounding remainder. Keys with equal occupancy get equal
  // shares, and every key moves by the same relative amount, so steep
  // marginals near zero are not thrown off by an absolute nudge.
  if (sum > 0.0 && sum != k)
    for (double& n : sol.occupancy) n *= k / sum;

  double acc = 0.0;
  std::size_t count = 0;
  for (std::size_t j = 0; j < J; ++j) {
    if (sol.occupancy[j] > 0.0) {
      acc += marginals[j](sol.occupancy[j]);
      ++count;
    }
  }
  sol.multiplier = count > 0 ? acc / static_cast<double>(count) : beta;
  sol.kkt_residual = kkt_residual<M>(marginals, sol.occupancy, sol.multiplier, K);
  if (!(sol.kkt_residual <= tol)) {
    throw SolverError("water_fill",
                      "KKT residual " + std::to_string(sol.kkt_residual) +
                          " above tolerance after " + std::to_string(it) + " iterations",
                      sol.kkt_residual);
  }
  return sol;
}

namespace detail {

inline void fill_ttl(AllocationResult& r, const std::map<std::string, double>& rates,
                     std::string_view op) {
  for (const auto& [key, n] : r.occupancy) {
    auto it = rates.find(key);
    if (it == rates.end()) continue;
    require(it->second >= 0.0, ErrorKind::domain, op, "negative rate for '" + key + "'");
    require(it->second > 0.0 || n == 0.0, ErrorKind::domain, op,
            "TTL undefined for '" + key + "': zero rate with positive occupancy");
    r.ttl[key] = it->second > 0.0 ? n / it->second : 0.0;
  }
}

inline void check_weights(const std::map<std::string, double>& weights, std::string_view op) {
  require(!weights.empty(), ErrorKind::degenerate_input, op, "empty key set");
  for (const auto& [key, w] : weights)
    require(w > 0.0 && std::isfinite(w), ErrorKind::domain, op,
            "weight of '" + key + "' must be positive");
}

// Closed-form alpha-fair split with normalized occupancy:
// N_j = K w_j^(1/alpha) / sum_k w_k^(1/alpha).
inline AllocationResult power_share(const std::map<std::string, double>& weights,
                                    const std::map<std::string, double>& rates, int K,
                                    double alpha, Criterion criterion, std::string_view op) {
  require(K >= 1, ErrorKind::domain, op, "K must be >= 1");
  check_weights(weights, op);
  const double k = static_cast<double>(K);
  double denom = 0.0;
  for (const auto& [_, w] : weights) denom += alpha == 1.0 ? w : std::pow(w, 1.0 / alpha);
  AllocationResult r;
  r.criterion = criterion;
  r.alpha = alpha;
  r.K = K;
  for (const auto& [key, w] : weights) {
    const double share = alpha == 1.0 ? w : std::pow(w, 1.0 / alpha);
    r.occupancy[key] = share * k / denom;
  }
  fill_ttl(r, rates, op);
  std::vector<AlphaFairMarginal> g;
  std::vector<double> n;
  for (const auto& [key, w] : weights) {
    g.emplace_back(w, alpha, HitMode::normalized_occupancy, K);
    n.push_back(r.occupancy[key]);
  }
  // beta = (sum_k w_k^(1/alpha))^alpha / K
  r.multiplier = std::pow(denom, alpha) / k;
  r.kkt_residual = kkt_residual<AlphaFairMarginal>(g, n, *r.multiplier, K);
  return r;
}

}  // namespace detail

/// alpha = 1: N_j = w_j K / sum w, T_j = N_j / rate_j, beta = sum w / K.
inline AllocationResult proportional_fair(const std::map<std::string, double>& weights,
                                          const std::map<std::string, double>& rates, int K) {
  return detail::power_share(weights, rates, K, 1.0, Criterion::proportional,
                             "proportional_fair");
}

/// alpha = 2: N_j = K sqrt(w_j) / sum sqrt(w).
inline AllocationResult potential_delay_fair(const std::map<std::string, double>& weights,
                                             const std::map<std::string, double>& rates,
                                             int K) {
  return detail::power_share(weights, rates, K, 2.0, Criterion::potential_delay,
                             "potential_delay_fair");
}

/// Equal occupancy K/J per key regardless of weights.
inline AllocationResult max_min_fair(const std::map<std::string, double>& rates, int K) {
  constexpr std::string_view op = "max_min_fair";
  detail::require(K >= 1, ErrorKind::domain, op, "K must be >= 1");
  detail::require(!rates.empty(), ErrorKind::degenerate_input, op, "empty key set");
  const double share = static_cast<double>(K) / static_cast<double>(rates.size());
  AllocationResult r;
  r.criterion = Criterion::max_min;
  r.alpha = std::numeric_limits<double>::infinity();
  r.K = K;
  for (const auto& [key, rate] : rates) {
    detail::require(rate > 0.0, ErrorKind::domain, op, "rate of '" + key + "' must be > 0");
    r.occupancy[key] = share;
  }
  detail::fill_ttl(r, rates, op);
  r.kkt_residual = std::abs(r.total_occupancy() - K) / K;
  return r;
}

/// Generic solve through water_fill for any alpha and hit mode.
inline AllocationResult water_fill(const std::map<std::string, double>& weights,
                                   const std::map<std::string, double>& rates,
                                   const UtilitySpec& utility, int K, double tol = 1e-10) {
  detail::check_weights(weights, "water_fill");
  std::vector<AlphaFairMarginal> g;
  g.reserve(weights.size());
  for (const auto& [_, w] : weights) g.emplace_back(w, utility.alpha, utility.hit_mode, K);
  const auto sol = water_fill<AlphaFairMarginal>(g, K, tol);
  AllocationResult r;
  r.criterion = utility.alpha == 1.0   ? Criterion::proportional
                : utility.alpha == 2.0 ? Criterion::potential_delay
                                       : Criterion::generic;
  r.alpha = utility.alpha;
  r.hit_mode = utility.hit_mode;
  r.K = K;
  std::size_t j = 0;
  for (const auto& [key, _] : weights) r.occupancy[key] = sol.occupancy[j++];
  r.multiplier = sol.multiplier;
  r.kkt_residual = sol.kkt_residual;
  detail::fill_ttl(r, rates, "water_fill");
  return r;
}

/// Publisher-level allocation: closed forms for normalized occupancy, the
/// solver otherwise. Max-min is the same for every hit mode.
inline AllocationResult allocate(const std::map<std::string, double>& weights,
                                 const std::map<std::string, double>& rates,
                                 Criterion criterion, const UtilitySpec& utility, int K,
                                 double tol = 1e-10) {
  const bool closed = utility.hit_mode == HitMode::normalized_occupancy;
  AllocationResult r;
  switch (criterion) {
    case Criterion::max_min:
      r = max_min_fair(rates, K);
      break;
    case Criterion::proportional:
      r = closed ? proportional_fair(weights, rates, K)
                 : water_fill(weights, rates, {1.0, utility.hit_mode}, K, tol);
      r.criterion = Criterion::proportional;
      break;
    case Criterion::potential_delay:
      r = closed ? potential_delay_fair(weights, rates, K)
                 : water_fill(weights, rates, {2.0, utility.hit_mode}, K, tol);
      r.criterion = Criterion::potential_delay;
      break;
    case Criterion::generic:
      r = water_fill(weights, rates, utility, K, tol);
      r.criterion = Criterion::generic;
      break;
  }
  r.hit_mode = utility.hit_mode;
  return r;
}

/// Class-level allocation: the budget is split across the nonempty like-classes
/// by the criterion, then each class TTL is shared by its publishers so that
/// N_j = rate_j * T_class.
inline AllocationResult class_based_allocate(const UserProfile& profile,
                                             const PublisherCatalog& catalog, int K,
                                             Criterion criterion, double alpha = 1.0,
                                             double tol = 1e-10) {
  constexpr std::string_view op = "class_based_allocate";
  detail::require(K >= 1, ErrorKind::domain, op, "K must be >= 1");
  detail::require(!catalog.empty(), ErrorKind::degenerate_input, op, "empty catalog");
  profile.validate();

  std::map<std::string, double> class_rate;
  std::map<std::string, std::size_t> class_size;
  for (const auto& p : catalog.publishers()) {
    const auto label = class_label(profile.liked(p.id));
    class_rate[label] += p.rate;
    class_size[label] += 1;
  }
  std::map<std::string, double> class_weight;
  for (const auto& [label, rate] : class_rate) {
    detail::require(rate > 0.0, ErrorKind::domain, op,
                    "aggregate rate of nonempty class " + label + " is zero");
    class_weight[label] = profile.weight(label);
  }

  AllocationResult classes;
  switch (criterion) {
    case Criterion::proportional:
      classes = proportional_fair(class_weight, class_rate, K);
      break;
    case Criterion::potential_delay:
      classes = potential_delay_fair(class_weight, class_rate, K);
      break;
    case Criterion::max_min:
      classes = max_min_fair(class_rate, K);
      break;
    case Criterion::generic:
      classes = water_fill(class_weight, class_rate, {alpha, HitMode::normalized_occupancy}, K,
                           tol);
      classes.criterion = Criterion::generic;
      break;
  }

  AllocationResult r;
  r.criterion = criterion;
  r.alpha = classes.alpha;
  r.K = K;
  r.multiplier = classes.multiplier;
  r.kkt_residual = classes.kkt_residual;
  r.class_occupancy = classes.occupancy;
  r.class_ttl = classes.ttl;
  for (const auto& p : catalog.publishers()) {
    const double t = classes.ttl.at(class_label(profile.liked(p.id)));
    r.ttl[p.id] = t;
    r.occupancy[p.id] = core::ttl_occupancy(p.rate, t);
  }
  return r;
}

/// (N_scenario - N_baseline) / K per key; sums to zero.
inline BiasReport compute_bias(const std::map<std::string, double>& occupancy,
                               const std::map<std::string, double>& baseline, int K,
                               std::string scenario = "custom") {
  constexpr std::string_view op = "compute_bias";
  detail::require(K >= 1, ErrorKind::domain, op, "K must be >= 1");
  detail::require(occupancy.size() == baseline.size(), ErrorKind::domain, op,
                  "scenario and baseline cover different publishers");
  double sum_m = 0.0;
  double sum_b = 0.0;
  for (auto a = occupancy.begin(), b = baseline.begin(); a != occupancy.end(); ++a, ++b) {
    detail::require(a->first == b->first, ErrorKind::domain, op,
                    "scenario and baseline cover different publishers");
    sum_m += a->second;
    sum_b += b->second;
  }
  const double k = static_cast<double>(K);
  detail::require(std::abs(sum_m - k) <= 1e-6, ErrorKind::domain, op,
                  "scenario occupancies do not sum to K");
  detail::require(std::abs(sum_b - k) <= 1e-6, ErrorKind::domain, op,
                  "baseline occupancies do not sum to K");
  BiasReport rep;
  rep.scenario = std::move(scenario);
  rep.baseline_occupancy = baseline;
  rep.K = K;
  for (const auto& [key, n] : occupancy) rep.bias[key] = (n - baseline.at(key)) / k;
  return rep;
}

}  // namespace feedlab::alloc
