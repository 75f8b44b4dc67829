#pragma once

// Measurement-side estimators over snapshot datasets: measured occupancy and
// visibility, effective arrival rates, per-class TTLs, and the OLS check of
// model predictions against measurements.

#include <algorithm>
#include <cmath>
#include <compare>
#include <cstdint>
#include <map>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <boost/math/special_functions/beta.hpp>

#include "feedlab/core_model.hpp"
#include "feedlab/error.hpp"
#include "feedlab/snapshot.hpp"
#include "feedlab/types.hpp"

namespace feedlab::est {

struct PairKey {
  std::string user_id;
  std::string publisher_id;
  friend auto operator<=>(const PairKey&, const PairKey&) = default;
};

struct PairMetrics {
  double occupancy = 0.0;
  double visibility = 0.0;
};

template <class T>
using PairMap = std::map<PairKey, T>;

namespace detail {

inline void require(bool ok, ErrorKind kind, std::string_view op, const std::string& msg) {
  if (!ok) feedlab::detail::fail(kind, "estimation", op, msg);
}

/// Interned view of a dataset: S_i per user, and per pair the impression
/// count I_ij, unique-post count Q_ij, summed top-K count, and number of
/// snapshots with at least one top-K post.
struct Tally {
  std::vector<std::string> users;
  std::vector<std::string> publishers;
  std::vector<std::uint64_t> snapshots;        // per user
  std::vector<std::vector<std::uint64_t>> impressions;
  std::vector<std::vector<std::uint64_t>> unique_posts;
  std::vector<std::vector<std::uint64_t>> topk_count;
  std::vector<std::vector<std::uint64_t>> topk_present;

  std::optional<std::size_t> user_index(std::string_view u) const {
    auto it = std::find(users.begin(), users.end(), u);
    if (it == users.end()) return std::nullopt;
    return static_cast<std::size_t>(it - users.begin());
  }
};

/// K restricts the per-snapshot counts; impressions are restricted only when
/// restrict_impressions is set.
inline Tally tally(const SnapshotDataset& data, int K, bool restrict_impressions,
                   std::span<const std::string> extra_publishers = {}) {
  Tally t;
  std::unordered_map<std::string_view, std::size_t> uidx, pidx;
  auto intern = [](auto& index, auto& names, std::string_view s) {
    auto [it, fresh] = index.emplace(s, names.size());
    if (fresh) names.emplace_back(s);
    return it->second;
  };
  std::vector<std::size_t> ru(data.records.size()), rp(data.records.size());
  for (std::size_t r = 0; r < data.records.size(); ++r) {
    const auto& rec = data.records[r];
    ru[r] = intern(uidx, t.users, rec.user_id);
    rp[r] = rec.empty_marker() ? SIZE_MAX : intern(pidx, t.publishers, rec.publisher_id);
  }
  for (const auto& p : extra_publishers) intern(pidx, t.publishers, p);
  const std::size_t U = t.users.size(), P = t.publishers.size();
  auto grid = [&] { return std::vector<std::vector<std::uint64_t>>(U, std::vector<std::uint64_t>(P, 0)); };
  t.snapshots.assign(U, 0);
  t.impressions = grid();
  t.unique_posts = grid();
  t.topk_count = grid();
  t.topk_present = grid();

  std::vector<std::size_t> order(data.records.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (ru[a] != ru[b]) return ru[a] < ru[b];
    return data.records[a].snapshot_id < data.records[b].snapshot_id;
  });

  std::vector<std::unordered_set<std::string_view>> seen(U * P);
  std::vector<std::uint64_t> count(P, 0);
  std::vector<std::size_t> touched;
  for (std::size_t i = 0; i < order.size();) {
    const std::size_t u = ru[order[i]];
    const auto snap = data.records[order[i]].snapshot_id;
    ++t.snapshots[u];
    touched.clear();
    for (; i < order.size() && ru[order[i]] == u &&
           data.records[order[i]].snapshot_id == snap;
         ++i) {
      const auto& rec = data.records[order[i]];
      if (rec.empty_marker()) continue;
      const std::size_t p = rp[order[i]];
      const bool in_view = rec.position <= K;
      if (in_view || !restrict_impressions) {
        ++t.impressions[u][p];
        seen[u * P + p].insert(rec.post_id);
      }
      if (in_view) {
        if (count[p]++ == 0) touched.push_back(p);
      }
    }
    for (std::size_t p : touched) {
      t.topk_count[u][p] += count[p];
      ++t.topk_present[u][p];
      count[p] = 0;
    }
  }
  for (std::size_t u = 0; u < U; ++u)
    for (std::size_t p = 0; p < P; ++p) t.unique_posts[u][p] = seen[u * P + p].size();
  return t;
}

}  // namespace detail

/// Mean number of top-K posts per snapshot and fraction of snapshots with at
/// least one top-K post, per (user, publisher). Every publisher seen anywhere
/// in the dataset, plus `publishers`, is reported for every user.
inline PairMap<PairMetrics> measured_metrics(const SnapshotDataset& data, int K,
                                             std::span<const std::string> publishers = {}) {
  detail::require(K >= 1, ErrorKind::domain, "measured_metrics", "K must be >= 1");
  detail::require(!data.empty(), ErrorKind::insufficient_data, "measured_metrics",
                  "empty dataset");
  const auto t = detail::tally(data, K, true, publishers);
  PairMap<PairMetrics> out;
  for (std::size_t u = 0; u < t.users.size(); ++u) {
    const double s = static_cast<double>(t.snapshots[u]);
    for (std::size_t p = 0; p < t.publishers.size(); ++p)
      out[{t.users[u], t.publishers[p]}] = {static_cast<double>(t.topk_count[u][p]) / s,
                                             static_cast<double>(t.topk_present[u][p]) / s};
  }
  return out;
}

/// Unique posts per snapshot, Q_ij / S_i, for every (user, publisher).
inline PairMap<double> effective_rate(const SnapshotDataset& data,
                                      std::span<const std::string> publishers = {}) {
  detail::require(!data.empty(), ErrorKind::insufficient_data, "effective_rate",
                  "empty dataset");
  const auto t = detail::tally(data, 1, false, publishers);
  PairMap<double> out;
  for (std::size_t u = 0; u < t.users.size(); ++u)
    for (std::size_t p = 0; p < t.publishers.size(); ++p)
      out[{t.users[u], t.publishers[p]}] =
          static_cast<double>(t.unique_posts[u][p]) / static_cast<double>(t.snapshots[u]);
  return out;
}

inline std::map<std::string, double> effective_rate(const SnapshotDataset& data,
                                                    std::string_view user,
                                                    std::span<const std::string> publishers = {}) {
  const auto t = detail::tally(data, 1, false, publishers);
  const auto u = t.user_index(user);
  detail::require(u.has_value(), ErrorKind::domain, "effective_rate",
                  "user '" + std::string(user) + "' is absent from the dataset");
  std::map<std::string, double> out;
  for (std::size_t p = 0; p < t.publishers.size(); ++p)
    out[t.publishers[p]] =
        static_cast<double>(t.unique_posts[*u][p]) / static_cast<double>(t.snapshots[*u]);
  return out;
}

/// Per-snapshot counts backing the estimators.
struct DatasetCounts {
  std::map<std::string, std::uint64_t> snapshots;  // S_i
  PairMap<std::uint64_t> unique_posts;             // Q_ij
  PairMap<std::uint64_t> impressions;              // I_ij
};

inline DatasetCounts dataset_counts(const SnapshotDataset& data) {
  const auto t = detail::tally(data, 1, false);
  DatasetCounts c;
  for (std::size_t u = 0; u < t.users.size(); ++u) {
    c.snapshots[t.users[u]] = t.snapshots[u];
    for (std::size_t p = 0; p < t.publishers.size(); ++p) {
      c.unique_posts[{t.users[u], t.publishers[p]}] = t.unique_posts[u][p];
      c.impressions[{t.users[u], t.publishers[p]}] = t.impressions[u][p];
    }
  }
  return c;
}

struct TwoClassTtl {
  std::optional<double> ttl0;  // not liked
  std::optional<double> ttl1;  // liked
  std::uint64_t impressions0 = 0, impressions1 = 0;  // I_l
  double generated0 = 0.0, generated1 = 0.0;         // G_l
};

/// T_l = I_l / G_l in snapshots, where I_l sums impressions and G_l sums
/// creation counts over the (user, publisher) pairs of class l. Impressions
/// use the full snapshot depth unless `K` restricts them.
inline TwoClassTtl two_class_ttl(const SnapshotDataset& data,
                                 const std::map<std::string, std::uint64_t>& creation_counts,
                                 std::span<const UserProfile> profiles,
                                 std::optional<int> K = std::nullopt) {
  constexpr std::string_view op = "two_class_ttl";
  detail::require(!data.empty(), ErrorKind::insufficient_data, op, "empty dataset");
  std::vector<std::string> pubs;
  for (const auto& [id, _] : creation_counts) pubs.push_back(id);
  const auto t = detail::tally(data, K.value_or(1), K.has_value(), pubs);
  TwoClassTtl out;
  for (std::size_t u = 0; u < t.users.size(); ++u) {
    auto prof = std::find_if(profiles.begin(), profiles.end(),
                             [&](const UserProfile& p) { return p.user_id == t.users[u]; });
    detail::require(prof != profiles.end(), ErrorKind::domain, op,
                    "no profile for user '" + t.users[u] + "'");
    for (std::size_t p = 0; p < t.publishers.size(); ++p) {
      const bool liked = prof->liked(t.publishers[p]);
      auto c = creation_counts.find(t.publishers[p]);
      const double created = c == creation_counts.end() ? 0.0 : static_cast<double>(c->second);
      (liked ? out.impressions1 : out.impressions0) += t.impressions[u][p];
      (liked ? out.generated1 : out.generated0) += created;
    }
  }
  auto finish = [&](std::uint64_t impressions, double generated, int label) {
    std::optional<double> ttl;
    if (generated > 0.0) {
      ttl = static_cast<double>(impressions) / generated;
    } else {
      detail::require(impressions == 0, ErrorKind::data_inconsistency, op,
                      "class " + std::to_string(label) +
                          " has impressions but no created posts");
    }
    return ttl;
  };
  out.ttl0 = finish(out.impressions0, out.generated0, 0);
  out.ttl1 = finish(out.impressions1, out.generated1, 1);
  return out;
}

enum class VisibilityModel { ttl, finite_fifo };

/// Multi-class model predictions: every pair gets the filtered FIFO occupancy
/// driven by its measured effective rate.
inline PairMap<PairMetrics> multiclass_model(const PairMap<double>& rates, int K,
                                             VisibilityModel vis = VisibilityModel::ttl) {
  std::map<std::string, double> totals;
  for (const auto& [key, r] : rates) totals[key.user_id] += r;
  PairMap<PairMetrics> out;
  for (const auto& [key, r] : rates) {
    const double total = totals[key.user_id];
    const double n = core::filtered_fifo_occupancy(r, total, K);
    const double v = vis == VisibilityModel::ttl ? core::ttl_visibility(n)
                                                 : core::finite_fifo_visibility(r, total, K);
    out[key] = {n, v};
  }
  return out;
}

/// Two-class model predictions: N_ij = (C_j / S_i) * T_l.
inline PairMap<PairMetrics> two_class_model(const SnapshotDataset& data,
                                            const std::map<std::string, std::uint64_t>& creation_counts,
                                            std::span<const UserProfile> profiles,
                                            const TwoClassTtl& ttl) {
  const auto counts = dataset_counts(data);
  PairMap<PairMetrics> out;
  for (const auto& [user, s] : counts.snapshots) {
    auto prof = std::find_if(profiles.begin(), profiles.end(),
                             [&](const UserProfile& p) { return p.user_id == user; });
    detail::require(prof != profiles.end(), ErrorKind::domain, "two_class_model",
                    "no profile for user '" + user + "'");
    for (const auto& [pub, c] : creation_counts) {
      const auto& t = prof->liked(pub) ? ttl.ttl1 : ttl.ttl0;
      if (!t) continue;
      const double rate = static_cast<double>(c) / static_cast<double>(s);
      const double n = core::ttl_occupancy(rate, *t);
      out[{user, pub}] = {n, core::ttl_visibility(n)};
    }
  }
  return out;
}

struct RegressionReport {
  double beta0 = 0.0;
  double beta1 = 0.0;
  double r_squared = 0.0;
  double rmse = 0.0;
  double p_value_beta1 = 1.0;
  double t_statistic = 0.0;
  double se_beta1 = 0.0;
  std::size_t n = 0;
};

/// Two-sided p-value of a t statistic with `dof` degrees of freedom,
/// P[|T| >= |t|] = I_{dof/(dof+t^2)}(dof/2, 1/2).
inline double student_t_two_sided_p(double t, double dof) {
  if (std::isinf(t)) return 0.0;
  return boost::math::ibeta(dof / 2.0, 0.5, dof / (dof + t * t));
}

/// OLS fit y = beta1 x + beta0 with the t-test of beta1 = 0 on n-2 degrees of
/// freedom. RMSE is over the n residuals.
inline RegressionReport ols_validate(std::span<const double> x, std::span<const double> y) {
  constexpr std::string_view op = "ols_validate";
  detail::require(x.size() == y.size(), ErrorKind::domain, op, "x and y differ in length");
  detail::require(x.size() >= 3, ErrorKind::insufficient_data, op, "need at least 3 points");
  const std::size_t n = x.size();
  const double nn = static_cast<double>(n);
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / nn;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / nn;
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
    syy += (y[i] - my) * (y[i] - my);
  }
  detail::require(sxx > 0.0, ErrorKind::degenerate_input, op,
                  "x is constant; slope is not identifiable");
  RegressionReport rep;
  rep.n = n;
  rep.beta1 = sxy / sxx;
  rep.beta0 = my - rep.beta1 * mx;
  double ss_res = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double e = y[i] - (rep.beta0 + rep.beta1 * x[i]);
    ss_res += e * e;
  }
  rep.rmse = std::sqrt(ss_res / nn);
  // Rounding can push 1 - SS_res/SS_tot a few ulps outside [0, 1].
  rep.r_squared = syy > 0.0 ? std::clamp(1.0 - ss_res / syy, 0.0, 1.0) : 1.0;
  const double dof = nn - 2.0;
  rep.se_beta1 = std::sqrt(ss_res / dof / sxx);
  if (rep.se_beta1 > 0.0) {
    rep.t_statistic = rep.beta1 / rep.se_beta1;
    rep.p_value_beta1 = student_t_two_sided_p(rep.t_statistic, dof);
  } else if (rep.beta1 != 0.0) {
    rep.t_statistic = std::copysign(std::numeric_limits<double>::infinity(), rep.beta1);
    rep.p_value_beta1 = 0.0;
  }
  return rep;
}

}  // namespace feedlab::est
