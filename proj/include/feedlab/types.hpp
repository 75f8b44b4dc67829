#pragma once

#include <cmath>
#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "feedlab/error.hpp"

namespace feedlab {

struct Publisher {
  std::string id;
  double rate = 0.0;  // posts per unit time

  friend bool operator==(const Publisher&, const Publisher&) = default;
};

/// Publishers and their Poisson post-creation rates. Order of insertion is
/// preserved; ids are unique.
class PublisherCatalog {
 public:
  PublisherCatalog() = default;

  explicit PublisherCatalog(std::vector<Publisher> publishers) {
    for (auto& p : publishers) add(std::move(p.id), p.rate);
  }

  void add(std::string id, double rate) {
    if (!(rate >= 0.0) || !std::isfinite(rate))
      detail::fail(ErrorKind::domain, "core_model", "PublisherCatalog",
                   "rate of publisher '" + id + "' must be finite and >= 0");
    if (index_.count(id))
      detail::fail(ErrorKind::domain, "core_model", "PublisherCatalog",
                   "duplicate publisher id '" + id + "'");
    index_.emplace(id, publishers_.size());
    publishers_.push_back({std::move(id), rate});
  }

  const std::vector<Publisher>& publishers() const noexcept { return publishers_; }
  std::size_t size() const noexcept { return publishers_.size(); }
  bool empty() const noexcept { return publishers_.empty(); }
  bool contains(std::string_view id) const { return index_.count(std::string(id)) != 0; }

  double rate(std::string_view id) const {
    auto it = index_.find(std::string(id));
    if (it == index_.end())
      detail::fail(ErrorKind::domain, "core_model", "PublisherCatalog",
                   "unknown publisher '" + std::string(id) + "'");
    return publishers_[it->second].rate;
  }

  // Summed on every call.
  double total_rate() const noexcept {
    double total = 0.0;
    for (const auto& p : publishers_) total += p.rate;
    return total;
  }

 private:
  std::vector<Publisher> publishers_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Label of the "liked" / "not liked" classes used by the two-class model.
inline std::string class_label(bool liked) { return liked ? "1" : "0"; }

struct UserProfile {
  std::string user_id;
  std::map<std::string, bool> likes;            // publisher -> L(i,j)
  std::map<std::string, double> weights;        // class label or publisher -> w
  std::map<std::string, double> filter_probs;   // publisher -> p_ij

  bool liked(const std::string& publisher) const {
    auto it = likes.find(publisher);
    return it != likes.end() && it->second;
  }

  double filter_prob(const std::string& publisher) const {
    auto it = filter_probs.find(publisher);
    return it == filter_probs.end() ? 1.0 : it->second;
  }

  /// Weight for a class label or publisher id; unspecified keys weigh 1.
  double weight(const std::string& key) const {
    auto it = weights.find(key);
    return it == weights.end() ? 1.0 : it->second;
  }

  void validate() const {
    for (const auto& [key, p] : filter_probs)
      if (!(p >= 0.0 && p <= 1.0))
        detail::fail(ErrorKind::domain, "core_model", "UserProfile",
                     "filter probability for '" + key + "' outside [0,1]");
    for (const auto& [key, w] : weights)
      if (!(w > 0.0) || !std::isfinite(w))
        detail::fail(ErrorKind::domain, "core_model", "UserProfile",
                     "weight for '" + key + "' must be positive");
  }
};

struct FeedConfig {
  int K = 1;
  std::map<std::string, double> ttl_by_class;  // class label or publisher -> T

  void validate() const {
    if (K < 1)
      detail::fail(ErrorKind::domain, "core_model", "FeedConfig", "K must be >= 1");
    for (const auto& [key, t] : ttl_by_class)
      if (!(t >= 0.0) || !std::isfinite(t))
        detail::fail(ErrorKind::domain, "core_model", "FeedConfig",
                     "TTL for '" + key + "' must be finite and >= 0");
  }

  /// Per-publisher TTL wins over the class TTL.
  double ttl_for(const std::string& publisher, bool liked) const {
    if (auto it = ttl_by_class.find(publisher); it != ttl_by_class.end())
      return it->second;
    if (auto it = ttl_by_class.find(class_label(liked)); it != ttl_by_class.end())
      return it->second;
    detail::fail(ErrorKind::domain, "core_model", "FeedConfig",
                 "no TTL configured for publisher '" + publisher + "' or class " +
                     class_label(liked));
  }
};

enum class HitMode { normalized_occupancy, ttl_visibility, fifo_visibility };

inline std::string_view to_string(HitMode m) {
  switch (m) {
    case HitMode::normalized_occupancy: return "normalized_occupancy";
    case HitMode::ttl_visibility: return "ttl_visibility";
    case HitMode::fifo_visibility: return "fifo_visibility";
  }
  return "unknown";
}

inline std::optional<HitMode> parse_hit_mode(std::string_view s) {
  if (s == "normalized_occupancy") return HitMode::normalized_occupancy;
  if (s == "ttl_visibility") return HitMode::ttl_visibility;
  if (s == "fifo_visibility") return HitMode::fifo_visibility;
  return std::nullopt;
}

/// Per-publisher metrics for one user's feed.
struct FeedMetrics {
  std::string user_id;
  std::map<std::string, double> occupancy;
  std::map<std::string, double> visibility;
  std::map<std::string, double> hit_prob;
  std::map<std::string, double> effective_rates;

  double total_effective_rate() const noexcept {
    double total = 0.0;
    for (const auto& [_, r] : effective_rates) total += r;
    return total;
  }

  double effective_rate_others(const std::string& publisher) const {
    auto it = effective_rates.find(publisher);
    return total_effective_rate() - (it == effective_rates.end() ? 0.0 : it->second);
  }

  double total_occupancy() const noexcept {
    double total = 0.0;
    for (const auto& [_, n] : occupancy) total += n;
    return total;
  }
};

}  // namespace feedlab
