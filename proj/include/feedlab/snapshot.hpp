#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "feedlab/error.hpp"

namespace feedlab {

/// One impression: a post seen at a 1-based position of one snapshot of a
/// user's feed. A row with position 0 and empty publisher/post ids records a
/// snapshot that was taken but held no posts.
struct SnapshotRecord {
  std::string user_id;
  std::uint64_t snapshot_id = 0;
  int position = 0;
  std::string publisher_id;
  std::string post_id;

  bool empty_marker() const noexcept { return position == 0; }

  friend bool operator==(const SnapshotRecord&, const SnapshotRecord&) = default;
};

struct SnapshotDataset {
  std::vector<SnapshotRecord> records;
  // Posts created per publisher over the observation window (C_j). Optional;
  // required only by the TTL estimator.
  std::map<std::string, std::uint64_t> creation_counts;

  bool empty() const noexcept { return records.empty(); }

  /// Concatenate another dataset; creation counts add up.
  void append(const SnapshotDataset& other) {
    records.insert(records.end(), other.records.begin(), other.records.end());
    for (const auto& [id, c] : other.creation_counts) creation_counts[id] += c;
  }

  /// Positions within a (user, snapshot) are distinct and start at 1; an empty
  /// marker is the only row of its snapshot.
  void validate() const {
    std::map<std::pair<std::string, std::uint64_t>, std::set<int>> seen;
    for (const auto& r : records) {
      if (r.position < 0)
        detail::fail(ErrorKind::data_inconsistency, "estimation", "SnapshotDataset",
                     "negative position in snapshot " + std::to_string(r.snapshot_id));
      if (!r.empty_marker() && r.publisher_id.empty())
        detail::fail(ErrorKind::data_inconsistency, "estimation", "SnapshotDataset",
                     "row without publisher in snapshot " + std::to_string(r.snapshot_id));
      auto& positions = seen[{r.user_id, r.snapshot_id}];
      if (!positions.insert(r.position).second)
        detail::fail(ErrorKind::data_inconsistency, "estimation", "SnapshotDataset",
                     "duplicate position " + std::to_string(r.position) + " in snapshot " +
                         std::to_string(r.snapshot_id) + " of user " + r.user_id);
    }
    for (const auto& [key, positions] : seen) {
      const bool marker_only = positions.size() == 1 && *positions.begin() == 0;
      if (!marker_only && *positions.begin() != 1)
        detail::fail(ErrorKind::data_inconsistency, "estimation", "SnapshotDataset",
                     "positions of snapshot " + std::to_string(key.second) + " of user " +
                         key.first + " do not start at 1");
    }
  }
};

}  // namespace feedlab
