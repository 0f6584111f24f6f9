#pragma once

// Segments between change points, Hausdorff distances between row sets, and
// agglomerative merging down to two clusters.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "json.hpp"

#include "pltl/change_detection.hpp"
#include "pltl/common.hpp"
#include "pltl/features.hpp"
#include "pltl/log.hpp"

namespace pltl {

inline constexpr std::size_t kMinSegmentFrames = 5;

struct Segment {
  int channel_id = 0;
  double start = 0.0;
  double end = 0.0;
  std::vector<std::size_t> rows;  // speech frames, ascending
};

// Splits the speech runs of `mask` at the change frames. Pieces shorter than
// kMinSegmentFrames join the preceding piece, or the following one when
// there is none before them.
inline std::vector<Segment> build_segments(const ChangePointList& changes, const SpeechMask& mask) {
  std::vector<char> cut(mask.size() + 1, 0);
  for (std::size_t k : changes.frames)
    if (k < mask.size()) cut[k] = 1;

  std::vector<std::vector<std::size_t>> pieces;
  bool open = false;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (!mask[i]) {
      open = false;
      continue;
    }
    if (!open || cut[i]) pieces.emplace_back();
    open = true;
    pieces.back().push_back(i);
  }

  std::vector<std::vector<std::size_t>> merged;
  for (auto& p : pieces) {
    if (p.size() < kMinSegmentFrames && !merged.empty())
      merged.back().insert(merged.back().end(), p.begin(), p.end());
    else
      merged.push_back(std::move(p));
  }
  if (merged.size() > 1 && merged.front().size() < kMinSegmentFrames) {
    merged[1].insert(merged[1].begin(), merged[0].begin(), merged[0].end());
    merged.erase(merged.begin());
  }

  std::vector<Segment> out;
  for (auto& rows : merged) {
    Segment s;
    s.channel_id = changes.channel_id;
    s.start = rows.front() == 0 ? 0.0 : frame_cell_start(rows.front());
    s.end = frame_cell_start(rows.back() + 1);
    s.rows = std::move(rows);
    out.push_back(std::move(s));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Hausdorff distance

namespace detail {

inline double squared_distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t c = 0; c < a.size(); ++c) {
    const double d = a[c] - b[c];
    s += d * d;
  }
  return s;
}

inline void check_pair(const Matrix& a, const Matrix& b) {
  if (a.rows() == 0 || b.rows() == 0) throw Error("hausdorff: empty point set");
  if (a.cols() != b.cols()) throw Error("hausdorff: column counts differ");
}

}  // namespace detail

// max over rows of a of the Euclidean distance to the nearest row of b. The
// inner scan stops once a row can no longer raise the maximum, which does not
// change the result.
inline double directed_hausdorff(const Matrix& a, const Matrix& b) {
  detail::check_pair(a, b);
  double worst = 0.0;
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const auto x = a.row(i);
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < b.rows(); ++j) {
      best = std::min(best, detail::squared_distance(x, b.row(j)));
      if (best <= worst) break;
    }
    worst = std::max(worst, best);
  }
  return std::sqrt(worst);
}

inline double hausdorff(const Matrix& a, const Matrix& b) {
  return std::max(directed_hausdorff(a, b), directed_hausdorff(b, a));
}

// ---------------------------------------------------------------------------
// Agglomerative clustering

enum class ClusterLabel { cluster_a, cluster_b };

struct MergeEvent {
  std::size_t step = 0;
  std::size_t left = 0;   // cluster ids: segments are 0..n-1, merges n, n+1, ...
  std::size_t right = 0;
  std::size_t merged = 0;
  double distance = 0.0;
};

struct TwoClusterAssignment {
  std::vector<ClusterLabel> labels;  // parallel to the input segments
  std::vector<MergeEvent> merges;
  bool subsampled = false;
};

struct ClusteringOptions {
  // 0 keeps every row; otherwise each segment is thinned to at most this many
  // evenly spaced rows before distances are taken.
  std::size_t max_rows_per_segment = 0;
};

inline std::vector<std::size_t> thin_rows(const std::vector<std::size_t>& rows, std::size_t limit) {
  if (limit == 0 || rows.size() <= limit) return rows;
  std::vector<std::size_t> out;
  out.reserve(limit);
  for (std::size_t i = 0; i < limit; ++i) out.push_back(rows[i * rows.size() / limit]);
  return out;
}

// Repeatedly merges the two clusters at the smallest Hausdorff distance,
// clusters being the row union of their segments, until two remain. Ties go
// to the pair whose earlier cluster starts first, then to lower segment
// indices. cluster_a is the cluster holding the earliest segment.
inline TwoClusterAssignment cluster_to_two(const std::vector<Segment>& segments, const Matrix& features,
                                           const ClusteringOptions& opt = {}) {
  TwoClusterAssignment out;
  const std::size_t n = segments.size();
  out.labels.assign(n, ClusterLabel::cluster_a);
  if (n == 0) return out;
  if (n == 1) {
    warn("clustering: channel " + std::to_string(segments[0].channel_id) +
         " has a single segment; assigning it to cluster_a");
    return out;
  }

  // Segment order key: start time, then index.
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return segments[a].start < segments[b].start; });
  std::vector<std::size_t> rank(n);
  for (std::size_t r = 0; r < n; ++r) rank[order[r]] = r;

  // Points, tagged with their segment.
  std::vector<std::size_t> point_row, point_seg;
  for (std::size_t s = 0; s < n; ++s) {
    const auto rows = thin_rows(segments[s].rows, opt.max_rows_per_segment);
    if (rows.size() != segments[s].rows.size()) out.subsampled = true;
    if (rows.empty()) throw Error("clustering: segment without rows");
    for (std::size_t r : rows) {
      point_row.push_back(r);
      point_seg.push_back(s);
    }
  }
  const std::size_t np = point_row.size();

  // near[p * n + k]: squared distance from point p to the nearest point of
  // cluster k (clusters start as segments and keep the slot of their
  // lower-ranked member).
  std::vector<double> near(np * n, std::numeric_limits<double>::infinity());
  for (std::size_t p = 0; p < np; ++p) {
    const auto x = features.row(point_row[p]);
    near[p * n + point_seg[p]] = 0.0;
    for (std::size_t q = p + 1; q < np; ++q) {
      const double d = detail::squared_distance(x, features.row(point_row[q]));
      double& a = near[p * n + point_seg[q]];
      double& b = near[q * n + point_seg[p]];
      a = std::min(a, d);
      b = std::min(b, d);
    }
  }

  std::vector<std::size_t> slot_of_seg(n);
  std::iota(slot_of_seg.begin(), slot_of_seg.end(), 0);
  std::vector<std::size_t> cluster_id(n);  // dendrogram id for each live slot
  std::iota(cluster_id.begin(), cluster_id.end(), 0);
  std::vector<std::size_t> first_rank(n);  // earliest member rank per slot
  for (std::size_t s = 0; s < n; ++s) first_rank[s] = rank[s];
  std::vector<char> live(n, 1);

  // directed[k * n + l] = squared h(k, l)
  std::vector<double> directed(n * n, 0.0);
  for (std::size_t p = 0; p < np; ++p) {
    const std::size_t k = point_seg[p];
    for (std::size_t l = 0; l < n; ++l) directed[k * n + l] = std::max(directed[k * n + l], near[p * n + l]);
  }

  auto key = [&](std::size_t a, std::size_t b) {
    return std::pair{std::min(first_rank[a], first_rank[b]), std::max(first_rank[a], first_rank[b])};
  };
  std::size_t alive = n;
  std::size_t step = 0;
  while (alive > 2) {
    std::size_t bi = n, bj = n;
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i) {
      if (!live[i]) continue;
      for (std::size_t j = i + 1; j < n; ++j) {
        if (!live[j]) continue;
        const double d = std::max(directed[i * n + j], directed[j * n + i]);
        if (d < best || (d == best && key(i, j) < key(bi, bj))) {
          best = d;
          bi = i;
          bj = j;
        }
      }
    }
    // Keep the slot of the earlier cluster.
    std::size_t keep = bi, drop = bj;
    if (first_rank[drop] < first_rank[keep]) std::swap(keep, drop);

    out.merges.push_back({step, std::min(cluster_id[keep], cluster_id[drop]),
                          std::max(cluster_id[keep], cluster_id[drop]), n + step, std::sqrt(best)});
    for (std::size_t p = 0; p < np; ++p) near[p * n + keep] = std::min(near[p * n + keep], near[p * n + drop]);
    for (std::size_t& s : slot_of_seg)
      if (s == drop) s = keep;
    live[drop] = 0;
    cluster_id[keep] = n + step;
    first_rank[keep] = std::min(first_rank[keep], first_rank[drop]);
    --alive;
    ++step;

    // h(keep, l) = max of the two parts; h(l, keep) from the merged column.
    for (std::size_t l = 0; l < n; ++l) {
      if (!live[l] || l == keep) continue;
      directed[keep * n + l] = std::max(directed[keep * n + l], directed[drop * n + l]);
      directed[l * n + keep] = 0.0;
    }
    for (std::size_t p = 0; p < np; ++p) {
      const std::size_t l = slot_of_seg[point_seg[p]];
      if (l == keep) continue;
      directed[l * n + keep] = std::max(directed[l * n + keep], near[p * n + keep]);
    }
  }

  const std::size_t a_slot = slot_of_seg[order[0]];
  for (std::size_t s = 0; s < n; ++s)
    out.labels[s] = slot_of_seg[s] == a_slot ? ClusterLabel::cluster_a : ClusterLabel::cluster_b;
  return out;
}

inline nlohmann::json dendrogram_json(const TwoClusterAssignment& a) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& m : a.merges)
    j.push_back({{"step", m.step}, {"left", m.left}, {"right", m.right}, {"merged", m.merged}, {"distance", m.distance}});
  return j;
}

}  // namespace pltl
