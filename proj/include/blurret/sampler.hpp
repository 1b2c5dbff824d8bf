#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "blurret/dataset.hpp"
#include "blurret/rng.hpp"

namespace blurret {

// Blur-level windowed contrastive sampling configuration.
struct SamplerConfig {
  int r = 5;    // blur-level radius around the query's level
  int n_p = 1;  // positives per tuple
  int n_n = 5;  // negatives per tuple
};

// Indices refer to positions in the manifest's record vector.
struct ContrastiveTuple {
  std::size_t query = 0;
  std::vector<std::size_t> positives;
  std::vector<std::size_t> negatives;
};

// Frozen index over one split of a manifest, bucketed by blur level and by
// object, so tuple selection is a pure function of (query, config, rng).
class TuplePool {
 public:
  // Keeps records with the given split label; with sharp_only set, only the
  // sharp frames are eligible (both as queries and as samples).
  TuplePool(const std::vector<ImageRecord>& records, const std::string& split,
            bool sharp_only = false);

  const std::vector<ImageRecord>& records() const { return *records_; }
  const std::vector<std::size_t>& indices() const { return indices_; }
  bool contains(std::size_t idx) const;
  int min_bl() const { return min_bl_; }
  int max_bl() const { return max_bl_; }

  // Candidates with |bl - window center| within radius (clamped to the
  // realized range): same-object records minus the query itself when
  // `positives`, other-object records otherwise.
  std::vector<std::size_t> window_candidates(std::size_t query_idx, int radius,
                                             bool positives) const;

 private:
  const std::vector<ImageRecord>* records_;
  std::vector<std::size_t> indices_;  // ascending
  std::map<int, std::vector<std::size_t>> by_bl_;
  int min_bl_ = 0;
  int max_bl_ = 0;
};

// Samples n_p positives and n_n negatives uniformly inside the blur window
// [bl_q - r, bl_q + r] (intersected with the pool's realized levels). If a
// window holds fewer candidates than needed it widens one level at a time up
// to the full realized range; an empty candidate set after full widening is
// SamplingExhausted. Selection is without replacement when candidates
// suffice, with replacement otherwise. Positives are drawn before negatives.
ContrastiveTuple select_tuple(const TuplePool& pool, std::size_t query_idx,
                              const SamplerConfig& cfg, Rng& rng);

// One epoch of tuples: every pool record serves as query exactly once, in an
// order shuffled from (seed, epoch), grouped into batches of at most
// batch_tuples. Tuple i of the epoch uses its own derived stream, so batches
// may be assembled concurrently.
std::vector<std::vector<ContrastiveTuple>> epoch_batches(
    const TuplePool& pool, int batch_tuples, const SamplerConfig& cfg,
    std::uint64_t seed, int epoch);

}  // namespace blurret
