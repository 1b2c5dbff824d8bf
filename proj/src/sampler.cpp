#include "blurret/sampler.hpp"

#include <algorithm>

#include "blurret/errors.hpp"

namespace blurret {

TuplePool::TuplePool(const std::vector<ImageRecord>& records,
                     const std::string& split, bool sharp_only)
    : records_(&records) {
  for (std::size_t i = 0; i < records.size(); ++i) {
    const ImageRecord& rec = records[i];
    if (rec.split != split) continue;
    if (sharp_only && !rec.is_sharp) continue;
    indices_.push_back(i);
    by_bl_[rec.bl].push_back(i);
  }
  if (!by_bl_.empty()) {
    min_bl_ = by_bl_.begin()->first;
    max_bl_ = by_bl_.rbegin()->first;
  }
}

bool TuplePool::contains(std::size_t idx) const {
  return std::binary_search(indices_.begin(), indices_.end(), idx);
}

std::vector<std::size_t> TuplePool::window_candidates(std::size_t query_idx,
                                                      int radius,
                                                      bool positives) const {
  const ImageRecord& q = (*records_)[query_idx];
  int lo = std::max(min_bl_, q.bl - radius);
  int hi = std::min(max_bl_, q.bl + radius);
  std::vector<std::size_t> out;
  for (auto it = by_bl_.lower_bound(lo); it != by_bl_.end() && it->first <= hi;
       ++it) {
    for (std::size_t idx : it->second) {
      bool same_object = (*records_)[idx].object_id == q.object_id;
      if (positives ? (same_object && idx != query_idx) : !same_object)
        out.push_back(idx);
    }
  }
  return out;
}

namespace {

std::vector<std::size_t> draw(const TuplePool& pool, std::size_t query_idx,
                              int start_radius, bool positives, int need,
                              Rng& rng) {
  int radius = start_radius;
  std::vector<std::size_t> cand =
      pool.window_candidates(query_idx, radius, positives);
  int bl_q = pool.records()[query_idx].bl;
  while (static_cast<int>(cand.size()) < need &&
         (bl_q - radius > pool.min_bl() || bl_q + radius < pool.max_bl())) {
    ++radius;
    cand = pool.window_candidates(query_idx, radius, positives);
  }
  if (cand.empty()) {
    throw SamplingExhausted(std::string("no eligible ") +
                            (positives ? "positive" : "negative") +
                            " for query at full blur window");
  }
  std::vector<std::size_t> out;
  out.reserve(need);
  if (static_cast<int>(cand.size()) >= need) {
    for (std::size_t pos : rng.sample_indices(cand.size(), need))
      out.push_back(cand[pos]);
  } else {
    for (int i = 0; i < need; ++i)
      out.push_back(cand[rng.uniform_int(0, static_cast<std::int64_t>(cand.size()) - 1)]);
  }
  return out;
}

}  // namespace

ContrastiveTuple select_tuple(const TuplePool& pool, std::size_t query_idx,
                              const SamplerConfig& cfg, Rng& rng) {
  if (cfg.r < 0 || cfg.n_p < 1 || cfg.n_n < 1)
    throw DomainError("select_tuple: need r >= 0, n_p >= 1, n_n >= 1");
  if (!pool.contains(query_idx))
    throw DomainError("select_tuple: query is not in the pool");
  ContrastiveTuple tuple;
  tuple.query = query_idx;
  tuple.positives = draw(pool, query_idx, cfg.r, true, cfg.n_p, rng);
  tuple.negatives = draw(pool, query_idx, cfg.r, false, cfg.n_n, rng);
  return tuple;
}

std::vector<std::vector<ContrastiveTuple>> epoch_batches(
    const TuplePool& pool, int batch_tuples, const SamplerConfig& cfg,
    std::uint64_t seed, int epoch) {
  if (pool.indices().empty())
    throw DomainError("epoch_batches: pool has no records");
  if (batch_tuples < 1)
    throw DomainError("epoch_batches: batch_tuples must be positive");

  std::vector<std::size_t> order = pool.indices();
  Rng order_rng = Rng::derive(seed, "order", static_cast<std::uint64_t>(epoch));
  order_rng.shuffle(order);

  std::vector<std::vector<ContrastiveTuple>> batches;
  for (std::size_t i = 0; i < order.size(); ++i) {
    if (i % static_cast<std::size_t>(batch_tuples) == 0) batches.emplace_back();
    Rng tuple_rng =
        Rng::derive(seed, "tuple", static_cast<std::uint64_t>(epoch), i);
    batches.back().push_back(select_tuple(pool, order[i], cfg, tuple_rng));
  }
  return batches;
}

}  // namespace blurret
