#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "json.hpp"

namespace blurret {

inline constexpr std::int64_t kCutoffAll = -1;

// Flat index of unit-norm descriptors with per-row (object_id, bl) metadata.
// Rows are L2-normalized on insertion, so downstream similarity is cosine.
class DescriptorStore {
 public:
  void add(std::int64_t id, std::int64_t object_id, int bl,
           const Eigen::VectorXd& descriptor);
  std::size_t size() const { return ids_.size(); }
  int dim() const { return dim_; }
  std::int64_t id(std::size_t row) const { return ids_[row]; }
  std::int64_t object_id(std::size_t row) const { return object_ids_[row]; }
  int bl(std::size_t row) const { return bls_[row]; }
  Eigen::VectorXd descriptor(std::size_t row) const;

 private:
  int dim_ = 0;
  std::vector<std::int64_t> ids_;
  std::vector<std::int64_t> object_ids_;
  std::vector<int> bls_;
  std::vector<double> data_;  // row-major n x dim_
  std::unordered_map<std::int64_t, std::size_t> row_of_id_;
};

// Exact top-k by descending inner product (ties by ascending id).
// k = kCutoffAll returns the full ranking.
std::vector<std::pair<std::int64_t, double>> search(const DescriptorStore& store,
                                                    const Eigen::VectorXd& query,
                                                    std::int64_t k = kCutoffAll);

// AP = (1/denominator) * sum over relevant ranks k <= cutoff of
// (relevant in top k)/k, with denominator = min(n_positives, cutoff) when
// truncated_denominator is set (the default) and n_positives otherwise.
double average_precision(const std::vector<int>& relevance_by_rank,
                         std::int64_t n_positives,
                         std::int64_t cutoff = kCutoffAll,
                         bool truncated_denominator = true);

struct BlurMatrix {
  // cells[d-1][q-1] = mAP with database restricted to BL d, queries to BL q.
  std::array<std::array<std::optional<double>, 6>, 6> cells;
  std::optional<double> range;
  std::optional<double> std_dev;  // population std over present cells
  int absent_cells = 0;
};

struct EvalReport {
  double overall = 0.0;
  std::array<std::optional<double>, 6> per_query_bl;  // index 0 = BL 1
  std::array<std::int64_t, 6> per_query_bl_count{};   // not serialized
  std::int64_t counted_queries = 0;                   // not serialized
  std::int64_t skipped_queries = 0;
  std::optional<BlurMatrix> matrix;
};

// Relevance = same object_id. Queries whose object has no database positive
// are skipped and counted. Query blur levels are bucketed into 1..6.
EvalReport evaluate(const DescriptorStore& queries,
                    const DescriptorStore& database,
                    std::int64_t cutoff = kCutoffAll,
                    bool truncated_denominator = true);

// Per-cell evaluation with database rows restricted to BL = d and queries to
// BL = q; cells without queries or database rows stay absent and are excluded
// from the range/std summary.
BlurMatrix blur_matrix(const DescriptorStore& queries,
                       const DescriptorStore& database,
                       std::int64_t cutoff = kCutoffAll,
                       bool truncated_denominator = true);

void write_descriptor_store(const std::string& path,
                            const DescriptorStore& store);
DescriptorStore read_descriptor_store(const std::string& path);
// Merges into an existing store (duplicate ids rejected).
void read_descriptor_store_into(const std::string& path,
                                DescriptorStore& store);

nlohmann::ordered_json report_to_json(const EvalReport& report);

}  // namespace blurret
