#include "blurret/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <numeric>

#include "blurret/errors.hpp"

namespace blurret {

void DescriptorStore::add(std::int64_t id, std::int64_t object_id, int bl,
                          const Eigen::VectorXd& descriptor) {
  if (dim_ == 0) {
    if (descriptor.size() == 0)
      throw DomainError("DescriptorStore: empty descriptor");
    dim_ = static_cast<int>(descriptor.size());
  } else if (descriptor.size() != dim_) {
    throw ShapeMismatch("DescriptorStore: descriptor dim " +
                        std::to_string(descriptor.size()) + " != " +
                        std::to_string(dim_));
  }
  if (row_of_id_.count(id))
    throw DomainError("DescriptorStore: duplicate id " + std::to_string(id));
  double norm = descriptor.norm();
  if (!(norm > 1e-12))
    throw DegenerateDescriptor("DescriptorStore: id " + std::to_string(id) +
                               " has norm " + std::to_string(norm));
  row_of_id_.emplace(id, ids_.size());
  ids_.push_back(id);
  object_ids_.push_back(object_id);
  bls_.push_back(bl);
  for (int j = 0; j < dim_; ++j) data_.push_back(descriptor[j] / norm);
}

Eigen::VectorXd DescriptorStore::descriptor(std::size_t row) const {
  Eigen::VectorXd out(dim_);
  for (int j = 0; j < dim_; ++j) out[j] = data_[row * dim_ + j];
  return out;
}

std::vector<std::pair<std::int64_t, double>> search(const DescriptorStore& store,
                                                    const Eigen::VectorXd& query,
                                                    std::int64_t k) {
  if (store.size() == 0) throw EmptyIndex("search: store is empty");
  if (query.size() != store.dim())
    throw ShapeMismatch("search: query dim " + std::to_string(query.size()) +
                        " != store dim " + std::to_string(store.dim()));
  if (std::fabs(query.norm() - 1.0) > 1e-6)
    throw DomainError("search: query must be unit norm");

  const std::size_t n = store.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<double> scores(n);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    Eigen::VectorXd row = store.descriptor(i);
    for (int j = 0; j < store.dim(); ++j) s += row[j] * query[j];
    scores[i] = s;
  }
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return store.id(a) < store.id(b);
  });
  std::size_t take = n;
  if (k != kCutoffAll) {
    if (k < 0) throw DomainError("search: k must be positive or all");
    take = std::min<std::size_t>(n, static_cast<std::size_t>(k));
  }
  std::vector<std::pair<std::int64_t, double>> out;
  out.reserve(take);
  for (std::size_t i = 0; i < take; ++i)
    out.emplace_back(store.id(order[i]), scores[order[i]]);
  return out;
}

double average_precision(const std::vector<int>& relevance_by_rank,
                         std::int64_t n_positives, std::int64_t cutoff,
                         bool truncated_denominator) {
  if (n_positives < 1)
    throw DomainError("average_precision: n_positives must be >= 1");
  std::int64_t limit = static_cast<std::int64_t>(relevance_by_rank.size());
  if (cutoff != kCutoffAll) {
    if (cutoff < 1) throw DomainError("average_precision: cutoff must be >= 1");
    limit = std::min(limit, cutoff);
  }
  double sum = 0.0;
  std::int64_t hits = 0;
  for (std::int64_t rank = 1; rank <= limit; ++rank) {
    if (relevance_by_rank[static_cast<std::size_t>(rank - 1)]) {
      ++hits;
      sum += static_cast<double>(hits) / static_cast<double>(rank);
    }
  }
  std::int64_t denom = n_positives;
  if (truncated_denominator && cutoff != kCutoffAll)
    denom = std::min(n_positives, cutoff);
  return sum / static_cast<double>(denom);
}

namespace {

int bl_bucket(int bl) { return std::min(std::max(bl, 1), 6); }

// Mean AP over queries against the database; rows may be restricted on
// either side. Returns counted/skipped and per-bucket sums when asked.
struct MeanApResult {
  double mean = 0.0;
  std::int64_t counted = 0;
  std::int64_t skipped = 0;
};

MeanApResult mean_ap(const DescriptorStore& queries,
                     const std::vector<std::size_t>& query_rows,
                     const DescriptorStore& database, std::int64_t cutoff,
                     bool truncated_denominator,
                     std::array<double, 6>* bl_sums,
                     std::array<std::int64_t, 6>* bl_counts) {
  MeanApResult res;
  double total = 0.0;
  std::unordered_map<std::int64_t, std::int64_t> object_of;
  object_of.reserve(database.size());
  for (std::size_t di = 0; di < database.size(); ++di)
    object_of.emplace(database.id(di), database.object_id(di));
  for (std::size_t qi : query_rows) {
    std::int64_t n_pos = 0;
    for (std::size_t di = 0; di < database.size(); ++di)
      if (database.object_id(di) == queries.object_id(qi)) ++n_pos;
    if (n_pos == 0) {
      ++res.skipped;
      continue;
    }
    auto ranking = search(database, queries.descriptor(qi), kCutoffAll);
    std::vector<int> rel(ranking.size());
    for (std::size_t r = 0; r < ranking.size(); ++r)
      rel[r] = object_of.at(ranking[r].first) == queries.object_id(qi) ? 1 : 0;
    double ap = average_precision(rel, n_pos, cutoff, truncated_denominator);
    total += ap;
    ++res.counted;
    if (bl_sums) {
      int b = bl_bucket(queries.bl(qi)) - 1;
      (*bl_sums)[static_cast<std::size_t>(b)] += ap;
      ++(*bl_counts)[static_cast<std::size_t>(b)];
    }
  }
  if (res.counted > 0) res.mean = total / static_cast<double>(res.counted);
  return res;
}

}  // namespace

EvalReport evaluate(const DescriptorStore& queries,
                    const DescriptorStore& database, std::int64_t cutoff,
                    bool truncated_denominator) {
  if (database.size() == 0) throw EmptyIndex("evaluate: database is empty");
  for (std::size_t qi = 0; qi < queries.size(); ++qi) {
    // No id overlap between the two stores.
    for (std::size_t di = 0; di < database.size(); ++di) {
      if (queries.id(qi) == database.id(di))
        throw DomainError("evaluate: id " + std::to_string(queries.id(qi)) +
                          " appears in both queries and database");
    }
  }
  std::vector<std::size_t> rows(queries.size());
  std::iota(rows.begin(), rows.end(), std::size_t{0});

  EvalReport report;
  std::array<double, 6> bl_sums{};
  std::array<std::int64_t, 6> bl_counts{};
  MeanApResult res = mean_ap(queries, rows, database, cutoff,
                             truncated_denominator, &bl_sums, &bl_counts);
  report.overall = res.mean;
  report.counted_queries = res.counted;
  report.skipped_queries = res.skipped;
  for (int b = 0; b < 6; ++b) {
    report.per_query_bl_count[static_cast<std::size_t>(b)] = bl_counts[static_cast<std::size_t>(b)];
    if (bl_counts[static_cast<std::size_t>(b)] > 0)
      report.per_query_bl[static_cast<std::size_t>(b)] =
          bl_sums[static_cast<std::size_t>(b)] /
          static_cast<double>(bl_counts[static_cast<std::size_t>(b)]);
  }
  return report;
}

BlurMatrix blur_matrix(const DescriptorStore& queries,
                       const DescriptorStore& database, std::int64_t cutoff,
                       bool truncated_denominator) {
  if (database.size() == 0) throw EmptyIndex("blur_matrix: database is empty");
  BlurMatrix matrix;
  std::vector<double> present;
  for (int d = 1; d <= 6; ++d) {
    DescriptorStore restricted;
    for (std::size_t di = 0; di < database.size(); ++di)
      if (database.bl(di) == d)
        restricted.add(database.id(di), database.object_id(di), database.bl(di),
                       database.descriptor(di));
    for (int q = 1; q <= 6; ++q) {
      std::vector<std::size_t> rows;
      for (std::size_t qi = 0; qi < queries.size(); ++qi)
        if (queries.bl(qi) == q) rows.push_back(qi);
      if (restricted.size() == 0 || rows.empty()) {
        ++matrix.absent_cells;
        continue;
      }
      MeanApResult res = mean_ap(queries, rows, restricted, cutoff,
                                 truncated_denominator, nullptr, nullptr);
      if (res.counted == 0) {
        ++matrix.absent_cells;
        continue;
      }
      matrix.cells[static_cast<std::size_t>(d - 1)][static_cast<std::size_t>(q - 1)] = res.mean;
      present.push_back(res.mean);
    }
  }
  if (!present.empty()) {
    auto [mn, mx] = std::minmax_element(present.begin(), present.end());
    matrix.range = *mx - *mn;
    double mean = std::accumulate(present.begin(), present.end(), 0.0) /
                  static_cast<double>(present.size());
    double var = 0.0;
    for (double v : present) var += (v - mean) * (v - mean);
    var /= static_cast<double>(present.size());
    matrix.std_dev = std::sqrt(var);
  }
  return matrix;
}

namespace {

constexpr char kMagic[4] = {'B', 'R', 'D', 'S'};
constexpr std::uint32_t kVersion = 1;

void write_raw(std::FILE* f, const void* p, std::size_t n, const std::string& path) {
  if (std::fwrite(p, 1, n, f) != n)
    throw IoError("short write to " + path);
}

void read_raw(std::FILE* f, void* p, std::size_t n, const std::string& path) {
  if (std::fread(p, 1, n, f) != n)
    throw IoError("short read from " + path);
}

}  // namespace

void write_descriptor_store(const std::string& path,
                            const DescriptorStore& store) {
  std::FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) throw IoError("cannot open " + path + " for writing");
  try {
    write_raw(f, kMagic, 4, path);
    std::uint32_t version = kVersion;
    std::uint32_t d = static_cast<std::uint32_t>(store.dim());
    std::uint64_t n = store.size();
    write_raw(f, &version, sizeof version, path);
    write_raw(f, &d, sizeof d, path);
    write_raw(f, &n, sizeof n, path);
    std::vector<float> row(store.dim());
    for (std::size_t i = 0; i < store.size(); ++i) {
      std::int64_t id = store.id(i);
      std::int64_t object_id = store.object_id(i);
      std::int32_t bl = store.bl(i);
      write_raw(f, &id, sizeof id, path);
      write_raw(f, &object_id, sizeof object_id, path);
      write_raw(f, &bl, sizeof bl, path);
      Eigen::VectorXd v = store.descriptor(i);
      for (int j = 0; j < store.dim(); ++j) row[static_cast<std::size_t>(j)] = static_cast<float>(v[j]);
      write_raw(f, row.data(), sizeof(float) * row.size(), path);
    }
  } catch (...) {
    std::fclose(f);
    throw;
  }
  if (std::fclose(f) != 0) throw IoError("cannot close " + path);
}

void read_descriptor_store_into(const std::string& path,
                                DescriptorStore& store) {
  std::FILE* f = std::fopen(path.c_str(), "rb");
  if (!f) throw IoError("cannot open " + path);
  try {
    char magic[4];
    read_raw(f, magic, 4, path);
    if (std::memcmp(magic, kMagic, 4) != 0)
      throw IoError(path + " is not a descriptor store");
    std::uint32_t version = 0, d = 0;
    std::uint64_t n = 0;
    read_raw(f, &version, sizeof version, path);
    if (version != kVersion)
      throw IoError(path + ": unsupported version " + std::to_string(version));
    read_raw(f, &d, sizeof d, path);
    read_raw(f, &n, sizeof n, path);
    if (d == 0) throw IoError(path + ": zero descriptor dimension");
    std::vector<float> row(d);
    for (std::uint64_t i = 0; i < n; ++i) {
      std::int64_t id = 0, object_id = 0;
      std::int32_t bl = 0;
      read_raw(f, &id, sizeof id, path);
      read_raw(f, &object_id, sizeof object_id, path);
      read_raw(f, &bl, sizeof bl, path);
      read_raw(f, row.data(), sizeof(float) * row.size(), path);
      Eigen::VectorXd v(d);
      for (std::uint32_t j = 0; j < d; ++j) v[static_cast<int>(j)] = static_cast<double>(row[j]);
      store.add(id, object_id, bl, v);
    }
  } catch (...) {
    std::fclose(f);
    throw;
  }
  std::fclose(f);
}

DescriptorStore read_descriptor_store(const std::string& path) {
  DescriptorStore store;
  read_descriptor_store_into(path, store);
  return store;
}

nlohmann::ordered_json report_to_json(const EvalReport& report) {
  nlohmann::ordered_json j;
  j["overall"] = report.overall;
  nlohmann::ordered_json per_bl;
  for (int b = 1; b <= 6; ++b) {
    const auto& v = report.per_query_bl[static_cast<std::size_t>(b - 1)];
    if (v)
      per_bl[std::to_string(b)] = *v;
    else
      per_bl[std::to_string(b)] = nullptr;
  }
  j["per_query_bl"] = per_bl;
  j["skipped_queries"] = report.skipped_queries;
  if (report.matrix) {
    nlohmann::ordered_json rows = nlohmann::ordered_json::array();
    for (int d = 0; d < 6; ++d) {
      nlohmann::ordered_json row = nlohmann::ordered_json::array();
      for (int q = 0; q < 6; ++q) {
        const auto& cell = report.matrix->cells[static_cast<std::size_t>(d)][static_cast<std::size_t>(q)];
        if (cell)
          row.push_back(*cell);
        else
          row.push_back(nullptr);
      }
      rows.push_back(row);
    }
    j["matrix"] = rows;
    if (report.matrix->range)
      j["range"] = *report.matrix->range;
    else
      j["range"] = nullptr;
    if (report.matrix->std_dev)
      j["std"] = *report.matrix->std_dev;
    else
      j["std"] = nullptr;
  }
  return j;
}

}  // namespace blurret
