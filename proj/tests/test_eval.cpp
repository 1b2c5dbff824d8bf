#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "blurret/errors.hpp"
#include "blurret/eval.hpp"
#include "blurret/rng.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace blurret;

namespace {

Eigen::VectorXd random_vec(Rng& rng, int d) {
  Eigen::VectorXd v(d);
  for (int i = 0; i < d; ++i) v[i] = rng.normal();
  if (v.norm() < 1e-6) v[0] += 1.0;
  return v;
}

Eigen::VectorXd unit(const Eigen::VectorXd& v) { return v / v.norm(); }

// A store of unit basis-like vectors whose pairwise similarities are fully
// controlled: descriptor(angle) = (cos angle, sin angle).
Eigen::VectorXd planar(double angle) {
  Eigen::VectorXd v(2);
  v[0] = std::cos(angle);
  v[1] = std::sin(angle);
  return v;
}

}  // namespace

TEST_SUITE_BEGIN("eval");

TEST_CASE("store: rows are unit-normalized and metadata sticks") {
  Rng rng(11);
  DescriptorStore store;
  for (int i = 0; i < 20; ++i) {
    Eigen::VectorXd v = random_vec(rng, 5) * (0.01 + i);
    store.add(100 + i, 7 + (i % 3), 1 + (i % 6), v);
  }
  CHECK(store.size() == 20);
  CHECK(store.dim() == 5);
  for (std::size_t i = 0; i < store.size(); ++i) {
    CHECK(std::fabs(store.descriptor(i).norm() - 1.0) <= 1e-12);
    CHECK(store.id(i) == 100 + std::int64_t(i));
    CHECK(store.object_id(i) == 7 + std::int64_t(i % 3));
    CHECK(store.bl(i) == 1 + int(i % 6));
  }
}

TEST_CASE("store: duplicate ids, shape drift and degenerate rows rejected") {
  DescriptorStore store;
  Eigen::VectorXd v(3);
  v << 1.0, 0.0, 0.0;
  store.add(1, 0, 1, v);
  CHECK_THROWS_AS(store.add(1, 0, 1, v), DomainError);
  Eigen::VectorXd w(4);
  w << 1.0, 0.0, 0.0, 0.0;
  CHECK_THROWS_AS(store.add(2, 0, 1, w), ShapeMismatch);
  Eigen::VectorXd z = Eigen::VectorXd::Zero(3);
  CHECK_THROWS_AS(store.add(3, 0, 1, z), DegenerateDescriptor);
  Eigen::VectorXd e(0);
  DescriptorStore fresh;
  CHECK_THROWS_AS(fresh.add(1, 0, 1, e), DomainError);
}

TEST_CASE("search: agrees with a brute-force oracle across random stores") {
  Rng rng(21);
  for (int trial = 0; trial < 100; ++trial) {
    int d = 3 + int(rng.uniform_int(0, 5));
    int n = 5 + int(rng.uniform_int(0, 35));
    DescriptorStore store;
    std::vector<Eigen::VectorXd> rows;
    for (int i = 0; i < n; ++i) {
      Eigen::VectorXd v = unit(random_vec(rng, d));
      // Occasionally duplicate a previous row verbatim to force score ties.
      if (!rows.empty() && rng.uniform() < 0.3) v = rows[size_t(rng.uniform_int(0, int64_t(rows.size()) - 1))];
      rows.push_back(v);
      store.add(1000 - i, i % 4, 1 + (i % 6), v);  // descending ids stress tie order
    }
    Eigen::VectorXd q = unit(random_vec(rng, d));
    auto got = search(store, q);
    REQUIRE(got.size() == std::size_t(n));

    std::vector<std::pair<int64_t, double>> scored;
    for (int i = 0; i < n; ++i) scored.emplace_back(1000 - i, rows[size_t(i)].dot(q));
    auto want = oracle::rank_by_score(scored);
    for (int i = 0; i < n; ++i) {
      CHECK(got[size_t(i)].first == want[size_t(i)].first);
      CHECK(std::fabs(got[size_t(i)].second - want[size_t(i)].second) <= 1e-12);
    }

    // Top-k is the ranking prefix.
    auto top3 = search(store, q, std::min<std::int64_t>(3, n));
    for (std::size_t i = 0; i < top3.size(); ++i)
      CHECK(top3[i].first == got[i].first);
    auto beyond = search(store, q, n + 50);
    CHECK(beyond.size() == std::size_t(n));
  }
}

TEST_CASE("search: rejects empty stores, shape drift and non-unit queries") {
  DescriptorStore store;
  Eigen::VectorXd v(2);
  v << 1.0, 0.0;
  CHECK_THROWS_AS(search(store, v), EmptyIndex);
  store.add(1, 0, 1, v);
  Eigen::VectorXd w(3);
  w << 1.0, 0.0, 0.0;
  CHECK_THROWS_AS(search(store, w), ShapeMismatch);
  Eigen::VectorXd big(2);
  big << 2.0, 0.0;
  CHECK_THROWS_AS(search(store, big), DomainError);
  CHECK_THROWS_AS(search(store, v, -3), DomainError);
}

TEST_CASE("average precision: closed forms") {
  // Hits at ranks 1 and 3 of two positives: (1/1 + 2/3) / 2.
  CHECK(average_precision({1, 0, 1}, 2) == doctest::Approx(5.0 / 6.0).epsilon(1e-12));
  // Perfect ranking.
  CHECK(average_precision({1, 1, 0, 0}, 2) == doctest::Approx(1.0).epsilon(1e-12));
  // Sole positive buried past the cutoff scores zero.
  std::vector<int> rel(101, 0);
  rel[100] = 1;
  CHECK(average_precision(rel, 1, 100) == 0.0);
  // Truncated vs plain denominator at cutoff 1 with five positives.
  CHECK(average_precision({1}, 5, 1, true) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(average_precision({1}, 5, 1, false) == doctest::Approx(0.2).epsilon(1e-12));
  // Cutoff equal to the list length changes nothing.
  CHECK(average_precision({0, 1, 0, 1}, 2, 4) ==
        doctest::Approx(average_precision({0, 1, 0, 1}, 2)).epsilon(1e-12));
  CHECK_THROWS_AS(average_precision({1}, 0), DomainError);
  CHECK_THROWS_AS(average_precision({1}, 1, 0), DomainError);
}

TEST_CASE("average precision: random lists match the oracle; promotions "
          "never hurt") {
  Rng rng(31);
  for (int trial = 0; trial < 300; ++trial) {
    int n = 2 + int(rng.uniform_int(0, 30));
    std::vector<int> rel(static_cast<std::size_t>(n), 0);
    int pos = 0;
    for (auto& r : rel) {
      r = rng.uniform() < 0.3 ? 1 : 0;
      pos += r;
    }
    if (pos == 0) {
      rel[size_t(rng.uniform_int(0, n - 1))] = 1;
      pos = 1;
    }
    bool trunc = rng.uniform() < 0.5;
    std::int64_t cutoff = rng.uniform() < 0.4
                              ? kCutoffAll
                              : 1 + rng.uniform_int(0, n + 4);
    double got = average_precision(rel, pos, cutoff, trunc);
    double want = oracle::average_precision(rel, pos, long(cutoff), trunc);
    CHECK(std::fabs(got - want) <= 1e-12);

    // Swap a (0,1) adjacent pair into (1,0): AP must not decrease.
    for (int k = 0; k + 1 < n; ++k) {
      if (rel[size_t(k)] == 0 && rel[size_t(k + 1)] == 1) {
        auto promoted = rel;
        std::swap(promoted[size_t(k)], promoted[size_t(k + 1)]);
        double better = average_precision(promoted, pos, cutoff, trunc);
        CHECK(better >= got - 1e-12);
        break;
      }
    }
  }
}

TEST_CASE("evaluate: overall is the query-count weighted mean of the "
          "per-level means") {
  Rng rng(41);
  DescriptorStore queries, database;
  // 4 objects x 5 database rows each, random levels; 12 queries.
  int64_t id = 0;
  for (int obj = 0; obj < 4; ++obj)
    for (int k = 0; k < 5; ++k)
      database.add(id++, obj, 1 + int(rng.uniform_int(0, 5)),
                   random_vec(rng, 6));
  for (int qi = 0; qi < 12; ++qi)
    queries.add(10000 + qi, qi % 4, 1 + int(rng.uniform_int(0, 5)),
                random_vec(rng, 6));

  EvalReport rep = evaluate(queries, database);
  CHECK(rep.skipped_queries == 0);
  CHECK(rep.counted_queries == 12);
  double weighted = 0.0;
  int64_t total = 0;
  for (int b = 0; b < 6; ++b) {
    if (rep.per_query_bl[size_t(b)]) {
      weighted += *rep.per_query_bl[size_t(b)] *
                  double(rep.per_query_bl_count[size_t(b)]);
      total += rep.per_query_bl_count[size_t(b)];
    } else {
      CHECK(rep.per_query_bl_count[size_t(b)] == 0);
    }
  }
  REQUIRE(total == 12);
  CHECK(std::fabs(rep.overall - weighted / 12.0) <= 1e-12);
  CHECK(rep.overall >= 0.0);
  CHECK(rep.overall <= 1.0);
}

TEST_CASE("evaluate: cutoff covering the database reproduces the full run") {
  Rng rng(43);
  DescriptorStore queries, database;
  int64_t id = 0;
  for (int obj = 0; obj < 3; ++obj)
    for (int k = 0; k < 6; ++k)
      database.add(id++, obj, 1 + (k % 6), random_vec(rng, 5));
  for (int qi = 0; qi < 9; ++qi)
    queries.add(500 + qi, qi % 3, 1 + (qi % 6), random_vec(rng, 5));

  EvalReport all = evaluate(queries, database, kCutoffAll);
  EvalReport capped = evaluate(queries, database, int64_t(database.size()));
  CHECK(std::fabs(all.overall - capped.overall) <= 1e-15);
  for (int b = 0; b < 6; ++b) {
    CHECK(all.per_query_bl[size_t(b)].has_value() ==
          capped.per_query_bl[size_t(b)].has_value());
    if (all.per_query_bl[size_t(b)])
      CHECK(std::fabs(*all.per_query_bl[size_t(b)] -
                      *capped.per_query_bl[size_t(b)]) <= 1e-15);
  }
}

TEST_CASE("evaluate: orphan queries are skipped and counted; id overlap "
          "rejected") {
  Rng rng(47);
  DescriptorStore queries, database;
  database.add(0, 5, 2, random_vec(rng, 4));
  database.add(1, 5, 3, random_vec(rng, 4));
  database.add(2, 6, 1, random_vec(rng, 4));
  queries.add(100, 5, 2, random_vec(rng, 4));
  queries.add(101, 9, 4, random_vec(rng, 4));  // object 9 absent from db
  EvalReport rep = evaluate(queries, database);
  CHECK(rep.skipped_queries == 1);
  CHECK(rep.counted_queries == 1);

  DescriptorStore clash;
  clash.add(0, 3, 1, random_vec(rng, 4));  // id 0 is in the database
  CHECK_THROWS_AS(evaluate(clash, database), DomainError);
  DescriptorStore empty;
  CHECK_THROWS_AS(evaluate(queries, empty), EmptyIndex);
}

TEST_CASE("evaluate: identical results for rescaled descriptors") {
  Rng rng(53);
  std::vector<Eigen::VectorXd> qv, dv;
  for (int i = 0; i < 8; ++i) qv.push_back(random_vec(rng, 6));
  for (int i = 0; i < 24; ++i) dv.push_back(random_vec(rng, 6));
  auto build = [&](double scale) {
    DescriptorStore q, db;
    for (int i = 0; i < 8; ++i)
      q.add(1000 + i, i % 4, 1 + (i % 6), qv[size_t(i)] * scale);
    for (int i = 0; i < 24; ++i)
      db.add(i, i % 4, 1 + (i % 6), dv[size_t(i)] * scale);
    return evaluate(q, db);
  };
  // Power-of-two scaling is exact in floating point, so normalization makes
  // the evaluation bit-identical.
  EvalReport a = build(1.0);
  EvalReport b = build(4.0);
  CHECK(a.overall == b.overall);
  for (int k = 0; k < 6; ++k) {
    CHECK(a.per_query_bl[size_t(k)].has_value() ==
          b.per_query_bl[size_t(k)].has_value());
    if (a.per_query_bl[size_t(k)])
      CHECK(*a.per_query_bl[size_t(k)] == *b.per_query_bl[size_t(k)]);
  }
}

TEST_CASE("blur matrix: cells, absences and summary statistics by hand") {
  // Two objects on the unit circle. Database: object 0 at angle 0, object 1
  // at angle pi/2, each present at levels 1 and 2 only. Queries: one per
  // object at level 1, one per object at level 3.
  DescriptorStore database;
  database.add(0, 0, 1, planar(0.0));
  database.add(1, 1, 1, planar(1.5707963267948966));
  database.add(2, 0, 2, planar(0.05));
  database.add(3, 1, 2, planar(1.52));
  DescriptorStore queries;
  queries.add(100, 0, 1, planar(0.1));
  queries.add(101, 1, 1, planar(1.47));
  queries.add(102, 0, 3, planar(-0.2));
  queries.add(103, 1, 3, planar(1.8));

  BlurMatrix m = blur_matrix(queries, database);
  // Populated database levels: 1 and 2. Populated query levels: 1 and 3.
  // Every query ranks its own object first inside each restricted database,
  // so all four present cells are perfect.
  int present = 0;
  for (int d = 0; d < 6; ++d)
    for (int q = 0; q < 6; ++q)
      if (m.cells[size_t(d)][size_t(q)]) ++present;
  CHECK(present == 4);
  CHECK(m.absent_cells == 32);
  REQUIRE(m.cells[0][0].has_value());
  REQUIRE(m.cells[0][2].has_value());
  REQUIRE(m.cells[1][0].has_value());
  REQUIRE(m.cells[1][2].has_value());
  CHECK(*m.cells[0][0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(*m.cells[1][2] == doctest::Approx(1.0).epsilon(1e-12));
  REQUIRE(m.range.has_value());
  REQUIRE(m.std_dev.has_value());
  CHECK(*m.range == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(*m.std_dev == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("blur matrix: range and population std over imperfect cells") {
  // Database level 1 only; two query levels. Queries at level 1 rank their
  // object first (AP 1); the level-2 query is misled (AP 1/2).
  DescriptorStore database;
  database.add(0, 0, 1, planar(0.0));
  database.add(1, 1, 1, planar(1.5707963267948966));
  DescriptorStore queries;
  queries.add(100, 0, 1, planar(0.2));
  queries.add(101, 0, 2, planar(1.2));  // closer to object 1's row

  BlurMatrix m = blur_matrix(queries, database);
  REQUIRE(m.cells[0][0].has_value());
  REQUIRE(m.cells[0][1].has_value());
  CHECK(*m.cells[0][0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(*m.cells[0][1] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(m.absent_cells == 34);
  // Present cells {1, 0.5}: range 0.5, population std 0.25.
  REQUIRE(m.range.has_value());
  REQUIRE(m.std_dev.has_value());
  CHECK(*m.range == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(*m.std_dev == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("store files: roundtrip preserves metadata and f32 descriptors") {
  Rng rng(61);
  testutil::TempDir tmp;
  DescriptorStore store;
  for (int i = 0; i < 17; ++i)
    store.add(3 * i + 1, i % 5, 1 + (i % 6), random_vec(rng, 9));
  const std::string path = tmp.file("store.bin");
  write_descriptor_store(path, store);
  DescriptorStore back = read_descriptor_store(path);
  REQUIRE(back.size() == store.size());
  CHECK(back.dim() == store.dim());
  for (std::size_t i = 0; i < store.size(); ++i) {
    CHECK(back.id(i) == store.id(i));
    CHECK(back.object_id(i) == store.object_id(i));
    CHECK(back.bl(i) == store.bl(i));
    Eigen::VectorXd a = store.descriptor(i);
    Eigen::VectorXd b = back.descriptor(i);
    for (int j = 0; j < store.dim(); ++j)
      CHECK(std::fabs(a[j] - b[j]) <= 1e-6);
  }

  // Same store, same bytes.
  const std::string path2 = tmp.file("store2.bin");
  write_descriptor_store(path2, store);
  CHECK(testutil::read_text_file(path) == testutil::read_text_file(path2));

  // Merging a file with overlapping ids must fail.
  CHECK_THROWS_AS(read_descriptor_store_into(path2, back), DomainError);
  CHECK_THROWS_AS(read_descriptor_store(tmp.file("missing.bin")), IoError);
  testutil::write_text_file(tmp.file("junk.bin"), "not a store at all");
  CHECK_THROWS_AS(read_descriptor_store(tmp.file("junk.bin")), IoError);
}

TEST_CASE("report json: stable schema with explicit nulls") {
  EvalReport rep;
  rep.overall = 0.625;
  rep.per_query_bl[0] = 0.75;
  rep.per_query_bl[3] = 0.5;
  rep.skipped_queries = 2;
  nlohmann::ordered_json j = report_to_json(rep);
  CHECK(j["overall"] == 0.625);
  CHECK(j["per_query_bl"]["1"] == 0.75);
  CHECK(j["per_query_bl"]["2"].is_null());
  CHECK(j["per_query_bl"]["4"] == 0.5);
  CHECK(j["skipped_queries"] == 2);
  CHECK_FALSE(j.contains("matrix"));
  CHECK_FALSE(j.contains("range"));
  CHECK_FALSE(j.contains("std"));

  BlurMatrix m;
  m.cells[0][0] = 1.0;
  m.range = 0.25;
  m.std_dev = 0.125;
  m.absent_cells = 35;
  rep.matrix = m;
  j = report_to_json(rep);
  REQUIRE(j.contains("matrix"));
  CHECK(j["matrix"].size() == 6);
  CHECK(j["matrix"][0][0] == 1.0);
  CHECK(j["matrix"][0][1].is_null());
  CHECK(j["matrix"][5][5].is_null());
  CHECK(j["range"] == 0.25);
  CHECK(j["std"] == 0.125);
}

TEST_SUITE_END();
