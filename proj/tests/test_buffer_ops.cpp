#include <algorithm>
#include <map>
#include <random>

#include "bepsilon/buffer_ops.hpp"
#include "doctest.h"

using namespace bepsilon;

TEST_CASE("merge_annihilate cancels opposite pairs") {
  std::vector<Update> dst = {make_insert(7)};
  auto d = merge_annihilate(dst, std::vector<Update>{make_delete(7)});
  CHECK(dst.empty());
  CHECK(d == -1);

  dst = {make_delete(3)};
  d = merge_annihilate(dst, std::vector<Update>{make_insert(3)});
  CHECK(dst.empty());
  CHECK(d == 0);  // the insert never became net content

  dst = {make_insert(1), make_delete(5)};
  d = merge_annihilate(dst, std::vector<Update>{make_insert(2), make_insert(9)});
  CHECK(dst.size() == 4);
  CHECK(d == 2);
  CHECK(is_sorted_unique(dst));
}

TEST_CASE("merge_annihilate rejects same-kind collisions") {
  std::vector<Update> dst = {make_insert(7)};
  CHECK_THROWS_AS(merge_annihilate(dst, std::vector<Update>{make_insert(7)}),
                  IntegrityError);
}

TEST_CASE("apply_to_keys applies inserts and deletes, returns unmatched deletes") {
  std::vector<Key> keys = {2, 4, 6};
  auto rest = apply_to_keys(
      keys, std::vector<Update>{make_insert(3), make_delete(4), make_delete(9)});
  CHECK(keys == std::vector<Key>{2, 3, 6});
  REQUIRE(rest.size() == 1);
  CHECK(rest[0].key == 9);

  CHECK_THROWS_AS(apply_to_keys(keys, std::vector<Update>{make_insert(2)}),
                  IntegrityError);
}

TEST_CASE("signed-count model: random merge chains match a map oracle") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<Update> run;
    std::map<Key, int> oracle;  // key -> signed count
    for (int step = 0; step < 300; ++step) {
      Key k = rng() % 40;
      int cur = oracle.count(k) ? oracle[k] : 0;
      // keep the trace precondition-valid for this single run
      Update u = (cur == 0) ? make_insert(k) : make_delete(k);
      oracle[k] = cur == 0 ? 1 : 0;
      merge_annihilate(run, std::vector<Update>{u});
    }
    std::vector<Key> live;
    for (auto& [k, v] : oracle)
      if (v == 1) live.push_back(k);
    std::vector<Key> got;
    for (auto& u : run)
      if (u.kind == UpdateKind::Insert) got.push_back(u.key);
    CHECK(got == live);
  }
}

TEST_CASE("split_at partitions by the left-closed pivot") {
  std::vector<Update> run = {make_insert(1), make_insert(5), make_insert(9)};
  auto right = split_at(run, 5);
  CHECK(run.size() == 1);
  CHECK(right.size() == 2);
  CHECK(right.front().key == 5);
  CHECK(count_in_range(run, 0, 100) == 1);
  CHECK(slice_range(right, 6, 100).size() == 1);
}
