#include <algorithm>
#include <random>
#include <set>

#include "bepsilon/audit.hpp"
#include "bepsilon/leaf_store.hpp"
#include "doctest.h"

using namespace bepsilon;

namespace {

struct LeafFixture {
  Params params = derive_params(256, 0.5, 1ull << 20);
  Pager pager{PagerConfig{.cache_blocks = 12}};
  StepContext ctx{pager};
  LeafConfig cfg = leaf_config(params);
  BlockId leaf = leaf_create(pager);

  template <typename T>
  auto run(Task<T>&& task) {
    return run_to_completion(ctx, std::move(task));
  }

  // Push a batch through bulk_insert in flush-quantum chunks, oracle in step.
  void apply(std::set<Key>& oracle, std::vector<Update> ups) {
    std::sort(ups.begin(), ups.end(),
              [](const Update& a, const Update& b) { return a.key < b.key; });
    for (std::size_t i = 0; i < ups.size(); i += params.flush_quantum) {
      std::vector<Update> chunk(
          ups.begin() + i,
          ups.begin() + std::min(ups.size(), i + params.flush_quantum));
      run(leaf_bulk_insert(ctx, cfg, leaf, chunk));
    }
    for (const auto& u : ups) {
      if (u.kind == UpdateKind::Insert)
        oracle.insert(u.key);
      else
        oracle.erase(u.key);
    }
  }

  std::vector<Key> contents() {
    return run(leaf_collect(ctx, cfg, leaf, 0, ~0ull));
  }

  std::uint64_t net() { return run(leaf_net(ctx, leaf)); }
};

std::vector<Update> inserts(std::initializer_list<Key> ks) {
  std::vector<Update> v;
  for (Key k : ks) v.push_back(make_insert(k));
  return v;
}

}  // namespace

TEST_CASE("bulk_insert annihilates an insert/delete pair in place") {
  LeafFixture f;
  std::set<Key> oracle;
  f.apply(oracle, {make_insert(42)});
  auto before = f.net();
  f.apply(oracle, {make_delete(42)});
  CHECK(f.contents().empty());
  CHECK(f.net() == before - 1);
}

TEST_CASE("overflowing the micro-root buffer migrates a quantum to a micro-leaf") {
  LeafFixture f;
  std::set<Key> oracle;
  // Concentrated keys: few micro-leaves, so the pigeonhole share is large.
  std::vector<Update> ups;
  for (Key k = 1; k <= f.params.microroot_buffer_cap + f.params.flush_quantum; ++k)
    ups.push_back(make_insert(k));
  f.apply(oracle, ups);

  auto lr = f.pager.peek<LeafRoot>(f.leaf);
  CHECK(lr->buffer_count <= f.params.microroot_buffer_cap);
  CHECK(lr->microleaf_total() >= f.params.flush_quantum);
  CHECK(lr->net_size() == oracle.size());
}

TEST_CASE("random leaf traces match a multiset oracle") {
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 3; ++trial) {
    LeafFixture f;
    std::set<Key> oracle;
    for (int round = 0; round < 40; ++round) {
      std::vector<Update> batch;
      std::set<Key> touched;
      for (int i = 0; i < 250; ++i) {
        Key k = rng() % 5000;
        if (touched.count(k)) continue;
        touched.insert(k);
        bool present = oracle.count(k) != 0;
        // Half the time delete present keys, otherwise insert absent ones.
        if (present && (rng() % 2 == 0))
          batch.push_back(make_delete(k));
        else if (!present)
          batch.push_back(make_insert(k));
      }
      f.apply(oracle, batch);
    }
    std::vector<Key> expect(oracle.begin(), oracle.end());
    CHECK(f.contents() == expect);
    CHECK(f.net() == oracle.size());

    // Insertion-only micro-leaves, sorted, within their intervals.
    auto lr = f.pager.peek<LeafRoot>(f.leaf);
    for (const auto& mu : lr->microleaves) {
      for (BlockId pid : mu.pages) {
        auto page = f.pager.peek<MicroLeafPage>(pid);
        CHECK(std::is_sorted(page->keys.begin(), page->keys.end()));
      }
    }
  }
}

TEST_CASE("leaf ops perform at most one faulting access per yield") {
  LeafFixture f;
  std::set<Key> oracle;
  std::mt19937_64 rng(7);
  std::vector<Update> ups;
  for (int i = 0; i < 3000; ++i) ups.push_back(make_insert(10 + 3 * i));
  f.apply(oracle, ups);
  CHECK(f.ctx.max_faults_per_yield() <= 1);
}

TEST_CASE("leaf_split halves net content and partitions cleanly") {
  LeafFixture f;
  std::set<Key> oracle;
  std::vector<Update> ups;
  for (Key k = 0; k < 4 * f.params.tau; ++k) ups.push_back(make_insert(k * 7));
  f.apply(oracle, ups);
  std::uint64_t total = f.net();

  auto sr = f.run(leaf_split(f.ctx, f.cfg, f.leaf));
  CHECK(sr.left_net + sr.right_net == total);
  CHECK(sr.left_net >= total / 2 - 1);
  CHECK(sr.left_net <= total / 2 + 1);

  auto left = f.run(leaf_collect(f.ctx, f.cfg, f.leaf, 0, ~0ull));
  StepContext ctx2(f.pager);
  auto right = run_to_completion(
      ctx2, leaf_collect(ctx2, f.cfg, sr.right, 0, ~0ull));
  CHECK(left.size() == sr.left_net);
  CHECK(right.size() == sr.right_net);
  CHECK(!left.empty());
  CHECK(!right.empty());
  CHECK(left.back() < sr.separator);
  CHECK(right.front() >= sr.separator);

  std::vector<Key> joined = left;
  joined.insert(joined.end(), right.begin(), right.end());
  CHECK(joined == std::vector<Key>(oracle.begin(), oracle.end()));
}

TEST_CASE("leaf_split works when all content is still buffered") {
  LeafFixture f;
  std::set<Key> oracle;
  f.apply(oracle, inserts({1, 2, 3, 4, 5, 6, 7, 8}));
  auto sr = f.run(leaf_split(f.ctx, f.cfg, f.leaf));
  CHECK(sr.left_net == 4);
  CHECK(sr.right_net == 4);
  CHECK(sr.separator == 5);
}

TEST_CASE("leaf_merge keeps the union and resplits evenly above the max") {
  LeafFixture f;
  std::set<Key> oracle;
  // Build one big leaf, split it, then merge back.
  std::vector<Update> ups;
  for (Key k = 0; k < 3 * f.params.tau; ++k) ups.push_back(make_insert(k * 5));
  f.apply(oracle, ups);
  auto sr = f.run(leaf_split(f.ctx, f.cfg, f.leaf));

  auto mr = f.run(leaf_merge(f.ctx, f.cfg, f.leaf, sr.right, sr.separator,
                             f.params.leaf_max()));
  CHECK_FALSE(mr.resplit);  // 3 tau is under the 5 tau bound
  CHECK(mr.left_net == oracle.size());
  CHECK(f.contents() == std::vector<Key>(oracle.begin(), oracle.end()));

  SUBCASE("merge that overflows the max splits evenly") {
    std::vector<Update> more;
    for (Key k = 0; k < 3 * f.params.tau; ++k) more.push_back(make_insert(k * 5 + 1));
    f.apply(oracle, more);  // net 6 tau
    auto sr2 = f.run(leaf_split(f.ctx, f.cfg, f.leaf));
    auto mr2 = f.run(leaf_merge(f.ctx, f.cfg, f.leaf, sr2.right, sr2.separator,
                                f.params.leaf_max()));
    CHECK(mr2.resplit);
    CHECK(mr2.left_net + mr2.right_net == oracle.size());
    CHECK(mr2.left_net >= 2 * f.params.tau);
    CHECK(mr2.right_net >= 2 * f.params.tau);
    CHECK(mr2.left_net <= 3 * f.params.tau + 1);
    CHECK(mr2.right_net <= 3 * f.params.tau + 1);
  }
}

TEST_CASE("leaf_collect variants respect deletions still in the buffer") {
  LeafFixture f;
  std::set<Key> oracle;
  std::vector<Update> ups;
  for (Key k = 1; k <= 2000; ++k) ups.push_back(make_insert(k * 3));
  f.apply(oracle, ups);
  // Delete a band; small batch stays buffered in the micro-root.
  f.apply(oracle, {make_delete(300), make_delete(303), make_delete(306)});

  auto got = f.run(leaf_collect(f.ctx, f.cfg, f.leaf, 295, 310));
  std::vector<Key> expect;
  for (Key k : oracle)
    if (k >= 295 && k <= 310) expect.push_back(k);
  CHECK(got == expect);

  auto below = f.run(leaf_collect_below(f.ctx, f.cfg, f.leaf, 400, 10));
  CHECK(below.size() >= 10);
  CHECK(std::is_sorted(below.begin(), below.end()));
  CHECK(below.back() <= 400);
  for (Key k : below) CHECK(oracle.count(k) == 1);

  auto above = f.run(leaf_collect_above(f.ctx, f.cfg, f.leaf, 300, 5));
  REQUIRE(above.size() >= 5);
  CHECK(above.front() > 300);
  CHECK(oracle.count(above.front()) == 1);

  CHECK_THROWS_AS(f.run(leaf_collect(f.ctx, f.cfg, f.leaf, 10, 5)), ContractError);
}

TEST_CASE("packed append builds dense ordered micro-leaves") {
  LeafFixture f;
  std::vector<Key> keys;
  for (Key k = 0; k < 3000; ++k) keys.push_back(k * 2 + 1);
  auto net = f.run(leaf_append_packed(f.ctx, f.cfg, f.leaf, keys));
  CHECK(net == keys.size());
  CHECK(f.contents() == keys);
  auto lr = f.pager.peek<LeafRoot>(f.leaf);
  for (std::size_t i = 0; i + 1 < lr->microleaves.size(); ++i)
    CHECK(lr->microleaves[i].count >= f.params.microleaf_cap / 4);
}
