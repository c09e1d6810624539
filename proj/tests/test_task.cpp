#include "bepsilon/pages.hpp"
#include "bepsilon/task.hpp"
#include "doctest.h"

using namespace bepsilon;

namespace {

Task<int> leaf_sum(StepContext& ctx, std::vector<BlockId> ids) {
  int total = 0;
  for (BlockId id : ids) {
    {
      auto p = ctx.pager().read<MicroLeafPage>(id);
      total += static_cast<int>(p->keys.size());
    }
    co_await ctx.gate();
  }
  co_return total;
}

Task<int> nested(StepContext& ctx, std::vector<BlockId> ids) {
  int a = co_await leaf_sum(ctx, ids);
  int b = co_await leaf_sum(ctx, ids);  // warm pass, no faults
  co_return a + b;
}

Task<void> boom(StepContext&) {
  throw IntegrityError("boom");
  co_return;
}

}  // namespace

TEST_CASE("tasks yield once per faulting access and finish warm passes in one step") {
  Pager pager(PagerConfig{.cache_blocks = 8});
  std::vector<BlockId> ids;
  for (int i = 0; i < 4; ++i) {
    auto p = pager.alloc<MicroLeafPage>();
    p->keys = {1, 2};
    ids.push_back(p.id());
  }
  pager.drop_cache();

  StepContext ctx(pager);
  Task<int> t = nested(ctx, ids);
  int yields = 0;
  while (ctx.resume_step(t)) ++yields;
  CHECK(yields == 4);  // 4 cold reads; the second pass is all cache hits
  CHECK(t.take_result() == 16);
  CHECK(ctx.max_faults_per_yield() == 1);
}

TEST_CASE("a cached run completes with zero yields") {
  Pager pager(PagerConfig{.cache_blocks = 8});
  std::vector<BlockId> ids;
  for (int i = 0; i < 3; ++i) {
    auto p = pager.alloc<MicroLeafPage>();
    ids.push_back(p.id());
  }
  StepContext ctx(pager);
  Task<int> t = leaf_sum(ctx, ids);  // blocks are still resident
  CHECK_FALSE(ctx.resume_step(t));
  CHECK(t.take_result() == 0);
}

TEST_CASE("exceptions propagate through nested resumption") {
  Pager pager(PagerConfig{.cache_blocks = 4});
  StepContext ctx(pager);
  Task<void> t = boom(ctx);
  CHECK_THROWS_AS(ctx.resume_step(t), IntegrityError);
}

TEST_CASE("abandoning a suspended task releases its page guards") {
  Pager pager(PagerConfig{.cache_blocks = 4});
  std::vector<BlockId> ids;
  for (int i = 0; i < 3; ++i) {
    auto p = pager.alloc<MicroLeafPage>();
    ids.push_back(p.id());
  }
  pager.drop_cache();
  {
    StepContext ctx(pager);
    Task<int> t = leaf_sum(ctx, ids);
    CHECK(ctx.resume_step(t));  // suspended holding nothing across the gate
  }
  // All guards are gone: the cache can evict everything.
  pager.drop_cache();
  CHECK(pager.cached_blocks() == 0);
}
