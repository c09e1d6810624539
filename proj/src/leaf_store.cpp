#include "bepsilon/leaf_store.hpp"

#include <algorithm>
#include <limits>

namespace bepsilon {

namespace {

constexpr Key kKeyMax = std::numeric_limits<Key>::max();

// Interval [lo, hi] of micro-leaf i within the leaf.
std::pair<Key, Key> mu_interval(const LeafRoot& lr, std::size_t i) {
  Key lo = i == 0 ? 0 : lr.mu_pivots[i - 1];
  Key hi = i == lr.mu_pivots.size() ? kKeyMax : lr.mu_pivots[i] - 1;
  return {lo, hi};
}

Task<std::vector<Update>> load_buffer(StepContext& ctx, BlockId leaf) {
  std::vector<BlockId> pages;
  {
    auto lr = ctx.pager().read<LeafRoot>(leaf);
    pages = lr->buffer_pages;
  }
  co_await ctx.gate();
  std::vector<Update> all;
  for (BlockId id : pages) {
    {
      auto p = ctx.pager().read<UpdateRunPage>(id);
      all.insert(all.end(), p->updates.begin(), p->updates.end());
    }
    co_await ctx.gate();
  }
  integrity_check(is_sorted_unique(all), "micro-root buffer not sorted");
  co_return all;
}

Task<std::vector<Key>> load_microleaf(StepContext& ctx, std::vector<BlockId> pages) {
  std::vector<Key> keys;
  for (BlockId id : pages) {
    {
      auto p = ctx.pager().read<MicroLeafPage>(id);
      keys.insert(keys.end(), p->keys.begin(), p->keys.end());
    }
    co_await ctx.gate();
  }
  co_return keys;
}

// Rewrite a page run to hold `items`, reusing ids and alloc/freeing tails.
// Touches ceil(n/B) pages; each is a write access plus a gate.
template <typename PageT, typename Item>
Task<void> store_run(StepContext& ctx, LeafConfig cfg, std::vector<BlockId>& pages,
                     std::vector<Item> items,
                     std::vector<Item> PageT::*field) {
  std::size_t need = (items.size() + cfg.block_size - 1) / cfg.block_size;
  while (pages.size() > need) {
    ctx.pager().free_block(pages.back());
    pages.pop_back();
  }
  while (pages.size() < need) {
    auto p = ctx.pager().alloc<PageT>();
    pages.push_back(p.id());
  }
  for (std::size_t i = 0; i < need; ++i) {
    std::size_t lo = i * cfg.block_size;
    std::size_t hi = std::min(items.size(), lo + cfg.block_size);
    {
      auto p = ctx.pager().write<PageT>(pages[i]);
      ((*p).*field).assign(items.begin() + lo, items.begin() + hi);
    }
    co_await ctx.gate();
  }
  co_return;
}

Task<void> store_buffer(StepContext& ctx, LeafConfig cfg, BlockId leaf,
                        std::vector<Update> buf) {
  std::vector<BlockId> pages;
  {
    auto lr = ctx.pager().read<LeafRoot>(leaf);
    pages = lr->buffer_pages;
  }
  std::uint32_t inserts = 0;
  for (const auto& u : buf)
    if (u.kind == UpdateKind::Insert) ++inserts;
  std::uint32_t count = static_cast<std::uint32_t>(buf.size());
  co_await store_run<UpdateRunPage>(ctx, cfg, pages, std::move(buf),
                                    &UpdateRunPage::updates);
  {
    auto lr = ctx.pager().write<LeafRoot>(leaf);
    lr->buffer_pages = std::move(pages);
    lr->buffer_count = count;
    lr->buffer_inserts = inserts;
  }
  co_await ctx.gate();
  co_return;
}

Task<void> store_microleaf(StepContext& ctx, LeafConfig cfg, BlockId leaf,
                           std::size_t idx, std::vector<Key> keys) {
  std::vector<BlockId> pages;
  {
    auto lr = ctx.pager().read<LeafRoot>(leaf);
    pages = lr->microleaves[idx].pages;
  }
  std::uint32_t count = static_cast<std::uint32_t>(keys.size());
  co_await store_run<MicroLeafPage>(ctx, cfg, pages, std::move(keys),
                                    &MicroLeafPage::keys);
  {
    auto lr = ctx.pager().write<LeafRoot>(leaf);
    lr->microleaves[idx].pages = std::move(pages);
    lr->microleaves[idx].count = count;
  }
  co_await ctx.gate();
  co_return;
}

// One micro-flush: move the buffered updates routed to the micro-leaf that
// receives the most of them, annihilating deletions against its insertions.
// Splits/merges the target micro-leaf to keep it within [cap/4, cap].
// Returns the drop in buffer_count (0 means no progress is possible).
Task<std::uint32_t> micro_flush_once(StepContext& ctx, LeafConfig cfg, BlockId leaf) {
  std::vector<Update> buf = co_await load_buffer(ctx, leaf);
  if (buf.empty()) co_return 0;

  // Directory snapshot.
  std::vector<Key> pivots;
  std::size_t mu_count;
  {
    auto lr = ctx.pager().read<LeafRoot>(leaf);
    pivots = lr->mu_pivots;
    mu_count = lr->microleaves.size();
  }
  co_await ctx.gate();

  if (mu_count == 0) {
    // Fresh leaf: seed the directory with one empty micro-leaf.
    {
      auto lr = ctx.pager().write<LeafRoot>(leaf);
      lr->microleaves.push_back(MicroLeafMeta{});
    }
    co_await ctx.gate();
    mu_count = 1;
  }

  // Pick the micro-leaf receiving the most buffered updates (pigeonhole;
  // ties to the smallest index).
  std::size_t best = 0, best_count = 0;
  {
    std::size_t i = 0, start = 0;
    for (std::size_t mu = 0; mu < mu_count; ++mu) {
      Key hi = mu + 1 == mu_count ? kKeyMax : pivots[mu] - 1;
      std::size_t j = i;
      while (j < buf.size() && buf[j].key <= hi) ++j;
      if (j - i > best_count) {
        best_count = j - i;
        best = mu;
      }
      start = i = j;
      (void)start;
    }
  }
  if (best_count == 0) co_return 0;

  std::vector<BlockId> target_pages;
  std::uint32_t old_count;
  {
    auto lr = ctx.pager().read<LeafRoot>(leaf);
    target_pages = lr->microleaves[best].pages;
    old_count = lr->microleaves[best].count;
    (void)old_count;
  }
  co_await ctx.gate();

  std::vector<Key> keys = co_await load_microleaf(ctx, target_pages);

  // Extract the routed slice from the buffer and apply it.
  auto [lo, hi] = mu_interval(*ctx.pager().peek<LeafRoot>(leaf), best);
  std::vector<Update> routed = slice_range(buf, lo, hi);
  std::vector<Update> keep;
  keep.reserve(buf.size() - routed.size());
  for (const auto& u : buf)
    if (u.key < lo || u.key > hi) keep.push_back(u);

  std::vector<Update> unmatched = apply_to_keys(keys, routed);
  // Deletions whose insertion has not reached this leaf stay buffered.
  for (const auto& u : unmatched) keep.push_back(u);
  std::sort(keep.begin(), keep.end(),
            [](const Update& a, const Update& b) { return a.key < b.key; });
  std::uint32_t moved = static_cast<std::uint32_t>(buf.size() - keep.size());
  if (moved == 0) co_return 0;

  if (keys.size() > cfg.microleaf_cap && mu_count >= 1) {
    // Split the micro-leaf at its median key.
    std::size_t half = keys.size() / 2;
    Key sep = keys[half];
    std::vector<Key> right(keys.begin() + half, keys.end());
    keys.resize(half);
    {
      auto lr = ctx.pager().write<LeafRoot>(leaf);
      lr->microleaves.insert(lr->microleaves.begin() + best + 1, MicroLeafMeta{});
      lr->mu_pivots.insert(lr->mu_pivots.begin() + best, sep);
    }
    co_await ctx.gate();
    co_await store_microleaf(ctx, cfg, leaf, best, std::move(keys));
    co_await store_microleaf(ctx, cfg, leaf, best + 1, std::move(right));
  } else if (keys.empty() && mu_count > 1) {
    // Annihilation emptied it: drop the micro-leaf and its pivot.
    {
      auto lr = ctx.pager().write<LeafRoot>(leaf);
      for (BlockId id : lr->microleaves[best].pages) ctx.pager().free_block(id);
      lr->microleaves.erase(lr->microleaves.begin() + best);
      std::size_t pi = best == 0 ? 0 : best - 1;
      lr->mu_pivots.erase(lr->mu_pivots.begin() + pi);
    }
    co_await ctx.gate();
  } else if (keys.size() < cfg.microleaf_cap / 4 && mu_count > 1) {
    // Underfull: merge with the adjacent micro-leaf (prefer left), splitting
    // evenly when the union would overflow.
    std::size_t nb = best > 0 ? best - 1 : best + 1;
    std::vector<BlockId> nb_pages;
    {
      auto lr = ctx.pager().read<LeafRoot>(leaf);
      nb_pages = lr->microleaves[nb].pages;
    }
    co_await ctx.gate();
    std::vector<Key> nb_keys = co_await load_microleaf(ctx, nb_pages);
    std::size_t left_i = std::min(best, nb);
    std::vector<Key> merged;
    if (nb < best) {
      merged = std::move(nb_keys);
      merged.insert(merged.end(), keys.begin(), keys.end());
    } else {
      merged = std::move(keys);
      merged.insert(merged.end(), nb_keys.begin(), nb_keys.end());
    }
    if (merged.size() > cfg.microleaf_cap) {
      std::size_t half = merged.size() / 2;
      Key sep = merged[half];
      std::vector<Key> right(merged.begin() + half, merged.end());
      merged.resize(half);
      {
        auto lr = ctx.pager().write<LeafRoot>(leaf);
        lr->mu_pivots[left_i] = sep;  // the pivot between the pair moves
      }
      co_await ctx.gate();
      co_await store_microleaf(ctx, cfg, leaf, left_i, std::move(merged));
      co_await store_microleaf(ctx, cfg, leaf, left_i + 1, std::move(right));
    } else {
      {
        auto lr = ctx.pager().write<LeafRoot>(leaf);
        for (BlockId id : lr->microleaves[left_i + 1].pages)
          ctx.pager().free_block(id);
        lr->microleaves.erase(lr->microleaves.begin() + left_i + 1);
        lr->mu_pivots.erase(lr->mu_pivots.begin() + left_i);
      }
      co_await ctx.gate();
      co_await store_microleaf(ctx, cfg, leaf, left_i, std::move(merged));
    }
  } else {
    co_await store_microleaf(ctx, cfg, leaf, best, std::move(keys));
  }

  co_await store_buffer(ctx, cfg, leaf, std::move(keep));
  co_return moved;
}

Task<std::uint64_t> drain_loop(StepContext& ctx, LeafConfig cfg, BlockId leaf) {
  while (true) {
    std::uint32_t count;
    {
      auto lr = ctx.pager().read<LeafRoot>(leaf);
      count = lr->buffer_count;
    }
    co_await ctx.gate();
    if (count <= cfg.microroot_cap) break;
    co_await governor_checkpoint(ctx);
    std::uint32_t moved = co_await micro_flush_once(ctx, cfg, leaf);
    integrity_check(moved > 0, "micro-root drain cannot progress");
  }
  std::uint64_t net;
  {
    auto lr = ctx.pager().read<LeafRoot>(leaf);
    net = lr->net_size();
  }
  co_await ctx.gate();
  co_return net;
}

}  // namespace

Task<void> governor_checkpoint(StepContext& ctx) {
  if (ctx.in_governor || !ctx.governor_due || !ctx.governor_due()) co_return;
  ctx.in_governor = true;
  try {
    co_await ctx.governor_run();
  } catch (...) {
    ctx.in_governor = false;
    throw;
  }
  ctx.in_governor = false;
}

BlockId leaf_create(Pager& pager) {
  auto lr = pager.alloc<LeafRoot>();
  return lr.id();
}

void leaf_free(Pager& pager, BlockId leaf) {
  auto lr = pager.peek<LeafRoot>(leaf);
  for (const auto& mu : lr->microleaves)
    for (BlockId id : mu.pages) pager.free_block(id);
  for (BlockId id : lr->buffer_pages) pager.free_block(id);
  lr.reset();
  pager.free_block(leaf);
}

Task<std::uint64_t> leaf_bulk_insert(StepContext& ctx, LeafConfig cfg, BlockId leaf,
                                     std::vector<Update> batch) {
  contract_check(is_sorted_unique(batch), "bulk_insert batch must be key-sorted");
  std::vector<Update> buf = co_await load_buffer(ctx, leaf);
  merge_annihilate(buf, batch);
  co_await store_buffer(ctx, cfg, leaf, std::move(buf));
  co_return co_await drain_loop(ctx, cfg, leaf);
}

Task<std::uint64_t> leaf_drain(StepContext& ctx, LeafConfig cfg, BlockId leaf) {
  co_return co_await drain_loop(ctx, cfg, leaf);
}

Task<LeafSplitResult> leaf_split(StepContext& ctx, LeafConfig cfg, BlockId leaf) {
  std::vector<Update> buf = co_await load_buffer(ctx, leaf);

  std::vector<Key> pivots;
  std::vector<std::uint32_t> counts;
  std::vector<BlockId> m_pages;
  {
    auto lr = ctx.pager().read<LeafRoot>(leaf);
    pivots = lr->mu_pivots;
    for (auto& m : lr->microleaves) counts.push_back(m.count);
  }
  co_await ctx.gate();

  const std::size_t n_mu = counts.size();
  if (n_mu == 0) {
    // Buffer-only leaf: split the run at its median insertion.
    std::vector<Key> ins;
    for (const auto& u : buf)
      if (u.kind == UpdateKind::Insert) ins.push_back(u.key);
    contract_check(ins.size() >= 2, "leaf_split needs at least two net insertions");
    LeafSplitResult res;
    res.separator = ins[ins.size() / 2];
    res.right = leaf_create(ctx.pager());
    std::vector<Update> right_buf = split_at(buf, res.separator);
    co_await store_buffer(ctx, cfg, leaf, std::move(buf));
    co_await store_buffer(ctx, cfg, res.right, std::move(right_buf));
    {
      auto lr = ctx.pager().read<LeafRoot>(leaf);
      res.left_net = lr->net_size();
    }
    co_await ctx.gate();
    {
      auto rl = ctx.pager().read<LeafRoot>(res.right);
      res.right_net = rl->net_size();
    }
    co_await ctx.gate();
    co_return res;
  }

  // Per-micro-leaf net contribution (raw count + buffered inserts - deletes).
  std::vector<std::int64_t> net(n_mu, 0);
  std::uint64_t total = 0;
  for (std::size_t i = 0; i < n_mu; ++i) {
    Key lo = i == 0 ? 0 : pivots[i - 1];
    Key hi = i + 1 == n_mu ? kKeyMax : pivots[i] - 1;
    std::int64_t adj = 0;
    for (const auto& u : slice_range(buf, lo, hi))
      adj += u.kind == UpdateKind::Insert ? 1 : -1;
    net[i] = static_cast<std::int64_t>(counts[i]) + adj;
    integrity_check(net[i] >= 0, "negative micro-leaf net");
    total += static_cast<std::uint64_t>(net[i]);
  }
  contract_check(total >= 2, "leaf_split needs at least two net insertions");

  // Micro-leaf containing the median of net content.
  const std::uint64_t target = total / 2;
  std::uint64_t cum = 0;
  std::size_t m = 0;
  while (m + 1 < n_mu && cum + static_cast<std::uint64_t>(net[m]) <= target) {
    cum += static_cast<std::uint64_t>(net[m]);
    ++m;
  }

  {
    auto lr = ctx.pager().read<LeafRoot>(leaf);
    m_pages = lr->microleaves[m].pages;
  }
  co_await ctx.gate();
  std::vector<Key> m_keys = co_await load_microleaf(ctx, m_pages);

  // Exact split key: the (target - cum)-th net key inside micro-leaf m; the
  // right leaf covers [separator, ...).
  Key mlo = m == 0 ? 0 : pivots[m - 1];
  Key mhi = m + 1 == n_mu ? kKeyMax : pivots[m] - 1;
  std::vector<Key> m_net = m_keys;
  apply_to_keys(m_net, slice_range(buf, mlo, mhi));
  const std::size_t k = static_cast<std::size_t>(target - cum);
  integrity_check(k < m_net.size(), "median fell outside its micro-leaf");

  LeafSplitResult res;
  res.separator = m_net[k];
  bool boundary = false;
  if (k == 0 && m > 0) {
    // The median is m's first net key: split cleanly between m-1 and m.
    res.separator = pivots[m - 1];
    boundary = true;
  }

  auto mid = std::lower_bound(m_keys.begin(), m_keys.end(), res.separator);
  std::vector<Key> left_part(m_keys.begin(), mid);
  std::vector<Key> right_part(mid, m_keys.end());

  // Left keeps micro-leaves [0, m) plus the left part of m; right gets the
  // right part of m plus (m, n_mu). At a boundary split m goes entirely
  // right and keeps its pages; otherwise the left part reuses m's pages and
  // the right part is written fresh.
  const bool wholesale = boundary || left_part.empty();
  BlockId right_id = leaf_create(ctx.pager());
  std::vector<MicroLeafMeta> moved;
  {
    auto lr = ctx.pager().write<LeafRoot>(leaf);
    for (std::size_t i = m; i < n_mu; ++i) moved.push_back(lr->microleaves[i]);
    lr->microleaves.resize(m);
    lr->mu_pivots.resize(m > 0 ? m - 1 : 0);
    if (!wholesale) {
      lr->microleaves.push_back(moved[0]);  // left part keeps m's pages
      if (m > 0) lr->mu_pivots.push_back(pivots[m - 1]);
    }
  }
  co_await ctx.gate();

  {
    auto rl = ctx.pager().write<LeafRoot>(right_id);
    if (wholesale) {
      rl->microleaves = moved;
      for (std::size_t i = m; i < pivots.size(); ++i)
        rl->mu_pivots.push_back(pivots[i]);
    } else if (right_part.empty()) {
      // All of m's raw keys stayed left; right starts at the next micro-leaf.
      for (std::size_t i = 1; i < moved.size(); ++i)
        rl->microleaves.push_back(moved[i]);
      for (std::size_t i = m + 1; i < pivots.size(); ++i)
        rl->mu_pivots.push_back(pivots[i]);
    } else {
      rl->microleaves.push_back(MicroLeafMeta{});  // right part of m
      for (std::size_t i = 1; i < moved.size(); ++i)
        rl->microleaves.push_back(moved[i]);
      for (std::size_t i = m; i < pivots.size(); ++i)
        rl->mu_pivots.push_back(pivots[i]);
    }
    integrity_check(rl->microleaves.empty()
                        ? rl->mu_pivots.empty()
                        : rl->mu_pivots.size() + 1 == rl->microleaves.size(),
                    "right leaf pivot arity");
  }
  co_await ctx.gate();

  if (!wholesale) {
    std::size_t left_idx;
    {
      auto lr = ctx.pager().read<LeafRoot>(leaf);
      left_idx = lr->microleaves.size() - 1;
    }
    co_await ctx.gate();
    co_await store_microleaf(ctx, cfg, leaf, left_idx, std::move(left_part));
    if (!right_part.empty())
      co_await store_microleaf(ctx, cfg, right_id, 0, std::move(right_part));
  }

  std::vector<Update> right_buf = split_at(buf, res.separator);
  co_await store_buffer(ctx, cfg, leaf, std::move(buf));
  co_await store_buffer(ctx, cfg, right_id, std::move(right_buf));

  {
    auto lr = ctx.pager().read<LeafRoot>(leaf);
    res.left_net = lr->net_size();
  }
  co_await ctx.gate();
  {
    auto rl = ctx.pager().read<LeafRoot>(right_id);
    res.right_net = rl->net_size();
  }
  co_await ctx.gate();
  res.right = right_id;
  co_return res;
}

Task<LeafMergeResult> leaf_merge(StepContext& ctx, LeafConfig cfg, BlockId leaf,
                                 BlockId right, Key separator,
                                 std::uint64_t leaf_max) {
  // Adopt the right leaf's directory and buffer wholesale.
  std::vector<Update> rbuf = co_await load_buffer(ctx, right);
  std::vector<Update> lbuf = co_await load_buffer(ctx, leaf);
  integrity_check(lbuf.empty() || rbuf.empty() || lbuf.back().key < rbuf.front().key,
                  "merge of non-adjacent leaves");
  {
    auto rl = ctx.pager().read<LeafRoot>(right);
    auto ll = ctx.pager().write<LeafRoot>(leaf);
    bool left_empty = ll->microleaves.empty();
    if (!rl->microleaves.empty()) {
      if (!left_empty) ll->mu_pivots.push_back(separator);
      for (std::size_t i = 0; i < rl->microleaves.size(); ++i) {
        ll->microleaves.push_back(rl->microleaves[i]);
        if (i + 1 < rl->microleaves.size())
          ll->mu_pivots.push_back(rl->mu_pivots[i]);
      }
    }
  }
  co_await ctx.gate();
  for (BlockId id : ctx.pager().peek<LeafRoot>(right)->buffer_pages)
    ctx.pager().free_block(id);
  {
    auto rl = ctx.pager().write<LeafRoot>(right);
    rl->microleaves.clear();
    rl->mu_pivots.clear();
    rl->buffer_pages.clear();
  }
  co_await ctx.gate();
  ctx.pager().free_block(right);

  std::size_t merged_count = lbuf.size() + rbuf.size();
  lbuf.insert(lbuf.end(), rbuf.begin(), rbuf.end());
  integrity_check(lbuf.size() == merged_count, "buffer merge lost updates");
  co_await store_buffer(ctx, cfg, leaf, std::move(lbuf));

  // Drain the (possibly doubled) buffer back under its cap.
  std::uint64_t net = co_await drain_loop(ctx, cfg, leaf);

  LeafMergeResult out;
  if (net > leaf_max) {
    LeafSplitResult s = co_await leaf_split(ctx, cfg, leaf);
    out.resplit = true;
    out.right = s.right;
    out.separator = s.separator;
    out.left_net = s.left_net;
    out.right_net = s.right_net;
  } else {
    out.left_net = net;
  }
  co_return out;
}

Task<std::vector<Key>> leaf_collect(StepContext& ctx, LeafConfig cfg, BlockId leaf,
                                    Key lo, Key hi) {
  contract_check(lo <= hi, "leaf_collect: empty interval");
  (void)cfg;
  std::vector<Update> buf = co_await load_buffer(ctx, leaf);
  std::vector<Key> pivots;
  std::vector<std::vector<BlockId>> page_runs;
  {
    auto lr = ctx.pager().read<LeafRoot>(leaf);
    pivots = lr->mu_pivots;
    for (auto& m : lr->microleaves) page_runs.push_back(m.pages);
  }
  co_await ctx.gate();

  std::vector<Key> out;
  for (std::size_t i = 0; i < page_runs.size(); ++i) {
    Key mlo = i == 0 ? 0 : pivots[i - 1];
    Key mhi = i + 1 == page_runs.size() ? kKeyMax : pivots[i] - 1;
    if (mhi < lo || mlo > hi) continue;
    std::vector<Key> keys = co_await load_microleaf(ctx, page_runs[i]);
    // Net-adjust with the buffered slice for this micro-leaf, then trim.
    apply_to_keys(keys, slice_range(buf, mlo, mhi));
    auto a = std::lower_bound(keys.begin(), keys.end(), lo);
    auto b = std::upper_bound(keys.begin(), keys.end(), hi);
    out.insert(out.end(), a, b);
  }
  if (page_runs.empty()) {
    // Buffer-only leaf.
    for (const auto& u : slice_range(buf, lo, hi))
      if (u.kind == UpdateKind::Insert) out.push_back(u.key);
  }
  co_return out;
}

Task<std::vector<Key>> leaf_collect_below(StepContext& ctx, LeafConfig cfg,
                                          BlockId leaf, Key q, std::size_t want) {
  (void)cfg;
  std::vector<Update> buf = co_await load_buffer(ctx, leaf);
  std::vector<Key> pivots;
  std::vector<std::vector<BlockId>> page_runs;
  {
    auto lr = ctx.pager().read<LeafRoot>(leaf);
    pivots = lr->mu_pivots;
    for (auto& m : lr->microleaves) page_runs.push_back(m.pages);
  }
  co_await ctx.gate();

  std::vector<Key> out;  // gathered descending by micro-leaf, each ascending
  std::vector<std::vector<Key>> chunks;
  std::size_t have = 0;
  std::size_t start = page_runs.empty()
                          ? 0
                          : static_cast<std::size_t>(
                                std::upper_bound(pivots.begin(), pivots.end(), q) -
                                pivots.begin());
  for (std::size_t ii = start + 1; ii-- > 0 && have < want;) {
    if (ii >= page_runs.size()) continue;
    Key mlo = ii == 0 ? 0 : pivots[ii - 1];
    Key mhi = ii + 1 == page_runs.size() ? kKeyMax : pivots[ii] - 1;
    std::vector<Key> keys = co_await load_microleaf(ctx, page_runs[ii]);
    apply_to_keys(keys, slice_range(buf, mlo, mhi));
    auto b = std::upper_bound(keys.begin(), keys.end(), q);
    chunks.emplace_back(keys.begin(), b);
    have += chunks.back().size();
  }
  for (auto it = chunks.rbegin(); it != chunks.rend(); ++it)
    out.insert(out.end(), it->begin(), it->end());
  if (page_runs.empty())
    for (const auto& u : buf)
      if (u.kind == UpdateKind::Insert && u.key <= q) out.push_back(u.key);
  co_return out;
}

Task<std::vector<Key>> leaf_collect_above(StepContext& ctx, LeafConfig cfg,
                                          BlockId leaf, Key v, std::size_t want) {
  (void)cfg;
  if (v == kKeyMax) co_return std::vector<Key>{};
  std::vector<Update> buf = co_await load_buffer(ctx, leaf);
  std::vector<Key> pivots;
  std::vector<std::vector<BlockId>> page_runs;
  {
    auto lr = ctx.pager().read<LeafRoot>(leaf);
    pivots = lr->mu_pivots;
    for (auto& m : lr->microleaves) page_runs.push_back(m.pages);
  }
  co_await ctx.gate();

  std::vector<Key> out;
  std::size_t start = page_runs.empty()
                          ? 0
                          : static_cast<std::size_t>(
                                std::upper_bound(pivots.begin(), pivots.end(), v) -
                                pivots.begin());
  for (std::size_t i = start; i < page_runs.size() && out.size() < want; ++i) {
    Key mlo = i == 0 ? 0 : pivots[i - 1];
    Key mhi = i + 1 == page_runs.size() ? kKeyMax : pivots[i] - 1;
    std::vector<Key> keys = co_await load_microleaf(ctx, page_runs[i]);
    apply_to_keys(keys, slice_range(buf, mlo, mhi));
    auto a = std::upper_bound(keys.begin(), keys.end(), v);
    out.insert(out.end(), a, keys.end());
  }
  if (page_runs.empty())
    for (const auto& u : buf)
      if (u.kind == UpdateKind::Insert && u.key > v) out.push_back(u.key);
  co_return out;
}

Task<std::uint64_t> leaf_net(StepContext& ctx, BlockId leaf) {
  std::uint64_t net;
  {
    auto lr = ctx.pager().read<LeafRoot>(leaf);
    net = lr->net_size();
  }
  co_await ctx.gate();
  co_return net;
}

Task<std::uint64_t> leaf_append_packed(StepContext& ctx, LeafConfig cfg,
                                       BlockId leaf, std::span<const Key> keys) {
  if (keys.empty()) co_return co_await leaf_net(ctx, leaf);
  // Pack toward 3/4 of the micro-leaf cap so later growth has headroom.
  const std::size_t target = cfg.microleaf_cap - cfg.microleaf_cap / 4;
  std::size_t taken = 0;
  while (taken < keys.size()) {
    std::size_t idx;
    std::vector<BlockId> pages;
    std::uint32_t count;
    Key last_present = 0;
    bool has_mu;
    {
      auto lr = ctx.pager().read<LeafRoot>(leaf);
      has_mu = !lr->microleaves.empty();
      idx = has_mu ? lr->microleaves.size() - 1 : 0;
      if (has_mu) {
        pages = lr->microleaves.back().pages;
        count = lr->microleaves.back().count;
      } else {
        count = 0;
      }
      (void)last_present;
    }
    co_await ctx.gate();

    if (!has_mu || count >= target) {
      // Open a fresh rightmost micro-leaf at the next key.
      {
        auto lr = ctx.pager().write<LeafRoot>(leaf);
        if (has_mu) lr->mu_pivots.push_back(keys[taken]);
        lr->microleaves.push_back(MicroLeafMeta{});
        idx = lr->microleaves.size() - 1;
      }
      co_await ctx.gate();
      pages.clear();
      count = 0;
    }

    std::size_t room = target - count;
    std::size_t chunk = std::min(room, keys.size() - taken);
    std::vector<Key> content = co_await load_microleaf(ctx, pages);
    integrity_check(content.empty() || content.back() < keys[taken],
                    "packed append must be strictly increasing");
    content.insert(content.end(), keys.begin() + taken,
                   keys.begin() + taken + chunk);
    co_await store_microleaf(ctx, cfg, leaf, idx, std::move(content));
    taken += chunk;
  }
  co_return co_await leaf_net(ctx, leaf);
}

}  // namespace bepsilon
