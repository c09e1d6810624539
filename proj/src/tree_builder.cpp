#include "bepsilon/tree_builder.hpp"

#include <algorithm>

namespace bepsilon {

Task<BlockId> build_packed_leaf(StepContext& ctx, LeafConfig cfg,
                                std::span<const Key> keys) {
  integrity_check(std::is_sorted(keys.begin(), keys.end()), "unsorted bulk keys");
  BlockId leaf = leaf_create(ctx.pager());
  if (keys.empty()) co_return leaf;

  // Balanced chunks near 3/4 of the micro-leaf cap.
  const std::uint64_t chunk_target = cfg.microleaf_cap - cfg.microleaf_cap / 4;
  std::size_t n_chunks =
      static_cast<std::size_t>((keys.size() + chunk_target - 1) / chunk_target);
  std::size_t per = (keys.size() + n_chunks - 1) / n_chunks;

  std::size_t at = 0, idx = 0;
  while (at < keys.size()) {
    std::size_t hi = std::min(keys.size(), at + per);
    {
      auto lr = ctx.pager().write<LeafRoot>(leaf);
      lr->microleaves.push_back(MicroLeafMeta{});
      if (idx > 0) lr->mu_pivots.push_back(keys[at]);
    }
    co_await ctx.gate();
    // Write the chunk's pages directly.
    std::vector<BlockId> pages;
    for (std::size_t p = at; p < hi; p += cfg.block_size) {
      auto page = ctx.pager().alloc<MicroLeafPage>();
      page->keys.assign(keys.begin() + static_cast<std::ptrdiff_t>(p),
                        keys.begin() + static_cast<std::ptrdiff_t>(
                                           std::min(hi, p + cfg.block_size)));
      pages.push_back(page.id());
      page.release();
      co_await ctx.gate();
    }
    {
      auto lr = ctx.pager().write<LeafRoot>(leaf);
      lr->microleaves[idx].pages = std::move(pages);
      lr->microleaves[idx].count = static_cast<std::uint32_t>(hi - at);
    }
    co_await ctx.gate();
    at = hi;
    ++idx;
  }
  co_return leaf;
}

Task<void> adopt_first_leaf(StepContext& ctx, TreeState& t, BlockId leaf,
                            std::uint64_t net) {
  BlockId old_leaf;
  {
    auto root = ctx.pager().write<InternalNode>(t.root);
    integrity_check(t.height == 1 && root->children.size() == 1,
                    "adopt_first_leaf needs a bootstrap tree");
    old_leaf = root->children[0];
    root->children[0] = leaf;
    root->child_max[0] = net;
    root->child_min[0] = net;
  }
  co_await ctx.gate();
  leaf_free(ctx.pager(), old_leaf);
  t.n_live += net;
  co_return;
}

Task<void> append_leaf_right(StepContext& ctx, TreeState& t, BlockId leaf,
                             Key sep, std::uint64_t net) {
  // Rightmost descent to the leaf parent.
  std::vector<PathEntry> path;
  BlockId cur = t.root;
  while (true) {
    std::size_t last;
    bool at_parent;
    BlockId next;
    {
      auto node = ctx.pager().read<InternalNode>(cur);
      last = node->children.size() - 1;
      at_parent = node->height == 1;
      next = node->children[last];
    }
    co_await ctx.gate();
    path.push_back({cur, last});
    if (at_parent) break;
    cur = next;
  }

  {
    auto parent = ctx.pager().write<InternalNode>(path.back().id);
    parent->children.push_back(leaf);
    parent->pivots.push_back(sep);
    parent->child_max.push_back(net);
    parent->child_min.push_back(net);
  }
  co_await ctx.gate();
  ++t.leaf_count;
  t.n_live += net;

  // Split oversized spine nodes upward.
  for (std::size_t li = path.size(); li-- > 0;) {
    BlockId n1 = path[li].id;
    bool wide;
    {
      auto node = ctx.pager().read<InternalNode>(n1);
      wide = node->children.size() > t.params.fanout_max;
    }
    co_await ctx.gate();
    if (wide) {
      InternalSplit s = co_await split_internal(ctx, t, n1);
      std::uint64_t lmax, lmin, rmax, rmin;
      {
        auto ln = ctx.pager().read<InternalNode>(n1);
        lmax = ln->subtree_max();
        lmin = ln->subtree_min();
      }
      co_await ctx.gate();
      {
        auto rn = ctx.pager().read<InternalNode>(s.right);
        rmax = rn->subtree_max();
        rmin = rn->subtree_min();
      }
      co_await ctx.gate();
      if (li == 0) {
        auto fresh = ctx.pager().alloc<InternalNode>();
        fresh->height = t.height + 1;
        fresh->children = {n1, s.right};
        fresh->pivots = {s.promoted};
        fresh->child_max = {lmax, rmax};
        fresh->child_min = {lmin, rmin};
        repoint_root(t, fresh.id());
        ++t.height;
      } else {
        auto parent = ctx.pager().write<InternalNode>(path[li - 1].id);
        std::size_t pidx = path[li - 1].child_idx;
        auto at = static_cast<std::ptrdiff_t>(pidx);
        parent->children.insert(parent->children.begin() + at + 1, s.right);
        parent->pivots.insert(parent->pivots.begin() + at, s.promoted);
        parent->child_max[pidx] = lmax;
        parent->child_min[pidx] = lmin;
        parent->child_max.insert(parent->child_max.begin() + at + 1, rmax);
        parent->child_min.insert(parent->child_min.begin() + at + 1, rmin);
      }
      co_await ctx.gate();
      // The appended leaf sits in the right half.
      path[li].id = s.right;
      path[li].child_idx -= s.moved_from;
      if (li > 0) ++path[li - 1].child_idx;
    } else if (li > 0) {
      std::uint64_t amax, amin;
      {
        auto node = ctx.pager().read<InternalNode>(n1);
        amax = node->subtree_max();
        amin = node->subtree_min();
      }
      co_await ctx.gate();
      {
        auto parent = ctx.pager().write<InternalNode>(path[li - 1].id);
        parent->child_max[path[li - 1].child_idx] = amax;
        parent->child_min[path[li - 1].child_idx] = amin;
      }
      co_await ctx.gate();
    }
  }
  co_return;
}

TreeBuilder::TreeBuilder(Pager& pager, const Params& params,
                         std::uint64_t leaf_target, std::uint64_t leaf_min)
    : ctx_(pager),
      tree_(tree_create(pager, params)),
      target_(leaf_target),
      min_(leaf_min) {}

void TreeBuilder::feed(std::span<const Key> keys) {
  for (Key k : keys) {
    integrity_check(!have_last_ || k > last_key_, "builder keys must increase");
    last_key_ = k;
    have_last_ = true;
    staging_.push_back(k);
    if (staging_.size() >= target_) close_staged();
  }
}

void TreeBuilder::close_staged() {
  if (staging_.empty()) return;
  Key sep = staging_.front();
  std::uint64_t net = staging_.size();
  BlockId leaf = run_to_completion(
      ctx_, build_packed_leaf(ctx_, leaf_config(tree_.params), staging_));
  if (!first_leaf_placed_) {
    run_to_completion(ctx_, adopt_first_leaf(ctx_, tree_, leaf, net));
    first_leaf_placed_ = true;
  } else {
    run_to_completion(ctx_, append_leaf_right(ctx_, tree_, leaf, sep, net));
  }
  staging_.clear();
}

TreeState TreeBuilder::finish() {
  if (!staging_.empty() && staging_.size() < min_ && first_leaf_placed_) {
    // Short tail: fold into the rightmost leaf instead of closing it.
    std::vector<PathEntry> path;
    BlockId cur = tree_.root;
    while (true) {
      auto node = tree_.pager->peek<InternalNode>(cur);
      std::size_t last = node->children.size() - 1;
      path.push_back({cur, last});
      BlockId next = node->children[last];
      if (node->height == 1) {
        cur = next;
        break;
      }
      cur = next;
    }
    std::uint64_t net = run_to_completion(
        ctx_, leaf_append_packed(ctx_, leaf_config(tree_.params), cur, staging_));
    tree_.n_live += staging_.size();
    (void)net;
    run_to_completion(ctx_, refresh_aux_upward(ctx_, tree_, path));
    staging_.clear();
  } else {
    close_staged();
  }
  return std::move(tree_);
}

}  // namespace bepsilon
