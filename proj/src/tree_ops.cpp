#include "bepsilon/tree_ops.hpp"

#include <algorithm>
#include <limits>

namespace bepsilon {

namespace {
constexpr Key kKeyMax = std::numeric_limits<Key>::max();
}

TreeState tree_create(Pager& pager, const Params& params) {
  TreeState t;
  t.pager = &pager;
  t.params = params;
  BlockId leaf = leaf_create(pager);
  auto root = pager.alloc<InternalNode>();
  root->height = 1;
  root->children = {leaf};
  root->child_max = {0};
  root->child_min = {0};
  t.root = root.id();
  t.height = 1;
  t.leaf_count = 1;
  root.release();
  pager.pin(t.root);
  return t;
}

namespace {

void free_subtree(Pager& pager, BlockId id, std::uint32_t height) {
  if (height == 0) {
    leaf_free(pager, id);
    return;
  }
  auto node = pager.peek<InternalNode>(id);
  std::vector<BlockId> kids = node->children;
  node.reset();
  for (BlockId c : kids) free_subtree(pager, c, height - 1);
  pager.free_block(id);
}

}  // namespace

void tree_destroy(TreeState& t) {
  if (!t.pager || t.root == 0) return;
  if (t.pager->is_pinned(t.root)) t.pager->unpin(t.root);
  free_subtree(*t.pager, t.root, t.height);
  t.root = 0;
}

void repoint_root(TreeState& t, BlockId new_root) {
  if (t.root != 0 && t.pager->is_pinned(t.root)) t.pager->unpin(t.root);
  t.root = new_root;
  t.pager->pin(new_root);
}

std::size_t route_key(const InternalNode& node, Key key) {
  return static_cast<std::size_t>(
      std::upper_bound(node.pivots.begin(), node.pivots.end(), key) -
      node.pivots.begin());
}

std::pair<Key, Key> child_interval(const InternalNode& node, std::size_t i,
                                   Key lo, Key hi) {
  Key clo = i == 0 ? lo : node.pivots[i - 1];
  Key chi = i == node.pivots.size() ? hi : node.pivots[i] - 1;
  return {clo, chi};
}

std::pair<std::size_t, std::size_t> select_flush_child(const InternalNode& node,
                                                       std::uint32_t buffer_cap) {
  contract_check(node.buffer.size() > buffer_cap,
                 "select_flush_child on a node that is not overfull");
  std::size_t best = 0, best_count = 0;
  std::size_t i = 0;
  for (std::size_t c = 0; c < node.children.size(); ++c) {
    Key hi = c == node.pivots.size() ? kKeyMax : node.pivots[c] - 1;
    std::size_t j = i;
    while (j < node.buffer.size() && node.buffer[j].key <= hi) ++j;
    if (j - i > best_count) {
      best_count = j - i;
      best = c;
    }
    i = j;
  }
  integrity_check(best_count > 0, "overfull node routes nothing to any child");
  return {best, best_count};
}

Task<Descent> descend_extreme(StepContext& ctx, TreeState& t, bool want_max,
                              LoopStats& loops) {
  Descent d;
  BlockId cur = t.root;
  std::uint32_t depth = 0;
  while (true) {
    std::size_t idx;
    BlockId next;
    bool at_leaf_level;
    {
      auto node = ctx.pager().read<InternalNode>(cur);
      const auto& v = want_max ? node->child_max : node->child_min;
      idx = 0;
      for (std::size_t i = 1; i < v.size(); ++i) {
        if (want_max ? v[i] > v[idx] : v[i] < v[idx]) idx = i;
      }
      next = node->children[idx];
      at_leaf_level = node->height == 1;
    }
    co_await ctx.gate();
    d.path.push_back({cur, idx});
    ++depth;
    if (at_leaf_level) {
      d.leaf = next;
      break;
    }
    cur = next;
  }
  LoopStats::note(loops.descend_depth, depth);
  integrity_check(depth <= t.params.height_cap(), "descent exceeded height cap");
  co_return d;
}

Task<Descent> descend_key(StepContext& ctx, TreeState& t, Key key) {
  Descent d;
  BlockId cur = t.root;
  while (true) {
    std::size_t idx;
    BlockId next;
    bool at_leaf_level;
    {
      auto node = ctx.pager().read<InternalNode>(cur);
      idx = route_key(*node, key);
      next = node->children[idx];
      at_leaf_level = node->height == 1;
    }
    co_await ctx.gate();
    d.path.push_back({cur, idx});
    if (at_leaf_level) {
      d.leaf = next;
      break;
    }
    cur = next;
  }
  co_return d;
}

namespace {

// Aggregate (max, min) of a child's subtree from its own page.
Task<std::pair<std::uint64_t, std::uint64_t>> child_aggregate(StepContext& ctx,
                                                              BlockId child,
                                                              bool child_is_leaf) {
  std::pair<std::uint64_t, std::uint64_t> out;
  if (child_is_leaf) {
    std::uint64_t net;
    {
      auto lr = ctx.pager().read<LeafRoot>(child);
      net = lr->net_size();
    }
    co_await ctx.gate();
    out = {net, net};
  } else {
    {
      auto n = ctx.pager().read<InternalNode>(child);
      out = {n->subtree_max(), n->subtree_min()};
    }
    co_await ctx.gate();
  }
  co_return out;
}

}  // namespace

Task<void> refresh_aux_upward(StepContext& ctx, TreeState& t,
                              const std::vector<PathEntry>& path) {
  (void)t;
  for (std::size_t i = path.size(); i-- > 0;) {
    BlockId child;
    bool child_is_leaf;
    {
      auto node = ctx.pager().read<InternalNode>(path[i].id);
      child = node->children[path[i].child_idx];
      child_is_leaf = node->height == 1;
    }
    co_await ctx.gate();
    auto agg = co_await child_aggregate(ctx, child, child_is_leaf);
    {
      auto node = ctx.pager().write<InternalNode>(path[i].id);
      node->child_max[path[i].child_idx] = agg.first;
      node->child_min[path[i].child_idx] = agg.second;
    }
    co_await ctx.gate();
  }
  co_return;
}

Task<void> flush_cascade(StepContext& ctx, TreeState& t, BlockId start,
                         std::vector<PathEntry> anc, std::uint32_t* depth_slot) {
  const std::uint32_t cap = t.params.buffer_cap;
  const std::uint32_t quantum = t.params.flush_quantum;
  BlockId cur = start;
  std::uint32_t depth = 0;

  while (true) {
    // Selection and extraction are one atomic step: a suspension in between
    // would let arrivals annihilate the very updates we planned to move.
    std::size_t idx = 0;
    BlockId child = 0;
    bool child_is_leaf = false;
    bool overfull = false;
    std::vector<Update> moved;
    {
      auto node = ctx.pager().write<InternalNode>(cur);
      overfull = node->buffer.size() > cap;
      if (overfull) {
        std::size_t routed;
        std::tie(idx, routed) = select_flush_child(*node, cap);
        child = node->children[idx];
        child_is_leaf = node->height == 1;
        std::size_t take = std::min<std::size_t>(quantum, routed);
        auto [lo, hi] = child_interval(*node, idx, 0, kKeyMax);
        (void)hi;
        auto first = std::lower_bound(
            node->buffer.begin(), node->buffer.end(), lo,
            [](const Update& u, Key v) { return u.key < v; });
        moved.assign(first, first + static_cast<std::ptrdiff_t>(take));
        node->buffer.erase(first, first + static_cast<std::ptrdiff_t>(take));
      }
    }
    co_await ctx.gate();
    if (!overfull) break;
    ++depth;

    if (child_is_leaf) {
      std::uint64_t net =
          co_await leaf_bulk_insert(ctx, leaf_config(t.params), child, std::move(moved));
      {
        auto node = ctx.pager().write<InternalNode>(cur);
        node->child_max[idx] = net;
        node->child_min[idx] = net;
      }
      co_await ctx.gate();
      anc.push_back({cur, idx});
      break;
    }

    {
      auto cnode = ctx.pager().write<InternalNode>(child);
      merge_annihilate(cnode->buffer, moved);
    }
    co_await ctx.gate();
    anc.push_back({cur, idx});
    cur = child;
  }

  if (depth_slot) LoopStats::note(*depth_slot, depth);
  integrity_check(depth <= t.params.height_cap() + 1,
                  "flush cascade exceeded height cap");
  // Walk auxiliary information back to the root.
  co_await refresh_aux_upward(ctx, t, anc);
  co_return;
}

Task<void> drain_root(StepContext& ctx, TreeState& t, LoopStats& loops) {
  const std::uint32_t cap = t.params.buffer_cap;
  std::uint32_t iters = 0;
  while (true) {
    bool overfull;
    {
      auto node = ctx.pager().read<InternalNode>(t.root);
      overfull = node->buffer.size() > cap;
    }
    co_await ctx.gate();
    if (!overfull) break;
    ++iters;
    co_await flush_cascade(ctx, t, t.root, {}, &loops.drain_path_depth);
  }
  LoopStats::note(loops.root_drain_iters, iters);
  co_return;
}

Task<InternalSplit> split_internal(StepContext& ctx, TreeState& t, BlockId node_id) {
  InternalSplit out;
  auto right_ref = ctx.pager().alloc<InternalNode>();
  BlockId right_id = right_ref.id();
  right_ref.release();
  {
    auto left = ctx.pager().write<InternalNode>(node_id);
    auto right = ctx.pager().write<InternalNode>(right_id);
    contract_check(left->children.size() > t.params.fanout_max,
                   "split_internal on a node within fanout bounds");
    std::size_t mid = left->children.size() / 2;  // children [mid, end) go right
    out.promoted = left->pivots[mid - 1];
    out.moved_from = mid;

    right->height = left->height;
    right->children.assign(left->children.begin() + mid, left->children.end());
    right->child_max.assign(left->child_max.begin() + mid, left->child_max.end());
    right->child_min.assign(left->child_min.begin() + mid, left->child_min.end());
    right->pivots.assign(left->pivots.begin() + mid, left->pivots.end());
    right->buffer = split_at(left->buffer, out.promoted);

    left->children.resize(mid);
    left->child_max.resize(mid);
    left->child_min.resize(mid);
    left->pivots.resize(mid - 1);
  }
  co_await ctx.gate();
  out.right = right_id;
  co_return out;
}

Task<void> merge_internal(StepContext& ctx, TreeState& t, BlockId left_id,
                          BlockId right_id, Key sep) {
  {
    auto left = ctx.pager().write<InternalNode>(left_id);
    auto right = ctx.pager().write<InternalNode>(right_id);
    integrity_check(left->height == right->height, "merging nodes of unequal height");
    left->pivots.push_back(sep);
    left->pivots.insert(left->pivots.end(), right->pivots.begin(),
                        right->pivots.end());
    left->children.insert(left->children.end(), right->children.begin(),
                          right->children.end());
    left->child_max.insert(left->child_max.end(), right->child_max.begin(),
                           right->child_max.end());
    left->child_min.insert(left->child_min.end(), right->child_min.begin(),
                           right->child_min.end());
    // Buffers cover disjoint intervals; a plain ordered merge suffices.
    std::size_t before = left->buffer.size() + right->buffer.size();
    merge_annihilate(left->buffer, right->buffer);
    integrity_check(left->buffer.size() == before, "sibling buffers overlapped");
    right->children.clear();
  }
  co_await ctx.gate();
  ctx.pager().free_block(right_id);
  if (t.last_merged == right_id) t.last_merged.reset();
  co_return;
}

namespace {

void collect_leaves_rec(const Pager& pager, BlockId id, std::uint32_t height,
                        std::vector<BlockId>& out) {
  if (height == 0) {
    out.push_back(id);
    return;
  }
  auto node = pager.peek<InternalNode>(id);
  std::vector<BlockId> kids = node->children;
  node.reset();
  for (BlockId c : kids) collect_leaves_rec(pager, c, height - 1, out);
}

}  // namespace

std::vector<BlockId> collect_leaves(const TreeState& t) {
  std::vector<BlockId> out;
  collect_leaves_rec(*t.pager, t.root, t.height, out);
  return out;
}

}  // namespace bepsilon
