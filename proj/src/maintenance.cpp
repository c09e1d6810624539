#include "bepsilon/maintenance.hpp"

#include <algorithm>

namespace bepsilon {

MaintenanceDriver::MaintenanceDriver(TreeState& tree)
    : tree_(tree), ctx_(*tree.pager) {
  // Pacing safety valve: when arrivals push the root near its hard bound
  // while a long leaf operation runs, drain a quantum path early. The root
  // page is pinned, so the check itself costs nothing.
  ctx_.governor_due = [this] {
    auto root = tree_.pager->peek<InternalNode>(tree_.root);
    std::uint32_t slack = 2 * tree_.params.flush_quantum;
    return root->buffer.size() + slack >= 2 * tree_.params.buffer_cap;
  };
  ctx_.governor_run = [this] { return governor_task(); };
}

Task<void> MaintenanceDriver::governor_task() {
  ++stats_.governor_drains;
  co_await drain_root(ctx_, tree_, stats_.loops);
}

void MaintenanceDriver::note_arrival() {
  ++arrivals_;
  auto root = tree_.pager->peek<InternalNode>(tree_.root);
  if (root->buffer.size() > stats_.max_root_buffer)
    stats_.max_root_buffer = root->buffer.size();
}

bool MaintenanceDriver::resume_until_io() {
  if (!current_) current_.emplace(run_phase(next_));
  bool yielded = ctx_.resume_step(*current_);
  if (current_->done()) {
    current_->rethrow_if_failed();
    current_.reset();
    ++stats_.phases;
    if (next_ == Phase::Merge) ++stats_.cycles;
    next_ = next_ == Phase::Split ? Phase::Merge : Phase::Split;
    if (on_quiescent) on_quiescent();
  }
  return yielded;
}

void MaintenanceDriver::run_to_quiescence() {
  if (quiescent()) return;
  while (!quiescent()) resume_until_io();
}

std::vector<PathEntry> MaintenanceDriver::ancestors_of(const Descent& d,
                                                       std::size_t li,
                                                       BlockId node) const {
  std::vector<PathEntry> anc(d.path.begin(),
                             d.path.begin() + static_cast<std::ptrdiff_t>(li));
  if (!anc.empty() && node != d.path[li].id) {
    // The node is a sibling of the path entry; repoint the last step.
    auto parent = tree_.pager->peek<InternalNode>(anc.back().id);
    auto it = std::find(parent->children.begin(), parent->children.end(), node);
    integrity_check(it != parent->children.end(), "ancestor chain broken");
    anc.back().child_idx =
        static_cast<std::size_t>(it - parent->children.begin());
  }
  return anc;
}

Task<void> MaintenanceDriver::flush_until_not_overfull(
    BlockId node, std::vector<PathEntry> ancestors) {
  const std::uint32_t cap = tree_.params.buffer_cap;
  std::uint32_t iters = 0;
  while (true) {
    bool overfull;
    {
      auto n = ctx_.pager().read<InternalNode>(node);
      overfull = n->buffer.size() > cap;
    }
    co_await ctx_.gate();
    if (!overfull) break;
    ++iters;
    co_await flush_cascade(ctx_, tree_, node, ancestors,
                           &stats_.loops.flush_path_depth);
  }
  LoopStats::note(stats_.loops.merged_flush_iters, iters);
  co_return;
}

Task<void> MaintenanceDriver::split_phase_leaf_step(Descent& d) {
  TreeState& t = tree_;
  std::uint64_t net = co_await leaf_net(ctx_, d.leaf);
  if (net < t.params.split_threshold()) co_return;

  LeafSplitResult sr = co_await leaf_split(ctx_, leaf_config(t.params), d.leaf);
  PathEntry& pe = d.path.back();
  {
    auto parent = ctx_.pager().write<InternalNode>(pe.id);
    auto at = static_cast<std::ptrdiff_t>(pe.child_idx);
    parent->children.insert(parent->children.begin() + at + 1, sr.right);
    parent->pivots.insert(parent->pivots.begin() + at, sr.separator);
    parent->child_max[pe.child_idx] = sr.left_net;
    parent->child_min[pe.child_idx] = sr.left_net;
    parent->child_max.insert(parent->child_max.begin() + at + 1, sr.right_net);
    parent->child_min.insert(parent->child_min.begin() + at + 1, sr.right_net);
  }
  co_await ctx_.gate();
  ++t.leaf_count;
  ++stats_.leaf_splits;
  co_return;
}

Task<void> MaintenanceDriver::merge_phase_leaf_step(Descent& d) {
  TreeState& t = tree_;
  if (t.leaf_count <= 1) co_return;  // bootstrap: single leaf is exempt
  std::uint64_t net = co_await leaf_net(ctx_, d.leaf);
  if (net > t.params.merge_threshold()) co_return;

  PathEntry& pe = d.path.back();
  BlockId survivor, victim;
  Key sep;
  std::size_t surv_idx;
  // The parent is rewired before the merge runs, so concurrent root drains
  // triggered by the pacing governor route into the surviving leaf.
  {
    auto parent = ctx_.pager().write<InternalNode>(pe.id);
    integrity_check(parent->children.size() >= 2, "merge needs a sibling");
    std::size_t idx = pe.child_idx;
    if (idx > 0) {
      surv_idx = idx - 1;
      survivor = parent->children[surv_idx];
      victim = d.leaf;
      sep = parent->pivots[idx - 1];
      parent->children.erase(parent->children.begin() + static_cast<std::ptrdiff_t>(idx));
      parent->pivots.erase(parent->pivots.begin() + static_cast<std::ptrdiff_t>(idx) - 1);
      parent->child_max.erase(parent->child_max.begin() + static_cast<std::ptrdiff_t>(idx));
      parent->child_min.erase(parent->child_min.begin() + static_cast<std::ptrdiff_t>(idx));
    } else {
      surv_idx = idx;
      survivor = d.leaf;
      victim = parent->children[idx + 1];
      sep = parent->pivots[idx];
      parent->children.erase(parent->children.begin() + static_cast<std::ptrdiff_t>(idx) + 1);
      parent->pivots.erase(parent->pivots.begin() + static_cast<std::ptrdiff_t>(idx));
      parent->child_max.erase(parent->child_max.begin() + static_cast<std::ptrdiff_t>(idx) + 1);
      parent->child_min.erase(parent->child_min.begin() + static_cast<std::ptrdiff_t>(idx) + 1);
    }
  }
  co_await ctx_.gate();

  LeafMergeResult mr = co_await leaf_merge(ctx_, leaf_config(t.params), survivor,
                                           victim, sep, t.params.leaf_max());
  --t.leaf_count;
  ++stats_.leaf_merges;
  pe.child_idx = surv_idx;
  d.leaf = survivor;

  {
    auto parent = ctx_.pager().write<InternalNode>(pe.id);
    if (mr.resplit) {
      auto at = static_cast<std::ptrdiff_t>(surv_idx);
      parent->children.insert(parent->children.begin() + at + 1, mr.right);
      parent->pivots.insert(parent->pivots.begin() + at, mr.separator);
      parent->child_max.insert(parent->child_max.begin() + at + 1, mr.right_net);
      parent->child_min.insert(parent->child_min.begin() + at + 1, mr.right_net);
    }
    parent->child_max[surv_idx] = mr.left_net;
    parent->child_min[surv_idx] = mr.left_net;
  }
  co_await ctx_.gate();
  if (mr.resplit) ++t.leaf_count;
  co_return;
}

// Child-count repair at one path level; returns the nodes left overfull by a
// buffer merge (they are flushed right after). Keeps d.path pointing at
// valid children throughout.
Task<std::vector<BlockId>> MaintenanceDriver::repair_node(Descent& d,
                                                          std::size_t li) {
  TreeState& t = tree_;
  const auto& P = t.params;
  std::vector<BlockId> overfull_products;
  BlockId n1 = d.path[li].id;

  std::size_t nchil;
  std::size_t buf_size;
  {
    auto node = ctx_.pager().read<InternalNode>(n1);
    nchil = node->children.size();
    buf_size = node->buffer.size();
  }
  co_await ctx_.gate();
  (void)buf_size;

  auto wire_split_into_parent = [&](std::size_t level, const InternalSplit& s,
                                    BlockId left) -> Task<void> {
    // Aggregates for both halves, then insert the right half after the left.
    std::uint64_t lmax, lmin, rmax, rmin;
    {
      auto ln = ctx_.pager().read<InternalNode>(left);
      lmax = ln->subtree_max();
      lmin = ln->subtree_min();
    }
    co_await ctx_.gate();
    {
      auto rn = ctx_.pager().read<InternalNode>(s.right);
      rmax = rn->subtree_max();
      rmin = rn->subtree_min();
    }
    co_await ctx_.gate();
    {
      auto parent = ctx_.pager().write<InternalNode>(d.path[level - 1].id);
      std::size_t pidx = d.path[level - 1].child_idx;
      integrity_check(parent->children[pidx] == left, "parent/child desync");
      auto at = static_cast<std::ptrdiff_t>(pidx);
      parent->children.insert(parent->children.begin() + at + 1, s.right);
      parent->pivots.insert(parent->pivots.begin() + at, s.promoted);
      parent->child_max[pidx] = lmax;
      parent->child_min[pidx] = lmin;
      parent->child_max.insert(parent->child_max.begin() + at + 1, rmax);
      parent->child_min.insert(parent->child_min.begin() + at + 1, rmin);
    }
    co_await ctx_.gate();
    co_return;
  };

  auto note_overfull = [&](BlockId id) -> Task<void> {
    bool of;
    {
      auto n = ctx_.pager().read<InternalNode>(id);
      of = n->buffer.size() > P.buffer_cap;
    }
    co_await ctx_.gate();
    if (of) overfull_products.push_back(id);
    co_return;
  };

  if (nchil > P.fanout_max) {
    InternalSplit s = co_await split_internal(ctx_, t, n1);
    ++stats_.internal_splits;
    if (li == 0) {
      // Root split: a fresh root adopts both halves.
      std::uint64_t lmax, lmin, rmax, rmin;
      {
        auto ln = ctx_.pager().read<InternalNode>(n1);
        lmax = ln->subtree_max();
        lmin = ln->subtree_min();
      }
      co_await ctx_.gate();
      {
        auto rn = ctx_.pager().read<InternalNode>(s.right);
        rmax = rn->subtree_max();
        rmin = rn->subtree_min();
      }
      co_await ctx_.gate();
      {
        auto fresh = ctx_.pager().alloc<InternalNode>();
        fresh->height = t.height + 1;
        fresh->children = {n1, s.right};
        fresh->pivots = {s.promoted};
        fresh->child_max = {lmax, rmax};
        fresh->child_min = {lmin, rmin};
        repoint_root(t, fresh.id());
      }
      ++t.height;
      ++stats_.root_grows;
    } else {
      co_await wire_split_into_parent(li, s, n1);
    }
    // Keep the descent path pointing into the half it went through.
    if (d.path[li].child_idx >= s.moved_from) {
      d.path[li].id = s.right;
      d.path[li].child_idx -= s.moved_from;
      if (li > 0) ++d.path[li - 1].child_idx;
    }
    co_await note_overfull(n1);
    co_await note_overfull(s.right);
  } else if (li > 0 && nchil < P.fanout_min) {
    // Merge with an adjacent sibling (prefer left); parent rewired first.
    BlockId parent_id = d.path[li - 1].id;
    std::size_t idx = d.path[li - 1].child_idx;
    BlockId left, right;
    Key sep;
    std::size_t left_idx;
    {
      auto parent = ctx_.pager().write<InternalNode>(parent_id);
      integrity_check(parent->children[idx] == n1, "parent/child desync");
      if (idx > 0) {
        left_idx = idx - 1;
        left = parent->children[left_idx];
        right = n1;
        sep = parent->pivots[idx - 1];
      } else {
        left_idx = idx;
        left = n1;
        right = parent->children[idx + 1];
        sep = parent->pivots[idx];
      }
      auto rm = static_cast<std::ptrdiff_t>(left_idx) + 1;
      parent->children.erase(parent->children.begin() + rm);
      parent->pivots.erase(parent->pivots.begin() + static_cast<std::ptrdiff_t>(left_idx));
      parent->child_max.erase(parent->child_max.begin() + rm);
      parent->child_min.erase(parent->child_min.begin() + rm);
    }
    co_await ctx_.gate();
    co_await merge_internal(ctx_, t, left, right, sep);
    ++stats_.internal_merges;
    d.path[li].id = left;
    d.path[li - 1].child_idx = left_idx;

    bool still_wide;
    {
      auto n = ctx_.pager().read<InternalNode>(left);
      still_wide = n->children.size() > P.fanout_max;
      if (n->buffer.size() > P.buffer_cap) t.last_merged = left;
    }
    co_await ctx_.gate();
    if (still_wide) {
      // Merged too wide: split evenly again.
      InternalSplit s = co_await split_internal(ctx_, t, left);
      ++stats_.internal_splits;
      co_await wire_split_into_parent(li, s, left);
      if (d.path[li].child_idx >= s.moved_from) {
        d.path[li].id = s.right;
        d.path[li].child_idx -= s.moved_from;
        ++d.path[li - 1].child_idx;
      }
      co_await note_overfull(left);
      co_await note_overfull(s.right);
      // The overfull half, if any, is the merge product for census purposes.
      t.last_merged =
          overfull_products.empty() ? std::optional<BlockId>{} : std::optional<BlockId>{overfull_products.front()};
    } else {
      co_await note_overfull(left);
    }
  } else if (li == 0 && t.height > 1 && nchil == 1) {
    // Root underflow over an internal child: hand the root role down.
    BlockId child;
    {
      auto root = ctx_.pager().write<InternalNode>(t.root);
      auto kid = ctx_.pager().write<InternalNode>(root->children[0]);
      merge_annihilate(kid->buffer, root->buffer);
      root->buffer.clear();
      root->children.clear();
      child = kid.id();
    }
    co_await ctx_.gate();
    BlockId old_root = t.root;
    repoint_root(t, child);
    ctx_.pager().free_block(old_root);
    --t.height;
    ++stats_.root_collapses;
    d.path.erase(d.path.begin(), d.path.begin() + 1);
    co_await note_overfull(child);
  }

  co_return overfull_products;
}

Task<void> MaintenanceDriver::run_phase(Phase ph) {
  TreeState& t = tree_;

  // Descend to the extreme leaf, then split/merge it when the threshold
  // test passes.
  Descent d = co_await descend_extreme(ctx_, t, ph == Phase::Split, stats_.loops);
  if (ph == Phase::Split)
    co_await split_phase_leaf_step(d);
  else
    co_await merge_phase_leaf_step(d);

  // Propagate splits/merges toward the root. Each iteration repairs one
  // level, flushes any node left overfull by a buffer merge, refreshes the
  // level's cached aggregate, and drains the root.
  std::size_t iters = 0;
  for (std::size_t li = d.path.size(); li-- > 0;) {
    std::uint64_t arrivals_before = arrivals_;
    ++iters;

    std::vector<BlockId> products = co_await repair_node(d, li);
    for (BlockId p : products)
      co_await flush_until_not_overfull(p, ancestors_of(d, li, p));

    if (li > 0 && li <= d.path.size() - 1) {
      // Carry this level's aggregate into the parent entry.
      std::uint64_t amax, amin;
      {
        auto n = ctx_.pager().read<InternalNode>(d.path[li].id);
        amax = n->subtree_max();
        amin = n->subtree_min();
      }
      co_await ctx_.gate();
      {
        auto parent = ctx_.pager().write<InternalNode>(d.path[li - 1].id);
        parent->child_max[d.path[li - 1].child_idx] = amax;
        parent->child_min[d.path[li - 1].child_idx] = amin;
      }
      co_await ctx_.gate();
    }

    co_await drain_root(ctx_, t, stats_.loops);

    LoopStats::note(stats_.loops.propagate_iters, iters);
    std::uint64_t arrived = arrivals_ - arrivals_before;
    if (arrived > stats_.max_arrivals_per_propagation)
      stats_.max_arrivals_per_propagation = arrived;
  }
  co_return;
}

}  // namespace bepsilon
