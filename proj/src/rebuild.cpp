#include "bepsilon/rebuild.hpp"

#include <algorithm>
#include <limits>
#include <map>

namespace bepsilon {

namespace {
constexpr Key kKeyMax = std::numeric_limits<Key>::max();
}

bool should_rebuild(std::uint64_t n0, std::uint64_t n_live) {
  contract_check(n0 >= 1, "should_rebuild: N0 must be positive");
  // N >= N0^2 / 2  <=>  2N >= N0^2
  __uint128_t grow_lhs = static_cast<__uint128_t>(n_live) * 2;
  __uint128_t grow_rhs = static_cast<__uint128_t>(n0) * n0;
  if (grow_lhs >= grow_rhs) return true;
  // N <= (3/2) sqrt(N0)  <=>  4 N^2 <= 9 N0
  __uint128_t shrink_lhs = static_cast<__uint128_t>(n_live) * n_live * 4;
  __uint128_t shrink_rhs = static_cast<__uint128_t>(n0) * 9;
  return shrink_lhs <= shrink_rhs;
}

Rebuilder::Rebuilder(TreeState& old_tree, const Params& new_params)
    : old_(old_tree),
      ctx_(*old_tree.pager),
      new_(tree_create(*old_tree.pager, new_params)) {
  leaf_target_ = new_params.tau - new_params.tau / 4;  // 3/4 tau'
  leaf_min_ = (new_params.tau + 3) / 4;
}

Rebuilder::~Rebuilder() {
  // Abandoned (not taken over): release the shadow tree.
  task_.reset();
  if (new_.pager && new_.root != 0) tree_destroy(new_);
}

bool Rebuilder::done() const {
  if (!(scan_done_ && staging_.empty() && pending_charges_ == 0 &&
        !task_.has_value()))
    return false;
  // Mirrored arrivals may have refilled the shadow root since the lane went
  // idle; it must be drained before a handover.
  auto root = new_.pager->peek<InternalNode>(new_.root);
  return root->buffer.size() <= new_.params.buffer_cap;
}

TreeState Rebuilder::take_tree() {
  integrity_check(done(), "take_tree before the rebuild finished");
  TreeState out = new_;
  new_.root = 0;  // disarm the destructor
  return out;
}

void Rebuilder::mirror(Update u) {
  ++stats_.updates_during;
  if (!have_v_ || u.key > v_max_) return;  // the scan will meet it in the old tree
  ++stats_.mirrored;
  if (have_closed_ && u.key <= closed_boundary_) {
    auto root = new_.pager->write<InternalNode>(new_.root);
    merge_annihilate(root->buffer, std::span<const Update>(&u, 1));
    if (u.kind == UpdateKind::Insert)
      ++new_.n_live;
    else
      --new_.n_live;
    return;
  }
  // Behind the cursor but not yet closed into a leaf: adjust the staging run.
  auto it = std::lower_bound(staging_.begin(), staging_.end(), u.key);
  if (u.kind == UpdateKind::Insert) {
    integrity_check(it == staging_.end() || *it != u.key,
                    "mirrored insert already staged");
    staging_.insert(it, u.key);
  } else {
    integrity_check(it != staging_.end() && *it == u.key,
                    "mirrored delete missing from staging");
    staging_.erase(it);
  }
}

bool Rebuilder::resume_one_io() {
  if (done()) return false;
  if (!task_) task_.emplace(lane());
  bool yielded = ctx_.resume_step(*task_);
  if (task_->done()) {
    task_->rethrow_if_failed();
    task_.reset();
  }
  return yielded;
}

Task<void> Rebuilder::close_staged(bool final_tail) {
  if (staging_.empty()) co_return;
  std::uint64_t net = staging_.size();
  if (final_tail && net < leaf_min_ && have_closed_) {
    // Short tail folds into the rightmost closed leaf.
    std::vector<PathEntry> path;
    BlockId cur = new_.root;
    while (true) {
      std::size_t last;
      BlockId next;
      bool at_parent;
      {
        auto node = ctx_.pager().read<InternalNode>(cur);
        last = node->children.size() - 1;
        next = node->children[last];
        at_parent = node->height == 1;
      }
      co_await ctx_.gate();
      path.push_back({cur, last});
      if (at_parent) {
        cur = next;
        break;
      }
      cur = next;
    }
    co_await leaf_append_packed(ctx_, leaf_config(new_.params), cur, staging_);
    new_.n_live += net;
    co_await refresh_aux_upward(ctx_, new_, path);
  } else {
    Key sep = staging_.front();
    BlockId leaf =
        co_await build_packed_leaf(ctx_, leaf_config(new_.params), staging_);
    if (!have_closed_)
      co_await adopt_first_leaf(ctx_, new_, leaf, net);
    else
      co_await append_leaf_right(ctx_, new_, leaf, sep, net);
  }
  closed_boundary_ = staging_.back();
  have_closed_ = true;
  stats_.copied += net;
  staging_.clear();
  co_return;
}

// One atomic snapshot round over the old tree: gather the next batch of net
// insertions above the cursor together with the path updates that cover
// them, extract the smallest buffer_cap survivors, and advance the cursor.
// Returns false when nothing above the cursor remains.
bool Rebuilder::scan_round() {
  const auto& P = old_.params;
  std::uint64_t touched = 0;
  Key from = have_v_ ? v_max_ : 0;
  bool inclusive_from = !have_v_;  // keys > v_max_, or >= 0 on the first round

  while (true) {
    // Peek-descend to the leaf owning the next key position.
    std::map<Key, std::int64_t> counts;
    BlockId cur = old_.root;
    Key lo = 0, hi = kKeyMax;
    while (true) {
      auto node = old_.pager->peek<InternalNode>(cur);
      ++touched;
      for (const auto& u : node->buffer) {
        bool in = inclusive_from ? u.key >= from : u.key > from;
        if (in) counts[u.key] += u.kind == UpdateKind::Insert ? 1 : -1;
      }
      std::size_t idx = route_key(*node, from);
      auto [clo, chi] = child_interval(*node, idx, lo, hi);
      lo = clo;
      hi = chi;
      BlockId next = node->children[idx];
      bool at_leaf = node->height == 1;
      node.reset();
      cur = next;
      if (at_leaf) break;
    }
    // Path updates outside this leaf's interval belong to later rounds.
    for (auto it = counts.begin(); it != counts.end();) {
      if (it->first < lo || it->first > hi)
        it = counts.erase(it);
      else
        ++it;
    }

    // Net leaf insertions above the cursor, capped at 2 * buffer_cap. The
    // cursor may only advance through fully examined key space, so track the
    // frontier: the leaf's upper bound when every relevant page was read,
    // otherwise the last key actually seen.
    auto lr = old_.pager->peek<LeafRoot>(cur);
    ++touched;
    std::vector<Update> buf;
    for (BlockId pid : lr->buffer_pages) {
      auto page = old_.pager->peek<UpdateRunPage>(pid);
      ++touched;
      buf.insert(buf.end(), page->updates.begin(), page->updates.end());
    }
    const std::size_t want = 2 * P.buffer_cap;
    std::size_t got = 0;
    Key frontier = hi;
    bool stopped_early = false;
    for (std::size_t i = 0; i < lr->microleaves.size() && !stopped_early; ++i) {
      Key mhi = i == lr->microleaves.size() - 1 ? hi : lr->mu_pivots[i] - 1;
      bool relevant = inclusive_from ? mhi >= from : mhi > from;
      if (!relevant) continue;
      for (BlockId pid : lr->microleaves[i].pages) {
        auto page = old_.pager->peek<MicroLeafPage>(pid);
        ++touched;
        for (Key k : page->keys) {
          bool in = inclusive_from ? k >= from : k > from;
          if (in) {
            counts[k] += 1;
            ++got;
          }
        }
        if (got >= want && !page->keys.empty()) {
          frontier = page->keys.back();
          stopped_early = true;
          break;
        }
      }
    }
    for (const auto& u : buf) {
      bool in = inclusive_from ? u.key >= from : u.key > from;
      if (in && u.key >= lo && u.key <= hi)
        counts[u.key] += u.kind == UpdateKind::Insert ? 1 : -1;
    }

    std::vector<Key> cands;
    for (auto& [k, c] : counts) {
      if (k > frontier) break;
      integrity_check(c >= 0 && c <= 1, "rebuild scan: signed count out of range");
      if (c == 1) cands.push_back(k);
    }

    if (cands.empty()) {
      if (!stopped_early && hi == kKeyMax) {
        scan_done_ = true;
        pending_charges_ += static_cast<std::uint32_t>(touched);
        stats_.scan_reads += touched;
        return false;
      }
      // Everything examined so far cancelled; move past the frontier.
      from = frontier;
      inclusive_from = false;
      continue;
    }

    std::size_t take = std::min<std::size_t>(P.buffer_cap, cands.size());
    staging_.insert(staging_.end(), cands.begin(),
                    cands.begin() + static_cast<std::ptrdiff_t>(take));
    v_max_ = cands[take - 1];
    have_v_ = true;
    ++stats_.rounds;
    pending_charges_ += static_cast<std::uint32_t>(touched);
    stats_.scan_reads += touched;
    return true;
  }
}

Task<void> Rebuilder::lane() {
  const std::uint32_t cap = new_.params.buffer_cap;
  while (true) {
    // Shadow-root hygiene first: mirrored updates land in its buffer.
    bool overfull;
    {
      auto root = ctx_.pager().read<InternalNode>(new_.root);
      overfull = root->buffer.size() > cap;
    }
    co_await ctx_.gate();
    if (overfull) {
      co_await drain_root(ctx_, new_, lane_loops_);
      continue;
    }
    if (pending_charges_ > 0) {
      --pending_charges_;
      ctx_.pager().charge_synthetic_read();
      co_await ctx_.gate();
      continue;
    }
    if (staging_.size() >= leaf_target_) {
      co_await close_staged(false);
      continue;
    }
    if (!scan_done_) {
      scan_round();
      continue;
    }
    if (!staging_.empty()) {
      co_await close_staged(true);
      continue;
    }
    break;  // idle: scan done, staging flushed, root under cap
  }
  co_return;
}

}  // namespace bepsilon
