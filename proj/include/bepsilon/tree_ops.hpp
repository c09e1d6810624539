#pragma once

#include <optional>

#include "bepsilon/leaf_store.hpp"
#include "bepsilon/pages.hpp"
#include "bepsilon/params.hpp"
#include "bepsilon/task.hpp"

namespace bepsilon {

// Iteration-count high-water marks for the annotated maintenance loops.
struct LoopStats {
  std::uint32_t descend_depth = 0;      // extreme-leaf descent
  std::uint32_t propagate_iters = 0;    // upward split/merge propagation
  std::uint32_t merged_flush_iters = 0; // repeated flushing of a merged node
  std::uint32_t flush_path_depth = 0;   // one flush cascade, merged node
  std::uint32_t root_drain_iters = 0;   // root drain repetitions
  std::uint32_t drain_path_depth = 0;   // one flush cascade, root drain

  static void note(std::uint32_t& slot, std::uint64_t v) {
    if (v > slot) slot = static_cast<std::uint32_t>(v);
  }
};

// One tree instance: the root is always an internal node; a bootstrap tree
// is an internal root over a single leaf. The root page stays pinned so
// update arrivals cost no I/O.
struct TreeState {
  Pager* pager = nullptr;
  Params params;
  BlockId root = 0;
  std::uint32_t height = 1;  // root's height; leaves sit at 0
  std::uint64_t leaf_count = 1;
  std::uint64_t n_live = 0;
  std::optional<BlockId> last_merged{};  // the one node allowed overfull

  bool bootstrap() const { return leaf_count <= 1; }
};

TreeState tree_create(Pager& pager, const Params& params);
// Frees every block of the tree (metadata walk, uncounted).
void tree_destroy(TreeState& t);
// Re-pins the root after a root change.
void repoint_root(TreeState& t, BlockId new_root);

struct PathEntry {
  BlockId id = 0;
  std::size_t child_idx = 0;  // child taken to descend
};

struct Descent {
  std::vector<PathEntry> path;  // internal nodes, root first
  BlockId leaf = 0;
};

// Child index whose interval contains key (pivots[i-1] <= key < pivots[i]).
std::size_t route_key(const InternalNode& node, Key key);

// Interval [lo, hi] covered by child i, given the node's own interval.
std::pair<Key, Key> child_interval(const InternalNode& node, std::size_t i,
                                   Key lo, Key hi);

// The child receiving the most buffered updates (ties to the smallest
// index). Contract: the node is overfull.
std::pair<std::size_t, std::size_t> select_flush_child(const InternalNode& node,
                                                       std::uint32_t buffer_cap);

// Descend by the cached extreme-leaf sizes to the leaf with the most
// (want_max) or fewest updates.
Task<Descent> descend_extreme(StepContext& ctx, TreeState& t, bool want_max,
                              LoopStats& loops);

// Descend by key routing; used by queries and the rebuild scan.
Task<Descent> descend_key(StepContext& ctx, TreeState& t, Key key);

// Move one flush quantum from node (at path position `pos` in `anc`+self)
// toward the leaves while buffers stay overfull, bulk-inserting into the
// final leaf, then refresh auxiliary sizes back up to the root.
// `depth_slot`/`anc` instrumentation: depth recorded into *depth_slot.
Task<void> flush_cascade(StepContext& ctx, TreeState& t, BlockId start,
                         std::vector<PathEntry> anc, std::uint32_t* depth_slot);

// One upward pass refreshing child_max/child_min entries along a path whose
// structure is intact (used after flush cascades).
Task<void> refresh_aux_upward(StepContext& ctx, TreeState& t,
                              const std::vector<PathEntry>& path);

// While the root buffer exceeds buffer_cap: run one flush cascade from the
// root. Iteration count recorded into loops.root_drain_iters.
Task<void> drain_root(StepContext& ctx, TreeState& t, LoopStats& loops);

// Splits `node` (too many children) around its median pivot; returns the new
// right sibling and the promoted pivot. Caller wires the parent.
struct InternalSplit {
  BlockId right = 0;
  Key promoted = 0;
  std::size_t moved_from = 0;  // children [moved_from, end) went right
};
Task<InternalSplit> split_internal(StepContext& ctx, TreeState& t, BlockId node);

// Absorb `right` into `left` (adjacent siblings, `sep` between them); frees
// `right`. The merged buffer may become overfull; the caller flushes it.
Task<void> merge_internal(StepContext& ctx, TreeState& t, BlockId left,
                          BlockId right, Key sep);

// Leaf enumeration in key order via uncounted peeks (audits, digests).
std::vector<BlockId> collect_leaves(const TreeState& t);

}  // namespace bepsilon
