#pragma once

#include <span>

#include "bepsilon/buffer_ops.hpp"
#include "bepsilon/pages.hpp"
#include "bepsilon/params.hpp"
#include "bepsilon/task.hpp"

namespace bepsilon {

// Leaf operations over the two-level micro-tree: a LeafRoot page holding the
// micro-leaf directory plus a buffered update run, and micro-leaf page runs
// of sorted insertions. Every operation is a Task that performs one block
// access per yield; callers interleave user work between resumptions.

struct LeafConfig {
  std::uint64_t block_size = 0;
  std::uint32_t microleaf_cap = 0;
  std::uint32_t microroot_cap = 0;
  std::uint32_t flush_quantum = 0;
};

inline LeafConfig leaf_config(const Params& p) {
  return LeafConfig{p.block_size, p.microleaf_cap, p.microroot_buffer_cap,
                    p.flush_quantum};
}

// Allocates an empty leaf; zero I/O beyond the allocation itself.
BlockId leaf_create(Pager& pager);

// Frees a leaf and every page it owns. Metadata-only (walks via peek).
void leaf_free(Pager& pager, BlockId leaf);

// Merge a key-sorted batch into the micro-root buffer, annihilating pairs,
// then micro-flush while the buffer exceeds its cap. Returns the leaf's net
// size afterwards.
Task<std::uint64_t> leaf_bulk_insert(StepContext& ctx, LeafConfig cfg,
                                     BlockId leaf, std::vector<Update> batch);

// Micro-flush while the buffer exceeds its cap (used after merges). Returns
// net size.
Task<std::uint64_t> leaf_drain(StepContext& ctx, LeafConfig cfg, BlockId leaf);

struct LeafSplitResult {
  BlockId right = 0;
  Key separator = 0;  // right leaf covers [separator, ...)
  std::uint64_t left_net = 0;
  std::uint64_t right_net = 0;
};

// Split at the median of net content; at most one micro-leaf is physically
// split. `leaf` keeps the left half.
Task<LeafSplitResult> leaf_split(StepContext& ctx, LeafConfig cfg, BlockId leaf);

struct LeafMergeResult {
  bool resplit = false;
  BlockId right = 0;  // valid when resplit
  Key separator = 0;  // valid when resplit
  std::uint64_t left_net = 0;
  std::uint64_t right_net = 0;
};

// Merge the adjacent right leaf into `leaf` (separator = right's interval
// start), drain the doubled buffer, and split evenly when the result
// exceeds `leaf_max`. The right LeafRoot is freed.
Task<LeafMergeResult> leaf_merge(StepContext& ctx, LeafConfig cfg, BlockId leaf,
                                 BlockId right, Key separator,
                                 std::uint64_t leaf_max);

// Net insertions with keys in [lo, hi], sorted.
Task<std::vector<Key>> leaf_collect(StepContext& ctx, LeafConfig cfg,
                                    BlockId leaf, Key lo, Key hi);

// The largest net insertions <= q (ascending); stops early once `want` keys
// are gathered. Loads whole micro-leaves right to left.
Task<std::vector<Key>> leaf_collect_below(StepContext& ctx, LeafConfig cfg,
                                          BlockId leaf, Key q, std::size_t want);

// The smallest net insertions strictly above `v` (ascending), up to `want`.
Task<std::vector<Key>> leaf_collect_above(StepContext& ctx, LeafConfig cfg,
                                          BlockId leaf, Key v, std::size_t want);

// Net size via one gated LeafRoot read.
Task<std::uint64_t> leaf_net(StepContext& ctx, BlockId leaf);

// Direct-build support (rebuild bulk loading): append sorted keys strictly
// above everything present, packing micro-leaves toward the cap.
Task<std::uint64_t> leaf_append_packed(StepContext& ctx, LeafConfig cfg,
                                       BlockId leaf, std::span<const Key> keys);

// Runs the governor callback when armed and due; see StepContext.
Task<void> governor_checkpoint(StepContext& ctx);

}  // namespace bepsilon
