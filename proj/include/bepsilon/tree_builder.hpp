#pragma once

#include <span>

#include "bepsilon/tree_ops.hpp"

namespace bepsilon {

// Builds a leaf from sorted keys: micro-leaves chunked evenly toward
// 3/4 of the cap, buffer empty.
Task<BlockId> build_packed_leaf(StepContext& ctx, LeafConfig cfg,
                                std::span<const Key> keys);

// Attaches a built leaf whose keys all exceed everything present as the
// rightmost leaf, splitting right-spine nodes as needed and keeping the
// cached aggregates current. `sep` is the leaf's first key; `net` its size.
Task<void> append_leaf_right(StepContext& ctx, TreeState& t, BlockId leaf,
                             Key sep, std::uint64_t net);

// Packs ascending keys into leaves of `leaf_target` net size over a fresh
// tree. Used to bulk-load measurement trees and the rebuild target. A final
// short tail below `leaf_min` folds into the previous leaf.
class TreeBuilder {
 public:
  TreeBuilder(Pager& pager, const Params& params, std::uint64_t leaf_target,
              std::uint64_t leaf_min);

  // Keys must arrive strictly increasing.
  void feed(std::span<const Key> keys);
  // Finish and hand over the tree (root pinned).
  TreeState finish();

  TreeState& tree() { return tree_; }

 private:
  void close_staged();

  StepContext ctx_;
  TreeState tree_;
  std::vector<Key> staging_;
  std::uint64_t target_;
  std::uint64_t min_;
  bool first_leaf_placed_ = false;
  Key last_key_ = 0;
  bool have_last_ = false;
};

// Replace the empty bootstrap leaf of a fresh tree with a built one.
Task<void> adopt_first_leaf(StepContext& ctx, TreeState& t, BlockId leaf,
                            std::uint64_t net);

}  // namespace bepsilon
