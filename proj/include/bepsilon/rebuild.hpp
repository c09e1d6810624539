#pragma once

#include "bepsilon/tree_builder.hpp"
#include "bepsilon/tree_ops.hpp"

namespace bepsilon {

// Trigger: the live size drifted polynomially from the size at the last
// rebuild. Exact integer arithmetic on both inequalities.
bool should_rebuild(std::uint64_t n0, std::uint64_t n_live);

struct RebuildStats {
  std::uint64_t rounds = 0;
  std::uint64_t copied = 0;           // insertions scanned into the new tree
  std::uint64_t mirrored = 0;         // user updates applied behind the cursor
  std::uint64_t scan_reads = 0;       // charged block reads of the scan
  std::uint64_t updates_during = 0;   // user updates while the rebuild ran
};

// Copies the old tree's logical content, in key order, into a shadow tree
// with freshly derived parameters, while the old tree keeps serving. Scan
// rounds snapshot atomically (uncounted peeks) and their block footprint is
// then charged one read per lane step; user updates behind the cursor are
// mirrored, updates ahead of it are picked up by later rounds.
class Rebuilder {
 public:
  Rebuilder(TreeState& old_tree, const Params& new_params);
  ~Rebuilder();

  // One lane step: at most one I/O. Returns false once fully idle (scan
  // complete, staging flushed, shadow root drained).
  bool resume_one_io();
  bool done() const;

  // Route one user update that was just applied to the old tree.
  void mirror(Update u);

  // Hand the finished tree over (root pinned); the rebuilder is spent.
  TreeState take_tree();

  Key v_max() const { return v_max_; }
  bool cursor_started() const { return have_v_; }
  const RebuildStats& stats() const { return stats_; }
  const TreeState& shadow() const { return new_; }
  StepContext& ctx() { return ctx_; }

 private:
  Task<void> lane();
  bool scan_round();  // atomic snapshot; returns false when the scan finished
  Task<void> close_staged(bool final_tail);

  TreeState& old_;
  StepContext ctx_;
  TreeState new_;
  LoopStats lane_loops_;

  std::vector<Key> staging_;  // scanned keys in (closed_boundary_, v_max_]
  Key v_max_ = 0;
  bool have_v_ = false;
  Key closed_boundary_ = 0;
  bool have_closed_ = false;
  bool scan_done_ = false;
  std::uint32_t pending_charges_ = 0;
  std::uint64_t leaf_target_ = 0;
  std::uint64_t leaf_min_ = 0;

  std::optional<Task<void>> task_{};
  RebuildStats stats_;
};

}  // namespace bepsilon
