#pragma once

#include <functional>

#include "bepsilon/tree_ops.hpp"

namespace bepsilon {

enum class Phase { Split, Merge };

struct MaintenanceStats {
  LoopStats loops;
  std::uint64_t phases = 0;
  std::uint64_t cycles = 0;  // one split + one merge phase
  std::uint64_t leaf_splits = 0;
  std::uint64_t leaf_merges = 0;
  std::uint64_t internal_splits = 0;
  std::uint64_t internal_merges = 0;
  std::uint64_t root_grows = 0;
  std::uint64_t root_collapses = 0;
  std::uint64_t governor_drains = 0;
  std::uint64_t max_root_buffer = 0;
  // User updates admitted during a single upward-propagation iteration.
  std::uint64_t max_arrivals_per_propagation = 0;
};

// Runs the maintenance cycle as a resumable background process over one
// tree: alternating split and merge phases, upward propagation, bounded
// flushing of merged nodes, and root draining. resume_until_io() advances
// until exactly one faulting block access has happened (yield) or the
// current phase completes with none; the engine interleaves user updates
// between calls. Quiescent points are the phase boundaries.
class MaintenanceDriver {
 public:
  explicit MaintenanceDriver(TreeState& tree);

  // Returns true when it stopped on an I/O, false when the phase completed.
  bool resume_until_io();
  void run_to_quiescence();
  bool quiescent() const { return !current_.has_value(); }

  void note_arrival();

  Phase next_phase() const { return next_; }
  const MaintenanceStats& stats() const { return stats_; }
  MaintenanceStats& stats() { return stats_; }
  StepContext& ctx() { return ctx_; }

  // Invoked at every phase boundary (quiescent point).
  std::function<void()> on_quiescent{};

 private:
  Task<void> run_phase(Phase ph);
  Task<void> split_phase_leaf_step(Descent& d);
  Task<void> merge_phase_leaf_step(Descent& d);
  Task<std::vector<BlockId>> repair_node(Descent& d, std::size_t li);
  Task<void> flush_until_not_overfull(BlockId node,
                                      std::vector<PathEntry> ancestors);
  Task<void> governor_task();

  std::vector<PathEntry> ancestors_of(const Descent& d, std::size_t li,
                                      BlockId node) const;

  TreeState& tree_;
  StepContext ctx_;
  std::optional<Task<void>> current_{};
  Phase next_ = Phase::Split;
  MaintenanceStats stats_;
  std::uint64_t arrivals_ = 0;
};

}  // namespace bepsilon
