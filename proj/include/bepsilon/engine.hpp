#pragma once

#include <memory>

#include "bepsilon/audit.hpp"
#include "bepsilon/maintenance.hpp"
#include "bepsilon/pages.hpp"
#include "bepsilon/query.hpp"
#include "bepsilon/rebuild.hpp"

namespace bepsilon {

struct EngineConfig {
  Params params;
  std::uint32_t cache_blocks = 0;  // 0: the params default
  std::optional<std::string> file_path{};
  bool auto_rebuild = true;
};

// The deamortized dictionary: update arrivals append to the pinned root
// buffer at zero I/O; every update_batch arrivals the maintenance cycle is
// advanced by exactly one I/O (one more for the rebuild lane while one is
// active). Queries run at quiescent points and never write.
class DeamoEngine {
 public:
  explicit DeamoEngine(EngineConfig cfg);
  ~DeamoEngine();

  void insert(Key k) { apply(make_insert(k)); }
  void erase(Key k) { apply(make_delete(k)); }

  std::optional<Key> predecessor(Key q);
  std::vector<Key> range(Key a, Key b);
  bool member(Key q);

  // Drive the current phase to its boundary (queries and audits need it).
  void quiesce();

  std::uint64_t digest();
  AuditReport audit(bool check_aux = true, const OracleSet* oracle = nullptr);
  std::vector<std::uint8_t> serialize();

  const IoStats& io() const { return pager_->stats(); }
  Pager& pager() { return *pager_; }
  TreeState& tree() { return tree_; }
  MaintenanceDriver& maintenance() { return *driver_; }
  const MaintenanceStats& mstats() const { return driver_->stats(); }
  const Params& params() const { return tree_.params; }

  std::uint64_t n_live() const { return tree_.n_live; }
  std::uint64_t leaf_lower_band() const { return leaf_lower_; }

  // Worst I/O events attributed to a single update call (the budget meter).
  std::uint64_t max_events_per_update() const { return max_events_per_update_; }
  // Events attributed to the most recent query, net of the quiescing drain.
  std::uint64_t last_query_events() const { return last_query_events_; }

  bool rebuild_active() const { return rebuild_ != nullptr; }
  std::uint64_t rebuilds_completed() const { return rebuilds_; }
  const RebuildStats& last_rebuild_stats() const { return last_rebuild_stats_; }
  void set_auto_rebuild(bool v) { auto_rebuild_ = v; }
  std::uint64_t rebuild_n0() const { return n0_; }
  // Force the shrink-trigger arming (tests drive small populations).
  void arm_rebuild_trigger() { trigger_armed_ = true; }

  std::function<void()> on_quiescent{};

 private:
  void apply(Update u);
  void pace_once();
  void check_rebuild_trigger();
  void try_switchover();

  std::unique_ptr<Pager> pager_;
  TreeState tree_;
  std::unique_ptr<MaintenanceDriver> driver_;
  std::unique_ptr<Rebuilder> rebuild_;

  std::uint32_t pending_ = 0;
  std::uint64_t max_events_per_update_ = 0;
  std::uint64_t last_query_events_ = 0;
  std::uint64_t leaf_lower_ = 0;

  bool auto_rebuild_ = true;
  bool trigger_armed_ = false;
  std::uint64_t n0_ = 0;
  std::uint64_t rebuilds_ = 0;
  RebuildStats last_rebuild_stats_{};
};

}  // namespace bepsilon
