#include "bepsilon/engine.hpp"

namespace bepsilon {

DeamoEngine::DeamoEngine(EngineConfig cfg) {
  PagerConfig pc;
  pc.cache_blocks =
      cfg.cache_blocks ? cfg.cache_blocks : cfg.params.default_cache_blocks();
  if (cfg.file_path) {
    pc.file_path = cfg.file_path;
    pc.page_size = page_size_for(cfg.params.block_size);
    pc.decoder = decode_page;
  }
  pager_ = std::make_unique<Pager>(pc);
  {
    // Block 0 anchors the store.
    auto sb = pager_->alloc<Superblock>();
    sb->block_size = cfg.params.block_size;
    sb->epsilon = cfg.params.epsilon;
    sb->n_cap = cfg.params.n_cap;
  }
  tree_ = tree_create(*pager_, cfg.params);
  {
    auto sb = pager_->write<Superblock>(kSuperblockId);
    sb->root = tree_.root;
  }
  driver_ = std::make_unique<MaintenanceDriver>(tree_);
  driver_->on_quiescent = [this] {
    if (on_quiescent) on_quiescent();
  };
  auto_rebuild_ = cfg.auto_rebuild;
  n0_ = cfg.params.n_cap;
  leaf_lower_ = cfg.params.tau;
}

DeamoEngine::~DeamoEngine() = default;

void DeamoEngine::apply(Update u) {
  std::uint64_t faults_before = pager_->stats().faults;

  // Arrival: merged into the pinned root buffer, no I/O.
  {
    auto root = pager_->write<InternalNode>(tree_.root);
    merge_annihilate(root->buffer, std::span<const Update>(&u, 1));
  }
  if (u.kind == UpdateKind::Insert)
    ++tree_.n_live;
  else
    --tree_.n_live;
  driver_->note_arrival();
  if (rebuild_) rebuild_->mirror(u);

  if (tree_.params.low_rate) {
    // Batch floor engaged: the schedule inverts to several I/Os per update.
    for (std::uint32_t i = 0; i < tree_.params.low_rate_ios; ++i) pace_once();
  } else {
    if (++pending_ >= tree_.params.update_batch) {
      pending_ = 0;
      pace_once();
    }
  }

  std::uint64_t attributed = pager_->stats().faults - faults_before;
  if (attributed > max_events_per_update_) max_events_per_update_ = attributed;

  check_rebuild_trigger();
  try_switchover();
}

void DeamoEngine::pace_once() {
  driver_->resume_until_io();
  if (rebuild_ && !rebuild_->done()) rebuild_->resume_one_io();
}

void DeamoEngine::check_rebuild_trigger() {
  if (!auto_rebuild_ || rebuild_) return;
  std::uint64_t shrink_gate = 1;
  // Arm the shrink side only after the population clears its threshold once.
  while (4 * (shrink_gate + 1) * (shrink_gate + 1) <= 9 * n0_) ++shrink_gate;
  if (!trigger_armed_ && tree_.n_live > shrink_gate) trigger_armed_ = true;

  bool grow = static_cast<__uint128_t>(tree_.n_live) * 2 >=
              static_cast<__uint128_t>(n0_) * n0_;
  bool fire = grow || (trigger_armed_ && should_rebuild(n0_, tree_.n_live));
  if (!fire) return;

  std::uint64_t n_for_tau = std::max<std::uint64_t>(tree_.n_live, tree_.params.block_size);
  Params np = derive_params(tree_.params.block_size, tree_.params.epsilon,
                            n_for_tau, tree_.params.c_i, tree_.params.c_h);
  rebuild_ = std::make_unique<Rebuilder>(tree_, np);
}

void DeamoEngine::try_switchover() {
  if (!rebuild_ || !rebuild_->done() || !driver_->quiescent()) return;
  last_rebuild_stats_ = rebuild_->stats();
  TreeState fresh = rebuild_->take_tree();
  rebuild_.reset();
  tree_destroy(tree_);
  tree_ = fresh;
  {
    auto sb = pager_->write<Superblock>(kSuperblockId);
    sb->root = tree_.root;
    sb->n_cap = tree_.params.n_cap;
  }
  driver_ = std::make_unique<MaintenanceDriver>(tree_);
  driver_->on_quiescent = [this] {
    if (on_quiescent) on_quiescent();
  };
  n0_ = std::max<std::uint64_t>(1, tree_.n_live);
  trigger_armed_ = false;
  leaf_lower_ = tree_.params.tau / 4;
  ++rebuilds_;
}

void DeamoEngine::quiesce() {
  driver_->run_to_quiescence();
  try_switchover();
}

std::optional<Key> DeamoEngine::predecessor(Key q) {
  quiesce();
  std::uint64_t before = pager_->stats().faults;
  auto out = query_predecessor(tree_, q);
  last_query_events_ = pager_->stats().faults - before;
  return out;
}

std::vector<Key> DeamoEngine::range(Key a, Key b) {
  quiesce();
  std::uint64_t before = pager_->stats().faults;
  auto out = query_range(tree_, a, b);
  last_query_events_ = pager_->stats().faults - before;
  return out;
}

bool DeamoEngine::member(Key q) {
  quiesce();
  std::uint64_t before = pager_->stats().faults;
  bool out = query_member(tree_, q);
  last_query_events_ = pager_->stats().faults - before;
  return out;
}

std::uint64_t DeamoEngine::digest() {
  quiesce();
  return tree_digest(tree_);
}

AuditReport DeamoEngine::audit(bool check_aux, const OracleSet* oracle) {
  quiesce();
  AuditOptions opt;
  opt.leaf_lower = leaf_lower_;
  opt.check_aux = check_aux;
  opt.check_content = oracle != nullptr;
  opt.oracle = oracle;
  return audit_tree(tree_, opt);
}

std::vector<std::uint8_t> DeamoEngine::serialize() {
  quiesce();
  return serialize_tree(tree_);
}

}  // namespace bepsilon
