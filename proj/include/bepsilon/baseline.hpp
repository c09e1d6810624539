#pragma once

#include <memory>
#include <optional>

#include "bepsilon/oracle.hpp"
#include "bepsilon/pages.hpp"
#include "bepsilon/params.hpp"

namespace bepsilon {

struct BaselineStats {
  std::uint64_t flushes = 0;
  std::uint64_t leaf_splits = 0;
  std::uint64_t leaf_merges = 0;
  std::uint64_t internal_splits = 0;
  std::uint64_t internal_merges = 0;
};

// The classic buffered tree used as the measurement baseline: fanout around
// B^epsilon, one size-B buffer per internal node, flush-all-to-max-child on
// overflow, threshold splits/merges, and query-path push-down. All work is
// synchronous, so a single update can cascade; that spike is the point.
class BaselineEngine {
 public:
  explicit BaselineEngine(const Params& params, std::uint32_t cache_blocks = 0);
  ~BaselineEngine();

  void insert(Key k) { apply(make_insert(k)); }
  void erase(Key k) { apply(make_delete(k)); }

  std::optional<Key> predecessor(Key q);
  std::vector<Key> range(Key a, Key b);
  bool member(Key q);

  std::uint64_t digest() const;
  std::vector<Key> contents() const;

  const IoStats& io() const { return pager_->stats(); }
  Pager& pager() { return *pager_; }
  const BaselineStats& stats() const { return stats_; }
  std::uint64_t n_live() const { return n_live_; }
  std::uint64_t max_events_per_update() const { return max_events_per_update_; }

  std::uint32_t fanout_max() const { return fanout_max_; }
  std::uint64_t height() const { return height_; }

 private:
  void apply(Update u);
  void flush_overfull(BlockId id, Key lo, Key hi);
  void fix_child(BlockId parent, std::size_t idx, Key lo, Key hi);
  void fix_root();
  std::optional<Key> pred_descend(BlockId id, std::uint32_t height, Key lo, Key hi,
                                  Key q);

  std::unique_ptr<Pager> pager_;
  Params params_;
  std::uint32_t fanout_max_ = 0;
  std::uint32_t fanout_min_ = 0;
  std::uint32_t leaf_min_ = 0;

  BlockId root_ = 0;
  std::uint32_t height_ = 1;
  std::uint64_t leaf_count_ = 1;
  std::uint64_t n_live_ = 0;
  std::uint64_t max_events_per_update_ = 0;
  BaselineStats stats_;
};

}  // namespace bepsilon
