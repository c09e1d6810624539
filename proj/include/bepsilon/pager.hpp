#pragma once

#include <cstdio>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "bepsilon/common.hpp"

namespace bepsilon {

// Base class for everything stored in a block. encode() produces the
// canonical little-endian byte form used by file-backed mode, content
// digests, and the query-purity check.
struct PageBody {
  virtual ~PageBody() = default;
  virtual std::uint8_t type_tag() const = 0;
  virtual void encode(std::vector<std::uint8_t>& out) const = 0;
};

using PageDecoder =
    std::function<std::unique_ptr<PageBody>(const std::uint8_t* data, std::size_t len)>;

struct PagerConfig {
  std::uint32_t cache_blocks = 8;
  // When set, pages live in this file at offset id*page_size; otherwise the
  // backing store keeps page objects in memory and no codec runs.
  std::optional<std::string> file_path{};
  std::uint32_t page_size = 0;  // required in file mode
  PageDecoder decoder{};        // required in file mode
};

struct IoStats {
  std::uint64_t reads = 0;   // block reads into cache (misses)
  std::uint64_t writes = 0;  // dirty write-backs and explicit flushes
  // Faulting accesses: cache misses, counted once even when the miss also
  // forces a dirty eviction. The deamortization budget is metered on these.
  std::uint64_t faults = 0;
  std::uint64_t total() const { return reads + writes; }
};

class Pager;

// Movable guard over a fetched page: keeps the block resident while alive.
template <typename T>
class PageRef {
 public:
  PageRef() = default;
  PageRef(Pager* pager, BlockId id, T* body);
  PageRef(PageRef&& o) noexcept : pager_(o.pager_), id_(o.id_), body_(o.body_) {
    o.pager_ = nullptr;
  }
  PageRef& operator=(PageRef&& o) noexcept;
  PageRef(const PageRef&) = delete;
  PageRef& operator=(const PageRef&) = delete;
  ~PageRef() { release(); }

  T* operator->() const { return body_; }
  T& operator*() const { return *body_; }
  T* get() const { return body_; }
  BlockId id() const { return id_; }
  explicit operator bool() const { return body_ != nullptr; }
  void release();

 private:
  Pager* pager_ = nullptr;
  BlockId id_ = 0;
  T* body_ = nullptr;
};

// Simulated external memory in the two-level model: block-addressed storage
// behind a bounded LRU cache with pinning. Every structural module performs
// its block accesses through one of these, and IoStats is the sole source of
// I/O counts. Single-writer; no internal locking.
class Pager {
 public:
  explicit Pager(PagerConfig cfg);
  ~Pager();

  Pager(const Pager&) = delete;
  Pager& operator=(const Pager&) = delete;

  // Fresh id, never reused. The new page enters the cache dirty; it is
  // charged as a write when first evicted or flushed.
  template <typename T, typename... Args>
  PageRef<T> alloc(Args&&... args) {
    BlockId id = next_id_++;
    insert_entry(id, std::make_unique<T>(std::forward<Args>(args)...));
    auto* e = find_entry(id);
    e->dirty = true;
    touch(*e);
    return PageRef<T>(this, id, static_cast<T*>(e->body.get()));
  }

  void free_block(BlockId id);

  template <typename T>
  PageRef<T> fetch(BlockId id, bool for_write) {
    auto* e = access(id, for_write);
    T* t = dynamic_cast<T*>(e->body.get());
    integrity_check(t != nullptr, "page type mismatch on block " + std::to_string(id));
    return PageRef<T>(this, id, t);
  }
  template <typename T>
  PageRef<T> read(BlockId id) {
    return fetch<T>(id, false);
  }
  template <typename T>
  PageRef<T> write(BlockId id) {
    return fetch<T>(id, true);
  }

  // Uncounted, cache-neutral inspection used by auditors and digests; it
  // never disturbs LRU order, so audit cadence cannot change an I/O trace.
  template <typename T>
  std::shared_ptr<const T> peek(BlockId id) const {
    auto body = peek_body(id);
    auto t = std::dynamic_pointer_cast<const T>(body);
    integrity_check(t != nullptr, "page type mismatch on block " + std::to_string(id));
    return t;
  }
  std::shared_ptr<const PageBody> peek_body(BlockId id) const;

  void pin(BlockId id);
  void unpin(BlockId id);
  bool is_pinned(BlockId id) const;

  // Write back all dirty blocks (counted as writes), keep them cached.
  void flush_all();
  // flush_all, then evict every unpinned, unreferenced block.
  void drop_cache();

  // One counted read that touches no block: used to charge work performed on
  // snapshots (rebuild scan rounds) at the stated block granularity.
  void charge_synthetic_read() {
    ++stats_.reads;
    ++stats_.faults;
  }

  const IoStats& stats() const { return stats_; }
  bool exists(BlockId id) const;
  std::uint64_t live_blocks() const { return live_count_; }
  std::uint32_t cache_capacity() const { return cfg_.cache_blocks; }
  std::uint64_t cached_blocks() const { return cache_.size(); }

 private:
  template <typename>
  friend class PageRef;

  struct Entry {
    BlockId id = 0;
    std::unique_ptr<PageBody> body;
    bool dirty = false;
    std::uint32_t pin_count = 0;  // explicit pins
    std::uint32_t ref_count = 0;  // live PageRef guards
    std::uint64_t stamp = 0;      // LRU recency
  };

  Entry* access(BlockId id, bool for_write);
  Entry* find_entry(BlockId id);
  const Entry* find_entry(BlockId id) const;
  void insert_entry(BlockId id, std::unique_ptr<PageBody> body);
  void touch(Entry& e);
  void make_room();
  void evict(Entry& e);
  void write_back(Entry& e);
  std::unique_ptr<PageBody> load_from_store(BlockId id);
  void store_put(BlockId id, std::unique_ptr<PageBody> body);
  void file_write(BlockId id, const PageBody& body);
  std::unique_ptr<PageBody> file_read(BlockId id) const;

  void add_ref(BlockId id);
  void drop_ref(BlockId id);

  PagerConfig cfg_;
  IoStats stats_;
  BlockId next_id_ = kSuperblockId;  // id 0 handed out first, to the superblock
  std::uint64_t clock_ = 0;
  std::uint64_t live_count_ = 0;
  std::uint32_t pinned_count_ = 0;

  std::unordered_map<BlockId, Entry> cache_;
  std::map<std::uint64_t, BlockId> lru_;  // stamp -> id, deterministic order
  std::unordered_map<BlockId, std::unique_ptr<PageBody>> mem_store_;
  // Allocation state for blocks not currently cached; in file mode the
  // bytes live in the file but liveness is tracked here.
  std::unordered_map<BlockId, bool> on_store_;
  std::FILE* file_ = nullptr;
};

template <typename T>
PageRef<T>::PageRef(Pager* pager, BlockId id, T* body)
    : pager_(pager), id_(id), body_(body) {
  if (pager_) pager_->add_ref(id_);
}

template <typename T>
PageRef<T>& PageRef<T>::operator=(PageRef&& o) noexcept {
  if (this != &o) {
    release();
    pager_ = o.pager_;
    id_ = o.id_;
    body_ = o.body_;
    o.pager_ = nullptr;
  }
  return *this;
}

template <typename T>
void PageRef<T>::release() {
  if (pager_) {
    pager_->drop_ref(id_);
    pager_ = nullptr;
    body_ = nullptr;
  }
}

}  // namespace bepsilon
