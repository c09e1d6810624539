#include "bepsilon/pager.hpp"

#include <cstring>

namespace bepsilon {

Pager::Pager(PagerConfig cfg) : cfg_(std::move(cfg)) {
  if (cfg_.cache_blocks < 2)
    throw ParamError("pager: cache must hold at least 2 blocks");
  if (cfg_.file_path) {
    if (cfg_.page_size == 0 || !cfg_.decoder)
      throw ParamError("pager: file mode needs page_size and a decoder");
    file_ = std::fopen(cfg_.file_path->c_str(), "w+b");
    if (!file_) throw Error("pager: cannot open " + *cfg_.file_path);
  }
}

Pager::~Pager() {
  if (file_) std::fclose(file_);
}

bool Pager::exists(BlockId id) const {
  return cache_.count(id) != 0 || on_store_.count(id) != 0;
}

void Pager::free_block(BlockId id) {
  auto it = cache_.find(id);
  if (it != cache_.end()) {
    Entry& e = it->second;
    if (e.pin_count > 0) throw StateError("pager: freeing pinned block");
    if (e.ref_count > 0) throw StateError("pager: freeing referenced block");
    lru_.erase(e.stamp);
    cache_.erase(it);
    --live_count_;
    return;
  }
  auto st = on_store_.find(id);
  if (st == on_store_.end())
    throw PagerFaultError("pager: double free / unknown block " + std::to_string(id));
  on_store_.erase(st);
  mem_store_.erase(id);
  --live_count_;
}

Pager::Entry* Pager::find_entry(BlockId id) {
  auto it = cache_.find(id);
  return it == cache_.end() ? nullptr : &it->second;
}
const Pager::Entry* Pager::find_entry(BlockId id) const {
  auto it = cache_.find(id);
  return it == cache_.end() ? nullptr : &it->second;
}

void Pager::touch(Entry& e) {
  if (e.stamp) lru_.erase(e.stamp);
  e.stamp = ++clock_;
  lru_.emplace(e.stamp, e.id);
}

void Pager::insert_entry(BlockId id, std::unique_ptr<PageBody> body) {
  make_room();
  Entry e;
  e.id = id;
  e.body = std::move(body);
  auto [it, ok] = cache_.emplace(id, std::move(e));
  integrity_check(ok, "duplicate cache entry");
  ++live_count_;
  touch(it->second);
}

void Pager::make_room() {
  while (cache_.size() >= cfg_.cache_blocks) {
    // LRU over unpinned, unreferenced blocks.
    Entry* victim = nullptr;
    for (auto& [stamp, id] : lru_) {
      Entry& e = cache_.at(id);
      if (e.pin_count == 0 && e.ref_count == 0) {
        victim = &e;
        break;
      }
    }
    if (!victim)
      throw PinExhaustedError("pager: cache full of pinned/held blocks");
    evict(*victim);
  }
}

void Pager::evict(Entry& e) {
  if (e.dirty) write_back(e);
  store_put(e.id, std::move(e.body));
  lru_.erase(e.stamp);
  cache_.erase(e.id);
}

void Pager::write_back(Entry& e) {
  ++stats_.writes;
  if (file_) file_write(e.id, *e.body);
  e.dirty = false;
}

void Pager::store_put(BlockId id, std::unique_ptr<PageBody> body) {
  on_store_[id] = true;
  if (!file_) mem_store_[id] = std::move(body);
  // file mode: bytes were written by write_back (or are already current).
}

std::unique_ptr<PageBody> Pager::load_from_store(BlockId id) {
  auto it = on_store_.find(id);
  if (it == on_store_.end())
    throw PagerFaultError("pager: access to unallocated block " + std::to_string(id));
  on_store_.erase(it);
  if (file_) return file_read(id);
  auto ms = mem_store_.find(id);
  integrity_check(ms != mem_store_.end(), "store object missing");
  auto body = std::move(ms->second);
  mem_store_.erase(ms);
  return body;
}

Pager::Entry* Pager::access(BlockId id, bool for_write) {
  Entry* e = find_entry(id);
  if (!e) {
    auto body = load_from_store(id);  // throws on unallocated
    ++stats_.reads;
    ++stats_.faults;
    --live_count_;  // insert_entry re-counts it
    insert_entry(id, std::move(body));
    e = find_entry(id);
  } else {
    touch(*e);
  }
  if (for_write) e->dirty = true;
  return e;
}

std::shared_ptr<const PageBody> Pager::peek_body(BlockId id) const {
  const Entry* e = find_entry(id);
  if (e) {
    // Aliasing share: the cache owns the object; callers must not hold the
    // result across a counted access.
    return std::shared_ptr<const PageBody>(std::shared_ptr<const PageBody>{},
                                           e->body.get());
  }
  auto it = on_store_.find(id);
  if (it == on_store_.end())
    throw PagerFaultError("pager: peek at unallocated block " + std::to_string(id));
  if (file_) return std::shared_ptr<const PageBody>(file_read(id).release());
  auto ms = mem_store_.find(id);
  integrity_check(ms != mem_store_.end(), "store object missing");
  return std::shared_ptr<const PageBody>(std::shared_ptr<const PageBody>{},
                                         ms->second.get());
}

void Pager::pin(BlockId id) {
  if (pinned_count_ + 1 >= cfg_.cache_blocks)
    throw PinExhaustedError("pager: pin capacity exhausted");
  Entry* e = access(id, false);  // pinning a cold block faults it in
  if (e->pin_count == 0) ++pinned_count_;
  ++e->pin_count;
}

void Pager::unpin(BlockId id) {
  Entry* e = find_entry(id);
  if (!e || e->pin_count == 0)
    throw StateError("pager: unpin of non-pinned block " + std::to_string(id));
  if (--e->pin_count == 0) --pinned_count_;
}

bool Pager::is_pinned(BlockId id) const {
  const Entry* e = find_entry(id);
  return e && e->pin_count > 0;
}

void Pager::add_ref(BlockId id) {
  Entry* e = find_entry(id);
  integrity_check(e != nullptr, "ref to non-resident block");
  ++e->ref_count;
}

void Pager::drop_ref(BlockId id) {
  Entry* e = find_entry(id);
  if (e && e->ref_count > 0) --e->ref_count;
}

void Pager::flush_all() {
  // Deterministic order: by block id.
  std::map<BlockId, Entry*> order;
  for (auto& [id, e] : cache_) order[id] = &e;
  for (auto& [id, e] : order)
    if (e->dirty) write_back(*e);
}

void Pager::drop_cache() {
  flush_all();
  std::vector<BlockId> victims;
  for (auto& [id, e] : cache_)
    if (e.pin_count == 0 && e.ref_count == 0) victims.push_back(id);
  for (BlockId id : victims) {
    Entry& e = cache_.at(id);
    store_put(e.id, std::move(e.body));
    lru_.erase(e.stamp);
    cache_.erase(id);
  }
}

void Pager::file_write(BlockId id, const PageBody& body) {
  std::vector<std::uint8_t> buf;
  buf.push_back(body.type_tag());
  body.encode(buf);
  if (buf.size() > cfg_.page_size)
    throw IntegrityError("pager: page " + std::to_string(id) + " encodes to " +
                         std::to_string(buf.size()) + " bytes > page_size");
  buf.resize(cfg_.page_size, 0);
  if (std::fseek(file_, static_cast<long>(id * cfg_.page_size), SEEK_SET) != 0 ||
      std::fwrite(buf.data(), 1, buf.size(), file_) != buf.size())
    throw Error("pager: file write failed");
}

std::unique_ptr<PageBody> Pager::file_read(BlockId id) const {
  std::vector<std::uint8_t> buf(cfg_.page_size);
  if (std::fseek(file_, static_cast<long>(id * cfg_.page_size), SEEK_SET) != 0 ||
      std::fread(buf.data(), 1, buf.size(), file_) != buf.size())
    throw Error("pager: file read failed");
  return cfg_.decoder(buf.data(), buf.size());  // leading byte is the type tag
}

}  // namespace bepsilon
