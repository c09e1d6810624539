#include "bepsilon/baseline.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

#include "bepsilon/buffer_ops.hpp"

namespace bepsilon {

namespace {
constexpr Key kKeyMax = std::numeric_limits<Key>::max();

std::size_t route(const BaselineInternal& n, Key k) {
  return static_cast<std::size_t>(
      std::upper_bound(n.pivots.begin(), n.pivots.end(), k) - n.pivots.begin());
}
}  // namespace

BaselineEngine::BaselineEngine(const Params& params, std::uint32_t cache_blocks)
    : params_(params) {
  PagerConfig pc;
  pc.cache_blocks =
      cache_blocks ? cache_blocks : params.default_cache_blocks();
  pager_ = std::make_unique<Pager>(pc);
  { auto sb = pager_->alloc<Superblock>(); }

  fanout_max_ = static_cast<std::uint32_t>(std::max<std::uint64_t>(
      4, static_cast<std::uint64_t>(
             std::floor(std::pow(double(params.block_size), params.epsilon) + 1e-9))));
  fanout_min_ = std::max<std::uint32_t>(2, fanout_max_ / 2);
  leaf_min_ = static_cast<std::uint32_t>(params.block_size / 4);

  BlockId leaf;
  {
    auto l = pager_->alloc<BaselineLeaf>();
    leaf = l.id();
  }
  {
    auto r = pager_->alloc<BaselineInternal>();
    r->height = 1;
    r->children = {leaf};
    root_ = r.id();
  }
  pager_->pin(root_);
}

BaselineEngine::~BaselineEngine() = default;

void BaselineEngine::apply(Update u) {
  std::uint64_t before = pager_->stats().faults;
  {
    auto root = pager_->write<BaselineInternal>(root_);
    merge_annihilate(root->buffer, std::span<const Update>(&u, 1));
  }
  n_live_ += u.kind == UpdateKind::Insert ? 1 : std::uint64_t(-1);
  bool overfull;
  {
    auto root = pager_->read<BaselineInternal>(root_);
    overfull = root->buffer.size() > params_.block_size;
  }
  if (overfull) {
    flush_overfull(root_, 0, kKeyMax);
    fix_root();
  }
  std::uint64_t d = pager_->stats().faults - before;
  if (d > max_events_per_update_) max_events_per_update_ = d;
}

// While this node's buffer exceeds B: move everything routed to the child
// receiving the most updates, then repair that child (which may cascade).
void BaselineEngine::flush_overfull(BlockId id, Key lo, Key hi) {
  while (true) {
    std::size_t idx = 0;
    std::vector<Update> moved;
    bool child_is_leaf;
    BlockId child;
    Key clo, chi;
    {
      auto node = pager_->write<BaselineInternal>(id);
      if (node->buffer.size() <= params_.block_size) break;
      // Max child by routed count, ties to the smallest index.
      std::size_t best = 0, best_count = 0, i = 0;
      for (std::size_t c = 0; c < node->children.size(); ++c) {
        Key top = c == node->pivots.size() ? hi : node->pivots[c] - 1;
        std::size_t j = i;
        while (j < node->buffer.size() && node->buffer[j].key <= top) ++j;
        if (j - i > best_count) {
          best_count = j - i;
          best = c;
        }
        i = j;
      }
      integrity_check(best_count > 0, "baseline: overfull node routes nothing");
      idx = best;
      clo = idx == 0 ? lo : node->pivots[idx - 1];
      chi = idx == node->pivots.size() ? hi : node->pivots[idx] - 1;
      auto first = std::lower_bound(
          node->buffer.begin(), node->buffer.end(), clo,
          [](const Update& u, Key v) { return u.key < v; });
      moved.assign(first, first + static_cast<std::ptrdiff_t>(best_count));
      node->buffer.erase(first, first + static_cast<std::ptrdiff_t>(best_count));
      child = node->children[idx];
      child_is_leaf = node->height == 1;
    }
    ++stats_.flushes;

    if (child_is_leaf) {
      {
        auto leaf = pager_->write<BaselineLeaf>(child);
        auto unmatched = apply_to_keys(leaf->keys, moved);
        integrity_check(unmatched.empty(),
                        "baseline: delete reached a leaf without its insert");
      }
    } else {
      bool cascade;
      {
        auto cn = pager_->write<BaselineInternal>(child);
        merge_annihilate(cn->buffer, moved);
        cascade = cn->buffer.size() > params_.block_size;
      }
      if (cascade) flush_overfull(child, clo, chi);
    }
    fix_child(id, idx, lo, hi);
  }
}

// Restore the child at idx to its size band, splitting or merging within
// this parent. Merges concatenate buffers and may cascade further flushes.
void BaselineEngine::fix_child(BlockId parent_id, std::size_t idx, Key lo, Key hi) {
  bool is_leaf;
  {
    auto parent = pager_->read<BaselineInternal>(parent_id);
    is_leaf = parent->height == 1;
  }
  if (is_leaf) {
    BlockId child;
    std::size_t n;
    {
      auto parent = pager_->read<BaselineInternal>(parent_id);
      child = parent->children[idx];
    }
    {
      auto leaf = pager_->read<BaselineLeaf>(child);
      n = leaf->keys.size();
    }
    if (n > params_.block_size) {
      // Split at the median key.
      BlockId right;
      Key sep;
      {
        auto leaf = pager_->write<BaselineLeaf>(child);
        std::size_t half = leaf->keys.size() / 2;
        sep = leaf->keys[half];
        auto r = pager_->alloc<BaselineLeaf>();
        r->keys.assign(leaf->keys.begin() + static_cast<std::ptrdiff_t>(half),
                       leaf->keys.end());
        leaf->keys.resize(half);
        right = r.id();
      }
      {
        auto parent = pager_->write<BaselineInternal>(parent_id);
        auto at = static_cast<std::ptrdiff_t>(idx);
        parent->children.insert(parent->children.begin() + at + 1, right);
        parent->pivots.insert(parent->pivots.begin() + at, sep);
      }
      ++leaf_count_;
      ++stats_.leaf_splits;
    } else if (n < leaf_min_ && leaf_count_ > 1) {
      std::size_t sibs;
      {
        auto parent = pager_->read<BaselineInternal>(parent_id);
        sibs = parent->children.size();
      }
      if (sibs < 2) return;  // the parent repair will take it from here
      std::size_t left_idx = idx > 0 ? idx - 1 : idx;
      BlockId left, right;
      {
        auto parent = pager_->write<BaselineInternal>(parent_id);
        left = parent->children[left_idx];
        right = parent->children[left_idx + 1];
        parent->children.erase(parent->children.begin() +
                               static_cast<std::ptrdiff_t>(left_idx) + 1);
        parent->pivots.erase(parent->pivots.begin() +
                             static_cast<std::ptrdiff_t>(left_idx));
      }
      Key resep = 0;
      bool resplit = false;
      BlockId fresh = 0;
      {
        auto ln = pager_->write<BaselineLeaf>(left);
        auto rn = pager_->write<BaselineLeaf>(right);
        ln->keys.insert(ln->keys.end(), rn->keys.begin(), rn->keys.end());
        rn->keys.clear();
        if (ln->keys.size() > params_.block_size) {
          std::size_t half = ln->keys.size() / 2;
          resep = ln->keys[half];
          auto r2 = pager_->alloc<BaselineLeaf>();
          r2->keys.assign(ln->keys.begin() + static_cast<std::ptrdiff_t>(half),
                          ln->keys.end());
          ln->keys.resize(half);
          fresh = r2.id();
          resplit = true;
        }
      }
      pager_->free_block(right);
      --leaf_count_;
      ++stats_.leaf_merges;
      if (resplit) {
        auto parent = pager_->write<BaselineInternal>(parent_id);
        auto at = static_cast<std::ptrdiff_t>(left_idx);
        parent->children.insert(parent->children.begin() + at + 1, fresh);
        parent->pivots.insert(parent->pivots.begin() + at, resep);
        ++leaf_count_;
        ++stats_.leaf_splits;
      }
    }
    return;
  }

  // Internal child: repair fanout.
  BlockId child;
  std::size_t nchil;
  {
    auto parent = pager_->read<BaselineInternal>(parent_id);
    child = parent->children[idx];
  }
  {
    auto cn = pager_->read<BaselineInternal>(child);
    nchil = cn->children.size();
  }
  if (nchil > fanout_max_) {
    BlockId right;
    Key promoted;
    {
      auto cn = pager_->write<BaselineInternal>(child);
      std::size_t mid = cn->children.size() / 2;
      promoted = cn->pivots[mid - 1];
      auto r = pager_->alloc<BaselineInternal>();
      r->height = cn->height;
      r->children.assign(cn->children.begin() + static_cast<std::ptrdiff_t>(mid),
                         cn->children.end());
      r->pivots.assign(cn->pivots.begin() + static_cast<std::ptrdiff_t>(mid),
                       cn->pivots.end());
      r->buffer = split_at(cn->buffer, promoted);
      cn->children.resize(mid);
      cn->pivots.resize(mid - 1);
      right = r.id();
    }
    {
      auto parent = pager_->write<BaselineInternal>(parent_id);
      auto at = static_cast<std::ptrdiff_t>(idx);
      parent->children.insert(parent->children.begin() + at + 1, right);
      parent->pivots.insert(parent->pivots.begin() + at, promoted);
    }
    ++stats_.internal_splits;
  } else if (nchil < fanout_min_) {
    std::size_t sibs;
    {
      auto parent = pager_->read<BaselineInternal>(parent_id);
      sibs = parent->children.size();
    }
    if (sibs < 2) return;
    std::size_t left_idx = idx > 0 ? idx - 1 : idx;
    BlockId left, right;
    Key sep, clo, chi;
    {
      auto parent = pager_->write<BaselineInternal>(parent_id);
      left = parent->children[left_idx];
      right = parent->children[left_idx + 1];
      sep = parent->pivots[left_idx];
      clo = left_idx == 0 ? lo : parent->pivots[left_idx - 1];
      chi = left_idx + 1 >= parent->pivots.size()
                ? hi
                : parent->pivots[left_idx + 1] - 1;
      parent->children.erase(parent->children.begin() +
                             static_cast<std::ptrdiff_t>(left_idx) + 1);
      parent->pivots.erase(parent->pivots.begin() +
                           static_cast<std::ptrdiff_t>(left_idx));
    }
    bool overflow;
    {
      auto ln = pager_->write<BaselineInternal>(left);
      auto rn = pager_->write<BaselineInternal>(right);
      ln->pivots.push_back(sep);
      ln->pivots.insert(ln->pivots.end(), rn->pivots.begin(), rn->pivots.end());
      ln->children.insert(ln->children.end(), rn->children.begin(),
                          rn->children.end());
      std::size_t before = ln->buffer.size() + rn->buffer.size();
      merge_annihilate(ln->buffer, rn->buffer);
      integrity_check(ln->buffer.size() == before,
                      "baseline: sibling buffers overlapped");
      rn->children.clear();
      overflow = ln->buffer.size() > params_.block_size;
    }
    pager_->free_block(right);
    ++stats_.internal_merges;
    // The merged buffer may overflow; this is the uncontrolled cascade.
    if (overflow) flush_overfull(left, clo, chi);
    fix_child(parent_id, left_idx, lo, hi);
  }
}

void BaselineEngine::fix_root() {
  while (true) {
    std::size_t nchil;
    std::uint32_t h;
    {
      auto root = pager_->read<BaselineInternal>(root_);
      nchil = root->children.size();
      h = root->height;
    }
    if (nchil > fanout_max_) {
      BlockId right;
      Key promoted;
      {
        auto rn = pager_->write<BaselineInternal>(root_);
        std::size_t mid = rn->children.size() / 2;
        promoted = rn->pivots[mid - 1];
        auto r = pager_->alloc<BaselineInternal>();
        r->height = rn->height;
        r->children.assign(rn->children.begin() + static_cast<std::ptrdiff_t>(mid),
                           rn->children.end());
        r->pivots.assign(rn->pivots.begin() + static_cast<std::ptrdiff_t>(mid),
                         rn->pivots.end());
        r->buffer = split_at(rn->buffer, promoted);
        rn->children.resize(mid);
        rn->pivots.resize(mid - 1);
        right = r.id();
      }
      BlockId old = root_;
      {
        auto fresh = pager_->alloc<BaselineInternal>();
        fresh->height = h + 1;
        fresh->children = {old, right};
        fresh->pivots = {promoted};
        pager_->unpin(root_);
        root_ = fresh.id();
      }
      pager_->pin(root_);
      ++height_;
      ++stats_.internal_splits;
    } else if (nchil == 1 && h > 1) {
      BlockId child;
      {
        auto root = pager_->write<BaselineInternal>(root_);
        auto cn = pager_->write<BaselineInternal>(root->children[0]);
        merge_annihilate(cn->buffer, root->buffer);
        root->buffer.clear();
        root->children.clear();
        child = cn.id();
      }
      pager_->unpin(root_);
      pager_->free_block(root_);
      root_ = child;
      pager_->pin(root_);
      --height_;
      bool overflow;
      {
        auto cn = pager_->read<BaselineInternal>(root_);
        overflow = cn->buffer.size() > params_.block_size;
      }
      if (overflow) flush_overfull(root_, 0, kKeyMax);
    } else {
      break;
    }
  }
}

// Push-down descent: move the q-routed updates ahead of the walk, repair as
// needed, answer from the leaf; fall back into the left subtree when the
// leaf holds nothing at or below q.
std::optional<Key> BaselineEngine::pred_descend(BlockId id, std::uint32_t height,
                                                Key lo, Key hi, Key q) {
  std::size_t idx;
  BlockId child;
  Key clo, chi;
  std::optional<Key> fallback_hi{};
  {
    std::vector<Update> moved;
    bool child_is_leaf;
    {
      auto node = pager_->write<BaselineInternal>(id);
      idx = route(*node, q);
      child = node->children[idx];
      child_is_leaf = node->height == 1;
      clo = idx == 0 ? lo : node->pivots[idx - 1];
      chi = idx == node->pivots.size() ? hi : node->pivots[idx] - 1;
      auto first = std::lower_bound(
          node->buffer.begin(), node->buffer.end(), clo,
          [](const Update& u, Key v) { return u.key < v; });
      auto last = std::upper_bound(
          node->buffer.begin(), node->buffer.end(), chi,
          [](Key v, const Update& u) { return v < u.key; });
      moved.assign(first, last);
      node->buffer.erase(first, last);
      if (idx > 0) fallback_hi = node->pivots[idx - 1] - 1;
    }
    if (child_is_leaf) {
      auto leaf = pager_->write<BaselineLeaf>(child);
      auto unmatched = apply_to_keys(leaf->keys, moved);
      integrity_check(unmatched.empty(),
                      "baseline: query push-down stranded a delete");
    } else {
      auto cn = pager_->write<BaselineInternal>(child);
      merge_annihilate(cn->buffer, moved);
    }
  }
  bool overflow = false;
  if (height > 1) {
    auto cn = pager_->read<BaselineInternal>(child);
    overflow = cn->buffer.size() > params_.block_size;
  }
  if (overflow) flush_overfull(child, clo, chi);
  fix_child(id, idx, lo, hi);

  // Relocate the child: repairs may have replaced or resized it.
  {
    auto node = pager_->read<BaselineInternal>(id);
    idx = route(*node, q);
    child = node->children[idx];
    clo = idx == 0 ? lo : node->pivots[idx - 1];
    chi = idx == node->pivots.size() ? hi : node->pivots[idx] - 1;
    if (idx > 0)
      fallback_hi = node->pivots[idx - 1] - 1;
    else if (!fallback_hi)
      fallback_hi.reset();
  }

  std::optional<Key> got;
  if (height == 1) {
    auto leaf = pager_->read<BaselineLeaf>(child);
    auto it = std::upper_bound(leaf->keys.begin(), leaf->keys.end(), q);
    if (it != leaf->keys.begin()) got = *std::prev(it);
  } else {
    got = pred_descend(child, height - 1, clo, chi, q);
  }
  if (got) return got;
  if (fallback_hi) return pred_descend(root_, height_, 0, kKeyMax, *fallback_hi);
  return std::nullopt;
}

std::optional<Key> BaselineEngine::predecessor(Key q) {
  auto out = pred_descend(root_, height_, 0, kKeyMax, q);
  fix_root();
  return out;
}

bool BaselineEngine::member(Key q) {
  auto p = predecessor(q);
  return p && *p == q;
}

namespace {

void baseline_walk(const Pager& pager, BlockId id, std::uint32_t height, Key a,
                   Key b, std::map<Key, std::int64_t>& acc) {
  if (height == 0) {
    auto leaf = pager.peek<BaselineLeaf>(id);
    for (Key k : leaf->keys)
      if (k >= a && k <= b) acc[k] += 1;
    return;
  }
  auto node = pager.peek<BaselineInternal>(id);
  for (const auto& u : node->buffer)
    if (u.key >= a && u.key <= b)
      acc[u.key] += u.kind == UpdateKind::Insert ? 1 : -1;
  std::vector<BlockId> kids = node->children;
  std::vector<Key> pivots = node->pivots;
  node.reset();
  for (std::size_t i = 0; i < kids.size(); ++i) {
    Key clo = i == 0 ? 0 : pivots[i - 1];
    Key chi = i == pivots.size() ? kKeyMax : pivots[i] - 1;
    if (chi < a || clo > b) continue;
    baseline_walk(pager, kids[i], height - 1, a, b, acc);
  }
}

}  // namespace

std::vector<Key> BaselineEngine::range(Key a, Key b) {
  contract_check(a <= b, "range: a must not exceed b");
  // Counted reads over the covering nodes, collected in memory.
  std::map<Key, std::int64_t> acc;
  struct Frame {
    BlockId id;
    std::uint32_t height;
    Key lo, hi;
  };
  std::vector<Frame> stack{{root_, height_, 0, kKeyMax}};
  while (!stack.empty()) {
    Frame f = stack.back();
    stack.pop_back();
    if (f.height == 0) {
      auto leaf = pager_->read<BaselineLeaf>(f.id);
      for (Key k : leaf->keys)
        if (k >= a && k <= b) acc[k] += 1;
      continue;
    }
    auto node = pager_->read<BaselineInternal>(f.id);
    for (const auto& u : node->buffer)
      if (u.key >= a && u.key <= b)
        acc[u.key] += u.kind == UpdateKind::Insert ? 1 : -1;
    for (std::size_t i = 0; i < node->children.size(); ++i) {
      Key clo = i == 0 ? f.lo : node->pivots[i - 1];
      Key chi = i == node->pivots.size() ? f.hi : node->pivots[i] - 1;
      if (chi < a || clo > b) continue;
      stack.push_back({node->children[i], f.height - 1, clo, chi});
    }
  }
  std::vector<Key> out;
  for (auto& [k, c] : acc) {
    integrity_check(c == 0 || c == 1, "baseline range: signed count");
    if (c == 1) out.push_back(k);
  }
  return out;
}

std::vector<Key> BaselineEngine::contents() const {
  std::map<Key, std::int64_t> acc;
  baseline_walk(*pager_, root_, height_, 0, kKeyMax, acc);
  std::vector<Key> out;
  for (auto& [k, c] : acc) {
    integrity_check(c == 0 || c == 1, "baseline contents: signed count");
    if (c == 1) out.push_back(k);
  }
  return out;
}

std::uint64_t BaselineEngine::digest() const {
  std::vector<Key> keys = contents();
  Fnv1a h;
  h.feed(keys.size());
  for (Key k : keys) h.feed(k);
  return h.value();
}

}  // namespace bepsilon
