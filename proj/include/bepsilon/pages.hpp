#pragma once

#include <memory>
#include <vector>

#include "bepsilon/common.hpp"
#include "bepsilon/pager.hpp"

namespace bepsilon {

enum PageTag : std::uint8_t {
  kTagSuperblock = 1,
  kTagInternal = 2,
  kTagLeafRoot = 3,
  kTagMicroLeaf = 4,
  kTagUpdateRun = 5,
  kTagBaselineInternal = 6,
  kTagBaselineLeaf = 7,
};

// Page 0: identifies the store and anchors the live tree.
struct Superblock : PageBody {
  std::uint64_t magic = 0x62657073746f7265ull;  // "bepstore"
  std::uint64_t block_size = 0;
  double epsilon = 0.0;
  std::uint64_t n_cap = 0;
  BlockId root = 0;

  std::uint8_t type_tag() const override { return kTagSuperblock; }
  void encode(std::vector<std::uint8_t>& out) const override;
};

// Internal node: pivots route keys (left-closed: child i covers
// [pivots[i-1], pivots[i])), the buffer holds updates destined below, and
// child_max/child_min cache each child subtree's extreme leaf net sizes so
// a descent can find the globally largest/smallest leaf.
struct InternalNode : PageBody {
  std::uint32_t height = 1;  // leaves sit at height 0
  std::vector<Key> pivots;
  std::vector<BlockId> children;
  std::vector<std::uint64_t> child_max;
  std::vector<std::uint64_t> child_min;
  std::vector<Update> buffer;  // key-sorted, unique keys

  std::uint8_t type_tag() const override { return kTagInternal; }
  void encode(std::vector<std::uint8_t>& out) const override;

  std::uint64_t subtree_max() const;
  std::uint64_t subtree_min() const;
};

// One micro-leaf is a run of these pages, each at most B sorted keys.
struct MicroLeafPage : PageBody {
  std::vector<Key> keys;

  std::uint8_t type_tag() const override { return kTagMicroLeaf; }
  void encode(std::vector<std::uint8_t>& out) const override;
};

// A key-sorted update run segment; the micro-root buffer is a sequence of
// these, each at most B updates.
struct UpdateRunPage : PageBody {
  std::vector<Update> updates;

  std::uint8_t type_tag() const override { return kTagUpdateRun; }
  void encode(std::vector<std::uint8_t>& out) const override;
};

struct MicroLeafMeta {
  std::vector<BlockId> pages;  // contiguous key ranges, left to right
  std::uint32_t count = 0;     // total insertions across pages

  friend bool operator==(const MicroLeafMeta&, const MicroLeafMeta&) = default;
};

// The micro-root of a leaf's two-level tree: micro-leaf directory plus the
// buffer that absorbs flushed updates. Micro-leaves hold insertions only;
// deletions live in the buffer until a micro-flush annihilates them.
struct LeafRoot : PageBody {
  std::vector<Key> mu_pivots;  // between micro-leaves, size = microleaves-1
  std::vector<MicroLeafMeta> microleaves;
  std::vector<BlockId> buffer_pages;
  std::uint32_t buffer_count = 0;    // updates across buffer pages
  std::uint32_t buffer_inserts = 0;  // of which insertions

  std::uint8_t type_tag() const override { return kTagLeafRoot; }
  void encode(std::vector<std::uint8_t>& out) const override;

  std::uint64_t microleaf_total() const;
  // Net unmatched insertions: micro-leaf content plus buffered inserts minus
  // buffered deletes (each buffered delete matches a micro-leaf insertion).
  std::uint64_t net_size() const {
    std::uint64_t mu = microleaf_total();
    std::uint64_t dels = buffer_count - buffer_inserts;
    integrity_check(mu + buffer_inserts >= dels, "leaf net size underflow");
    return mu + buffer_inserts - dels;
  }
};

// Classic-variant node: fanout Theta(B^eps), buffer of size B.
struct BaselineInternal : PageBody {
  std::uint32_t height = 1;
  std::vector<Key> pivots;
  std::vector<BlockId> children;
  std::vector<Update> buffer;

  std::uint8_t type_tag() const override { return kTagBaselineInternal; }
  void encode(std::vector<std::uint8_t>& out) const override;
};

struct BaselineLeaf : PageBody {
  std::vector<Key> keys;

  std::uint8_t type_tag() const override { return kTagBaselineLeaf; }
  void encode(std::vector<std::uint8_t>& out) const override;
};

// Decodes any page from its tagged canonical bytes (file-backed mode).
std::unique_ptr<PageBody> decode_page(const std::uint8_t* data, std::size_t len);

// Worst-case encoded size for the given block size, used to fix the page
// file geometry up front.
std::uint32_t page_size_for(std::uint64_t block_size);

}  // namespace bepsilon
