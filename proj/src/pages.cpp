#include "bepsilon/pages.hpp"

#include <algorithm>
#include <cstring>

namespace bepsilon {

namespace {

void put_u8(std::vector<std::uint8_t>& out, std::uint8_t v) { out.push_back(v); }

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_f64(std::vector<std::uint8_t>& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  put_u64(out, bits);
}

void put_keys(std::vector<std::uint8_t>& out, const std::vector<Key>& ks) {
  put_u32(out, static_cast<std::uint32_t>(ks.size()));
  for (Key k : ks) put_u64(out, k);
}

void put_ids(std::vector<std::uint8_t>& out, const std::vector<BlockId>& ids) {
  put_u32(out, static_cast<std::uint32_t>(ids.size()));
  for (BlockId b : ids) put_u64(out, b);
}

void put_updates(std::vector<std::uint8_t>& out, const std::vector<Update>& us) {
  put_u32(out, static_cast<std::uint32_t>(us.size()));
  for (const Update& u : us) {
    put_u64(out, u.key);
    put_u8(out, static_cast<std::uint8_t>(u.kind));
  }
}

struct Reader {
  const std::uint8_t* p;
  const std::uint8_t* end;

  std::uint8_t u8() {
    integrity_check(p < end, "page decode overrun");
    return *p++;
  }
  std::uint32_t u32() {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(u8()) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(u8()) << (8 * i);
    return v;
  }
  double f64() {
    std::uint64_t bits = u64();
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  }
  std::vector<Key> keys() {
    std::vector<Key> ks(u32());
    for (auto& k : ks) k = u64();
    return ks;
  }
  std::vector<BlockId> ids() { return keys(); }
  std::vector<Update> updates() {
    std::vector<Update> us(u32());
    for (auto& u : us) {
      u.key = u64();
      u.kind = static_cast<UpdateKind>(u8());
    }
    return us;
  }
};

}  // namespace

void Superblock::encode(std::vector<std::uint8_t>& out) const {
  put_u64(out, magic);
  put_u64(out, block_size);
  put_f64(out, epsilon);
  put_u64(out, n_cap);
  put_u64(out, root);
}

void InternalNode::encode(std::vector<std::uint8_t>& out) const {
  put_u32(out, height);
  put_keys(out, pivots);
  put_ids(out, children);
  put_keys(out, child_max);
  put_keys(out, child_min);
  put_updates(out, buffer);
}

std::uint64_t InternalNode::subtree_max() const {
  integrity_check(!child_max.empty(), "internal node without children");
  return *std::max_element(child_max.begin(), child_max.end());
}

std::uint64_t InternalNode::subtree_min() const {
  integrity_check(!child_min.empty(), "internal node without children");
  return *std::min_element(child_min.begin(), child_min.end());
}

void MicroLeafPage::encode(std::vector<std::uint8_t>& out) const {
  put_keys(out, keys);
}

void UpdateRunPage::encode(std::vector<std::uint8_t>& out) const {
  put_updates(out, updates);
}

void LeafRoot::encode(std::vector<std::uint8_t>& out) const {
  put_keys(out, mu_pivots);
  put_u32(out, static_cast<std::uint32_t>(microleaves.size()));
  for (const auto& m : microleaves) {
    put_ids(out, m.pages);
    put_u32(out, m.count);
  }
  put_ids(out, buffer_pages);
  put_u32(out, buffer_count);
  put_u32(out, buffer_inserts);
}

std::uint64_t LeafRoot::microleaf_total() const {
  std::uint64_t t = 0;
  for (const auto& m : microleaves) t += m.count;
  return t;
}

void BaselineInternal::encode(std::vector<std::uint8_t>& out) const {
  put_u32(out, height);
  put_keys(out, pivots);
  put_ids(out, children);
  put_updates(out, buffer);
}

void BaselineLeaf::encode(std::vector<std::uint8_t>& out) const {
  put_keys(out, keys);
}

std::unique_ptr<PageBody> decode_page(const std::uint8_t* data, std::size_t len) {
  Reader r{data, data + len};
  switch (r.u8()) {
    case kTagSuperblock: {
      auto p = std::make_unique<Superblock>();
      p->magic = r.u64();
      p->block_size = r.u64();
      p->epsilon = r.f64();
      p->n_cap = r.u64();
      p->root = r.u64();
      return p;
    }
    case kTagInternal: {
      auto p = std::make_unique<InternalNode>();
      p->height = r.u32();
      p->pivots = r.keys();
      p->children = r.ids();
      p->child_max = r.keys();
      p->child_min = r.keys();
      p->buffer = r.updates();
      return p;
    }
    case kTagLeafRoot: {
      auto p = std::make_unique<LeafRoot>();
      p->mu_pivots = r.keys();
      p->microleaves.resize(r.u32());
      for (auto& m : p->microleaves) {
        m.pages = r.ids();
        m.count = r.u32();
      }
      p->buffer_pages = r.ids();
      p->buffer_count = r.u32();
      p->buffer_inserts = r.u32();
      return p;
    }
    case kTagMicroLeaf: {
      auto p = std::make_unique<MicroLeafPage>();
      p->keys = r.keys();
      return p;
    }
    case kTagUpdateRun: {
      auto p = std::make_unique<UpdateRunPage>();
      p->updates = r.updates();
      return p;
    }
    case kTagBaselineInternal: {
      auto p = std::make_unique<BaselineInternal>();
      p->height = r.u32();
      p->pivots = r.keys();
      p->children = r.ids();
      p->buffer = r.updates();
      return p;
    }
    case kTagBaselineLeaf: {
      auto p = std::make_unique<BaselineLeaf>();
      p->keys = r.keys();
      return p;
    }
    default:
      throw IntegrityError("unknown page tag");
  }
}

std::uint32_t page_size_for(std::uint64_t block_size) {
  // Worst case is a merged baseline internal buffer (2B updates of 9 bytes)
  // plus directory overhead; 32B slots with a fixed header cover everything.
  return static_cast<std::uint32_t>(256 + 32 * 2 * block_size);
}

}  // namespace bepsilon
