#include "bepsilon/audit.hpp"

#include <algorithm>
#include <limits>
#include <map>
#include <sstream>

namespace bepsilon {

namespace {

constexpr Key kKeyMax = std::numeric_limits<Key>::max();

struct Walker {
  const TreeState& t;
  const AuditOptions& opt;
  AuditReport& rep;
  std::map<Key, std::int64_t> content;  // signed counts
  std::uint64_t leaf_lower;

  void fail(const std::string& check, BlockId node, const std::string& detail) {
    rep.violations.push_back({check, node, detail});
  }

  struct SubtreeInfo {
    std::uint64_t max_leaf = 0;
    std::uint64_t min_leaf = std::numeric_limits<std::uint64_t>::max();
    std::uint64_t leaves = 0;
  };

  void absorb_updates(const std::vector<Update>& ups) {
    for (const auto& u : ups)
      content[u.key] += u.kind == UpdateKind::Insert ? 1 : -1;
  }

  void check_leaf(BlockId id, Key lo, Key hi, SubtreeInfo& info) {
    auto lr = t.pager->peek<LeafRoot>(id);
    const auto& P = t.params;
    ++info.leaves;

    if (!lr->microleaves.empty() &&
        lr->mu_pivots.size() + 1 != lr->microleaves.size())
      fail("leaf-pivot-arity", id, "pivots do not match micro-leaf count");
    for (std::size_t i = 1; i < lr->mu_pivots.size(); ++i)
      if (lr->mu_pivots[i - 1] >= lr->mu_pivots[i])
        fail("leaf-pivot-order", id, "micro pivots not increasing");

    std::uint64_t mu_total = 0;
    for (std::size_t i = 0; i < lr->microleaves.size(); ++i) {
      const auto& mu = lr->microleaves[i];
      Key mlo = i == 0 ? lo : lr->mu_pivots[i - 1];
      Key mhi = i + 1 == lr->microleaves.size() ? hi : lr->mu_pivots[i] - 1;
      std::uint64_t count = 0;
      Key prev = 0;
      bool first = true;
      for (BlockId pid : mu.pages) {
        auto page = t.pager->peek<MicroLeafPage>(pid);
        if (page->keys.size() > P.block_size)
          fail("microleaf-page-size", pid, "page holds more keys than B");
        for (Key k : page->keys) {
          if (!first && k <= prev)
            fail("microleaf-order", pid, "keys not strictly increasing");
          if (k < mlo || k > mhi)
            fail("microleaf-range", pid,
                 "key " + std::to_string(k) + " outside micro interval");
          content[k] += 1;
          prev = k;
          first = false;
          ++count;
        }
      }
      if (count != mu.count)
        fail("microleaf-count", id, "cached count differs from pages");
      mu_total += count;
      bool edge = i == 0 || i + 1 == lr->microleaves.size();
      if (lr->microleaves.size() > 1 && !edge && count < P.microleaf_cap / 4)
        fail("microleaf-band", id,
             "interior micro-leaf holds " + std::to_string(count));
      if (count > P.microleaf_cap)
        fail("microleaf-band", id,
             "micro-leaf holds " + std::to_string(count) + " > cap");
    }

    std::uint64_t bcount = 0, bins = 0;
    Key prev = 0;
    bool first = true;
    for (BlockId pid : lr->buffer_pages) {
      auto page = t.pager->peek<UpdateRunPage>(pid);
      if (page->updates.size() > P.block_size)
        fail("leaf-buffer-page-size", pid, "page holds more updates than B");
      for (const auto& u : page->updates) {
        if (!first && u.key <= prev)
          fail("leaf-buffer-order", pid, "buffer not strictly key-sorted");
        if (u.key < lo || u.key > hi)
          fail("leaf-routing", id,
               "buffered key " + std::to_string(u.key) + " outside leaf");
        content[u.key] += u.kind == UpdateKind::Insert ? 1 : -1;
        if (u.kind == UpdateKind::Insert) ++bins;
        prev = u.key;
        first = false;
        ++bcount;
      }
    }
    if (bcount != lr->buffer_count || bins != lr->buffer_inserts)
      fail("leaf-buffer-count", id, "cached buffer counts differ from pages");
    if (bcount > P.microroot_buffer_cap)
      fail("leaf-buffer-cap", id,
           "micro-root buffer holds " + std::to_string(bcount));
    if (bcount - bins > P.microroot_buffer_cap)
      fail("leaf-deletions", id, "more deletions than the buffer cap");

    std::uint64_t net = lr->net_size();
    if (net != mu_total + bins - (bcount - bins))
      fail("leaf-net", id, "net_size formula mismatch");
    bool solo = t.leaf_count <= 1;
    if (!solo && net < leaf_lower)
      fail("leaf-size", id,
           "net " + std::to_string(net) + " below " + std::to_string(leaf_lower));
    if (!solo && net > 5 * P.tau)
      fail("leaf-size", id,
           "net " + std::to_string(net) + " above " + std::to_string(5 * P.tau));

    info.max_leaf = std::max(info.max_leaf, net);
    info.min_leaf = std::min(info.min_leaf, net);
  }

  SubtreeInfo check_node(BlockId id, std::uint32_t height, Key lo, Key hi,
                         bool is_root) {
    SubtreeInfo info;
    if (height == 0) {
      check_leaf(id, lo, hi, info);
      return info;
    }
    auto node = t.pager->peek<InternalNode>(id);
    const auto& P = t.params;

    if (node->height != height)
      fail("height-field", id, "node height disagrees with depth");
    std::size_t n = node->children.size();
    if (node->pivots.size() + 1 != n)
      fail("pivot-arity", id, "pivots do not match child count");
    if (node->child_max.size() != n || node->child_min.size() != n)
      fail("aux-arity", id, "aux vectors do not match child count");
    if (is_root) {
      std::size_t min_children = t.leaf_count <= 1 ? 1 : 2;
      if (n < min_children || n > P.fanout_max)
        fail("child-count", id, "root has " + std::to_string(n) + " children");
    } else if (n < P.fanout_min || n > P.fanout_max) {
      fail("child-count", id,
           "internal node has " + std::to_string(n) + " children");
    }

    for (std::size_t i = 0; i < node->pivots.size(); ++i) {
      Key p = node->pivots[i];
      if (p <= lo || p > hi)
        fail("pivot-range", id, "pivot " + std::to_string(p) + " out of range");
      if (i > 0 && node->pivots[i - 1] >= p)
        fail("pivot-order", id, "pivots not increasing");
    }

    if (!is_sorted_unique(node->buffer))
      fail("buffer-order", id, "buffer not strictly key-sorted");
    for (const auto& u : node->buffer)
      if (u.key < lo || u.key > hi)
        fail("routing", id,
             "buffered key " + std::to_string(u.key) + " outside node interval");
    rep.max_buffer = std::max<std::uint64_t>(rep.max_buffer, node->buffer.size());
    if (node->buffer.size() > P.buffer_cap) {
      ++rep.overfull_nodes;
      bool exempt = is_root || (t.last_merged && *t.last_merged == id);
      if (!exempt)
        fail("overfull", id,
             "non-exempt node buffers " + std::to_string(node->buffer.size()));
      if (node->buffer.size() > 2 * P.buffer_cap)
        fail("overfull", id,
             "buffer " + std::to_string(node->buffer.size()) + " above 2x cap");
    }
    absorb_updates(node->buffer);

    std::vector<BlockId> children = node->children;
    std::vector<std::uint64_t> cmax = node->child_max, cmin = node->child_min;
    std::vector<Key> pivots = node->pivots;
    node.reset();

    for (std::size_t i = 0; i < children.size(); ++i) {
      Key clo = i == 0 ? lo : pivots[i - 1];
      Key chi = i == pivots.size() ? hi : pivots[i] - 1;
      SubtreeInfo ci = check_node(children[i], height - 1, clo, chi, false);
      if (opt.check_aux) {
        if (cmax[i] != ci.max_leaf)
          fail("aux-max", id,
               "child " + std::to_string(i) + " cached max " +
                   std::to_string(cmax[i]) + " actual " + std::to_string(ci.max_leaf));
        if (cmin[i] != ci.min_leaf)
          fail("aux-min", id,
               "child " + std::to_string(i) + " cached min " +
                   std::to_string(cmin[i]) + " actual " + std::to_string(ci.min_leaf));
      }
      info.max_leaf = std::max(info.max_leaf, ci.max_leaf);
      info.min_leaf = std::min(info.min_leaf, ci.min_leaf);
      info.leaves += ci.leaves;
    }
    return info;
  }
};

}  // namespace

std::string AuditReport::to_string() const {
  std::ostringstream os;
  if (ok()) {
    os << "audit: ok (" << leaf_count << " leaves)";
    return os.str();
  }
  os << "audit: " << violations.size() << " violation(s)\n";
  for (const auto& v : violations)
    os << "  [" << v.check << "] block " << v.node << ": " << v.detail << "\n";
  return os.str();
}

AuditReport audit_tree(const TreeState& t, const AuditOptions& opt) {
  AuditReport rep;
  Walker w{t, opt, rep, {}, opt.leaf_lower ? opt.leaf_lower : t.params.tau};
  auto info = w.check_node(t.root, t.height, 0, kKeyMax, true);
  rep.leaf_count = info.leaves;
  if (info.leaves != t.leaf_count)
    w.fail("leaf-count", t.root,
           "walk found " + std::to_string(info.leaves) + ", cached " +
               std::to_string(t.leaf_count));
  if (t.height > t.params.height_cap())
    w.fail("height", t.root, "height " + std::to_string(t.height) + " over cap");

  std::uint64_t live = 0;
  for (auto& [k, c] : w.content) {
    if (c != 0 && c != 1) {
      w.fail("signed-count", 0,
             "key " + std::to_string(k) + " has signed count " + std::to_string(c));
    }
    if (c == 1) ++live;
  }
  if (live != t.n_live)
    w.fail("live-count", 0,
           "content " + std::to_string(live) + ", counter " +
               std::to_string(t.n_live));
  if (opt.check_content && opt.oracle) {
    if (live != opt.oracle->size())
      w.fail("oracle-size", 0, "live set size differs from oracle");
    for (auto& [k, c] : w.content) {
      bool want = opt.oracle->member(k);
      if ((c == 1) != want)
        w.fail("oracle-content", 0, "key " + std::to_string(k) + " disagrees");
    }
  }
  return rep;
}

AuditReport audit_leaf_sizes(const TreeState& t, std::uint64_t leaf_lower) {
  AuditReport rep;
  std::uint64_t lower = leaf_lower ? leaf_lower : t.params.tau;
  std::vector<BlockId> leaves = collect_leaves(t);
  rep.leaf_count = leaves.size();
  bool solo = leaves.size() <= 1;
  for (BlockId id : leaves) {
    auto lr = t.pager->peek<LeafRoot>(id);
    std::uint64_t net = lr->net_size();
    if (!solo && (net < lower || net > 5 * t.params.tau))
      rep.violations.push_back(
          {"leaf-size", id,
           "net " + std::to_string(net) + " outside [" + std::to_string(lower) +
               ", " + std::to_string(5 * t.params.tau) + "]"});
  }
  return rep;
}

std::vector<Key> tree_contents(const TreeState& t) {
  AuditOptions opt;
  opt.check_aux = false;
  AuditReport rep;
  Walker w{t, opt, rep, {}, t.params.tau};
  w.check_node(t.root, t.height, 0, kKeyMax, true);
  std::vector<Key> out;
  out.reserve(w.content.size());
  for (auto& [k, c] : w.content) {
    integrity_check(c == 0 || c == 1, "signed count out of range in contents");
    if (c == 1) out.push_back(k);
  }
  return out;
}

std::uint64_t tree_digest(const TreeState& t) {
  std::vector<Key> keys = tree_contents(t);
  Fnv1a h;
  h.feed(keys.size());
  for (Key k : keys) h.feed(k);
  return h.value();
}

namespace {

void serialize_page(const Pager& pager, BlockId id, std::vector<std::uint8_t>& out) {
  auto body = pager.peek_body(id);
  out.push_back(static_cast<std::uint8_t>(0xB5));
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(id >> (8 * i)));
  out.push_back(body->type_tag());
  body->encode(out);
}

void serialize_rec(const TreeState& t, BlockId id, std::uint32_t height,
                   std::vector<std::uint8_t>& out) {
  serialize_page(*t.pager, id, out);
  if (height == 0) {
    auto lr = t.pager->peek<LeafRoot>(id);
    std::vector<BlockId> pages = lr->buffer_pages;
    std::vector<std::vector<BlockId>> mus;
    for (auto& m : lr->microleaves) mus.push_back(m.pages);
    lr.reset();
    for (BlockId p : pages) serialize_page(*t.pager, p, out);
    for (auto& run : mus)
      for (BlockId p : run) serialize_page(*t.pager, p, out);
    return;
  }
  auto node = t.pager->peek<InternalNode>(id);
  std::vector<BlockId> kids = node->children;
  node.reset();
  for (BlockId c : kids) serialize_rec(t, c, height - 1, out);
}

}  // namespace

std::vector<std::uint8_t> serialize_tree(const TreeState& t) {
  std::vector<std::uint8_t> out;
  serialize_rec(t, t.root, t.height, out);
  return out;
}

}  // namespace bepsilon
