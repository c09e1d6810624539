#include "bepsilon/query.hpp"

#include <algorithm>
#include <limits>
#include <map>

namespace bepsilon {

namespace {

constexpr Key kKeyMax = std::numeric_limits<Key>::max();

// List element for the selection procedure: sentinels order below every
// real key and stay distinct from one another.
struct QElem {
  bool real = true;
  Key k = 0;
  friend auto operator<=>(const QElem& a, const QElem& b) {
    if (a.real != b.real) return a.real <=> b.real;
    return a.k <=> b.k;
  }
  friend bool operator==(const QElem&, const QElem&) = default;
};

// e(X, r) is the r-th largest element. P(r) = [e(X,r) > e(Y,r)] is monotone
// for Y subset of X, so the smallest r with P(r) is found by bisection and
// e(X, r) is the answer; if P never holds the answer is e(X, |Y|+1).
template <typename T>
std::optional<T> largest_not_in_impl(std::span<const T> xs, std::span<const T> ys) {
  auto nth_largest = [](std::span<const T> v, std::size_t r) {
    return v[v.size() - r];
  };
  if (ys.empty()) {
    if (xs.empty()) return std::nullopt;
    return xs.back();
  }
  std::size_t m = ys.size();
  if (nth_largest(xs, m) == nth_largest(ys, m)) {
    // The m largest agree; the answer sits just below them.
    if (xs.size() < m + 1) return std::nullopt;
    return nth_largest(xs, m + 1);
  }
  std::size_t lo = 1, hi = m;  // smallest r with e(X,r) > e(Y,r) is in [lo, hi]
  while (lo < hi) {
    std::size_t mid = (lo + hi) / 2;
    if (nth_largest(xs, mid) > nth_largest(ys, mid))
      hi = mid;
    else
      lo = mid + 1;
  }
  return nth_largest(xs, lo);
}

template <typename T>
void check_subset(std::span<const T> xs, std::span<const T> ys) {
  std::size_t i = 0;
  for (const T& y : ys) {
    while (i < xs.size() && xs[i] < y) ++i;
    contract_check(i < xs.size() && xs[i] == y, "largest_not_in: Y not within X");
  }
}

// Buffered updates <= q gathered from the internal nodes on a root-to-leaf
// path (insertions and deletions kept apart).
struct PathUpdates {
  std::vector<Key> inserts;
  std::vector<Key> deletes;
};

void gather_path_updates(TreeState& t, const std::vector<PathEntry>& path, Key q,
                         PathUpdates& out, std::vector<BlockId>& seen) {
  StepContext ctx(*t.pager);
  for (const auto& pe : path) {
    if (std::find(seen.begin(), seen.end(), pe.id) != seen.end()) continue;
    seen.push_back(pe.id);
    auto node = t.pager->read<InternalNode>(pe.id);
    for (const auto& u : node->buffer) {
      if (u.key > q) break;
      (u.kind == UpdateKind::Insert ? out.inserts : out.deletes).push_back(u.key);
    }
  }
}

// Left-adjacent leaf of the descent in `d`, with its own path; nullopt at
// the left edge of the tree.
std::optional<Descent> left_neighbor(StepContext& ctx, TreeState& t,
                                     const Descent& d) {
  std::size_t turn = d.path.size();
  while (turn-- > 0)
    if (d.path[turn].child_idx > 0) break;
  if (turn == static_cast<std::size_t>(-1)) return std::nullopt;
  if (d.path[turn].child_idx == 0) return std::nullopt;

  Descent n;
  n.path.assign(d.path.begin(), d.path.begin() + static_cast<std::ptrdiff_t>(turn));
  std::size_t idx = d.path[turn].child_idx - 1;
  BlockId cur = d.path[turn].id;
  while (true) {
    auto node = t.pager->read<InternalNode>(cur);
    n.path.push_back({cur, idx});
    BlockId next = node->children[idx];
    bool leaf_level = node->height == 1;
    node.release();
    if (leaf_level) {
      n.leaf = next;
      return n;
    }
    cur = next;
    auto deeper = t.pager->read<InternalNode>(cur);
    idx = deeper->children.size() - 1;  // rightmost descent
  }
}

struct PredecessorLists {
  std::vector<Key> l3;       // the `want` largest candidate insertions <= q
  std::vector<Key> deletes;  // path deletions <= q
  bool exhausted = false;    // every insertion <= q was collected
};

PredecessorLists build_lists(TreeState& t, Key q, std::size_t want) {
  PredecessorLists out;
  StepContext ctx(*t.pager);
  Descent d = run_to_completion(ctx, descend_key(ctx, t, q));

  // L1: the largest net leaf insertions <= q, from the leaf that owns q and
  // then leftward neighbors until `want` are gathered.
  std::vector<Key> l1 = run_to_completion(
      ctx, leaf_collect_below(ctx, leaf_config(t.params), d.leaf, q, want));
  PathUpdates pu;
  std::vector<BlockId> seen;
  gather_path_updates(t, d.path, q, pu, seen);

  Descent cur = d;
  while (l1.size() < want) {
    auto left = left_neighbor(ctx, t, cur);
    if (!left) {
      out.exhausted = true;
      break;
    }
    std::vector<Key> more = run_to_completion(
        ctx, leaf_collect_below(ctx, leaf_config(t.params), left->leaf, q, want));
    more.insert(more.end(), l1.begin(), l1.end());
    l1 = std::move(more);
    gather_path_updates(t, left->path, q, pu, seen);
    cur = *left;
  }

  // L3: the `want` largest of L1 and the path insertions.
  std::sort(pu.inserts.begin(), pu.inserts.end());
  std::vector<Key> l3;
  l3.reserve(l1.size() + pu.inserts.size());
  std::merge(l1.begin(), l1.end(), pu.inserts.begin(), pu.inserts.end(),
             std::back_inserter(l3));
  integrity_check(std::adjacent_find(l3.begin(), l3.end()) == l3.end(),
                  "duplicate live insertion on a search path");
  if (l3.size() > want) l3.erase(l3.begin(), l3.end() - static_cast<std::ptrdiff_t>(want));
  else out.exhausted = true;

  std::sort(pu.deletes.begin(), pu.deletes.end());
  pu.deletes.erase(std::unique(pu.deletes.begin(), pu.deletes.end()),
                   pu.deletes.end());
  out.deletes = std::move(pu.deletes);
  return out;
}

}  // namespace

std::optional<Key> largest_not_in(std::span<const Key> xs, std::span<const Key> ys) {
  contract_check(std::is_sorted(xs.begin(), xs.end()) &&
                     std::adjacent_find(xs.begin(), xs.end()) == xs.end(),
                 "largest_not_in: X must be sorted and duplicate-free");
  contract_check(std::is_sorted(ys.begin(), ys.end()) &&
                     std::adjacent_find(ys.begin(), ys.end()) == ys.end(),
                 "largest_not_in: Y must be sorted and duplicate-free");
  contract_check(xs.size() == 2 * ys.size(),
                 "largest_not_in: |X| must equal 2|Y|");
  check_subset(xs, ys);
  return largest_not_in_impl(xs, ys);
}

std::optional<Key> query_predecessor(TreeState& t, Key q) {
  const std::uint64_t base_want =
      t.params.block_size * static_cast<std::uint64_t>(t.params.log_b_n);

  for (int attempt = 0; attempt < 2; ++attempt) {
    std::size_t want = static_cast<std::size_t>(base_want) << attempt;
    PredecessorLists lists = build_lists(t, q, want);

    // Trim the deletions to the candidate list, then shrink the window to
    // twice the deletion count; the survivors' maximum cannot rank below
    // deletions+1, so it stays inside the window.
    std::vector<Key>& l3 = lists.l3;
    std::vector<Key> y;
    for (Key k : lists.deletes)
      if (std::binary_search(l3.begin(), l3.end(), k)) y.push_back(k);
    while (true) {
      std::size_t window = 2 * y.size();
      std::size_t start = l3.size() > window ? l3.size() - window : 0;
      std::vector<Key> trimmed;
      for (Key k : y)
        if (k >= l3[start]) trimmed.push_back(k);
      if (trimmed.size() == y.size()) break;
      y = std::move(trimmed);
    }

    if (y.empty()) {
      if (!l3.empty()) return l3.back();
      if (lists.exhausted) return std::nullopt;
      continue;  // widen
    }

    // Manufacture the procedure's shape: X = top 2|Y| of L3, padded with
    // distinct sentinels below every real key when L3 runs short.
    std::size_t window = 2 * y.size();
    std::size_t start = l3.size() > window ? l3.size() - window : 0;
    std::vector<QElem> xs, ys;
    for (std::size_t pad = l3.size() - start; pad < window; ++pad)
      xs.push_back(QElem{false, static_cast<Key>(window - pad)});
    std::sort(xs.begin(), xs.end());
    for (std::size_t i = start; i < l3.size(); ++i)
      xs.push_back(QElem{true, l3[i]});
    for (Key k : y) ys.push_back(QElem{true, k});

    auto got = largest_not_in_impl(std::span<const QElem>(xs),
                                   std::span<const QElem>(ys));
    if (got && got->real) return got->k;
    // Everything real in the window was deleted: widen once, then trust
    // exhaustion.
    if (lists.exhausted) return std::nullopt;
  }
  throw IntegrityError("predecessor: candidate window exhausted twice");
}

bool query_member(TreeState& t, Key q) {
  auto p = query_predecessor(t, q);
  return p && *p == q;
}

namespace {

void range_walk(TreeState& t, BlockId id, std::uint32_t height, Key lo, Key hi,
                Key a, Key b, std::map<Key, std::int64_t>& acc) {
  StepContext ctx(*t.pager);
  if (height == 0) {
    std::vector<Key> keys = run_to_completion(
        ctx, leaf_collect(ctx, leaf_config(t.params), id, a, b));
    for (Key k : keys) acc[k] += 1;
    return;
  }
  std::vector<BlockId> kids;
  std::vector<Key> pivots;
  {
    auto node = t.pager->read<InternalNode>(id);
    for (const auto& u : node->buffer)
      if (u.key >= a && u.key <= b)
        acc[u.key] += u.kind == UpdateKind::Insert ? 1 : -1;
    kids = node->children;
    pivots = node->pivots;
  }
  for (std::size_t i = 0; i < kids.size(); ++i) {
    Key clo = i == 0 ? lo : pivots[i - 1];
    Key chi = i == pivots.size() ? hi : pivots[i] - 1;
    if (chi < a || clo > b) continue;
    range_walk(t, kids[i], height - 1, clo, chi, a, b, acc);
  }
}

}  // namespace

std::vector<Key> query_range(TreeState& t, Key a, Key b) {
  contract_check(a <= b, "range_report: a must not exceed b");
  std::map<Key, std::int64_t> acc;
  range_walk(t, t.root, t.height, 0, kKeyMax, a, b, acc);
  std::vector<Key> out;
  for (auto& [k, c] : acc) {
    integrity_check(c == 0 || c == 1, "range: signed count out of range");
    if (c == 1) out.push_back(k);
  }
  return out;
}

}  // namespace bepsilon
