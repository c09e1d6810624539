#include "bepsilon/buffer_ops.hpp"

#include <algorithm>

namespace bepsilon {

bool is_sorted_unique(std::span<const Update> run) {
  for (std::size_t i = 1; i < run.size(); ++i)
    if (run[i - 1].key >= run[i].key) return false;
  return true;
}

std::int64_t merge_annihilate(std::vector<Update>& dst, std::span<const Update> src) {
  if (src.empty()) return 0;
  std::vector<Update> out;
  out.reserve(dst.size() + src.size());
  std::int64_t delta = 0;
  std::size_t i = 0, j = 0;
  while (i < dst.size() || j < src.size()) {
    if (j == src.size() || (i < dst.size() && dst[i].key < src[j].key)) {
      out.push_back(dst[i++]);
    } else if (i == dst.size() || src[j].key < dst[i].key) {
      const Update& u = src[j++];
      if (u.kind == UpdateKind::Insert) ++delta;
      out.push_back(u);
    } else {
      // Equal keys: opposite kinds annihilate.
      integrity_check(dst[i].kind != src[j].kind,
                      "same-kind updates for one key met in a buffer");
      if (dst[i].kind == UpdateKind::Insert) --delta;
      ++i;
      ++j;
    }
  }
  dst = std::move(out);
  return delta;
}

std::vector<Update> apply_to_keys(std::vector<Key>& keys, std::span<const Update> ups) {
  if (ups.empty()) return {};
  std::vector<Key> out;
  out.reserve(keys.size() + ups.size());
  std::vector<Update> unmatched;
  std::size_t i = 0, j = 0;
  while (i < keys.size() || j < ups.size()) {
    if (j == ups.size() || (i < keys.size() && keys[i] < ups[j].key)) {
      out.push_back(keys[i++]);
    } else if (i == keys.size() || ups[j].key < keys[i]) {
      const Update& u = ups[j++];
      if (u.kind == UpdateKind::Insert)
        out.push_back(u.key);
      else
        unmatched.push_back(u);
    } else {
      integrity_check(ups[j].kind == UpdateKind::Delete,
                      "insert for a key already present in a micro-leaf");
      ++i;  // delete consumes the key
      ++j;
    }
  }
  keys = std::move(out);
  return unmatched;
}

namespace {
auto lower_it(std::span<const Update> run, Key k) {
  return std::lower_bound(run.begin(), run.end(), k,
                          [](const Update& u, Key v) { return u.key < v; });
}
auto upper_it(std::span<const Update> run, Key k) {
  return std::upper_bound(run.begin(), run.end(), k,
                          [](Key v, const Update& u) { return v < u.key; });
}
}  // namespace

std::size_t count_in_range(std::span<const Update> run, Key lo, Key hi) {
  if (lo > hi) return 0;
  return static_cast<std::size_t>(upper_it(run, hi) - lower_it(run, lo));
}

std::vector<Update> slice_range(std::span<const Update> run, Key lo, Key hi) {
  if (lo > hi) return {};
  return {lower_it(run, lo), upper_it(run, hi)};
}

std::vector<Update> split_at(std::vector<Update>& run, Key pivot) {
  auto it = std::lower_bound(run.begin(), run.end(), pivot,
                             [](const Update& u, Key v) { return u.key < v; });
  std::vector<Update> right(it, run.end());
  run.erase(it, run.end());
  return right;
}

}  // namespace bepsilon
