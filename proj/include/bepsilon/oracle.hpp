#pragma once

#include <optional>
#include <set>
#include <vector>

#include "bepsilon/common.hpp"

namespace bepsilon {

// Ground truth for differential testing: a plain ordered set with the same
// ADT semantics every engine must match.
class OracleSet {
 public:
  void insert(Key k) {
    auto [it, ok] = s_.insert(k);
    contract_check(ok, "oracle: insert of present key");
  }
  void erase(Key k) {
    contract_check(s_.erase(k) == 1, "oracle: delete of absent key");
  }
  bool member(Key k) const { return s_.count(k) != 0; }
  std::optional<Key> predecessor(Key q) const {
    auto it = s_.upper_bound(q);
    if (it == s_.begin()) return std::nullopt;
    return *std::prev(it);
  }
  std::vector<Key> range(Key a, Key b) const {
    return {s_.lower_bound(a), s_.upper_bound(b)};
  }
  std::uint64_t size() const { return s_.size(); }
  std::uint64_t digest() const {
    Fnv1a h;
    h.feed(s_.size());
    for (Key k : s_) h.feed(k);
    return h.value();
  }
  const std::set<Key>& raw() const { return s_; }

 private:
  std::set<Key> s_;
};

}  // namespace bepsilon
