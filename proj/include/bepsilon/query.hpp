#pragma once

#include <optional>
#include <span>

#include "bepsilon/tree_ops.hpp"

namespace bepsilon {

// Read-only queries over a quiescent tree. Queries copy path buffers into
// internal memory, cancel insert/delete pairs there, and never write a
// block; the serialized tree is identical before and after.

// max{e in X : e not in Y} by rank-selection bisection. Contract: X and Y
// ascending and duplicate-free, |X| = 2|Y|, Y a subset of X. Returns nullopt
// only when X is empty.
std::optional<Key> largest_not_in(std::span<const Key> xs, std::span<const Key> ys);

// Largest key <= q in the logical set.
std::optional<Key> query_predecessor(TreeState& t, Key q);

// All live keys in [a, b], ascending.
std::vector<Key> query_range(TreeState& t, Key a, Key b);

bool query_member(TreeState& t, Key q);

}  // namespace bepsilon
