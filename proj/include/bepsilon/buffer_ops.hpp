#pragma once

#include <span>
#include <vector>

#include "bepsilon/common.hpp"

namespace bepsilon {

// Kernels over key-sorted update runs. A run holds at most one live update
// per key: under the ADT preconditions an update can only meet its opposite
// on the way down, and the pair annihilates at first contact. Two same-kind
// updates for one key meeting in a run therefore indicates a corrupted trace
// and raises IntegrityError.

// Merge `src` into `dst`, annihilating insert/delete pairs on equal keys.
// Returns the net insertion delta (inserts added - inserts cancelled).
std::int64_t merge_annihilate(std::vector<Update>& dst, std::span<const Update> src);

// Apply updates to a sorted unique key sequence: inserts add their key,
// deletes remove their match. Deletes with no matching key are returned to
// the caller (they stay buffered); duplicate inserts raise IntegrityError.
std::vector<Update> apply_to_keys(std::vector<Key>& keys, std::span<const Update> ups);

// Number of updates with key in [lo, hi].
std::size_t count_in_range(std::span<const Update> run, Key lo, Key hi);

// Updates with key in [lo, hi].
std::vector<Update> slice_range(std::span<const Update> run, Key lo, Key hi);

// Split a run at pivot: returns updates with key >= pivot, truncating them
// from `run` (left-closed routing convention).
std::vector<Update> split_at(std::vector<Update>& run, Key pivot);

bool is_sorted_unique(std::span<const Update> run);

}  // namespace bepsilon
