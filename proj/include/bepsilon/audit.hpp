#pragma once

#include <string>

#include "bepsilon/oracle.hpp"
#include "bepsilon/tree_ops.hpp"

namespace bepsilon {

// Invariant checkers over a quiescent tree. Everything here reads through
// Pager::peek, so audits never count I/O or disturb the cache, and audit
// cadence cannot change a trace.

struct Violation {
  std::string check;
  BlockId node = 0;
  std::string detail;
};

struct AuditReport {
  std::vector<Violation> violations;
  std::uint64_t leaf_count = 0;
  std::uint64_t overfull_nodes = 0;
  std::uint64_t max_buffer = 0;

  bool ok() const { return violations.empty(); }
  std::string to_string() const;
};

struct AuditOptions {
  // Lower leaf band; maintenance keeps [tau, 5 tau], while a freshly rebuilt
  // tree starts at tau'/4. 0 means "use params.tau".
  std::uint64_t leaf_lower = 0;
  bool check_aux = true;
  bool check_content = false;
  const OracleSet* oracle = nullptr;
};

AuditReport audit_tree(const TreeState& t, const AuditOptions& opt = {});

// Leaf-size band check only (cheap; used at every quiescent point).
AuditReport audit_leaf_sizes(const TreeState& t, std::uint64_t leaf_lower = 0);

// Net content (sorted live keys) via an uncounted walk.
std::vector<Key> tree_contents(const TreeState& t);

// FNV digest of the sorted net content.
std::uint64_t tree_digest(const TreeState& t);

// Canonical bytes of every reachable page, depth-first; byte-identical
// before and after any read-only query.
std::vector<std::uint8_t> serialize_tree(const TreeState& t);

}  // namespace bepsilon
