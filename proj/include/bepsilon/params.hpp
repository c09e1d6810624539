#pragma once

#include <cstdint>

#include "bepsilon/common.hpp"

namespace bepsilon {

// All quantitative knobs of the structure, derived from (B, epsilon, N).
// Every field is a pure function of the constructor inputs; the struct is
// immutable after construction and safe to share.
struct Params {
  std::uint64_t block_size = 0;  // B, in updates per block
  double epsilon = 0.0;
  double delta = 0.0;  // epsilon / 2
  std::uint64_t n_cap = 0;

  std::uint32_t log_b_n = 0;     // ceil(log N / log B), >= 1
  std::uint32_t fanout_max = 0;  // max(4, floor(B^delta))
  std::uint32_t fanout_min = 0;  // max(2, floor(fanout_max / 2))
  std::uint32_t buffer_cap = 0;  // floor(B^(1-delta))
  std::uint32_t flush_quantum = 0;  // max(1, floor(B^(1-2*delta)))
  std::uint64_t tau = 0;            // B * log_b_n^2, leaf-size unit
  std::uint32_t microleaf_cap = 0;  // B * log_b_n
  std::uint32_t microroot_buffer_cap = 0;  // buffer_cap * log_b_n
  std::uint32_t update_batch = 0;  // max(1, floor(flush_quantum / (c_i*log_b_n)))

  std::uint32_t c_i = 4;
  std::uint32_t c_h = 8;

  // True when the update_batch floor engaged (flush_quantum < c_i*log_b_n);
  // scheduling then inverts to several I/Os per single update.
  bool low_rate = false;
  std::uint32_t low_rate_ios = 1;  // ceil(c_i*log_b_n / flush_quantum)

  std::uint64_t split_threshold() const { return 4 * tau; }
  std::uint64_t merge_threshold() const { return 2 * tau; }
  std::uint64_t leaf_max() const { return 5 * tau; }
  std::uint32_t overfull_cap() const { return 2 * buffer_cap; }
  std::uint32_t height_cap() const { return c_h * log_b_n; }
  // Default cache size in blocks, c_M * log_b_n with c_M = 4; keeps the
  // internal memory comfortably above B*log_B N as the query path assumes.
  std::uint32_t default_cache_blocks() const { return 4 * log_b_n; }

  friend bool operator==(const Params&, const Params&) = default;
};

// Validates (B, epsilon, N) and derives every field above. Throws ParamError
// with a distinct message per offending parameter. B below 16 is rejected:
// the fanout/flush floors degenerate there.
Params derive_params(std::uint64_t block_size, double epsilon,
                     std::uint64_t n_cap, std::uint32_t c_i = 4,
                     std::uint32_t c_h = 8);

// Smallest k >= 1 with base^k >= n; the integer-exact ceil(log_base n).
std::uint32_t ceil_log_base(std::uint64_t base, std::uint64_t n);

}  // namespace bepsilon
