#include "bepsilon/params.hpp"

#include <cmath>
#include <limits>

namespace bepsilon {

std::uint32_t ceil_log_base(std::uint64_t base, std::uint64_t n) {
  std::uint32_t k = 1;
  // pow tracks base^k with overflow saturation.
  __uint128_t pow = base;
  while (pow < n) {
    pow *= base;
    ++k;
  }
  return k;
}

namespace {

// floor(b^x) with a nudge so that exact integer powers (the common case for
// power-of-two B and dyadic epsilon) do not land just below the integer.
std::uint64_t floor_pow(std::uint64_t b, double x) {
  double v = std::pow(static_cast<double>(b), x);
  return static_cast<std::uint64_t>(std::floor(v + 1e-9));
}

}  // namespace

Params derive_params(std::uint64_t block_size, double epsilon,
                     std::uint64_t n_cap, std::uint32_t c_i,
                     std::uint32_t c_h) {
  if (block_size < 16)
    throw ParamError("params: B must be at least 16, got " +
                     std::to_string(block_size));
  if (!(epsilon > 0.0) || !(epsilon < 1.0))
    throw ParamError("params: epsilon must lie in (0,1), got " +
                     std::to_string(epsilon));
  if (n_cap < block_size)
    throw ParamError("params: N must be at least B, got N=" +
                     std::to_string(n_cap));
  if (c_i == 0 || c_h == 0)
    throw ParamError("params: scheduling constants must be positive");

  Params p;
  p.block_size = block_size;
  p.epsilon = epsilon;
  p.delta = epsilon / 2.0;
  p.n_cap = n_cap;
  p.c_i = c_i;
  p.c_h = c_h;

  p.log_b_n = ceil_log_base(block_size, n_cap);
  p.fanout_max =
      static_cast<std::uint32_t>(std::max<std::uint64_t>(4, floor_pow(block_size, p.delta)));
  p.fanout_min = std::max<std::uint32_t>(2, p.fanout_max / 2);
  p.buffer_cap =
      static_cast<std::uint32_t>(floor_pow(block_size, 1.0 - p.delta));
  p.flush_quantum = static_cast<std::uint32_t>(
      std::max<std::uint64_t>(1, floor_pow(block_size, 1.0 - 2.0 * p.delta)));
  p.tau = block_size * static_cast<std::uint64_t>(p.log_b_n) * p.log_b_n;
  p.microleaf_cap = static_cast<std::uint32_t>(block_size * p.log_b_n);
  p.microroot_buffer_cap = p.buffer_cap * p.log_b_n;

  const std::uint64_t pace = static_cast<std::uint64_t>(c_i) * p.log_b_n;
  p.update_batch = static_cast<std::uint32_t>(
      std::max<std::uint64_t>(1, p.flush_quantum / pace));
  p.low_rate = p.flush_quantum < pace;
  p.low_rate_ios = p.low_rate
                       ? static_cast<std::uint32_t>((pace + p.flush_quantum - 1) /
                                                    p.flush_quantum)
                       : 1;

  // A node (pivots + children + buffer + aux) must fit one block.
  if (p.fanout_max + p.buffer_cap > block_size)
    throw ParamError("params: fanout_max + buffer_cap exceeds B; this (B, epsilon) "
                     "combination cannot serialize a node into one block");
  integrity_check(p.flush_quantum <= p.buffer_cap && p.buffer_cap <= block_size,
                  "derived caps out of order");
  return p;
}

}  // namespace bepsilon
