#include <random>

#include "bepsilon/params.hpp"
#include "doctest.h"

using namespace bepsilon;

TEST_CASE("derive_params matches the closed forms at B=256") {
  Params p = derive_params(256, 0.5, 1ull << 20);
  CHECK(p.delta == doctest::Approx(0.25));
  CHECK(p.log_b_n == 3);  // ceil(20/8)
  CHECK(p.fanout_max == 4);
  CHECK(p.fanout_min == 2);
  CHECK(p.buffer_cap == 64);      // floor(256^0.75)
  CHECK(p.flush_quantum == 16);   // floor(256^0.5)
  CHECK(p.tau == 2304);           // 256 * 9
  CHECK(p.microleaf_cap == 768);  // 256 * 3
  CHECK(p.microroot_buffer_cap == 192);
  CHECK(p.update_batch == 1);  // floor(16 / (4*3)) floored to 1
  CHECK_FALSE(p.low_rate);
}

TEST_CASE("derive_params floors engage at B=16, N=16") {
  Params p = derive_params(16, 0.5, 16);
  CHECK(p.log_b_n == 1);
  CHECK(p.tau == 16);
  CHECK(p.fanout_max == 4);  // floor(16^0.25) = 2, floored up to 4
}

TEST_CASE("derive_params at B=4096, N=2^30") {
  Params p = derive_params(4096, 0.5, 1ull << 30);
  CHECK(p.log_b_n == 3);  // ceil(30/12)
  CHECK(p.flush_quantum == 64);
  CHECK(p.buffer_cap == 512);
  CHECK(p.update_batch == 5);  // floor(64 / (4*3))
}

TEST_CASE("derive_params low-rate mode at B=16, N=2^20") {
  Params p = derive_params(16, 0.5, 1ull << 20);
  CHECK(p.log_b_n == 5);
  CHECK(p.flush_quantum == 4);
  CHECK(p.low_rate);  // 4 < 4*5
  CHECK(p.update_batch == 1);
  CHECK(p.low_rate_ios == 5);  // ceil(20/4)
}

TEST_CASE("derive_params rejects each bad parameter distinctly") {
  CHECK_THROWS_WITH_AS(derive_params(8, 0.5, 1024),
                       doctest::Contains("B must be"), ParamError);
  CHECK_THROWS_WITH_AS(derive_params(256, 0.0, 1024),
                       doctest::Contains("epsilon"), ParamError);
  CHECK_THROWS_WITH_AS(derive_params(256, 1.0, 1024),
                       doctest::Contains("epsilon"), ParamError);
  CHECK_THROWS_WITH_AS(derive_params(256, 0.5, 100),
                       doctest::Contains("N must be"), ParamError);
}

TEST_CASE("ceil_log_base is integer-exact at powers") {
  CHECK(ceil_log_base(256, 1ull << 16) == 2);
  CHECK(ceil_log_base(256, (1ull << 16) + 1) == 3);
  CHECK(ceil_log_base(256, 1ull << 24) == 3);
  CHECK(ceil_log_base(256, 256) == 1);
  CHECK(ceil_log_base(2, 1ull << 40) == 40);
}

TEST_CASE("derive_params is pure and tau is monotone in N") {
  std::mt19937_64 rng(7);
  for (int t = 0; t < 200; ++t) {
    std::uint64_t b = 16ull << (rng() % 9);
    double eps = 0.1 + 0.8 * static_cast<double>(rng() % 1000) / 1000.0;
    std::uint64_t n = b + rng() % (1ull << 30);
    Params a, c;
    try {
      a = derive_params(b, eps, n);
      c = derive_params(b, eps, n);
    } catch (const ParamError&) {
      continue;  // some (B, eps) pairs legitimately reject
    }
    CHECK(a == c);
    Params bigger = derive_params(b, eps, n + n / 2 + 1);
    CHECK(bigger.tau >= a.tau);
    // Budget sanity: the batch never overshoots the per-cycle arrival bound.
    CHECK(static_cast<std::uint64_t>(a.c_i) * a.log_b_n * a.update_batch <=
          static_cast<std::uint64_t>(a.flush_quantum) + a.c_i * a.log_b_n);
    CHECK(a.flush_quantum <= a.buffer_cap);
    CHECK(a.buffer_cap <= b);
    CHECK(a.fanout_min >= 2);
    CHECK(a.fanout_min <= a.fanout_max);
  }
}
