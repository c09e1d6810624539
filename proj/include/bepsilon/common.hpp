#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace bepsilon {

// Keys are constant-sized and totally ordered; the harness uses unsigned
// 64-bit decimal keys, so the whole library is built on that type.
using Key = std::uint64_t;

using BlockId = std::uint64_t;
inline constexpr BlockId kSuperblockId = 0;

enum class UpdateKind : std::uint8_t { Insert = 0, Delete = 1 };

// A key plus an insert/delete flag; the unit stored in every buffer.
struct Update {
  Key key{};
  UpdateKind kind{UpdateKind::Insert};

  friend bool operator==(const Update&, const Update&) = default;
};

inline Update make_insert(Key k) { return Update{k, UpdateKind::Insert}; }
inline Update make_delete(Key k) { return Update{k, UpdateKind::Delete}; }

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Parameter validation failures from derive_params.
struct ParamError : Error {
  using Error::Error;
};

// An operation was invoked outside its stated precondition.
struct ContractError : Error {
  using Error::Error;
};

// Access to an unallocated or freed block, or a double free.
struct PagerFaultError : Error {
  using Error::Error;
};

struct PinExhaustedError : Error {
  using Error::Error;
};

// Pin/unpin/free used against the current pin state.
struct StateError : Error {
  using Error::Error;
};

// A structural invariant was found broken; never silent corruption.
struct IntegrityError : Error {
  using Error::Error;
};

inline void integrity_check(bool ok, const std::string& what) {
  if (!ok) throw IntegrityError("integrity: " + what);
}

inline void contract_check(bool ok, const std::string& what) {
  if (!ok) throw ContractError("contract: " + what);
}

// FNV-1a, used for content digests.
class Fnv1a {
 public:
  void feed(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
      h_ ^= (v >> (8 * i)) & 0xffu;
      h_ *= 1099511628211ull;
    }
  }
  void feed_byte(std::uint8_t b) {
    h_ ^= b;
    h_ *= 1099511628211ull;
  }
  std::uint64_t value() const { return h_; }

 private:
  std::uint64_t h_ = 1469598103934665603ull;
};

}  // namespace bepsilon
