#pragma once

#include <coroutine>
#include <exception>
#include <functional>
#include <optional>
#include <utility>

#include "bepsilon/common.hpp"
#include "bepsilon/pager.hpp"

namespace bepsilon {

// A lazily-started coroutine with symmetric-transfer continuation. Structural
// work (cycles, flush paths, leaf operations, rebuild rounds) is written as
// Tasks so it can suspend after every faulting block access and resume where
// it left off; the suspended frames are exactly the maintenance cursor.
template <typename T = void>
class [[nodiscard]] Task;

namespace detail {

struct PromiseBase {
  std::coroutine_handle<> continuation{};
  std::exception_ptr exception{};

  std::suspend_always initial_suspend() noexcept { return {}; }

  struct FinalAwaiter {
    bool await_ready() noexcept { return false; }
    template <typename P>
    std::coroutine_handle<> await_suspend(std::coroutine_handle<P> h) noexcept {
      auto cont = h.promise().continuation;
      return cont ? cont : std::noop_coroutine();
    }
    void await_resume() noexcept {}
  };
  FinalAwaiter final_suspend() noexcept { return {}; }
  void unhandled_exception() { exception = std::current_exception(); }
};

template <typename T>
struct Promise : PromiseBase {
  std::optional<T> value{};
  Task<T> get_return_object();
  void return_value(T v) { value = std::move(v); }
};

template <>
struct Promise<void> : PromiseBase {
  Task<void> get_return_object();
  void return_void() {}
};

}  // namespace detail

template <typename T>
class [[nodiscard]] Task {
 public:
  using promise_type = detail::Promise<T>;
  using Handle = std::coroutine_handle<promise_type>;

  Task() = default;
  explicit Task(Handle h) : handle_(h) {}
  Task(Task&& o) noexcept : handle_(std::exchange(o.handle_, {})) {}
  Task& operator=(Task&& o) noexcept {
    if (this != &o) {
      destroy();
      handle_ = std::exchange(o.handle_, {});
    }
    return *this;
  }
  Task(const Task&) = delete;
  Task& operator=(const Task&) = delete;
  ~Task() { destroy(); }

  bool valid() const { return static_cast<bool>(handle_); }
  bool done() const { return handle_ && handle_.done(); }
  Handle handle() const { return handle_; }

  void rethrow_if_failed() const {
    if (handle_ && handle_.promise().exception)
      std::rethrow_exception(handle_.promise().exception);
  }

  T take_result() {
    rethrow_if_failed();
    if constexpr (!std::is_void_v<T>) return std::move(*handle_.promise().value);
  }

  // co_await support: start/continue the child, resume parent on completion.
  struct Awaiter {
    Handle child;
    bool await_ready() const noexcept { return false; }
    std::coroutine_handle<> await_suspend(std::coroutine_handle<> parent) noexcept {
      child.promise().continuation = parent;
      return child;
    }
    T await_resume() {
      if (child.promise().exception)
        std::rethrow_exception(child.promise().exception);
      if constexpr (!std::is_void_v<T>) return std::move(*child.promise().value);
    }
  };
  Awaiter operator co_await() const { return Awaiter{handle_}; }

 private:
  void destroy() {
    if (handle_) {
      handle_.destroy();
      handle_ = {};
    }
  }
  Handle handle_{};
};

namespace detail {
template <typename T>
Task<T> Promise<T>::get_return_object() {
  return Task<T>(std::coroutine_handle<Promise<T>>::from_promise(*this));
}
inline Task<void> Promise<void>::get_return_object() {
  return Task<void>(std::coroutine_handle<Promise<void>>::from_promise(*this));
}
}  // namespace detail

// Shared stepping state for gated block access. Tasks perform pager calls
// through the owning module, then `co_await ctx.gate()`; the gate suspends
// exactly when faults occurred since the previous gate, which realizes
// "stop after every I/O". The driver resumes `pending` to continue.
class StepContext {
 public:
  explicit StepContext(Pager& pager) : pager_(&pager) {}

  Pager& pager() { return *pager_; }

  struct Gate {
    StepContext* ctx;
    bool await_ready() const noexcept { return !ctx->io_pending(); }
    void await_suspend(std::coroutine_handle<> h) noexcept {
      ctx->note_yield(h);
    }
    void await_resume() const noexcept {}
  };

  Gate gate() { return Gate{this}; }

  bool io_pending() const { return pager_->stats().faults != fault_mark_; }

  void begin_step() { fault_mark_ = pager_->stats().faults; }

  void note_yield(std::coroutine_handle<> h) {
    std::uint64_t burst = pager_->stats().faults - fault_mark_;
    if (burst > max_faults_per_yield_) max_faults_per_yield_ = burst;
    fault_mark_ = pager_->stats().faults;
    pending_ = h;
    ++yields_;
  }

  // Resumes the innermost suspended coroutine (or starts `root`) and runs
  // until the next gate suspension or until `root` completes.
  template <typename T>
  bool resume_step(Task<T>& root) {
    begin_step();
    std::coroutine_handle<> h = pending_ ? pending_ : root.handle();
    pending_ = {};
    h.resume();
    if (root.done()) {
      // A burst after the final gate still counts against the meter.
      std::uint64_t burst = pager_->stats().faults - fault_mark_;
      if (burst > max_faults_per_yield_) max_faults_per_yield_ = burst;
      root.rethrow_if_failed();
      return false;  // completed
    }
    integrity_check(static_cast<bool>(pending_), "task suspended outside a gate");
    return true;  // yielded on an I/O
  }

  std::uint64_t yields() const { return yields_; }
  std::uint64_t max_faults_per_yield() const { return max_faults_per_yield_; }
  void reset_meter() { max_faults_per_yield_ = 0; }

  // Pacing safety valve: long-running leaf work periodically offers to run a
  // root drain so user arrivals cannot outrun the Figure-style schedule. The
  // maintenance layer installs both hooks; a set `in_governor` flag keeps the
  // drain itself from re-entering.
  std::function<bool()> governor_due{};
  std::function<Task<void>()> governor_run{};
  bool in_governor = false;

 private:
  Pager* pager_;
  std::uint64_t fault_mark_ = 0;
  std::uint64_t yields_ = 0;
  std::uint64_t max_faults_per_yield_ = 0;
  std::coroutine_handle<> pending_{};
};

// Drives a task to completion synchronously; used by queries and tests that
// do not interleave user work between I/Os.
template <typename T>
T run_to_completion(StepContext& ctx, Task<T>&& task) {
  while (ctx.resume_step(task)) {
  }
  return task.take_result();
}

}  // namespace bepsilon
