#pragma once

// Scheduling substrate shared by every concurrent component.
//
// All shared state is guarded by the runtime's single mutex. Components wait
// on predicates over that state and call notify() after mutating it. Two
// implementations sit behind the interface:
//
//  RealRuntime     threads, a condition variable and the steady clock.
//  VirtualRuntime  a deterministic discrete-event scheduler. Every process is
//                  still an OS thread, but only one holds the run token at a
//                  time; the clock advances only when every process is
//                  blocked, jumping to the earliest pending deadline.
//
// Compute that should cost simulated time is declared with charge(); under
// the real clock it is a no-op because the work itself takes time.

#include <chrono>
#include <exception>
#include <functional>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "arl/env.hpp"

namespace arl {

using Lock = std::unique_lock<std::mutex>;

inline constexpr Duration kNoDeadline = Duration::max();

class Runtime {
public:
    virtual ~Runtime() = default;

    /// Time since the runtime was created.
    virtual Duration now() const = 0;
    virtual bool is_virtual() const = 0;

    Lock lock() { return Lock(mutex_); }

    /// Blocks with `lk` released until pred() holds or `deadline` (absolute,
    /// runtime time) passes. Returns pred() at wake-up.
    virtual bool wait_until(Lock& lk, const std::function<bool()>& pred, Duration deadline = kNoDeadline) = 0;
    bool wait_for(Lock& lk, const std::function<bool()>& pred, Duration d) {
        return wait_until(lk, pred, d == kNoDeadline ? kNoDeadline : now() + d);
    }
    virtual void notify() = 0;

    /// Must be called without the lock held.
    virtual void sleep_for(Duration d) = 0;
    virtual void charge(Duration d) = 0;

    /// Starts a named process. Exceptions escaping it are captured; the
    /// first one is rethrown by join_all().
    virtual void spawn(std::string name, std::function<void()> fn) = 0;
    /// Waits for every spawned process to finish.
    virtual void join_all() = 0;

    /// Names of processes that have started but not finished.
    std::vector<std::string> live_processes() const;
    std::size_t live_count() const;

protected:
    void register_process(const std::string& name);
    void unregister_process(const std::string& name);
    void record_failure(std::exception_ptr e);
    void rethrow_failure();

    std::mutex mutex_;  // the shared-state lock handed out by lock()

private:
    mutable std::mutex registry_mutex_;
    std::vector<std::string> live_;
    std::exception_ptr failure_;
};

std::unique_ptr<Runtime> make_real_runtime();
std::unique_ptr<Runtime> make_virtual_runtime();
std::unique_ptr<Runtime> make_runtime(bool virtual_clock);

/// Reusable generation barrier over a runtime.
class Barrier {
public:
    Barrier(Runtime& rt, std::size_t parties) : rt_(rt), parties_(parties) {}

    /// Blocks until `parties` callers have arrived for the current
    /// generation, or `abort()` returns true. Returns false on abort.
    bool arrive_and_wait(Lock& lk, const std::function<bool()>& abort);
    std::uint64_t generation() const { return generation_; }

private:
    Runtime& rt_;
    std::size_t parties_;
    std::size_t arrived_ = 0;
    std::uint64_t generation_ = 0;
};

}  // namespace arl
