#include "arl/runtime.hpp"

#include <algorithm>
#include <atomic>
#include <condition_variable>
#include <thread>

#include "arl/error.hpp"

namespace arl {

std::vector<std::string> Runtime::live_processes() const {
    std::lock_guard g(registry_mutex_);
    return live_;
}

std::size_t Runtime::live_count() const {
    std::lock_guard g(registry_mutex_);
    return live_.size();
}

void Runtime::register_process(const std::string& name) {
    std::lock_guard g(registry_mutex_);
    live_.push_back(name);
}

void Runtime::unregister_process(const std::string& name) {
    std::lock_guard g(registry_mutex_);
    auto it = std::find(live_.begin(), live_.end(), name);
    if (it != live_.end()) live_.erase(it);
}

void Runtime::record_failure(std::exception_ptr e) {
    std::lock_guard g(registry_mutex_);
    if (!failure_) failure_ = e;
}

void Runtime::rethrow_failure() {
    std::exception_ptr e;
    {
        std::lock_guard g(registry_mutex_);
        e = std::exchange(failure_, nullptr);
    }
    if (e) std::rethrow_exception(e);
}

namespace {

// ---- real clock --------------------------------------------------------------

class RealRuntime final : public Runtime {
public:
    RealRuntime() : start_(std::chrono::steady_clock::now()) {}
    ~RealRuntime() override {
        for (auto& t : threads_) {
            if (t.joinable()) t.join();
        }
    }

    Duration now() const override {
        return std::chrono::duration_cast<Duration>(std::chrono::steady_clock::now() - start_);
    }
    bool is_virtual() const override { return false; }

    bool wait_until(Lock& lk, const std::function<bool()>& pred, Duration deadline) override {
        if (deadline == kNoDeadline) {
            cv_.wait(lk, pred);
            return true;
        }
        return cv_.wait_until(lk, start_ + deadline, pred);
    }

    void notify() override { cv_.notify_all(); }

    void sleep_for(Duration d) override {
        if (d > Duration::zero()) std::this_thread::sleep_for(d);
    }
    void charge(Duration) override {}

    void spawn(std::string name, std::function<void()> fn) override {
        register_process(name);
        std::lock_guard g(threads_mutex_);
        threads_.emplace_back([this, name = std::move(name), fn = std::move(fn)] {
            try {
                fn();
            } catch (...) {
                record_failure(std::current_exception());
            }
            unregister_process(name);
            // a finished process may be what someone is waiting for
            { Lock lk = lock(); }
            notify();
        });
    }

    void join_all() override {
        for (;;) {
            std::vector<std::thread> batch;
            {
                std::lock_guard g(threads_mutex_);
                batch.swap(threads_);
            }
            if (batch.empty()) break;
            for (auto& t : batch) t.join();
        }
        rethrow_failure();
    }

private:
    std::chrono::steady_clock::time_point start_;
    std::condition_variable cv_;
    std::mutex threads_mutex_;
    std::vector<std::thread> threads_;
};

// ---- virtual clock -----------------------------------------------------------

class VirtualRuntime final : public Runtime {
    enum class State { runnable, waiting, done };
    struct Proc {
        std::string name;
        std::thread::id tid;
        State state = State::runnable;
        const std::function<bool()>* pred = nullptr;
        Duration deadline = kNoDeadline;
        bool go = false;
        std::condition_variable cv;
        std::thread thread;
    };

public:
    VirtualRuntime() {
        auto main = std::make_unique<Proc>();
        main->name = "main";
        main->tid = std::this_thread::get_id();
        current_ = main.get();
        procs_.push_back(std::move(main));
    }

    ~VirtualRuntime() override {
        {
            std::unique_lock s(sm_);
            bool stuck = false;
            for (auto& p : procs_) stuck |= p->thread.joinable() && p->state != State::done;
            if (stuck) poison_locked();
        }
        for (auto& p : procs_) {
            if (p->thread.joinable()) p->thread.join();
        }
    }

    // Lock-free so that wait predicates may consult the clock.
    Duration now() const override { return Duration(clock_.load()); }
    bool is_virtual() const override { return true; }

    bool wait_until(Lock& lk, const std::function<bool()>& pred, Duration deadline) override {
        if (pred()) return true;
        Proc* self = nullptr;
        {
            std::unique_lock s(sm_);
            throw_if_poisoned();
            if (deadline <= now()) return false;
            self = self_locked();
            self->state = State::waiting;
            self->pred = &pred;
            self->deadline = deadline;
        }
        lk.unlock();
        block(self);
        lk.lock();
        return pred();
    }

    void notify() override {}

    void sleep_for(Duration d) override {
        if (d <= Duration::zero()) return;
        Proc* self = nullptr;
        {
            std::unique_lock s(sm_);
            throw_if_poisoned();
            self = self_locked();
            self->state = State::waiting;
            self->pred = nullptr;
            self->deadline = now() + d;
        }
        block(self);
    }
    void charge(Duration d) override { sleep_for(d); }

    void spawn(std::string name, std::function<void()> fn) override {
        register_process(name);
        ++live_spawned_;
        std::unique_lock s(sm_);
        auto p = std::make_unique<Proc>();
        Proc* raw = p.get();
        raw->name = name;
        procs_.push_back(std::move(p));
        raw->thread = std::thread([this, raw, name = std::move(name), fn = std::move(fn)] {
            {
                std::unique_lock s2(sm_);
                raw->cv.wait(s2, [raw] { return raw->go; });
                raw->go = false;
            }
            try {
                {
                    std::unique_lock s2(sm_);
                    throw_if_poisoned();
                }
                fn();
            } catch (...) {
                record_failure(std::current_exception());
            }
            unregister_process(name);
            --live_spawned_;
            std::unique_lock s3(sm_);
            raw->state = State::done;
            if (poisoned_) return;
            if (Proc* next = pick_next_locked(raw)) hand_to_locked(next);
        });
        raw->tid = raw->thread.get_id();
    }

    void join_all() override {
        try {
            Lock lk = lock();
            wait_until(lk, [this] { return live_spawned_.load() == 0; }, kNoDeadline);
        } catch (const Error&) {
            record_failure(std::current_exception());
        }
        for (auto& p : procs_) {
            if (p->thread.joinable()) p->thread.join();
        }
        rethrow_failure();
    }

private:
    Proc* self_locked() {
        const auto id = std::this_thread::get_id();
        for (auto& p : procs_) {
            if (p->tid == id && p->state != State::done) return p.get();
        }
        throw Error("virtual runtime: calling thread is not a registered process");
    }

    bool ready_locked(const Proc& p) const {
        if (p.state == State::runnable) return true;
        if (p.state != State::waiting) return false;
        if (p.deadline <= now()) return true;
        return p.pred != nullptr && (*p.pred)();
    }

    // Chooses the next process to run, advancing the clock when nothing is
    // ready. `from` is the process giving up the token.
    Proc* pick_next_locked(Proc* from) {
        const std::size_t n = procs_.size();
        std::size_t start = 0;
        for (std::size_t i = 0; i < n; ++i) {
            if (procs_[i].get() == from) start = i + 1;
        }
        for (;;) {
            for (std::size_t j = 0; j < n; ++j) {
                Proc* p = procs_[(start + j) % n].get();
                if (ready_locked(*p)) return p;
            }
            Duration next = kNoDeadline;
            bool any_alive = false;
            for (auto& p : procs_) {
                if (p->state == State::waiting) {
                    any_alive = true;
                    next = std::min(next, p->deadline);
                }
            }
            if (!any_alive) return nullptr;
            if (next == kNoDeadline) {
                // every live process waits on a predicate nobody can satisfy
                poison_locked();
                return nullptr;
            }
            clock_.store(next.count());
        }
    }

    void hand_to_locked(Proc* next) {
        next->state = State::runnable;
        next->pred = nullptr;
        next->deadline = kNoDeadline;
        current_ = next;
        next->go = true;
        next->cv.notify_one();
    }

    void throw_if_poisoned() const {
        if (poisoned_) throw Error("virtual runtime deadlock: every process is blocked without a deadline");
    }

    // Releases every process; from here on each blocking call throws, so all
    // of them unwind concurrently.
    void poison_locked() {
        poisoned_ = true;
        for (auto& p : procs_) {
            if (p->state == State::done) continue;
            p->state = State::runnable;
            p->go = true;
            p->cv.notify_one();
        }
    }

    void block(Proc* self) {
        std::unique_lock s(sm_);
        Proc* next = pick_next_locked(self);
        if (!next) {
            self->go = false;
            throw_if_poisoned();
            return;
        }
        if (next != self) {
            hand_to_locked(next);
            self->cv.wait(s, [self] { return self->go; });
        } else {
            next->state = State::runnable;
            next->pred = nullptr;
            next->deadline = kNoDeadline;
            current_ = self;
        }
        self->go = false;
        throw_if_poisoned();
    }

    mutable std::mutex sm_;
    std::vector<std::unique_ptr<Proc>> procs_;
    Proc* current_ = nullptr;
    std::atomic<Duration::rep> clock_{0};
    std::atomic<std::size_t> live_spawned_{0};
    bool poisoned_ = false;
};

}  // namespace

std::unique_ptr<Runtime> make_real_runtime() { return std::make_unique<RealRuntime>(); }
std::unique_ptr<Runtime> make_virtual_runtime() { return std::make_unique<VirtualRuntime>(); }
std::unique_ptr<Runtime> make_runtime(bool virtual_clock) {
    return virtual_clock ? make_virtual_runtime() : make_real_runtime();
}

bool Barrier::arrive_and_wait(Lock& lk, const std::function<bool()>& abort) {
    const std::uint64_t gen = generation_;
    if (++arrived_ == parties_) {
        arrived_ = 0;
        ++generation_;
        rt_.notify();
        return true;
    }
    rt_.wait_until(lk, [&] { return generation_ != gen || abort(); });
    if (generation_ != gen) return true;
    --arrived_;
    return false;
}

}  // namespace arl
