#pragma once

// Chunked parallel loops with static, dynamic and guided work assignment.

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <functional>
#include <mutex>
#include <string_view>
#include <thread>
#include <vector>

#include "abt/core.hpp"

namespace abt {

enum class Schedule { Static, Dynamic, Guided };

inline std::string_view to_string(Schedule s) {
    switch (s) {
        case Schedule::Static: return "static";
        case Schedule::Dynamic: return "dynamic";
        case Schedule::Guided: return "guided";
    }
    return "?";
}

inline Schedule parse_schedule(std::string_view s) {
    if (s == "static") return Schedule::Static;
    if (s == "dynamic") return Schedule::Dynamic;
    if (s == "guided") return Schedule::Guided;
    throw Error("unknown schedule: " + std::string(s));
}

struct ScheduleSpec {
    Schedule kind = Schedule::Static;
    // Dynamic: fixed chunk size. Guided: lower bound on chunk size.
    std::size_t chunk = 64;
};

/// A contiguous half-open range of loop indices handed to one worker.
struct Chunk {
    std::size_t begin = 0;
    std::size_t end = 0;
};

namespace detail {

// Hands out chunks in a deterministic sequence; only the mapping of chunks
// to workers depends on timing.
class ChunkDispenser {
  public:
    ChunkDispenser(std::size_t n, unsigned workers, ScheduleSpec spec)
        : n_(n), workers_(std::max(1u, workers)), spec_(spec) {
        spec_.chunk = std::max<std::size_t>(1, spec_.chunk);
    }

    bool next(Chunk& out) {
        std::lock_guard lock(mutex_);
        if (next_ >= n_) return false;
        const std::size_t remaining = n_ - next_;
        std::size_t len = spec_.chunk;
        if (spec_.kind == Schedule::Guided)
            len = std::max(spec_.chunk, (remaining + 2 * workers_ - 1) / (2 * workers_));
        len = std::min(len, remaining);
        out = {next_, next_ + len};
        next_ += len;
        return true;
    }

  private:
    std::size_t n_;
    unsigned workers_;
    ScheduleSpec spec_;
    std::size_t next_ = 0;
    std::mutex mutex_;
};

}  // namespace detail

/// Calls body(chunk, worker) over a partition of [0, n). With one worker
/// (or n == 0) everything runs on the calling thread. Exceptions thrown by
/// a body are rethrown on the caller after all workers join.
inline void parallel_for(std::size_t n, unsigned workers, ScheduleSpec spec,
                         const std::function<void(Chunk, unsigned)>& body) {
    workers = std::max(1u, workers);
    if (n == 0) return;
    if (workers == 1 && spec.kind == Schedule::Static) {
        body({0, n}, 0);
        return;
    }

    std::exception_ptr failure;
    std::mutex failure_mutex;
    auto guarded = [&](auto&& fn) {
        try {
            fn();
        } catch (...) {
            std::lock_guard lock(failure_mutex);
            if (!failure) failure = std::current_exception();
        }
    };

    if (spec.kind == Schedule::Static) {
        std::vector<std::jthread> pool;
        pool.reserve(workers);
        for (unsigned w = 0; w < workers; ++w) {
            const std::size_t lo = n * w / workers;
            const std::size_t hi = n * (w + 1) / workers;
            if (lo == hi) continue;
            pool.emplace_back([&, lo, hi, w] { guarded([&] { body({lo, hi}, w); }); });
        }
    } else {
        detail::ChunkDispenser dispenser(n, workers, spec);
        auto run = [&](unsigned w) {
            guarded([&] {
                Chunk c;
                while (dispenser.next(c)) body(c, w);
            });
        };
        if (workers == 1) {
            run(0);
        } else {
            std::vector<std::jthread> pool;
            pool.reserve(workers);
            for (unsigned w = 0; w < workers; ++w) pool.emplace_back(run, w);
        }
    }
    if (failure) std::rethrow_exception(failure);
}

}  // namespace abt
