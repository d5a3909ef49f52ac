// Copyright 2026 The robustfed Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef ROBUSTFED_PARALLEL_HPP
#define ROBUSTFED_PARALLEL_HPP

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace robustfed
{

//------------------------------------------------------------------------------
/// Number of worker threads to use when the caller passes 0.
inline std::size_t defaultThreads()
{
    auto n = std::thread::hardware_concurrency();
    return n == 0 ? 1 : n;
}

//------------------------------------------------------------------------------
/// Runs fn(i) for i in [0, n) on up to `threads` workers. Work items must not
/// depend on each other; results are written by index, so scheduling never
/// affects the output. The first exception thrown is rethrown on the caller.
//------------------------------------------------------------------------------
template <typename Fn>
void parallelFor(std::size_t n, std::size_t threads, Fn&& fn)
{
    if (threads == 0)
        threads = defaultThreads();
    threads = std::min(threads, n);
    if (threads <= 1)
    {
        for (std::size_t i = 0; i < n; ++i)
            fn(i);
        return;
    }

    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex errorMutex;
    auto worker = [&]
    {
        for (;;)
        {
            std::size_t i = next.fetch_add(1);
            if (i >= n)
                return;
            try
            {
                fn(i);
            }
            catch (...)
            {
                std::lock_guard<std::mutex> lock(errorMutex);
                if (!error)
                    error = std::current_exception();
                next.store(n);
            }
        }
    };

    std::vector<std::thread> pool;
    pool.reserve(threads);
    for (std::size_t t = 0; t < threads; ++t)
        pool.emplace_back(worker);
    for (auto& t : pool)
        t.join();
    if (error)
        std::rethrow_exception(error);
}

} // namespace robustfed

#endif // ROBUSTFED_PARALLEL_HPP
