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

#ifndef ROBUSTFED_RNG_HPP
#define ROBUSTFED_RNG_HPP

#include <cstdint>
#include <initializer_list>
#include <random>

namespace robustfed
{

using Rng = std::mt19937_64;

//------------------------------------------------------------------------------
// Stream tags. Every random consumer draws from its own stream derived from
// (experiment seed, tag, indices), so results do not depend on the order in
// which clients or ablation cells are scheduled.
//------------------------------------------------------------------------------
namespace stream
{
inline constexpr std::uint64_t data      = 0x6461746100000001ull;
inline constexpr std::uint64_t split     = 0x73706c6900000002ull;
inline constexpr std::uint64_t partition = 0x7061727400000003ull;
inline constexpr std::uint64_t noise     = 0x6e6f697300000004ull;
inline constexpr std::uint64_t annotator = 0x616e6e6f00000005ull;
inline constexpr std::uint64_t init      = 0x696e697400000006ull;
inline constexpr std::uint64_t local     = 0x6c6f636100000007ull;
inline constexpr std::uint64_t gmm       = 0x676d6d0000000008ull;
} // namespace stream

//------------------------------------------------------------------------------
inline std::uint64_t splitmix64(std::uint64_t x)
{
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

//------------------------------------------------------------------------------
inline std::uint64_t deriveSeed(std::uint64_t seed,
                                std::initializer_list<std::uint64_t> tags)
{
    std::uint64_t h = splitmix64(seed);
    for (auto t : tags)
        h = splitmix64(h ^ splitmix64(t));
    return h;
}

//------------------------------------------------------------------------------
inline Rng makeRng(std::uint64_t seed,
                   std::initializer_list<std::uint64_t> tags = {})
{
    return Rng(deriveSeed(seed, tags));
}

//------------------------------------------------------------------------------
/// Uniform draw on [lo, hi); returns lo when the interval is degenerate.
inline double uniform(Rng& rng, double lo, double hi)
{
    if (!(hi > lo))
        return lo;
    return std::uniform_real_distribution<double>(lo, hi)(rng);
}

} // namespace robustfed

#endif // ROBUSTFED_RNG_HPP
