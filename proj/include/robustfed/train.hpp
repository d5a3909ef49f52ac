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

#ifndef ROBUSTFED_TRAIN_HPP
#define ROBUSTFED_TRAIN_HPP

#include <algorithm>
#include <numeric>
#include <span>
#include <vector>

#include "nn.hpp"
#include "rng.hpp"

namespace robustfed
{

//------------------------------------------------------------------------------
/// Minibatch Adam over `sampleCount` items for `epochs` passes, reshuffling
/// each epoch. `lossOn(indices)` evaluates the loss and gradient on the
/// selected samples. A fresh optimizer state is used for every call.
///
/// Returns the sample-weighted mean loss of each epoch, measured on the fly
/// before each step.
//------------------------------------------------------------------------------
template <typename LossOn>
std::vector<double> trainMinibatch(ModelParams& params, std::size_t sampleCount,
                                   std::size_t epochs, const AdamConfig& cfg,
                                   Rng& rng, LossOn&& lossOn)
{
    std::vector<double> trace;
    if (sampleCount == 0)
        return trace;
    OptimizerState state(params.size());
    std::vector<std::size_t> order(sampleCount);
    std::iota(order.begin(), order.end(), std::size_t{0});
    const std::size_t bs = std::max<std::size_t>(cfg.batchSize, 1);
    for (std::size_t e = 0; e < epochs; ++e)
    {
        std::shuffle(order.begin(), order.end(), rng);
        double total = 0.0;
        for (std::size_t start = 0; start < sampleCount; start += bs)
        {
            std::size_t stop = std::min(start + bs, sampleCount);
            std::span<const std::size_t> idx(order.data() + start, stop - start);
            LossResult r = lossOn(idx);
            total += r.loss * static_cast<double>(idx.size());
            adamStep(params.values, r.grad, state, cfg);
        }
        trace.push_back(total / static_cast<double>(sampleCount));
    }
    return trace;
}

} // namespace robustfed

#endif // ROBUSTFED_TRAIN_HPP
