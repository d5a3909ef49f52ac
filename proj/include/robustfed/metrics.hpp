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

#ifndef ROBUSTFED_METRICS_HPP
#define ROBUSTFED_METRICS_HPP

#include <algorithm>
#include <cstdint>
#include <span>
#include <vector>

#include "data.hpp"
#include "errors.hpp"
#include "nn.hpp"

namespace robustfed
{

//------------------------------------------------------------------------------
/// Rows are true classes, columns predicted classes.
struct ConfusionMatrix
{
    std::size_t classes = 0;
    std::vector<std::vector<std::uint64_t>> counts;

    ConfusionMatrix() = default;
    explicit ConfusionMatrix(std::size_t c)
        : classes(c), counts(c, std::vector<std::uint64_t>(c, 0))
    {}

    void add(std::size_t truth, std::size_t predicted, std::uint64_t n = 1)
    {
        counts.at(truth).at(predicted) += n;
    }

    std::uint64_t total() const
    {
        std::uint64_t t = 0;
        for (const auto& r : counts)
            for (auto v : r)
                t += v;
        return t;
    }

    bool operator==(const ConfusionMatrix&) const = default;
};

//------------------------------------------------------------------------------
/// Balanced accuracy: mean per-class recall over classes that occur.
inline double bacc(const ConfusionMatrix& cm)
{
    double sum = 0.0;
    std::size_t represented = 0;
    for (std::size_t c = 0; c < cm.classes; ++c)
    {
        std::uint64_t row = 0;
        for (auto v : cm.counts[c])
            row += v;
        if (row == 0)
            continue;
        sum += static_cast<double>(cm.counts[c][c]) / static_cast<double>(row);
        ++represented;
    }
    if (represented == 0)
        throw UsageError("balanced accuracy of an empty confusion matrix");
    return sum / static_cast<double>(represented);
}

//------------------------------------------------------------------------------
struct EvalResult
{
    ConfusionMatrix confusion;
    double bacc = 0.0;
};

/// Argmax of raw logits (no logit adjustment), lowest index on ties.
inline EvalResult evaluate(const ModelParams& params, std::span<const Sample> test)
{
    EvalResult r{ConfusionMatrix(params.arch.classes), 0.0};
    for (const auto& s : test)
        r.confusion.add(s.label, predict(params, s.x));
    r.bacc = bacc(r.confusion);
    return r;
}

} // namespace robustfed

#endif // ROBUSTFED_METRICS_HPP
