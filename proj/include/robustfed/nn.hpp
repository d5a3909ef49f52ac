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

#ifndef ROBUSTFED_NN_HPP
#define ROBUSTFED_NN_HPP

// Small differentiable classifiers with hand-written gradients.
//
// Two architectures share one flat parameter layout:
//
//   linear (hiddenDim == 0):  [ W (C x D, row-major) | b (C) ]
//   mlp    (hiddenDim == H):  [ W1 (H x D) | b1 (H) | W2 (C x H) | b2 (C) ]
//
// The MLP uses a tanh hidden layer so every loss is smooth in the
// parameters.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "errors.hpp"
#include "rng.hpp"

namespace robustfed
{

//------------------------------------------------------------------------------
struct Arch
{
    std::size_t inputDim = 0;
    std::size_t hiddenDim = 0; // 0 selects the linear-softmax model
    std::size_t classes = 0;

    bool isLinear() const {return hiddenDim == 0;}

    std::size_t paramCount() const
    {
        if (isLinear())
            return classes * inputDim + classes;
        return hiddenDim * inputDim + hiddenDim + classes * hiddenDim + classes;
    }

    bool operator==(const Arch&) const = default;
};

//------------------------------------------------------------------------------
/// Flat parameter vector plus the architecture it belongs to. This is the
/// unit exchanged between clients and the server.
//------------------------------------------------------------------------------
struct ModelParams
{
    Arch arch;
    std::vector<double> values;

    ModelParams() = default;

    explicit ModelParams(const Arch& a)
        : arch(a), values(a.paramCount(), 0.0)
    {}

    ModelParams(const Arch& a, std::vector<double> v)
        : arch(a), values(std::move(v))
    {
        if (values.size() != arch.paramCount())
            throw ConfigError("parameter vector length " +
                              std::to_string(values.size()) +
                              " does not match architecture (" +
                              std::to_string(arch.paramCount()) + ")");
    }

    std::size_t size() const {return values.size();}

    bool isFinite() const
    {
        return std::all_of(values.begin(), values.end(),
                           [](double v) {return std::isfinite(v);});
    }

    bool operator==(const ModelParams&) const = default;
};

//------------------------------------------------------------------------------
inline double l2Distance(const ModelParams& a, const ModelParams& b)
{
    if (!(a.arch == b.arch))
        throw ConfigError("cannot compare parameters of different architectures");
    double s = 0.0;
    for (std::size_t i = 0; i < a.values.size(); ++i)
    {
        double d = a.values[i] - b.values[i];
        s += d * d;
    }
    return std::sqrt(s);
}

//------------------------------------------------------------------------------
/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases.
inline ModelParams initParams(const Arch& arch, Rng& rng)
{
    ModelParams p(arch);
    auto fill = [&](std::size_t offset, std::size_t count, std::size_t fanIn)
    {
        double bound = 1.0 / std::sqrt(static_cast<double>(fanIn));
        std::uniform_real_distribution<double> u(-bound, bound);
        for (std::size_t i = 0; i < count; ++i)
            p.values[offset + i] = u(rng);
    };
    const auto D = arch.inputDim, H = arch.hiddenDim, C = arch.classes;
    if (arch.isLinear())
    {
        fill(0, C * D, D);
    }
    else
    {
        fill(0, H * D, D);
        fill(H * D + H, C * H, H);
    }
    return p;
}

//------------------------------------------------------------------------------
/// Per-client label distribution used for logit adjustment. Entries are
/// strictly positive so log(pi) is always finite.
//------------------------------------------------------------------------------
struct ClassPrior
{
    static constexpr double smoothing = 1e-8;

    std::vector<double> pi;

    static ClassPrior uniform(std::size_t classes)
    {
        return {std::vector<double>(classes, 1.0 / static_cast<double>(classes))};
    }

    static ClassPrior fromCounts(std::span<const std::size_t> counts)
    {
        ClassPrior p;
        double total = 0.0;
        for (auto c : counts)
            total += static_cast<double>(c);
        p.pi.resize(counts.size());
        if (total == 0.0)
            return uniform(counts.size());
        double norm = 0.0;
        for (std::size_t c = 0; c < counts.size(); ++c)
        {
            double v = static_cast<double>(counts[c]) / total;
            p.pi[c] = v > 0.0 ? v : smoothing;
            norm += p.pi[c];
        }
        for (auto& v : p.pi)
            v /= norm;
        return p;
    }

    std::vector<double> logPrior() const
    {
        std::vector<double> out(pi.size());
        for (std::size_t c = 0; c < pi.size(); ++c)
            out[c] = std::log(pi[c]);
        return out;
    }
};

//------------------------------------------------------------------------------
struct BatchItem
{
    std::span<const double> x;
    std::size_t label = 0;
};

using Batch = std::vector<BatchItem>;

//------------------------------------------------------------------------------
struct LossConfig
{
    double temperature = 0.8;
    double lambdaMax = 0.8;
    int rampLength = 90;
    bool laEnabled = true;

    void validate() const
    {
        if (!(temperature > 0.0) || !std::isfinite(temperature))
            throw ConfigError("temperature must be positive",
                              ConfigErrc::outOfRange);
        if (!(lambdaMax >= 0.0 && lambdaMax <= 1.0))
            throw ConfigError("lambda_max must lie in [0, 1]",
                              ConfigErrc::outOfRange);
        if (rampLength < 1)
            throw ConfigError("ramp_length must be >= 1",
                              ConfigErrc::outOfRange);
    }
};

//------------------------------------------------------------------------------
struct LossResult
{
    double loss = 0.0;
    std::vector<double> grad;
};

namespace detail
{

inline void checkInput(const Arch& arch, std::span<const double> x)
{
    if (x.size() != arch.inputDim)
        throw ConfigError("feature dimension " + std::to_string(x.size()) +
                          " does not match model input dimension " +
                          std::to_string(arch.inputDim));
}

inline double logSumExp(std::span<const double> z)
{
    double m = *std::max_element(z.begin(), z.end());
    double s = 0.0;
    for (double v : z)
        s += std::exp(v - m);
    return m + std::log(s);
}

// Writes hidden activations (MLP only) and logits.
inline void forwardInto(const ModelParams& p, std::span<const double> x,
                        std::vector<double>& hidden, std::vector<double>& logits)
{
    const auto D = p.arch.inputDim, H = p.arch.hiddenDim, C = p.arch.classes;
    const double* w = p.values.data();
    logits.assign(C, 0.0);
    if (p.arch.isLinear())
    {
        const double* b = w + C * D;
        for (std::size_t c = 0; c < C; ++c)
        {
            double s = b[c];
            const double* row = w + c * D;
            for (std::size_t d = 0; d < D; ++d)
                s += row[d] * x[d];
            logits[c] = s;
        }
        return;
    }
    const double* b1 = w + H * D;
    const double* w2 = b1 + H;
    const double* b2 = w2 + C * H;
    hidden.resize(H);
    for (std::size_t h = 0; h < H; ++h)
    {
        double s = b1[h];
        const double* row = w + h * D;
        for (std::size_t d = 0; d < D; ++d)
            s += row[d] * x[d];
        hidden[h] = std::tanh(s);
    }
    for (std::size_t c = 0; c < C; ++c)
    {
        double s = b2[c];
        const double* row = w2 + c * H;
        for (std::size_t h = 0; h < H; ++h)
            s += row[h] * hidden[h];
        logits[c] = s;
    }
}

// Accumulates d(loss)/d(params) for one sample given d(loss)/d(logits).
inline void backwardInto(const ModelParams& p, std::span<const double> x,
                         const std::vector<double>& hidden,
                         const std::vector<double>& dz,
                         std::vector<double>& grad,
                         std::vector<double>& scratch)
{
    const auto D = p.arch.inputDim, H = p.arch.hiddenDim, C = p.arch.classes;
    double* g = grad.data();
    if (p.arch.isLinear())
    {
        double* gb = g + C * D;
        for (std::size_t c = 0; c < C; ++c)
        {
            double* row = g + c * D;
            for (std::size_t d = 0; d < D; ++d)
                row[d] += dz[c] * x[d];
            gb[c] += dz[c];
        }
        return;
    }
    const double* w2 = p.values.data() + H * D + H;
    double* gb1 = g + H * D;
    double* gw2 = gb1 + H;
    double* gb2 = gw2 + C * H;
    scratch.assign(H, 0.0);
    for (std::size_t c = 0; c < C; ++c)
    {
        double* grow = gw2 + c * H;
        const double* wrow = w2 + c * H;
        for (std::size_t h = 0; h < H; ++h)
        {
            grow[h] += dz[c] * hidden[h];
            scratch[h] += wrow[h] * dz[c];
        }
        gb2[c] += dz[c];
    }
    for (std::size_t h = 0; h < H; ++h)
    {
        double da = scratch[h] * (1.0 - hidden[h] * hidden[h]);
        double* row = g + h * D;
        for (std::size_t d = 0; d < D; ++d)
            row[d] += da * x[d];
        gb1[h] += da;
    }
}

// Shared driver for every batch loss. `perSample(i, logits, dz)` returns the
// sample's loss and fills dz with d(loss_i)/d(logits).
template <typename PerSample>
LossResult batchLoss(const ModelParams& p, const Batch& batch,
                     PerSample&& perSample)
{
    if (batch.empty())
        throw UsageError("loss evaluated on an empty batch");
    LossResult r;
    r.grad.assign(p.size(), 0.0);
    std::vector<double> hidden, logits, dz, scratch;
    dz.resize(p.arch.classes);
    double total = 0.0;
    for (std::size_t i = 0; i < batch.size(); ++i)
    {
        const auto& item = batch[i];
        checkInput(p.arch, item.x);
        if (item.label >= p.arch.classes)
            throw UsageError("label " + std::to_string(item.label) +
                             " out of range");
        forwardInto(p, item.x, hidden, logits);
        total += perSample(i, logits, dz);
        backwardInto(p, item.x, hidden, dz, r.grad, scratch);
    }
    const double n = static_cast<double>(batch.size());
    r.loss = total / n;
    for (auto& v : r.grad)
        v /= n;
    return r;
}

// Cross-entropy on (logits + shift); writes softmax - onehot into dz.
inline double shiftedCrossEntropy(const std::vector<double>& logits,
                                  const std::vector<double>* shift,
                                  std::size_t label, std::vector<double>& dz)
{
    const auto C = logits.size();
    dz = logits;
    if (shift)
        for (std::size_t c = 0; c < C; ++c)
            dz[c] += (*shift)[c];
    double lse = logSumExp(dz);
    double loss = lse - dz[label];
    for (std::size_t c = 0; c < C; ++c)
        dz[c] = std::exp(dz[c] - lse);
    dz[label] -= 1.0;
    return loss;
}

} // namespace detail

//------------------------------------------------------------------------------
/// Raw logits of the model for one feature vector.
inline std::vector<double> forward(const ModelParams& params,
                                   std::span<const double> x)
{
    detail::checkInput(params.arch, x);
    std::vector<double> hidden, logits;
    detail::forwardInto(params, x, hidden, logits);
    return logits;
}

//------------------------------------------------------------------------------
/// Index of the largest raw logit; ties resolve to the lowest index.
inline std::size_t predict(const ModelParams& params, std::span<const double> x)
{
    auto z = forward(params, x);
    return static_cast<std::size_t>(
        std::distance(z.begin(), std::max_element(z.begin(), z.end())));
}

//------------------------------------------------------------------------------
/// Temperature-scaled softmax, stabilized by subtracting the max logit.
inline std::vector<double> softmaxT(std::span<const double> logits,
                                    double temperature = 1.0)
{
    if (!(temperature > 0.0))
        throw UsageError("softmax temperature must be positive");
    for (double v : logits)
        if (!std::isfinite(v))
            throw NumericError("non-finite logit passed to softmax");
    std::vector<double> out(logits.size());
    double m = *std::max_element(logits.begin(), logits.end());
    double s = 0.0;
    for (std::size_t c = 0; c < logits.size(); ++c)
    {
        out[c] = std::exp((logits[c] - m) / temperature);
        s += out[c];
    }
    for (auto& v : out)
        v /= s;
    return out;
}

//------------------------------------------------------------------------------
/// Mean cross-entropy over the batch. With `laEnabled` the softmax is taken
/// over logits + log(prior) (logit adjustment); otherwise over raw logits.
/// The gradient excludes weight decay, which the optimizer applies.
//------------------------------------------------------------------------------
inline LossResult ceLoss(const ModelParams& params, const Batch& batch,
                         const ClassPrior& prior, bool laEnabled)
{
    std::vector<double> shift;
    if (laEnabled)
    {
        if (prior.pi.size() != params.arch.classes)
            throw ConfigError("class prior length does not match class count");
        shift = prior.logPrior();
    }
    const std::vector<double>* s = laEnabled ? &shift : nullptr;
    return detail::batchLoss(
        params, batch,
        [&](std::size_t i, const std::vector<double>& z, std::vector<double>& dz)
        {return detail::shiftedCrossEntropy(z, s, batch[i].label, dz);});
}

//------------------------------------------------------------------------------
/// Distillation loss  lambda * KL(y_G || y_p) + (1 - lambda) * CE(y_p, label)
///
/// y_G = softmax(teacher / T) is the softened target from the frozen global
/// model; the student distribution y_p is taken at temperature 1. Logit
/// adjustment (when enabled) applies to the CE term only.
//------------------------------------------------------------------------------
inline LossResult kdLoss(const ModelParams& params, const Batch& batch,
                         std::span<const std::vector<double>> teacherLogits,
                         double lambda, double temperature,
                         const ClassPrior& prior, bool laEnabled)
{
    if (!(lambda >= 0.0 && lambda <= 1.0))
        throw UsageError("distillation weight lambda must lie in [0, 1]");
    if (!(temperature > 0.0))
        throw UsageError("distillation temperature must be positive");
    if (teacherLogits.size() != batch.size())
        throw UsageError("teacher logits do not cover the batch");
    std::vector<double> shift;
    if (laEnabled)
    {
        if (prior.pi.size() != params.arch.classes)
            throw ConfigError("class prior length does not match class count");
        shift = prior.logPrior();
    }
    const std::vector<double>* s = laEnabled ? &shift : nullptr;
    const double mix = 1.0 - lambda;
    std::vector<double> ce;
    return detail::batchLoss(
        params, batch,
        [&](std::size_t i, const std::vector<double>& z, std::vector<double>& dz)
        {
            const auto& t = teacherLogits[i];
            const auto C = z.size();
            if (t.size() != C)
                throw UsageError("teacher logit width does not match classes");
            double ceLossValue = detail::shiftedCrossEntropy(z, s, batch[i].label, ce);

            std::vector<double> scaled(C);
            for (std::size_t c = 0; c < C; ++c)
                scaled[c] = t[c] / temperature;
            const double lseT = detail::logSumExp(scaled);
            const double lseS = detail::logSumExp(z);
            double kl = 0.0;
            for (std::size_t c = 0; c < C; ++c)
            {
                double logTarget = scaled[c] - lseT;
                double target = std::exp(logTarget);
                double logStudent = z[c] - lseS;
                if (target > 0.0)
                    kl += target * (logTarget - logStudent);
                dz[c] = lambda * (std::exp(logStudent) - target) + mix * ce[c];
            }
            return lambda * kl + mix * ceLossValue;
        });
}

//------------------------------------------------------------------------------
/// Gaussian ramp-up of the distillation weight:
///   lambda_max * exp(-5 (1 - min(t, R) / R)^2)
//------------------------------------------------------------------------------
inline double lambdaSchedule(int roundInStage2, const LossConfig& cfg)
{
    const double R = static_cast<double>(cfg.rampLength);
    const double t = std::min(static_cast<double>(std::max(roundInStage2, 0)), R);
    const double phase = 1.0 - t / R;
    return cfg.lambdaMax * std::exp(-5.0 * phase * phase);
}

//------------------------------------------------------------------------------
struct AdamConfig
{
    double lr = 3e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weightDecay = 5e-4;
    std::size_t batchSize = 16;

    void validate() const
    {
        if (!(lr > 0.0))
            throw ConfigError("learning rate must be positive", ConfigErrc::outOfRange);
        if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
            throw ConfigError("Adam betas must lie in [0, 1)", ConfigErrc::outOfRange);
        if (!(weightDecay >= 0.0))
            throw ConfigError("weight decay must be nonnegative", ConfigErrc::outOfRange);
        if (batchSize < 1)
            throw ConfigError("batch size must be >= 1", ConfigErrc::outOfRange);
    }
};

struct OptimizerState
{
    std::vector<double> firstMoment;
    std::vector<double> secondMoment;
    std::size_t stepCount = 0;

    OptimizerState() = default;
    explicit OptimizerState(std::size_t n) : firstMoment(n, 0.0), secondMoment(n, 0.0) {}
};

//------------------------------------------------------------------------------
/// One Adam update with bias correction. Weight decay is coupled L2: it is
/// added to the gradient before the moment updates.
//------------------------------------------------------------------------------
inline void adamStep(std::span<double> params, std::span<const double> grad,
                     OptimizerState& state, const AdamConfig& cfg)
{
    if (grad.size() != params.size())
        throw UsageError("gradient length does not match parameters");
    if (state.firstMoment.size() != params.size())
        state = OptimizerState(params.size());
    for (double g : grad)
        if (!std::isfinite(g))
            throw NumericError("non-finite gradient entry");

    ++state.stepCount;
    const double t = static_cast<double>(state.stepCount);
    const double c1 = 1.0 - std::pow(cfg.beta1, t);
    const double c2 = 1.0 - std::pow(cfg.beta2, t);
    for (std::size_t i = 0; i < params.size(); ++i)
    {
        double g = grad[i] + cfg.weightDecay * params[i];
        double& m = state.firstMoment[i];
        double& v = state.secondMoment[i];
        m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
        v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g;
        params[i] -= cfg.lr * (m / c1) / (std::sqrt(v / c2) + cfg.eps);
    }
}

} // namespace robustfed

#endif // ROBUSTFED_NN_HPP
