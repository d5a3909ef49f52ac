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

#ifndef ROBUSTFED_DATA_HPP
#define ROBUSTFED_DATA_HPP

// Synthetic class-imbalanced data, heterogeneous client partitioning, and
// instance-dependent label-noise injection driven by per-client annotator
// networks.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "errors.hpp"
#include "nn.hpp"
#include "parallel.hpp"
#include "rng.hpp"
#include "train.hpp"

namespace robustfed
{

//------------------------------------------------------------------------------
struct Sample
{
    std::vector<double> x;
    std::size_t label = 0;

    bool operator==(const Sample&) const = default;
};

//------------------------------------------------------------------------------
struct GlobalDataset
{
    std::size_t classes = 0;
    std::size_t featureDim = 0;
    std::vector<std::size_t> classProfile; // per-class counts, train + test
    std::vector<Sample> train;
    std::vector<Sample> test;

    std::size_t size() const {return train.size() + test.size();}

    bool operator==(const GlobalDataset&) const = default;
};

//------------------------------------------------------------------------------
/// Geometric long-tailed profile: class c gets round(maxCount * ratio^(-c/(C-1)))
/// samples, so the head/tail ratio is `imbalanceRatio`.
inline std::vector<std::size_t> longTailedCounts(std::size_t classes,
                                                 std::size_t maxCount,
                                                 double imbalanceRatio)
{
    if (classes < 2)
        throw ConfigError("long-tailed profile needs at least 2 classes",
                          ConfigErrc::outOfRange);
    if (!(imbalanceRatio >= 1.0))
        throw ConfigError("imbalance ratio must be >= 1", ConfigErrc::outOfRange);
    std::vector<std::size_t> counts(classes);
    for (std::size_t c = 0; c < classes; ++c)
    {
        double e = static_cast<double>(c) / static_cast<double>(classes - 1);
        counts[c] = static_cast<std::size_t>(
            std::llround(static_cast<double>(maxCount) * std::pow(imbalanceRatio, -e)));
    }
    return counts;
}

//------------------------------------------------------------------------------
/// Draws one isotropic Gaussian blob per class (mean ~ N(0, I), samples
/// ~ N(mean, spread^2 I)) and splits every class 70/30 into train and test.
//------------------------------------------------------------------------------
inline GlobalDataset generateGlobal(std::size_t classes,
                                    const std::vector<std::size_t>& perClassCounts,
                                    std::size_t featureDim, double blobSpread,
                                    std::uint64_t seed)
{
    if (perClassCounts.size() != classes)
        throw ConfigError("class profile length must equal the class count");
    if (featureDim == 0)
        throw ConfigError("feature dimension must be positive", ConfigErrc::outOfRange);
    if (!(blobSpread > 0.0))
        throw ConfigError("blob spread must be positive", ConfigErrc::outOfRange);
    auto nonEmpty = std::count_if(perClassCounts.begin(), perClassCounts.end(),
                                  [](std::size_t n) {return n > 0;});
    if (nonEmpty < 2)
        throw ConfigError("dataset needs at least two nonempty classes");

    GlobalDataset ds;
    ds.classes = classes;
    ds.featureDim = featureDim;
    ds.classProfile = perClassCounts;

    Rng rng = makeRng(seed, {stream::data});
    Rng splitRng = makeRng(seed, {stream::split});
    std::normal_distribution<double> normal(0.0, 1.0);

    std::vector<std::vector<double>> means(classes, std::vector<double>(featureDim));
    for (auto& m : means)
        for (auto& v : m)
            v = normal(rng);

    for (std::size_t c = 0; c < classes; ++c)
    {
        std::vector<Sample> cls(perClassCounts[c]);
        for (auto& s : cls)
        {
            s.label = c;
            s.x.resize(featureDim);
            for (std::size_t d = 0; d < featureDim; ++d)
                s.x[d] = means[c][d] + blobSpread * normal(rng);
        }
        std::shuffle(cls.begin(), cls.end(), splitRng);
        auto nTrain = static_cast<std::size_t>(
            std::llround(0.7 * static_cast<double>(cls.size())));
        for (std::size_t i = 0; i < cls.size(); ++i)
            (i < nTrain ? ds.train : ds.test).push_back(std::move(cls[i]));
    }
    return ds;
}

//------------------------------------------------------------------------------
struct PartitionConfig
{
    std::size_t clients = 20;
    double dirichletAlpha = 2.0;
    double bernoulliP = 0.9;
    std::uint64_t seed = 0;

    void validate() const
    {
        if (clients < 1)
            throw ConfigError("client count must be >= 1", ConfigErrc::outOfRange);
        if (!(dirichletAlpha > 0.0))
            throw ConfigError("dirichlet_alpha must be positive", ConfigErrc::outOfRange);
        if (!(bernoulliP > 0.0 && bernoulliP <= 1.0))
            throw ConfigError("bernoulli_p must lie in (0, 1]", ConfigErrc::outOfRange);
    }
};

//------------------------------------------------------------------------------
struct ClientSample
{
    std::vector<double> x;
    std::size_t observed = 0;
    std::size_t clean = 0;
    bool flipped = false;

    bool operator==(const ClientSample&) const = default;
};

//------------------------------------------------------------------------------
struct ClientDataset
{
    std::size_t clientId = 0;
    std::size_t classes = 0;
    std::vector<ClientSample> samples;
    ClassPrior prior;
    bool noisyTruth = false;
    double noiseRate = 0.0; // eta_i drawn for noisy clients, 0 otherwise

    std::size_t size() const {return samples.size();}
    bool empty() const {return samples.empty();}

    std::vector<std::size_t> observedCounts() const
    {
        std::vector<std::size_t> counts(classes, 0);
        for (const auto& s : samples)
            ++counts[s.observed];
        return counts;
    }

    std::size_t flippedCount() const
    {
        return static_cast<std::size_t>(std::count_if(
            samples.begin(), samples.end(), [](const ClientSample& s) {return s.flipped;}));
    }

    void refreshPrior()
    {
        auto counts = observedCounts();
        prior = ClassPrior::fromCounts(counts);
    }

    /// Samples paired with their observed labels.
    Batch observedBatch() const
    {
        Batch b;
        b.reserve(samples.size());
        for (const auto& s : samples)
            b.push_back({s.x, s.observed});
        return b;
    }

    Batch cleanBatch() const
    {
        Batch b;
        b.reserve(samples.size());
        for (const auto& s : samples)
            b.push_back({s.x, s.clean});
        return b;
    }

    bool operator==(const ClientDataset& o) const
    {
        return clientId == o.clientId && classes == o.classes &&
               samples == o.samples && prior.pi == o.prior.pi &&
               noisyTruth == o.noisyTruth && noiseRate == o.noiseRate;
    }
};

namespace detail
{

// Largest-remainder apportionment of `total` items by `weights`; ties in the
// fractional part go to the lower index.
inline std::vector<std::size_t> apportion(std::size_t total,
                                          const std::vector<double>& weights)
{
    double sum = std::accumulate(weights.begin(), weights.end(), 0.0);
    std::vector<std::size_t> out(weights.size(), 0);
    if (weights.empty())
        return out;
    std::vector<double> frac(weights.size());
    std::size_t assigned = 0;
    for (std::size_t i = 0; i < weights.size(); ++i)
    {
        double q = sum > 0.0 ? static_cast<double>(total) * weights[i] / sum
                             : static_cast<double>(total) / static_cast<double>(weights.size());
        out[i] = static_cast<std::size_t>(std::floor(q));
        frac[i] = q - std::floor(q);
        assigned += out[i];
    }
    std::vector<std::size_t> order(weights.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) {return frac[a] > frac[b];});
    for (std::size_t k = 0; assigned < total; ++k, ++assigned)
        ++out[order[k % order.size()]];
    while (assigned > total) // guard against floating overshoot
    {
        auto it = std::max_element(out.begin(), out.end());
        --*it;
        --assigned;
    }
    return out;
}

// Bernoulli ownership matrix with all-zero rows and columns redrawn.
inline std::vector<std::vector<bool>> ownershipMatrix(std::size_t K, std::size_t C,
                                                      double p, Rng& rng)
{
    std::bernoulli_distribution coin(p);
    std::vector<std::vector<bool>> phi(K, std::vector<bool>(C));
    for (auto& row : phi)
        for (std::size_t c = 0; c < C; ++c)
            row[c] = coin(rng);

    constexpr int maxRetries = 100;
    for (int attempt = 0;; ++attempt)
    {
        bool ok = true;
        for (auto& row : phi)
        {
            if (std::none_of(row.begin(), row.end(), [](bool b) {return b;}))
            {
                ok = false;
                for (std::size_t c = 0; c < C; ++c)
                    row[c] = coin(rng);
            }
        }
        for (std::size_t c = 0; c < C; ++c)
        {
            bool any = false;
            for (const auto& row : phi)
                any = any || row[c];
            if (!any)
            {
                ok = false;
                for (auto& row : phi)
                    row[c] = coin(rng);
            }
        }
        if (ok)
            return phi;
        if (attempt >= maxRetries)
            throw ConfigError("could not draw a class-ownership matrix without "
                              "empty rows or columns; raise bernoulli_p");
    }
}

} // namespace detail

//------------------------------------------------------------------------------
/// Splits the training set across clients. Client/class ownership is drawn
/// from an element-wise Bernoulli matrix; each class is then divided among its
/// owners by a Dirichlet(alpha) draw with largest-remainder rounding, so every
/// training sample lands on exactly one client.
//------------------------------------------------------------------------------
inline std::vector<ClientDataset> partition(const GlobalDataset& data,
                                            const PartitionConfig& cfg)
{
    cfg.validate();
    const std::size_t K = cfg.clients, C = data.classes;
    if (K > data.train.size())
        throw ConfigError("more clients than training samples");

    Rng rng = makeRng(cfg.seed, {stream::partition});
    std::vector<std::vector<std::size_t>> owned(K);

    if (K == 1)
    {
        owned[0].resize(data.train.size());
        std::iota(owned[0].begin(), owned[0].end(), std::size_t{0});
    }
    else
    {
        auto phi = detail::ownershipMatrix(K, C, cfg.bernoulliP, rng);
        std::vector<std::vector<std::size_t>> byClass(C);
        for (std::size_t i = 0; i < data.train.size(); ++i)
            byClass[data.train[i].label].push_back(i);

        std::gamma_distribution<double> gamma(cfg.dirichletAlpha, 1.0);
        for (std::size_t c = 0; c < C; ++c)
        {
            std::vector<std::size_t> owners;
            for (std::size_t k = 0; k < K; ++k)
                if (phi[k][c])
                    owners.push_back(k);
            std::vector<double> w(owners.size());
            for (auto& v : w)
                v = gamma(rng);
            auto quota = detail::apportion(byClass[c].size(), w);
            auto& pool = byClass[c];
            std::shuffle(pool.begin(), pool.end(), rng);
            std::size_t pos = 0;
            for (std::size_t j = 0; j < owners.size(); ++j)
                for (std::size_t n = 0; n < quota[j]; ++n)
                    owned[owners[j]].push_back(pool[pos++]);
        }
    }

    std::vector<ClientDataset> clients(K);
    for (std::size_t k = 0; k < K; ++k)
    {
        auto& idx = owned[k];
        std::sort(idx.begin(), idx.end());
        auto& cd = clients[k];
        cd.clientId = k;
        cd.classes = C;
        cd.samples.reserve(idx.size());
        for (auto i : idx)
        {
            const auto& s = data.train[i];
            cd.samples.push_back({s.x, s.label, s.label, false});
        }
        cd.refreshPrior();
    }
    return clients;
}

//------------------------------------------------------------------------------
struct NoiseConfig
{
    double globalRate = 0.4; // fraction of noisy clients
    double etaLow = 0.3;
    double etaHigh = 0.5;
    std::size_t annotatorEpochs = 5;
    std::uint64_t seed = 0;

    void validate() const
    {
        if (!(globalRate >= 0.0 && globalRate < 1.0))
            throw ConfigError("noise rate rho must lie in [0, 1)", ConfigErrc::outOfRange);
        if (!(etaLow >= 0.0 && etaLow < 1.0) || !(etaHigh >= 0.0 && etaHigh < 1.0))
            throw ConfigError("eta_low and eta_high must lie in [0, 1)",
                              ConfigErrc::outOfRange);
        if (etaLow > etaHigh)
            throw ConfigError("eta_low must not exceed eta_high",
                              ConfigErrc::outOfRange);
    }
};

//------------------------------------------------------------------------------
/// floor(rate * n), robust to representation error in products such as
/// 0.3 * 20.
inline std::size_t flooredCount(double rate, std::size_t n)
{
    return static_cast<std::size_t>(std::floor(rate * static_cast<double>(n) + 1e-9));
}

//------------------------------------------------------------------------------
/// 1 - p(true label) for every row.
inline std::vector<double> misclassificationProb(
    const std::vector<std::vector<double>>& probs,
    const std::vector<std::size_t>& labels)
{
    if (probs.size() != labels.size())
        throw UsageError("probability rows and labels differ in length");
    std::vector<double> out(probs.size());
    for (std::size_t i = 0; i < probs.size(); ++i)
    {
        if (labels[i] >= probs[i].size())
            throw UsageError("label " + std::to_string(labels[i]) + " out of range");
        out[i] = std::clamp(1.0 - probs[i][labels[i]], 0.0, 1.0);
    }
    return out;
}

//------------------------------------------------------------------------------
/// Draws `m` distinct indices with probability proportional to `weights`
/// (sequential sampling without replacement) via exponential keys
/// log(u) / w. Zero-weight items are only taken once every positive-weight
/// item is exhausted, uniformly at random among themselves.
//------------------------------------------------------------------------------
inline std::vector<std::size_t> weightedSampleWithoutReplacement(
    const std::vector<double>& weights, std::size_t m, Rng& rng)
{
    const std::size_t n = weights.size();
    if (m > n)
        throw UsageError("cannot draw more items than available");
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::vector<std::pair<double, std::size_t>> keys;
    std::vector<std::size_t> zero;
    keys.reserve(n);
    for (std::size_t i = 0; i < n; ++i)
    {
        double u = unit(rng);
        if (weights[i] > 0.0)
        {
            // u in [0,1): map to (0,1] so log is finite.
            keys.push_back({std::log(1.0 - u) / weights[i], i});
        }
        else
        {
            zero.push_back(i);
        }
    }
    std::stable_sort(keys.begin(), keys.end(),
                     [](const auto& a, const auto& b) {return a.first > b.first;});
    std::vector<std::size_t> out;
    out.reserve(m);
    for (std::size_t k = 0; k < keys.size() && out.size() < m; ++k)
        out.push_back(keys[k].second);
    if (out.size() < m)
    {
        std::shuffle(zero.begin(), zero.end(), rng);
        for (std::size_t k = 0; out.size() < m; ++k)
            out.push_back(zero[k]);
    }
    return out;
}

//------------------------------------------------------------------------------
/// Flips the labels of one client given annotator class probabilities and a
/// local noise rate. Exactly floor(eta * N) samples are chosen, biased toward
/// high misclassification probability; each receives a label drawn from the
/// annotator distribution restricted to the other classes.
//------------------------------------------------------------------------------
inline void injectNoise(ClientDataset& client,
                        const std::vector<std::vector<double>>& probs,
                        double eta, Rng& rng)
{
    const std::size_t N = client.size(), C = client.classes;
    if (probs.size() != N)
        throw UsageError("annotator probabilities do not cover the client");
    client.noisyTruth = true;
    client.noiseRate = eta;
    std::size_t m = flooredCount(eta, N);
    if (m == 0)
    {
        log::warn("client " + std::to_string(client.clientId) +
                  " is noisy but eta * N < 1; no labels flipped");
        return;
    }

    std::vector<std::size_t> labels(N);
    for (std::size_t i = 0; i < N; ++i)
        labels[i] = client.samples[i].clean;
    auto weights = misclassificationProb(probs, labels);
    auto chosen = weightedSampleWithoutReplacement(weights, m, rng);

    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (auto t : chosen)
    {
        auto& s = client.samples[t];
        std::vector<double> w(C, 0.0);
        double mass = 0.0;
        for (std::size_t c = 0; c < C; ++c)
            if (c != s.clean)
            {
                w[c] = std::max(probs[t][c], 0.0);
                mass += w[c];
            }
        if (!(mass > 0.0))
        {
            for (std::size_t c = 0; c < C; ++c)
                w[c] = c != s.clean ? 1.0 : 0.0;
            mass = static_cast<double>(C - 1);
        }
        double r = unit(rng) * mass;
        std::size_t pick = C;
        for (std::size_t c = 0; c < C; ++c)
        {
            if (w[c] <= 0.0)
                continue;
            pick = c;
            if (r < w[c])
                break;
            r -= w[c];
        }
        s.observed = pick;
        s.flipped = true;
    }
    client.refreshPrior();
}

//------------------------------------------------------------------------------
/// Trains a fresh annotator network on the client's clean labels and returns
/// its class probabilities for every local sample.
//------------------------------------------------------------------------------
inline std::vector<std::vector<double>> annotatorProbabilities(
    const ClientDataset& client, const Arch& arch, const AdamConfig& adam,
    std::size_t epochs, std::uint64_t seed)
{
    Rng rng = makeRng(seed, {stream::annotator, client.clientId});
    ModelParams model = initParams(arch, rng);
    const Batch all = client.cleanBatch();
    const auto uniform = ClassPrior::uniform(arch.classes);
    trainMinibatch(model, all.size(), epochs, adam, rng,
                   [&](std::span<const std::size_t> idx)
                   {
                       Batch b;
                       b.reserve(idx.size());
                       for (auto i : idx)
                           b.push_back(all[i]);
                       return ceLoss(model, b, uniform, false);
                   });
    std::vector<std::vector<double>> probs(all.size());
    for (std::size_t i = 0; i < all.size(); ++i)
        probs[i] = softmaxT(forward(model, all[i].x), 1.0);
    return probs;
}

//------------------------------------------------------------------------------
/// Injects heterogeneous instance-dependent noise: floor(rho * K) clients are
/// chosen uniformly, each gets its own annotator and its own rate
/// eta ~ U(eta_low, eta_high). Clean clients are returned unchanged.
//------------------------------------------------------------------------------
inline std::vector<ClientDataset> generateNoise(std::vector<ClientDataset> clients,
                                                const NoiseConfig& cfg,
                                                const Arch& arch,
                                                const AdamConfig& adam,
                                                std::size_t threads = 1)
{
    cfg.validate();
    const std::size_t K = clients.size();
    std::size_t noisyCount = flooredCount(cfg.globalRate, K);
    if (noisyCount == 0)
        return clients;

    Rng pickRng = makeRng(cfg.seed, {stream::noise});
    std::vector<std::size_t> order(K);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), pickRng);
    order.resize(noisyCount);
    std::sort(order.begin(), order.end());

    parallelFor(order.size(), threads, [&](std::size_t j)
    {
        auto& client = clients[order[j]];
        Rng rng = makeRng(cfg.seed, {stream::noise, client.clientId});
        double eta = uniform(rng, cfg.etaLow, cfg.etaHigh);
        if (client.empty())
        {
            client.noisyTruth = true;
            client.noiseRate = eta;
            log::warn("client " + std::to_string(client.clientId) +
                      " is noisy but holds no samples");
            return;
        }
        auto probs = annotatorProbabilities(client, arch, adam,
                                            cfg.annotatorEpochs, cfg.seed);
        injectNoise(client, probs, eta, rng);
    });
    return clients;
}

//------------------------------------------------------------------------------
// Text export: one sample per line,
//   client_id,clean_label,observed_label,f_1,...,f_D
//------------------------------------------------------------------------------
inline std::string formatDouble(double v)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline void writeClientsText(std::ostream& os, const std::vector<ClientDataset>& clients)
{
    for (const auto& c : clients)
        for (const auto& s : c.samples)
        {
            os << c.clientId << ',' << s.clean << ',' << s.observed;
            for (double v : s.x)
                os << ',' << formatDouble(v);
            os << '\n';
        }
}

/// Rebuilds client datasets from the text export. Clients are numbered
/// 0..max_id; ids that never appear come back empty.
inline std::vector<ClientDataset> readClientsText(std::istream& is, std::size_t classes)
{
    std::vector<ClientDataset> clients;
    std::string line;
    std::size_t lineNo = 0;
    while (std::getline(is, line))
    {
        ++lineNo;
        if (line.empty())
            continue;
        std::stringstream ss(line);
        std::string field;
        std::vector<std::string> fields;
        while (std::getline(ss, field, ','))
            fields.push_back(field);
        if (fields.size() < 4)
            throw ConfigError("sample line " + std::to_string(lineNo) +
                              " has fewer than 4 fields", ConfigErrc::syntax);
        try
        {
            auto id = static_cast<std::size_t>(std::stoull(fields[0]));
            ClientSample s;
            s.clean = static_cast<std::size_t>(std::stoull(fields[1]));
            s.observed = static_cast<std::size_t>(std::stoull(fields[2]));
            if (s.clean >= classes || s.observed >= classes)
                throw ConfigError("label out of range on line " + std::to_string(lineNo),
                                  ConfigErrc::outOfRange);
            s.flipped = s.clean != s.observed;
            for (std::size_t f = 3; f < fields.size(); ++f)
                s.x.push_back(std::stod(fields[f]));
            if (clients.size() <= id)
            {
                std::size_t old = clients.size();
                clients.resize(id + 1);
                for (std::size_t k = old; k <= id; ++k)
                {
                    clients[k].clientId = k;
                    clients[k].classes = classes;
                }
            }
            clients[id].samples.push_back(std::move(s));
        }
        catch (const std::logic_error&)
        {
            throw ConfigError("malformed number on sample line " + std::to_string(lineNo),
                              ConfigErrc::syntax);
        }
    }
    for (auto& c : clients)
    {
        c.noisyTruth = c.flippedCount() > 0;
        c.refreshPrior();
    }
    return clients;
}

} // namespace robustfed

#endif // ROBUSTFED_DATA_HPP
