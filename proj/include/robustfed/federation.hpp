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

#ifndef ROBUSTFED_FEDERATION_HPP
#define ROBUSTFED_FEDERATION_HPP

// Two-stage noise-robust federated training.
//
//   stage 1 (rounds 1..T1):   every client trains with (logit-adjusted) CE,
//                             the server averages with FedAvg.
//   hand-off (after T1):      per-class loss indicators from the warm-up
//                             model, mixture-model split into clean/noisy.
//   stage 2 (rounds T1+1..):  clean clients keep CE, noisy clients distill
//                             from the round-start global model; the server
//                             aggregates with distance-aware weights.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "data.hpp"
#include "detection.hpp"
#include "errors.hpp"
#include "metrics.hpp"
#include "nn.hpp"
#include "parallel.hpp"
#include "rng.hpp"
#include "train.hpp"

namespace robustfed
{

//------------------------------------------------------------------------------
struct ProtocolConfig
{
    int totalRounds = 100;
    int warmupRounds = 10;
    std::size_t localEpochs = 5;
    LossConfig loss;
    AdamConfig adam;
    std::size_t hiddenDim = 32;
    std::uint64_t seed = 0;
    std::size_t threads = 1;

    void validate() const
    {
        if (warmupRounds < 1 || warmupRounds >= totalRounds)
            throw ConfigError("warm-up rounds must satisfy 1 <= T1 < rounds",
                              ConfigErrc::outOfRange);
        loss.validate();
        adam.validate();
    }
};

//------------------------------------------------------------------------------
struct LocalModel
{
    std::size_t clientId = 0;
    ModelParams params;
    std::size_t sampleCount = 0;
};

struct LocalUpdate
{
    ModelParams params;
    std::vector<double> lossTrace; // mean training loss per local epoch
};

namespace detail
{

inline Batch gather(const Batch& all, std::span<const std::size_t> idx)
{
    Batch b;
    b.reserve(idx.size());
    for (auto i : idx)
        b.push_back(all[i]);
    return b;
}

} // namespace detail

//------------------------------------------------------------------------------
/// Local epochs of minibatch Adam on CE against the observed labels, with
/// logit adjustment when the loss config enables it.
//------------------------------------------------------------------------------
inline LocalUpdate localTrainClean(const ModelParams& global,
                                   const ClientDataset& client,
                                   const ProtocolConfig& cfg, Rng& rng)
{
    LocalUpdate out{global, {}};
    if (client.empty())
    {
        log::warn("client " + std::to_string(client.clientId) +
                  " has no samples; returning the global model");
        return out;
    }
    const Batch all = client.observedBatch();
    out.lossTrace = trainMinibatch(
        out.params, all.size(), cfg.localEpochs, cfg.adam, rng,
        [&](std::span<const std::size_t> idx)
        {return ceLoss(out.params, detail::gather(all, idx), client.prior,
                       cfg.loss.laEnabled);});
    return out;
}

//------------------------------------------------------------------------------
/// Local training for a suspected-noisy client: targets softened by the
/// frozen round-start global model are mixed with the observed labels,
///   lambda * KL(teacher || student) + (1 - lambda) * CE.
//------------------------------------------------------------------------------
inline LocalUpdate localTrainNoisy(const ModelParams& global,
                                   const ClientDataset& client, double lambda,
                                   const ProtocolConfig& cfg, Rng& rng)
{
    LocalUpdate out{global, {}};
    if (client.empty())
    {
        log::warn("client " + std::to_string(client.clientId) +
                  " has no samples; returning the global model");
        return out;
    }
    const Batch all = client.observedBatch();
    std::vector<std::vector<double>> teacher(all.size());
    for (std::size_t i = 0; i < all.size(); ++i)
        teacher[i] = forward(global, all[i].x);

    std::vector<std::vector<double>> teacherBatch;
    out.lossTrace = trainMinibatch(
        out.params, all.size(), cfg.localEpochs, cfg.adam, rng,
        [&](std::span<const std::size_t> idx)
        {
            teacherBatch.clear();
            for (auto i : idx)
                teacherBatch.push_back(teacher[i]);
            return kdLoss(out.params, detail::gather(all, idx), teacherBatch,
                          lambda, cfg.loss.temperature, client.prior,
                          cfg.loss.laEnabled);
        });
    return out;
}

//------------------------------------------------------------------------------
/// Weighted element-wise sum; `weights` must already be normalized.
inline ModelParams aggregate(const std::vector<LocalModel>& locals,
                             const std::vector<double>& weights)
{
    if (locals.empty())
        throw UsageError("aggregation needs at least one local model");
    const Arch arch = locals.front().params.arch;
    ModelParams out(arch);
    for (std::size_t i = 0; i < locals.size(); ++i)
    {
        const auto& p = locals[i].params;
        if (!(p.arch == arch) || p.size() != out.size())
            throw ConfigError("cannot aggregate models of different architectures");
        for (std::size_t j = 0; j < out.size(); ++j)
            out.values[j] += weights[i] * p.values[j];
    }
    return out;
}

//------------------------------------------------------------------------------
struct Aggregate
{
    ModelParams params;
    std::vector<double> weights;   // per local model, sums to 1
    std::vector<double> distances; // d(i); zero for FedAvg
};

inline std::vector<double> fedavgWeights(const std::vector<LocalModel>& locals)
{
    double total = 0.0;
    for (const auto& l : locals)
    {
        if (l.sampleCount == 0)
            throw UsageError("FedAvg requires every local sample count to be positive");
        total += static_cast<double>(l.sampleCount);
    }
    std::vector<double> w;
    w.reserve(locals.size());
    for (const auto& l : locals)
        w.push_back(static_cast<double>(l.sampleCount) / total);
    return w;
}

/// Sample-size weighted average of the local models.
inline Aggregate fedavg(const std::vector<LocalModel>& locals)
{
    Aggregate a;
    a.weights = fedavgWeights(locals);
    a.distances.assign(locals.size(), 0.0);
    a.params = aggregate(locals, a.weights);
    return a;
}

//------------------------------------------------------------------------------
/// Distance-aware aggregation. Each model's distance to the nearest clean
/// model, d(i), is normalized by the largest distance to D(i) in [0, 1] and
/// the FedAvg weight N_i is scaled by exp(-D(i)). Clean clients have d = 0.
/// Falls back to FedAvg when no clean model is present.
//------------------------------------------------------------------------------
inline Aggregate daagg(const std::vector<LocalModel>& locals,
                       const std::vector<std::size_t>& cleanSet)
{
    auto isClean = [&](std::size_t id)
    {return std::find(cleanSet.begin(), cleanSet.end(), id) != cleanSet.end();};

    std::vector<std::size_t> cleanIdx;
    for (std::size_t i = 0; i < locals.size(); ++i)
        if (isClean(locals[i].clientId))
            cleanIdx.push_back(i);
    if (cleanIdx.empty())
    {
        log::warn("distance-aware aggregation without clean clients; using FedAvg");
        return fedavg(locals);
    }

    Aggregate a;
    a.distances.assign(locals.size(), 0.0);
    double maxD = 0.0;
    for (std::size_t i = 0; i < locals.size(); ++i)
    {
        if (isClean(locals[i].clientId))
            continue;
        double d = std::numeric_limits<double>::infinity();
        for (auto j : cleanIdx)
            d = std::min(d, l2Distance(locals[i].params, locals[j].params));
        a.distances[i] = d;
        maxD = std::max(maxD, d);
    }

    double total = 0.0;
    a.weights.resize(locals.size());
    for (std::size_t i = 0; i < locals.size(); ++i)
    {
        if (locals[i].sampleCount == 0)
            throw UsageError("aggregation requires every local sample count to be positive");
        double D = maxD > 0.0 ? a.distances[i] / maxD : 0.0;
        a.weights[i] = static_cast<double>(locals[i].sampleCount) * std::exp(-D);
        total += a.weights[i];
    }
    for (auto& w : a.weights)
        w /= total;
    a.params = aggregate(locals, a.weights);
    return a;
}

//------------------------------------------------------------------------------
enum class Stage
{
    warmup,
    robust
};

inline const char* toString(Stage s) {return s == Stage::warmup ? "warmup" : "robust";}

struct RoundRecord
{
    int round = 0;
    Stage stage = Stage::warmup;
    std::string snapshot;                   // hash of the aggregated parameters
    std::vector<std::size_t> clients;       // participating client ids
    std::vector<double> clientLoss;         // last-epoch mean loss per participant
    std::vector<double> weights;            // aggregation weight per participant
    double lambda = 0.0;
    double bacc = std::numeric_limits<double>::quiet_NaN();
};

/// FNV-1a over the parameter bytes, as 16 hex digits.
inline std::string snapshotId(const ModelParams& p)
{
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (double v : p.values)
    {
        std::uint64_t bits;
        std::memcpy(&bits, &v, sizeof bits);
        for (int b = 0; b < 8; ++b)
        {
            h ^= (bits >> (8 * b)) & 0xffu;
            h *= 0x100000001b3ull;
        }
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

inline void to_json(nlohmann::json& j, const RoundRecord& r)
{
    auto num = [](double v) {return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json();};
    nlohmann::json losses = nlohmann::json::array();
    for (double v : r.clientLoss)
        losses.push_back(num(v));
    j = nlohmann::json{{"round", r.round},
                       {"stage", toString(r.stage)},
                       {"snapshot", r.snapshot},
                       {"clients", r.clients},
                       {"client_loss", losses},
                       {"weights", r.weights},
                       {"lambda", r.lambda},
                       {"bacc", num(r.bacc)}};
}

inline void from_json(const nlohmann::json& j, RoundRecord& r)
{
    auto num = [](const nlohmann::json& v)
    {return v.is_null() ? std::numeric_limits<double>::quiet_NaN() : v.get<double>();};
    r.round = j.at("round").get<int>();
    const auto stage = j.at("stage").get<std::string>();
    if (stage != "warmup" && stage != "robust")
        throw ConfigError("unknown stage tag '" + stage + "'", ConfigErrc::syntax);
    r.stage = stage == "warmup" ? Stage::warmup : Stage::robust;
    r.snapshot = j.at("snapshot").get<std::string>();
    r.clients = j.at("clients").get<std::vector<std::size_t>>();
    r.clientLoss.clear();
    for (const auto& v : j.at("client_loss"))
        r.clientLoss.push_back(num(v));
    r.weights = j.at("weights").get<std::vector<double>>();
    r.lambda = j.at("lambda").get<double>();
    r.bacc = num(j.at("bacc"));
}

//------------------------------------------------------------------------------
/// Stage-2 strategy toggles; the defaults give the full protocol.
struct Stage2Strategy
{
    bool kd = true;            // distillation on noisy clients (else plain CE)
    bool daagg = true;         // distance-aware aggregation (else FedAvg)
    bool excludeNoisy = false; // drop noisy clients from stage 2 entirely
};

struct ExperimentOptions
{
    Stage2Strategy strategy;
    IndicatorKind indicator = IndicatorKind::perClass;
    DetectOptions detect;
    /// Test hook: use this noisy set instead of running detection.
    std::optional<std::vector<std::size_t>> detectionOverride;
    std::function<void(const RoundRecord&)> onRound;
};

struct ExperimentResult
{
    ModelParams finalParams;
    ModelParams warmupParams;
    IndicatorMatrix indicators;
    DetectionResult detection;
    std::vector<RoundRecord> records;
};

inline Arch architectureFor(const std::vector<ClientDataset>& clients,
                            const ProtocolConfig& cfg)
{
    for (const auto& c : clients)
        if (!c.empty())
            return {c.samples.front().x.size(), cfg.hiddenDim, c.classes};
    throw ConfigError("every client dataset is empty");
}

namespace detail
{

enum class LocalMode
{
    clean,
    noisy,
    skip
};

struct RoundOutcome
{
    std::vector<LocalModel> locals;
    std::vector<double> losses;
};

// Trains the clients with the given modes; empty clients never participate.
inline RoundOutcome trainRound(const ModelParams& global,
                               const std::vector<ClientDataset>& clients,
                               const std::vector<LocalMode>& modes, int round,
                               double lambda, const ProtocolConfig& cfg)
{
    std::vector<std::optional<LocalUpdate>> updates(clients.size());
    parallelFor(clients.size(), cfg.threads, [&](std::size_t i)
    {
        if (modes[i] == LocalMode::skip || clients[i].empty())
            return;
        Rng rng = makeRng(cfg.seed, {stream::local, static_cast<std::uint64_t>(round),
                                     clients[i].clientId});
        updates[i] = modes[i] == LocalMode::noisy
                         ? localTrainNoisy(global, clients[i], lambda, cfg, rng)
                         : localTrainClean(global, clients[i], cfg, rng);
    });
    RoundOutcome out;
    for (std::size_t i = 0; i < clients.size(); ++i)
    {
        if (!updates[i])
            continue;
        const auto& trace = updates[i]->lossTrace;
        out.losses.push_back(trace.empty() ? std::numeric_limits<double>::quiet_NaN()
                                           : trace.back());
        out.locals.push_back({clients[i].clientId, std::move(updates[i]->params),
                              clients[i].size()});
    }
    return out;
}

inline RoundRecord makeRecord(int round, Stage stage, const Aggregate& agg,
                              const RoundOutcome& outcome, double lambda,
                              std::span<const Sample> test)
{
    RoundRecord rec;
    rec.round = round;
    rec.stage = stage;
    rec.snapshot = snapshotId(agg.params);
    for (const auto& l : outcome.locals)
        rec.clients.push_back(l.clientId);
    rec.clientLoss = outcome.losses;
    rec.weights = agg.weights;
    rec.lambda = lambda;
    if (!test.empty())
        rec.bacc = evaluate(agg.params, test).bacc;
    return rec;
}

inline ModelParams initialGlobal(const std::vector<ClientDataset>& clients,
                                 const ProtocolConfig& cfg)
{
    Rng rng = makeRng(cfg.seed, {stream::init});
    return initParams(architectureFor(clients, cfg), rng);
}

} // namespace detail

//------------------------------------------------------------------------------
/// Single-stage FedAvg for `cfg.totalRounds` rounds; the loss config decides
/// whether local CE is logit-adjusted.
//------------------------------------------------------------------------------
inline std::pair<ModelParams, std::vector<RoundRecord>>
runFedAvg(const std::vector<ClientDataset>& clients, std::span<const Sample> test,
          const ProtocolConfig& cfg,
          const std::function<void(const RoundRecord&)>& onRound = {})
{
    cfg.loss.validate();
    cfg.adam.validate();
    ModelParams global = detail::initialGlobal(clients, cfg);
    std::vector<detail::LocalMode> modes(clients.size(), detail::LocalMode::clean);
    std::vector<RoundRecord> records;
    for (int r = 1; r <= cfg.totalRounds; ++r)
    {
        auto outcome = detail::trainRound(global, clients, modes, r, 0.0, cfg);
        auto agg = fedavg(outcome.locals);
        global = agg.params;
        records.push_back(detail::makeRecord(r, Stage::warmup, agg, outcome, 0.0, test));
        if (onRound)
            onRound(records.back());
    }
    return {global, records};
}

//------------------------------------------------------------------------------
/// Warm-up only: FedAvg for `rounds` rounds, invoking `atRound(r, global)`
/// after each aggregation. Rounds are numbered exactly as in the full run,
/// so the model at round r matches the full protocol's warm-up model.
//------------------------------------------------------------------------------
inline ModelParams runWarmup(const std::vector<ClientDataset>& clients,
                             const ProtocolConfig& cfg, int rounds,
                             const std::function<void(int, const ModelParams&)>& atRound = {})
{
    ModelParams global = detail::initialGlobal(clients, cfg);
    std::vector<detail::LocalMode> modes(clients.size(), detail::LocalMode::clean);
    for (int r = 1; r <= rounds; ++r)
    {
        auto outcome = detail::trainRound(global, clients, modes, r, 0.0, cfg);
        global = fedavg(outcome.locals).params;
        if (atRound)
            atRound(r, global);
    }
    return global;
}

//------------------------------------------------------------------------------
/// The full two-stage protocol.
//------------------------------------------------------------------------------
inline ExperimentResult runExperiment(const std::vector<ClientDataset>& clients,
                                      std::span<const Sample> test,
                                      const ProtocolConfig& cfg,
                                      const ExperimentOptions& opt = {})
{
    cfg.validate();
    ExperimentResult res;
    ModelParams global = detail::initialGlobal(clients, cfg);
    std::vector<detail::LocalMode> modes(clients.size(), detail::LocalMode::clean);

    auto emit = [&](RoundRecord rec)
    {
        res.records.push_back(std::move(rec));
        if (opt.onRound)
            opt.onRound(res.records.back());
    };

    for (int r = 1; r <= cfg.warmupRounds; ++r)
    {
        auto outcome = detail::trainRound(global, clients, modes, r, 0.0, cfg);
        auto agg = fedavg(outcome.locals);
        global = agg.params;
        emit(detail::makeRecord(r, Stage::warmup, agg, outcome, 0.0, test));
    }
    res.warmupParams = global;

    if (opt.detectionOverride)
    {
        auto noisy = *opt.detectionOverride;
        std::sort(noisy.begin(), noisy.end());
        for (const auto& c : clients)
            (std::binary_search(noisy.begin(), noisy.end(), c.clientId)
                 ? res.detection.noisySet : res.detection.cleanSet).push_back(c.clientId);
    }
    else
    {
        res.indicators = buildIndicatorMatrix(global, clients, opt.indicator, cfg.threads);
        DetectOptions det = opt.detect;
        det.gmm.seed = deriveSeed(cfg.seed, {stream::gmm});
        res.detection = detectNoisyClients(res.indicators, det);
    }

    for (std::size_t i = 0; i < clients.size(); ++i)
    {
        if (!res.detection.isNoisy(clients[i].clientId))
            modes[i] = detail::LocalMode::clean;
        else if (opt.strategy.excludeNoisy)
            modes[i] = detail::LocalMode::skip;
        else
            modes[i] = opt.strategy.kd ? detail::LocalMode::noisy : detail::LocalMode::clean;
    }

    for (int r = cfg.warmupRounds + 1; r <= cfg.totalRounds; ++r)
    {
        double lambda = lambdaSchedule(r - cfg.warmupRounds, cfg.loss);
        auto outcome = detail::trainRound(global, clients, modes, r, lambda, cfg);
        if (outcome.locals.empty())
            throw ConfigError("no client participates in the robust stage");
        auto agg = opt.strategy.daagg ? daagg(outcome.locals, res.detection.cleanSet)
                                      : fedavg(outcome.locals);
        global = agg.params;
        emit(detail::makeRecord(r, Stage::robust, agg, outcome,
                                opt.strategy.kd ? lambda : 0.0, test));
    }
    res.finalParams = global;
    return res;
}

//------------------------------------------------------------------------------
inline void writeRecord(std::ostream& os, const RoundRecord& r)
{
    os << nlohmann::json(r).dump() << '\n';
}

inline void writeRecords(std::ostream& os, const std::vector<RoundRecord>& records)
{
    for (const auto& r : records)
        writeRecord(os, r);
}

inline std::vector<RoundRecord> readRecords(std::istream& is)
{
    std::vector<RoundRecord> out;
    std::string line;
    while (std::getline(is, line))
    {
        if (line.empty())
            continue;
        try
        {
            out.push_back(nlohmann::json::parse(line).get<RoundRecord>());
        }
        catch (const nlohmann::json::exception& e)
        {
            throw ConfigError(std::string("malformed round record: ") + e.what(),
                              ConfigErrc::syntax);
        }
    }
    return out;
}

} // namespace robustfed

#endif // ROBUSTFED_FEDERATION_HPP
