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

#ifndef ROBUSTFED_HARNESS_HPP
#define ROBUSTFED_HARNESS_HPP

// Baseline runners and the ablation grids: detection indicators (which
// indicator, logit adjustment during warm-up, per-column normalization),
// stage-2 strategies (distillation, distance-aware aggregation, excluding
// noisy clients), and the warm-up length sweep.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <istream>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "config.hpp"
#include "detection.hpp"
#include "errors.hpp"
#include "federation.hpp"
#include "metrics.hpp"

namespace robustfed
{

//------------------------------------------------------------------------------
struct CurveSummary
{
    double best = std::numeric_limits<double>::quiet_NaN();
    double last = std::numeric_limits<double>::quiet_NaN();
};

/// Best = max BACC over all rounds; Last = mean BACC over the final 10 rounds
/// (all rounds when fewer than 10).
inline CurveSummary summarize(const std::vector<RoundRecord>& records)
{
    CurveSummary s;
    if (records.empty())
        return s;
    s.best = -std::numeric_limits<double>::infinity();
    for (const auto& r : records)
        s.best = std::max(s.best, r.bacc);
    const std::size_t tail = std::min<std::size_t>(10, records.size());
    double sum = 0.0;
    for (std::size_t i = records.size() - tail; i < records.size(); ++i)
        sum += records[i].bacc;
    s.last = sum / static_cast<double>(tail);
    return s;
}

//------------------------------------------------------------------------------
/// Single-stage FedAvg baselines: "fedavg" (plain CE) or "fedavg_la"
/// (logit-adjusted CE).
inline std::pair<ModelParams, std::vector<RoundRecord>>
runBaseline(const std::string& name, const std::vector<ClientDataset>& clients,
            std::span<const Sample> test, ProtocolConfig proto,
            const std::function<void(const RoundRecord&)>& onRound = {})
{
    if (name == "fedavg")
        proto.loss.laEnabled = false;
    else if (name == "fedavg_la")
        proto.loss.laEnabled = true;
    else
        throw UsageError("unknown baseline '" + name + "' (expected fedavg or fedavg_la)");
    return runFedAvg(clients, test, proto, onRound);
}

//------------------------------------------------------------------------------
struct AblationToggles
{
    bool la = true;
    bool perClass = true;
    bool norm = true;
    bool kd = true;
    bool daagg = true;
    bool excludeNoisy = false;
};

enum class AblationKind
{
    detection, // Re / Pr / MR over GMM seeds on the warm-up model
    training   // Best / Last BACC of a full run
};

//------------------------------------------------------------------------------
/// One cell of an ablation grid.
struct AblationSpec
{
    std::string grid;
    AblationKind kind = AblationKind::training;
    AblationToggles toggles;
    int warmupRounds = 0;             // 0 = the protocol's T1
    std::size_t repetitions = 100;    // GMM seeds per detection cell
    std::vector<std::uint64_t> seeds; // experiment seeds; empty = config seed
};

struct AblationRow
{
    AblationSpec spec;
    int warmupRounds = 0;
    std::optional<double> best, last, recall, precision, matchRatio;
    double wallSeconds = 0.0;
};

//------------------------------------------------------------------------------
/// Detection cells with logit adjustment on/off, per-class vs. global-average
/// indicator, and with/without normalization.
inline std::vector<AblationSpec> detectionGrid(std::size_t repetitions)
{
    auto cell = [&](bool la, bool perClass, bool norm)
    {
        AblationSpec s;
        s.grid = "detection";
        s.kind = AblationKind::detection;
        s.toggles = {la, perClass, norm, true, true, false};
        s.repetitions = repetitions;
        return s;
    };
    return {cell(false, false, false), cell(true, false, false),
            cell(false, true, false), cell(true, true, false), cell(true, true, true)};
}

/// Stage-2 strategies: no de-noising, clean clients only, aggregation only,
/// distillation only, both.
inline std::vector<AblationSpec> strategyGrid(std::vector<std::uint64_t> seeds = {})
{
    auto cell = [&](bool kd, bool daagg, bool exclude)
    {
        AblationSpec s;
        s.grid = "strategy";
        s.kind = AblationKind::training;
        s.toggles = {true, true, true, kd, daagg, exclude};
        s.seeds = seeds;
        return s;
    };
    return {cell(false, false, false), cell(false, false, true),
            cell(false, true, false), cell(true, false, false), cell(true, true, false)};
}

/// Full detection pipeline at each candidate warm-up length.
inline std::vector<AblationSpec> warmupSweepGrid(const std::vector<int>& t1s,
                                                 std::size_t repetitions)
{
    std::vector<AblationSpec> out;
    for (int t : t1s)
    {
        AblationSpec s;
        s.grid = "t1_sweep";
        s.kind = AblationKind::detection;
        s.warmupRounds = t;
        s.repetitions = repetitions;
        out.push_back(s);
    }
    return out;
}

//------------------------------------------------------------------------------
/// Runs the cells. Scenarios and warm-up trajectories are shared between
/// cells with the same seed (and logit-adjustment setting), so a T1 sweep
/// costs one warm-up run.
//------------------------------------------------------------------------------
class AblationRunner
{
public:
    explicit AblationRunner(ExperimentConfig base) : base_(std::move(base)) {}

    std::vector<AblationRow> run(const std::vector<AblationSpec>& specs)
    {
        std::map<std::pair<std::uint64_t, bool>, int> longest;
        for (const auto& s : specs)
        {
            if (s.kind != AblationKind::detection)
                continue;
            int t1 = s.warmupRounds > 0 ? s.warmupRounds : base_.protocol.warmupRounds;
            for (auto seed : s.seeds.empty() ? std::vector<std::uint64_t>{base_.seed} : s.seeds)
            {
                int& m = longest[{seed, s.toggles.la}];
                m = std::max(m, t1);
            }
        }
        for (const auto& [key, t1] : longest)
            warmupModel(key.first, key.second, t1);

        std::vector<AblationRow> rows;
        for (const auto& s : specs)
            rows.push_back(runCell(s));
        return rows;
    }

    AblationRow runCell(const AblationSpec& spec)
    {
        auto start = std::chrono::steady_clock::now();
        AblationRow row;
        row.spec = spec;
        row.warmupRounds = spec.warmupRounds > 0 ? spec.warmupRounds
                                                 : base_.protocol.warmupRounds;
        auto seeds = spec.seeds.empty() ? std::vector<std::uint64_t>{base_.seed}
                                        : spec.seeds;
        double a = 0.0, b = 0.0, c = 0.0;
        for (auto seed : seeds)
        {
            if (spec.kind == AblationKind::detection)
            {
                auto sweep = detectionCell(spec, seed, row.warmupRounds);
                a += sweep.recall;
                b += sweep.precision;
                c += sweep.matchRatio;
            }
            else
            {
                auto sum = trainingCell(spec, seed, row.warmupRounds);
                a += sum.best;
                b += sum.last;
            }
        }
        const double n = static_cast<double>(seeds.size());
        if (spec.kind == AblationKind::detection)
        {
            row.recall = a / n;
            row.precision = b / n;
            row.matchRatio = c / n;
        }
        else
        {
            row.best = a / n;
            row.last = b / n;
        }
        row.wallSeconds = std::chrono::duration<double>(
            std::chrono::steady_clock::now() - start).count();
        return row;
    }

    const Scenario& scenario(std::uint64_t seed)
    {
        auto it = scenarios_.find(seed);
        if (it == scenarios_.end())
        {
            ExperimentConfig cfg = base_;
            cfg.reseed(seed);
            it = scenarios_.emplace(seed, buildScenario(cfg)).first;
        }
        return it->second;
    }

private:
    ProtocolConfig protocolFor(std::uint64_t seed, bool la, int t1) const
    {
        ProtocolConfig p = base_.protocol;
        p.seed = seed;
        p.loss.laEnabled = la;
        if (t1 != p.warmupRounds)
        {
            p.warmupRounds = t1;
            p.loss.rampLength = std::max(1, p.totalRounds - t1);
        }
        return p;
    }

    const ModelParams& warmupModel(std::uint64_t seed, bool la, int t1)
    {
        auto key = std::make_tuple(seed, la, t1);
        auto it = warmups_.find(key);
        if (it != warmups_.end())
            return it->second;
        // Every round of the trajectory is cached, so a T1 sweep reuses one run.
        const auto& sc = scenario(seed);
        ProtocolConfig p = protocolFor(seed, la, base_.protocol.warmupRounds);
        runWarmup(sc.clients, p, t1, [&](int r, const ModelParams& g)
                  {warmups_.insert_or_assign(std::make_tuple(seed, la, r), g);});
        return warmups_.at(key);
    }

    SeedSweep detectionCell(const AblationSpec& spec, std::uint64_t seed, int t1)
    {
        const auto& sc = scenario(seed);
        const auto& model = warmupModel(seed, spec.toggles.la, t1);
        auto kind = spec.toggles.perClass ? IndicatorKind::perClass
                                          : IndicatorKind::globalAverage;
        auto matrix = buildIndicatorMatrix(model, sc.clients, kind, base_.protocol.threads);
        DetectOptions opt;
        opt.normalize = spec.toggles.norm;
        return sweepGmmSeeds(matrix, noisyTruth(sc.clients), spec.repetitions,
                             deriveSeed(seed, {stream::gmm}), opt, base_.protocol.threads);
    }

    CurveSummary trainingCell(const AblationSpec& spec, std::uint64_t seed, int t1)
    {
        const auto& sc = scenario(seed);
        ProtocolConfig p = protocolFor(seed, spec.toggles.la, t1);
        ExperimentOptions opt;
        opt.strategy = {spec.toggles.kd, spec.toggles.daagg, spec.toggles.excludeNoisy};
        opt.indicator = spec.toggles.perClass ? IndicatorKind::perClass
                                              : IndicatorKind::globalAverage;
        opt.detect.normalize = spec.toggles.norm;
        return summarize(runExperiment(sc.clients, sc.data.test, p, opt).records);
    }

    ExperimentConfig base_;
    std::map<std::uint64_t, Scenario> scenarios_;
    std::map<std::tuple<std::uint64_t, bool, int>, ModelParams> warmups_;
};

//------------------------------------------------------------------------------
// CSV: grid,la,per_class,norm,kd,daagg,exclude_noisy,t1,best,last,re,pr,mr,wall_time
//------------------------------------------------------------------------------
inline const char* ablationCsvHeader()
{
    return "grid,la,per_class,norm,kd,daagg,exclude_noisy,t1,best,last,re,pr,mr,wall_time";
}

inline void writeAblationCsv(std::ostream& os, const std::vector<AblationRow>& rows)
{
    auto opt = [](const std::optional<double>& v)
    {return v ? formatDouble(*v) : std::string("NA");};
    os << ablationCsvHeader() << '\n';
    for (const auto& r : rows)
    {
        const auto& t = r.spec.toggles;
        os << r.spec.grid << ',' << t.la << ',' << t.perClass << ',' << t.norm << ','
           << t.kd << ',' << t.daagg << ',' << t.excludeNoisy << ',' << r.warmupRounds
           << ',' << opt(r.best) << ',' << opt(r.last) << ',' << opt(r.recall) << ','
           << opt(r.precision) << ',' << opt(r.matchRatio) << ','
           << formatDouble(r.wallSeconds) << '\n';
    }
}

inline std::vector<AblationRow> readAblationCsv(std::istream& is)
{
    std::string line;
    if (!std::getline(is, line) || line != ablationCsvHeader())
        throw ConfigError("ablation table header mismatch", ConfigErrc::syntax);
    std::vector<AblationRow> rows;
    std::size_t lineNo = 1;
    while (std::getline(is, line))
    {
        ++lineNo;
        if (line.empty())
            continue;
        std::vector<std::string> f;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ','))
            f.push_back(cell);
        if (f.size() != 14)
            throw ConfigError("ablation row on line " + std::to_string(lineNo) +
                              " has " + std::to_string(f.size()) + " fields",
                              ConfigErrc::syntax);
        auto flag = [&](const std::string& s)
        {
            if (s != "0" && s != "1")
                throw ConfigError("bad flag '" + s + "' on line " + std::to_string(lineNo),
                                  ConfigErrc::syntax);
            return s == "1";
        };
        auto num = [&](const std::string& s) -> std::optional<double>
        {
            if (s == "NA")
                return std::nullopt;
            try
            {
                return std::stod(s);
            }
            catch (const std::logic_error&)
            {
                throw ConfigError("bad number '" + s + "' on line " + std::to_string(lineNo),
                                  ConfigErrc::syntax);
            }
        };
        AblationRow r;
        r.spec.grid = f[0];
        r.spec.toggles = {flag(f[1]), flag(f[2]), flag(f[3]), flag(f[4]), flag(f[5]), flag(f[6])};
        r.warmupRounds = std::stoi(f[7]);
        r.best = num(f[8]);
        r.last = num(f[9]);
        r.recall = num(f[10]);
        r.precision = num(f[11]);
        r.matchRatio = num(f[12]);
        r.wallSeconds = num(f[13]).value_or(0.0);
        r.spec.kind = r.best ? AblationKind::training : AblationKind::detection;
        rows.push_back(std::move(r));
    }
    return rows;
}

} // namespace robustfed

#endif // ROBUSTFED_HARNESS_HPP
