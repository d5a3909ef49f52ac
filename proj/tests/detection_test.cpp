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

#include <robustfed/data.hpp>
#include <robustfed/detection.hpp>

#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "oracles.hpp"

using namespace robustfed;

namespace
{

IndicatorMatrix fromRows(const std::vector<std::vector<double>>& rows)
{
    IndicatorMatrix m;
    for (std::size_t i = 0; i < rows.size(); ++i)
        m.addRow(i, rows[i]);
    return m;
}

IndicatorMatrix randomMatrix(Rng& rng, std::size_t K, std::size_t C)
{
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<std::vector<double>> rows(K, std::vector<double>(C));
    for (auto& r : rows)
        for (auto& v : r)
            v = u(rng);
    // A random subset of rows is shifted up to form a second cluster.
    for (std::size_t i = 0; i < K; ++i)
        if (u(rng) < 0.4)
            for (auto& v : rows[i])
                v += u(rng);
    return fromRows(rows);
}

ClientDataset makeClient(std::size_t id, std::size_t C,
                         const std::vector<std::pair<std::vector<double>, std::size_t>>& s)
{
    ClientDataset c;
    c.clientId = id;
    c.classes = C;
    for (const auto& [x, y] : s)
        c.samples.push_back({x, y, y, false});
    c.refreshPrior();
    return c;
}

} // namespace

//------------------------------------------------------------------------------
TEST(PerClassLosses, ZeroParamsGiveLogC)
{
    auto client = makeClient(0, 3, {{{1.0, 2.0}, 0}, {{-1.0, 0.5}, 1}, {{3.0, 3.0}, 2}});
    auto r = perClassLosses(ModelParams(Arch{2, 0, 3}), client);
    for (std::size_t c = 0; c < 3; ++c)
    {
        EXPECT_TRUE(r.present[c]);
        EXPECT_NEAR(r.values[c], std::log(3.0), 1e-15);
    }
}

TEST(PerClassLosses, AbsentClassIsMasked)
{
    auto client = makeClient(0, 3, {{{1.0, 2.0}, 0}, {{3.0, 3.0}, 2}});
    auto r = perClassLosses(ModelParams(Arch{2, 0, 3}), client);
    EXPECT_FALSE(r.present[1]);
    EXPECT_TRUE(std::isnan(r.values[1]));
}

TEST(PerClassLosses, MatchesPerSampleLoopOracle)
{
    Rng rng(3);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_int_distribution<std::size_t> label(0, 3);
    for (int trial = 0; trial < 30; ++trial)
    {
        Arch arch{3, static_cast<std::size_t>(trial % 2 ? 5 : 0), 4};
        ModelParams p(arch);
        for (auto& v : p.values)
            v = normal(rng);
        std::vector<std::pair<std::vector<double>, std::size_t>> samples;
        for (int n = 0; n < 25; ++n)
            samples.push_back({{normal(rng), normal(rng), normal(rng)}, label(rng)});
        auto client = makeClient(0, 4, samples);
        auto got = perClassLosses(p, client);
        for (std::size_t c = 0; c < 4; ++c)
        {
            double sum = 0.0;
            int n = 0;
            for (const auto& [x, y] : samples)
                if (y == c)
                {
                    sum += oracle::crossEntropy(oracle::forward(p.values, 3, arch.hiddenDim,
                                                                4, x), y);
                    ++n;
                }
            ASSERT_EQ(got.present[c], n > 0);
            if (n > 0)
            {
                EXPECT_NEAR(got.values[c], sum / n, 1e-10);
            }
        }
    }
}

TEST(IndicatorMatrix, GlobalAverageKindHasOneColumn)
{
    auto a = makeClient(0, 2, {{{1.0}, 0}, {{2.0}, 1}});
    auto b = makeClient(1, 2, {{{0.5}, 1}});
    auto m = buildIndicatorMatrix(ModelParams(Arch{1, 0, 2}), {a, b},
                                  IndicatorKind::globalAverage);
    ASSERT_EQ(m.cols(), 1u);
    EXPECT_NEAR(m.values[0][0], std::log(2.0), 1e-15);
    EXPECT_NEAR(m.values[1][0], std::log(2.0), 1e-15);
}

//------------------------------------------------------------------------------
TEST(Impute, MinimumFill)
{
    IndicatorMatrix m;
    m.addRow(0, {0.3});
    m.addRow(1, {0.0}, {false});
    m.addRow(2, {0.9});
    auto out = imputeMissing(m);
    EXPECT_EQ(out.values[0][0], 0.3);
    EXPECT_EQ(out.values[1][0], 0.3);
    EXPECT_EQ(out.values[2][0], 0.9);
    EXPECT_TRUE(out.complete());
}

TEST(Impute, NoMissingIsIdentity)
{
    auto m = fromRows({{0.1, 0.2}, {0.3, 0.4}});
    EXPECT_EQ(imputeMissing(m).values, m.values);
}

TEST(Impute, SingleDonorFillsColumn)
{
    IndicatorMatrix m;
    m.addRow(0, {0.0}, {false});
    m.addRow(1, {0.7});
    m.addRow(2, {0.0}, {false});
    auto out = imputeMissing(m);
    for (const auto& r : out.values)
        EXPECT_EQ(r[0], 0.7);
}

TEST(Impute, ColumnMissingEverywhereIsConfigError)
{
    IndicatorMatrix m;
    m.addRow(0, {0.1, 0.0}, {true, false});
    m.addRow(1, {0.2, 0.0}, {true, false});
    EXPECT_THROW(imputeMissing(m), ConfigError);
}

TEST(Impute, NeverTouchesPresentCells)
{
    Rng rng(4);
    std::bernoulli_distribution miss(0.3);
    for (int trial = 0; trial < 100; ++trial)
    {
        auto m = randomMatrix(rng, 8, 4);
        for (auto& row : m.present)
            for (std::size_t c = 0; c < row.size(); ++c)
                row[c] = !miss(rng);
        for (std::size_t c = 0; c < 4; ++c)
            m.present[0][c] = true;
        auto out = imputeMissing(m);
        for (std::size_t i = 0; i < 8; ++i)
            for (std::size_t c = 0; c < 4; ++c)
                if (m.present[i][c])
                {
                    EXPECT_EQ(out.values[i][c], m.values[i][c]);
                }
    }
}

//------------------------------------------------------------------------------
TEST(Normalize, Endpoints)
{
    auto out = normalizeColumns(fromRows({{0.2}, {0.5}, {0.8}}));
    EXPECT_EQ(out.values[0][0], 0.0);
    EXPECT_NEAR(out.values[1][0], 0.5, 1e-15);
    EXPECT_EQ(out.values[2][0], 1.0);
}

TEST(Normalize, ConstantColumnBecomesZero)
{
    auto out = normalizeColumns(fromRows({{0.4}, {0.4}}));
    EXPECT_EQ(out.values[0][0], 0.0);
    EXPECT_EQ(out.values[1][0], 0.0);
}

TEST(Normalize, IdempotentOnSpanningColumns)
{
    auto m = fromRows({{0.0, 1.0}, {0.25, 0.0}, {1.0, 0.5}});
    EXPECT_EQ(normalizeColumns(m).values, m.values);
}

TEST(Normalize, RangeAndRankPreserved)
{
    Rng rng(5);
    for (int trial = 0; trial < 100; ++trial)
    {
        auto m = randomMatrix(rng, 10, 3);
        auto out = normalizeColumns(m);
        for (std::size_t c = 0; c < 3; ++c)
            for (std::size_t i = 0; i < 10; ++i)
            {
                EXPECT_GE(out.values[i][c], 0.0);
                EXPECT_LE(out.values[i][c], 1.0);
                for (std::size_t j = 0; j < 10; ++j)
                    if (m.values[i][c] < m.values[j][c])
                    {
                        EXPECT_LE(out.values[i][c], out.values[j][c]);
                    }
            }
    }
}

//------------------------------------------------------------------------------
TEST(Gmm, SeparatedClusters)
{
    auto m = fromRows({{0.0, 0.0}, {0.1, 0.1}, {0.9, 0.9}, {1.0, 1.0}});
    for (std::uint64_t seed = 0; seed < 20; ++seed)
    {
        GmmOptions opt;
        opt.seed = seed;
        auto g = fitGmm(m, opt);
        int lo = detail::norm2(g.means[0]) < detail::norm2(g.means[1]) ? 0 : 1;
        EXPECT_NEAR(g.means[lo][0], 0.05, 1e-3);
        EXPECT_NEAR(g.means[1 - lo][0], 0.95, 1e-3);
        auto resp = responsibilities(g, m);
        for (std::size_t i = 0; i < 4; ++i)
            EXPECT_GT(resp[i][i < 2 ? lo : 1 - lo], 0.99);
        auto r = partitionClients(m, g);
        EXPECT_EQ(r.cleanSet, (std::vector<std::size_t>{0, 1}));
        EXPECT_EQ(r.noisySet, (std::vector<std::size_t>{2, 3}));
    }
}

TEST(Gmm, IdenticalRowsStayFinite)
{
    auto m = fromRows({{0.5, 0.5}, {0.5, 0.5}, {0.5, 0.5}, {0.5, 0.5}});
    auto g = fitGmm(m);
    for (int k = 0; k < 2; ++k)
        for (double v : g.variances[k])
        {
            EXPECT_TRUE(std::isfinite(v));
            EXPECT_GE(v, 1e-6);
        }
    for (double ll : g.logLikelihoodTrace)
        EXPECT_TRUE(std::isfinite(ll));
    EXPECT_NO_THROW(partitionClients(m, g));
}

TEST(Gmm, LogLikelihoodNondecreasing)
{
    Rng rng(6);
    for (int trial = 0; trial < 300; ++trial)
    {
        auto m = randomMatrix(rng, 5 + trial % 20, 1 + trial % 6);
        GmmOptions opt;
        opt.seed = static_cast<std::uint64_t>(trial);
        auto g = fitGmm(m, opt);
        ASSERT_GE(g.logLikelihoodTrace.size(), 2u);
        for (std::size_t i = 1; i < g.logLikelihoodTrace.size(); ++i)
            EXPECT_GE(g.logLikelihoodTrace[i], g.logLikelihoodTrace[i - 1] - 1e-9);
        EXPECT_LE(g.logLikelihoodTrace.size(), 201u);
    }
}

TEST(Gmm, TooFewRowsOrIncompleteIsUsageError)
{
    EXPECT_THROW(fitGmm(fromRows({{0.1}})), UsageError);
    IndicatorMatrix m;
    m.addRow(0, {0.1});
    m.addRow(1, {0.0}, {false});
    EXPECT_THROW(fitGmm(m), UsageError);
}

TEST(Gmm, DensityMatchesDirectEvaluation)
{
    Rng rng(7);
    auto m = randomMatrix(rng, 12, 3);
    auto g = fitGmm(m);
    auto resp = responsibilities(g, m);
    for (std::size_t i = 0; i < m.rows(); ++i)
    {
        double p0 = g.weights[0] * oracle::gaussianDensity(m.values[i], g.means[0], g.variances[0]);
        double p1 = g.weights[1] * oracle::gaussianDensity(m.values[i], g.means[1], g.variances[1]);
        EXPECT_NEAR(resp[i][0], p0 / (p0 + p1), 1e-9);
    }
}

//------------------------------------------------------------------------------
TEST(PartitionClients, TiesGoToClean)
{
    auto m = fromRows({{0.1}, {0.2}, {0.9}});
    GmmModel g;
    g.means = {std::vector<double>{0.5}, std::vector<double>{0.5}};
    g.variances = {std::vector<double>{1.0}, std::vector<double>{1.0}};
    auto resp = responsibilities(g, m);
    for (const auto& r : resp)
        EXPECT_EQ(r[0], 0.5);
    auto out = partitionClients(m, g);
    EXPECT_TRUE(out.noisySet.empty());
    EXPECT_EQ(out.cleanSet.size(), 3u);
}

TEST(PartitionClients, InvariantToComponentOrder)
{
    Rng rng(8);
    for (int trial = 0; trial < 100; ++trial)
    {
        auto m = normalizeColumns(randomMatrix(rng, 10, 3));
        GmmOptions opt;
        opt.seed = static_cast<std::uint64_t>(trial);
        auto g = fitGmm(m, opt);
        auto swapped = g;
        std::swap(swapped.means[0], swapped.means[1]);
        std::swap(swapped.variances[0], swapped.variances[1]);
        std::swap(swapped.weights[0], swapped.weights[1]);
        auto a = partitionClients(m, g);
        auto b = partitionClients(m, swapped);
        EXPECT_EQ(a.cleanSet, b.cleanSet);
        EXPECT_EQ(a.noisySet, b.noisySet);
    }
}

TEST(PartitionClients, HighLossMinorityIsTheNoisySet)
{
    // 14 low-loss rows and 6 high-loss rows, the typical detection shape.
    std::vector<std::vector<double>> rows;
    Rng rng(9);
    std::uniform_real_distribution<double> low(0.0, 0.1), high(0.7, 1.0);
    for (int i = 0; i < 20; ++i)
    {
        auto& u = i % 3 == 2 && i < 18 ? high : low;
        rows.push_back({u(rng), u(rng), u(rng)});
    }
    auto m = fromRows(rows);
    const std::vector<std::size_t> expected{2, 5, 8, 11, 14, 17};
    for (std::uint64_t seed = 0; seed < 20; ++seed)
    {
        DetectOptions opt;
        opt.normalize = false;
        opt.gmm.seed = seed;
        EXPECT_EQ(detectNoisyClients(m, opt).noisySet, expected) << "seed " << seed;
    }
}

TEST(PartitionClients, CoversAllClientsDisjointly)
{
    Rng rng(10);
    for (int trial = 0; trial < 100; ++trial)
    {
        auto m = randomMatrix(rng, 4 + trial % 15, 3);
        DetectOptions opt;
        opt.gmm.seed = static_cast<std::uint64_t>(trial);
        auto r = detectNoisyClients(m, opt);
        std::vector<std::size_t> all;
        std::merge(r.cleanSet.begin(), r.cleanSet.end(), r.noisySet.begin(),
                   r.noisySet.end(), std::back_inserter(all));
        std::sort(all.begin(), all.end());
        EXPECT_EQ(all, m.clientIds);
    }
}

//------------------------------------------------------------------------------
TEST(DetectionMetrics, PerfectDetection)
{
    DetectionResult r;
    r.noisySet = {1, 4};
    auto d = detectionMetrics(r, {1, 4});
    EXPECT_EQ(d.recall, 1.0);
    EXPECT_EQ(d.precision, 1.0);
    EXPECT_TRUE(d.match);
}

TEST(DetectionMetrics, EverythingFlaggedHalfNoisy)
{
    DetectionResult r;
    r.noisySet = {0, 1, 2, 3};
    auto d = detectionMetrics(r, {0, 2});
    EXPECT_EQ(d.recall, 1.0);
    EXPECT_EQ(d.precision, 0.5);
    EXPECT_FALSE(d.match);
}

TEST(DetectionMetrics, SevenOfEight)
{
    DetectionResult r;
    r.noisySet = {0, 1, 2, 3, 4, 5, 6};
    auto d = detectionMetrics(r, {0, 1, 2, 3, 4, 5, 6, 7});
    EXPECT_EQ(d.recall, 0.875);
    EXPECT_EQ(d.precision, 1.0);
    EXPECT_FALSE(d.match);
}

TEST(DetectionMetrics, EmptySets)
{
    DetectionResult r;
    auto none = detectionMetrics(r, {});
    EXPECT_EQ(none.precision, 1.0);
    EXPECT_EQ(none.recall, 1.0);
    EXPECT_TRUE(none.match);
    auto missed = detectionMetrics(r, {3});
    EXPECT_EQ(missed.precision, 0.0);
    EXPECT_EQ(missed.recall, 0.0);
}

TEST(SweepGmmSeeds, IndependentOfThreads)
{
    Rng rng(11);
    auto m = randomMatrix(rng, 20, 5);
    auto a = sweepGmmSeeds(m, {0, 1, 2}, 50, 100, {}, 1);
    auto b = sweepGmmSeeds(m, {0, 1, 2}, 50, 100, {}, 4);
    EXPECT_EQ(a.recall, b.recall);
    EXPECT_EQ(a.precision, b.precision);
    EXPECT_EQ(a.matchRatio, b.matchRatio);
    EXPECT_EQ(a.runs, 50u);
}

//------------------------------------------------------------------------------
TEST(IndicatorText, RoundTripWithMissingCells)
{
    Rng rng(12);
    auto m = randomMatrix(rng, 6, 3);
    m.present[2][1] = false;
    m.values[2][1] = std::nan("");
    m.clientIds = {5, 1, 9, 2, 3, 0};
    std::stringstream ss;
    writeIndicatorMatrix(ss, m);
    auto back = readIndicatorMatrix(ss);
    EXPECT_EQ(back.clientIds, m.clientIds);
    EXPECT_EQ(back.present, m.present);
    for (std::size_t i = 0; i < m.rows(); ++i)
        for (std::size_t c = 0; c < m.cols(); ++c)
            if (m.present[i][c])
            {
                EXPECT_EQ(back.values[i][c], m.values[i][c]);
            }
    std::stringstream again;
    writeIndicatorMatrix(again, back);
    EXPECT_EQ(again.str(), ss.str());
}

TEST(IndicatorText, MalformedTablesAreSyntaxErrors)
{
    auto code = [](const std::string& text)
    {
        std::stringstream ss(text);
        try
        {
            readIndicatorMatrix(ss);
        }
        catch (const ConfigError& e)
        {
            return e.code();
        }
        return ConfigErrc::invalid;
    };
    EXPECT_EQ(code(""), ConfigErrc::syntax);
    EXPECT_EQ(code("client\n"), ConfigErrc::syntax);
    EXPECT_EQ(code("client,0,1\n0,0.5\n"), ConfigErrc::syntax);
    EXPECT_EQ(code("client,0\n0,abc\n"), ConfigErrc::syntax);
    EXPECT_EQ(code("client,0\n"), ConfigErrc::syntax);
}
