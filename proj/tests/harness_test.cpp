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

#include <robustfed/harness.hpp>

#include <gtest/gtest.h>

#include <sstream>

using namespace robustfed;

namespace
{

ConfusionMatrix fromCounts(std::vector<std::vector<std::size_t>> counts)
{
    ConfusionMatrix cm(counts.size());
    cm.counts = std::move(counts);
    return cm;
}

ExperimentConfig tinyConfig()
{
    return parseConfigText("[data]\nmax_class_count = 120\nfeature_dim = 3\nclasses = 3\n"
                           "[partition]\nclients = 6\n"
                           "[noise]\nannotator_epochs = 1\n"
                           "[protocol]\nrounds = 5\nwarmup_rounds = 3\nlocal_epochs = 1\n"
                           "[model]\nhidden_dim = 0\n"
                           "[run]\nseed = 2\nthreads = 1\n");
}

} // namespace

//------------------------------------------------------------------------------
TEST(Bacc, DiagonalIsPerfect)
{
    EXPECT_EQ(bacc(fromCounts({{5, 0, 0}, {0, 2, 0}, {0, 0, 9}})), 1.0);
}

TEST(Bacc, MeanOfRecalls)
{
    EXPECT_DOUBLE_EQ(bacc(fromCounts({{4, 0}, {3, 3}})), 0.75);
    EXPECT_NEAR(bacc(fromCounts({{9, 1, 0}, {2, 6, 2}, {4, 3, 3}})), 0.6, 1e-15);
}

TEST(Bacc, EmptyRowsAreExcluded)
{
    EXPECT_DOUBLE_EQ(bacc(fromCounts({{4, 0, 0}, {0, 0, 0}, {1, 0, 1}})), 0.75);
    EXPECT_THROW(bacc(fromCounts({{0, 0}, {0, 0}})), UsageError);
}

TEST(Bacc, InvariantToIntegerScaling)
{
    Rng rng(1);
    std::uniform_int_distribution<std::size_t> cell(0, 30);
    for (int trial = 0; trial < 200; ++trial)
    {
        std::size_t C = 2 + trial % 5;
        std::vector<std::vector<std::size_t>> counts(C, std::vector<std::size_t>(C));
        for (auto& row : counts)
            for (auto& v : row)
                v = cell(rng);
        counts[0][0] += 1;
        auto scaled = counts;
        std::size_t k = 2 + trial % 7;
        for (auto& row : scaled)
            for (auto& v : row)
                v *= k;
        EXPECT_NEAR(bacc(fromCounts(counts)), bacc(fromCounts(scaled)), 1e-12);
    }
}

TEST(Bacc, RandomPredictorApproachesOneOverC)
{
    Rng rng(2);
    for (std::size_t C : {2u, 5u, 10u})
    {
        ConfusionMatrix cm(C);
        std::discrete_distribution<std::size_t> truth({5.0, 1.0, 0.2, 3.0, 1.0, 1.0,
                                                       1.0, 1.0, 1.0, 1.0});
        std::uniform_int_distribution<std::size_t> guess(0, C - 1);
        for (int i = 0; i < 100000; ++i)
        {
            std::size_t y = truth(rng) % C;
            cm.add(y, guess(rng));
        }
        EXPECT_EQ(cm.total(), 100000u);
        EXPECT_NEAR(bacc(cm), 1.0 / static_cast<double>(C), 0.02);
    }
}

TEST(Evaluate, ZeroParamsPredictClassZero)
{
    std::vector<Sample> test;
    for (std::size_t c = 0; c < 4; ++c)
        for (int i = 0; i < 5; ++i)
            test.push_back({{double(i), double(c)}, c});
    auto r = evaluate(ModelParams(Arch{2, 0, 4}), test);
    EXPECT_EQ(r.confusion.counts[2][0], 5u);
    EXPECT_DOUBLE_EQ(r.bacc, 0.25);
    auto again = evaluate(ModelParams(Arch{2, 0, 4}), test);
    EXPECT_EQ(again.confusion.counts, r.confusion.counts);
}

TEST(Evaluate, OracleParamsOnSeparableBlobs)
{
    // Class c sits at 10 * e_c; the linear model w_c = e_c, b = 0 picks it.
    Rng rng(3);
    std::normal_distribution<double> noise(0.0, 1.0);
    std::vector<Sample> test;
    for (std::size_t c = 0; c < 3; ++c)
        for (int i = 0; i < 200; ++i)
        {
            std::vector<double> x(3);
            for (std::size_t d = 0; d < 3; ++d)
                x[d] = (d == c ? 10.0 : 0.0) + noise(rng);
            test.push_back({x, c});
        }
    ModelParams p(Arch{3, 0, 3});
    for (std::size_t c = 0; c < 3; ++c)
        p.values[c * 3 + c] = 1.0;
    EXPECT_GE(evaluate(p, test).bacc, 0.99);
}

//------------------------------------------------------------------------------
TEST(Summarize, BestAndLastTen)
{
    std::vector<RoundRecord> recs(15);
    for (int i = 0; i < 15; ++i)
        recs[i].bacc = i == 2 ? 0.99 : 0.1 * (i % 3);
    auto s = summarize(recs);
    EXPECT_EQ(s.best, 0.99);
    double tail = 0.0;
    for (int i = 5; i < 15; ++i)
        tail += recs[i].bacc;
    EXPECT_DOUBLE_EQ(s.last, tail / 10.0);
}

TEST(Baseline, UnknownNameIsUsageError)
{
    auto cfg = tinyConfig();
    auto sc = buildScenario(cfg);
    EXPECT_THROW(runBaseline("fedprox", sc.clients, sc.data.test, cfg.protocol), UsageError);
}

TEST(Baseline, DeterministicAndLaDiffers)
{
    auto cfg = tinyConfig();
    auto sc = buildScenario(cfg);
    auto a = runBaseline("fedavg", sc.clients, sc.data.test, cfg.protocol);
    auto b = runBaseline("fedavg", sc.clients, sc.data.test, cfg.protocol);
    auto la = runBaseline("fedavg_la", sc.clients, sc.data.test, cfg.protocol);
    EXPECT_EQ(a.first.values, b.first.values);
    EXPECT_NE(a.first.values, la.first.values);
    EXPECT_EQ(a.second.size(), 5u);
}

//------------------------------------------------------------------------------
TEST(Grids, ShapeMatchesTheToggleTables)
{
    auto det = detectionGrid(10);
    ASSERT_EQ(det.size(), 5u);
    EXPECT_TRUE(det.back().toggles.la && det.back().toggles.perClass && det.back().toggles.norm);
    EXPECT_FALSE(det.front().toggles.perClass);
    auto strat = strategyGrid();
    ASSERT_EQ(strat.size(), 5u);
    EXPECT_TRUE(strat.back().toggles.kd && strat.back().toggles.daagg);
    EXPECT_TRUE(strat[1].toggles.excludeNoisy);
    auto sweep = warmupSweepGrid({6, 8, 10}, 5);
    ASSERT_EQ(sweep.size(), 3u);
    EXPECT_EQ(sweep[1].warmupRounds, 8);
}

TEST(AblationRunner, DetectionCellsAreReproducible)
{
    auto cfg = tinyConfig();
    AblationRunner a(cfg), b(cfg);
    auto specs = warmupSweepGrid({2, 3, 4}, 5);
    auto ra = a.run(specs);
    auto rb = b.run(specs);
    ASSERT_EQ(ra.size(), 3u);
    for (std::size_t i = 0; i < ra.size(); ++i)
    {
        EXPECT_EQ(ra[i].warmupRounds, specs[i].warmupRounds);
        EXPECT_EQ(ra[i].matchRatio, rb[i].matchRatio);
        EXPECT_EQ(ra[i].recall, rb[i].recall);
        EXPECT_FALSE(ra[i].best.has_value());
    }
}

TEST(AblationRunner, SweepCellMatchesDirectWarmup)
{
    // The cached trajectory must agree with a fresh warm-up run of T1 rounds.
    auto cfg = tinyConfig();
    AblationRunner runner(cfg);
    auto row = runner.run(warmupSweepGrid({2, 4}, 7))[0];
    const auto& sc = runner.scenario(cfg.seed);
    auto model = runWarmup(sc.clients, cfg.protocol, 2);
    auto m = buildIndicatorMatrix(model, sc.clients);
    auto direct = sweepGmmSeeds(m, noisyTruth(sc.clients), 7,
                                deriveSeed(cfg.seed, {stream::gmm}));
    EXPECT_EQ(*row.matchRatio, direct.matchRatio);
    EXPECT_EQ(*row.recall, direct.recall);
}

TEST(AblationRunner, FullStrategyCellMatchesRunExperiment)
{
    auto cfg = tinyConfig();
    AblationRunner runner(cfg);
    AblationSpec spec = strategyGrid().back();
    auto row = runner.runCell(spec);
    const auto& sc = runner.scenario(cfg.seed);
    auto direct = summarize(runExperiment(sc.clients, sc.data.test, cfg.protocol).records);
    EXPECT_EQ(*row.last, direct.last);
    EXPECT_EQ(*row.best, direct.best);
}

TEST(AblationCsv, RoundTrip)
{
    std::vector<AblationRow> rows(2);
    rows[0].spec = strategyGrid()[1];
    rows[0].warmupRounds = 10;
    rows[0].best = 0.8125;
    rows[0].last = 0.79;
    rows[0].wallSeconds = 1.5;
    rows[1].spec = detectionGrid(3)[2];
    rows[1].warmupRounds = 12;
    rows[1].recall = 0.9;
    rows[1].precision = 1.0;
    rows[1].matchRatio = 0.37;
    std::stringstream ss;
    writeAblationCsv(ss, rows);
    auto back = readAblationCsv(ss);
    ASSERT_EQ(back.size(), 2u);
    std::stringstream again;
    writeAblationCsv(again, back);
    EXPECT_EQ(again.str(), ss.str());
    EXPECT_EQ(back[1].spec.kind, AblationKind::detection);
    EXPECT_FALSE(back[1].best.has_value());

    std::stringstream bad("grid,oops\n");
    EXPECT_THROW(readAblationCsv(bad), ConfigError);
}
