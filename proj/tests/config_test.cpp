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

#include <robustfed/config.hpp>

#include <gtest/gtest.h>

#include <filesystem>

using namespace robustfed;

namespace
{

ConfigErrc codeOf(const std::string& text)
{
    try
    {
        parseConfigText(text);
    }
    catch (const ConfigError& e)
    {
        return e.code();
    }
    ADD_FAILURE() << "no error for:\n" << text;
    return ConfigErrc::invalid;
}

std::string messageOf(const std::string& text)
{
    try
    {
        parseConfigText(text);
    }
    catch (const ConfigError& e)
    {
        return e.what();
    }
    return {};
}

} // namespace

//------------------------------------------------------------------------------
TEST(Config, EmptyTextGivesDefaults)
{
    auto c = parseConfigText("");
    EXPECT_EQ(c.partition.clients, 20u);
    EXPECT_EQ(c.partition.dirichletAlpha, 2.0);
    EXPECT_EQ(c.partition.bernoulliP, 0.9);
    EXPECT_EQ(c.protocol.warmupRounds, 10);
    EXPECT_EQ(c.protocol.totalRounds, 100);
    EXPECT_EQ(c.protocol.localEpochs, 5u);
    EXPECT_EQ(c.protocol.loss.temperature, 0.8);
    EXPECT_EQ(c.protocol.loss.lambdaMax, 0.8);
    EXPECT_EQ(c.protocol.loss.rampLength, 90);
    EXPECT_EQ(c.protocol.adam.lr, 3e-4);
    EXPECT_EQ(c.protocol.adam.weightDecay, 5e-4);
    EXPECT_EQ(c.protocol.adam.batchSize, 16u);
    EXPECT_EQ(c.noise.globalRate, 0.4);
    EXPECT_EQ(c.noise.etaLow, 0.3);
    EXPECT_EQ(c.noise.etaHigh, 0.5);
    EXPECT_EQ(c.data.classes, 5u);
    EXPECT_EQ(c.data.imbalanceRatio, 10.0);
}

TEST(Config, NoiseSectionEchoesExactly)
{
    auto c = parseConfigText("[noise]\nrho = 0.4\neta_low = 0.3\neta_high = 0.5\n");
    EXPECT_EQ(c.noise.globalRate, 0.4);
    EXPECT_EQ(c.noise.etaLow, 0.3);
    EXPECT_EQ(c.noise.etaHigh, 0.5);
}

TEST(Config, SeedPropagatesToEveryComponent)
{
    auto c = parseConfigText("[run]\nseed = 42\nthreads = 3\n");
    EXPECT_EQ(c.seed, 42u);
    EXPECT_EQ(c.partition.seed, 42u);
    EXPECT_EQ(c.noise.seed, 42u);
    EXPECT_EQ(c.protocol.seed, 42u);
    EXPECT_EQ(c.protocol.threads, 3u);
}

TEST(Config, RampFollowsStageTwoLengthUnlessSet)
{
    EXPECT_EQ(parseConfigText("[protocol]\nrounds = 50\nwarmup_rounds = 20\n")
                  .protocol.loss.rampLength, 30);
    EXPECT_EQ(parseConfigText("[protocol]\nramp_length = 7\n").protocol.loss.rampLength, 7);
}

TEST(Config, EtaOrderErrorNamesBothKeys)
{
    const std::string text = "[noise]\neta_low = 0.6\neta_high = 0.5\n";
    EXPECT_EQ(codeOf(text), ConfigErrc::outOfRange);
    auto msg = messageOf(text);
    EXPECT_NE(msg.find("eta_low"), std::string::npos);
    EXPECT_NE(msg.find("eta_high"), std::string::npos);
}

TEST(Config, DistinctErrorCodes)
{
    EXPECT_EQ(codeOf("[data\nclasses = 3\n"), ConfigErrc::syntax);
    EXPECT_EQ(codeOf("[data]\nclasses = three\n"), ConfigErrc::syntax);
    EXPECT_EQ(codeOf("[data]\ncolours = 3\n"), ConfigErrc::unknownKey);
    EXPECT_EQ(codeOf("[extras]\nx = 1\n"), ConfigErrc::unknownKey);
    EXPECT_EQ(codeOf("stray = 1\n"), ConfigErrc::unknownKey);
    EXPECT_EQ(codeOf("[protocol]\nwarmup_rounds = 100\n"), ConfigErrc::outOfRange);
    EXPECT_EQ(codeOf("[partition]\nbernoulli_p = 0\n"), ConfigErrc::outOfRange);
    EXPECT_EQ(codeOf("[noise]\nrho = 1.0\n"), ConfigErrc::outOfRange);
    EXPECT_EQ(codeOf("[partition]\nclients = -3\n"), ConfigErrc::syntax);
    EXPECT_EQ(codeOf("[data]\nclasses = 3\nclass_counts = 10,20\n"), ConfigErrc::outOfRange);
    try
    {
        parseConfig("/nonexistent/robustfed.ini");
        FAIL();
    }
    catch (const ConfigError& e)
    {
        EXPECT_EQ(e.code(), ConfigErrc::missingFile);
    }
}

TEST(Config, ExplicitClassCountsOverrideProfile)
{
    auto c = parseConfigText("[data]\nclasses = 3\nclass_counts = 10,20,30\n");
    EXPECT_EQ(c.data.resolvedCounts(), (std::vector<std::size_t>{10, 20, 30}));
}

TEST(Config, ShippedConfigsParse)
{
    namespace fs = std::filesystem;
    const fs::path dir = fs::path(ROBUSTFED_SOURCE_DIR) / "configs";
    std::size_t n = 0;
    for (const auto& entry : fs::directory_iterator(dir))
    {
        if (entry.path().extension() != ".ini")
            continue;
        EXPECT_NO_THROW(parseConfig(entry.path())) << entry.path();
        ++n;
    }
    EXPECT_GE(n, 3u);
    auto isic = parseConfig(dir / "isic.ini");
    EXPECT_EQ(isic.protocol.totalRounds, 300);
    EXPECT_EQ(isic.protocol.localEpochs, 1u);
    EXPECT_EQ(isic.protocol.warmupRounds, 20);
}

//------------------------------------------------------------------------------
TEST(Scenario, NoisyClientCountAndDeterminism)
{
    auto c = parseConfigText("[data]\nmax_class_count = 200\nfeature_dim = 4\n"
                             "[noise]\nannotator_epochs = 1\n[run]\nseed = 5\n");
    auto a = buildScenario(c);
    auto b = buildScenario(c);
    EXPECT_EQ(noisyTruth(a.clients).size(), 8u);
    EXPECT_EQ(noisyTruth(a.clients), noisyTruth(b.clients));
    EXPECT_EQ(a.clients, b.clients);
    EXPECT_EQ(a.cleanClients.size(), 20u);
}
