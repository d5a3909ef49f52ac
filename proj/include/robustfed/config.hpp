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

#ifndef ROBUSTFED_CONFIG_HPP
#define ROBUSTFED_CONFIG_HPP

// Experiment configuration: a sectioned key/value file
//
//   [data]       classes, max_class_count, imbalance_ratio, class_counts,
//                feature_dim, blob_spread
//   [model]      hidden_dim
//   [partition]  clients, dirichlet_alpha, bernoulli_p
//   [noise]      rho, eta_low, eta_high, annotator_epochs
//   [protocol]   rounds, warmup_rounds, local_epochs, temperature,
//                lambda_max, ramp_length, la
//   [optimizer]  lr, beta1, beta2, weight_decay, batch_size
//   [run]        seed, output, threads
//
// Omitted keys take the defaults below; unknown sections or keys are
// rejected.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "data.hpp"
#include "errors.hpp"
#include "federation.hpp"
#include "nn.hpp"

namespace robustfed
{

//------------------------------------------------------------------------------
struct DataConfig
{
    std::size_t classes = 5;
    std::size_t maxClassCount = 2000;
    double imbalanceRatio = 10.0;
    std::vector<std::size_t> classCounts; // overrides the long-tailed profile
    std::size_t featureDim = 16;
    double blobSpread = 2.0;

    std::vector<std::size_t> resolvedCounts() const
    {
        if (!classCounts.empty())
            return classCounts;
        return longTailedCounts(classes, maxClassCount, imbalanceRatio);
    }
};

//------------------------------------------------------------------------------
struct ExperimentConfig
{
    DataConfig data;
    PartitionConfig partition;
    NoiseConfig noise;
    ProtocolConfig protocol;
    std::uint64_t seed = 1;
    std::string output = "results.jsonl";
    std::size_t threads = 0; // 0 = all available cores

    /// Copies the experiment seed and thread count into every component.
    ExperimentConfig& reseed(std::uint64_t s)
    {
        seed = s;
        partition.seed = s;
        noise.seed = s;
        protocol.seed = s;
        return *this;
    }

    ExperimentConfig& setThreads(std::size_t n)
    {
        threads = n;
        protocol.threads = n == 0 ? defaultThreads() : n;
        return *this;
    }
};

//------------------------------------------------------------------------------
/// The desk-scale benchmark: 5 long-tailed classes (head/tail ratio 10),
/// 20 clients, 40% noisy clients with local noise rates in [0.3, 0.5].
inline ExperimentConfig defaultConfig()
{
    ExperimentConfig cfg;
    cfg.protocol.loss.rampLength = cfg.protocol.totalRounds - cfg.protocol.warmupRounds;
    cfg.reseed(cfg.seed);
    cfg.setThreads(cfg.threads);
    return cfg;
}

namespace detail
{

using Ptree = boost::property_tree::ptree;

inline const std::map<std::string, std::set<std::string>>& knownKeys()
{
    static const std::map<std::string, std::set<std::string>> keys = {
        {"data", {"classes", "max_class_count", "imbalance_ratio", "class_counts",
                  "feature_dim", "blob_spread"}},
        {"model", {"hidden_dim"}},
        {"partition", {"clients", "dirichlet_alpha", "bernoulli_p"}},
        {"noise", {"rho", "eta_low", "eta_high", "annotator_epochs"}},
        {"protocol", {"rounds", "warmup_rounds", "local_epochs", "temperature",
                      "lambda_max", "ramp_length", "la"}},
        {"optimizer", {"lr", "beta1", "beta2", "weight_decay", "batch_size"}},
        {"run", {"seed", "output", "threads"}},
    };
    return keys;
}

class SectionReader
{
public:
    SectionReader(const Ptree& root, std::string section)
        : node_(root.get_child_optional(section)), section_(std::move(section))
    {}

    template <typename T>
    void read(const std::string& key, T& out)
    {
        auto raw = rawValue(key);
        if (!raw)
            return;
        out = parse<T>(key, *raw);
    }

    bool has(const std::string& key) const {return rawValue(key).has_value();}

    std::string name(const std::string& key) const {return "[" + section_ + "] " + key;}

private:
    std::optional<std::string> rawValue(const std::string& key) const
    {
        if (!node_)
            return std::nullopt;
        auto v = node_->get_optional<std::string>(key);
        if (!v)
            return std::nullopt;
        return *v;
    }

    template <typename T>
    T parse(const std::string& key, const std::string& text) const
    {
        auto bad = [&](const std::string& why)
        {
            return ConfigError(name(key) + ": " + why + " (got '" + text + "')",
                               ConfigErrc::syntax);
        };
        if constexpr (std::is_same_v<T, bool>)
        {
            if (text == "true" || text == "1" || text == "yes" || text == "on")
                return true;
            if (text == "false" || text == "0" || text == "no" || text == "off")
                return false;
            throw bad("expected a boolean");
        }
        else if constexpr (std::is_same_v<T, std::string>)
        {
            return text;
        }
        else if constexpr (std::is_same_v<T, std::vector<std::size_t>>)
        {
            std::vector<std::size_t> out;
            std::stringstream ss(text);
            std::string item;
            while (std::getline(ss, item, ','))
                out.push_back(parse<std::size_t>(key, item));
            return out;
        }
        else if constexpr (std::is_floating_point_v<T>)
        {
            try
            {
                std::size_t used = 0;
                double v = std::stod(text, &used);
                if (text.find_first_not_of(" \t", used) != std::string::npos)
                    throw bad("trailing characters after number");
                return static_cast<T>(v);
            }
            catch (const std::logic_error&)
            {
                throw bad("expected a number");
            }
        }
        else
        {
            static_assert(std::is_integral_v<T>);
            auto trimmed = text;
            trimmed.erase(0, trimmed.find_first_not_of(" \t"));
            if (trimmed.empty() || trimmed.front() == '-')
            {
                if constexpr (std::is_unsigned_v<T>)
                    throw bad("expected a nonnegative integer");
            }
            try
            {
                std::size_t used = 0;
                long long v = std::stoll(trimmed, &used);
                if (trimmed.find_first_not_of(" \t", used) != std::string::npos)
                    throw bad("expected an integer");
                return static_cast<T>(v);
            }
            catch (const std::logic_error&)
            {
                throw bad("expected an integer");
            }
        }
    }

    boost::optional<const Ptree&> node_;
    std::string section_;
};

inline void require(bool ok, const std::string& msg)
{
    if (!ok)
        throw ConfigError(msg, ConfigErrc::outOfRange);
}

} // namespace detail

//------------------------------------------------------------------------------
/// Validates every range and cross-field constraint.
inline void validate(const ExperimentConfig& c)
{
    using detail::require;
    const auto& d = c.data;
    require(d.classes >= 2, "[data] classes must be >= 2");
    require(d.maxClassCount >= 1, "[data] max_class_count must be >= 1");
    require(d.imbalanceRatio >= 1.0, "[data] imbalance_ratio must be >= 1");
    require(d.classCounts.empty() || d.classCounts.size() == d.classes,
            "[data] class_counts must list exactly `classes` entries");
    require(d.featureDim >= 1, "[data] feature_dim must be >= 1");
    require(d.blobSpread > 0.0, "[data] blob_spread must be > 0");

    require(c.partition.clients >= 2, "[partition] clients must be >= 2");
    require(c.partition.dirichletAlpha > 0.0, "[partition] dirichlet_alpha must be > 0");
    require(c.partition.bernoulliP > 0.0 && c.partition.bernoulliP <= 1.0,
            "[partition] bernoulli_p must lie in (0, 1]");

    const auto& n = c.noise;
    require(n.globalRate >= 0.0 && n.globalRate < 1.0, "[noise] rho must lie in [0, 1)");
    require(n.etaLow >= 0.0 && n.etaLow < 1.0, "[noise] eta_low must lie in [0, 1)");
    require(n.etaHigh >= 0.0 && n.etaHigh < 1.0, "[noise] eta_high must lie in [0, 1)");
    if (n.etaLow > n.etaHigh)
    {
        std::ostringstream os;
        os << "[noise] eta_low (" << n.etaLow << ") must not exceed eta_high ("
           << n.etaHigh << ")";
        throw ConfigError(os.str(), ConfigErrc::outOfRange);
    }

    const auto& p = c.protocol;
    require(p.totalRounds >= 2, "[protocol] rounds must be >= 2");
    require(p.warmupRounds >= 1 && p.warmupRounds < p.totalRounds,
            "[protocol] warmup_rounds must satisfy 1 <= warmup_rounds < rounds");
    require(p.localEpochs >= 1, "[protocol] local_epochs must be >= 1");
    require(p.loss.temperature > 0.0, "[protocol] temperature must be > 0");
    require(p.loss.lambdaMax >= 0.0 && p.loss.lambdaMax <= 1.0,
            "[protocol] lambda_max must lie in [0, 1]");
    require(p.loss.rampLength >= 1, "[protocol] ramp_length must be >= 1");

    const auto& a = p.adam;
    require(a.lr > 0.0, "[optimizer] lr must be > 0");
    require(a.beta1 >= 0.0 && a.beta1 < 1.0, "[optimizer] beta1 must lie in [0, 1)");
    require(a.beta2 >= 0.0 && a.beta2 < 1.0, "[optimizer] beta2 must lie in [0, 1)");
    require(a.weightDecay >= 0.0, "[optimizer] weight_decay must be >= 0");
    require(a.batchSize >= 1, "[optimizer] batch_size must be >= 1");
}

//------------------------------------------------------------------------------
inline ExperimentConfig parseConfigText(const std::string& text,
                                        const std::string& origin = "<string>")
{
    detail::Ptree root;
    std::istringstream is(text);
    try
    {
        boost::property_tree::ini_parser::read_ini(is, root);
    }
    catch (const boost::property_tree::ini_parser_error& e)
    {
        throw ConfigError(origin + ":" + std::to_string(e.line()) + ": " + e.message(),
                          ConfigErrc::syntax);
    }

    const auto& known = detail::knownKeys();
    for (const auto& [section, node] : root)
    {
        auto it = known.find(section);
        if (it == known.end())
        {
            if (node.empty())
                throw ConfigError(origin + ": key '" + section +
                                  "' appears outside any section", ConfigErrc::unknownKey);
            throw ConfigError(origin + ": unknown section [" + section + "]",
                              ConfigErrc::unknownKey);
        }
        for (const auto& [key, unused] : node)
            if (!it->second.count(key))
                throw ConfigError(origin + ": unknown key '" + key + "' in [" +
                                  section + "]", ConfigErrc::unknownKey);
    }

    ExperimentConfig c = defaultConfig();
    {
        detail::SectionReader s(root, "data");
        s.read("classes", c.data.classes);
        s.read("max_class_count", c.data.maxClassCount);
        s.read("imbalance_ratio", c.data.imbalanceRatio);
        s.read("class_counts", c.data.classCounts);
        s.read("feature_dim", c.data.featureDim);
        s.read("blob_spread", c.data.blobSpread);
    }
    {
        detail::SectionReader s(root, "model");
        s.read("hidden_dim", c.protocol.hiddenDim);
    }
    {
        detail::SectionReader s(root, "partition");
        s.read("clients", c.partition.clients);
        s.read("dirichlet_alpha", c.partition.dirichletAlpha);
        s.read("bernoulli_p", c.partition.bernoulliP);
    }
    {
        detail::SectionReader s(root, "noise");
        s.read("rho", c.noise.globalRate);
        s.read("eta_low", c.noise.etaLow);
        s.read("eta_high", c.noise.etaHigh);
        s.read("annotator_epochs", c.noise.annotatorEpochs);
    }
    {
        detail::SectionReader s(root, "protocol");
        s.read("rounds", c.protocol.totalRounds);
        s.read("warmup_rounds", c.protocol.warmupRounds);
        s.read("local_epochs", c.protocol.localEpochs);
        s.read("temperature", c.protocol.loss.temperature);
        s.read("lambda_max", c.protocol.loss.lambdaMax);
        s.read("la", c.protocol.loss.laEnabled);
        c.protocol.loss.rampLength = c.protocol.totalRounds - c.protocol.warmupRounds;
        s.read("ramp_length", c.protocol.loss.rampLength);
    }
    {
        detail::SectionReader s(root, "optimizer");
        s.read("lr", c.protocol.adam.lr);
        s.read("beta1", c.protocol.adam.beta1);
        s.read("beta2", c.protocol.adam.beta2);
        s.read("weight_decay", c.protocol.adam.weightDecay);
        s.read("batch_size", c.protocol.adam.batchSize);
    }
    {
        detail::SectionReader s(root, "run");
        s.read("seed", c.seed);
        s.read("output", c.output);
        s.read("threads", c.threads);
    }
    validate(c);
    c.reseed(c.seed);
    c.setThreads(c.threads);
    return c;
}

inline ExperimentConfig parseConfig(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in)
        throw ConfigError("cannot open config file '" + path.string() + "'",
                          ConfigErrc::missingFile);
    std::stringstream buf;
    buf << in.rdbuf();
    return parseConfigText(buf.str(), path.string());
}

//------------------------------------------------------------------------------
/// Data, clean partition, and noisy partition for one experiment seed.
struct Scenario
{
    GlobalDataset data;
    std::vector<ClientDataset> cleanClients;
    std::vector<ClientDataset> clients;
    Arch arch;
};

inline Scenario buildScenario(const ExperimentConfig& cfg)
{
    Scenario s;
    s.data = generateGlobal(cfg.data.classes, cfg.data.resolvedCounts(),
                            cfg.data.featureDim, cfg.data.blobSpread, cfg.seed);
    s.cleanClients = partition(s.data, cfg.partition);
    s.arch = {cfg.data.featureDim, cfg.protocol.hiddenDim, cfg.data.classes};
    s.clients = generateNoise(s.cleanClients, cfg.noise, s.arch, cfg.protocol.adam,
                              cfg.protocol.threads);
    return s;
}

} // namespace robustfed

#endif // ROBUSTFED_CONFIG_HPP
