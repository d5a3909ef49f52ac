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

// robustfed: command-line front end.
//
//   robustfed run      --config F [--seed N] [--out F] [--baseline NAME] ...
//   robustfed ablate   --config F [--grid G] [--repeats N] [--t1-sweep LIST] ...
//   robustfed detect   --matrix F [--seed N] [--no-normalize]
//   robustfed plotdata --results F [--results F ...] [--sweep F] --out-dir D
//
// Relative output paths are placed under $ROBUSTFED_OUT_DIR when it is set.
// Exit status: 0 success, 1 usage or configuration error, 2 runtime error.

#include <robustfed/config.hpp>
#include <robustfed/detection.hpp>
#include <robustfed/federation.hpp>
#include <robustfed/harness.hpp>

#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace robustfed;

namespace
{

constexpr int exitUsage = 1;
constexpr int exitRuntime = 2;

//------------------------------------------------------------------------------
fs::path outputPath(const std::string& requested)
{
    fs::path p(requested);
    if (p.is_relative())
        if (const char* dir = std::getenv("ROBUSTFED_OUT_DIR"); dir && *dir)
            p = fs::path(dir) / p;
    return p;
}

std::ofstream openOutput(const fs::path& p)
{
    if (p.has_parent_path())
        fs::create_directories(p.parent_path());
    std::ofstream os(p, std::ios::binary);
    if (!os)
        throw std::runtime_error("cannot write '" + p.string() + "'");
    return os;
}

std::string joinIds(const std::vector<std::size_t>& ids)
{
    std::string s;
    for (std::size_t i = 0; i < ids.size(); ++i)
        s += (i ? "," : "") + std::to_string(ids[i]);
    return s;
}

std::vector<int> parseIntList(const std::string& text)
{
    std::vector<int> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ','))
    {
        try
        {
            std::size_t used = 0;
            out.push_back(std::stoi(item, &used));
            if (used != item.size())
                throw std::invalid_argument(item);
        }
        catch (const std::logic_error&)
        {
            throw UsageError("expected a comma-separated integer list, got '" + text + "'");
        }
    }
    if (out.empty())
        throw UsageError("empty integer list");
    return out;
}

//------------------------------------------------------------------------------
struct CommonOptions
{
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> threads;
    bool quiet = false;
};

ExperimentConfig loadConfig(const CommonOptions& o)
{
    ExperimentConfig cfg = o.config.empty() ? defaultConfig() : parseConfig(o.config);
    if (o.seed)
        cfg.reseed(*o.seed);
    if (o.threads)
        cfg.setThreads(*o.threads);
    return cfg;
}

//------------------------------------------------------------------------------
struct RunOptions
{
    CommonOptions common;
    std::string out;
    std::string baseline;
    std::string exportMatrix;
    std::string exportData;
};

int cmdRun(const RunOptions& o)
{
    ExperimentConfig cfg = loadConfig(o.common);
    const fs::path out = outputPath(o.out.empty() ? cfg.output : o.out);
    Scenario sc = buildScenario(cfg);

    if (!o.exportData.empty())
    {
        auto os = openOutput(outputPath(o.exportData));
        writeClientsText(os, sc.clients);
    }

    auto os = openOutput(out);
    auto stream = [&](const RoundRecord& r) {writeRecord(os, r);};
    std::vector<RoundRecord> records;
    if (!o.baseline.empty())
    {
        records = runBaseline(o.baseline, sc.clients, sc.data.test, cfg.protocol, stream).second;
    }
    else
    {
        ExperimentOptions opt;
        opt.onRound = stream;
        auto res = runExperiment(sc.clients, sc.data.test, cfg.protocol, opt);
        records = std::move(res.records);
        if (!o.exportMatrix.empty())
        {
            auto ms = openOutput(outputPath(o.exportMatrix));
            writeIndicatorMatrix(ms, res.indicators);
        }
        auto m = detectionMetrics(res.detection, noisyTruth(sc.clients));
        std::cout << "clean: " << joinIds(res.detection.cleanSet) << '\n'
                  << "noisy: " << joinIds(res.detection.noisySet) << '\n'
                  << "truth: " << joinIds(noisyTruth(sc.clients)) << '\n'
                  << "recall " << m.recall << " precision " << m.precision
                  << " match " << (m.match ? "yes" : "no") << '\n';
    }
    os.close();
    if (!os)
        throw std::runtime_error("failed writing '" + out.string() + "'");
    auto s = summarize(records);
    std::cout << "best " << s.best << " last " << s.last << '\n'
              << "wrote " << records.size() << " records to " << out.string() << '\n';
    return 0;
}

//------------------------------------------------------------------------------
struct AblateOptions
{
    CommonOptions common;
    std::string out = "ablation.csv";
    std::vector<std::string> grids;
    std::size_t repeats = 100;
    std::string t1Sweep = "6,8,10,12,14";
    std::string seeds;
};

int cmdAblate(const AblateOptions& o)
{
    ExperimentConfig cfg = loadConfig(o.common);
    std::vector<std::uint64_t> seeds;
    if (!o.seeds.empty())
        for (int s : parseIntList(o.seeds))
        {
            if (s < 0)
                throw UsageError("seeds must be nonnegative");
            seeds.push_back(static_cast<std::uint64_t>(s));
        }

    std::vector<AblationSpec> specs;
    auto grids = o.grids.empty() ? std::vector<std::string>{"detection", "strategy", "t1"}
                                 : o.grids;
    for (const auto& g : grids)
    {
        std::vector<AblationSpec> part;
        if (g == "detection")
            part = detectionGrid(o.repeats);
        else if (g == "strategy")
            part = strategyGrid();
        else if (g == "t1")
            part = warmupSweepGrid(parseIntList(o.t1Sweep), o.repeats);
        else
            throw UsageError("unknown grid '" + g + "' (expected detection, strategy or t1)");
        for (auto& s : part)
        {
            s.seeds = seeds;
            if (s.warmupRounds >= cfg.protocol.totalRounds)
                throw UsageError("T1 = " + std::to_string(s.warmupRounds) +
                                 " is not below the round count");
            specs.push_back(std::move(s));
        }
    }

    AblationRunner runner(cfg);
    auto rows = runner.run(specs);
    const fs::path out = outputPath(o.out);
    auto os = openOutput(out);
    writeAblationCsv(os, rows);
    if (!o.common.quiet)
        writeAblationCsv(std::cout, rows);
    std::cout << "wrote " << rows.size() << " rows to " << out.string() << '\n';
    return 0;
}

//------------------------------------------------------------------------------
struct DetectCmdOptions
{
    std::string matrix;
    std::uint64_t seed = 0;
    bool noNormalize = false;
};

int cmdDetect(const DetectCmdOptions& o)
{
    std::ifstream in(o.matrix);
    if (!in)
        throw ConfigError("cannot open indicator table '" + o.matrix + "'",
                          ConfigErrc::missingFile);
    auto m = readIndicatorMatrix(in);
    DetectOptions opt;
    opt.normalize = !o.noNormalize;
    opt.gmm.seed = o.seed;
    auto r = detectNoisyClients(m, opt);
    std::cout << "clean: " << joinIds(r.cleanSet) << '\n'
              << "noisy: " << joinIds(r.noisySet) << '\n';
    for (std::size_t i = 0; i < m.rows(); ++i)
        std::cout << "posterior " << m.clientIds[i] << ' '
                  << formatDouble(r.noisyPosterior[i]) << '\n';
    return 0;
}

//------------------------------------------------------------------------------
struct PlotOptions
{
    std::vector<std::string> results;
    std::string sweep;
    std::string outDir = ".";
};

int cmdPlotdata(const PlotOptions& o)
{
    if (o.results.empty() && o.sweep.empty())
        throw UsageError("plotdata needs --results and/or --sweep");
    const fs::path dir = outputPath(o.outDir);
    if (!o.results.empty())
    {
        auto os = openOutput(dir / "curves.csv");
        os << "series,round,stage,bacc\n";
        for (const auto& file : o.results)
        {
            std::ifstream in(file);
            if (!in)
                throw ConfigError("cannot open results file '" + file + "'",
                                  ConfigErrc::missingFile);
            const std::string series = fs::path(file).stem().string();
            for (const auto& r : readRecords(in))
                os << series << ',' << r.round << ',' << toString(r.stage) << ','
                   << (std::isfinite(r.bacc) ? formatDouble(r.bacc) : "NA") << '\n';
        }
        std::cout << "wrote " << (dir / "curves.csv").string() << '\n';
    }
    if (!o.sweep.empty())
    {
        std::ifstream in(o.sweep);
        if (!in)
            throw ConfigError("cannot open ablation table '" + o.sweep + "'",
                              ConfigErrc::missingFile);
        auto rows = readAblationCsv(in);
        auto os = openOutput(dir / "t1_sweep.csv");
        os << "t1,re,pr,mr\n";
        std::size_t n = 0;
        for (const auto& r : rows)
        {
            if (r.spec.grid != "t1_sweep")
                continue;
            os << r.warmupRounds << ',' << formatDouble(r.recall.value_or(NAN)) << ','
               << formatDouble(r.precision.value_or(NAN)) << ','
               << formatDouble(r.matchRatio.value_or(NAN)) << '\n';
            ++n;
        }
        if (n == 0)
            throw ConfigError("'" + o.sweep + "' holds no t1_sweep rows");
        std::cout << "wrote " << (dir / "t1_sweep.csv").string() << '\n';
    }
    return 0;
}

void addCommon(CLI::App* app, CommonOptions& o)
{
    app->add_option("--config", o.config, "Experiment configuration (INI)");
    app->add_option("--seed", o.seed, "Override the experiment seed");
    app->add_option("--threads", o.threads, "Worker threads (0 = all cores)");
    app->add_flag("--quiet", o.quiet, "Suppress warnings and tables on stdout");
}

} // namespace

//------------------------------------------------------------------------------
int main(int argc, char** argv)
{
    CLI::App app{"Federated learning with noisy-client detection and robust training"};
    app.require_subcommand(1);

    RunOptions run;
    auto* runCmd = app.add_subcommand("run", "Run one experiment or a baseline");
    addCommon(runCmd, run.common);
    runCmd->add_option("--out", run.out, "Round records (JSON lines)");
    runCmd->add_option("--baseline", run.baseline, "fedavg or fedavg_la instead of the full protocol");
    runCmd->add_option("--export-matrix", run.exportMatrix, "Write the indicator table");
    runCmd->add_option("--export-data", run.exportData, "Write the noisy client datasets");

    AblateOptions ablate;
    auto* ablateCmd = app.add_subcommand("ablate", "Run ablation grids");
    addCommon(ablateCmd, ablate.common);
    ablateCmd->add_option("--out", ablate.out, "Result table (CSV)");
    ablateCmd->add_option("--grid", ablate.grids, "detection, strategy, t1 (repeatable)");
    ablateCmd->add_option("--repeats", ablate.repeats, "GMM seeds per detection cell")
        ->check(CLI::PositiveNumber);
    ablateCmd->add_option("--t1-sweep", ablate.t1Sweep, "Warm-up lengths, e.g. 6,8,10");
    ablateCmd->add_option("--seeds", ablate.seeds, "Experiment seeds averaged per cell");

    DetectCmdOptions detect;
    auto* detectCmd = app.add_subcommand("detect", "Detect noisy clients from an indicator table");
    detectCmd->add_option("--matrix", detect.matrix, "Indicator table")->required();
    detectCmd->add_option("--seed", detect.seed, "Mixture initialization seed");
    detectCmd->add_flag("--no-normalize", detect.noNormalize, "Skip per-class scaling");

    PlotOptions plot;
    auto* plotCmd = app.add_subcommand("plotdata", "Emit plot-ready CSV");
    plotCmd->add_option("--results", plot.results, "Round records to turn into curves");
    plotCmd->add_option("--sweep", plot.sweep, "Ablation table with a t1 sweep");
    plotCmd->add_option("--out-dir", plot.outDir, "Directory for the CSV files");

    try
    {
        app.parse(argc, argv);
    }
    catch (const CLI::ParseError& e)
    {
        int code = app.exit(e);
        return code == 0 ? 0 : exitUsage;
    }

    try
    {
        log::quiet() = run.common.quiet || ablate.common.quiet;
        if (*runCmd)
            return cmdRun(run);
        if (*ablateCmd)
            return cmdAblate(ablate);
        if (*detectCmd)
            return cmdDetect(detect);
        return cmdPlotdata(plot);
    }
    catch (const ConfigError& e)
    {
        std::cerr << "robustfed: configuration error: " << e.what() << '\n';
        return exitUsage;
    }
    catch (const UsageError& e)
    {
        std::cerr << "robustfed: usage error: " << e.what() << '\n';
        return exitUsage;
    }
    catch (const NumericError& e)
    {
        std::cerr << "robustfed: numeric error: " << e.what() << '\n';
        return exitRuntime;
    }
    catch (const std::exception& e)
    {
        std::cerr << "robustfed: error: " << e.what() << '\n';
        return exitRuntime;
    }
}
