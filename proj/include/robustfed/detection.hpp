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

#ifndef ROBUSTFED_DETECTION_HPP
#define ROBUSTFED_DETECTION_HPP

// Noisy-client identification from per-class average losses.
//
// The server collects a K x C matrix of per-class mean losses computed with
// the warm-up global model, fills classes a client does not hold with the
// column minimum, min-max normalizes each column, and fits a two-component
// diagonal Gaussian mixture. Clients owned by the component whose mean has
// the larger norm are flagged noisy.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "data.hpp"
#include "errors.hpp"
#include "nn.hpp"
#include "parallel.hpp"
#include "rng.hpp"

namespace robustfed
{

//------------------------------------------------------------------------------
struct IndicatorMatrix
{
    std::vector<std::size_t> clientIds;
    std::vector<std::vector<double>> values;  // rows = clients
    std::vector<std::vector<bool>> present;

    std::size_t rows() const {return values.size();}
    std::size_t cols() const {return values.empty() ? 0 : values.front().size();}

    bool complete() const
    {
        for (const auto& r : present)
            for (bool b : r)
                if (!b)
                    return false;
        return true;
    }

    /// Appends a row; `presence` defaults to all-true.
    void addRow(std::size_t id, std::vector<double> row,
                std::vector<bool> presence = {})
    {
        if (!values.empty() && row.size() != cols())
            throw ConfigError("indicator row width mismatch");
        if (presence.empty())
            presence.assign(row.size(), true);
        clientIds.push_back(id);
        values.push_back(std::move(row));
        present.push_back(std::move(presence));
    }
};

//------------------------------------------------------------------------------
struct PerClassLoss
{
    std::vector<double> values; // NaN where absent
    std::vector<bool> present;
};

//------------------------------------------------------------------------------
/// Mean raw cross-entropy (no logit adjustment) per observed label.
inline PerClassLoss perClassLosses(const ModelParams& params,
                                   const ClientDataset& client)
{
    const std::size_t C = params.arch.classes;
    std::vector<double> sum(C, 0.0);
    std::vector<std::size_t> count(C, 0);
    std::vector<double> dz;
    for (const auto& s : client.samples)
    {
        auto z = forward(params, s.x);
        sum[s.observed] += detail::shiftedCrossEntropy(z, nullptr, s.observed, dz);
        ++count[s.observed];
    }
    PerClassLoss out;
    out.values.assign(C, std::numeric_limits<double>::quiet_NaN());
    out.present.assign(C, false);
    for (std::size_t c = 0; c < C; ++c)
        if (count[c] > 0)
        {
            out.values[c] = sum[c] / static_cast<double>(count[c]);
            out.present[c] = true;
        }
    return out;
}

//------------------------------------------------------------------------------
/// Mean raw cross-entropy over every local sample; NaN for an empty client.
inline double averageLoss(const ModelParams& params, const ClientDataset& client)
{
    if (client.empty())
        return std::numeric_limits<double>::quiet_NaN();
    double sum = 0.0;
    std::vector<double> dz;
    for (const auto& s : client.samples)
        sum += detail::shiftedCrossEntropy(forward(params, s.x), nullptr,
                                           s.observed, dz);
    return sum / static_cast<double>(client.size());
}

//------------------------------------------------------------------------------
enum class IndicatorKind
{
    perClass,
    globalAverage
};

inline IndicatorMatrix buildIndicatorMatrix(const ModelParams& params,
                                            const std::vector<ClientDataset>& clients,
                                            IndicatorKind kind = IndicatorKind::perClass,
                                            std::size_t threads = 1)
{
    std::vector<PerClassLoss> rows(clients.size());
    parallelFor(clients.size(), threads, [&](std::size_t i)
    {
        if (kind == IndicatorKind::perClass)
        {
            rows[i] = perClassLosses(params, clients[i]);
        }
        else
        {
            double v = averageLoss(params, clients[i]);
            rows[i] = {{v}, {std::isfinite(v)}};
        }
    });
    IndicatorMatrix m;
    for (std::size_t i = 0; i < clients.size(); ++i)
        m.addRow(clients[i].clientId, std::move(rows[i].values),
                 std::move(rows[i].present));
    return m;
}

//------------------------------------------------------------------------------
/// Fills absent cells with the minimum present value of their column.
inline IndicatorMatrix imputeMissing(IndicatorMatrix m)
{
    for (std::size_t c = 0; c < m.cols(); ++c)
    {
        double lo = std::numeric_limits<double>::infinity();
        bool any = false;
        for (std::size_t i = 0; i < m.rows(); ++i)
            if (m.present[i][c])
            {
                lo = std::min(lo, m.values[i][c]);
                any = true;
            }
        if (!any)
            throw ConfigError("class " + std::to_string(c) +
                              " is absent on every client; cannot impute");
        for (std::size_t i = 0; i < m.rows(); ++i)
            if (!m.present[i][c])
            {
                m.values[i][c] = lo;
                m.present[i][c] = true;
            }
    }
    return m;
}

//------------------------------------------------------------------------------
/// Per-column min-max scaling to [0, 1]. Constant columns become all zeros.
inline IndicatorMatrix normalizeColumns(IndicatorMatrix m)
{
    for (std::size_t c = 0; c < m.cols(); ++c)
    {
        double lo = std::numeric_limits<double>::infinity();
        double hi = -std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < m.rows(); ++i)
        {
            lo = std::min(lo, m.values[i][c]);
            hi = std::max(hi, m.values[i][c]);
        }
        const double range = hi - lo;
        for (std::size_t i = 0; i < m.rows(); ++i)
            m.values[i][c] = range > 0.0 ? (m.values[i][c] - lo) / range : 0.0;
    }
    return m;
}

//------------------------------------------------------------------------------
struct GmmOptions
{
    std::uint64_t seed = 0;
    int maxIters = 200;
    double tol = 1e-6;
    double varianceFloor = 1e-6;
    double jitter = 0.25; // mean perturbation, in within-component std units
};

struct GmmModel
{
    std::array<std::vector<double>, 2> means;
    std::array<std::vector<double>, 2> variances;
    std::array<double, 2> weights{0.5, 0.5};
    std::vector<double> logLikelihoodTrace;
    bool converged = false;
};

namespace detail
{

inline constexpr double mixingWeightFloor = 1e-10;

inline double logGaussianDiag(const std::vector<double>& x,
                              const std::vector<double>& mean,
                              const std::vector<double>& var)
{
    constexpr double log2pi = 1.8378770664093454836;
    double s = 0.0;
    for (std::size_t d = 0; d < x.size(); ++d)
    {
        double diff = x[d] - mean[d];
        s += log2pi + std::log(var[d]) + diff * diff / var[d];
    }
    return -0.5 * s;
}

// Fills log-responsibilities and returns the total log-likelihood.
inline double eStep(const GmmModel& g, const std::vector<std::vector<double>>& X,
                    std::vector<std::array<double, 2>>& resp)
{
    resp.resize(X.size());
    double ll = 0.0;
    for (std::size_t i = 0; i < X.size(); ++i)
    {
        std::array<double, 2> lp;
        for (int k = 0; k < 2; ++k)
            lp[k] = std::log(g.weights[k]) + logGaussianDiag(X[i], g.means[k], g.variances[k]);
        double m = std::max(lp[0], lp[1]);
        double lse = m + std::log(std::exp(lp[0] - m) + std::exp(lp[1] - m));
        resp[i] = {std::exp(lp[0] - lse), std::exp(lp[1] - lse)};
        ll += lse;
    }
    return ll;
}

inline void mStep(GmmModel& g, const std::vector<std::vector<double>>& X,
                  const std::vector<std::array<double, 2>>& resp, double floor)
{
    const std::size_t n = X.size(), D = X.front().size();
    for (int k = 0; k < 2; ++k)
    {
        double nk = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            nk += resp[i][k];
        g.weights[k] = std::clamp(nk / static_cast<double>(n), mixingWeightFloor,
                                  1.0 - mixingWeightFloor);
        if (nk == 0.0)
            continue;
        std::vector<double> mean(D, 0.0), var(D, 0.0);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t d = 0; d < D; ++d)
                mean[d] += resp[i][k] * X[i][d];
        for (auto& v : mean)
            v /= nk;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t d = 0; d < D; ++d)
            {
                double diff = X[i][d] - mean[d];
                var[d] += resp[i][k] * diff * diff;
            }
        for (auto& v : var)
            v = std::max(v / nk, floor);
        g.means[k] = std::move(mean);
        g.variances[k] = std::move(var);
    }
    double s = g.weights[0] + g.weights[1];
    g.weights[0] /= s;
    g.weights[1] /= s;
}

inline double norm2(const std::vector<double>& v)
{
    double s = 0.0;
    for (double x : v)
        s += x * x;
    return std::sqrt(s);
}

// Lloyd iterations from an initial hard assignment. A move that would empty
// a cluster is skipped.
inline void refineTwoMeans(const std::vector<std::vector<double>>& X, std::vector<int>& label,
                           int maxIters = 100)
{
    const std::size_t n = X.size(), D = X.front().size();
    for (int it = 0; it < maxIters; ++it)
    {
        std::array<std::vector<double>, 2> mean{std::vector<double>(D, 0.0),
                                                std::vector<double>(D, 0.0)};
        std::array<std::size_t, 2> size{0, 0};
        for (std::size_t i = 0; i < n; ++i)
        {
            ++size[label[i]];
            for (std::size_t d = 0; d < D; ++d)
                mean[label[i]][d] += X[i][d];
        }
        for (int k = 0; k < 2; ++k)
            for (auto& v : mean[k])
                v /= static_cast<double>(size[k]);
        bool moved = false;
        for (std::size_t i = 0; i < n; ++i)
        {
            double d0 = 0.0, d1 = 0.0;
            for (std::size_t d = 0; d < D; ++d)
            {
                d0 += (X[i][d] - mean[0][d]) * (X[i][d] - mean[0][d]);
                d1 += (X[i][d] - mean[1][d]) * (X[i][d] - mean[1][d]);
            }
            int want = d1 < d0 ? 1 : 0;
            if (want != label[i] && size[label[i]] > 1)
            {
                --size[label[i]];
                ++size[want];
                label[i] = want;
                moved = true;
            }
        }
        if (!moved)
            return;
    }
}

} // namespace detail

//------------------------------------------------------------------------------
/// Two-component diagonal-covariance EM.
///
/// Rows are split at the median row norm, the split is refined with 2-means,
/// and the two groups seed the components. The seeded means are then
/// perturbed with seed-dependent Gaussian noise so that different seeds can
/// reach different local optima.
//------------------------------------------------------------------------------
inline GmmModel fitGmm(const IndicatorMatrix& m, const GmmOptions& opt = {})
{
    if (m.rows() < 2)
        throw UsageError("mixture fit needs at least two clients");
    if (!m.complete())
        throw UsageError("mixture fit needs a fully imputed indicator matrix");
    const auto& X = m.values;
    const std::size_t n = X.size(), D = m.cols();

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b)
                     {return detail::norm2(X[a]) < detail::norm2(X[b]);});

    std::vector<int> label(n);
    const std::size_t lowHalf = n / 2;
    for (std::size_t r = 0; r < n; ++r)
        label[order[r]] = r < lowHalf ? 0 : 1;
    detail::refineTwoMeans(X, label);
    std::vector<std::array<double, 2>> resp(n, {0.0, 0.0});
    for (std::size_t i = 0; i < n; ++i)
        resp[i][label[i]] = 1.0;

    GmmModel g;
    for (int k = 0; k < 2; ++k)
    {
        g.means[k].assign(D, 0.0);
        g.variances[k].assign(D, opt.varianceFloor);
    }
    detail::mStep(g, X, resp, opt.varianceFloor);

    // Jitter is relative to each half's own spread: a global scale would throw
    // a tight cluster's mean out of the cluster and let the component collapse.
    Rng rng = makeRng(opt.seed, {stream::gmm});
    std::normal_distribution<double> normal(0.0, 1.0);
    for (int k = 0; k < 2; ++k)
        for (std::size_t d = 0; d < D; ++d)
            g.means[k][d] += opt.jitter * std::sqrt(g.variances[k][d]) * normal(rng);

    double prev = detail::eStep(g, X, resp);
    g.logLikelihoodTrace.push_back(prev);
    for (int it = 0; it < opt.maxIters; ++it)
    {
        detail::mStep(g, X, resp, opt.varianceFloor);
        double ll = detail::eStep(g, X, resp);
        g.logLikelihoodTrace.push_back(ll);
        if (std::abs(ll - prev) < opt.tol)
        {
            g.converged = true;
            break;
        }
        prev = ll;
    }
    return g;
}

//------------------------------------------------------------------------------
/// Posterior (component 0, component 1) for every row.
inline std::vector<std::array<double, 2>> responsibilities(const GmmModel& g,
                                                           const IndicatorMatrix& m)
{
    std::vector<std::array<double, 2>> resp;
    detail::eStep(g, m.values, resp);
    return resp;
}

//------------------------------------------------------------------------------
struct DetectionResult
{
    std::vector<std::size_t> cleanSet;
    std::vector<std::size_t> noisySet;
    std::vector<double> noisyPosterior; // per matrix row

    bool isNoisy(std::size_t id) const
    {
        return std::binary_search(noisySet.begin(), noisySet.end(), id);
    }
};

//------------------------------------------------------------------------------
/// Labels the component with the larger mean norm as noisy and assigns each
/// client to the component with the larger posterior. A posterior of exactly
/// 0.5, or two components with equal mean norms, resolves to clean.
//------------------------------------------------------------------------------
inline DetectionResult partitionClients(const IndicatorMatrix& m, const GmmModel& g)
{
    DetectionResult r;
    const double n0 = detail::norm2(g.means[0]);
    const double n1 = detail::norm2(g.means[1]);
    auto resp = responsibilities(g, m);
    for (std::size_t i = 0; i < m.rows(); ++i)
    {
        double pNoisy = 0.0;
        if (n1 > n0)
            pNoisy = resp[i][1];
        else if (n0 > n1)
            pNoisy = resp[i][0];
        r.noisyPosterior.push_back(pNoisy);
        (pNoisy > 0.5 ? r.noisySet : r.cleanSet).push_back(m.clientIds[i]);
    }
    std::sort(r.cleanSet.begin(), r.cleanSet.end());
    std::sort(r.noisySet.begin(), r.noisySet.end());
    return r;
}

//------------------------------------------------------------------------------
struct DetectOptions
{
    bool impute = true;
    bool normalize = true;
    GmmOptions gmm;
};

/// Impute, optionally normalize, fit, partition.
inline DetectionResult detectNoisyClients(const IndicatorMatrix& raw,
                                          const DetectOptions& opt = {})
{
    IndicatorMatrix m = opt.impute ? imputeMissing(raw) : raw;
    if (opt.normalize)
        m = normalizeColumns(std::move(m));
    return partitionClients(m, fitGmm(m, opt.gmm));
}

//------------------------------------------------------------------------------
struct DetectionMetrics
{
    double recall = 0.0;
    double precision = 0.0;
    bool match = false;
};

/// Recall and precision of the flagged set against the true noisy ids, plus
/// exact-set agreement. An empty truth set gives recall 1.
inline DetectionMetrics detectionMetrics(const DetectionResult& r,
                                         const std::vector<std::size_t>& truthNoisy)
{
    std::set<std::size_t> truth(truthNoisy.begin(), truthNoisy.end());
    std::set<std::size_t> flagged(r.noisySet.begin(), r.noisySet.end());
    std::size_t hit = 0;
    for (auto id : flagged)
        hit += truth.count(id);
    DetectionMetrics out;
    out.recall = truth.empty() ? 1.0
                               : static_cast<double>(hit) / static_cast<double>(truth.size());
    if (flagged.empty())
        out.precision = truth.empty() ? 1.0 : 0.0;
    else
        out.precision = static_cast<double>(hit) / static_cast<double>(flagged.size());
    out.match = flagged == truth;
    return out;
}

inline std::vector<std::size_t> noisyTruth(const std::vector<ClientDataset>& clients)
{
    std::vector<std::size_t> ids;
    for (const auto& c : clients)
        if (c.noisyTruth)
            ids.push_back(c.clientId);
    return ids;
}

//------------------------------------------------------------------------------
struct SeedSweep
{
    double recall = 0.0;
    double precision = 0.0;
    double matchRatio = 0.0;
    std::size_t runs = 0;
};

/// Averages detection metrics over GMM seeds firstSeed .. firstSeed+runs-1.
inline SeedSweep sweepGmmSeeds(const IndicatorMatrix& raw,
                               const std::vector<std::size_t>& truthNoisy,
                               std::size_t runs, std::uint64_t firstSeed,
                               DetectOptions opt = {}, std::size_t threads = 1)
{
    IndicatorMatrix m = opt.impute ? imputeMissing(raw) : raw;
    if (opt.normalize)
        m = normalizeColumns(std::move(m));
    std::vector<DetectionMetrics> results(runs);
    parallelFor(runs, threads, [&](std::size_t r)
    {
        GmmOptions g = opt.gmm;
        g.seed = firstSeed + r;
        results[r] = detectionMetrics(partitionClients(m, fitGmm(m, g)), truthNoisy);
    });
    SeedSweep s;
    s.runs = runs;
    for (const auto& r : results)
    {
        s.recall += r.recall;
        s.precision += r.precision;
        s.matchRatio += r.match ? 1.0 : 0.0;
    }
    if (runs > 0)
    {
        s.recall /= static_cast<double>(runs);
        s.precision /= static_cast<double>(runs);
        s.matchRatio /= static_cast<double>(runs);
    }
    return s;
}

//------------------------------------------------------------------------------
// Plain-text table:
//   client,0,1,...,C-1
//   <id>,<v>,...,NA
//------------------------------------------------------------------------------
inline void writeIndicatorMatrix(std::ostream& os, const IndicatorMatrix& m)
{
    os << "client";
    for (std::size_t c = 0; c < m.cols(); ++c)
        os << ',' << c;
    os << '\n';
    for (std::size_t i = 0; i < m.rows(); ++i)
    {
        os << m.clientIds[i];
        for (std::size_t c = 0; c < m.cols(); ++c)
        {
            os << ',';
            if (m.present[i][c])
                os << formatDouble(m.values[i][c]);
            else
                os << "NA";
        }
        os << '\n';
    }
}

inline IndicatorMatrix readIndicatorMatrix(std::istream& is)
{
    auto split = [](const std::string& line)
    {
        std::vector<std::string> out;
        std::stringstream ss(line);
        std::string f;
        while (std::getline(ss, f, ','))
            out.push_back(f);
        if (!line.empty() && line.back() == ',')
            out.emplace_back();
        return out;
    };
    auto trim = [](std::string s)
    {
        while (!s.empty() && (s.back() == '\r' || s.back() == ' '))
            s.pop_back();
        std::size_t p = s.find_first_not_of(' ');
        return p == std::string::npos ? std::string() : s.substr(p);
    };

    std::string line;
    if (!std::getline(is, line))
        throw ConfigError("indicator table is empty", ConfigErrc::syntax);
    auto header = split(trim(line));
    if (header.size() < 2)
        throw ConfigError("indicator table header needs a client column and "
                          "at least one class column", ConfigErrc::syntax);
    const std::size_t C = header.size() - 1;

    IndicatorMatrix m;
    std::size_t lineNo = 1;
    while (std::getline(is, line))
    {
        ++lineNo;
        line = trim(line);
        if (line.empty())
            continue;
        auto f = split(line);
        if (f.size() != C + 1)
            throw ConfigError("indicator row on line " + std::to_string(lineNo) +
                              " has " + std::to_string(f.size()) + " fields, expected " +
                              std::to_string(C + 1), ConfigErrc::syntax);
        std::vector<double> row(C);
        std::vector<bool> pres(C);
        std::size_t id = 0;
        try
        {
            id = static_cast<std::size_t>(std::stoull(trim(f[0])));
            for (std::size_t c = 0; c < C; ++c)
            {
                auto v = trim(f[c + 1]);
                if (v == "NA")
                {
                    row[c] = std::numeric_limits<double>::quiet_NaN();
                    pres[c] = false;
                }
                else
                {
                    std::size_t used = 0;
                    row[c] = std::stod(v, &used);
                    if (used != v.size() || !std::isfinite(row[c]))
                        throw std::invalid_argument(v);
                    pres[c] = true;
                }
            }
        }
        catch (const std::logic_error&)
        {
            throw ConfigError("malformed value on indicator line " +
                              std::to_string(lineNo), ConfigErrc::syntax);
        }
        m.addRow(id, std::move(row), std::move(pres));
    }
    if (m.rows() == 0)
        throw ConfigError("indicator table has no client rows", ConfigErrc::syntax);
    return m;
}

} // namespace robustfed

#endif // ROBUSTFED_DETECTION_HPP
