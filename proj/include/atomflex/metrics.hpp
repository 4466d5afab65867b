#pragma once

#include <cmath>
#include <cstddef>
#include <cstdio>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "atomflex/errors.hpp"

namespace atomflex {

using json = nlohmann::json;

/// The four regression metrics. cc and rrse are undefined (not NaN) when
/// their denominators vanish: cc needs variation on both sides, rrse needs
/// variation in the targets.
struct Metrics {
    std::optional<double> cc;
    double mae = 0;
    double mape = 0;
    std::optional<double> rrse;
};

constexpr double kMapeEpsilon = 1e-6;  // Angstrom^2 floor under |y_i|

/// CC, MAE, MAPE, and RRSE of predictions against targets.
inline Metrics compute_metrics(const std::vector<double>& y, const std::vector<double>& yhat,
                               double epsilon = kMapeEpsilon) {
    if (y.size() != yhat.size())
        throw ContractError("compute_metrics: " + std::to_string(y.size()) + " targets vs " +
                            std::to_string(yhat.size()) + " predictions");
    const std::size_t n = y.size();
    if (n < 2) throw ContractError("compute_metrics: need at least 2 values");
    if (!(epsilon > 0)) throw ContractError("compute_metrics: epsilon must be > 0");

    double ybar = 0, pbar = 0;
    for (std::size_t i = 0; i < n; ++i) {
        ybar += y[i];
        pbar += yhat[i];
    }
    ybar /= static_cast<double>(n);
    pbar /= static_cast<double>(n);

    double cross = 0, yy = 0, pp = 0, abs_err = 0, rel_err = 0, sq_err = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const double dy = y[i] - ybar;
        const double dp = yhat[i] - pbar;
        cross += dy * dp;
        yy += dy * dy;
        pp += dp * dp;
        const double e = y[i] - yhat[i];
        abs_err += std::abs(e);
        rel_err += std::abs(e) / std::max(epsilon, std::abs(y[i]));
        sq_err += e * e;
    }

    Metrics m;
    m.mae = abs_err / static_cast<double>(n);
    m.mape = rel_err / static_cast<double>(n);
    if (yy > 0 && pp > 0) m.cc = cross / std::sqrt(yy * pp);
    if (yy > 0) m.rrse = std::sqrt(sq_err / yy);
    return m;
}

/// Metrics for one protein plus dataset-level aggregation: the unweighted
/// per-protein mean/std (the headline numbers) and the atom-pooled variant,
/// since published tables do not say which convention they use.
struct MetricsReport {
    std::vector<std::pair<std::string, Metrics>> per_protein;
    Metrics mean;    // over proteins; undefined entries are skipped
    Metrics stddev;  // sample std over proteins (0 when only one value)
    Metrics pooled;  // all atoms concatenated
};

namespace metricsdetail {

inline std::pair<double, double> mean_std(const std::vector<double>& v) {
    double mean = 0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    double acc = 0;
    for (double x : v) acc += (x - mean) * (x - mean);
    const double sd = v.size() > 1 ? std::sqrt(acc / static_cast<double>(v.size() - 1)) : 0.0;
    return {mean, sd};
}

}  // namespace metricsdetail

/// Assemble a report from per-protein (targets, predictions) pairs.
inline MetricsReport make_report(
    const std::vector<std::pair<std::string, std::pair<std::vector<double>, std::vector<double>>>>&
        per_protein,
    double epsilon = kMapeEpsilon) {
    if (per_protein.empty()) throw ContractError("make_report: no proteins");
    MetricsReport r;
    std::vector<double> ccs, maes, mapes, rrses, all_y, all_p;
    for (const auto& [id, pair] : per_protein) {
        const auto& [y, p] = pair;
        Metrics m = compute_metrics(y, p, epsilon);
        r.per_protein.emplace_back(id, m);
        if (m.cc) ccs.push_back(*m.cc);
        maes.push_back(m.mae);
        mapes.push_back(m.mape);
        if (m.rrse) rrses.push_back(*m.rrse);
        all_y.insert(all_y.end(), y.begin(), y.end());
        all_p.insert(all_p.end(), p.begin(), p.end());
    }
    auto [mae_m, mae_s] = metricsdetail::mean_std(maes);
    auto [mape_m, mape_s] = metricsdetail::mean_std(mapes);
    r.mean.mae = mae_m;
    r.stddev.mae = mae_s;
    r.mean.mape = mape_m;
    r.stddev.mape = mape_s;
    if (!ccs.empty()) {
        auto [m, s] = metricsdetail::mean_std(ccs);
        r.mean.cc = m;
        r.stddev.cc = s;
    }
    if (!rrses.empty()) {
        auto [m, s] = metricsdetail::mean_std(rrses);
        r.mean.rrse = m;
        r.stddev.rrse = s;
    }
    r.pooled = compute_metrics(all_y, all_p, epsilon);
    return r;
}

inline json metrics_to_json(const Metrics& m) {
    json j;
    j["cc"] = m.cc ? json(*m.cc) : json(nullptr);
    j["mae"] = m.mae;
    j["mape"] = m.mape;
    j["rrse"] = m.rrse ? json(*m.rrse) : json(nullptr);
    return j;
}

inline json metrics_report_to_json(const MetricsReport& r) {
    json per = json::object();
    for (const auto& [id, m] : r.per_protein) per[id] = metrics_to_json(m);
    return json{{"per_protein", per},
                {"aggregate", json{{"mean", metrics_to_json(r.mean)},
                                   {"std", metrics_to_json(r.stddev)}}},
                {"pooled", metrics_to_json(r.pooled)}};
}

/// One row per protein for external plotting; undefined values print as nan.
inline std::string metrics_report_to_csv(const MetricsReport& r) {
    std::string out = "protein_id,cc,mae,mape,rrse\n";
    char buf[160];
    for (const auto& [id, m] : r.per_protein) {
        std::snprintf(buf, sizeof(buf), "%s,%.9g,%.9g,%.9g,%.9g\n", id.c_str(),
                      m.cc ? *m.cc : std::nan(""), m.mae, m.mape,
                      m.rrse ? *m.rrse : std::nan(""));
        out += buf;
    }
    return out;
}

}  // namespace atomflex
