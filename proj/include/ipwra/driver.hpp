#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ipwra/inference.hpp"
#include "ipwra/parallel.hpp"
#include "ipwra/rng.hpp"

namespace ipwra {

enum class Method {
    dr_late,          // inverse-propensity-weighted regression adjustment (IPWRA)
    ra_late,          // unweighted regression adjustment
    aipw_late,        // augmented IPW
    ipw_late,         // normalized (Hajek) inverse probability weighting
    ipw_unnorm_late,  // Horvitz-Thompson variant
    wald,             // covariate-free arm-mean ratio
    tsls,             // linear two stage least squares, treatment coefficient
    dr_latt,
    dr_att,
    ipwra_ate,
};

inline std::string method_name(Method m) {
    switch (m) {
        case Method::dr_late: return "dr_late";
        case Method::ra_late: return "ra_late";
        case Method::aipw_late: return "aipw_late";
        case Method::ipw_late: return "ipw_late";
        case Method::ipw_unnorm_late: return "ipw_unnorm_late";
        case Method::wald: return "wald";
        case Method::tsls: return "2sls";
        case Method::dr_latt: return "dr_latt";
        case Method::dr_att: return "dr_att";
        case Method::ipwra_ate: return "ipwra_ate";
    }
    return "?";
}

inline Method parse_method(const std::string& s) {
    if (s == "dr_late" || s == "ipwra") return Method::dr_late;
    if (s == "ra_late" || s == "ra") return Method::ra_late;
    if (s == "aipw_late" || s == "aipw") return Method::aipw_late;
    if (s == "ipw_late" || s == "ipw") return Method::ipw_late;
    if (s == "ipw_unnorm_late" || s == "ipw_unnorm") return Method::ipw_unnorm_late;
    if (s == "wald") return Method::wald;
    if (s == "2sls" || s == "tsls" || s == "iv") return Method::tsls;
    if (s == "dr_latt" || s == "latt") return Method::dr_latt;
    if (s == "dr_att" || s == "att") return Method::dr_att;
    if (s == "ipwra_ate" || s == "ate") return Method::ipwra_ate;
    throw ConfigError("unknown method '" + s + "'");
}

enum class SeKind { none, analytic, bootstrap };

struct EstimatorSpec {
    Method method = Method::dr_late;
    EstimOptions options;
    SeKind se = SeKind::analytic;
    int boot_reps = 999;
    std::uint64_t seed = 20240901;
    bool use_cluster = true;    // respect the dataset's cluster role when present
    bool dof_inflate = false;   // multiply the stacked-moment avar by n/(n-p)
};

inline std::optional<Eigen::VectorXd> cluster_for(const Dataset& d, const EstimatorSpec& spec) {
    if (spec.use_cluster && d.has_cluster()) return d.cluster_ids();
    return std::nullopt;
}

// ---------------- point estimate + optional moment stack ----------------

struct FitOutput {
    EstimateResult est;
    StackInfo info;
    bool has_stack = false;
};

// Computes the point estimate; when sys is non-null also appends the
// estimator's moment blocks (names prefixed) so several estimators can share
// one stacked system for joint inference.
inline FitOutput fit_method(const Dataset& d, const EstimatorSpec& spec, StackedSystem* sys,
                            const std::string& pre = "") {
    const EstimOptions& o = spec.options;
    FitOutput out;
    switch (spec.method) {
        case Method::dr_late:
        case Method::ra_late: {
            const auto kind = (spec.method == Method::dr_late) ? LateWeighting::inverse_ps
                                                               : LateWeighting::unweighted;
            const auto nu = fit_nuisances_late(d, o, kind);
            out.est = late_from_nuisances(d, nu, o.denom_tol);
            if (sys) out.info = append_late_stack(*sys, pre, nu, out.est);
            break;
        }
        case Method::aipw_late: {
            const auto nu = fit_nuisances_late(d, o, LateWeighting::unweighted);
            out.est = aipw_late_from_nuisances(d, nu, o.denom_tol);
            if (sys) out.info = append_aipw_stack(*sys, pre, nu, out.est);
            break;
        }
        case Method::ipw_late:
        case Method::ipw_unnorm_late: {
            check_one_sided_flags(d, o);
            const bool norm = spec.method == Method::ipw_late;
            const auto ps = fit_instrument_propensity(d, o.models.propensity, o.qmle);
            enforce_overlap(overlap_report(ps.p, d.instrument(), o.eps_overlap), o);
            out.est = ipw_late_from_ps(d, ps, norm, o);
            if (sys) out.info = append_ipw_stack(*sys, pre, ps, out.est, norm);
            break;
        }
        case Method::wald: {
            out.est = wald_iv(d, o.denom_tol);
            if (sys) out.info = append_wald_stack(*sys, pre, out.est);
            break;
        }
        case Method::tsls: {
            if (sys)
                throw ConfigError("2sls has no stacked-moment representation here; use its "
                                  "built-in robust SE or the bootstrap");
            out.est = linear_iv_2sls(d, o.models.outcome, cluster_for(d, spec));
            break;
        }
        case Method::dr_latt: {
            const auto nu = fit_nuisances_latt(d, o);
            out.est = latt_from_nuisances(d, nu, o.denom_tol);
            if (sys) out.info = append_latt_stack(*sys, pre, nu, out.est);
            break;
        }
        case Method::dr_att: {
            const auto nu = fit_nuisances_att(d, o, false);
            out.est = att_from_nuisances(d, nu);
            if (sys) out.info = append_att_stack(*sys, pre, nu, out.est);
            break;
        }
        case Method::ipwra_ate: {
            const auto nu = fit_nuisances_att(d, o, true);
            out.est = ate_from_nuisances(d, nu);
            if (sys) out.info = append_ate_stack(*sys, pre, nu, out.est);
            break;
        }
    }
    out.has_stack = sys != nullptr;
    return out;
}

inline double point_estimate(const Dataset& d, const EstimatorSpec& spec) {
    return fit_method(d, spec, nullptr).est.point;
}

// ---------------- bootstrap ----------------

struct BootstrapResult {
    double se = 0.0;
    std::array<double, 2> percentile_ci{0.0, 0.0};
    int n_failed = 0;
    int reps = 0;
};

// linear-interpolation quantile on a sorted vector (R type 7)
inline double sorted_quantile(const std::vector<double>& v, double q) {
    if (v.empty()) throw DegenerateError("quantile of empty sample");
    if (v.size() == 1) return v[0];
    const double h = q * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<size_t>(std::floor(h));
    if (lo + 1 >= v.size()) return v.back();
    return v[lo] + (h - static_cast<double>(lo)) * (v[lo + 1] - v[lo]);
}

// one nonparametric resample: rows with replacement, or whole clusters with
// replacement when the dataset carries cluster ids
inline std::vector<Eigen::Index> draw_resample(const Dataset& d, bool cluster, Rng& rng) {
    const Eigen::Index n = d.n_obs();
    std::vector<Eigen::Index> rows;
    if (cluster && d.has_cluster()) {
        const Eigen::VectorXd ids = d.cluster_ids();
        std::vector<double> uniq;
        std::vector<std::vector<Eigen::Index>> members;
        std::map<double, size_t> where;
        for (Eigen::Index i = 0; i < n; ++i) {
            auto [itr, fresh] = where.try_emplace(ids[i], members.size());
            if (fresh) members.emplace_back();
            members[itr->second].push_back(i);
        }
        const auto g = static_cast<std::uint64_t>(members.size());
        rows.reserve(static_cast<size_t>(n));
        for (std::uint64_t j = 0; j < g; ++j) {
            const auto& m = members[static_cast<size_t>(rng.below(g))];
            rows.insert(rows.end(), m.begin(), m.end());
        }
    } else {
        rows.reserve(static_cast<size_t>(n));
        for (Eigen::Index i = 0; i < n; ++i)
            rows.push_back(static_cast<Eigen::Index>(
                rng.below(static_cast<std::uint64_t>(n))));
    }
    return rows;
}

// F maps a resampled Dataset to a scalar; throws ipwra::Error on failure.
// Replicates get independent substreams of (seed, rep) and write to per-rep
// slots; estimates are sorted before the SD, so neither the thread count nor
// the schedule can change the result.
template <class F>
inline BootstrapResult bootstrap_scalar(const Dataset& d, int B, std::uint64_t seed,
                                        bool cluster, F&& f) {
    if (B < 2) throw ConfigError("bootstrap: need at least 2 replicates");
    std::vector<double> slot(static_cast<size_t>(B), 0.0);
    std::vector<char> ok(static_cast<size_t>(B), 0);
    parallel_for(B, [&](long long b) {
        Rng rng(seed, static_cast<std::uint64_t>(b), RngDomain::bootstrap);
        const auto rows = draw_resample(d, cluster, rng);
        try {
            slot[static_cast<size_t>(b)] = f(d.take_rows(rows));
            ok[static_cast<size_t>(b)] = 1;
        } catch (const Error&) {
            // failed replicate: excluded and counted
        }
    });
    std::vector<double> vals;
    vals.reserve(static_cast<size_t>(B));
    int failed = 0;
    for (int b = 0; b < B; ++b)
        if (ok[static_cast<size_t>(b)]) vals.push_back(slot[static_cast<size_t>(b)]);
        else ++failed;
    if (failed * 5 > B)
        throw BootstrapError("bootstrap: " + std::to_string(failed) + " of " +
                             std::to_string(B) + " replicates failed");
    std::sort(vals.begin(), vals.end());
    const auto m = static_cast<double>(vals.size());
    double mean = 0.0;
    for (double v : vals) mean += v;
    mean /= m;
    double ss = 0.0;
    for (double v : vals) ss += (v - mean) * (v - mean);
    BootstrapResult out;
    out.se = (vals.size() > 1) ? std::sqrt(ss / (m - 1.0)) : 0.0;
    out.percentile_ci = {sorted_quantile(vals, 0.025), sorted_quantile(vals, 0.975)};
    out.n_failed = failed;
    out.reps = B;
    return out;
}

inline BootstrapResult bootstrap_se(const Dataset& d, const EstimatorSpec& spec, int B,
                                    std::uint64_t seed, bool cluster) {
    EstimatorSpec inner = spec;
    inner.se = SeKind::none;
    return bootstrap_scalar(d, B, seed, cluster,
                            [&](const Dataset& db) { return point_estimate(db, inner); });
}

// ---------------- full runs ----------------

inline EstimateResult run_estimator(const Dataset& d, const EstimatorSpec& spec) {
    const bool want_stack = spec.se == SeKind::analytic && spec.method != Method::tsls;
    std::optional<StackedSystem> sys;
    if (want_stack) sys.emplace(d);
    FitOutput out = fit_method(d, spec, sys ? &*sys : nullptr);

    if (spec.se == SeKind::analytic) {
        if (sys) {
            double se = stack_se(*sys, out.info, cluster_for(d, spec), spec.options.denom_tol);
            if (spec.dof_inflate) {
                const auto n = static_cast<double>(sys->n());
                const auto p = static_cast<double>(sys->p());
                if (n <= p) throw DegenerateError("dof inflation: n <= p");
                se *= std::sqrt(n / (n - p));
            }
            out.est.se = se;
            out.est.ci95 = {out.est.point - 1.96 * se, out.est.point + 1.96 * se};
        }
        // 2sls carries its own robust SE from the fit
    } else if (spec.se == SeKind::bootstrap) {
        const bool cl = spec.use_cluster && d.has_cluster();
        const auto br = bootstrap_se(d, spec, spec.boot_reps, spec.seed, cl);
        out.est.se = br.se;
        out.est.ci95 = {out.est.point - 1.96 * br.se, out.est.point + 1.96 * br.se};
        out.est.ci95_percentile = br.percentile_ci;
        out.est.diagnostics["boot_reps"] = static_cast<double>(br.reps);
        out.est.diagnostics["boot_failed"] = static_cast<double>(br.n_failed);
    } else {
        out.est.se.reset();
        out.est.ci95.reset();
    }
    return out.est;
}

} // namespace ipwra
