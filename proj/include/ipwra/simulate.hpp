#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ipwra/driver.hpp"
#include "ipwra/parallel.hpp"
#include "ipwra/rng.hpp"
#include "ipwra/table.hpp"

namespace ipwra {

enum class OutcomeKind { continuous, binary };

// Calibrated data-generating process: a 401(k)-style eligibility instrument
// with one-sided noncompliance (W = Z * D1, so Z=0 forces W=0).
//
// Covariates: (age, log income) bivariate normal, income = exp(log income).
// The shipped moments are surrogates calibrated so the plug-in true LATE
// matches the reference values 8,816.5 (continuous) and 0.036 (binary)
// within 0.1%; replace them with empirical moments when original data are
// available.  All index coefficients use the regressor layout
// (intercept, income, age-25, (age-25)^2).
struct DgpSpec {
    Eigen::Index n = 1000;
    OutcomeKind outcome_kind = OutcomeKind::continuous;
    std::uint64_t seed = 20240901;

    double mu_age = 41.0, sd_age = 10.3;
    double mu_log_income = 10.3988, sd_log_income = 0.5982;
    double corr = 0.10;   // corr(age, log income)

    Eigen::Vector4d gamma{-1.727, 0.0000232, 0.0581, -0.00158};     // instrument logit
    Eigen::Vector4d delta1{0.387, 0.0000154, -0.0285, 0.000699};    // D1 logit

    Eigen::Vector4d y1_cont{-36377.2, 1.134, -106.6, 41.36};
    Eigen::Vector4d y0_cont{-19452.5, 0.762, -557.4, 38.28};
    double sigma1 = 66000.0, sigma0 = 59000.0;   // continuous error SDs

    Eigen::Vector4d y1_bin{-3.148, 0.0000318, 0.0420, 0.000211};
    Eigen::Vector4d y0_bin{-3.653, 0.0000342, 0.0665, -0.000267};

    void validate() const {
        if (n < 2) throw ConfigError("dgp: need n >= 2");
        if (sd_age <= 0.0 || sd_log_income <= 0.0)
            throw ConfigError("dgp: covariate standard deviations must be positive");
        if (!(std::fabs(corr) < 1.0))
            throw ConfigError("dgp: covariate correlation must lie strictly inside (-1, 1)");
        if (sigma1 < 0.0 || sigma0 < 0.0)
            throw ConfigError("dgp: outcome error SDs must be nonnegative");
    }
};

namespace detail {

inline double index4(const Eigen::Vector4d& c, double income, double age_m25) {
    return c[0] + c[1] * income + c[2] * age_m25 + c[3] * age_m25 * age_m25;
}

} // namespace detail

// One sample.  Fixed per-unit draw order (two covariate normals, U_z, U_1,
// one outcome draw) keeps every stream reproducible and makes the covariate
// and assignment draws identical across outcome kinds for a given seed.
inline Dataset generate_sample(const DgpSpec& spec, std::uint64_t stream = 0) {
    spec.validate();
    Rng rng(spec.seed, stream, RngDomain::dgp);
    const double rc = std::sqrt(1.0 - spec.corr * spec.corr);
    Eigen::MatrixXd v(spec.n, 6);
    for (Eigen::Index i = 0; i < spec.n; ++i) {
        const double n1 = rng.normal();
        const double n2 = rng.normal();
        const double age = spec.mu_age + spec.sd_age * n1;
        const double log_income =
            spec.mu_log_income + spec.sd_log_income * (spec.corr * n1 + rc * n2);
        const double income = std::exp(log_income);
        const double am = age - 25.0;

        const double z = (logistic(detail::index4(spec.gamma, income, am)) > rng.uniform())
                             ? 1.0 : 0.0;
        const double d1 = (logistic(detail::index4(spec.delta1, income, am)) > rng.uniform())
                              ? 1.0 : 0.0;
        const double w = z * d1;

        double y;
        if (spec.outcome_kind == OutcomeKind::continuous) {
            const double shock = rng.normal();
            y = (z == 1.0) ? detail::index4(spec.y1_cont, income, am) + spec.sigma1 * shock
                           : detail::index4(spec.y0_cont, income, am) + spec.sigma0 * shock;
        } else {
            const auto& c = (z == 1.0) ? spec.y1_bin : spec.y0_bin;
            y = (logistic(detail::index4(c, income, am)) > rng.uniform()) ? 1.0 : 0.0;
        }

        v(i, 0) = income;
        v(i, 1) = age;
        v(i, 2) = age * age;
        v(i, 3) = z;
        v(i, 4) = w;
        v(i, 5) = y;
    }
    Roles roles;
    roles.outcome = "y";
    roles.treatment = "w";
    roles.instrument = "z";
    roles.covariates = {"income", "age", "agesq"};
    return Dataset({"income", "age", "agesq", "z", "w", "y"}, std::move(v), roles);
}

struct TrueLate {
    double value = 0.0;
    double mc_se = 0.0;      // Monte Carlo error of the plug-in value
    long long draws = 0;
};

// Population LATE by plug-in: with Y indexed by Z and D0 = 0, every LATE
// estimator here converges to E[mean-contrast(X)] / E[P(D1=1|X)], so that
// ratio over a large covariate draw is the target the simulation scores
// against.  Single pass; accumulated in extended precision.
inline TrueLate true_late(const DgpSpec& spec, long long draws = 10'000'000) {
    spec.validate();
    if (draws < 2) throw ConfigError("true_late: need at least 2 draws");
    Rng rng(spec.seed, 0, RngDomain::oracle);
    const double rc = std::sqrt(1.0 - spec.corr * spec.corr);
    long double sd = 0.0L, sl = 0.0L, sdd = 0.0L, sll = 0.0L, sdl = 0.0L;
    for (long long i = 0; i < draws; ++i) {
        const double n1 = rng.normal();
        const double n2 = rng.normal();
        const double age = spec.mu_age + spec.sd_age * n1;
        const double income =
            std::exp(spec.mu_log_income + spec.sd_log_income * (spec.corr * n1 + rc * n2));
        const double am = age - 25.0;
        double delta;
        if (spec.outcome_kind == OutcomeKind::continuous)
            delta = detail::index4(spec.y1_cont, income, am) -
                    detail::index4(spec.y0_cont, income, am);
        else
            delta = logistic(detail::index4(spec.y1_bin, income, am)) -
                    logistic(detail::index4(spec.y0_bin, income, am));
        const double lam = logistic(detail::index4(spec.delta1, income, am));
        sd += delta;
        sl += lam;
        sdd += static_cast<long double>(delta) * delta;
        sll += static_cast<long double>(lam) * lam;
        sdl += static_cast<long double>(delta) * lam;
    }
    const double m = static_cast<double>(draws);
    const double ed = static_cast<double>(sd) / m;
    const double el = static_cast<double>(sl) / m;
    if (el <= 0.0) throw DegenerateError("true_late: complier share is zero");
    const double tau = ed / el;
    // influence of the ratio of means: v = (delta - tau*lam)/E[lam]
    const double vd = static_cast<double>(sdd) / m - ed * ed;
    const double vl = static_cast<double>(sll) / m - el * el;
    const double cdl = static_cast<double>(sdl) / m - ed * el;
    const double var_v = std::max(0.0, vd + tau * tau * vl - 2.0 * tau * cdl) / (el * el);
    TrueLate out;
    out.value = tau;
    out.mc_se = std::sqrt(var_v / m);
    out.draws = draws;
    return out;
}

// ---------------- the estimator-comparison study ----------------

enum class Scenario { all_correct, outcome_misspec, ps_misspec };

inline std::string scenario_name(Scenario s) {
    switch (s) {
        case Scenario::all_correct: return "all_correct";
        case Scenario::outcome_misspec: return "outcome_misspec";
        case Scenario::ps_misspec: return "ps_misspec";
    }
    return "?";
}

inline Scenario parse_scenario(const std::string& s) {
    if (s == "all_correct") return Scenario::all_correct;
    if (s == "outcome_misspec") return Scenario::outcome_misspec;
    if (s == "ps_misspec") return Scenario::ps_misspec;
    throw ConfigError("unknown scenario '" + s + "'");
}

// income, age, and optionally age squared; misspecification means dropping
// the square, mirroring the reference study
inline CovariateTransform sim_covariates(bool with_square) {
    CovariateTransform tf;
    tf.terms = {Term{"income", 1, 0.0, false}, Term{"age", 1, 0.0, false}};
    if (with_square) tf.terms.push_back(Term{"age", 2, 0.0, false});
    return tf;
}

inline ModelSpecs scenario_models(Scenario s) {
    const CovariateTransform full = sim_covariates(true);
    const CovariateTransform dropped = sim_covariates(false);
    switch (s) {
        case Scenario::all_correct: return ModelSpecs::all_same(full);
        case Scenario::outcome_misspec: return {dropped, dropped, full};
        case Scenario::ps_misspec: return {full, full, dropped};
    }
    return ModelSpecs::all_same(full);
}

struct McCell {
    std::string estimator, scenario;
    double bias = 0.0, rmse = 0.0, coverage = 0.0;   // coverage in percent
    double mean_se = 0.0;
    double bias_mc_se = 0.0;   // Monte Carlo SE of the bias estimate
    int n_failures = 0;
    int reps_used = 0;
};

struct McReport {
    std::vector<McCell> cells;
    int replications = 0;
    Eigen::Index n = 0;
    std::string outcome;
    double true_value = 0.0, true_mc_se = 0.0;

    const McCell& cell(const std::string& estimator, const std::string& scenario) const {
        for (const auto& c : cells)
            if (c.estimator == estimator && c.scenario == scenario) return c;
        throw ShapeError("mc report: no cell (" + estimator + ", " + scenario + ")");
    }

    std::string to_csv() const {
        std::string out =
            "estimator,scenario,bias,rmse,coverage,mean_se,bias_mc_se,failures,reps_used\n";
        for (const auto& c : cells) {
            out += c.estimator + ',' + c.scenario + ',' + format_double(c.bias) + ',' +
                   format_double(c.rmse) + ',' + format_double(c.coverage) + ',' +
                   format_double(c.mean_se) + ',' + format_double(c.bias_mc_se) + ',' +
                   std::to_string(c.n_failures) + ',' + std::to_string(c.reps_used) + '\n';
        }
        return out;
    }

    std::string to_text() const {
        TextTable t;
        t.header = {"estimator", "scenario", "bias", "rmse", "cov%", "mean_se", "fail"};
        for (const auto& c : cells)
            t.add_row({c.estimator, c.scenario, format_sig4(c.bias), format_sig4(c.rmse),
                       format_sig4(c.coverage), format_sig4(c.mean_se),
                       std::to_string(c.n_failures)});
        return "n=" + std::to_string(n) + "  reps=" + std::to_string(replications) +
               "  outcome=" + outcome + "  true=" + format_sig4(true_value) +
               " (mc se " + format_sig4(true_mc_se) + ")\n" + t.to_string();
    }
};

struct McOptions {
    std::vector<Method> estimators = {Method::tsls, Method::ra_late, Method::ipw_late,
                                      Method::dr_late, Method::aipw_late};
    std::vector<Scenario> scenarios = {Scenario::all_correct, Scenario::outcome_misspec,
                                       Scenario::ps_misspec};
    int replications = 1000;
    long long truth_draws = 10'000'000;
    double max_failure_share = 0.01;   // per cell; above this the run fails
    int threads = thread_budget();
};

inline McReport run_monte_carlo(const DgpSpec& spec, const McOptions& opt = {}) {
    spec.validate();
    if (opt.replications < 1) throw ConfigError("monte carlo: need at least 1 replication");
    if (opt.estimators.empty() || opt.scenarios.empty())
        throw ConfigError("monte carlo: empty estimator or scenario list");

    const TrueLate truth = true_late(spec, opt.truth_draws);
    const size_t ncell = opt.estimators.size() * opt.scenarios.size();

    // per-scenario estimator specs, fixed up front
    std::vector<EstimatorSpec> especs(ncell);
    for (size_t s = 0; s < opt.scenarios.size(); ++s) {
        const ModelSpecs models = scenario_models(opt.scenarios[s]);
        for (size_t e = 0; e < opt.estimators.size(); ++e) {
            EstimatorSpec& es = especs[s * opt.estimators.size() + e];
            es.method = opt.estimators[e];
            es.options.models = models;
            es.options.fam_y = (spec.outcome_kind == OutcomeKind::binary)
                                   ? LefFamily::bernoulli()
                                   : LefFamily::gaussian();
            es.options.known_pi0_zero = true;   // the DGP has no always-takers
            es.se = SeKind::analytic;
        }
    }

    struct Slot {
        double est = 0.0;
        char covered = 0, ok = 0;
        double se = 0.0;
    };
    const auto R = static_cast<size_t>(opt.replications);
    std::vector<Slot> slots(R * ncell);

    parallel_for(opt.replications, [&](long long r) {
        const Dataset ds = generate_sample(spec, static_cast<std::uint64_t>(r));
        for (size_t c = 0; c < ncell; ++c) {
            Slot& sl = slots[static_cast<size_t>(r) * ncell + c];
            try {
                const EstimateResult est = run_estimator(ds, especs[c]);
                sl.est = est.point;
                sl.se = est.se.value_or(0.0);
                if (est.ci95)
                    sl.covered = ((*est.ci95)[0] <= truth.value &&
                                  truth.value <= (*est.ci95)[1]) ? 1 : 0;
                sl.ok = 1;
            } catch (const Error&) {
                // failed replication for this cell: excluded and counted
            }
        }
    }, opt.threads);

    McReport rep;
    rep.replications = opt.replications;
    rep.n = spec.n;
    rep.outcome = (spec.outcome_kind == OutcomeKind::binary) ? "binary" : "continuous";
    rep.true_value = truth.value;
    rep.true_mc_se = truth.mc_se;

    for (size_t s = 0; s < opt.scenarios.size(); ++s)
        for (size_t e = 0; e < opt.estimators.size(); ++e) {
            const size_t c = s * opt.estimators.size() + e;
            McCell cell;
            cell.estimator = method_name(opt.estimators[e]);
            cell.scenario = scenario_name(opt.scenarios[s]);
            long double sum = 0.0L, sumsq = 0.0L, sse = 0.0L;
            int used = 0, covered = 0;
            for (size_t r = 0; r < R; ++r) {
                const Slot& sl = slots[r * ncell + c];
                if (!sl.ok) continue;
                const double dev = sl.est - truth.value;
                sum += dev;
                sumsq += static_cast<long double>(dev) * dev;
                sse += sl.se;
                covered += sl.covered;
                ++used;
            }
            cell.n_failures = opt.replications - used;
            cell.reps_used = used;
            if (used > 0) {
                const double m = static_cast<double>(used);
                cell.bias = static_cast<double>(sum) / m;
                cell.rmse = std::sqrt(static_cast<double>(sumsq) / m);
                cell.coverage = 100.0 * static_cast<double>(covered) / m;
                cell.mean_se = static_cast<double>(sse) / m;
                const double var =
                    std::max(0.0, static_cast<double>(sumsq) / m - cell.bias * cell.bias);
                cell.bias_mc_se = (used > 1) ? std::sqrt(var / (m - 1.0)) : 0.0;
            }
            if (static_cast<double>(cell.n_failures) >
                opt.max_failure_share * static_cast<double>(opt.replications))
                throw SimulationError("monte carlo: cell (" + cell.estimator + ", " +
                                      cell.scenario + ") failed on " +
                                      std::to_string(cell.n_failures) + " of " +
                                      std::to_string(opt.replications) + " replications");
            rep.cells.push_back(std::move(cell));
        }
    return rep;
}

} // namespace ipwra
