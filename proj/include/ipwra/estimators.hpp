#pragma once

#include <array>
#include <map>
#include <optional>
#include <string>

#include <Eigen/Dense>

#include "ipwra/data.hpp"
#include "ipwra/propensity.hpp"
#include "ipwra/qmle.hpp"

namespace ipwra {

struct EstimateResult {
    std::string estimand;   // late | latt | att | ate | itt-ratio building blocks
    std::string method;     // dr | ra | ipw | ipw_unnorm | aipw | wald | 2sls
    double point = 0.0;
    std::optional<double> se;
    std::optional<std::array<double, 2>> ci95;             // normal approximation
    std::optional<std::array<double, 2>> ci95_percentile;  // bootstrap only
    // numerator / denominator pieces: point == (theta1-theta0)/(pi1-pi0) when
    // has_pi, else point == theta1-theta0
    bool has_components = false;
    bool has_pi = false;
    double theta1 = 0.0, theta0 = 0.0, pi1 = 0.0, pi0 = 0.0;
    std::map<std::string, double> diagnostics;
};

// Per-model covariate transforms; by default all three share one spec.
struct ModelSpecs {
    CovariateTransform outcome;
    CovariateTransform treatment;
    CovariateTransform propensity;

    static ModelSpecs all_same(const CovariateTransform& tf) { return {tf, tf, tf}; }
};

struct EstimOptions {
    ModelSpecs models;
    LefFamily fam_y = LefFamily::gaussian();
    bool known_pi0_zero = false;   // no always-takers: W=0 whenever Z=0
    bool known_pi1_one = false;    // no never-takers: W=1 whenever Z=1
    QmleOptions qmle;
    double eps_overlap = 0.01;
    std::optional<double> max_overlap_violation;   // hard fail when flagged share exceeds
    double denom_tol = 1e-10;
};

inline void check_one_sided_flags(const Dataset& d, const EstimOptions& o) {
    if (!o.known_pi0_zero && !o.known_pi1_one) return;
    const auto z = d.instrument();
    const auto w = d.treatment();
    for (Eigen::Index i = 0; i < z.size(); ++i) {
        if (o.known_pi0_zero && z[i] == 0.0 && w[i] == 1.0)
            throw ConsistencyError("one-sided flag says nobody takes treatment without the "
                                   "instrument, but row " + std::to_string(i) + " has W=1, Z=0");
        if (o.known_pi1_one && z[i] == 1.0 && w[i] == 0.0)
            throw ConsistencyError("one-sided flag says everyone offered takes treatment, "
                                   "but row " + std::to_string(i) + " has W=0, Z=1");
    }
}

inline void enforce_overlap(const OverlapReport& rep, const EstimOptions& o) {
    if (o.max_overlap_violation && rep.flagged_share > *o.max_overlap_violation)
        throw DataError("overlap: flagged probability share " + std::to_string(rep.flagged_share) +
                        " exceeds allowed " + std::to_string(*o.max_overlap_violation));
}

inline double guarded_ratio(double num, double den, double tol) {
    if (std::fabs(den) < tol)
        throw WeakInstrumentError("ratio denominator " + std::to_string(den) +
                                  " is numerically zero; instrument does not move treatment");
    return num / den;
}

// ---------------- LATE nuisance sets ----------------

// How the per-arm regressions are weighted.  inverse_ps gives the doubly
// robust flavor (arm fits tilted toward the full-covariate distribution);
// unweighted gives plain per-arm regressions (RA, and the inputs to AIPW).
enum class LateWeighting { inverse_ps, unweighted };

struct LateNuisances {
    PropensityFit ps;
    Eigen::MatrixXd Xy, Xw;
    LefFamily fam_y;
    LateWeighting weighting = LateWeighting::inverse_ps;
    bool known_pi0_zero = false, known_pi1_one = false;
    QmleFit m1, m0;            // outcome models, arms Z=1 / Z=0
    QmleFit r1, r0;            // treatment models (skipped arms left empty)
    Eigen::VectorXd w1, w0;    // regression weights actually used, full length
    Eigen::VectorXd m1hat, m0hat, p1hat, p0hat;   // fitted on every row
};

inline LateNuisances fit_nuisances_late(const Dataset& d, const EstimOptions& o,
                                        LateWeighting weighting = LateWeighting::inverse_ps) {
    check_one_sided_flags(d, o);
    LateNuisances nu;
    nu.fam_y = o.fam_y;
    nu.weighting = weighting;
    nu.known_pi0_zero = o.known_pi0_zero;
    nu.known_pi1_one = o.known_pi1_one;
    nu.ps = fit_instrument_propensity(d, o.models.propensity, o.qmle);
    enforce_overlap(overlap_report(nu.ps.p, d.instrument(), o.eps_overlap), o);

    const auto z = d.instrument();
    const auto w = d.treatment();
    const auto y = d.outcome();
    const Eigen::Index n = d.n_obs();
    nu.Xy = expand_covariates(d, o.models.outcome);
    nu.Xw = expand_covariates(d, o.models.treatment);

    nu.w1.resize(n);
    nu.w0.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        if (weighting == LateWeighting::inverse_ps) {
            nu.w1[i] = (z[i] == 1.0) ? 1.0 / nu.ps.p[i] : 0.0;
            nu.w0[i] = (z[i] == 0.0) ? 1.0 / (1.0 - nu.ps.p[i]) : 0.0;
        } else {
            nu.w1[i] = z[i];
            nu.w0[i] = 1.0 - z[i];
        }
    }

    nu.m1 = fit_weighted_qmle(nu.Xy, y, nu.w1, o.fam_y, o.qmle);
    nu.m0 = fit_weighted_qmle(nu.Xy, y, nu.w0, o.fam_y, o.qmle);
    nu.m1hat = predict_mean(nu.m1.coef, nu.Xy, o.fam_y);
    nu.m0hat = predict_mean(nu.m0.coef, nu.Xy, o.fam_y);

    if (o.known_pi1_one) {
        nu.p1hat = Eigen::VectorXd::Ones(n);
    } else {
        nu.r1 = fit_weighted_qmle(nu.Xw, w, nu.w1, LefFamily::bernoulli(), o.qmle);
        nu.p1hat = predict_mean(nu.r1.coef, nu.Xw, LefFamily::bernoulli());
    }
    if (o.known_pi0_zero) {
        nu.p0hat = Eigen::VectorXd::Zero(n);
    } else {
        nu.r0 = fit_weighted_qmle(nu.Xw, w, nu.w0, LefFamily::bernoulli(), o.qmle);
        nu.p0hat = predict_mean(nu.r0.coef, nu.Xw, LefFamily::bernoulli());
    }
    return nu;
}

inline void late_diagnostics(const Dataset& d, const LateNuisances& nu, EstimateResult& r) {
    const auto z = d.instrument();
    r.diagnostics["n"] = static_cast<double>(d.n_obs());
    r.diagnostics["n_z1"] = z.sum();
    r.diagnostics["n_z0"] = static_cast<double>(d.n_obs()) - z.sum();
    const auto rep = overlap_report(nu.ps.p, z);
    r.diagnostics["ps_min"] = rep.min_p;
    r.diagnostics["ps_max"] = rep.max_p;
    r.diagnostics["ps_flagged_share"] = rep.flagged_share;
}

// ratio of average fitted differences; the doubly robust LATE when the
// nuisances are inverse-propensity weighted, the RA LATE when unweighted
inline EstimateResult late_from_nuisances(const Dataset& d, const LateNuisances& nu,
                                          double denom_tol = 1e-10) {
    EstimateResult r;
    r.estimand = "late";
    r.method = (nu.weighting == LateWeighting::inverse_ps) ? "dr" : "ra";
    r.has_components = true;
    r.has_pi = true;
    r.theta1 = nu.m1hat.mean();
    r.theta0 = nu.m0hat.mean();
    r.pi1 = nu.known_pi1_one ? 1.0 : nu.p1hat.mean();
    r.pi0 = nu.known_pi0_zero ? 0.0 : nu.p0hat.mean();
    r.point = guarded_ratio(r.theta1 - r.theta0, r.pi1 - r.pi0, denom_tol);
    late_diagnostics(d, nu, r);
    return r;
}

inline EstimateResult dr_late(const Dataset& d, const EstimOptions& o) {
    return late_from_nuisances(d, fit_nuisances_late(d, o, LateWeighting::inverse_ps), o.denom_tol);
}

inline EstimateResult ra_late(const Dataset& d, const EstimOptions& o) {
    return late_from_nuisances(d, fit_nuisances_late(d, o, LateWeighting::unweighted), o.denom_tol);
}

// AIPW LATE: unweighted regressions plus inverse-propensity residual
// corrections in both the numerator and the denominator.
inline EstimateResult aipw_late_from_nuisances(const Dataset& d, const LateNuisances& nu,
                                               double denom_tol = 1e-10) {
    const auto z = d.instrument();
    const auto w = d.treatment();
    const auto y = d.outcome();
    const Eigen::Index n = d.n_obs();
    double t1 = 0, t0 = 0, q1 = 0, q0 = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
        const double g = nu.ps.p[i];
        t1 += nu.m1hat[i] + (z[i] == 1.0 ? (y[i] - nu.m1hat[i]) / g : 0.0);
        t0 += nu.m0hat[i] + (z[i] == 0.0 ? (y[i] - nu.m0hat[i]) / (1.0 - g) : 0.0);
        q1 += nu.known_pi1_one ? 1.0
                               : nu.p1hat[i] + (z[i] == 1.0 ? (w[i] - nu.p1hat[i]) / g : 0.0);
        q0 += nu.known_pi0_zero ? 0.0
                               : nu.p0hat[i] + (z[i] == 0.0 ? (w[i] - nu.p0hat[i]) / (1.0 - g) : 0.0);
    }
    EstimateResult r;
    r.estimand = "late";
    r.method = "aipw";
    r.has_components = true;
    r.has_pi = true;
    r.theta1 = t1 / static_cast<double>(n);
    r.theta0 = t0 / static_cast<double>(n);
    r.pi1 = q1 / static_cast<double>(n);
    r.pi0 = q0 / static_cast<double>(n);
    r.point = guarded_ratio(r.theta1 - r.theta0, r.pi1 - r.pi0, denom_tol);
    late_diagnostics(d, nu, r);
    return r;
}

inline EstimateResult aipw_late(const Dataset& d, const EstimOptions& o) {
    return aipw_late_from_nuisances(d, fit_nuisances_late(d, o, LateWeighting::unweighted),
                                    o.denom_tol);
}

// IPW LATE, a ratio of two inverse-propensity ATEs of Z.  normalized=true
// rescales the weights to sum to one within each arm (Hajek); false keeps the
// raw 1/N sums (Horvitz-Thompson), which is what makes it fragile.
inline EstimateResult ipw_late_from_ps(const Dataset& d, const PropensityFit& ps,
                                       bool normalized, const EstimOptions& o) {
    const auto z = d.instrument();
    const auto w = d.treatment();
    const auto y = d.outcome();
    const Eigen::Index n = d.n_obs();
    double sy1 = 0, sy0 = 0, sw1 = 0, sw0 = 0, s1 = 0, s0 = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
        if (z[i] == 1.0) {
            const double u = 1.0 / ps.p[i];
            sy1 += u * y[i];
            sw1 += u * w[i];
            s1 += u;
        } else {
            const double u = 1.0 / (1.0 - ps.p[i]);
            sy0 += u * y[i];
            sw0 += u * w[i];
            s0 += u;
        }
    }
    const double d1 = normalized ? s1 : static_cast<double>(n);
    const double d0 = normalized ? s0 : static_cast<double>(n);
    EstimateResult r;
    r.estimand = "late";
    r.method = normalized ? "ipw" : "ipw_unnorm";
    r.has_components = true;
    r.has_pi = true;
    r.theta1 = sy1 / d1;
    r.theta0 = sy0 / d0;
    r.pi1 = sw1 / d1;
    r.pi0 = sw0 / d0;
    r.point = guarded_ratio(r.theta1 - r.theta0, r.pi1 - r.pi0, o.denom_tol);
    r.diagnostics["n"] = static_cast<double>(n);
    return r;
}

inline EstimateResult ipw_late(const Dataset& d, const EstimOptions& o, bool normalized = true) {
    check_one_sided_flags(d, o);
    const auto ps = fit_instrument_propensity(d, o.models.propensity, o.qmle);
    enforce_overlap(overlap_report(ps.p, d.instrument(), o.eps_overlap), o);
    return ipw_late_from_ps(d, ps, normalized, o);
}

// ---------------- LATT ----------------

struct LattNuisances {
    PropensityFit ps;          // instrument propensity
    Eigen::MatrixXd Xy, Xw;
    LefFamily fam_y;
    bool known_pi0_zero = false;
    QmleFit m0, r0;
    Eigen::VectorXd w0;        // (1-Z) G/(1-G)
    Eigen::VectorXd m0hat, p0hat;
};

inline LattNuisances fit_nuisances_latt(const Dataset& d, const EstimOptions& o) {
    check_one_sided_flags(d, o);
    LattNuisances nu;
    nu.fam_y = o.fam_y;
    nu.known_pi0_zero = o.known_pi0_zero;
    nu.ps = fit_instrument_propensity(d, o.models.propensity, o.qmle);
    // only p near 1 is a problem here: the Z=0 arm is reweighted by G/(1-G)
    enforce_overlap(overlap_report(nu.ps.p, d.instrument(), o.eps_overlap,
                                   OverlapMode::upper_tail_only), o);
    const auto z = d.instrument();
    const Eigen::Index n = d.n_obs();
    nu.Xy = expand_covariates(d, o.models.outcome);
    nu.Xw = expand_covariates(d, o.models.treatment);
    nu.w0.resize(n);
    for (Eigen::Index i = 0; i < n; ++i)
        nu.w0[i] = (z[i] == 0.0) ? nu.ps.p[i] / (1.0 - nu.ps.p[i]) : 0.0;
    nu.m0 = fit_weighted_qmle(nu.Xy, d.outcome(), nu.w0, o.fam_y, o.qmle);
    nu.m0hat = predict_mean(nu.m0.coef, nu.Xy, o.fam_y);
    if (o.known_pi0_zero) {
        nu.p0hat = Eigen::VectorXd::Zero(n);
    } else {
        nu.r0 = fit_weighted_qmle(nu.Xw, d.treatment(), nu.w0, LefFamily::bernoulli(), o.qmle);
        nu.p0hat = predict_mean(nu.r0.coef, nu.Xw, LefFamily::bernoulli());
    }
    return nu;
}

inline EstimateResult latt_from_nuisances(const Dataset& d, const LattNuisances& nu,
                                          double denom_tol = 1e-10) {
    const auto z = d.instrument();
    const double n1 = z.sum();
    if (n1 == 0.0 || n1 == static_cast<double>(z.size()))
        throw DegenerateError("latt: need both instrument arms");
    const auto y = d.outcome();
    const auto w = d.treatment();
    double y1 = 0, w1 = 0, m0bar = 0, p0bar = 0;
    for (Eigen::Index i = 0; i < z.size(); ++i)
        if (z[i] == 1.0) {
            y1 += y[i];
            w1 += w[i];
            m0bar += nu.m0hat[i];
            p0bar += nu.p0hat[i];
        }
    EstimateResult r;
    r.estimand = "latt";
    r.method = "dr";
    r.has_components = true;
    r.has_pi = true;
    r.theta1 = y1 / n1;
    r.theta0 = m0bar / n1;
    r.pi1 = w1 / n1;
    r.pi0 = nu.known_pi0_zero ? 0.0 : p0bar / n1;
    r.point = guarded_ratio(r.theta1 - r.theta0, r.pi1 - r.pi0, denom_tol);
    r.diagnostics["n"] = static_cast<double>(z.size());
    r.diagnostics["n_z1"] = n1;
    return r;
}

inline EstimateResult dr_latt(const Dataset& d, const EstimOptions& o) {
    return latt_from_nuisances(d, fit_nuisances_latt(d, o), o.denom_tol);
}

// ---------------- ATT / ATE under unconfoundedness ----------------

struct AttNuisances {
    PropensityFit ps;          // treatment propensity
    Eigen::MatrixXd Xy;
    LefFamily fam_y;
    QmleFit m0, m1;            // m1 only for the ATE target
    Eigen::VectorXd w0, w1;
    Eigen::VectorXd m0hat, m1hat;
    bool with_m1 = false;
};

inline AttNuisances fit_nuisances_att(const Dataset& d, const EstimOptions& o, bool with_m1) {
    AttNuisances nu;
    nu.fam_y = o.fam_y;
    nu.with_m1 = with_m1;
    const auto w = d.treatment();
    const double n1 = w.sum();
    if (n1 == 0.0 || n1 == static_cast<double>(w.size()))
        throw DegenerateError("att: need both treated and control rows");
    nu.ps = fit_binary_propensity(d, w, o.models.propensity, o.qmle);
    enforce_overlap(overlap_report(nu.ps.p, w, o.eps_overlap,
                                   with_m1 ? OverlapMode::both_tails
                                           : OverlapMode::upper_tail_only), o);
    const Eigen::Index n = d.n_obs();
    nu.Xy = expand_covariates(d, o.models.outcome);
    nu.w0.resize(n);
    nu.w1.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const double f = nu.ps.p[i];
        // control rows reweighted toward the treated covariate distribution
        // for ATT, toward the full distribution for ATE
        nu.w0[i] = (w[i] == 0.0) ? (with_m1 ? 1.0 / (1.0 - f) : f / (1.0 - f)) : 0.0;
        nu.w1[i] = (w[i] == 1.0) ? 1.0 / f : 0.0;
    }
    nu.m0 = fit_weighted_qmle(nu.Xy, d.outcome(), nu.w0, o.fam_y, o.qmle);
    nu.m0hat = predict_mean(nu.m0.coef, nu.Xy, o.fam_y);
    if (with_m1) {
        nu.m1 = fit_weighted_qmle(nu.Xy, d.outcome(), nu.w1, o.fam_y, o.qmle);
        nu.m1hat = predict_mean(nu.m1.coef, nu.Xy, o.fam_y);
    }
    return nu;
}

inline EstimateResult att_from_nuisances(const Dataset& d, const AttNuisances& nu) {
    const auto w = d.treatment();
    const auto y = d.outcome();
    const double n1 = w.sum();
    double y1 = 0, m0bar = 0;
    for (Eigen::Index i = 0; i < w.size(); ++i)
        if (w[i] == 1.0) {
            y1 += y[i];
            m0bar += nu.m0hat[i];
        }
    EstimateResult r;
    r.estimand = "att";
    r.method = "dr";
    r.has_components = true;
    r.has_pi = false;
    r.theta1 = y1 / n1;
    r.theta0 = m0bar / n1;
    r.point = r.theta1 - r.theta0;
    r.diagnostics["n"] = static_cast<double>(w.size());
    r.diagnostics["n_treated"] = n1;
    return r;
}

inline EstimateResult dr_att(const Dataset& d, const EstimOptions& o) {
    return att_from_nuisances(d, fit_nuisances_att(d, o, false));
}

inline EstimateResult ate_from_nuisances(const Dataset& d, const AttNuisances& nu) {
    if (!nu.with_m1) throw ShapeError("ate: nuisances missing the treated-arm outcome model");
    EstimateResult r;
    r.estimand = "ate";
    r.method = "dr";
    r.has_components = true;
    r.has_pi = false;
    r.theta1 = nu.m1hat.mean();
    r.theta0 = nu.m0hat.mean();
    r.point = r.theta1 - r.theta0;
    r.diagnostics["n"] = static_cast<double>(d.n_obs());
    return r;
}

inline EstimateResult ipwra_ate(const Dataset& d, const EstimOptions& o) {
    return ate_from_nuisances(d, fit_nuisances_att(d, o, true));
}

// ---------------- covariate-free and linear IV ----------------

inline EstimateResult wald_iv(const Dataset& d, double denom_tol = 1e-10) {
    const auto z = d.instrument();
    const auto y = d.outcome();
    const auto w = d.treatment();
    const double n1 = z.sum(), n0 = static_cast<double>(z.size()) - z.sum();
    double y1 = 0, y0 = 0, w1 = 0, w0 = 0;
    for (Eigen::Index i = 0; i < z.size(); ++i) {
        if (z[i] == 1.0) {
            y1 += y[i];
            w1 += w[i];
        } else {
            y0 += y[i];
            w0 += w[i];
        }
    }
    EstimateResult r;
    r.estimand = "late";
    r.method = "wald";
    r.has_components = true;
    r.has_pi = true;
    r.theta1 = y1 / n1;
    r.theta0 = y0 / n0;
    r.pi1 = w1 / n1;
    r.pi0 = w0 / n0;
    r.point = guarded_ratio(r.theta1 - r.theta0, r.pi1 - r.pi0, denom_tol);
    r.diagnostics["n"] = static_cast<double>(z.size());
    return r;
}

// Just-identified linear IV (two stage least squares) of Y on (1, X, W) with
// instruments (1, X, Z); heteroskedasticity-robust sandwich SE, cluster-summed
// score when cluster ids are supplied.
inline EstimateResult linear_iv_2sls(const Dataset& d, const CovariateTransform& tf,
                                     std::optional<Eigen::VectorXd> cluster = std::nullopt) {
    const Eigen::MatrixXd Xc = expand_covariates(d, tf);
    const Eigen::Index n = Xc.rows(), k = Xc.cols();
    Eigen::MatrixXd P(n, k + 1), Q(n, k + 1);
    P.leftCols(k) = Xc;
    Q.leftCols(k) = Xc;
    P.col(k) = d.treatment();
    Q.col(k) = d.instrument();
    const Eigen::MatrixXd QtP = Q.transpose() * P;
    Eigen::PartialPivLU<Eigen::MatrixXd> lu(QtP);
    if (std::fabs(lu.determinant()) < 1e-300)
        throw SingularError("2sls: instrument/regressor cross-product is singular");
    const Eigen::VectorXd b = lu.solve(Q.transpose() * d.outcome());
    const Eigen::VectorXd u = d.outcome() - P * b;
    Eigen::MatrixXd meat = Eigen::MatrixXd::Zero(k + 1, k + 1);
    if (cluster && cluster->size() > 0) {
        if (cluster->size() != n) throw ShapeError("2sls: cluster id length mismatch");
        std::map<double, Eigen::VectorXd> sums;
        for (Eigen::Index i = 0; i < n; ++i) {
            auto [itr, fresh] =
                sums.try_emplace((*cluster)[i], Eigen::VectorXd::Zero(k + 1));
            itr->second += u[i] * Q.row(i).transpose();
        }
        for (const auto& [id, s] : sums)
            meat.selfadjointView<Eigen::Lower>().rankUpdate(s, 1.0);
    } else {
        for (Eigen::Index i = 0; i < n; ++i)
            meat.selfadjointView<Eigen::Lower>().rankUpdate(Q.row(i).transpose(), u[i] * u[i]);
    }
    const Eigen::MatrixXd inv = lu.inverse();
    const Eigen::MatrixXd avar =
        inv * Eigen::MatrixXd(meat.selfadjointView<Eigen::Lower>()) * inv.transpose();
    EstimateResult r;
    r.estimand = "late";
    r.method = "2sls";
    r.point = b[k];
    r.se = std::sqrt(avar(k, k));
    r.ci95 = {r.point - 1.96 * *r.se, r.point + 1.96 * *r.se};
    r.diagnostics["n"] = static_cast<double>(n);
    return r;
}

} // namespace ipwra
