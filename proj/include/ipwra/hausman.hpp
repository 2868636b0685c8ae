#pragma once

#include <cmath>
#include <string>

#include "ipwra/driver.hpp"
#include "ipwra/math.hpp"

namespace ipwra {

enum class ComparisonSe { paired_bootstrap, joint_gmm };

struct ComparisonResult {
    EstimateResult left, right;
    double diff = 0.0;
    double se_diff = 0.0;
    double t_stat = 0.0;
    double p_value = 1.0;
    std::string method_se;
    int boot_failed = 0;
};

struct ComparisonOptions {
    ComparisonSe se_method = ComparisonSe::paired_bootstrap;
    int boot_reps = 999;
    std::uint64_t seed = 20240901;
    // the LATT-vs-ATT flavor is only a test of unconfoundedness when
    // noncompliance is one-sided in-sample; set to true to run it anyway
    bool allow_two_sided = false;
};

namespace detail {

inline void check_one_sided_precondition(const Dataset& d, const EstimatorSpec& a,
                                         const EstimatorSpec& b, bool allow) {
    const bool latt_att = (a.method == Method::dr_latt && b.method == Method::dr_att) ||
                          (a.method == Method::dr_att && b.method == Method::dr_latt);
    if (!latt_att || allow) return;
    const auto z = d.instrument();
    const auto w = d.treatment();
    for (Eigen::Index i = 0; i < z.size(); ++i)
        if (z[i] == 0.0 && w[i] == 1.0)
            throw ConsistencyError(
                "latt-vs-att comparison: row " + std::to_string(i) +
                " has W=1, Z=0, so noncompliance is not one-sided and the two estimands need "
                "not coincide; rerun with allow_two_sided to force the comparison");
}

} // namespace detail

// Difference of two estimators on one dataset with a proper SE for the
// difference: paired bootstrap (same resamples feed both sides) or a joint
// stacked-moment system covering both estimators' parameters.
inline ComparisonResult hausman_dr_test(const Dataset& d, const EstimatorSpec& left,
                                        const EstimatorSpec& right,
                                        const ComparisonOptions& opt = {}) {
    detail::check_one_sided_precondition(d, left, right, opt.allow_two_sided);

    ComparisonResult out;
    EstimatorSpec l = left, r = right;
    l.se = r.se = SeKind::none;

    if (opt.se_method == ComparisonSe::joint_gmm) {
        StackedSystem sys(d);
        const FitOutput fl = fit_method(d, l, &sys, "L:");
        const FitOutput fr = fit_method(d, r, &sys, "R:");
        out.left = fl.est;
        out.right = fr.est;
        out.diff = fl.est.point - fr.est.point;
        const MomentSystem ms = sys.materialize(cluster_for(d, left));
        const VarianceResult var = sandwich_variance(ms);
        const Eigen::RowVectorXd grad =
            point_gradient(sys, fl.info) - point_gradient(sys, fr.info);
        out.se_diff = delta_se(var.avar, grad.transpose());
        out.method_se = "joint_gmm";
    } else {
        out.left = fit_method(d, l, nullptr).est;
        out.right = fit_method(d, r, nullptr).est;
        out.diff = out.left.point - out.right.point;
        const bool cl = left.use_cluster && d.has_cluster();
        const auto br = bootstrap_scalar(d, opt.boot_reps, opt.seed, cl,
                                         [&](const Dataset& db) {
                                             return point_estimate(db, l) -
                                                    point_estimate(db, r);
                                         });
        out.se_diff = br.se;
        out.boot_failed = br.n_failed;
        out.method_se = "paired_bootstrap";
    }

    if (out.diff == 0.0 && out.se_diff == 0.0) {
        // exact tie, e.g. comparing an estimator with itself
        out.t_stat = 0.0;
        out.p_value = 1.0;
    } else {
        out.t_stat = out.diff / out.se_diff;
        out.p_value = z_pvalue(out.t_stat);
    }
    return out;
}

} // namespace ipwra
