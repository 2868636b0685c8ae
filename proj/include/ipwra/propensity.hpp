#pragma once

#include <array>
#include <cstdio>
#include <string>

#include <Eigen/Dense>

#include "ipwra/data.hpp"
#include "ipwra/qmle.hpp"

namespace ipwra {

struct PropensityFit {
    QmleFit fit;
    Eigen::MatrixXd design;   // expanded covariates used for the logit
    Eigen::VectorXd p;        // fitted probabilities, strictly inside (0,1)
};

// Logit of a 0/1 arm indicator on the expanded covariates.  Used for both the
// instrument propensity (on Z) and the treatment propensity (on W).
inline PropensityFit fit_binary_propensity(const Dataset& d, const Eigen::VectorXd& arm,
                                           const CovariateTransform& tf,
                                           const QmleOptions& opt = {}) {
    const double s = arm.sum();
    if (s == 0.0 || s == static_cast<double>(arm.size()))
        throw DegenerateError("propensity: indicator is constant; cannot fit a logit");
    PropensityFit out;
    out.design = expand_covariates(d, tf);
    out.fit = fit_weighted_qmle(out.design, arm, Eigen::VectorXd::Ones(arm.size()),
                                LefFamily::bernoulli(), opt);
    out.p = predict_mean(out.fit.coef, out.design, LefFamily::bernoulli());
    return out;
}

inline PropensityFit fit_instrument_propensity(const Dataset& d, const CovariateTransform& tf,
                                               const QmleOptions& opt = {}) {
    return fit_binary_propensity(d, d.instrument(), tf, opt);
}

inline PropensityFit fit_treatment_propensity(const Dataset& d, const CovariateTransform& tf,
                                              const QmleOptions& opt = {}) {
    return fit_binary_propensity(d, d.treatment(), tf, opt);
}

// Which tail violations matter: estimands averaging over the whole sample
// need probabilities away from both 0 and 1; estimands reweighting only the
// untreated arm toward the treated one divide by 1-p, so only p near 1 hurts.
enum class OverlapMode { both_tails, upper_tail_only };

struct OverlapReport {
    double eps = 0.01;
    double min_p = 1.0, max_p = 0.0;
    double share_below = 0.0;   // p < eps
    double share_above = 0.0;   // p > 1 - eps
    double flagged_share = 0.0; // the share that counts against the threshold
    Eigen::Index n = 0;
    // 20 equal-width bins on [0,1], split by arm value
    std::array<Eigen::Index, 20> hist_arm1{};
    std::array<Eigen::Index, 20> hist_arm0{};

    std::string to_text() const {
        char line[160];
        std::string out;
        std::snprintf(line, sizeof(line),
                      "propensity overlap: n=%lld min=%.4f max=%.4f  share<%g: %.4f  share>%g: %.4f\n",
                      static_cast<long long>(n), min_p, max_p, eps, share_below, 1.0 - eps,
                      share_above);
        out += line;
        Eigen::Index peak = 1;
        for (int b = 0; b < 20; ++b) peak = std::max(peak, hist_arm1[b] + hist_arm0[b]);
        for (const char* tag : {"arm=1", "arm=0"}) {
            const auto& h = (tag[4] == '1') ? hist_arm1 : hist_arm0;
            out += tag;
            out += " |";
            for (int b = 0; b < 20; ++b) {
                const int bar = static_cast<int>(8.0 * static_cast<double>(h[b]) /
                                                 static_cast<double>(peak) + 0.999);
                out += (h[b] == 0) ? ' ' : static_cast<char>('0' + std::min(bar, 8));
            }
            out += "|\n";
        }
        out += "          0 ------------------ 1\n";
        return out;
    }
};

inline OverlapReport overlap_report(const Eigen::VectorXd& p, const Eigen::VectorXd& arm,
                                    double eps = 0.01, OverlapMode mode = OverlapMode::both_tails) {
    if (p.size() != arm.size()) throw ShapeError("overlap: p and arm length mismatch");
    if (!(eps > 0.0 && eps < 0.5)) throw DataError("overlap: eps must be in (0, 0.5)");
    OverlapReport r;
    r.eps = eps;
    r.n = p.size();
    Eigen::Index below = 0, above = 0;
    for (Eigen::Index i = 0; i < p.size(); ++i) {
        const double pi = p[i];
        if (!(pi > 0.0 && pi < 1.0))
            throw DataError("overlap: probability " + std::to_string(pi) + " at row " +
                            std::to_string(i) + " outside (0,1)");
        r.min_p = std::min(r.min_p, pi);
        r.max_p = std::max(r.max_p, pi);
        if (pi < eps) ++below;
        if (pi > 1.0 - eps) ++above;
        int b = static_cast<int>(pi * 20.0);
        if (b == 20) b = 19;
        (arm[i] == 1.0 ? r.hist_arm1 : r.hist_arm0)[b] += 1;
    }
    r.share_below = static_cast<double>(below) / static_cast<double>(r.n);
    r.share_above = static_cast<double>(above) / static_cast<double>(r.n);
    r.flagged_share = (mode == OverlapMode::both_tails) ? r.share_below + r.share_above
                                                        : r.share_above;
    return r;
}

} // namespace ipwra
