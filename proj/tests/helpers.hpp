#pragma once

// Shared fixtures for the unit tests: tiny dataset constructors and O(1)-scale
// synthetic designs, so finite-difference and collapse checks are well
// conditioned and independent of the calibrated simulation magnitudes.

#include <Eigen/Dense>

#include "ipwra/ipwra.hpp"

namespace testutil {

inline ipwra::Dataset make_data(const Eigen::VectorXd& y, const Eigen::VectorXd& w,
                                const Eigen::VectorXd& z) {
    Eigen::MatrixXd v(y.size(), 3);
    v.col(0) = y;
    v.col(1) = w;
    v.col(2) = z;
    ipwra::Roles r;
    r.outcome = "y";
    r.treatment = "w";
    r.instrument = "z";
    return ipwra::Dataset({"y", "w", "z"}, std::move(v), std::move(r));
}

inline ipwra::Dataset make_data_x(const Eigen::VectorXd& y, const Eigen::VectorXd& w,
                                  const Eigen::VectorXd& z, const Eigen::VectorXd& x,
                                  const Eigen::VectorXd* cluster = nullptr) {
    const Eigen::Index k = cluster ? 5 : 4;
    Eigen::MatrixXd v(y.size(), k);
    v.col(0) = y;
    v.col(1) = w;
    v.col(2) = z;
    v.col(3) = x;
    std::vector<std::string> names = {"y", "w", "z", "x"};
    ipwra::Roles r;
    r.outcome = "y";
    r.treatment = "w";
    r.instrument = "z";
    r.covariates = {"x"};
    if (cluster) {
        v.col(4) = *cluster;
        names.push_back("g");
        r.cluster = "g";
    }
    return ipwra::Dataset(std::move(names), std::move(v), std::move(r));
}

inline ipwra::EstimOptions intercept_only_options() {
    ipwra::EstimOptions o;
    o.models = ipwra::ModelSpecs::all_same(ipwra::CovariateTransform{});
    return o;
}

inline ipwra::EstimOptions x_options() {
    ipwra::EstimOptions o;
    ipwra::CovariateTransform tf;
    tf.terms = {ipwra::Term{"x", 1, 0.0, false}};
    o.models = ipwra::ModelSpecs::all_same(tf);
    return o;
}

// Two-sided noncompliance with one O(1) covariate:
//   x ~ N(0,1), Z ~ Bern(logistic(0.3 + 0.5x)),
//   W ~ Bern(logistic(-0.4 + 1.2Z + 0.5x)), Y = 1 + x + 1.5W + N(0,1).
inline ipwra::Dataset small_dgp(ipwra::Rng& rng, Eigen::Index n, const Eigen::VectorXd* = nullptr) {
    Eigen::VectorXd y(n), w(n), z(n), x(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        x[i] = rng.normal();
        z[i] = (rng.uniform() < ipwra::logistic(0.3 + 0.5 * x[i])) ? 1.0 : 0.0;
        w[i] = (rng.uniform() < ipwra::logistic(-0.4 + 1.2 * z[i] + 0.5 * x[i])) ? 1.0 : 0.0;
        y[i] = 1.0 + x[i] + 1.5 * w[i] + rng.normal();
    }
    return make_data_x(y, w, z, x);
}

// Same scales with one-sided noncompliance: W = Z * Bern(logistic(0.2 + 0.5x)).
inline ipwra::Dataset small_dgp_one_sided(ipwra::Rng& rng, Eigen::Index n) {
    Eigen::VectorXd y(n), w(n), z(n), x(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        x[i] = rng.normal();
        z[i] = (rng.uniform() < ipwra::logistic(0.3 + 0.5 * x[i])) ? 1.0 : 0.0;
        const double d1 = (rng.uniform() < ipwra::logistic(0.2 + 0.5 * x[i])) ? 1.0 : 0.0;
        w[i] = z[i] * d1;
        y[i] = 1.0 + x[i] + 1.5 * w[i] + rng.normal();
    }
    return make_data_x(y, w, z, x);
}

// Random covariate-free dataset with all four (Z, W) cells occupied and a
// first stage strong enough that no ratio denominator is fragile.
inline ipwra::Dataset random_intercept_only(ipwra::Rng& rng, Eigen::Index n) {
    for (int attempt = 0; attempt < 1000; ++attempt) {
        Eigen::VectorXd y(n), w(n), z(n);
        int cell[2][2] = {{0, 0}, {0, 0}};
        for (Eigen::Index i = 0; i < n; ++i) {
            z[i] = (rng.uniform() < 0.5) ? 1.0 : 0.0;
            w[i] = (rng.uniform() < 0.25 + 0.5 * z[i]) ? 1.0 : 0.0;
            y[i] = 0.5 * w[i] + rng.normal();
            ++cell[static_cast<int>(z[i])][static_cast<int>(w[i])];
        }
        const int n1 = cell[1][0] + cell[1][1], n0 = cell[0][0] + cell[0][1];
        if (cell[0][0] < 2 || cell[0][1] < 2 || cell[1][0] < 2 || cell[1][1] < 2) continue;
        const double gap = static_cast<double>(cell[1][1]) / n1 -
                           static_cast<double>(cell[0][1]) / n0;
        if (gap < 0.2) continue;
        return make_data(y, w, z);
    }
    throw std::logic_error("random_intercept_only: no valid draw in 1000 attempts");
}

} // namespace testutil
