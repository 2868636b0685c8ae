#pragma once

#include <cmath>
#include <optional>
#include <string>

#include <Eigen/Dense>

#include "ipwra/errors.hpp"
#include "ipwra/math.hpp"

namespace ipwra {

// Linear exponential families with canonical links.  QMLE in any of these is
// consistent for the conditional mean whenever the mean model is correct,
// which is the only property the doubly robust estimators rely on.
enum class Lef {
    gaussian_identity,
    bernoulli_logit,
    binomial_logit,   // mean = bound * logistic(eta), bound varies by row
    poisson_log,
};

struct LefFamily {
    Lef kind = Lef::gaussian_identity;
    Eigen::VectorXd bound;   // binomial only; one entry per row

    static LefFamily gaussian() { return {Lef::gaussian_identity, {}}; }
    static LefFamily bernoulli() { return {Lef::bernoulli_logit, {}}; }
    static LefFamily poisson() { return {Lef::poisson_log, {}}; }
    static LefFamily binomial(Eigen::VectorXd b) { return {Lef::binomial_logit, std::move(b)}; }

    double mean(double eta, Eigen::Index i) const {
        switch (kind) {
            case Lef::gaussian_identity: return eta;
            case Lef::bernoulli_logit: return logistic(eta);
            case Lef::binomial_logit: return bound[i] * logistic(eta);
            case Lef::poisson_log: return std::exp(std::min(eta, 700.0));
        }
        return 0.0;
    }

    // d mean / d eta, the IRLS weight for the canonical link
    double mean_deriv(double eta, Eigen::Index i) const {
        switch (kind) {
            case Lef::gaussian_identity: return 1.0;
            case Lef::bernoulli_logit: {
                const double p = logistic(eta);
                return p * (1.0 - p);
            }
            case Lef::binomial_logit: {
                const double p = logistic(eta);
                return bound[i] * p * (1.0 - p);
            }
            case Lef::poisson_log: return std::exp(std::min(eta, 700.0));
        }
        return 0.0;
    }

    // quasi log likelihood up to terms free of eta; only used for damping
    double qll(double y, double eta, Eigen::Index i) const {
        switch (kind) {
            case Lef::gaussian_identity: {
                const double r = y - eta;
                return -0.5 * r * r;
            }
            case Lef::bernoulli_logit:
                return -y * log1pexp(-eta) - (1.0 - y) * log1pexp(eta);
            case Lef::binomial_logit:
                return -y * log1pexp(-eta) - (bound[i] - y) * log1pexp(eta);
            case Lef::poisson_log:
                return y * eta - std::exp(std::min(eta, 700.0));
        }
        return 0.0;
    }

    void check_support(double y, Eigen::Index i, Eigen::Index row) const {
        bool ok = std::isfinite(y);
        if (ok) switch (kind) {
            case Lef::gaussian_identity: break;
            case Lef::bernoulli_logit: ok = (y >= 0.0 && y <= 1.0); break;
            case Lef::binomial_logit:
                ok = (y >= 0.0 && bound[i] > 0.0 && y <= bound[i]);
                break;
            case Lef::poisson_log: ok = (y >= 0.0); break;
        }
        if (!ok)
            throw DataError("qmle: response value " + std::to_string(y) + " at row " +
                            std::to_string(row) + " outside family support");
    }

    const char* name() const {
        switch (kind) {
            case Lef::gaussian_identity: return "gaussian";
            case Lef::bernoulli_logit: return "bernoulli";
            case Lef::binomial_logit: return "binomial";
            case Lef::poisson_log: return "poisson";
        }
        return "?";
    }
};

struct QmleFit {
    Eigen::VectorXd coef;
    bool converged = false;
    int iterations = 0;
    // max |weighted score coordinate| / sum(weights), columns at unit RMS
    double max_abs_foc = 0.0;
};

struct ConvergenceError : Error {
    QmleFit last;
    ConvergenceError(const std::string& msg, QmleFit it)
        : Error(msg), last(std::move(it)) {}
};

struct QmleOptions {
    double tol = 1e-8;
    int max_iter = 100;
    double coef_cap = 30.0;   // on unit-RMS columns; beyond this = separation
};

inline Eigen::VectorXd predict_mean(const Eigen::VectorXd& coef, const Eigen::MatrixXd& X,
                                    const LefFamily& fam) {
    if (coef.size() != X.cols())
        throw ShapeError("predict_mean: coef length " + std::to_string(coef.size()) +
                         " vs " + std::to_string(X.cols()) + " design columns");
    if (fam.kind == Lef::binomial_logit && fam.bound.size() != X.rows())
        throw ShapeError("predict_mean: binomial bound length mismatch");
    const Eigen::VectorXd eta = X * coef;
    Eigen::VectorXd m(X.rows());
    for (Eigen::Index i = 0; i < X.rows(); ++i) m[i] = fam.mean(eta[i], i);
    return m;
}

// Per-observation weighted score contributions w_i * x_i * (y_i - m_i); rows
// with zero weight are exactly zero.  These are the building blocks of the
// stacked moment system.
inline Eigen::MatrixXd score_rows(const Eigen::VectorXd& coef, const Eigen::MatrixXd& X,
                                  const Eigen::VectorXd& y, const Eigen::VectorXd& w,
                                  const LefFamily& fam) {
    if (y.size() != X.rows() || w.size() != X.rows())
        throw ShapeError("score_rows: row count mismatch");
    const Eigen::VectorXd m = predict_mean(coef, X, fam);
    Eigen::MatrixXd s = Eigen::MatrixXd::Zero(X.rows(), X.cols());
    for (Eigen::Index i = 0; i < X.rows(); ++i)
        if (w[i] != 0.0) s.row(i) = (w[i] * (y[i] - m[i])) * X.row(i);
    return s;
}

// Weighted QMLE by damped Newton steps, which for these canonical links is
// iteratively reweighted least squares.  Internally the columns are scaled to
// unit RMS and the score is normalized by the total weight, so tolerances do
// not depend on the sample size, the weight scale, or the covariate units.
inline QmleFit fit_weighted_qmle(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                                 const Eigen::VectorXd& w, const LefFamily& fam,
                                 const QmleOptions& opt = {}) {
    const Eigen::Index n = X.rows(), k = X.cols();
    if (y.size() != n || w.size() != n)
        throw ShapeError("qmle: X has " + std::to_string(n) + " rows, y " +
                         std::to_string(y.size()) + ", w " + std::to_string(w.size()));
    if (k == 0) throw ShapeError("qmle: empty design");
    if (fam.kind == Lef::binomial_logit && fam.bound.size() != n)
        throw ShapeError("qmle: binomial bound length mismatch");

    double wsum = 0.0;
    Eigen::Index n_active = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
        if (!std::isfinite(w[i]) || w[i] < 0.0)
            throw DataError("qmle: weight at row " + std::to_string(i) + " is negative or non-finite");
        if (w[i] > 0.0) {
            fam.check_support(y[i], i, i);
            wsum += w[i];
            ++n_active;
        }
    }
    if (n_active < k)
        throw DegenerateError("qmle: only " + std::to_string(n_active) +
                              " rows with positive weight for " + std::to_string(k) + " coefficients");

    // column scaling to unit RMS
    Eigen::VectorXd scale(k);
    for (Eigen::Index j = 0; j < k; ++j) {
        const double s = std::sqrt(X.col(j).squaredNorm() / static_cast<double>(n));
        scale[j] = (s > 0.0) ? s : 1.0;
    }
    const Eigen::MatrixXd Xs = X * scale.cwiseInverse().asDiagonal();

    auto normalized_score = [&](const Eigen::VectorXd& b, Eigen::VectorXd& eta_out) {
        eta_out = Xs * b;
        Eigen::VectorXd g = Eigen::VectorXd::Zero(k);
        for (Eigen::Index i = 0; i < n; ++i)
            if (w[i] > 0.0) g += (w[i] * (y[i] - fam.mean(eta_out[i], i))) * Xs.row(i).transpose();
        return Eigen::VectorXd(g / wsum);
    };

    auto finish = [&](Eigen::VectorXd b, bool conv, int iters, double foc) {
        QmleFit f;
        f.coef = scale.cwiseInverse().asDiagonal() * b;
        f.converged = conv;
        f.iterations = iters;
        f.max_abs_foc = foc;
        return f;
    };

    // Gaussian identity is a plain weighted least squares problem: solve it
    // directly, the Newton loop below would do the same in one step.
    if (fam.kind == Lef::gaussian_identity) {
        Eigen::MatrixXd Xw(n_active, k);
        Eigen::VectorXd yw(n_active);
        Eigen::Index r = 0;
        for (Eigen::Index i = 0; i < n; ++i)
            if (w[i] > 0.0) {
                const double sw = std::sqrt(w[i]);
                Xw.row(r) = sw * Xs.row(i);
                yw[r] = sw * y[i];
                ++r;
            }
        Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(Xw);
        qr.setThreshold(1e-10);
        if (qr.rank() < k)
            throw SingularError("qmle: design is rank deficient (rank " +
                                std::to_string(qr.rank()) + " of " + std::to_string(k) + ")");
        Eigen::VectorXd b = qr.solve(yw);
        Eigen::VectorXd eta;
        const double foc = normalized_score(b, eta).cwiseAbs().maxCoeff();
        return finish(std::move(b), true, 1, foc);
    }

    // start: intercept-style column gets the link of the mean response
    Eigen::VectorXd b = Eigen::VectorXd::Zero(k);
    {
        double ybar = 0.0, bbar = 0.0;
        for (Eigen::Index i = 0; i < n; ++i)
            if (w[i] > 0.0) {
                ybar += w[i] * y[i];
                if (fam.kind == Lef::binomial_logit) bbar += w[i] * fam.bound[i];
            }
        ybar /= wsum;
        double eta0 = 0.0;
        if (fam.kind == Lef::poisson_log) eta0 = std::log(std::max(ybar, 1e-4));
        else if (fam.kind == Lef::bernoulli_logit) eta0 = logit(std::clamp(ybar, 1e-4, 1.0 - 1e-4));
        else eta0 = logit(std::clamp(ybar / std::max(bbar / wsum, 1e-12), 1e-4, 1.0 - 1e-4));
        if ((Xs.col(0).array() - Xs(0, 0)).abs().maxCoeff() == 0.0 && Xs(0, 0) != 0.0)
            b[0] = eta0 / Xs(0, 0);
    }

    auto total_qll = [&](const Eigen::VectorXd& eta) {
        double q = 0.0;
        for (Eigen::Index i = 0; i < n; ++i)
            if (w[i] > 0.0) q += w[i] * fam.qll(y[i], eta[i], i);
        return q;
    };

    Eigen::VectorXd eta;
    Eigen::VectorXd g = normalized_score(b, eta);
    double qcur = total_qll(eta);
    double foc = g.cwiseAbs().maxCoeff();
    bool polished = false;
    int it = 0;
    while (it < opt.max_iter) {
        if (foc <= opt.tol) {
            // one extra full step: quadratic convergence pushes the score to
            // machine level, which downstream algebraic identities rely on
            if (polished) return finish(std::move(b), true, it, foc);
            polished = true;
        }
        ++it;
        Eigen::MatrixXd H = Eigen::MatrixXd::Zero(k, k);
        for (Eigen::Index i = 0; i < n; ++i)
            if (w[i] > 0.0) {
                const double d = w[i] * fam.mean_deriv(eta[i], i);
                if (d > 0.0) H.selfadjointView<Eigen::Lower>().rankUpdate(Xs.row(i).transpose(), d);
            }
        H /= wsum;
        Eigen::LDLT<Eigen::MatrixXd> ldlt(H.selfadjointView<Eigen::Lower>());
        const Eigen::VectorXd dvec = ldlt.vectorD();
        if (ldlt.info() != Eigen::Success || dvec.minCoeff() <= dvec.maxCoeff() * 1e-13)
            throw SingularError("qmle: singular information matrix (rank-deficient design "
                                "or fitted probabilities collapsed)");
        Eigen::VectorXd step = ldlt.solve(g);

        // backtrack until the quasi-likelihood does not decrease
        double t = 1.0;
        Eigen::VectorXd bnew;
        double qnew;
        int halvings = 0;
        while (true) {
            bnew = b + t * step;
            qnew = total_qll(Xs * bnew);
            if (qnew >= qcur - 1e-12 * (1.0 + std::fabs(qcur)) || halvings >= 40) break;
            t *= 0.5;
            ++halvings;
        }
        b = std::move(bnew);
        qcur = qnew;
        g = normalized_score(b, eta);
        foc = g.cwiseAbs().maxCoeff();

        if (b.cwiseAbs().maxCoeff() > opt.coef_cap && foc > opt.tol)
            throw SeparationError("qmle: " + std::string(fam.name()) +
                                  " coefficients diverged past " + std::to_string(opt.coef_cap) +
                                  " on unit-RMS columns; data look separated");
    }
    if (foc <= opt.tol) return finish(std::move(b), true, it, foc);
    if (b.cwiseAbs().maxCoeff() > opt.coef_cap)
        throw SeparationError("qmle: no convergence and coefficients at cap; data look separated");
    throw ConvergenceError("qmle: no convergence after " + std::to_string(opt.max_iter) +
                           " iterations (score " + std::to_string(foc) + ")",
                           finish(std::move(b), false, it, foc));
}

} // namespace ipwra
