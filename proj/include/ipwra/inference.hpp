#pragma once

#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "ipwra/estimators.hpp"

namespace ipwra {

struct MomentBlock {
    std::string name;
    Eigen::Index offset = 0;
    Eigen::Index size = 0;
};

// Materialized stacked moment system at the solution: per-observation moment
// rows, average Jacobian, block bookkeeping, optional cluster ids.
struct MomentSystem {
    Eigen::MatrixXd psi;                       // n x p
    Eigen::MatrixXd A;                         // p x p, (1/n) sum d psi_i / d phi'
    Eigen::VectorXd phi;
    std::vector<MomentBlock> blocks;
    std::optional<Eigen::VectorXd> cluster;

    Eigen::Index n() const { return psi.rows(); }
    Eigen::Index p() const { return psi.cols(); }

    const MomentBlock& block(const std::string& name) const {
        for (const auto& b : blocks)
            if (b.name == name) return b;
        throw ShapeError("moment system: no block named '" + name + "'");
    }
};

// How a regression block's rows are weighted, as a function of an arm
// indicator a and the fitted propensity G of the linked logit.
enum class WeightKind {
    ind1,    // a            (plain arm-1 subsample fit)
    ind0,    // 1-a
    inv1,    // a/G          (inverse propensity, arm 1)
    inv0,    // (1-a)/(1-G)
    odds0,   // (1-a) G/(1-G)  (controls reweighted toward the offered/treated)
};

inline double moment_weight(WeightKind k, double a, double g) {
    switch (k) {
        case WeightKind::ind1: return a;
        case WeightKind::ind0: return 1.0 - a;
        case WeightKind::inv1: return a / g;
        case WeightKind::inv0: return (1.0 - a) / (1.0 - g);
        case WeightKind::odds0: return (1.0 - a) * g / (1.0 - g);
    }
    return 0.0;
}

// d weight / d(propensity index), using dG/d eta = G(1-G) for the logit
inline double moment_weight_deta(WeightKind k, double a, double g) {
    switch (k) {
        case WeightKind::ind1:
        case WeightKind::ind0: return 0.0;
        case WeightKind::inv1: return -a * (1.0 - g) / g;
        case WeightKind::inv0: return (1.0 - a) * g / (1.0 - g);
        case WeightKind::odds0: return (1.0 - a) * g / (1.0 - g);
    }
    return 0.0;
}

enum class TauKind {
    contrast,        // mean_a(i) - mean_b(i) - tau           (DR/RA tau rows, ATE)
    aipw_contrast,   // ipw-corrected contrast - tau          (AIPW tau rows)
    sub_mean,        // arm*(v - mean_b(i) - tau)             (LATT nu rows, ATT)
    hajek_mean,      // u*(v - tau), u an inverse-ps weight
    ht_mean,         // u*v - tau
    arm_mean,        // arm*(v - tau) or (1-arm)*(v - tau)    (covariate-free means)
};

// One stacked estimating-equation system.  Blocks are added in storage order;
// psi() and jacobian() evaluate at any parameter vector, which is what makes
// finite-difference verification of the analytic Jacobian possible.
class StackedSystem {
  public:
    explicit StackedSystem(const Dataset& d)
        : y_(d.outcome()), w_(d.treatment()), z_(d.instrument()) {}

    StackedSystem(Eigen::VectorXd y, Eigen::VectorXd w, Eigen::VectorXd z)
        : y_(std::move(y)), w_(std::move(w)), z_(std::move(z)) {}

    int add_design(Eigen::MatrixXd X) {
        if (X.rows() != y_.size()) throw ShapeError("stacked system: design row mismatch");
        designs_.push_back(std::move(X));
        return static_cast<int>(designs_.size()) - 1;
    }

    // column selectors: 0 = outcome, 1 = treatment, 2 = instrument
    const Eigen::VectorXd& column(int sel) const {
        return sel == 0 ? y_ : (sel == 1 ? w_ : z_);
    }

    int add_ps(const std::string& name, int design, int arm_col) {
        Item it;
        it.type = Item::ps;
        it.name = name;
        it.design = design;
        it.arm_col = arm_col;
        it.size = designs_[static_cast<size_t>(design)].cols();
        return push(std::move(it));
    }

    int add_reg(const std::string& name, int design, int resp, LefFamily fam, WeightKind wk,
                int arm_col) {
        Item it;
        it.type = Item::reg;
        it.name = name;
        it.design = design;
        it.resp = resp;
        it.fam = std::move(fam);
        it.wk = wk;
        it.arm_col = arm_col;
        it.size = designs_[static_cast<size_t>(design)].cols();
        return push(std::move(it));
    }

    // attach the propensity block whose fitted values drive reg weights;
    // ids may contain -1 entries for blocks that were skipped
    void link_ps(std::initializer_list<int> reg_ids, int ps_id) {
        for (int id : reg_ids)
            if (id >= 0) items_[static_cast<size_t>(id)].ps_id = ps_id;
    }

    // a_id / b_id reference earlier reg blocks whose fitted means feed the
    // row; a negative id stands for the known constant const_a / const_b
    int add_tau(const std::string& name, TauKind kind, int a_id, int b_id, double const_a,
                double const_b, int resp, int arm_col, int ps_id, WeightKind wk = WeightKind::ind1) {
        Item it;
        it.type = Item::tau;
        it.name = name;
        it.kind = kind;
        it.a_id = a_id;
        it.b_id = b_id;
        it.const_a = const_a;
        it.const_b = const_b;
        it.resp = resp;
        it.arm_col = arm_col;
        it.ps_id = ps_id;
        it.wk = wk;
        it.size = 1;
        return push(std::move(it));
    }

    void set_coefs(int id, const Eigen::VectorXd& v) {
        ensure_phi();
        const auto& it = items_[static_cast<size_t>(id)];
        if (v.size() != it.size) throw ShapeError("stacked system: coefficient length mismatch");
        phi_.segment(it.offset, it.size) = v;
    }

    void set_scalar(const std::string& name, double v) {
        ensure_phi();
        phi_[offset_of(name)] = v;
    }

    Eigen::Index offset_of(const std::string& name) const {
        for (const auto& it : items_)
            if (it.name == name) return it.offset;
        throw ShapeError("stacked system: no block named '" + name + "'");
    }

    // row vector picking out a linear combination of scalar blocks
    Eigen::RowVectorXd selector(const std::vector<std::pair<std::string, double>>& combo) const {
        Eigen::RowVectorXd v = Eigen::RowVectorXd::Zero(p_);
        for (const auto& [name, c] : combo) v[offset_of(name)] += c;
        return v;
    }

    const Eigen::VectorXd& phi_hat() const { return phi_; }
    Eigen::Index p() const { return p_; }
    Eigen::Index n() const { return y_.size(); }

    std::vector<MomentBlock> blocks() const {
        std::vector<MomentBlock> out;
        for (const auto& it : items_) out.push_back({it.name, it.offset, it.size});
        return out;
    }

    Eigen::MatrixXd psi(const Eigen::VectorXd& phi) const {
        const Eigen::Index n = this->n();
        Eigen::MatrixXd out = Eigen::MatrixXd::Zero(n, p_);
        const auto fit = fitted(phi);
        for (const auto& it : items_) {
            switch (it.type) {
                case Item::ps: {
                    const auto& X = designs_[static_cast<size_t>(it.design)];
                    const auto& arm = column(it.arm_col);
                    const auto& g = fit[index_of(it)];
                    for (Eigen::Index i = 0; i < n; ++i)
                        out.row(i).segment(it.offset, it.size) = (arm[i] - g[i]) * X.row(i);
                    break;
                }
                case Item::reg: {
                    const auto& X = designs_[static_cast<size_t>(it.design)];
                    const auto& v = column(it.resp);
                    const auto& arm = column(it.arm_col);
                    const auto& m = fit[index_of(it)];
                    const Eigen::VectorXd* g =
                        (it.ps_id >= 0) ? &fit[static_cast<size_t>(it.ps_id)] : nullptr;
                    for (Eigen::Index i = 0; i < n; ++i) {
                        const double wt = moment_weight(it.wk, arm[i], g ? (*g)[i] : 0.5);
                        if (wt != 0.0)
                            out.row(i).segment(it.offset, it.size) = wt * (v[i] - m[i]) * X.row(i);
                    }
                    break;
                }
                case Item::tau:
                    tau_psi(it, phi, fit, out);
                    break;
            }
        }
        return out;
    }

    Eigen::MatrixXd jacobian(const Eigen::VectorXd& phi) const {
        const Eigen::Index n = this->n();
        const double ninv = 1.0 / static_cast<double>(n);
        Eigen::MatrixXd A = Eigen::MatrixXd::Zero(p_, p_);
        const auto fit = fitted(phi);
        for (const auto& it : items_) {
            switch (it.type) {
                case Item::ps: {
                    const auto& X = designs_[static_cast<size_t>(it.design)];
                    const auto& g = fit[index_of(it)];
                    Eigen::MatrixXd blk = Eigen::MatrixXd::Zero(it.size, it.size);
                    for (Eigen::Index i = 0; i < n; ++i)
                        blk.selfadjointView<Eigen::Lower>().rankUpdate(X.row(i).transpose(),
                                                                       g[i] * (1.0 - g[i]));
                    A.block(it.offset, it.offset, it.size, it.size) =
                        -ninv * Eigen::MatrixXd(blk.selfadjointView<Eigen::Lower>());
                    break;
                }
                case Item::reg: {
                    const auto& X = designs_[static_cast<size_t>(it.design)];
                    const auto& v = column(it.resp);
                    const auto& arm = column(it.arm_col);
                    const auto& me = fit[index_of(it)];
                    const Eigen::VectorXd eta = X * phi.segment(it.offset, it.size);
                    Eigen::MatrixXd own = Eigen::MatrixXd::Zero(it.size, it.size);
                    const bool has_ps = it.ps_id >= 0;
                    const Item* ps = has_ps ? &items_[static_cast<size_t>(it.ps_id)] : nullptr;
                    const Eigen::MatrixXd* Xg =
                        has_ps ? &designs_[static_cast<size_t>(ps->design)] : nullptr;
                    Eigen::MatrixXd cross;
                    if (has_ps) cross = Eigen::MatrixXd::Zero(it.size, ps->size);
                    for (Eigen::Index i = 0; i < n; ++i) {
                        const double gi = has_ps ? fit[static_cast<size_t>(it.ps_id)][i] : 0.5;
                        const double wt = moment_weight(it.wk, arm[i], gi);
                        if (wt != 0.0)
                            own.selfadjointView<Eigen::Lower>().rankUpdate(
                                X.row(i).transpose(), wt * it.fam.mean_deriv(eta[i], i));
                        if (has_ps) {
                            const double dw = moment_weight_deta(it.wk, arm[i], gi);
                            if (dw != 0.0)
                                cross += (dw * (v[i] - me[i])) *
                                         (X.row(i).transpose() * Xg->row(i));
                        }
                    }
                    A.block(it.offset, it.offset, it.size, it.size) =
                        -ninv * Eigen::MatrixXd(own.selfadjointView<Eigen::Lower>());
                    if (has_ps)
                        A.block(it.offset, ps->offset, it.size, ps->size) = ninv * cross;
                    break;
                }
                case Item::tau:
                    tau_jacobian(it, phi, fit, ninv, A);
                    break;
            }
        }
        return A;
    }

    MomentSystem materialize(std::optional<Eigen::VectorXd> cluster = std::nullopt) const {
        check_phi();
        MomentSystem m;
        m.psi = psi(phi_);
        m.A = jacobian(phi_);
        m.phi = phi_;
        m.blocks = blocks();
        m.cluster = std::move(cluster);
        return m;
    }

  private:
    struct Item {
        enum Type { ps, reg, tau } type = reg;
        std::string name;
        Eigen::Index offset = 0, size = 0;
        int design = -1;
        int resp = 0;
        int arm_col = 2;
        int ps_id = -1;
        int a_id = -1, b_id = -1;
        double const_a = 0.0, const_b = 0.0;
        LefFamily fam;
        WeightKind wk = WeightKind::ind1;
        TauKind kind = TauKind::contrast;
    };

    int push(Item it) {
        it.offset = p_;
        p_ += it.size;
        items_.push_back(std::move(it));
        return static_cast<int>(items_.size()) - 1;
    }

    void check_phi() const {
        if (phi_.size() != p_)
            throw ShapeError("stacked system: parameter vector incomplete; set coefficients "
                             "after adding all blocks");
    }

    // grow phi in place; offsets of existing blocks never move, so earlier
    // entries stay valid when another estimator's blocks are appended
    void ensure_phi() {
        if (phi_.size() == p_) return;
        Eigen::VectorXd np = Eigen::VectorXd::Zero(p_);
        np.head(phi_.size()) = phi_;
        phi_ = std::move(np);
    }

    size_t index_of(const Item& it) const {
        return static_cast<size_t>(&it - items_.data());
    }

    // fitted mean vector per ps/reg block; tau blocks get empty placeholders
    std::vector<Eigen::VectorXd> fitted(const Eigen::VectorXd& phi) const {
        if (phi.size() != p_) throw ShapeError("stacked system: phi length mismatch");
        std::vector<Eigen::VectorXd> out(items_.size());
        for (size_t j = 0; j < items_.size(); ++j) {
            const Item& it = items_[j];
            if (it.type == Item::ps)
                out[j] = predict_mean(phi.segment(it.offset, it.size),
                                      designs_[static_cast<size_t>(it.design)],
                                      LefFamily::bernoulli());
            else if (it.type == Item::reg)
                out[j] = predict_mean(phi.segment(it.offset, it.size),
                                      designs_[static_cast<size_t>(it.design)], it.fam);
        }
        return out;
    }

    Eigen::VectorXd block_mean(const std::vector<Eigen::VectorXd>& fit, int id,
                               double cval) const {
        if (id >= 0) return fit[static_cast<size_t>(id)];
        return Eigen::VectorXd::Constant(n(), cval);
    }

    void tau_psi(const Item& it, const Eigen::VectorXd& phi,
                 const std::vector<Eigen::VectorXd>& fit, Eigen::MatrixXd& out) const {
        const Eigen::Index n = this->n();
        const double tau = phi[it.offset];
        switch (it.kind) {
            case TauKind::contrast: {
                const auto ma = block_mean(fit, it.a_id, it.const_a);
                const auto mb = block_mean(fit, it.b_id, it.const_b);
                for (Eigen::Index i = 0; i < n; ++i) out(i, it.offset) = ma[i] - mb[i] - tau;
                break;
            }
            case TauKind::aipw_contrast: {
                const auto ma = block_mean(fit, it.a_id, it.const_a);
                const auto mb = block_mean(fit, it.b_id, it.const_b);
                const auto& v = column(it.resp);
                const auto& arm = column(it.arm_col);
                const auto& g = fit[static_cast<size_t>(it.ps_id)];
                for (Eigen::Index i = 0; i < n; ++i) {
                    const double c1 = (arm[i] == 1.0) ? (v[i] - ma[i]) / g[i] : 0.0;
                    const double c0 = (arm[i] == 0.0) ? (v[i] - mb[i]) / (1.0 - g[i]) : 0.0;
                    out(i, it.offset) = c1 + ma[i] - c0 - mb[i] - tau;
                }
                break;
            }
            case TauKind::sub_mean: {
                const auto mb = block_mean(fit, it.b_id, it.const_b);
                const auto& v = column(it.resp);
                const auto& arm = column(it.arm_col);
                for (Eigen::Index i = 0; i < n; ++i)
                    out(i, it.offset) = arm[i] * (v[i] - mb[i] - tau);
                break;
            }
            case TauKind::hajek_mean:
            case TauKind::ht_mean: {
                const auto& v = column(it.resp);
                const auto& arm = column(it.arm_col);
                const auto& g = fit[static_cast<size_t>(it.ps_id)];
                for (Eigen::Index i = 0; i < n; ++i) {
                    const double u = moment_weight(it.wk, arm[i], g[i]);
                    out(i, it.offset) = (it.kind == TauKind::hajek_mean) ? u * (v[i] - tau)
                                                                         : u * v[i] - tau;
                }
                break;
            }
            case TauKind::arm_mean: {
                const auto& v = column(it.resp);
                const auto& arm = column(it.arm_col);
                for (Eigen::Index i = 0; i < n; ++i) {
                    const double a = (it.wk == WeightKind::ind0) ? 1.0 - arm[i] : arm[i];
                    out(i, it.offset) = a * (v[i] - tau);
                }
                break;
            }
        }
    }

    // accumulate d(fitted mean of block id)/d(beta)' rows, scaled per row by
    // coef[i], into A at the given row
    void add_mean_deriv(const Eigen::VectorXd& phi, int id, Eigen::Index row,
                        const Eigen::VectorXd& coef, double ninv, Eigen::MatrixXd& A) const {
        if (id < 0) return;
        const Item& src = items_[static_cast<size_t>(id)];
        const auto& X = designs_[static_cast<size_t>(src.design)];
        const Eigen::VectorXd eta = X * phi.segment(src.offset, src.size);
        const LefFamily fam = (src.type == Item::ps) ? LefFamily::bernoulli() : src.fam;
        Eigen::RowVectorXd acc = Eigen::RowVectorXd::Zero(src.size);
        for (Eigen::Index i = 0; i < X.rows(); ++i)
            if (coef[i] != 0.0) acc += (coef[i] * fam.mean_deriv(eta[i], i)) * X.row(i);
        A.row(row).segment(src.offset, src.size) += ninv * acc;
    }

    void tau_jacobian(const Item& it, const Eigen::VectorXd& phi,
                      const std::vector<Eigen::VectorXd>& fit, double ninv,
                      Eigen::MatrixXd& A) const {
        const Eigen::Index n = this->n();
        const Eigen::Index r = it.offset;
        switch (it.kind) {
            case TauKind::contrast: {
                const Eigen::VectorXd ones = Eigen::VectorXd::Ones(n);
                add_mean_deriv(phi, it.a_id, r, ones, ninv, A);
                add_mean_deriv(phi, it.b_id, r, -ones, ninv, A);
                A(r, r) = -1.0;
                break;
            }
            case TauKind::aipw_contrast: {
                const auto ma = block_mean(fit, it.a_id, it.const_a);
                const auto mb = block_mean(fit, it.b_id, it.const_b);
                const auto& v = column(it.resp);
                const auto& arm = column(it.arm_col);
                const auto& g = fit[static_cast<size_t>(it.ps_id)];
                Eigen::VectorXd ca(n), cb(n), cg(n);
                for (Eigen::Index i = 0; i < n; ++i) {
                    ca[i] = 1.0 - (arm[i] == 1.0 ? 1.0 / g[i] : 0.0);
                    cb[i] = -(1.0 - (arm[i] == 0.0 ? 1.0 / (1.0 - g[i]) : 0.0));
                    const double t1 =
                        (arm[i] == 1.0) ? -(1.0 - g[i]) / g[i] * (v[i] - ma[i]) : 0.0;
                    const double t0 =
                        (arm[i] == 0.0) ? -g[i] / (1.0 - g[i]) * (v[i] - mb[i]) : 0.0;
                    cg[i] = t1 + t0;
                }
                add_mean_deriv(phi, it.a_id, r, ca, ninv, A);
                add_mean_deriv(phi, it.b_id, r, cb, ninv, A);
                const Item& ps = items_[static_cast<size_t>(it.ps_id)];
                const auto& Xg = designs_[static_cast<size_t>(ps.design)];
                Eigen::RowVectorXd acc = Eigen::RowVectorXd::Zero(ps.size);
                for (Eigen::Index i = 0; i < n; ++i)
                    if (cg[i] != 0.0) acc += cg[i] * Xg.row(i);
                A.row(r).segment(ps.offset, ps.size) += ninv * acc;
                A(r, r) = -1.0;
                break;
            }
            case TauKind::sub_mean: {
                const auto& arm = column(it.arm_col);
                add_mean_deriv(phi, it.b_id, r, -arm, ninv, A);
                A(r, r) = -arm.mean();
                break;
            }
            case TauKind::hajek_mean:
            case TauKind::ht_mean: {
                const auto& v = column(it.resp);
                const auto& arm = column(it.arm_col);
                const auto& g = fit[static_cast<size_t>(it.ps_id)];
                const double tau = phi[r];
                const Item& ps = items_[static_cast<size_t>(it.ps_id)];
                const auto& Xg = designs_[static_cast<size_t>(ps.design)];
                Eigen::RowVectorXd acc = Eigen::RowVectorXd::Zero(ps.size);
                double own = 0.0;
                for (Eigen::Index i = 0; i < n; ++i) {
                    const double u = moment_weight(it.wk, arm[i], g[i]);
                    const double du = moment_weight_deta(it.wk, arm[i], g[i]);
                    if (it.kind == TauKind::hajek_mean) {
                        own -= u;
                        if (du != 0.0) acc += du * (v[i] - tau) * Xg.row(i);
                    } else {
                        own -= 1.0;
                        if (du != 0.0) acc += du * v[i] * Xg.row(i);
                    }
                }
                A(r, r) = ninv * own;
                A.row(r).segment(ps.offset, ps.size) += ninv * acc;
                break;
            }
            case TauKind::arm_mean: {
                const auto& arm = column(it.arm_col);
                double own = 0.0;
                for (Eigen::Index i = 0; i < n; ++i)
                    own -= (it.wk == WeightKind::ind0) ? 1.0 - arm[i] : arm[i];
                A(r, r) = ninv * own;
                break;
            }
        }
    }

    Eigen::VectorXd y_, w_, z_;
    std::vector<Eigen::MatrixXd> designs_;
    std::vector<Item> items_;
    Eigen::Index p_ = 0;
    Eigen::VectorXd phi_;
};

// ---------------- sandwich and delta ----------------

struct VarianceResult {
    Eigen::MatrixXd avar;          // finite-sample covariance of phi-hat (already / n)
    Eigen::Index n_clusters = 0;   // 0 = unclustered
};

inline VarianceResult sandwich_variance(const MomentSystem& sys) {
    const Eigen::Index n = sys.n(), p = sys.p();
    if (n <= 1) throw DegenerateError("sandwich: need n > 1");
    Eigen::MatrixXd V = Eigen::MatrixXd::Zero(p, p);
    Eigen::Index n_clusters = 0;
    if (sys.cluster && sys.cluster->size() > 0) {
        if (sys.cluster->size() != n) throw ShapeError("sandwich: cluster id length mismatch");
        std::map<double, Eigen::RowVectorXd> sums;
        for (Eigen::Index i = 0; i < n; ++i) {
            auto [itr, fresh] =
                sums.try_emplace((*sys.cluster)[i], Eigen::RowVectorXd::Zero(p));
            itr->second += sys.psi.row(i);
        }
        for (const auto& [id, s] : sums)
            V.selfadjointView<Eigen::Lower>().rankUpdate(s.transpose(), 1.0);
        n_clusters = static_cast<Eigen::Index>(sums.size());
    } else {
        V.selfadjointView<Eigen::Lower>().rankUpdate(sys.psi.transpose(), 1.0);
    }
    V = Eigen::MatrixXd(V.selfadjointView<Eigen::Lower>()) / static_cast<double>(n);

    Eigen::PartialPivLU<Eigen::MatrixXd> lu(sys.A);
    if (std::fabs(lu.determinant()) < 1e-300)
        throw SingularError("sandwich: Jacobian A is singular");
    const Eigen::MatrixXd Ainv = lu.inverse();
    VarianceResult out;
    out.avar = (Ainv * V * Ainv.transpose()) / static_cast<double>(n);
    out.n_clusters = n_clusters;
    return out;
}

// SE of tau_y / tau_w given the 2x2 covariance of (tau_y, tau_w)
inline double ratio_delta_se(const Eigen::Matrix2d& omega, double tau_y, double tau_w,
                             double denom_tol = 1e-10) {
    if (std::fabs(tau_w) < denom_tol)
        throw WeakInstrumentError("ratio delta method: denominator " + std::to_string(tau_w) +
                                  " is numerically zero");
    const double r = tau_y / tau_w;
    const double v = (omega(0, 0) + r * r * omega(1, 1) - 2.0 * r * omega(0, 1)) /
                     (tau_w * tau_w);
    return std::sqrt(std::max(v, 0.0));
}

// generic delta method: SE of g(phi-hat) with gradient grad
inline double delta_se(const Eigen::MatrixXd& avar, const Eigen::VectorXd& grad) {
    if (grad.size() != avar.rows()) throw ShapeError("delta: gradient length mismatch");
    return std::sqrt(std::max(0.0, double(grad.transpose() * avar * grad)));
}

// ---------------- per-estimator stack builders ----------------

// What a builder leaves behind: how to read (tau_y, tau_w) off the parameter
// vector.  grad_* name scalar blocks with +/-1 weights; for level estimands
// (ATT, ATE) grad_w is empty and the point is tau_y alone.
struct StackInfo {
    std::vector<std::pair<std::string, double>> grad_y, grad_w;
    double tau_y = 0.0, tau_w = 1.0;
    bool ratio = true;
};

// DR or RA LATE.  Storage order: outcome models, treatment models, propensity
// (DR only), then the two fitted-difference averages.
inline StackInfo append_late_stack(StackedSystem& s, const std::string& pre,
                                   const LateNuisances& nu, const EstimateResult& est) {
    const int dy = s.add_design(nu.Xy);
    const int dw = s.add_design(nu.Xw);
    const bool dr = nu.weighting == LateWeighting::inverse_ps;
    const WeightKind k1 = dr ? WeightKind::inv1 : WeightKind::ind1;
    const WeightKind k0 = dr ? WeightKind::inv0 : WeightKind::ind0;
    const int m1 = s.add_reg(pre + "m1", dy, 0, nu.fam_y, k1, 2);
    const int m0 = s.add_reg(pre + "m0", dy, 0, nu.fam_y, k0, 2);
    const int r1 = nu.known_pi1_one
                       ? -1
                       : s.add_reg(pre + "r1", dw, 1, LefFamily::bernoulli(), k1, 2);
    const int r0 = nu.known_pi0_zero
                       ? -1
                       : s.add_reg(pre + "r0", dw, 1, LefFamily::bernoulli(), k0, 2);
    int gid = -1;
    if (dr) {
        gid = s.add_ps(pre + "gamma", s.add_design(nu.ps.design), 2);
        s.link_ps({m1, m0, r1, r0}, gid);
    }
    s.add_tau(pre + "tau_y", TauKind::contrast, m1, m0, 0.0, 0.0, 0, 2, -1);
    s.add_tau(pre + "tau_w", TauKind::contrast, r1, r0, 1.0, 0.0, 1, 2, -1);

    s.set_coefs(m1, nu.m1.coef);
    s.set_coefs(m0, nu.m0.coef);
    if (r1 >= 0) s.set_coefs(r1, nu.r1.coef);
    if (r0 >= 0) s.set_coefs(r0, nu.r0.coef);
    if (gid >= 0) s.set_coefs(gid, nu.ps.fit.coef);
    StackInfo info;
    info.tau_y = est.theta1 - est.theta0;
    info.tau_w = est.pi1 - est.pi0;
    s.set_scalar(pre + "tau_y", info.tau_y);
    s.set_scalar(pre + "tau_w", info.tau_w);
    info.grad_y = {{pre + "tau_y", 1.0}};
    info.grad_w = {{pre + "tau_w", 1.0}};
    return info;
}

// AIPW LATE: unweighted per-arm regressions, a propensity block, and tau rows
// carrying the inverse-propensity residual corrections.
inline StackInfo append_aipw_stack(StackedSystem& s, const std::string& pre,
                                   const LateNuisances& nu, const EstimateResult& est) {
    if (nu.weighting != LateWeighting::unweighted)
        throw ShapeError("aipw stack: nuisances must be the unweighted per-arm fits");
    const int dy = s.add_design(nu.Xy);
    const int dw = s.add_design(nu.Xw);
    const int m1 = s.add_reg(pre + "m1", dy, 0, nu.fam_y, WeightKind::ind1, 2);
    const int m0 = s.add_reg(pre + "m0", dy, 0, nu.fam_y, WeightKind::ind0, 2);
    const int r1 = nu.known_pi1_one
                       ? -1
                       : s.add_reg(pre + "r1", dw, 1, LefFamily::bernoulli(), WeightKind::ind1, 2);
    const int r0 = nu.known_pi0_zero
                       ? -1
                       : s.add_reg(pre + "r0", dw, 1, LefFamily::bernoulli(), WeightKind::ind0, 2);
    const int gid = s.add_ps(pre + "gamma", s.add_design(nu.ps.design), 2);
    s.add_tau(pre + "tau_y", TauKind::aipw_contrast, m1, m0, 0.0, 0.0, 0, 2, gid);
    s.add_tau(pre + "tau_w", TauKind::aipw_contrast, r1, r0, 1.0, 0.0, 1, 2, gid);

    s.set_coefs(m1, nu.m1.coef);
    s.set_coefs(m0, nu.m0.coef);
    if (r1 >= 0) s.set_coefs(r1, nu.r1.coef);
    if (r0 >= 0) s.set_coefs(r0, nu.r0.coef);
    s.set_coefs(gid, nu.ps.fit.coef);
    StackInfo info;
    info.tau_y = est.theta1 - est.theta0;
    info.tau_w = est.pi1 - est.pi0;
    s.set_scalar(pre + "tau_y", info.tau_y);
    s.set_scalar(pre + "tau_w", info.tau_w);
    info.grad_y = {{pre + "tau_y", 1.0}};
    info.grad_w = {{pre + "tau_w", 1.0}};
    return info;
}

// IPW LATE: propensity block plus four weighted arm means of Y and W.
// normalized=true solves sum u (v - theta) = 0 (Hajek); false uses the raw
// 1/N sums (Horvitz-Thompson).
inline StackInfo append_ipw_stack(StackedSystem& s, const std::string& pre,
                                  const PropensityFit& ps, const EstimateResult& est,
                                  bool normalized) {
    const int gid = s.add_ps(pre + "gamma", s.add_design(ps.design), 2);
    const TauKind k = normalized ? TauKind::hajek_mean : TauKind::ht_mean;
    s.add_tau(pre + "th1y", k, -1, -1, 0.0, 0.0, 0, 2, gid, WeightKind::inv1);
    s.add_tau(pre + "th0y", k, -1, -1, 0.0, 0.0, 0, 2, gid, WeightKind::inv0);
    s.add_tau(pre + "th1w", k, -1, -1, 0.0, 0.0, 1, 2, gid, WeightKind::inv1);
    s.add_tau(pre + "th0w", k, -1, -1, 0.0, 0.0, 1, 2, gid, WeightKind::inv0);

    s.set_coefs(gid, ps.fit.coef);
    s.set_scalar(pre + "th1y", est.theta1);
    s.set_scalar(pre + "th0y", est.theta0);
    s.set_scalar(pre + "th1w", est.pi1);
    s.set_scalar(pre + "th0w", est.pi0);
    StackInfo info;
    info.tau_y = est.theta1 - est.theta0;
    info.tau_w = est.pi1 - est.pi0;
    info.grad_y = {{pre + "th1y", 1.0}, {pre + "th0y", -1.0}};
    info.grad_w = {{pre + "th1w", 1.0}, {pre + "th0w", -1.0}};
    return info;
}

// Wald: four raw arm means, no nuisance models.
inline StackInfo append_wald_stack(StackedSystem& s, const std::string& pre,
                                   const EstimateResult& est) {
    s.add_tau(pre + "th1y", TauKind::arm_mean, -1, -1, 0.0, 0.0, 0, 2, -1, WeightKind::ind1);
    s.add_tau(pre + "th0y", TauKind::arm_mean, -1, -1, 0.0, 0.0, 0, 2, -1, WeightKind::ind0);
    s.add_tau(pre + "th1w", TauKind::arm_mean, -1, -1, 0.0, 0.0, 1, 2, -1, WeightKind::ind1);
    s.add_tau(pre + "th0w", TauKind::arm_mean, -1, -1, 0.0, 0.0, 1, 2, -1, WeightKind::ind0);

    s.set_scalar(pre + "th1y", est.theta1);
    s.set_scalar(pre + "th0y", est.theta0);
    s.set_scalar(pre + "th1w", est.pi1);
    s.set_scalar(pre + "th0w", est.pi0);
    StackInfo info;
    info.tau_y = est.theta1 - est.theta0;
    info.tau_w = est.pi1 - est.pi0;
    info.grad_y = {{pre + "th1y", 1.0}, {pre + "th0y", -1.0}};
    info.grad_w = {{pre + "th1w", 1.0}, {pre + "th0w", -1.0}};
    return info;
}

// DR LATT: odds-weighted control-arm models, propensity block, then
// offered-arm averages of the residualized Y and W.
inline StackInfo append_latt_stack(StackedSystem& s, const std::string& pre,
                                   const LattNuisances& nu, const EstimateResult& est) {
    const int dy = s.add_design(nu.Xy);
    const int m0 = s.add_reg(pre + "m0", dy, 0, nu.fam_y, WeightKind::odds0, 2);
    int r0 = -1;
    if (!nu.known_pi0_zero) {
        const int dw = s.add_design(nu.Xw);
        r0 = s.add_reg(pre + "r0", dw, 1, LefFamily::bernoulli(), WeightKind::odds0, 2);
    }
    const int gid = s.add_ps(pre + "gamma", s.add_design(nu.ps.design), 2);
    s.link_ps({m0, r0}, gid);
    s.add_tau(pre + "nu_y", TauKind::sub_mean, -1, m0, 0.0, 0.0, 0, 2, -1);
    s.add_tau(pre + "nu_w", TauKind::sub_mean, -1, r0, 0.0, 0.0, 1, 2, -1);

    s.set_coefs(m0, nu.m0.coef);
    if (r0 >= 0) s.set_coefs(r0, nu.r0.coef);
    s.set_coefs(gid, nu.ps.fit.coef);
    StackInfo info;
    info.tau_y = est.theta1 - est.theta0;
    info.tau_w = est.pi1 - est.pi0;
    s.set_scalar(pre + "nu_y", info.tau_y);
    s.set_scalar(pre + "nu_w", info.tau_w);
    info.grad_y = {{pre + "nu_y", 1.0}};
    info.grad_w = {{pre + "nu_w", 1.0}};
    return info;
}

// DR ATT under unconfoundedness: level estimand, single tau row.
inline StackInfo append_att_stack(StackedSystem& s, const std::string& pre,
                                  const AttNuisances& nu, const EstimateResult& est) {
    const int dy = s.add_design(nu.Xy);
    const int m0 = s.add_reg(pre + "m0", dy, 0, nu.fam_y, WeightKind::odds0, 1);
    const int gid = s.add_ps(pre + "f", s.add_design(nu.ps.design), 1);
    s.link_ps({m0}, gid);
    s.add_tau(pre + "tau", TauKind::sub_mean, -1, m0, 0.0, 0.0, 0, 1, -1);

    s.set_coefs(m0, nu.m0.coef);
    s.set_coefs(gid, nu.ps.fit.coef);
    StackInfo info;
    info.tau_y = est.point;
    info.ratio = false;
    s.set_scalar(pre + "tau", info.tau_y);
    info.grad_y = {{pre + "tau", 1.0}};
    return info;
}

// IPWRA ATE under unconfoundedness: both arms inverse-propensity weighted.
inline StackInfo append_ate_stack(StackedSystem& s, const std::string& pre,
                                  const AttNuisances& nu, const EstimateResult& est) {
    if (!nu.with_m1) throw ShapeError("ate stack: nuisances missing the treated-arm model");
    const int dy = s.add_design(nu.Xy);
    const int m1 = s.add_reg(pre + "m1", dy, 0, nu.fam_y, WeightKind::inv1, 1);
    const int m0 = s.add_reg(pre + "m0", dy, 0, nu.fam_y, WeightKind::inv0, 1);
    const int gid = s.add_ps(pre + "f", s.add_design(nu.ps.design), 1);
    s.link_ps({m1, m0}, gid);
    s.add_tau(pre + "tau", TauKind::contrast, m1, m0, 0.0, 0.0, 0, 1, -1);

    s.set_coefs(m1, nu.m1.coef);
    s.set_coefs(m0, nu.m0.coef);
    s.set_coefs(gid, nu.ps.fit.coef);
    StackInfo info;
    info.tau_y = est.point;
    info.ratio = false;
    s.set_scalar(pre + "tau", info.tau_y);
    info.grad_y = {{pre + "tau", 1.0}};
    return info;
}

// ---------------- SE extraction from a finished stack ----------------

inline Eigen::Matrix2d tau_covariance(const StackedSystem& s, const StackInfo& info,
                                      const Eigen::MatrixXd& avar) {
    const Eigen::RowVectorXd jy = s.selector(info.grad_y);
    const Eigen::RowVectorXd jw = s.selector(info.grad_w);
    Eigen::Matrix2d omega;
    omega(0, 0) = jy * avar * jy.transpose();
    omega(1, 1) = jw * avar * jw.transpose();
    omega(0, 1) = omega(1, 0) = jy * avar * jw.transpose();
    return omega;
}

// SE of the point estimate: ratio delta over (tau_y, tau_w) for ratio
// estimands, a plain linear-combination SE otherwise
inline double stack_se(const StackedSystem& s, const StackInfo& info,
                       std::optional<Eigen::VectorXd> cluster = std::nullopt,
                       double denom_tol = 1e-10) {
    const MomentSystem sys = s.materialize(std::move(cluster));
    const VarianceResult var = sandwich_variance(sys);
    if (!info.ratio)
        return delta_se(var.avar, s.selector(info.grad_y).transpose());
    return ratio_delta_se(tau_covariance(s, info, var.avar), info.tau_y, info.tau_w, denom_tol);
}

// gradient of the scalar point (tau_y/tau_w or tau_y) with respect to phi;
// used when differencing two estimators inside one joint stack
inline Eigen::RowVectorXd point_gradient(const StackedSystem& s, const StackInfo& info) {
    const Eigen::RowVectorXd jy = s.selector(info.grad_y);
    if (!info.ratio) return jy;
    const Eigen::RowVectorXd jw = s.selector(info.grad_w);
    return jy / info.tau_w - (info.tau_y / (info.tau_w * info.tau_w)) * jw;
}

} // namespace ipwra
