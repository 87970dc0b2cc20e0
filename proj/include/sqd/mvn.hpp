#ifndef SQD_MVN_HPP
#define SQD_MVN_HPP

#include <string>
#include <vector>

#include <Eigen/Cholesky>

#include "sqd/common.hpp"
#include "sqd/pattern.hpp"

namespace sqd {

struct MvnParams {
    VectorXd mu;
    MatrixXd sigma;

    MvnParams(VectorXd m, MatrixXd s) : mu(std::move(m)), sigma(std::move(s)) {
        require(sigma.rows() == sigma.cols(), "sigma must be square");
        require(mu.size() == sigma.rows(), "mu and sigma dimensions differ");
        require((sigma - sigma.transpose()).cwiseAbs().maxCoeff() <= 1e-10,
                "sigma must be symmetric");
        Eigen::LLT<MatrixXd> llt(sigma);
        require(llt.info() == Eigen::Success, "sigma must be positive definite");
    }

    int K() const { return static_cast<int>(mu.size()); }
};

// Per-pattern information for mu, embedded in K x K: the inverse of the
// pattern-restricted covariance, zero elsewhere.
struct PatternInfo {
    Pattern pattern;
    MatrixXd M;
};

inline MatrixXd restricted_inverse(const MatrixXd& sigma,
                                   const Pattern& pattern) {
    int s = pattern.size();
    MatrixXd sub(s, s);
    for (int a = 0; a < s; ++a)
        for (int b = 0; b < s; ++b)
            sub(a, b) = sigma(pattern.items[a], pattern.items[b]);
    Eigen::LLT<MatrixXd> llt(sub);
    if (llt.info() != Eigen::Success) {
        std::string msg = "pattern-restricted sigma is singular for pattern {";
        for (int k : pattern.items) msg += std::to_string(k) + ",";
        msg.back() = '}';
        throw std::runtime_error(msg);
    }
    return llt.solve(MatrixXd::Identity(s, s));
}

inline PatternInfo pattern_info(const MvnParams& params,
                                const Pattern& pattern) {
    int K = params.K();
    require(pattern.items.back() < K, "pattern index out of range");
    MatrixXd inv = restricted_inverse(params.sigma, pattern);
    MatrixXd M = MatrixXd::Zero(K, K);
    int s = pattern.size();
    for (int a = 0; a < s; ++a)
        for (int b = 0; b < s; ++b)
            M(pattern.items[a], pattern.items[b]) = inv(a, b);
    return PatternInfo{pattern, std::move(M)};
}

// Precomputed per-pattern restricted inverses; the design probabilities are
// the only thing that changes between criterion evaluations.
class MvnCriterion {
  public:
    MvnCriterion(MvnParams params, PatternSet ps)
        : params_(std::move(params)), ps_(std::move(ps)) {
        require(params_.K() == ps_.K, "parameter and pattern dimensions differ");
        blocks_.reserve(ps_.count());
        for (const Pattern& p : ps_.patterns)
            blocks_.push_back(restricted_inverse(params_.sigma, p));
    }

    const MvnParams& params() const { return params_; }
    const PatternSet& pattern_set() const { return ps_; }

    MatrixXd mu_fisher(const VectorXd& probs) const {
        int K = params_.K();
        MatrixXd M = MatrixXd::Zero(K, K);
        for (int j = 0; j < ps_.count(); ++j) {
            double w = probs(j);
            if (w == 0.0) continue;
            const Pattern& p = ps_.patterns[j];
            const MatrixXd& B = blocks_[j];
            for (int a = 0; a < p.size(); ++a)
                for (int b = 0; b < p.size(); ++b)
                    M(p.items[a], p.items[b]) += w * B(a, b);
        }
        return M;
    }

    // tr(mu_fisher^{-1}); throws if some item is effectively uncovered.
    double value(const VectorXd& probs) const {
        return inverse_fisher(probs).trace();
    }

    // dA/dp_j = -tr(M^{-1} M_j M^{-1}); M_j has support only on pattern j.
    VectorXd gradient(const VectorXd& probs) const {
        MatrixXd W = inverse_fisher(probs);
        MatrixXd W2 = W * W;
        VectorXd g(ps_.count());
        for (int j = 0; j < ps_.count(); ++j) {
            const Pattern& p = ps_.patterns[j];
            const MatrixXd& B = blocks_[j];
            double s = 0.0;
            for (int a = 0; a < p.size(); ++a)
                for (int b = 0; b < p.size(); ++b)
                    s += B(a, b) * W2(p.items[b], p.items[a]);
            g(j) = -s;
        }
        return g;
    }

  private:
    MatrixXd inverse_fisher(const VectorXd& probs) const {
        MatrixXd M = mu_fisher(probs);
        Eigen::LDLT<MatrixXd> ldlt(M);
        // rcond proxy: ratio of extreme absolute diagonal pivots.
        double dmin = ldlt.vectorD().cwiseAbs().minCoeff();
        double dmax = ldlt.vectorD().cwiseAbs().maxCoeff();
        if (ldlt.info() != Eigen::Success || dmin <= 0.0 ||
            dmin / dmax < 1e-12) {
            VectorXd incl = VectorXd::Zero(params_.K());
            for (int j = 0; j < ps_.count(); ++j)
                for (int k : ps_.patterns[j].items) incl(k) += probs(j);
            int worst;
            incl.minCoeff(&worst);
            throw std::runtime_error("criterion undefined: item " +
                                     std::to_string(worst) + " uncovered");
        }
        return ldlt.solve(MatrixXd::Identity(params_.K(), params_.K()));
    }

    MvnParams params_;
    PatternSet ps_;
    std::vector<MatrixXd> blocks_;
};

inline MatrixXd mu_fisher(const MvnParams& params,
                          const DesignDistribution& d) {
    return MvnCriterion(params, d.pattern_set).mu_fisher(d.probs);
}

inline double a_criterion_mvn(const MvnParams& params,
                              const DesignDistribution& d) {
    return MvnCriterion(params, d.pattern_set).value(d.probs);
}

inline VectorXd a_gradient_mvn(const MvnParams& params,
                               const DesignDistribution& d) {
    return MvnCriterion(params, d.pattern_set).gradient(d.probs);
}

// 0/1 matrix with D_K vech(S) = vec(S) for symmetric S.
inline MatrixXd duplication_matrix(int K) {
    require(K >= 1, "K must be positive");
    MatrixXd D = MatrixXd::Zero(K * K, vech_size(K));
    for (int j = 0; j < K; ++j)
        for (int i = 0; i < K; ++i) D(i + K * j, vech_index(K, i, j)) = 1.0;
    return D;
}

// Sigma-block of the per-pattern normal information in vech coordinates:
// 0.5 D_K^T (M (x) M) D_K, assembled entrywise. Expanding the duplication
// matrix gives (M_ik M_jl + M_il M_jk) / 2^{[i=j] + [k=l]} for i >= j, k >= l.
inline MatrixXd sigma_block_vech(const MatrixXd& M) {
    int K = static_cast<int>(M.rows());
    int V = vech_size(K);
    MatrixXd B(V, V);
    for (int j = 0; j < K; ++j)
        for (int i = j; i < K; ++i) {
            int r = vech_index(K, i, j);
            for (int l = 0; l < K; ++l)
                for (int k = l; k < K; ++k) {
                    int c = vech_index(K, k, l);
                    if (c < r) continue;
                    double scale = 1.0;
                    if (i == j) scale *= 0.5;
                    if (k == l) scale *= 0.5;
                    double v = scale * (M(i, k) * M(j, l) + M(i, l) * M(j, k));
                    B(r, c) = v;
                    B(c, r) = v;
                }
        }
    return B;
}

// Full Fisher information for (mu, vech Sigma): block-diagonal.
inline MatrixXd full_fisher_mvn(const MvnParams& params,
                                const DesignDistribution& d) {
    int K = params.K();
    int V = vech_size(K);
    MvnCriterion crit(params, d.pattern_set);
    MatrixXd I = MatrixXd::Zero(K + V, K + V);
    I.topLeftCorner(K, K) = crit.mu_fisher(d.probs);
    MatrixXd Bs = MatrixXd::Zero(V, V);
    for (int j = 0; j < d.pattern_set.count(); ++j) {
        double w = d.probs(j);
        if (w == 0.0) continue;
        MatrixXd M = pattern_info(params, d.pattern_set.patterns[j]).M;
        Bs += w * sigma_block_vech(M);
    }
    I.bottomRightCorner(V, V) = Bs;
    return I;
}

}  // namespace sqd

#endif  // SQD_MVN_HPP
