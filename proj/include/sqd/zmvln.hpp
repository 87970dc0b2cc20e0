#ifndef SQD_ZMVLN_HPP
#define SQD_ZMVLN_HPP

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <tuple>
#include <vector>

#include "sqd/common.hpp"
#include "sqd/mvn.hpp"
#include "sqd/pattern.hpp"

namespace sqd {

struct ZmvlnParams {
    VectorXd lambda;  // per-item nonzero-response probabilities
    VectorXd mu;      // log-scale means
    MatrixXd sigma;   // log-scale covariance

    ZmvlnParams(VectorXd l, VectorXd m, MatrixXd s)
        : lambda(std::move(l)), mu(std::move(m)), sigma(std::move(s)) {
        require(lambda.size() == mu.size() && mu.size() == sigma.rows(),
                "lambda, mu, sigma dimensions differ");
        require(lambda.minCoeff() > 0.0 && lambda.maxCoeff() < 1.0,
                "lambda entries must lie in (0,1)");
        MvnParams check(mu, sigma);  // symmetry + PD
    }

    int K() const { return static_cast<int>(mu.size()); }
};

struct EtaVector {
    VectorXd eta;
};

// eta_k = lambda_k exp(mu_k + Sigma_kk / 2) and its Jacobian over
// (lambda, mu, vech Sigma).
inline std::pair<EtaVector, MatrixXd> eta_and_jacobian(
    const ZmvlnParams& params) {
    int K = params.K();
    int V = vech_size(K);
    VectorXd e(K);
    MatrixXd C = MatrixXd::Zero(K, 2 * K + V);
    for (int k = 0; k < K; ++k) {
        double ln_mean = std::exp(params.mu(k) + 0.5 * params.sigma(k, k));
        e(k) = params.lambda(k) * ln_mean;
        C(k, k) = ln_mean;                               // d eta / d lambda_k
        C(k, K + k) = e(k);                              // d eta / d mu_k
        C(k, 2 * K + vech_index(K, k, k)) = 0.5 * e(k);  // d eta / d Sigma_kk
    }
    return {EtaVector{std::move(e)}, std::move(C)};
}

// Log density of the observed sub-vector under a pattern: Bernoulli terms for
// every observed item plus the marginal MVLN density of the nonzero entries.
inline double zmvln_log_density(const ZmvlnParams& params,
                                const VectorXd& y_obs, const Pattern& pattern) {
    require(y_obs.size() == pattern.size(),
            "observed vector length must equal pattern size");
    double ll = 0.0;
    std::vector<int> nz_items;
    std::vector<double> nz_vals;
    for (int a = 0; a < pattern.size(); ++a) {
        int k = pattern.items[a];
        double y = y_obs(a);
        require(y >= 0.0, "responses must be nonnegative");
        if (y != 0.0) {
            ll += std::log(params.lambda(k));
            nz_items.push_back(k);
            nz_vals.push_back(y);
        } else {
            ll += std::log1p(-params.lambda(k));
        }
    }
    int s = static_cast<int>(nz_items.size());
    if (s == 0) return ll;  // MVLN factor is 1
    VectorXd z(s);
    MatrixXd sub(s, s);
    for (int a = 0; a < s; ++a) {
        z(a) = std::log(nz_vals[a]) - params.mu(nz_items[a]);
        ll -= std::log(nz_vals[a]);  // Jacobian of the log transform
        for (int b = 0; b < s; ++b)
            sub(a, b) = params.sigma(nz_items[a], nz_items[b]);
    }
    Eigen::LLT<MatrixXd> llt(sub);
    require(llt.info() == Eigen::Success, "restricted sigma not PD");
    double logdet = 0.0;
    for (int a = 0; a < s; ++a) logdet += 2.0 * std::log(llt.matrixL()(a, a));
    VectorXd w = llt.solve(z);
    ll += -0.5 * (s * std::log(2.0 * M_PI) + logdet + z.dot(w));
    return ll;
}

// Y = exp(MVN draw) .* Bernoulli(lambda), elementwise.
inline MatrixXd zmvln_sample(const ZmvlnParams& params, int n,
                             std::uint64_t seed) {
    require(n >= 1, "n must be positive");
    int K = params.K();
    Eigen::LLT<MatrixXd> llt(params.sigma);
    MatrixXd L = llt.matrixL();
    auto rng = make_rng(seed, 0);
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    MatrixXd Y(n, K);
    VectorXd z(K);
    for (int i = 0; i < n; ++i) {
        for (int k = 0; k < K; ++k) z(k) = gauss(rng);
        VectorXd x = params.mu + L * z;
        for (int k = 0; k < K; ++k)
            Y(i, k) = unif(rng) < params.lambda(k) ? std::exp(x(k)) : 0.0;
    }
    return Y;
}

// Design Fisher information and the delta-method A-criterion for eta.
//
// B2 sums, for each pattern, over every nonempty subset E of observed items
// that could be the nonzero set, weighted by its Bernoulli probability
// w(E|A) = prod_{k in E} lambda_k * prod_{k in A\E} (1 - lambda_k); each
// subset contributes the MVN information blocks restricted to E.
class ZmvlnCriterion {
  public:
    ZmvlnCriterion(ZmvlnParams params, PatternSet ps)
        : params_(std::move(params)), ps_(std::move(ps)) {
        require(params_.K() == ps_.K, "parameter and pattern dimensions differ");
        int K = params_.K();
        lam_ = params_.lambda;
        for (int k = 0; k < K; ++k) {
            if (lam_(k) < 1e-9 || lam_(k) > 1.0 - 1e-9) {
                lam_(k) = std::clamp(lam_(k), 1e-9, 1.0 - 1e-9);
                lambda_clamped_ = true;
            }
        }
        auto [eta, C] = eta_and_jacobian(params_);
        C_ = std::move(C);
        build_subsets();
    }

    const ZmvlnParams& params() const { return params_; }
    const PatternSet& pattern_set() const { return ps_; }
    bool lambda_clamped() const { return lambda_clamped_; }
    int dim() const { return 2 * params_.K() + vech_size(params_.K()); }

    MatrixXd fisher(const VectorXd& probs) const {
        int K = params_.K();
        MatrixXd I = MatrixXd::Zero(dim(), dim());
        VectorXd xi = VectorXd::Zero(K);
        for (int j = 0; j < ps_.count(); ++j)
            for (int k : ps_.patterns[j].items) xi(k) += probs(j);
        for (int k = 0; k < K; ++k)
            I(k, k) = xi(k) / (lam_(k) * (1.0 - lam_(k)));
        VectorXd wsub = VectorXd::Zero(static_cast<int>(blocks_.size()));
        for (int j = 0; j < ps_.count(); ++j)
            for (const auto& [si, bw] : pat_subsets_[j])
                wsub(si) += probs(j) * bw;
        for (std::size_t s = 0; s < blocks_.size(); ++s) {
            double w = wsub(static_cast<int>(s));
            if (w == 0.0) continue;
            for (const auto& [r, c, v] : blocks_[s]) I(r, c) += w * v;
        }
        return I;
    }

    double value(const VectorXd& probs) const {
        MatrixXd Iinv = inverse_fisher(probs);
        return (C_ * Iinv * C_.transpose()).trace();
    }

    // dA/dp_j = -tr(C I^{-1} (dI/dp_j) I^{-1} C^T).
    VectorXd gradient(const VectorXd& probs) const {
        int K = params_.K();
        MatrixXd Iinv = inverse_fisher(probs);
        MatrixXd G = Iinv * C_.transpose() * C_ * Iinv;
        VectorXd g(ps_.count());
        for (int j = 0; j < ps_.count(); ++j) {
            double s = 0.0;
            for (int k : ps_.patterns[j].items)
                s += G(k, k) / (lam_(k) * (1.0 - lam_(k)));
            for (const auto& [si, bw] : pat_subsets_[j])
                for (const auto& [r, c, v] : blocks_[si])
                    s += bw * v * G(c, r);
            g(j) = -s;
        }
        return g;
    }

  private:
    using Triplet = std::tuple<int, int, double>;

    void build_subsets() {
        int K = params_.K();
        pat_subsets_.resize(ps_.count());
        std::map<std::vector<int>, int> index;
        for (int j = 0; j < ps_.count(); ++j) {
            const auto& items = ps_.patterns[j].items;
            int m = static_cast<int>(items.size());
            for (unsigned mask = 1; mask < (1u << m); ++mask) {
                std::vector<int> E;
                double w = 1.0;
                for (int a = 0; a < m; ++a) {
                    if (mask & (1u << a)) {
                        E.push_back(items[a]);
                        w *= lam_(items[a]);
                    } else {
                        w *= 1.0 - lam_(items[a]);
                    }
                }
                auto it = index.find(E);
                if (it == index.end()) {
                    it = index.emplace(E, static_cast<int>(blocks_.size())).first;
                    blocks_.push_back(subset_triplets(E, K));
                }
                pat_subsets_[j].emplace_back(it->second, w);
            }
        }
    }

    // Sparse entries of the (mu, vech Sigma) information blocks for the
    // nonzero subset E, offset into the full parameter layout.
    std::vector<Triplet> subset_triplets(const std::vector<int>& E,
                                         int K) const {
        Pattern p(E);
        MatrixXd inv = restricted_inverse(params_.sigma, p);
        int s = p.size();
        std::vector<Triplet> t;
        for (int a = 0; a < s; ++a)
            for (int b = 0; b < s; ++b)
                if (inv(a, b) != 0.0)
                    t.emplace_back(K + E[a], K + E[b], inv(a, b));
        // Sigma block of 0.5 D^T (M (x) M) D over vech pairs within E:
        // (M_ik M_jl + M_il M_jk) / 2^{[i=j] + [k=l]}.
        MatrixXd M = MatrixXd::Zero(K, K);
        for (int a = 0; a < s; ++a)
            for (int b = 0; b < s; ++b) M(E[a], E[b]) = inv(a, b);
        std::vector<std::pair<int, int>> vpos;
        for (int b = 0; b < s; ++b)
            for (int a = b; a < s; ++a) vpos.emplace_back(E[a], E[b]);
        for (auto [i, jj] : vpos)
            for (auto [k, l] : vpos) {
                double scale = 1.0;
                if (i == jj) scale *= 0.5;
                if (k == l) scale *= 0.5;
                double v = scale * (M(i, k) * M(jj, l) + M(i, l) * M(jj, k));
                if (v != 0.0)
                    t.emplace_back(2 * K + vech_index(K, i, jj),
                                   2 * K + vech_index(K, k, l), v);
            }
        return t;
    }

    MatrixXd inverse_fisher(const VectorXd& probs) const {
        MatrixXd I = fisher(probs);
        Eigen::LDLT<MatrixXd> ldlt(I);
        double dmin = ldlt.vectorD().cwiseAbs().minCoeff();
        double dmax = ldlt.vectorD().cwiseAbs().maxCoeff();
        if (ldlt.info() != Eigen::Success || dmin <= 0.0 ||
            dmin / dmax < 1e-14) {
            VectorXd incl = VectorXd::Zero(params_.K());
            for (int j = 0; j < ps_.count(); ++j)
                for (int k : ps_.patterns[j].items) incl(k) += probs(j);
            int worst;
            incl.minCoeff(&worst);
            throw std::runtime_error("criterion undefined: item " +
                                     std::to_string(worst) + " uncovered");
        }
        return ldlt.solve(MatrixXd::Identity(dim(), dim()));
    }

    ZmvlnParams params_;
    PatternSet ps_;
    VectorXd lam_;  // clamped copy used in B1 and subset weights
    MatrixXd C_;
    bool lambda_clamped_ = false;
    std::vector<std::vector<Triplet>> blocks_;
    std::vector<std::vector<std::pair<int, double>>> pat_subsets_;
};

inline MatrixXd zmvln_fisher(const ZmvlnParams& params,
                             const DesignDistribution& d) {
    return ZmvlnCriterion(params, d.pattern_set).fisher(d.probs);
}

inline double a_criterion_zmvln(const ZmvlnParams& params,
                                const DesignDistribution& d) {
    return ZmvlnCriterion(params, d.pattern_set).value(d.probs);
}

}  // namespace sqd

#endif  // SQD_ZMVLN_HPP
