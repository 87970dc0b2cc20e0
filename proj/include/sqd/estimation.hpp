#ifndef SQD_ESTIMATION_HPP
#define SQD_ESTIMATION_HPP

#include <cmath>
#include <limits>
#include <map>
#include <random>
#include <vector>

#include "sqd/common.hpp"
#include "sqd/mvn.hpp"

namespace sqd {

// n x K responses with a missing-by-design mask. `values` is defined
// wherever `observed` is true.
struct ObservedDataset {
    MatrixXd values;
    Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> observed;

    int n() const { return static_cast<int>(values.rows()); }
    int K() const { return static_cast<int>(values.cols()); }
};

struct EstimationResult {
    VectorXd mu_hat;
    MatrixXd sigma_hat;
    VectorXd lambda_hat;     // ZMVLN only
    VectorXd eta_hat;        // ZMVLN only; lambda * exp(mu + Sigma_kk/2)
    VectorXd eta_hat_naive;  // lambda * mu, as a secondary estimator
    std::vector<double> loglik_trace;
    bool converged = false;
    int iterations = 0;
    int dropped_rows = 0;
    int ridge_repairs = 0;
};

// Hajek design-weighted per-item means; reduces to the observed-case column
// mean under constant inclusion probabilities. Items with no observations
// get NaN rather than an error.
inline VectorXd hk_mean(const ObservedDataset& data, const VectorXd& inclusion) {
    int K = data.K();
    require(inclusion.size() == K, "inclusion vector length mismatch");
    VectorXd out(K);
    for (int k = 0; k < K; ++k) {
        KahanSum num, den;
        for (int i = 0; i < data.n(); ++i) {
            if (!data.observed(i, k)) continue;
            num.add(data.values(i, k) / inclusion(k));
            den.add(1.0 / inclusion(k));
        }
        out(k) = den.value() > 0.0 ? num.value() / den.value()
                                   : std::numeric_limits<double>::quiet_NaN();
    }
    return out;
}

// Approximate variance of the HK mean for one item over a finite population:
// (N/(n p) - 1) * sum (y - ybar)^2, normalized by N(N-1).
inline double hk_variance_approx(const VectorXd& population, int n, double p) {
    require(p > 0.0, "inclusion probability must be positive");
    double N = static_cast<double>(population.size());
    double ybar = population.mean();
    KahanSum ss;
    for (int i = 0; i < population.size(); ++i) {
        double d = population(i) - ybar;
        ss.add(d * d);
    }
    return (N / (n * p) - 1.0) * ss.value() / (N * (N - 1.0));
}

namespace detail {

struct MaskGroup {
    std::vector<int> obs;
    std::vector<int> mis;
    std::vector<int> rows;
};

inline std::vector<MaskGroup> group_by_mask(const ObservedDataset& data) {
    std::map<std::vector<bool>, std::vector<int>> groups;
    for (int i = 0; i < data.n(); ++i) {
        std::vector<bool> mask(data.K());
        for (int k = 0; k < data.K(); ++k) mask[k] = data.observed(i, k);
        groups[mask].push_back(i);
    }
    std::vector<MaskGroup> out;
    for (auto& [mask, rows] : groups) {
        MaskGroup g;
        g.rows = std::move(rows);
        for (int k = 0; k < data.K(); ++k)
            (mask[k] ? g.obs : g.mis).push_back(k);
        out.push_back(std::move(g));
    }
    return out;
}

}  // namespace detail

// EM for the MVN model with arbitrary missingness. MLE scaling (divisor n).
inline EstimationResult em_mvn(const ObservedDataset& data, double tol = 1e-8,
                               int max_iters = 2000) {
    int K = data.K();
    EstimationResult res;
    // Available-case initialization.
    VectorXd mu(K), var(K);
    for (int k = 0; k < K; ++k) {
        KahanSum s, s2;
        int cnt = 0;
        for (int i = 0; i < data.n(); ++i)
            if (data.observed(i, k)) {
                s.add(data.values(i, k));
                s2.add(data.values(i, k) * data.values(i, k));
                ++cnt;
            }
        require(cnt > 0, "item " + std::to_string(k) + " has no observations");
        mu(k) = s.value() / cnt;
        var(k) = std::max(s2.value() / cnt - mu(k) * mu(k), 1e-8);
    }
    MatrixXd sigma = var.asDiagonal();

    auto groups = detail::group_by_mask(data);
    // Rows with nothing observed contribute nothing; drop with a warning.
    std::vector<detail::MaskGroup> usable;
    int n_used = 0;
    for (auto& g : groups) {
        if (g.obs.empty()) {
            res.dropped_rows += static_cast<int>(g.rows.size());
            continue;
        }
        n_used += static_cast<int>(g.rows.size());
        usable.push_back(std::move(g));
    }
    require(n_used > 0, "no rows with observed entries");

    double prev_ll = -std::numeric_limits<double>::infinity();
    for (int it = 0; it < max_iters; ++it) {
        VectorXd t1 = VectorXd::Zero(K);
        MatrixXd t2 = MatrixXd::Zero(K, K);
        double ll = 0.0;
        for (const auto& g : usable) {
            int so = static_cast<int>(g.obs.size());
            int sm = static_cast<int>(g.mis.size());
            MatrixXd Soo(so, so), Smo(sm, so), Smm(sm, sm);
            for (int a = 0; a < so; ++a)
                for (int b = 0; b < so; ++b) Soo(a, b) = sigma(g.obs[a], g.obs[b]);
            for (int a = 0; a < sm; ++a) {
                for (int b = 0; b < so; ++b) Smo(a, b) = sigma(g.mis[a], g.obs[b]);
                for (int b = 0; b < sm; ++b) Smm(a, b) = sigma(g.mis[a], g.mis[b]);
            }
            Eigen::LLT<MatrixXd> llt(Soo);
            require(llt.info() == Eigen::Success,
                    "observed-block covariance lost positive definiteness");
            double logdet = 0.0;
            for (int a = 0; a < so; ++a)
                logdet += 2.0 * std::log(llt.matrixL()(a, a));
            MatrixXd Areg;  // Smo Soo^{-1}
            MatrixXd Scond;
            if (sm > 0) {
                Areg = llt.solve(Smo.transpose()).transpose();
                Scond = Smm - Areg * Smo.transpose();
            }
            VectorXd yo(so), r(so);
            for (int row : g.rows) {
                for (int a = 0; a < so; ++a) yo(a) = data.values(row, g.obs[a]);
                for (int a = 0; a < so; ++a) r(a) = yo(a) - mu(g.obs[a]);
                VectorXd w = llt.solve(r);
                ll += -0.5 * (so * std::log(2.0 * M_PI) + logdet + r.dot(w));
                VectorXd ey(K);
                for (int a = 0; a < so; ++a) ey(g.obs[a]) = yo(a);
                if (sm > 0) {
                    VectorXd ym = Areg * r;
                    for (int a = 0; a < sm; ++a)
                        ey(g.mis[a]) = mu(g.mis[a]) + ym(a);
                }
                t1 += ey;
                t2 += ey * ey.transpose();
                for (int a = 0; a < sm; ++a)
                    for (int b = 0; b < sm; ++b)
                        t2(g.mis[a], g.mis[b]) += Scond(a, b);
            }
        }
        res.loglik_trace.push_back(ll);
        VectorXd mu_new = t1 / n_used;
        MatrixXd sigma_new = t2 / n_used - mu_new * mu_new.transpose();
        sigma_new = 0.5 * (sigma_new + sigma_new.transpose());
        Eigen::LLT<MatrixXd> check(sigma_new);
        if (check.info() != Eigen::Success) {
            if (res.ridge_repairs >= 1)
                throw std::runtime_error(
                    "EM covariance repeatedly lost positive definiteness");
            ++res.ridge_repairs;
            sigma_new += 1e-8 * sigma_new.diagonal().asDiagonal().toDenseMatrix();
        }
        mu = std::move(mu_new);
        sigma = std::move(sigma_new);
        res.iterations = it + 1;
        if (it > 0 &&
            std::abs(ll - prev_ll) <
                tol * std::max(std::abs(prev_ll), 1.0)) {
            res.converged = true;
            break;
        }
        prev_ll = ll;
    }
    res.mu_hat = std::move(mu);
    res.sigma_hat = std::move(sigma);
    return res;
}

// Observed-data MVN log-likelihood (for tests and convergence diagnostics).
inline double observed_loglik_mvn(const ObservedDataset& data,
                                  const VectorXd& mu, const MatrixXd& sigma) {
    double ll = 0.0;
    for (const auto& g : detail::group_by_mask(data)) {
        int so = static_cast<int>(g.obs.size());
        if (so == 0) continue;
        MatrixXd Soo(so, so);
        for (int a = 0; a < so; ++a)
            for (int b = 0; b < so; ++b) Soo(a, b) = sigma(g.obs[a], g.obs[b]);
        Eigen::LLT<MatrixXd> llt(Soo);
        require(llt.info() == Eigen::Success, "covariance not PD");
        double logdet = 0.0;
        for (int a = 0; a < so; ++a) logdet += 2.0 * std::log(llt.matrixL()(a, a));
        VectorXd r(so);
        for (int row : g.rows) {
            for (int a = 0; a < so; ++a)
                r(a) = data.values(row, g.obs[a]) - mu(g.obs[a]);
            ll += -0.5 * (so * std::log(2.0 * M_PI) + logdet + r.dot(llt.solve(r)));
        }
    }
    return ll;
}

// ZMVLN plug-in estimation: lambda from observed nonzero fractions, (mu,
// Sigma) from EM on log-transformed nonzero entries with zeros treated as
// missing for the lognormal part.
inline EstimationResult estimate_zmvln(const ObservedDataset& data,
                                       double tol = 1e-8,
                                       int max_iters = 2000) {
    int K = data.K();
    const double nan = std::numeric_limits<double>::quiet_NaN();
    VectorXd lambda(K);
    std::vector<int> usable;  // items with at least one observed nonzero
    for (int k = 0; k < K; ++k) {
        int obs = 0, nz = 0;
        for (int i = 0; i < data.n(); ++i)
            if (data.observed(i, k)) {
                ++obs;
                if (data.values(i, k) != 0.0) ++nz;
            }
        require(obs > 0, "item " + std::to_string(k) + " has no observations");
        lambda(k) = static_cast<double>(nz) / obs;
        if (nz > 0) usable.push_back(k);
    }
    int Ku = static_cast<int>(usable.size());
    ObservedDataset logdata;
    logdata.values = MatrixXd::Zero(data.n(), Ku);
    logdata.observed.setConstant(data.n(), Ku, false);
    for (int a = 0; a < Ku; ++a) {
        int k = usable[a];
        for (int i = 0; i < data.n(); ++i) {
            if (data.observed(i, k) && data.values(i, k) != 0.0) {
                require(data.values(i, k) > 0.0, "responses must be nonnegative");
                logdata.values(i, a) = std::log(data.values(i, k));
                logdata.observed(i, a) = true;
            }
        }
    }
    EstimationResult res = em_mvn(logdata, tol, max_iters);
    // Embed the usable-item results; all-zero items get undefined markers.
    VectorXd mu = VectorXd::Constant(K, nan);
    MatrixXd sigma = MatrixXd::Constant(K, K, nan);
    for (int a = 0; a < Ku; ++a) {
        mu(usable[a]) = res.mu_hat(a);
        for (int b = 0; b < Ku; ++b)
            sigma(usable[a], usable[b]) = res.sigma_hat(a, b);
    }
    res.mu_hat = std::move(mu);
    res.sigma_hat = std::move(sigma);
    res.lambda_hat = lambda;
    res.eta_hat = VectorXd(K);
    res.eta_hat_naive = VectorXd(K);
    for (int k = 0; k < K; ++k) {
        if (lambda(k) == 0.0) {
            res.eta_hat(k) = 0.0;
            res.eta_hat_naive(k) = 0.0;
        } else {
            res.eta_hat(k) = lambda(k) * std::exp(res.mu_hat(k) +
                                                  0.5 * res.sigma_hat(k, k));
            res.eta_hat_naive(k) = lambda(k) * res.mu_hat(k);
        }
    }
    return res;
}

// Fill missing cells with draws from the row-wise conditional normal given
// the observed cells under `params`. Returns `draws` completed matrices.
inline std::vector<MatrixXd> conditional_impute(const ObservedDataset& data,
                                                const MvnParams& params,
                                                int draws, std::uint64_t seed) {
    require(draws >= 1, "draws must be positive");
    int K = data.K();
    require(params.K() == K, "parameter dimension mismatch");
    auto groups = detail::group_by_mask(data);
    std::vector<MatrixXd> out(draws, data.values);
    auto rng = make_rng(seed, 0);
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (const auto& g : groups) {
        int so = static_cast<int>(g.obs.size());
        int sm = static_cast<int>(g.mis.size());
        if (sm == 0) continue;
        MatrixXd Smo(sm, so), Smm(sm, sm);
        for (int a = 0; a < sm; ++a) {
            for (int b = 0; b < so; ++b)
                Smo(a, b) = params.sigma(g.mis[a], g.obs[b]);
            for (int b = 0; b < sm; ++b)
                Smm(a, b) = params.sigma(g.mis[a], g.mis[b]);
        }
        MatrixXd Areg;
        MatrixXd Scond = Smm;
        if (so > 0) {
            MatrixXd Soo(so, so);
            for (int a = 0; a < so; ++a)
                for (int b = 0; b < so; ++b)
                    Soo(a, b) = params.sigma(g.obs[a], g.obs[b]);
            Eigen::LLT<MatrixXd> llt(Soo);
            require(llt.info() == Eigen::Success, "observed block not PD");
            Areg = llt.solve(Smo.transpose()).transpose();
            Scond = Smm - Areg * Smo.transpose();
        }
        Scond = 0.5 * (Scond + Scond.transpose());
        Eigen::LLT<MatrixXd> lltc(Scond +
                                  1e-14 * MatrixXd::Identity(sm, sm));
        require(lltc.info() == Eigen::Success, "conditional covariance not PD");
        MatrixXd Lc = lltc.matrixL();
        VectorXd r(so), z(sm);
        for (int row : g.rows) {
            VectorXd base(sm);
            for (int a = 0; a < sm; ++a) base(a) = params.mu(g.mis[a]);
            if (so > 0) {
                for (int a = 0; a < so; ++a)
                    r(a) = data.values(row, g.obs[a]) - params.mu(g.obs[a]);
                base += Areg * r;
            }
            for (int d = 0; d < draws; ++d) {
                for (int a = 0; a < sm; ++a) z(a) = gauss(rng);
                VectorXd y = base + Lc * z;
                for (int a = 0; a < sm; ++a) out[d](row, g.mis[a]) = y(a);
            }
        }
    }
    return out;
}

// Mean estimator from conditional imputation: average of column means
// across completed matrices.
inline VectorXd imputed_mean(const std::vector<MatrixXd>& completed) {
    require(!completed.empty(), "no completed matrices");
    VectorXd acc = VectorXd::Zero(completed.front().cols());
    for (const auto& M : completed) acc += M.colwise().mean().transpose();
    return acc / static_cast<double>(completed.size());
}

}  // namespace sqd

#endif  // SQD_ESTIMATION_HPP
