#ifndef SQD_THEORY_HPP
#define SQD_THEORY_HPP

#include <cmath>
#include <random>
#include <vector>

#include "sqd/common.hpp"
#include "sqd/mvn.hpp"
#include "sqd/pattern.hpp"

namespace sqd {

// Two groups of q equicorrelated questions: within-group correlation rho1,
// between-group correlation rho2, unit variances.
struct TwoGroupSpec {
    int q;
    double rho1;
    double rho2;

    TwoGroupSpec(int q_, double r1, double r2) : q(q_), rho1(r1), rho2(r2) {
        require(q >= 2, "q must be at least 2");
        require(std::abs(rho2) < std::abs(rho1) && std::abs(rho1) < 1.0 &&
                    rho2 != 0.0,
                "require 0 < |rho2| < |rho1| < 1");
    }
};

// Block covariance with g groups of q items (two-group case is g = 2).
inline MatrixXd block_covariance(int g, int q, double rho1, double rho2) {
    int K = g * q;
    MatrixXd S = MatrixXd::Constant(K, K, rho2);
    for (int b = 0; b < g; ++b)
        S.block(b * q, b * q, q, q).setConstant(rho1);
    S.diagonal().setOnes();
    return S;
}

// Closed-form A-criterion for the symmetric two-group pair design with
// within-group mass pi.
inline double a_pi(const TwoGroupSpec& spec, double pi) {
    require(pi >= 0.0 && pi <= 1.0, "pi must lie in [0,1]");
    double q = spec.q;
    double d1 = 1.0 - spec.rho1 * spec.rho1;
    double d2 = 1.0 - spec.rho2 * spec.rho2;
    double term1_den = pi / (q * d1) + (1.0 - pi) / (q * d2) +
                       pi * spec.rho1 / (q * (q - 1.0) * d1);
    double num = pi * (1.0 - spec.rho1) / (q * d1) + (1.0 - pi) / (q * d2);
    double cross = (1.0 - pi) * spec.rho2 / (q * d2);
    double term2_den = num * num - cross * cross;
    require(term1_den > 0.0 && term2_den > 0.0,
            "A(pi) denominator nonpositive (PD violation)");
    return (2.0 * q - 2.0) / term1_den + 2.0 * num / term2_den;
}

inline double pi_srs(int q) {
    require(q >= 1, "q must be positive");
    return (q - 1.0) / (2.0 * q - 1.0);
}

// Minimizer of A(pi) on [0,1] by golden-section search plus a local
// quadratic refinement.
inline double pi_opt(const TwoGroupSpec& spec) {
    const double gr = (std::sqrt(5.0) - 1.0) / 2.0;
    double a = 0.0, b = 1.0;
    double c = b - gr * (b - a), d = a + gr * (b - a);
    double fc = a_pi(spec, c), fd = a_pi(spec, d);
    for (int it = 0; it < 200 && b - a > 1e-12; ++it) {
        if (fc < fd) {
            b = d;
            d = c;
            fd = fc;
            c = b - gr * (b - a);
            fc = a_pi(spec, c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + gr * (b - a);
            fd = a_pi(spec, d);
        }
    }
    double x = 0.5 * (a + b);
    // One Newton polish from central differences, kept inside [0,1].
    double h = 1e-6;
    if (x > h && x < 1.0 - h) {
        double f0 = a_pi(spec, x - h), f1 = a_pi(spec, x), f2 = a_pi(spec, x + h);
        double g = (f2 - f0) / (2 * h);
        double hess = (f2 - 2 * f1 + f0) / (h * h);
        if (hess > 0.0) {
            double xn = x - g / hess;
            if (xn > 0.0 && xn < 1.0 && a_pi(spec, xn) <= f1) x = xn;
        }
    }
    return x;
}

// Limit of A(pi_SRS) / A(pi_opt) as q grows.
inline double re_limit(double rho1, double rho2) {
    require(std::abs(rho2) <= std::abs(rho1) && std::abs(rho1) < 1.0,
            "require |rho2| <= |rho1| < 1");
    double d1 = 1.0 - rho1 * rho1;
    double d2 = 1.0 - rho2 * rho2;
    return (2.0 / d1) / (1.0 / d1 + 1.0 / d2);
}

struct PlugInReplicate {
    double rho1_hat = 0.0;
    double rho2_hat = 0.0;
    double pi_opt_hat = 0.0;
    double ratio = 0.0;  // A(pi_SRS) / A(pi_opt_hat) at the true spec
    bool flagged = false;  // |rho2_hat| >= |rho1_hat|
};

struct PlugInSummary {
    std::vector<PlugInReplicate> replicates;
    double mean_pi_opt = 0.0;
    double sd_pi_opt = 0.0;
    double mean_ratio = 0.0;
    double sd_ratio = 0.0;
    int flagged_count = 0;
};

// Average within-group and between-group pairwise sample correlations.
inline std::pair<double, double> estimate_group_correlations(
    const MatrixXd& data, int q) {
    int K = static_cast<int>(data.cols());
    int n = static_cast<int>(data.rows());
    VectorXd mean = data.colwise().mean();
    MatrixXd centered = data.rowwise() - mean.transpose();
    MatrixXd cov = centered.transpose() * centered / n;
    VectorXd sd = cov.diagonal().cwiseSqrt();
    KahanSum within, between;
    int nw = 0, nb = 0;
    for (int a = 0; a < K; ++a)
        for (int b = a + 1; b < K; ++b) {
            double r = cov(a, b) / (sd(a) * sd(b));
            if ((a < q) == (b < q)) {
                within.add(r);
                ++nw;
            } else {
                between.add(r);
                ++nb;
            }
        }
    return {within.value() / nw, between.value() / nb};
}

// Theorem-3 style stability check: pilot samples from the structured MVN,
// plug-in estimates of (rho1, rho2), spread of the implied pi_opt and of the
// efficiency ratio evaluated at the true parameters.
inline PlugInSummary plug_in_stability(const TwoGroupSpec& spec, int n_pilot,
                                       int replications, std::uint64_t seed) {
    require(n_pilot >= 30, "n_pilot must be at least 30");
    require(replications >= 1, "replications must be positive");
    int K = 2 * spec.q;
    MatrixXd S = block_covariance(2, spec.q, spec.rho1, spec.rho2);
    Eigen::LLT<MatrixXd> llt(S);
    MatrixXd L = llt.matrixL();
    double a_srs = a_pi(spec, pi_srs(spec.q));
    PlugInSummary out;
    KahanSum sp, sp2, sr, sr2;
    for (int r = 0; r < replications; ++r) {
        auto rng = make_rng(seed, r);
        std::normal_distribution<double> gauss(0.0, 1.0);
        MatrixXd data(n_pilot, K);
        VectorXd z(K);
        for (int i = 0; i < n_pilot; ++i) {
            for (int k = 0; k < K; ++k) z(k) = gauss(rng);
            data.row(i) = (L * z).transpose();
        }
        auto [r1h, r2h] = estimate_group_correlations(data, spec.q);
        PlugInReplicate rep;
        rep.rho1_hat = r1h;
        rep.rho2_hat = r2h;
        if (std::abs(r2h) >= std::abs(r1h) || std::abs(r1h) >= 1.0 ||
            r2h == 0.0) {
            rep.flagged = true;
            ++out.flagged_count;
            out.replicates.push_back(rep);
            continue;
        }
        TwoGroupSpec est(spec.q, r1h, r2h);
        rep.pi_opt_hat = pi_opt(est);
        rep.ratio = a_srs / a_pi(spec, rep.pi_opt_hat);
        sp.add(rep.pi_opt_hat);
        sp2.add(rep.pi_opt_hat * rep.pi_opt_hat);
        sr.add(rep.ratio);
        sr2.add(rep.ratio * rep.ratio);
        out.replicates.push_back(rep);
    }
    int ok = replications - out.flagged_count;
    if (ok > 0) {
        out.mean_pi_opt = sp.value() / ok;
        out.mean_ratio = sr.value() / ok;
        double vp = sp2.value() / ok - out.mean_pi_opt * out.mean_pi_opt;
        double vr = sr2.value() / ok - out.mean_ratio * out.mean_ratio;
        out.sd_pi_opt = std::sqrt(std::max(vp, 0.0));
        out.sd_ratio = std::sqrt(std::max(vr, 0.0));
    }
    return out;
}

}  // namespace sqd

#endif  // SQD_THEORY_HPP
