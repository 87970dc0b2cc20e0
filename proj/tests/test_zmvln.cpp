#include <doctest.h>

#include <cmath>
#include <random>

#include "sqd/zmvln.hpp"

using namespace sqd;

namespace {

ZmvlnParams small_params() {
    VectorXd lam(2), mu(2);
    lam << 0.7, 0.5;
    mu << 0.3, -0.2;
    MatrixXd S(2, 2);
    S << 1.0, 0.4, 0.4, 0.8;
    return ZmvlnParams(lam, mu, S);
}

// Pack (lambda, mu, vech Sigma) into one vector for numeric differentiation.
VectorXd pack(const ZmvlnParams& p) {
    int K = p.K();
    VectorXd th(2 * K + vech_size(K));
    th.head(K) = p.lambda;
    th.segment(K, K) = p.mu;
    th.tail(vech_size(K)) = vech(p.sigma);
    return th;
}

ZmvlnParams unpack(const VectorXd& th, int K) {
    return ZmvlnParams(th.head(K), th.segment(K, K),
                       unvech(th.tail(vech_size(K)), K));
}

}  // namespace

TEST_CASE("eta_and_jacobian") {
    ZmvlnParams p = small_params();
    auto [eta, C] = eta_and_jacobian(p);
    SUBCASE("values") {
        CHECK(eta.eta(0) == doctest::Approx(0.7 * std::exp(0.3 + 0.5)));
        CHECK(eta.eta(1) == doctest::Approx(0.5 * std::exp(-0.2 + 0.4)));
    }
    SUBCASE("Jacobian matches finite differences of eta(theta)") {
        VectorXd th0 = pack(p);
        double h = 1e-6;
        for (int j = 0; j < th0.size(); ++j) {
            VectorXd tp = th0, tm = th0;
            tp(j) += h;
            tm(j) -= h;
            VectorXd fd =
                (eta_and_jacobian(unpack(tp, 2)).first.eta -
                 eta_and_jacobian(unpack(tm, 2)).first.eta) /
                (2 * h);
            for (int k = 0; k < 2; ++k)
                CHECK(C(k, j) == doctest::Approx(fd(k)).epsilon(1e-5));
        }
    }
    SUBCASE("sparsity: off-diagonal sigma entries do not enter eta") {
        int j_off = 4 + vech_index(2, 1, 0);
        CHECK(C(0, j_off) == 0.0);
        CHECK(C(1, j_off) == 0.0);
    }
}

TEST_CASE("zmvln_log_density") {
    ZmvlnParams p = small_params();
    SUBCASE("single observed zero is the Bernoulli mass") {
        VectorXd y(1);
        y << 0.0;
        CHECK(zmvln_log_density(p, y, Pattern({0})) ==
              doctest::Approx(std::log(0.3)));
        CHECK(zmvln_log_density(p, y, Pattern({1})) ==
              doctest::Approx(std::log(0.5)));
    }
    SUBCASE("single nonzero is Bernoulli times lognormal density") {
        VectorXd y(1);
        y << 1.5;
        double z = std::log(1.5) - 0.3;
        double expect = std::log(0.7) - std::log(1.5) -
                        0.5 * (std::log(2.0 * M_PI) + std::log(1.0) + z * z);
        CHECK(zmvln_log_density(p, y, Pattern({0})) == doctest::Approx(expect));
    }
    SUBCASE("pair density integrates to one (quadrature over one item)") {
        // Fix y1 = 0; integrate the density of y0 over (0, inf) plus the
        // point mass at 0; total must be P(Y1 = 0) = 0.5.
        Pattern pr({0, 1});
        double total = std::exp(zmvln_log_density(p, (VectorXd(2) << 0, 0).finished(), pr));
        int G = 4000;
        for (int i = 1; i <= G; ++i) {
            double y = i * 0.01;
            VectorXd v(2);
            v << y, 0.0;
            total += 0.01 * std::exp(zmvln_log_density(p, v, pr));
        }
        CHECK(total == doctest::Approx(0.5).epsilon(1e-3));
    }
    SUBCASE("negative responses are rejected") {
        VectorXd y(1);
        y << -0.5;
        CHECK_THROWS(zmvln_log_density(p, y, Pattern({0})));
    }
}

TEST_CASE("zmvln_sample") {
    ZmvlnParams p = small_params();
    MatrixXd Y = zmvln_sample(p, 40000, 31);
    SUBCASE("zero fractions match 1 - lambda") {
        for (int k = 0; k < 2; ++k) {
            double zf = (Y.col(k).array() == 0.0).cast<double>().mean();
            CHECK(zf == doctest::Approx(1.0 - p.lambda(k)).epsilon(0.03));
        }
    }
    SUBCASE("means match eta") {
        auto [eta, C] = eta_and_jacobian(p);
        for (int k = 0; k < 2; ++k)
            CHECK(Y.col(k).mean() == doctest::Approx(eta.eta(k)).epsilon(0.05));
    }
    SUBCASE("log of nonzero entries matches the latent normal moments") {
        std::vector<double> logs;
        for (int i = 0; i < Y.rows(); ++i)
            if (Y(i, 0) != 0.0) logs.push_back(std::log(Y(i, 0)));
        double m = 0;
        for (double v : logs) m += v;
        m /= logs.size();
        CHECK(m == doctest::Approx(p.mu(0)).epsilon(0.05));
    }
    SUBCASE("deterministic in the seed") {
        MatrixXd again = zmvln_sample(p, 100, 31);
        CHECK((again - Y.topRows(100)).cwiseAbs().maxCoeff() == 0.0);
    }
}

TEST_CASE("zmvln fisher structure") {
    ZmvlnParams p = small_params();
    PatternSet ps = enumerate_patterns(2, 2);  // single full pattern
    ZmvlnCriterion crit(p, ps);
    VectorXd probs = VectorXd::Ones(1);
    MatrixXd I = crit.fisher(probs);
    SUBCASE("lambda block is diag(xi / (lambda (1 - lambda)))") {
        CHECK(I(0, 0) == doctest::Approx(1.0 / (0.7 * 0.3)));
        CHECK(I(1, 1) == doctest::Approx(1.0 / (0.5 * 0.5)));
        CHECK(I(0, 1) == 0.0);
        CHECK(I(0, 2) == 0.0);  // lambda-mu cross block is zero
    }
    SUBCASE("information is symmetric PSD") {
        CHECK((I - I.transpose()).cwiseAbs().maxCoeff() < 1e-12);
        Eigen::SelfAdjointEigenSolver<MatrixXd> es(I);
        CHECK(es.eigenvalues().minCoeff() > -1e-10);
    }
    SUBCASE("subset weights sum to one within a pattern") {
        // With lambda=(0.7,0.5): w({0,1}) + w({0}) + w({1}) + w({}) = 1; the
        // empty set carries no information, so the mu block at full coverage
        // is a strict average of restricted inverses.
        MatrixXd Sinv = p.sigma.inverse();
        // mu-block diagonal must be below the complete-case information.
        CHECK(I(2, 2) < Sinv(0, 0) + 1e-12);
        CHECK(I(2, 2) > 0.0);
    }
    SUBCASE("scaling by design mass is linear") {
        PatternSet ps2 = enumerate_patterns(2, 1);
        ZmvlnCriterion c2(p, ps2);
        VectorXd a(2), b(2);
        a << 0.3, 0.7;
        b << 0.6, 0.4;
        MatrixXd lhs = c2.fisher(0.5 * a + 0.5 * b);
        MatrixXd rhs = 0.5 * c2.fisher(a) + 0.5 * c2.fisher(b);
        CHECK((lhs - rhs).cwiseAbs().maxCoeff() < 1e-12);
    }
}

TEST_CASE("zmvln fisher matches the Monte-Carlo expected Hessian") {
    // K=2, full pattern: average numeric Hessians of the observed-data log
    // density over simulated responses and compare entrywise within 3 SEs.
    ZmvlnParams p = small_params();
    Pattern full({0, 1});
    PatternSet ps = enumerate_patterns(2, 2);
    ZmvlnCriterion crit(p, ps);
    MatrixXd expect = crit.fisher(VectorXd::Ones(1));
    int dim = 7, n_mc = 4000;
    double h = 1e-4;
    VectorXd th0 = pack(p);
    MatrixXd Y = zmvln_sample(p, n_mc, 99);
    MatrixXd mean_h = MatrixXd::Zero(dim, dim);
    MatrixXd m2 = MatrixXd::Zero(dim, dim);
    auto ll = [&](const VectorXd& th, const VectorXd& y) {
        return zmvln_log_density(unpack(th, 2), y, full);
    };
    for (int i = 0; i < n_mc; ++i) {
        VectorXd y = Y.row(i).transpose();
        MatrixXd H(dim, dim);
        for (int a = 0; a < dim; ++a)
            for (int b = a; b < dim; ++b) {
                VectorXd t1 = th0, t2 = th0, t3 = th0, t4 = th0;
                t1(a) += h; t1(b) += h;
                t2(a) += h; t2(b) -= h;
                t3(a) -= h; t3(b) += h;
                t4(a) -= h; t4(b) -= h;
                double v = (ll(t1, y) - ll(t2, y) - ll(t3, y) + ll(t4, y)) /
                           (4 * h * h);
                H(a, b) = -v;
                H(b, a) = -v;
            }
        mean_h += (H - mean_h) / (i + 1);
        m2 += H.cwiseProduct(H);
    }
    for (int a = 0; a < dim; ++a)
        for (int b = a; b < dim; ++b) {
            double var =
                m2(a, b) / n_mc - mean_h(a, b) * mean_h(a, b);
            double se = std::sqrt(std::max(var, 0.0) / n_mc);
            CHECK(std::abs(mean_h(a, b) - expect(a, b)) <= 3.0 * se + 2e-3);
        }
}

TEST_CASE("zmvln criterion") {
    // K=3 with pair patterns: every (mu, Sigma) coordinate is identified.
    VectorXd lam3(3), mu3(3);
    lam3 << 0.7, 0.5, 0.8;
    mu3 << 0.3, -0.2, 0.1;
    MatrixXd S3(3, 3);
    S3 << 1.0, 0.4, 0.2, 0.4, 0.8, 0.3, 0.2, 0.3, 0.9;
    ZmvlnParams p(lam3, mu3, S3);
    PatternSet ps = enumerate_patterns(3, 2);
    ZmvlnCriterion crit(p, ps);
    SUBCASE("value equals tr(C I^-1 C^T) computed directly") {
        VectorXd probs(3);
        probs << 0.4, 0.3, 0.3;
        MatrixXd I = crit.fisher(probs);
        auto [eta, C] = eta_and_jacobian(p);
        double direct = (C * I.inverse() * C.transpose()).trace();
        CHECK(crit.value(probs) == doctest::Approx(direct).epsilon(1e-10));
    }
    SUBCASE("gradient matches central finite differences") {
        VectorXd probs(3);
        probs << 0.45, 0.25, 0.3;
        VectorXd g = crit.gradient(probs);
        double h = 1e-6;
        for (int j = 0; j < 3; ++j) {
            VectorXd pp = probs, pm = probs;
            pp(j) += h;
            pm(j) -= h;
            double fd = (crit.value(pp) - crit.value(pm)) / (2 * h);
            CHECK(g(j) == doctest::Approx(fd).epsilon(1e-5));
            CHECK(g(j) < 0.0);
        }
    }
    SUBCASE("uncovered item raises a named error") {
        VectorXd probs(3);
        probs << 1.0, 0.0, 0.0;  // item 2 never administered
        CHECK_THROWS_WITH_AS(crit.value(probs), doctest::Contains("uncovered"),
                             std::runtime_error);
    }
    SUBCASE("extreme lambda is clamped and flagged") {
        VectorXd lam(2), mu(2);
        lam << 1.0 - 1e-12, 0.5;
        mu << 0.0, 0.0;
        ZmvlnParams px(lam, mu, MatrixXd::Identity(2, 2));
        ZmvlnCriterion cx(px, enumerate_patterns(2, 2));
        CHECK(cx.lambda_clamped());
        CHECK(std::isfinite(cx.value(VectorXd::Ones(1))));
        CHECK_FALSE(crit.lambda_clamped());
    }
    SUBCASE("parameter validation") {
        VectorXd lam(2), mu(2);
        lam << 0.0, 0.5;
        mu << 0.0, 0.0;
        CHECK_THROWS(ZmvlnParams(lam, mu, MatrixXd::Identity(2, 2)));
        lam << 0.5, 1.0;
        CHECK_THROWS(ZmvlnParams(lam, mu, MatrixXd::Identity(2, 2)));
    }
}
