#include <doctest.h>

#include <random>

#include <unsupported/Eigen/KroneckerProduct>

#include "sqd/mvn.hpp"
#include "sqd/theory.hpp"

using namespace sqd;

namespace {

MatrixXd random_pd(int K, std::uint64_t seed) {
    auto rng = make_rng(seed, 0);
    std::normal_distribution<double> gauss(0.0, 1.0);
    MatrixXd A(K, K);
    for (int i = 0; i < K; ++i)
        for (int j = 0; j < K; ++j) A(i, j) = gauss(rng);
    return A * A.transpose() + static_cast<double>(K) * MatrixXd::Identity(K, K);
}

}  // namespace

TEST_CASE("pattern_info basics") {
    SUBCASE("identity covariance, single item") {
        MvnParams p(VectorXd::Zero(2), MatrixXd::Identity(2, 2));
        auto info = pattern_info(p, Pattern({0}));
        CHECK(info.M(0, 0) == doctest::Approx(1.0));
        CHECK(info.M(1, 1) == 0.0);
        CHECK(info.M(0, 1) == 0.0);
    }
    SUBCASE("correlated pair matches the 2x2 inverse") {
        double rho = 0.8;
        MatrixXd S(2, 2);
        S << 1, rho, rho, 1;
        MvnParams p(VectorXd::Zero(2), S);
        auto info = pattern_info(p, Pattern({0, 1}));
        double c = 1.0 / (1.0 - rho * rho);
        CHECK(info.M(0, 0) == doctest::Approx(c));
        CHECK(info.M(0, 1) == doctest::Approx(-c * rho));
        CHECK(info.M(1, 1) == doctest::Approx(c));
    }
    SUBCASE("random 4x4, pattern {1,3}: equals direct submatrix inverse") {
        MatrixXd S = random_pd(4, 42);
        MvnParams p(VectorXd::Zero(4), S);
        auto info = pattern_info(p, Pattern({1, 3}));
        MatrixXd sub(2, 2);
        sub << S(1, 1), S(1, 3), S(3, 1), S(3, 3);
        MatrixXd inv = sub.inverse();
        CHECK(info.M(1, 1) == doctest::Approx(inv(0, 0)));
        CHECK(info.M(1, 3) == doctest::Approx(inv(0, 1)));
        CHECK(info.M(3, 3) == doctest::Approx(inv(1, 1)));
        CHECK(info.M(0, 0) == 0.0);
        CHECK(info.M(2, 2) == 0.0);
    }
}

TEST_CASE("mu_fisher") {
    SUBCASE("full-pattern point mass gives Sigma^{-1}") {
        MatrixXd S = random_pd(3, 7);
        MvnParams p(VectorXd::Zero(3), S);
        PatternSet full = enumerate_patterns(3, 3);
        DesignDistribution d(full, VectorXd::Ones(1));
        MatrixXd M = mu_fisher(p, d);
        CHECK((M - S.inverse()).cwiseAbs().maxCoeff() < 1e-10);
    }
    SUBCASE("linearity in the design") {
        MatrixXd S = random_pd(4, 9);
        MvnParams p(VectorXd::Zero(4), S);
        auto ps = enumerate_patterns(4, 2);
        auto rng = make_rng(1, 0);
        std::uniform_real_distribution<double> u(0.01, 1.0);
        VectorXd p1(6), p2(6);
        for (int j = 0; j < 6; ++j) { p1(j) = u(rng); p2(j) = u(rng); }
        p1 /= p1.sum(); p2 /= p2.sum();
        double alpha = 0.3;
        MvnCriterion crit(p, ps);
        MatrixXd lhs = crit.mu_fisher(alpha * p1 + (1 - alpha) * p2);
        MatrixXd rhs = alpha * crit.mu_fisher(p1) +
                       (1 - alpha) * crit.mu_fisher(p2);
        CHECK((lhs - rhs).cwiseAbs().maxCoeff() < 1e-12);
    }
    SUBCASE("SRS with structured Sigma matches the a,b,c coefficients") {
        int q = 4;
        double r1 = 0.8, r2 = 0.4;
        double pi = pi_srs(q);
        MvnParams p(VectorXd::Zero(2 * q), block_covariance(2, q, r1, r2));
        auto d = srs_design(enumerate_patterns(2 * q, 2));
        MatrixXd M = mu_fisher(p, d);
        double d1 = 1 - r1 * r1, d2 = 1 - r2 * r2;
        double b = -pi * r1 / (q * (q - 1) * d1);
        double a = pi / (q * d1) + (1 - pi) / (q * d2) - b;
        double c = -(1 - pi) * r2 / (q * q * d2);
        CHECK(M(0, 0) == doctest::Approx(a + b));
        CHECK(M(0, 1) == doctest::Approx(b));
        CHECK(M(0, q) == doctest::Approx(c));
        CHECK(M(q, q) == doctest::Approx(a + b));
    }
}

TEST_CASE("a_criterion_mvn") {
    SUBCASE("full pattern point mass -> tr(Sigma)") {
        MatrixXd S = random_pd(3, 11);
        MvnParams p(VectorXd::Zero(3), S);
        DesignDistribution d(enumerate_patterns(3, 3), VectorXd::Ones(1));
        CHECK(a_criterion_mvn(p, d) == doctest::Approx(S.trace()));
    }
    SUBCASE("Table-3 SRS value at g=2,q=4") {
        MvnParams p(VectorXd::Zero(8), block_covariance(2, 4, 0.8, 0.4));
        auto d = srs_design(enumerate_patterns(8, 2));
        CHECK(a_criterion_mvn(p, d) == doctest::Approx(20.5173).epsilon(1e-4));
    }
    SUBCASE("agrees with the closed-form A(pi) on the symmetric family") {
        TwoGroupSpec spec(4, 0.8, 0.4);
        MvnParams p(VectorXd::Zero(8), block_covariance(2, 4, 0.8, 0.4));
        for (double pi : {0.0, 0.25, 0.5, 0.75, 1.0}) {
            auto d = symmetric_two_group_design(4, pi);
            CHECK(a_criterion_mvn(p, d) ==
                  doctest::Approx(a_pi(spec, pi)).epsilon(1e-9));
        }
    }
    SUBCASE("uncovered item raises a named error") {
        MvnParams p(VectorXd::Zero(4), MatrixXd::Identity(4, 4));
        auto ps = enumerate_patterns(4, 2);
        VectorXd probs = VectorXd::Zero(6);
        probs(0) = 1.0;  // only items {0,1} covered
        DesignDistribution d(ps, probs);
        CHECK_THROWS_WITH_AS(a_criterion_mvn(p, d),
                             doctest::Contains("uncovered"),
                             std::runtime_error);
    }
}

TEST_CASE("a_gradient_mvn") {
    SUBCASE("matches central finite differences on a random 6-question case") {
        MatrixXd S = random_pd(6, 13);
        MvnParams params(VectorXd::Zero(6), S);
        auto ps = enumerate_patterns(6, 2);
        int J = ps.count();
        auto rng = make_rng(3, 0);
        std::uniform_real_distribution<double> u(0.2, 1.0);
        VectorXd p(J);
        for (int j = 0; j < J; ++j) p(j) = u(rng);
        p /= p.sum();
        MvnCriterion crit(params, ps);
        VectorXd g = crit.gradient(p);
        double h = 1e-6;
        for (int j = 0; j < J; ++j) {
            VectorXd pp = p, pm = p;
            pp(j) += h;
            pm(j) -= h;
            double fd = (crit.value(pp) - crit.value(pm)) / (2 * h);
            CHECK(g(j) == doctest::Approx(fd).epsilon(1e-6));
        }
        for (int j = 0; j < J; ++j) CHECK(g(j) < 0.0);
    }
    SUBCASE("symmetry orbits share gradient entries") {
        MvnParams params(VectorXd::Zero(8), block_covariance(2, 4, 0.8, 0.4));
        auto d = symmetric_two_group_design(4, 0.6);
        VectorXd g = a_gradient_mvn(params, d);
        double gw = 0, gb = 0;
        bool first_w = true, first_b = true;
        for (int j = 0; j < d.pattern_set.count(); ++j) {
            int a = d.pattern_set.patterns[j].items[0];
            int b = d.pattern_set.patterns[j].items[1];
            bool within = (a < 4) == (b < 4);
            if (within) {
                if (first_w) { gw = g(j); first_w = false; }
                CHECK(g(j) == doctest::Approx(gw).epsilon(1e-10));
            } else {
                if (first_b) { gb = g(j); first_b = false; }
                CHECK(g(j) == doctest::Approx(gb).epsilon(1e-10));
            }
        }
    }
    SUBCASE("single full pattern: gradient is -tr(Sigma)") {
        MatrixXd S = random_pd(3, 17);
        MvnParams params(VectorXd::Zero(3), S);
        auto ps = enumerate_patterns(3, 3);
        MvnCriterion crit(params, ps);
        VectorXd g = crit.gradient(VectorXd::Ones(1));
        CHECK(g(0) == doctest::Approx(-S.trace()));
    }
}

TEST_CASE("duplication_matrix") {
    CHECK(duplication_matrix(1)(0, 0) == 1.0);
    SUBCASE("K=2 layout") {
        MatrixXd D = duplication_matrix(2);
        REQUIRE(D.rows() == 4);
        REQUIRE(D.cols() == 3);
        VectorXd v(3);
        v << 1.0, 2.0, 3.0;  // (s11, s21, s22)
        VectorXd vec = D * v;
        CHECK(vec(0) == 1.0);  // s11
        CHECK(vec(1) == 2.0);  // s21
        CHECK(vec(2) == 2.0);  // s12
        CHECK(vec(3) == 3.0);  // s22
    }
    SUBCASE("D vech(S) = vec(S) on a random symmetric matrix") {
        MatrixXd S = random_pd(4, 23);
        MatrixXd D = duplication_matrix(4);
        VectorXd lhs = D * vech(S);
        VectorXd rhs = Eigen::Map<VectorXd>(S.data(), 16);
        CHECK((lhs - rhs).cwiseAbs().maxCoeff() < 1e-14);
    }
    SUBCASE("column sums: 1 on the diagonal, 2 off") {
        int K = 5;
        MatrixXd D = duplication_matrix(K);
        for (int j = 0; j < K; ++j)
            for (int i = j; i < K; ++i)
                CHECK(D.col(vech_index(K, i, j)).sum() ==
                      doctest::Approx(i == j ? 1.0 : 2.0));
    }
}

TEST_CASE("full_fisher_mvn") {
    SUBCASE("K=1 blocks are 1/s2 and 1/(2 s4)") {
        double s2 = 2.5;
        MvnParams p(VectorXd::Zero(1), s2 * MatrixXd::Identity(1, 1));
        DesignDistribution d(enumerate_patterns(1, 1), VectorXd::Ones(1));
        MatrixXd I = full_fisher_mvn(p, d);
        CHECK(I(0, 0) == doctest::Approx(1.0 / s2));
        CHECK(I(1, 1) == doctest::Approx(1.0 / (2 * s2 * s2)));
        CHECK(I(0, 1) == 0.0);
    }
    SUBCASE("mu block equals mu_fisher; sigma block matches dense route") {
        MatrixXd S = random_pd(3, 29);
        MvnParams p(VectorXd::Zero(3), S);
        auto ps = enumerate_patterns(3, 2);
        auto d = srs_design(ps);
        MatrixXd I = full_fisher_mvn(p, d);
        MatrixXd M = mu_fisher(p, d);
        CHECK((I.topLeftCorner(3, 3) - M).cwiseAbs().maxCoeff() < 1e-12);
        // Dense oracle: 0.5 D^T (Mj (x) Mj) D summed over patterns.
        MatrixXd D = duplication_matrix(3);
        MatrixXd Bs = MatrixXd::Zero(6, 6);
        for (int j = 0; j < ps.count(); ++j) {
            MatrixXd Mj = pattern_info(p, ps.patterns[j]).M;
            Bs += d.probs(j) * 0.5 * D.transpose() *
                  Eigen::kroneckerProduct(Mj, Mj).eval() * D;
        }
        CHECK((I.bottomRightCorner(6, 6) - Bs).cwiseAbs().maxCoeff() < 1e-10);
    }
}
