#ifndef SQD_SIMULATION_HPP
#define SQD_SIMULATION_HPP

#include <atomic>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "sqd/common.hpp"
#include "sqd/estimation.hpp"
#include "sqd/mvn.hpp"
#include "sqd/optimizer.hpp"
#include "sqd/pattern.hpp"
#include "sqd/theory.hpp"
#include "sqd/zmvln.hpp"

namespace sqd {

enum class ModelTag { MVN, ZMVLN };

enum class DesignKind { SRS, OPT, BAYES, MINIMAX, DET1, DET2, FULL };

inline std::string design_name(DesignKind k) {
    switch (k) {
        case DesignKind::SRS: return "SRS";
        case DesignKind::OPT: return "OPT";
        case DesignKind::BAYES: return "BAYES";
        case DesignKind::MINIMAX: return "MINIMAX";
        case DesignKind::DET1: return "DET1";
        case DesignKind::DET2: return "DET2";
        case DesignKind::FULL: return "FULL";
    }
    return "?";
}

// Population with g groups of q equicorrelated items; group means 1, 2, ...
struct StructuredPopSpec {
    int g = 2;
    int q = 4;
    double rho1 = 0.8;
    double rho2 = 0.4;
    ModelTag model = ModelTag::MVN;
    std::vector<double> lambda_profile;  // per-group nonzero rates (ZMVLN)
    int N = 100000;

    int K() const { return g * q; }

    VectorXd mu() const {
        VectorXd m(K());
        for (int b = 0; b < g; ++b)
            m.segment(b * q, q).setConstant(static_cast<double>(b + 1));
        return m;
    }

    MatrixXd sigma() const { return block_covariance(g, q, rho1, rho2); }

    VectorXd lambda() const {
        require(model == ModelTag::ZMVLN, "lambda only defined for ZMVLN");
        require(static_cast<int>(lambda_profile.size()) == g,
                "lambda profile must have one entry per group");
        VectorXd l(K());
        for (int b = 0; b < g; ++b)
            l.segment(b * q, q).setConstant(lambda_profile[b]);
        return l;
    }
};

struct Scenario {
    StructuredPopSpec pop;
    int n = 1000;
    std::vector<DesignKind> designs = {DesignKind::SRS, DesignKind::OPT};
    int replications = 200;
    std::uint64_t seed = 20240915;
    int sim3_setup = 0;   // 0: common n for all designs; 1 or 2: the
                          // deterministic-baseline setups with their own sizes
    int impute_draws = 20;
    int bayes_draws = 200;
    int threads = 1;
};

struct DesignResult {
    DesignKind kind = DesignKind::SRS;
    double mse_sum = 0.0;           // normalized: sum / (R * K)
    double mse_sum_raw = 0.0;       // unnormalized sum of squared errors
    double criterion = std::numeric_limits<double>::quiet_NaN();
    double re_mse = std::numeric_limits<double>::quiet_NaN();   // vs SRS
    double re_a = std::numeric_limits<double>::quiet_NaN();     // vs SRS
    double se_re = std::numeric_limits<double>::quiet_NaN();    // jackknife
    std::vector<double> per_replicate;  // squared-error sums
    int failed_replicates = 0;
};

struct StudyResult {
    Scenario scenario;
    std::vector<DesignResult> designs;
    VectorXd truth;  // population column means
};

inline MatrixXd gen_population(const StructuredPopSpec& spec,
                               std::uint64_t seed) {
    int K = spec.K();
    MatrixXd S = spec.sigma();
    Eigen::LLT<MatrixXd> llt(S);
    if (llt.info() != Eigen::Success)
        throw std::runtime_error(
            "population covariance not PD for (g,q,rho1,rho2)=(" +
            std::to_string(spec.g) + "," + std::to_string(spec.q) + "," +
            std::to_string(spec.rho1) + "," + std::to_string(spec.rho2) + ")");
    MatrixXd L = llt.matrixL();
    VectorXd mu = spec.mu();
    auto rng = make_rng(seed, 0);
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    VectorXd lam;
    if (spec.model == ModelTag::ZMVLN) lam = spec.lambda();
    MatrixXd Y(spec.N, K);
    VectorXd z(K);
    for (int i = 0; i < spec.N; ++i) {
        for (int k = 0; k < K; ++k) z(k) = gauss(rng);
        VectorXd x = mu + L * z;
        if (spec.model == ModelTag::MVN) {
            Y.row(i) = x.transpose();
        } else {
            for (int k = 0; k < K; ++k)
                Y(i, k) = unif(rng) < lam(k) ? std::exp(x(k)) : 0.0;
        }
    }
    return Y;
}

namespace detail {

// Selection sampling: SRS without replacement of n indices out of N,
// deterministic given the rng (no reliance on std::sample internals).
inline std::vector<int> srs_rows(int N, int n, std::mt19937_64& rng) {
    std::vector<int> rows;
    rows.reserve(n);
    int remaining = n;
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    for (int i = 0; i < N && remaining > 0; ++i) {
        if (unif(rng) * (N - i) < remaining) {
            rows.push_back(i);
            --remaining;
        }
    }
    return rows;
}

inline int draw_pattern(const VectorXd& cum, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    double u = unif(rng);
    int lo = 0, hi = static_cast<int>(cum.size()) - 1;
    while (lo < hi) {
        int mid = (lo + hi) / 2;
        if (u <= cum(mid)) hi = mid; else lo = mid + 1;
    }
    return lo;
}

}  // namespace detail

// SRS of n respondents, then one independently drawn pattern per respondent.
inline ObservedDataset apply_design(const MatrixXd& population, int n,
                                    const DesignDistribution& d,
                                    std::uint64_t seed) {
    int N = static_cast<int>(population.rows());
    int K = static_cast<int>(population.cols());
    require(n <= N, "sample size exceeds population");
    require(d.pattern_set.K == K, "design dimension mismatch");
    auto rng = make_rng(seed, 0);
    auto rows = detail::srs_rows(N, n, rng);
    VectorXd cum(d.probs.size());
    double acc = 0.0;
    for (int j = 0; j < d.probs.size(); ++j) {
        acc += d.probs(j);
        cum(j) = acc;
    }
    cum(d.probs.size() - 1) = 1.0;
    ObservedDataset out;
    out.values = MatrixXd::Zero(n, K);
    out.observed.setConstant(n, K, false);
    for (int i = 0; i < n; ++i) {
        int j = detail::draw_pattern(cum, rng);
        for (int k : d.pattern_set.patterns[j].items) {
            out.values(i, k) = population(rows[i], k);
            out.observed(i, k) = true;
        }
    }
    return out;
}

// Mask plan for the deterministic-order baselines: n_full fully observed
// rows, then partial rows observing a fixed item pair.
inline Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>
deterministic_design(DesignKind variant, int K, int n, int n_full) {
    require(K >= 2, "deterministic designs require K >= 2");
    require(variant == DesignKind::DET1 || variant == DesignKind::DET2,
            "variant must be DET1 or DET2");
    require(n_full >= 0 && n_full <= n, "invalid n_full");
    Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> mask(n, K);
    mask.setConstant(false);
    for (int i = 0; i < n_full; ++i) mask.row(i).setConstant(true);
    int a = 0, b = variant == DesignKind::DET1 ? K - 1 : 1;
    for (int i = n_full; i < n; ++i) {
        mask(i, a) = true;
        mask(i, b) = true;
    }
    return mask;
}

// Delete-one-replicate jackknife SE of the ratio of squared-error sums.
inline double jackknife_se_re(const std::vector<double>& num_reps,
                              const std::vector<double>& den_reps) {
    require(num_reps.size() == den_reps.size(), "replicate count mismatch");
    int R = static_cast<int>(num_reps.size());
    require(R >= 2, "jackknife requires at least two replicates");
    KahanSum sn, sd;
    for (double x : num_reps) sn.add(x);
    for (double x : den_reps) sd.add(x);
    double SN = sn.value(), SD = sd.value();
    std::vector<double> theta(R);
    KahanSum st;
    for (int i = 0; i < R; ++i) {
        double den = SD - den_reps[i];
        require(den != 0.0, "delete-one denominator is zero");
        theta[i] = (SN - num_reps[i]) / den;
        st.add(theta[i]);
    }
    double tbar = st.value() / R;
    KahanSum ss;
    for (int i = 0; i < R; ++i) {
        double d = theta[i] - tbar;
        ss.add(d * d);
    }
    return std::sqrt((R - 1.0) / R * ss.value());
}

namespace detail {

struct ResolvedDesign {
    DesignKind kind;
    int n = 0;
    int n_full = 0;                           // DET variants
    std::optional<DesignDistribution> dist;   // pattern-sampling designs
    std::optional<MvnParams> impute_params;   // DET variants, setup 2
};

// Run a function over replicate indices, possibly on several threads.
// Results are written into per-replicate slots, so the outcome does not
// depend on the thread count.
template <class F>
void parallel_for(int R, int threads, F&& body) {
    if (threads <= 1) {
        for (int r = 0; r < R; ++r) body(r);
        return;
    }
    std::atomic<int> next{0};
    auto worker = [&] {
        for (int r = next.fetch_add(1); r < R; r = next.fetch_add(1)) body(r);
    };
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
}

}  // namespace detail

// Monte-Carlo study: generate population, repeatedly sample + split +
// estimate, aggregate squared errors and relative efficiencies.
inline StudyResult run_study(const Scenario& sc) {
    const auto& pop_spec = sc.pop;
    int K = pop_spec.K();
    MatrixXd population = gen_population(pop_spec, split_seed(sc.seed, 1));
    VectorXd truth = population.colwise().mean();

    PatternSet ps = enumerate_patterns(K, 2);
    int J = ps.count();
    MvnParams true_mvn(pop_spec.mu(), pop_spec.sigma());

    // Sim-3 setup 2: a pilot "previous survey" with shifted means drives the
    // plug-in design and the imputation parameters.
    std::optional<MvnParams> pilot_params;
    if (sc.sim3_setup == 2) {
        auto rng = make_rng(sc.seed, 7);
        auto rows = detail::srs_rows(pop_spec.N, 100, rng);
        MatrixXd pilot(100, K);
        for (int i = 0; i < 100; ++i) pilot.row(i) = population.row(rows[i]);
        for (int k = 0; k < K; ++k)
            pilot.col(k).array() += k < K / 2 ? -0.2 : 0.2;
        VectorXd mu = pilot.colwise().mean();
        MatrixXd c = pilot.rowwise() - mu.transpose();
        MatrixXd sig = c.transpose() * c / 100.0;
        sig = 0.5 * (sig + sig.transpose());
        Eigen::LLT<MatrixXd> llt(sig);
        if (llt.info() != Eigen::Success)
            sig += 1e-6 * MatrixXd::Identity(K, K);
        pilot_params.emplace(mu, sig);
    }

    auto optimize_design = [&](auto&& crit) {
        OptimizerOptions opts;
        opts.orbits = group_orbit_labels(ps, pop_spec.q);
        OptResult r = optimize_local(crit, opts);
        return DesignDistribution(ps, r.probs);
    };

    // Criterion used for RE_A reporting (under the true parameters).
    auto eval_criterion = [&](const DesignDistribution& d) -> double {
        try {
            if (pop_spec.model == ModelTag::MVN)
                return a_criterion_mvn(true_mvn, d);
            ZmvlnParams zp(pop_spec.lambda(), pop_spec.mu(), pop_spec.sigma());
            return a_criterion_zmvln(zp, d);
        } catch (const std::exception&) {
            return std::numeric_limits<double>::quiet_NaN();
        }
    };

    std::vector<detail::ResolvedDesign> resolved;
    for (DesignKind kind : sc.designs) {
        detail::ResolvedDesign rd;
        rd.kind = kind;
        rd.n = sc.n;
        if (sc.sim3_setup == 1) {
            if (kind == DesignKind::DET1 || kind == DesignKind::DET2) {
                rd.n = 50 + 50 * K / 2;
                rd.n_full = 50;
            } else if (kind == DesignKind::FULL) {
                rd.n = 100;
            } else {
                rd.n = 100 * K / 2;
            }
        } else if (sc.sim3_setup == 2) {
            rd.n = kind == DesignKind::FULL ? 100 : 100 * K / 2;
            rd.n_full = 0;
            if (kind == DesignKind::DET1 || kind == DesignKind::DET2)
                rd.impute_params = pilot_params;
        }
        switch (kind) {
            case DesignKind::SRS:
                rd.dist = srs_design(ps);
                break;
            case DesignKind::OPT: {
                const MvnParams& base =
                    sc.sim3_setup == 2 ? *pilot_params : true_mvn;
                if (pop_spec.model == ModelTag::MVN) {
                    rd.dist = optimize_design(MvnCriterion(base, ps));
                } else {
                    ZmvlnParams zp(pop_spec.lambda(), pop_spec.mu(),
                                   pop_spec.sigma());
                    rd.dist = optimize_design(ZmvlnCriterion(zp, ps));
                }
                break;
            }
            case DesignKind::BAYES: {
                // Uniform prior on 0 < rho2 < rho1 < 1 over the structured
                // covariance family (fixed-draw sample average).
                auto sampler = [&](std::uint64_t attempt) {
                    auto rng = make_rng(sc.seed, 9000 + attempt);
                    std::uniform_real_distribution<double> unif(0.0, 1.0);
                    double r1 = unif(rng), r2 = unif(rng);
                    if (r2 > r1) std::swap(r1, r2);
                    return MvnCriterion(
                        MvnParams(pop_spec.mu(),
                                  block_covariance(pop_spec.g, pop_spec.q,
                                                   r1, r2)),
                        ps);
                };
                auto [draws, rejected] = make_bayes_draws<MvnCriterion>(
                    sampler, sc.bayes_draws, J);
                OptimizerOptions opts;
                opts.orbits = group_orbit_labels(ps, pop_spec.q);
                OptResult r = optimize_bayes(draws, opts);
                rd.dist = DesignDistribution(ps, r.probs);
                break;
            }
            case DesignKind::MINIMAX: {
                // Default grid: rho1 in {0.1,...,0.9}, rho2 < rho1.
                std::vector<MvnCriterion> members;
                for (int i1 = 1; i1 <= 9; ++i1)
                    for (int i2 = 1; i2 < i1; ++i2)
                        members.emplace_back(
                            MvnParams(pop_spec.mu(),
                                      block_covariance(pop_spec.g, pop_spec.q,
                                                       i1 / 10.0, i2 / 10.0)),
                            ps);
                OptimizerOptions opts;
                opts.orbits = group_orbit_labels(ps, pop_spec.q);
                OptResult r = optimize_minimax(members, opts);
                rd.dist = DesignDistribution(ps, r.probs);
                break;
            }
            case DesignKind::FULL: {
                PatternSet full;
                full.K = K;
                full.m = K;
                std::vector<int> all(K);
                std::iota(all.begin(), all.end(), 0);
                full.patterns.emplace_back(all);
                rd.dist = DesignDistribution(full, VectorXd::Ones(1));
                break;
            }
            case DesignKind::DET1:
            case DesignKind::DET2:
                break;  // mask plan built per replicate
        }
        resolved.push_back(std::move(rd));
    }

    StudyResult out;
    out.scenario = sc;
    out.truth = truth;
    int R = sc.replications;
    int D = static_cast<int>(resolved.size());
    std::vector<std::vector<double>> errs(D, std::vector<double>(R, 0.0));
    std::vector<std::vector<char>> failed(D, std::vector<char>(R, 0));

    detail::parallel_for(R, sc.threads, [&](int r) {
        for (int di = 0; di < D; ++di) {
            const auto& rd = resolved[di];
            std::uint64_t stream =
                10000 + static_cast<std::uint64_t>(r) * 64 + di;
            try {
                ObservedDataset data;
                if (rd.dist) {
                    data = apply_design(population, rd.n, *rd.dist,
                                        split_seed(sc.seed, stream));
                } else {
                    auto rng = make_rng(sc.seed, stream);
                    auto rows = detail::srs_rows(pop_spec.N, rd.n, rng);
                    data.values = MatrixXd::Zero(rd.n, K);
                    data.observed =
                        deterministic_design(rd.kind, K, rd.n, rd.n_full);
                    for (int i = 0; i < rd.n; ++i)
                        for (int k = 0; k < K; ++k)
                            if (data.observed(i, k))
                                data.values(i, k) = population(rows[i], k);
                }
                VectorXd est;
                if (rd.kind == DesignKind::DET1 ||
                    rd.kind == DesignKind::DET2) {
                    MvnParams ip = rd.impute_params
                                       ? *rd.impute_params
                                       : [&] {
                                             auto em = em_mvn(data, 1e-6, 500);
                                             return MvnParams(em.mu_hat,
                                                              em.sigma_hat);
                                         }();
                    auto completed = conditional_impute(
                        data, ip, sc.impute_draws,
                        split_seed(sc.seed, stream + 31));
                    est = imputed_mean(completed);
                } else if (pop_spec.model == ModelTag::MVN) {
                    est = em_mvn(data, 1e-7, 1000).mu_hat;
                } else {
                    est = estimate_zmvln(data, 1e-7, 1000).eta_hat;
                }
                double se = 0.0;
                for (int k = 0; k < K; ++k) {
                    double d = est(k) - truth(k);
                    se += d * d;
                }
                errs[di][r] = se;
            } catch (const std::exception&) {
                failed[di][r] = 1;
            }
        }
    });

    int srs_index = -1;
    for (int di = 0; di < D; ++di)
        if (resolved[di].kind == DesignKind::SRS) srs_index = di;

    for (int di = 0; di < D; ++di) {
        DesignResult dr;
        dr.kind = resolved[di].kind;
        dr.per_replicate = errs[di];
        for (char f : failed[di]) dr.failed_replicates += f;
        if (dr.failed_replicates > std::max(1, R / 100))
            throw std::runtime_error("more than 1% of replicates failed for " +
                                     design_name(dr.kind));
        KahanSum s;
        for (double e : errs[di]) s.add(e);
        dr.mse_sum_raw = s.value();
        dr.mse_sum = s.value() / (static_cast<double>(R) * K);
        if (resolved[di].dist) dr.criterion = eval_criterion(*resolved[di].dist);
        out.designs.push_back(std::move(dr));
    }
    if (srs_index >= 0) {
        const DesignResult& srs = out.designs[srs_index];
        for (int di = 0; di < D; ++di) {
            DesignResult& dr = out.designs[di];
            if (dr.mse_sum_raw > 0.0)
                dr.re_mse = srs.mse_sum_raw / dr.mse_sum_raw;
            if (std::isfinite(srs.criterion) && std::isfinite(dr.criterion))
                dr.re_a = srs.criterion / dr.criterion;
            if (di != srs_index)
                dr.se_re =
                    jackknife_se_re(srs.per_replicate, dr.per_replicate);
        }
    }
    return out;
}

}  // namespace sqd

#endif  // SQD_SIMULATION_HPP
