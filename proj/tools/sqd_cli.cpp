// Command-line front end: design (pilot-driven), simulate (scenario runner),
// evaluate (criterion report), theory (closed-form curves).

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "sqd/estimation.hpp"
#include "sqd/io.hpp"
#include "sqd/mvn.hpp"
#include "sqd/optimizer.hpp"
#include "sqd/pattern.hpp"
#include "sqd/simulation.hpp"
#include "sqd/theory.hpp"
#include "sqd/zmvln.hpp"

namespace {

using namespace sqd;

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << text;
}

// Inverse-Wishart draws centered at sigma_hat (Bartlett construction), used
// as the pilot-uncertainty prior for the Bayes variant.
MatrixXd inverse_wishart_draw(const MatrixXd& sigma_hat, int df,
                              std::mt19937_64& rng) {
    int K = static_cast<int>(sigma_hat.rows());
    // Sigma ~ IW(Psi, df) with Psi = (df - K - 1) sigma_hat has mean sigma_hat.
    MatrixXd psi = (df - K - 1) * sigma_hat;
    Eigen::LLT<MatrixXd> llt(psi.inverse());
    MatrixXd Lp = llt.matrixL();
    std::normal_distribution<double> gauss(0.0, 1.0);
    MatrixXd A = MatrixXd::Zero(K, K);
    for (int i = 0; i < K; ++i) {
        std::chi_squared_distribution<double> chi(df - i);
        A(i, i) = std::sqrt(chi(rng));
        for (int j = 0; j < i; ++j) A(i, j) = gauss(rng);
    }
    MatrixXd W = Lp * A * A.transpose() * Lp.transpose();  // Wishart(Psi^{-1})
    return W.inverse();
}

struct DesignArgs {
    std::string pilot;
    std::string model = "mvn";
    int m = 2;
    std::string variant = "local";
    int bayes_draws = 200;
    int minimax_grid = 5;
    std::uint64_t seed = 20240915;
    std::string out = "design.json";
};

int cmd_design(const DesignArgs& a) {
    auto [data, header] = read_csv_file(a.pilot);
    int K = data.K();
    PatternSet ps = enumerate_patterns(K, a.m);
    int J = ps.count();
    OptimizerOptions opts;

    OptResult res;
    double a_srs = 0.0, a_opt = 0.0;
    auto d_srs = srs_design(ps);

    auto run_variants = [&](auto make_local, auto make_draw) {
        using Crit = decltype(make_local());
        if (a.variant == "local") {
            Crit crit = make_local();
            res = optimize_local(crit, opts);
            a_srs = crit.value(d_srs.probs);
        } else if (a.variant == "bayes") {
            auto [draws, rejected] =
                make_bayes_draws<Crit>(make_draw, a.bayes_draws, J);
            res = optimize_bayes(draws, opts);
            res.rejected_draws = rejected;
            KahanSum s;
            for (const auto& c : draws) s.add(c.value(d_srs.probs));
            a_srs = s.value() / draws.size();
        } else {  // minimax
            std::vector<Crit> members;
            for (int i = 0; i < a.minimax_grid; ++i)
                members.push_back(make_draw(static_cast<std::uint64_t>(i)));
            res = optimize_minimax(members, opts);
            double worst = 0.0;
            for (const auto& c : members)
                worst = std::max(worst, c.value(d_srs.probs));
            a_srs = worst;
        }
        a_opt = res.criterion;
    };

    if (a.model == "mvn") {
        auto em = em_mvn(data);
        MvnParams base(em.mu_hat, em.sigma_hat);
        int df = std::max(data.n(), K + 3);
        run_variants(
            [&] { return MvnCriterion(base, ps); },
            [&](std::uint64_t i) {
                auto rng = make_rng(a.seed, 500 + i);
                return MvnCriterion(
                    MvnParams(base.mu,
                              inverse_wishart_draw(base.sigma, df, rng)),
                    ps);
            });
    } else {
        auto est = estimate_zmvln(data);
        require(est.lambda_hat.minCoeff() > 0.0,
                "pilot has an all-zero item; cannot fit the lognormal part");
        ZmvlnParams base(est.lambda_hat.cwiseMin(1.0 - 1e-6).cwiseMax(1e-6),
                         est.mu_hat, est.sigma_hat);
        int df = std::max(data.n(), K + 3);
        run_variants(
            [&] { return ZmvlnCriterion(base, ps); },
            [&](std::uint64_t i) {
                auto rng = make_rng(a.seed, 500 + i);
                return ZmvlnCriterion(
                    ZmvlnParams(base.lambda, base.mu,
                                inverse_wishart_draw(base.sigma, df, rng)),
                    ps);
            });
    }

    DesignDistribution d(ps, res.probs);
    json j = design_to_json(d);
    j["model"] = a.model;
    j["variant"] = a.variant;
    j["criterion"] = json::parse(format_sig12(a_opt));
    j["criterion_srs"] = json::parse(format_sig12(a_srs));
    j["seed"] = a.seed;
    write_text(a.out, j.dump(2) + "\n");

    std::printf("design written to %s\n", a.out.c_str());
    std::printf("model=%s variant=%s K=%d m=%d patterns=%d\n", a.model.c_str(),
                a.variant.c_str(), K, a.m, J);
    std::printf("criterion (SRS)       = %s\n", format_sig12(a_srs).c_str());
    std::printf("criterion (optimized) = %s\n", format_sig12(a_opt).c_str());
    std::printf("RE_A                  = %s\n",
                format_sig12(a_srs / a_opt).c_str());
    std::printf("iterations=%d converged=%d\n", res.iterations,
                res.converged ? 1 : 0);
    return 0;
}

struct SimArgs {
    std::string scenario;
    std::string profile = "desk";
    int threads = 0;
    std::uint64_t seed = 0;
    bool seed_set = false;
    std::string out = "study";
};

int cmd_simulate(const SimArgs& a) {
    Scenario sc = scenario_from_json(load_json_file(a.scenario));
    if (a.seed_set) sc.seed = a.seed;
    if (a.threads > 0)
        sc.threads = a.threads;
    else if (sc.threads <= 0)
        sc.threads = std::max(1u, std::thread::hardware_concurrency());
    if (a.profile == "paper") sc.replications *= 5;
    StudyResult res = run_study(sc);
    write_text(a.out + ".json", study_result_to_json(res).dump(2) + "\n");
    write_text(a.out + ".csv", study_result_to_csv(res));
    std::printf("wrote %s.json and %s.csv\n", a.out.c_str(), a.out.c_str());
    for (const auto& d : res.designs)
        std::printf("%-7s mse_sum=%-14s re_mse=%-10s re_a=%-10s se=%s\n",
                    design_name(d.kind).c_str(),
                    format_sig12(d.mse_sum).c_str(),
                    format_sig12(d.re_mse).c_str(),
                    format_sig12(d.re_a).c_str(),
                    format_sig12(d.se_re).c_str());
    return 0;
}

struct EvalArgs {
    std::string design;
    std::string params;
    std::string model = "mvn";
    std::string out;
};

int cmd_evaluate(const EvalArgs& a) {
    DesignDistribution d = design_from_json(load_json_file(a.design));
    json pj = load_json_file(a.params);
    std::ostringstream rep;
    double crit = 0.0;
    VectorXd avar;
    if (a.model == "mvn") {
        MvnParams p = mvn_params_from_json(pj);
        MvnCriterion c(p, d.pattern_set);
        crit = c.value(d.probs);
        MatrixXd M = c.mu_fisher(d.probs);
        avar = M.inverse().diagonal();
    } else {
        ZmvlnParams p = zmvln_params_from_json(pj);
        ZmvlnCriterion c(p, d.pattern_set);
        crit = c.value(d.probs);
        MatrixXd I = c.fisher(d.probs);
        auto [eta, C] = eta_and_jacobian(p);
        avar = (C * I.inverse() * C.transpose()).diagonal();
    }
    rep << "criterion = " << format_sig12(crit) << "\n";
    VectorXd incl = item_inclusion(d);
    rep << "item,inclusion,asymptotic_variance\n";
    for (int k = 0; k < incl.size(); ++k)
        rep << k << ',' << format_sig12(incl(k)) << ','
            << format_sig12(avar(k)) << "\n";
    std::string text = rep.str();
    if (!a.out.empty()) write_text(a.out, text);
    std::fputs(text.c_str(), stdout);
    return 0;
}

struct TheoryArgs {
    std::vector<int> q = {2, 4, 8, 16, 32, 64, 128, 256};
    double rho1 = 0.8;
    double rho2 = 0.2;
    std::string out;
};

int cmd_theory(const TheoryArgs& a) {
    std::ostringstream out;
    out << "q,rho1,rho2,pi_srs,pi_opt,A_srs,A_opt,re,re_limit\n";
    double lim = re_limit(a.rho1, a.rho2);
    for (int q : a.q) {
        TwoGroupSpec spec(q, a.rho1, a.rho2);
        double ps = pi_srs(q), po = pi_opt(spec);
        double as = a_pi(spec, ps), ao = a_pi(spec, po);
        out << q << ',' << a.rho1 << ',' << a.rho2 << ','
            << format_sig12(ps) << ',' << format_sig12(po) << ','
            << format_sig12(as) << ',' << format_sig12(ao) << ','
            << format_sig12(as / ao) << ',' << format_sig12(lim) << "\n";
    }
    std::string text = out.str();
    if (!a.out.empty()) write_text(a.out, text);
    std::fputs(text.c_str(), stdout);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"A-optimal split questionnaire designs"};
    app.require_subcommand(1);

    DesignArgs da;
    auto* design = app.add_subcommand(
        "design", "estimate parameters from a pilot CSV and optimize");
    design->add_option("--pilot", da.pilot, "pilot CSV path")->required();
    design->add_option("--model", da.model)->check(CLI::IsMember({"mvn", "zmvln"}));
    design->add_option("--m", da.m, "questions per pattern");
    design->add_option("--variant", da.variant)
        ->check(CLI::IsMember({"local", "bayes", "minimax"}));
    design->add_option("--bayes-draws", da.bayes_draws);
    design->add_option("--minimax-grid", da.minimax_grid);
    design->add_option("--seed", da.seed);
    design->add_option("--out", da.out);

    SimArgs sa;
    auto* simulate =
        app.add_subcommand("simulate", "run a Monte-Carlo scenario file");
    simulate->add_option("--scenario", sa.scenario, "scenario JSON path")
        ->required();
    simulate->add_option("--profile", sa.profile)
        ->check(CLI::IsMember({"desk", "paper"}));
    simulate->add_option("--threads", sa.threads);
    simulate->add_option("--seed", sa.seed)
        ->each([&](const std::string&) { sa.seed_set = true; });
    simulate->add_option("--out", sa.out, "output path prefix");

    EvalArgs ea;
    auto* evaluate =
        app.add_subcommand("evaluate", "report the criterion of a design");
    evaluate->add_option("--design", ea.design, "design JSON")->required();
    evaluate->add_option("--params", ea.params, "parameter JSON")->required();
    evaluate->add_option("--model", ea.model)
        ->check(CLI::IsMember({"mvn", "zmvln"}));
    evaluate->add_option("--out", ea.out);

    TheoryArgs ta;
    auto* theory =
        app.add_subcommand("theory", "closed-form two-group design curves");
    theory->add_option("--q", ta.q, "group sizes");
    theory->add_option("--rho1", ta.rho1);
    theory->add_option("--rho2", ta.rho2);
    theory->add_option("--out", ta.out);

    CLI11_PARSE(app, argc, argv);
    try {
        if (design->parsed()) return cmd_design(da);
        if (simulate->parsed()) return cmd_simulate(sa);
        if (evaluate->parsed()) return cmd_evaluate(ea);
        if (theory->parsed()) return cmd_theory(ta);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
