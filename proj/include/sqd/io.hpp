#ifndef SQD_IO_HPP
#define SQD_IO_HPP

#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "sqd/estimation.hpp"
#include "sqd/mvn.hpp"
#include "sqd/pattern.hpp"
#include "sqd/simulation.hpp"
#include "sqd/zmvln.hpp"

namespace sqd {

using nlohmann::json;

inline std::string format_sig12(double x) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.12g", x);
    return buf;
}

// Design JSON: {"K", "m", "patterns" (0-based), "probs", "item_inclusion"};
// probabilities carry 12 significant digits.
inline json design_to_json(const DesignDistribution& d) {
    json j;
    j["K"] = d.pattern_set.K;
    j["m"] = d.pattern_set.m;
    json pats = json::array();
    for (const Pattern& p : d.pattern_set.patterns) pats.push_back(p.items);
    j["patterns"] = std::move(pats);
    json probs = json::array();
    for (int i = 0; i < d.probs.size(); ++i)
        probs.push_back(json::parse(format_sig12(d.probs(i))));
    j["probs"] = std::move(probs);
    VectorXd incl = item_inclusion(d);
    json inc = json::array();
    for (int k = 0; k < incl.size(); ++k)
        inc.push_back(json::parse(format_sig12(incl(k))));
    j["item_inclusion"] = std::move(inc);
    return j;
}

inline DesignDistribution design_from_json(const json& j) {
    PatternSet ps;
    ps.K = j.at("K").get<int>();
    ps.m = j.at("m").get<int>();
    for (const auto& p : j.at("patterns"))
        ps.patterns.emplace_back(p.get<std::vector<int>>());
    auto pv = j.at("probs").get<std::vector<double>>();
    VectorXd probs = Eigen::Map<VectorXd>(pv.data(), pv.size());
    // 12-significant-digit serialization can leave the sum a few ulps off.
    double s = probs.sum();
    require(std::abs(s - 1.0) <= 1e-9, "probabilities must sum to 1");
    probs /= s;
    return DesignDistribution(std::move(ps), std::move(probs));
}

inline VectorXd vector_from_json(const json& j) {
    auto v = j.get<std::vector<double>>();
    return Eigen::Map<VectorXd>(v.data(), v.size());
}

inline MatrixXd matrix_from_json(const json& j) {
    auto rows = j.get<std::vector<std::vector<double>>>();
    require(!rows.empty(), "empty matrix");
    MatrixXd M(rows.size(), rows[0].size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        require(rows[i].size() == rows[0].size(), "ragged matrix");
        for (std::size_t k = 0; k < rows[i].size(); ++k) M(i, k) = rows[i][k];
    }
    return M;
}

// {"mu": [...], "sigma": [[...], ...]}
inline MvnParams mvn_params_from_json(const json& j) {
    return MvnParams(vector_from_json(j.at("mu")),
                     matrix_from_json(j.at("sigma")));
}

// {"lambda": [...], "mu": [...], "sigma": [[...], ...]}
inline ZmvlnParams zmvln_params_from_json(const json& j) {
    return ZmvlnParams(vector_from_json(j.at("lambda")),
                       vector_from_json(j.at("mu")),
                       matrix_from_json(j.at("sigma")));
}

inline json load_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    return json::parse(in);
}

// CSV with a header row of item names; empty cell = not administered,
// "0" = administered with a zero response.
inline std::pair<ObservedDataset, std::vector<std::string>> read_csv(
    std::istream& in) {
    std::string line;
    require(static_cast<bool>(std::getline(in, line)), "CSV needs a header row");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::vector<std::string> header;
    {
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) header.push_back(cell);
    }
    int K = static_cast<int>(header.size());
    std::vector<std::vector<double>> vals;
    std::vector<std::vector<bool>> mask;
    int row_no = 1;
    while (std::getline(in, line)) {
        ++row_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string cell;
        std::vector<double> v;
        std::vector<bool> m;
        for (int k = 0; k < K; ++k) {
            if (!std::getline(ss, cell, ',')) cell.clear();
            if (cell.empty()) {
                v.push_back(0.0);
                m.push_back(false);
            } else {
                try {
                    std::size_t pos = 0;
                    double x = std::stod(cell, &pos);
                    require(pos == cell.size(), "trailing characters");
                    v.push_back(x);
                    m.push_back(true);
                } catch (const std::exception&) {
                    throw std::runtime_error("unparseable CSV cell at row " +
                                             std::to_string(row_no));
                }
            }
        }
        vals.push_back(std::move(v));
        mask.push_back(std::move(m));
    }
    ObservedDataset ds;
    int n = static_cast<int>(vals.size());
    ds.values = MatrixXd::Zero(n, K);
    ds.observed.setConstant(n, K, false);
    for (int i = 0; i < n; ++i)
        for (int k = 0; k < K; ++k) {
            ds.values(i, k) = vals[i][k];
            ds.observed(i, k) = mask[i][k];
        }
    return {std::move(ds), std::move(header)};
}

inline std::pair<ObservedDataset, std::vector<std::string>> read_csv_file(
    const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    return read_csv(in);
}

inline json study_result_to_json(const StudyResult& res) {
    json j;
    j["g"] = res.scenario.pop.g;
    j["q"] = res.scenario.pop.q;
    j["rho1"] = res.scenario.pop.rho1;
    j["rho2"] = res.scenario.pop.rho2;
    j["model"] = res.scenario.pop.model == ModelTag::MVN ? "mvn" : "zmvln";
    j["n"] = res.scenario.n;
    j["replications"] = res.scenario.replications;
    j["seed"] = res.scenario.seed;
    json designs = json::array();
    for (const auto& d : res.designs) {
        json dj;
        dj["design"] = design_name(d.kind);
        dj["mse_sum"] = d.mse_sum;
        dj["mse_sum_raw"] = d.mse_sum_raw;
        dj["criterion"] = d.criterion;
        dj["re_mse"] = d.re_mse;
        dj["re_a"] = d.re_a;
        dj["se_re"] = d.se_re;
        dj["failed_replicates"] = d.failed_replicates;
        designs.push_back(std::move(dj));
    }
    j["designs"] = std::move(designs);
    return j;
}

inline std::string study_result_to_csv(const StudyResult& res) {
    std::ostringstream out;
    out << "g,q,rho1,rho2,model,n,design,mse_sum,mse_sum_raw,criterion,"
           "re_mse,re_a,se_re\n";
    for (const auto& d : res.designs) {
        out << res.scenario.pop.g << ',' << res.scenario.pop.q << ','
            << res.scenario.pop.rho1 << ',' << res.scenario.pop.rho2 << ','
            << (res.scenario.pop.model == ModelTag::MVN ? "mvn" : "zmvln")
            << ',' << res.scenario.n << ',' << design_name(d.kind) << ','
            << format_sig12(d.mse_sum) << ',' << format_sig12(d.mse_sum_raw)
            << ',' << format_sig12(d.criterion) << ','
            << format_sig12(d.re_mse) << ',' << format_sig12(d.re_a) << ','
            << format_sig12(d.se_re) << '\n';
    }
    return out.str();
}

inline Scenario scenario_from_json(const json& j) {
    Scenario sc;
    sc.pop.g = j.at("g").get<int>();
    sc.pop.q = j.at("q").get<int>();
    sc.pop.rho1 = j.at("rho1").get<double>();
    sc.pop.rho2 = j.at("rho2").get<double>();
    std::string model = j.value("model", "mvn");
    sc.pop.model = model == "zmvln" ? ModelTag::ZMVLN : ModelTag::MVN;
    if (j.contains("lambda_profile"))
        sc.pop.lambda_profile =
            j.at("lambda_profile").get<std::vector<double>>();
    sc.pop.N = j.value("N", 100000);
    sc.n = j.value("n", 1000);
    sc.replications = j.value("replications", 200);
    sc.seed = j.value("seed", static_cast<std::uint64_t>(20240915));
    sc.sim3_setup = j.value("sim3_setup", 0);
    sc.impute_draws = j.value("impute_draws", 20);
    sc.bayes_draws = j.value("bayes_draws", 200);
    sc.threads = j.value("threads", 1);
    sc.designs.clear();
    for (const auto& name : j.at("designs")) {
        std::string s = name.get<std::string>();
        if (s == "SRS") sc.designs.push_back(DesignKind::SRS);
        else if (s == "OPT") sc.designs.push_back(DesignKind::OPT);
        else if (s == "BAYES") sc.designs.push_back(DesignKind::BAYES);
        else if (s == "MINIMAX") sc.designs.push_back(DesignKind::MINIMAX);
        else if (s == "DET1") sc.designs.push_back(DesignKind::DET1);
        else if (s == "DET2") sc.designs.push_back(DesignKind::DET2);
        else if (s == "FULL") sc.designs.push_back(DesignKind::FULL);
        else throw std::runtime_error("unknown design name: " + s);
    }
    return sc;
}

}  // namespace sqd

#endif  // SQD_IO_HPP
