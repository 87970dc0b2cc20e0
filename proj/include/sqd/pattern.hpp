#ifndef SQD_PATTERN_HPP
#define SQD_PATTERN_HPP

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include "sqd/common.hpp"

namespace sqd {

// A split-questionnaire pattern: the set of question indices administered
// together. Indices are 0-based and kept strictly increasing.
struct Pattern {
    std::vector<int> items;

    explicit Pattern(std::vector<int> idx) : items(std::move(idx)) {
        require(!items.empty(), "pattern must be nonempty");
        std::sort(items.begin(), items.end());
        for (std::size_t i = 0; i + 1 < items.size(); ++i)
            require(items[i] < items[i + 1], "pattern indices must be distinct");
        require(items.front() >= 0, "pattern indices must be nonnegative");
    }

    int size() const { return static_cast<int>(items.size()); }
    bool contains(int k) const {
        return std::binary_search(items.begin(), items.end(), k);
    }
    bool operator==(const Pattern& o) const { return items == o.items; }
};

// All patterns under consideration: size-m subsets of {0, ..., K-1}.
struct PatternSet {
    int K = 0;
    int m = 0;
    std::vector<Pattern> patterns;

    int count() const { return static_cast<int>(patterns.size()); }
};

inline std::uint64_t binomial(int n, int k) {
    if (k < 0 || k > n) return 0;
    if (k > n - k) k = n - k;
    std::uint64_t r = 1;
    for (int i = 1; i <= k; ++i) r = r * static_cast<std::uint64_t>(n - k + i) / i;
    return r;
}

// Lexicographically ordered enumeration of all size-m subsets.
inline PatternSet enumerate_patterns(int K, int m,
                                     std::uint64_t cap = 100000) {
    require(m >= 1 && m <= K, "require 1 <= m <= K");
    std::uint64_t J = binomial(K, m);
    if (J > cap)
        throw std::invalid_argument("design space too large: C(" +
                                    std::to_string(K) + "," + std::to_string(m) +
                                    ") = " + std::to_string(J));
    PatternSet ps;
    ps.K = K;
    ps.m = m;
    ps.patterns.reserve(J);
    std::vector<int> idx(m);
    std::iota(idx.begin(), idx.end(), 0);
    while (true) {
        ps.patterns.emplace_back(idx);
        int i = m - 1;
        while (i >= 0 && idx[i] == K - m + i) --i;
        if (i < 0) break;
        ++idx[i];
        for (int t = i + 1; t < m; ++t) idx[t] = idx[t - 1] + 1;
    }
    return ps;
}

// A probability distribution over the patterns of a PatternSet.
struct DesignDistribution {
    PatternSet pattern_set;
    VectorXd probs;

    DesignDistribution(PatternSet ps, VectorXd p)
        : pattern_set(std::move(ps)), probs(std::move(p)) {
        require(probs.size() == pattern_set.count(),
                "probability vector length must equal pattern count");
        require(probs.minCoeff() >= 0.0, "probabilities must be nonnegative");
        require(std::abs(probs.sum() - 1.0) <= 1e-12,
                "probabilities must sum to 1");
    }
};

inline DesignDistribution srs_design(const PatternSet& ps) {
    int J = ps.count();
    require(J == static_cast<int>(binomial(ps.K, ps.m)),
            "srs_design requires a fully enumerated pattern set");
    return DesignDistribution(ps, VectorXd::Constant(J, 1.0 / J));
}

// p**_k: probability that item k is administered.
inline VectorXd item_inclusion(const DesignDistribution& d) {
    VectorXd p = VectorXd::Zero(d.pattern_set.K);
    for (int j = 0; j < d.pattern_set.count(); ++j)
        for (int k : d.pattern_set.patterns[j].items) p(k) += d.probs(j);
    return p;
}

// Two groups of q questions, m = 2: total mass pi spread uniformly over
// within-group pairs, 1 - pi over between-group pairs.
inline DesignDistribution symmetric_two_group_design(int q, double pi) {
    require(q >= 1, "q must be positive");
    require(pi >= 0.0 && pi <= 1.0, "pi must lie in [0,1]");
    if (q < 2 && pi > 0.0)
        throw std::invalid_argument(
            "no within-group pairs exist for q < 2; pi must be 0");
    PatternSet ps = enumerate_patterns(2 * q, 2);
    VectorXd probs(ps.count());
    for (int j = 0; j < ps.count(); ++j) {
        int a = ps.patterns[j].items[0];
        int b = ps.patterns[j].items[1];
        bool within = (a < q) == (b < q);
        probs(j) = within ? pi / (static_cast<double>(q) * (q - 1))
                          : (1.0 - pi) / (static_cast<double>(q) * q);
    }
    // Guard against accumulated rounding before the simplex check.
    probs /= probs.sum();
    return DesignDistribution(std::move(ps), std::move(probs));
}

}  // namespace sqd

#endif  // SQD_PATTERN_HPP
