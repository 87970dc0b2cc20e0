#ifndef SQD_COMMON_HPP
#define SQD_COMMON_HPP

#include <cstdint>
#include <numeric>
#include <random>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

namespace sqd {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// Counter-based seed derivation: every consumer of randomness hashes the
// root seed together with a stream id, so replicates are order-independent.
inline std::uint64_t split_seed(std::uint64_t root, std::uint64_t stream) {
    std::uint64_t z = root + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline std::mt19937_64 make_rng(std::uint64_t root, std::uint64_t stream) {
    return std::mt19937_64(split_seed(root, stream));
}

// Compensated (Kahan) accumulator; reduction results must not depend on
// summation order beyond 1e-12.
class KahanSum {
  public:
    void add(double x) {
        double y = x - c_;
        double t = s_ + y;
        c_ = (t - s_) - y;
        s_ = t;
    }
    double value() const { return s_; }

  private:
    double s_ = 0.0;
    double c_ = 0.0;
};

// vech convention: stack columns of the lower triangle, diagonal included.
inline int vech_size(int K) { return K * (K + 1) / 2; }

// Position of element (i, j), i >= j, within vech of a K x K symmetric matrix.
inline int vech_index(int K, int i, int j) {
    if (j > i) std::swap(i, j);
    return j * K - j * (j - 1) / 2 + (i - j);
}

inline VectorXd vech(const MatrixXd& S) {
    int K = static_cast<int>(S.rows());
    VectorXd v(vech_size(K));
    int idx = 0;
    for (int j = 0; j < K; ++j)
        for (int i = j; i < K; ++i) v(idx++) = S(i, j);
    return v;
}

inline MatrixXd unvech(const VectorXd& v, int K) {
    MatrixXd S(K, K);
    int idx = 0;
    for (int j = 0; j < K; ++j)
        for (int i = j; i < K; ++i) {
            S(i, j) = v(idx);
            S(j, i) = v(idx);
            ++idx;
        }
    return S;
}

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw std::invalid_argument(msg);
}

}  // namespace sqd

#endif  // SQD_COMMON_HPP
