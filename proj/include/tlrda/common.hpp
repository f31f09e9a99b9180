#pragma once

#include <Eigen/Dense>
#include <lapacke.h>

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace tlrda {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// Error taxonomy. The CLI maps these onto exit codes:
//   domain_error / contract_error -> 2, data_error -> 3, numerical_error -> 4.
struct error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct domain_error : error {
    using error::error;
};
struct contract_error : error {
    using error::error;
};
struct data_error : error {
    using error::error;
};
struct numerical_error : error {
    using error::error;
};

struct SymEig {
    VectorXd values;  // ascending
    MatrixXd vectors; // columns, empty when not requested
};

// Symmetric eigendecomposition through LAPACK (dsyevd). Eigen's built-in
// solver is fine for small matrices but too slow for the p=2000 Monte Carlo
// checks on a single core.
inline SymEig sym_eig(const MatrixXd& a, bool want_vectors = true) {
    if (a.rows() != a.cols())
        throw contract_error("sym_eig: matrix must be square");
    const lapack_int n = static_cast<lapack_int>(a.rows());
    SymEig out;
    out.values.resize(n);
    MatrixXd work = a;
    lapack_int info = LAPACKE_dsyevd(LAPACK_COL_MAJOR, want_vectors ? 'V' : 'N', 'L',
                                     n, work.data(), n, out.values.data());
    if (info != 0)
        throw numerical_error("sym_eig: LAPACK dsyevd failed, info=" + std::to_string(info));
    if (want_vectors)
        out.vectors = std::move(work);
    return out;
}

// Solve (a + shift*I) x = b for symmetric positive definite a + shift*I.
inline VectorXd shifted_solve(const MatrixXd& a, double shift, const VectorXd& b) {
    MatrixXd m = a;
    m.diagonal().array() += shift;
    Eigen::LDLT<MatrixXd> ldlt(m);
    if (ldlt.info() != Eigen::Success)
        throw numerical_error("shifted_solve: LDLT factorization failed");
    return ldlt.solve(b);
}

inline double relative_residual(const MatrixXd& a, const VectorXd& x, const VectorXd& b) {
    double nb = b.norm();
    if (nb == 0.0) return (a * x).norm();
    return (a * x - b).norm() / nb;
}

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Stable substream id from (seed, a, b, c); used so that every population /
// replicate / purpose gets an independent generator regardless of call order.
inline std::uint64_t derive_stream(std::uint64_t seed, std::uint64_t a,
                                   std::uint64_t b = 0, std::uint64_t c = 0) {
    std::uint64_t h = splitmix64(seed ^ 0x243f6a8885a308d3ULL);
    h = splitmix64(h ^ splitmix64(a));
    h = splitmix64(h ^ splitmix64(b ^ 0x13198a2e03707344ULL));
    h = splitmix64(h ^ splitmix64(c ^ 0xa4093822299f31d0ULL));
    return h;
}

// mt19937_64 with a hand-rolled Box-Muller on top. std::normal_distribution
// is not bit-identical across standard libraries, this is.
struct GaussianRng {
    std::mt19937_64 eng;
    double spare = 0.0;
    bool has_spare = false;

    explicit GaussianRng(std::uint64_t stream) : eng(stream) {}

    double uniform() { // (0, 1]
        return static_cast<double>((eng() >> 11) + 1) * 0x1.0p-53;
    }

    double normal() {
        if (has_spare) {
            has_spare = false;
            return spare;
        }
        double r = std::sqrt(-2.0 * std::log(uniform()));
        double t = 6.283185307179586477 * uniform();
        spare = r * std::sin(t);
        has_spare = true;
        return r * std::cos(t);
    }

    VectorXd normal_vector(int n) {
        VectorXd v(n);
        for (int i = 0; i < n; ++i) v[i] = normal();
        return v;
    }

    MatrixXd normal_matrix(int rows, int cols) {
        MatrixXd m(rows, cols);
        for (int j = 0; j < cols; ++j)
            for (int i = 0; i < rows; ++i) m(i, j) = normal();
        return m;
    }
};

} // namespace tlrda
