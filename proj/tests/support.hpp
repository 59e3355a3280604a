#pragma once

// Shared helpers for the test suite.

#include <Eigen/Core>

#include "emstad/em.hpp"
#include "emstad/hermitian.hpp"
#include "emstad/rng.hpp"

namespace test {

inline emstad::CVec random_vec(int n, emstad::TrialRng& rng) {
    emstad::CVec v(n);
    for (int i = 0; i < n; ++i) v(i) = rng.complex_normal();
    return v;
}

inline Eigen::MatrixXcd random_matrix(Eigen::Index rows, Eigen::Index cols, emstad::TrialRng& rng) {
    Eigen::MatrixXcd m(rows, cols);
    for (Eigen::Index j = 0; j < cols; ++j)
        for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = rng.complex_normal();
    return m;
}

/// G G^H + 0.1 I.
inline emstad::CMat random_pd(int n, emstad::TrialRng& rng) {
    const Eigen::MatrixXcd g = random_matrix(n, n, rng);
    emstad::CMat a = g * g.adjoint();
    a.diagonal().array() += 0.1;
    return (a + a.adjoint()) * 0.5;
}

/// Valid responsibilities with entries bounded away from 0 and 1.
inline emstad::Responsibilities random_resp(Eigen::Index bins, Eigen::Index angles, emstad::TrialRng& rng) {
    emstad::Responsibilities r;
    r.q.resize(bins, 2);
    r.r.resize(bins, angles);
    for (Eigen::Index k = 0; k < bins; ++k) {
        const double q1 = 0.05 + 0.9 * rng.uniform();
        r.q(k, 0) = 1.0 - q1;
        r.q(k, 1) = q1;
        double total = 0.0;
        for (Eigen::Index n = 0; n < angles; ++n) {
            r.r(k, n) = 0.1 + rng.uniform();
            total += r.r(k, n);
        }
        r.r.row(k) /= total;
    }
    return r;
}

} // namespace test
