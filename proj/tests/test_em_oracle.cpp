// Closed-form M-step updates against brute-force maximizers on tiny
// instances (N = 2, K = 3, two grid angles), plus the per-update bound
// monotonicity of the complete-data objective.

#include <catch_amalgamated.hpp>

#include <Eigen/Dense>

#include "emstad/em.hpp"
#include "emstad/scene.hpp"
#include "oracle.hpp"
#include "support.hpp"

using namespace emstad;

namespace {

constexpr int kN = 2;
constexpr int kK = 3;
constexpr std::uint64_t kSeeds = 100;

struct Instance {
    SteeringTable steering{AngleGrid(std::vector<double>{-16.0, 4.0}), kN};
    DataMatrix z;
    Responsibilities resp;
    Eigen::MatrixXcd alpha;
};

Instance make_instance(std::uint64_t seed) {
    TrialRng rng = derive_trial_rng(0x0AC1E, seed);
    Instance in;
    const CMat l = test::random_pd(kN, rng);
    in.z = HermitianPd(l).factor() * test::random_matrix(kN, kK, rng);
    in.z.col(1) += cd(2.0, 1.0) * steering_vector(4.0, kN);
    in.resp = test::random_resp(kK, 2, rng);
    in.alpha = test::random_matrix(kK, 2, rng);
    return in;
}

// (z - a v)(z - a v)^H summed with the responsibilities, written out as a
// plain double loop.
Eigen::MatrixXcd oracle_scatter(const Instance& in, const Eigen::MatrixXcd& alpha) {
    Eigen::MatrixXcd s = Eigen::MatrixXcd::Zero(kN, kN);
    for (int k = 0; k < kK; ++k) {
        const Eigen::VectorXcd z = in.z.col(k);
        s += in.resp.q(k, 0) * z * z.adjoint();
        for (int n = 0; n < 2; ++n) {
            const Eigen::VectorXcd e = z - alpha(k, n) * Eigen::VectorXcd(in.steering.column(n));
            s += in.resp.q(k, 1) * in.resp.r(k, n) * e * e.adjoint();
        }
    }
    return s;
}

// M-dependent part of the complete-data objective.
double covariance_objective(const Instance& in, const Eigen::MatrixXcd& m) {
    const Eigen::MatrixXcd s = oracle_scatter(in, in.alpha);
    const double det = m.determinant().real();
    if (!(det > 0.0)) return -std::numeric_limits<double>::infinity();
    return -kK * std::log(det) - (m.inverse() * s).trace().real();
}

Eigen::MatrixXcd from_cholesky_params(const std::vector<double>& x) {
    Eigen::MatrixXcd l = Eigen::MatrixXcd::Zero(2, 2);
    l(0, 0) = std::exp(x[0]);
    l(1, 1) = std::exp(x[1]);
    l(1, 0) = cd(x[2], x[3]);
    return l * l.adjoint();
}

} // namespace

TEST_CASE("oracle: mixing weights maximize the class term", "[em][oracle]") {
    for (std::uint64_t seed = 0; seed < kSeeds; ++seed) {
        const Instance in = make_instance(seed);
        double s0 = 0.0, s1 = 0.0;
        for (int k = 0; k < kK; ++k) {
            s0 += in.resp.q(k, 0);
            s1 += in.resp.q(k, 1);
        }
        const double best = oracle::minimize_1d(
            [&](double p1) { return -(s0 * std::log(1.0 - p1) + s1 * std::log(p1)); }, 1e-9, 1.0 - 1e-9);
        const auto pi = update_mixing(in.resp);
        CHECK(std::abs(pi[1] - best) < 1e-4);
        CHECK(std::abs(pi[0] + pi[1] - 1.0) < 1e-12);
    }
}

TEST_CASE("oracle: angle PMF maximizes the angle term", "[em][oracle]") {
    for (std::uint64_t seed = 0; seed < kSeeds; ++seed) {
        const Instance in = make_instance(seed);
        double w0 = 0.0, w1 = 0.0;
        for (int k = 0; k < kK; ++k) {
            w0 += in.resp.q(k, 1) * in.resp.r(k, 0);
            w1 += in.resp.q(k, 1) * in.resp.r(k, 1);
        }
        const double best = oracle::minimize_1d(
            [&](double p0) { return -(w0 * std::log(p0) + w1 * std::log(1.0 - p0)); }, 1e-9, 1.0 - 1e-9);
        const Eigen::VectorXd p = update_angle_pmf(in.resp);
        CHECK(std::abs(p(0) - best) < 1e-4);
        CHECK((p.array() >= 0.0).all());
        CHECK(std::abs(p.sum() - 1.0) < 1e-12);
    }
}

TEST_CASE("oracle: covariance update equals the double-sum scatter", "[em][oracle]") {
    for (std::uint64_t seed = 0; seed < kSeeds; ++seed) {
        const Instance in = make_instance(seed);
        const Eigen::MatrixXcd expected = oracle_scatter(in, in.alpha) / static_cast<double>(kK);
        const CMat m = update_covariance(in.z, in.resp, in.alpha, in.steering).matrix();
        CHECK((m - expected).norm() <= 1e-13 * expected.norm());
        CHECK((m - m.adjoint()).norm() <= 1e-12 * m.norm());
    }
}

TEST_CASE("oracle: covariance update maximizes the M term", "[em][oracle]") {
    for (std::uint64_t seed = 0; seed < kSeeds; ++seed) {
        const Instance in = make_instance(seed);
        const auto x = oracle::minimize(
            [&](const std::vector<double>& v) { return -covariance_objective(in, from_cholesky_params(v)); },
            {0.0, 0.0, 0.0, 0.0});
        const Eigen::MatrixXcd brute = from_cholesky_params(x);
        const CMat closed = update_covariance(in.z, in.resp, in.alpha, in.steering).matrix();
        CHECK((brute - closed).cwiseAbs().maxCoeff() < 1e-4 * std::max(1.0, closed.norm()));
        CHECK(covariance_objective(in, closed) >= covariance_objective(in, brute) - 1e-9);
    }
}

TEST_CASE("oracle: each amplitude step minimizes the determinant over its column", "[em][oracle]") {
    for (std::uint64_t seed = 0; seed < kSeeds; ++seed) {
        const Instance in = make_instance(seed);
        Eigen::MatrixXcd alpha = in.alpha;
        CMat scatter = scatter_sum(in.z, in.resp, alpha, in.steering);
        for (std::size_t n = 0; n < 2; ++n) {
            const auto col = static_cast<Eigen::Index>(n);
            const auto det_with = [&](const std::vector<double>& x) {
                Eigen::MatrixXcd trial = alpha;
                for (int k = 0; k < kK; ++k) trial(k, col) = cd(x[2 * k], x[2 * k + 1]);
                return oracle_scatter(in, trial).determinant().real();
            };
            std::vector<double> start;
            for (int k = 0; k < kK; ++k) {
                start.push_back(alpha(k, col).real());
                start.push_back(alpha(k, col).imag());
            }
            const auto x = oracle::minimize(det_with, start);

            amplitude_sweep_step(in.z, in.resp, alpha, in.steering, n, scatter, 1e-10);
            for (int k = 0; k < kK; ++k) {
                CHECK(std::abs(alpha(k, col) - cd(x[2 * k], x[2 * k + 1])) < 1e-4 * std::max(1.0, std::abs(alpha(k, col))));
            }
            // The incrementally maintained scatter stays equal to a fresh one.
            const Eigen::MatrixXcd fresh = oracle_scatter(in, alpha);
            CHECK((scatter - fresh).norm() < 1e-10 * fresh.norm());
        }
    }
}

TEST_CASE("oracle: amplitude determinant is minimal on a 41x41 perturbation grid", "[em][oracle]") {
    const SteeringTable one(AngleGrid(std::vector<double>{0.0}), 2);
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        TrialRng rng = derive_trial_rng(0x41, seed);
        const DataMatrix z = test::random_matrix(2, 2, rng);
        Responsibilities resp = test::random_resp(2, 1, rng);
        const Eigen::MatrixXcd alpha = update_amplitudes(z, resp, test::random_matrix(2, 1, rng), one, EmConfig{});
        const double best = scatter_sum(z, resp, alpha, one).determinant().real();
        for (int k = 0; k < 2; ++k) {
            double lowest = std::numeric_limits<double>::infinity();
            for (int i = -20; i <= 20; ++i) {
                for (int j = -20; j <= 20; ++j) {
                    Eigen::MatrixXcd trial = alpha;
                    trial(k, 0) += cd(0.05 * i, 0.05 * j);
                    lowest = std::min(lowest, scatter_sum(z, resp, trial, one).determinant().real());
                }
            }
            CHECK(best <= lowest * (1.0 + 1e-12));
        }
    }
}

TEST_CASE("amplitude step stays finite when a bin carries no weight", "[em]") {
    Instance in = make_instance(5);
    in.resp.q(1, 0) = 1.0;
    in.resp.q(1, 1) = 0.0;
    Eigen::MatrixXcd alpha = in.alpha;
    CMat scatter = scatter_sum(in.z, in.resp, alpha, in.steering);
    amplitude_sweep_step(in.z, in.resp, alpha, in.steering, 0, scatter, 1e-10);
    REQUIRE(alpha.allFinite());

    // Same closed form as the weighted bins, with B_0 built from the oracle scatter.
    Eigen::MatrixXcd b = oracle_scatter(in, in.alpha);
    const Eigen::VectorXcd v = in.steering.column(0);
    for (int k = 0; k < kK; ++k) {
        const double w = in.resp.q(k, 1) * in.resp.r(k, 0);
        const Eigen::VectorXcd e = in.z.col(k) - in.alpha(k, 0) * v;
        b -= w * e * e.adjoint();
    }
    const Eigen::VectorXcd bv = b.inverse() * v;
    for (int k = 0; k < kK; ++k) {
        const cd expected = bv.dot(in.z.col(k)) / bv.dot(v).real();
        CHECK(std::abs(alpha(k, 0) - expected) < 1e-10 * (1.0 + std::abs(expected)));
    }
}

TEST_CASE("complete-data objective matches a direct evaluation", "[em]") {
    const Instance in = make_instance(3);
    TrialRng rng = derive_trial_rng(17, 0);
    const HermitianPd m(test::random_pd(kN, rng));
    const std::array<double, 2> pi{0.35, 0.65};
    Eigen::VectorXd p(2);
    p << 0.2, 0.8;
    const Eigen::MatrixXcd mi = Eigen::MatrixXcd(m.matrix()).inverse();
    const double c = -kN * std::log(std::numbers::pi) - std::log(Eigen::MatrixXcd(m.matrix()).determinant().real());
    double expected = 0.0;
    for (int k = 0; k < kK; ++k) {
        const Eigen::VectorXcd z = in.z.col(k);
        expected += in.resp.q(k, 0) * (std::log(pi[0]) + c - (z.adjoint() * mi * z)(0, 0).real());
        expected += in.resp.q(k, 1) * std::log(pi[1]);
        for (int n = 0; n < 2; ++n) {
            const Eigen::VectorXcd e = z - in.alpha(k, n) * Eigen::VectorXcd(in.steering.column(n));
            expected += in.resp.q(k, 1) * in.resp.r(k, n) * (std::log(p(n)) + c - (e.adjoint() * mi * e)(0, 0).real());
        }
    }
    CHECK(complete_data_objective(in.z, in.resp, pi, p, m, in.alpha, in.steering) ==
          Catch::Approx(expected).epsilon(1e-12));
}

namespace {

// Objective after pi, p, M and the amplitude sweep. The sweep value is taken
// with M profiled (refitted to the new amplitudes), which is the objective the
// sweep optimizes; the value just before it already has M fitted to the old
// amplitudes, so the chain compares like with like.
std::array<double, 5> bound_chain(const DataMatrix& z, const Responsibilities& resp, const EmState& prev,
                                  const SteeringTable& st, const EmConfig& cfg) {
    std::array<double, 5> q{};
    std::array<double, 2> pi = prev.pi;
    Eigen::VectorXd p = prev.p;
    q[0] = complete_data_objective(z, resp, pi, p, prev.m_hat, prev.alpha, st);
    pi = update_mixing(resp);
    q[1] = complete_data_objective(z, resp, pi, p, prev.m_hat, prev.alpha, st);
    p = update_angle_pmf(resp);
    q[2] = complete_data_objective(z, resp, pi, p, prev.m_hat, prev.alpha, st);
    const HermitianPd m = update_covariance(z, resp, prev.alpha, st);
    q[3] = complete_data_objective(z, resp, pi, p, m, prev.alpha, st);
    const Eigen::MatrixXcd alpha = update_amplitudes(z, resp, prev.alpha, st, cfg);
    q[4] = complete_data_objective(z, resp, pi, p, update_covariance(z, resp, alpha, st), alpha, st);
    return q;
}

void check_chain(const std::array<double, 5>& q) {
    for (std::size_t i = 1; i < q.size(); ++i) CHECK(q[i] >= q[i - 1] - 1e-9);
}

} // namespace

TEST_CASE("bound monotonicity on tiny random instances", "[em][oracle]") {
    const EmConfig cfg;
    for (std::uint64_t seed = 0; seed < kSeeds; ++seed) {
        const Instance in = make_instance(seed);
        EmState prev = initial_state(in.z, in.steering);
        prev.alpha = in.alpha;
        prev.pi = {0.7, 0.3};
        check_chain(bound_chain(in.z, in.resp, prev, in.steering, cfg));
    }
}

TEST_CASE("bound monotonicity along EM runs on Table I scenes", "[em][oracle]") {
    const EmConfig cfg;
    const Scenario sc{24, AngleGrid{}, InterferenceConfig{}, matched_targets(15.0)};
    const SteeringTable st(sc.grid, 8);
    const SceneGenerator gen = sc.generator();
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        TrialRng rng = derive_trial_rng(606, seed);
        const Scene scene = gen.generate(rng);
        EmState state = initial_state(scene.z, st);
        for (int m = 0; m < 4; ++m) {
            const Responsibilities resp = e_step(scene.z, state, st, cfg);
            for (Eigen::Index k = 0; k < resp.bins(); ++k) {
                REQUIRE(std::abs(resp.q.row(k).sum() - 1.0) < 1e-12);
                REQUIRE(std::abs(resp.r.row(k).sum() - 1.0) < 1e-12);
            }
            if (resp.q.col(1).sum() > 0.0) check_chain(bound_chain(scene.z, resp, state, st, cfg));
            state = m_step(scene.z, resp, state, st, cfg);
            CHECK(std::abs(state.pi[0] + state.pi[1] - 1.0) < 1e-12);
            CHECK(std::abs(state.p.sum() - 1.0) < 1e-12);
            CHECK((state.p.array() >= 0.0).all());
        }
    }
}

TEST_CASE("determinant objective is nonincreasing across each sweep step", "[em][oracle]") {
    const Scenario sc{24, AngleGrid{}, InterferenceConfig{}, matched_targets(10.0)};
    const SteeringTable st(sc.grid, 8);
    const EmConfig cfg;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        TrialRng rng = derive_trial_rng(808, seed);
        const Scene scene = sc.generator().generate(rng);
        const EmState init = initial_state(scene.z, st);
        const Responsibilities resp = e_step(scene.z, init, st, cfg);
        Eigen::MatrixXcd alpha = init.alpha;
        CMat scatter = scatter_sum(scene.z, resp, alpha, st);
        double prev = amplitude_objective(scene.z, resp, alpha, st);
        for (int sweep = 0; sweep < 2; ++sweep) {
            for (std::size_t n = 0; n < st.size(); ++n) {
                amplitude_sweep_step(scene.z, resp, alpha, st, n, scatter, cfg.jitter);
                const double now = amplitude_objective(scene.z, resp, alpha, st);
                CHECK(now <= prev + 1e-9);
                prev = now;
            }
        }
    }
    for (std::uint64_t seed = 0; seed < kSeeds; ++seed) {
        const Instance in = make_instance(seed);
        Eigen::MatrixXcd alpha = in.alpha;
        CMat scatter = scatter_sum(in.z, in.resp, alpha, in.steering);
        double prev = amplitude_objective(in.z, in.resp, alpha, in.steering);
        for (std::size_t n = 0; n < 2; ++n) {
            amplitude_sweep_step(in.z, in.resp, alpha, in.steering, n, scatter, 1e-10);
            const double now = amplitude_objective(in.z, in.resp, alpha, in.steering);
            CHECK(now <= prev + 1e-9);
            prev = now;
        }
    }
}
