#pragma once

// Penalized EM estimation for the two-layer latent variable model.
//
// Outer latent c_k in {0, 1} flags a target in range bin k; inner latent e_k
// selects the grid angle of that target. Parameters are the class PMF pi, the
// angle PMF p, one complex amplitude per (bin, angle) and the interference
// covariance M. All densities are handled in the log domain.

#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "emstad/errors.hpp"
#include "emstad/hermitian.hpp"
#include "emstad/scene.hpp"

namespace emstad {

struct EmConfig {
    double rho = 3.0;           // GIC tuning, >= 1
    int max_iters = 4;          // m-bar
    double delta = 1e-4;        // relative log-likelihood stop tolerance
    int amplitude_sweeps = 1;   // cyclic sweeps over the grid per M-step
    double jitter = 1e-10;      // relative diagonal loading for B_n on factorization failure

    void validate() const {
        if (!(rho >= 1.0)) throw std::invalid_argument("EmConfig: rho must be >= 1");
        if (max_iters < 1) throw std::invalid_argument("EmConfig: max_iters must be >= 1");
        if (!(delta > 0.0)) throw std::invalid_argument("EmConfig: delta must be > 0");
        if (amplitude_sweeps < 1) throw std::invalid_argument("EmConfig: amplitude_sweeps must be >= 1");
        if (!(jitter >= 0.0)) throw std::invalid_argument("EmConfig: jitter must be >= 0");
    }
};

/// Posterior class and angle probabilities, one row per range bin.
struct Responsibilities {
    Eigen::MatrixXd q; // K x 2: q(k, s) = P(c_k = s | z_k)
    Eigen::MatrixXd r; // K x K_theta: r(k, n) = P(e_k = n | z_k, c_k = 1)

    Eigen::Index bins() const { return q.rows(); }
    bool empty() const { return q.size() == 0; }
};

struct EmState {
    std::array<double, 2> pi{0.5, 0.5};
    Eigen::VectorXd p;        // angle PMF over the grid
    HermitianPd m_hat;
    Eigen::MatrixXcd alpha;   // K x K_theta amplitudes
    Responsibilities resp;    // E-step output that produced this state; empty for the initial state
    double loglik = std::numeric_limits<double>::quiet_NaN();
    double rel_change = std::numeric_limits<double>::quiet_NaN();
    int iter = 0;
};

namespace detail {

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

inline double safe_log(double x) { return x > 0.0 ? std::log(x) : kNegInf; }

inline double log_add(double a, double b) {
    if (a == kNegInf) return b;
    if (b == kNegInf) return a;
    const double hi = std::max(a, b);
    return hi + std::log1p(std::exp(-std::abs(a - b)));
}

inline void check_shapes(const DataMatrix& z, const SteeringTable& steering) {
    if (z.rows() != steering.channels()) {
        throw std::invalid_argument("data rows (" + std::to_string(z.rows()) + ") != array channels (" +
                                    std::to_string(steering.channels()) + ")");
    }
}

} // namespace detail

/// Exponent u(s, rho) of the GIC-inspired penalty exp(-u) on class s.
inline double gic_penalty(int s, int channels, double rho) {
    return (static_cast<double>(channels) * channels + 3.0 * s) * (1.0 + rho) / 2.0;
}

/// log CN(z; alpha v(theta), M). alpha = 0 gives the interference-only density.
inline double component_loglik(const CVec& z, cd alpha, double theta_deg, const HermitianPd& m) {
    const int n = static_cast<int>(m.size());
    const CVec residual = z - alpha * steering_vector(theta_deg, n);
    return -n * std::log(std::numbers::pi) - m.logdet() - m.quad_form(residual, residual).real();
}

/// Log densities of every snapshot under every mixture component.
struct ComponentLogliks {
    Eigen::VectorXd null;    // K: log f(z_k | c_k = 0)
    Eigen::MatrixXd target;  // K x K_theta: log f(z_k | c_k = 1, e_k = n)
};

/// Whitens Z and the steering table once, then expands each residual norm
/// |L^{-1}(z_k - a v_n)|^2 from cross products.
inline ComponentLogliks component_logliks(const DataMatrix& z, const Eigen::MatrixXcd& alpha, const HermitianPd& m,
                                          const SteeringTable& steering) {
    detail::check_shapes(z, steering);
    const Eigen::Index n_ch = z.rows();
    const Eigen::Index k_bins = z.cols();
    const auto k_theta = static_cast<Eigen::Index>(steering.size());
    const Eigen::MatrixXcd w = m.whiten(z);
    const Eigen::MatrixXcd u = m.whiten(steering.matrix());
    const Eigen::MatrixXcd cross = u.adjoint() * w; // K_theta x K
    const Eigen::VectorXd w_norm = w.colwise().squaredNorm().transpose();
    const Eigen::VectorXd u_norm = u.colwise().squaredNorm().transpose();
    const double c0 = -static_cast<double>(n_ch) * std::log(std::numbers::pi) - m.logdet();

    ComponentLogliks out;
    out.null = c0 - w_norm.array();
    out.target.resize(k_bins, k_theta);
    for (Eigen::Index n = 0; n < k_theta; ++n) {
        for (Eigen::Index k = 0; k < k_bins; ++k) {
            const cd a = alpha(k, n);
            double resid = w_norm(k) - 2.0 * (std::conj(a) * cross(n, k)).real() + std::norm(a) * u_norm(n);
            out.target(k, n) = c0 - std::max(resid, 0.0);
        }
    }
    return out;
}

namespace detail {

/// log sum_n exp(target(k, n)) p_n for every k.
inline Eigen::VectorXd log_target_mixture(const ComponentLogliks& ll, const Eigen::VectorXd& p) {
    const Eigen::Index k_bins = ll.target.rows();
    Eigen::VectorXd out(k_bins);
    Eigen::VectorXd log_p(p.size());
    for (Eigen::Index n = 0; n < p.size(); ++n) log_p(n) = safe_log(p(n));
    for (Eigen::Index k = 0; k < k_bins; ++k) {
        double hi = kNegInf;
        for (Eigen::Index n = 0; n < p.size(); ++n) hi = std::max(hi, ll.target(k, n) + log_p(n));
        if (hi == kNegInf) {
            out(k) = kNegInf;
            continue;
        }
        double acc = 0.0;
        for (Eigen::Index n = 0; n < p.size(); ++n) {
            const double t = ll.target(k, n) + log_p(n);
            if (t != kNegInf) acc += std::exp(t - hi);
        }
        out(k) = hi + std::log(acc);
    }
    return out;
}

} // namespace detail

/// Penalized E-step: q_k(s) proportional to F_s pi_s exp(-u(s, rho)), and
/// r_k(n) proportional to f(z_k | c_k = 1, e_k = n) p_n.
inline Responsibilities e_step(const DataMatrix& z, const EmState& state, const SteeringTable& steering,
                               const EmConfig& cfg) {
    const ComponentLogliks ll = component_logliks(z, state.alpha, state.m_hat, steering);
    const Eigen::VectorXd log_f1 = detail::log_target_mixture(ll, state.p);
    const auto channels = static_cast<int>(z.rows());
    const double log_w0 = detail::safe_log(state.pi[0]) - gic_penalty(0, channels, cfg.rho);
    const double log_w1 = detail::safe_log(state.pi[1]) - gic_penalty(1, channels, cfg.rho);

    const Eigen::Index k_bins = z.cols();
    const Eigen::Index k_theta = state.p.size();
    Responsibilities resp;
    resp.q.resize(k_bins, 2);
    resp.r.resize(k_bins, k_theta);
    for (Eigen::Index k = 0; k < k_bins; ++k) {
        const double a0 = ll.null(k) + log_w0;
        const double a1 = log_f1(k) + log_w1;
        const double hi = std::max(a0, a1);
        if (hi == detail::kNegInf || std::isnan(hi)) {
            throw DegeneratePosterior("e_step: every class underflowed at bin " + std::to_string(k + 1));
        }
        const double e0 = a0 == detail::kNegInf ? 0.0 : std::exp(a0 - hi);
        const double e1 = a1 == detail::kNegInf ? 0.0 : std::exp(a1 - hi);
        resp.q(k, 0) = e0 / (e0 + e1);
        resp.q(k, 1) = e1 / (e0 + e1);

        if (log_f1(k) == detail::kNegInf) {
            // No angle carries mass: the row is irrelevant since q_k(1) = 0; keep the prior.
            resp.r.row(k) = state.p.transpose();
            continue;
        }
        double total = 0.0;
        for (Eigen::Index n = 0; n < k_theta; ++n) {
            const double t = ll.target(k, n) + detail::safe_log(state.p(n)) - log_f1(k);
            resp.r(k, n) = t == detail::kNegInf ? 0.0 : std::exp(t);
            total += resp.r(k, n);
        }
        resp.r.row(k) /= total;
    }
    return resp;
}

/// pi_s = sum_k q_k(s) / K.
inline std::array<double, 2> update_mixing(const Responsibilities& resp) {
    const double k_bins = static_cast<double>(resp.bins());
    return {resp.q.col(0).sum() / k_bins, resp.q.col(1).sum() / k_bins};
}

/// p_n = sum_k q_k(1) r_k(n) / sum_k q_k(1). Throws NoTargetMass when the
/// denominator vanishes.
inline Eigen::VectorXd update_angle_pmf(const Responsibilities& resp) {
    const double mass = resp.q.col(1).sum();
    if (!(mass > 0.0)) {
        throw NoTargetMass("update_angle_pmf: sum_k q_k(1) = 0");
    }
    Eigen::VectorXd p = (resp.r.transpose() * resp.q.col(1)) / mass;
    return p;
}

/// K times the covariance update, left unfactored:
///   sum_k [ q_k(0) z_k z_k^H + q_k(1) sum_n r_k(n) (z_k - a_kn v_n)(z_k - a_kn v_n)^H ].
/// Expanded as Z D Z^H - Z G^H - G Z^H + V diag(c) V^H with G = V (Q o alpha)^T,
/// c_n = sum_k Q_kn |a_kn|^2 and Q_kn = q_k(1) r_k(n).
inline CMat scatter_sum(const DataMatrix& z, const Responsibilities& resp, const Eigen::MatrixXcd& alpha,
                        const SteeringTable& steering) {
    detail::check_shapes(z, steering);
    const Eigen::MatrixXd weights = resp.r.array().colwise() * resp.q.col(1).array(); // Q, K x K_theta
    const Eigen::VectorXd d = resp.q.col(0) + weights.rowwise().sum();
    const Eigen::MatrixXcd weighted_alpha = weights.cast<cd>().cwiseProduct(alpha);   // K x K_theta
    const Eigen::MatrixXcd g = steering.matrix() * weighted_alpha.transpose();         // N x K
    const Eigen::VectorXd c = (weights.array() * alpha.cwiseAbs2().array()).colwise().sum().transpose();

    const Eigen::MatrixXcd zd = z * d.cast<cd>().asDiagonal();
    const Eigen::MatrixXcd cross = z * g.adjoint();
    CMat out = zd * z.adjoint();
    out -= cross + cross.adjoint();
    out.noalias() += steering.matrix() * c.cast<cd>().asDiagonal() * steering.matrix().adjoint();
    return out;
}

/// Covariance update M = scatter_sum / K.
inline HermitianPd update_covariance(const DataMatrix& z, const Responsibilities& resp,
                                     const Eigen::MatrixXcd& alpha, const SteeringTable& steering) {
    return HermitianPd(scatter_sum(z, resp, alpha, steering) / static_cast<double>(z.cols()));
}

/// a_k = v^H B^{-1} z_k / (v^H B^{-1} v) for every column of z.
inline Eigen::RowVectorXcd amplitude_closed_form(const HermitianPd& b, const CVec& v, const DataMatrix& z) {
    const CVec w = b.solve(v);
    const double a = v.dot(w).real();
    return (w.adjoint() * z) / a;
}

namespace detail {

/// sum_k Q_k (z_k - a_k v)(z_k - a_k v)^H minus its alpha-independent part
/// sum_k Q_k z_k z_k^H, i.e. -g v^H - v g^H + c v v^H.
inline CMat column_scatter_alpha_part(const DataMatrix& z, const Eigen::VectorXd& q_col,
                                      const Eigen::VectorXcd& alpha_col, const CVec& v) {
    const Eigen::VectorXcd coeff = q_col.cast<cd>().cwiseProduct(alpha_col.conjugate());
    const CVec g = z * coeff;
    const double c = (q_col.array() * alpha_col.cwiseAbs2().array()).sum();
    CMat out = -(g * v.adjoint());
    out -= v * g.adjoint();
    out += c * (v * v.adjoint());
    return out;
}

inline HermitianPd factor_with_jitter(const CMat& b, double jitter, std::size_t n) {
    try {
        return HermitianPd(b);
    } catch (const NotPositiveDefinite&) {
        if (jitter <= 0.0) throw;
    }
    const double load = jitter * b.trace().real() / static_cast<double>(b.rows());
    CMat loaded = b;
    loaded.diagonal().array() += cd(load, 0.0);
    try {
        return HermitianPd(loaded);
    } catch (const NotPositiveDefinite&) {
        throw NotPositiveDefinite("update_amplitudes: B_n not positive definite after diagonal loading at grid index " +
                                  std::to_string(n) + " (trace " + std::to_string(b.trace().real()) + ")");
    }
}

} // namespace detail

/**
 * One coordinate step of the amplitude sweep: refit column n of alpha with all
 * other columns held at their current values.
 *
 * `scatter` must hold scatter_sum(z, resp, alpha) on entry and is kept in
 * sync on exit. B_n is scatter minus the grid-n contribution.
 */
inline void amplitude_sweep_step(const DataMatrix& z, const Responsibilities& resp, Eigen::MatrixXcd& alpha,
                                 const SteeringTable& steering, std::size_t n, CMat& scatter, double jitter) {
    const auto col = static_cast<Eigen::Index>(n);
    const Eigen::VectorXd q_col = resp.r.col(col).cwiseProduct(resp.q.col(1));
    const CVec v = steering.column(n);

    const CMat old_part = detail::column_scatter_alpha_part(z, q_col, alpha.col(col), v);
    CMat b_raw = scatter - old_part;
    b_raw.noalias() -= z * q_col.cast<cd>().asDiagonal() * z.adjoint();
    const HermitianPd b = detail::factor_with_jitter(b_raw, jitter, n);

    alpha.col(col) = amplitude_closed_form(b, v, z).transpose();

    scatter += detail::column_scatter_alpha_part(z, q_col, alpha.col(col), v) - old_part;
}

/// Cyclic amplitude update over n = 0..K_theta-1 (ascending), repeated
/// cfg.amplitude_sweeps times.
inline Eigen::MatrixXcd update_amplitudes(const DataMatrix& z, const Responsibilities& resp,
                                          const Eigen::MatrixXcd& alpha, const SteeringTable& steering,
                                          const EmConfig& cfg) {
    Eigen::MatrixXcd out = alpha;
    CMat scatter = scatter_sum(z, resp, out, steering);
    for (int sweep = 0; sweep < cfg.amplitude_sweeps; ++sweep) {
        for (std::size_t n = 0; n < steering.size(); ++n) {
            amplitude_sweep_step(z, resp, out, steering, n, scatter, cfg.jitter);
        }
    }
    return out;
}

/// log det of scatter_sum: what the amplitude sweep minimizes once M is
/// profiled out of the complete-data objective.
inline double amplitude_objective(const DataMatrix& z, const Responsibilities& resp, const Eigen::MatrixXcd& alpha,
                                  const SteeringTable& steering) {
    return HermitianPd(scatter_sum(z, resp, alpha, steering)).logdet();
}

/// Unpenalized mixture log-likelihood L(Z; Psi).
inline double log_likelihood(const DataMatrix& z, const EmState& state, const SteeringTable& steering) {
    const ComponentLogliks ll = component_logliks(z, state.alpha, state.m_hat, steering);
    const Eigen::VectorXd log_f1 = detail::log_target_mixture(ll, state.p);
    const double log_pi0 = detail::safe_log(state.pi[0]);
    const double log_pi1 = detail::safe_log(state.pi[1]);
    double total = 0.0;
    for (Eigen::Index k = 0; k < z.cols(); ++k) {
        total += detail::log_add(ll.null(k) + log_pi0, log_f1(k) + log_pi1);
    }
    return total;
}

/// Expected complete-data log-likelihood maximized by the M-step, for fixed
/// responsibilities. 0 log 0 is taken as 0.
inline double complete_data_objective(const DataMatrix& z, const Responsibilities& resp,
                                      const std::array<double, 2>& pi, const Eigen::VectorXd& p,
                                      const HermitianPd& m, const Eigen::MatrixXcd& alpha,
                                      const SteeringTable& steering) {
    const ComponentLogliks ll = component_logliks(z, alpha, m, steering);
    const auto weighted_log = [](double w, double x) { return w == 0.0 ? 0.0 : w * x; };
    double total = 0.0;
    for (Eigen::Index k = 0; k < z.cols(); ++k) {
        const double q0 = resp.q(k, 0);
        const double q1 = resp.q(k, 1);
        total += weighted_log(q0, ll.null(k) + detail::safe_log(pi[0]));
        total += weighted_log(q1, detail::safe_log(pi[1]));
        for (Eigen::Index n = 0; n < p.size(); ++n) {
            total += weighted_log(q1 * resp.r(k, n), ll.target(k, n) + detail::safe_log(p(n)));
        }
    }
    return total;
}

/// pi = 1/2, uniform p, M = Z Z^H / K and adaptive-matched-filter amplitudes.
inline EmState initial_state(const DataMatrix& z, const SteeringTable& steering) {
    detail::check_shapes(z, steering);
    if (z.cols() < z.rows()) {
        throw NotPositiveDefinite("initial_state: K = " + std::to_string(z.cols()) + " < N = " +
                                  std::to_string(z.rows()) + ", sample covariance is singular");
    }
    EmState s;
    s.pi = {0.5, 0.5};
    s.p = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(steering.size()), 1.0 / steering.size());
    s.m_hat = HermitianPd(CMat(z * z.adjoint() / static_cast<double>(z.cols())));
    s.alpha.resize(z.cols(), static_cast<Eigen::Index>(steering.size()));
    for (std::size_t n = 0; n < steering.size(); ++n) {
        s.alpha.col(static_cast<Eigen::Index>(n)) =
            amplitude_closed_form(s.m_hat, steering.column(n), z).transpose();
    }
    return s;
}

/// M-step for fixed responsibilities, in the order pi, p, M, amplitudes. The
/// covariance is fitted to the previous amplitudes; the amplitude sweep then
/// minimizes the profiled determinant objective and does not read M.
inline EmState m_step(const DataMatrix& z, const Responsibilities& resp, const EmState& prev,
                      const SteeringTable& steering, const EmConfig& cfg) {
    EmState next;
    next.pi = update_mixing(resp);
    try {
        next.p = update_angle_pmf(resp);
    } catch (const NoTargetMass&) {
        next.p = prev.p;
    }
    next.m_hat = update_covariance(z, resp, prev.alpha, steering);
    next.alpha = update_amplitudes(z, resp, prev.alpha, steering, cfg);
    next.resp = resp;
    return next;
}

/**
 * Runs EM from `init` (or initial_state(z) when absent) and returns the whole
 * trajectory; element 0 is the initial state. Iteration m runs the E-step on
 * state m-1 then the M-step, and stops once the relative change of L(Z; Psi)
 * drops below cfg.delta or m reaches cfg.max_iters. The last state's `resp`
 * is the E-step output used to produce it, i.e. the responsibilities the
 * MAP classification rules read.
 */
inline std::vector<EmState> run_em(const DataMatrix& z, const SteeringTable& steering, const EmConfig& cfg,
                                   std::optional<EmState> init = std::nullopt) {
    cfg.validate();
    std::vector<EmState> trajectory;
    trajectory.reserve(static_cast<std::size_t>(cfg.max_iters) + 1);
    trajectory.push_back(init ? std::move(*init) : initial_state(z, steering));
    trajectory.back().loglik = log_likelihood(z, trajectory.back(), steering);

    for (int m = 1; m <= cfg.max_iters; ++m) {
        const EmState& prev = trajectory.back();
        const Responsibilities resp = e_step(z, prev, steering, cfg);
        EmState next = m_step(z, resp, prev, steering, cfg);
        next.iter = m;
        next.loglik = log_likelihood(z, next, steering);
        next.rel_change = std::abs(next.loglik - prev.loglik) / std::abs(next.loglik);
        const bool converged = next.rel_change < cfg.delta;
        trajectory.push_back(std::move(next));
        if (converged) {
            break;
        }
    }
    return trajectory;
}

} // namespace emstad
