// Semi-explicit DAE machinery shared by the station and network models:
// implicit trapezoidal integration with adaptive steps and event
// localization, Newton steady-state solves, finite-difference
// linearization with algebraic-variable elimination, and eigenvalue
// analysis.
#pragma once

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <cmath>
#include <functional>
#include <limits>
#include <vector>

#include "evload/common.hpp"

namespace evload {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using CVec = Eigen::VectorXcd;

// System in the form  dx/dt = f(t, y), 0 = g(t, y)  with y = [x; a].
// `scales` holds typical magnitudes per entry of y, used for FD steps and
// error weighting; empty means all ones.
struct DaeFunction {
    int n_diff = 0;
    int n_alg = 0;
    std::function<void(double, const Vec&, Vec&, Vec&)> eval;
    Vec scales;

    int n() const { return n_diff + n_alg; }

    Vec scale_vector() const {
        if (scales.size() == n()) return scales;
        return Vec::Ones(n());
    }

    // Combined residual [f; g] stacked.
    void residual(double t, const Vec& y, Vec& out) const {
        Vec f(n_diff), g(n_alg);
        eval(t, y, f, g);
        out.resize(n());
        out.head(n_diff) = f;
        out.tail(n_alg) = g;
    }
};

// Forward-difference Jacobian of [f; g] with per-column steps.
inline Mat fd_jacobian(const DaeFunction& sys, double t, const Vec& y) {
    const int n = sys.n();
    const Vec typ = sys.scale_vector();
    Vec r0(n), r1(n);
    sys.residual(t, y, r0);
    Mat jac(n, n);
    Vec yp = y;
    const double sq = std::sqrt(std::numeric_limits<double>::epsilon());
    for (int j = 0; j < n; ++j) {
        const double h = sq * std::max(std::abs(y[j]), typ[j]);
        yp[j] = y[j] + h;
        sys.residual(t, yp, r1);
        jac.col(j) = (r1 - r0) / h;
        yp[j] = y[j];
    }
    return jac;
}

// Central-difference Jacobian; slower but accurate, used for
// linearization at operating points.
inline Mat fd_jacobian_central(const DaeFunction& sys, double t, const Vec& y) {
    const int n = sys.n();
    const Vec typ = sys.scale_vector();
    Vec rp(n), rm(n);
    Mat jac(n, n);
    Vec yp = y;
    const double cb = std::cbrt(std::numeric_limits<double>::epsilon());
    for (int j = 0; j < n; ++j) {
        const double h = cb * std::max(std::abs(y[j]), typ[j]);
        yp[j] = y[j] + h;
        sys.residual(t, yp, rp);
        yp[j] = y[j] - h;
        sys.residual(t, yp, rm);
        jac.col(j) = (rp - rm) / (2 * h);
        yp[j] = y[j];
    }
    return jac;
}

// Reduced state matrix: algebraic variables eliminated by Schur
// complement onto the differential states.
inline Mat reduce_state_matrix(const Mat& jac, int n_diff, int n_alg) {
    const Mat fx = jac.topLeftCorner(n_diff, n_diff);
    if (n_alg == 0) return fx;
    const Mat fa = jac.topRightCorner(n_diff, n_alg);
    const Mat gx = jac.bottomLeftCorner(n_alg, n_diff);
    const Mat ga = jac.bottomRightCorner(n_alg, n_alg);
    Eigen::FullPivLU<Mat> lu(ga);
    if (!lu.isInvertible())
        throw NumericalError("linearize: singular algebraic Jacobian (network degeneracy)");
    return fx - fa * lu.solve(gx);
}

// Linearize a DAE about an operating point. The point must satisfy the
// residual to `residual_tol` in the scaled RMS norm.
inline Mat linearize(const DaeFunction& sys, double t, const Vec& y,
                     double residual_tol = 1e-6) {
    Vec r(sys.n());
    sys.residual(t, y, r);
    const Vec w = sys.scale_vector();
    const double rn = std::sqrt((r.array() / w.array()).square().mean());
    if (rn > residual_tol)
        throw NumericalError("linearize: operating point does not satisfy the DAE, residual " +
                             std::to_string(rn));
    const Mat jac = fd_jacobian_central(sys, t, y);
    return reduce_state_matrix(jac, sys.n_diff, sys.n_alg);
}

struct EigResult {
    CVec eigenvalues;
    double sigma_m = 0.0;                 // max real part (structural zeros excluded)
    int sigma_m_index = -1;
    std::vector<int> dominant_state;      // per eigenvalue, argmax |right eigvec|
};

// Full eigen-decomposition of a real state matrix. Eigenvalues with
// |lambda| < zero_tol are treated as structural zeros (e.g. the rotor
// angle reference mode) and excluded from sigma_M.
inline EigResult eigen_analysis(const Mat& a, double zero_tol = 1e-7) {
    if (a.rows() != a.cols()) throw DomainError("eigen_analysis: matrix must be square");
    Eigen::EigenSolver<Mat> es(a);
    if (es.info() != Eigen::Success)
        throw NumericalError("eigen_analysis: decomposition failed");
    EigResult out;
    out.eigenvalues = es.eigenvalues();
    out.dominant_state.resize(a.rows());
    const auto& vecs = es.eigenvectors();
    out.sigma_m = -std::numeric_limits<double>::infinity();
    for (int i = 0; i < out.eigenvalues.size(); ++i) {
        int dom = 0;
        double best = -1.0;
        for (int k = 0; k < a.rows(); ++k) {
            const double m = std::abs(vecs(k, i));
            if (m > best) {
                best = m;
                dom = k;
            }
        }
        out.dominant_state[i] = dom;
        if (std::abs(out.eigenvalues[i]) < zero_tol) continue;
        if (out.eigenvalues[i].real() > out.sigma_m) {
            out.sigma_m = out.eigenvalues[i].real();
            out.sigma_m_index = i;
        }
    }
    return out;
}

struct NewtonResult {
    bool converged = false;
    int iterations = 0;
    double residual_norm = 0.0;
};

// Newton on the full DAE residual with time-derivative terms zeroed.
inline NewtonResult solve_steady_state(const DaeFunction& sys, double t, Vec& y,
                                       double tol = 1e-10, int max_iter = 50) {
    const Vec w = sys.scale_vector();
    NewtonResult res;
    Vec r(sys.n());
    for (res.iterations = 0; res.iterations < max_iter; ++res.iterations) {
        sys.residual(t, y, r);
        res.residual_norm = std::sqrt((r.array() / w.array()).square().mean());
        if (res.residual_norm < tol) {
            res.converged = true;
            return res;
        }
        Mat jac = fd_jacobian(sys, t, y);
        Eigen::PartialPivLU<Mat> lu(jac);
        Vec dy = lu.solve(-r);
        if (!dy.allFinite()) throw NumericalError("steady-state Newton produced non-finite step");
        // damped update when the step is very large
        double alpha = 1.0;
        const double step = std::sqrt((dy.array() / w.array()).square().mean());
        if (step > 10.0) alpha = 10.0 / step;
        y += alpha * dy;
    }
    sys.residual(t, y, r);
    res.residual_norm = std::sqrt((r.array() / w.array()).square().mean());
    res.converged = res.residual_norm < tol;
    return res;
}

struct IntegratorOptions {
    double rtol = 1e-6;
    double atol = 1e-8;       // multiplied by per-state scale
    double newton_tol = 1e-8;
    int max_newton = 12;
    double h0 = 1e-4;
    double h_min = 1e-12;
    double h_max = 1.0;
    bool adaptive = true;
    long max_steps = 20000000;
    double event_tol = 1e-7;  // on the event function value
};

struct IntegrationStatus {
    bool ok = false;
    double t_end = 0.0;      // last good time
    long steps = 0;
    long newton_failures = 0;
    std::string message;
};

// Implicit trapezoidal integrator with adaptive step control (predictor
// difference as the error estimate), modified-Newton corrector and
// bisection-based event localization. Preserves marginal oscillations
// better than heavily damped BDF.
class TrapezoidalDae {
public:
    TrapezoidalDae(DaeFunction sys, IntegratorOptions opt = {})
        : sys_(std::move(sys)), opt_(opt) {}

    // `on_step(t, y)` runs after each accepted step. `event` (optional)
    // is a scalar whose sign change triggers `on_event(t, y)`; the handler
    // may modify y in place (e.g. a controller mode latch). `stop` is
    // checked after each accepted step and ends the run early when true.
    IntegrationStatus integrate(
        double t0, double t_end, Vec& y,
        const std::function<void(double, const Vec&)>& on_step = nullptr,
        const std::function<double(double, const Vec&)>& event = nullptr,
        const std::function<void(double, Vec&)>& on_event = nullptr,
        const std::function<bool(double, const Vec&)>& stop = nullptr) {
        IntegrationStatus st;
        const Vec w = sys_.scale_vector();
        double t = t0;
        double h = std::min(opt_.h0, t_end - t0);
        Vec y_prev = y;
        double h_prev = 0.0;
        bool have_history = false;
        double ev_prev = event ? event(t, y) : 0.0;
        jac_valid_ = false;

        if (on_step) on_step(t, y);

        while (t < t_end - 1e-14 * std::max(1.0, std::abs(t_end))) {
            if (++st.steps > opt_.max_steps) {
                st.message = "step budget exhausted";
                st.t_end = t;
                return st;
            }
            h = std::min(h, t_end - t);
            Vec y_new = y;
            // predictor: linear extrapolation once history exists
            if (have_history && h_prev > 0)
                y_new = y + (h / h_prev) * (y - y_prev);
            Vec y_pred = y_new;

            if (!newton_step(t, y, h, y_new, w)) {
                ++st.newton_failures;
                jac_valid_ = false;
                h *= 0.25;
                if (h < opt_.h_min) {
                    st.message = "Newton failure at minimum step";
                    st.t_end = t;
                    return st;
                }
                continue;
            }

            if (opt_.adaptive && have_history) {
                const double err =
                    std::sqrt(((y_new - y_pred).array() / w.array()).square().mean()) / 3.0;
                const double tol = opt_.rtol;
                if (err > tol && h > opt_.h_min * 4) {
                    h = std::max(opt_.h_min, h * clamp(0.9 * std::pow(tol / err, 0.5), 0.2, 0.9));
                    continue;  // reject
                }
                const double grow = err > 0 ? 0.9 * std::pow(tol / err, 1.0 / 3.0) : 3.0;
                h_next_ = h * clamp(grow, 0.3, 3.0);
            } else {
                h_next_ = h * 2.0;
            }
            h_next_ = std::min(h_next_, opt_.h_max);

            // event localization by bisection on the step size
            if (event) {
                auto crossed = [&](double v) { return (ev_prev < 0.0) != (v < 0.0); };
                double ev_new = event(t + h, y_new);
                if (crossed(ev_new) && std::abs(ev_new) > opt_.event_tol) {
                    double lo = 0.0, hi = h;
                    Vec y_hi = y_new;
                    for (int it = 0; it < 60 && std::abs(ev_new) > opt_.event_tol; ++it) {
                        const double mid = 0.5 * (lo + hi);
                        Vec y_mid = y;
                        if (!newton_step(t, y, mid, y_mid, w)) break;
                        const double ev_mid = event(t + mid, y_mid);
                        if (crossed(ev_mid)) {
                            hi = mid;
                            y_hi = y_mid;
                            ev_new = ev_mid;
                        } else {
                            lo = mid;
                        }
                    }
                    h = hi;
                    y_new = y_hi;
                }
                const double ev_final = event(t + h, y_new);
                if (crossed(ev_final) || std::abs(ev_final) <= opt_.event_tol) {
                    y_prev = y;
                    y = y_new;
                    t += h;
                    if (on_event) {
                        on_event(t, y);
                        jac_valid_ = false;
                    }
                    have_history = false;  // restart history across the event
                    ev_prev = event(t, y);
                    if (on_step) on_step(t, y);
                    if (stop && stop(t, y)) {
                        st.ok = true;
                        st.t_end = t;
                        st.message = "stopped";
                        return st;
                    }
                    h = std::max(opt_.h_min, h * 0.25);
                    continue;
                }
                ev_prev = ev_final;
            }

            y_prev = y;
            h_prev = h;
            y = y_new;
            t += h;
            have_history = true;
            if (on_step) on_step(t, y);
            if (stop && stop(t, y)) {
                st.ok = true;
                st.t_end = t;
                st.message = "stopped";
                return st;
            }
            h = h_next_;
        }
        st.ok = true;
        st.t_end = t;
        return st;
    }

private:
    // One trapezoidal step t -> t+h starting from the guess in y_new.
    bool newton_step(double t, const Vec& y0, double h, Vec& y_new, const Vec& w) {
        const int n = sys_.n();
        const int nd = sys_.n_diff;
        Vec f0(nd), g0(sys_.n_alg);
        sys_.eval(t, y0, f0, g0);
        Vec f1(nd), g1(sys_.n_alg), r(n);
        for (int rebuild = 0; rebuild < 2; ++rebuild) {
            if (!jac_valid_ || std::abs(jac_h_ - h) > 1e-12 * std::max(h, jac_h_)) {
                const Mat jac = fd_jacobian(sys_, t + h, y_new);
                Mat m(n, n);
                m.setZero();
                m.topLeftCorner(nd, nd) = Mat::Identity(nd, nd);
                m.topRows(nd) -= 0.5 * h * jac.topRows(nd);
                m.bottomRows(sys_.n_alg) = jac.bottomRows(sys_.n_alg);
                lu_.compute(m);
                jac_valid_ = true;
                jac_h_ = h;
            }
            bool converged = false;
            for (int it = 0; it < opt_.max_newton; ++it) {
                sys_.eval(t + h, y_new, f1, g1);
                r.head(nd) = y_new.head(nd) - y0.head(nd) - 0.5 * h * (f0 + f1);
                r.tail(sys_.n_alg) = g1;
                if (!r.allFinite()) break;
                const Vec dy = lu_.solve(-r);
                y_new += dy;
                const double dn = std::sqrt((dy.array() / w.array()).square().mean());
                if (dn < opt_.newton_tol) {
                    converged = true;
                    break;
                }
            }
            if (converged) return true;
            // retry once with a fresh Jacobian
            jac_valid_ = false;
        }
        return false;
    }

    DaeFunction sys_;
    IntegratorOptions opt_;
    Eigen::PartialPivLU<Mat> lu_;
    bool jac_valid_ = false;
    double jac_h_ = -1.0;
    double h_next_ = 0.0;
};

}  // namespace evload
