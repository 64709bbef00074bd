// Identification engines: vector fitting (iterative pole relocation +
// linear least squares) for rational transfer functions, a box-constrained
// Levenberg-Marquardt fitter for the static load models, small-signal
// G(s) extraction from the detailed station model, and the VFLM
// parameter-identification pipeline.
#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <functional>
#include <string>
#include <vector>

#include "evload/loadmodels.hpp"
#include "evload/station_sim.hpp"

namespace evload {

// Sampled frequency response, strictly increasing positive frequencies.
struct FreqResponse {
    std::vector<double> omega;  // rad/s
    std::vector<Cx> value;

    void validate() const {
        if (omega.size() != value.size() || omega.empty())
            throw DomainError("FreqResponse: size mismatch or empty");
        double prev = 0.0;
        for (double w : omega) {
            if (w <= prev) throw DomainError("FreqResponse: omega must be strictly increasing and positive");
            prev = w;
        }
    }

    double max_abs() const {
        double m = 0.0;
        for (const auto& v : value) m = std::max(m, std::abs(v));
        return m;
    }
};

enum class VfWeighting { Uniform, InverseMagnitude };

struct VfConfig {
    int order = 2;
    int max_iterations = 50;
    std::vector<Cx> initial_poles;  // empty = default heuristic
    VfWeighting weighting = VfWeighting::Uniform;
    double pole_tol = 1e-6;   // relative pole movement for convergence
    bool with_feedthrough = false;
    double cond_limit = 5e15;  // least-squares condition abort threshold
    // optional DC-gain enforcement in the residue identification (heavily
    // weighted row), used to pin the settled value of recovery models
    std::optional<double> dc_gain;
};

struct FitReport {
    double rmse = 0.0;
    int iterations = 0;
    bool converged = false;
    std::vector<double> residual_history;
    bool rank_warning = false;
};

namespace detail {

// Default starting poles: conjugate pairs with imaginary parts log-spaced
// over the sampled band and real parts -Im/100; odd orders add one real
// pole at the geometric band centre.
inline std::vector<Cx> default_start_poles(int order, double w_lo, double w_hi) {
    std::vector<Cx> poles;
    const int npairs = order / 2;
    for (int m = 0; m < npairs; ++m) {
        const double f = npairs == 1 ? 0.5 : double(m) / (npairs - 1);
        const double beta = w_lo * std::pow(w_hi / w_lo, f);
        poles.emplace_back(-beta / 100.0, beta);
        poles.emplace_back(-beta / 100.0, -beta);
    }
    if (order % 2 == 1) poles.emplace_back(-std::sqrt(w_lo * w_hi), 0.0);
    return poles;
}

// Canonical grouping: real poles first then conjugate pairs (positive
// imaginary part first); enforces exact symmetry.
inline std::vector<Cx> canonicalize_poles(std::vector<Cx> poles) {
    std::vector<Cx> reals, pairs;
    std::vector<bool> used(poles.size(), false);
    for (std::size_t i = 0; i < poles.size(); ++i) {
        if (used[i]) continue;
        Cx a = poles[i];
        if (std::abs(a.imag()) <= 1e-9 * (1.0 + std::abs(a))) {
            reals.emplace_back(a.real(), 0.0);
            used[i] = true;
            continue;
        }
        // nearest conjugate partner
        std::size_t best = i;
        double bd = std::numeric_limits<double>::max();
        for (std::size_t j = 0; j < poles.size(); ++j) {
            if (j == i || used[j]) continue;
            const double d = std::abs(poles[j] - std::conj(a));
            if (d < bd) {
                bd = d;
                best = j;
            }
        }
        if (best == i)
            throw NumericalError("vector_fit: pole set lost conjugate symmetry");
        const Cx avg(0.5 * (a.real() + poles[best].real()),
                     0.5 * (std::abs(a.imag()) + std::abs(poles[best].imag())));
        pairs.emplace_back(avg.real(), avg.imag());
        used[i] = used[best] = true;
    }
    std::sort(reals.begin(), reals.end(),
              [](const Cx& x, const Cx& y) { return x.real() < y.real(); });
    std::sort(pairs.begin(), pairs.end(),
              [](const Cx& x, const Cx& y) { return x.imag() < y.imag(); });
    std::vector<Cx> out = reals;
    for (const auto& p : pairs) {
        out.push_back(p);
        out.push_back(std::conj(p));
    }
    return out;
}

struct PoleBasis {
    // groups: (index into poles, is_pair)
    std::vector<std::pair<std::size_t, bool>> groups;
    std::size_t n_unknowns = 0;
};

inline PoleBasis make_basis(const std::vector<Cx>& poles) {
    PoleBasis b;
    for (std::size_t i = 0; i < poles.size(); ++i) {
        if (std::abs(poles[i].imag()) <= 1e-12 * (1.0 + std::abs(poles[i]))) {
            b.groups.emplace_back(i, false);
            b.n_unknowns += 1;
        } else if (poles[i].imag() > 0) {
            b.groups.emplace_back(i, true);
            b.n_unknowns += 2;
        }
    }
    return b;
}

// Complex coefficients of the real unknowns of one group at frequency s.
inline void basis_coeffs(const Cx& a, bool pair, const Cx& s, Cx& c1, Cx& c2) {
    if (!pair) {
        c1 = 1.0 / (s - a);
        c2 = 0.0;
    } else {
        const Cx r1 = 1.0 / (s - a);
        const Cx r2 = 1.0 / (s - std::conj(a));
        c1 = r1 + r2;
        c2 = Cx(0, 1) * (r1 - r2);
    }
}

// Residues in pair coordinates -> complex residue list matching `poles`.
inline std::vector<Cx> unpack_residues(const std::vector<Cx>& poles, const PoleBasis& b,
                                       const Vec& u) {
    std::vector<Cx> res(poles.size());
    std::size_t col = 0;
    for (auto [idx, pair] : b.groups) {
        if (!pair) {
            res[idx] = Cx(u[col], 0.0);
            col += 1;
        } else {
            res[idx] = Cx(u[col], u[col + 1]);
            // conjugate partner sits right after idx by canonical order
            res[idx + 1] = std::conj(res[idx]);
            col += 2;
        }
    }
    return res;
}

}  // namespace detail

// Vector fitting: approximate a sampled frequency response by
// sum c_n/(s - a_n) (+ d). Iterative pole relocation via the sigma
// formulation, final residues by linear least squares; relocated poles
// that land in the right half-plane are flipped to the left.
inline std::pair<RationalTF, FitReport> vector_fit(const FreqResponse& resp,
                                                   const VfConfig& cfg) {
    resp.validate();
    const int ns = int(resp.omega.size());
    const int np = cfg.order;
    if (ns < 2 * np + 2)
        throw DomainError("vector_fit: need at least 2*order + 2 samples");
    if (!cfg.initial_poles.empty() && int(cfg.initial_poles.size()) != np)
        throw DomainError("vector_fit: initial pole count must equal the order");

    std::vector<Cx> poles =
        cfg.initial_poles.empty()
            ? detail::default_start_poles(np, resp.omega.front(), resp.omega.back())
            : cfg.initial_poles;
    poles = detail::canonicalize_poles(poles);

    std::vector<double> weight(ns, 1.0);
    if (cfg.weighting == VfWeighting::InverseMagnitude)
        for (int k = 0; k < ns; ++k)
            weight[k] = 1.0 / std::max(std::abs(resp.value[k]), 1e-12);

    FitReport report;
    const int nd = cfg.with_feedthrough ? 1 : 0;

    auto solve_ls = [&](const Mat& m, const Vec& rhs) -> Vec {
        // column equilibration keeps the basis-function magnitude spread
        // out of the conditioning
        Vec colscale(m.cols());
        Mat ms = m;
        for (int j = 0; j < m.cols(); ++j) {
            colscale[j] = std::max(m.col(j).norm(), 1e-300);
            ms.col(j) /= colscale[j];
        }
        Eigen::ColPivHouseholderQR<Mat> qr(ms);
        const auto& r = qr.matrixR();
        const int rank = std::min<int>(m.rows(), m.cols());
        const double dmax = std::abs(r(0, 0));
        const double dmin = std::abs(r(rank - 1, rank - 1));
        if (dmax > 0 && dmin / dmax < 1.0 / cfg.cond_limit)
            throw NumericalError("vector_fit: ill-conditioned least-squares system, "
                                 "condition estimate " +
                                 std::to_string(dmax / std::max(dmin, 1e-300)));
        return (qr.solve(rhs).array() / colscale.array()).matrix();
    };

    auto residue_fit = [&](const std::vector<Cx>& pp) {
        const auto basis = detail::make_basis(pp);
        const int nu = int(basis.n_unknowns);
        const int extra = cfg.dc_gain ? 1 : 0;
        Mat m = Mat::Zero(2 * ns + extra, nu + nd);
        Vec rhs(2 * ns + extra);
        for (int k = 0; k < ns; ++k) {
            const Cx s(0.0, resp.omega[k]);
            std::size_t col = 0;
            for (auto [idx, pair] : basis.groups) {
                Cx c1, c2;
                detail::basis_coeffs(pp[idx], pair, s, c1, c2);
                m(2 * k, col) = weight[k] * c1.real();
                m(2 * k + 1, col) = weight[k] * c1.imag();
                if (pair) {
                    m(2 * k, col + 1) = weight[k] * c2.real();
                    m(2 * k + 1, col + 1) = weight[k] * c2.imag();
                    col += 2;
                } else {
                    col += 1;
                }
            }
            if (nd) {
                m(2 * k, nu) = weight[k];
                m(2 * k + 1, nu) = 0.0;
            }
            rhs[2 * k] = weight[k] * resp.value[k].real();
            rhs[2 * k + 1] = weight[k] * resp.value[k].imag();
        }
        if (cfg.dc_gain) {
            // G(0) row: basis functions evaluated at s = 0
            double wmean = 0.0;
            for (int k = 0; k < ns; ++k) wmean += weight[k];
            const double wdc = 1e4 * wmean / ns;
            std::size_t col = 0;
            for (auto [idx, pair] : basis.groups) {
                Cx c1, c2;
                detail::basis_coeffs(pp[idx], pair, Cx(0.0, 0.0), c1, c2);
                m(2 * ns, col) = wdc * c1.real();
                if (pair) {
                    m(2 * ns, col + 1) = wdc * c2.real();
                    col += 2;
                } else {
                    col += 1;
                }
            }
            if (nd) m(2 * ns, nu) = wdc;
            rhs[2 * ns] = wdc * (*cfg.dc_gain);
        }
        const Vec u = solve_ls(m, rhs);
        RationalTF tf;
        tf.poles = pp;
        tf.residues = detail::unpack_residues(pp, basis, u);
        tf.d = nd ? u[nu] : 0.0;
        return tf;
    };

    auto rms_error = [&](const RationalTF& tf) {
        double acc = 0.0;
        for (int k = 0; k < ns; ++k)
            acc += std::norm(tf.eval_jw(resp.omega[k]) - resp.value[k]);
        return std::sqrt(acc / ns);
    };

    bool converged = false;
    int it = 0;
    for (; it < cfg.max_iterations; ++it) {
        const auto basis = detail::make_basis(poles);
        const int nu = int(basis.n_unknowns);
        // unknowns: [f-residues, (d), sigma-residues]
        Mat m(2 * ns, 2 * nu + nd);
        Vec rhs(2 * ns);
        for (int k = 0; k < ns; ++k) {
            const Cx s(0.0, resp.omega[k]);
            const Cx f = resp.value[k];
            std::size_t col = 0;
            for (auto [idx, pair] : basis.groups) {
                Cx c1, c2;
                detail::basis_coeffs(poles[idx], pair, s, c1, c2);
                const Cx s1 = -f * c1, s2 = -f * c2;
                m(2 * k, col) = weight[k] * c1.real();
                m(2 * k + 1, col) = weight[k] * c1.imag();
                m(2 * k, nu + nd + col) = weight[k] * s1.real();
                m(2 * k + 1, nu + nd + col) = weight[k] * s1.imag();
                if (pair) {
                    m(2 * k, col + 1) = weight[k] * c2.real();
                    m(2 * k + 1, col + 1) = weight[k] * c2.imag();
                    m(2 * k, nu + nd + col + 1) = weight[k] * s2.real();
                    m(2 * k + 1, nu + nd + col + 1) = weight[k] * s2.imag();
                    col += 2;
                } else {
                    col += 1;
                }
            }
            if (nd) {
                m(2 * k, nu) = weight[k];
                m(2 * k + 1, nu) = 0.0;
            }
            rhs[2 * k] = weight[k] * f.real();
            rhs[2 * k + 1] = weight[k] * f.imag();
        }
        const Vec u = solve_ls(m, rhs);
        const Vec sigma_res = u.tail(nu);

        // pole relocation: eigenvalues of A - b * sigma^T in real blocks
        Mat h = Mat::Zero(nu, nu);
        {
            std::size_t row = 0;
            for (auto [idx, pair] : basis.groups) {
                if (!pair) {
                    h(row, row) = poles[idx].real();
                    for (int j = 0; j < nu; ++j) h(row, j) -= 1.0 * sigma_res[j];
                    row += 1;
                } else {
                    const double al = poles[idx].real(), be = poles[idx].imag();
                    h(row, row) = al;
                    h(row, row + 1) = be;
                    h(row + 1, row) = -be;
                    h(row + 1, row + 1) = al;
                    for (int j = 0; j < nu; ++j) h(row, j) -= 2.0 * sigma_res[j];
                    row += 2;
                }
            }
        }
        Eigen::EigenSolver<Mat> es(h);
        if (es.info() != Eigen::Success)
            throw NumericalError("vector_fit: pole relocation eigensolve failed");
        std::vector<Cx> new_poles(np);
        for (int i = 0; i < np; ++i) {
            Cx a = es.eigenvalues()[i];
            if (a.real() > 0) a = Cx(-a.real(), a.imag());  // flip unstable poles
            new_poles[i] = a;
        }
        new_poles = detail::canonicalize_poles(new_poles);

        // pole movement (greedy nearest matching)
        double move = 0.0;
        std::vector<bool> used(np, false);
        for (int i = 0; i < np; ++i) {
            double best = std::numeric_limits<double>::max();
            int bj = -1;
            for (int j = 0; j < np; ++j) {
                if (used[j]) continue;
                const double dd = std::abs(new_poles[j] - poles[i]);
                if (dd < best) {
                    best = dd;
                    bj = j;
                }
            }
            used[bj] = true;
            move = std::max(move, best / std::max(std::abs(poles[i]), 1e-12));
        }
        poles = new_poles;

        RationalTF tf = residue_fit(poles);
        report.residual_history.push_back(rms_error(tf));

        if (move < cfg.pole_tol) {
            converged = true;
            ++it;
            break;
        }
    }

    RationalTF tf = residue_fit(poles);
    report.iterations = it;
    report.converged = converged;
    report.rmse = rms_error(tf);
    tf.check_conjugate_symmetry(1e-6);
    return {tf, report};
}

// ---------------------------------------------------------------------------
// Box-constrained Levenberg-Marquardt (damped Gauss-Newton with projected
// steps, accepted only when the residual decreases).

struct LmOptions {
    int max_iterations = 300;
    double lambda0 = 1e-3;
    double step_tol = 1e-10;
    double cost_tol = 1e-11;
};

struct LmResult {
    Vec x;
    double rmse = 0.0;
    int iterations = 0;
    bool converged = false;
    std::vector<double> history;
    bool rank_warning = false;
};

inline LmResult lm_fit(const std::function<void(const Vec&, Vec&)>& residual, Vec x0,
                       const Vec& lb, const Vec& ub, LmOptions opt = {}) {
    const int nx = int(x0.size());
    auto project = [&](Vec& x) {
        for (int i = 0; i < nx; ++i) x[i] = clamp(x[i], lb[i], ub[i]);
    };
    project(x0);
    Vec r;
    residual(x0, r);
    const int m = int(r.size());
    double cost = r.squaredNorm();
    LmResult out;
    out.history.push_back(std::sqrt(cost / m));
    double lambda = opt.lambda0;
    Mat jac(m, nx);
    Vec rp;
    for (out.iterations = 0; out.iterations < opt.max_iterations; ++out.iterations) {
        // forward-difference Jacobian, stepping inward at active bounds
        for (int j = 0; j < nx; ++j) {
            double h = 1e-7 * std::max(std::abs(x0[j]), 1e-4);
            Vec xp = x0;
            if (x0[j] + h > ub[j]) h = -h;
            xp[j] += h;
            residual(xp, rp);
            jac.col(j) = (rp - r) / h;
        }
        const Mat jtj = jac.transpose() * jac;
        const Vec jtr = jac.transpose() * r;
        if (jtr.cwiseAbs().maxCoeff() < 1e-14) {
            out.converged = true;
            break;
        }
        bool accepted = false;
        for (int tries = 0; tries < 25; ++tries) {
            Mat a = jtj;
            a.diagonal() += lambda * jtj.diagonal().cwiseMax(1e-12);
            Vec dx = a.ldlt().solve(-jtr);
            Vec x1 = x0 + dx;
            project(x1);
            residual(x1, rp);
            const double cost1 = rp.squaredNorm();
            if (cost1 < cost) {
                const double dcost = cost - cost1;
                const double dxn = (x1 - x0).norm();
                x0 = x1;
                r = rp;
                cost = cost1;
                lambda = std::max(lambda / 3.0, 1e-12);
                accepted = true;
                out.history.push_back(std::sqrt(cost / m));
                if (dxn < opt.step_tol * (1.0 + x0.norm()) ||
                    dcost < opt.cost_tol * std::max(cost, 1e-30)) {
                    out.converged = true;
                }
                break;
            }
            lambda *= 4.0;
            if (lambda > 1e13) break;
        }
        if (!accepted || out.converged) {
            out.converged = out.converged || !accepted;
            break;
        }
    }
    // rank check at the solution
    Eigen::JacobiSVD<Mat> svd(jac);
    const auto& sv = svd.singularValues();
    if (sv.size() > 0 && sv[sv.size() - 1] < 1e-8 * sv[0]) out.rank_warning = true;
    out.x = x0;
    out.rmse = std::sqrt(cost / m);
    return out;
}

// ---------------------------------------------------------------------------
// Static model fitting

struct StaticSample {
    double v = 0.0;     // V
    double soc0 = 0.0;  // fraction
    double p = 0.0;     // W
};

enum class StaticModelKind { Exp, EvStatic };

struct StaticFit {
    StaticModelKind kind = StaticModelKind::EvStatic;
    ExpParams exp;
    EvStaticParams ev;
    FitReport report;
};

// Trust-region nonlinear least squares on the normalized power. The
// ev_static fit seeds the SOC part from a coarse grid; accepted steps have
// non-increasing residual by construction.
inline StaticFit fit_static(const std::vector<StaticSample>& dataset,
                            StaticModelKind kind, double p_nom, double v_nom) {
    if (dataset.size() < 3) throw DomainError("fit_static: dataset too small");
    {
        std::vector<double> vs, ss;
        for (const auto& s : dataset) {
            vs.push_back(s.v);
            ss.push_back(s.soc0);
        }
        std::sort(vs.begin(), vs.end());
        std::sort(ss.begin(), ss.end());
        const int nv = int(std::unique(vs.begin(), vs.end(),
                                       [](double a, double b) { return near(a, b, 1e-9); }) -
                           vs.begin());
        const int nsoc = int(std::unique(ss.begin(), ss.end(),
                                         [](double a, double b) { return near(a, b, 1e-9); }) -
                             ss.begin());
        if (nv < 3) throw DomainError("fit_static: need at least 3 distinct voltages");
        if (kind == StaticModelKind::EvStatic && nsoc < 3)
            throw DomainError("fit_static: need at least 3 distinct soc0 values");
    }

    StaticFit out;
    out.kind = kind;
    if (kind == StaticModelKind::Exp) {
        auto residual = [&](const Vec& x, Vec& r) {
            r.resize(dataset.size());
            for (std::size_t i = 0; i < dataset.size(); ++i) {
                const double ratio = dataset[i].v / v_nom;
                r[i] = x[0] + x[1] * std::pow(ratio, x[2]) - dataset[i].p / p_nom;
            }
        };
        Vec x0(3), lb(3), ub(3);
        x0 << 1.0, 0.001, -2.0;
        lb << -2.0, 0.0, -8.0;
        ub << 2.0, 0.5, -0.01;
        auto res = lm_fit(residual, x0, lb, ub);
        out.exp = ExpParams{p_nom, v_nom, res.x[0], res.x[1], res.x[2]};
        out.report.rmse = res.rmse;
        out.report.iterations = res.iterations;
        out.report.converged = res.converged;
        out.report.residual_history = res.history;
        out.report.rank_warning = res.rank_warning;
        return out;
    }

    auto residual = [&](const Vec& x, Vec& r) {
        r.resize(dataset.size());
        for (std::size_t i = 0; i < dataset.size(); ++i) {
            const double ratio = dataset[i].v / v_nom;
            const double s = dataset[i].soc0;
            r[i] = x[0] * std::pow(ratio, x[1]) + x[2] - x[3] * (1.0 - s) / s +
                   x[4] * std::exp(-x[5] * (1.0 - s)) - dataset[i].p / p_nom;
        }
    };
    Vec lb(6), ub(6);
    lb << 0.0, -8.0, 0.0, 0.0, 0.0, 0.05;
    ub << 0.05, -0.05, 1.2, 0.05, 1.5, 8.0;
    LmResult best;
    best.rmse = std::numeric_limits<double>::max();
    for (double c0 : {0.1, 0.5, 0.9}) {
        for (double f0 : {0.2, 0.7, 1.5}) {
            Vec x0(6);
            x0 << 0.001, -2.0, c0, 0.005, clamp(0.95 - c0, 0.05, 1.4), f0;
            auto res = lm_fit(residual, x0, lb, ub);
            if (res.rmse < best.rmse) best = res;
        }
    }
    out.ev = EvStaticParams{p_nom,     v_nom,     best.x[0], best.x[1],
                            best.x[2], best.x[3], best.x[4], best.x[5]};
    out.report.rmse = best.rmse;
    out.report.iterations = best.iterations;
    out.report.converged = best.converged;
    out.report.residual_history = best.history;
    out.report.rank_warning = best.rank_warning;
    return out;
}

// Least-squares identification of the closed-form OCV approximation from a
// tabulated curve over soc in [0.05, 1]. The exponential amplitude is
// fitted in log space (as printed, the exponent grows with the pack
// capacity, so the fitted A is extremely small).
struct AnalyticalOcvFit {
    AnalyticalOcvParams params;
    FitReport report;
};

inline AnalyticalOcvFit fit_analytical_ocv(const OcvCurve& curve, double q_pack_ah) {
    std::vector<double> socs;
    for (double s = 0.05; s <= 1.0 + 1e-9; s += 0.01) socs.push_back(std::min(s, 1.0));
    auto residual = [&](const Vec& x, Vec& r) {
        // x = [E0, K, log(A)]
        r.resize(socs.size());
        for (std::size_t i = 0; i < socs.size(); ++i) {
            const double s = socs[i];
            const double term = std::exp(x[2] + (1.0 - s) * q_pack_ah);
            r[i] = x[0] - x[1] * (1.0 - s) / s * q_pack_ah + term - curve.value(s);
        }
    };
    Vec x0(3), lb(3), ub(3);
    x0 << curve.value(0.5), 1e-4, -q_pack_ah - 10.0;
    lb << 0.1, 0.0, -2.0 * q_pack_ah - 700.0;
    ub << 10.0, 1.0, 5.0;
    auto res = lm_fit(residual, x0, lb, ub);
    AnalyticalOcvFit out;
    out.params = AnalyticalOcvParams{res.x[0], res.x[1], std::exp(res.x[2]), q_pack_ah};
    out.report.rmse = res.rmse;
    out.report.iterations = res.iterations;
    out.report.converged = res.converged;
    out.report.rank_warning = res.rank_warning;
    return out;
}

// ---------------------------------------------------------------------------
// G(s) extraction from the detailed station model

struct GsExtraction {
    FreqResponse resp;   // samples of G(jw)
    double n_t = 0.0;    // snapped transient exponent
    double n_s = 0.0;    // snapped steady-state exponent
    double p0 = 0.0;
    double v0 = 0.0;
};

inline double snap_exponent(double x) { return std::round(x * 100.0) / 100.0; }

// Linearizes the detailed station about its operating point and samples
// the transfer function of the normalized power-recovery dynamics:
//   G(s) = (v0 H(s) - N_t) / (N_s - N_t)
// where H(s) is the voltage-to-normalized-power response, N_t = v0 * H(inf)
// and N_s = v0 * H(0).
inline GsExtraction extract_gs(const StationModel& model, double v_c_mag, double soc,
                               const std::vector<double>& freqs_rad) {
    if (freqs_rad.empty()) throw DomainError("extract_gs: empty frequency grid");
    const StationLti lti = station_linearize(model, v_c_mag, soc);
    // stability of the operating point is a prerequisite
    auto eig = eigen_analysis(lti.a, 1e-12);
    if (eig.sigma_m >= 0)
        throw NumericalError("extract_gs: operating point is not asymptotically stable");

    const int n = int(lti.a.rows());
    const Mat& a = lti.a;
    Eigen::PartialPivLU<Mat> lu0(a);
    const double h0 = lti.d - lti.c.dot(lu0.solve(lti.b));  // H(0) = D - C A^-1 B

    GsExtraction out;
    out.p0 = lti.p0;
    out.v0 = lti.v0;
    out.n_t = snap_exponent(lti.v0 * lti.d);
    out.n_s = snap_exponent(lti.v0 * h0);
    if (near(out.n_s, out.n_t, 1e-12))
        throw NumericalError("extract_gs: N_s equals N_t, recovery channel is degenerate");

    out.resp.omega = freqs_rad;
    out.resp.value.resize(freqs_rad.size());
    for (std::size_t k = 0; k < freqs_rad.size(); ++k) {
        const Cx s(0.0, freqs_rad[k]);
        Eigen::MatrixXcd m = Eigen::MatrixXcd::Identity(n, n) * s - a.cast<Cx>();
        const Eigen::VectorXcd x = m.partialPivLu().solve(lti.b.cast<Cx>());
        Cx h = Cx(lti.d, 0.0);
        for (int i = 0; i < n; ++i) h += lti.c[i] * x[i];
        out.resp.value[k] = (lti.v0 * h - out.n_t) / (out.n_s - out.n_t);
    }
    out.resp.validate();
    return out;
}

inline std::vector<double> log_freq_grid(double f_lo_hz, double f_hi_hz, int n) {
    if (n < 2 || f_lo_hz <= 0 || f_hi_hz <= f_lo_hz)
        throw DomainError("log_freq_grid: bad parameters");
    std::vector<double> w(n);
    for (int i = 0; i < n; ++i)
        w[i] = 2.0 * kPi * f_lo_hz * std::pow(f_hi_hz / f_lo_hz, double(i) / (n - 1));
    return w;
}

// ---------------------------------------------------------------------------
// VFLM identification

// Voltage/power record of a step experiment, starting at steady state.
struct StepRecord {
    std::vector<double> t;  // s
    std::vector<double> v;  // V
    std::vector<double> p;  // W (single-EV grid-side power)
    double v0 = 0.0;
    double p0 = 0.0;
};

struct VflmFit {
    VflmParams params;
    FitReport report;       // rmse = time-domain RMS error, normalized by P0
    double freq_rmse = 0.0; // frequency-domain fit error from vector fitting
};

// Exponent identification from the instantaneous and settled power
// response to the voltage step, snapped to the nearest 0.01.
inline std::pair<double, double> identify_exponents(const StepRecord& rec) {
    if (rec.t.size() < 10) throw DomainError("identify_exponents: record too short");
    std::size_t k_step = 0;
    for (std::size_t k = 0; k < rec.v.size(); ++k) {
        if (std::abs(rec.v[k] - rec.v0) > 1e-9 * rec.v0) {
            k_step = k;
            break;
        }
    }
    if (k_step == 0) throw DomainError("identify_exponents: no step found in record");
    const double r1 = rec.v[k_step] / rec.v0;
    const double n_t = std::log(rec.p[k_step] / rec.p0) / std::log(r1);
    // settled value from the tail
    const std::size_t tail = std::max<std::size_t>(5, rec.t.size() / 20);
    double p_inf = 0.0, v_inf = 0.0;
    for (std::size_t k = rec.t.size() - tail; k < rec.t.size(); ++k) {
        p_inf += rec.p[k];
        v_inf += rec.v[k];
    }
    p_inf /= tail;
    v_inf /= tail;
    const double n_s = std::log(p_inf / rec.p0) / std::log(v_inf / rec.v0);
    return {snap_exponent(n_t), snap_exponent(n_s)};
}

// Full VFLM identification at the requested orders: exponents from the
// step record, G from vector fitting of the extracted response, and a
// time-domain validation of each candidate against the recorded step.
inline std::vector<VflmFit> fit_vflm(const FreqResponse& resp, const StepRecord& rec,
                                     const std::vector<int>& orders,
                                     VfWeighting weighting = VfWeighting::Uniform,
                                     bool enforce_dc = true) {
    auto [n_t, n_s] = identify_exponents(rec);
    // DC gain that makes the settled model value match the recorded one
    std::optional<double> g0;
    if (enforce_dc) {
        const std::size_t tail = std::max<std::size_t>(5, rec.t.size() / 20);
        double p_inf = 0.0, v_inf = 0.0;
        for (std::size_t k = rec.t.size() - tail; k < rec.t.size(); ++k) {
            p_inf += rec.p[k];
            v_inf += rec.v[k];
        }
        p_inf /= tail;
        v_inf /= tail;
        const double r = v_inf / rec.v0;
        const double f1 = std::pow(r, n_t), f2 = std::pow(r, n_s) - std::pow(r, n_t);
        if (std::abs(f2) > 1e-12) g0 = (p_inf / rec.p0 - f1) / f2;
    }
    std::vector<VflmFit> fits;
    for (int order : orders) {
        VfConfig cfg;
        cfg.order = order;
        cfg.weighting = weighting;
        cfg.dc_gain = g0;
        auto [tf, vf_report] = vector_fit(resp, cfg);
        VflmFit fit;
        fit.params.n_t = n_t;
        fit.params.n_s = n_s;
        fit.params.g = tf;
        fit.params.p0 = rec.p0;
        fit.params.v0 = rec.v0;
        fit.freq_rmse = vf_report.rmse;
        fit.report = vf_report;
        // time-domain validation
        const auto p_model = vflm_power(fit.params, rec.t, rec.v);
        double acc = 0.0;
        for (std::size_t k = 0; k < rec.t.size(); ++k) {
            const double e = (p_model[k] - rec.p[k]) / rec.p0;
            acc += e * e;
        }
        fit.report.rmse = std::sqrt(acc / rec.t.size());
        fits.push_back(std::move(fit));
    }
    return fits;
}

}  // namespace evload
