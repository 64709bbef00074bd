// Study drivers: single-EV charge runs, voltage/SOC steady-state sweeps,
// step-response extraction and the VFLM identification pipeline,
// lambda-overload power-flow studies, small-signal stability sweeps with
// threshold refinement, and transient disturbance confirmation with
// log-envelope growth analysis.
#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "evload/netdae.hpp"
#include "evload/vfit.hpp"

namespace evload {

// ---------------------------------------------------------------------------
// Voltage / SOC_0 steady-state sweep (static-model source data)

struct VoltageSocSweep {
    std::vector<double> v_ratios;
    std::vector<double> soc0s;
    std::vector<StaticSample> samples;  // volts / watts, single EV
    std::vector<std::string> failures;  // one entry per failed point
};

inline VoltageSocSweep sweep_voltage_soc(const StationModel& model,
                                         const std::vector<double>& v_ratios,
                                         const std::vector<double>& soc0s) {
    for (double r : v_ratios)
        if (r < 0.85 || r > 1.15)
            throw DomainError("sweep_voltage_soc: v_ratio outside [0.85, 1.15]");
    for (double s : soc0s)
        if (s < 0.1 - 1e-12 || s > 0.9 + 1e-12)
            throw DomainError("sweep_voltage_soc: soc0 outside [0.1, 0.9]");
    VoltageSocSweep out;
    out.v_ratios = v_ratios;
    out.soc0s = soc0s;
    for (double s : soc0s) {
        for (double r : v_ratios) {
            const double v_c = r * model.params.v_c_nom;
            try {
                StationModel m = model;
                m.soc_param = s;
                out.samples.push_back({v_c, s, m.steady_outputs(v_c, s).p_ev});
            } catch (const std::exception& e) {
                out.failures.push_back("v=" + std::to_string(r) + " soc0=" +
                                       std::to_string(s) + ": " + e.what());
            }
        }
    }
    return out;
}

inline std::vector<double> linspace(double lo, double hi, int n) {
    std::vector<double> v(n);
    for (int i = 0; i < n; ++i)
        v[i] = n == 1 ? lo : lo + (hi - lo) * double(i) / (n - 1);
    return v;
}

// Default grids matching the reported sweeps.
inline std::vector<double> default_v_ratios() { return linspace(0.90, 1.10, 13); }
inline std::vector<double> default_soc0s() { return linspace(0.1, 0.9, 9); }

// ---------------------------------------------------------------------------
// Static model fitting pipeline (per chemistry and mode)

struct FittedStaticModel {
    Chemistry chemistry;
    ChargeMode mode;
    StaticFit fit;  // ev_static for CCCV, exp for CPCV

    LoadModelSpec to_spec() const {
        LoadModelSpec spec;
        spec.meta["chemistry"] = to_string(chemistry);
        spec.meta["mode"] = to_string(mode);
        if (fit.kind == StaticModelKind::Exp) {
            spec.kind = "exp";
            spec.exp = fit.exp;
        } else {
            spec.kind = "ev_static";
            spec.ev = fit.ev;
        }
        return spec;
    }
};

inline FittedStaticModel fit_static_model(Chemistry chem, ChargeMode mode,
                                          const StationParams& sp = StationParams{},
                                          const StationGains& gains = StationGains{}) {
    auto model = StationModel::make(chem, mode, sp, gains);
    auto sweep = sweep_voltage_soc(model, default_v_ratios(), default_soc0s());
    if (!sweep.failures.empty())
        throw NumericalError("fit_static_model: steady-state sweep had failures");
    FittedStaticModel out;
    out.chemistry = chem;
    out.mode = mode;
    const StaticModelKind kind =
        mode == ChargeMode::CPCV ? StaticModelKind::Exp : StaticModelKind::EvStatic;
    out.fit = fit_static(sweep.samples, kind, sp.p_ev_nom, sp.v_c_nom);
    return out;
}

// ---------------------------------------------------------------------------
// Step-response harness (voltage step through the transformer tap)

struct StepOptions {
    double tap_ratio = 0.97;  // -3% step
    double t_pre = 0.05;      // s of pre-step record
    double t_post = 2.0;      // s after the step
    double dt = 5e-4;         // recording grid
};

inline StepRecord step_response(StationModel model, double soc0, StepOptions opt = {}) {
    const double v0 = model.params.v_c_nom * model.params.tap;
    const double v1 = opt.tap_ratio * v0;
    model.charge_states = false;
    model.soc_param = soc0;
    Vec x = model.steady_state(v0, soc0);
    StepRecord rec;
    rec.v0 = v0;
    rec.p0 = model.outputs(x, v0, 0.0).p_ev;
    for (double t = 0.0; t < opt.t_pre; t += opt.dt) {
        rec.t.push_back(t);
        rec.v.push_back(v0);
        rec.p.push_back(rec.p0);
    }
    // the tap change is instantaneous: states are continuous, so the first
    // post-step sample carries the algebraic power jump
    rec.t.push_back(opt.t_pre + 1e-9);
    rec.v.push_back(v1);
    rec.p.push_back(model.outputs(x, v1, 0.0).p_ev);

    IntegratorOptions io;
    io.adaptive = false;
    io.h0 = opt.dt;
    io.h_max = opt.dt;
    TrapezoidalDae integ(model.as_ode(v1, 0.0), io);
    auto st = integ.integrate(0.0, opt.t_post, x, [&](double t, const Vec& y) {
        if (t == 0.0) return;
        rec.t.push_back(opt.t_pre + t);
        rec.v.push_back(v1);
        rec.p.push_back(model.outputs(y, v1, 0.0).p_ev);
    });
    if (!st.ok) throw NumericalError("step_response: integration failed: " + st.message);
    return rec;
}

// ---------------------------------------------------------------------------
// VFLM identification study (extraction + fits at the requested orders)

struct VflmStudyOptions {
    double f_lo_hz = 0.1;
    double f_hi_hz = 100.0;
    int n_freqs = 60;
    std::vector<int> orders{1, 2, 3, 4};
    StepOptions step{};
};

struct VflmStudy {
    GsExtraction gs;
    StepRecord record;
    std::vector<VflmFit> fits;  // one per requested order
};

inline VflmStudy extract_vflm_study(const StationModel& model, double soc0,
                                    VflmStudyOptions opt = {}) {
    VflmStudy out;
    out.gs = extract_gs(model, model.params.v_c_nom * model.params.tap, soc0,
                        log_freq_grid(opt.f_lo_hz, opt.f_hi_hz, opt.n_freqs));
    out.record = step_response(model, soc0, opt.step);
    out.fits = fit_vflm(out.gs.resp, out.record, opt.orders);
    return out;
}

// ---------------------------------------------------------------------------
// Grid study summaries

struct GridStudyPoint {
    double lambda = 0.0;
    double soc0 = 0.0;
    bool converged = false;
    double line_i_pu = 0.0;    // monitored branch current (from side)
    double losses_mw = 0.0;
    double slack_p_mw = 0.0;
    double fleet_total_mw = 0.0;
};

// Power-flow summary of one overload case; the monitored branch defaults
// to the first branch in the case (bus1-bus2 in the bundled system).
inline GridStudyPoint overload_power_flow(const GridCase& base, double lambda,
                                          const FleetSpec& spec, int branch_index = 0,
                                          PowerFlowOptions opt = {}) {
    auto over = apply_overload(base, lambda, spec);
    auto pf = solve_power_flow(over, opt);
    GridStudyPoint p;
    p.lambda = lambda;
    p.soc0 = spec.soc0;
    p.converged = pf.converged;
    if (!pf.converged) return p;
    p.line_i_pu = pf.flows[branch_index].i_from;
    p.losses_mw = pf.losses_mw;
    p.slack_p_mw = pf.slack_p_mw;
    for (double mw : pf.fleet_p_mw) p.fleet_total_mw += mw;
    return p;
}

// ---------------------------------------------------------------------------
// Stability sweep (sigma_M vs lambda)

struct StabilityPoint {
    double lambda = 0.0;
    bool ok = false;
    double sigma_m = 0.0;
    double freq_hz = 0.0;  // frequency of the sigma_M mode
    std::string error;
};

struct StabilitySweepResult {
    double ki1 = 0.0;
    EvRepresentation repr = EvRepresentation::Detailed;
    std::vector<StabilityPoint> points;
    std::optional<double> lambda_star;  // first crossing, refined
};

struct StabilityOptions {
    StationParams station{};
    StationGains gains{};
    VflmParams vflm_template{};
    double zero_tol = 1e-5;  // structural-zero exclusion for sigma_M
    bool refine_crossing = true;
    double refine_tol = 1e-4;
};

inline StabilityPoint stability_point(const GridCase& base, double lambda,
                                      const FleetSpec& spec,
                                      const StabilityOptions& opt) {
    StabilityPoint p;
    p.lambda = lambda;
    try {
        auto over = apply_overload(base, lambda, spec);
        PowerFlowOptions pfo;
        pfo.station = opt.station;
        auto pf = solve_power_flow(over, pfo);
        if (!pf.converged) {
            p.error = "power flow diverged";
            return p;
        }
        NetworkDae net(over, pf, opt.station, opt.gains, opt.vflm_template);
        auto sys = net.make();
        Vec y = net.initial_state();
        const Mat a = linearize(sys, 0.0, y, 1e-4);
        auto eig = eigen_analysis(a, opt.zero_tol);
        p.sigma_m = eig.sigma_m;
        p.freq_hz = eig.sigma_m_index >= 0
                        ? std::abs(eig.eigenvalues[eig.sigma_m_index].imag()) / (2 * kPi)
                        : 0.0;
        p.ok = true;
    } catch (const std::exception& e) {
        p.error = e.what();
    }
    return p;
}

inline StabilitySweepResult stability_sweep(const GridCase& base,
                                            const std::vector<double>& lambdas,
                                            const FleetSpec& spec,
                                            StabilityOptions opt = {}) {
    for (std::size_t i = 1; i < lambdas.size(); ++i)
        if (lambdas[i] <= lambdas[i - 1])
            throw DomainError("stability_sweep: lambdas must be increasing");
    StabilitySweepResult out;
    out.ki1 = opt.gains.pi1.k_i;
    out.repr = spec.repr;
    for (double lam : lambdas) out.points.push_back(stability_point(base, lam, spec, opt));

    // first sign change among consecutive valid points
    for (std::size_t i = 1; i < out.points.size(); ++i) {
        const auto& a = out.points[i - 1];
        const auto& b = out.points[i];
        if (!a.ok || !b.ok) continue;
        if (a.sigma_m < 0 && b.sigma_m >= 0) {
            double lo = a.lambda, hi = b.lambda;
            double s_lo = a.sigma_m, s_hi = b.sigma_m;
            if (opt.refine_crossing) {
                for (int it = 0; it < 40 && hi - lo > opt.refine_tol; ++it) {
                    const double mid = 0.5 * (lo + hi);
                    auto pm = stability_point(base, mid, spec, opt);
                    if (!pm.ok) break;
                    if (pm.sigma_m < 0) {
                        lo = mid;
                        s_lo = pm.sigma_m;
                    } else {
                        hi = mid;
                        s_hi = pm.sigma_m;
                    }
                }
            }
            // linear interpolation inside the final bracket
            out.lambda_star = lo + (hi - lo) * (-s_lo) / (s_hi - s_lo);
            break;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Transient disturbance confirmation

struct TransientOptions {
    StationParams station{};
    StationGains gains{};
    VflmParams vflm_template{};
    int monitor_bus_id = 1;
    int disturb_load_index = -1;  // -1 = largest load
    double disturb_factor = 1.01;
    double disturb_start = 1.0;
    double disturb_duration = 0.1;
    double t_end = 40.0;
    IntegratorOptions integ{};
};

struct TransientResult {
    std::vector<double> t;
    std::vector<double> v_dev;  // pu deviation of the monitored bus voltage
    double v_steady = 0.0;
    double growth_rate = 0.0;   // 1/s, log-envelope slope of the ring-down
    double dominant_freq_hz = 0.0;
    bool growing = false;
    std::size_t n_peaks = 0;
};

// Log-envelope slope and zero-crossing frequency of the ring-down after
// the disturbance window.
inline void analyze_ringdown(TransientResult& r, double t_from) {
    std::vector<double> pt, pv;
    for (std::size_t k = 1; k + 1 < r.t.size(); ++k) {
        if (r.t[k] < t_from) continue;
        const double a = std::abs(r.v_dev[k]);
        if (a > std::abs(r.v_dev[k - 1]) && a >= std::abs(r.v_dev[k + 1]) && a > 1e-12) {
            pt.push_back(r.t[k]);
            pv.push_back(std::log(a));
        }
    }
    r.n_peaks = pt.size();
    // drop the early peaks where secondary modes still beat with the
    // dominant one
    if (pt.size() >= 10) {
        const std::size_t skip = pt.size() * 2 / 5;
        pt.erase(pt.begin(), pt.begin() + skip);
        pv.erase(pv.begin(), pv.begin() + skip);
    }
    if (pt.size() >= 3) {
        // least-squares line through (t, log|peak|)
        double sx = 0, sy = 0, sxx = 0, sxy = 0;
        for (std::size_t i = 0; i < pt.size(); ++i) {
            sx += pt[i];
            sy += pv[i];
            sxx += pt[i] * pt[i];
            sxy += pt[i] * pv[i];
        }
        const double n = double(pt.size());
        r.growth_rate = (n * sxy - sx * sy) / (n * sxx - sx * sx);
        // |v| peaks twice per oscillation cycle
        if (pt.size() >= 2)
            r.dominant_freq_hz = 0.5 * (pt.size() - 1) / (pt.back() - pt.front());
    }
    r.growing = r.growth_rate > 0;
}

inline TransientResult transient_disturbance(const GridCase& base, double lambda,
                                             const FleetSpec& spec,
                                             TransientOptions opt = {}) {
    auto over = apply_overload(base, lambda, spec);
    PowerFlowOptions pfo;
    pfo.station = opt.station;
    auto pf = solve_power_flow(over, pfo);
    if (!pf.converged) throw NumericalError("transient_disturbance: power flow diverged");
    NetworkDae net(over, pf, opt.station, opt.gains, opt.vflm_template);
    if (opt.disturb_load_index < 0) {
        int best = 0;
        for (std::size_t i = 0; i < over.loads.size(); ++i)
            if (over.loads[i].p_mw > over.loads[best].p_mw) best = int(i);
        net.disturbance.load_index = best;
    } else {
        net.disturbance.load_index = opt.disturb_load_index;
    }
    net.disturbance.t_start = opt.disturb_start;
    net.disturbance.duration = opt.disturb_duration;
    net.disturbance.factor = opt.disturb_factor;

    auto sys = net.make();
    Vec y = net.initial_state();
    const int mon = over.index_of(opt.monitor_bus_id);

    TransientResult out;
    out.v_steady = pf.v_mag[mon];
    IntegratorOptions io = opt.integ;
    if (io.h0 <= 0 || io.h0 == IntegratorOptions{}.h0) io.h0 = 1e-3;
    io.h_max = std::min(io.h_max, 0.02);
    TrapezoidalDae integ(sys, io);
    auto st = integ.integrate(0.0, opt.t_end, y, [&](double t, const Vec& yy) {
        out.t.push_back(t);
        out.v_dev.push_back(std::abs(net.bus_voltage(yy, mon)) - out.v_steady);
    });
    if (!st.ok)
        throw NumericalError("transient_disturbance: integration failed at t = " +
                             std::to_string(st.t_end) + ": " + st.message);
    analyze_ringdown(out, opt.disturb_start + opt.disturb_duration + 0.5);
    return out;
}

}  // namespace evload
