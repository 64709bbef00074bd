// Assembled single-station closed-loop model: filter + converters +
// battery pack + the four PI loops of the control architecture. Provides
// the state derivative for DAE embedding, the algebraic steady state in
// closed form, full charge simulation with CC->CV event latching, and
// small-signal LTI extraction with the terminal voltage as input.
#pragma once

#include <functional>
#include <string>
#include <vector>

#include "evload/battery.hpp"
#include "evload/control.hpp"
#include "evload/dae.hpp"
#include "evload/station.hpp"

namespace evload {

struct StationOutputs {
    double p_ev = 0.0;     // W, grid-side single-EV power (incl. filter loss)
    double q_ev = 0.0;     // var
    double p_conv = 0.0;   // W, converter power
    double p_batt = 0.0;   // W
    double i_batt = 0.0;   // A
    double v_batt = 0.0;   // V
    double v_cell = 0.0;   // V
    double i_cell = 0.0;   // A
    double delta = 0.0;
    double p_ref = 0.0;    // W
    bool delta_saturated = false;
};

// Closed-loop station. State layout:
//   [i_d, i_q, v_dc, i_L, v_dc2, z1, z2, z3d, z3q, z4, (soc, z_cv)]
// where the z's are the PI integrators. soc and the CV-loop integrator are
// carried as states only in charge simulations; in network studies soc is
// a frozen parameter and the session stays in the bulk phase.
class StationModel {
public:
    StationParams params;
    StationGains gains;
    CellParams cell;
    PackConfig pack;
    OcvCurve curve;
    ControlRefs refs;
    ChargeMode mode = ChargeMode::CCCV;
    ChargePhase phase = ChargePhase::BULK;
    double soc_param = 0.1;
    bool charge_states = false;
    double i_ref_limit_factor = 3.0;  // i_d/i_q reference limit, in units of i_base

    static constexpr int IX_ID = 0, IX_IQ = 1, IX_VDC = 2, IX_IL = 3, IX_VDC2 = 4,
                         IX_Z1 = 5, IX_Z2 = 6, IX_Z3D = 7, IX_Z3Q = 8, IX_Z4 = 9,
                         IX_SOC = 10, IX_ZCV = 11;

    static StationModel make(Chemistry chem, ChargeMode mode,
                             StationParams sp = StationParams{},
                             StationGains gains = StationGains{},
                             double v_ev_nom = 400.0, double e_ev_nom_wh = 75e3) {
        StationModel m;
        m.params = sp;
        m.params.validate();
        m.gains = gains;
        m.cell = cell_params(chem);
        m.pack = size_pack(chem, m.cell, v_ev_nom, e_ev_nom_wh);
        m.curve = ocv_curve(chem);
        m.refs = make_control_refs(m.pack, m.cell, 800.0, sp.p_ev_nom);
        m.mode = mode;
        return m;
    }

    int nx() const { return charge_states ? 12 : 10; }

    Vec state_scales() const {
        Vec w(12);
        const double ib = params.i_base();
        w << ib, ib, refs.v_dc_ref, refs.i_batt_ref, refs.v_batt_ref, 1e-2, 1e-2, 1e-2,
            1e-2, 1.0, 1.0, 1.0;
        return w.head(nx()).eval();
    }

    double soc_of(const Vec& x) const { return charge_states ? x[IX_SOC] : soc_param; }

    double battery_current(double v_dc2, double soc) const {
        const double ocv = curve.value(clamp(soc, 0.0, 1.0));
        return pack.n_par * (v_dc2 / pack.n_ser - ocv) / cell.r_cell;
    }

    // State derivative and measurements at AC terminal voltage (v_cd, v_cq).
    void deriv(const Vec& x, double v_cd, double v_cq, Vec& dx,
               StationOutputs* out = nullptr) const {
        const double i_d = x[IX_ID], i_q = x[IX_IQ];
        const double v_dc = x[IX_VDC], i_l = x[IX_IL], v_dc2 = x[IX_VDC2];
        const double ib = params.i_base();
        const double soc = soc_of(x);

        const double i_batt = battery_current(v_dc2, soc);
        const double v_batt = v_dc2;
        const double v_cell = v_batt / pack.n_ser;
        const double p_batt = v_batt * i_batt;

        const double p_ev = ac_power(v_cd, v_cq, i_d, i_q);
        const double q_ev = ac_reactive(v_cd, v_cq, i_d, i_q);

        // outer loops (normalized errors)
        const double e_v = (refs.v_dc_ref - v_dc) / refs.v_dc_ref;
        const double e_qn = (q_ev - refs.q_ref) / params.p_ev_nom;
        double i_d_ref = ib * pi_output(gains.pi1, x[IX_Z1], e_v);
        double i_q_ref = ib * pi_output(gains.pi2, x[IX_Z2], e_qn);
        const double i_lim = i_ref_limit_factor * ib;
        bool z1_freeze = false, z2_freeze = false;
        if (i_d_ref > i_lim) { z1_freeze = e_v > 0; i_d_ref = i_lim; }
        if (i_d_ref < -i_lim) { z1_freeze = z1_freeze || e_v < 0; i_d_ref = -i_lim; }
        if (i_q_ref > i_lim) { z2_freeze = e_qn > 0; i_q_ref = i_lim; }
        if (i_q_ref < -i_lim) { z2_freeze = z2_freeze || e_qn < 0; i_q_ref = -i_lim; }

        // inner current loops with dq decoupling
        const double e_id = (i_d_ref - i_d) / ib;
        const double e_iq = (i_q_ref - i_q) / ib;
        const double u_d = params.v_c_nom * pi_output(gains.pi3, x[IX_Z3D], e_id);
        const double u_q = params.v_c_nom * pi_output(gains.pi3, x[IX_Z3Q], e_iq);
        const double wl = params.omega * params.l_f;
        const double e_d = v_cd + wl * i_q - u_d;
        const double e_q = v_cq - wl * i_d - u_q;

        const double p_conv = ac_power(e_d, e_q, i_d, i_q);

        // DC/DC power reference from the charging-mode logic
        double p_ref;
        if (phase == ChargePhase::BULK) {
            p_ref = bulk_power_ref(mode, refs, v_batt);
        } else {
            const double z_cv = charge_states ? x[IX_ZCV] : 0.0;
            const double i_cmd = cv_current_command(gains.pi_cv, z_cv, refs, v_batt);
            p_ref = refs.v_batt_ref * i_cmd;
        }
        const double e_p = (p_ref - p_batt) / params.p_ev_nom;
        double delta = pi_output(gains.pi4, x[IX_Z4], e_p);
        bool z4_freeze = false, saturated = false;
        if (delta > params.delta_max) { z4_freeze = e_p > 0; delta = params.delta_max; saturated = true; }
        if (delta < params.delta_min) { z4_freeze = z4_freeze || e_p < 0; delta = params.delta_min; saturated = true; }

        dx.resize(nx());
        dx[IX_ID] = (v_cd - params.r_f * i_d + wl * i_q - e_d) / params.l_f;
        dx[IX_IQ] = (v_cq - params.r_f * i_q - wl * i_d - e_q) / params.l_f;
        const double v_dc_div = std::max(v_dc, 10.0);  // numerical guard
        dx[IX_VDC] = (p_conv / v_dc_div - delta * i_l) / params.c_dc1;
        dx[IX_IL] = (delta * v_dc - v_dc2) / params.l_dc;
        dx[IX_VDC2] = (i_l - i_batt) / params.c_dc2;
        dx[IX_Z1] = z1_freeze ? 0.0 : e_v;
        dx[IX_Z2] = z2_freeze ? 0.0 : e_qn;
        dx[IX_Z3D] = e_id;
        dx[IX_Z3Q] = e_iq;
        dx[IX_Z4] = z4_freeze ? 0.0 : e_p;
        if (charge_states) {
            double dsoc = i_batt / (3600.0 * pack.n_par * cell.q_cell);
            if ((soc >= 1.0 && dsoc > 0) || (soc <= 0.0 && dsoc < 0)) dsoc = 0.0;
            dx[IX_SOC] = dsoc;
            if (phase == ChargePhase::CV) {
                dx[IX_ZCV] = (refs.v_batt_ref - v_batt) / refs.v_batt_ref;
            } else {
                dx[IX_ZCV] = 0.0;
            }
        }

        if (out) {
            out->p_ev = p_ev;
            out->q_ev = q_ev;
            out->p_conv = p_conv;
            out->p_batt = p_batt;
            out->i_batt = i_batt;
            out->v_batt = v_batt;
            out->v_cell = v_cell;
            out->i_cell = i_batt / pack.n_par;
            out->delta = delta;
            out->p_ref = p_ref;
            out->delta_saturated = saturated;
        }
    }

    StationOutputs outputs(const Vec& x, double v_cd, double v_cq) const {
        Vec dx;
        StationOutputs out;
        deriv(x, v_cd, v_cq, dx, &out);
        return out;
    }

    // Algebraic steady state at terminal voltage magnitude v_c (d-axis
    // aligned with the terminal voltage). The controller cascade makes the
    // operating point available in closed form: v_dc = v_dc_ref, i_q = 0,
    // the battery current follows the charging mode, and the AC current
    // solves the filter power balance.
    Vec steady_state(double v_c_mag, double soc, StationOutputs* out = nullptr) const {
        if (v_c_mag <= 0) throw DomainError("station steady state: v_c must be positive");
        const double ocv = curve.value(soc);
        const double r_branch = cell.r_cell / pack.n_par;  // pack-level series resistance / n_ser
        double i_batt;
        if (phase == ChargePhase::CV) {
            i_batt = pack.n_par * (cell.v_th - ocv) / cell.r_cell;
        } else if (mode == ChargeMode::CCCV) {
            i_batt = refs.i_batt_ref;
        } else {
            const double a = pack.n_ser * r_branch;
            const double b = pack.n_ser * ocv;
            i_batt = (-b + std::sqrt(b * b + 4 * a * refs.p_batt_ref)) / (2 * a);
        }
        const double v_cell = ocv + r_branch * i_batt;
        const double v_batt = pack.n_ser * v_cell;
        const double p_batt = v_batt * i_batt;

        const double disc = v_c_mag * v_c_mag - (8.0 / 3.0) * params.r_f * p_batt;
        if (disc <= 0)
            throw NumericalError("station steady state infeasible at v_c = " +
                                 std::to_string(v_c_mag));
        const double i_d = (v_c_mag - std::sqrt(disc)) / (2 * params.r_f);
        const double ib = params.i_base();

        Vec x = Vec::Zero(nx());
        x[IX_ID] = i_d;
        x[IX_IQ] = 0.0;
        x[IX_VDC] = refs.v_dc_ref;
        x[IX_IL] = i_batt;
        x[IX_VDC2] = v_batt;
        x[IX_Z1] = (i_d / ib) / gains.pi1.k_i;
        x[IX_Z2] = 0.0;
        x[IX_Z3D] = (params.r_f * i_d / params.v_c_nom) / gains.pi3.k_i;
        x[IX_Z3Q] = 0.0;
        x[IX_Z4] = (v_batt / refs.v_dc_ref) / gains.pi4.k_i;
        if (charge_states) {
            x[IX_SOC] = soc;
            x[IX_ZCV] = phase == ChargePhase::CV && gains.pi_cv.k_i > 0
                            ? i_batt / (refs.i_batt_ref * gains.pi_cv.k_i)
                            : 0.0;
        }
        if (out) *out = outputs(x, v_c_mag, 0.0);
        return x;
    }

    // Steady-state powers at a terminal voltage; Q is zero by power-factor
    // correction.
    StationOutputs steady_outputs(double v_c_mag, double soc) const {
        StationOutputs out;
        steady_state(v_c_mag, soc, &out);
        return out;
    }

    // DAE wrapper with the terminal voltage held constant (pure ODE).
    DaeFunction as_ode(double v_cd, double v_cq) const {
        DaeFunction f;
        f.n_diff = nx();
        f.n_alg = 0;
        f.scales = state_scales();
        for (int i = 0; i < f.scales.size(); ++i)
            if (f.scales[i] == 0.0) f.scales[i] = 1.0;
        f.eval = [this, v_cd, v_cq](double, const Vec& y, Vec& df, Vec&) {
            deriv(y, v_cd, v_cq, df);
        };
        return f;
    }
};

// LTI realization (A, B, C, D) of the station about an operating point,
// input = terminal voltage magnitude, output = P_ev / P0.
struct StationLti {
    Mat a;
    Vec b;
    Vec c;  // row vector stored as column
    double d = 0.0;
    double p0 = 0.0;
    double v0 = 0.0;
};

inline StationLti station_linearize(const StationModel& model, double v_c_mag,
                                    double soc) {
    StationOutputs op;
    const Vec x0 = model.steady_state(v_c_mag, soc, &op);
    const int n = model.nx();
    const Vec typ = model.state_scales().cwiseMax(1e-12);

    StationLti lti;
    lti.p0 = op.p_ev;
    lti.v0 = v_c_mag;

    Vec f0(n), fp(n), fm(n);
    StationOutputs o_p, o_m;
    model.deriv(x0, v_c_mag, 0.0, f0);

    lti.a.resize(n, n);
    lti.c.resize(n);
    Vec xp = x0;
    const double cb = std::cbrt(std::numeric_limits<double>::epsilon());
    for (int j = 0; j < n; ++j) {
        const double h = cb * std::max(std::abs(x0[j]), typ[j]);
        xp[j] = x0[j] + h;
        model.deriv(xp, v_c_mag, 0.0, fp, &o_p);
        xp[j] = x0[j] - h;
        model.deriv(xp, v_c_mag, 0.0, fm, &o_m);
        lti.a.col(j) = (fp - fm) / (2 * h);
        lti.c[j] = (o_p.p_ev - o_m.p_ev) / (2 * h) / lti.p0;
        xp[j] = x0[j];
    }
    const double hu = cb * std::max(v_c_mag, 1.0);
    model.deriv(x0, v_c_mag + hu, 0.0, fp, &o_p);
    model.deriv(x0, v_c_mag - hu, 0.0, fm, &o_m);
    lti.b = (fp - fm) / (2 * hu);
    lti.d = (o_p.p_ev - o_m.p_ev) / (2 * hu) / lti.p0;
    return lti;
}

// Sampled trajectory of one charging session.
struct ChargeTrajectory {
    std::vector<double> t;        // s
    std::vector<double> p_batt;   // W
    std::vector<double> i_batt;   // A
    std::vector<double> v_batt;   // V
    std::vector<double> v_cell;   // V
    std::vector<double> soc;
    std::vector<double> p_ev;     // W
    std::vector<double> q_ev;     // var
    std::vector<double> delta;
    double t_cv_entry = -1.0;     // s, -1 when the CV phase was never entered
    bool finished_by_taper = false;
    bool finished_by_soc = false;
    double energy_in_j = 0.0;     // trapezoidal integral of p_batt
};

struct ChargeSimOptions {
    double duration = 0.0;        // s, 0 = run to termination
    double soc_stop = 0.999;
    double taper_fraction = 0.02; // stop when i_batt < taper * i_batt_ref in CV
    double v_ratio = 1.0;         // terminal voltage / v_c_nom
    IntegratorOptions integ{};
};

// Full charge simulation from soc0, with event-latched CC->CV switching.
inline ChargeTrajectory simulate_charge(StationModel model, double soc0,
                                        ChargeSimOptions opt = {}) {
    model.charge_states = true;
    model.phase = ChargePhase::BULK;
    const double v_c = opt.v_ratio * model.params.v_c_nom * model.params.tap;

    // if the cell already sits above threshold at soc0, start in CV
    {
        StationOutputs probe;
        model.steady_state(v_c, soc0, &probe);
        if (probe.v_cell >= model.cell.v_th) model.phase = ChargePhase::CV;
    }
    StationOutputs op;
    Vec x = model.steady_state(v_c, soc0, &op);

    ChargeTrajectory traj;
    if (model.phase == ChargePhase::CV) traj.t_cv_entry = 0.0;

    IntegratorOptions io = opt.integ;
    if (io.h0 <= 0) io.h0 = 1e-4;
    io.h_max = std::min(io.h_max <= 0 ? 10.0 : io.h_max, 10.0);

    DaeFunction ode = model.as_ode(v_c, 0.0);
    // re-bind eval so phase latching through `model` is visible
    ode.eval = [&model, v_c](double, const Vec& y, Vec& df, Vec&) {
        model.deriv(y, v_c, 0.0, df);
    };
    TrapezoidalDae integ(ode, io);

    double last_rec = -1e9;
    const double rec_dt = 0.5;  // s, recording grid
    auto record = [&](double t, const Vec& y) {
        if (t - last_rec < rec_dt && t > 0) return;
        last_rec = t;
        StationOutputs o = model.outputs(y, v_c, 0.0);
        if (!traj.t.empty()) {
            const double dt = t - traj.t.back();
            traj.energy_in_j += 0.5 * dt * (traj.p_batt.back() + o.p_batt);
        }
        traj.t.push_back(t);
        traj.p_batt.push_back(o.p_batt);
        traj.i_batt.push_back(o.i_batt);
        traj.v_batt.push_back(o.v_batt);
        traj.v_cell.push_back(o.v_cell);
        traj.soc.push_back(y[StationModel::IX_SOC]);
        traj.p_ev.push_back(o.p_ev);
        traj.q_ev.push_back(o.q_ev);
        traj.delta.push_back(o.delta);
    };

    auto event = [&model, v_c](double, const Vec& y) -> double {
        if (model.phase != ChargePhase::BULK) return 1.0;
        StationOutputs o = model.outputs(y, v_c, 0.0);
        return o.v_cell - model.cell.v_th;
    };
    auto on_event = [&model, &traj, v_c](double t, Vec& y) {
        if (model.phase != ChargePhase::BULK) return;
        StationOutputs o = model.outputs(y, v_c, 0.0);
        model.phase = ChargePhase::CV;
        traj.t_cv_entry = t;
        if (model.gains.pi_cv.k_i > 0)
            y[StationModel::IX_ZCV] =
                o.i_batt / (model.refs.i_batt_ref * model.gains.pi_cv.k_i);
    };
    auto stop = [&](double, const Vec& y) -> bool {
        if (y[StationModel::IX_SOC] >= opt.soc_stop) {
            traj.finished_by_soc = true;
            return true;
        }
        if (model.phase == ChargePhase::CV) {
            const double i_b = model.battery_current(y[StationModel::IX_VDC2],
                                                     y[StationModel::IX_SOC]);
            if (i_b < opt.taper_fraction * model.refs.i_batt_ref) {
                traj.finished_by_taper = true;
                return true;
            }
        }
        return false;
    };

    const double t_end = opt.duration > 0 ? opt.duration : 4.0 * 3600.0;
    auto status = integ.integrate(0.0, t_end, x, record, event, on_event, stop);
    if (!status.ok)
        throw NumericalError("charge simulation failed at t = " +
                             std::to_string(status.t_end) + ": " + status.message);
    if (traj.t.empty() || traj.t.back() < status.t_end) record(status.t_end, x);
    return traj;
}

}  // namespace evload
