// Charging-control building blocks: PI regulators with anti-windup, the
// AC/DC outer/inner loop algebra, and the CCCV/CPCV mode logic that
// produces the DC/DC power reference.
#pragma once

#include <optional>
#include <utility>

#include "evload/battery.hpp"
#include "evload/common.hpp"

namespace evload {

struct PiParams {
    double k_p = 0.0;
    double k_i = 0.0;  // 1/s

    void validate() const {
        if (k_p < 0 || k_i < 0) throw DomainError("PiParams: gains must be non-negative");
    }
};

struct PiLimits {
    double lo = 0.0;
    double hi = 0.0;
};

struct PiState {
    double integral = 0.0;  // accumulated error * time
    std::optional<PiLimits> limits;
};

// One discrete PI update. The integral is advanced first, the output is
// clamped to the optional limits, and the integrator is frozen when the
// clamped output is saturated and the error pushes further into the limit.
inline std::pair<double, PiState> pi_step(const PiParams& p, const PiState& st,
                                          double error, double dt) {
    if (dt <= 0) throw DomainError("pi_step: dt must be positive");
    PiState next = st;
    next.integral = st.integral + error * dt;
    double out = p.k_p * error + p.k_i * next.integral;
    if (st.limits) {
        const auto& lim = *st.limits;
        if (out > lim.hi) {
            out = lim.hi;
            if (error > 0) next.integral = st.integral;  // anti-windup freeze
        } else if (out < lim.lo) {
            out = lim.lo;
            if (error < 0) next.integral = st.integral;
        }
    }
    return {out, next};
}

// Continuous-time PI output for an integrator state carried by a DAE.
inline double pi_output(const PiParams& p, double integral_state, double error) {
    return p.k_p * error + p.k_i * integral_state;
}

// Reference values used by the two converter controllers.
struct ControlRefs {
    double v_dc_ref = 800.0;    // V
    double q_ref = 0.0;         // var
    double p_batt_ref = 50e3;   // W
    double v_batt_ref = 0.0;    // V, n_ser * v_th
    double i_batt_ref = 0.0;    // A, p_batt_ref / v_batt_ref
};

inline ControlRefs make_control_refs(const PackConfig& pack, const CellParams& cell,
                                     double v_dc_ref = 800.0, double p_batt_ref = 50e3) {
    ControlRefs r;
    r.v_dc_ref = v_dc_ref;
    r.p_batt_ref = p_batt_ref;
    r.v_batt_ref = pack.n_ser * cell.v_th;
    r.i_batt_ref = p_batt_ref / r.v_batt_ref;
    return r;
}

enum class ChargeMode { CCCV, CPCV };
enum class ChargePhase { BULK, CV };

inline const char* to_string(ChargeMode m) { return m == ChargeMode::CCCV ? "CCCV" : "CPCV"; }

inline ChargeMode charge_mode_from_string(const std::string& s) {
    if (s == "CCCV" || s == "cccv") return ChargeMode::CCCV;
    if (s == "CPCV" || s == "cpcv") return ChargeMode::CPCV;
    throw ParseError("unknown charge mode: " + s);
}

// Charging mode state. The BULK -> CV transition latches: it happens once
// per session and never reverts.
struct ChargingMode {
    ChargeMode mode = ChargeMode::CCCV;
    ChargePhase phase = ChargePhase::BULK;

    // Returns true when this call performed the BULK -> CV switch.
    bool update(double v_cell, double v_th) {
        if (phase == ChargePhase::BULK && v_cell >= v_th) {
            phase = ChargePhase::CV;
            return true;
        }
        return false;
    }
};

// Power reference for the DC/DC loop in the bulk phase: regulate i_batt
// (CCCV) or P_batt (CPCV); one variable at a time is regulated.
inline double bulk_power_ref(ChargeMode mode, const ControlRefs& refs, double v_batt) {
    return mode == ChargeMode::CCCV ? v_batt * refs.i_batt_ref : refs.p_batt_ref;
}

// CV-phase current command from the pack-voltage error (normalized), as a
// PI-shaped command in units of i_batt_ref. P_ref = v_batt_ref * i_cmd
// preserves the power-reference interface of the DC/DC loop.
inline double cv_current_command(const PiParams& pi, double integral_state,
                                 const ControlRefs& refs, double v_batt) {
    const double err = (refs.v_batt_ref - v_batt) / refs.v_batt_ref;
    return refs.i_batt_ref * pi_output(pi, integral_state, err);
}

// Mode logic as one step: updates the phase latch and returns P_ref.
// `cv_state` carries the CV regulator integrator between calls.
inline double charge_mode_logic(ChargingMode& mode, double v_cell, double v_th,
                                const ControlRefs& refs, const PackState& meas,
                                const PiParams& cv_pi, PiState& cv_state, double dt) {
    if (mode.update(v_cell, v_th)) {
        // bumpless transfer: seed the CV integrator so the initial command
        // equals the present battery current
        if (cv_pi.k_i > 0)
            cv_state.integral = meas.i_batt / (refs.i_batt_ref * cv_pi.k_i);
    }
    if (mode.phase == ChargePhase::BULK)
        return bulk_power_ref(mode.mode, refs, meas.v_batt);
    const double err = (refs.v_batt_ref - meas.v_batt) / refs.v_batt_ref;
    auto [out, next] = pi_step(cv_pi, cv_state, err, dt);
    cv_state = next;
    return refs.v_batt_ref * (refs.i_batt_ref * out);
}

// Gain set of the four station regulators plus the CV-phase regulator.
// PI1 -> DC-link voltage loop, PI2 -> reactive-power loop, PI3 -> inner dq
// current loops (shared gains), PI4 -> DC/DC power loop. All regulators
// act on normalized errors (voltage over v_dc_ref, powers over P_ev_nom,
// currents over the rated current base).
struct StationGains {
    PiParams pi1{0.01, 1000.0};
    PiParams pi2{0.0, 33.0};
    PiParams pi3{0.142, 43.909};
    PiParams pi4{0.001, 1.0};
    PiParams pi_cv{4.0, 40.0};
};

// Outer AC/DC loops: DC-link voltage error -> i_d reference, reactive
// power error -> i_q reference. `i_base` converts the normalized outputs
// back to amperes.
inline std::pair<double, double> acdc_outer_loops(double v_dc, double q_ev,
                                                  const ControlRefs& refs,
                                                  const PiParams& pi_vdc,
                                                  const PiParams& pi_q, PiState& st_vdc,
                                                  PiState& st_q, double p_base,
                                                  double i_base, double dt) {
    const double e_v = (refs.v_dc_ref - v_dc) / refs.v_dc_ref;
    const double e_q = (q_ev - refs.q_ref) / p_base;
    auto [ud, n1] = pi_step(pi_vdc, st_vdc, e_v, dt);
    auto [uq, n2] = pi_step(pi_q, st_q, e_q, dt);
    st_vdc = n1;
    st_q = n2;
    return {i_base * ud, i_base * uq};
}

// Inner current loop with dq decoupling feedforward:
//   e_d = v_cd + w L i_q - u_d,   e_q = v_cq - w L i_d - u_q
// where u is the PI action on the (normalized) current error scaled back
// to volts by v_base.
struct CurrentLoopOut {
    double e_d = 0.0;
    double e_q = 0.0;
};

inline CurrentLoopOut acdc_current_loop(double i_d_ref, double i_q_ref, double i_d,
                                        double i_q, double v_cd, double v_cq,
                                        double omega_l, const PiParams& pi,
                                        PiState& st_d, PiState& st_q, double v_base,
                                        double i_base, double dt) {
    auto [ud, n1] = pi_step(pi, st_d, (i_d_ref - i_d) / i_base, dt);
    auto [uq, n2] = pi_step(pi, st_q, (i_q_ref - i_q) / i_base, dt);
    st_d = n1;
    st_q = n2;
    return {v_cd + omega_l * i_q - v_base * ud, v_cq - omega_l * i_d - v_base * uq};
}

// DC/DC duty-cycle regulation toward a battery power reference.
inline double dcdc_power_loop(double p_ref, double p_batt, const PiParams& pi,
                              PiState& st, double p_base, double dt, double delta_min,
                              double delta_max) {
    if (!st.limits) st.limits = PiLimits{delta_min, delta_max};
    auto [delta, next] = pi_step(pi, st, (p_ref - p_batt) / p_base, dt);
    st = next;
    return delta;
}

}  // namespace evload
