// dq-frame average electrical model of the fast charging station:
// tap-changing ideal transformer, R_F-L_F filter, AC/DC converter with an
// ideal DC power coupler, DC link, buck-type DC/DC average model, and the
// fleet-scaling dependent current source.
//
// Power convention: amplitude-invariant per-phase dq quantities with
// P = (3/2)(v_d i_d + v_q i_q), Q = (3/2)(v_q i_d - v_d i_q).
#pragma once

#include <utility>

#include "evload/common.hpp"
#include "evload/control.hpp"

namespace evload {

struct StationParams {
    double r_f = 3.2e-3;     // ohm
    double l_f = 0.2e-3;     // H
    double c_dc1 = 1.0e-3;   // F
    double l_dc = 0.2e-3;    // H
    double c_dc2 = 0.5e-3;   // F
    double v_c_nom = 230.0;  // V, rated AC magnitude
    double p_ev_nom = 50e3;  // W
    double omega = 2.0 * kPi * 50.0;  // rad/s, dq synchronous speed
    double tap = 1.0;        // ideal transformer ratio
    int n_ev = 1;            // fleet multiplier
    double delta_min = 0.05;
    double delta_max = 0.95;

    double i_base() const { return p_ev_nom / (1.5 * v_c_nom); }

    void validate() const {
        if (r_f <= 0 || l_f <= 0 || c_dc1 <= 0 || l_dc <= 0 || c_dc2 <= 0)
            throw DomainError("StationParams: electrical parameters must be positive");
        if (v_c_nom <= 0 || p_ev_nom <= 0 || omega <= 0)
            throw DomainError("StationParams: ratings must be positive");
        if (tap <= 0) throw DomainError("StationParams: tap must be positive");
        if (n_ev < 1) throw DomainError("StationParams: n_ev must be >= 1");
    }
};

struct StationState {
    double i_d = 0.0;    // A, filter current
    double i_q = 0.0;    // A
    double v_dc = 0.0;   // V, across C_DC1
    double i_l = 0.0;    // A, through L_DC
    double v_dc2 = 0.0;  // V, across C_DC2
    double e_d = 0.0;    // V, converter internal source
    double e_q = 0.0;    // V
    double delta = 0.5;  // duty cycle
};

// Point-of-connection quantities on the AC side.
struct AcPort {
    double v_cd = 0.0;     // V
    double v_cq = 0.0;     // V
    double i_inj_d = 0.0;  // A, drawn from the grid (fleet total)
    double i_inj_q = 0.0;  // A
    double p_ev = 0.0;     // W, includes filter loss
    double q_ev = 0.0;     // var
};

inline double ac_power(double v_d, double v_q, double i_d, double i_q) {
    return 1.5 * (v_d * i_d + v_q * i_q);
}

inline double ac_reactive(double v_d, double v_q, double i_d, double i_q) {
    return 1.5 * (v_q * i_d - v_d * i_q);
}

// R_F-L_F filter equations in the dq frame.
inline std::pair<double, double> filter_dynamics(const StationState& s,
                                                 const AcPort& port,
                                                 const StationParams& p) {
    const double did =
        (port.v_cd - p.r_f * s.i_d + p.omega * p.l_f * s.i_q - s.e_d) / p.l_f;
    const double diq =
        (port.v_cq - p.r_f * s.i_q - p.omega * p.l_f * s.i_d - s.e_q) / p.l_f;
    return {did, diq};
}

// DC-link capacitor balance; the AC->DC coupling is lossless power
// transfer, the DC/DC stage draws delta * i_L from the link.
inline double dc_link_dynamics(const StationState& s, const StationParams& p,
                               double p_conv) {
    if (s.v_dc <= 1.0)
        throw NumericalError("dc_link_dynamics: v_dc collapsed below guard level");
    return (p_conv / s.v_dc - s.delta * s.i_l) / p.c_dc1;
}

// Buck-type DC/DC average model. The battery terminal is pinned to v_dc2,
// so the battery current enters as the C_DC2 discharge term.
inline std::pair<double, double> dcdc_average_dynamics(const StationState& s,
                                                       const StationParams& p,
                                                       double i_batt) {
    const double dil = (s.delta * s.v_dc - s.v_dc2) / p.l_dc;
    const double dvdc2 = (s.i_l - i_batt) / p.c_dc2;
    return {dil, dvdc2};
}

// N_EV identical EVs in parallel, synthesized through a dependent current
// source: the grid-side injected current scales linearly.
inline std::pair<double, double> fleet_injection(std::pair<double, double> single_ev,
                                                 int n_ev) {
    if (n_ev < 1) throw DomainError("fleet_injection: n_ev must be >= 1");
    return {n_ev * single_ev.first, n_ev * single_ev.second};
}

// Ideal transformer tap change; instantaneous.
inline StationParams set_tap(const StationParams& p, double new_tap) {
    if (new_tap <= 0) throw DomainError("set_tap: tap must be positive");
    StationParams out = p;
    out.tap = new_tap;
    return out;
}

}  // namespace evload
