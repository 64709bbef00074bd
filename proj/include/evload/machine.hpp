// Two-axis (4th-order) synchronous machine with a first-order AVR.
// States per machine: [delta, dw (pu speed deviation), E'q, E'd, Efd].
// Stator transients neglected; terminal currents follow algebraically
// from the subtransient-free stator equations.
#pragma once

#include <complex>

#include "evload/common.hpp"
#include "evload/grid.hpp"

namespace evload {

struct MachineInit {
    double delta = 0.0;
    double eqp = 0.0;
    double edp = 0.0;
    double efd = 0.0;
    double p_m = 0.0;   // pu mechanical power
    double v_ref = 0.0; // pu AVR reference
};

// dq currents (machine frame) from the stator algebra at terminal
// voltage V (network frame) and rotor state.
inline void machine_currents(const MachineDynParams& m, double delta, double eqp,
                             double edp, const Cx& v_bus, double& i_d, double& i_q,
                             double& v_d, double& v_q) {
    // rotate network phasor into the rotor frame (q axis leads by delta)
    const Cx rot = std::exp(Cx(0.0, -(delta - kPi / 2.0)));
    const Cx v_dq = v_bus * rot;
    v_d = v_dq.real();
    v_q = v_dq.imag();
    const double det = m.ra * m.ra + m.xdp * m.xqp;
    i_d = (m.ra * (edp - v_d) + m.xqp * (eqp - v_q)) / det;
    i_q = (-m.xdp * (edp - v_d) + m.ra * (eqp - v_q)) / det;
}

// net injected current phasor (network frame, pu, generator convention)
inline Cx machine_injection(double delta, double i_d, double i_q) {
    return Cx(i_d, i_q) * std::exp(Cx(0.0, delta - kPi / 2.0));
}

inline double machine_pe(const MachineDynParams& m, double eqp, double edp, double i_d,
                         double i_q) {
    return edp * i_d + eqp * i_q + (m.xqp - m.xdp) * i_d * i_q;
}

// State derivatives; `omega_s` is the synchronous speed in rad/s.
inline void machine_deriv(const MachineDynParams& m, double omega_s, double delta,
                          double dw, double eqp, double edp, double efd,
                          const MachineInit& init, const Cx& v_bus, double* out5) {
    double i_d, i_q, v_d, v_q;
    machine_currents(m, delta, eqp, edp, v_bus, i_d, i_q, v_d, v_q);
    const double pe = machine_pe(m, eqp, edp, i_d, i_q);
    out5[0] = omega_s * dw;
    out5[1] = (init.p_m - pe - m.d * dw) / (2.0 * m.h);
    out5[2] = (-eqp - (m.xd - m.xdp) * i_d + efd) / m.td0p;
    out5[3] = (-edp + (m.xq - m.xqp) * i_q) / m.tq0p;
    out5[4] = (-efd + m.avr_ka * (init.v_ref - std::abs(v_bus))) / m.avr_ta;
}

// Standard initialization from a solved power flow operating point.
inline MachineInit init_machine(const MachineDynParams& m, const Cx& v_bus,
                                double p_gen_pu, double q_gen_pu) {
    MachineInit init;
    const Cx s(p_gen_pu, q_gen_pu);
    const Cx i = std::conj(s / v_bus);
    init.delta = std::arg(v_bus + Cx(m.ra, m.xq) * i);
    const Cx rot = std::exp(Cx(0.0, -(init.delta - kPi / 2.0)));
    const Cx v_dq = v_bus * rot, i_dq = i * rot;
    const double v_d = v_dq.real(), v_q = v_dq.imag();
    const double i_d = i_dq.real(), i_q = i_dq.imag();
    init.eqp = v_q + m.ra * i_q + m.xdp * i_d;
    init.edp = v_d + m.ra * i_d - m.xqp * i_q;
    init.efd = init.eqp + (m.xd - m.xdp) * i_d;
    init.p_m = machine_pe(m, init.eqp, init.edp, i_d, i_q);
    init.v_ref = std::abs(v_bus) + init.efd / m.avr_ka;
    return init;
}

}  // namespace evload
