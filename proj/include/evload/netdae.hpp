// Full network DAE: synchronous machines with AVRs, EV fleets in any
// representation (constant PQ, static model, detailed station, VFLM),
// constant-PQ background loads, and the nodal current balance as the
// algebraic constraint set. Provides consistent initialization from a
// solved power flow, small-signal reduction, and transient simulation
// with a load-step disturbance.
#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "evload/dae.hpp"
#include "evload/grid.hpp"
#include "evload/machine.hpp"
#include "evload/station_sim.hpp"

namespace evload {

// Optional time-varying multiplier on one background load's active power.
struct LoadDisturbance {
    int load_index = -1;   // index into GridCase::loads
    double t_start = 1.0;  // s
    double duration = 0.1; // s
    double factor = 1.01;

    double scale(double t) const {
        if (load_index < 0) return 1.0;
        return (t >= t_start && t < t_start + duration) ? factor : 1.0;
    }
};

// Assembled network DAE. State layout:
//   [machine states (5 each)] [detailed station states (10 each)]
//   [vflm recovery states] | algebraic: [V_re, V_im per bus]
class NetworkDae {
public:
    NetworkDae(GridCase gc, PowerFlowSolution pf, StationParams sp = StationParams{},
               StationGains gains = StationGains{}, VflmParams vflm_template = {})
        : gc_(std::move(gc)), pf_(std::move(pf)), sp_(sp) {
        if (!pf_.converged) throw DomainError("NetworkDae: power flow not converged");
        omega_s_ = 2.0 * kPi * gc_.frequency_hz;
        sbase_w_ = gc_.base_mva * 1e6;
        ybus_ = build_ybus(gc_);
        const int n = int(gc_.buses.size());

        // machine initialization
        for (const auto& g : gc_.generators) {
            const int bi = gc_.index_of(g.bus);
            const Cx v = pf_.voltage(bi);
            // generated power = net injection + local demand at the bus
            double p_load = 0.0, q_load = 0.0;
            for (const auto& l : gc_.loads)
                if (gc_.index_of(l.bus) == bi) {
                    p_load += l.p_mw / gc_.base_mva;
                    q_load += l.q_mvar / gc_.base_mva;
                }
            for (std::size_t a = 0; a < gc_.fleets.size(); ++a)
                if (gc_.index_of(gc_.fleets[a].bus) == bi)
                    p_load += pf_.fleet_p_mw[a] / gc_.base_mva;
            const double p_gen = pf_.p_inj[bi] + p_load;
            const double q_gen = pf_.q_inj[bi] + q_load;
            machines_.push_back({g.dyn, init_machine(g.dyn, v, p_gen, q_gen), bi});
        }

        // fleet models
        for (std::size_t a = 0; a < gc_.fleets.size(); ++a) {
            const auto& att = gc_.fleets[a];
            const int bi = gc_.index_of(att.bus);
            const double v_c = pf_.v_mag[bi] * sp_.tap * sp_.v_c_nom;
            if (att.repr == EvRepresentation::Detailed) {
                StationModel m = StationModel::make(att.chemistry, att.mode, sp_, gains);
                m.soc_param = att.soc0;
                stations_.push_back({std::move(m), bi, att.n_ev});
            } else if (att.repr == EvRepresentation::Vflm) {
                VflmParams m = vflm_template;
                m.p0 = pf_.fleet_p_mw[a] * 1e6;
                m.v0 = v_c;
                m.validate();
                vflms_.push_back({m, realize_tf(m.g), bi});
            }
        }

        n_mach_ = int(machines_.size());
        n_sta_ = int(stations_.size());
        n_diff_ = 5 * n_mach_ + 10 * n_sta_;
        vflm_offset_.clear();
        for (const auto& v : vflms_) {
            vflm_offset_.push_back(n_diff_);
            n_diff_ += v.ss.order();
        }
        n_alg_ = 2 * n;
    }

    int n_diff() const { return n_diff_; }
    int n_alg() const { return n_alg_; }
    int n_buses() const { return int(gc_.buses.size()); }

    LoadDisturbance disturbance;

    DaeFunction make() const {
        DaeFunction f;
        f.n_diff = n_diff_;
        f.n_alg = n_alg_;
        f.scales = scales();
        f.eval = [this](double t, const Vec& y, Vec& df, Vec& g) { eval(t, y, df, g); };
        return f;
    }

    Vec scales() const {
        Vec w = Vec::Ones(n_diff_ + n_alg_);
        for (int s = 0; s < n_sta_; ++s) {
            const auto& model = stations_[s].model;
            w.segment(5 * n_mach_ + 10 * s, 10) = model.state_scales().head(10);
        }
        return w;
    }

    // consistent initial state from the power flow
    Vec initial_state() const {
        Vec y = Vec::Zero(n_diff_ + n_alg_);
        for (int m = 0; m < n_mach_; ++m) {
            const auto& mm = machines_[m];
            y[5 * m + 0] = mm.init.delta;
            y[5 * m + 1] = 0.0;
            y[5 * m + 2] = mm.init.eqp;
            y[5 * m + 3] = mm.init.edp;
            y[5 * m + 4] = mm.init.efd;
        }
        for (int s = 0; s < n_sta_; ++s) {
            const auto& st = stations_[s];
            const double v_c = pf_.v_mag[st.bus] * sp_.tap * sp_.v_c_nom;
            y.segment(5 * n_mach_ + 10 * s, 10) =
                st.model.steady_state(v_c, st.model.soc_param).head(10);
        }
        // vflm states start at zero (pre-disturbance steady state)
        for (int i = 0; i < n_buses(); ++i) {
            const Cx v = pf_.voltage(i);
            y[n_diff_ + 2 * i] = v.real();
            y[n_diff_ + 2 * i + 1] = v.imag();
        }
        return y;
    }

    // bus-voltage phasor out of a combined state vector
    Cx bus_voltage(const Vec& y, int bus_index) const {
        return Cx(y[n_diff_ + 2 * bus_index], y[n_diff_ + 2 * bus_index + 1]);
    }

    void eval(double t, const Vec& y, Vec& df, Vec& g) const {
        const int n = n_buses();
        df.resize(n_diff_);
        g.resize(n_alg_);
        std::vector<Cx> inj(n, Cx(0, 0));  // net injected current per bus, pu

        // machines
        for (int m = 0; m < n_mach_; ++m) {
            const auto& mm = machines_[m];
            const Cx v = bus_voltage(y, mm.bus);
            const double delta = y[5 * m], dw = y[5 * m + 1];
            const double eqp = y[5 * m + 2], edp = y[5 * m + 3], efd = y[5 * m + 4];
            machine_deriv(mm.dyn, omega_s_, delta, dw, eqp, edp, efd, mm.init, v,
                          df.data() + 5 * m);
            double i_d, i_q, v_d, v_q;
            machine_currents(mm.dyn, delta, eqp, edp, v, i_d, i_q, v_d, v_q);
            inj[mm.bus] += machine_injection(delta, i_d, i_q);
        }

        // detailed stations
        for (int s = 0; s < n_sta_; ++s) {
            const auto& st = stations_[s];
            const Cx v = bus_voltage(y, st.bus);
            const double vmag = std::abs(v);
            const double v_c = vmag * sp_.tap * sp_.v_c_nom;
            Vec xs = y.segment(5 * n_mach_ + 10 * s, 10);
            Vec dxs;
            st.model.deriv(xs, v_c, 0.0, dxs);
            df.segment(5 * n_mach_ + 10 * s, 10) = dxs;
            // drawn complex power: P = 1.5 v_c i_d, Q = -1.5 v_c i_q (per EV)
            const Cx s_ev =
                1.5 * v_c * Cx(xs[StationModel::IX_ID], -xs[StationModel::IX_IQ]) *
                double(st.n_ev) / sbase_w_;
            inj[st.bus] -= std::conj(s_ev / v);
        }

        // vflm fleets
        for (std::size_t k = 0; k < vflms_.size(); ++k) {
            const auto& vf = vflms_[k];
            const Cx v = bus_voltage(y, vf.bus);
            const double v_c = std::abs(v) * sp_.tap * sp_.v_c_nom;
            const int off = vflm_offset_[k];
            const int ng = vf.ss.order();
            const Vec xg = y.segment(off, ng);
            const double u = vf.params.f2(v_c);
            df.segment(off, ng) = vf.ss.a * xg + vf.ss.b * u;
            const double p_w =
                vf.params.p0 * (vf.params.f1(v_c) + vf.ss.c.dot(xg) + vf.ss.d * u);
            inj[vf.bus] -= std::conj(Cx(p_w / sbase_w_, 0.0) / v);
        }

        // background loads (constant PQ) and static/const fleets
        for (std::size_t li = 0; li < gc_.loads.size(); ++li) {
            const auto& l = gc_.loads[li];
            const int bi = gc_.index_of(l.bus);
            const Cx v = bus_voltage(y, bi);
            double scale = int(li) == disturbance.load_index ? disturbance.scale(t) : 1.0;
            const Cx s_pu(scale * l.p_mw / gc_.base_mva, l.q_mvar / gc_.base_mva);
            inj[bi] -= std::conj(s_pu / v);
        }
        for (const auto& att : gc_.fleets) {
            if (att.repr == EvRepresentation::Detailed || att.repr == EvRepresentation::Vflm)
                continue;
            const int bi = gc_.index_of(att.bus);
            const Cx v = bus_voltage(y, bi);
            const double p_pu = fleet_power_w(att, std::abs(v), sp_) / sbase_w_;
            inj[bi] -= std::conj(Cx(p_pu, 0.0) / v);
        }

        // nodal current balance
        for (int i = 0; i < n; ++i) {
            Cx acc = inj[i];
            for (int k = 0; k < n; ++k)
                acc -= ybus_[i][k] * bus_voltage(y, k);
            g[2 * i] = acc.real();
            g[2 * i + 1] = acc.imag();
        }
    }

    // post-processing helpers
    double bus_vmag(const Vec& y, int bus_id) const {
        return std::abs(bus_voltage(y, gc_.index_of(bus_id)));
    }

    const GridCase& grid() const { return gc_; }
    const PowerFlowSolution& power_flow() const { return pf_; }
    const StationParams& station_params() const { return sp_; }

private:
    struct MachineSlot {
        MachineDynParams dyn;
        MachineInit init;
        int bus;
    };
    struct StationSlot {
        StationModel model;
        int bus;
        int n_ev;
    };
    struct VflmSlot {
        VflmParams params;
        StateSpace ss;
        int bus;
    };

    GridCase gc_;
    PowerFlowSolution pf_;
    StationParams sp_;
    std::vector<MachineSlot> machines_;
    std::vector<StationSlot> stations_;
    std::vector<VflmSlot> vflms_;
    std::vector<std::vector<Cx>> ybus_;
    std::vector<int> vflm_offset_;
    double omega_s_ = 2 * kPi * 60.0;
    double sbase_w_ = 100e6;
    int n_mach_ = 0, n_sta_ = 0, n_diff_ = 0, n_alg_ = 0;
};

}  // namespace evload
