// Network data model and power-flow solver: bus/branch/generator/load
// case files, Y-bus assembly, Newton-Raphson power flow with
// voltage-dependent EV fleet attachments, and the lambda-overload
// construction that adds one fleet per existing load.
#pragma once

#include <complex>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "evload/loadmodels.hpp"
#include "evload/station_sim.hpp"

namespace evload {

enum class BusType { Slack, PV, PQ };

struct Bus {
    int id = 0;
    BusType type = BusType::PQ;
    double v_nom_kv = 0.0;
    double v_set = 1.0;  // pu, slack/PV setpoint
    std::string name;
};

struct Branch {
    int from = 0, to = 0;
    double r = 0.0, x = 0.0, b = 0.0;  // pu; b = total line charging
    double tap = 1.0;                  // off-nominal turns ratio on the from side
};

// Two-axis machine constants plus a first-order AVR, all on the system base.
struct MachineDynParams {
    double h = 5.0;      // s
    double d = 1.0;      // pu damping torque
    double xd = 1.0, xq = 0.8;
    double xdp = 0.3, xqp = 0.5;
    double td0p = 6.0, tq0p = 0.8;  // s
    double ra = 0.0;
    double avr_ka = 200.0;
    double avr_ta = 0.02;  // s
};

struct Generator {
    int bus = 0;
    double p_set_mw = 0.0;
    MachineDynParams dyn;
};

struct Load {
    int bus = 0;
    double p_mw = 0.0;
    double q_mvar = 0.0;
};

struct Shunt {
    int bus = 0;
    double g_pu = 0.0, b_pu = 0.0;
};

enum class EvRepresentation { ConstPq, StaticModel, Detailed, Vflm };

inline const char* to_string(EvRepresentation r) {
    switch (r) {
        case EvRepresentation::ConstPq: return "pq";
        case EvRepresentation::StaticModel: return "static";
        case EvRepresentation::Detailed: return "detailed";
        case EvRepresentation::Vflm: return "vflm";
    }
    return "?";
}

inline EvRepresentation ev_representation_from_string(const std::string& s) {
    if (s == "pq" || s == "const_pq") return EvRepresentation::ConstPq;
    if (s == "static" || s == "static_model") return EvRepresentation::StaticModel;
    if (s == "detailed") return EvRepresentation::Detailed;
    if (s == "vflm") return EvRepresentation::Vflm;
    throw ParseError("unknown EV representation: " + s);
}

// EV fleet attached in parallel to an existing load. The ideal coupling
// transformer maps rated bus voltage to the station AC rating, so the
// station terminal voltage is v_c = tap * V_pu * v_c_nom.
struct FleetAttachment {
    int bus = 0;
    EvRepresentation repr = EvRepresentation::ConstPq;
    Chemistry chemistry = Chemistry::LFP;
    ChargeMode mode = ChargeMode::CPCV;
    double soc0 = 0.1;
    int n_ev = 1;
    double lambda = 0.0;
    double p_const_w = 0.0;  // lambda * P_nom_i, used by the const-PQ base case
    // static-model parameters (fitted); `static_kind` selects exp/ev_static
    std::string static_kind = "ev_static";
    EvStaticParams ev_params;
    ExpParams exp_params;
};

struct GridCase {
    std::string name = "case";
    double base_mva = 100.0;
    double frequency_hz = 60.0;
    std::vector<Bus> buses;
    std::vector<Branch> branches;
    std::vector<Generator> generators;
    std::vector<Load> loads;
    std::vector<Shunt> shunts;
    std::vector<FleetAttachment> fleets;

    int index_of(int bus_id) const {
        for (std::size_t i = 0; i < buses.size(); ++i)
            if (buses[i].id == bus_id) return int(i);
        throw DomainError("unknown bus id " + std::to_string(bus_id));
    }

    void validate() const {
        if (buses.empty()) throw DomainError("GridCase: no buses");
        int slack_count = 0;
        for (const auto& b : buses)
            if (b.type == BusType::Slack) ++slack_count;
        if (slack_count != 1)
            throw DomainError("GridCase: exactly one slack bus required, found " +
                              std::to_string(slack_count));
        for (const auto& l : loads) {
            if (l.p_mw < 0) throw DomainError("GridCase: load P must be non-negative");
            index_of(l.bus);
        }
        for (const auto& br : branches) {
            index_of(br.from);
            index_of(br.to);
            if (br.r == 0 && br.x == 0) throw DomainError("GridCase: branch with zero impedance");
        }
        for (const auto& g : generators) index_of(g.bus);
        // connectivity
        std::vector<int> comp(buses.size(), -1);
        std::vector<int> stack{0};
        comp[0] = 0;
        while (!stack.empty()) {
            const int i = stack.back();
            stack.pop_back();
            for (const auto& br : branches) {
                const int f = index_of(br.from), t = index_of(br.to);
                if (f == i && comp[t] < 0) { comp[t] = 0; stack.push_back(t); }
                if (t == i && comp[f] < 0) { comp[f] = 0; stack.push_back(f); }
            }
        }
        for (std::size_t i = 0; i < buses.size(); ++i)
            if (comp[i] < 0)
                throw DomainError("GridCase: bus " + std::to_string(buses[i].id) +
                                  " is disconnected");
    }
};

// ---------------------------------------------------------------------------
// Case file I/O: plain-text sections with named columns.

inline GridCase load_case(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ParseError("cannot open case file: " + path);
    GridCase gc;
    gc.base_mva = 0.0;
    std::string line, section;
    int lineno = 0;
    auto fail = [&](const std::string& what) {
        throw ParseError(path + ":" + std::to_string(lineno) + ": " + what);
    };
    while (std::getline(f, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        std::istringstream ss(line);
        std::string tok;
        if (!(ss >> tok)) continue;
        if (tok.front() == '[') {
            section = tok;
            continue;
        }
        if (section.empty()) {
            if (tok == "name") ss >> gc.name;
            else if (tok == "base_mva") ss >> gc.base_mva;
            else if (tok == "frequency_hz") ss >> gc.frequency_hz;
            else fail("unknown header key `" + tok + "`");
            continue;
        }
        if (section == "[buses]") {
            Bus b;
            std::string type;
            std::istringstream ls(line);
            if (!(ls >> b.id >> type >> b.v_nom_kv >> b.v_set)) fail("bad bus row");
            if (!(ls >> b.name)) b.name = "BUS" + std::to_string(b.id);
            if (type == "slack") b.type = BusType::Slack;
            else if (type == "pv") b.type = BusType::PV;
            else if (type == "pq") b.type = BusType::PQ;
            else fail("bad bus type `" + type + "`");
            gc.buses.push_back(b);
        } else if (section == "[branches]") {
            Branch br;
            std::istringstream ls(line);
            if (!(ls >> br.from >> br.to >> br.r >> br.x >> br.b >> br.tap))
                fail("bad branch row");
            if (br.tap == 0.0) br.tap = 1.0;
            gc.branches.push_back(br);
        } else if (section == "[generators]") {
            Generator g;
            std::istringstream ls(line);
            auto& d = g.dyn;
            if (!(ls >> g.bus >> g.p_set_mw >> d.h >> d.d >> d.xd >> d.xq >> d.xdp >>
                  d.xqp >> d.td0p >> d.tq0p >> d.ra >> d.avr_ka >> d.avr_ta))
                fail("bad generator row");
            gc.generators.push_back(g);
        } else if (section == "[loads]") {
            Load l;
            std::istringstream ls(line);
            if (!(ls >> l.bus >> l.p_mw >> l.q_mvar)) fail("bad load row");
            gc.loads.push_back(l);
        } else if (section == "[shunts]") {
            Shunt s;
            std::istringstream ls(line);
            if (!(ls >> s.bus >> s.g_pu >> s.b_pu)) fail("bad shunt row");
            gc.shunts.push_back(s);
        } else {
            fail("unknown section " + section);
        }
    }
    if (gc.base_mva <= 0) throw ParseError(path + ": missing base_mva");
    gc.validate();
    return gc;
}

inline void save_case(const std::string& path, const GridCase& gc) {
    std::ofstream f(path);
    if (!f) throw ParseError("cannot write case file: " + path);
    auto num = [](double x) {
        char buf[40];
        std::snprintf(buf, sizeof buf, "%.10g", x);
        return std::string(buf);
    };
    f << "name " << gc.name << "\nbase_mva " << num(gc.base_mva) << "\nfrequency_hz "
      << num(gc.frequency_hz) << "\n\n[buses]\n";
    for (const auto& b : gc.buses) {
        const char* t = b.type == BusType::Slack ? "slack"
                        : b.type == BusType::PV  ? "pv"
                                                 : "pq";
        f << b.id << " " << t << " " << num(b.v_nom_kv) << " " << num(b.v_set) << " "
          << b.name << "\n";
    }
    f << "\n[branches]\n";
    for (const auto& br : gc.branches)
        f << br.from << " " << br.to << " " << num(br.r) << " " << num(br.x) << " "
          << num(br.b) << " " << num(br.tap) << "\n";
    f << "\n[generators]\n";
    for (const auto& g : gc.generators) {
        const auto& d = g.dyn;
        f << g.bus << " " << num(g.p_set_mw) << " " << num(d.h) << " " << num(d.d) << " "
          << num(d.xd) << " " << num(d.xq) << " " << num(d.xdp) << " " << num(d.xqp)
          << " " << num(d.td0p) << " " << num(d.tq0p) << " " << num(d.ra) << " "
          << num(d.avr_ka) << " " << num(d.avr_ta) << "\n";
    }
    f << "\n[loads]\n";
    for (const auto& l : gc.loads)
        f << l.bus << " " << num(l.p_mw) << " " << num(l.q_mvar) << "\n";
    f << "\n[shunts]\n";
    for (const auto& s : gc.shunts)
        f << s.bus << " " << num(s.g_pu) << " " << num(s.b_pu) << "\n";
}

inline std::string bundled_case_path() { return data_dir() + "/ieee14.case"; }

// ---------------------------------------------------------------------------
// Fleet construction (lambda overload)

struct FleetSpec {
    EvRepresentation repr = EvRepresentation::ConstPq;
    Chemistry chemistry = Chemistry::LFP;
    ChargeMode mode = ChargeMode::CPCV;
    double soc0 = 0.1;
    double p_ev_nom = 50e3;  // W
    std::string static_kind = "ev_static";
    EvStaticParams ev_params;
    ExpParams exp_params;
};

// Adds one EV fleet per existing load with n_ev = round(lambda P_nom_i /
// P_ev_nom) and scales PV-bus generator setpoints by (1 + lambda); the
// slack picks up the unmatched demand.
inline GridCase apply_overload(const GridCase& base, double lambda, const FleetSpec& spec) {
    if (lambda < 0) throw DomainError("apply_overload: lambda must be non-negative");
    GridCase out = base;
    out.fleets.clear();
    if (lambda == 0.0) return out;
    for (const auto& l : base.loads) {
        if (l.p_mw <= 0) continue;
        FleetAttachment att;
        att.bus = l.bus;
        att.repr = spec.repr;
        att.chemistry = spec.chemistry;
        att.mode = spec.mode;
        att.soc0 = spec.soc0;
        att.lambda = lambda;
        att.p_const_w = lambda * l.p_mw * 1e6;
        att.n_ev = int(std::lround(lambda * l.p_mw * 1e6 / spec.p_ev_nom));
        att.static_kind = spec.static_kind;
        att.ev_params = spec.ev_params;
        att.exp_params = spec.exp_params;
        if (att.n_ev >= 1) out.fleets.push_back(att);
    }
    for (auto& g : out.generators) {
        const int bi = out.index_of(g.bus);
        if (out.buses[bi].type == BusType::PV) g.p_set_mw *= (1.0 + lambda);
    }
    return out;
}

// Steady-state fleet power at a given bus voltage (W; Q = 0 in every EV
// representation). The detailed variant evaluates the full station
// cascade; the VFLM variant uses its paired static model in power flow.
inline double fleet_power_w(const FleetAttachment& att, double v_bus_pu,
                            const StationParams& sp = StationParams{}) {
    const double v_c = v_bus_pu * sp.tap * sp.v_c_nom;
    switch (att.repr) {
        case EvRepresentation::ConstPq:
            return att.p_const_w;
        case EvRepresentation::StaticModel:
        case EvRepresentation::Vflm: {
            if (att.static_kind == "exp")
                return att.n_ev * exp_power(att.exp_params, v_c);
            return att.n_ev * ev_static_power(att.ev_params, v_c, att.soc0);
        }
        case EvRepresentation::Detailed: {
            auto model = StationModel::make(att.chemistry, att.mode, sp);
            model.soc_param = att.soc0;
            return att.n_ev * model.steady_outputs(v_c, att.soc0).p_ev;
        }
    }
    throw DomainError("fleet_power_w: bad representation");
}

// ---------------------------------------------------------------------------
// Power flow

struct PowerFlowSolution {
    bool converged = false;
    int iterations = 0;
    double worst_mismatch = 0.0;  // pu
    std::vector<double> v_mag;    // pu
    std::vector<double> v_ang;    // rad
    std::vector<double> p_inj;    // pu, net injection per bus
    std::vector<double> q_inj;    // pu
    struct BranchFlow {
        double p_from, q_from, p_to, q_to;  // pu
        double i_from, i_to;                // pu current magnitude
    };
    std::vector<BranchFlow> flows;
    double losses_mw = 0.0;
    double slack_p_mw = 0.0;
    double slack_q_mvar = 0.0;
    std::vector<double> fleet_p_mw;  // per attachment

    std::complex<double> voltage(int i) const {
        return std::polar(v_mag[i], v_ang[i]);
    }
};

struct PowerFlowOptions {
    double tol = 1e-8;    // pu, max mismatch
    int max_iter = 30;
    StationParams station;  // used by detailed attachments
};

inline std::vector<std::vector<Cx>> build_ybus(const GridCase& gc) {
    const int n = int(gc.buses.size());
    std::vector<std::vector<Cx>> y(n, std::vector<Cx>(n, Cx(0, 0)));
    for (const auto& br : gc.branches) {
        const int f = gc.index_of(br.from), t = gc.index_of(br.to);
        const Cx ys = 1.0 / Cx(br.r, br.x);
        const Cx bsh(0.0, br.b / 2.0);
        const double a = br.tap;
        y[f][f] += (ys + bsh) / (a * a);
        y[f][t] += -ys / a;
        y[t][f] += -ys / a;
        y[t][t] += ys + bsh;
    }
    for (const auto& s : gc.shunts) {
        const int i = gc.index_of(s.bus);
        y[i][i] += Cx(s.g_pu, s.b_pu);
    }
    return y;
}

inline PowerFlowSolution solve_power_flow(const GridCase& gc,
                                          PowerFlowOptions opt = {}) {
    gc.validate();
    const int n = int(gc.buses.size());
    const auto ybus = build_ybus(gc);
    const double sbase_w = gc.base_mva * 1e6;

    // specified injections (constant part, pu)
    std::vector<double> p_spec(n, 0.0), q_spec(n, 0.0);
    for (const auto& g : gc.generators) p_spec[gc.index_of(g.bus)] += g.p_set_mw / gc.base_mva;
    for (const auto& l : gc.loads) {
        p_spec[gc.index_of(l.bus)] -= l.p_mw / gc.base_mva;
        q_spec[gc.index_of(l.bus)] -= l.q_mvar / gc.base_mva;
    }

    std::vector<double> vm(n, 1.0), va(n, 0.0);
    int slack = 0;
    for (int i = 0; i < n; ++i) {
        if (gc.buses[i].type != BusType::PQ) vm[i] = gc.buses[i].v_set;
        if (gc.buses[i].type == BusType::Slack) slack = i;
    }

    // unknown ordering: angles for non-slack, magnitudes for PQ
    std::vector<int> ang_idx, mag_idx;
    for (int i = 0; i < n; ++i) {
        if (gc.buses[i].type != BusType::Slack) ang_idx.push_back(i);
        if (gc.buses[i].type == BusType::PQ) mag_idx.push_back(i);
    }
    const int na = int(ang_idx.size()), nm = int(mag_idx.size());

    auto fleet_p_pu = [&](const FleetAttachment& att, double v) {
        return fleet_power_w(att, v, opt.station) / sbase_w;
    };

    auto calc_power = [&](std::vector<double>& p, std::vector<double>& q) {
        for (int i = 0; i < n; ++i) {
            double pi = 0, qi = 0;
            for (int k = 0; k < n; ++k) {
                const double g = ybus[i][k].real(), b = ybus[i][k].imag();
                const double th = va[i] - va[k];
                pi += vm[i] * vm[k] * (g * std::cos(th) + b * std::sin(th));
                qi += vm[i] * vm[k] * (g * std::sin(th) - b * std::cos(th));
            }
            p[i] = pi;
            q[i] = qi;
        }
    };

    PowerFlowSolution sol;
    std::vector<double> p_calc(n), q_calc(n);
    std::vector<double> p_fleet(n, 0.0);

    for (int it = 0; it <= opt.max_iter; ++it) {
        // voltage-dependent EV loads evaluated inside the mismatch
        std::fill(p_fleet.begin(), p_fleet.end(), 0.0);
        for (const auto& att : gc.fleets)
            p_fleet[gc.index_of(att.bus)] += fleet_p_pu(att, vm[gc.index_of(att.bus)]);

        calc_power(p_calc, q_calc);
        Vec mis(na + nm);
        for (int a = 0; a < na; ++a) {
            const int i = ang_idx[a];
            mis[a] = p_spec[i] - p_fleet[i] - p_calc[i];
        }
        for (int m = 0; m < nm; ++m) {
            const int i = mag_idx[m];
            mis[na + m] = q_spec[i] - q_calc[i];
        }
        sol.worst_mismatch = mis.cwiseAbs().maxCoeff();
        sol.iterations = it;
        if (sol.worst_mismatch < opt.tol) {
            sol.converged = true;
            break;
        }
        if (it == opt.max_iter) break;

        // polar Jacobian
        Mat jac = Mat::Zero(na + nm, na + nm);
        for (int a = 0; a < na; ++a) {
            const int i = ang_idx[a];
            for (int a2 = 0; a2 < na; ++a2) {
                const int k = ang_idx[a2];
                double v;
                if (i == k) {
                    v = -q_calc[i] - ybus[i][i].imag() * vm[i] * vm[i];
                } else {
                    const double g = ybus[i][k].real(), b = ybus[i][k].imag();
                    const double th = va[i] - va[k];
                    v = vm[i] * vm[k] * (g * std::sin(th) - b * std::cos(th));
                }
                jac(a, a2) = v;  // dP/dtheta
            }
            for (int m = 0; m < nm; ++m) {
                const int k = mag_idx[m];
                double v;
                if (i == k) {
                    v = p_calc[i] / vm[i] + ybus[i][i].real() * vm[i];
                    // voltage sensitivity of the EV fleets at this bus
                    double dpf = 0.0;
                    for (const auto& att : gc.fleets) {
                        if (gc.index_of(att.bus) != i) continue;
                        const double h = 1e-6;
                        dpf += (fleet_p_pu(att, vm[i] + h) - fleet_p_pu(att, vm[i] - h)) /
                               (2 * h);
                    }
                    v += dpf;  // moves to the mismatch side with opposite sign below
                } else {
                    const double g = ybus[i][k].real(), b = ybus[i][k].imag();
                    const double th = va[i] - va[k];
                    v = vm[i] * (g * std::cos(th) + b * std::sin(th));
                }
                jac(a, na + m) = v;  // dP/dV
            }
        }
        for (int m = 0; m < nm; ++m) {
            const int i = mag_idx[m];
            for (int a2 = 0; a2 < na; ++a2) {
                const int k = ang_idx[a2];
                double v;
                if (i == k) {
                    v = p_calc[i] - ybus[i][i].real() * vm[i] * vm[i];
                } else {
                    const double g = ybus[i][k].real(), b = ybus[i][k].imag();
                    const double th = va[i] - va[k];
                    v = -vm[i] * vm[k] * (g * std::cos(th) + b * std::sin(th));
                }
                jac(na + m, a2) = v;  // dQ/dtheta
            }
            for (int m2 = 0; m2 < nm; ++m2) {
                const int k = mag_idx[m2];
                double v;
                if (i == k) {
                    v = q_calc[i] / vm[i] - ybus[i][i].imag() * vm[i];
                } else {
                    const double g = ybus[i][k].real(), b = ybus[i][k].imag();
                    const double th = va[i] - va[k];
                    v = vm[i] * (g * std::sin(th) - b * std::cos(th));
                }
                jac(na + m, na + m2) = v;  // dQ/dV
            }
        }
        Eigen::PartialPivLU<Mat> lu(jac);
        const Vec dx = lu.solve(mis);
        if (!dx.allFinite())
            throw NumericalError("power flow: singular Jacobian");
        for (int a = 0; a < na; ++a) va[ang_idx[a]] += dx[a];
        for (int m = 0; m < nm; ++m) vm[mag_idx[m]] += dx[na + m];
    }

    if (!sol.converged) return sol;

    sol.v_mag = vm;
    sol.v_ang = va;
    calc_power(p_calc, q_calc);
    sol.p_inj = p_calc;
    sol.q_inj = q_calc;

    // branch flows and losses
    double loss_pu = 0.0;
    for (const auto& br : gc.branches) {
        const int f = gc.index_of(br.from), t = gc.index_of(br.to);
        const Cx vf = std::polar(vm[f], va[f]), vt = std::polar(vm[t], va[t]);
        const Cx ys = 1.0 / Cx(br.r, br.x);
        const Cx bsh(0.0, br.b / 2.0);
        const double a = br.tap;
        const Cx i_f = (ys + bsh) / (a * a) * vf - ys / a * vt;
        const Cx i_t = (ys + bsh) * vt - ys / a * vf;
        PowerFlowSolution::BranchFlow fl;
        const Cx sf = vf * std::conj(i_f), st = vt * std::conj(i_t);
        fl.p_from = sf.real();
        fl.q_from = sf.imag();
        fl.p_to = st.real();
        fl.q_to = st.imag();
        fl.i_from = std::abs(i_f);
        fl.i_to = std::abs(i_t);
        sol.flows.push_back(fl);
        loss_pu += sf.real() + st.real();
    }
    sol.losses_mw = loss_pu * gc.base_mva;
    sol.slack_p_mw = 0.0;
    {
        // slack generation = net injection + local load (incl. fleets there)
        double pl = 0.0, ql = 0.0;
        for (const auto& l : gc.loads)
            if (gc.index_of(l.bus) == slack) {
                pl += l.p_mw / gc.base_mva;
                ql += l.q_mvar / gc.base_mva;
            }
        for (const auto& att : gc.fleets)
            if (gc.index_of(att.bus) == slack)
                pl += fleet_p_pu(att, vm[slack]);
        sol.slack_p_mw = (p_calc[slack] + pl) * gc.base_mva;
        sol.slack_q_mvar = (q_calc[slack] + ql) * gc.base_mva;
    }
    for (const auto& att : gc.fleets)
        sol.fleet_p_mw.push_back(fleet_power_w(att, vm[gc.index_of(att.bus)], opt.station) / 1e6);
    return sol;
}

}  // namespace evload
