// Static load models (ZIP, exponential, and the EV static model with its
// SOC_0 term) and the vector-fitting dynamic load model: pole-residue
// transfer functions, their real block-diagonal state-space realization,
// and time-domain evaluation of the power-recovery structure
//   P(t) = P0 [ (v/v0)^Nt + G(s) ((v/v0)^Ns - (v/v0)^Nt) ].
#pragma once

#include <complex>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "evload/common.hpp"
#include "evload/dae.hpp"

namespace evload {

using Cx = std::complex<double>;

// ---------------------------------------------------------------------------
// Static models

struct ZipParams {
    double p_nom = 0.0;  // W
    double v_nom = 0.0;  // V
    double k0 = 0.0, k1 = 0.0, k2 = 0.0;
};

inline double zip_power(const ZipParams& p, double v) {
    if (p.v_nom <= 0) throw DomainError("zip_power: v_nom must be positive");
    if (v < 0) throw DomainError("zip_power: v must be non-negative");
    const double r = v / p.v_nom;
    return p.p_nom * (p.k0 + p.k1 * r + p.k2 * r * r);
}

struct ExpParams {
    double p_nom = 0.0;
    double v_nom = 0.0;
    double a_p = 0.0, b_p = 0.0, n_p = 0.0;
};

inline double exp_power(const ExpParams& p, double v) {
    if (p.v_nom <= 0) throw DomainError("exp_power: v_nom must be positive");
    if (v == 0.0 && p.n_p < 0)
        throw DomainError("exp_power: singular at v = 0 with negative exponent");
    if (v < 0) throw DomainError("exp_power: v must be non-negative");
    return p.p_nom * (p.a_p + p.b_p * std::pow(v / p.v_nom, p.n_p));
}

// EV static model: voltage term plus SOC_0 term, additive.
//   P = P_nom ( b (v/v_nom)^n + c - d (1-s)/s + e exp(-f (1-s)) )
struct EvStaticParams {
    double p_ev_nom = 0.0;
    double v_c_nom = 0.0;
    double b_p = 0.0, n_p = 0.0;
    double c_p = 0.0, d_p = 0.0, e_p = 0.0, f_p = 0.0;

    void validate() const {
        if (v_c_nom <= 0) throw DomainError("EvStaticParams: v_c_nom must be positive");
        if (f_p < 0) throw DomainError("EvStaticParams: f_p must be non-negative");
    }
};

inline double ev_static_power(const EvStaticParams& p, double v, double soc0) {
    if (v <= 0) throw DomainError("ev_static_power: v must be positive");
    if (soc0 <= 0.0 || soc0 > 1.0)
        throw DomainError("ev_static_power: soc0 must be in (0,1]");
    const double r = v / p.v_c_nom;
    const double soc_part =
        p.c_p - p.d_p * (1.0 - soc0) / soc0 + p.e_p * std::exp(-p.f_p * (1.0 - soc0));
    return p.p_ev_nom * (p.b_p * std::pow(r, p.n_p) + soc_part);
}

// ---------------------------------------------------------------------------
// Rational transfer function G(s) = sum c_n / (s - a_n) + d

struct RationalTF {
    std::vector<Cx> poles;
    std::vector<Cx> residues;
    double d = 0.0;  // direct feedthrough, 0 in the printed model form

    std::size_t order() const { return poles.size(); }

    Cx eval(Cx s) const {
        Cx acc(d, 0.0);
        for (std::size_t n = 0; n < poles.size(); ++n) acc += residues[n] / (s - poles[n]);
        return acc;
    }

    Cx eval_jw(double omega) const { return eval(Cx(0.0, omega)); }

    bool stable() const {
        for (const auto& a : poles)
            if (a.real() >= 0) return false;
        return true;
    }

    // Complex poles and residues must occur in conjugate pairs so the
    // impulse response is real.
    void check_conjugate_symmetry(double tol = 1e-9) const {
        if (poles.size() != residues.size())
            throw DomainError("RationalTF: pole/residue count mismatch");
        std::vector<bool> used(poles.size(), false);
        for (std::size_t i = 0; i < poles.size(); ++i) {
            if (used[i]) continue;
            if (std::abs(poles[i].imag()) <= tol * (1 + std::abs(poles[i]))) continue;
            bool found = false;
            for (std::size_t j = i + 1; j < poles.size(); ++j) {
                if (used[j]) continue;
                if (std::abs(poles[j] - std::conj(poles[i])) <=
                        tol * (1 + std::abs(poles[i])) &&
                    std::abs(residues[j] - std::conj(residues[i])) <=
                        tol * (1 + std::abs(residues[i]))) {
                    used[i] = used[j] = true;
                    found = true;
                    break;
                }
            }
            if (!found)
                throw DomainError("RationalTF: broken conjugate-pair symmetry");
        }
    }
};

// Real state-space realization, block diagonal: one 1x1 block per real
// pole, one 2x2 rotation block per conjugate pair.
struct StateSpace {
    Mat a;
    Vec b;
    Vec c;
    double d = 0.0;

    int order() const { return int(a.rows()); }

    Cx eval_jw(double omega) const {
        const int n = order();
        Eigen::MatrixXcd m = Eigen::MatrixXcd::Identity(n, n) * Cx(0.0, omega) -
                             a.cast<Cx>();
        Eigen::VectorXcd x = m.partialPivLu().solve(b.cast<Cx>());
        return c.cast<Cx>().dot(x) + Cx(d, 0.0);  // c is real, so no conjugation effect
    }
};

inline StateSpace realize_tf(const RationalTF& g) {
    g.check_conjugate_symmetry();
    const std::size_t np = g.poles.size();
    StateSpace ss;
    ss.a = Mat::Zero(np, np);
    ss.b = Vec::Zero(np);
    ss.c = Vec::Zero(np);
    ss.d = g.d;
    std::vector<bool> used(np, false);
    int k = 0;
    for (std::size_t i = 0; i < np; ++i) {
        if (used[i]) continue;
        const Cx a = g.poles[i];
        const Cx c = g.residues[i];
        if (std::abs(a.imag()) <= 1e-9 * (1 + std::abs(a))) {
            ss.a(k, k) = a.real();
            ss.b[k] = 1.0;
            ss.c[k] = c.real();
            used[i] = true;
            k += 1;
            continue;
        }
        // locate the conjugate partner
        std::size_t jpair = i;
        for (std::size_t j = i + 1; j < np; ++j) {
            if (!used[j] &&
                std::abs(g.poles[j] - std::conj(a)) <= 1e-9 * (1 + std::abs(a))) {
                jpair = j;
                break;
            }
        }
        if (jpair == i) throw DomainError("realize_tf: missing conjugate pole");
        const double al = a.real(), be = std::abs(a.imag());
        // orient the block to the pole with positive imaginary part
        const Cx cpos = a.imag() > 0 ? c : g.residues[jpair];
        ss.a(k, k) = al;
        ss.a(k, k + 1) = be;
        ss.a(k + 1, k) = -be;
        ss.a(k + 1, k + 1) = al;
        ss.b[k] = 2.0;
        ss.b[k + 1] = 0.0;
        ss.c[k] = cpos.real();
        ss.c[k + 1] = cpos.imag();
        used[i] = used[jpair] = true;
        k += 2;
    }
    return ss;
}

// ---------------------------------------------------------------------------
// VFLM

struct VflmParams {
    double n_t = 0.0;  // transient exponent
    double n_s = 0.0;  // steady-state exponent
    RationalTF g;
    double p0 = 0.0;  // W, pre-disturbance power
    double v0 = 0.0;  // V, pre-disturbance voltage

    void validate() const {
        if (v0 <= 0) throw DomainError("VflmParams: v0 must be positive");
        g.check_conjugate_symmetry();
        if (!g.stable()) throw DomainError("VflmParams: G(s) must be stable");
    }

    double f1(double v) const { return std::pow(v / v0, n_t); }
    double f2(double v) const { return std::pow(v / v0, n_s) - std::pow(v / v0, n_t); }
};

// Time-domain evaluation of the VFLM along a sampled voltage trajectory.
// The trajectory must start at the pre-disturbance steady state v0 (the
// recovery states then start at zero); integration is trapezoidal on the
// given grid.
inline std::vector<double> vflm_power(const VflmParams& m, const std::vector<double>& t,
                                      const std::vector<double>& v) {
    m.validate();
    if (t.size() != v.size() || t.size() < 1)
        throw DomainError("vflm_power: bad trajectory");
    if (std::abs(v.front() - m.v0) > 1e-9 * m.v0)
        throw DomainError("vflm_power: trajectory must start at v0");
    for (double vi : v)
        if (vi <= 0) throw DomainError("vflm_power: voltage samples must be positive");

    const StateSpace ss = realize_tf(m.g);
    const int n = ss.order();
    Vec x = Vec::Zero(n);
    std::vector<double> p(t.size());
    double u_prev = m.f2(v[0]);
    p[0] = m.p0 * (m.f1(v[0]) + ss.c.dot(x) + ss.d * u_prev);
    for (std::size_t k = 1; k < t.size(); ++k) {
        const double h = t[k] - t[k - 1];
        if (h <= 0) throw DomainError("vflm_power: time grid must be increasing");
        const double u = m.f2(v[k]);
        const Mat lhs = Mat::Identity(n, n) - 0.5 * h * ss.a;
        const Vec rhs =
            (Mat::Identity(n, n) + 0.5 * h * ss.a) * x + 0.5 * h * ss.b * (u_prev + u);
        x = lhs.partialPivLu().solve(rhs);
        u_prev = u;
        p[k] = m.p0 * (m.f1(v[k]) + ss.c.dot(x) + ss.d * u);
    }
    return p;
}

// ---------------------------------------------------------------------------
// Load-model parameter files
//
// Structured text: `kind` tag (zip/exp/ev_static/vflm), a key-value
// parameter map, and for vflm the pole/residue list as (re, im) pairs.

struct LoadModelSpec {
    std::string kind;
    std::map<std::string, std::string> meta;  // chemistry, mode, ...
    ZipParams zip;
    ExpParams exp;
    EvStaticParams ev;
    VflmParams vflm;
};

inline void write_load_model(std::ostream& os, const LoadModelSpec& spec) {
    auto num = [](double x) {
        char buf[40];
        std::snprintf(buf, sizeof buf, "%.12g", x);
        return std::string(buf);
    };
    os << "kind " << spec.kind << "\n";
    for (const auto& [k, v] : spec.meta) os << k << " " << v << "\n";
    if (spec.kind == "zip") {
        os << "p_nom " << num(spec.zip.p_nom) << "\nv_nom " << num(spec.zip.v_nom)
           << "\nk0 " << num(spec.zip.k0) << "\nk1 " << num(spec.zip.k1) << "\nk2 "
           << num(spec.zip.k2) << "\n";
    } else if (spec.kind == "exp") {
        os << "p_nom " << num(spec.exp.p_nom) << "\nv_nom " << num(spec.exp.v_nom)
           << "\na_p " << num(spec.exp.a_p) << "\nb_p " << num(spec.exp.b_p) << "\nn_p "
           << num(spec.exp.n_p) << "\n";
    } else if (spec.kind == "ev_static") {
        os << "p_nom " << num(spec.ev.p_ev_nom) << "\nv_nom " << num(spec.ev.v_c_nom)
           << "\nb_p " << num(spec.ev.b_p) << "\nn_p " << num(spec.ev.n_p) << "\nc_p "
           << num(spec.ev.c_p) << "\nd_p " << num(spec.ev.d_p) << "\ne_p "
           << num(spec.ev.e_p) << "\nf_p " << num(spec.ev.f_p) << "\n";
    } else if (spec.kind == "vflm") {
        os << "p0 " << num(spec.vflm.p0) << "\nv0 " << num(spec.vflm.v0) << "\nn_t "
           << num(spec.vflm.n_t) << "\nn_s " << num(spec.vflm.n_s) << "\nd "
           << num(spec.vflm.g.d) << "\nn_poles " << spec.vflm.g.order() << "\n";
        for (std::size_t i = 0; i < spec.vflm.g.order(); ++i) {
            os << "pole " << num(spec.vflm.g.poles[i].real()) << " "
               << num(spec.vflm.g.poles[i].imag()) << "\n";
            os << "residue " << num(spec.vflm.g.residues[i].real()) << " "
               << num(spec.vflm.g.residues[i].imag()) << "\n";
        }
    } else {
        throw DomainError("write_load_model: unknown kind " + spec.kind);
    }
}

inline LoadModelSpec read_load_model(std::istream& is) {
    LoadModelSpec spec;
    std::map<std::string, double> nums;
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ss(line);
        std::string key;
        ss >> key;
        if (key == "kind") {
            ss >> spec.kind;
        } else if (key == "pole" || key == "residue") {
            double re, im;
            if (!(ss >> re >> im))
                throw ParseError("load model line " + std::to_string(lineno) +
                                 ": expected (re, im) pair");
            if (key == "pole")
                spec.vflm.g.poles.emplace_back(re, im);
            else
                spec.vflm.g.residues.emplace_back(re, im);
        } else if (key == "chemistry" || key == "mode") {
            std::string v;
            ss >> v;
            spec.meta[key] = v;
        } else {
            double v;
            if (!(ss >> v))
                throw ParseError("load model line " + std::to_string(lineno) +
                                 ": expected numeric value for " + key);
            nums[key] = v;
        }
    }
    auto get = [&](const std::string& k) {
        auto it = nums.find(k);
        if (it == nums.end()) throw ParseError("load model: missing key " + k);
        return it->second;
    };
    if (spec.kind == "zip") {
        spec.zip = {get("p_nom"), get("v_nom"), get("k0"), get("k1"), get("k2")};
    } else if (spec.kind == "exp") {
        spec.exp = {get("p_nom"), get("v_nom"), get("a_p"), get("b_p"), get("n_p")};
    } else if (spec.kind == "ev_static") {
        spec.ev = {get("p_nom"), get("v_nom"), get("b_p"), get("n_p"),
                   get("c_p"),  get("d_p"),  get("e_p"), get("f_p")};
    } else if (spec.kind == "vflm") {
        spec.vflm.p0 = get("p0");
        spec.vflm.v0 = get("v0");
        spec.vflm.n_t = get("n_t");
        spec.vflm.n_s = get("n_s");
        if (nums.count("d")) spec.vflm.g.d = nums["d"];
        spec.vflm.validate();
    } else {
        throw ParseError("load model: unknown kind `" + spec.kind + "`");
    }
    return spec;
}

inline void save_load_model(const std::string& path, const LoadModelSpec& spec) {
    std::ofstream f(path);
    if (!f) throw ParseError("cannot write load model file: " + path);
    write_load_model(f, spec);
}

inline LoadModelSpec load_load_model(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ParseError("cannot open load model file: " + path);
    return read_load_model(f);
}

}  // namespace evload
