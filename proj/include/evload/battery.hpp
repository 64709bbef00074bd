// Li-ion cell and battery-pack model: tabulated OCV-SOC relation with
// shape-preserving interpolation, series resistance, pack sizing and
// coulomb counting.
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <cctype>
#include <sstream>
#include <string>
#include <vector>

#include "evload/common.hpp"

namespace evload {

enum class Chemistry { LFP, LMO, NCA, NMC };

inline const char* to_string(Chemistry c) {
    switch (c) {
        case Chemistry::LFP: return "LFP";
        case Chemistry::LMO: return "LMO";
        case Chemistry::NCA: return "NCA";
        case Chemistry::NMC: return "NMC";
    }
    return "?";
}

inline Chemistry chemistry_from_string(const std::string& s) {
    if (s == "LFP" || s == "lfp") return Chemistry::LFP;
    if (s == "LMO" || s == "lmo") return Chemistry::LMO;
    if (s == "NCA" || s == "nca") return Chemistry::NCA;
    if (s == "NMC" || s == "nmc") return Chemistry::NMC;
    throw ParseError("unknown chemistry: " + s);
}

constexpr std::array<Chemistry, 4> kAllChemistries{Chemistry::LFP, Chemistry::LMO,
                                                   Chemistry::NCA, Chemistry::NMC};

// Per-cell constants (nominal voltage, capacity, series resistance,
// CC->CV switching threshold).
struct CellParams {
    double v_cell_nom = 0.0;  // V
    double q_cell = 0.0;      // Ah
    double r_cell = 0.0;      // ohm
    double v_th = 0.0;        // V

    void validate() const {
        if (v_cell_nom <= 0 || q_cell <= 0 || r_cell <= 0 || v_th <= 0)
            throw DomainError("CellParams: all parameters must be positive");
        if (v_th <= v_cell_nom)
            throw DomainError("CellParams: v_th must exceed v_cell_nom");
    }
};

// Benchmark cell data per chemistry.
inline CellParams cell_params(Chemistry c) {
    switch (c) {
        case Chemistry::LFP: return {3.20, 2.6, 0.053, 3.488};
        case Chemistry::LMO: return {3.70, 2.6, 0.080, 4.188};
        case Chemistry::NCA: return {3.60, 3.2, 0.058, 4.188};
        case Chemistry::NMC: return {3.60, 2.0, 0.080, 4.183};
    }
    throw DomainError("bad chemistry");
}

// Tabulated OCV-SOC relation. Interpolation is monotone cubic
// (Fritsch-Carlson), so a non-decreasing knot table yields a
// non-decreasing interpolant; plain cubic splines can overshoot and
// would corrupt the CC->CV switching logic.
class OcvCurve {
public:
    OcvCurve() = default;

    OcvCurve(std::vector<double> soc, std::vector<double> v_ocv)
        : soc_(std::move(soc)), v_(std::move(v_ocv)) {
        validate();
        build_slopes();
    }

    // Open-circuit voltage at the given state of charge.
    double value(double soc) const {
        if (!(soc >= 0.0 && soc <= 1.0))
            throw DomainError("ocv_lookup: soc outside [0,1]");
        const auto it = std::upper_bound(soc_.begin(), soc_.end(), soc);
        std::size_t i = it == soc_.begin() ? 0 : std::size_t(it - soc_.begin()) - 1;
        if (i >= soc_.size() - 1) i = soc_.size() - 2;
        const double h = soc_[i + 1] - soc_[i];
        const double t = (soc - soc_[i]) / h;
        const double t2 = t * t, t3 = t2 * t;
        const double h00 = 2 * t3 - 3 * t2 + 1;
        const double h10 = t3 - 2 * t2 + t;
        const double h01 = -2 * t3 + 3 * t2;
        const double h11 = t3 - t2;
        return h00 * v_[i] + h10 * h * d_[i] + h01 * v_[i + 1] + h11 * h * d_[i + 1];
    }

    // d v_ocv / d soc, for analytic Jacobians.
    double derivative(double soc) const {
        if (!(soc >= 0.0 && soc <= 1.0))
            throw DomainError("ocv derivative: soc outside [0,1]");
        const auto it = std::upper_bound(soc_.begin(), soc_.end(), soc);
        std::size_t i = it == soc_.begin() ? 0 : std::size_t(it - soc_.begin()) - 1;
        if (i >= soc_.size() - 1) i = soc_.size() - 2;
        const double h = soc_[i + 1] - soc_[i];
        const double t = (soc - soc_[i]) / h;
        const double dh00 = (6 * t * t - 6 * t) / h;
        const double dh10 = 3 * t * t - 4 * t + 1;
        const double dh01 = (-6 * t * t + 6 * t) / h;
        const double dh11 = 3 * t * t - 2 * t;
        return dh00 * v_[i] + dh10 * d_[i] + dh01 * v_[i + 1] + dh11 * d_[i + 1];
    }

    std::size_t size() const { return soc_.size(); }
    const std::vector<double>& soc_knots() const { return soc_; }
    const std::vector<double>& v_knots() const { return v_; }

private:
    void validate() const {
        if (soc_.size() != v_.size()) throw DomainError("OcvCurve: knot size mismatch");
        if (soc_.size() < 10) throw DomainError("OcvCurve: need at least 10 knots");
        if (std::abs(soc_.front()) > 1e-12 || std::abs(soc_.back() - 1.0) > 1e-12)
            throw DomainError("OcvCurve: soc knots must cover [0,1]");
        for (std::size_t i = 1; i < soc_.size(); ++i) {
            if (soc_[i] <= soc_[i - 1])
                throw DomainError("OcvCurve: soc knots must be strictly increasing");
            if (v_[i] < v_[i - 1])
                throw DomainError("OcvCurve: v_ocv must be non-decreasing");
        }
    }

    void build_slopes() {
        const std::size_t n = soc_.size();
        std::vector<double> h(n - 1), delta(n - 1);
        for (std::size_t i = 0; i + 1 < n; ++i) {
            h[i] = soc_[i + 1] - soc_[i];
            delta[i] = (v_[i + 1] - v_[i]) / h[i];
        }
        d_.assign(n, 0.0);
        for (std::size_t i = 1; i + 1 < n; ++i) {
            if (delta[i - 1] * delta[i] <= 0.0) {
                d_[i] = 0.0;
            } else {
                const double w1 = 2 * h[i] + h[i - 1];
                const double w2 = h[i] + 2 * h[i - 1];
                d_[i] = (w1 + w2) / (w1 / delta[i - 1] + w2 / delta[i]);
            }
        }
        d_[0] = endpoint_slope(h[0], h[1], delta[0], delta[1]);
        d_[n - 1] = endpoint_slope(h[n - 2], h[n - 3], delta[n - 2], delta[n - 3]);
    }

    static double endpoint_slope(double h0, double h1, double del0, double del1) {
        double d = ((2 * h0 + h1) * del0 - h0 * del1) / (h0 + h1);
        if (d * del0 <= 0.0) return 0.0;
        if (del0 * del1 < 0.0 && std::abs(d) > 3 * std::abs(del0)) return 3 * del0;
        return d;
    }

    std::vector<double> soc_, v_, d_;
};

inline double ocv_lookup(const OcvCurve& curve, double soc) { return curve.value(soc); }

// Parameters of the closed-form OCV approximation
// v = E0 - K (1-soc)/soc Q + A exp((1-soc) Q).
struct AnalyticalOcvParams {
    double e0 = 0.0;  // V
    double k = 0.0;   // V/Ah
    double a = 0.0;   // V
    double q = 0.0;   // Ah (pack capacity)

    void validate() const {
        if (e0 <= 0 || a <= 0 || q <= 0)
            throw DomainError("AnalyticalOcvParams: E0, A, Q must be positive");
    }
};

inline double ocv_analytical(const AnalyticalOcvParams& p, double soc0) {
    if (soc0 <= 0.0)
        throw DomainError("ocv_analytical: singular at soc0 = 0");
    if (soc0 > 1.0) throw DomainError("ocv_analytical: soc0 outside (0,1]");
    return p.e0 - p.k * ((1.0 - soc0) / soc0) * p.q + p.a * std::exp((1.0 - soc0) * p.q);
}

// Cell terminal voltage; charging current is positive into the cell.
inline double cell_terminal_voltage(const OcvCurve& curve, double r_cell, double soc,
                                    double i_cell) {
    return curve.value(soc) + r_cell * i_cell;
}

// Series/parallel layout of the pack.
struct PackConfig {
    int n_ser = 1;
    int n_par = 1;
    Chemistry chemistry = Chemistry::LFP;
};

// Rounding formulas for the series/parallel cell counts.
inline PackConfig size_pack(Chemistry chem, const CellParams& cell, double v_ev_nom,
                            double e_ev_nom_wh) {
    if (v_ev_nom <= 0 || e_ev_nom_wh <= 0)
        throw DomainError("size_pack: inputs must be positive");
    cell.validate();
    PackConfig cfg;
    cfg.chemistry = chem;
    cfg.n_ser = int(std::lround(v_ev_nom / cell.v_cell_nom));
    cfg.n_par = int(std::lround(e_ev_nom_wh / (v_ev_nom * cell.q_cell)));
    return cfg;
}

struct PackState {
    double soc = 0.0;     // fraction
    double i_batt = 0.0;  // A, positive = charging
    double v_batt = 0.0;  // V
    double v_cell = 0.0;  // V
    double i_cell = 0.0;  // A
};

// d(soc)/dt for a pack carrying i_batt; denominator is the total pack
// capacity in ampere-seconds.
inline double soc_derivative(const PackConfig& pack, const CellParams& cell,
                             double i_batt) {
    return i_batt / (3600.0 * pack.n_par * cell.q_cell);
}

// ---------------------------------------------------------------------------
// Bundled OCV data

// Resolution order for the data directory: $EVLOAD_DATA_DIR, ./data,
// then the build-time bundled path.
inline std::string data_dir() {
    if (const char* env = std::getenv("EVLOAD_DATA_DIR")) return env;
    if (std::filesystem::exists("data/ocv_lfp.csv")) return "data";
#ifdef EVLOAD_BUNDLED_DATA_DIR
    return EVLOAD_BUNDLED_DATA_DIR;
#else
    return "data";
#endif
}

inline std::string ocv_file_name(Chemistry c) {
    std::string n = to_string(c);
    for (auto& ch : n) ch = char(std::tolower(ch));
    return "ocv_" + n + ".csv";
}

// Loads one `soc,v_ocv` table. Lines starting with '#' are header text.
inline OcvCurve load_ocv_curve(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ParseError("cannot open OCV data file: " + path);
    std::vector<double> soc, v;
    std::string line;
    int lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ss(line);
        double s, ocv;
        char comma;
        if (!(ss >> s >> comma >> ocv) || comma != ',')
            throw ParseError(path + ":" + std::to_string(lineno) +
                             ": expected `soc,v_ocv` row");
        soc.push_back(s);
        v.push_back(ocv);
    }
    return OcvCurve(std::move(soc), std::move(v));
}

inline const OcvCurve& ocv_curve(Chemistry c) {
    static std::array<OcvCurve, 4> curves = [] {
        std::array<OcvCurve, 4> out;
        for (Chemistry chem : kAllChemistries)
            out[std::size_t(chem)] =
                load_ocv_curve(data_dir() + "/" + ocv_file_name(chem));
        return out;
    }();
    return curves[std::size_t(c)];
}

}  // namespace evload
