// Study configuration: human-readable nested key-value text with strict
// schema validation (unknown keys and type mismatches are reported with
// their full key path).
#pragma once

#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "evload/analysis.hpp"

namespace evload {

struct StudyConfig {
    std::string source_text;  // raw file contents, for the manifest digest
    std::string case_path;
    std::string output_dir = "out";
    std::string data_dir_override;
    int jobs = 1;

    StationParams station;
    StationGains gains;

    FleetSpec fleet;
    double fleet_lambda = 0.20;

    // charge study
    Chemistry charge_chemistry = Chemistry::LFP;
    ChargeMode charge_mode = ChargeMode::CCCV;
    double charge_soc0 = 0.0;
    double charge_duration_s = 0.0;
    double charge_v_ratio = 1.0;

    // static sweep grids
    std::vector<double> v_ratios = default_v_ratios();
    std::vector<double> soc0s = default_soc0s();

    // vflm study
    VflmStudyOptions vflm;

    // stability sweep
    std::vector<double> lambdas = linspace(0.14, 0.30, 17);
    std::vector<double> ki_values{1000.0, 100.0, 80.0};
    std::vector<EvRepresentation> representations{EvRepresentation::Detailed,
                                                  EvRepresentation::ConstPq,
                                                  EvRepresentation::Vflm};

    // transient study
    double transient_lambda = 0.20;
    TransientOptions transient;

    PowerFlowOptions pf;
    IntegratorOptions integ;
};

namespace detail {

struct RawConfig {
    // section -> key -> (value, consumed)
    std::map<std::string, std::map<std::string, std::string>> kv;
    std::set<std::string> consumed;

    std::optional<std::string> get(const std::string& section, const std::string& key) {
        auto si = kv.find(section);
        if (si == kv.end()) return std::nullopt;
        auto ki = si->second.find(key);
        if (ki == si->second.end()) return std::nullopt;
        consumed.insert(section.empty() ? key : section + "." + key);
        return ki->second;
    }
};

inline double to_double(const std::string& path, const std::string& v) {
    std::size_t pos = 0;
    double d;
    try {
        d = std::stod(v, &pos);
    } catch (...) {
        throw ParseError("config: expected a number for `" + path + "`, got `" + v + "`");
    }
    if (pos != v.size())
        throw ParseError("config: expected a number for `" + path + "`, got `" + v + "`");
    return d;
}

inline int to_int(const std::string& path, const std::string& v) {
    const double d = to_double(path, v);
    if (d != std::floor(d))
        throw ParseError("config: expected an integer for `" + path + "`");
    return int(d);
}

inline std::vector<double> to_list(const std::string& path, const std::string& v) {
    std::vector<double> out;
    std::string item;
    std::istringstream ss(v);
    while (std::getline(ss, item, ','))
        if (!item.empty()) out.push_back(to_double(path, item));
    if (out.empty()) throw ParseError("config: empty list for `" + path + "`");
    return out;
}

}  // namespace detail

inline StudyConfig parse_config_text(const std::string& text,
                                     const std::string& origin = "<config>") {
    detail::RawConfig raw;
    std::string section;  // "" = top level
    std::istringstream f(text);
    std::string line;
    int lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        auto trim = [](std::string s) {
            const auto a = s.find_first_not_of(" \t\r");
            const auto b = s.find_last_not_of(" \t\r");
            return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
        };
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']')
                throw ParseError(origin + ":" + std::to_string(lineno) + ": bad section header");
            section = line.substr(1, line.size() - 2);
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ParseError(origin + ":" + std::to_string(lineno) + ": expected key = value");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty() || value.empty())
            throw ParseError(origin + ":" + std::to_string(lineno) + ": expected key = value");
        if (raw.kv[section].count(key))
            throw ParseError(origin + ":" + std::to_string(lineno) + ": duplicate key `" +
                             (section.empty() ? key : section + "." + key) + "`");
        raw.kv[section][key] = value;
    }

    StudyConfig cfg;
    cfg.source_text = text;
    using detail::to_double;
    using detail::to_int;
    using detail::to_list;

    if (auto v = raw.get("", "case")) cfg.case_path = *v;
    if (auto v = raw.get("", "output_dir")) cfg.output_dir = *v;
    if (auto v = raw.get("", "data_dir")) cfg.data_dir_override = *v;
    if (auto v = raw.get("", "jobs")) cfg.jobs = to_int("jobs", *v);

    auto& sp = cfg.station;
    if (auto v = raw.get("station", "r_f")) sp.r_f = to_double("station.r_f", *v);
    if (auto v = raw.get("station", "l_f")) sp.l_f = to_double("station.l_f", *v);
    if (auto v = raw.get("station", "c_dc1")) sp.c_dc1 = to_double("station.c_dc1", *v);
    if (auto v = raw.get("station", "l_dc")) sp.l_dc = to_double("station.l_dc", *v);
    if (auto v = raw.get("station", "c_dc2")) sp.c_dc2 = to_double("station.c_dc2", *v);
    if (auto v = raw.get("station", "v_c_nom")) sp.v_c_nom = to_double("station.v_c_nom", *v);
    if (auto v = raw.get("station", "p_ev_nom")) sp.p_ev_nom = to_double("station.p_ev_nom", *v);
    if (auto v = raw.get("station", "omega_hz"))
        sp.omega = 2 * kPi * to_double("station.omega_hz", *v);
    if (auto v = raw.get("station", "tap")) sp.tap = to_double("station.tap", *v);
    auto& g = cfg.gains;
    if (auto v = raw.get("station", "kp_pi1")) g.pi1.k_p = to_double("station.kp_pi1", *v);
    if (auto v = raw.get("station", "ki_pi1")) g.pi1.k_i = to_double("station.ki_pi1", *v);
    if (auto v = raw.get("station", "kp_pi2")) g.pi2.k_p = to_double("station.kp_pi2", *v);
    if (auto v = raw.get("station", "ki_pi2")) g.pi2.k_i = to_double("station.ki_pi2", *v);
    if (auto v = raw.get("station", "kp_pi3")) g.pi3.k_p = to_double("station.kp_pi3", *v);
    if (auto v = raw.get("station", "ki_pi3")) g.pi3.k_i = to_double("station.ki_pi3", *v);
    if (auto v = raw.get("station", "kp_pi4")) g.pi4.k_p = to_double("station.kp_pi4", *v);
    if (auto v = raw.get("station", "ki_pi4")) g.pi4.k_i = to_double("station.ki_pi4", *v);
    if (auto v = raw.get("station", "kp_cv")) g.pi_cv.k_p = to_double("station.kp_cv", *v);
    if (auto v = raw.get("station", "ki_cv")) g.pi_cv.k_i = to_double("station.ki_cv", *v);

    if (auto v = raw.get("fleet", "representation"))
        cfg.fleet.repr = ev_representation_from_string(*v);
    if (auto v = raw.get("fleet", "chemistry")) cfg.fleet.chemistry = chemistry_from_string(*v);
    if (auto v = raw.get("fleet", "mode")) cfg.fleet.mode = charge_mode_from_string(*v);
    if (auto v = raw.get("fleet", "soc0")) cfg.fleet.soc0 = to_double("fleet.soc0", *v);
    if (auto v = raw.get("fleet", "lambda")) cfg.fleet_lambda = to_double("fleet.lambda", *v);
    if (cfg.fleet_lambda < 0) throw ParseError("config: fleet.lambda must be >= 0");

    if (auto v = raw.get("charge", "chemistry"))
        cfg.charge_chemistry = chemistry_from_string(*v);
    if (auto v = raw.get("charge", "mode")) cfg.charge_mode = charge_mode_from_string(*v);
    if (auto v = raw.get("charge", "soc0")) cfg.charge_soc0 = to_double("charge.soc0", *v);
    if (auto v = raw.get("charge", "duration_s"))
        cfg.charge_duration_s = to_double("charge.duration_s", *v);
    if (auto v = raw.get("charge", "v_ratio")) cfg.charge_v_ratio = to_double("charge.v_ratio", *v);

    {
        double lo = 0.90, hi = 1.10;
        int n = 13;
        if (auto v = raw.get("sweep", "v_ratio_min")) lo = to_double("sweep.v_ratio_min", *v);
        if (auto v = raw.get("sweep", "v_ratio_max")) hi = to_double("sweep.v_ratio_max", *v);
        if (auto v = raw.get("sweep", "n_v")) n = to_int("sweep.n_v", *v);
        cfg.v_ratios = linspace(lo, hi, n);
        lo = 0.1;
        hi = 0.9;
        n = 9;
        if (auto v = raw.get("sweep", "soc0_min")) lo = to_double("sweep.soc0_min", *v);
        if (auto v = raw.get("sweep", "soc0_max")) hi = to_double("sweep.soc0_max", *v);
        if (auto v = raw.get("sweep", "n_soc")) n = to_int("sweep.n_soc", *v);
        cfg.soc0s = linspace(lo, hi, n);
    }

    if (auto v = raw.get("vflm", "orders")) {
        cfg.vflm.orders.clear();
        for (double d : to_list("vflm.orders", *v)) cfg.vflm.orders.push_back(int(d));
    }
    if (auto v = raw.get("vflm", "f_lo_hz")) cfg.vflm.f_lo_hz = to_double("vflm.f_lo_hz", *v);
    if (auto v = raw.get("vflm", "f_hi_hz")) cfg.vflm.f_hi_hz = to_double("vflm.f_hi_hz", *v);
    if (auto v = raw.get("vflm", "n_freqs")) cfg.vflm.n_freqs = to_int("vflm.n_freqs", *v);
    if (auto v = raw.get("vflm", "step_ratio"))
        cfg.vflm.step.tap_ratio = to_double("vflm.step_ratio", *v);
    if (auto v = raw.get("vflm", "step_t_post"))
        cfg.vflm.step.t_post = to_double("vflm.step_t_post", *v);

    {
        double lo = 0.14, hi = 0.30;
        int n = 17;
        bool have = false;
        if (auto v = raw.get("stability", "lambda_min")) { lo = to_double("stability.lambda_min", *v); have = true; }
        if (auto v = raw.get("stability", "lambda_max")) { hi = to_double("stability.lambda_max", *v); have = true; }
        if (auto v = raw.get("stability", "n_lambda")) { n = to_int("stability.n_lambda", *v); have = true; }
        if (have) cfg.lambdas = linspace(lo, hi, n);
        if (auto v = raw.get("stability", "ki_values")) cfg.ki_values = to_list("stability.ki_values", *v);
        if (auto v = raw.get("stability", "representations")) {
            cfg.representations.clear();
            std::istringstream ss(*v);
            std::string item;
            while (std::getline(ss, item, ','))
                if (!item.empty()) cfg.representations.push_back(ev_representation_from_string(item));
        }
    }

    if (auto v = raw.get("transient", "lambda"))
        cfg.transient_lambda = to_double("transient.lambda", *v);
    if (auto v = raw.get("transient", "t_end"))
        cfg.transient.t_end = to_double("transient.t_end", *v);
    if (auto v = raw.get("transient", "disturb_factor"))
        cfg.transient.disturb_factor = to_double("transient.disturb_factor", *v);
    if (auto v = raw.get("transient", "disturb_duration"))
        cfg.transient.disturb_duration = to_double("transient.disturb_duration", *v);
    if (auto v = raw.get("transient", "monitor_bus"))
        cfg.transient.monitor_bus_id = to_int("transient.monitor_bus", *v);

    if (auto v = raw.get("solver", "pf_tol")) cfg.pf.tol = to_double("solver.pf_tol", *v);
    if (auto v = raw.get("solver", "pf_max_iter")) cfg.pf.max_iter = to_int("solver.pf_max_iter", *v);
    if (auto v = raw.get("solver", "rtol")) cfg.integ.rtol = to_double("solver.rtol", *v);

    // reject unknown keys, listing all of them
    std::string unknown;
    for (const auto& [section, keys] : raw.kv)
        for (const auto& [key, value] : keys) {
            const std::string path = section.empty() ? key : section + "." + key;
            if (!raw.consumed.count(path)) unknown += (unknown.empty() ? "" : ", ") + path;
        }
    if (!unknown.empty()) throw ParseError("config: unknown keys: " + unknown);

    cfg.station.validate();
    cfg.transient.station = cfg.station;
    cfg.transient.gains = cfg.gains;
    cfg.pf.station = cfg.station;
    return cfg;
}

inline StudyConfig parse_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ParseError("cannot open config file: " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    return parse_config_text(ss.str(), path);
}

// Canonical serialization of the effective configuration; parse followed
// by serialize is semantically idempotent.
inline std::string serialize_config(const StudyConfig& cfg) {
    std::ostringstream os;
    auto num = [](double x) {
        char buf[40];
        std::snprintf(buf, sizeof buf, "%.12g", x);
        return std::string(buf);
    };
    os << "case = " << cfg.case_path << "\noutput_dir = " << cfg.output_dir
       << "\njobs = " << cfg.jobs << "\n\n[station]\n";
    os << "r_f = " << num(cfg.station.r_f) << "\nl_f = " << num(cfg.station.l_f)
       << "\nc_dc1 = " << num(cfg.station.c_dc1) << "\nl_dc = " << num(cfg.station.l_dc)
       << "\nc_dc2 = " << num(cfg.station.c_dc2)
       << "\nv_c_nom = " << num(cfg.station.v_c_nom)
       << "\np_ev_nom = " << num(cfg.station.p_ev_nom)
       << "\nomega_hz = " << num(cfg.station.omega / (2 * kPi))
       << "\ntap = " << num(cfg.station.tap) << "\nkp_pi1 = " << num(cfg.gains.pi1.k_p)
       << "\nki_pi1 = " << num(cfg.gains.pi1.k_i) << "\nkp_pi2 = " << num(cfg.gains.pi2.k_p)
       << "\nki_pi2 = " << num(cfg.gains.pi2.k_i) << "\nkp_pi3 = " << num(cfg.gains.pi3.k_p)
       << "\nki_pi3 = " << num(cfg.gains.pi3.k_i) << "\nkp_pi4 = " << num(cfg.gains.pi4.k_p)
       << "\nki_pi4 = " << num(cfg.gains.pi4.k_i) << "\n\n[fleet]\n";
    os << "representation = " << to_string(cfg.fleet.repr)
       << "\nchemistry = " << to_string(cfg.fleet.chemistry)
       << "\nmode = " << to_string(cfg.fleet.mode) << "\nsoc0 = " << num(cfg.fleet.soc0)
       << "\nlambda = " << num(cfg.fleet_lambda) << "\n";
    return os.str();
}

}  // namespace evload
