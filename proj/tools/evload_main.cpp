// evload command-line front end: study workflows around the EV /
// charging-station models, the static and vector-fitting load models, and
// the network studies on the bundled IEEE14 case.
#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <iostream>

#include "evload/config.hpp"
#include "evload/studyio.hpp"

using namespace evload;

namespace {

std::string out_path(const StudyConfig& cfg, const std::string& name) {
    std::filesystem::create_directories(cfg.output_dir);
    return (std::filesystem::path(cfg.output_dir) / name).string();
}

std::string lower(std::string s) {
    for (auto& c : s) c = char(std::tolower(c));
    return s;
}

GridCase load_study_case(const StudyConfig& cfg) {
    return load_case(cfg.case_path.empty() ? bundled_case_path() : cfg.case_path);
}

int run_charge(const StudyConfig& cfg) {
    RunManifest manifest(out_path(cfg, "run_manifest.txt"), cfg.source_text);
    StageTimer timer;
    auto model = StationModel::make(cfg.charge_chemistry, cfg.charge_mode, cfg.station,
                                    cfg.gains);
    ChargeSimOptions opt;
    opt.duration = cfg.charge_duration_s;
    opt.v_ratio = cfg.charge_v_ratio;
    opt.integ = cfg.integ;
    opt.integ.rtol = std::max(cfg.integ.rtol, 1e-6);
    opt.integ.h_max = 10.0;
    const auto traj = simulate_charge(model, cfg.charge_soc0, opt);

    const std::string name = "fig6_" + lower(to_string(cfg.charge_chemistry)) + "_" +
                             lower(to_string(cfg.charge_mode)) + ".csv";
    CsvWriter csv(out_path(cfg, name),
                  {"t_s", "p_batt_w", "i_batt_a", "v_batt_v", "v_cell_v", "soc",
                   "p_ev_w", "q_ev_var", "delta"});
    for (std::size_t k = 0; k < traj.t.size(); ++k)
        csv.row({traj.t[k], traj.p_batt[k], traj.i_batt[k], traj.v_batt[k],
                 traj.v_cell[k], traj.soc[k], traj.p_ev[k], traj.q_ev[k], traj.delta[k]});
    csv.write();
    manifest.stage("charge", timer.ms());
    manifest.point(name, true);
    manifest.write();
    std::cout << "charge: " << traj.t.back() << " s simulated, soc " << traj.soc.front()
              << " -> " << traj.soc.back() << ", wrote " << csv.path() << "\n";
    return 0;
}

int run_sweep_static(const StudyConfig& cfg) {
    RunManifest manifest(out_path(cfg, "run_manifest.txt"), cfg.source_text);
    StageTimer timer;
    struct Job {
        Chemistry chem;
        ChargeMode mode;
        VoltageSocSweep sweep;
        bool ok = false;
    };
    std::vector<Job> jobs;
    for (Chemistry chem : kAllChemistries)
        for (ChargeMode mode : {ChargeMode::CCCV, ChargeMode::CPCV})
            jobs.push_back({chem, mode, {}, false});
    parallel_for(int(jobs.size()), cfg.jobs, [&](int i) {
        auto model = StationModel::make(jobs[i].chem, jobs[i].mode, cfg.station, cfg.gains);
        jobs[i].sweep = sweep_voltage_soc(model, cfg.v_ratios, cfg.soc0s);
        jobs[i].ok = jobs[i].sweep.failures.empty();
    });
    for (const auto& j : jobs) {
        const std::string name = "fig7_" + lower(to_string(j.chem)) + "_" +
                                 lower(to_string(j.mode)) + ".csv";
        CsvWriter csv(out_path(cfg, name), {"v_ratio", "soc0", "p_ev_w", "p_norm"});
        for (const auto& s : j.sweep.samples)
            csv.row({s.v / cfg.station.v_c_nom, s.soc0, s.p, s.p / cfg.station.p_ev_nom});
        csv.write();
        manifest.point(name, j.ok);
    }
    manifest.stage("sweep-static", timer.ms());
    manifest.write();
    std::cout << "sweep-static: wrote 8 fig7 tables to " << cfg.output_dir << "\n";
    return manifest.any_failed() ? 1 : 0;
}

int run_fit_static(const StudyConfig& cfg) {
    RunManifest manifest(out_path(cfg, "run_manifest.txt"), cfg.source_text);
    StageTimer timer;
    struct Job {
        Chemistry chem;
        ChargeMode mode;
        FittedStaticModel fit;
        bool ok = false;
    };
    std::vector<Job> jobs;
    for (Chemistry chem : kAllChemistries)
        for (ChargeMode mode : {ChargeMode::CCCV, ChargeMode::CPCV})
            jobs.push_back({chem, mode, {}, false});
    parallel_for(int(jobs.size()), cfg.jobs, [&](int i) {
        jobs[i].fit = fit_static_model(jobs[i].chem, jobs[i].mode, cfg.station, cfg.gains);
        jobs[i].ok = jobs[i].fit.fit.report.converged;
    });
    // fit report mirrors the parameter-table layout, one row per fit
    CsvWriter report(out_path(cfg, "fit_report.txt"),
                     {"kind", "chemistry", "mode", "a_p", "b_p", "n_p", "c_p", "d_p",
                      "e_p", "f_p", "rmse", "converged"});
    for (const auto& j : jobs) {
        const auto spec = j.fit.to_spec();
        const std::string model_name = "model_" + lower(to_string(j.chem)) + "_" +
                                       lower(to_string(j.mode)) + ".txt";
        save_load_model(out_path(cfg, model_name), spec);
        manifest.point(model_name, j.ok);
        if (spec.kind == "exp") {
            report.row_mixed({"exp", to_string(j.chem), to_string(j.mode),
                              format_num(spec.exp.a_p), format_num(spec.exp.b_p),
                              format_num(spec.exp.n_p), "n.a.", "n.a.", "n.a.", "n.a.",
                              format_num(j.fit.fit.report.rmse),
                              j.fit.fit.report.converged ? "1" : "0"});
        } else {
            report.row_mixed({"ev_static", to_string(j.chem), to_string(j.mode), "n.a.",
                              format_num(spec.ev.b_p), format_num(spec.ev.n_p),
                              format_num(spec.ev.c_p), format_num(spec.ev.d_p),
                              format_num(spec.ev.e_p), format_num(spec.ev.f_p),
                              format_num(j.fit.fit.report.rmse),
                              j.fit.fit.report.converged ? "1" : "0"});
        }
    }
    report.write();
    manifest.stage("fit-static", timer.ms());
    manifest.write();
    std::cout << "fit-static: wrote model files and " << report.path() << "\n";
    return manifest.any_failed() ? 1 : 0;
}

int run_extract_vflm(const StudyConfig& cfg) {
    RunManifest manifest(out_path(cfg, "run_manifest.txt"), cfg.source_text);
    StageTimer timer;
    CsvWriter report(out_path(cfg, "vflm_report.txt"),
                     {"ki_pi1", "order", "n_t", "n_s", "td_rmse_norm", "freq_rmse",
                      "converged"});
    for (double ki : cfg.ki_values) {
        StationGains gains = cfg.gains;
        gains.pi1.k_i = ki;
        auto model = StationModel::make(cfg.fleet.chemistry, cfg.fleet.mode, cfg.station,
                                        gains);
        model.soc_param = cfg.fleet.soc0;
        const auto study = extract_vflm_study(model, cfg.fleet.soc0, cfg.vflm);
        const std::string ktag = format_num(ki);

        CsvWriter gs(out_path(cfg, "fig9_gs_ki" + ktag + ".csv"),
                     {"f_hz", "g_re", "g_im", "g_abs", "g_phase_deg"});
        for (std::size_t k = 0; k < study.gs.resp.omega.size(); ++k) {
            const Cx v = study.gs.resp.value[k];
            gs.row({study.gs.resp.omega[k] / (2 * kPi), v.real(), v.imag(), std::abs(v),
                    std::arg(v) * 180.0 / kPi});
        }
        gs.write();

        std::vector<std::vector<double>> fits_p;
        for (const auto& fit : study.fits)
            fits_p.push_back(vflm_power(fit.params, study.record.t, study.record.v));
        std::vector<std::string> cols{"t_s", "v_v", "p_detailed_w"};
        for (const auto& fit : study.fits)
            cols.push_back("p_vflm" + std::to_string(fit.params.g.order()) + "_w");
        CsvWriter step(out_path(cfg, "fig9_step_ki" + ktag + ".csv"), cols);
        for (std::size_t k = 0; k < study.record.t.size(); ++k) {
            std::vector<double> row{study.record.t[k], study.record.v[k],
                                    study.record.p[k]};
            for (const auto& p : fits_p) row.push_back(p[k]);
            step.row(row);
        }
        step.write();

        for (const auto& fit : study.fits) {
            LoadModelSpec spec;
            spec.kind = "vflm";
            spec.meta["chemistry"] = to_string(cfg.fleet.chemistry);
            spec.meta["mode"] = to_string(cfg.fleet.mode);
            spec.vflm = fit.params;
            const std::string name = "vflm_" + lower(to_string(cfg.fleet.chemistry)) +
                                     "_" + lower(to_string(cfg.fleet.mode)) + "_ki" +
                                     ktag + "_order" +
                                     std::to_string(fit.params.g.order()) + ".txt";
            save_load_model(out_path(cfg, name), spec);
            report.row_mixed({ktag, std::to_string(fit.params.g.order()),
                              format_num(fit.params.n_t), format_num(fit.params.n_s),
                              format_num(fit.report.rmse), format_num(fit.freq_rmse),
                              fit.report.converged ? "1" : "0"});
            manifest.point(name, fit.report.converged);
        }
    }
    report.write();
    manifest.stage("extract-vflm", timer.ms());
    manifest.write();
    std::cout << "extract-vflm: wrote fig9 tables and model files to " << cfg.output_dir
              << "\n";
    return manifest.any_failed() ? 1 : 0;
}

void write_pf_tables(const StudyConfig& cfg, const GridCase& gc,
                     const PowerFlowSolution& sol) {
    CsvWriter bus(out_path(cfg, "pf_bus.csv"),
                  {"bus_id", "v_mag_pu", "v_ang_deg", "p_inj_pu", "q_inj_pu"});
    for (std::size_t i = 0; i < gc.buses.size(); ++i)
        bus.row({double(gc.buses[i].id), sol.v_mag[i], sol.v_ang[i] * 180.0 / kPi,
                 sol.p_inj[i], sol.q_inj[i]});
    bus.write();
    CsvWriter br(out_path(cfg, "pf_branch.csv"),
                 {"from", "to", "p_from_pu", "q_from_pu", "p_to_pu", "q_to_pu",
                  "i_from_pu", "i_to_pu"});
    for (std::size_t b = 0; b < gc.branches.size(); ++b)
        br.row({double(gc.branches[b].from), double(gc.branches[b].to),
                sol.flows[b].p_from, sol.flows[b].q_from, sol.flows[b].p_to,
                sol.flows[b].q_to, sol.flows[b].i_from, sol.flows[b].i_to});
    br.write();
    double fleet_mw = 0;
    for (double p : sol.fleet_p_mw) fleet_mw += p;
    CsvWriter sum(out_path(cfg, "pf_summary.csv"),
                  {"converged", "iterations", "losses_mw", "slack_p_mw", "slack_q_mvar",
                   "fleet_total_mw"});
    sum.row({sol.converged ? 1.0 : 0.0, double(sol.iterations), sol.losses_mw,
             sol.slack_p_mw, sol.slack_q_mvar, fleet_mw});
    sum.write();
}

FleetSpec make_fleet_spec(const StudyConfig& cfg, EvRepresentation repr,
                          Chemistry chem, ChargeMode mode, double soc0) {
    FleetSpec spec;
    spec.repr = repr;
    spec.chemistry = chem;
    spec.mode = mode;
    spec.soc0 = soc0;
    spec.p_ev_nom = cfg.station.p_ev_nom;
    if (repr == EvRepresentation::StaticModel || repr == EvRepresentation::Vflm) {
        auto fitted = fit_static_model(chem, mode, cfg.station, cfg.gains);
        if (fitted.fit.kind == StaticModelKind::Exp) {
            spec.static_kind = "exp";
            spec.exp_params = fitted.fit.exp;
        } else {
            spec.static_kind = "ev_static";
            spec.ev_params = fitted.fit.ev;
        }
    }
    return spec;
}

int run_powerflow(const StudyConfig& cfg, bool fig8) {
    RunManifest manifest(out_path(cfg, "run_manifest.txt"), cfg.source_text);
    StageTimer timer;
    auto gc = load_study_case(cfg);

    FleetSpec spec = make_fleet_spec(cfg, cfg.fleet.repr, cfg.fleet.chemistry,
                                     cfg.fleet.mode, cfg.fleet.soc0);
    auto over = apply_overload(gc, cfg.fleet_lambda, spec);
    auto sol = solve_power_flow(over, cfg.pf);
    write_pf_tables(cfg, over, sol);
    manifest.point("powerflow", sol.converged);
    std::cout << "powerflow: converged=" << sol.converged << " iters=" << sol.iterations
              << " losses=" << sol.losses_mw << " MW, slack=" << sol.slack_p_mw
              << " MW\n";

    if (fig8) {
        // base (constant PQ) plus detailed and static fleets per chemistry,
        // swept over soc0 at the configured overload level
        const auto base_point = overload_power_flow(
            gc, cfg.fleet_lambda,
            make_fleet_spec(cfg, EvRepresentation::ConstPq, cfg.fleet.chemistry,
                            cfg.fleet.mode, cfg.fleet.soc0),
            0, cfg.pf);
        manifest.point("fig8_base", base_point.converged);

        struct Row {
            std::string repr, chem;
            double soc0 = 0, line = 0, loss = 0;
            bool ok = false;
        };
        std::vector<std::tuple<EvRepresentation, Chemistry, double>> grid;
        for (Chemistry chem : kAllChemistries)
            for (double s : cfg.soc0s)
                for (EvRepresentation r :
                     {EvRepresentation::Detailed, EvRepresentation::StaticModel})
                    grid.emplace_back(r, chem, s);
        std::vector<Row> rows(grid.size());
        parallel_for(int(grid.size()), cfg.jobs, [&](int i) {
            auto [r, chem, s] = grid[i];
            auto p = overload_power_flow(
                gc, cfg.fleet_lambda, make_fleet_spec(cfg, r, chem, cfg.fleet.mode, s), 0,
                cfg.pf);
            rows[i] = {to_string(r), to_string(chem), s, p.line_i_pu, p.losses_mw,
                       p.converged};
        });
        CsvWriter csv(out_path(cfg, "fig8_sweep.csv"),
                      {"repr", "chemistry", "soc0", "line12_i_pu", "losses_mw",
                       "rel_i_pct", "rel_loss_pct"});
        csv.row_mixed({"pq", "none", format_num(cfg.fleet.soc0),
                       format_num(base_point.line_i_pu), format_num(base_point.losses_mw),
                       "0", "0"});
        for (const auto& r : rows) {
            csv.row_mixed({r.repr, r.chem, format_num(r.soc0), format_num(r.line),
                           format_num(r.loss),
                           format_num(100.0 * (r.line - base_point.line_i_pu) /
                                      base_point.line_i_pu),
                           format_num(100.0 * (r.loss - base_point.losses_mw) /
                                      base_point.losses_mw)});
            manifest.point("fig8_" + r.repr + "_" + r.chem + "_soc" + format_num(r.soc0),
                           r.ok);
        }
        csv.write();
        std::cout << "powerflow: wrote fig8_sweep.csv (" << rows.size() << " points)\n";
    }
    manifest.stage("powerflow", timer.ms());
    manifest.write();
    return manifest.any_failed() ? 1 : 0;
}

int run_stability_sweep(const StudyConfig& cfg) {
    RunManifest manifest(out_path(cfg, "run_manifest.txt"), cfg.source_text);
    StageTimer timer;
    auto gc = load_study_case(cfg);

    struct Combo {
        EvRepresentation repr;
        double ki;
        StabilitySweepResult sweep;
        bool ok = true;
        std::string error;
    };
    std::vector<Combo> combos;
    for (EvRepresentation repr : cfg.representations)
        for (double ki : cfg.ki_values) combos.push_back({repr, ki, {}, true, {}});

    parallel_for(int(combos.size()), cfg.jobs, [&](int i) {
        auto& c = combos[i];
        try {
            StationGains gains = cfg.gains;
            gains.pi1.k_i = c.ki;
            StabilityOptions opt;
            opt.station = cfg.station;
            opt.gains = gains;
            FleetSpec spec = make_fleet_spec(cfg, c.repr, cfg.fleet.chemistry,
                                             cfg.fleet.mode, cfg.fleet.soc0);
            if (c.repr == EvRepresentation::Vflm) {
                auto model = StationModel::make(cfg.fleet.chemistry, cfg.fleet.mode,
                                                cfg.station, gains);
                model.soc_param = cfg.fleet.soc0;
                auto study = extract_vflm_study(model, cfg.fleet.soc0, cfg.vflm);
                // the second-order model drives the network studies
                for (const auto& fit : study.fits)
                    if (fit.params.g.order() == 2) opt.vflm_template = fit.params;
                if (opt.vflm_template.g.order() == 0)
                    throw DomainError(
                        "stability sweep with vflm needs order 2 in vflm.orders");
            }
            c.sweep = stability_sweep(gc, cfg.lambdas, spec, opt);
        } catch (const std::exception& e) {
            c.ok = false;
            c.error = e.what();
        }
    });

    CsvWriter csv(out_path(cfg, "fig11_sigma.csv"),
                  {"repr", "ki_pi1", "lambda", "sigma_m_per_s", "freq_hz", "ok"});
    CsvWriter stars(out_path(cfg, "fig11_lambda_star.csv"),
                    {"repr", "ki_pi1", "lambda_star"});
    for (const auto& c : combos) {
        if (!c.ok) {
            manifest.point(std::string(to_string(c.repr)) + "_ki" + format_num(c.ki),
                           false);
            continue;
        }
        for (const auto& p : c.sweep.points) {
            csv.row_mixed({to_string(c.repr), format_num(c.ki), format_num(p.lambda),
                           format_num(p.sigma_m), format_num(p.freq_hz),
                           p.ok ? "1" : "0"});
            manifest.point(std::string(to_string(c.repr)) + "_ki" + format_num(c.ki) +
                               "_lam" + format_num(p.lambda),
                           p.ok);
        }
        stars.row_mixed({to_string(c.repr), format_num(c.ki),
                         c.sweep.lambda_star ? format_num(*c.sweep.lambda_star) : "none"});
    }
    csv.write();
    stars.write();
    manifest.stage("stability-sweep", timer.ms());
    manifest.write();
    std::cout << "stability-sweep: wrote fig11_sigma.csv and fig11_lambda_star.csv\n";
    return manifest.any_failed() ? 1 : 0;
}

int run_transient(const StudyConfig& cfg) {
    RunManifest manifest(out_path(cfg, "run_manifest.txt"), cfg.source_text);
    StageTimer timer;
    auto gc = load_study_case(cfg);
    FleetSpec spec = make_fleet_spec(cfg, cfg.fleet.repr, cfg.fleet.chemistry,
                                     cfg.fleet.mode, cfg.fleet.soc0);
    TransientOptions opt = cfg.transient;
    opt.station = cfg.station;
    opt.gains = cfg.gains;
    if (cfg.fleet.repr == EvRepresentation::Vflm) {
        auto model = StationModel::make(cfg.fleet.chemistry, cfg.fleet.mode, cfg.station,
                                        cfg.gains);
        model.soc_param = cfg.fleet.soc0;
        auto study = extract_vflm_study(model, cfg.fleet.soc0, cfg.vflm);
        for (const auto& fit : study.fits)
            if (fit.params.g.order() == 2) opt.vflm_template = fit.params;
    }
    auto tr = transient_disturbance(gc, cfg.transient_lambda, spec, opt);
    CsvWriter csv(out_path(cfg, "fig11_transient.csv"), {"t_s", "v_dev_pu"});
    for (std::size_t k = 0; k < tr.t.size(); ++k) csv.row({tr.t[k], tr.v_dev[k]});
    csv.write();
    manifest.point("transient", true);
    manifest.stage("transient", timer.ms());
    manifest.write();
    std::cout << "transient: " << (tr.growing ? "growing" : "decaying")
              << " oscillation, envelope rate " << tr.growth_rate << " 1/s, "
              << tr.dominant_freq_hz << " Hz; wrote " << csv.path() << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"EV charging-station load models and grid studies"};
    app.require_subcommand(1);

    std::string config_path;
    std::string data_dir_flag;
    std::string ev_model_flag;
    int jobs_flag = 0;
    long seed = 0;  // reserved; all algorithms are deterministic
    app.add_option("-c,--config", config_path, "study configuration file");
    app.add_option("--data-dir", data_dir_flag, "override the bundled data directory");
    app.add_option("--jobs", jobs_flag, "worker threads for independent sweep points");
    app.add_option("--seed", seed, "reserved (deterministic algorithms)");

    auto* charge = app.add_subcommand("charge", "full single-EV charge simulation");
    auto* sweep = app.add_subcommand("sweep-static", "voltage/SOC0 steady-state sweeps");
    auto* fit = app.add_subcommand("fit-static", "fit the static load models");
    auto* vflm = app.add_subcommand("extract-vflm", "extract G(s) and fit VFLMs");
    auto* pf = app.add_subcommand("powerflow", "network power flow with EV fleets");
    bool fig8 = false;
    pf->add_flag("--fig8", fig8, "sweep soc0 across representations at the overload level");
    pf->add_option("--ev-model", ev_model_flag, "pq|static|detailed|vflm");
    auto* stab = app.add_subcommand("stability-sweep", "sigma_M over the lambda grid");
    auto* trans = app.add_subcommand("transient", "load-step transient confirmation");

    CLI11_PARSE(app, argc, argv);

    try {
        StudyConfig cfg = config_path.empty() ? StudyConfig{} : parse_config(config_path);
        if (!data_dir_flag.empty()) {
            setenv("EVLOAD_DATA_DIR", data_dir_flag.c_str(), 1);
        } else if (!cfg.data_dir_override.empty()) {
            setenv("EVLOAD_DATA_DIR", cfg.data_dir_override.c_str(), 1);
        }
        if (jobs_flag > 0) cfg.jobs = jobs_flag;
        if (!ev_model_flag.empty())
            cfg.fleet.repr = ev_representation_from_string(ev_model_flag);

        if (charge->parsed()) return run_charge(cfg);
        if (sweep->parsed()) return run_sweep_static(cfg);
        if (fit->parsed()) return run_fit_static(cfg);
        if (vflm->parsed()) return run_extract_vflm(cfg);
        if (pf->parsed()) return run_powerflow(cfg, fig8);
        if (stab->parsed()) return run_stability_sweep(cfg);
        if (trans->parsed()) return run_transient(cfg);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
