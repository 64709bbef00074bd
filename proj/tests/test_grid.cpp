#include <catch2/catch_amalgamated.hpp>

#include "evload/grid.hpp"

#include <cstdio>
#include <filesystem>

using namespace evload;
using Catch::Approx;

TEST_CASE("bundled IEEE14 case loads with the expected counts", "[grid][case]") {
    const auto gc = load_case(bundled_case_path());
    CHECK(gc.buses.size() == 14);
    CHECK(gc.branches.size() == 20);
    CHECK(gc.generators.size() == 5);
    CHECK(gc.loads.size() == 11);
    CHECK(gc.base_mva == 100.0);
}

TEST_CASE("case validation rejects structural defects", "[grid][case]") {
    auto gc = load_case(bundled_case_path());
    SECTION("two slack buses") {
        gc.buses[1].type = BusType::Slack;
        CHECK_THROWS_AS(gc.validate(), DomainError);
    }
    SECTION("disconnected bus") {
        Bus b;
        b.id = 99;
        b.type = BusType::PQ;
        gc.buses.push_back(b);
        CHECK_THROWS_AS(gc.validate(), DomainError);
    }
    SECTION("negative load") {
        gc.loads[0].p_mw = -1.0;
        CHECK_THROWS_AS(gc.validate(), DomainError);
    }
}

TEST_CASE("case file round trip", "[grid][case]") {
    const auto gc = load_case(bundled_case_path());
    const std::string tmp = std::filesystem::temp_directory_path() / "evload_rt.case";
    save_case(tmp, gc);
    const auto back = load_case(tmp);
    REQUIRE(back.buses.size() == gc.buses.size());
    REQUIRE(back.branches.size() == gc.branches.size());
    for (std::size_t i = 0; i < gc.branches.size(); ++i) {
        CHECK(back.branches[i].r == gc.branches[i].r);
        CHECK(back.branches[i].x == gc.branches[i].x);
        CHECK(back.branches[i].tap == gc.branches[i].tap);
    }
    for (std::size_t i = 0; i < gc.loads.size(); ++i)
        CHECK(back.loads[i].p_mw == gc.loads[i].p_mw);
    for (std::size_t i = 0; i < gc.generators.size(); ++i) {
        CHECK(back.generators[i].dyn.xd == gc.generators[i].dyn.xd);
        CHECK(back.generators[i].dyn.avr_ka == gc.generators[i].dyn.avr_ka);
    }
    std::filesystem::remove(tmp);
}

TEST_CASE("trivial single-bus case", "[grid][pf]") {
    GridCase gc;
    gc.base_mva = 100.0;
    Bus b1;
    b1.id = 1;
    b1.type = BusType::Slack;
    b1.v_set = 1.02;
    Bus b2 = b1;
    b2.id = 2;
    b2.type = BusType::PQ;
    gc.buses = {b1, b2};
    Branch br;
    br.from = 1;
    br.to = 2;
    br.r = 0.01;
    br.x = 0.1;
    gc.branches = {br};
    auto sol = solve_power_flow(gc);
    REQUIRE(sol.converged);
    CHECK(sol.v_mag[0] == Approx(1.02));
    CHECK(sol.v_mag[1] == Approx(1.02).margin(1e-9));
    CHECK(sol.losses_mw == Approx(0.0).margin(1e-9));
    CHECK(sol.flows[0].i_from == Approx(0.0).margin(1e-9));
}

TEST_CASE("IEEE14 base case matches the public reference solution", "[grid][pf]") {
    const auto gc = load_case(bundled_case_path());
    auto sol = solve_power_flow(gc);
    REQUIRE(sol.converged);
    CHECK(sol.iterations <= 10);

    // reference bus voltages (solved case, public archive / matpower)
    const double v_ref[14] = {1.060, 1.045, 1.010, 1.018, 1.020, 1.070, 1.062,
                              1.090, 1.056, 1.051, 1.057, 1.055, 1.050, 1.036};
    const double a_ref[14] = {0.0,    -4.98,  -12.72, -10.31, -8.77,  -14.22, -13.36,
                              -13.36, -14.94, -15.10, -14.79, -15.08, -15.16, -16.03};
    for (int i = 0; i < 14; ++i) {
        INFO("bus " << i + 1);
        CHECK(sol.v_mag[i] == Approx(v_ref[i]).margin(1e-3));
        CHECK(sol.v_ang[i] * 180.0 / kPi == Approx(a_ref[i]).margin(0.05));
    }
    // total losses around 13.39 MW in the reference solution
    CHECK(sol.losses_mw == Approx(13.39).margin(0.1));
    // slack covers load + losses - other generation
    CHECK(sol.slack_p_mw == Approx(259.0 - 40.0 + sol.losses_mw).margin(0.05));
}

TEST_CASE("power balance holds at every converged solution", "[grid][pf]") {
    const auto gc = load_case(bundled_case_path());
    auto check_balance = [](const GridCase& c, const PowerFlowSolution& sol) {
        double gen = sol.slack_p_mw / c.base_mva + 40.0 * 1.0 / c.base_mva;
        // generic: sum of net injections equals branch losses
        double inj = 0.0;
        for (double p : sol.p_inj) inj += p;
        CHECK(std::abs(inj - sol.losses_mw / c.base_mva) < 1e-6);
        (void)gen;
    };
    auto sol = solve_power_flow(gc);
    REQUIRE(sol.converged);
    check_balance(gc, sol);

    FleetSpec spec;
    spec.repr = EvRepresentation::ConstPq;
    auto over = apply_overload(gc, 0.20, spec);
    auto sol2 = solve_power_flow(over);
    REQUIRE(sol2.converged);
    // net injections already account for fleet power, so their sum is the loss
    double inj = 0.0;
    for (double p : sol2.p_inj) inj += p;
    CHECK(std::abs(inj - sol2.losses_mw / over.base_mva) < 1e-6);
}

TEST_CASE("lambda overload construction", "[grid][fleet]") {
    const auto gc = load_case(bundled_case_path());
    FleetSpec spec;
    spec.repr = EvRepresentation::ConstPq;

    SECTION("lambda = 0 leaves the case unchanged") {
        auto out = apply_overload(gc, 0.0, spec);
        CHECK(out.fleets.empty());
        for (std::size_t i = 0; i < gc.generators.size(); ++i)
            CHECK(out.generators[i].p_set_mw == gc.generators[i].p_set_mw);
    }
    SECTION("n_ev rounding formula") {
        auto out = apply_overload(gc, 0.20, spec);
        // bus 4 load is 47.8 MW -> round(0.2 * 47.8e6 / 50e3) = 191
        bool found = false;
        for (const auto& att : out.fleets)
            if (att.bus == 4) {
                CHECK(att.n_ev == 191);
                found = true;
            }
        CHECK(found);
    }
    SECTION("PV generation scaled by (1 + lambda), slack untouched") {
        auto out = apply_overload(gc, 0.20, spec);
        CHECK(out.generators[0].p_set_mw == gc.generators[0].p_set_mw);  // slack
        CHECK(out.generators[1].p_set_mw == Approx(40.0 * 1.2));
    }
    SECTION("total fleet nominal power within rounding granularity") {
        auto out = apply_overload(gc, 0.20, spec);
        double total_nominal = 0.0, target = 0.0;
        for (const auto& att : out.fleets) total_nominal += att.n_ev * 50e3;
        for (const auto& l : gc.loads) target += 0.2 * l.p_mw * 1e6;
        CHECK(std::abs(total_nominal - target) <= out.fleets.size() * 25e3);
    }
}

TEST_CASE("fleet with n_ev = k equals k duplicated single-EV stations", "[grid][fleet]") {
    auto gc = load_case(bundled_case_path());
    FleetSpec spec;
    spec.repr = EvRepresentation::Detailed;
    spec.chemistry = Chemistry::LFP;
    spec.mode = ChargeMode::CPCV;

    auto one_fleet = apply_overload(gc, 0.0, spec);
    FleetAttachment att;
    att.bus = 9;
    att.repr = EvRepresentation::Detailed;
    att.chemistry = Chemistry::LFP;
    att.mode = ChargeMode::CPCV;
    att.soc0 = 0.1;
    att.n_ev = 3;
    one_fleet.fleets = {att};

    auto dup = one_fleet;
    att.n_ev = 1;
    dup.fleets = {att, att, att};

    auto s1 = solve_power_flow(one_fleet);
    auto s2 = solve_power_flow(dup);
    REQUIRE(s1.converged);
    REQUIRE(s2.converged);
    for (int i = 0; i < 14; ++i) {
        CHECK(s1.v_mag[i] == Approx(s2.v_mag[i]).margin(1e-10));
        CHECK(s1.v_ang[i] == Approx(s2.v_ang[i]).margin(1e-10));
    }
    // fleet power scales linearly with n_ev at the solved voltage
    CHECK(s1.fleet_p_mw[0] ==
          Approx(s2.fleet_p_mw[0] + s2.fleet_p_mw[1] + s2.fleet_p_mw[2]).epsilon(1e-9));
}

TEST_CASE("detailed fleet steady power responds to representation", "[grid][fleet]") {
    FleetAttachment att;
    att.bus = 1;
    att.soc0 = 0.1;
    att.n_ev = 2;
    SECTION("const pq ignores voltage") {
        att.repr = EvRepresentation::ConstPq;
        att.p_const_w = 1.7e6;
        CHECK(fleet_power_w(att, 0.95) == 1.7e6);
        CHECK(fleet_power_w(att, 1.05) == 1.7e6);
    }
    SECTION("static exp model at nominal voltage gives n_ev P_nom (a+b)") {
        att.repr = EvRepresentation::StaticModel;
        att.static_kind = "exp";
        att.exp_params = ExpParams{50e3, 230.0, 1.0, 0.002, -2.0};
        CHECK(fleet_power_w(att, 1.0) == Approx(2 * 50e3 * 1.002));
    }
    SECTION("detailed CPCV draws battery power plus filter loss") {
        att.repr = EvRepresentation::Detailed;
        att.mode = ChargeMode::CPCV;
        const double p = fleet_power_w(att, 1.0);
        CHECK(p > 2 * 50e3);
        CHECK(p < 2 * 50.5e3);
    }
}
