#include <catch2/catch_amalgamated.hpp>

#include "evload/station.hpp"
#include "evload/station_sim.hpp"

#include <cmath>

using namespace evload;
using Catch::Approx;

TEST_CASE("filter dynamics", "[station]") {
    StationParams p;
    StationState s;
    AcPort port;

    SECTION("equilibrium with no drop") {
        port.v_cd = 230.0;
        port.v_cq = 0.0;
        s.e_d = 230.0;
        s.e_q = 0.0;
        s.i_d = s.i_q = 0.0;
        auto [did, diq] = filter_dynamics(s, port, p);
        CHECK(did == Approx(0.0).margin(1e-12));
        CHECK(diq == Approx(0.0).margin(1e-12));
    }
    SECTION("algebraic steady state with i_q = 0") {
        port.v_cd = 230.0;
        s.i_d = 120.0;
        s.i_q = 0.0;
        s.e_d = port.v_cd - p.r_f * s.i_d;
        s.e_q = -p.omega * p.l_f * s.i_d;
        auto [did, diq] = filter_dynamics(s, port, p);
        CHECK(did == Approx(0.0).margin(1e-9));
        CHECK(diq == Approx(0.0).margin(1e-9));
    }
    SECTION("decoupled step response has time constant L_F/R_F") {
        // d-axis alone: L di/dt = -R i + u with the cross terms cancelled
        const double tau = p.l_f / p.r_f;
        const double u = 1.0;  // volt step
        double i = 0.0;
        const double dt = tau / 2000.0;
        for (int k = 0; k < 2000; ++k) {
            // trapezoidal on di/dt = (u - R i)/L
            const double a = p.r_f / p.l_f;
            i = (i * (1 - 0.5 * dt * a) + dt * u / p.l_f) / (1 + 0.5 * dt * a);
        }
        const double expected = (u / p.r_f) * (1.0 - std::exp(-1.0));
        CHECK(i == Approx(expected).epsilon(1e-4));
    }
}

TEST_CASE("dc link dynamics", "[station]") {
    StationParams p;
    StationState s;
    s.v_dc = 800.0;
    s.delta = 0.5;
    s.i_l = 100.0;

    SECTION("power balance gives zero derivative") {
        const double p_conv = s.v_dc * (s.delta * s.i_l);
        CHECK(dc_link_dynamics(s, p, p_conv) == Approx(0.0).margin(1e-12));
    }
    SECTION("isolated capacitor holds") {
        s.i_l = 0.0;
        CHECK(dc_link_dynamics(s, p, 0.0) == Approx(0.0).margin(1e-12));
    }
    SECTION("power step slope is dP/(v_dc C_DC1)") {
        const double p0 = s.v_dc * (s.delta * s.i_l);
        const double dP = 5e3;
        CHECK(dc_link_dynamics(s, p, p0 + dP) == Approx(dP / (s.v_dc * p.c_dc1)));
    }
    SECTION("collapsed voltage raises the numerical guard") {
        s.v_dc = 0.5;
        CHECK_THROWS_AS(dc_link_dynamics(s, p, 1e3), NumericalError);
    }
}

TEST_CASE("dcdc average model", "[station]") {
    StationParams p;
    StationState s;
    s.v_dc = 800.0;
    s.v_dc2 = 400.0;
    s.delta = 0.5;
    s.i_l = 125.0;

    SECTION("converter equilibrium") {
        auto [dil, dvdc2] = dcdc_average_dynamics(s, p, 125.0);
        CHECK(dil == Approx(0.0).margin(1e-12));
        CHECK(dvdc2 == Approx(0.0).margin(1e-12));
    }
    SECTION("steady state duty cycle is v_batt/v_dc = 0.5 at nominal") {
        CHECK(s.v_dc2 / s.v_dc == Approx(0.5));
    }
    SECTION("lossless average model identity") {
        // v_dc * (delta i_L) = v_dc2 * i_L when v_dc2 = delta v_dc
        CHECK(s.v_dc * (s.delta * s.i_l) == Approx(s.v_dc2 * s.i_l));
    }
}

TEST_CASE("fleet injection scales linearly", "[station]") {
    CHECK(fleet_injection({10.0, 0.0}, 1) == std::pair{10.0, 0.0});
    CHECK(fleet_injection({10.0, 0.0}, 2) == std::pair{20.0, 0.0});
    CHECK(fleet_injection({-3.0, 4.0}, 5) == std::pair{-15.0, 20.0});
    CHECK_THROWS_AS(fleet_injection({1.0, 0.0}, 0), DomainError);
}

TEST_CASE("tap changes scale the terminal voltage", "[station]") {
    StationParams p;
    CHECK(set_tap(p, 0.97).tap == 0.97);
    CHECK_THROWS_AS(set_tap(p, 0.0), DomainError);
    CHECK_THROWS_AS(set_tap(p, -1.0), DomainError);
    for (double tap : {0.9, 1.0, 1.1}) {
        const double v_c = set_tap(p, tap).tap * p.v_c_nom;
        CHECK(v_c / p.v_c_nom == Approx(tap));
    }
}

TEST_CASE("station closed-form steady state satisfies the DAE", "[station][sim]") {
    for (Chemistry chem : kAllChemistries) {
        for (ChargeMode mode : {ChargeMode::CCCV, ChargeMode::CPCV}) {
            auto model = StationModel::make(chem, mode);
            for (double soc : {0.1, 0.5, 0.9}) {
                model.soc_param = soc;
                for (double ratio : {0.9, 1.0, 1.1}) {
                    Vec x = model.steady_state(ratio * 230.0, soc);
                    Vec dx;
                    StationOutputs out;
                    model.deriv(x, ratio * 230.0, 0.0, dx, &out);
                    const Vec w = model.state_scales().cwiseMax(1e-6);
                    const double rn = (dx.array() / w.array()).abs().maxCoeff();
                    INFO(to_string(chem) << " " << to_string(mode) << " soc=" << soc
                                         << " r=" << ratio << " |dx| = " << rn);
                    CHECK(rn < 1e-6);
                    CHECK(out.q_ev == Approx(0.0).margin(1e-9));
                    CHECK(out.v_cell < model.cell.v_th);
                    // soc drifts at the coulomb-counting rate while charging
                    model.charge_states = true;
                    Vec x2 = model.steady_state(ratio * 230.0, soc);
                    Vec dx2;
                    model.deriv(x2, ratio * 230.0, 0.0, dx2);
                    CHECK(dx2[StationModel::IX_SOC] ==
                          Approx(out.i_batt / (3600.0 * model.pack.n_par * model.cell.q_cell)));
                    model.charge_states = false;
                }
            }
        }
    }
}

TEST_CASE("steady-state invariants", "[station][sim]") {
    auto model = StationModel::make(Chemistry::LFP, ChargeMode::CPCV);
    StationOutputs o;
    model.steady_state(230.0, 0.1, &o);

    SECTION("ac/dc coupler is lossless") {
        CHECK(o.p_conv == Approx(o.p_batt).epsilon(1e-9));
    }
    SECTION("filter loss is the only ac-side loss") {
        // P_EV - P_conv = 1.5 R_F (i_d^2 + i_q^2)
        const double i_d = o.p_ev / (1.5 * 230.0);
        CHECK(o.p_ev - o.p_conv == Approx(1.5 * model.params.r_f * i_d * i_d).epsilon(1e-6));
    }
    SECTION("battery power matches the CPCV reference") {
        CHECK(o.p_batt == Approx(50e3).epsilon(1e-9));
    }
    SECTION("duty cycle equals v_batt / v_dc") {
        CHECK(o.delta == Approx(o.v_batt / 800.0).epsilon(1e-9));
    }
}

TEST_CASE("closed loop recovers from a dc-link disturbance", "[station][sim]") {
    auto model = StationModel::make(Chemistry::LFP, ChargeMode::CPCV);
    model.charge_states = false;
    model.soc_param = 0.1;
    Vec x = model.steady_state(230.0, 0.1);
    // kick the dc link by 5 V and integrate; the voltage loop must pull it back
    x[StationModel::IX_VDC] += 5.0;
    IntegratorOptions io;
    io.h0 = 1e-5;
    io.h_max = 5e-3;
    io.rtol = 1e-5;
    TrapezoidalDae integ(model.as_ode(230.0, 0.0), io);
    auto st = integ.integrate(0.0, 2.0, x);
    REQUIRE(st.ok);
    StationOutputs o = model.outputs(x, 230.0, 0.0);
    CHECK(x[StationModel::IX_VDC] == Approx(800.0).margin(0.05));
    CHECK(o.q_ev == Approx(0.0).margin(0.001 * 50e3));
    CHECK(o.p_batt == Approx(50e3).epsilon(1e-3));
}

TEST_CASE("reactive power regulates to zero after a voltage step", "[station][sim]") {
    auto model = StationModel::make(Chemistry::LFP, ChargeMode::CPCV);
    model.soc_param = 0.1;
    Vec x = model.steady_state(230.0, 0.1);
    // -3% terminal voltage step; run with the new input from the old state
    const double v2 = 0.97 * 230.0;
    IntegratorOptions io;
    io.h0 = 1e-5;
    io.h_max = 5e-3;
    TrapezoidalDae integ(model.as_ode(v2, 0.0), io);
    auto st = integ.integrate(0.0, 3.0, x);
    REQUIRE(st.ok);
    StationOutputs o = model.outputs(x, v2, 0.0);
    CHECK(std::abs(o.q_ev) < 1e-3 * 50e3);
    CHECK(x[StationModel::IX_VDC] == Approx(800.0).margin(0.1));
    CHECK(o.p_batt == Approx(50e3).epsilon(2e-3));
    // settled grid power matches the closed-form steady state at v2
    StationOutputs ss = model.steady_outputs(v2, 0.1);
    CHECK(o.p_ev == Approx(ss.p_ev).epsilon(1e-4));
}
