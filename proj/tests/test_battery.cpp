#include <catch2/catch_amalgamated.hpp>

#include "evload/battery.hpp"

#include <cmath>
#include <random>

using namespace evload;
using Catch::Approx;

TEST_CASE("ocv interpolation passes through knots", "[battery][ocv]") {
    const auto& curve = ocv_curve(Chemistry::LFP);
    const auto& s = curve.soc_knots();
    const auto& v = curve.v_knots();
    REQUIRE(s.size() >= 20);
    for (std::size_t i = 0; i < s.size(); ++i)
        CHECK(curve.value(s[i]) == Approx(v[i]).margin(1e-12));
}

TEST_CASE("ocv midpoint values stay bracketed by neighbour knots", "[battery][ocv]") {
    for (Chemistry chem : kAllChemistries) {
        const auto& curve = ocv_curve(chem);
        const auto& s = curve.soc_knots();
        const auto& v = curve.v_knots();
        for (std::size_t i = 0; i + 1 < s.size(); ++i) {
            const double mid = 0.5 * (s[i] + s[i + 1]);
            const double val = curve.value(mid);
            CHECK(val >= v[i] - 1e-12);
            CHECK(val <= v[i + 1] + 1e-12);
        }
    }
}

TEST_CASE("ocv lookup is non-decreasing over a dense scan", "[battery][ocv]") {
    // brute-force oracle for shape preservation
    for (Chemistry chem : kAllChemistries) {
        const auto& curve = ocv_curve(chem);
        double prev = curve.value(0.0);
        for (int i = 1; i <= 10000; ++i) {
            const double soc = double(i) / 10000.0;
            const double val = curve.value(soc);
            REQUIRE(val >= prev - 1e-12);
            prev = val;
        }
    }
}

TEST_CASE("ocv lookup rejects out-of-range soc", "[battery][ocv]") {
    const auto& curve = ocv_curve(Chemistry::LFP);
    CHECK_THROWS_AS(curve.value(-0.01), DomainError);
    CHECK_THROWS_AS(curve.value(1.01), DomainError);
}

TEST_CASE("analytical ocv formula", "[battery][ocv]") {
    SECTION("soc0 = 1 collapses to E0 + A") {
        AnalyticalOcvParams p{3.3, 0.05, 0.2, 10.0};
        CHECK(ocv_analytical(p, 1.0) == Approx(3.5));
    }
    SECTION("degenerate constant") {
        AnalyticalOcvParams p{3.4, 0.0, 1e-300, 10.0};
        CHECK(ocv_analytical(p, 0.3) == Approx(3.4));
        CHECK(ocv_analytical(p, 0.9) == Approx(3.4));
    }
    SECTION("soc0 = 0 is singular") {
        AnalyticalOcvParams p{3.4, 0.05, 0.1, 10.0};
        CHECK_THROWS_AS(ocv_analytical(p, 0.0), DomainError);
    }
}

TEST_CASE("cell terminal voltage", "[battery]") {
    const auto& curve = ocv_curve(Chemistry::LFP);
    const auto cell = cell_params(Chemistry::LFP);

    SECTION("zero current gives the open-circuit voltage") {
        CHECK(cell_terminal_voltage(curve, cell.r_cell, 0.5, 0.0) ==
              Approx(curve.value(0.5)));
    }
    SECTION("Table-derived ohmic drop") {
        const double v = cell_terminal_voltage(curve, 0.053, 0.5, 10.0);
        CHECK(v == Approx(curve.value(0.5) + 0.53));
    }
    SECTION("discharge lowers the terminal voltage") {
        CHECK(cell_terminal_voltage(curve, cell.r_cell, 0.5, -5.0) < curve.value(0.5));
    }
    SECTION("affine in current with slope r_cell") {
        const double r = cell.r_cell;
        const double v0 = cell_terminal_voltage(curve, r, 0.37, 0.0);
        for (double i : {-20.0, -3.0, 1.0, 7.5, 40.0})
            CHECK(cell_terminal_voltage(curve, r, 0.37, i) == Approx(v0 + r * i));
    }
}

TEST_CASE("pack sizing rounding formulas", "[battery][pack]") {
    SECTION("LFP benchmark pack") {
        const auto cfg = size_pack(Chemistry::LFP, cell_params(Chemistry::LFP), 400.0, 75e3);
        CHECK(cfg.n_ser == 125);
        CHECK(cfg.n_par == 72);
    }
    SECTION("NMC benchmark pack") {
        const auto cfg = size_pack(Chemistry::NMC, cell_params(Chemistry::NMC), 400.0, 75e3);
        CHECK(cfg.n_ser == 111);
        CHECK(cfg.n_par == 94);
    }
    SECTION("all chemistries match hand-evaluated rounding") {
        for (Chemistry chem : kAllChemistries) {
            const auto c = cell_params(chem);
            const auto cfg = size_pack(chem, c, 400.0, 75e3);
            CHECK(cfg.n_ser == int(std::lround(400.0 / c.v_cell_nom)));
            CHECK(cfg.n_par == int(std::lround(75e3 / (400.0 * c.q_cell))));
        }
    }
    SECTION("unit pack") {
        const auto c = cell_params(Chemistry::LFP);
        const auto cfg = size_pack(Chemistry::LFP, c, c.v_cell_nom, c.v_cell_nom * c.q_cell);
        CHECK(cfg.n_ser == 1);
        CHECK(cfg.n_par == 1);
    }
}

TEST_CASE("soc derivative coulomb counting", "[battery][pack]") {
    const auto cell = cell_params(Chemistry::LFP);
    const auto pack = size_pack(Chemistry::LFP, cell, 400.0, 75e3);

    SECTION("zero current, zero rate") {
        CHECK(soc_derivative(pack, cell, 0.0) == 0.0);
    }
    SECTION("pack 1C current gives 1/3600 per second") {
        const double i_1c = pack.n_par * cell.q_cell;  // A
        CHECK(soc_derivative(pack, cell, i_1c) == Approx(1.0 / 3600.0));
    }
    SECTION("LFP pack 1C current is 187.2 A") {
        CHECK(soc_derivative(pack, cell, 187.2) == Approx(1.0 / 3600.0));
    }
    SECTION("charge conservation under trapezoidal integration") {
        // integrate a constant 50 A for 600 s
        const double i = 50.0, T = 600.0, dt = 0.5;
        double soc = 0.2;
        for (double t = 0; t < T - 1e-9; t += dt) {
            soc += dt * soc_derivative(pack, cell, i);
        }
        CHECK(soc - 0.2 == Approx(i * T / (3600.0 * pack.n_par * cell.q_cell)).epsilon(1e-12));
    }
}

TEST_CASE("ocv curve invariants are enforced", "[battery][ocv]") {
    std::vector<double> s{0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
    std::vector<double> v{3.0, 3.1, 3.2, 3.3, 3.4, 3.5, 3.6, 3.7, 3.8, 3.9, 4.0};

    SECTION("valid table accepted") { CHECK_NOTHROW(OcvCurve(s, v)); }
    SECTION("too few knots") {
        std::vector<double> s2{0, 0.5, 1.0}, v2{3.0, 3.5, 4.0};
        CHECK_THROWS_AS(OcvCurve(s2, v2), DomainError);
    }
    SECTION("decreasing voltage rejected") {
        auto bad = v;
        bad[5] = 3.0;
        CHECK_THROWS_AS(OcvCurve(s, bad), DomainError);
    }
    SECTION("must cover [0,1]") {
        auto s2 = s;
        s2.back() = 0.95;
        CHECK_THROWS_AS(OcvCurve(s2, v), DomainError);
    }
}

TEST_CASE("analytical fit helper data sanity", "[battery]") {
    // fitted packs should expose plausible ohmic drop at the CC reference current
    for (Chemistry chem : kAllChemistries) {
        const auto cell = cell_params(chem);
        const auto pack = size_pack(chem, cell, 400.0, 75e3);
        const double v_batt_ref = pack.n_ser * cell.v_th;
        const double i_ref = 50e3 / v_batt_ref;
        const double drop = cell.r_cell * i_ref / pack.n_par;
        CHECK(drop > 0.0);
        CHECK(drop < 0.2);
        // bulk CC operation must be feasible through soc = 0.9
        const auto& curve = ocv_curve(chem);
        CHECK(curve.value(0.9) + drop < cell.v_th);
        // and the CV threshold must be reachable before soc = 1
        CHECK(curve.value(1.0) > cell.v_th);
    }
}
