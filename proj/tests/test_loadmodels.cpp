#include <catch2/catch_amalgamated.hpp>

#include "evload/loadmodels.hpp"

#include <cmath>
#include <random>
#include <sstream>

using namespace evload;
using Catch::Approx;

TEST_CASE("zip power", "[loadmodels][zip]") {
    SECTION("constant-power load") {
        ZipParams p{10e3, 230.0, 1.0, 0.0, 0.0};
        CHECK(zip_power(p, 180.0) == Approx(10e3));
        CHECK(zip_power(p, 250.0) == Approx(10e3));
    }
    SECTION("normalization at nominal voltage") {
        ZipParams p{10e3, 230.0, 0.4, 0.35, 0.25};
        CHECK(zip_power(p, 230.0) == Approx(10e3 * (0.4 + 0.35 + 0.25)));
    }
    SECTION("mixed load at 1.1 pu") {
        ZipParams p{1.0, 1.0, 0.2, 0.3, 0.5};
        CHECK(zip_power(p, 1.1) == Approx(0.2 + 0.3 * 1.1 + 0.5 * 1.21).epsilon(1e-12));
        CHECK(zip_power(p, 1.1) == Approx(1.135));
    }
}

TEST_CASE("exp power", "[loadmodels][exp]") {
    SECTION("constant term only") {
        ExpParams p{5e3, 230.0, 1.0, 0.0, -2.0};
        CHECK(exp_power(p, 100.0) == Approx(5e3));
    }
    SECTION("nominal voltage gives a_p + b_p") {
        ExpParams p{1.0, 230.0, 0.7, 0.3, -1.5};
        CHECK(exp_power(p, 230.0) == Approx(1.0));
    }
    SECTION("CPCV-style parameters at 0.9 pu") {
        ExpParams p{1.0, 1.0, 1.0, 0.001, -2.0};
        CHECK(exp_power(p, 0.9) == Approx(1.0 + 0.001 / 0.81).epsilon(1e-12));
        CHECK(exp_power(p, 0.9) == Approx(1.0012346).epsilon(1e-6));
    }
    SECTION("zero voltage with negative exponent is singular") {
        ExpParams p{1.0, 1.0, 1.0, 0.001, -2.0};
        CHECK_THROWS_AS(exp_power(p, 0.0), DomainError);
    }
}

TEST_CASE("ev static power", "[loadmodels][evstatic]") {
    SECTION("benchmark row at nominal voltage, soc0 = 0.5") {
        EvStaticParams p{1.0, 1.0, 0.001, -2.0, 0.90, 0.003, 0.09, 0.34};
        const double expect = 0.001 + 0.90 - 0.003 + 0.09 * std::exp(-0.17);
        CHECK(ev_static_power(p, 1.0, 0.5) == Approx(expect).epsilon(1e-12));
        CHECK(ev_static_power(p, 1.0, 0.5) == Approx(0.97397).epsilon(1e-4));
    }
    SECTION("degenerate constant") {
        EvStaticParams p{2.0, 1.0, 0.0, -2.0, 0.8, 0.0, 0.0, 0.0};
        CHECK(ev_static_power(p, 0.5, 0.3) == Approx(1.6));
        CHECK(ev_static_power(p, 1.5, 0.9) == Approx(1.6));
    }
    SECTION("soc0 = 1 reduces the SOC part to c_p + e_p") {
        EvStaticParams p{1.0, 1.0, 0.0, -2.0, 0.7, 0.01, 0.25, 0.9};
        CHECK(ev_static_power(p, 1.0, 1.0) == Approx(0.7 + 0.25));
    }
    SECTION("soc0 = 0 is singular") {
        EvStaticParams p{1.0, 1.0, 0.001, -2.0, 0.9, 0.003, 0.09, 0.34};
        CHECK_THROWS_AS(ev_static_power(p, 1.0, 0.0), DomainError);
    }
    SECTION("strictly increasing in soc0 when d,e,f > 0") {
        EvStaticParams p{1.0, 1.0, 0.001, -2.0, 0.75, 0.003, 0.27, 1.11};
        double prev = ev_static_power(p, 1.0, 0.05);
        for (int i = 1; i <= 95; ++i) {
            const double s = 0.05 + 0.01 * i;
            const double val = ev_static_power(p, 1.0, s);
            REQUIRE(val > prev);
            prev = val;
        }
    }
    SECTION("strictly decreasing in v when n_p < 0, b_p > 0") {
        EvStaticParams p{1.0, 1.0, 0.001, -2.0, 0.9, 0.003, 0.09, 0.34};
        double prev = ev_static_power(p, 0.85, 0.5);
        for (int i = 1; i <= 30; ++i) {
            const double v = 0.85 + 0.01 * i;
            const double val = ev_static_power(p, v, 0.5);
            REQUIRE(val < prev);
            prev = val;
        }
    }
    SECTION("agrees with exp model when the SOC part degenerates") {
        // Eq-correspondence: d = e = 0 makes the EV model an exp model with a_p = c_p
        EvStaticParams ev{3.0, 2.0, 0.01, -2.5, 0.85, 0.0, 0.0, 0.0};
        ExpParams ex{3.0, 2.0, 0.85, 0.01, -2.5};
        for (double v : {1.7, 2.0, 2.3})
            CHECK(ev_static_power(ev, v, 0.4) == Approx(exp_power(ex, v)).epsilon(1e-12));
    }
}

TEST_CASE("realize_tf", "[loadmodels][tf]") {
    SECTION("single real pole is a first-order lag") {
        RationalTF g;
        g.poles = {Cx(-1.0, 0.0)};
        g.residues = {Cx(1.0, 0.0)};
        const auto ss = realize_tf(g);
        REQUIRE(ss.order() == 1);
        // step response 1 - exp(-t) via the exact relation x' = -x + u
        CHECK(ss.a(0, 0) == Approx(-1.0));
        CHECK(ss.b[0] * ss.c[0] == Approx(1.0));
        // dc gain
        CHECK(std::abs(ss.eval_jw(1e-9)) == Approx(1.0).epsilon(1e-6));
    }
    SECTION("conjugate pair gives a damped oscillation at |Im(a)|") {
        RationalTF g;
        g.poles = {Cx(-0.5, 7.0), Cx(-0.5, -7.0)};
        g.residues = {Cx(1.0, -2.0), Cx(1.0, 2.0)};
        const auto ss = realize_tf(g);
        REQUIRE(ss.order() == 2);
        auto eig = eigen_analysis(ss.a, 0.0);
        bool found = false;
        for (int i = 0; i < 2; ++i)
            if (eig.eigenvalues[i].imag() > 0) {
                CHECK(eig.eigenvalues[i].real() == Approx(-0.5));
                CHECK(eig.eigenvalues[i].imag() == Approx(7.0));
                found = true;
            }
        CHECK(found);
    }
    SECTION("realization matches the pole-residue sum to 1e-10 relative") {
        std::mt19937_64 rng(123);
        std::uniform_real_distribution<double> u(0.2, 3.0);
        RationalTF g;
        g.poles = {Cx(-u(rng), 0.0), Cx(-u(rng), 10 * u(rng)), Cx(0, 0), Cx(-u(rng), 0)};
        g.poles[2] = std::conj(g.poles[1]);
        g.residues = {Cx(u(rng), 0.0), Cx(u(rng), u(rng)), Cx(0, 0), Cx(-u(rng), 0)};
        g.residues[2] = std::conj(g.residues[1]);
        g.d = 0.3;
        const auto ss = realize_tf(g);
        for (int k = 0; k < 50; ++k) {
            const double w = 0.01 * std::pow(1e4, k / 49.0);
            const Cx direct = g.eval_jw(w);
            const Cx state = ss.eval_jw(w);
            CHECK(std::abs(direct - state) <= 1e-10 * std::max(1.0, std::abs(direct)));
        }
    }
    SECTION("broken conjugate symmetry is rejected") {
        RationalTF g;
        g.poles = {Cx(-1.0, 5.0), Cx(-1.0, -4.0)};
        g.residues = {Cx(1.0, 1.0), Cx(1.0, -1.0)};
        CHECK_THROWS_AS(realize_tf(g), DomainError);
    }
}

TEST_CASE("vflm power evaluation", "[loadmodels][vflm]") {
    VflmParams m;
    m.n_t = 1.0;
    m.n_s = 0.0;
    m.p0 = 50e3;
    m.v0 = 230.0;
    m.g.poles = {Cx(-5.0, 0.0)};
    m.g.residues = {Cx(5.0, 0.0)};  // G(0) = 1

    SECTION("constant trajectory stays at P0") {
        std::vector<double> t, v;
        for (int k = 0; k <= 200; ++k) {
            t.push_back(0.01 * k);
            v.push_back(230.0);
        }
        const auto p = vflm_power(m, t, v);
        for (double pk : p) CHECK(pk == Approx(50e3).epsilon(1e-12));
    }
    SECTION("step with unit dc gain settles at P0 (v1/v0)^Ns") {
        // jump realized over a vanishing interval so the first stepped
        // sample reads the instantaneous response
        std::vector<double> t{0.0, 0.2, 0.2 + 1e-9};
        std::vector<double> v{230.0, 230.0, 0.97 * 230.0};
        for (int k = 1; k <= 4000; ++k) {
            t.push_back(0.2 + 0.002 * k);
            v.push_back(0.97 * 230.0);
        }
        const auto p = vflm_power(m, t, v);
        const double expect = 50e3 * std::pow(0.97, m.n_s);
        CHECK(p.back() == Approx(expect).epsilon(1e-6));
        // instantaneous response follows f1
        CHECK(p[2] == Approx(50e3 * 0.97).epsilon(1e-7));
    }
    SECTION("bounded output for random stable G and bounded input") {
        std::mt19937_64 rng(99);
        std::uniform_real_distribution<double> u(0.1, 2.0);
        for (int trial = 0; trial < 10; ++trial) {
            VflmParams mm = m;
            mm.g.poles = {Cx(-u(rng), 20 * u(rng)), Cx(0, 0)};
            mm.g.poles[1] = std::conj(mm.g.poles[0]);
            mm.g.residues = {Cx(u(rng), u(rng)), Cx(0, 0)};
            mm.g.residues[1] = std::conj(mm.g.residues[0]);
            std::vector<double> t, v;
            std::uniform_real_distribution<double> uv(0.9, 1.1);
            t.push_back(0.0);
            v.push_back(230.0);
            for (int k = 1; k <= 2000; ++k) {
                t.push_back(0.005 * k);
                v.push_back(230.0 * uv(rng));
            }
            const auto p = vflm_power(mm, t, v);
            for (double pk : p) REQUIRE(std::abs(pk) < 10 * mm.p0);
        }
    }
    SECTION("unstable G is rejected") {
        VflmParams bad = m;
        bad.g.poles = {Cx(0.1, 0.0)};
        bad.g.residues = {Cx(1.0, 0.0)};
        std::vector<double> t{0.0, 1.0}, v{230.0, 230.0};
        CHECK_THROWS_AS(vflm_power(bad, t, v), DomainError);
    }
}

TEST_CASE("load model file round trip", "[loadmodels][io]") {
    SECTION("ev_static") {
        LoadModelSpec spec;
        spec.kind = "ev_static";
        spec.meta["chemistry"] = "LFP";
        spec.meta["mode"] = "CCCV";
        spec.ev = EvStaticParams{50e3, 230.0, 0.0018934, -2.02, 0.961, 0.0032, 0.031, 1.6};
        std::stringstream ss;
        write_load_model(ss, spec);
        const auto back = read_load_model(ss);
        CHECK(back.kind == "ev_static");
        CHECK(back.meta.at("chemistry") == "LFP");
        CHECK(back.ev.b_p == Approx(spec.ev.b_p).epsilon(1e-12));
        CHECK(back.ev.f_p == Approx(spec.ev.f_p).epsilon(1e-12));
    }
    SECTION("vflm with conjugate pair") {
        LoadModelSpec spec;
        spec.kind = "vflm";
        spec.vflm.p0 = 48.2e3;
        spec.vflm.v0 = 230.0;
        spec.vflm.n_t = 1.0;
        spec.vflm.n_s = -0.01;
        spec.vflm.g.poles = {Cx(-40.0, 650.0), Cx(-40.0, -650.0)};
        spec.vflm.g.residues = {Cx(12.0, -4.0), Cx(12.0, 4.0)};
        std::stringstream ss;
        write_load_model(ss, spec);
        const auto back = read_load_model(ss);
        REQUIRE(back.vflm.g.order() == 2);
        CHECK(back.vflm.g.poles[0] == spec.vflm.g.poles[0]);
        CHECK(back.vflm.g.residues[1] == spec.vflm.g.residues[1]);
        CHECK(back.vflm.n_t == 1.0);
    }
    SECTION("unknown kind is a parse error") {
        std::stringstream ss("kind banana\n");
        CHECK_THROWS_AS(read_load_model(ss), ParseError);
    }
}
