// SPDX-License-Identifier: Apache-2.0
//
// mbcsi - multi-band CSI estimation, cross-band reconstruction and localization
// Copyright (C) 2026 The mbcsi authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
// http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
// ------------------------------------------------------------------------

#include "mbcsi/metrics.hpp"

#include <catch_amalgamated.hpp>

using namespace mbcsi;
using Catch::Approx;

namespace
{
    MeasurementGrid small_grid()
    {
        MeasurementGrid g;
        g.num_packets = 4;
        g.num_subcarriers = 8;
        g.num_antennas = 3;
        return g;
    }

    PathParams random_path(Rng &rng, const MeasurementGrid &g)
    {
        PathParams p;
        p.alpha = uniform(rng, 0.2, 2.0) * expj(uniform(rng, 0.0, kTwoPi));
        p.tau = uniform(rng, 0.0, g.max_delay());
        p.phi = uniform(rng, -1.0, 1.0);
        p.doppler = uniform(rng, -2000.0, 2000.0);
        return p;
    }

    // Direct evaluation of one element, independent of the separable implementation.
    cplx element_oracle(const MeasurementGrid &g, std::size_t t, std::size_t f, std::size_t a, const PathParams &p)
    {
        const double phase = 2.0 * std::numbers::pi *
                             (static_cast<double>(f) * g.subcarrier_spacing * p.tau +
                              static_cast<double>(a) * g.antenna_spacing * p.phi -
                              p.doppler * static_cast<double>(t) * g.packet_interval);
        return p.alpha * std::exp(cplx(0.0, -phase));
    }
}

TEST_CASE("steering phase at the reference element is zero", "[chanmodel]")
{
    Rng rng(3);
    const auto g = small_grid();
    REQUIRE(steering_phase(g, {0, 0, 0}, random_path(rng, g)) == 0.0);
}

TEST_CASE("steering phase with only a Doppler term", "[chanmodel]")
{
    auto g = small_grid();
    g.packet_interval = 1e-3;
    PathParams p{cplx{1.0, 0.0}, 0.0, 0.0, 100.0};
    REQUIRE(steering_phase(g, {1, 0, 0}, p) == Approx(-kTwoPi * 0.1).epsilon(1e-14));
}

TEST_CASE("steering phase matches a term-by-term evaluation", "[chanmodel]")
{
    Rng rng(5);
    const auto g = small_grid();
    for (int k = 0; k < 20; ++k)
    {
        const auto p = random_path(rng, g);
        const double expected = kTwoPi * (3.0 * g.subcarrier_spacing * p.tau + 1.0 * g.antenna_spacing * p.phi) -
                                kTwoPi * p.doppler * 2.0 * g.packet_interval;
        REQUIRE(steering_phase(g, {2, 3, 1}, p) == Approx(expected).margin(1e-9));
    }
}

TEST_CASE("steering phase rejects indices outside the grid", "[chanmodel]")
{
    const auto g = small_grid();
    REQUIRE_THROWS_AS(steering_phase(g, {4, 0, 0}, PathParams{}), std::out_of_range);
    REQUIRE_THROWS_AS(steering_phase(g, {0, 8, 0}, PathParams{}), std::out_of_range);
    REQUIRE_THROWS_AS(steering_phase(g, {0, 0, 3}, PathParams{}), std::out_of_range);
}

TEST_CASE("synth_path of trivial paths is constant", "[chanmodel]")
{
    const auto g = small_grid();
    const auto ones = synth_path(g, PathParams{});
    for (auto v : ones.values())
        REQUIRE(v == cplx{1.0, 0.0});

    const cplx a = 0.5 * expj(std::numbers::pi / 4.0);
    const auto c = synth_path(g, PathParams{a, 0.0, 0.0, 0.0});
    for (auto v : c.values())
        REQUIRE(std::abs(v - a) < 1e-15);
}

TEST_CASE("synth_path matches an element loop", "[chanmodel]")
{
    Rng rng(7);
    const auto g = small_grid();
    for (int k = 0; k < 10; ++k)
    {
        const auto p = random_path(rng, g);
        const auto h = synth_path(g, p);
        for (std::size_t t = 0; t < g.num_packets; ++t)
            for (std::size_t f = 0; f < g.num_subcarriers; ++f)
                for (std::size_t a = 0; a < g.num_antennas; ++a)
                    REQUIRE(std::abs(h(t, f, a) - element_oracle(g, t, f, a, p)) < 1e-12);
    }
}

TEST_CASE("synth_channel sums paths and validates input", "[chanmodel]")
{
    Rng rng(11);
    const auto g = small_grid();

    SECTION("opposite gains cancel")
    {
        auto p = random_path(rng, g);
        auto q = p;
        p.alpha = 1.0;
        q.alpha = -1.0;
        std::vector<PathParams> paths{p, q};
        const auto h = synth_channel(g, paths, 0.0, rng);
        for (auto v : h.values())
            REQUIRE(std::abs(v) < 1e-15);
    }
    SECTION("single noiseless path equals synth_path")
    {
        std::vector<PathParams> paths{random_path(rng, g)};
        const auto h = synth_channel(g, paths);
        const auto p = synth_path(g, paths[0]);
        REQUIRE(h.values().size() == p.values().size());
        for (std::size_t i = 0; i < h.values().size(); ++i)
            REQUIRE(std::abs(h.values()[i] - p.values()[i]) <= 1e-12 * (1.0 + std::abs(p.values()[i])));
    }
    SECTION("three paths equal the element-wise sum")
    {
        std::vector<PathParams> paths{random_path(rng, g), random_path(rng, g), random_path(rng, g)};
        const auto h = synth_channel(g, paths);
        for (std::size_t t = 0; t < g.num_packets; ++t)
            for (std::size_t f = 0; f < g.num_subcarriers; ++f)
                for (std::size_t a = 0; a < g.num_antennas; ++a)
                {
                    cplx s = 0.0;
                    for (const auto &p : paths)
                        s += element_oracle(g, t, f, a, p);
                    REQUIRE(std::abs(h(t, f, a) - s) < 1e-12);
                }
    }
    SECTION("empty path list")
    {
        std::vector<PathParams> none;
        REQUIRE_THROWS_AS(synth_channel(g, none, 0.0, rng), std::invalid_argument);
    }
}

TEST_CASE("synthesis is linear in the path set", "[chanmodel]")
{
    Rng rng(13);
    const auto g = small_grid();
    std::vector<PathParams> a{random_path(rng, g), random_path(rng, g)};
    std::vector<PathParams> b{random_path(rng, g)};
    std::vector<PathParams> ab = a;
    ab.insert(ab.end(), b.begin(), b.end());
    const auto sum = synth_channel(g, a) + synth_channel(g, b);
    const auto all = synth_channel(g, ab);
    for (std::size_t i = 0; i < g.size(); ++i)
        REQUIRE(std::abs(sum[i] - all[i]) < 1e-13);
}

TEST_CASE("Doppler factorizes out of a path", "[chanmodel]")
{
    Rng rng(17);
    const auto g = small_grid();
    auto p = random_path(rng, g);
    auto s = p;
    s.doppler = 0.0;
    const auto dyn = synth_path(g, p);
    const auto stat = synth_path(g, s);
    for (std::size_t t = 0; t < g.num_packets; ++t)
    {
        const cplx ramp = expj(kTwoPi * p.doppler * static_cast<double>(t) * g.packet_interval);
        for (std::size_t f = 0; f < g.num_subcarriers; ++f)
            for (std::size_t a = 0; a < g.num_antennas; ++a)
                REQUIRE(std::abs(dyn(t, f, a) - stat(t, f, a) * ramp) < 1e-12);
    }
}

TEST_CASE("paired bands agree at the reference element up to the carrier phase", "[chanmodel]")
{
    Rng rng(19);
    const auto g = MeasurementGrid{};
    const auto g2 = paired_band_grid(g);
    SceneConfig sc;
    const auto scene = generate_scene(rng, sc);
    const auto pn = band_paths(scene, g);
    const auto pm = band_paths(scene, g2);
    for (std::size_t l = 0; l < pn.size(); ++l)
    {
        const auto hn = synth_path(g, pn[l]);
        const auto hm = synth_path(g2, pm[l]);
        const double dphase = -kTwoPi * (g2.carrier_frequency - g.carrier_frequency) * pn[l].tau;
        REQUIRE(std::abs(hm[0] - hn[0] * expj(dphase)) < 1e-6);
    }
}

TEST_CASE("noise power matches the requested standard deviation", "[chanmodel]")
{
    Rng rng(23);
    MeasurementGrid g;
    g.num_packets = 1024;
    g.num_subcarriers = 128;
    g.num_antennas = 1;
    ChannelTensor h(g);
    const double sigma = 0.7;
    add_noise(h, sigma, rng);
    REQUIRE(h.energy() / static_cast<double>(h.size()) == Approx(sigma * sigma).epsilon(0.03));
}

TEST_CASE("generate_scene geometry, determinism and invariants", "[chanmodel]")
{
    SECTION("single LoS path at 30 m")
    {
        Rng rng(1);
        SceneConfig c;
        c.min_paths = c.max_paths = 1;
        c.fixed_distance = 30.0;
        const auto s = generate_scene(rng, c);
        REQUIRE(s.paths.size() == 1);
        REQUIRE(s.paths[0].params.tau == Approx(100.07e-9).epsilon(1e-4));
    }
    SECTION("same seed, same scene")
    {
        Rng a(99), b(99);
        REQUIRE(generate_scene(a, SceneConfig{}) == generate_scene(b, SceneConfig{}));
    }
    SECTION("property sweep")
    {
        Rng rng(2);
        const MeasurementGrid g;
        SceneConfig c;
        c.speed = kmh_to_ms(120.0);
        const double fd_max = max_doppler(g.carrier_frequency, c.speed);
        for (int k = 0; k < 100; ++k)
        {
            const auto s = generate_scene(rng, c);
            REQUIRE(s.paths.size() >= 3);
            REQUIRE(s.paths.size() <= 5);
            REQUIRE_NOTHROW(s.validate());
            for (const auto &p : band_paths(s, g))
                REQUIRE_NOTHROW(validate_path(p, g, fd_max * (1.0 + 1e-12)));
            for (std::size_t l = 1; l < s.paths.size(); ++l)
                REQUIRE(std::abs(s.paths[l].params.alpha) < std::abs(s.paths[0].params.alpha));
        }
    }
    SECTION("zero paths")
    {
        Rng rng(1);
        SceneConfig c;
        c.min_paths = c.max_paths = 0;
        REQUIRE_THROWS_AS(generate_scene(rng, c), std::invalid_argument);
    }
}

TEST_CASE("doppler_from_motion", "[chanmodel]")
{
    REQUIRE(doppler_from_motion(0.0, 1.0, 0.3, 60e9) == 0.0);
    const double v = kmh_to_ms(60.0);
    REQUIRE(doppler_from_motion(v, 0.4, 0.4, 60e9) == Approx(60e9 / kSpeedOfLight * v).epsilon(1e-12));
    REQUIRE(doppler_from_motion(v, 0.4, 0.4, 60e9) == Approx(3333.3).epsilon(1e-3));
    REQUIRE(std::abs(doppler_from_motion(v, std::numbers::pi / 2.0, 0.0, 60e9)) < 1e-9);
}

TEST_CASE("ccne reference values", "[chanmodel]")
{
    std::vector<cplx> x{cplx{1.0, 2.0}, cplx{-3.0, 0.5}, cplx{0.0, 1.0}};
    std::vector<cplx> zero(3);
    REQUIRE(ccne(zero, x) == Approx(0.0).margin(1e-12));
    REQUIRE(ccne(x, x) == kCcneClampDb);
    std::vector<cplx> y = x;
    const double ref = squared_norm(x);
    y[0] += std::sqrt(0.1 * ref);
    REQUIRE(ccne(y, x) == Approx(10.0).epsilon(1e-12));
    REQUIRE_THROWS_AS(ccne(x, zero), std::invalid_argument);
}
