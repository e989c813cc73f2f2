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

#ifndef MBCSI_CHANMODEL_HPP
#define MBCSI_CHANMODEL_HPP

#include "mbcsi/common.hpp"

#include <algorithm>
#include <optional>
#include <span>

// Multipath OFDM channel model over a (packet, subcarrier, antenna) lattice.
//
// Each path contributes alpha * exp(-j * phase(t, f, a)) with
//     phase = 2*pi * (f * df * tau + a * ds * phi - fD * t * dt)
// where ds is the antenna spacing in wavelengths of the grid's carrier and phi is the
// sine of the arrival angle w.r.t. the array broadside. The constant carrier term
// fc * tau is part of alpha.

namespace mbcsi
{
    struct StaticPathParams;

    // One multipath component: complex gain, delay [s], sine-angle, Doppler [Hz].
    struct PathParams
    {
        cplx alpha{1.0, 0.0};
        double tau = 0.0;
        double phi = 0.0;
        double doppler = 0.0;

        StaticPathParams static_part() const;
        bool operator==(const PathParams &) const = default;
    };

    // A path with its Doppler component removed.
    struct StaticPathParams
    {
        cplx alpha{1.0, 0.0};
        double tau = 0.0;
        double phi = 0.0;

        PathParams with_doppler(double doppler) const
        {
            return {alpha, tau, phi, doppler};
        }
        bool operator==(const StaticPathParams &) const = default;
    };

    inline StaticPathParams PathParams::static_part() const
    {
        return {alpha, tau, phi};
    }

    struct GridIndex
    {
        std::size_t t = 0;
        std::size_t f = 0;
        std::size_t a = 0;
    };

    struct MeasurementGrid
    {
        std::size_t num_packets = 16;
        std::size_t num_subcarriers = 64;
        std::size_t num_antennas = 3;
        double packet_interval = 50e-6;     // [s]
        double subcarrier_spacing = 120e3;  // [Hz]
        double antenna_spacing = 0.5;       // [wavelengths]
        double carrier_frequency = 60e9;    // [Hz], frequency of subcarrier 0

        std::size_t size() const
        {
            return num_packets * num_subcarriers * num_antennas;
        }

        std::size_t index(std::size_t t, std::size_t f, std::size_t a) const
        {
            return (t * num_subcarriers + f) * num_antennas + a;
        }

        std::size_t index(const GridIndex &m) const
        {
            return index(m.t, m.f, m.a);
        }

        bool contains(const GridIndex &m) const
        {
            return m.t < num_packets && m.f < num_subcarriers && m.a < num_antennas;
        }

        // Delays are unambiguous in [0, 1/df).
        double max_delay() const
        {
            return 1.0 / subcarrier_spacing;
        }

        double doppler_nyquist() const
        {
            return 0.5 / packet_interval;
        }

        void validate() const
        {
            if (num_packets < 1 || num_subcarriers < 1 || num_antennas < 1)
                fail_argument("MeasurementGrid: T, F and S must be >= 1");
            if (!(packet_interval > 0.0) || !(subcarrier_spacing > 0.0))
                fail_argument("MeasurementGrid: packet interval and subcarrier spacing must be > 0");
            if (!(antenna_spacing > 0.0) || !(carrier_frequency > 0.0))
                fail_argument("MeasurementGrid: antenna spacing and carrier frequency must be > 0");
        }

        bool operator==(const MeasurementGrid &) const = default;
    };

    // Grid of the band that starts `offset_subcarriers` above this one. The physical array is the
    // same, so the spacing in wavelengths scales with the carrier.
    inline MeasurementGrid paired_band_grid(const MeasurementGrid &grid, double offset_subcarriers)
    {
        MeasurementGrid out = grid;
        out.carrier_frequency = grid.carrier_frequency + offset_subcarriers * grid.subcarrier_spacing;
        out.antenna_spacing = grid.antenna_spacing * out.carrier_frequency / grid.carrier_frequency;
        return out;
    }

    inline MeasurementGrid paired_band_grid(const MeasurementGrid &grid)
    {
        return paired_band_grid(grid, static_cast<double>(grid.num_subcarriers));
    }

    // Maximum Doppler magnitude for a given speed.
    inline double max_doppler(double carrier_frequency, double max_speed)
    {
        return carrier_frequency * max_speed / kSpeedOfLight;
    }

    // Checks tau in [0, 1/df), |phi| <= 1 and |doppler| <= doppler_limit.
    inline void validate_path(const PathParams &p, const MeasurementGrid &grid, double doppler_limit)
    {
        if (!std::isfinite(p.alpha.real()) || !std::isfinite(p.alpha.imag()) || !std::isfinite(p.tau) ||
            !std::isfinite(p.phi) || !std::isfinite(p.doppler))
            fail_argument("PathParams: non-finite value");
        if (p.tau < 0.0 || p.tau >= grid.max_delay())
            fail_argument("PathParams: tau = ", p.tau, " outside [0, ", grid.max_delay(), ")");
        if (std::abs(p.phi) > 1.0)
            fail_argument("PathParams: |phi| = ", std::abs(p.phi), " > 1");
        if (std::abs(p.doppler) > doppler_limit)
            fail_argument("PathParams: |doppler| = ", std::abs(p.doppler), " exceeds ", doppler_limit);
    }

    // Phase (radians) of one path at grid element m relative to element (0, 0, 0).
    inline double steering_phase(const MeasurementGrid &grid, const GridIndex &m, const PathParams &theta)
    {
        if (!grid.contains(m))
            throw std::out_of_range(concat("steering_phase: index (", m.t, ",", m.f, ",", m.a, ") outside grid (",
                                           grid.num_packets, ",", grid.num_subcarriers, ",", grid.num_antennas, ")"));
        const double df = static_cast<double>(m.f) * grid.subcarrier_spacing;
        const double ds = static_cast<double>(m.a) * grid.antenna_spacing;
        const double dt = static_cast<double>(m.t) * grid.packet_interval;
        return kTwoPi * (df * theta.tau + ds * theta.phi - theta.doppler * dt);
    }

    // Separable per-axis factors of a unit-gain path: entry(t, f, a) = time[t] * freq[f] * ant[a].
    struct SteeringFactors
    {
        std::vector<cplx> time;
        std::vector<cplx> freq;
        std::vector<cplx> ant;
    };

    inline std::vector<cplx> delay_factors(const MeasurementGrid &grid, double tau)
    {
        std::vector<cplx> out(grid.num_subcarriers);
        for (std::size_t f = 0; f < out.size(); ++f)
            out[f] = expj(-kTwoPi * static_cast<double>(f) * grid.subcarrier_spacing * tau);
        return out;
    }

    inline std::vector<cplx> angle_factors(const MeasurementGrid &grid, double phi)
    {
        std::vector<cplx> out(grid.num_antennas);
        for (std::size_t a = 0; a < out.size(); ++a)
            out[a] = expj(-kTwoPi * static_cast<double>(a) * grid.antenna_spacing * phi);
        return out;
    }

    // Doppler ramp exp(+j 2 pi fD t dt) over packets.
    inline std::vector<cplx> doppler_factors(const MeasurementGrid &grid, double doppler)
    {
        std::vector<cplx> out(grid.num_packets);
        for (std::size_t t = 0; t < out.size(); ++t)
            out[t] = expj(kTwoPi * doppler * static_cast<double>(t) * grid.packet_interval);
        return out;
    }

    inline SteeringFactors steering_factors(const MeasurementGrid &grid, const PathParams &theta)
    {
        return {doppler_factors(grid, theta.doppler), delay_factors(grid, theta.tau), angle_factors(grid, theta.phi)};
    }

    // Complex channel samples of one band over a measurement grid, index order (t, f, a).
    class ChannelTensor
    {
    public:
        ChannelTensor() = default;

        ChannelTensor(const MeasurementGrid &grid, int band_id = 0)
            : band_id_(band_id), grid_(grid), values_(grid.size(), cplx{0.0, 0.0})
        {
            grid_.validate();
        }

        ChannelTensor(const MeasurementGrid &grid, std::vector<cplx> values, int band_id = 0)
            : band_id_(band_id), grid_(grid), values_(std::move(values))
        {
            grid_.validate();
            if (values_.size() != grid_.size())
                fail_argument("ChannelTensor: ", values_.size(), " values for a grid of size ", grid_.size());
        }

        int band_id() const { return band_id_; }
        void set_band_id(int id) { band_id_ = id; }
        const MeasurementGrid &grid() const { return grid_; }
        std::size_t size() const { return values_.size(); }

        const std::vector<cplx> &values() const { return values_; }
        std::vector<cplx> &values() { return values_; }

        cplx operator()(std::size_t t, std::size_t f, std::size_t a) const { return values_[grid_.index(t, f, a)]; }
        cplx &operator()(std::size_t t, std::size_t f, std::size_t a) { return values_[grid_.index(t, f, a)]; }
        cplx operator[](std::size_t i) const { return values_[i]; }
        cplx &operator[](std::size_t i) { return values_[i]; }

        double energy() const { return squared_norm(values_); }

        bool all_finite() const
        {
            return std::all_of(values_.begin(), values_.end(),
                               [](const cplx &v) { return std::isfinite(v.real()) && std::isfinite(v.imag()); });
        }

        ChannelTensor &operator+=(const ChannelTensor &o)
        {
            check_same_shape(o);
            for (std::size_t i = 0; i < values_.size(); ++i)
                values_[i] += o.values_[i];
            return *this;
        }

        ChannelTensor &operator-=(const ChannelTensor &o)
        {
            check_same_shape(o);
            for (std::size_t i = 0; i < values_.size(); ++i)
                values_[i] -= o.values_[i];
            return *this;
        }

        ChannelTensor &operator*=(cplx s)
        {
            for (auto &v : values_)
                v *= s;
            return *this;
        }

        void check_same_shape(const ChannelTensor &o) const
        {
            if (o.grid_.num_packets != grid_.num_packets || o.grid_.num_subcarriers != grid_.num_subcarriers ||
                o.grid_.num_antennas != grid_.num_antennas)
                fail_argument("ChannelTensor: shape mismatch");
        }

    private:
        int band_id_ = 0;
        MeasurementGrid grid_{};
        std::vector<cplx> values_;
    };

    inline ChannelTensor operator+(ChannelTensor a, const ChannelTensor &b)
    {
        a += b;
        return a;
    }

    inline ChannelTensor operator-(ChannelTensor a, const ChannelTensor &b)
    {
        a -= b;
        return a;
    }

    // values += scale * path(theta)
    inline void accumulate_path(std::span<cplx> values, const MeasurementGrid &grid, const PathParams &theta,
                                double scale = 1.0)
    {
        const auto s = steering_factors(grid, theta);
        const cplx g = theta.alpha * scale;
        std::size_t i = 0;
        for (std::size_t t = 0; t < grid.num_packets; ++t)
        {
            const cplx gt = g * s.time[t];
            for (std::size_t f = 0; f < grid.num_subcarriers; ++f)
            {
                const cplx gtf = gt * s.freq[f];
                for (std::size_t a = 0; a < grid.num_antennas; ++a)
                    values[i++] += gtf * s.ant[a];
            }
        }
    }

    // Noiseless response of a single path.
    inline ChannelTensor synth_path(const MeasurementGrid &grid, const PathParams &theta, int band_id = 0)
    {
        ChannelTensor out(grid, band_id);
        accumulate_path(out.values(), grid, theta);
        return out;
    }

    // Adds circularly-symmetric complex Gaussian noise with E|n|^2 = noise_std^2.
    inline void add_noise(ChannelTensor &tensor, double noise_std, Rng &rng)
    {
        if (noise_std < 0.0)
            fail_argument("add_noise: noise_std must be >= 0");
        if (noise_std == 0.0)
            return;
        const double s = noise_std / std::sqrt(2.0);
        for (auto &v : tensor.values())
        {
            const double re = gaussian(rng);
            const double im = gaussian(rng);
            v += cplx{s * re, s * im};
        }
    }

    // Sum of paths plus noise.
    inline ChannelTensor synth_channel(const MeasurementGrid &grid, std::span<const PathParams> paths, double noise_std,
                                       Rng &rng, int band_id = 0)
    {
        if (paths.empty())
            fail_argument("synth_channel: empty path list");
        if (noise_std < 0.0)
            fail_argument("synth_channel: noise_std must be >= 0");
        ChannelTensor out(grid, band_id);
        for (const auto &p : paths)
            accumulate_path(out.values(), grid, p);
        add_noise(out, noise_std, rng);
        return out;
    }

    inline ChannelTensor synth_channel(const MeasurementGrid &grid, std::span<const PathParams> paths, int band_id = 0)
    {
        Rng unused(0);
        return synth_channel(grid, paths, 0.0, unused, band_id);
    }

    // Noise standard deviation that puts the noiseless tensor at the requested SNR (RMS based).
    inline double noise_std_for_snr(const ChannelTensor &noiseless, double snr_db)
    {
        const double rms = std::sqrt(noiseless.energy() / static_cast<double>(noiseless.size()));
        return rms * std::pow(10.0, -snr_db / 20.0);
    }

    inline double doppler_from_motion(double speed, double heading, double path_angle, double carrier_frequency)
    {
        if (speed < 0.0)
            fail_argument("doppler_from_motion: speed must be >= 0");
        return carrier_frequency / kSpeedOfLight * speed * std::cos(heading - path_angle);
    }

    // ------------------------------------------------------------------------------------------
    // Scenes
    // ------------------------------------------------------------------------------------------

    struct Location
    {
        double x = 0.0;
        double y = 0.0;
        bool operator==(const Location &) const = default;
    };

    inline double distance(const Location &a, const Location &b)
    {
        return std::hypot(a.x - b.x, a.y - b.y);
    }

    // A ground-truth path. `params.alpha` is the physical gain without the carrier phase;
    // `azimuth` is the world-frame direction of arrival (pointing from the receiver to the source).
    struct ScenePath
    {
        StaticPathParams params;
        double azimuth = 0.0;
        bool operator==(const ScenePath &) const = default;
    };

    // Receiver position, ground-truth paths (LoS first) and motion.
    struct Scene
    {
        Location location;
        std::vector<ScenePath> paths;
        double speed = 0.0;   // [m/s]
        double heading = 0.0; // [rad]

        bool operator==(const Scene &) const = default;

        void validate() const
        {
            if (paths.empty())
                fail_argument("Scene: at least one path required");
            for (std::size_t l = 1; l < paths.size(); ++l)
                if (paths[l].params.tau < paths[0].params.tau)
                    fail_argument("Scene: the LoS path must have the smallest delay");
        }
    };

    // The receive array lies along the world x axis, so phi = cos(azimuth).
    inline double sine_angle_from_azimuth(double azimuth)
    {
        return std::clamp(std::cos(azimuth), -1.0, 1.0);
    }

    // Converts a scene into per-band path parameters. The merged carrier phase is
    // exp(-j 2 pi (fc_band - phase_reference) tau); phase_reference = 0 keeps the full carrier term.
    inline std::vector<PathParams> band_paths(const Scene &scene, const MeasurementGrid &grid,
                                              double phase_reference = 0.0)
    {
        std::vector<PathParams> out;
        out.reserve(scene.paths.size());
        for (const auto &p : scene.paths)
        {
            const double carrier_phase = -kTwoPi * std::fmod((grid.carrier_frequency - phase_reference) * p.params.tau, 1.0);
            PathParams q;
            q.alpha = p.params.alpha * expj(carrier_phase);
            q.tau = p.params.tau;
            q.phi = p.params.phi;
            q.doppler = doppler_from_motion(scene.speed, scene.heading, p.azimuth, grid.carrier_frequency);
            out.push_back(q);
        }
        return out;
    }

    // Optional per-band gain perturbation (log-normal amplitude, uniform phase spread in radians).
    inline void perturb_band_gains(std::vector<PathParams> &paths, double amplitude_std_db, double phase_std,
                                   Rng &rng)
    {
        for (auto &p : paths)
        {
            const double db = amplitude_std_db * gaussian(rng);
            const double ph = phase_std * gaussian(rng);
            p.alpha *= std::pow(10.0, db / 20.0) * expj(ph);
        }
    }

    struct SceneConfig
    {
        std::size_t min_paths = 3;
        std::size_t max_paths = 5;
        double min_distance = 10.0;           // [m]
        double max_distance = 60.0;           // [m]
        double min_excess_delay = 20e-9;      // [s]
        double max_excess_delay = 600e-9;     // [s]
        double min_nlos_gain_db = -12.0;      // relative to LoS
        double max_nlos_gain_db = -3.0;
        double speed = 0.0;                   // [m/s]
        std::optional<double> heading;        // random when empty
        std::optional<double> fixed_distance; // overrides the distance range

        void validate() const
        {
            if (min_paths == 0 || max_paths < min_paths)
                fail_argument("SceneConfig: need 1 <= min_paths <= max_paths");
            if (min_distance <= 0.0 || max_distance < min_distance)
                fail_argument("SceneConfig: invalid distance range");
            if (min_excess_delay <= 0.0 || max_excess_delay < min_excess_delay)
                fail_argument("SceneConfig: invalid excess delay range");
            if (max_nlos_gain_db > 0.0 || max_nlos_gain_db < min_nlos_gain_db)
                fail_argument("SceneConfig: NLoS gains must be attenuated relative to LoS");
            if (speed < 0.0)
                fail_argument("SceneConfig: speed must be >= 0");
        }
    };

    // Random scene around a base station at the origin. LoS delay is the geometric distance / c,
    // NLoS paths get a positive excess delay, random arrival direction and attenuated gain.
    inline Scene generate_scene(Rng &rng, const SceneConfig &config)
    {
        config.validate();
        Scene scene;
        const std::size_t num_paths =
            config.min_paths + uniform_index(rng, config.max_paths - config.min_paths + 1);
        const double d = config.fixed_distance ? *config.fixed_distance
                                               : uniform(rng, config.min_distance, config.max_distance);
        const double bearing = uniform(rng, 0.0, kTwoPi);
        scene.location = {d * std::cos(bearing), d * std::sin(bearing)};
        scene.speed = config.speed;
        scene.heading = config.heading ? *config.heading : uniform(rng, 0.0, kTwoPi);

        const double tau_los = d / kSpeedOfLight;
        const double los_azimuth = std::remainder(bearing + std::numbers::pi, kTwoPi);
        scene.paths.push_back({{cplx{1.0, 0.0}, tau_los, sine_angle_from_azimuth(los_azimuth)}, los_azimuth});
        for (std::size_t l = 1; l < num_paths; ++l)
        {
            const double tau = tau_los + uniform(rng, config.min_excess_delay, config.max_excess_delay);
            const double gain_db = uniform(rng, config.min_nlos_gain_db, config.max_nlos_gain_db);
            const double az = uniform(rng, -std::numbers::pi, std::numbers::pi);
            const cplx alpha = std::pow(10.0, gain_db / 20.0) * expj(uniform(rng, 0.0, kTwoPi));
            scene.paths.push_back({{alpha, tau, sine_angle_from_azimuth(az)}, az});
        }
        return scene;
    }

    // ------------------------------------------------------------------------------------------
    // Geometric environment: one base station and fixed point scatterers. Paths of a receiver
    // location are the LoS and the strongest single-bounce scatterer paths.
    // ------------------------------------------------------------------------------------------

    struct Scatterer
    {
        Location position;
        cplx reflection{0.5, 0.0};
    };

    struct Environment
    {
        Location base_station;
        std::vector<Scatterer> scatterers;
        double reference_distance = 10.0; // LoS gain is 1 at this distance
    };

    struct EnvironmentConfig
    {
        std::size_t num_scatterers = 12;
        double x_min = -40.0, x_max = 40.0;
        double y_min = -40.0, y_max = 40.0;
        double min_reflection = 0.3, max_reflection = 0.8;
        Location base_station{0.0, 0.0};
    };

    inline Environment make_environment(Rng &rng, const EnvironmentConfig &config)
    {
        if (config.x_max <= config.x_min || config.y_max <= config.y_min)
            fail_argument("EnvironmentConfig: empty area");
        Environment env;
        env.base_station = config.base_station;
        for (std::size_t k = 0; k < config.num_scatterers; ++k)
        {
            Scatterer s;
            s.position = {uniform(rng, config.x_min, config.x_max), uniform(rng, config.y_min, config.y_max)};
            s.reflection = uniform(rng, config.min_reflection, config.max_reflection) * expj(uniform(rng, 0.0, kTwoPi));
            env.scatterers.push_back(s);
        }
        return env;
    }

    inline Scene scene_at(const Environment &env, const Location &where, std::size_t num_paths, double speed,
                          double heading)
    {
        if (num_paths == 0)
            fail_argument("scene_at: num_paths must be >= 1");
        Scene scene;
        scene.location = where;
        scene.speed = speed;
        scene.heading = heading;

        const double d_los = std::max(distance(env.base_station, where), 1e-3);
        const double los_az = std::atan2(env.base_station.y - where.y, env.base_station.x - where.x);
        scene.paths.push_back(
            {{cplx{env.reference_distance / d_los, 0.0}, d_los / kSpeedOfLight, sine_angle_from_azimuth(los_az)},
             los_az});

        std::vector<ScenePath> nlos;
        for (const auto &s : env.scatterers)
        {
            const double d1 = distance(env.base_station, s.position);
            const double d2 = std::max(distance(s.position, where), 1e-3);
            const double az = std::atan2(s.position.y - where.y, s.position.x - where.x);
            const cplx g = s.reflection * (env.reference_distance / (d1 + d2));
            nlos.push_back({{g, (d1 + d2) / kSpeedOfLight, sine_angle_from_azimuth(az)}, az});
        }
        std::stable_sort(nlos.begin(), nlos.end(), [](const ScenePath &a, const ScenePath &b) {
            return std::abs(a.params.alpha) > std::abs(b.params.alpha);
        });
        for (std::size_t l = 0; l + 1 < num_paths && l < nlos.size(); ++l)
            scene.paths.push_back(nlos[l]);
        return scene;
    }
}

#endif
