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

#ifndef MBCSI_PIPELINE_HPP
#define MBCSI_PIPELINE_HPP

#include "mbcsi/metrics.hpp"
#include "mbcsi/music.hpp"
#include "mbcsi/neural.hpp"
#include "mbcsi/sage.hpp"

// Cross-band reconstruction: estimate paths on band n, strip their Doppler, map every static path to
// band n' with the VAE, map the Doppler with the FNN, re-apply it and sum.

namespace mbcsi
{
    // Failure in one pipeline stage ("estimate", "predict", ...).
    class StageError : public std::runtime_error
    {
    public:
        StageError(std::string stage, const std::string &what)
            : std::runtime_error(concat(stage, ": ", what)), stage_(std::move(stage))
        {
        }

        const std::string &stage() const { return stage_; }

    private:
        std::string stage_;
    };

    template <typename F>
    auto run_stage(const std::string &stage, F &&f) -> decltype(f())
    {
        try
        {
            return f();
        }
        catch (const StageError &)
        {
            throw;
        }
        catch (const std::exception &e)
        {
            throw StageError(stage, e.what());
        }
    }

    // ------------------------------------------------------------------------------------------
    // Mobility removal and re-application
    // ------------------------------------------------------------------------------------------

    // Multiplies packet t by exp(sign * j 2 pi fD t dt).
    inline ChannelTensor modulate_packets(ChannelTensor tensor, double doppler, double sign)
    {
        if (!std::isfinite(doppler))
            fail_argument("Doppler must be finite, got ", doppler);
        const auto &g = tensor.grid();
        const std::size_t per_packet = g.num_subcarriers * g.num_antennas;
        for (std::size_t t = 0; t < g.num_packets; ++t)
        {
            const cplx w = expj(sign * kTwoPi * doppler * static_cast<double>(t) * g.packet_interval);
            for (std::size_t k = 0; k < per_packet; ++k)
                tensor[t * per_packet + k] *= w;
        }
        return tensor;
    }

    // Static path tensor: the dynamic one with the Doppler ramp exp(+j 2 pi fD t dt) divided out.
    inline ChannelTensor remove_mobility(const ChannelTensor &path_tensor, double doppler)
    {
        return modulate_packets(path_tensor, doppler, -1.0);
    }

    inline ChannelTensor apply_mobility(const ChannelTensor &static_tensor, double doppler)
    {
        return modulate_packets(static_tensor, doppler, +1.0);
    }

    struct StaticPath
    {
        StaticPathParams params;
        ChannelTensor tensor;
    };

    inline StaticPath remove_mobility(const PathParams &theta, const MeasurementGrid &grid, int band_id = 0)
    {
        if (!std::isfinite(theta.alpha.real()) || !std::isfinite(theta.alpha.imag()) || !std::isfinite(theta.tau) ||
            !std::isfinite(theta.phi) || !std::isfinite(theta.doppler))
            fail_argument("remove_mobility: path parameters must be finite");
        return {theta.static_part(), remove_mobility(synth_path(grid, theta, band_id), theta.doppler)};
    }

    // ------------------------------------------------------------------------------------------
    // Network input/output vectors
    // ------------------------------------------------------------------------------------------

    inline VectorXd interleave(std::span<const cplx> v)
    {
        VectorXd out(2 * static_cast<Eigen::Index>(v.size()));
        for (std::size_t i = 0; i < v.size(); ++i)
        {
            out(2 * static_cast<Eigen::Index>(i)) = v[i].real();
            out(2 * static_cast<Eigen::Index>(i) + 1) = v[i].imag();
        }
        return out;
    }

    inline std::vector<cplx> deinterleave(const VectorXd &v)
    {
        if (v.size() % 2 != 0)
            fail_argument("deinterleave: odd length ", v.size());
        std::vector<cplx> out(static_cast<std::size_t>(v.size() / 2));
        for (std::size_t i = 0; i < out.size(); ++i)
            out[i] = {v(2 * static_cast<Eigen::Index>(i)), v(2 * static_cast<Eigen::Index>(i) + 1)};
        return out;
    }

    // Static response of a path over the (f, a) grid, index f * S + a.
    inline std::vector<cplx> static_response(const MeasurementGrid &grid, const StaticPathParams &p)
    {
        const auto d = delay_factors(grid, p.tau);
        const auto s = angle_factors(grid, p.phi);
        std::vector<cplx> out(grid.num_subcarriers * grid.num_antennas);
        for (std::size_t f = 0; f < grid.num_subcarriers; ++f)
            for (std::size_t a = 0; a < grid.num_antennas; ++a)
                out[f * grid.num_antennas + a] = p.alpha * d[f] * s[a];
        return out;
    }

    // Gain-normalized static path vector (2 F S reals): the VAE input.
    inline VectorXd static_signature(const MeasurementGrid &grid, double tau, double phi)
    {
        return interleave(static_response(grid, {cplx{1.0, 0.0}, tau, phi}));
    }

    // Doppler ramp over packets (2 T reals) of a burst starting at `start_time`: the FNN input and output.
    inline VectorXd doppler_ramp(const MeasurementGrid &grid, double doppler, double start_time = 0.0)
    {
        auto r = doppler_factors(grid, doppler);
        const cplx w = expj(kTwoPi * std::fmod(doppler * start_time, 1.0));
        for (auto &v : r)
            v *= w;
        return interleave(r);
    }

    // Doppler of a (possibly noisy) ramp from the mean lag-one phase increment.
    inline double doppler_from_ramp(const MeasurementGrid &grid, const VectorXd &ramp)
    {
        const auto r = deinterleave(ramp);
        if (r.size() != grid.num_packets)
            fail_argument("doppler_from_ramp: ramp has ", r.size(), " packets, grid has ", grid.num_packets);
        cplx acc = 0.0;
        for (std::size_t t = 0; t + 1 < r.size(); ++t)
            acc += std::conj(r[t]) * r[t + 1];
        return std::arg(acc) / (kTwoPi * grid.packet_interval);
    }

    // Repeats an (f, a) response over all packets.
    inline ChannelTensor static_tensor(const MeasurementGrid &grid, std::span<const cplx> response, int band_id = 0)
    {
        const std::size_t per_packet = grid.num_subcarriers * grid.num_antennas;
        if (response.size() != per_packet)
            fail_argument("static_tensor: response has ", response.size(), " entries, expected ", per_packet);
        ChannelTensor out(grid, band_id);
        for (std::size_t t = 0; t < grid.num_packets; ++t)
            std::copy(response.begin(), response.end(), out.values().begin() + static_cast<long>(t * per_packet));
        return out;
    }

    // ------------------------------------------------------------------------------------------
    // Cross-band models
    // ------------------------------------------------------------------------------------------

    // The same physical path seen on both bands.
    struct PathPair
    {
        PathParams band_n;
        PathParams band_np;
    };

    // Carrier phases are taken relative to band n, so band n' gains carry exp(-j 2 pi (fc' - fc) tau).
    inline std::vector<PathPair> path_pairs(const Scene &scene, const MeasurementGrid &band_n,
                                            const MeasurementGrid &band_np)
    {
        const auto a = band_paths(scene, band_n, band_n.carrier_frequency);
        const auto b = band_paths(scene, band_np, band_n.carrier_frequency);
        std::vector<PathPair> out;
        for (std::size_t l = 0; l < a.size(); ++l)
            out.push_back({a[l], b[l]});
        return out;
    }

    struct CrossbandConfig
    {
        bool mobility_removal = true;
        VaeShape vae_shape{};
        std::size_t fnn_hidden = 128;
        double burst_start_spread = 10e-3; // FNN ramps start at a random time in [0, spread) [s]
        TrainConfig vae_train{};
        TrainConfig fnn_train{};
    };

    struct CrossbandModels
    {
        MeasurementGrid band_n;
        MeasurementGrid band_np;
        bool mobility_removal = true;
        VaeModel vae;
        MlpModel fnn; // unused without mobility removal
    };

    // VAE target: the band-n' static response divided by the band-n gain; without mobility removal the
    // band-n' Doppler ramp is appended and has to be inferred from the static input.
    inline VectorXd crossband_target(const PathPair &p, const MeasurementGrid &band_np, bool mobility_removal)
    {
        if (std::abs(p.band_n.alpha) == 0.0)
            fail_argument("crossband_target: zero band-n gain");
        StaticPathParams s = p.band_np.static_part();
        s.alpha /= p.band_n.alpha;
        const VectorXd stat = interleave(static_response(band_np, s));
        if (mobility_removal)
            return stat;
        VectorXd out(stat.size() + 2 * static_cast<Eigen::Index>(band_np.num_packets));
        out << stat, doppler_ramp(band_np, p.band_np.doppler);
        return out;
    }

    inline CrossbandModels train_crossband(const std::vector<PathPair> &pairs, const MeasurementGrid &band_n,
                                           const MeasurementGrid &band_np, const CrossbandConfig &config)
    {
        if (pairs.empty())
            fail_argument("train_crossband: no training paths");
        CrossbandModels m;
        m.band_n = band_n;
        m.band_np = band_np;
        m.mobility_removal = config.mobility_removal;

        const auto n = static_cast<Eigen::Index>(pairs.size());
        const VectorXd t0 = crossband_target(pairs[0], band_np, config.mobility_removal);
        MatrixXd x(2 * static_cast<Eigen::Index>(band_n.num_subcarriers * band_n.num_antennas), n);
        MatrixXd y(t0.size(), n);
        for (Eigen::Index i = 0; i < n; ++i)
        {
            const auto &p = pairs[static_cast<std::size_t>(i)];
            x.col(i) = static_signature(band_n, p.band_n.tau, p.band_n.phi);
            y.col(i) = crossband_target(p, band_np, config.mobility_removal);
        }
        m.vae = train_vae_crossband(x, y, config.vae_train, config.vae_shape);

        if (config.mobility_removal)
        {
            Rng rng(derive_seed(config.fnn_train.seed, 0x5eed));
            MatrixXd rx(2 * static_cast<Eigen::Index>(band_n.num_packets), n);
            MatrixXd ry(2 * static_cast<Eigen::Index>(band_np.num_packets), n);
            for (Eigen::Index i = 0; i < n; ++i)
            {
                const auto &p = pairs[static_cast<std::size_t>(i)];
                const double t0 = config.burst_start_spread > 0.0 ? uniform(rng, 0.0, config.burst_start_spread) : 0.0;
                rx.col(i) = doppler_ramp(band_n, p.band_n.doppler, t0);
                ry.col(i) = doppler_ramp(band_np, p.band_np.doppler, t0);
            }
            m.fnn = train_mlp(rx, ry, {config.fnn_hidden}, config.fnn_train);
        }
        return m;
    }

    struct PathPrediction
    {
        ChannelTensor static_tensor; // band n'
        double doppler = 0.0;        // band n'
        ChannelTensor dynamic_tensor;
    };

    inline PathPrediction predict_path(const CrossbandModels &m, const PathParams &estimate, int band_id = 1)
    {
        const VectorXd out = predict_crossband_path(m.vae, static_signature(m.band_n, estimate.tau, estimate.phi));
        const auto per_packet = static_cast<Eigen::Index>(2 * m.band_np.num_subcarriers * m.band_np.num_antennas);
        auto response = deinterleave(out.head(per_packet));
        for (auto &v : response)
            v *= estimate.alpha;

        PathPrediction p;
        p.static_tensor = static_tensor(m.band_np, response, band_id);
        if (m.mobility_removal)
            p.doppler = doppler_from_ramp(m.band_np, m.fnn.predict(doppler_ramp(m.band_n, estimate.doppler)));
        else
            p.doppler = doppler_from_ramp(m.band_np, out.tail(out.size() - per_packet));
        p.dynamic_tensor = apply_mobility(p.static_tensor, p.doppler);
        return p;
    }

    // ------------------------------------------------------------------------------------------
    // Path matching and end-to-end reconstruction
    // ------------------------------------------------------------------------------------------

    struct MatchedPaths
    {
        std::vector<PathParams> paths;
        std::size_t dropped = 0;
        std::size_t zero_filled = 0;
    };

    // Keeps the `expected` strongest paths (0 keeps all), orders them by delay with ties broken by
    // decreasing |alpha|, and appends zero-gain paths if fewer were found.
    inline MatchedPaths match_paths(std::vector<PathParams> paths, std::size_t expected)
    {
        MatchedPaths out;
        if (expected > 0 && paths.size() > expected)
        {
            std::stable_sort(paths.begin(), paths.end(),
                             [](const PathParams &a, const PathParams &b) { return std::abs(a.alpha) > std::abs(b.alpha); });
            out.dropped = paths.size() - expected;
            paths.resize(expected);
        }
        std::stable_sort(paths.begin(), paths.end(), [](const PathParams &a, const PathParams &b) {
            if (a.tau != b.tau)
                return a.tau < b.tau;
            return std::abs(a.alpha) > std::abs(b.alpha);
        });
        while (expected > 0 && paths.size() < expected)
        {
            paths.push_back(PathParams{cplx{0.0, 0.0}, 0.0, 0.0, 0.0});
            ++out.zero_filled;
        }
        out.paths = std::move(paths);
        return out;
    }

    struct ReconstructionConfig
    {
        MusicConfig music{};
        SageConfig sage{};
        std::size_t expected_paths = 0; // path count the models were trained for; 0 disables matching
    };

    struct ReconstructionResult
    {
        std::vector<PathParams> band_n_paths; // estimates after matching
        std::vector<PathPrediction> per_path;
        ChannelTensor static_prediction;
        ChannelTensor dynamic_prediction;
        std::size_t dropped = 0;
        std::size_t zero_filled = 0;
    };

    // Prediction from known band-n paths (bypasses estimation).
    inline ReconstructionResult reconstruct_from_paths(const std::vector<PathParams> &paths, const CrossbandModels &m,
                                                       std::size_t expected_paths = 0)
    {
        ReconstructionResult r;
        auto matched = match_paths(paths, expected_paths);
        r.band_n_paths = std::move(matched.paths);
        r.dropped = matched.dropped;
        r.zero_filled = matched.zero_filled;
        r.static_prediction = ChannelTensor(m.band_np, 1);
        r.dynamic_prediction = ChannelTensor(m.band_np, 1);
        run_stage("predict", [&] {
            for (const auto &p : r.band_n_paths)
            {
                if (p.alpha == cplx{0.0, 0.0})
                    continue;
                r.per_path.push_back(predict_path(m, p));
                r.static_prediction += r.per_path.back().static_tensor;
                r.dynamic_prediction += r.per_path.back().dynamic_tensor;
            }
            return 0;
        });
        return r;
    }

    inline ReconstructionResult reconstruct_crossband(const ChannelTensor &band_n, const CrossbandModels &m,
                                                      const ReconstructionConfig &config)
    {
        if (band_n.grid() != m.band_n)
            throw StageError("input", "tensor grid does not match the band the models were trained on");
        const auto est = run_stage("estimate", [&] {
            return sage_refine(band_n, coarse_estimate(band_n, config.music), config.sage);
        });
        return reconstruct_from_paths(est.paths, m, config.expected_paths);
    }

    // ------------------------------------------------------------------------------------------
    // Full-channel versus per-path error
    // ------------------------------------------------------------------------------------------

    struct PathErrorCheck
    {
        double full_error = 0.0;     // (1/M) ||H - H^||
        double per_path_error = 0.0; // (1/(M L)) sum_l ||P_l - P^_l||
        double ratio = 0.0;          // full / per-path, 0 when both vanish
    };

    // Both channels are re-modulated with the same exact Dopplers before summation.
    inline PathErrorCheck path_error_check(const std::vector<ChannelTensor> &truth_static,
                                           const std::vector<ChannelTensor> &predicted_static,
                                           const std::vector<double> &doppler)
    {
        if (truth_static.empty() || truth_static.size() != predicted_static.size() || truth_static.size() != doppler.size())
            fail_argument("path_error_check: got ", truth_static.size(), " true paths, ", predicted_static.size(),
                          " predicted paths and ", doppler.size(), " Doppler values");
        const auto &grid = truth_static[0].grid();
        const double m = static_cast<double>(grid.size());
        ChannelTensor h(grid), hh(grid);
        double per_path = 0.0;
        for (std::size_t l = 0; l < truth_static.size(); ++l)
        {
            per_path += std::sqrt((truth_static[l] - predicted_static[l]).energy());
            h += apply_mobility(truth_static[l], doppler[l]);
            hh += apply_mobility(predicted_static[l], doppler[l]);
        }
        PathErrorCheck r;
        r.full_error = std::sqrt((h - hh).energy()) / m;
        r.per_path_error = per_path / (m * static_cast<double>(truth_static.size()));
        r.ratio = r.per_path_error > 0.0 ? r.full_error / r.per_path_error : 0.0;
        return r;
    }
}

#endif
