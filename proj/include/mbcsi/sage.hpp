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

#ifndef MBCSI_SAGE_HPP
#define MBCSI_SAGE_HPP

#include "mbcsi/music.hpp"

#include <functional>
#include <ostream>

// SAGE refinement of (alpha, tau, phi, fD) per path.
//
// E-step: xi_l = H - sum_{l' != l} P(theta_l').
// M-step: tau, phi and fD are updated one after another by maximizing |z| along one axis
// (coarse grid scan + golden-section search), then alpha = z / M.
//
// The correlator uses the conjugate of the synthesis steering, so |z| peaks at the true
// parameters and z = alpha * M for a noiseless single path.

namespace mbcsi
{
    // Doppler search half-width: 1.2 x the Doppler at 120 km/h, capped at the packet-rate Nyquist limit.
    inline double default_doppler_search_range(const MeasurementGrid &grid)
    {
        return std::min(1.2 * max_doppler(grid.carrier_frequency, kmh_to_ms(120.0)), grid.doppler_nyquist());
    }

    struct SageConfig
    {
        std::size_t max_iterations = 20;
        double convergence_tol = 1e-4;
        std::size_t delay_points = 256;
        std::size_t phi_points = 128;
        std::size_t doppler_points = 128;
        std::size_t golden_iterations = 30;
        double doppler_search_range = 0.0; // 0: default_doppler_search_range(grid)
        double max_delay = 0.0;            // 0: 1 / df

        double resolved_doppler_range(const MeasurementGrid &grid) const
        {
            return doppler_search_range > 0.0 ? doppler_search_range : default_doppler_search_range(grid);
        }

        double resolved_max_delay(const MeasurementGrid &grid) const
        {
            return max_delay > 0.0 ? max_delay : grid.max_delay();
        }

        double delay_step(const MeasurementGrid &grid) const
        {
            return resolved_max_delay(grid) / static_cast<double>(delay_points);
        }

        double phi_step() const
        {
            return 2.0 / static_cast<double>(phi_points - 1);
        }

        double doppler_step(const MeasurementGrid &grid) const
        {
            return 2.0 * resolved_doppler_range(grid) / static_cast<double>(doppler_points - 1);
        }

        void validate() const
        {
            if (max_iterations < 1)
                fail_argument("SageConfig: max_iterations must be >= 1");
            if (!(convergence_tol > 0.0))
                fail_argument("SageConfig: convergence_tol must be > 0");
            if (delay_points < 2 || phi_points < 2 || doppler_points < 2)
                fail_argument("SageConfig: degenerate search range (need >= 2 grid points per axis)");
            if (doppler_search_range < 0.0 || max_delay < 0.0)
                fail_argument("SageConfig: search ranges must be positive");
        }
    };

    struct SageLogEntry
    {
        std::size_t iteration = 0;
        std::size_t path = 0;
        PathParams params;
    };

    struct SageEstimate
    {
        std::vector<PathParams> paths;
        std::size_t iterations_used = 0;
        double final_residual_energy = 0.0;
        std::vector<double> residual_history; // after every sweep, starting with the initial point
        std::vector<SageLogEntry> log;
    };

    // ------------------------------------------------------------------------------------------
    // Correlator
    // ------------------------------------------------------------------------------------------

    namespace detail
    {
        // conj of the synthesis steering per axis
        inline std::vector<cplx> conj_time(const MeasurementGrid &g, double doppler)
        {
            std::vector<cplx> w(g.num_packets);
            for (std::size_t t = 0; t < w.size(); ++t)
                w[t] = expj(-kTwoPi * doppler * static_cast<double>(t) * g.packet_interval);
            return w;
        }

        inline std::vector<cplx> conj_freq(const MeasurementGrid &g, double tau)
        {
            std::vector<cplx> w(g.num_subcarriers);
            for (std::size_t f = 0; f < w.size(); ++f)
                w[f] = expj(kTwoPi * static_cast<double>(f) * g.subcarrier_spacing * tau);
            return w;
        }

        inline std::vector<cplx> conj_ant(const MeasurementGrid &g, double phi)
        {
            std::vector<cplx> w(g.num_antennas);
            for (std::size_t a = 0; a < w.size(); ++a)
                w[a] = expj(kTwoPi * static_cast<double>(a) * g.antenna_spacing * phi);
            return w;
        }

        // y[f] = sum_{t,a} wt[t] wa[a] xi(t, f, a)
        inline std::vector<cplx> collapse_to_freq(std::span<const cplx> xi, const MeasurementGrid &g,
                                                  const std::vector<cplx> &wt, const std::vector<cplx> &wa)
        {
            std::vector<cplx> y(g.num_subcarriers, cplx{0.0, 0.0});
            std::size_t i = 0;
            for (std::size_t t = 0; t < g.num_packets; ++t)
                for (std::size_t f = 0; f < g.num_subcarriers; ++f)
                {
                    cplx acc{0.0, 0.0};
                    for (std::size_t a = 0; a < g.num_antennas; ++a)
                        acc += wa[a] * xi[i++];
                    y[f] += wt[t] * acc;
                }
            return y;
        }

        inline std::vector<cplx> collapse_to_ant(std::span<const cplx> xi, const MeasurementGrid &g,
                                                 const std::vector<cplx> &wt, const std::vector<cplx> &wf)
        {
            std::vector<cplx> y(g.num_antennas, cplx{0.0, 0.0});
            std::size_t i = 0;
            for (std::size_t t = 0; t < g.num_packets; ++t)
                for (std::size_t f = 0; f < g.num_subcarriers; ++f)
                {
                    const cplx w = wt[t] * wf[f];
                    for (std::size_t a = 0; a < g.num_antennas; ++a)
                        y[a] += w * xi[i++];
                }
            return y;
        }

        inline std::vector<cplx> collapse_to_time(std::span<const cplx> xi, const MeasurementGrid &g,
                                                  const std::vector<cplx> &wf, const std::vector<cplx> &wa)
        {
            std::vector<cplx> y(g.num_packets, cplx{0.0, 0.0});
            std::size_t i = 0;
            for (std::size_t t = 0; t < g.num_packets; ++t)
            {
                cplx acc_t{0.0, 0.0};
                for (std::size_t f = 0; f < g.num_subcarriers; ++f)
                {
                    cplx acc{0.0, 0.0};
                    for (std::size_t a = 0; a < g.num_antennas; ++a)
                        acc += wa[a] * xi[i++];
                    acc_t += wf[f] * acc;
                }
                y[t] = acc_t;
            }
            return y;
        }

        inline cplx dot(const std::vector<cplx> &w, const std::vector<cplx> &y)
        {
            cplx s{0.0, 0.0};
            for (std::size_t i = 0; i < w.size(); ++i)
                s += w[i] * y[i];
            return s;
        }

        // Golden-section search for the maximum of f on [lo, hi].
        inline double golden_maximize(const std::function<double(double)> &f, double lo, double hi,
                                      std::size_t iterations)
        {
            constexpr double inv_phi = 0.6180339887498949;
            double a = lo, b = hi;
            double c = b - inv_phi * (b - a), d = a + inv_phi * (b - a);
            double fc = f(c), fd = f(d);
            for (std::size_t i = 0; i < iterations; ++i)
            {
                if (fc >= fd)
                {
                    b = d;
                    d = c;
                    fd = fc;
                    c = b - inv_phi * (b - a);
                    fc = f(c);
                }
                else
                {
                    a = c;
                    c = d;
                    fc = fd;
                    d = a + inv_phi * (b - a);
                    fd = f(d);
                }
            }
            return fc >= fd ? c : d;
        }

        // Coarse scan over `count` points in [lo, hi] (inclusive when `closed`), then golden-section
        // refinement within one cell of the best point. Returns the better of that and `current`.
        inline double scan_and_refine(const std::function<double(double)> &objective, double lo, double hi,
                                      std::size_t count, bool closed, std::size_t golden_iterations, double current)
        {
            const double step = (hi - lo) / static_cast<double>(closed ? count - 1 : count);
            double best_x = lo, best_v = -1.0;
            for (std::size_t i = 0; i < count; ++i)
            {
                const double x = lo + step * static_cast<double>(i);
                const double v = objective(x);
                if (v > best_v)
                {
                    best_v = v;
                    best_x = x;
                }
            }
            const double a = std::max(lo, best_x - step);
            const double b = std::min(closed ? hi : hi - 1e-15 * std::abs(hi), best_x + step);
            double refined = golden_maximize(objective, a, b, golden_iterations);
            double refined_v = objective(refined);
            if (best_v > refined_v)
            {
                refined = best_x;
                refined_v = best_v;
            }
            if (std::isfinite(current) && current >= lo && current <= hi && objective(current) >= refined_v)
                return current;
            return refined;
        }
    }

    // z = sum_m conj(steering(m; tau, phi, fD)) * xi(m)
    inline cplx correlator_z(double tau, double phi, double doppler, std::span<const cplx> residual,
                             const MeasurementGrid &grid)
    {
        if (residual.size() != grid.size())
            fail_argument("correlator_z: residual size ", residual.size(), " does not match grid size ", grid.size());
        const auto y = detail::collapse_to_time(residual, grid, detail::conj_freq(grid, tau), detail::conj_ant(grid, phi));
        return detail::dot(detail::conj_time(grid, doppler), y);
    }

    inline cplx correlator_z(double tau, double phi, double doppler, const ChannelTensor &residual)
    {
        return correlator_z(tau, phi, doppler, residual.values(), residual.grid());
    }

    // xi_l = H - sum_{l' != l} P(theta_l')
    inline ChannelTensor expectation_step(const ChannelTensor &tensor, const std::vector<PathParams> &estimates,
                                          std::size_t l)
    {
        if (l >= estimates.size())
            throw std::out_of_range(concat("expectation_step: path index ", l, " >= ", estimates.size()));
        ChannelTensor xi = tensor;
        for (std::size_t k = 0; k < estimates.size(); ++k)
            if (k != l)
                accumulate_path(xi.values(), tensor.grid(), estimates[k], -1.0);
        return xi;
    }

    // Sequential 1-D maximization of |z| over tau, phi, fD followed by the closed-form gain.
    inline PathParams maximization_step(std::span<const cplx> residual, const MeasurementGrid &grid,
                                        const PathParams &current, const SageConfig &config)
    {
        config.validate();
        if (!std::isfinite(current.tau) || !std::isfinite(current.phi) || !std::isfinite(current.doppler))
            fail_argument("maximization_step: non-finite current parameters");
        const double max_tau = config.resolved_max_delay(grid);
        const double f_range = config.resolved_doppler_range(grid);
        if (!(max_tau > 0.0) || !(f_range > 0.0))
            fail_argument("maximization_step: degenerate search range");

        PathParams next = current;

        {
            const auto y = detail::collapse_to_freq(residual, grid, detail::conj_time(grid, next.doppler),
                                                    detail::conj_ant(grid, next.phi));
            auto obj = [&](double tau) { return std::norm(detail::dot(detail::conj_freq(grid, tau), y)); };
            next.tau = detail::scan_and_refine(obj, 0.0, max_tau, config.delay_points, false, config.golden_iterations,
                                               current.tau);
        }
        {
            const auto y = detail::collapse_to_ant(residual, grid, detail::conj_time(grid, next.doppler),
                                                   detail::conj_freq(grid, next.tau));
            auto obj = [&](double phi) { return std::norm(detail::dot(detail::conj_ant(grid, phi), y)); };
            next.phi = detail::scan_and_refine(obj, -1.0, 1.0, config.phi_points, true, config.golden_iterations,
                                               current.phi);
        }
        {
            const auto y = detail::collapse_to_time(residual, grid, detail::conj_freq(grid, next.tau),
                                                    detail::conj_ant(grid, next.phi));
            auto obj = [&](double fd) { return std::norm(detail::dot(detail::conj_time(grid, fd), y)); };
            next.doppler = detail::scan_and_refine(obj, -f_range, f_range, config.doppler_points, true,
                                                   config.golden_iterations, current.doppler);
        }
        next.alpha = correlator_z(next.tau, next.phi, next.doppler, residual, grid) / static_cast<double>(grid.size());
        return next;
    }

    inline PathParams maximization_step(const ChannelTensor &residual, const PathParams &current, const SageConfig &config)
    {
        return maximization_step(residual.values(), residual.grid(), current, config);
    }

    inline double residual_energy(const ChannelTensor &tensor, const std::vector<PathParams> &paths)
    {
        ChannelTensor r = tensor;
        for (const auto &p : paths)
            accumulate_path(r.values(), tensor.grid(), p, -1.0);
        return r.energy();
    }

    // Largest parameter change, in units of the search grid steps (alpha: relative to |alpha|).
    inline double normalized_change(const PathParams &a, const PathParams &b, const MeasurementGrid &grid,
                                    const SageConfig &config)
    {
        const double dt = std::abs(a.tau - b.tau) / config.delay_step(grid);
        const double dp = std::abs(a.phi - b.phi) / config.phi_step();
        const double df = std::abs(a.doppler - b.doppler) / config.doppler_step(grid);
        const double da = std::abs(a.alpha - b.alpha) / std::max(std::abs(b.alpha), 1e-300);
        return std::max({dt, dp, df, da});
    }

    // The per-path inner search used by the SAGE outer loop; baselines swap in their own.
    using InnerSearch = std::function<PathParams(std::span<const cplx> residual, const MeasurementGrid &grid,
                                                 const PathParams &current, std::size_t path_index)>;

    // Generic SAGE-style outer loop: E-step per path, delegated inner search, repeat to convergence.
    inline SageEstimate coordinate_ascent(const ChannelTensor &tensor, const CoarseEstimate &initial,
                                          const SageConfig &config, const InnerSearch &search)
    {
        config.validate();
        if (!tensor.all_finite())
            fail_argument("sage_refine: non-finite tensor values");
        if (initial.paths.empty())
            fail_argument("sage_refine: initial estimate has no paths");

        const auto &grid = tensor.grid();
        SageEstimate est;
        for (const auto &p : initial.paths)
            est.paths.push_back(p.with_doppler(0.0));
        std::stable_sort(est.paths.begin(), est.paths.end(),
                         [](const PathParams &a, const PathParams &b) { return std::abs(a.alpha) > std::abs(b.alpha); });

        est.residual_history.push_back(residual_energy(tensor, est.paths));

        std::vector<cplx> xi(grid.size());
        for (std::size_t it = 1; it <= config.max_iterations; ++it)
        {
            double change = 0.0;
            for (std::size_t l = 0; l < est.paths.size(); ++l)
            {
                const PathParams old = est.paths[l];
                std::copy(tensor.values().begin(), tensor.values().end(), xi.begin());
                for (std::size_t k = 0; k < est.paths.size(); ++k)
                    if (k != l)
                        accumulate_path(xi, grid, est.paths[k], -1.0);

                PathParams next = search(xi, grid, old, l);
                est.paths[l] = next;
                est.log.push_back({it, l, next});
                change = std::max(change, normalized_change(next, old, grid, config));
            }
            est.residual_history.push_back(residual_energy(tensor, est.paths));
            est.iterations_used = it;
            if (change < config.convergence_tol)
                break;
        }
        est.final_residual_energy = est.residual_history.back();
        std::stable_sort(est.paths.begin(), est.paths.end(),
                         [](const PathParams &a, const PathParams &b) { return std::abs(a.alpha) > std::abs(b.alpha); });
        return est;
    }

    inline SageEstimate sage_refine(const ChannelTensor &tensor, const CoarseEstimate &initial, const SageConfig &config)
    {
        return coordinate_ascent(tensor, initial, config,
                                 [&](std::span<const cplx> xi, const MeasurementGrid &g, const PathParams &cur, std::size_t) {
                                     return maximization_step(xi, g, cur, config);
                                 });
    }

    // Reconstructed channel sum_l P(theta_l).
    inline ChannelTensor reconstruct(const MeasurementGrid &grid, const std::vector<PathParams> &paths, int band_id = 0)
    {
        ChannelTensor out(grid, band_id);
        for (const auto &p : paths)
            accumulate_path(out.values(), grid, p);
        return out;
    }

    // One JSON object per line: {"iteration":..,"path":..,"tau":..,"phi":..,"doppler":..,"alpha_re":..,"alpha_im":..}
    inline void write_iteration_log(std::ostream &os, const SageEstimate &est)
    {
        os.precision(17);
        for (const auto &e : est.log)
            os << "{\"iteration\":" << e.iteration << ",\"path\":" << e.path << ",\"tau\":" << e.params.tau
               << ",\"phi\":" << e.params.phi << ",\"doppler\":" << e.params.doppler
               << ",\"alpha_re\":" << e.params.alpha.real() << ",\"alpha_im\":" << e.params.alpha.imag() << "}\n";
    }
}

#endif
