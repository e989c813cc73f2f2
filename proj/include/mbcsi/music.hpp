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

#ifndef MBCSI_MUSIC_HPP
#define MBCSI_MUSIC_HPP

#include "mbcsi/chanmodel.hpp"

#include <Eigen/Dense>

#include <optional>

// Weighted MUSIC over a joint (delay, sine-angle) grid, used as the coarse initializer for SAGE.
// Snapshots are sliding (subcarrier x antenna) windows taken from every packet.

namespace mbcsi
{
    struct MusicConfig
    {
        std::size_t window_subcarriers = 32;
        std::size_t window_antennas = 2;
        double delay_step = 0.0;                      // 0: 1 / (4 F df)
        double phi_step = 2.0 / 64.0;
        std::optional<std::size_t> model_order_override;
        double eigenvalue_gap_threshold = 10.0;
        std::size_t exclusion_radius = 2;             // peak picking, in grid cells

        double resolved_delay_step(const MeasurementGrid &grid) const
        {
            return delay_step > 0.0 ? delay_step
                                    : 1.0 / (4.0 * static_cast<double>(grid.num_subcarriers) * grid.subcarrier_spacing);
        }

        void validate(const MeasurementGrid &grid) const
        {
            if (window_subcarriers < 2 || window_subcarriers > grid.num_subcarriers)
                fail_argument("MusicConfig: subcarrier window ", window_subcarriers, " must be in [2, ",
                              grid.num_subcarriers, "]");
            if (window_antennas < 2 || window_antennas > grid.num_antennas)
                fail_argument("MusicConfig: antenna window ", window_antennas, " must be in [2, ", grid.num_antennas,
                              "]");
            if (delay_step < 0.0 || !(phi_step > 0.0))
                fail_argument("MusicConfig: grid resolutions must be > 0");
            if (!(eigenvalue_gap_threshold > 1.0))
                fail_argument("MusicConfig: eigenvalue gap threshold must be > 1");
        }
    };

    struct MusicSpectrum
    {
        std::vector<double> delays;
        std::vector<double> phis;
        std::vector<double> values; // row-major, delays x phis

        double at(std::size_t i_tau, std::size_t i_phi) const { return values[i_tau * phis.size() + i_phi]; }
    };

    struct CoarseEstimate
    {
        std::vector<StaticPathParams> paths;
        MusicSpectrum spectrum;
        std::size_t estimated_order = 0;
        bool order_from_override = false;
    };

    // Average of x x^H over all window snapshots. Hermitian PSD, size (Wf*Wa)^2, element order (i, k) -> i*Wa + k.
    inline Eigen::MatrixXcd smoothed_covariance(const ChannelTensor &tensor, const MusicConfig &config)
    {
        const auto &g = tensor.grid();
        config.validate(g);
        const std::size_t wf = config.window_subcarriers, wa = config.window_antennas;
        const std::size_t nf = g.num_subcarriers - wf + 1, na = g.num_antennas - wa + 1;
        const std::size_t n = wf * wa;
        const std::size_t k = g.num_packets * nf * na;

        Eigen::MatrixXcd snapshots(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(k));
        Eigen::Index col = 0;
        for (std::size_t t = 0; t < g.num_packets; ++t)
            for (std::size_t f0 = 0; f0 < nf; ++f0)
                for (std::size_t a0 = 0; a0 < na; ++a0, ++col)
                    for (std::size_t i = 0; i < wf; ++i)
                        for (std::size_t j = 0; j < wa; ++j)
                            snapshots(static_cast<Eigen::Index>(i * wa + j), col) = tensor(t, f0 + i, a0 + j);

        Eigen::MatrixXcd r = snapshots * snapshots.adjoint();
        r /= static_cast<double>(k);
        // exact Hermitian symmetry
        Eigen::MatrixXcd rh = 0.5 * (r + r.adjoint());
        return rh;
    }

    // Model order from eigenvalues sorted in descending order: the position of the last ratio
    // lambda_i / lambda_{i+1} above `threshold`, or 1 when there is no such gap. Eigenvalues are
    // floored at 1e-10 * lambda_max so numerical noise in the tail does not create gaps.
    inline std::size_t estimate_order(std::span<const double> eigenvalues, double threshold,
                                      std::optional<std::size_t> override_order = std::nullopt)
    {
        if (eigenvalues.empty())
            fail_argument("estimate_order: empty eigenvalue list");
        if (override_order)
            return *override_order;
        const double top = std::max(eigenvalues.front(), 0.0);
        const double floor = std::max(top * 1e-10, std::numeric_limits<double>::min());
        std::size_t order = 1;
        for (std::size_t i = 0; i + 1 < eigenvalues.size(); ++i)
        {
            const double a = std::max(eigenvalues[i], floor);
            const double b = std::max(eigenvalues[i + 1], floor);
            if (a / b > threshold)
                order = i + 1;
        }
        return order;
    }

    namespace detail
    {
        struct EigenSplit
        {
            std::vector<double> eigenvalues; // descending
            Eigen::MatrixXcd vectors;        // columns in the same order
        };

        inline EigenSplit sorted_eigen(const Eigen::MatrixXcd &r)
        {
            Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(r);
            if (es.info() != Eigen::Success)
                throw std::runtime_error("music: eigen-decomposition failed");
            const Eigen::Index n = r.rows();
            EigenSplit out;
            out.vectors.resize(n, n);
            for (Eigen::Index i = 0; i < n; ++i)
            {
                out.eigenvalues.push_back(std::max(es.eigenvalues()(n - 1 - i), 0.0));
                out.vectors.col(i) = es.eigenvectors().col(n - 1 - i);
            }
            return out;
        }

        inline std::vector<double> linear_axis(double lo, double step, std::size_t count)
        {
            std::vector<double> v(count);
            for (std::size_t i = 0; i < count; ++i)
                v[i] = lo + step * static_cast<double>(i);
            return v;
        }
    }

    // Pseudo-spectrum 1 / (a^H E_n W E_n^H a) with W = diag(1 / lambda_i) over the noise subspace.
    // `signal_order` is the assumed number of paths; the remaining eigenvectors span the noise subspace.
    inline MusicSpectrum music_spectrum_with_order(const Eigen::MatrixXcd &covariance, const std::vector<double> &eigvals,
                                                   const Eigen::MatrixXcd &eigvecs, std::size_t signal_order,
                                                   const MeasurementGrid &grid, const MusicConfig &config)
    {
        config.validate(grid);
        const std::size_t wf = config.window_subcarriers, wa = config.window_antennas;
        const std::size_t n = wf * wa;
        if (static_cast<std::size_t>(covariance.rows()) != n)
            fail_argument("music_spectrum: covariance size does not match the smoothing window");
        if (signal_order >= n)
            fail_argument("music_spectrum: empty noise subspace (", signal_order, " paths for window size ", n,
                          "); use a larger smoothing window or fewer paths");

        const std::size_t k = n - signal_order;
        const double floor = std::max(eigvals.front() * 1e-12, std::numeric_limits<double>::min());
        Eigen::MatrixXcd g(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(k));
        for (std::size_t j = 0; j < k; ++j)
        {
            const double lam = std::max(eigvals[signal_order + j], floor);
            g.col(static_cast<Eigen::Index>(j)) = eigvecs.col(static_cast<Eigen::Index>(signal_order + j)) / std::sqrt(lam);
        }

        MusicSpectrum spec;
        const double dtau = config.resolved_delay_step(grid);
        const auto n_tau = static_cast<std::size_t>(std::floor(grid.max_delay() / dtau + 1e-9));
        const auto n_phi = static_cast<std::size_t>(std::floor(2.0 / config.phi_step + 1e-9)) + 1;
        spec.delays = detail::linear_axis(0.0, dtau, n_tau);
        spec.phis = detail::linear_axis(-1.0, config.phi_step, n_phi);
        spec.values.assign(n_tau * n_phi, 0.0);

        // conj steering over the subcarrier window, rows = delays
        Eigen::MatrixXcd af_conj(static_cast<Eigen::Index>(n_tau), static_cast<Eigen::Index>(wf));
        for (std::size_t it = 0; it < n_tau; ++it)
            for (std::size_t i = 0; i < wf; ++i)
                af_conj(static_cast<Eigen::Index>(it), static_cast<Eigen::Index>(i)) =
                    expj(kTwoPi * static_cast<double>(i) * grid.subcarrier_spacing * spec.delays[it]);

        std::vector<Eigen::MatrixXcd> b(wa);
        for (std::size_t ka = 0; ka < wa; ++ka)
        {
            Eigen::MatrixXcd gk(static_cast<Eigen::Index>(wf), static_cast<Eigen::Index>(k));
            for (std::size_t i = 0; i < wf; ++i)
                gk.row(static_cast<Eigen::Index>(i)) = g.row(static_cast<Eigen::Index>(i * wa + ka));
            b[ka] = af_conj * gk; // n_tau x k
        }

        Eigen::MatrixXcd c(static_cast<Eigen::Index>(n_tau), static_cast<Eigen::Index>(k));
        for (std::size_t ip = 0; ip < n_phi; ++ip)
        {
            c.setZero();
            for (std::size_t ka = 0; ka < wa; ++ka)
                c += expj(kTwoPi * static_cast<double>(ka) * grid.antenna_spacing * spec.phis[ip]) * b[ka];
            const Eigen::VectorXd denom = c.rowwise().squaredNorm();
            for (std::size_t it = 0; it < n_tau; ++it)
                spec.values[it * n_phi + ip] = 1.0 / std::max(denom(static_cast<Eigen::Index>(it)), 1e-300);
        }
        return spec;
    }

    inline MusicSpectrum music_spectrum(const Eigen::MatrixXcd &covariance, const MeasurementGrid &grid,
                                        const MusicConfig &config, std::size_t *order_used = nullptr)
    {
        const auto es = detail::sorted_eigen(covariance);
        const std::size_t order =
            estimate_order(es.eigenvalues, config.eigenvalue_gap_threshold, config.model_order_override);
        if (order_used)
            *order_used = order;
        return music_spectrum_with_order(covariance, es.eigenvalues, es.vectors, order, grid, config);
    }

    struct SpectrumPeak
    {
        std::size_t i_tau = 0;
        std::size_t i_phi = 0;
        double value = 0.0;
    };

    // Local maxima (8-neighbourhood), strongest first, with a Chebyshev exclusion radius between accepted peaks.
    inline std::vector<SpectrumPeak> pick_peaks(const MusicSpectrum &spec, std::size_t count, std::size_t exclusion_radius)
    {
        const std::size_t nt = spec.delays.size(), np = spec.phis.size();
        std::vector<SpectrumPeak> candidates;
        for (std::size_t it = 0; it < nt; ++it)
            for (std::size_t ip = 0; ip < np; ++ip)
            {
                const double v = spec.at(it, ip);
                bool is_max = true;
                for (int dt = -1; dt <= 1 && is_max; ++dt)
                    for (int dp = -1; dp <= 1; ++dp)
                    {
                        if (dt == 0 && dp == 0)
                            continue;
                        const long jt = static_cast<long>(it) + dt, jp = static_cast<long>(ip) + dp;
                        if (jt < 0 || jp < 0 || jt >= static_cast<long>(nt) || jp >= static_cast<long>(np))
                            continue;
                        if (spec.at(static_cast<std::size_t>(jt), static_cast<std::size_t>(jp)) > v)
                        {
                            is_max = false;
                            break;
                        }
                    }
                if (is_max)
                    candidates.push_back({it, ip, v});
            }
        std::stable_sort(candidates.begin(), candidates.end(),
                         [](const SpectrumPeak &a, const SpectrumPeak &b) { return a.value > b.value; });

        std::vector<SpectrumPeak> out;
        for (const auto &c : candidates)
        {
            if (out.size() >= count)
                break;
            const bool clear = std::all_of(out.begin(), out.end(), [&](const SpectrumPeak &p) {
                const auto dt = c.i_tau > p.i_tau ? c.i_tau - p.i_tau : p.i_tau - c.i_tau;
                const auto dp = c.i_phi > p.i_phi ? c.i_phi - p.i_phi : p.i_phi - c.i_phi;
                return std::max(dt, dp) > exclusion_radius;
            });
            if (clear)
                out.push_back(c);
        }
        return out;
    }

    // Least-squares gains of the static paths (Doppler = 0) over the whole tensor.
    inline std::vector<cplx> least_squares_gains(const ChannelTensor &tensor, const std::vector<StaticPathParams> &paths)
    {
        const auto &g = tensor.grid();
        const auto m = static_cast<Eigen::Index>(g.size());
        const auto l = static_cast<Eigen::Index>(paths.size());
        if (l == 0)
            return {};
        Eigen::MatrixXcd s = Eigen::MatrixXcd::Zero(m, l);
        for (Eigen::Index j = 0; j < l; ++j)
        {
            std::vector<cplx> col(g.size(), cplx{0.0, 0.0});
            const auto &p = paths[static_cast<std::size_t>(j)];
            accumulate_path(col, g, PathParams{cplx{1.0, 0.0}, p.tau, p.phi, 0.0});
            for (Eigen::Index i = 0; i < m; ++i)
                s(i, j) = col[static_cast<std::size_t>(i)];
        }
        Eigen::VectorXcd h(m);
        for (Eigen::Index i = 0; i < m; ++i)
            h(i) = tensor[static_cast<std::size_t>(i)];
        // minimum-norm solution, so aliased or coincident steering columns share their gain
        Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXcd> cod;
        cod.setThreshold(1e-9);
        cod.compute(s);
        const Eigen::VectorXcd a = cod.solve(h);
        std::vector<cplx> out(static_cast<std::size_t>(l));
        for (Eigen::Index j = 0; j < l; ++j)
            out[static_cast<std::size_t>(j)] = a(j);
        return out;
    }

    inline CoarseEstimate coarse_estimate(const ChannelTensor &tensor, const MusicConfig &config)
    {
        if (!tensor.all_finite())
            fail_argument("coarse_estimate: non-finite tensor values");
        const auto r = smoothed_covariance(tensor, config);
        const auto es = detail::sorted_eigen(r);

        CoarseEstimate out;
        out.order_from_override = config.model_order_override.has_value();
        const std::size_t order = estimate_order(es.eigenvalues, config.eigenvalue_gap_threshold, config.model_order_override);
        out.spectrum = music_spectrum_with_order(r, es.eigenvalues, es.vectors, order, tensor.grid(), config);

        const auto peaks = pick_peaks(out.spectrum, order, config.exclusion_radius);
        for (const auto &p : peaks)
            out.paths.push_back({cplx{1.0, 0.0}, out.spectrum.delays[p.i_tau], out.spectrum.phis[p.i_phi]});
        const auto gains = least_squares_gains(tensor, out.paths);
        for (std::size_t l = 0; l < out.paths.size(); ++l)
            out.paths[l].alpha = gains[l];
        out.estimated_order = out.paths.size();
        return out;
    }
}

#endif
