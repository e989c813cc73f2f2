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

#ifndef MBCSI_BASELINES_HPP
#define MBCSI_BASELINES_HPP

#include "mbcsi/sage.hpp"

#include <array>

// Metaheuristic replacements for the SAGE inner search: global-best PSO and (mu/mu_w, lambda)
// CMA-ES. Both maximize the same per-path correlator objective and are elitist.

namespace mbcsi
{
    using Point3 = std::array<double, 3>;
    using Objective3 = std::function<double(const Point3 &)>;

    // Defaults give both optimizers about the same number of objective evaluations per path update
    // as the SAGE grid scans plus golden-section refinement (~600).
    struct OptimizerConfig
    {
        std::size_t population = 20;
        std::size_t iterations = 30;
        double inertia = 0.729;
        double cognitive = 1.494;
        double social = 1.494;
        double velocity_clamp = 0.2; // fraction of the range per dimension
        double sigma = 0.1;          // CMA-ES initial step, in coordinates scaled to [0, 1]
        Point3 lower{0.0, -1.0, -1.0};
        Point3 upper{1.0, 1.0, 1.0};
        std::uint64_t seed = 1;

        static OptimizerConfig pso_defaults()
        {
            return {};
        }

        static OptimizerConfig cmaes_defaults()
        {
            OptimizerConfig c;
            c.population = 12;
            c.iterations = 50;
            return c;
        }

        void validate_bounds() const
        {
            for (std::size_t d = 0; d < 3; ++d)
                if (!(lower[d] < upper[d]) || !std::isfinite(lower[d]) || !std::isfinite(upper[d]))
                    fail_argument("OptimizerConfig: bounds for dimension ", d, " are not well-ordered");
        }

        void validate() const
        {
            validate_bounds();
            if (population < 4)
                fail_argument("OptimizerConfig: population must be >= 4");
            if (iterations < 1)
                fail_argument("OptimizerConfig: iterations must be >= 1");
            if (!std::isfinite(inertia) || !std::isfinite(cognitive) || !std::isfinite(social))
                fail_argument("OptimizerConfig: weights must be finite");
        }
    };

    struct OptimResult
    {
        Point3 x{};
        double value = 0.0;
        std::size_t evaluations = 0;
    };

    namespace detail
    {
        inline Point3 clamp_point(Point3 x, const Point3 &lo, const Point3 &hi)
        {
            for (std::size_t d = 0; d < 3; ++d)
                x[d] = std::clamp(x[d], lo[d], hi[d]);
            return x;
        }

        inline double checked_eval(const Objective3 &f, const Point3 &x)
        {
            const double v = f(x);
            if (!std::isfinite(v))
                throw std::runtime_error(concat("objective returned a non-finite value at (", x[0], ", ", x[1], ", ",
                                                x[2], ")"));
            return v;
        }
    }

    // ------------------------------------------------------------------------------------------
    // Particle swarm
    // ------------------------------------------------------------------------------------------

    class ParticleSwarm
    {
    public:
        struct Particle
        {
            Point3 position{};
            Point3 velocity{};
            Point3 best_position{};
            double best_value = -std::numeric_limits<double>::infinity();
        };

        // Particle 0 starts at `init`, the others uniformly inside the bounds.
        ParticleSwarm(Objective3 objective, const Point3 &init, const OptimizerConfig &config)
            : objective_(std::move(objective)), config_(config), rng_(config.seed)
        {
            config_.validate_bounds();
            if (config_.population < 1)
                fail_argument("ParticleSwarm: population must be >= 1");
            for (std::size_t d = 0; d < 3; ++d)
                vmax_[d] = config_.velocity_clamp * (config_.upper[d] - config_.lower[d]);

            particles_.resize(config_.population);
            for (std::size_t i = 0; i < particles_.size(); ++i)
            {
                auto &p = particles_[i];
                for (std::size_t d = 0; d < 3; ++d)
                {
                    p.position[d] = i == 0 ? init[d] : uniform(rng_, config_.lower[d], config_.upper[d]);
                    p.velocity[d] = uniform(rng_, -vmax_[d], vmax_[d]);
                }
                p.position = detail::clamp_point(p.position, config_.lower, config_.upper);
                p.best_position = p.position;
                p.best_value = evaluate(p.position);
                if (i == 0 || p.best_value > best_.value)
                {
                    best_.x = p.position;
                    best_.value = p.best_value;
                }
            }
        }

        void step()
        {
            for (auto &p : particles_)
            {
                for (std::size_t d = 0; d < 3; ++d)
                {
                    const double r1 = uniform(rng_, 0.0, 1.0), r2 = uniform(rng_, 0.0, 1.0);
                    double v = config_.inertia * p.velocity[d] +
                               config_.cognitive * r1 * (p.best_position[d] - p.position[d]) +
                               config_.social * r2 * (best_.x[d] - p.position[d]);
                    p.velocity[d] = std::clamp(v, -vmax_[d], vmax_[d]);
                    p.position[d] += p.velocity[d];
                }
                p.position = detail::clamp_point(p.position, config_.lower, config_.upper);
                const double v = evaluate(p.position);
                if (v > p.best_value)
                {
                    p.best_value = v;
                    p.best_position = p.position;
                }
                if (v > best_.value)
                {
                    best_.value = v;
                    best_.x = p.position;
                }
            }
        }

        const std::vector<Particle> &particles() const { return particles_; }
        std::vector<Particle> &particles() { return particles_; }

        OptimResult best() const
        {
            OptimResult r = best_;
            r.evaluations = evaluations_;
            return r;
        }

    private:
        double evaluate(const Point3 &x)
        {
            ++evaluations_;
            return detail::checked_eval(objective_, x);
        }

        Objective3 objective_;
        OptimizerConfig config_;
        Rng rng_;
        Point3 vmax_{};
        std::vector<Particle> particles_;
        OptimResult best_{};
        std::size_t evaluations_ = 0;
    };

    inline OptimResult pso_maximize(const Objective3 &objective, const Point3 &init, const OptimizerConfig &config)
    {
        config.validate_bounds();
        for (std::size_t d = 0; d < 3; ++d)
            if (init[d] < config.lower[d] || init[d] > config.upper[d])
                fail_argument("pso_maximize: init outside bounds in dimension ", d);
        ParticleSwarm swarm(objective, init, config);
        for (std::size_t i = 0; i < config.iterations; ++i)
            swarm.step();
        return swarm.best();
    }

    // ------------------------------------------------------------------------------------------
    // CMA-ES, run in coordinates scaled to [0, 1]^3. Samples are clipped into the box.
    // ------------------------------------------------------------------------------------------

    inline OptimResult cmaes_maximize(const Objective3 &objective, const Point3 &init, const OptimizerConfig &config)
    {
        config.validate_bounds();
        if (!(config.sigma > 0.0))
            fail_argument("cmaes_maximize: sigma must be > 0");
        if (config.population < 2)
            fail_argument("cmaes_maximize: population must be >= 2");

        using Vec = Eigen::Vector3d;
        using Mat = Eigen::Matrix3d;
        constexpr int n = 3;
        const Point3 lo = config.lower, hi = config.upper;
        auto to_world = [&](const Vec &u) {
            Point3 x;
            for (int d = 0; d < n; ++d)
                x[static_cast<std::size_t>(d)] = lo[static_cast<std::size_t>(d)] +
                                                 u(d) * (hi[static_cast<std::size_t>(d)] - lo[static_cast<std::size_t>(d)]);
            return x;
        };

        const std::size_t lambda = config.population;
        const std::size_t mu = lambda / 2;
        std::vector<double> w(mu);
        for (std::size_t i = 0; i < mu; ++i)
            w[i] = std::log(static_cast<double>(mu) + 0.5) - std::log(static_cast<double>(i + 1));
        double wsum = 0.0, w2 = 0.0;
        for (double x : w)
            wsum += x;
        for (auto &x : w)
        {
            x /= wsum;
            w2 += x * x;
        }
        const double mueff = 1.0 / w2;
        const double cs = (mueff + 2.0) / (n + mueff + 5.0);
        const double ds = 1.0 + 2.0 * std::max(0.0, std::sqrt((mueff - 1.0) / (n + 1.0)) - 1.0) + cs;
        const double cc = (4.0 + mueff / n) / (n + 4.0 + 2.0 * mueff / n);
        const double c1 = 2.0 / ((n + 1.3) * (n + 1.3) + mueff);
        const double cmu = std::min(1.0 - c1, 2.0 * (mueff - 2.0 + 1.0 / mueff) / ((n + 2.0) * (n + 2.0) + mueff));
        const double chin = std::sqrt(static_cast<double>(n)) * (1.0 - 1.0 / (4.0 * n) + 1.0 / (21.0 * n * n));

        Rng rng(config.seed);
        Vec mean;
        for (int d = 0; d < n; ++d)
        {
            const auto sd = static_cast<std::size_t>(d);
            mean(d) = std::clamp((init[sd] - lo[sd]) / (hi[sd] - lo[sd]), 0.0, 1.0);
        }
        double sigma = config.sigma;
        Mat c = Mat::Identity();
        Vec ps = Vec::Zero(), pc = Vec::Zero();

        OptimResult best;
        best.x = to_world(mean);
        best.value = detail::checked_eval(objective, best.x);
        best.evaluations = 1;

        std::vector<Vec> ys(lambda), us(lambda);
        std::vector<double> values(lambda);
        std::vector<std::size_t> order(lambda);
        for (std::size_t gen = 0; gen < config.iterations; ++gen)
        {
            Eigen::SelfAdjointEigenSolver<Mat> es(c);
            const Mat b = es.eigenvectors();
            const Vec dvec = es.eigenvalues().cwiseMax(1e-300).cwiseSqrt();
            const Mat inv_sqrt = b * dvec.cwiseInverse().asDiagonal() * b.transpose();

            for (std::size_t k = 0; k < lambda; ++k)
            {
                Vec z;
                for (int d = 0; d < n; ++d)
                    z(d) = gaussian(rng);
                Vec u = (mean + sigma * (b * dvec.asDiagonal() * z)).cwiseMax(0.0).cwiseMin(1.0);
                us[k] = u;
                ys[k] = (u - mean) / sigma;
                const Point3 x = to_world(u);
                values[k] = detail::checked_eval(objective, x);
                ++best.evaluations;
                if (values[k] > best.value)
                {
                    best.value = values[k];
                    best.x = x;
                }
            }
            for (std::size_t k = 0; k < lambda; ++k)
                order[k] = k;
            std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t bb) { return values[a] > values[bb]; });

            Vec yw = Vec::Zero();
            for (std::size_t i = 0; i < mu; ++i)
                yw += w[i] * ys[order[i]];
            const Vec old_mean = mean;
            mean = (mean + sigma * yw).cwiseMax(0.0).cwiseMin(1.0);
            const Vec step = (mean - old_mean) / sigma;

            ps = (1.0 - cs) * ps + std::sqrt(cs * (2.0 - cs) * mueff) * (inv_sqrt * step);
            const double gen_factor = 1.0 - std::pow(1.0 - cs, 2.0 * static_cast<double>(gen + 1));
            const bool hsig = ps.norm() / std::sqrt(gen_factor) < (1.4 + 2.0 / (n + 1.0)) * chin;
            pc = (1.0 - cc) * pc + (hsig ? std::sqrt(cc * (2.0 - cc) * mueff) : 0.0) * step;

            Mat rank_mu = Mat::Zero();
            for (std::size_t i = 0; i < mu; ++i)
                rank_mu += w[i] * ys[order[i]] * ys[order[i]].transpose();
            c = (1.0 - c1 - cmu) * c + c1 * (pc * pc.transpose() + (hsig ? 0.0 : cc * (2.0 - cc)) * c) + cmu * rank_mu;
            c = 0.5 * (c + c.transpose());
            sigma *= std::exp((cs / ds) * (ps.norm() / chin - 1.0));
            sigma = std::min(sigma, 1.0);
            if (!(sigma > 1e-300))
                break;
        }
        return best;
    }

    // ------------------------------------------------------------------------------------------
    // Outer loop with a metaheuristic inner search
    // ------------------------------------------------------------------------------------------

    enum class BaselineKind
    {
        pso,
        cmaes
    };

    inline const char *to_string(BaselineKind k)
    {
        return k == BaselineKind::pso ? "pso" : "cmaes";
    }

    // Same E-step loop and closed-form gain as sage_refine, with the (tau, phi, fD) search done by PSO or CMA-ES.
    // The optimizer bounds are the SAGE search ranges; `config.lower/upper` are overwritten.
    inline SageEstimate baseline_refine(const ChannelTensor &tensor, const CoarseEstimate &initial, BaselineKind which,
                                        const OptimizerConfig &config, const SageConfig &sage_config,
                                        std::size_t *evaluations = nullptr)
    {
        config.validate();
        const auto &grid = tensor.grid();
        OptimizerConfig oc = config;
        const double f_range = sage_config.resolved_doppler_range(grid);
        oc.lower = {0.0, -1.0, -f_range};
        oc.upper = {sage_config.resolved_max_delay(grid), 1.0, f_range};
        std::size_t calls = 0, evals = 0;

        auto search = [&](std::span<const cplx> xi, const MeasurementGrid &g, const PathParams &cur, std::size_t) {
            auto objective = [&](const Point3 &x) { return std::norm(correlator_z(x[0], x[1], x[2], xi, g)); };
            const Point3 init = detail::clamp_point({cur.tau, cur.phi, cur.doppler}, oc.lower, oc.upper);
            OptimizerConfig run = oc;
            run.seed = derive_seed(config.seed, calls++);
            const OptimResult r = which == BaselineKind::pso ? pso_maximize(objective, init, run)
                                                              : cmaes_maximize(objective, init, run);
            evals += r.evaluations;
            PathParams next = cur;
            next.tau = r.x[0];
            next.phi = r.x[1];
            next.doppler = r.x[2];
            next.alpha = correlator_z(next.tau, next.phi, next.doppler, xi, g) / static_cast<double>(g.size());
            return next;
        };
        auto est = coordinate_ascent(tensor, initial, sage_config, search);
        if (evaluations)
            *evaluations = evals;
        return est;
    }
}

#endif
