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

#ifndef MBCSI_TESTS_GRADCHECK_HPP
#define MBCSI_TESTS_GRADCHECK_HPP

#include "mbcsi/neural.hpp"

// Central finite-difference checks of the hand-written network gradients.

namespace mbcsi::testing
{
    struct GradCheckReport
    {
        std::size_t checked = 0;
        std::size_t failures = 0;
        std::size_t retried = 0; // parameters re-probed with another step
        double worst_relative_error = 0.0;
    };

    inline double relative_error(double a, double b)
    {
        return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-7});
    }

    // `loss(params)` evaluates the scalar loss at a parameter vector, `active(params)` returns the ReLU
    // activation pattern. A mismatch whose probe points straddle a kink is re-probed with smaller steps;
    // one without a kink (rounding on a tiny derivative) with larger steps.
    template <typename Loss, typename Pattern>
    GradCheckReport finite_difference_check(const VectorXd &params, const VectorXd &analytic, Loss loss, Pattern active,
                                            double step = 1e-5, double tolerance = 1e-4)
    {
        GradCheckReport r;
        VectorXd p = params;
        for (Eigen::Index i = 0; i < p.size(); ++i)
        {
            auto probe = [&](double h, bool &kink) {
                p(i) = params(i) + h;
                const double up = loss(p);
                const auto pattern_up = active(p);
                p(i) = params(i) - h;
                const double down = loss(p);
                kink = active(p) != pattern_up;
                p(i) = params(i);
                return relative_error((up - down) / (2.0 * h), analytic(i));
            };
            bool kink = false;
            double e = probe(step, kink);
            if (e > tolerance)
            {
                ++r.retried;
                const double factor = kink ? 0.01 : 10.0;
                double h = step;
                for (int attempt = 0; attempt < 2 && e > tolerance; ++attempt)
                {
                    h *= factor;
                    bool k2 = false;
                    e = std::min(e, probe(h, k2));
                    if (!kink && k2)
                        break;
                }
            }
            r.worst_relative_error = std::max(r.worst_relative_error, e);
            if (e > tolerance)
                ++r.failures;
            ++r.checked;
        }
        return r;
    }

    inline std::vector<bool> relu_pattern(const DenseNet &net, const MatrixXd &x)
    {
        ForwardCache c;
        net.forward(x, c);
        std::vector<bool> out;
        for (std::size_t l = 0; l + 1 < c.pre.size(); ++l)
            for (Eigen::Index k = 0; k < c.pre[l].size(); ++k)
                out.push_back(c.pre[l].data()[k] > 0.0);
        return out;
    }

    // Batched variant for large nets: K parameters of one layer are probed at once by perturbing the
    // cached pre-activations of that layer and continuing the forward pass. `tail(net_output)` maps a
    // (rows x K*B) output to K losses; `single(k)` is the black-box check of parameter k used when the
    // batched probe disagrees with the analytic value.
    template <typename Tail, typename Single>
    void batched_layer_check(const DenseNet &net, const ForwardCache &cache, const VectorXd &analytic, Tail tail,
                             Single single, GradCheckReport &r, double step = 1e-5, double tolerance = 1e-4,
                             Eigen::Index chunk = 256)
    {
        const Eigen::Index batch = cache.inputs[0].cols();
        Eigen::Index offset = 0;
        for (std::size_t l = 0; l < net.num_layers(); ++l)
        {
            const MatrixXd &pre = cache.pre[l];
            const MatrixXd &in = cache.inputs[l];
            const Eigen::Index rows = net.weight(l).rows();
            const Eigen::Index count = net.weight(l).size() + net.bias(l).size();
            for (Eigen::Index first = 0; first < count; first += chunk)
            {
                const Eigen::Index k_count = std::min(chunk, count - first);
                VectorXd loss[2];
                for (int sign = 0; sign < 2; ++sign)
                {
                    const double h = sign == 0 ? step : -step;
                    MatrixXd probe = pre.replicate(1, k_count);
                    for (Eigen::Index k = 0; k < k_count; ++k)
                    {
                        const Eigen::Index q = first + k;
                        auto block = probe.middleCols(k * batch, batch);
                        if (q < net.weight(l).size())
                            block.row(q % rows) += h * in.row(q / rows);
                        else
                            block.row(q - net.weight(l).size()).array() += h;
                    }
                    loss[sign] = tail(net.forward_from(l, probe));
                }
                for (Eigen::Index k = 0; k < k_count; ++k)
                {
                    const auto flat = static_cast<std::size_t>(offset + first + k);
                    double e = relative_error((loss[0](k) - loss[1](k)) / (2.0 * step), analytic(static_cast<Eigen::Index>(flat)));
                    if (e > tolerance)
                    {
                        ++r.retried;
                        e = single(flat);
                    }
                    r.worst_relative_error = std::max(r.worst_relative_error, e);
                    if (e > tolerance)
                        ++r.failures;
                    ++r.checked;
                }
            }
            offset += count;
        }
    }

    inline VectorXd group_sums(const Eigen::ArrayXXd &values, Eigen::Index batch)
    {
        const Eigen::Index groups = values.cols() / batch;
        VectorXd out(groups);
        for (Eigen::Index g = 0; g < groups; ++g)
            out(g) = values.middleCols(g * batch, batch).sum();
        return out;
    }

    // Loss sum(U .* net(X)) of a randomly initialized net. `batched` selects the layer-batched probe.
    inline GradCheckReport check_dense_net(const std::vector<std::size_t> &sizes, std::uint64_t seed,
                                           Eigen::Index batch = 2, bool batched = false)
    {
        Rng rng(seed);
        DenseNet net = DenseNet::random(sizes, rng);
        for (std::size_t l = 0; l < net.num_layers(); ++l)
            for (Eigen::Index k = 0; k < net.bias(l).size(); ++k)
                net.mutable_bias(l)(k) = 0.1 * gaussian(rng);
        const MatrixXd x = standard_normal(static_cast<Eigen::Index>(net.input_size()), batch, rng);
        const MatrixXd u = standard_normal(static_cast<Eigen::Index>(net.output_size()), batch, rng);
        ForwardCache cache;
        net.forward(x, cache);
        const VectorXd analytic = net.backward(cache, u).flat();
        DenseNet probe = net;
        auto loss = [&](const VectorXd &p) {
            probe.set_parameters(p);
            return (u.array() * probe.forward(x).array()).sum();
        };
        auto pattern = [&](const VectorXd &p) {
            probe.set_parameters(p);
            return relu_pattern(probe, x);
        };
        if (!batched)
            return finite_difference_check(net.parameters(), analytic, loss, pattern);

        GradCheckReport r;
        const VectorXd params = net.parameters();
        auto single = [&](std::size_t k) {
            VectorXd a(1);
            a(0) = analytic(static_cast<Eigen::Index>(k));
            VectorXd p0 = params;
            return finite_difference_check(
                       VectorXd::Constant(1, params(static_cast<Eigen::Index>(k))), a,
                       [&](const VectorXd &v) {
                           p0(static_cast<Eigen::Index>(k)) = v(0);
                           return loss(p0);
                       },
                       [&](const VectorXd &v) {
                           p0(static_cast<Eigen::Index>(k)) = v(0);
                           return pattern(p0);
                       })
                .worst_relative_error;
        };
        batched_layer_check(
            net, cache, analytic,
            [&](const MatrixXd &out) -> VectorXd { return group_sums(out.array() * u.replicate(1, out.cols() / batch).array(), batch); },
            single, r);
        return r;
    }

    // Full VAE loss (reconstruction + weighted KL) with a fixed reparameterization sample.
    inline GradCheckReport check_vae(std::size_t input, std::size_t output, std::size_t latent,
                                     const std::vector<std::size_t> &hidden, std::uint64_t seed, Eigen::Index batch = 2,
                                     double kl_weight = 0.5, bool batched = false)
    {
        Rng rng(seed);
        VaeNet net = VaeNet::random(input, output, latent, hidden, rng);
        const MatrixXd x = standard_normal(static_cast<Eigen::Index>(input), batch, rng);
        const MatrixXd t = standard_normal(static_cast<Eigen::Index>(output), batch, rng);
        const MatrixXd eps = standard_normal(static_cast<Eigen::Index>(latent), batch, rng);
        const auto d = static_cast<Eigen::Index>(latent);
        VectorXd analytic;
        net.loss(x, t, eps, kl_weight, &analytic);
        VaeNet probe = net;

        auto sample = [&](const MatrixXd &h, const MatrixXd &e) {
            return MatrixXd(h.topRows(d) + ((0.5 * h.bottomRows(d).array()).exp() * e.array()).matrix());
        };
        auto loss = [&](const VectorXd &p) {
            probe.set_parameters(p);
            return probe.loss(x, t, eps, kl_weight).total;
        };
        auto pattern = [&](const VectorXd &p) {
            probe.set_parameters(p);
            auto pat = relu_pattern(probe.encoder(), x);
            const auto dec = relu_pattern(probe.decoder(), sample(probe.encoder().forward(x), eps));
            pat.insert(pat.end(), dec.begin(), dec.end());
            return pat;
        };
        if (!batched)
            return finite_difference_check(net.parameters(), analytic, loss, pattern);

        // per-column terms of the loss, summed per group of `batch` columns
        const double n_out = static_cast<double>(output) * static_cast<double>(batch);
        auto kl_of = [&](const MatrixXd &h) -> VectorXd {
            const auto mu = h.topRows(d).array();
            const auto lv = h.bottomRows(d).array();
            return group_sums((-0.5 * (1.0 + lv - mu.square() - lv.exp())).eval(), batch) / static_cast<double>(batch);
        };
        auto recon_of = [&](const MatrixXd &y) -> VectorXd {
            return group_sums((y - t.replicate(1, y.cols() / batch)).array().square().eval(), batch) / n_out;
        };

        GradCheckReport r;
        const VectorXd params = net.parameters();
        auto single = [&](std::size_t k) {
            VectorXd a(1);
            a(0) = analytic(static_cast<Eigen::Index>(k));
            VectorXd p0 = params;
            return finite_difference_check(
                       VectorXd::Constant(1, params(static_cast<Eigen::Index>(k))), a,
                       [&](const VectorXd &v) {
                           p0(static_cast<Eigen::Index>(k)) = v(0);
                           return loss(p0);
                       },
                       [&](const VectorXd &v) {
                           p0(static_cast<Eigen::Index>(k)) = v(0);
                           return pattern(p0);
                       })
                .worst_relative_error;
        };

        ForwardCache enc_cache, dec_cache;
        const MatrixXd h = net.encoder().forward(x, enc_cache);
        const MatrixXd z = sample(h, eps);
        net.decoder().forward(z, dec_cache);
        const auto n_enc = static_cast<Eigen::Index>(net.encoder().parameter_count());
        const double kl_fixed = kl_of(h)(0);

        batched_layer_check(
            net.encoder(), enc_cache, analytic.head(n_enc),
            [&](const MatrixXd &hh) {
                const MatrixXd y = net.decoder().forward(sample(hh, eps.replicate(1, hh.cols() / batch)));
                return VectorXd(recon_of(y) + kl_weight * kl_of(hh));
            },
            single, r);
        auto single_dec = [&](std::size_t k) { return single(k + static_cast<std::size_t>(n_enc)); };
        batched_layer_check(
            net.decoder(), dec_cache, analytic.tail(analytic.size() - n_enc),
            [&](const MatrixXd &y) { return VectorXd(recon_of(y).array() + kl_weight * kl_fixed); }, single_dec, r);
        return r;
    }
}

#endif
