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

#ifndef MBCSI_NEURAL_HPP
#define MBCSI_NEURAL_HPP

#include "mbcsi/chanmodel.hpp"

#include <Eigen/Dense>

#include <atomic>
#include <cstring>
#include <fstream>
#include <numeric>
#include <ostream>

#include "json.hpp"

// Small fully connected networks with hand-written gradients: a plain MLP (ReLU hidden layers,
// linear output) and a VAE built from two of them. Batches are matrices with one sample per column.

namespace mbcsi
{
    using Eigen::MatrixXd;
    using Eigen::VectorXd;

    namespace detail
    {
        inline std::uint64_t next_param_version()
        {
            static std::atomic<std::uint64_t> counter{1};
            return counter.fetch_add(1, std::memory_order_relaxed);
        }
    }

    // Activations of one forward pass, tagged with the parameter version they were computed with.
    struct ForwardCache
    {
        std::uint64_t version = 0;
        std::vector<MatrixXd> inputs; // input of every layer; inputs[0] is the network input
        std::vector<MatrixXd> pre;    // pre-activations of every layer
    };

    struct DenseGradients
    {
        std::vector<MatrixXd> weights;
        std::vector<VectorXd> biases;

        // Same layout as DenseNet::parameters().
        VectorXd flat() const
        {
            std::size_t n = 0;
            for (std::size_t l = 0; l < weights.size(); ++l)
                n += static_cast<std::size_t>(weights[l].size() + biases[l].size());
            VectorXd out(static_cast<Eigen::Index>(n));
            Eigen::Index k = 0;
            for (std::size_t l = 0; l < weights.size(); ++l)
            {
                out.segment(k, weights[l].size()) = weights[l].reshaped();
                k += weights[l].size();
                out.segment(k, biases[l].size()) = biases[l];
                k += biases[l].size();
            }
            return out;
        }
    };

    class DenseNet
    {
    public:
        DenseNet() = default;

        // All parameters zero.
        explicit DenseNet(std::vector<std::size_t> sizes) : sizes_(std::move(sizes))
        {
            if (sizes_.size() < 2)
                fail_argument("DenseNet: need at least input and output sizes");
            for (auto s : sizes_)
                if (s == 0)
                    fail_argument("DenseNet: layer sizes must be >= 1");
            for (std::size_t l = 0; l + 1 < sizes_.size(); ++l)
            {
                weights_.push_back(MatrixXd::Zero(static_cast<Eigen::Index>(sizes_[l + 1]),
                                                  static_cast<Eigen::Index>(sizes_[l])));
                biases_.push_back(VectorXd::Zero(static_cast<Eigen::Index>(sizes_[l + 1])));
            }
            version_ = detail::next_param_version();
        }

        // He-normal weights, zero biases.
        static DenseNet random(std::vector<std::size_t> sizes, Rng &rng)
        {
            DenseNet net(std::move(sizes));
            for (std::size_t l = 0; l < net.weights_.size(); ++l)
            {
                const double s = std::sqrt(2.0 / static_cast<double>(net.sizes_[l]));
                for (Eigen::Index i = 0; i < net.weights_[l].size(); ++i)
                    net.weights_[l].data()[i] = s * gaussian(rng);
            }
            net.touch();
            return net;
        }

        const std::vector<std::size_t> &sizes() const { return sizes_; }
        std::size_t num_layers() const { return weights_.size(); }
        std::size_t input_size() const { return sizes_.front(); }
        std::size_t output_size() const { return sizes_.back(); }
        std::uint64_t version() const { return version_; }

        const MatrixXd &weight(std::size_t l) const { return weights_.at(l); }
        const VectorXd &bias(std::size_t l) const { return biases_.at(l); }
        MatrixXd &mutable_weight(std::size_t l)
        {
            touch();
            return weights_.at(l);
        }
        VectorXd &mutable_bias(std::size_t l)
        {
            touch();
            return biases_.at(l);
        }

        std::size_t parameter_count() const
        {
            std::size_t n = 0;
            for (std::size_t l = 0; l < weights_.size(); ++l)
                n += static_cast<std::size_t>(weights_[l].size() + biases_[l].size());
            return n;
        }

        // Per layer: weights (column-major), then biases.
        VectorXd parameters() const
        {
            VectorXd out(static_cast<Eigen::Index>(parameter_count()));
            Eigen::Index k = 0;
            for (std::size_t l = 0; l < weights_.size(); ++l)
            {
                out.segment(k, weights_[l].size()) = weights_[l].reshaped();
                k += weights_[l].size();
                out.segment(k, biases_[l].size()) = biases_[l];
                k += biases_[l].size();
            }
            return out;
        }

        void set_parameters(const VectorXd &p)
        {
            if (static_cast<std::size_t>(p.size()) != parameter_count())
                fail_argument("DenseNet::set_parameters: got ", p.size(), " values for ", parameter_count(),
                              " parameters");
            Eigen::Index k = 0;
            for (std::size_t l = 0; l < weights_.size(); ++l)
            {
                weights_[l].reshaped() = p.segment(k, weights_[l].size());
                k += weights_[l].size();
                biases_[l] = p.segment(k, biases_[l].size());
                k += biases_[l].size();
            }
            touch();
        }

        // Single entry of the flat parameter vector.
        double parameter(std::size_t k) const
        {
            const auto [l, in_bias, i] = locate(k);
            return in_bias ? biases_[l](i) : weights_[l].data()[i];
        }

        void set_parameter(std::size_t k, double v)
        {
            const auto [l, in_bias, i] = locate(k);
            (in_bias ? biases_[l](i) : weights_[l].data()[i]) = v;
            touch();
        }

        bool all_finite() const
        {
            for (std::size_t l = 0; l < weights_.size(); ++l)
                if (!weights_[l].allFinite() || !biases_[l].allFinite())
                    return false;
            return true;
        }

        MatrixXd forward(const MatrixXd &x) const
        {
            check_input(x.rows());
            MatrixXd a = x;
            for (std::size_t l = 0; l < weights_.size(); ++l)
            {
                MatrixXd z = (weights_[l] * a).colwise() + biases_[l];
                a = l + 1 < weights_.size() ? MatrixXd(z.cwiseMax(0.0)) : z;
            }
            return a;
        }

        VectorXd forward(const VectorXd &x) const
        {
            return forward(MatrixXd(x)).col(0);
        }

        // Continues a forward pass from the pre-activations of layer l.
        MatrixXd forward_from(std::size_t l, const MatrixXd &pre) const
        {
            if (l >= weights_.size() || pre.rows() != weights_[l].rows())
                fail_argument("DenseNet::forward_from: bad layer ", l, " or row count ", pre.rows());
            MatrixXd z = pre;
            for (std::size_t k = l + 1; k < weights_.size(); ++k)
                z = (weights_[k] * z.cwiseMax(0.0)).colwise() + biases_[k];
            return z;
        }

        MatrixXd forward(const MatrixXd &x, ForwardCache &cache) const
        {
            check_input(x.rows());
            cache.version = version_;
            cache.inputs.assign(1, x);
            cache.pre.clear();
            for (std::size_t l = 0; l < weights_.size(); ++l)
            {
                cache.pre.push_back((weights_[l] * cache.inputs.back()).colwise() + biases_[l]);
                if (l + 1 < weights_.size())
                    cache.inputs.push_back(cache.pre.back().cwiseMax(0.0));
            }
            return cache.pre.back();
        }

        // Gradients of sum(upstream .* output) for the cached forward pass.
        DenseGradients backward(const ForwardCache &cache, const MatrixXd &upstream, MatrixXd *input_gradient = nullptr) const
        {
            if (cache.version != version_ || cache.pre.size() != weights_.size())
                throw std::logic_error("DenseNet::backward: stale forward cache (parameters changed since forward)");
            if (upstream.rows() != static_cast<Eigen::Index>(output_size()) || upstream.cols() != cache.pre.back().cols())
                fail_argument("DenseNet::backward: upstream gradient has shape ", upstream.rows(), "x", upstream.cols(),
                              ", expected ", output_size(), "x", cache.pre.back().cols());
            DenseGradients g;
            g.weights.resize(weights_.size());
            g.biases.resize(weights_.size());
            MatrixXd delta = upstream;
            for (std::size_t l = weights_.size(); l-- > 0;)
            {
                if (l + 1 < weights_.size())
                    delta = delta.cwiseProduct((cache.pre[l].array() > 0.0).cast<double>().matrix());
                g.weights[l] = delta * cache.inputs[l].transpose();
                g.biases[l] = delta.rowwise().sum();
                if (l > 0 || input_gradient)
                    delta = weights_[l].transpose() * delta;
            }
            if (input_gradient)
                *input_gradient = delta;
            return g;
        }

        void touch()
        {
            version_ = detail::next_param_version();
        }

    private:
        struct Slot
        {
            std::size_t layer;
            bool in_bias;
            Eigen::Index index;
        };

        Slot locate(std::size_t k) const
        {
            for (std::size_t l = 0; l < weights_.size(); ++l)
            {
                const auto nw = static_cast<std::size_t>(weights_[l].size());
                if (k < nw)
                    return {l, false, static_cast<Eigen::Index>(k)};
                k -= nw;
                const auto nb = static_cast<std::size_t>(biases_[l].size());
                if (k < nb)
                    return {l, true, static_cast<Eigen::Index>(k)};
                k -= nb;
            }
            throw std::out_of_range("DenseNet: parameter index out of range");
        }

        void check_input(Eigen::Index rows) const
        {
            if (sizes_.empty())
                fail_argument("DenseNet: network has no layers");
            if (static_cast<std::size_t>(rows) != input_size())
                fail_argument("DenseNet: input has ", rows, " rows, expected ", input_size());
        }

        std::vector<std::size_t> sizes_;
        std::vector<MatrixXd> weights_;
        std::vector<VectorXd> biases_;
        std::uint64_t version_ = 0;
    };

    // ------------------------------------------------------------------------------------------
    // Adam
    // ------------------------------------------------------------------------------------------

    struct TrainConfig
    {
        double learning_rate = 0.01;
        double beta1 = 0.9;
        double beta2 = 0.999;
        double epsilon = 1e-8;
        std::size_t epochs = 100;
        std::size_t batch_size = 64;
        double kl_weight = 1e-3;
        double final_lr_fraction = 0.01; // cosine decay of the step size down to this fraction
        double validation_fraction = 0.1;
        std::uint64_t seed = 1;

        void validate() const
        {
            if (!(learning_rate > 0.0))
                fail_argument("TrainConfig: learning rate must be > 0");
            if (epochs < 1)
                fail_argument("TrainConfig: epochs must be >= 1");
            if (batch_size < 1)
                fail_argument("TrainConfig: batch size must be >= 1");
            if (kl_weight < 0.0)
                fail_argument("TrainConfig: KL weight must be >= 0");
            if (validation_fraction < 0.0 || validation_fraction >= 1.0)
                fail_argument("TrainConfig: validation fraction must be in [0, 1)");
            if (!(final_lr_fraction > 0.0) || final_lr_fraction > 1.0)
                fail_argument("TrainConfig: final learning-rate fraction must be in (0, 1]");
        }

        double learning_rate_at(std::size_t epoch) const
        {
            if (epochs < 2)
                return learning_rate;
            const double progress = static_cast<double>(epoch - 1) / static_cast<double>(epochs - 1);
            const double w = 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
            return learning_rate * (final_lr_fraction + (1.0 - final_lr_fraction) * w);
        }
    };

    class Adam
    {
    public:
        Adam(std::size_t n, const TrainConfig &config)
            : m_(VectorXd::Zero(static_cast<Eigen::Index>(n))), v_(VectorXd::Zero(static_cast<Eigen::Index>(n))),
              config_(config)
        {
        }

        void set_learning_rate(double lr) { config_.learning_rate = lr; }

        void step(VectorXd &params, const VectorXd &grad)
        {
            if (grad.size() != m_.size() || params.size() != m_.size())
                fail_argument("Adam::step: size mismatch");
            ++t_;
            m_ = config_.beta1 * m_ + (1.0 - config_.beta1) * grad;
            v_ = config_.beta2 * v_ + (1.0 - config_.beta2) * grad.cwiseAbs2();
            const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
            const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
            params.array() -= config_.learning_rate * (m_.array() / c1) / ((v_.array() / c2).sqrt() + config_.epsilon);
        }

        std::size_t steps() const { return t_; }

    private:
        VectorXd m_, v_;
        TrainConfig config_;
        std::size_t t_ = 0;
    };

    // ------------------------------------------------------------------------------------------
    // Standardization
    // ------------------------------------------------------------------------------------------

    struct Standardizer
    {
        VectorXd mean;
        VectorXd scale;

        // Per-row statistics of a (dim x samples) matrix; constant rows get scale 1.
        static Standardizer fit(const MatrixXd &data)
        {
            if (data.cols() == 0)
                fail_argument("Standardizer::fit: empty data");
            Standardizer s;
            s.mean = data.rowwise().mean();
            const MatrixXd centered = data.colwise() - s.mean;
            s.scale = (centered.rowwise().squaredNorm() / static_cast<double>(data.cols())).cwiseSqrt();
            for (Eigen::Index i = 0; i < s.scale.size(); ++i)
                if (!(s.scale(i) > 1e-12))
                    s.scale(i) = 1.0;
            return s;
        }

        static Standardizer identity(std::size_t n)
        {
            return {VectorXd::Zero(static_cast<Eigen::Index>(n)), VectorXd::Ones(static_cast<Eigen::Index>(n))};
        }

        std::size_t size() const { return static_cast<std::size_t>(mean.size()); }

        MatrixXd apply(const MatrixXd &x) const
        {
            check(x.rows());
            return (x.colwise() - mean).array().colwise() / scale.array();
        }

        MatrixXd invert(const MatrixXd &y) const
        {
            check(y.rows());
            return (y.array().colwise() * scale.array()).matrix().colwise() + mean;
        }

    private:
        void check(Eigen::Index rows) const
        {
            if (static_cast<std::size_t>(rows) != size())
                fail_argument("Standardizer: data has ", rows, " rows, expected ", size());
        }
    };

    struct EpochLog
    {
        std::size_t epoch = 0;
        double train_loss = 0.0;
        double validation_loss = 0.0;
        double kl = 0.0;
    };

    inline void write_training_curve(std::ostream &os, const std::vector<EpochLog> &curve)
    {
        os.precision(10);
        os << "epoch,train_loss,validation_loss,kl\n";
        for (const auto &e : curve)
            os << e.epoch << ',' << e.train_loss << ',' << e.validation_loss << ',' << e.kl << '\n';
    }

    namespace detail
    {
        // Deterministic train/validation split and per-epoch batches.
        struct Batching
        {
            std::vector<std::size_t> train, validation;

            Batching(std::size_t n, double validation_fraction, Rng &rng)
            {
                std::vector<std::size_t> idx(n);
                std::iota(idx.begin(), idx.end(), 0);
                shuffle(idx, rng);
                auto nv = static_cast<std::size_t>(std::floor(validation_fraction * static_cast<double>(n)));
                if (nv >= n)
                    nv = n - 1;
                validation.assign(idx.begin(), idx.begin() + static_cast<long>(nv));
                train.assign(idx.begin() + static_cast<long>(nv), idx.end());
            }

            static void shuffle(std::vector<std::size_t> &v, Rng &rng)
            {
                for (std::size_t i = v.size(); i > 1; --i)
                    std::swap(v[i - 1], v[uniform_index(rng, i)]);
            }
        };

        inline MatrixXd gather(const MatrixXd &data, const std::vector<std::size_t> &cols, std::size_t begin,
                               std::size_t end)
        {
            MatrixXd out(data.rows(), static_cast<Eigen::Index>(end - begin));
            for (std::size_t i = begin; i < end; ++i)
                out.col(static_cast<Eigen::Index>(i - begin)) = data.col(static_cast<Eigen::Index>(cols[i]));
            return out;
        }

        inline void check_finite_loss(double loss, std::size_t epoch, std::size_t batch, const char *what)
        {
            if (!std::isfinite(loss))
                throw std::runtime_error(concat(what, ": non-finite loss ", loss, " at epoch ", epoch, ", batch ", batch,
                                                "; try a smaller learning rate"));
        }
    }

    // ------------------------------------------------------------------------------------------
    // MLP regressor (mobility mapper, localization network)
    // ------------------------------------------------------------------------------------------

    // Mean squared error over all entries and its gradient w.r.t. the prediction.
    inline double mse(const MatrixXd &prediction, const MatrixXd &target, MatrixXd *gradient = nullptr)
    {
        const MatrixXd diff = prediction - target;
        const double n = static_cast<double>(diff.size());
        if (gradient)
            *gradient = (2.0 / n) * diff;
        return diff.squaredNorm() / n;
    }

    struct MlpModel
    {
        DenseNet net;
        Standardizer input_stats;
        Standardizer output_stats;
        std::vector<EpochLog> curve;

        // One sample per column.
        MatrixXd predict(const MatrixXd &x) const
        {
            return output_stats.invert(net.forward(input_stats.apply(x)));
        }

        VectorXd predict(const VectorXd &x) const
        {
            return predict(MatrixXd(x)).col(0);
        }
    };

    // Trains an MLP with the given hidden sizes on standardized inputs and targets (one sample per column).
    inline MlpModel train_mlp(const MatrixXd &inputs, const MatrixXd &targets, const std::vector<std::size_t> &hidden,
                              const TrainConfig &config)
    {
        config.validate();
        if (inputs.cols() == 0)
            fail_argument("train_mlp: empty dataset");
        if (inputs.cols() != targets.cols())
            fail_argument("train_mlp: ", inputs.cols(), " inputs but ", targets.cols(), " targets");

        Rng rng(config.seed);
        MlpModel model;
        model.input_stats = Standardizer::fit(inputs);
        model.output_stats = Standardizer::fit(targets);
        const MatrixXd x = model.input_stats.apply(inputs);
        const MatrixXd y = model.output_stats.apply(targets);

        std::vector<std::size_t> sizes{static_cast<std::size_t>(inputs.rows())};
        sizes.insert(sizes.end(), hidden.begin(), hidden.end());
        sizes.push_back(static_cast<std::size_t>(targets.rows()));
        model.net = DenseNet::random(sizes, rng);

        detail::Batching split(static_cast<std::size_t>(inputs.cols()), config.validation_fraction, rng);
        const MatrixXd xv = detail::gather(x, split.validation, 0, split.validation.size());
        const MatrixXd yv = detail::gather(y, split.validation, 0, split.validation.size());

        Adam adam(model.net.parameter_count(), config);
        VectorXd params = model.net.parameters();
        ForwardCache cache;
        for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch)
        {
            adam.set_learning_rate(config.learning_rate_at(epoch));
            detail::Batching::shuffle(split.train, rng);
            double total = 0.0;
            std::size_t batches = 0;
            for (std::size_t b = 0; b < split.train.size(); b += config.batch_size)
            {
                const std::size_t e = std::min(split.train.size(), b + config.batch_size);
                const MatrixXd xb = detail::gather(x, split.train, b, e);
                const MatrixXd yb = detail::gather(y, split.train, b, e);
                MatrixXd grad;
                const double loss = mse(model.net.forward(xb, cache), yb, &grad);
                detail::check_finite_loss(loss, epoch, batches, "train_mlp");
                adam.step(params, model.net.backward(cache, grad).flat());
                model.net.set_parameters(params);
                total += loss;
                ++batches;
            }
            EpochLog log;
            log.epoch = epoch;
            log.train_loss = total / static_cast<double>(std::max<std::size_t>(batches, 1));
            log.validation_loss = xv.cols() > 0 ? mse(model.net.forward(xv), yv) : log.train_loss;
            model.curve.push_back(log);
        }
        return model;
    }

    // Mobility mapper: hidden layer FC 128, ReLU.
    inline MlpModel train_fnn_mobility(const std::vector<std::pair<VectorXd, VectorXd>> &data, const TrainConfig &config)
    {
        if (data.empty())
            fail_argument("train_fnn_mobility: empty dataset");
        MatrixXd x(data.front().first.size(), static_cast<Eigen::Index>(data.size()));
        MatrixXd y(data.front().second.size(), static_cast<Eigen::Index>(data.size()));
        for (std::size_t i = 0; i < data.size(); ++i)
        {
            if (data[i].first.size() != x.rows() || data[i].second.size() != y.rows())
                fail_argument("train_fnn_mobility: inconsistent sample sizes at index ", i);
            x.col(static_cast<Eigen::Index>(i)) = data[i].first;
            y.col(static_cast<Eigen::Index>(i)) = data[i].second;
        }
        return train_mlp(x, y, {128}, config);
    }

    // ------------------------------------------------------------------------------------------
    // VAE
    // ------------------------------------------------------------------------------------------

    struct VaeLoss
    {
        double total = 0.0;
        double reconstruction = 0.0;
        double kl = 0.0;
    };

    class VaeNet
    {
    public:
        VaeNet() = default;

        VaeNet(DenseNet encoder, DenseNet decoder) : encoder_(std::move(encoder)), decoder_(std::move(decoder))
        {
            if (encoder_.output_size() % 2 != 0)
                fail_argument("VaeNet: encoder output must be 2 * latent size");
            latent_ = encoder_.output_size() / 2;
            if (decoder_.input_size() != latent_)
                fail_argument("VaeNet: decoder input ", decoder_.input_size(), " does not match latent size ", latent_);
        }

        // Encoder [in -> hidden... -> 2d], decoder [d -> reversed hidden... -> out].
        static VaeNet random(std::size_t input, std::size_t output, std::size_t latent,
                             const std::vector<std::size_t> &hidden, Rng &rng)
        {
            std::vector<std::size_t> enc{input}, dec{latent};
            enc.insert(enc.end(), hidden.begin(), hidden.end());
            enc.push_back(2 * latent);
            dec.insert(dec.end(), hidden.rbegin(), hidden.rend());
            dec.push_back(output);
            return VaeNet(DenseNet::random(enc, rng), DenseNet::random(dec, rng));
        }

        const DenseNet &encoder() const { return encoder_; }
        const DenseNet &decoder() const { return decoder_; }
        DenseNet &mutable_encoder() { return encoder_; }
        DenseNet &mutable_decoder() { return decoder_; }
        std::size_t latent_size() const { return latent_; }
        std::size_t input_size() const { return encoder_.input_size(); }
        std::size_t output_size() const { return decoder_.output_size(); }

        std::size_t parameter_count() const { return encoder_.parameter_count() + decoder_.parameter_count(); }

        VectorXd parameters() const
        {
            VectorXd out(static_cast<Eigen::Index>(parameter_count()));
            out << encoder_.parameters(), decoder_.parameters();
            return out;
        }

        void set_parameters(const VectorXd &p)
        {
            if (static_cast<std::size_t>(p.size()) != parameter_count())
                fail_argument("VaeNet::set_parameters: size mismatch");
            const auto ne = static_cast<Eigen::Index>(encoder_.parameter_count());
            encoder_.set_parameters(p.head(ne));
            decoder_.set_parameters(p.tail(p.size() - ne));
        }

        // Decoder output at the posterior mean (no sampling).
        MatrixXd predict_mean(const MatrixXd &x) const
        {
            const MatrixXd h = encoder_.forward(x);
            return decoder_.forward(MatrixXd(h.topRows(static_cast<Eigen::Index>(latent_))));
        }

        // Loss = mean squared reconstruction error + kl_weight * mean over samples of KL(q(z|x) || N(0, I)),
        // with z = mu + exp(logvar / 2) .* eps for the supplied standard-normal eps (latent x batch).
        VaeLoss loss(const MatrixXd &x, const MatrixXd &target, const MatrixXd &eps, double kl_weight,
                     VectorXd *gradient = nullptr) const
        {
            const auto d = static_cast<Eigen::Index>(latent_);
            if (eps.rows() != d || eps.cols() != x.cols())
                fail_argument("VaeNet::loss: eps must be ", d, "x", x.cols());
            const double batch = static_cast<double>(x.cols());

            ForwardCache enc_cache, dec_cache;
            const MatrixXd h = encoder_.forward(x, enc_cache);
            const MatrixXd mu = h.topRows(d);
            const MatrixXd logvar = h.bottomRows(d);
            if (!logvar.allFinite())
                throw std::runtime_error("VaeNet: non-finite log-variance");
            const MatrixXd stdev = (0.5 * logvar.array()).exp().matrix();
            const MatrixXd z = mu + stdev.cwiseProduct(eps);
            const MatrixXd y = decoder_.forward(z, dec_cache);

            VaeLoss out;
            MatrixXd dy;
            out.reconstruction = mse(y, target, gradient ? &dy : nullptr);
            out.kl = -0.5 * (1.0 + logvar.array() - mu.array().square() - logvar.array().exp()).sum() / batch;
            out.total = out.reconstruction + kl_weight * out.kl;
            if (!gradient)
                return out;

            MatrixXd dz;
            const DenseGradients gd = decoder_.backward(dec_cache, dy, &dz);
            MatrixXd dh(2 * d, x.cols());
            dh.topRows(d) = dz + (kl_weight / batch) * mu;
            dh.bottomRows(d) = dz.cwiseProduct(eps).cwiseProduct(0.5 * stdev) +
                               (kl_weight / batch) * 0.5 * (logvar.array().exp() - 1.0).matrix();
            const DenseGradients ge = encoder_.backward(enc_cache, dh);
            gradient->resize(static_cast<Eigen::Index>(parameter_count()));
            *gradient << ge.flat(), gd.flat();
            return out;
        }

    private:
        DenseNet encoder_;
        DenseNet decoder_;
        std::size_t latent_ = 0;
    };

    inline MatrixXd standard_normal(Eigen::Index rows, Eigen::Index cols, Rng &rng)
    {
        MatrixXd m(rows, cols);
        for (Eigen::Index i = 0; i < m.size(); ++i)
            m.data()[i] = gaussian(rng);
        return m;
    }

    struct VaeModel
    {
        VaeNet net;
        Standardizer input_stats;
        Standardizer output_stats;
        std::vector<EpochLog> curve;

        MatrixXd predict(const MatrixXd &x) const
        {
            return output_stats.invert(net.predict_mean(input_stats.apply(x)));
        }

        VectorXd predict(const VectorXd &x) const
        {
            return predict(MatrixXd(x)).col(0);
        }
    };

    struct VaeShape
    {
        std::size_t latent = 16;
        std::vector<std::size_t> hidden{256, 128};
    };

    // Conditional VAE: the encoder sees the band-n vector, the decoder predicts the band-n' vector.
    inline VaeModel train_vae_crossband(const MatrixXd &inputs, const MatrixXd &targets, const TrainConfig &config,
                                        const VaeShape &shape = {})
    {
        config.validate();
        if (inputs.cols() == 0)
            fail_argument("train_vae_crossband: empty dataset");
        if (inputs.cols() != targets.cols())
            fail_argument("train_vae_crossband: ", inputs.cols(), " inputs but ", targets.cols(), " targets");
        if (shape.latent == 0)
            fail_argument("train_vae_crossband: latent size must be >= 1");

        Rng rng(config.seed);
        VaeModel model;
        model.input_stats = Standardizer::fit(inputs);
        model.output_stats = Standardizer::fit(targets);
        const MatrixXd x = model.input_stats.apply(inputs);
        const MatrixXd y = model.output_stats.apply(targets);
        model.net = VaeNet::random(static_cast<std::size_t>(x.rows()), static_cast<std::size_t>(y.rows()), shape.latent,
                                   shape.hidden, rng);

        detail::Batching split(static_cast<std::size_t>(inputs.cols()), config.validation_fraction, rng);
        const MatrixXd xv = detail::gather(x, split.validation, 0, split.validation.size());
        const MatrixXd yv = detail::gather(y, split.validation, 0, split.validation.size());

        Adam adam(model.net.parameter_count(), config);
        VectorXd params = model.net.parameters();
        VectorXd grad;
        const auto d = static_cast<Eigen::Index>(shape.latent);
        for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch)
        {
            adam.set_learning_rate(config.learning_rate_at(epoch));
            detail::Batching::shuffle(split.train, rng);
            double total = 0.0, kl = 0.0;
            std::size_t batches = 0;
            for (std::size_t b = 0; b < split.train.size(); b += config.batch_size)
            {
                const std::size_t e = std::min(split.train.size(), b + config.batch_size);
                const MatrixXd xb = detail::gather(x, split.train, b, e);
                const MatrixXd yb = detail::gather(y, split.train, b, e);
                const MatrixXd eps = standard_normal(d, xb.cols(), rng);
                const VaeLoss l = model.net.loss(xb, yb, eps, config.kl_weight, &grad);
                detail::check_finite_loss(l.total, epoch, batches, "train_vae_crossband");
                adam.step(params, grad);
                model.net.set_parameters(params);
                total += l.total;
                kl += l.kl;
                ++batches;
            }
            EpochLog log;
            log.epoch = epoch;
            log.train_loss = total / static_cast<double>(std::max<std::size_t>(batches, 1));
            log.kl = kl / static_cast<double>(std::max<std::size_t>(batches, 1));
            log.validation_loss = xv.cols() > 0 ? mse(model.net.predict_mean(xv), yv) : log.train_loss;
            model.curve.push_back(log);
        }
        return model;
    }

    inline VectorXd predict_crossband_path(const VaeModel &model, const VectorXd &band_n_vector)
    {
        if (static_cast<std::size_t>(band_n_vector.size()) != model.net.input_size())
            fail_argument("predict_crossband_path: input has ", band_n_vector.size(), " entries, model expects ",
                          model.net.input_size());
        return model.predict(band_n_vector);
    }

    // ------------------------------------------------------------------------------------------
    // Model files: "<stem>.csnn" holds the networks, "<stem>.json" the normalization and training metadata.
    //
    // CSNN layout (little endian): magic "CSNN", u32 version (1), u32 network count, then per network:
    // u32 layer count n, n x u64 layer sizes, f64 parameters in DenseNet::parameters() order.
    // ------------------------------------------------------------------------------------------

    namespace detail
    {
        inline constexpr std::uint32_t kCsnnVersion = 1;

        inline void write_networks(const std::string &path, const std::vector<const DenseNet *> &nets)
        {
            std::ofstream os(path, std::ios::binary);
            if (!os)
                throw std::runtime_error(concat("cannot write ", path));
            os.write("CSNN", 4);
            write_pod(os, kCsnnVersion);
            write_pod(os, static_cast<std::uint32_t>(nets.size()));
            for (const auto *net : nets)
            {
                write_pod(os, static_cast<std::uint32_t>(net->sizes().size()));
                for (auto s : net->sizes())
                    write_pod(os, static_cast<std::uint64_t>(s));
                const VectorXd p = net->parameters();
                for (Eigen::Index i = 0; i < p.size(); ++i)
                    write_pod(os, p(i));
            }
        }

        inline std::vector<DenseNet> read_networks(const std::string &path)
        {
            std::ifstream is(path, std::ios::binary);
            if (!is)
                throw std::runtime_error(concat("cannot open ", path));
            char magic[4];
            is.read(magic, 4);
            if (!is || std::memcmp(magic, "CSNN", 4) != 0)
                throw std::runtime_error(concat(path, ": not a CSNN model file"));
            const auto version = read_pod<std::uint32_t>(is);
            if (version != kCsnnVersion)
                throw std::runtime_error(concat(path, ": unsupported CSNN version ", version));
            const auto count = read_pod<std::uint32_t>(is);
            std::vector<DenseNet> nets;
            for (std::uint32_t k = 0; k < count; ++k)
            {
                const auto n = read_pod<std::uint32_t>(is);
                std::vector<std::size_t> sizes(n);
                for (auto &s : sizes)
                    s = static_cast<std::size_t>(read_pod<std::uint64_t>(is));
                DenseNet net(sizes);
                VectorXd p(static_cast<Eigen::Index>(net.parameter_count()));
                for (Eigen::Index i = 0; i < p.size(); ++i)
                    p(i) = read_pod<double>(is);
                net.set_parameters(p);
                nets.push_back(std::move(net));
            }
            return nets;
        }

        inline nlohmann::json stats_to_json(const Standardizer &s)
        {
            return {{"mean", std::vector<double>(s.mean.data(), s.mean.data() + s.mean.size())},
                    {"scale", std::vector<double>(s.scale.data(), s.scale.data() + s.scale.size())}};
        }

        inline Standardizer stats_from_json(const nlohmann::json &j)
        {
            const auto m = j.at("mean").get<std::vector<double>>();
            const auto s = j.at("scale").get<std::vector<double>>();
            if (m.size() != s.size())
                throw std::runtime_error("model metadata: mean and scale sizes differ");
            Standardizer out;
            out.mean = Eigen::Map<const VectorXd>(m.data(), static_cast<Eigen::Index>(m.size()));
            out.scale = Eigen::Map<const VectorXd>(s.data(), static_cast<Eigen::Index>(s.size()));
            return out;
        }

        inline void write_json(const std::string &path, const nlohmann::json &j)
        {
            std::ofstream os(path);
            if (!os)
                throw std::runtime_error(concat("cannot write ", path));
            os << j.dump(2) << '\n';
        }

        inline nlohmann::json read_json(const std::string &path)
        {
            std::ifstream is(path);
            if (!is)
                throw std::runtime_error(concat("cannot open ", path));
            return nlohmann::json::parse(is);
        }
    }

    inline void save_model(const std::string &stem, const MlpModel &m)
    {
        detail::write_networks(stem + ".csnn", {&m.net});
        detail::write_json(stem + ".json", {{"kind", "mlp"},
                                            {"input_stats", detail::stats_to_json(m.input_stats)},
                                            {"output_stats", detail::stats_to_json(m.output_stats)},
                                            {"epochs", m.curve.size()}});
    }

    inline void save_model(const std::string &stem, const VaeModel &m)
    {
        detail::write_networks(stem + ".csnn", {&m.net.encoder(), &m.net.decoder()});
        detail::write_json(stem + ".json", {{"kind", "vae"},
                                            {"latent", m.net.latent_size()},
                                            {"input_stats", detail::stats_to_json(m.input_stats)},
                                            {"output_stats", detail::stats_to_json(m.output_stats)},
                                            {"epochs", m.curve.size()}});
    }

    inline MlpModel load_mlp_model(const std::string &stem)
    {
        const auto meta = detail::read_json(stem + ".json");
        if (meta.at("kind") != "mlp")
            throw std::runtime_error(concat(stem, ".json: not an MLP model"));
        auto nets = detail::read_networks(stem + ".csnn");
        if (nets.size() != 1)
            throw std::runtime_error(concat(stem, ".csnn: expected one network"));
        MlpModel m;
        m.net = std::move(nets[0]);
        m.input_stats = detail::stats_from_json(meta.at("input_stats"));
        m.output_stats = detail::stats_from_json(meta.at("output_stats"));
        return m;
    }

    inline VaeModel load_vae_model(const std::string &stem)
    {
        const auto meta = detail::read_json(stem + ".json");
        if (meta.at("kind") != "vae")
            throw std::runtime_error(concat(stem, ".json: not a VAE model"));
        auto nets = detail::read_networks(stem + ".csnn");
        if (nets.size() != 2)
            throw std::runtime_error(concat(stem, ".csnn: expected encoder and decoder"));
        VaeModel m;
        m.net = VaeNet(std::move(nets[0]), std::move(nets[1]));
        m.input_stats = detail::stats_from_json(meta.at("input_stats"));
        m.output_stats = detail::stats_from_json(meta.at("output_stats"));
        return m;
    }
}

#endif
