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

#include "gradcheck.hpp"
#include "mbcsi/neural.hpp"

#include <catch_amalgamated.hpp>

#include <filesystem>

using namespace mbcsi;
using Catch::Approx;

namespace
{
    // Per-neuron loop forward pass.
    VectorXd loop_forward(const DenseNet &net, const VectorXd &x)
    {
        std::vector<double> a(x.data(), x.data() + x.size());
        for (std::size_t l = 0; l < net.num_layers(); ++l)
        {
            std::vector<double> next(static_cast<std::size_t>(net.weight(l).rows()));
            for (std::size_t i = 0; i < next.size(); ++i)
            {
                double s = net.bias(l)(static_cast<Eigen::Index>(i));
                for (std::size_t j = 0; j < a.size(); ++j)
                    s += net.weight(l)(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) * a[j];
                next[i] = (l + 1 < net.num_layers() && s < 0.0) ? 0.0 : s;
            }
            a = next;
        }
        return Eigen::Map<VectorXd>(a.data(), static_cast<Eigen::Index>(a.size()));
    }

    double variance(const MatrixXd &m)
    {
        const MatrixXd c = m.colwise() - m.rowwise().mean();
        return c.squaredNorm() / static_cast<double>(m.size());
    }
}

TEST_CASE("forward of a zero net is zero", "[neural]")
{
    DenseNet net({4, 8, 3});
    REQUIRE(net.forward(VectorXd(VectorXd::Random(4))).isZero());
}

TEST_CASE("identity linear layer passes its input through", "[neural]")
{
    DenseNet net({5, 5});
    net.mutable_weight(0) = MatrixXd::Identity(5, 5);
    const VectorXd x = VectorXd::Random(5);
    REQUIRE(net.forward(x) == x);
}

TEST_CASE("batched forward matches a per-neuron loop", "[neural]")
{
    Rng rng(3);
    auto net = DenseNet::random({6, 9, 7, 2}, rng);
    for (std::size_t l = 0; l < net.num_layers(); ++l)
        net.mutable_bias(l) = VectorXd::Random(net.bias(l).size());
    const MatrixXd x = standard_normal(6, 5, rng);
    const MatrixXd y = net.forward(x);
    for (Eigen::Index c = 0; c < x.cols(); ++c)
        REQUIRE((y.col(c) - loop_forward(net, x.col(c))).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("forward rejects a wrong input size", "[neural]")
{
    DenseNet net({4, 2});
    REQUIRE_THROWS_AS(net.forward(VectorXd(VectorXd::Zero(3))), std::invalid_argument);
    REQUIRE_THROWS_AS(DenseNet({4}), std::invalid_argument);
}

TEST_CASE("backward matches finite differences on a 3-layer net", "[neural]")
{
    for (std::uint64_t seed : {1u, 2u, 3u})
    {
        const auto r = testing::check_dense_net({7, 11, 9, 4}, seed, 3);
        CAPTURE(seed, r.worst_relative_error, r.retried);
        REQUIRE(r.checked == 7 * 11 + 11 + 11 * 9 + 9 + 9 * 4 + 4);
        REQUIRE(r.failures == 0);
    }
}

TEST_CASE("zero upstream gradient gives zero parameter gradients", "[neural]")
{
    Rng rng(5);
    const auto net = DenseNet::random({3, 5, 2}, rng);
    ForwardCache cache;
    net.forward(standard_normal(3, 4, rng), cache);
    REQUIRE(net.backward(cache, MatrixXd::Zero(2, 4)).flat().isZero());
}

TEST_CASE("linear net gradient equals the closed-form least-squares gradient", "[neural]")
{
    Rng rng(6);
    auto net = DenseNet::random({4, 3}, rng);
    net.mutable_bias(0) = VectorXd::Random(3);
    const MatrixXd x = standard_normal(4, 10, rng), y = standard_normal(3, 10, rng);
    ForwardCache cache;
    MatrixXd dy;
    mse(net.forward(x, cache), y, &dy);
    const auto g = net.backward(cache, dy);
    const MatrixXd r = net.weight(0) * x + net.bias(0).replicate(1, 10) - y;
    const MatrixXd gw = (2.0 / 30.0) * r * x.transpose();
    const VectorXd gb = (2.0 / 30.0) * r.rowwise().sum();
    REQUIRE((g.weights[0] - gw).cwiseAbs().maxCoeff() < 1e-12);
    REQUIRE((g.biases[0] - gb).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("backward refuses a stale forward cache", "[neural]")
{
    Rng rng(7);
    auto net = DenseNet::random({3, 4, 2}, rng);
    ForwardCache cache;
    net.forward(standard_normal(3, 2, rng), cache);
    net.mutable_bias(1)(0) += 1.0;
    REQUIRE_THROWS_AS(net.backward(cache, MatrixXd::Ones(2, 2)), std::logic_error);
    const auto copy = net;
    net.forward(standard_normal(3, 2, rng), cache);
    REQUIRE_NOTHROW(copy.backward(cache, MatrixXd::Ones(2, 2)));
}

TEST_CASE("parameter round trip through the flat vector", "[neural]")
{
    Rng rng(8);
    auto net = DenseNet::random({3, 4, 2}, rng);
    const VectorXd p = net.parameters();
    REQUIRE(p.size() == 3 * 4 + 4 + 4 * 2 + 2);
    REQUIRE(p.head(12) == net.weight(0).reshaped());
    DenseNet other({3, 4, 2});
    other.set_parameters(p);
    REQUIRE(other.parameters() == p);
    REQUIRE_THROWS_AS(other.set_parameters(VectorXd::Zero(3)), std::invalid_argument);
}

TEST_CASE("VAE loss gradient matches finite differences", "[neural]")
{
    for (std::uint64_t seed : {11u, 12u, 13u})
    {
        const auto r = testing::check_vae(6, 5, 3, {8, 7}, seed, 3);
        CAPTURE(seed, r.worst_relative_error, r.retried);
        REQUIRE(r.failures == 0);
        REQUIRE(r.checked > 0);
    }
}

TEST_CASE("KL term is non-negative", "[neural]")
{
    Rng rng(21);
    for (int k = 0; k < 20; ++k)
    {
        auto net = VaeNet::random(5, 5, 3, {6}, rng);
        const MatrixXd x = 3.0 * standard_normal(5, 4, rng);
        REQUIRE(net.loss(x, x, standard_normal(3, 4, rng), 1.0).kl >= 0.0);
    }
}

TEST_CASE("VAE shapes are validated", "[neural]")
{
    REQUIRE_THROWS_AS(VaeNet(DenseNet({4, 5}), DenseNet({2, 4})), std::invalid_argument);
    REQUIRE_THROWS_AS(VaeNet(DenseNet({4, 6}), DenseNet({2, 4})), std::invalid_argument);
    Rng rng(1);
    auto net = VaeNet::random(4, 4, 2, {5}, rng);
    REQUIRE_THROWS_AS(net.loss(MatrixXd::Zero(4, 3), MatrixXd::Zero(4, 3), MatrixXd::Zero(2, 2), 0.0),
                      std::invalid_argument);
}

TEST_CASE("mlp learns the identity map", "[neural]")
{
    Rng rng(31);
    const MatrixXd x = standard_normal(8, 4000, rng);
    TrainConfig c;
    c.epochs = 100;
    c.learning_rate = 3e-3;
    c.batch_size = 32;
    c.validation_fraction = 0.2;
    const auto m = train_mlp(x, x, {128}, c);
    REQUIRE(m.curve.back().validation_loss < 1e-3);
    const MatrixXd held = standard_normal(8, 200, rng);
    REQUIRE(mse(m.predict(held), held) < 1e-3 * variance(held));

    // smoothed (window 10) training loss is non-increasing
    std::vector<double> smooth;
    for (std::size_t e = 10; e <= m.curve.size(); e += 10)
    {
        double s = 0.0;
        for (std::size_t k = e - 10; k < e; ++k)
            s += m.curve[k].train_loss;
        smooth.push_back(s / 10.0);
    }
    for (std::size_t k = 1; k < smooth.size(); ++k)
        REQUIRE(smooth[k] <= smooth[k - 1]);
}

TEST_CASE("mlp on a constant target predicts the mean", "[neural]")
{
    Rng rng(32);
    const MatrixXd x = standard_normal(3, 200, rng);
    MatrixXd y(2, 200);
    y.row(0).setConstant(4.0);
    y.row(1).setConstant(-1.5);
    TrainConfig c;
    c.epochs = 200;
    c.batch_size = 16;
    const auto m = train_mlp(x, y, {16}, c);
    const VectorXd p = m.predict(VectorXd(standard_normal(3, 1, rng).col(0)));
    REQUIRE(p(0) == Approx(4.0).margin(0.02));
    REQUIRE(p(1) == Approx(-1.5).margin(0.02));
}

TEST_CASE("mobility mapper learns Doppler scaling between bands", "[neural]")
{
    // ramp over packets at f on band n, at ratio * f on band n'
    MeasurementGrid g;
    const double ratio = 1.5, fmax = 3000.0;
    auto ramp = [&](double f) {
        VectorXd v(2 * static_cast<Eigen::Index>(g.num_packets));
        for (std::size_t t = 0; t < g.num_packets; ++t)
        {
            const cplx e = expj(kTwoPi * f * static_cast<double>(t) * g.packet_interval);
            v(2 * static_cast<Eigen::Index>(t)) = e.real();
            v(2 * static_cast<Eigen::Index>(t) + 1) = e.imag();
        }
        return v;
    };
    Rng rng(41);
    std::vector<std::pair<VectorXd, VectorXd>> data;
    for (int k = 0; k < 2000; ++k)
    {
        const double f = uniform(rng, -fmax, fmax);
        data.emplace_back(ramp(f), ramp(ratio * f));
    }
    TrainConfig c;
    c.epochs = 60;
    c.learning_rate = 1e-3;
    c.batch_size = 32;
    const auto m = train_fnn_mobility(data, c);

    // recover the band-n' frequency of each prediction by a fine grid search, then fit the slope
    double sxy = 0.0, sxx = 0.0;
    for (int k = 0; k < 100; ++k)
    {
        const double f = uniform(rng, -0.9 * fmax, 0.9 * fmax);
        const VectorXd p = m.predict(ramp(f));
        double best = -1e300, best_f = 0.0;
        for (double q = -1.6 * fmax; q <= 1.6 * fmax; q += 1.0)
        {
            const double s = p.dot(ramp(q));
            if (s > best)
                best = s, best_f = q;
        }
        sxy += f * best_f;
        sxx += f * f;
    }
    REQUIRE(sxy / sxx == Approx(ratio).epsilon(0.02));
}

TEST_CASE("autoencoder without KL reconstructs its input", "[neural]")
{
    Rng rng(51);
    const MatrixXd basis = standard_normal(12, 6, rng);
    const MatrixXd x = basis * standard_normal(6, 1500, rng);
    TrainConfig c;
    c.epochs = 150;
    c.learning_rate = 5e-3;
    c.batch_size = 32;
    c.kl_weight = 0.0;
    const auto m = train_vae_crossband(x, x, c, VaeShape{12, {64, 32}});
    const MatrixXd held = basis * standard_normal(6, 200, rng);
    REQUIRE(mse(m.predict(held), held) < 1e-3 * variance(held));
}

TEST_CASE("mean-latent prediction is deterministic and zero for a zero net", "[neural]")
{
    Rng rng(52);
    VaeModel m;
    m.net = VaeNet(DenseNet({5, 4}), DenseNet({2, 6}));
    m.input_stats = Standardizer::identity(5);
    m.output_stats = Standardizer::identity(6);
    REQUIRE(predict_crossband_path(m, VectorXd::Random(5)).isZero());
    REQUIRE_THROWS_AS(predict_crossband_path(m, VectorXd::Zero(4)), std::invalid_argument);

    m.net = VaeNet::random(5, 6, 2, {7}, rng);
    const VectorXd x = VectorXd::Random(5);
    REQUIRE(predict_crossband_path(m, x) == predict_crossband_path(m, x));
}

TEST_CASE("single-pair overfit", "[neural]")
{
    Rng rng(53);
    const MatrixXd x = standard_normal(10, 1, rng), y = standard_normal(10, 1, rng);
    TrainConfig c;
    c.epochs = 10000;
    c.validation_fraction = 0.0;
    c.kl_weight = 0.0;
    const auto m = train_vae_crossband(x, y, c, VaeShape{4, {16}});
    REQUIRE((m.predict(x) - y).squaredNorm() < 1e-6);
}

TEST_CASE("training is reproducible under a seed", "[neural]")
{
    Rng rng(54);
    const MatrixXd x = standard_normal(4, 100, rng), y = standard_normal(3, 100, rng);
    TrainConfig c;
    c.epochs = 3;
    REQUIRE(train_mlp(x, y, {8}, c).net.parameters() == train_mlp(x, y, {8}, c).net.parameters());
    REQUIRE(train_vae_crossband(x, y, c, VaeShape{2, {8}}).net.parameters() ==
            train_vae_crossband(x, y, c, VaeShape{2, {8}}).net.parameters());
}

TEST_CASE("training rejects empty data and non-finite losses", "[neural]")
{
    TrainConfig c;
    REQUIRE_THROWS_AS(train_mlp(MatrixXd(3, 0), MatrixXd(2, 0), {4}, c), std::invalid_argument);
    REQUIRE_THROWS_AS(train_vae_crossband(MatrixXd(3, 0), MatrixXd(2, 0), c), std::invalid_argument);
    REQUIRE_THROWS_AS(train_fnn_mobility({}, c), std::invalid_argument);
    c.learning_rate = 0.0;
    REQUIRE_THROWS_AS(train_mlp(MatrixXd::Ones(3, 5), MatrixXd::Ones(2, 5), {4}, c), std::invalid_argument);

    Rng rng(55);
    MatrixXd x = standard_normal(3, 20, rng);
    MatrixXd y = standard_normal(2, 20, rng);
    y(0, 3) = std::numeric_limits<double>::infinity();
    c = TrainConfig{};
    REQUIRE_THROWS_WITH(train_vae_crossband(x, y, c, VaeShape{2, {4}}), Catch::Matchers::ContainsSubstring("non-finite"));
}

TEST_CASE("models survive a save/load round trip", "[neural]")
{
    const auto dir = std::filesystem::temp_directory_path() / "mbcsi_neural_io";
    std::filesystem::create_directories(dir);
    Rng rng(56);
    const MatrixXd x = standard_normal(4, 50, rng), y = standard_normal(3, 50, rng);
    TrainConfig c;
    c.epochs = 2;

    const auto mlp = train_mlp(x, y, {8}, c);
    save_model((dir / "mlp").string(), mlp);
    const auto mlp2 = load_mlp_model((dir / "mlp").string());
    REQUIRE(mlp2.predict(x) == mlp.predict(x));

    const auto vae = train_vae_crossband(x, y, c, VaeShape{2, {8}});
    save_model((dir / "vae").string(), vae);
    const auto vae2 = load_vae_model((dir / "vae").string());
    REQUIRE(vae2.predict(x) == vae.predict(x));

    REQUIRE_THROWS_AS(load_mlp_model((dir / "vae").string()), std::runtime_error);
    {
        std::ofstream bad(dir / "bad.csnn", std::ios::binary);
        bad << "NOPE";
    }
    std::filesystem::copy_file(dir / "mlp.json", dir / "bad.json", std::filesystem::copy_options::overwrite_existing);
    REQUIRE_THROWS_WITH(load_mlp_model((dir / "bad").string()), Catch::Matchers::ContainsSubstring("not a CSNN"));
}

TEST_CASE("training curve CSV has one row per epoch", "[neural]")
{
    std::vector<EpochLog> curve{{1, 0.5, 0.6, 0.0}, {2, 0.25, 0.3, 0.0}};
    std::ostringstream os;
    write_training_curve(os, curve);
    REQUIRE(os.str() == "epoch,train_loss,validation_loss,kl\n1,0.5,0.6,0\n2,0.25,0.3,0\n");
}
