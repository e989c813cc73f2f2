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

// Acceptance runner: one PASS/FAIL line per criterion.
//   mbcsi_acceptance --cli PATH [criterion ...]

#include "mbcsi/experiments.hpp"

#include "../gradcheck.hpp"

#include <chrono>
#include <functional>
#include <iostream>

using namespace mbcsi;

namespace
{
    struct Outcome
    {
        bool pass = false;
        std::string detail;
    };

    using Clock = std::chrono::steady_clock;

    double seconds_since(Clock::time_point t0)
    {
        return std::chrono::duration<double>(Clock::now() - t0).count();
    }

    std::string fmt(double v, int precision = 3)
    {
        std::ostringstream os;
        os << std::fixed << std::setprecision(precision) << v;
        return os.str();
    }

    // 1: estimator ordering on 200 mobile measurements.
    Outcome estimator_ordering()
    {
        const auto t0 = Clock::now();
        ExperimentConfig c;
        c.seed = 1;
        const auto r = run_estimation_benchmark(c);
        const double t = seconds_since(t0);
        const auto &m = r.mean_ccne; // music, sage, pso, cmaes
        const bool order = m[1] >= m[3] && m[3] >= m[2] && m[2] >= m[0];
        const bool gap = m[1] - m[0] >= 3.0;
        return {order && gap && r.ccne.size() >= 200 && t <= 600.0,
                concat(r.ccne.size(), " measurements; mean CCNE sage ", fmt(m[1]), " >= cmaes ", fmt(m[3]), " >= pso ",
                       fmt(m[2]), " >= music ", fmt(m[0]), " dB; sage-music ", fmt(m[1] - m[0]), " dB (>= 3); ",
                       fmt(t, 1), " s (<= 600)")};
    }

    // 2: noiseless exact recovery.
    Outcome noiseless_recovery()
    {
        const auto t0 = Clock::now();
        const MeasurementGrid g;
        const SageConfig sc;
        Rng rng(2);
        double worst_tau = 0.0, worst_phi = 0.0, worst_fd = 0.0, worst_alpha = 0.0;
        constexpr int kSingle = 10;
        for (int k = 0; k < kSingle; ++k)
        {
            PathParams p;
            p.alpha = uniform(rng, 0.3, 2.0) * expj(uniform(rng, 0.0, kTwoPi));
            p.tau = uniform(rng, 0.05, 0.8) * g.max_delay();
            p.phi = uniform(rng, -0.9, 0.9);
            p.doppler = uniform(rng, -0.9, 0.9) * sc.resolved_doppler_range(g);
            const auto h = synth_channel(g, std::vector<PathParams>{p});
            MusicConfig mc;
            mc.model_order_override = 1;
            const auto est = sage_refine(h, coarse_estimate(h, mc), sc);
            const auto &q = est.paths.at(0);
            worst_tau = std::max(worst_tau, std::abs(q.tau - p.tau) / sc.delay_step(g));
            worst_phi = std::max(worst_phi, std::abs(q.phi - p.phi) / sc.phi_step());
            worst_fd = std::max(worst_fd, std::abs(q.doppler - p.doppler) / sc.doppler_step(g));
            worst_alpha = std::max(worst_alpha, std::abs(q.alpha - p.alpha) / std::abs(p.alpha));
        }
        double worst_two = std::numeric_limits<double>::infinity();
        constexpr int kTwo = 5;
        for (int k = 0; k < kTwo; ++k)
        {
            // well separated: delays two resolution cells apart and opposite array sides
            const double cell = 1.0 / (g.num_subcarriers * g.subcarrier_spacing);
            std::vector<PathParams> truth{
                {uniform(rng, 0.8, 1.2) * expj(uniform(rng, 0.0, kTwoPi)), uniform(rng, 0.5, 3.0) * cell,
                 uniform(rng, 0.2, 0.8), uniform(rng, -3000.0, 3000.0)},
                {uniform(rng, 0.4, 0.8) * expj(uniform(rng, 0.0, kTwoPi)), 0.0, uniform(rng, -0.8, -0.2),
                 uniform(rng, -3000.0, 3000.0)}};
            truth[1].tau = truth[0].tau + uniform(rng, 2.0, 4.0) * cell;
            const auto h = synth_channel(g, truth);
            MusicConfig mc;
            mc.model_order_override = 2;
            const auto est = sage_refine(h, coarse_estimate(h, mc), sc);
            worst_two = std::min(worst_two, ccne(reconstruct(g, est.paths), h));
        }
        const double t = seconds_since(t0);
        const bool pass = worst_tau < 1e-4 && worst_phi < 1e-4 && worst_fd < 1e-4 && worst_alpha < 1e-4 && worst_two > 40.0 &&
                          t <= 10.0;
        return {pass, concat(kSingle, " single paths: worst error / resolution tau ", worst_tau, ", phi ", worst_phi,
                             ", Doppler ", worst_fd, ", alpha relative ", worst_alpha, " (all < 1e-4); ", kTwo,
                             " two-path channels: worst CCNE ", fmt(worst_two, 1), " dB (> 40); ", fmt(t, 2), " s (<= 10)")};
    }

    // 3: velocity robustness of the cross-band reconstruction.
    Outcome velocity_robustness()
    {
        const auto t0 = Clock::now();
        ExperimentConfig c;
        c.seed = 1;
        const auto b = run_reconstruction_benchmark(c);
        const double t = seconds_since(t0);
        const auto &w = b.mean_with_removal, &n = b.mean_without_removal;
        const bool pass = b.spread_with_removal <= 2.0 && b.degradation_without_removal >= 3.0 && t <= 1800.0;
        return {pass, concat("with removal matched/low/mixed ", fmt(w[0], 2), "/", fmt(w[1], 2), "/", fmt(w[2], 2),
                             " dB, spread ", fmt(b.spread_with_removal, 2), " dB (<= 2); without removal ", fmt(n[0], 2), "/",
                             fmt(n[1], 2), "/", fmt(n[2], 2), " dB, degradation ", fmt(b.degradation_without_removal, 2),
                             " dB (>= 3); ", fmt(t, 1), " s (<= 1800)")};
    }

    // Static tensor of a path with perturbed parameters.
    ChannelTensor perturbed_static(const MeasurementGrid &g, PathParams p, Rng &rng, double scale)
    {
        p.alpha *= (1.0 + scale * gaussian(rng)) * expj(scale * gaussian(rng));
        p.tau += scale * 1e-8 * gaussian(rng);
        p.phi += scale * 0.05 * gaussian(rng);
        p.doppler = 0.0;
        return synth_channel(g, std::vector<PathParams>{p});
    }

    // 4: full-channel error vs per-path error.
    Outcome path_error_bound()
    {
        MeasurementGrid g;
        g.num_packets = 8;
        g.num_subcarriers = 16;
        Rng rng(4);
        double worst_single = 0.0, worst_ratio = 0.0;
        std::size_t violations = 0, single_violations = 0;
        constexpr int kSingle = 200, kMulti = 1000;
        auto random_path = [&] {
            PathParams p;
            p.alpha = uniform(rng, 0.2, 2.0) * expj(uniform(rng, 0.0, kTwoPi));
            p.tau = uniform(rng, 0.0, g.max_delay());
            p.phi = uniform(rng, -1.0, 1.0);
            p.doppler = uniform(rng, -4000.0, 4000.0);
            return p;
        };
        for (int k = 0; k < kSingle; ++k)
        {
            const auto p = random_path();
            const auto truth = remove_mobility(p, g).tensor;
            const auto r = path_error_check({truth}, {perturbed_static(g, p, rng, uniform(rng, 1e-3, 0.5))}, {p.doppler});
            const double rel = std::abs(r.full_error - r.per_path_error) / r.per_path_error;
            worst_single = std::max(worst_single, rel);
            single_violations += rel > 1e-12 ? 1 : 0;
        }
        for (int k = 0; k < kMulti; ++k)
        {
            const auto L = static_cast<std::size_t>(2 + k % 5);
            std::vector<ChannelTensor> truth, pred;
            std::vector<double> fd;
            for (std::size_t l = 0; l < L; ++l)
            {
                const auto p = random_path();
                truth.push_back(remove_mobility(p, g).tensor);
                pred.push_back(perturbed_static(g, p, rng, uniform(rng, 1e-3, 0.5)));
                fd.push_back(p.doppler);
            }
            const auto r = path_error_check(truth, pred, fd);
            worst_ratio = std::max(worst_ratio, r.full_error / (static_cast<double>(L) * r.per_path_error));
            violations += r.full_error > static_cast<double>(L) * r.per_path_error ? 1 : 0;
        }
        return {single_violations == 0 && violations == 0,
                concat(kSingle, " single-path cases: worst relative gap ", worst_single, " (<= 1e-12); ", kMulti,
                       " multi-path cases (L=2..6): ", violations, " bound violations, worst full/(L*per-path) ",
                       fmt(worst_ratio, 4))};
    }

    // 5: localization ordering over seeds.
    Outcome localization_ordering()
    {
        const auto t0 = Clock::now();
        bool pass = true;
        std::string detail;
        for (std::uint64_t seed = 1; seed <= 5; ++seed)
        {
            ExperimentConfig c;
            c.seed = seed;
            const auto b = run_localization_benchmark(c);
            const double truth = b.reports[0].mean_error, spliced = b.reports[1].mean_error;
            const double worst = std::max(b.reports[2].mean_error, b.reports[3].mean_error);
            const bool ok = truth <= spliced && spliced < worst;
            pass = pass && ok;
            detail += concat("seed ", seed, ": ", fmt(truth, 2), " <= ", fmt(spliced, 2), " < max(", fmt(b.reports[2].mean_error, 2),
                             ", ", fmt(b.reports[3].mean_error, 2), ") m ", ok ? "ok" : "VIOLATED", "; ");
        }
        const double t = seconds_since(t0);
        return {pass && t <= 1200.0, concat(detail, fmt(t, 1), " s (<= 1200)")};
    }

    // 6: finite-difference gradient checks of both network shapes.
    Outcome gradient_oracle()
    {
        const auto t0 = Clock::now();
        const MeasurementGrid g;
        const CrossbandConfig cc;
        const std::size_t ramp = 2 * g.num_packets;
        const std::size_t signature = 2 * g.num_subcarriers * g.num_antennas;
        std::size_t checked = 0, failures = 0;
        double worst = 0.0;
        for (std::uint64_t seed : {61u, 62u, 63u})
        {
            const auto f = testing::check_dense_net({ramp, cc.fnn_hidden, ramp}, seed, 2, true);
            const auto v = testing::check_vae(signature, signature, cc.vae_shape.latent, cc.vae_shape.hidden, seed, 2, 0.5, true);
            const auto w = testing::check_vae(signature, signature + ramp, cc.vae_shape.latent, cc.vae_shape.hidden, seed, 2, 0.5,
                                              true);
            for (const auto *r : {&f, &v, &w})
            {
                checked += r->checked;
                failures += r->failures;
                worst = std::max(worst, r->worst_relative_error);
            }
        }
        return {failures == 0 && checked > 0,
                concat("mapper ", ramp, "-", cc.fnn_hidden, "-", ramp, ", autoencoder ", signature, "->", signature, "/",
                       signature + ramp, " latent ", cc.vae_shape.latent, ", 3 seeds: ", checked, " parameters, ", failures,
                       " above 1e-4, worst relative error ", worst, "; ", fmt(seconds_since(t0), 1), " s")};
    }

    std::map<std::string, std::string> read_tree(const std::filesystem::path &dir)
    {
        std::map<std::string, std::string> out;
        for (const auto &e : std::filesystem::recursive_directory_iterator(dir))
            if (e.is_regular_file())
            {
                std::ifstream is(e.path(), std::ios::binary);
                out[std::filesystem::relative(e.path(), dir).string()] =
                    std::string((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
            }
        return out;
    }

    // 7: every CLI subcommand is byte-reproducible.
    Outcome cli_determinism(const std::string &cli)
    {
        if (cli.empty() || !std::filesystem::exists(cli))
            return {false, concat("CLI binary not found: '", cli, "'")};
        const auto root = std::filesystem::temp_directory_path() / "mbcsi_acceptance_cli";
        std::filesystem::remove_all(root);
        std::filesystem::create_directories(root);
        const json small = {
            {"seed", 7},
            {"grid", {{"num_packets", 8}, {"num_subcarriers", 16}}},
            {"estimate", {{"measurements", 4}, {"music", {{"window_subcarriers", 8}}}}},
            {"reconstruct",
             {{"train_locations", 60},
              {"test_locations", 5},
              {"music", {{"window_subcarriers", 8}}},
              {"models", {{"vae_latent", 8}, {"vae_hidden", {32, 16}}, {"fnn_hidden", 16}, {"vae_train", {{"epochs", 3}}},
                          {"fnn_train", {{"epochs", 3}}}}}}},
            {"localize",
             {{"test_points", 4},
              {"queries_per_point", 2},
              {"samples_per_rp", 10},
              {"train_locations", 60},
              {"save_database", true},
              {"music", {{"window_subcarriers", 8}}},
              {"models", {{"vae_latent", 8}, {"vae_hidden", {32, 16}}, {"fnn_hidden", 16}, {"vae_train", {{"epochs", 3}}},
                          {"fnn_train", {{"epochs", 3}}}}}}},
            {"generate", {{"num_scenes", 4}}}};
        std::ofstream(root / "config.json") << small.dump(2);

        std::string detail;
        bool pass = true;
        for (const char *sub : {"generate", "estimate", "reconstruct", "localize"})
        {
            std::map<std::string, std::string> runs[2];
            for (int k = 0; k < 2; ++k)
            {
                const auto out = root / concat(sub, "_", k);
                const std::string cmd = concat("\"", cli, "\" ", sub, " --config \"", (root / "config.json").string(), "\" --out \"",
                                               out.string(), "\" > \"", (root / "log.txt").string(), "\" 2>&1");
                if (std::system(cmd.c_str()) != 0)
                    return {false, concat(sub, ": CLI exited with an error, see ", (root / "log.txt").string())};
                runs[k] = read_tree(out);
            }
            const bool same = runs[0] == runs[1] && !runs[0].empty();
            pass = pass && same;
            detail += concat(sub, " ", runs[0].size(), " files ", same ? "identical" : "DIFFER", "; ");
        }
        std::filesystem::remove_all(root);
        return {pass, detail};
    }
}

int main(int argc, char **argv)
{
    std::string cli;
    std::set<int> selected;
    for (int i = 1; i < argc; ++i)
    {
        const std::string a = argv[i];
        if (a == "--cli" && i + 1 < argc)
            cli = argv[++i];
        else
            selected.insert(std::stoi(a));
    }
    const std::vector<std::pair<const char *, std::function<Outcome()>>> criteria{
        {"estimator ordering", estimator_ordering},
        {"noiseless exact recovery", noiseless_recovery},
        {"velocity robustness", velocity_robustness},
        {"full-channel vs per-path error", path_error_bound},
        {"localization ordering", localization_ordering},
        {"gradient oracle", gradient_oracle},
        {"CLI determinism", [&] { return cli_determinism(cli); }}};

    int failed = 0;
    for (std::size_t k = 0; k < criteria.size(); ++k)
    {
        const int id = static_cast<int>(k) + 1;
        if (!selected.empty() && !selected.count(id))
            continue;
        Outcome o;
        try
        {
            o = criteria[k].second();
        }
        catch (const std::exception &e)
        {
            o = {false, concat("exception: ", e.what())};
        }
        failed += o.pass ? 0 : 1;
        std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << id << " (" << criteria[k].first << "): " << o.detail
                  << std::endl;
    }
    return failed == 0 ? 0 : 1;
}
