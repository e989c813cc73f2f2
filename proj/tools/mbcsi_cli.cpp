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

// mbcsi {generate|estimate|reconstruct|localize} [--config PATH] [--seed N] --out DIR

#include "mbcsi/experiments.hpp"

#include <iostream>

#include "CLI11.hpp"

namespace
{
    using namespace mbcsi;

    int run(const std::string &command, const std::string &config_path, std::optional<std::uint64_t> seed,
            const std::string &out_dir)
    {
        ExperimentConfig config = run_stage("config", [&] {
            ExperimentConfig c = config_path.empty() ? ExperimentConfig{} : load_config(config_path);
            if (seed)
                c.seed = seed;
            c.resolved_seed();
            return c;
        });
        OutputSet out = run_stage("output", [&] { return OutputSet(out_dir); });
        std::ostream *log = &std::cerr;

        if (command == "generate")
            run_stage("generate", [&] { run_generate(config, out, log); });
        else if (command == "estimate")
        {
            const auto r = run_stage("estimate", [&] { return run_estimation_benchmark(config, log); });
            run_stage("output", [&] { write_estimation_outputs(out, r); });
            for (std::size_t a = 0; a < kEstimators.size(); ++a)
                std::cout << kEstimators[a] << " mean CCNE " << r.mean_ccne[a] << " dB\n";
        }
        else if (command == "reconstruct")
        {
            const auto r = run_stage("reconstruct", [&] { return run_reconstruction_benchmark(config, log); });
            run_stage("output", [&] { write_reconstruction_outputs(out, r, config.reconstruct.save_models); });
            for (std::size_t c = 0; c < kVelocityConditions.size(); ++c)
                std::cout << kVelocityConditions[c] << ": " << r.mean_with_removal[c] << " dB with removal, "
                          << r.mean_without_removal[c] << " dB without\n";
        }
        else
        {
            const auto r = run_stage("localize", [&] { return run_localization_benchmark(config, log); });
            run_stage("output", [&] { write_localization_outputs(out, r, config.localize.save_database); });
            for (std::size_t c = 0; c < kLocalizationConditions.size(); ++c)
                std::cout << kLocalizationConditions[c] << " mean error " << r.reports[c].mean_error << " m\n";
        }
        run_stage("output", [&] { out.write_manifest(command, config); });
        return 0;
    }
}

int main(int argc, char **argv)
{
    CLI::App app{"Multi-band CSI estimation, cross-band reconstruction and localization experiments"};
    app.require_subcommand(1);
    std::string config_path, out_dir;
    std::optional<std::uint64_t> seed;
    for (const auto &[name, help] : {std::pair{"generate", "write synthetic scenes and measurements"},
                                     std::pair{"estimate", "compare the parameter estimators"},
                                     std::pair{"reconstruct", "cross-band reconstruction across velocities"},
                                     std::pair{"localize", "fingerprint localization with a predicted band"}})
    {
        auto *sub = app.add_subcommand(name, help);
        sub->add_option("--config", config_path, "JSON config file")->check(CLI::ExistingFile);
        sub->add_option("--seed", seed, "seed, overrides the config");
        sub->add_option("--out", out_dir, "output directory")->required();
    }
    CLI11_PARSE(app, argc, argv);
    const std::string command = app.get_subcommands().front()->get_name();
    try
    {
        return run(command, config_path, seed, out_dir);
    }
    catch (const StageError &e)
    {
        std::cerr << "mbcsi " << command << ": error in stage " << e.what() << '\n';
        return 2;
    }
    catch (const std::exception &e)
    {
        std::cerr << "mbcsi " << command << ": error: " << e.what() << '\n';
        return 2;
    }
}
