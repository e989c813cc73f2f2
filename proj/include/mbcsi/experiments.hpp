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

#ifndef MBCSI_EXPERIMENTS_HPP
#define MBCSI_EXPERIMENTS_HPP

#include "mbcsi/baselines.hpp"
#include "mbcsi/localization.hpp"
#include "mbcsi/pipeline.hpp"

#include <array>
#include <map>
#include <set>

// Experiment configuration (JSON), the four benchmark runners and their file outputs.

namespace mbcsi
{
    inline constexpr const char *kToolVersion = "0.1.0";

    using json = nlohmann::json;

    // ------------------------------------------------------------------------------------------
    // Configuration
    // ------------------------------------------------------------------------------------------

    struct EstimationSettings
    {
        std::size_t measurements = 200;
        std::size_t num_paths = 4;
        double snr_db = 20.0;
        double speed_kmh = 60.0;
        bool known_model_order = true;
        MusicConfig music{};
        SageConfig sage{};
        OptimizerConfig pso = OptimizerConfig::pso_defaults();
        OptimizerConfig cmaes = OptimizerConfig::cmaes_defaults();
    };

    inline CrossbandConfig default_reconstruction_models()
    {
        CrossbandConfig c;
        c.vae_train.epochs = 40;
        c.vae_train.learning_rate = 1e-3;
        c.fnn_train.epochs = 40;
        return c;
    }

    inline SageConfig default_reconstruction_sage()
    {
        SageConfig s;
        s.max_iterations = 60;
        s.convergence_tol = 1e-7;
        return s;
    }

    struct ReconstructionSettings
    {
        EnvironmentConfig environment{12, -150.0, 150.0, -150.0, 150.0};
        double location_fraction = 0.7; // receivers stay within this fraction of the area
        std::size_t train_locations = 4000;
        std::size_t test_locations = 150;
        std::size_t num_paths = 4;
        double snr_db = 20.0;
        double train_speed_kmh = 60.0;
        double low_speed_kmh = 5.0;
        double mixed_min_kmh = 50.0;
        double mixed_max_kmh = 70.0;
        MusicConfig music{};
        SageConfig sage = default_reconstruction_sage();
        CrossbandConfig models = default_reconstruction_models();
        bool save_models = true;
    };

    inline CrossbandConfig default_localization_models()
    {
        CrossbandConfig c = default_reconstruction_models();
        c.fnn_train.epochs = 5;
        return c;
    }

    struct LocalizationSettings
    {
        EnvironmentConfig environment{};
        std::size_t rp_rows = 4;
        std::size_t rp_cols = 4;
        double rp_spacing = 10.0;
        Location center{0.0, 25.0};
        double test_half_width = 15.0;  // test points uniform in center +- this
        double train_half_width = 20.0; // cross-band training locations uniform in center +- this
        std::size_t test_points = 64;
        std::size_t queries_per_point = 10;
        std::size_t samples_per_rp = 200;
        std::size_t num_paths = 4;
        std::size_t train_locations = 2000;
        double db_snr_db = 10.0;
        double query_snr_db = 10.0;
        double speed_kmh = 60.0;
        MusicConfig music{};
        SageConfig sage{};
        LocalizerConfig localizer{};
        CrossbandConfig models = default_localization_models();
        bool save_database = false;
    };

    struct GenerateSettings
    {
        EnvironmentConfig environment{};
        double location_fraction = 0.7;
        std::size_t num_scenes = 20;
        std::size_t num_paths = 4;
        double speed_kmh = 60.0;
        double heading = 0.0;
        double snr_db = 20.0;
    };

    struct ExperimentConfig
    {
        std::optional<std::uint64_t> seed;
        MeasurementGrid grid{};
        EstimationSettings estimate{};
        ReconstructionSettings reconstruct{};
        LocalizationSettings localize{};
        GenerateSettings generate{};

        std::uint64_t resolved_seed() const
        {
            if (!seed)
                fail_argument("config: no seed given (set \"seed\" or pass --seed)");
            return *seed;
        }
    };

    namespace detail
    {
        inline bool is_non_negative_integer(const json &v)
        {
            return v.is_number_unsigned() || (v.is_number_integer() && v.get<std::int64_t>() >= 0);
        }

        // Reads known keys of one JSON object and rejects the rest.
        class ConfigReader
        {
        public:
            ConfigReader(const json &j, std::string where) : j_(j), where_(std::move(where))
            {
                if (!j_.is_object())
                    fail_argument(where_, ": expected an object");
            }

            template <typename T>
            void get(const char *key, T &value)
            {
                seen_.insert(key);
                if (!j_.contains(key))
                    return;
                if constexpr (std::is_unsigned_v<T> && !std::is_same_v<T, bool>)
                    if (!is_non_negative_integer(j_.at(key)))
                        fail_argument(where_, ".", key, ": expected a non-negative integer");
                try
                {
                    value = j_.at(key).get<T>();
                }
                catch (const json::exception &e)
                {
                    fail_argument(where_, ".", key, ": ", e.what());
                }
            }

            template <typename F>
            void object(const char *key, F &&parse)
            {
                seen_.insert(key);
                if (j_.contains(key))
                    parse(j_.at(key), concat(where_, ".", key));
            }

            ~ConfigReader() noexcept(false)
            {
                if (std::uncaught_exceptions() > 0)
                    return;
                for (const auto &item : j_.items())
                    if (!seen_.count(item.key()))
                        fail_argument(where_, ": unknown key \"", item.key(), "\"");
            }

        private:
            const json &j_;
            std::string where_;
            std::set<std::string> seen_;
        };
    }

    inline json to_json_value(const MeasurementGrid &g)
    {
        return {{"num_packets", g.num_packets},
                {"num_subcarriers", g.num_subcarriers},
                {"num_antennas", g.num_antennas},
                {"packet_interval", g.packet_interval},
                {"subcarrier_spacing", g.subcarrier_spacing},
                {"antenna_spacing", g.antenna_spacing},
                {"carrier_frequency", g.carrier_frequency}};
    }

    inline void from_json_value(const json &j, const std::string &where, MeasurementGrid &g)
    {
        detail::ConfigReader r(j, where);
        r.get("num_packets", g.num_packets);
        r.get("num_subcarriers", g.num_subcarriers);
        r.get("num_antennas", g.num_antennas);
        r.get("packet_interval", g.packet_interval);
        r.get("subcarrier_spacing", g.subcarrier_spacing);
        r.get("antenna_spacing", g.antenna_spacing);
        r.get("carrier_frequency", g.carrier_frequency);
    }

    inline json to_json_value(const EnvironmentConfig &e)
    {
        return {{"num_scatterers", e.num_scatterers},
                {"x_min", e.x_min},
                {"x_max", e.x_max},
                {"y_min", e.y_min},
                {"y_max", e.y_max},
                {"min_reflection", e.min_reflection},
                {"max_reflection", e.max_reflection},
                {"base_station", {{"x", e.base_station.x}, {"y", e.base_station.y}}}};
    }

    inline void from_json_value(const json &j, const std::string &where, Location &l)
    {
        detail::ConfigReader r(j, where);
        r.get("x", l.x);
        r.get("y", l.y);
    }

    inline void from_json_value(const json &j, const std::string &where, EnvironmentConfig &e)
    {
        detail::ConfigReader r(j, where);
        r.get("num_scatterers", e.num_scatterers);
        r.get("x_min", e.x_min);
        r.get("x_max", e.x_max);
        r.get("y_min", e.y_min);
        r.get("y_max", e.y_max);
        r.get("min_reflection", e.min_reflection);
        r.get("max_reflection", e.max_reflection);
        r.object("base_station", [&](const json &v, const std::string &w) { from_json_value(v, w, e.base_station); });
    }

    inline json to_json_value(const MusicConfig &m)
    {
        return {{"window_subcarriers", m.window_subcarriers},
                {"window_antennas", m.window_antennas},
                {"delay_step", m.delay_step},
                {"phi_step", m.phi_step},
                {"model_order", m.model_order_override ? json(*m.model_order_override) : json(nullptr)},
                {"eigenvalue_gap_threshold", m.eigenvalue_gap_threshold},
                {"exclusion_radius", m.exclusion_radius}};
    }

    inline void from_json_value(const json &j, const std::string &where, MusicConfig &m)
    {
        detail::ConfigReader r(j, where);
        r.get("window_subcarriers", m.window_subcarriers);
        r.get("window_antennas", m.window_antennas);
        r.get("delay_step", m.delay_step);
        r.get("phi_step", m.phi_step);
        std::optional<std::size_t> order = m.model_order_override;
        r.object("model_order", [&](const json &v, const std::string &w) {
            if (v.is_null())
                order.reset();
            else if (detail::is_non_negative_integer(v))
                order = v.get<std::size_t>();
            else
                fail_argument(w, ": expected a non-negative integer or null");
        });
        m.model_order_override = order;
        r.get("eigenvalue_gap_threshold", m.eigenvalue_gap_threshold);
        r.get("exclusion_radius", m.exclusion_radius);
    }

    inline json to_json_value(const SageConfig &s)
    {
        return {{"max_iterations", s.max_iterations},       {"convergence_tol", s.convergence_tol},
                {"delay_points", s.delay_points},           {"phi_points", s.phi_points},
                {"doppler_points", s.doppler_points},       {"golden_iterations", s.golden_iterations},
                {"doppler_search_range", s.doppler_search_range}, {"max_delay", s.max_delay}};
    }

    inline void from_json_value(const json &j, const std::string &where, SageConfig &s)
    {
        detail::ConfigReader r(j, where);
        r.get("max_iterations", s.max_iterations);
        r.get("convergence_tol", s.convergence_tol);
        r.get("delay_points", s.delay_points);
        r.get("phi_points", s.phi_points);
        r.get("doppler_points", s.doppler_points);
        r.get("golden_iterations", s.golden_iterations);
        r.get("doppler_search_range", s.doppler_search_range);
        r.get("max_delay", s.max_delay);
    }

    inline json to_json_value(const OptimizerConfig &o)
    {
        return {{"population", o.population}, {"iterations", o.iterations},        {"inertia", o.inertia},
                {"cognitive", o.cognitive},   {"social", o.social},                {"velocity_clamp", o.velocity_clamp},
                {"sigma", o.sigma}};
    }

    inline void from_json_value(const json &j, const std::string &where, OptimizerConfig &o)
    {
        detail::ConfigReader r(j, where);
        r.get("population", o.population);
        r.get("iterations", o.iterations);
        r.get("inertia", o.inertia);
        r.get("cognitive", o.cognitive);
        r.get("social", o.social);
        r.get("velocity_clamp", o.velocity_clamp);
        r.get("sigma", o.sigma);
    }

    inline json to_json_value(const TrainConfig &t)
    {
        return {{"learning_rate", t.learning_rate}, {"beta1", t.beta1},
                {"beta2", t.beta2},                 {"epsilon", t.epsilon},
                {"epochs", t.epochs},               {"batch_size", t.batch_size},
                {"kl_weight", t.kl_weight},         {"final_lr_fraction", t.final_lr_fraction},
                {"validation_fraction", t.validation_fraction}};
    }

    inline void from_json_value(const json &j, const std::string &where, TrainConfig &t)
    {
        detail::ConfigReader r(j, where);
        r.get("learning_rate", t.learning_rate);
        r.get("beta1", t.beta1);
        r.get("beta2", t.beta2);
        r.get("epsilon", t.epsilon);
        r.get("epochs", t.epochs);
        r.get("batch_size", t.batch_size);
        r.get("kl_weight", t.kl_weight);
        r.get("final_lr_fraction", t.final_lr_fraction);
        r.get("validation_fraction", t.validation_fraction);
    }

    inline json to_json_value(const CrossbandConfig &c)
    {
        return {{"vae_latent", c.vae_shape.latent},
                {"vae_hidden", c.vae_shape.hidden},
                {"fnn_hidden", c.fnn_hidden},
                {"burst_start_spread", c.burst_start_spread},
                {"vae_train", to_json_value(c.vae_train)},
                {"fnn_train", to_json_value(c.fnn_train)}};
    }

    inline void from_json_value(const json &j, const std::string &where, CrossbandConfig &c)
    {
        detail::ConfigReader r(j, where);
        r.get("vae_latent", c.vae_shape.latent);
        r.get("vae_hidden", c.vae_shape.hidden);
        r.get("fnn_hidden", c.fnn_hidden);
        r.get("burst_start_spread", c.burst_start_spread);
        r.object("vae_train", [&](const json &v, const std::string &w) { from_json_value(v, w, c.vae_train); });
        r.object("fnn_train", [&](const json &v, const std::string &w) { from_json_value(v, w, c.fnn_train); });
    }

    inline json to_json_value(const LocalizerConfig &c)
    {
        return {{"mode", c.mode == LocalizerMode::knn ? "knn" : "dnn"},
                {"k", c.k},
                {"hidden", c.hidden},
                {"train", to_json_value(c.train)}};
    }

    inline void from_json_value(const json &j, const std::string &where, LocalizerConfig &c)
    {
        detail::ConfigReader r(j, where);
        std::string mode = c.mode == LocalizerMode::knn ? "knn" : "dnn";
        r.get("mode", mode);
        if (mode != "knn" && mode != "dnn")
            fail_argument(where, ".mode: expected \"knn\" or \"dnn\", got \"", mode, "\"");
        c.mode = mode == "knn" ? LocalizerMode::knn : LocalizerMode::dnn;
        r.get("k", c.k);
        r.get("hidden", c.hidden);
        r.object("train", [&](const json &v, const std::string &w) { from_json_value(v, w, c.train); });
    }

    inline json to_json_value(const ExperimentConfig &c)
    {
        const auto &e = c.estimate;
        const auto &r = c.reconstruct;
        const auto &l = c.localize;
        const auto &g = c.generate;
        json out;
        out["seed"] = c.seed ? json(*c.seed) : json(nullptr);
        out["grid"] = to_json_value(c.grid);
        out["estimate"] = {{"measurements", e.measurements}, {"num_paths", e.num_paths},
                           {"snr_db", e.snr_db},             {"speed_kmh", e.speed_kmh},
                           {"known_model_order", e.known_model_order}, {"music", to_json_value(e.music)},
                           {"sage", to_json_value(e.sage)},  {"pso", to_json_value(e.pso)},
                           {"cmaes", to_json_value(e.cmaes)}};
        out["reconstruct"] = {{"environment", to_json_value(r.environment)},
                              {"location_fraction", r.location_fraction},
                              {"train_locations", r.train_locations},
                              {"test_locations", r.test_locations},
                              {"num_paths", r.num_paths},
                              {"snr_db", r.snr_db},
                              {"train_speed_kmh", r.train_speed_kmh},
                              {"low_speed_kmh", r.low_speed_kmh},
                              {"mixed_min_kmh", r.mixed_min_kmh},
                              {"mixed_max_kmh", r.mixed_max_kmh},
                              {"music", to_json_value(r.music)},
                              {"sage", to_json_value(r.sage)},
                              {"models", to_json_value(r.models)},
                              {"save_models", r.save_models}};
        out["localize"] = {{"environment", to_json_value(l.environment)},
                           {"rp_rows", l.rp_rows},
                           {"rp_cols", l.rp_cols},
                           {"rp_spacing", l.rp_spacing},
                           {"center", {{"x", l.center.x}, {"y", l.center.y}}},
                           {"test_half_width", l.test_half_width},
                           {"train_half_width", l.train_half_width},
                           {"test_points", l.test_points},
                           {"queries_per_point", l.queries_per_point},
                           {"samples_per_rp", l.samples_per_rp},
                           {"num_paths", l.num_paths},
                           {"train_locations", l.train_locations},
                           {"db_snr_db", l.db_snr_db},
                           {"query_snr_db", l.query_snr_db},
                           {"speed_kmh", l.speed_kmh},
                           {"music", to_json_value(l.music)},
                           {"sage", to_json_value(l.sage)},
                           {"localizer", to_json_value(l.localizer)},
                           {"models", to_json_value(l.models)},
                           {"save_database", l.save_database}};
        out["generate"] = {{"environment", to_json_value(g.environment)},
                           {"location_fraction", g.location_fraction},
                           {"num_scenes", g.num_scenes},
                           {"num_paths", g.num_paths},
                           {"speed_kmh", g.speed_kmh},
                           {"heading", g.heading},
                           {"snr_db", g.snr_db}};
        return out;
    }

    inline ExperimentConfig config_from_json(const json &j)
    {
        ExperimentConfig c;
        detail::ConfigReader top(j, "config");
        top.object("seed", [&](const json &v, const std::string &w) {
            if (v.is_null())
                c.seed.reset();
            else if (detail::is_non_negative_integer(v))
                c.seed = v.get<std::uint64_t>();
            else
                fail_argument(w, ": expected a non-negative integer");
        });
        top.object("grid", [&](const json &v, const std::string &w) { from_json_value(v, w, c.grid); });
        top.object("estimate", [&](const json &v, const std::string &w) {
            auto &e = c.estimate;
            detail::ConfigReader r(v, w);
            r.get("measurements", e.measurements);
            r.get("num_paths", e.num_paths);
            r.get("snr_db", e.snr_db);
            r.get("speed_kmh", e.speed_kmh);
            r.get("known_model_order", e.known_model_order);
            r.object("music", [&](const json &x, const std::string &y) { from_json_value(x, y, e.music); });
            r.object("sage", [&](const json &x, const std::string &y) { from_json_value(x, y, e.sage); });
            r.object("pso", [&](const json &x, const std::string &y) { from_json_value(x, y, e.pso); });
            r.object("cmaes", [&](const json &x, const std::string &y) { from_json_value(x, y, e.cmaes); });
        });
        top.object("reconstruct", [&](const json &v, const std::string &w) {
            auto &s = c.reconstruct;
            detail::ConfigReader r(v, w);
            r.object("environment", [&](const json &x, const std::string &y) { from_json_value(x, y, s.environment); });
            r.get("location_fraction", s.location_fraction);
            r.get("train_locations", s.train_locations);
            r.get("test_locations", s.test_locations);
            r.get("num_paths", s.num_paths);
            r.get("snr_db", s.snr_db);
            r.get("train_speed_kmh", s.train_speed_kmh);
            r.get("low_speed_kmh", s.low_speed_kmh);
            r.get("mixed_min_kmh", s.mixed_min_kmh);
            r.get("mixed_max_kmh", s.mixed_max_kmh);
            r.object("music", [&](const json &x, const std::string &y) { from_json_value(x, y, s.music); });
            r.object("sage", [&](const json &x, const std::string &y) { from_json_value(x, y, s.sage); });
            r.object("models", [&](const json &x, const std::string &y) { from_json_value(x, y, s.models); });
            r.get("save_models", s.save_models);
        });
        top.object("localize", [&](const json &v, const std::string &w) {
            auto &s = c.localize;
            detail::ConfigReader r(v, w);
            r.object("environment", [&](const json &x, const std::string &y) { from_json_value(x, y, s.environment); });
            r.get("rp_rows", s.rp_rows);
            r.get("rp_cols", s.rp_cols);
            r.get("rp_spacing", s.rp_spacing);
            r.object("center", [&](const json &x, const std::string &y) { from_json_value(x, y, s.center); });
            r.get("test_half_width", s.test_half_width);
            r.get("train_half_width", s.train_half_width);
            r.get("test_points", s.test_points);
            r.get("queries_per_point", s.queries_per_point);
            r.get("samples_per_rp", s.samples_per_rp);
            r.get("num_paths", s.num_paths);
            r.get("train_locations", s.train_locations);
            r.get("db_snr_db", s.db_snr_db);
            r.get("query_snr_db", s.query_snr_db);
            r.get("speed_kmh", s.speed_kmh);
            r.object("music", [&](const json &x, const std::string &y) { from_json_value(x, y, s.music); });
            r.object("sage", [&](const json &x, const std::string &y) { from_json_value(x, y, s.sage); });
            r.object("localizer", [&](const json &x, const std::string &y) { from_json_value(x, y, s.localizer); });
            r.object("models", [&](const json &x, const std::string &y) { from_json_value(x, y, s.models); });
            r.get("save_database", s.save_database);
        });
        top.object("generate", [&](const json &v, const std::string &w) {
            auto &s = c.generate;
            detail::ConfigReader r(v, w);
            r.object("environment", [&](const json &x, const std::string &y) { from_json_value(x, y, s.environment); });
            r.get("location_fraction", s.location_fraction);
            r.get("num_scenes", s.num_scenes);
            r.get("num_paths", s.num_paths);
            r.get("speed_kmh", s.speed_kmh);
            r.get("heading", s.heading);
            r.get("snr_db", s.snr_db);
        });
        c.grid.validate();
        return c;
    }

    inline ExperimentConfig load_config(const std::string &path)
    {
        std::ifstream is(path);
        if (!is)
            fail_argument("cannot open config ", path);
        json j;
        try
        {
            j = json::parse(is);
        }
        catch (const json::parse_error &e)
        {
            fail_argument(path, ": ", e.what());
        }
        return config_from_json(j);
    }

    // 64-bit FNV-1a.
    inline std::uint64_t fnv1a(std::string_view data)
    {
        std::uint64_t h = 0xcbf29ce484222325ull;
        for (unsigned char c : data)
        {
            h ^= c;
            h *= 0x100000001b3ull;
        }
        return h;
    }

    inline std::string hex64(std::uint64_t v)
    {
        std::ostringstream os;
        os << std::hex << std::setw(16) << std::setfill('0') << v;
        return os.str();
    }

    // ------------------------------------------------------------------------------------------
    // Output bookkeeping
    // ------------------------------------------------------------------------------------------

    // Files written by one run, relative to the output directory.
    class OutputSet
    {
    public:
        explicit OutputSet(std::string dir) : dir_(std::move(dir))
        {
            std::filesystem::create_directories(dir_);
        }

        const std::string &dir() const { return dir_; }

        std::string path(const std::string &name) const
        {
            return (std::filesystem::path(dir_) / name).string();
        }

        // Writes a text file through `fill`.
        template <typename F>
        void text(const std::string &name, F &&fill)
        {
            std::filesystem::create_directories(std::filesystem::path(path(name)).parent_path());
            std::ofstream os(path(name));
            if (!os)
                throw std::runtime_error(concat("cannot write ", path(name)));
            os << std::setprecision(17);
            fill(os);
            if (!os)
                throw std::runtime_error(concat("write failed: ", path(name)));
            files_.push_back(name);
        }

        void add(const std::string &name) { files_.push_back(name); }

        // manifest.json: tool version, seed, config hash and a hash of every output.
        void write_manifest(const std::string &command, const ExperimentConfig &config)
        {
            const std::string canonical = to_json_value(config).dump();
            json outputs = json::array();
            std::vector<std::string> sorted = files_;
            std::sort(sorted.begin(), sorted.end());
            for (const auto &f : sorted)
            {
                std::ifstream is(path(f), std::ios::binary);
                const std::string content((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
                outputs.push_back({{"file", f}, {"fnv1a64", hex64(fnv1a(content))}});
            }
            const json m{{"tool", "mbcsi"},
                         {"version", kToolVersion},
                         {"command", command},
                         {"seed", config.resolved_seed()},
                         {"config_hash", hex64(fnv1a(canonical))},
                         {"config", to_json_value(config)},
                         {"format_versions", {{"csif", kCsifVersion}, {"scenes", kSceneFileVersion}, {"csnn", detail::kCsnnVersion}}},
                         {"outputs", outputs}};
            std::ofstream os(path("manifest.json"));
            if (!os)
                throw std::runtime_error(concat("cannot write ", path("manifest.json")));
            os << m.dump(2) << '\n';
        }

    private:
        std::string dir_;
        std::vector<std::string> files_;
    };

    namespace detail
    {
        inline void log_line(std::ostream *log, const std::string &line)
        {
            if (log)
                *log << line << std::endl;
        }

        inline Location uniform_location(Rng &rng, const EnvironmentConfig &e, double fraction)
        {
            const double cx = 0.5 * (e.x_min + e.x_max), cy = 0.5 * (e.y_min + e.y_max);
            const double hx = 0.5 * (e.x_max - e.x_min) * fraction, hy = 0.5 * (e.y_max - e.y_min) * fraction;
            return {uniform(rng, cx - hx, cx + hx), uniform(rng, cy - hy, cy + hy)};
        }

        inline void write_cdf_rows(std::ostream &os, const std::string &prefix, const std::vector<double> &values)
        {
            for (const auto &p : empirical_cdf(values))
                os << prefix << p.value << ',' << p.probability << '\n';
        }
    }

    // ------------------------------------------------------------------------------------------
    // Parameter estimation benchmark
    // ------------------------------------------------------------------------------------------

    inline constexpr std::array<const char *, 4> kEstimators{"music", "sage", "pso", "cmaes"};

    struct EstimationResult
    {
        std::vector<std::array<double, 4>> ccne; // per measurement, in kEstimators order
        std::array<double, 4> mean_ccne{};
    };

    inline EstimationResult run_estimation_benchmark(const ExperimentConfig &config, std::ostream *log = nullptr)
    {
        const auto &s = config.estimate;
        const std::uint64_t seed = config.resolved_seed();
        if (s.measurements == 0)
            fail_argument("estimate.measurements must be >= 1");
        MusicConfig music = s.music;
        if (s.known_model_order)
            music.model_order_override = s.num_paths;

        EstimationResult out;
        for (std::size_t k = 0; k < s.measurements; ++k)
        {
            Rng rng(derive_seed(seed, k));
            SceneConfig sc;
            sc.min_paths = sc.max_paths = s.num_paths;
            sc.speed = kmh_to_ms(s.speed_kmh);
            const auto paths = band_paths(generate_scene(rng, sc), config.grid);
            const auto clean = synth_channel(config.grid, paths);
            ChannelTensor h = clean;
            add_noise(h, noise_std_for_snr(clean, s.snr_db), rng);

            const auto coarse = run_stage("estimate", [&] { return coarse_estimate(h, music); });
            std::vector<PathParams> music_paths;
            for (const auto &p : coarse.paths)
                music_paths.push_back(p.with_doppler(0.0));
            OptimizerConfig pso = s.pso, cma = s.cmaes;
            pso.seed = derive_seed(seed, 1000003 + k);
            cma.seed = derive_seed(seed, 2000003 + k);
            const auto sage = run_stage("estimate", [&] { return sage_refine(h, coarse, s.sage); });
            const auto p = run_stage("estimate", [&] { return baseline_refine(h, coarse, BaselineKind::pso, pso, s.sage); });
            const auto c = run_stage("estimate", [&] { return baseline_refine(h, coarse, BaselineKind::cmaes, cma, s.sage); });
            out.ccne.push_back({ccne(reconstruct(config.grid, music_paths), clean), ccne(reconstruct(config.grid, sage.paths), clean),
                                ccne(reconstruct(config.grid, p.paths), clean), ccne(reconstruct(config.grid, c.paths), clean)});
            if ((k + 1) % 50 == 0)
                detail::log_line(log, concat("estimate: ", k + 1, "/", s.measurements, " measurements"));
        }
        for (std::size_t a = 0; a < 4; ++a)
        {
            std::vector<double> v;
            for (const auto &row : out.ccne)
                v.push_back(row[a]);
            out.mean_ccne[a] = mean(v);
        }
        return out;
    }

    inline void write_estimation_outputs(OutputSet &out, const EstimationResult &r)
    {
        out.text("estimation_samples.csv", [&](std::ostream &os) {
            os << "sample,music_db,sage_db,pso_db,cmaes_db\n";
            for (std::size_t k = 0; k < r.ccne.size(); ++k)
                os << k << ',' << r.ccne[k][0] << ',' << r.ccne[k][1] << ',' << r.ccne[k][2] << ',' << r.ccne[k][3] << '\n';
        });
        out.text("estimation_summary.csv", [&](std::ostream &os) {
            os << "algorithm,mean_ccne_db\n";
            for (std::size_t a = 0; a < 4; ++a)
                os << kEstimators[a] << ',' << r.mean_ccne[a] << '\n';
        });
        out.text("cdf_ccne.csv", [&](std::ostream &os) {
            os << "algorithm,ccne_db,probability\n";
            for (std::size_t a = 0; a < 4; ++a)
            {
                std::vector<double> v;
                for (const auto &row : r.ccne)
                    v.push_back(row[a]);
                detail::write_cdf_rows(os, concat(kEstimators[a], ","), v);
            }
        });
        out.text("estimation_report.json", [&](std::ostream &os) {
            json m;
            for (std::size_t a = 0; a < 4; ++a)
                m[kEstimators[a]] = r.mean_ccne[a];
            os << json{{"measurements", r.ccne.size()}, {"mean_ccne_db", m}}.dump(2) << '\n';
        });
    }

    // ------------------------------------------------------------------------------------------
    // Cross-band reconstruction benchmark
    // ------------------------------------------------------------------------------------------

    inline constexpr std::array<const char *, 3> kVelocityConditions{"matched", "low", "mixed"};

    struct ReconstructionSample
    {
        std::size_t sample = 0;
        std::size_t condition = 0; // index into kVelocityConditions
        double speed_kmh = 0.0;
        bool mobility_removal = true;
        double ccne_db = 0.0;
    };

    struct ReconstructionBenchmark
    {
        std::vector<ReconstructionSample> samples;
        std::array<double, 3> mean_with_removal{};
        std::array<double, 3> mean_without_removal{};
        double spread_with_removal = 0.0;      // max - min over the conditions
        double degradation_without_removal = 0.0; // matched minus the worse mismatched condition
        CrossbandModels with_removal;
        CrossbandModels without_removal;
        std::size_t dropped_paths = 0;
        std::size_t zero_filled_paths = 0;
    };

    inline ReconstructionBenchmark run_reconstruction_benchmark(const ExperimentConfig &config, std::ostream *log = nullptr)
    {
        const auto &s = config.reconstruct;
        const std::uint64_t seed = config.resolved_seed();
        if (s.train_locations == 0 || s.test_locations == 0)
            fail_argument("reconstruct: train_locations and test_locations must be >= 1");
        const MeasurementGrid gn = config.grid;
        const MeasurementGrid gp = paired_band_grid(gn);

        Rng env_rng(derive_seed(seed, 1));
        const Environment env = make_environment(env_rng, s.environment);
        Rng train_rng(derive_seed(seed, 2));
        std::vector<PathPair> train;
        for (std::size_t i = 0; i < s.train_locations; ++i)
        {
            const auto where = detail::uniform_location(train_rng, s.environment, s.location_fraction);
            for (const auto &p : path_pairs(scene_at(env, where, s.num_paths, kmh_to_ms(s.train_speed_kmh), 0.0), gn, gp))
                train.push_back(p);
        }

        ReconstructionBenchmark b;
        CrossbandConfig mc = s.models;
        mc.vae_train.seed = derive_seed(seed, 3);
        mc.fnn_train.seed = derive_seed(seed, 4);
        detail::log_line(log, concat("reconstruct: training on ", train.size(), " path pairs"));
        mc.mobility_removal = true;
        b.with_removal = run_stage("train", [&] { return train_crossband(train, gn, gp, mc); });
        mc.mobility_removal = false;
        b.without_removal = run_stage("train", [&] { return train_crossband(train, gn, gp, mc); });

        ReconstructionConfig rc;
        rc.music = s.music;
        rc.music.model_order_override = s.num_paths;
        rc.sage = s.sage;
        rc.expected_paths = s.num_paths;

        Rng test_rng(derive_seed(seed, 5));
        std::vector<Location> locations;
        for (std::size_t k = 0; k < s.test_locations; ++k)
            locations.push_back(detail::uniform_location(test_rng, s.environment, s.location_fraction));

        std::array<std::vector<double>, 3> with, without;
        for (std::size_t c = 0; c < 3; ++c)
        {
            Rng rng(derive_seed(seed, 10 + c));
            for (std::size_t k = 0; k < locations.size(); ++k)
            {
                const double v = c == 0 ? s.train_speed_kmh : c == 1 ? s.low_speed_kmh : uniform(rng, s.mixed_min_kmh, s.mixed_max_kmh);
                const auto pairs = path_pairs(scene_at(env, locations[k], s.num_paths, kmh_to_ms(v), 0.0), gn, gp);
                std::vector<PathParams> a, bp;
                for (const auto &p : pairs)
                {
                    a.push_back(p.band_n);
                    bp.push_back(p.band_np);
                }
                ChannelTensor hn = synth_channel(gn, a);
                add_noise(hn, noise_std_for_snr(hn, s.snr_db), rng);
                const auto truth = synth_channel(gp, bp, 1);
                const auto r1 = reconstruct_crossband(hn, b.with_removal, rc);
                const auto r2 = reconstruct_crossband(hn, b.without_removal, rc);
                b.dropped_paths += r1.dropped + r2.dropped;
                b.zero_filled_paths += r1.zero_filled + r2.zero_filled;
                with[c].push_back(ccne(r1.dynamic_prediction, truth));
                without[c].push_back(ccne(r2.dynamic_prediction, truth));
                b.samples.push_back({k, c, v, true, with[c].back()});
                b.samples.push_back({k, c, v, false, without[c].back()});
            }
            b.mean_with_removal[c] = mean(with[c]);
            b.mean_without_removal[c] = mean(without[c]);
            detail::log_line(log, concat("reconstruct: ", kVelocityConditions[c], " with removal ", b.mean_with_removal[c],
                                         " dB, without ", b.mean_without_removal[c], " dB"));
        }
        const auto [lo, hi] = std::minmax_element(b.mean_with_removal.begin(), b.mean_with_removal.end());
        b.spread_with_removal = *hi - *lo;
        b.degradation_without_removal =
            b.mean_without_removal[0] - std::min(b.mean_without_removal[1], b.mean_without_removal[2]);
        return b;
    }

    inline void write_reconstruction_outputs(OutputSet &out, const ReconstructionBenchmark &b, bool save_models)
    {
        out.text("reconstruction_samples.csv", [&](std::ostream &os) {
            os << "sample,condition,speed_kmh,mobility_removal,ccne_db\n";
            for (const auto &s : b.samples)
                os << s.sample << ',' << kVelocityConditions[s.condition] << ',' << s.speed_kmh << ','
                   << (s.mobility_removal ? 1 : 0) << ',' << s.ccne_db << '\n';
        });
        out.text("cdf_ccne.csv", [&](std::ostream &os) {
            os << "condition,mobility_removal,ccne_db,probability\n";
            for (int removal = 1; removal >= 0; --removal)
                for (std::size_t c = 0; c < 3; ++c)
                {
                    std::vector<double> v;
                    for (const auto &s : b.samples)
                        if (s.condition == c && s.mobility_removal == (removal == 1))
                            v.push_back(s.ccne_db);
                    detail::write_cdf_rows(os, concat(kVelocityConditions[c], ",", removal, ","), v);
                }
        });
        out.text("reconstruction_report.json", [&](std::ostream &os) {
            json conds = json::array();
            for (std::size_t c = 0; c < 3; ++c)
                conds.push_back({{"condition", kVelocityConditions[c]},
                                 {"mean_ccne_with_removal_db", b.mean_with_removal[c]},
                                 {"mean_ccne_without_removal_db", b.mean_without_removal[c]}});
            os << json{{"conditions", conds},
                       {"spread_with_removal_db", b.spread_with_removal},
                       {"degradation_without_removal_db", b.degradation_without_removal},
                       {"dropped_paths", b.dropped_paths},
                       {"zero_filled_paths", b.zero_filled_paths},
                       {"vae_validation_loss_with_removal", b.with_removal.vae.curve.back().validation_loss},
                       {"vae_validation_loss_without_removal", b.without_removal.vae.curve.back().validation_loss},
                       {"fnn_validation_loss", b.with_removal.fnn.curve.back().validation_loss}}
                      .dump(2)
               << '\n';
        });
        if (!save_models)
            return;
        std::filesystem::create_directories(out.path("models"));
        auto save = [&](const std::string &stem, const auto &model) {
            save_model(out.path(stem), model);
            out.add(stem + ".csnn");
            out.add(stem + ".json");
            out.text(stem + "_curve.csv", [&](std::ostream &os) { write_training_curve(os, model.curve); });
        };
        save("models/vae_removal", b.with_removal.vae);
        save("models/fnn_removal", b.with_removal.fnn);
        save("models/vae_no_removal", b.without_removal.vae);
    }

    // ------------------------------------------------------------------------------------------
    // Localization benchmark
    // ------------------------------------------------------------------------------------------

    inline constexpr std::array<const char *, 4> kLocalizationConditions{"multi_band", "spliced", "single_band_n",
                                                                         "single_band_np"};

    // Grid of one packet: the static fingerprint layout.
    inline MeasurementGrid snapshot_grid(MeasurementGrid g)
    {
        g.num_packets = 1;
        return g;
    }

    // Static channel of a path set on a one-packet grid.
    inline ChannelTensor static_snapshot(const MeasurementGrid &grid, std::vector<PathParams> paths, int band_id)
    {
        for (auto &p : paths)
            p.doppler = 0.0;
        return synth_channel(snapshot_grid(grid), paths, band_id);
    }

    inline ChannelTensor first_packet(const ChannelTensor &t)
    {
        const MeasurementGrid g = snapshot_grid(t.grid());
        return ChannelTensor(g, std::vector<cplx>(t.values().begin(), t.values().begin() + static_cast<long>(g.size())),
                             t.band_id());
    }

    struct LocalizationBenchmark
    {
        std::array<LocalizationReport, 4> reports; // kLocalizationConditions order
        std::vector<std::size_t> test_point;       // per query
        std::vector<Location> truth;               // per query
        double prediction_ccne_db = 0.0;           // mean CCNE of the predicted band-n' snapshot
        double validation_error_m = 0.0;           // two-band localizer, held-out DB records
        FingerprintDB db;
    };

    inline LocalizationBenchmark run_localization_benchmark(const ExperimentConfig &config, std::ostream *log = nullptr)
    {
        const auto &s = config.localize;
        const std::uint64_t seed = config.resolved_seed();
        if (s.rp_rows == 0 || s.rp_cols == 0)
            fail_argument("localize: no reference points");
        if (s.test_points == 0 || s.queries_per_point == 0)
            fail_argument("localize: empty test set");
        const MeasurementGrid gn = config.grid;
        const MeasurementGrid gp = paired_band_grid(gn);
        const MeasurementGrid sn = snapshot_grid(gn), sp = snapshot_grid(gp);

        Rng env_rng(derive_seed(seed, 1));
        const Environment env = make_environment(env_rng, s.environment);
        std::vector<Scene> rps;
        for (std::size_t i = 0; i < s.rp_cols; ++i)
            for (std::size_t j = 0; j < s.rp_rows; ++j)
            {
                const Location where{s.center.x + (static_cast<double>(i) - 0.5 * static_cast<double>(s.rp_cols - 1)) * s.rp_spacing,
                                     s.center.y + (static_cast<double>(j) - 0.5 * static_cast<double>(s.rp_rows - 1)) * s.rp_spacing};
                rps.push_back(scene_at(env, where, s.num_paths, 0.0, 0.0));
            }

        LocalizationBenchmark b;
        DbConfig dc;
        dc.samples_per_rp = s.samples_per_rp;
        dc.snr_db = {s.db_snr_db};
        dc.seed = derive_seed(seed, 2);
        b.db = run_stage("database", [&] { return build_db(rps, {sn, sp}, dc); });
        const auto models = run_stage("train", [&] {
            const auto both = train_localizer(b.db, s.localizer);
            return std::array<LocalizerModel, 3>{both, train_localizer(select_bands(b.db, {0}), s.localizer),
                                                 train_localizer(select_bands(b.db, {1}), s.localizer)};
        });
        b.validation_error_m = models[0].validation_error;

        Rng train_rng(derive_seed(seed, 3));
        std::vector<PathPair> train;
        for (std::size_t i = 0; i < s.train_locations; ++i)
        {
            const Location where{s.center.x + uniform(train_rng, -s.train_half_width, s.train_half_width),
                                 s.center.y + uniform(train_rng, -s.train_half_width, s.train_half_width)};
            for (const auto &p : path_pairs(scene_at(env, where, s.num_paths, kmh_to_ms(s.speed_kmh), 0.0), gn, gp))
                train.push_back(p);
        }
        CrossbandConfig mc = s.models;
        mc.mobility_removal = true;
        mc.vae_train.seed = derive_seed(seed, 4);
        mc.fnn_train.seed = derive_seed(seed, 5);
        detail::log_line(log, concat("localize: training cross-band models on ", train.size(), " path pairs"));
        const auto crossband = run_stage("train", [&] { return train_crossband(train, gn, gp, mc); });

        ReconstructionConfig rc;
        rc.music = s.music;
        rc.music.model_order_override = s.num_paths;
        rc.sage = s.sage;
        rc.expected_paths = s.num_paths;

        std::array<std::vector<LocalizationQuery>, 4> queries;
        Rng rng(derive_seed(seed, 6));
        double pred_sum = 0.0;
        for (std::size_t t = 0; t < s.test_points; ++t)
        {
            const Location where{s.center.x + uniform(rng, -s.test_half_width, s.test_half_width),
                                 s.center.y + uniform(rng, -s.test_half_width, s.test_half_width)};
            const auto pairs = path_pairs(scene_at(env, where, s.num_paths, kmh_to_ms(s.speed_kmh), 0.0), gn, gp);
            std::vector<PathParams> a, bp;
            for (const auto &p : pairs)
            {
                a.push_back(p.band_n);
                bp.push_back(p.band_np);
            }
            const auto clean_n = synth_channel(gn, a), clean_p = synth_channel(gp, bp, 1);
            const auto truth_p = static_snapshot(gp, bp, 1);
            for (std::size_t q = 0; q < s.queries_per_point; ++q)
            {
                ChannelTensor hn = clean_n, hp = clean_p;
                add_noise(hn, noise_std_for_snr(clean_n, s.query_snr_db), rng);
                add_noise(hp, noise_std_for_snr(clean_p, s.query_snr_db), rng);
                const auto r = reconstruct_crossband(hn, crossband, rc);
                const auto est_p = run_stage("estimate", [&] { return sage_refine(hp, coarse_estimate(hp, rc.music), rc.sage); });
                const auto static_n = static_snapshot(gn, r.band_n_paths, 0);
                const auto static_p = static_snapshot(gp, est_p.paths, 1);
                const auto predicted_p = first_packet(r.static_prediction);
                pred_sum += ccne(predicted_p, truth_p);
                queries[0].push_back({where, {static_n, static_p}});
                queries[1].push_back({where, {static_n, predicted_p}});
                queries[2].push_back({where, {static_n}});
                queries[3].push_back({where, {static_p}});
                b.test_point.push_back(t);
                b.truth.push_back(where);
            }
            if ((t + 1) % 16 == 0)
                detail::log_line(log, concat("localize: ", t + 1, "/", s.test_points, " test points"));
        }
        b.prediction_ccne_db = pred_sum / static_cast<double>(b.test_point.size());
        for (std::size_t c = 0; c < 4; ++c)
            b.reports[c] = evaluate_localization(models[c == 0 || c == 1 ? 0 : c - 1], queries[c]);
        return b;
    }

    inline void write_localization_outputs(OutputSet &out, const LocalizationBenchmark &b, bool save_database)
    {
        out.text("localization_samples.csv", [&](std::ostream &os) {
            os << "condition,query,test_point,error_m\n";
            for (std::size_t c = 0; c < 4; ++c)
                for (std::size_t i = 0; i < b.reports[c].errors.size(); ++i)
                    os << kLocalizationConditions[c] << ',' << i << ',' << b.test_point[i] << ',' << b.reports[c].errors[i] << '\n';
        });
        out.text("cdf_locerr.csv", [&](std::ostream &os) {
            os << "condition,error_m,probability\n";
            for (std::size_t c = 0; c < 4; ++c)
                detail::write_cdf_rows(os, concat(kLocalizationConditions[c], ","), b.reports[c].errors);
        });
        out.text("localization_report.json", [&](std::ostream &os) {
            json m;
            for (std::size_t c = 0; c < 4; ++c)
                m[kLocalizationConditions[c]] = b.reports[c].mean_error;
            os << json{{"mean_error_m", m},
                       {"queries", b.test_point.size()},
                       {"prediction_ccne_db", b.prediction_ccne_db},
                       {"validation_error_m", b.validation_error_m}}
                      .dump(2)
               << '\n';
        });
        if (!save_database)
            return;
        save_db(out.path("database"), b.db);
        for (const auto &entry : std::filesystem::directory_iterator(out.path("database")))
            out.add("database/" + entry.path().filename().string());
    }

    // ------------------------------------------------------------------------------------------
    // Dataset generation
    // ------------------------------------------------------------------------------------------

    // Noisy mobile measurements on both bands plus the scene sidecar.
    inline void run_generate(const ExperimentConfig &config, OutputSet &out, std::ostream *log = nullptr)
    {
        const auto &s = config.generate;
        const std::uint64_t seed = config.resolved_seed();
        const MeasurementGrid gn = config.grid;
        const MeasurementGrid gp = paired_band_grid(gn);
        Rng rng(derive_seed(seed, 1));
        const Environment env = make_environment(rng, s.environment);
        std::vector<Scene> scenes;
        std::filesystem::create_directories(out.path("tensors"));
        for (std::size_t k = 0; k < s.num_scenes; ++k)
        {
            const auto where = detail::uniform_location(rng, s.environment, s.location_fraction);
            scenes.push_back(scene_at(env, where, s.num_paths, kmh_to_ms(s.speed_kmh), s.heading));
            for (const auto &[b, g] : {std::pair{0, gn}, std::pair{1, gp}})
            {
                ChannelTensor h = synth_channel(g, band_paths(scenes.back(), g, gn.carrier_frequency), b);
                add_noise(h, noise_std_for_snr(h, s.snr_db), rng);
                std::ostringstream name;
                name << "tensors/scene_" << std::setw(6) << std::setfill('0') << k << "_band" << b << ".csif";
                save_tensor(out.path(name.str()), h);
                out.add(name.str());
            }
        }
        save_scenes(out.path("scenes.json"), scenes);
        out.add("scenes.json");
        detail::log_line(log, concat("generate: ", s.num_scenes, " scenes"));
    }
}

#endif
