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

#ifndef MBCSI_LOCALIZATION_HPP
#define MBCSI_LOCALIZATION_HPP

#include "mbcsi/metrics.hpp"
#include "mbcsi/neural.hpp"
#include "mbcsi/tensor_io.hpp"

#include <filesystem>
#include <iomanip>

// Fingerprint localization over static multi-band CSI: a database of noisy samples per reference
// point, and a kNN matcher or DNN regressor from features to location.

namespace mbcsi
{
    // Static (mobility-free) channel of a scene on each band. Carrier phases are taken relative to
    // `phase_reference`, normally the carrier of the first band.
    inline std::vector<ChannelTensor> static_fingerprint(const Scene &scene, const std::vector<MeasurementGrid> &bands,
                                                         double phase_reference)
    {
        std::vector<ChannelTensor> out;
        for (std::size_t b = 0; b < bands.size(); ++b)
        {
            auto paths = band_paths(scene, bands[b], phase_reference);
            for (auto &p : paths)
                p.doppler = 0.0;
            out.push_back(synth_channel(bands[b], paths, static_cast<int>(b)));
        }
        return out;
    }

    struct FingerprintRecord
    {
        std::size_t reference_point = 0;
        Location location;
        std::vector<ChannelTensor> bands;
    };

    struct FingerprintDB
    {
        std::vector<MeasurementGrid> bands;
        std::vector<Location> reference_points;
        std::vector<FingerprintRecord> records;

        void validate() const
        {
            if (bands.empty())
                fail_argument("FingerprintDB: no bands");
            if (records.empty())
                fail_argument("FingerprintDB: no records");
            for (std::size_t i = 0; i < reference_points.size(); ++i)
                for (std::size_t j = 0; j < i; ++j)
                    if (reference_points[i] == reference_points[j])
                        fail_argument("FingerprintDB: duplicate reference point (", reference_points[i].x, ", ",
                                      reference_points[i].y, ")");
            for (const auto &r : records)
            {
                if (r.bands.size() != bands.size())
                    fail_argument("FingerprintDB: record with ", r.bands.size(), " bands, expected ", bands.size());
                for (std::size_t b = 0; b < bands.size(); ++b)
                    if (r.bands[b].grid() != bands[b])
                        fail_argument("FingerprintDB: record grid differs from band ", b);
                if (r.reference_point >= reference_points.size() || !(r.location == reference_points[r.reference_point]))
                    fail_argument("FingerprintDB: record does not match its reference point");
            }
        }
    };

    struct DbConfig
    {
        std::size_t samples_per_rp = 200;
        std::vector<double> snr_db{20.0}; // per band; a single value applies to all bands
        std::uint64_t seed = 1;

        double snr_for(std::size_t band) const
        {
            if (snr_db.empty())
                fail_argument("DbConfig: no SNR given");
            return snr_db.size() == 1 ? snr_db[0] : snr_db.at(band);
        }
    };

    // One noisy sample of every band at `scene`.
    inline std::vector<ChannelTensor> noisy_fingerprint(const std::vector<ChannelTensor> &clean,
                                                        const std::vector<double> &noise_std, Rng &rng)
    {
        std::vector<ChannelTensor> out = clean;
        for (std::size_t b = 0; b < out.size(); ++b)
            add_noise(out[b], noise_std[b], rng);
        return out;
    }

    inline FingerprintDB build_db(const std::vector<Scene> &reference_scenes, const std::vector<MeasurementGrid> &bands,
                                  const DbConfig &config)
    {
        if (reference_scenes.empty())
            fail_argument("build_db: no reference points");
        if (bands.empty())
            fail_argument("build_db: no bands");
        if (config.samples_per_rp == 0)
            fail_argument("build_db: samples_per_rp must be >= 1");
        if (config.snr_db.size() != 1 && config.snr_db.size() != bands.size())
            fail_argument("build_db: ", config.snr_db.size(), " SNR values for ", bands.size(), " bands");

        FingerprintDB db;
        db.bands = bands;
        for (const auto &s : reference_scenes)
            db.reference_points.push_back(s.location);
        Rng rng(config.seed);
        for (std::size_t rp = 0; rp < reference_scenes.size(); ++rp)
        {
            const auto clean = static_fingerprint(reference_scenes[rp], bands, bands[0].carrier_frequency);
            std::vector<double> noise_std;
            for (std::size_t b = 0; b < bands.size(); ++b)
                noise_std.push_back(noise_std_for_snr(clean[b], config.snr_for(b)));
            for (std::size_t s = 0; s < config.samples_per_rp; ++s)
                db.records.push_back({rp, reference_scenes[rp].location, noisy_fingerprint(clean, noise_std, rng)});
        }
        db.validate();
        return db;
    }

    // Keeps only the listed bands, in the given order.
    inline FingerprintDB select_bands(const FingerprintDB &db, const std::vector<std::size_t> &keep)
    {
        FingerprintDB out;
        out.reference_points = db.reference_points;
        for (auto b : keep)
            out.bands.push_back(db.bands.at(b));
        for (const auto &r : db.records)
        {
            FingerprintRecord q{r.reference_point, r.location, {}};
            for (auto b : keep)
                q.bands.push_back(r.bands.at(b));
            out.records.push_back(std::move(q));
        }
        return out;
    }

    // Re/im flattening of every band, concatenated in band order.
    inline VectorXd featurize(std::span<const ChannelTensor> bands)
    {
        if (bands.empty())
            fail_argument("featurize: no bands");
        std::size_t total = 0;
        for (const auto &t : bands)
        {
            bands[0].check_same_shape(t);
            total += 2 * t.size();
        }
        VectorXd out(static_cast<Eigen::Index>(total));
        Eigen::Index k = 0;
        for (const auto &t : bands)
            for (const auto &v : t.values())
            {
                out(k++) = v.real();
                out(k++) = v.imag();
            }
        return out;
    }

    // ------------------------------------------------------------------------------------------
    // Localizer
    // ------------------------------------------------------------------------------------------

    enum class LocalizerMode
    {
        knn,
        dnn
    };

    struct LocalizerConfig
    {
        LocalizerMode mode = LocalizerMode::knn;
        std::size_t k = 5;
        std::vector<std::size_t> hidden{128, 64};
        TrainConfig train{};

        void validate() const
        {
            if (k == 0)
                fail_argument("LocalizerConfig: k must be >= 1");
            if (mode == LocalizerMode::dnn)
                train.validate();
        }
    };

    struct LocalizerModel
    {
        LocalizerMode mode = LocalizerMode::knn;
        std::size_t k = 5;
        std::vector<MeasurementGrid> bands;
        Standardizer stats;              // kNN feature normalization
        MatrixXd features;               // kNN: normalized, one record per column
        Eigen::VectorXd feature_norms;   // squared column norms of `features`
        std::vector<Location> locations; // kNN: record locations
        MlpModel dnn;
        double validation_error = 0.0;   // mean error [m] on held-out records

        void check_query(std::span<const ChannelTensor> query) const
        {
            if (query.size() != bands.size())
                fail_argument("localize: query has ", query.size(), " bands, model expects ", bands.size());
            for (std::size_t b = 0; b < bands.size(); ++b)
                if (query[b].grid() != bands[b])
                    fail_argument("localize: query band ", b, " does not match the model's band grid");
        }

        // One location per column of raw features.
        std::vector<Location> predict(const MatrixXd &raw) const
        {
            std::vector<Location> out(static_cast<std::size_t>(raw.cols()));
            if (mode == LocalizerMode::dnn)
            {
                const MatrixXd y = dnn.predict(raw);
                for (Eigen::Index i = 0; i < raw.cols(); ++i)
                    out[static_cast<std::size_t>(i)] = {y(0, i), y(1, i)};
                return out;
            }
            const MatrixXd q = stats.apply(raw);
            const MatrixXd cross = features.transpose() * q;
            const std::size_t kk = std::min<std::size_t>(k, locations.size());
            std::vector<std::pair<double, std::size_t>> d(locations.size());
            for (Eigen::Index i = 0; i < q.cols(); ++i)
            {
                for (std::size_t n = 0; n < d.size(); ++n)
                {
                    const auto nn = static_cast<Eigen::Index>(n);
                    d[n] = {feature_norms(nn) - 2.0 * cross(nn, i), n};
                }
                std::partial_sort(d.begin(), d.begin() + static_cast<long>(kk), d.end());
                Location sum;
                for (std::size_t j = 0; j < kk; ++j)
                {
                    sum.x += locations[d[j].second].x;
                    sum.y += locations[d[j].second].y;
                }
                out[static_cast<std::size_t>(i)] = {sum.x / static_cast<double>(kk), sum.y / static_cast<double>(kk)};
            }
            return out;
        }
    };

    namespace detail
    {
        inline MatrixXd db_features(const FingerprintDB &db, const std::vector<std::size_t> &rows)
        {
            const auto first = featurize(db.records[rows.at(0)].bands);
            MatrixXd x(first.size(), static_cast<Eigen::Index>(rows.size()));
            for (std::size_t i = 0; i < rows.size(); ++i)
                x.col(static_cast<Eigen::Index>(i)) = featurize(db.records[rows[i]].bands);
            return x;
        }

        inline LocalizerModel fit_localizer(const FingerprintDB &db, const std::vector<std::size_t> &rows,
                                            const LocalizerConfig &config)
        {
            LocalizerModel m;
            m.mode = config.mode;
            m.k = config.k;
            m.bands = db.bands;
            const MatrixXd x = db_features(db, rows);
            if (config.mode == LocalizerMode::knn)
            {
                m.stats = Standardizer::fit(x);
                m.features = m.stats.apply(x);
                m.feature_norms = m.features.colwise().squaredNorm().transpose();
                for (auto r : rows)
                    m.locations.push_back(db.records[r].location);
            }
            else
            {
                MatrixXd y(2, x.cols());
                for (std::size_t i = 0; i < rows.size(); ++i)
                    y.col(static_cast<Eigen::Index>(i)) << db.records[rows[i]].location.x, db.records[rows[i]].location.y;
                m.dnn = train_mlp(x, y, config.hidden, config.train);
            }
            return m;
        }
    }

    // kNN indexes every record; the DNN is trained on all but the held-out tenth. The held-out records
    // (every tenth) give the logged validation error in both modes.
    inline LocalizerModel train_localizer(const FingerprintDB &db, const LocalizerConfig &config)
    {
        config.validate();
        db.validate();
        if (config.mode == LocalizerMode::dnn && db.reference_points.size() < 2)
            fail_argument("train_localizer: a DNN needs at least two distinct locations");

        std::vector<std::size_t> fit, held;
        for (std::size_t i = 0; i < db.records.size(); ++i)
            (db.records.size() >= 10 && i % 10 == 9 ? held : fit).push_back(i);

        LocalizerModel m = detail::fit_localizer(db, fit, config);
        if (!held.empty())
        {
            const auto pred = m.predict(detail::db_features(db, held));
            double sum = 0.0;
            for (std::size_t i = 0; i < held.size(); ++i)
                sum += distance(pred[i], db.records[held[i]].location);
            m.validation_error = sum / static_cast<double>(held.size());
        }
        if (config.mode == LocalizerMode::knn && !held.empty())
        {
            std::vector<std::size_t> all(db.records.size());
            std::iota(all.begin(), all.end(), std::size_t{0});
            const double v = m.validation_error;
            m = detail::fit_localizer(db, all, config);
            m.validation_error = v;
        }
        return m;
    }

    inline Location localize(const LocalizerModel &model, std::span<const ChannelTensor> query)
    {
        model.check_query(query);
        return model.predict(featurize(query))[0];
    }

    // ------------------------------------------------------------------------------------------
    // Evaluation
    // ------------------------------------------------------------------------------------------

    struct LocalizationQuery
    {
        Location truth;
        std::vector<ChannelTensor> bands;
    };

    struct LocalizationReport
    {
        std::vector<double> errors; // per query, input order
        double mean_error = 0.0;
        std::vector<CdfPoint> cdf;
    };

    inline LocalizationReport report_from_errors(std::vector<double> errors)
    {
        if (errors.empty())
            fail_argument("evaluate_localization: empty test set");
        LocalizationReport r;
        r.mean_error = mean(errors);
        r.cdf = empirical_cdf(errors);
        r.errors = std::move(errors);
        return r;
    }

    inline LocalizationReport evaluate_localization(const LocalizerModel &model,
                                                    const std::vector<LocalizationQuery> &queries)
    {
        if (queries.empty())
            fail_argument("evaluate_localization: empty test set");
        MatrixXd x;
        for (std::size_t i = 0; i < queries.size(); ++i)
        {
            model.check_query(queries[i].bands);
            const VectorXd f = featurize(queries[i].bands);
            if (i == 0)
                x.resize(f.size(), static_cast<Eigen::Index>(queries.size()));
            x.col(static_cast<Eigen::Index>(i)) = f;
        }
        const auto pred = model.predict(x);
        std::vector<double> errors;
        for (std::size_t i = 0; i < queries.size(); ++i)
            errors.push_back(distance(pred[i], queries[i].truth));
        return report_from_errors(std::move(errors));
    }

    inline void write_error_csv(std::ostream &os, const LocalizationReport &r)
    {
        os << "query,error_m\n" << std::setprecision(17);
        for (std::size_t i = 0; i < r.errors.size(); ++i)
            os << i << ',' << r.errors[i] << '\n';
    }

    // ------------------------------------------------------------------------------------------
    // Database directory: index.json plus one .csif file per record and band
    // ------------------------------------------------------------------------------------------

    inline void save_db(const std::string &dir, const FingerprintDB &db)
    {
        namespace fs = std::filesystem;
        db.validate();
        fs::create_directories(dir);
        nlohmann::json bands = nlohmann::json::array();
        for (const auto &g : db.bands)
            bands.push_back({{"num_packets", g.num_packets},
                             {"num_subcarriers", g.num_subcarriers},
                             {"num_antennas", g.num_antennas},
                             {"carrier_frequency", g.carrier_frequency},
                             {"packet_interval", g.packet_interval},
                             {"subcarrier_spacing", g.subcarrier_spacing},
                             {"antenna_spacing", g.antenna_spacing}});
        nlohmann::json rps = nlohmann::json::array();
        for (const auto &p : db.reference_points)
            rps.push_back({{"x", p.x}, {"y", p.y}});
        nlohmann::json records = nlohmann::json::array();
        for (std::size_t i = 0; i < db.records.size(); ++i)
        {
            nlohmann::json files = nlohmann::json::array();
            for (std::size_t b = 0; b < db.bands.size(); ++b)
            {
                std::ostringstream name;
                name << "r" << std::setw(6) << std::setfill('0') << i << "_b" << b << ".csif";
                save_tensor((fs::path(dir) / name.str()).string(), db.records[i].bands[b]);
                files.push_back(name.str());
            }
            records.push_back({{"reference_point", db.records[i].reference_point}, {"files", files}});
        }
        const nlohmann::json index{{"version", 1}, {"bands", bands}, {"reference_points", rps}, {"records", records}};
        std::ofstream os(fs::path(dir) / "index.json");
        if (!os)
            throw std::runtime_error(concat("cannot write ", dir, "/index.json"));
        os << index.dump(2) << '\n';
    }

    inline FingerprintDB load_db(const std::string &dir)
    {
        namespace fs = std::filesystem;
        const auto path = fs::path(dir) / "index.json";
        std::ifstream is(path);
        if (!is)
            throw std::runtime_error(concat("cannot open ", path.string()));
        FingerprintDB db;
        try
        {
            const auto j = nlohmann::json::parse(is);
            if (j.at("version").get<int>() != 1)
                throw std::runtime_error(concat("unsupported database version ", j.at("version").dump()));
            for (const auto &b : j.at("bands"))
            {
                MeasurementGrid g;
                g.num_packets = b.at("num_packets").get<std::size_t>();
                g.num_subcarriers = b.at("num_subcarriers").get<std::size_t>();
                g.num_antennas = b.at("num_antennas").get<std::size_t>();
                g.carrier_frequency = b.at("carrier_frequency").get<double>();
                g.packet_interval = b.at("packet_interval").get<double>();
                g.subcarrier_spacing = b.at("subcarrier_spacing").get<double>();
                g.antenna_spacing = b.at("antenna_spacing").get<double>();
                db.bands.push_back(g);
            }
            for (const auto &p : j.at("reference_points"))
                db.reference_points.push_back({p.at("x").get<double>(), p.at("y").get<double>()});
            for (const auto &r : j.at("records"))
            {
                FingerprintRecord rec;
                rec.reference_point = r.at("reference_point").get<std::size_t>();
                rec.location = db.reference_points.at(rec.reference_point);
                for (const auto &f : r.at("files"))
                    rec.bands.push_back(load_tensor((fs::path(dir) / f.get<std::string>()).string()));
                db.records.push_back(std::move(rec));
            }
        }
        catch (const nlohmann::json::exception &e)
        {
            throw std::runtime_error(concat(path.string(), ": ", e.what()));
        }
        catch (const std::out_of_range &e)
        {
            throw std::runtime_error(concat(path.string(), ": ", e.what()));
        }
        db.validate();
        return db;
    }
}

#endif
