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

#ifndef MBCSI_TENSOR_IO_HPP
#define MBCSI_TENSOR_IO_HPP

#include "mbcsi/chanmodel.hpp"

#include <fstream>

#include "json.hpp"

// Tensor container (.csif), little-endian:
//   char[4] "CSIF", u32 version, i32 band_id, u32 T, u32 F, u32 S,
//   f64 carrier_frequency, f64 packet_interval, f64 subcarrier_spacing, f64 antenna_spacing,
//   T*F*S x (f64 re, f64 im) in (t, f, a) order.
// Scene sidecar (.json): {"version": 1, "scenes": [{"location": {"x", "y"}, "speed", "heading",
//   "paths": [{"alpha_re", "alpha_im", "tau", "phi", "azimuth"}]}]}.

namespace mbcsi
{
    inline constexpr std::uint32_t kCsifVersion = 1;
    inline constexpr int kSceneFileVersion = 1;
    inline constexpr std::size_t kMaxCsifEntries = std::size_t{1} << 28;

    inline void write_tensor(std::ostream &os, const ChannelTensor &t)
    {
        const auto &g = t.grid();
        os.write("CSIF", 4);
        detail::write_pod(os, kCsifVersion);
        detail::write_pod(os, static_cast<std::int32_t>(t.band_id()));
        detail::write_pod(os, static_cast<std::uint32_t>(g.num_packets));
        detail::write_pod(os, static_cast<std::uint32_t>(g.num_subcarriers));
        detail::write_pod(os, static_cast<std::uint32_t>(g.num_antennas));
        detail::write_pod(os, g.carrier_frequency);
        detail::write_pod(os, g.packet_interval);
        detail::write_pod(os, g.subcarrier_spacing);
        detail::write_pod(os, g.antenna_spacing);
        for (const auto &v : t.values())
        {
            detail::write_pod(os, v.real());
            detail::write_pod(os, v.imag());
        }
    }

    inline ChannelTensor read_tensor(std::istream &is)
    {
        char magic[4] = {};
        is.read(magic, 4);
        if (!is || std::string(magic, 4) != "CSIF")
            throw std::runtime_error("not a CSIF tensor");
        const auto version = detail::read_pod<std::uint32_t>(is);
        if (version != kCsifVersion)
            throw std::runtime_error(concat("unsupported CSIF version ", version));
        const auto band = detail::read_pod<std::int32_t>(is);
        MeasurementGrid g;
        g.num_packets = detail::read_pod<std::uint32_t>(is);
        g.num_subcarriers = detail::read_pod<std::uint32_t>(is);
        g.num_antennas = detail::read_pod<std::uint32_t>(is);
        g.carrier_frequency = detail::read_pod<double>(is);
        g.packet_interval = detail::read_pod<double>(is);
        g.subcarrier_spacing = detail::read_pod<double>(is);
        g.antenna_spacing = detail::read_pod<double>(is);
        try
        {
            g.validate();
        }
        catch (const std::invalid_argument &e)
        {
            throw std::runtime_error(concat("CSIF header: ", e.what()));
        }
        if (g.size() > kMaxCsifEntries)
            throw std::runtime_error(concat("CSIF header: implausible size ", g.size()));
        std::vector<cplx> values(g.size());
        for (auto &v : values)
        {
            const double re = detail::read_pod<double>(is);
            v = {re, detail::read_pod<double>(is)};
        }
        return ChannelTensor(g, std::move(values), band);
    }

    inline void save_tensor(const std::string &path, const ChannelTensor &t)
    {
        std::ofstream os(path, std::ios::binary);
        if (!os)
            throw std::runtime_error(concat("cannot write ", path));
        write_tensor(os, t);
        if (!os)
            throw std::runtime_error(concat("write failed: ", path));
    }

    inline ChannelTensor load_tensor(const std::string &path)
    {
        std::ifstream is(path, std::ios::binary);
        if (!is)
            throw std::runtime_error(concat("cannot open ", path));
        try
        {
            return read_tensor(is);
        }
        catch (const std::runtime_error &e)
        {
            throw std::runtime_error(concat(path, ": ", e.what()));
        }
    }

    // ------------------------------------------------------------------------------------------
    // Scene sidecar
    // ------------------------------------------------------------------------------------------

    inline nlohmann::json scene_to_json(const Scene &s)
    {
        nlohmann::json paths = nlohmann::json::array();
        for (const auto &p : s.paths)
            paths.push_back({{"alpha_re", p.params.alpha.real()},
                             {"alpha_im", p.params.alpha.imag()},
                             {"tau", p.params.tau},
                             {"phi", p.params.phi},
                             {"azimuth", p.azimuth}});
        return {{"location", {{"x", s.location.x}, {"y", s.location.y}}},
                {"speed", s.speed},
                {"heading", s.heading},
                {"paths", paths}};
    }

    inline Scene scene_from_json(const nlohmann::json &j)
    {
        Scene s;
        s.location = {j.at("location").at("x").get<double>(), j.at("location").at("y").get<double>()};
        s.speed = j.at("speed").get<double>();
        s.heading = j.at("heading").get<double>();
        for (const auto &p : j.at("paths"))
        {
            ScenePath q;
            q.params.alpha = {p.at("alpha_re").get<double>(), p.at("alpha_im").get<double>()};
            q.params.tau = p.at("tau").get<double>();
            q.params.phi = p.at("phi").get<double>();
            q.azimuth = p.at("azimuth").get<double>();
            s.paths.push_back(q);
        }
        return s;
    }

    inline void save_scenes(const std::string &path, const std::vector<Scene> &scenes)
    {
        nlohmann::json j{{"version", kSceneFileVersion}, {"scenes", nlohmann::json::array()}};
        for (const auto &s : scenes)
            j["scenes"].push_back(scene_to_json(s));
        std::ofstream os(path);
        if (!os)
            throw std::runtime_error(concat("cannot write ", path));
        os << j.dump(2) << '\n';
    }

    inline std::vector<Scene> load_scenes(const std::string &path)
    {
        std::ifstream is(path);
        if (!is)
            throw std::runtime_error(concat("cannot open ", path));
        try
        {
            const auto j = nlohmann::json::parse(is);
            if (j.at("version").get<int>() != kSceneFileVersion)
                throw std::runtime_error(concat("unsupported scene file version ", j.at("version").dump()));
            std::vector<Scene> out;
            for (const auto &s : j.at("scenes"))
                out.push_back(scene_from_json(s));
            return out;
        }
        catch (const nlohmann::json::exception &e)
        {
            throw std::runtime_error(concat(path, ": ", e.what()));
        }
    }
}

#endif
