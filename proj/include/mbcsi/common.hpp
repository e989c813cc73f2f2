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

#ifndef MBCSI_COMMON_HPP
#define MBCSI_COMMON_HPP

#include <bit>
#include <cmath>
#include <complex>
#include <istream>
#include <ostream>
#include <cstdint>
#include <numbers>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace mbcsi
{
    using cplx = std::complex<double>;
    using Rng = std::mt19937_64;

    inline constexpr double kSpeedOfLight = 299792458.0;
    inline constexpr double kTwoPi = 2.0 * std::numbers::pi;

    // exp(j * phase)
    inline cplx expj(double phase)
    {
        return {std::cos(phase), std::sin(phase)};
    }

    namespace detail
    {
        static_assert(std::endian::native == std::endian::little, "binary file formats assume a little-endian host");

        // Raw little-endian scalar I/O for the binary file formats.
        template <typename T>
        void write_pod(std::ostream &os, const T &v)
        {
            os.write(reinterpret_cast<const char *>(&v), sizeof(T));
        }

        template <typename T>
        T read_pod(std::istream &is)
        {
            T v{};
            is.read(reinterpret_cast<char *>(&v), sizeof(T));
            if (!is)
                throw std::runtime_error("unexpected end of file");
            return v;
        }
    }

    inline double kmh_to_ms(double kmh)
    {
        return kmh / 3.6;
    }

    // Builds an error message from a list of streamable parts.
    template <typename... Parts>
    std::string concat(const Parts &...parts)
    {
        std::ostringstream os;
        (os << ... << parts);
        return os.str();
    }

    template <typename... Parts>
    [[noreturn]] void fail_argument(const Parts &...parts)
    {
        throw std::invalid_argument(concat(parts...));
    }

    inline double squared_norm(const std::vector<cplx> &v)
    {
        double s = 0.0;
        for (const auto &x : v)
            s += std::norm(x);
        return s;
    }

    // Mixes a base seed with a stream index so that independent sub-streams stay reproducible.
    inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream)
    {
        std::uint64_t z = base + 0x9E3779B97F4A7C15ULL * (stream + 1);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    // Uniform draw in [lo, hi) that does not depend on the library's distribution implementation.
    inline double uniform(Rng &rng, double lo, double hi)
    {
        return lo + (hi - lo) * std::generate_canonical<double, 53>(rng);
    }

    // Standard normal draw (Box-Muller) with the same portability property as uniform().
    inline double gaussian(Rng &rng)
    {
        double u1 = std::generate_canonical<double, 53>(rng);
        double u2 = std::generate_canonical<double, 53>(rng);
        if (u1 < 1e-300)
            u1 = 1e-300;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(kTwoPi * u2);
    }

    inline std::size_t uniform_index(Rng &rng, std::size_t n)
    {
        auto i = static_cast<std::size_t>(uniform(rng, 0.0, static_cast<double>(n)));
        return i < n ? i : n - 1;
    }
}

#endif
