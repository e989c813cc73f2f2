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

#ifndef MBCSI_METRICS_HPP
#define MBCSI_METRICS_HPP

#include "mbcsi/chanmodel.hpp"

#include <algorithm>
#include <numeric>

namespace mbcsi
{
    inline constexpr double kCcneClampDb = 160.0;

    // Channel coefficient normalized error: -10 log10(|est - truth|^2 / |truth|^2), in dB.
    // An exact match is reported as kCcneClampDb.
    template <typename T>
    double ccne(std::span<const T> estimate, std::span<const T> truth)
    {
        if (estimate.size() != truth.size())
            fail_argument("ccne: size mismatch (", estimate.size(), " vs ", truth.size(), ")");
        double err = 0.0, ref = 0.0;
        for (std::size_t i = 0; i < truth.size(); ++i)
        {
            err += std::norm(estimate[i] - truth[i]);
            ref += std::norm(truth[i]);
        }
        if (!(ref > 0.0))
            fail_argument("ccne: truth has zero norm");
        if (err == 0.0)
            return kCcneClampDb;
        return std::min(kCcneClampDb, -10.0 * std::log10(err / ref));
    }

    inline double ccne(const std::vector<cplx> &estimate, const std::vector<cplx> &truth)
    {
        return ccne<cplx>(std::span<const cplx>(estimate), std::span<const cplx>(truth));
    }

    inline double ccne(const std::vector<double> &estimate, const std::vector<double> &truth)
    {
        return ccne<double>(std::span<const double>(estimate), std::span<const double>(truth));
    }

    inline double ccne(const ChannelTensor &estimate, const ChannelTensor &truth)
    {
        estimate.check_same_shape(truth);
        return ccne(estimate.values(), truth.values());
    }

    inline double mean(std::span<const double> v)
    {
        if (v.empty())
            return 0.0;
        return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    }

    struct CdfPoint
    {
        double value = 0.0;
        double probability = 0.0;
    };

    // Empirical CDF: sorted values with P(X <= value) = (i + 1) / n.
    inline std::vector<CdfPoint> empirical_cdf(std::vector<double> values)
    {
        std::sort(values.begin(), values.end());
        std::vector<CdfPoint> out(values.size());
        for (std::size_t i = 0; i < values.size(); ++i)
            out[i] = {values[i], static_cast<double>(i + 1) / static_cast<double>(values.size())};
        return out;
    }
}

#endif
