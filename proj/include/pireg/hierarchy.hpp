/******************************************************************************
 * Copyright 2026 The pireg Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *	http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 *
 * @file hierarchy.hpp Two-level registration of a T1 and a T2 series:
 * per-series groupwise registration, then a combined T1(+1) series that
 * carries one intensity-matched T2 frame.
 *
 *****************************************************************************/
#pragma once

#include "pireg/engine.hpp"
#include "pireg/grid.hpp"
#include "pireg/image.hpp"
#include "pireg/relaxometry.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <optional>
#include <span>
#include <vector>

namespace pireg {

namespace detail {

inline constexpr std::size_t kMatchLevels = 256;

/// Piecewise-linear empirical CDF on 256 equal-width bins over [lo, hi].
struct EmpiricalCdf {
	double lo = 0.0, hi = 0.0;
	std::array<double, kMatchLevels + 1> at_edge{}; ///< F at the bin edges

	explicit EmpiricalCdf(const Image& img)
	{
		const auto r = intensity_range(img);
		lo = r.lo;
		hi = r.hi;
		if(!(hi > lo))
			throw InputError("histogram_match: constant image");
		std::array<double, kMatchLevels> count{};
		for(double v : img.vec())
			count[bin(v)] += 1.0;
		const double inv = 1.0 / static_cast<double>(img.size());
		at_edge[0] = 0.0;
		for(std::size_t k = 0; k < kMatchLevels; ++k)
			at_edge[k + 1] = at_edge[k] + count[k] * inv;
		at_edge[kMatchLevels] = 1.0;
	}

	double width() const { return (hi - lo) / static_cast<double>(kMatchLevels); }

	std::size_t bin(double v) const
	{
		const double x = (v - lo) / width();
		return std::min(static_cast<std::size_t>(std::max(x, 0.0)), kMatchLevels - 1);
	}

	/// Inverse CDF; flat stretches resolve to their lower end.
	double quantile(double u) const
	{
		if(u <= 0.0)
			return lo;
		if(u >= 1.0)
			return hi;
		const auto it = std::lower_bound(at_edge.begin() + 1, at_edge.end(), u);
		const std::size_t k = static_cast<std::size_t>(it - at_edge.begin()) - 1;
		const double span = at_edge[k + 1] - at_edge[k];
		const double frac = span > 0.0 ? (u - at_edge[k]) / span : 0.0;
		return lo + (static_cast<double>(k) + frac) * width();
	}
};

} // namespace detail

/// Monotone intensity mapping that gives src the histogram of ref.
inline Image histogram_match(const Image& src, const Image& ref)
{
	if(src.empty() || ref.empty())
		throw InputError("histogram_match: empty image");
	if(!(intensity_range(src).width() > 0.0))
		throw InputError("histogram_match: constant image");
	const detail::EmpiricalCdf fr(ref);

	// Source quantile of each pixel from its intensity rank; equal values share the mid rank.
	std::vector<std::size_t> order(src.size());
	std::iota(order.begin(), order.end(), std::size_t{0});
	std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return src[a] < src[b]; });
	const double n = static_cast<double>(src.size());
	Image out(src.height(), src.width());
	for(std::size_t lo = 0; lo < order.size();) {
		std::size_t hi = lo + 1;
		while(hi < order.size() && src[order[hi]] == src[order[lo]])
			++hi;
		const double u = 0.5 * static_cast<double>(lo + hi) / n;
		const double v = fr.quantile(u);
		for(std::size_t k = lo; k < hi; ++k)
			out[order[k]] = v;
		lo = hi;
	}
	return out;
}

/**
 * @brief The T1 series followed by the first T2 frame, intensity-matched to
 * the T1 frame with the longest inversion time and flagged as fully
 * recovered. Its nominal time is one millisecond after the last T1 frame.
 */
inline ImageSeries build_t1plus1(const ImageSeries& t1, const ImageSeries& t2)
{
	if(t1.frames.empty() || t2.frames.empty())
		throw InputError("build_t1plus1: empty series");
	t1.validate();
	t2.validate();
	require_same_shape(t1.frames[0], t2.frames[0], "build_t1plus1");

	const auto longest = std::max_element(t1.times.t_ms.begin(), t1.times.t_ms.end()) - t1.times.t_ms.begin();
	ImageSeries out;
	out.model = SignalModel::T1PlusOne;
	out.frames = t1.frames;
	out.frames.push_back(histogram_match(t2.frames[0], t1.frames[static_cast<std::size_t>(longest)]));
	out.times.t_ms = t1.times.t_ms;
	out.times.t_ms.push_back(t1.times.t_ms.back() + 1.0);
	out.times.recovered.assign(t1.size(), false);
	out.times.recovered.push_back(true);
	return out;
}

inline double dice(const Mask& a, const Mask& b)
{
	if(a.height != b.height || a.width != b.width)
		throw InputError("dice: dimension mismatch");
	std::size_t both = 0, na = 0, nb = 0;
	for(std::size_t i = 0; i < a.data.size(); ++i) {
		const bool x = a.data[i] != 0, y = b.data[i] != 0;
		both += x && y;
		na += x;
		nb += y;
	}
	if(na + nb == 0)
		return 1.0;
	return 2.0 * static_cast<double>(both) / static_cast<double>(na + nb);
}

/// Majority mask of per-frame masks after warping each by its field.
inline Mask consensus_mask(std::span<const Mask> masks, std::span<const DeformationField> fields)
{
	if(masks.empty() || masks.size() != fields.size())
		throw InputError("consensus_mask: one field per mask required");
	const std::size_t h = masks[0].height, w = masks[0].width;
	Image acc(h, w);
	for(std::size_t t = 0; t < masks.size(); ++t) {
		if(masks[t].height != h || masks[t].width != w || !fields[t].same_shape(acc))
			throw InputError("consensus_mask: dimension mismatch");
		Image m(h, w);
		for(std::size_t i = 0; i < m.size(); ++i)
			m[i] = masks[t].data[i] ? 1.0 : 0.0;
		const Image warped = warp(m, fields[t]);
		for(std::size_t i = 0; i < acc.size(); ++i)
			acc[i] += warped[i];
	}
	Mask out(h, w);
	const double half = 0.5 * static_cast<double>(masks.size());
	for(std::size_t i = 0; i < acc.size(); ++i)
		out.data[i] = acc[i] >= half;
	return out;
}

/// Median R^2 over the pixels of roi (all pixels without one).
inline double median_r2(const ParamMaps& maps, const Mask* roi = nullptr)
{
	std::vector<double> v;
	for(std::size_t i = 0; i < maps.r2.size(); ++i)
		if(!roi || roi->data[i])
			v.push_back(maps.r2[i]);
	if(v.empty())
		return 0.0;
	const auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
	std::nth_element(v.begin(), mid, v.end());
	if(v.size() % 2 == 1)
		return *mid;
	const double upper = *mid;
	return 0.5 * (upper + *std::max_element(v.begin(), mid));
}

/// Optional inputs for the quality summary.
struct TwoLevelMasks {
	std::vector<Mask> observed_t1; ///< myocardium in each observed T1 frame
	std::vector<Mask> observed_t2;
	std::optional<Mask> roi; ///< region for the R^2 medians
};

struct TwoLevelReport {
	std::optional<double> dice_raw, dice_level1, dice_level2;
	double r2_t1_level1 = 0.0, r2_t1_final = 0.0;
	double r2_t2_level1 = 0.0, r2_t2_final = 0.0;
};

struct TwoLevelResult {
	std::vector<DeformationField> fields_t1, fields_t2; ///< level 1 + level 2
	std::vector<DeformationField> level1_t1, level1_t2;
	std::vector<DeformationField> level2; ///< combined series, appended frame last
	ParamMaps maps_t1, maps_t2;
	std::vector<LossRecord> trace_t1, trace_t2, trace_combined;
	TwoLevelReport report;
};

namespace detail {

inline ImageSeries warped_series(const ImageSeries& s, std::span<const DeformationField> fields)
{
	ImageSeries out = s;
	for(std::size_t t = 0; t < s.size(); ++t)
		out.frames[t] = warp(s.frames[t], fields[t]);
	return out;
}

inline std::optional<double> cross_dice(const TwoLevelMasks* masks, std::span<const DeformationField> f1,
		std::span<const DeformationField> f2)
{
	if(!masks || masks->observed_t1.empty() || masks->observed_t2.empty())
		return std::nullopt;
	return dice(consensus_mask(masks->observed_t1, f1), consensus_mask(masks->observed_t2, f2));
}

} // namespace detail

/**
 * @brief Level 1 registers each series on its own model. Level 2 registers
 * the T1(+1) series built from the level-1 results; the T1 frames take
 * their own level-2 fields and every T2 frame takes the field of the
 * appended frame. Final fields are the sums of both levels.
 */
inline TwoLevelResult two_level_register(const ImageSeries& t1, const ImageSeries& t2, const RegConfig& cfg,
		const TwoLevelMasks* masks = nullptr)
{
	t1.validate();
	t2.validate();
	require_same_shape(t1.frames[0], t2.frames[0], "two_level_register");
	if(masks && ((!masks->observed_t1.empty() && masks->observed_t1.size() != t1.size()) ||
			(!masks->observed_t2.empty() && masks->observed_t2.size() != t2.size())))
		throw InputError("two_level_register: one mask per frame required");
	const std::size_t h = t1.height(), w = t1.width();

	TwoLevelResult res;
	RegResult r1 = register_group(t1, cfg);
	RegResult r2 = register_group(t2, cfg);
	res.level1_t1 = std::move(r1.fields);
	res.level1_t2 = std::move(r2.fields);
	res.trace_t1 = std::move(r1.loss_trace);
	res.trace_t2 = std::move(r2.loss_trace);

	const ImageSeries combined = build_t1plus1(detail::warped_series(t1, res.level1_t1),
			detail::warped_series(t2, res.level1_t2));
	RegResult rc = register_group(combined, cfg);
	res.level2 = std::move(rc.fields);
	res.trace_combined = std::move(rc.loss_trace);

	for(std::size_t t = 0; t < t1.size(); ++t)
		res.fields_t1.push_back(add_fields(res.level1_t1[t], res.level2[t]));
	for(std::size_t t = 0; t < t2.size(); ++t)
		res.fields_t2.push_back(add_fields(res.level1_t2[t], res.level2.back()));

	res.maps_t1 = fit_series(t1, res.fields_t1, nullptr, cfg.threads);
	res.maps_t2 = fit_series(t2, res.fields_t2, nullptr, cfg.threads);

	const Mask* roi = masks && masks->roi ? &*masks->roi : nullptr;
	auto& rep = res.report;
	rep.r2_t1_level1 = median_r2(r1.param_maps, roi);
	rep.r2_t2_level1 = median_r2(r2.param_maps, roi);
	rep.r2_t1_final = median_r2(res.maps_t1, roi);
	rep.r2_t2_final = median_r2(res.maps_t2, roi);
	const std::vector<DeformationField> zero1(t1.size(), DeformationField(h, w));
	const std::vector<DeformationField> zero2(t2.size(), DeformationField(h, w));
	rep.dice_raw = detail::cross_dice(masks, zero1, zero2);
	rep.dice_level1 = detail::cross_dice(masks, res.level1_t1, res.level1_t2);
	rep.dice_level2 = detail::cross_dice(masks, res.fields_t1, res.fields_t2);
	return res;
}

} // namespace pireg
