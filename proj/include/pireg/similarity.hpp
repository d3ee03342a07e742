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
 * @file similarity.hpp Group template, mean squared error and Parzen-window
 * normalized mutual information with intensity gradients.
 *
 *****************************************************************************/
#pragma once

#include "pireg/image.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

namespace pireg {

/// Loss value plus its derivative with respect to each pixel of the first
/// argument.
struct SimilarityValue {
	double value = 0.0;
	Image grad;
};

inline Image mean_template(std::span<const Image> frames)
{
	if(frames.size() < 2)
		throw InputError("mean_template: need at least two frames");
	Image out(frames[0].height(), frames[0].width());
	for(const auto& f : frames) {
		require_same_shape(frames[0], f, "mean_template");
		for(std::size_t i = 0; i < out.size(); ++i)
			out[i] += f[i];
	}
	const double inv = 1.0 / static_cast<double>(frames.size());
	for(std::size_t i = 0; i < out.size(); ++i)
		out[i] *= inv;
	return out;
}

inline SimilarityValue mse_loss(const Image& a, const Image& b)
{
	require_same_shape(a, b, "mse_loss");
	SimilarityValue out{0.0, Image(a.height(), a.width())};
	const double inv = 1.0 / static_cast<double>(a.size());
	for(std::size_t i = 0; i < a.size(); ++i) {
		const double d = a[i] - b[i];
		out.value += d * d;
		out.grad[i] = 2.0 * d * inv;
	}
	out.value *= inv;
	return out;
}

/******************************************************************
 * Parzen-window NMI
 *****************************************************************/

struct IntensityRange {
	double lo = 0.0;
	double hi = 0.0;
	double width() const { return hi - lo; }
};

inline IntensityRange intensity_range(const Image& img)
{
	if(img.empty())
		throw InputError("intensity_range: empty image");
	const auto [mn, mx] = std::minmax_element(img.vec().begin(), img.vec().end());
	return {*mn, *mx};
}

struct NmiOptions {
	std::size_t bins = 32;
	double sigma = 1.0; ///< Parzen kernel scale in bin units
};

struct JointHistogram {
	std::size_t bins = 0;
	double sigma = 1.0;
	IntensityRange range_a, range_b;
	std::vector<double> matrix; ///< row index: bin of a, column: bin of b
	double at(std::size_t i, std::size_t j) const { return matrix[i * bins + j]; }
};

namespace detail {

/// Centred cubic B-spline and its derivative.
inline double cubic_bspline(double t)
{
	t = std::abs(t);
	if(t < 1.0)
		return 2.0 / 3.0 - t * t + 0.5 * t * t * t;
	if(t < 2.0) {
		const double s = 2.0 - t;
		return s * s * s / 6.0;
	}
	return 0.0;
}

inline double cubic_bspline_deriv(double t)
{
	const double a = std::abs(t);
	if(a < 1.0)
		return -2.0 * t + 1.5 * t * a;
	if(a < 2.0) {
		const double s = 2.0 - a;
		return t > 0 ? -0.5 * s * s : 0.5 * s * s;
	}
	return 0.0;
}

/// Parzen bin weights for every sample: taps at bins first..first+K-1
/// (clamped into [0, bins-1] when accumulated). Weights are normalized to
/// sum to one per sample; dweights are derivatives w.r.t. bin position.
struct ParzenWeights {
	std::size_t taps = 0;
	std::vector<long> first;
	std::vector<double> w;
	std::vector<double> dw;
};

inline ParzenWeights parzen_weights(const Image& img, const IntensityRange& range,
		const NmiOptions& opt, bool with_deriv)
{
	ParzenWeights pw;
	const double sigma = opt.sigma;
	pw.taps = static_cast<std::size_t>(std::ceil(4.0 * sigma)) + 1;
	const std::size_t n = img.size();
	pw.first.resize(n);
	pw.w.assign(n * pw.taps, 0.0);
	if(with_deriv)
		pw.dw.assign(n * pw.taps, 0.0);
	const double scale = static_cast<double>(opt.bins - 1) / range.width();
	for(std::size_t p = 0; p < n; ++p) {
		const double x = (img[p] - range.lo) * scale;
		const long j0 = static_cast<long>(std::floor(x - 2.0 * sigma)) + 1;
		pw.first[p] = j0;
		double* w = &pw.w[p * pw.taps];
		double sum = 0.0, dsum = 0.0;
		double db[16];
		for(std::size_t k = 0; k < pw.taps; ++k) {
			const double t = (x - static_cast<double>(j0 + static_cast<long>(k))) / sigma;
			w[k] = cubic_bspline(t);
			sum += w[k];
			if(with_deriv) {
				db[k % 16] = cubic_bspline_deriv(t) / sigma;
				dsum += db[k % 16];
			}
		}
		const double inv = 1.0 / sum;
		if(with_deriv) {
			double* dw = &pw.dw[p * pw.taps];
			for(std::size_t k = 0; k < pw.taps; ++k)
				dw[k] = (db[k % 16] * sum - w[k] * dsum) * inv * inv;
		}
		for(std::size_t k = 0; k < pw.taps; ++k)
			w[k] *= inv;
	}
	return pw;
}

inline std::size_t clamp_bin(long j, std::size_t bins)
{
	return static_cast<std::size_t>(std::clamp(j, 0L, static_cast<long>(bins) - 1));
}

inline double plogp(double p) { return p > 0.0 ? p * std::log(p) : 0.0; }

} // namespace detail

inline JointHistogram joint_histogram(const Image& a, const Image& b, const IntensityRange& ra,
		const IntensityRange& rb, const NmiOptions& opt = {})
{
	require_same_shape(a, b, "joint_histogram");
	if(!(ra.width() > 0.0) || !(rb.width() > 0.0))
		throw InputError("degenerate intensity range");
	if(opt.bins < 2 || !(opt.sigma > 0.0) || opt.sigma > 3.5)
		throw InputError("joint_histogram: need bins >= 2 and 0 < sigma <= 3.5");
	const auto wa = detail::parzen_weights(a, ra, opt, false);
	const auto wb = detail::parzen_weights(b, rb, opt, false);
	JointHistogram h{opt.bins, opt.sigma, ra, rb, std::vector<double>(opt.bins * opt.bins, 0.0)};
	for(std::size_t p = 0; p < a.size(); ++p) {
		for(std::size_t ka = 0; ka < wa.taps; ++ka) {
			const double va = wa.w[p * wa.taps + ka];
			if(va == 0.0)
				continue;
			const std::size_t i = detail::clamp_bin(wa.first[p] + static_cast<long>(ka), opt.bins);
			for(std::size_t kb = 0; kb < wb.taps; ++kb) {
				const std::size_t j = detail::clamp_bin(wb.first[p] + static_cast<long>(kb), opt.bins);
				h.matrix[i * opt.bins + j] += va * wb.w[p * wb.taps + kb];
			}
		}
	}
	const double inv = 1.0 / static_cast<double>(a.size());
	for(auto& v : h.matrix)
		v *= inv;
	return h;
}

/**
 * @brief NMI(a,b) = (H(a) + H(b)) / H(a,b) from a Parzen joint histogram
 * with a cubic B-spline kernel, natural-log entropies.
 *
 * Intensities map to bin positions through the affine map
 * [lo,hi] -> [0, bins-1]; kernel mass falling outside is folded into the
 * edge bins so each sample contributes exactly one unit. The gradient is
 * with respect to the intensities of a, holding both ranges fixed.
 */
inline SimilarityValue nmi(const Image& a, const Image& b, const IntensityRange& ra,
		const IntensityRange& rb, const NmiOptions& opt = {}, bool with_grad = true)
{
	require_same_shape(a, b, "nmi");
	if(!(ra.width() > 0.0) || !(rb.width() > 0.0))
		throw InputError("degenerate intensity range");
	if(opt.bins < 2 || !(opt.sigma > 0.0) || opt.sigma > 3.5)
		throw InputError("nmi: need bins >= 2 and 0 < sigma <= 3.5");

	const std::size_t bins = opt.bins;
	const auto wa = detail::parzen_weights(a, ra, opt, with_grad);
	const auto wb = detail::parzen_weights(b, rb, opt, false);
	const std::size_t n = a.size();

	std::vector<double> joint(bins * bins, 0.0);
	for(std::size_t p = 0; p < n; ++p)
		for(std::size_t ka = 0; ka < wa.taps; ++ka) {
			const double va = wa.w[p * wa.taps + ka];
			if(va == 0.0)
				continue;
			const std::size_t i = detail::clamp_bin(wa.first[p] + static_cast<long>(ka), bins);
			for(std::size_t kb = 0; kb < wb.taps; ++kb) {
				const std::size_t j = detail::clamp_bin(wb.first[p] + static_cast<long>(kb), bins);
				joint[i * bins + j] += va * wb.w[p * wb.taps + kb];
			}
		}
	const double inv_n = 1.0 / static_cast<double>(n);
	for(auto& v : joint)
		v *= inv_n;

	std::vector<double> pa(bins, 0.0), pb(bins, 0.0);
	for(std::size_t i = 0; i < bins; ++i)
		for(std::size_t j = 0; j < bins; ++j) {
			pa[i] += joint[i * bins + j];
			pb[j] += joint[i * bins + j];
		}
	double ha = 0.0, hb = 0.0, hab = 0.0;
	for(std::size_t i = 0; i < bins; ++i) {
		ha -= detail::plogp(pa[i]);
		hb -= detail::plogp(pb[i]);
	}
	for(double v : joint)
		hab -= detail::plogp(v);

	SimilarityValue out;
	out.value = (ha + hb) / hab;
	if(!with_grad)
		return out;

	// dNMI/dp_ij, zero on empty cells (their Parzen derivatives vanish too).
	std::vector<double> g(bins * bins, 0.0);
	for(std::size_t i = 0; i < bins; ++i)
		for(std::size_t j = 0; j < bins; ++j) {
			const double pij = joint[i * bins + j];
			if(pij <= 0.0)
				continue;
			g[i * bins + j] = (-std::log(pa[i]) - std::log(pb[j]) - 2.0 +
					out.value * (std::log(pij) + 1.0)) / hab;
		}

	out.grad = Image(a.height(), a.width());
	const double scale = static_cast<double>(bins - 1) / ra.width() * inv_n;
	for(std::size_t p = 0; p < n; ++p) {
		double acc = 0.0;
		for(std::size_t ka = 0; ka < wa.taps; ++ka) {
			const double dva = wa.dw[p * wa.taps + ka];
			if(dva == 0.0)
				continue;
			const std::size_t i = detail::clamp_bin(wa.first[p] + static_cast<long>(ka), bins);
			double row = 0.0;
			for(std::size_t kb = 0; kb < wb.taps; ++kb) {
				const std::size_t j = detail::clamp_bin(wb.first[p] + static_cast<long>(kb), bins);
				row += wb.w[p * wb.taps + kb] * g[i * bins + j];
			}
			acc += dva * row;
		}
		out.grad[p] = acc * scale;
	}
	return out;
}

/// NMI with each image's own [min,max] as its bin range.
inline SimilarityValue nmi(const Image& a, const Image& b, std::size_t bins = 32, double sigma = 1.0)
{
	return nmi(a, b, intensity_range(a), intensity_range(b), NmiOptions{bins, sigma});
}

} // namespace pireg
