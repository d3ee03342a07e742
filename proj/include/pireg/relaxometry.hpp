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
 * @file relaxometry.hpp Relaxation signal models, per-pixel
 * Levenberg-Marquardt fitting and synthetic series generation.
 *
 *****************************************************************************/
#pragma once

#include "pireg/grid.hpp"
#include "pireg/image.hpp"
#include "pireg/parallel.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

namespace pireg {

enum class SignalModel {
	T1Recovery3P, ///< |A - B exp(-t/T1*)|
	T2Decay2P,    ///< A exp(-t/T2)
	T1PlusOne,    ///< T1 recovery; frames flagged as recovered predict A
};

inline std::size_t parameter_count(SignalModel m) { return m == SignalModel::T2Decay2P ? 2 : 3; }

inline std::vector<std::string> parameter_names(SignalModel m)
{
	if(m == SignalModel::T2Decay2P)
		return {"A", "T2"};
	return {"A", "B", "T1star"};
}

inline std::string to_string(SignalModel m)
{
	switch(m) {
	case SignalModel::T1Recovery3P: return "t1";
	case SignalModel::T2Decay2P: return "t2";
	case SignalModel::T1PlusOne: return "t1plus1";
	}
	return "?";
}

/// Acquisition (inversion or echo) times in ms, plus the frames that are
/// treated as fully recovered under the T1(+1) model.
struct AcquisitionTimes {
	std::vector<double> t_ms;
	std::vector<bool> recovered;

	std::size_t size() const { return t_ms.size(); }
	bool is_recovered(std::size_t n) const { return n < recovered.size() && recovered[n]; }

	void validate() const
	{
		if(!recovered.empty() && recovered.size() != t_ms.size())
			throw InputError("recovered flags and times differ in length");
		for(std::size_t n = 0; n < t_ms.size(); ++n) {
			if(!std::isfinite(t_ms[n]) || t_ms[n] < 0.0)
				throw InputError("acquisition times must be finite and nonnegative");
			if(n > 0 && !(t_ms[n] > t_ms[n - 1]))
				throw InputError("acquisition times must be strictly increasing");
		}
	}
};

struct ImageSeries {
	std::vector<Image> frames;
	AcquisitionTimes times;
	SignalModel model = SignalModel::T1Recovery3P;

	std::size_t size() const { return frames.size(); }
	std::size_t height() const { return frames.empty() ? 0 : frames[0].height(); }
	std::size_t width() const { return frames.empty() ? 0 : frames[0].width(); }

	void validate() const
	{
		if(frames.empty())
			throw InputError("image series is empty");
		if(times.size() != frames.size())
			throw InputError("series has " + std::to_string(frames.size()) + " frames but " +
					std::to_string(times.size()) + " times");
		for(const auto& f : frames) {
			require_same_shape(frames[0], f, "image series");
			for(double v : f.vec())
				if(!std::isfinite(v))
					throw InputError("image series contains non-finite intensities");
		}
		times.validate();
	}
};

/******************************************************************
 * Signal models
 *****************************************************************/

inline double predict(SignalModel model, std::span<const double> params, double t, bool recovered = false)
{
	if(params.size() < parameter_count(model))
		throw InputError("predict: too few parameters");
	switch(model) {
	case SignalModel::T2Decay2P:
		if(!(params[1] > 0.0))
			throw InputError("predict: nonpositive relaxation constant");
		return params[0] * std::exp(-t / params[1]);
	case SignalModel::T1PlusOne:
		if(recovered)
			return params[0];
		[[fallthrough]];
	case SignalModel::T1Recovery3P:
		if(!(params[2] > 0.0))
			throw InputError("predict: nonpositive relaxation constant");
		return std::abs(params[0] - params[1] * std::exp(-t / params[2]));
	}
	return 0.0;
}

/******************************************************************
 * Levenberg-Marquardt
 *****************************************************************/

struct LmOptions {
	std::size_t max_iters = 100;
	double initial_damping = 1e-3;
	double param_tol = 1e-8;
	double cost_tol = 1e-12;
	bool record_costs = false;
};

/// Bounds on the relaxation constant (ms) kept during fitting.
inline constexpr double kT1Bounds[2] = {1.0, 10000.0};
inline constexpr double kT2Bounds[2] = {1.0, 5000.0};

struct PixelFit {
	std::array<double, 3> params{};
	std::size_t n_params = 0;
	double residual = std::numeric_limits<double>::infinity(); ///< sum of squared errors
	bool converged = false;
	std::size_t iterations = 0;
	std::vector<double> accepted_costs; ///< cost after each accepted step (when recorded)
};

namespace detail {

using ParamVec = Eigen::Matrix<double, Eigen::Dynamic, 1, 0, 3, 1>;
using ParamMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, 0, 3, 3>;

/// Residuals r_n = f(t_n) - s_n and Jacobian rows; returns the cost.
inline double residuals(SignalModel model, const AcquisitionTimes& times,
		std::span<const double> samples, const ParamVec& th, Eigen::VectorXd* r,
		Eigen::MatrixXd* jac)
{
	const std::size_t n = samples.size();
	const Eigen::Index np = th.size();
	if(r)
		r->resize(static_cast<Eigen::Index>(n));
	if(jac)
		jac->resize(static_cast<Eigen::Index>(n), np);
	double cost = 0.0;
	for(std::size_t k = 0; k < n; ++k) {
		const double t = times.t_ms[k];
		const auto row = static_cast<Eigen::Index>(k);
		double f = 0.0;
		if(model == SignalModel::T2Decay2P) {
			const double e = std::exp(-t / th[1]);
			f = th[0] * e;
			if(jac) {
				(*jac)(row, 0) = e;
				(*jac)(row, 1) = th[0] * e * t / (th[1] * th[1]);
			}
		} else if(model == SignalModel::T1PlusOne && times.is_recovered(k)) {
			f = th[0];
			if(jac) {
				(*jac)(row, 0) = 1.0;
				(*jac)(row, 1) = 0.0;
				(*jac)(row, 2) = 0.0;
			}
		} else {
			const double e = std::exp(-t / th[2]);
			const double signed_f = th[0] - th[1] * e;
			const double s = signed_f >= 0.0 ? 1.0 : -1.0;
			f = std::abs(signed_f);
			if(jac) {
				(*jac)(row, 0) = s;
				(*jac)(row, 1) = -s * e;
				(*jac)(row, 2) = -s * th[1] * e * t / (th[2] * th[2]);
			}
		}
		const double res = f - samples[k];
		if(r)
			(*r)(row) = res;
		cost += res * res;
	}
	return cost;
}

inline void project_bounds(SignalModel model, ParamVec& th)
{
	const auto& b = model == SignalModel::T2Decay2P ? kT2Bounds : kT1Bounds;
	const Eigen::Index k = th.size() - 1;
	th[k] = std::clamp(th[k], b[0], b[1]);
}

inline bool at_bound(SignalModel model, const ParamVec& th)
{
	const auto& b = model == SignalModel::T2Decay2P ? kT2Bounds : kT1Bounds;
	const double v = th[th.size() - 1];
	return v <= b[0] || v >= b[1];
}

inline PixelFit lm_run(SignalModel model, const AcquisitionTimes& times,
		std::span<const double> samples, ParamVec th, const LmOptions& opt)
{
	PixelFit fit;
	fit.n_params = static_cast<std::size_t>(th.size());
	project_bounds(model, th);
	Eigen::VectorXd r;
	Eigen::MatrixXd jac;
	double cost = residuals(model, times, samples, th, &r, &jac);
	double mu = opt.initial_damping;
	bool stopped = false;

	std::size_t it = 0;
	for(; it < opt.max_iters && std::isfinite(cost); ++it) {
		if(cost == 0.0) {
			stopped = true;
			break;
		}
		const ParamMat jtj = jac.transpose() * jac;
		const ParamVec g = jac.transpose() * r;
		ParamMat a = jtj;
		for(Eigen::Index k = 0; k < a.rows(); ++k)
			a(k, k) += mu * std::max(jtj(k, k), 1e-12);
		ParamVec step = a.ldlt().solve(-g);
		ParamVec trial = th + step;
		project_bounds(model, trial);
		const double trial_cost = residuals(model, times, samples, trial, nullptr, nullptr);

		if(std::isfinite(trial_cost) && trial_cost < cost) {
			const double rel_param = (trial - th).norm() / std::max(th.norm(), 1e-300);
			const double rel_cost = (cost - trial_cost) / cost;
			th = trial;
			cost = residuals(model, times, samples, th, &r, &jac);
			mu /= 10.0;
			if(opt.record_costs)
				fit.accepted_costs.push_back(cost);
			if(rel_param < opt.param_tol || rel_cost < opt.cost_tol) {
				stopped = true;
				++it;
				break;
			}
		} else {
			mu *= 10.0;
			// no descent direction left at any damping
			if(mu > 1e16) {
				stopped = true;
				++it;
				break;
			}
		}
	}

	for(Eigen::Index k = 0; k < th.size(); ++k)
		fit.params[static_cast<std::size_t>(k)] = th[k];
	fit.residual = cost;
	fit.iterations = it;
	bool finite = std::isfinite(cost);
	for(Eigen::Index k = 0; k < th.size(); ++k)
		finite = finite && std::isfinite(th[k]);
	fit.converged = stopped && finite && !at_bound(model, th);
	return fit;
}

} // namespace detail

/**
 * @brief Least-squares fit of one pixel's time curve.
 *
 * T1 models use three starts T1* in {300, 1000, 2000} ms with A = s(t_max)
 * and B = A + s(t_min) and keep the lowest residual. T2 starts from a
 * two-point log estimate. A T2 fit that runs into the upper bound has no
 * measurable decay; it is reported as the constant model A = mean(s) with
 * converged = false.
 */
inline PixelFit lm_fit_pixel(const AcquisitionTimes& times, std::span<const double> samples,
		SignalModel model, const LmOptions& opt = {})
{
	const std::size_t np = parameter_count(model);
	if(samples.size() != times.size())
		throw InputError("lm_fit_pixel: sample and time counts differ");
	if(samples.size() < np + 1)
		throw InputError("lm_fit_pixel: too few samples for the model");
	const auto [tmin_it, tmax_it] = std::minmax_element(times.t_ms.begin(), times.t_ms.end());
	if(*tmin_it == *tmax_it)
		throw InputError("lm_fit_pixel: all acquisition times are equal");

	// Extreme-time samples, ignoring frames that are modelled as recovered.
	std::size_t imin = samples.size(), imax = samples.size();
	for(std::size_t k = 0; k < samples.size(); ++k) {
		if(model == SignalModel::T1PlusOne && times.is_recovered(k))
			continue;
		if(imin == samples.size() || times.t_ms[k] < times.t_ms[imin])
			imin = k;
		if(imax == samples.size() || times.t_ms[k] > times.t_ms[imax])
			imax = k;
	}
	if(imin == samples.size())
		throw InputError("lm_fit_pixel: no unrecovered frames");
	const double s_min = samples[imin], s_max = samples[imax];

	if(model == SignalModel::T2Decay2P) {
		constexpr double eps = 1e-6;
		const double t_span = times.t_ms[imax] - times.t_ms[imin];
		const double ratio = std::log(s_min / std::max(s_max, eps));
		double t2 = t_span / std::max(std::isfinite(ratio) ? ratio : eps, eps);
		t2 = std::clamp(t2, kT2Bounds[0], kT2Bounds[1]);
		detail::ParamVec th(2);
		th << s_min, t2;
		PixelFit fit = detail::lm_run(model, times, samples, th, opt);
		if(fit.params[1] >= kT2Bounds[1]) {
			const double mean = std::accumulate(samples.begin(), samples.end(), 0.0) /
				static_cast<double>(samples.size());
			double ss = 0.0;
			for(double s : samples)
				ss += (s - mean) * (s - mean);
			fit.params[0] = mean;
			fit.params[1] = kT2Bounds[1];
			fit.residual = ss;
			fit.converged = false;
		}
		return fit;
	}

	PixelFit best;
	for(double t1 : {300.0, 1000.0, 2000.0}) {
		detail::ParamVec th(3);
		th << s_max, s_max + s_min, t1;
		PixelFit fit = detail::lm_run(model, times, samples, th, opt);
		if(fit.residual < best.residual)
			best = std::move(fit);
	}
	// |A - B e| is unchanged by (A, B) -> (-A, -B); report A >= 0.
	if(model == SignalModel::T1Recovery3P && best.params[0] < 0.0) {
		best.params[0] = -best.params[0];
		best.params[1] = -best.params[1];
	}
	return best;
}

/******************************************************************
 * Parameter maps
 *****************************************************************/

struct ParamMaps {
	SignalModel model = SignalModel::T1Recovery3P;
	std::vector<Image> params; ///< one map per parameter_names(model)
	Image r2;
	Mask converged;
	Image temporal_mean; ///< fallback for unconverged pixels

	std::size_t height() const { return r2.height(); }
	std::size_t width() const { return r2.width(); }
};

inline double r2_value(std::span<const double> samples, std::span<const double> predictions)
{
	const double mean = std::accumulate(samples.begin(), samples.end(), 0.0) /
		static_cast<double>(samples.size());
	double ss_res = 0.0, ss_tot = 0.0;
	for(std::size_t k = 0; k < samples.size(); ++k) {
		ss_res += (samples[k] - predictions[k]) * (samples[k] - predictions[k]);
		ss_tot += (samples[k] - mean) * (samples[k] - mean);
	}
	if(ss_tot < 1e-12)
		return ss_res < 1e-12 ? 1.0 : 0.0;
	return 1.0 - ss_res / ss_tot;
}

/// Per-pixel coefficient of determination of predictions against samples.
inline Image r2_map(std::span<const Image> samples, std::span<const Image> predictions)
{
	if(samples.size() < 2 || samples.size() != predictions.size())
		throw InputError("r2_map: need matching series of at least two frames");
	Image out(samples[0].height(), samples[0].width());
	for(std::size_t k = 0; k < samples.size(); ++k) {
		require_same_shape(samples[0], samples[k], "r2_map");
		require_same_shape(samples[0], predictions[k], "r2_map");
	}
	std::vector<double> s(samples.size()), p(samples.size());
	for(std::size_t i = 0; i < out.size(); ++i) {
		for(std::size_t k = 0; k < samples.size(); ++k) {
			s[k] = samples[k][i];
			p[k] = predictions[k][i];
		}
		out[i] = r2_value(s, p);
	}
	return out;
}

/**
 * @brief Fits every pixel (inside mask, if given) of already-aligned
 * frames. Pixels are independent, so the result does not depend on the
 * thread count. Failures are recorded per pixel as converged = 0.
 */
inline ParamMaps fit_frames(std::span<const Image> frames, const AcquisitionTimes& times,
		SignalModel model, const Mask* mask = nullptr, unsigned threads = 0, const LmOptions& opt = {})
{
	if(frames.empty() || frames.size() != times.size())
		throw InputError("fit_frames: frame and time counts differ");
	const std::size_t h = frames[0].height(), w = frames[0].width();
	for(const auto& f : frames)
		require_same_shape(frames[0], f, "fit_frames");
	if(mask && (mask->height != h || mask->width != w))
		throw InputError("fit_frames: mask dimension mismatch");
	const std::size_t np = parameter_count(model);
	const std::size_t nt = frames.size();

	ParamMaps out;
	out.model = model;
	out.params.assign(np, Image(h, w));
	out.r2 = Image(h, w);
	out.converged = Mask(h, w);
	out.temporal_mean = Image(h, w);

	parallel_for(h, threads, [&](std::size_t row) {
		std::vector<double> samples(nt), preds(nt);
		for(std::size_t col = 0; col < w; ++col) {
			const std::size_t i = row * w + col;
			double mean = 0.0;
			for(std::size_t k = 0; k < nt; ++k) {
				samples[k] = frames[k][i];
				mean += samples[k];
			}
			out.temporal_mean[i] = mean / static_cast<double>(nt);
			if(mask && !mask->data[i])
				continue;
			try {
				const PixelFit fit = lm_fit_pixel(times, samples, model, opt);
				const bool constant_fallback = model == SignalModel::T2Decay2P &&
					fit.params[1] >= kT2Bounds[1];
				for(std::size_t k = 0; k < nt; ++k)
					preds[k] = constant_fallback ? fit.params[0]
						: predict(model, std::span<const double>(fit.params.data(), np),
								times.t_ms[k], times.is_recovered(k));
				for(std::size_t k = 0; k < np; ++k)
					out.params[k][i] = fit.params[k];
				out.r2[i] = r2_value(samples, preds);
				out.converged.data[i] = fit.converged ? 1 : 0;
			} catch(const std::exception&) {
				out.converged.data[i] = 0;
			}
		}
	});
	return out;
}

/// Warps each frame by its field, then fits.
inline ParamMaps fit_series(const ImageSeries& series, std::span<const DeformationField> fields,
		const Mask* mask = nullptr, unsigned threads = 0, const LmOptions& opt = {})
{
	series.validate();
	if(!fields.empty() && fields.size() != series.size())
		throw InputError("fit_series: one field per frame required");
	std::vector<Image> warped;
	warped.reserve(series.size());
	for(std::size_t k = 0; k < series.size(); ++k)
		warped.push_back(fields.empty() ? series.frames[k] : warp(series.frames[k], fields[k]));
	return fit_frames(warped, series.times, series.model, mask, threads, opt);
}

/// Model prediction at every acquisition time; unconverged pixels take the
/// temporal mean of their input samples.
inline std::vector<Image> synthesize(const ParamMaps& maps, const AcquisitionTimes& times)
{
	const std::size_t h = maps.height(), w = maps.width();
	const std::size_t np = parameter_count(maps.model);
	std::vector<Image> out(times.size(), Image(h, w));
	std::array<double, 3> p{};
	for(std::size_t i = 0; i < h * w; ++i) {
		const bool ok = maps.converged.data[i] != 0;
		for(std::size_t k = 0; k < np; ++k)
			p[k] = maps.params[k][i];
		for(std::size_t n = 0; n < times.size(); ++n)
			out[n][i] = ok ? predict(maps.model, std::span<const double>(p.data(), np), times.t_ms[n],
					times.is_recovered(n))
				: maps.temporal_mean[i];
	}
	return out;
}

} // namespace pireg
