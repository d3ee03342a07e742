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
 * @file engine.hpp Groupwise B-spline registration: a contrast-agnostic stage
 * driven by NMI to the mean template, then a physics-informed stage driven
 * by MSE to a series synthesized from the fitted signal model.
 *
 *****************************************************************************/
#pragma once

#include "pireg/grid.hpp"
#include "pireg/image.hpp"
#include "pireg/parallel.hpp"
#include "pireg/regularizers.hpp"
#include "pireg/relaxometry.hpp"
#include "pireg/similarity.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace pireg {

struct RegConfig {
	RegWeights weights;
	std::size_t pyramid_levels = 3;
	double control_spacing = 8.0;
	std::size_t stageA_iters = 100;
	std::size_t stageB_rounds = 10;
	std::size_t stageB_inner_iters = 5;
	double step_size = 0.25;
	std::size_t nmi_bins = 32;
	double nmi_sigma = 1.0;
	std::uint64_t seed = 0; ///< recorded with results; the optimizer itself is deterministic
	bool line_halving = true;
	unsigned threads = 0; ///< 0 = hardware concurrency

	void validate() const
	{
		if(!(weights.lambda0 >= 0.0) || !(weights.lambda1 >= 0.0))
			throw InputError("config: regularization weights must be >= 0");
		if(pyramid_levels < 1)
			throw InputError("config: pyramid_levels must be >= 1");
		if(!(step_size > 0.0))
			throw InputError("config: step_size must be > 0");
		if(nmi_bins < 2)
			throw InputError("config: nmi_bins must be >= 2");
		if(!(nmi_sigma > 0.0) || nmi_sigma > 3.5)
			throw InputError("config: nmi_sigma must be in (0, 3.5]");
		if(!(control_spacing >= 2.0))
			throw InputError("config: control_spacing must be >= 2");
	}
};

struct LossBreakdown {
	double similarity = 0.0;
	double smooth = 0.0;
	double cyclic = 0.0;
	double total = 0.0;
};

struct LossRecord {
	std::size_t iter = 0;
	char stage = 'A';
	std::size_t level = 0;
	LossBreakdown loss;
};

struct RegResult {
	std::vector<DeformationField> fields;
	std::vector<ControlGrid> grids;
	std::vector<LossRecord> loss_trace;
	ParamMaps param_maps;
};

enum class SimilarityMode { NmiTemplate, MseSynth };

struct LossEvaluation {
	LossBreakdown terms;
	std::vector<ControlGrid> gradient; ///< empty unless requested
	Image template_image;              ///< mean of the warped frames (NMI mode)
};

/**
 * @brief The objective similarity + lambda0*bending + lambda1*cyclic as a
 * function of the control-grid coefficients of every frame.
 *
 * NMI mode: similarity = -(1/N) sum_t NMI(warp_t, template), with the
 * template rebuilt from the current warps on every evaluation and
 * differentiated through. Each frame's bin range is that of the unwarped
 * frame (warped values stay inside it); the template range is the mean of
 * those ranges, which bounds any average of warps.
 * MSE mode: similarity = (1/N) sum_t MSE(warp_t, reference_t).
 */
class GroupObjective {
public:
	static GroupObjective nmi_template(std::vector<Image> frames, const RegWeights& weights,
			const NmiOptions& opt = {}, unsigned threads = 0)
	{
		GroupObjective o(std::move(frames), weights, threads);
		o.m_mode = SimilarityMode::NmiTemplate;
		o.m_nmi = opt;
		for(const auto& f : o.m_frames) {
			o.m_ranges.push_back(intensity_range(f));
			if(!(o.m_ranges.back().width() > 0.0))
				throw InputError("degenerate intensity range");
			const double inv = 1.0 / static_cast<double>(o.m_frames.size());
			o.m_template_range.lo += o.m_ranges.back().lo * inv;
			o.m_template_range.hi += o.m_ranges.back().hi * inv;
		}
		return o;
	}

	static GroupObjective mse_synth(std::vector<Image> frames, std::vector<Image> reference,
			const RegWeights& weights, unsigned threads = 0)
	{
		GroupObjective o(std::move(frames), weights, threads);
		o.m_mode = SimilarityMode::MseSynth;
		if(reference.size() != o.m_frames.size())
			throw InputError("mse_synth: one reference frame per frame required");
		for(const auto& r : reference)
			require_same_shape(o.m_frames[0], r, "mse_synth");
		o.m_reference = std::move(reference);
		return o;
	}

	/// Use a fixed template instead of rebuilding it (NMI mode).
	void freeze_template(Image t)
	{
		require_same_shape(m_frames[0], t, "freeze_template");
		m_frozen_template = std::move(t);
	}

	SimilarityMode mode() const { return m_mode; }
	std::size_t frames() const { return m_frames.size(); }
	std::size_t height() const { return m_frames[0].height(); }
	std::size_t width() const { return m_frames[0].width(); }
	const RegWeights& weights() const { return m_weights; }

	LossEvaluation evaluate(std::span<const ControlGrid> grids, bool with_grad) const
	{
		const std::size_t n = m_frames.size();
		const std::size_t h = height(), w = width();
		if(grids.size() != n)
			throw InputError("total_loss: one control grid per frame required");

		std::vector<DeformationField> dense(n);
		std::vector<WarpResult> warps(n);
		parallel_for(n, m_threads, [&](std::size_t t) {
			dense[t] = densify(grids[t], h, w);
			warps[t] = warp_with_gradient(m_frames[t], dense[t]);
		});

		LossEvaluation ev;
		std::vector<SimilarityValue> sims(n);
		const double inv_n = 1.0 / static_cast<double>(n);
		if(m_mode == SimilarityMode::NmiTemplate) {
			if(m_frozen_template) {
				ev.template_image = *m_frozen_template;
			} else {
				ev.template_image = Image(h, w);
				for(const auto& wr : warps)
					for(std::size_t i = 0; i < ev.template_image.size(); ++i)
						ev.template_image[i] += wr.warped[i];
				for(auto& v : ev.template_image.vec())
					v *= inv_n;
			}
			const IntensityRange tr = m_frozen_template ? intensity_range(*m_frozen_template) : m_template_range;
			if(!(tr.width() > 0.0))
				throw InputError("degenerate intensity range");
			const bool template_grad = with_grad && !m_frozen_template;
			std::vector<SimilarityValue> tsims(n);
			parallel_for(n, m_threads, [&](std::size_t t) {
				sims[t] = nmi(warps[t].warped, ev.template_image, m_ranges[t], tr, m_nmi, with_grad);
				if(template_grad)
					tsims[t] = nmi(ev.template_image, warps[t].warped, tr, m_ranges[t], m_nmi, true);
			});
			for(std::size_t t = 0; t < n; ++t)
				ev.terms.similarity -= sims[t].value * inv_n;
			// the template is the mean warp, so each frame also receives 1/N of
			// the template-side derivative of every NMI term
			if(template_grad) {
				Image acc(h, w);
				for(const auto& ts : tsims)
					for(std::size_t i = 0; i < acc.size(); ++i)
						acc[i] += ts.grad[i] * inv_n;
				for(auto& s : sims)
					for(std::size_t i = 0; i < acc.size(); ++i)
						s.grad[i] += acc[i];
			}
		} else {
			parallel_for(n, m_threads, [&](std::size_t t) {
				sims[t] = mse_loss(warps[t].warped, m_reference[t]);
			});
			for(std::size_t t = 0; t < n; ++t)
				ev.terms.similarity += sims[t].value * inv_n;
		}

		const RegTerm bend = bending_energy(dense);
		const RegTerm cyc = cyclic_loss(dense);
		ev.terms.smooth = bend.value;
		ev.terms.cyclic = cyc.value;
		ev.terms.total = ev.terms.similarity + m_weights.lambda0 * ev.terms.smooth +
			m_weights.lambda1 * ev.terms.cyclic;
		if(!with_grad)
			return ev;

		const double sim_sign = m_mode == SimilarityMode::NmiTemplate ? -inv_n : inv_n;
		ev.gradient.resize(n);
		parallel_for(n, m_threads, [&](std::size_t t) {
			DeformationField g(h, w);
			const auto& wr = warps[t];
			const auto& gs = sims[t].grad;
			for(std::size_t i = 0; i < g.ux.size(); ++i) {
				const double d = sim_sign * gs[i];
				g.ux[i] = d * wr.grad_x[i] + m_weights.lambda0 * bend.grads[t].ux[i] +
					m_weights.lambda1 * cyc.grads[t].ux[i];
				g.uy[i] = d * wr.grad_y[i] + m_weights.lambda0 * bend.grads[t].uy[i] +
					m_weights.lambda1 * cyc.grads[t].uy[i];
			}
			ev.gradient[t] = backproject_gradient(g, grids[t]);
		});
		return ev;
	}

private:
	GroupObjective(std::vector<Image> frames, const RegWeights& weights, unsigned threads)
		: m_frames(std::move(frames)), m_weights(weights), m_threads(threads)
	{
		if(m_frames.empty())
			throw InputError("objective needs at least one frame");
		for(const auto& f : m_frames)
			require_same_shape(m_frames[0], f, "objective");
	}

	std::vector<Image> m_frames;
	RegWeights m_weights;
	unsigned m_threads = 0;
	SimilarityMode m_mode = SimilarityMode::NmiTemplate;
	NmiOptions m_nmi;
	std::vector<IntensityRange> m_ranges;
	std::vector<Image> m_reference;
	IntensityRange m_template_range;
	std::optional<Image> m_frozen_template;
};

/// One-shot evaluation of the total objective and its coefficient gradient.
inline LossEvaluation total_loss(std::span<const Image> frames, std::span<const ControlGrid> grids,
		SimilarityMode mode, const RegWeights& weights, std::span<const Image> reference = {},
		const NmiOptions& opt = {}, unsigned threads = 0)
{
	std::vector<Image> f(frames.begin(), frames.end());
	if(mode == SimilarityMode::NmiTemplate)
		return GroupObjective::nmi_template(std::move(f), weights, opt, threads).evaluate(grids, true);
	return GroupObjective::mse_synth(std::move(f), std::vector<Image>(reference.begin(), reference.end()),
			weights, threads).evaluate(grids, true);
}

namespace detail {

struct DescentState {
	std::size_t iter = 0; ///< running record counter across stages
};

/**
 * @brief Normalized first-order descent: the coefficient with the largest
 * gradient magnitude moves by step_size pixels. With line halving a step is
 * halved up to five times until the loss decreases, and the descent stops
 * at the first step that cannot be made to decrease it.
 */
inline void descend(const GroupObjective& obj, std::vector<ControlGrid>& grids, std::size_t iters,
		const RegConfig& cfg, char stage, std::size_t level, std::vector<LossRecord>& trace,
		DescentState& state)
{
	LossEvaluation cur = obj.evaluate(grids, true);
	if(!std::isfinite(cur.terms.total))
		throw NumericalError("registration loss is not finite");
	trace.push_back({state.iter++, stage, level, cur.terms});

	for(std::size_t it = 0; it < iters; ++it) {
		double gmax = 0.0;
		for(const auto& g : cur.gradient)
			for(std::size_t k = 0; k < g.coefficient_count(); ++k)
				gmax = std::max(gmax, std::abs(g.coef(k)));
		if(!(gmax > 0.0) || !std::isfinite(gmax))
			break;

		double alpha = cfg.step_size / gmax;
		const int max_halvings = cfg.line_halving ? 5 : 0;
		std::vector<ControlGrid> trial = grids;
		bool accepted = false;
		LossEvaluation next;
		for(int hv = 0; hv <= max_halvings; ++hv, alpha *= 0.5) {
			for(std::size_t t = 0; t < grids.size(); ++t)
				for(std::size_t k = 0; k < grids[t].coefficient_count(); ++k)
					trial[t].coef(k) = grids[t].coef(k) - alpha * cur.gradient[t].coef(k);
			next = obj.evaluate(trial, false);
			if(!cfg.line_halving || next.terms.total < cur.terms.total) {
				accepted = std::isfinite(next.terms.total);
				break;
			}
		}
		if(!accepted)
			break;
		grids = std::move(trial);
		cur = obj.evaluate(grids, true);
		trace.push_back({state.iter++, stage, level, cur.terms});
	}
}

/// Intensity scale that maps the series to a maximum magnitude of one.
inline double series_scale(const ImageSeries& series)
{
	double m = 0.0;
	for(const auto& f : series.frames)
		for(double v : f.vec())
			m = std::max(m, std::abs(v));
	if(!(m > 0.0))
		throw InputError("degenerate intensity range");
	return m;
}

inline std::vector<Image> normalized_frames(const ImageSeries& series, double scale)
{
	std::vector<Image> out = series.frames;
	for(auto& f : out)
		for(auto& v : f.vec())
			v /= scale;
	return out;
}

inline std::vector<DeformationField> densify_all(std::span<const ControlGrid> grids, std::size_t h, std::size_t w)
{
	std::vector<DeformationField> out;
	out.reserve(grids.size());
	for(const auto& g : grids)
		out.push_back(densify(g, h, w));
	return out;
}

inline ParamMaps final_fit(const ImageSeries& series, std::span<const DeformationField> fields, unsigned threads)
{
	return fit_series(series, fields, nullptr, threads);
}

} // namespace detail

/**
 * @brief Contrast-agnostic groupwise stage: coarse-to-fine descent on the
 * NMI-to-mean-template objective. Intensities are scaled to unit maximum
 * first, which leaves NMI unchanged and makes the result independent of the
 * input intensity scale.
 */
inline RegResult register_stage_a(const ImageSeries& series, const RegConfig& cfg)
{
	series.validate();
	cfg.validate();
	if(series.size() < 2)
		throw InputError("register_stage_a: need at least two frames");
	const std::size_t h = series.height(), w = series.width();
	const double scale = detail::series_scale(series);
	const std::vector<Image> frames = detail::normalized_frames(series, scale);

	const std::size_t levels = cfg.pyramid_levels;
	std::vector<std::vector<Image>> pyr(frames.size());
	parallel_for(frames.size(), cfg.threads, [&](std::size_t t) { pyr[t] = pyramid(frames[t], levels); });

	const Image& coarsest = pyr[0][levels - 1];
	std::vector<ControlGrid> grids(frames.size(),
			ControlGrid::covering(coarsest.height(), coarsest.width(), cfg.control_spacing));

	RegResult res;
	detail::DescentState state;
	for(std::size_t l = levels; l-- > 0;) {
		std::vector<Image> level_frames;
		for(const auto& p : pyr)
			level_frames.push_back(p[l]);
		const auto obj = GroupObjective::nmi_template(std::move(level_frames), cfg.weights,
				NmiOptions{cfg.nmi_bins, cfg.nmi_sigma}, cfg.threads);
		detail::descend(obj, grids, cfg.stageA_iters, cfg, 'A', l, res.loss_trace, state);
		if(l > 0) {
			const Image& finer = pyr[0][l - 1];
			for(auto& g : grids)
				g = g.subdivided(finer.height(), finer.width());
		}
	}
	res.fields = detail::densify_all(grids, h, w);
	res.grids = std::move(grids);
	res.param_maps = detail::final_fit(series, res.fields, cfg.threads);
	return res;
}

namespace detail {

inline RegResult stage_b_from_grids(const ImageSeries& series, std::vector<ControlGrid> grids,
		const RegConfig& cfg, std::size_t first_iter)
{
	const std::size_t h = series.height(), w = series.width();
	const double scale = series_scale(series);
	const std::vector<Image> frames = normalized_frames(series, scale);

	RegResult res;
	DescentState state{first_iter};
	for(std::size_t round = 0; round < cfg.stageB_rounds; ++round) {
		const auto dense = densify_all(grids, h, w);
		std::vector<Image> warped(frames.size());
		for(std::size_t t = 0; t < frames.size(); ++t)
			warped[t] = warp(frames[t], dense[t]);
		const ParamMaps maps = fit_frames(warped, series.times, series.model, nullptr, cfg.threads);
		auto reference = synthesize(maps, series.times);
		const auto obj = GroupObjective::mse_synth(frames, std::move(reference), cfg.weights, cfg.threads);
		descend(obj, grids, cfg.stageB_inner_iters, cfg, 'B', 0, res.loss_trace, state);
	}
	res.fields = densify_all(grids, h, w);
	res.grids = std::move(grids);
	res.param_maps = final_fit(series, res.fields, cfg.threads);
	return res;
}

} // namespace detail

/**
 * @brief Physics-informed stage at full resolution. Each round fits the
 * signal model to the current warps, synthesizes a motion-free reference
 * series, then takes stageB_inner_iters descent steps on the MSE objective.
 * Dense initial fields are projected onto the control grid; with zero
 * rounds they are returned unchanged.
 */
inline RegResult register_stage_b(const ImageSeries& series, std::span<const DeformationField> init_fields,
		const RegConfig& cfg)
{
	series.validate();
	cfg.validate();
	const std::size_t h = series.height(), w = series.width();
	std::vector<DeformationField> init(init_fields.begin(), init_fields.end());
	if(init.empty())
		init.assign(series.size(), DeformationField(h, w));
	if(init.size() != series.size())
		throw InputError("register_stage_b: one initial field per frame required");
	for(const auto& f : init)
		if(f.height() != h || f.width() != w)
			throw InputError("register_stage_b: initial field dimension mismatch");

	if(cfg.stageB_rounds == 0) {
		RegResult res;
		res.fields = std::move(init);
		res.param_maps = detail::final_fit(series, res.fields, cfg.threads);
		return res;
	}
	std::vector<ControlGrid> grids;
	grids.reserve(init.size());
	for(const auto& f : init)
		grids.push_back(project_to_grid(f, cfg.control_spacing));
	return detail::stage_b_from_grids(series, std::move(grids), cfg, 0);
}

/// Stage B continuing directly from control grids (e.g. a Stage-A result).
inline RegResult register_stage_b(const ImageSeries& series, std::vector<ControlGrid> init_grids,
		const RegConfig& cfg, std::size_t first_iter = 0)
{
	series.validate();
	cfg.validate();
	if(init_grids.size() != series.size())
		throw InputError("register_stage_b: one control grid per frame required");
	if(cfg.stageB_rounds == 0) {
		RegResult res;
		res.fields = detail::densify_all(init_grids, series.height(), series.width());
		res.grids = std::move(init_grids);
		res.param_maps = detail::final_fit(series, res.fields, cfg.threads);
		return res;
	}
	return detail::stage_b_from_grids(series, std::move(init_grids), cfg, first_iter);
}

/// Stage A followed by Stage B; the loss traces are concatenated.
inline RegResult register_group(const ImageSeries& series, const RegConfig& cfg)
{
	RegResult a = register_stage_a(series, cfg);
	RegResult b = register_stage_b(series, a.grids, cfg, a.loss_trace.size());
	RegResult out;
	out.loss_trace = std::move(a.loss_trace);
	out.loss_trace.insert(out.loss_trace.end(), b.loss_trace.begin(), b.loss_trace.end());
	out.fields = std::move(b.fields);
	out.grids = std::move(b.grids);
	out.param_maps = std::move(b.param_maps);
	return out;
}

} // namespace pireg
