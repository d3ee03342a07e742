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
 * @file phantom.hpp Synthetic short-axis phantom (left ventricle with blood
 * pool, papillary muscles and myocardium beside a right-ventricular pool)
 * with T1-recovery and T2-decay series, smooth per-frame
 * motion and ground truth.
 *
 *****************************************************************************/
#pragma once

#include "pireg/grid.hpp"
#include "pireg/image.hpp"
#include "pireg/relaxometry.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <random>
#include <vector>

namespace pireg {

/// Relaxation parameters of one tissue class.
struct Tissue {
	double A1;     ///< T1 recovery: A
	double B1;     ///< T1 recovery: B
	double T1star; ///< ms
	double A2;     ///< T2 decay: A
	double T2;     ///< ms
};

struct PhantomConfig {
	std::size_t height = 112;
	std::size_t width = 112;
	std::size_t n_t1 = 11;
	std::size_t n_t2 = 3;
	std::vector<double> t1_times; ///< empty: MOLLI-like defaults
	std::vector<double> t2_times; ///< empty: defaults

	Tissue background{700.0, 1300.0, 300.0, 600.0, 40.0};
	Tissue blood{1400.0, 2600.0, 1400.0, 1300.0, 200.0};
	Tissue myocardium{1000.0, 1800.0, 900.0, 900.0, 50.0};
	double blood_radius = 0.14;     ///< fraction of min(H, W)
	double myocardium_radius = 0.24; ///< outer radius, fraction of min(H, W)

	double amplitude = 3.0;      ///< max per-frame displacement, px
	double motion_spacing = 56.0; ///< control spacing of the motion, px
	double offset = 3.0;          ///< T2 inter-sequence offset, px
	double offset_angle_deg = 0.0;
	double noise = 0.01; ///< Gaussian sigma as a fraction of the series maximum
	std::uint64_t seed = 1;

	void validate() const
	{
		if(height < 16 || width < 16)
			throw InputError("phantom: image must be at least 16x16");
		if(!(blood_radius > 0.0) || !(myocardium_radius > blood_radius) || myocardium_radius >= 0.5)
			throw InputError("phantom: need 0 < blood radius < myocardium radius < 0.5");
		if(!(amplitude >= 0.0) || !(noise >= 0.0) || !(offset >= 0.0))
			throw InputError("phantom: amplitude, offset and noise must be >= 0");
		if(!(motion_spacing >= 2.0))
			throw InputError("phantom: motion spacing must be >= 2");
		if(n_t1 < 4 || n_t2 < 3)
			throw InputError("phantom: need at least 4 T1 and 3 T2 frames");
		if(!t1_times.empty() && t1_times.size() != n_t1)
			throw InputError("phantom: t1_times length differs from n_t1");
		if(!t2_times.empty() && t2_times.size() != n_t2)
			throw InputError("phantom: t2_times length differs from n_t2");
	}
};

struct PhantomTruth {
	/// Reference-geometry maps: A1, B1, T1star, A2, T2.
	std::vector<Image> maps;
	Mask myocardium;
	/// Correcting fields: warp(observed_t, field_t) restores the reference geometry.
	std::vector<DeformationField> fields_t1, fields_t2;
	/// Intra-series motion grids (the T2 offset is not included).
	std::vector<ControlGrid> grids_t1, grids_t2;
	/// Myocardium as seen in each observed frame.
	std::vector<Mask> observed_t1, observed_t2;
	double offset_x = 0.0, offset_y = 0.0;
	double max_coefficient = 0.0;
};

struct Phantom {
	ImageSeries t1;
	ImageSeries t2;
	PhantomTruth truth;
};

inline std::vector<double> default_t1_times(std::size_t n)
{
	if(n == 11)
		return {100, 180, 260, 1100, 1180, 1260, 2100, 2180, 3100, 3180, 4100};
	std::vector<double> t(n);
	for(std::size_t k = 0; k < n; ++k)
		t[k] = 100.0 + 4000.0 * static_cast<double>(k) / static_cast<double>(n - 1);
	return t;
}

inline std::vector<double> default_t2_times(std::size_t n)
{
	if(n == 3)
		return {10, 35, 60};
	std::vector<double> t(n);
	for(std::size_t k = 0; k < n; ++k)
		t[k] = 10.0 + 50.0 * static_cast<double>(k) / static_cast<double>(n - 1);
	return t;
}

namespace detail {

enum class Region { Background, Blood, Myocardium };

/// Left ventricle with irregular endo- and epicardial borders, two papillary
/// muscles in the blood pool and a right-ventricular blood pool beside it.
struct PhantomGeometry {
	double cx, cy, r_blood, r_myo;

	Region region(double x, double y) const
	{
		const double dx = x - cx, dy = y - cy;
		const double r = std::hypot(dx, dy);
		const double th = std::atan2(dy, dx);
		const double endo = r_blood * (1.0 + 0.10 * std::cos(3.0 * th + 0.5) + 0.06 * std::cos(5.0 * th + 1.9));
		const double epi = r_myo * (1.0 + 0.05 * std::cos(2.0 * th + 2.3) + 0.04 * std::cos(4.0 * th + 0.8));
		if(r < endo) {
			for(const double a : {0.9, 2.4}) {
				const double px = cx + 0.65 * r_blood * std::cos(a), py = cy + 0.65 * r_blood * std::sin(a);
				if(std::hypot(x - px, y - py) < 0.22 * r_blood)
					return Region::Myocardium;
			}
			return Region::Blood;
		}
		if(r < epi)
			return Region::Myocardium;
		if(std::hypot(x - (cx - 1.3 * r_myo), y - (cy + 0.15 * r_myo)) < 0.75 * r_myo)
			return Region::Blood;
		return Region::Background;
	}
};

/// Zero-mean (across frames) smooth random motion scaled so the largest
/// displacement magnitude equals `amplitude`.
inline std::vector<ControlGrid> random_motion(std::size_t frames, std::size_t h, std::size_t w,
		double spacing, double amplitude, std::mt19937_64& rng)
{
	const ControlGrid proto = ControlGrid::covering(h, w, spacing);
	std::vector<ControlGrid> grids(frames, proto);
	std::normal_distribution<double> gauss(0.0, 1.0);
	for(auto& g : grids)
		for(std::size_t k = 0; k < g.coefficient_count(); ++k)
			g.coef(k) = gauss(rng);
	for(std::size_t k = 0; k < proto.coefficient_count(); ++k) {
		double mean = 0.0;
		for(const auto& g : grids)
			mean += g.coef(k);
		mean /= static_cast<double>(frames);
		for(auto& g : grids)
			g.coef(k) -= mean;
	}
	double maxnorm = 0.0;
	for(const auto& g : grids) {
		const auto f = densify(g, h, w);
		for(std::size_t i = 0; i < f.ux.size(); ++i)
			maxnorm = std::max(maxnorm, std::hypot(f.ux[i], f.uy[i]));
	}
	const double s = maxnorm > 0.0 ? amplitude / maxnorm : 0.0;
	for(auto& g : grids)
		for(std::size_t k = 0; k < g.coefficient_count(); ++k)
			g.coef(k) *= s;
	return grids;
}

} // namespace detail

/**
 * @brief Renders both series. For every observed pixel q the generator
 * solves p + u(p) = q for the reference point p, so that warping the
 * observed frame by the truth field u restores the reference geometry.
 */
inline Phantom generate_phantom(const PhantomConfig& cfg)
{
	cfg.validate();
	const std::size_t h = cfg.height, w = cfg.width;
	const double side = static_cast<double>(std::min(h, w));
	const detail::PhantomGeometry geo{0.5 * static_cast<double>(w - 1), 0.5 * static_cast<double>(h - 1),
		cfg.blood_radius * side, cfg.myocardium_radius * side};
	auto tissue = [&](detail::Region r) -> const Tissue& {
		switch(r) {
		case detail::Region::Blood: return cfg.blood;
		case detail::Region::Myocardium: return cfg.myocardium;
		default: return cfg.background;
		}
	};

	Phantom ph;
	PhantomTruth& truth = ph.truth;
	truth.maps.assign(5, Image(h, w));
	truth.myocardium = Mask(h, w);
	for(std::size_t r = 0; r < h; ++r)
		for(std::size_t c = 0; c < w; ++c) {
			const auto reg = geo.region(static_cast<double>(c), static_cast<double>(r));
			const Tissue& t = tissue(reg);
			truth.maps[0](r, c) = t.A1;
			truth.maps[1](r, c) = t.B1;
			truth.maps[2](r, c) = t.T1star;
			truth.maps[3](r, c) = t.A2;
			truth.maps[4](r, c) = t.T2;
			truth.myocardium(r, c) = reg == detail::Region::Myocardium;
		}

	std::mt19937_64 rng(cfg.seed);
	truth.grids_t1 = detail::random_motion(cfg.n_t1, h, w, cfg.motion_spacing, cfg.amplitude, rng);
	truth.grids_t2 = detail::random_motion(cfg.n_t2, h, w, cfg.motion_spacing, cfg.amplitude, rng);
	const double ang = cfg.offset_angle_deg * std::numbers::pi / 180.0;
	truth.offset_x = cfg.offset * std::cos(ang);
	truth.offset_y = cfg.offset * std::sin(ang);
	for(const auto* gs : {&truth.grids_t1, &truth.grids_t2})
		for(const auto& g : *gs)
			for(std::size_t k = 0; k < g.coefficient_count(); ++k)
				truth.max_coefficient = std::max(truth.max_coefficient, std::abs(g.coef(k)));

	auto render = [&](const std::vector<ControlGrid>& grids, double ox, double oy,
			const std::vector<double>& times, SignalModel model, std::vector<DeformationField>& fields,
			std::vector<Mask>& observed) {
		ImageSeries s;
		s.model = model;
		s.times.t_ms = times;
		for(std::size_t f = 0; f < grids.size(); ++f) {
			DeformationField field = densify(grids[f], h, w);
			for(std::size_t i = 0; i < field.ux.size(); ++i) {
				field.ux[i] -= ox;
				field.uy[i] -= oy;
			}
			fields.push_back(std::move(field));
			Image img(h, w);
			Mask obs(h, w);
			for(std::size_t r = 0; r < h; ++r)
				for(std::size_t c = 0; c < w; ++c) {
					const double qx = static_cast<double>(c), qy = static_cast<double>(r);
					double px = qx, py = qy;
					for(int it = 0; it < 50; ++it) {
						const auto [ux, uy] = grids[f].evaluate(px, py);
						px = qx - (ux - ox);
						py = qy - (uy - oy);
					}
					const auto reg = geo.region(px, py);
					const Tissue& t = tissue(reg);
					const double p3[3] = {t.A1, t.B1, t.T1star};
					const double p2[2] = {t.A2, t.T2};
					img(r, c) = model == SignalModel::T2Decay2P ? predict(model, p2, times[f])
						: predict(model, p3, times[f]);
					obs(r, c) = reg == detail::Region::Myocardium;
				}
			s.frames.push_back(std::move(img));
			observed.push_back(std::move(obs));
		}
		double maxv = 0.0;
		for(const auto& im : s.frames)
			for(double v : im.vec())
				maxv = std::max(maxv, std::abs(v));
		if(cfg.noise > 0.0) {
			std::normal_distribution<double> gauss(0.0, cfg.noise * maxv);
			for(auto& im : s.frames)
				for(auto& v : im.vec())
					v += gauss(rng);
		}
		return s;
	};

	ph.t1 = render(truth.grids_t1, 0.0, 0.0,
			cfg.t1_times.empty() ? default_t1_times(cfg.n_t1) : cfg.t1_times,
			SignalModel::T1Recovery3P, truth.fields_t1, truth.observed_t1);
	ph.t2 = render(truth.grids_t2, truth.offset_x, truth.offset_y,
			cfg.t2_times.empty() ? default_t2_times(cfg.n_t2) : cfg.t2_times,
			SignalModel::T2Decay2P, truth.fields_t2, truth.observed_t2);
	return ph;
}

/// Upper bound on the bending energy of the truth fields implied by the
/// largest motion coefficient: per pixel and channel the discrete second
/// differences are bounded by 4c/s^2 and the mixed one by 2.25c/s^2.
inline double truth_bending_bound(std::size_t frames, double max_coefficient, double spacing)
{
	const double k = max_coefficient / (spacing * spacing);
	return static_cast<double>(frames) * 2.0 * (16.0 + 16.0 + 2.0 * 2.25 * 2.25) * k * k;
}

struct EndpointError {
	double mean = 0.0;
	double median = 0.0;
};

/// Euclidean displacement error over all frames, restricted to mask.
inline EndpointError endpoint_error(std::span<const DeformationField> found,
		std::span<const DeformationField> truth, const Mask& mask)
{
	if(found.size() != truth.size() || found.empty())
		throw InputError("endpoint_error: field counts differ");
	std::vector<double> e;
	for(std::size_t f = 0; f < found.size(); ++f) {
		if(!found[f].same_shape(truth[f]) || mask.height != found[f].height() || mask.width != found[f].width())
			throw InputError("endpoint_error: shape mismatch");
		for(std::size_t i = 0; i < mask.data.size(); ++i)
			if(mask.data[i])
				e.push_back(std::hypot(found[f].ux[i] - truth[f].ux[i], found[f].uy[i] - truth[f].uy[i]));
	}
	EndpointError out;
	if(e.empty())
		return out;
	double s = 0.0;
	for(double v : e)
		s += v;
	out.mean = s / static_cast<double>(e.size());
	std::sort(e.begin(), e.end());
	const std::size_t m = e.size() / 2;
	out.median = e.size() % 2 ? e[m] : 0.5 * (e[m - 1] + e[m]);
	return out;
}

} // namespace pireg
