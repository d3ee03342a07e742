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
 * @file regularizers.hpp Bending energy and cyclic consistency of a group of
 * displacement fields.
 *
 *****************************************************************************/
#pragma once

#include "pireg/image.hpp"

#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

namespace pireg {

struct RegWeights {
	double lambda0 = 0.001; ///< bending energy
	double lambda1 = 0.005; ///< cyclic consistency
};

/// Regularizer value and its gradient with respect to every displacement.
struct RegTerm {
	double value = 0.0;
	std::vector<DeformationField> grads;
};

namespace detail {

struct Tap {
	std::size_t idx;
	double w;
};

/// Taps of the second difference at i on a line of n samples: central in
/// the interior, one-sided at the ends. Empty when n < 3.
inline std::size_t second_diff_taps(std::size_t i, std::size_t n, std::array<Tap, 3>& t)
{
	if(n < 3)
		return 0;
	const std::size_t c = i == 0 ? 1 : (i == n - 1 ? n - 2 : i);
	t = {Tap{c - 1, 1.0}, Tap{c, -2.0}, Tap{c + 1, 1.0}};
	return 3;
}

/// First difference: central in the interior, forward/backward at the ends.
inline std::size_t first_diff_taps(std::size_t i, std::size_t n, std::array<Tap, 2>& t)
{
	if(n < 2)
		return 0;
	if(i == 0)
		t = {Tap{0, -1.0}, Tap{1, 1.0}};
	else if(i == n - 1)
		t = {Tap{n - 2, -1.0}, Tap{n - 1, 1.0}};
	else
		t = {Tap{i - 1, -0.5}, Tap{i + 1, 0.5}};
	return 2;
}

inline void require_group(std::span<const DeformationField> fields, const char* what)
{
	if(fields.empty())
		throw InputError(std::string(what) + ": need at least one field");
	for(const auto& f : fields)
		if(!f.same_shape(fields[0]))
			throw InputError(std::string(what) + ": dimension mismatch");
}

/// Sum of squared second-derivative terms of one component, accumulating
/// scale * d/du into grad.
inline double bending_component(const Image& u, Image& grad, double scale)
{
	const std::size_t h = u.height(), w = u.width();
	double total = 0.0;
	std::array<Tap, 3> t3{};
	std::array<Tap, 2> tr{}, tc{};
	for(std::size_t r = 0; r < h; ++r)
		for(std::size_t c = 0; c < w; ++c) {
			// d2/dx2 along the row
			if(second_diff_taps(c, w, t3)) {
				double e = 0.0;
				for(const auto& t : t3)
					e += t.w * u(r, t.idx);
				total += e * e;
				for(const auto& t : t3)
					grad(r, t.idx) += scale * 2.0 * e * t.w;
			}
			// d2/dy2 along the column
			if(second_diff_taps(r, h, t3)) {
				double e = 0.0;
				for(const auto& t : t3)
					e += t.w * u(t.idx, c);
				total += e * e;
				for(const auto& t : t3)
					grad(t.idx, c) += scale * 2.0 * e * t.w;
			}
			// d2/dxdy, counted twice
			if(first_diff_taps(r, h, tr) && first_diff_taps(c, w, tc)) {
				double e = 0.0;
				for(const auto& a : tr)
					for(const auto& b : tc)
						e += a.w * b.w * u(a.idx, b.idx);
				total += 2.0 * e * e;
				for(const auto& a : tr)
					for(const auto& b : tc)
						grad(a.idx, b.idx) += scale * 4.0 * e * a.w * b.w;
			}
		}
	return total;
}

} // namespace detail

/**
 * @brief Discrete bending energy summed over frames and both displacement
 * components, divided once by H*W. The gradient is the exact adjoint of
 * the finite-difference stencils.
 */
inline RegTerm bending_energy(std::span<const DeformationField> fields)
{
	detail::require_group(fields, "bending_energy");
	const std::size_t h = fields[0].height(), w = fields[0].width();
	const double inv = 1.0 / static_cast<double>(h * w);
	RegTerm out;
	out.grads.reserve(fields.size());
	for(const auto& f : fields) {
		DeformationField g(h, w);
		out.value += detail::bending_component(f.ux, g.ux, inv);
		out.value += detail::bending_component(f.uy, g.uy, inv);
		out.grads.push_back(std::move(g));
	}
	out.value *= inv;
	return out;
}

/**
 * @brief sqrt( 1/(2HW) * sum_p sum_c (sum_t u_{c,t}(p))^2 ). Penalizes a
 * common drift of the whole group; zero gradient at zero value.
 */
inline RegTerm cyclic_loss(std::span<const DeformationField> fields)
{
	detail::require_group(fields, "cyclic_loss");
	const std::size_t h = fields[0].height(), w = fields[0].width();
	DeformationField sum(h, w);
	for(const auto& f : fields)
		for(std::size_t i = 0; i < sum.ux.size(); ++i) {
			sum.ux[i] += f.ux[i];
			sum.uy[i] += f.uy[i];
		}
	const double denom = 2.0 * static_cast<double>(h * w);
	double ss = 0.0;
	for(std::size_t i = 0; i < sum.ux.size(); ++i)
		ss += sum.ux[i] * sum.ux[i] + sum.uy[i] * sum.uy[i];

	RegTerm out;
	out.value = std::sqrt(ss / denom);
	DeformationField g(h, w);
	if(out.value > 0.0) {
		const double k = 1.0 / (denom * out.value);
		for(std::size_t i = 0; i < g.ux.size(); ++i) {
			g.ux[i] = k * sum.ux[i];
			g.uy[i] = k * sum.uy[i];
		}
	}
	out.grads.assign(fields.size(), g);
	return out;
}

} // namespace pireg
