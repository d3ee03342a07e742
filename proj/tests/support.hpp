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
 * @file support.hpp Shared helpers for the test suites.
 *
 *****************************************************************************/
#pragma once

#include "pireg/grid.hpp"
#include "pireg/image.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace pireg::test {

inline Image random_image(std::size_t h, std::size_t w, std::mt19937_64& rng, double lo = 0.0, double hi = 1.0)
{
	std::uniform_real_distribution<double> u(lo, hi);
	Image img(h, w);
	for(auto& v : img.vec())
		v = u(rng);
	return img;
}

inline DeformationField random_field(std::size_t h, std::size_t w, std::mt19937_64& rng, double amp = 1.0)
{
	return DeformationField(random_image(h, w, rng, -amp, amp), random_image(h, w, rng, -amp, amp));
}

inline ControlGrid random_grid(std::size_t h, std::size_t w, double spacing, std::mt19937_64& rng, double amp = 1.0)
{
	ControlGrid g = ControlGrid::covering(h, w, spacing);
	std::uniform_real_distribution<double> u(-amp, amp);
	for(std::size_t k = 0; k < g.coefficient_count(); ++k)
		g.coef(k) = u(rng);
	return g;
}

inline double rel_err(double a, double b, double floor = 1e-12)
{
	return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

inline double max_abs_diff(const Image& a, const Image& b)
{
	double m = 0.0;
	for(std::size_t i = 0; i < a.size(); ++i)
		m = std::max(m, std::abs(a[i] - b[i]));
	return m;
}

inline double max_abs_diff(const DeformationField& a, const DeformationField& b)
{
	return std::max(max_abs_diff(a.ux, b.ux), max_abs_diff(a.uy, b.uy));
}

/// Centred cubic B-spline, written out independently of the library.
inline double cubic_bspline_ref(double t)
{
	t = std::abs(t);
	if(t >= 2.0)
		return 0.0;
	if(t >= 1.0)
		return (2.0 - t) * (2.0 - t) * (2.0 - t) / 6.0;
	return (4.0 - 6.0 * t * t + 3.0 * t * t * t) / 6.0;
}

} // namespace pireg::test
