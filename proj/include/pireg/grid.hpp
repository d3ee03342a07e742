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
 * @file grid.hpp Sampling, warping, cubic B-spline displacement grids and
 * Gaussian pyramids.
 *
 *****************************************************************************/
#pragma once

#include "pireg/image.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <vector>

namespace pireg {

/******************************************************************
 * Sampling and warping
 *****************************************************************/

namespace detail {

struct BilinearCell {
	std::size_t x0, x1, y0, y1;
	double fx, fy;
	bool inside_x, inside_y;
};

inline BilinearCell bilinear_cell(const Image& img, double x, double y)
{
	const double xmax = static_cast<double>(img.width() - 1);
	const double ymax = static_cast<double>(img.height() - 1);
	BilinearCell c{};
	c.inside_x = x >= 0.0 && x <= xmax;
	c.inside_y = y >= 0.0 && y <= ymax;
	x = std::clamp(x, 0.0, xmax);
	y = std::clamp(y, 0.0, ymax);
	const double fx0 = std::floor(x);
	const double fy0 = std::floor(y);
	c.x0 = static_cast<std::size_t>(fx0);
	c.y0 = static_cast<std::size_t>(fy0);
	c.x1 = std::min(c.x0 + 1, img.width() - 1);
	c.y1 = std::min(c.y0 + 1, img.height() - 1);
	c.fx = x - fx0;
	c.fy = y - fy0;
	return c;
}

} // namespace detail

/// Bilinear interpolation with border-replicate clamping outside
/// [0,W-1]x[0,H-1].
inline double bilinear_sample(const Image& img, double x, double y)
{
	const auto c = detail::bilinear_cell(img, x, y);
	const double i00 = img(c.y0, c.x0), i01 = img(c.y0, c.x1);
	const double i10 = img(c.y1, c.x0), i11 = img(c.y1, c.x1);
	const double top = i00 + c.fx * (i01 - i00);
	const double bot = i10 + c.fx * (i11 - i10);
	return top + c.fy * (bot - top);
}

struct SampleWithGradient {
	double value;
	double dx;
	double dy;
};

/// Value and spatial derivative of the bilinear interpolant. The derivative
/// along an axis is zero where that coordinate was clamped. On lattice lines
/// the one-sided (forward) derivative is returned.
inline SampleWithGradient bilinear_sample_grad(const Image& img, double x, double y)
{
	const auto c = detail::bilinear_cell(img, x, y);
	const double i00 = img(c.y0, c.x0), i01 = img(c.y0, c.x1);
	const double i10 = img(c.y1, c.x0), i11 = img(c.y1, c.x1);
	const double top = i00 + c.fx * (i01 - i00);
	const double bot = i10 + c.fx * (i11 - i10);
	SampleWithGradient s{};
	s.value = top + c.fy * (bot - top);
	s.dx = c.inside_x ? (1.0 - c.fy) * (i01 - i00) + c.fy * (i11 - i10) : 0.0;
	s.dy = c.inside_y ? bot - top : 0.0;
	return s;
}

/// Backward warp: out(p) = img(p + u(p)).
inline Image warp(const Image& img, const DeformationField& field)
{
	if(!field.same_shape(img))
		throw InputError("warp: field and image dimensions differ");
	Image out(img.height(), img.width());
	for(std::size_t r = 0; r < img.height(); ++r)
		for(std::size_t c = 0; c < img.width(); ++c)
			out(r, c) = bilinear_sample(img, static_cast<double>(c) + field.ux(r, c),
					static_cast<double>(r) + field.uy(r, c));
	return out;
}

struct WarpResult {
	Image warped;
	Image grad_x; ///< d warped / d ux
	Image grad_y; ///< d warped / d uy
};

inline WarpResult warp_with_gradient(const Image& img, const DeformationField& field)
{
	if(!field.same_shape(img))
		throw InputError("warp: field and image dimensions differ");
	const std::size_t h = img.height(), w = img.width();
	WarpResult out{Image(h, w), Image(h, w), Image(h, w)};
	for(std::size_t r = 0; r < h; ++r)
		for(std::size_t c = 0; c < w; ++c) {
			const auto s = bilinear_sample_grad(img, static_cast<double>(c) + field.ux(r, c),
					static_cast<double>(r) + field.uy(r, c));
			out.warped(r, c) = s.value;
			out.grad_x(r, c) = s.dx;
			out.grad_y(r, c) = s.dy;
		}
	return out;
}

/// Pointwise displacement addition, used to combine fields from
/// successive registration levels.
inline DeformationField add_fields(const DeformationField& a, const DeformationField& b)
{
	if(!a.same_shape(b))
		throw InputError("add_fields: dimension mismatch");
	DeformationField out = a;
	for(std::size_t i = 0; i < a.ux.size(); ++i) {
		out.ux[i] += b.ux[i];
		out.uy[i] += b.uy[i];
	}
	return out;
}

inline DeformationField scale_field(const DeformationField& f, double s)
{
	DeformationField out = f;
	for(std::size_t i = 0; i < f.ux.size(); ++i) {
		out.ux[i] *= s;
		out.uy[i] *= s;
	}
	return out;
}

/******************************************************************
 * Cubic B-spline control grid
 *****************************************************************/

/// Uniform cubic B-spline basis weights for the four supporting nodes at
/// fractional position u in [0,1).
inline std::array<double, 4> bspline_weights(double u)
{
	const double u2 = u * u, u3 = u2 * u;
	const double v = 1.0 - u;
	return {v * v * v / 6.0, (3.0 * u3 - 6.0 * u2 + 4.0) / 6.0,
		(-3.0 * u3 + 3.0 * u2 + 3.0 * u + 1.0) / 6.0, u3 / 6.0};
}

/**
 * @brief Displacement coefficients on a coarse lattice. Node (i, j) sits at
 * pixel position x = (j-1)*spacing, y = (i-1)*spacing, so the lattice covers
 * the image plus one cell of margin on each side.
 */
class ControlGrid {
public:
	ControlGrid() = default;
	ControlGrid(std::size_t rows, std::size_t cols, double spacing)
		: cx(rows, cols), cy(rows, cols), m_spacing(spacing)
	{
		if(!(spacing >= 2.0))
			throw InputError("control grid spacing must be >= 2 pixels");
		if(rows < 4 || cols < 4)
			throw InputError("control grid needs at least 4x4 nodes");
	}

	static std::size_t nodes_for(std::size_t pixels, double spacing)
	{
		const double extent = pixels > 0 ? static_cast<double>(pixels - 1) : 0.0;
		return static_cast<std::size_t>(std::floor(extent / spacing)) + 4;
	}

	/// Smallest grid that covers an H x W image.
	static ControlGrid covering(std::size_t height, std::size_t width, double spacing)
	{
		if(!(spacing >= 2.0))
			throw InputError("control grid spacing must be >= 2 pixels");
		return ControlGrid(nodes_for(height, spacing), nodes_for(width, spacing), spacing);
	}

	std::size_t rows() const { return cx.height(); }
	std::size_t cols() const { return cx.width(); }
	double spacing() const { return m_spacing; }
	std::size_t node_count() const { return cx.size(); }
	std::size_t coefficient_count() const { return 2 * cx.size(); }

	bool covers(std::size_t height, std::size_t width) const
	{
		return nodes_for(height, m_spacing) <= rows() && nodes_for(width, m_spacing) <= cols();
	}

	/// Flat access: [0, n) are x coefficients, [n, 2n) are y coefficients.
	double& coef(std::size_t k) { return k < cx.size() ? cx[k] : cy[k - cx.size()]; }
	double coef(std::size_t k) const { return k < cx.size() ? cx[k] : cy[k - cx.size()]; }

	/// Continuous evaluation; positions are clamped to the lattice domain.
	std::pair<double, double> evaluate(double x, double y) const
	{
		const auto [ix, wx] = locate(x, cols());
		const auto [iy, wy] = locate(y, rows());
		double sx = 0.0, sy = 0.0;
		for(std::size_t a = 0; a < 4; ++a) {
			double rx = 0.0, ry = 0.0;
			for(std::size_t b = 0; b < 4; ++b) {
				rx += wx[b] * cx(iy + a, ix + b);
				ry += wx[b] * cy(iy + a, ix + b);
			}
			sx += wy[a] * rx;
			sy += wy[a] * ry;
		}
		return {sx, sy};
	}

	/**
	 * @brief Transfers the field to an image of twice the resolution with
	 * the same spacing in (finer) pixels. Coarse pixel j maps to fine pixel
	 * 2j, so coarse node i sits on fine node 2i-1; cubic B-spline
	 * subdivision then reproduces the doubled displacement exactly wherever
	 * the coarse lattice has support.
	 */
	ControlGrid subdivided(std::size_t fine_height, std::size_t fine_width) const
	{
		ControlGrid out = covering(fine_height, fine_width, m_spacing);
		const auto pick = [](const Image& img, long r, long c) {
			r = std::clamp(r, 0L, static_cast<long>(img.height()) - 1);
			c = std::clamp(c, 0L, static_cast<long>(img.width()) - 1);
			return img(static_cast<std::size_t>(r), static_cast<std::size_t>(c));
		};
		// taps of fine node k on the coarse axis
		const auto taps = [](long k, std::array<long, 3>& idx, std::array<double, 3>& w) {
			if(k % 2 != 0) {
				const long i = (k + 1) / 2;
				idx = {i - 1, i, i + 1};
				w = {0.125, 0.75, 0.125};
			} else {
				const long i = k / 2;
				idx = {i, i + 1, i + 1};
				w = {0.5, 0.5, 0.0};
			}
		};
		std::array<long, 3> ri{}, ci{};
		std::array<double, 3> rw{}, cw{};
		for(std::size_t r = 0; r < out.rows(); ++r) {
			taps(static_cast<long>(r), ri, rw);
			for(std::size_t c = 0; c < out.cols(); ++c) {
				taps(static_cast<long>(c), ci, cw);
				double vx = 0.0, vy = 0.0;
				for(std::size_t a = 0; a < 3; ++a)
					for(std::size_t b = 0; b < 3; ++b) {
						const double k = rw[a] * cw[b];
						if(k == 0.0)
							continue;
						vx += k * pick(cx, ri[a], ci[b]);
						vy += k * pick(cy, ri[a], ci[b]);
					}
				out.cx(r, c) = 2.0 * vx;
				out.cy(r, c) = 2.0 * vy;
			}
		}
		return out;
	}

	Image cx;
	Image cy;

	friend bool operator==(const ControlGrid&, const ControlGrid&) = default;

private:
	std::pair<std::size_t, std::array<double, 4>> locate(double x, std::size_t nodes) const
	{
		const double maxpos = static_cast<double>(nodes - 3) * m_spacing;
		x = std::clamp(x, 0.0, maxpos);
		const double t = x / m_spacing;
		double cell = std::floor(t);
		double u = t - cell;
		if(cell > static_cast<double>(nodes - 4)) {
			cell = static_cast<double>(nodes - 4);
			u = 1.0;
		}
		return {static_cast<std::size_t>(cell), bspline_weights(u)};
	}

	double m_spacing = 8.0;
};

namespace detail {

struct AxisWeights {
	std::vector<std::size_t> first;
	std::vector<std::array<double, 4>> w;
};

inline AxisWeights axis_weights(std::size_t pixels, double spacing)
{
	AxisWeights a;
	a.first.resize(pixels);
	a.w.resize(pixels);
	for(std::size_t p = 0; p < pixels; ++p) {
		const double t = static_cast<double>(p) / spacing;
		const double cell = std::floor(t);
		a.first[p] = static_cast<std::size_t>(cell);
		a.w[p] = bspline_weights(t - cell);
	}
	return a;
}

} // namespace detail

/// Tensor-product cubic B-spline interpolation of the grid to every pixel.
inline DeformationField densify(const ControlGrid& grid, std::size_t height, std::size_t width)
{
	if(!grid.covers(height, width))
		throw InputError("densify: control grid does not cover the image");
	const auto ax = detail::axis_weights(width, grid.spacing());
	const auto ay = detail::axis_weights(height, grid.spacing());
	DeformationField out(height, width);

	// Separable: first along x for every node row, then along y.
	auto apply = [&](const Image& coef, Image& dense) {
		Image tmp(grid.rows(), width);
		for(std::size_t r = 0; r < grid.rows(); ++r)
			for(std::size_t x = 0; x < width; ++x) {
				const std::size_t j = ax.first[x];
				const auto& w = ax.w[x];
				tmp(r, x) = w[0] * coef(r, j) + w[1] * coef(r, j + 1) +
					w[2] * coef(r, j + 2) + w[3] * coef(r, j + 3);
			}
		for(std::size_t y = 0; y < height; ++y) {
			const std::size_t i = ay.first[y];
			const auto& w = ay.w[y];
			for(std::size_t x = 0; x < width; ++x)
				dense(y, x) = w[0] * tmp(i, x) + w[1] * tmp(i + 1, x) +
					w[2] * tmp(i + 2, x) + w[3] * tmp(i + 3, x);
		}
	};
	apply(grid.cx, out.ux);
	apply(grid.cy, out.uy);
	return out;
}

/// Exact adjoint of densify: coefficient gradient from a per-pixel
/// gradient. The returned grid has the layout of `grid`.
inline ControlGrid backproject_gradient(const DeformationField& dense_grad, const ControlGrid& grid)
{
	const std::size_t height = dense_grad.height(), width = dense_grad.width();
	if(!grid.covers(height, width))
		throw InputError("backproject_gradient: control grid does not cover the gradient");
	const auto ax = detail::axis_weights(width, grid.spacing());
	const auto ay = detail::axis_weights(height, grid.spacing());
	ControlGrid out(grid.rows(), grid.cols(), grid.spacing());

	auto apply = [&](const Image& g, Image& coef) {
		Image tmp(grid.rows(), width);
		for(std::size_t y = 0; y < height; ++y) {
			const std::size_t i = ay.first[y];
			const auto& w = ay.w[y];
			for(std::size_t x = 0; x < width; ++x) {
				const double v = g(y, x);
				tmp(i, x) += w[0] * v;
				tmp(i + 1, x) += w[1] * v;
				tmp(i + 2, x) += w[2] * v;
				tmp(i + 3, x) += w[3] * v;
			}
		}
		for(std::size_t r = 0; r < grid.rows(); ++r)
			for(std::size_t x = 0; x < width; ++x) {
				const std::size_t j = ax.first[x];
				const auto& w = ax.w[x];
				const double v = tmp(r, x);
				coef(r, j) += w[0] * v;
				coef(r, j + 1) += w[1] * v;
				coef(r, j + 2) += w[2] * v;
				coef(r, j + 3) += w[3] * v;
			}
	};
	apply(dense_grad.ux, out.cx);
	apply(dense_grad.uy, out.cy);
	return out;
}

/**
 * @brief Least-squares control grid for a dense field (conjugate gradients
 * on the normal equations of densify). Fields that lie in the spline space
 * are recovered to solver precision.
 */
inline ControlGrid project_to_grid(const DeformationField& field, double spacing,
		std::size_t max_iters = 1000, double rel_tol = 1e-14)
{
	const std::size_t h = field.height(), w = field.width();
	ControlGrid x = ControlGrid::covering(h, w, spacing);
	const std::size_t n = x.coefficient_count();

	auto normal = [&](const ControlGrid& v) {
		return backproject_gradient(densify(v, h, w), v);
	};
	auto dot = [n](const ControlGrid& a, const ControlGrid& b) {
		double s = 0.0;
		for(std::size_t k = 0; k < n; ++k)
			s += a.coef(k) * b.coef(k);
		return s;
	};

	ControlGrid r = backproject_gradient(field, x);
	ControlGrid p = r;
	double rr = dot(r, r);
	const double rr0 = rr;
	for(std::size_t it = 0; it < max_iters && rr > rel_tol * rel_tol * rr0 && rr > 0.0; ++it) {
		const ControlGrid ap = normal(p);
		const double alpha = rr / dot(p, ap);
		for(std::size_t k = 0; k < n; ++k) {
			x.coef(k) += alpha * p.coef(k);
			r.coef(k) -= alpha * ap.coef(k);
		}
		const double rr_new = dot(r, r);
		const double beta = rr_new / rr;
		for(std::size_t k = 0; k < n; ++k)
			p.coef(k) = r.coef(k) + beta * p.coef(k);
		rr = rr_new;
	}
	return x;
}

/******************************************************************
 * Multi-resolution
 *****************************************************************/

/// 5-tap Gaussian (sigma = 1) blur with border replication.
inline Image gaussian_blur5(const Image& img)
{
	std::array<double, 5> k{};
	double sum = 0.0;
	for(int d = -2; d <= 2; ++d) {
		k[static_cast<std::size_t>(d + 2)] = std::exp(-0.5 * d * d);
		sum += k[static_cast<std::size_t>(d + 2)];
	}
	for(auto& v : k)
		v /= sum;

	const long h = static_cast<long>(img.height()), w = static_cast<long>(img.width());
	auto cl = [](long v, long n) { return static_cast<std::size_t>(std::clamp(v, 0L, n - 1)); };
	Image tmp(img.height(), img.width()), out(img.height(), img.width());
	for(long r = 0; r < h; ++r)
		for(long c = 0; c < w; ++c) {
			double s = 0.0;
			for(long d = -2; d <= 2; ++d)
				s += k[static_cast<std::size_t>(d + 2)] * img(static_cast<std::size_t>(r), cl(c + d, w));
			tmp(static_cast<std::size_t>(r), static_cast<std::size_t>(c)) = s;
		}
	for(long r = 0; r < h; ++r)
		for(long c = 0; c < w; ++c) {
			double s = 0.0;
			for(long d = -2; d <= 2; ++d)
				s += k[static_cast<std::size_t>(d + 2)] * tmp(cl(r + d, h), static_cast<std::size_t>(c));
			out(static_cast<std::size_t>(r), static_cast<std::size_t>(c)) = s;
		}
	return out;
}

/// Blur then keep every second pixel; output pixel j sits at input pixel 2j.
inline Image blur_decimate(const Image& img)
{
	const Image b = gaussian_blur5(img);
	Image out((img.height() + 1) / 2, (img.width() + 1) / 2);
	for(std::size_t r = 0; r < out.height(); ++r)
		for(std::size_t c = 0; c < out.width(); ++c)
			out(r, c) = b(2 * r, 2 * c);
	return out;
}

/// Level 0 is the input; each further level is blur_decimate of the
/// previous one. The coarsest level must be at least 8x8.
inline std::vector<Image> pyramid(const Image& img, std::size_t levels)
{
	if(levels < 1)
		throw InputError("pyramid: need at least one level");
	if(img.empty())
		throw InputError("pyramid: empty image");
	std::size_t h = img.height(), w = img.width();
	for(std::size_t l = 1; l < levels; ++l) {
		h = (h + 1) / 2;
		w = (w + 1) / 2;
	}
	if(h < 8 || w < 8)
		throw InputError("pyramid: image too small for " + std::to_string(levels) + " levels");

	std::vector<Image> out;
	out.reserve(levels);
	out.push_back(img);
	for(std::size_t l = 1; l < levels; ++l)
		out.push_back(blur_decimate(out.back()));
	return out;
}

/// Bilinear upsampling of a coarse-level field to height x width with
/// displacements doubled (coarse pixel j corresponds to fine pixel 2j).
inline DeformationField upsample_field(const DeformationField& coarse, std::size_t height, std::size_t width)
{
	DeformationField out(height, width);
	for(std::size_t r = 0; r < height; ++r)
		for(std::size_t c = 0; c < width; ++c) {
			const double x = 0.5 * static_cast<double>(c), y = 0.5 * static_cast<double>(r);
			out.ux(r, c) = 2.0 * bilinear_sample(coarse.ux, x, y);
			out.uy(r, c) = 2.0 * bilinear_sample(coarse.uy, x, y);
		}
	return out;
}

} // namespace pireg
