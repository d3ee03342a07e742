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
 * @file image.hpp Dense 2-D images, displacement fields and binary masks.
 *
 *****************************************************************************/
#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace pireg {

/// Malformed or inconsistent input (shape mismatch, bad container, ...).
class InputError : public std::invalid_argument {
public:
	using std::invalid_argument::invalid_argument;
};

/// Optimization or fitting produced no usable result.
class NumericalError : public std::runtime_error {
public:
	using std::runtime_error::runtime_error;
};

/**
 * @brief Row-major real image. x is the column index, y the row index.
 */
class Image {
public:
	Image() = default;
	Image(std::size_t height, std::size_t width, double fill = 0.0)
		: m_height(height), m_width(width), m_data(height * width, fill) {}
	Image(std::size_t height, std::size_t width, std::vector<double> data)
		: m_height(height), m_width(width), m_data(std::move(data))
	{
		if(m_data.size() != height * width)
			throw InputError("image data length " + std::to_string(m_data.size()) +
					" does not match " + std::to_string(height) + "x" +
					std::to_string(width));
	}

	std::size_t height() const { return m_height; }
	std::size_t width() const { return m_width; }
	std::size_t size() const { return m_data.size(); }
	bool empty() const { return m_data.empty(); }

	double& operator()(std::size_t row, std::size_t col) { return m_data[row * m_width + col]; }
	double operator()(std::size_t row, std::size_t col) const { return m_data[row * m_width + col]; }
	double& operator[](std::size_t i) { return m_data[i]; }
	double operator[](std::size_t i) const { return m_data[i]; }

	std::span<double> data() { return m_data; }
	std::span<const double> data() const { return m_data; }
	std::vector<double>& vec() { return m_data; }
	const std::vector<double>& vec() const { return m_data; }

	bool same_shape(const Image& o) const { return m_height == o.m_height && m_width == o.m_width; }

	friend bool operator==(const Image&, const Image&) = default;

private:
	std::size_t m_height = 0;
	std::size_t m_width = 0;
	std::vector<double> m_data;
};

/// Per-pixel displacement in pixels: the warped image at p samples the
/// moving image at p + (ux(p), uy(p)).
struct DeformationField {
	Image ux;
	Image uy;

	DeformationField() = default;
	DeformationField(std::size_t height, std::size_t width)
		: ux(height, width), uy(height, width) {}
	DeformationField(Image x, Image y) : ux(std::move(x)), uy(std::move(y))
	{
		if(!ux.same_shape(uy))
			throw InputError("displacement components differ in shape");
	}

	std::size_t height() const { return ux.height(); }
	std::size_t width() const { return ux.width(); }
	bool same_shape(const Image& img) const { return ux.same_shape(img); }
	bool same_shape(const DeformationField& o) const { return ux.same_shape(o.ux); }

	friend bool operator==(const DeformationField&, const DeformationField&) = default;
};

struct Mask {
	std::size_t height = 0;
	std::size_t width = 0;
	std::vector<std::uint8_t> data;

	Mask() = default;
	Mask(std::size_t h, std::size_t w, std::uint8_t fill = 0) : height(h), width(w), data(h * w, fill) {}

	std::uint8_t& operator()(std::size_t row, std::size_t col) { return data[row * width + col]; }
	std::uint8_t operator()(std::size_t row, std::size_t col) const { return data[row * width + col]; }
	std::size_t count() const
	{
		std::size_t n = 0;
		for(auto v : data)
			n += v != 0;
		return n;
	}
	bool same_shape(const Image& img) const { return height == img.height() && width == img.width(); }

	friend bool operator==(const Mask&, const Mask&) = default;
};

inline void require_same_shape(const Image& a, const Image& b, const char* what)
{
	if(!a.same_shape(b))
		throw InputError(std::string(what) + ": dimension mismatch (" +
				std::to_string(a.height()) + "x" + std::to_string(a.width()) + " vs " +
				std::to_string(b.height()) + "x" + std::to_string(b.width()) + ")");
}

} // namespace pireg
