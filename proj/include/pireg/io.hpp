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
 * @file io.hpp Series containers, raw field and mask files, JSON
 * configuration, loss-trace CSV and PGM export.
 *
 * A series container is a directory holding meta.json and data.f32
 * (frame-major, row-major little-endian float32). Field files store, per
 * frame, the u_x plane followed by the u_y plane. Mask files are 0/1 bytes,
 * one plane per mask.
 *
 *****************************************************************************/
#pragma once

#include "pireg/engine.hpp"
#include "pireg/image.hpp"
#include "pireg/relaxometry.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

namespace pireg::io {

namespace fs = std::filesystem;
using json = nlohmann::json;

inline constexpr int kSchemaVersion = 1;

/******************************************************************
 * Raw files
 *****************************************************************/

namespace detail {

inline std::uint32_t to_little(std::uint32_t v)
{
	if constexpr(std::endian::native == std::endian::little)
		return v;
	return (v >> 24) | ((v >> 8) & 0xff00u) | ((v << 8) & 0xff0000u) | (v << 24);
}

inline std::vector<char> read_bytes(const fs::path& path)
{
	std::ifstream in(path, std::ios::binary);
	if(!in)
		throw InputError("cannot open " + path.string());
	return std::vector<char>(std::istreambuf_iterator<char>(in), {});
}

inline void write_bytes(const fs::path& path, const char* data, std::size_t n)
{
	std::ofstream out(path, std::ios::binary | std::ios::trunc);
	if(!out)
		throw InputError("cannot write " + path.string());
	out.write(data, static_cast<std::streamsize>(n));
	if(!out)
		throw InputError("write failed: " + path.string());
}

inline void ensure_dir(const fs::path& dir)
{
	std::error_code ec;
	fs::create_directories(dir, ec);
	if(ec || !fs::is_directory(dir))
		throw InputError("cannot create directory " + dir.string());
}

} // namespace detail

/// Little-endian float32 encoding of a sequence of values.
inline void write_f32(const fs::path& path, const std::vector<double>& values)
{
	std::vector<char> buf(values.size() * 4);
	for(std::size_t i = 0; i < values.size(); ++i) {
		const auto bits = detail::to_little(std::bit_cast<std::uint32_t>(static_cast<float>(values[i])));
		std::memcpy(&buf[i * 4], &bits, 4);
	}
	detail::write_bytes(path, buf.data(), buf.size());
}

inline std::vector<double> read_f32(const fs::path& path, std::size_t expected)
{
	const auto buf = detail::read_bytes(path);
	if(buf.size() != expected * 4)
		throw InputError(path.string() + ": expected " + std::to_string(expected * 4) + " bytes, found " +
				std::to_string(buf.size()));
	std::vector<double> out(expected);
	for(std::size_t i = 0; i < expected; ++i) {
		std::uint32_t bits;
		std::memcpy(&bits, &buf[i * 4], 4);
		out[i] = static_cast<double>(std::bit_cast<float>(detail::to_little(bits)));
	}
	return out;
}

inline void write_images(const fs::path& path, std::span<const Image> images)
{
	std::vector<double> v;
	for(const auto& img : images)
		v.insert(v.end(), img.vec().begin(), img.vec().end());
	write_f32(path, v);
}

inline std::vector<Image> read_images(const fs::path& path, std::size_t count, std::size_t h, std::size_t w)
{
	const auto v = read_f32(path, count * h * w);
	std::vector<Image> out;
	for(std::size_t k = 0; k < count; ++k) {
		Image img(h, w);
		std::copy_n(v.begin() + static_cast<std::ptrdiff_t>(k * h * w), h * w, img.vec().begin());
		out.push_back(std::move(img));
	}
	return out;
}

inline void write_fields(const fs::path& path, std::span<const DeformationField> fields)
{
	std::vector<Image> planes;
	for(const auto& f : fields) {
		planes.push_back(f.ux);
		planes.push_back(f.uy);
	}
	write_images(path, planes);
}

inline std::vector<DeformationField> read_fields(const fs::path& path, std::size_t count, std::size_t h, std::size_t w)
{
	auto planes = read_images(path, 2 * count, h, w);
	std::vector<DeformationField> out;
	for(std::size_t k = 0; k < count; ++k) {
		DeformationField f;
		f.ux = std::move(planes[2 * k]);
		f.uy = std::move(planes[2 * k + 1]);
		out.push_back(std::move(f));
	}
	return out;
}

inline void write_masks(const fs::path& path, std::span<const Mask> masks)
{
	std::vector<char> buf;
	for(const auto& m : masks)
		for(auto v : m.data)
			buf.push_back(v ? 1 : 0);
	detail::write_bytes(path, buf.data(), buf.size());
}

/// Reads as many h x w planes as the file holds.
inline std::vector<Mask> read_masks(const fs::path& path, std::size_t h, std::size_t w)
{
	const auto buf = detail::read_bytes(path);
	if(h * w == 0 || buf.size() % (h * w) != 0 || buf.empty())
		throw InputError(path.string() + ": size is not a whole number of " + std::to_string(h) + "x" +
				std::to_string(w) + " planes");
	std::vector<Mask> out;
	for(std::size_t k = 0; k < buf.size() / (h * w); ++k) {
		Mask m(h, w);
		for(std::size_t i = 0; i < h * w; ++i) {
			const auto b = static_cast<unsigned char>(buf[k * h * w + i]);
			if(b > 1)
				throw InputError(path.string() + ": mask bytes must be 0 or 1");
			m.data[i] = b;
		}
		out.push_back(std::move(m));
	}
	return out;
}

/******************************************************************
 * Series containers
 *****************************************************************/

inline SignalModel model_from_string(const std::string& s)
{
	if(s == "t1")
		return SignalModel::T1Recovery3P;
	if(s == "t2")
		return SignalModel::T2Decay2P;
	if(s == "t1plus1")
		return SignalModel::T1PlusOne;
	throw InputError("unknown model '" + s + "' (expected t1, t2 or t1plus1)");
}

struct Container {
	ImageSeries series;
	std::vector<Mask> masks; ///< optional, from mask.u8
};

inline json read_json(const fs::path& path)
{
	std::ifstream in(path);
	if(!in)
		throw InputError("cannot open " + path.string());
	try {
		return json::parse(in);
	} catch(const json::exception& e) {
		throw InputError(path.string() + ": " + e.what());
	}
}

inline void write_json(const fs::path& path, const json& j)
{
	const std::string s = j.dump(2) + "\n";
	detail::write_bytes(path, s.data(), s.size());
}

inline json series_meta(const ImageSeries& s)
{
	std::vector<bool> flags(s.size(), false);
	for(std::size_t n = 0; n < s.size(); ++n)
		flags[n] = s.times.is_recovered(n);
	return json{{"schema_version", kSchemaVersion}, {"height", s.height()}, {"width", s.width()},
		{"frames", s.size()}, {"times_ms", s.times.t_ms}, {"model", to_string(s.model)},
		{"recovered_flags", flags}};
}

inline void write_container(const fs::path& dir, const ImageSeries& s, std::span<const Mask> masks = {})
{
	s.validate();
	detail::ensure_dir(dir);
	write_json(dir / "meta.json", series_meta(s));
	write_images(dir / "data.f32", s.frames);
	if(!masks.empty())
		write_masks(dir / "mask.u8", masks);
}

inline Container read_container(const fs::path& dir)
{
	const json meta = read_json(dir / "meta.json");
	Container c;
	try {
		if(meta.at("schema_version").get<int>() != kSchemaVersion)
			throw InputError(dir.string() + ": unsupported schema_version");
		const auto h = meta.at("height").get<std::size_t>();
		const auto w = meta.at("width").get<std::size_t>();
		const auto n = meta.at("frames").get<std::size_t>();
		c.series.times.t_ms = meta.at("times_ms").get<std::vector<double>>();
		c.series.model = model_from_string(meta.at("model").get<std::string>());
		if(meta.contains("recovered_flags"))
			c.series.times.recovered = meta.at("recovered_flags").get<std::vector<bool>>();
		if(c.series.times.size() != n)
			throw InputError(dir.string() + ": times_ms length differs from frames");
		if(h == 0 || w == 0 || n == 0)
			throw InputError(dir.string() + ": empty series");
		c.series.frames = read_images(dir / "data.f32", n, h, w);
		if(fs::exists(dir / "mask.u8"))
			c.masks = read_masks(dir / "mask.u8", h, w);
	} catch(const json::exception& e) {
		throw InputError(dir.string() + "/meta.json: " + e.what());
	}
	c.series.validate();
	return c;
}

/******************************************************************
 * Configuration
 *****************************************************************/

/// Strict reader: keys are the RegConfig field names; anything else fails.
inline RegConfig config_from_json(const json& j)
{
	if(!j.is_object())
		throw InputError("config: expected a JSON object");
	RegConfig c;
	try {
		for(const auto& [key, v] : j.items()) {
			if(key == "weights") {
				if(!v.is_object())
					throw InputError("config: 'weights' must be an object");
				for(const auto& [wk, wv] : v.items()) {
					if(wk == "lambda0")
						c.weights.lambda0 = wv.get<double>();
					else if(wk == "lambda1")
						c.weights.lambda1 = wv.get<double>();
					else
						throw InputError("config: unknown key 'weights." + wk + "'");
				}
			} else if(key == "pyramid_levels")
				c.pyramid_levels = v.get<std::size_t>();
			else if(key == "control_spacing")
				c.control_spacing = v.get<double>();
			else if(key == "stageA_iters")
				c.stageA_iters = v.get<std::size_t>();
			else if(key == "stageB_rounds")
				c.stageB_rounds = v.get<std::size_t>();
			else if(key == "stageB_inner_iters")
				c.stageB_inner_iters = v.get<std::size_t>();
			else if(key == "step_size")
				c.step_size = v.get<double>();
			else if(key == "nmi_bins")
				c.nmi_bins = v.get<std::size_t>();
			else if(key == "nmi_sigma")
				c.nmi_sigma = v.get<double>();
			else if(key == "seed")
				c.seed = v.get<std::uint64_t>();
			else if(key == "line_halving")
				c.line_halving = v.get<bool>();
			else if(key == "threads")
				c.threads = v.get<unsigned>();
			else
				throw InputError("config: unknown key '" + key + "'");
		}
	} catch(const json::exception& e) {
		throw InputError(std::string("config: ") + e.what());
	}
	c.validate();
	return c;
}

inline RegConfig read_config(const fs::path& path) { return config_from_json(read_json(path)); }

inline json config_to_json(const RegConfig& c)
{
	return json{{"weights", {{"lambda0", c.weights.lambda0}, {"lambda1", c.weights.lambda1}}},
		{"pyramid_levels", c.pyramid_levels}, {"control_spacing", c.control_spacing},
		{"stageA_iters", c.stageA_iters}, {"stageB_rounds", c.stageB_rounds},
		{"stageB_inner_iters", c.stageB_inner_iters}, {"step_size", c.step_size}, {"nmi_bins", c.nmi_bins},
		{"nmi_sigma", c.nmi_sigma}, {"seed", c.seed}, {"line_halving", c.line_halving}, {"threads", c.threads}};
}

/******************************************************************
 * Results
 *****************************************************************/

/// maps.json, params.f32 (one plane per parameter), r2.f32, converged.u8.
inline void write_param_maps(const fs::path& dir, const ParamMaps& m)
{
	detail::ensure_dir(dir);
	write_json(dir / "maps.json", json{{"schema_version", kSchemaVersion}, {"model", to_string(m.model)},
		{"height", m.height()}, {"width", m.width()}, {"parameters", parameter_names(m.model)}});
	write_images(dir / "params.f32", m.params);
	write_images(dir / "r2.f32", std::vector<Image>{m.r2});
	write_masks(dir / "converged.u8", std::vector<Mask>{m.converged});
}

inline ParamMaps read_param_maps(const fs::path& dir)
{
	const json meta = read_json(dir / "maps.json");
	ParamMaps m;
	try {
		m.model = model_from_string(meta.at("model").get<std::string>());
		const auto h = meta.at("height").get<std::size_t>();
		const auto w = meta.at("width").get<std::size_t>();
		m.params = read_images(dir / "params.f32", parameter_count(m.model), h, w);
		m.r2 = read_images(dir / "r2.f32", 1, h, w)[0];
		const auto conv = read_masks(dir / "converged.u8", h, w);
		if(conv.size() != 1)
			throw InputError(dir.string() + ": converged.u8 must hold one plane");
		m.converged = conv[0];
	} catch(const json::exception& e) {
		throw InputError(dir.string() + "/maps.json: " + e.what());
	}
	return m;
}

inline std::string format_double(double v)
{
	std::ostringstream s;
	s << std::setprecision(17) << v;
	return s.str();
}

/// iter,stage,similarity,smooth,cyclic,total with round-trip precision.
inline void write_trace_csv(const fs::path& path, std::span<const LossRecord> trace)
{
	std::ostringstream s;
	s << "iter,stage,similarity,smooth,cyclic,total\n";
	for(const auto& r : trace)
		s << r.iter << ',' << r.stage << ',' << format_double(r.loss.similarity) << ','
		  << format_double(r.loss.smooth) << ',' << format_double(r.loss.cyclic) << ','
		  << format_double(r.loss.total) << '\n';
	const std::string str = s.str();
	detail::write_bytes(path, str.data(), str.size());
}

/// 8-bit binary PGM, min-max windowed; a constant image maps to zero.
inline void write_pgm(const fs::path& path, const Image& img)
{
	if(img.empty())
		throw InputError("write_pgm: empty image");
	const auto r = intensity_range(img);
	std::string out = "P5\n" + std::to_string(img.width()) + " " + std::to_string(img.height()) + "\n255\n";
	const double span = r.width();
	for(double v : img.vec()) {
		const double x = span > 0.0 ? (v - r.lo) / span : 0.0;
		out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(std::clamp(x, 0.0, 1.0) * 255.0))));
	}
	detail::write_bytes(path, out.data(), out.size());
}

} // namespace pireg::io
