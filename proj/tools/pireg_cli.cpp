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
 * @file pireg_cli.cpp Command-line driver: phantom, register, register2,
 * metrics.
 *
 *****************************************************************************/
#include "pireg/engine.hpp"
#include "pireg/hierarchy.hpp"
#include "pireg/io.hpp"
#include "pireg/phantom.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace pireg;
using io::json;

namespace {

constexpr int kExitInput = 2;
constexpr int kExitNumerical = 3;

struct DisplacementStats {
	double mean = 0.0;
	double max = 0.0;
};

DisplacementStats displacement_stats(std::span<const DeformationField> fields)
{
	DisplacementStats s;
	std::size_t n = 0;
	for(const auto& f : fields)
		for(std::size_t i = 0; i < f.ux.size(); ++i) {
			const double m = std::hypot(f.ux[i], f.uy[i]);
			s.mean += m;
			s.max = std::max(s.max, m);
			++n;
		}
	if(n)
		s.mean /= static_cast<double>(n);
	return s;
}

json loss_json(const LossBreakdown& l)
{
	return json{{"similarity", l.similarity}, {"smooth", l.smooth}, {"cyclic", l.cyclic}, {"total", l.total}};
}

double converged_fraction(const ParamMaps& m)
{
	return m.converged.data.empty() ? 0.0
		: static_cast<double>(m.converged.count()) / static_cast<double>(m.converged.data.size());
}

void require_converged(const ParamMaps& m)
{
	if(m.converged.count() == 0)
		throw NumericalError("no pixel fit converged");
}

RegConfig load_config(const std::string& path, int threads)
{
	RegConfig cfg = path.empty() ? RegConfig{} : io::read_config(path);
	if(threads >= 0)
		cfg.threads = static_cast<unsigned>(threads);
	cfg.validate();
	return cfg;
}

ImageSeries warped(const ImageSeries& s, std::span<const DeformationField> fields)
{
	ImageSeries out = s;
	for(std::size_t t = 0; t < s.size(); ++t)
		out.frames[t] = warp(s.frames[t], fields[t]);
	return out;
}

/// Warped series container plus fields, maps and (if masks are given)
/// the consensus myocardium in the corrected geometry.
void write_registered(const fs::path& dir, const ImageSeries& s, std::span<const DeformationField> fields,
		const ParamMaps& maps, std::span<const Mask> masks)
{
	io::write_container(dir, warped(s, fields));
	io::write_fields(dir / "fields.f32", fields);
	io::write_param_maps(dir / "maps", maps);
	if(!masks.empty())
		io::write_masks(dir / "mask.u8", std::vector<Mask>{consensus_mask(masks, fields)});
}

/******************************************************************
 * phantom
 *****************************************************************/

ParamMaps truth_maps(const PhantomTruth& t, SignalModel model)
{
	ParamMaps m;
	m.model = model;
	const std::size_t h = t.maps[0].height(), w = t.maps[0].width();
	if(model == SignalModel::T2Decay2P)
		m.params = {t.maps[3], t.maps[4]};
	else
		m.params = {t.maps[0], t.maps[1], t.maps[2]};
	m.r2 = Image(h, w, 1.0);
	m.converged = Mask(h, w, 1);
	return m;
}

int cmd_phantom(const fs::path& out, PhantomConfig cfg)
{
	const Phantom ph = generate_phantom(cfg);
	io::write_container(out / "t1", ph.t1, ph.truth.observed_t1);
	io::write_container(out / "t2", ph.t2, ph.truth.observed_t2);

	const std::vector<Mask> myo{ph.truth.myocardium};
	struct Part {
		const char* name;
		const ImageSeries& series;
		const std::vector<DeformationField>& fields;
		SignalModel model;
	};
	for(const Part& p : {Part{"t1", ph.t1, ph.truth.fields_t1, SignalModel::T1Recovery3P},
				Part{"t2", ph.t2, ph.truth.fields_t2, SignalModel::T2Decay2P}}) {
		const fs::path dir = out / "truth" / p.name;
		io::detail::ensure_dir(dir);
		io::write_json(dir / "meta.json", io::series_meta(p.series));
		io::write_fields(dir / "fields.f32", p.fields);
		io::write_masks(dir / "mask.u8", myo);
		io::write_param_maps(dir / "maps", truth_maps(ph.truth, p.model));
	}
	io::write_json(out / "truth" / "phantom.json",
			json{{"schema_version", io::kSchemaVersion}, {"seed", cfg.seed}, {"amplitude", cfg.amplitude},
				{"offset", cfg.offset}, {"offset_angle_deg", cfg.offset_angle_deg}, {"noise", cfg.noise},
				{"motion_spacing", cfg.motion_spacing}, {"offset_x", ph.truth.offset_x},
				{"offset_y", ph.truth.offset_y}, {"height", cfg.height}, {"width", cfg.width}});
	std::cout << "wrote phantom to " << out.string() << "\n";
	return 0;
}

/******************************************************************
 * register
 *****************************************************************/

int cmd_register(const fs::path& in, const std::string& model, const std::string& config, int threads,
		const fs::path& out)
{
	io::Container c = io::read_container(in);
	c.series.model = io::model_from_string(model);
	c.series.validate();
	const RegConfig cfg = load_config(config, threads);

	const RegResult r = register_group(c.series, cfg);
	for(const auto& rec : r.loss_trace)
		if(!std::isfinite(rec.loss.total))
			throw NumericalError("registration diverged");
	require_converged(r.param_maps);

	io::detail::ensure_dir(out);
	write_registered(out, c.series, r.fields, r.param_maps, c.masks);
	io::write_trace_csv(out / "trace.csv", r.loss_trace);

	const auto d = displacement_stats(r.fields);
	json summary{{"schema_version", io::kSchemaVersion}, {"model", to_string(c.series.model)},
		{"frames", c.series.size()}, {"height", c.series.height()}, {"width", c.series.width()},
		{"mean_displacement_px", d.mean}, {"max_displacement_px", d.max},
		{"median_r2", median_r2(r.param_maps)}, {"converged_fraction", converged_fraction(r.param_maps)},
		{"iterations", r.loss_trace.size()}, {"config", io::config_to_json(cfg)}};
	if(!r.loss_trace.empty())
		summary["final_loss"] = loss_json(r.loss_trace.back().loss);
	io::write_json(out / "summary.json", summary);
	std::cout << "mean |u| " << d.mean << " px, median R2 " << median_r2(r.param_maps) << "\n";
	return 0;
}

/******************************************************************
 * register2
 *****************************************************************/

json optional_number(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

int cmd_register2(const fs::path& t1_dir, const fs::path& t2_dir, const std::string& config,
		const std::string& roi_path, int threads, const fs::path& out)
{
	io::Container t1 = io::read_container(t1_dir);
	io::Container t2 = io::read_container(t2_dir);
	const RegConfig cfg = load_config(config, threads);

	TwoLevelMasks masks;
	masks.observed_t1 = t1.masks;
	masks.observed_t2 = t2.masks;
	if(!roi_path.empty()) {
		const auto roi = io::read_masks(roi_path, t1.series.height(), t1.series.width());
		if(roi.size() != 1)
			throw InputError("--roi must hold a single mask plane");
		masks.roi = roi[0];
	}
	const TwoLevelResult r = two_level_register(t1.series, t2.series, cfg, &masks);
	require_converged(r.maps_t1);
	require_converged(r.maps_t2);

	io::detail::ensure_dir(out);
	write_registered(out / "t1", t1.series, r.fields_t1, r.maps_t1, t1.masks);
	write_registered(out / "t2", t2.series, r.fields_t2, r.maps_t2, t2.masks);
	io::write_trace_csv(out / "t1" / "trace.csv", r.trace_t1);
	io::write_trace_csv(out / "t2" / "trace.csv", r.trace_t2);
	io::write_trace_csv(out / "trace_combined.csv", r.trace_combined);

	const auto& rep = r.report;
	json report{{"schema_version", io::kSchemaVersion},
		{"dice", {{"raw", optional_number(rep.dice_raw)}, {"level1", optional_number(rep.dice_level1)},
				{"level2", optional_number(rep.dice_level2)}}},
		{"r2_median", {{"t1", {{"level1", rep.r2_t1_level1}, {"final", rep.r2_t1_final}}},
				{"t2", {{"level1", rep.r2_t2_level1}, {"final", rep.r2_t2_final}}}}},
		{"mean_displacement_px", {{"t1", displacement_stats(r.fields_t1).mean},
				{"t2", displacement_stats(r.fields_t2).mean}}},
		{"roi", !roi_path.empty()}, {"config", io::config_to_json(cfg)}};
	io::write_json(out / "report.json", report);
	if(rep.dice_level1 && rep.dice_level2)
		std::cout << "dice level1 " << *rep.dice_level1 << ", level2 " << *rep.dice_level2 << "\n";
	return 0;
}

/******************************************************************
 * metrics
 *****************************************************************/

struct FieldDir {
	std::size_t frames = 0, h = 0, w = 0;
	std::vector<DeformationField> fields;
	std::optional<Mask> mask;
};

FieldDir read_field_dir(const fs::path& dir)
{
	const json meta = io::read_json(dir / "meta.json");
	FieldDir d;
	try {
		d.frames = meta.at("frames").get<std::size_t>();
		d.h = meta.at("height").get<std::size_t>();
		d.w = meta.at("width").get<std::size_t>();
	} catch(const json::exception& e) {
		throw InputError(dir.string() + "/meta.json: " + e.what());
	}
	d.fields = io::read_fields(dir / "fields.f32", d.frames, d.h, d.w);
	if(fs::exists(dir / "mask.u8")) {
		const auto m = io::read_masks(dir / "mask.u8", d.h, d.w);
		if(m.size() == 1)
			d.mask = m[0];
	}
	return d;
}

int cmd_metrics(const fs::path& found_dir, const fs::path& truth_dir, fs::path out)
{
	if(out.empty())
		out = found_dir / "metrics";
	const FieldDir found = read_field_dir(found_dir);
	const FieldDir truth = read_field_dir(truth_dir);
	if(found.frames != truth.frames || found.h != truth.h || found.w != truth.w)
		throw InputError("metrics: found and truth dimensions differ");
	io::detail::ensure_dir(out);

	const Mask region = truth.mask ? *truth.mask : Mask(truth.h, truth.w, 1);
	if(region.count() == 0)
		throw InputError("metrics: truth mask is empty");
	std::ostringstream epe;
	epe << "frame,mean_px,median_px\n";
	for(std::size_t t = 0; t < found.frames; ++t) {
		const auto e = endpoint_error(std::span(&found.fields[t], 1), std::span(&truth.fields[t], 1), region);
		epe << t << ',' << io::format_double(e.mean) << ',' << io::format_double(e.median) << '\n';
	}
	const auto all = endpoint_error(found.fields, truth.fields, region);
	epe << "all," << io::format_double(all.mean) << ',' << io::format_double(all.median) << '\n';
	{
		std::ofstream f(out / "epe.csv");
		f << epe.str();
	}
	std::cout << "mean EPE " << all.mean << " px\n";

	if(found.mask && truth.mask) {
		std::ofstream f(out / "dice.csv");
		f << "dice\n" << io::format_double(dice(*found.mask, *truth.mask)) << '\n';
	}

	if(fs::exists(found_dir / "maps" / "maps.json")) {
		const ParamMaps maps = io::read_param_maps(found_dir / "maps");
		if(maps.height() != found.h || maps.width() != found.w)
			throw InputError("metrics: map dimensions differ from fields");
		std::ofstream f(out / "r2.csv");
		f << "region,median\n";
		f << "mask," << io::format_double(median_r2(maps, &region)) << '\n';
		f << "all," << io::format_double(median_r2(maps)) << '\n';
		const auto names = parameter_names(maps.model);
		for(std::size_t k = 0; k < names.size(); ++k)
			io::write_pgm(out / ("map_" + names[k] + ".pgm"), maps.params[k]);
		io::write_pgm(out / "r2.pgm", maps.r2);
	}
	return 0;
}

} // namespace

int main(int argc, char** argv)
{
	CLI::App app{"Groupwise registration of quantitative MR series"};
	app.require_subcommand(1);

	auto* ph = app.add_subcommand("phantom", "write a synthetic T1/T2 phantom with ground truth");
	fs::path ph_out;
	PhantomConfig pcfg;
	ph->add_option("--out", ph_out, "output directory")->required();
	ph->add_option("--seed", pcfg.seed, "random seed")->required();
	ph->add_option("--amplitude", pcfg.amplitude, "max intra-series motion, px");
	ph->add_option("--offset", pcfg.offset, "T2 offset, px");
	ph->add_option("--offset-angle", pcfg.offset_angle_deg, "direction of the T2 offset, degrees");
	ph->add_option("--noise", pcfg.noise, "noise sigma as a fraction of the series maximum");

	auto* reg = app.add_subcommand("register", "groupwise registration of one series");
	fs::path reg_in, reg_out;
	std::string reg_model, reg_config;
	int reg_threads = -1;
	reg->add_option("--in", reg_in, "series container")->required();
	reg->add_option("--model", reg_model, "signal model")->required()->check(CLI::IsMember({"t1", "t2"}));
	reg->add_option("--config", reg_config, "JSON configuration");
	reg->add_option("--threads", reg_threads, "worker threads (0 = all cores)");
	reg->add_option("--out", reg_out, "output directory")->required();

	auto* reg2 = app.add_subcommand("register2", "two-level registration of a T1 and a T2 series");
	fs::path r2_t1, r2_t2, r2_out;
	std::string r2_config, r2_roi;
	int r2_threads = -1;
	reg2->add_option("--t1", r2_t1, "T1 series container")->required();
	reg2->add_option("--t2", r2_t2, "T2 series container")->required();
	reg2->add_option("--config", r2_config, "JSON configuration");
	reg2->add_option("--roi", r2_roi, "mask.u8 with the region for R2 medians");
	reg2->add_option("--threads", r2_threads, "worker threads (0 = all cores)");
	reg2->add_option("--out", r2_out, "output directory")->required();

	auto* met = app.add_subcommand("metrics", "compare a result directory with ground truth");
	fs::path m_found, m_truth, m_out;
	met->add_option("--found", m_found, "result directory")->required();
	met->add_option("--truth", m_truth, "truth directory")->required();
	met->add_option("--out", m_out, "output directory (default FOUND/metrics)");

	try {
		app.parse(argc, argv);
	} catch(const CLI::ParseError& e) {
		const int code = app.exit(e);
		return code == 0 ? 0 : kExitInput;
	}

	try {
		if(*ph)
			return cmd_phantom(ph_out, pcfg);
		if(*reg)
			return cmd_register(reg_in, reg_model, reg_config, reg_threads, reg_out);
		if(*reg2)
			return cmd_register2(r2_t1, r2_t2, r2_config, r2_roi, r2_threads, r2_out);
		if(*met)
			return cmd_metrics(m_found, m_truth, m_out);
	} catch(const InputError& e) {
		std::cerr << "error: " << e.what() << "\n";
		return kExitInput;
	} catch(const fs::filesystem_error& e) {
		std::cerr << "error: " << e.what() << "\n";
		return kExitInput;
	} catch(const NumericalError& e) {
		std::cerr << "numerical failure: " << e.what() << "\n";
		return kExitNumerical;
	} catch(const std::exception& e) {
		std::cerr << "numerical failure: " << e.what() << "\n";
		return kExitNumerical;
	}
	return kExitInput;
}
