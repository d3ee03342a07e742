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
 *****************************************************************************/
#include "pireg/phantom.hpp"
#include "pireg/relaxometry.hpp"
#include "pireg/similarity.hpp"

#include "support.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

using namespace pireg;

namespace {

const std::vector<double> kMolli{100, 180, 260, 1100, 1180, 1260, 2100, 2180, 3100, 3180, 4100};

AcquisitionTimes times_of(std::vector<double> t) { return AcquisitionTimes{std::move(t), {}}; }

double t1_signal(double a, double b, double t1, double t) { return std::abs(a - b * std::exp(-t / t1)); }

double sse(const std::vector<double>& t, const std::vector<double>& s, double a, double b, double t1)
{
	double e = 0.0;
	for(std::size_t k = 0; k < t.size(); ++k) {
		const double d = t1_signal(a, b, t1, t[k]) - s[k];
		e += d * d;
	}
	return e;
}

// Smooth noisy T1 series on an h x w image with spatially varying parameters.
std::vector<Image> t1_frames(std::size_t h, std::size_t w, double noise, std::uint64_t seed)
{
	std::mt19937_64 rng(seed);
	std::normal_distribution<double> g(0.0, noise);
	std::vector<Image> frames(kMolli.size(), Image(h, w));
	for(std::size_t r = 0; r < h; ++r)
		for(std::size_t c = 0; c < w; ++c) {
			const double a = 800.0 + 20.0 * static_cast<double>(c);
			const double b = 1.8 * a;
			const double t1 = 600.0 + 40.0 * static_cast<double>(r);
			for(std::size_t n = 0; n < kMolli.size(); ++n)
				frames[n](r, c) = t1_signal(a, b, t1, kMolli[n]) + g(rng);
		}
	return frames;
}

} // namespace

TEST(Predict, T1AtZero)
{
	const double p[] = {1000, 1800, 900};
	EXPECT_DOUBLE_EQ(predict(SignalModel::T1Recovery3P, p, 0.0), 800.0);
}

TEST(Predict, T1NullCrossing)
{
	const double p[] = {1000, 2000, 1000};
	EXPECT_NEAR(predict(SignalModel::T1Recovery3P, p, 1000.0 * std::log(2.0)), 0.0, 1e-9);
}

TEST(Predict, T2OneTimeConstant)
{
	const double p[] = {500, 50};
	EXPECT_NEAR(predict(SignalModel::T2Decay2P, p, 50.0), 500.0 / std::exp(1.0), 1e-12);
	EXPECT_NEAR(predict(SignalModel::T2Decay2P, p, 50.0), 183.94, 0.01);
}

TEST(Predict, RecoveredFrameAndLimits)
{
	const double p[] = {1000, 1800, 900};
	EXPECT_EQ(predict(SignalModel::T1PlusOne, p, 10.0, true), 1000.0);
	EXPECT_EQ(predict(SignalModel::T1PlusOne, p, 10.0, false), predict(SignalModel::T1Recovery3P, p, 10.0));
	EXPECT_LT(std::abs(predict(SignalModel::T1Recovery3P, p, 1e6) - 1000.0), 1e-6 * 1000.0);
	// Continuity in t.
	EXPECT_NEAR(predict(SignalModel::T1Recovery3P, p, 500.0), predict(SignalModel::T1Recovery3P, p, 500.0 + 1e-9), 1e-6);
	const double bad[] = {1000, 1800, 0};
	EXPECT_THROW(predict(SignalModel::T1Recovery3P, bad, 1.0), InputError);
	const double bad2[] = {1000, -5};
	EXPECT_THROW(predict(SignalModel::T2Decay2P, bad2, 1.0), InputError);
}

TEST(LmFit, NoiselessT1RoundTrip)
{
	std::vector<double> s;
	for(double t : kMolli)
		s.push_back(t1_signal(1000, 1800, 900, t));
	const PixelFit f = lm_fit_pixel(times_of(kMolli), s, SignalModel::T1Recovery3P);
	EXPECT_TRUE(f.converged);
	EXPECT_LT(test::rel_err(f.params[0], 1000), 1e-4);
	EXPECT_LT(test::rel_err(f.params[1], 1800), 1e-4);
	EXPECT_LT(test::rel_err(f.params[2], 900), 1e-4);
}

TEST(LmFit, NoiselessT2RoundTrip)
{
	const std::vector<double> t{10, 35, 60};
	std::vector<double> s;
	for(double v : t)
		s.push_back(900.0 * std::exp(-v / 50.0));
	const PixelFit f = lm_fit_pixel(times_of(t), s, SignalModel::T2Decay2P);
	EXPECT_TRUE(f.converged);
	EXPECT_LT(test::rel_err(f.params[0], 900), 1e-4);
	EXPECT_LT(test::rel_err(f.params[1], 50), 1e-4);
}

TEST(LmFit, ConstantT2SamplesHitTheClamp)
{
	const std::vector<double> s{420.0, 420.0, 420.0};
	const PixelFit f = lm_fit_pixel(times_of({10, 35, 60}), s, SignalModel::T2Decay2P);
	EXPECT_DOUBLE_EQ(f.params[0], 420.0);
	EXPECT_EQ(f.residual, 0.0);
	EXPECT_EQ(f.params[1], kT2Bounds[1]);
	EXPECT_FALSE(f.converged);
}

TEST(LmFit, NoisyT1BeatsGridSearch)
{
	std::mt19937_64 rng(3);
	std::normal_distribution<double> g(0.0, 10.0); // 1% of A
	std::vector<double> s;
	for(double t : kMolli)
		s.push_back(t1_signal(1000, 1800, 900, t) + g(rng));
	const PixelFit f = lm_fit_pixel(times_of(kMolli), s, SignalModel::T1Recovery3P);

	double best = std::numeric_limits<double>::infinity();
	for(int i = 0; i < 50; ++i)
		for(int j = 0; j < 50; ++j)
			for(int k = 0; k < 50; ++k)
				best = std::min(best, sse(kMolli, s, 2000.0 * i / 49, 4000.0 * j / 49, 100.0 + 2900.0 * k / 49));
	EXPECT_LE(f.residual, best);
	EXPECT_NEAR(f.residual, sse(kMolli, s, f.params[0], f.params[1], f.params[2]), 1e-6 * f.residual);
}

TEST(LmFit, AcceptedCostsAreMonotone)
{
	std::mt19937_64 rng(4);
	std::normal_distribution<double> g(0.0, 15.0);
	LmOptions opt;
	opt.record_costs = true;
	for(int rep = 0; rep < 20; ++rep) {
		std::vector<double> s;
		for(double t : kMolli)
			s.push_back(t1_signal(900 + 20 * rep, 1700, 500 + 60 * rep, t) + g(rng));
		const PixelFit f = lm_fit_pixel(times_of(kMolli), s, SignalModel::T1Recovery3P, opt);
		ASSERT_FALSE(f.accepted_costs.empty());
		for(std::size_t k = 1; k < f.accepted_costs.size(); ++k)
			EXPECT_LE(f.accepted_costs[k], f.accepted_costs[k - 1]);
		EXPECT_DOUBLE_EQ(f.accepted_costs.back(), f.residual);
	}
}

TEST(LmFit, Errors)
{
	EXPECT_THROW(lm_fit_pixel(times_of({1, 2, 3}), std::vector<double>{1, 2, 3}, SignalModel::T1Recovery3P),
			InputError);
	EXPECT_THROW(lm_fit_pixel(times_of({5, 5, 5, 5}), std::vector<double>{1, 2, 3, 4}, SignalModel::T1Recovery3P),
			InputError);
	EXPECT_THROW(lm_fit_pixel(times_of({1, 2}), std::vector<double>{1, 2, 3}, SignalModel::T2Decay2P), InputError);
}

TEST(FitSeries, ZeroMotionPhantomRecoversTruth)
{
	PhantomConfig cfg;
	cfg.amplitude = 0.0;
	cfg.offset = 0.0;
	cfg.noise = 0.0;
	cfg.height = cfg.width = 64;
	const Phantom ph = generate_phantom(cfg);
	const Mask& myo = ph.truth.myocardium;
	ASSERT_GT(myo.count(), 100u);
	const ParamMaps m1 = fit_series(ph.t1, {}, &myo, 1);
	const ParamMaps m2 = fit_series(ph.t2, {}, &myo, 1);
	for(std::size_t i = 0; i < myo.data.size(); ++i) {
		if(!myo.data[i])
			continue;
		ASSERT_TRUE(m1.converged.data[i]) << i;
		for(std::size_t k = 0; k < 3; ++k)
			EXPECT_LT(test::rel_err(m1.params[k][i], ph.truth.maps[k][i]), 1e-3) << i;
		EXPECT_LT(test::rel_err(m2.params[0][i], ph.truth.maps[3][i]), 1e-3) << i;
		EXPECT_LT(test::rel_err(m2.params[1][i], ph.truth.maps[4][i]), 1e-3) << i;
	}
}

TEST(FitSeries, SinglePixelMask)
{
	const auto frames = t1_frames(6, 5, 0.0, 1);
	Mask m(6, 5);
	m(2, 3) = 1;
	const ParamMaps p = fit_frames(frames, times_of(kMolli), SignalModel::T1Recovery3P, &m, 1);
	for(std::size_t i = 0; i < 30; ++i) {
		const bool inside = i == 2 * 5 + 3;
		EXPECT_EQ(p.converged.data[i] != 0, inside) << i;
		if(!inside)
			for(const auto& map : p.params)
				EXPECT_EQ(map[i], 0.0);
	}
	EXPECT_LT(test::rel_err(p.params[2](2, 3), 600.0 + 40.0 * 2), 1e-4);
}

TEST(FitSeries, DeterministicAcrossThreadCounts)
{
	const auto frames = t1_frames(12, 10, 8.0, 2);
	ImageSeries s{frames, times_of(kMolli), SignalModel::T1Recovery3P};
	std::mt19937_64 rng(5);
	std::vector<DeformationField> fields;
	for(std::size_t k = 0; k < frames.size(); ++k)
		fields.push_back(densify(test::random_grid(12, 10, 4, rng, 0.7), 12, 10));
	const ParamMaps a = fit_series(s, fields, nullptr, 1);
	const ParamMaps b = fit_series(s, fields, nullptr, 3);
	for(std::size_t k = 0; k < 3; ++k)
		EXPECT_EQ(a.params[k], b.params[k]);
	EXPECT_EQ(a.r2, b.r2);
	EXPECT_EQ(a.converged, b.converged);
	EXPECT_THROW(fit_series(s, std::vector<DeformationField>(2, DeformationField(12, 10))), InputError);
}

TEST(Synthesize, RoundTripReproducesNoiselessSeries)
{
	const auto frames = t1_frames(8, 8, 0.0, 3);
	const auto times = times_of(kMolli);
	const ParamMaps p = fit_frames(frames, times, SignalModel::T1Recovery3P, nullptr, 1);
	const auto syn = synthesize(p, times);
	for(std::size_t n = 0; n < frames.size(); ++n)
		for(std::size_t i = 0; i < 64; ++i)
			EXPECT_LE(std::abs(syn[n][i] - frames[n][i]), 1e-3 * std::max(std::abs(frames[n][i]), 1.0));
}

TEST(Synthesize, RecoveredFrameEqualsA)
{
	const auto frames = t1_frames(5, 5, 0.0, 4);
	ParamMaps p = fit_frames(frames, times_of(kMolli), SignalModel::T1Recovery3P, nullptr, 1);
	p.model = SignalModel::T1PlusOne;
	AcquisitionTimes t{{100, 1000, 4101}, {false, false, true}};
	const auto syn = synthesize(p, t);
	EXPECT_EQ(syn[2], p.params[0]);
}

TEST(Synthesize, NullExponentialGivesA)
{
	ParamMaps p;
	p.model = SignalModel::T1Recovery3P;
	p.params = {Image(3, 3, 700.0), Image(3, 3, 0.0), Image(3, 3, 800.0)};
	p.r2 = Image(3, 3);
	p.converged = Mask(3, 3, 1);
	p.temporal_mean = Image(3, 3);
	for(const auto& f : synthesize(p, times_of(kMolli)))
		EXPECT_EQ(f, Image(3, 3, 700.0));
}

TEST(Synthesize, UnconvergedUsesTemporalMean)
{
	ParamMaps p;
	p.model = SignalModel::T2Decay2P;
	p.params = {Image(2, 2, 10.0), Image(2, 2, 30.0)};
	p.r2 = Image(2, 2);
	p.converged = Mask(2, 2, 1);
	p.converged(1, 1) = 0;
	p.temporal_mean = Image(2, 2, 5.5);
	const auto syn = synthesize(p, times_of({0, 30}));
	EXPECT_EQ(syn[1](1, 1), 5.5);
	EXPECT_NEAR(syn[1](0, 0), 10.0 / std::exp(1.0), 1e-12);
}

TEST(FitSeries, FitSynthesizeFitIsIdempotent)
{
	const auto frames = t1_frames(8, 8, 12.0, 5);
	const auto times = times_of(kMolli);
	const ParamMaps p1 = fit_frames(frames, times, SignalModel::T1Recovery3P, nullptr, 1);
	const ParamMaps p2 = fit_frames(synthesize(p1, times), times, SignalModel::T1Recovery3P, nullptr, 1);
	for(std::size_t i = 0; i < 64; ++i) {
		if(!p1.converged.data[i] || !p2.converged.data[i])
			continue;
		for(std::size_t k = 0; k < 3; ++k)
			EXPECT_LT(test::rel_err(p2.params[k][i], p1.params[k][i]), 1e-6) << i;
	}
	EXPECT_GT(p1.converged.count(), 60u);
}

TEST(R2, PerfectAndMeanPredictions)
{
	std::mt19937_64 rng(6);
	std::vector<Image> s;
	for(int k = 0; k < 5; ++k)
		s.push_back(test::random_image(4, 4, rng));
	const Image perfect = r2_map(s, s);
	for(double v : perfect.vec())
		EXPECT_EQ(v, 1.0);
	const Image mean = mean_template(s);
	const std::vector<Image> flat(5, mean);
	const Image none = r2_map(s, flat);
	for(double v : none.vec())
		EXPECT_NEAR(v, 0.0, 1e-12);
}

TEST(R2, MatchesDirectFormula)
{
	std::mt19937_64 rng(7);
	std::vector<Image> s, p;
	for(int k = 0; k < 10; ++k) {
		s.push_back(test::random_image(3, 3, rng));
		p.push_back(test::random_image(3, 3, rng));
	}
	const Image r = r2_map(s, p);
	for(std::size_t i = 0; i < 9; ++i) {
		double m = 0.0;
		for(const auto& f : s)
			m += f[i] / 10.0;
		double res = 0.0, tot = 0.0;
		for(std::size_t k = 0; k < 10; ++k) {
			res += (s[k][i] - p[k][i]) * (s[k][i] - p[k][i]);
			tot += (s[k][i] - m) * (s[k][i] - m);
		}
		EXPECT_NEAR(r[i], 1.0 - res / tot, 1e-12);
		EXPECT_LE(r[i], 1.0);
	}
}

TEST(R2, FlatSamples)
{
	const std::vector<double> flat{3, 3, 3}, same{3, 3, 3}, off{3, 3, 4};
	EXPECT_EQ(r2_value(flat, same), 1.0);
	EXPECT_EQ(r2_value(flat, off), 0.0);
}
