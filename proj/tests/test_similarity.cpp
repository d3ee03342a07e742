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
#include "pireg/similarity.hpp"

#include "support.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

using namespace pireg;

namespace {

// Histogram-based NMI computed directly: every bin in a generous window
// gets its kernel weight, out-of-range bins are folded to the edges.
double nmi_ref(const Image& a, const Image& b, std::size_t bins, double sigma)
{
	auto weights = [&](double v, double lo, double hi) {
		std::vector<double> w(bins, 0.0);
		const double x = (v - lo) / (hi - lo) * static_cast<double>(bins - 1);
		double sum = 0.0;
		for(long k = -8; k < static_cast<long>(bins) + 8; ++k) {
			const double wk = test::cubic_bspline_ref((x - static_cast<double>(k)) / sigma);
			w[static_cast<std::size_t>(std::clamp(k, 0L, static_cast<long>(bins) - 1))] += wk;
			sum += wk;
		}
		for(auto& v2 : w)
			v2 /= sum;
		return w;
	};
	const auto [alo, ahi] = std::minmax_element(a.vec().begin(), a.vec().end());
	const auto [blo, bhi] = std::minmax_element(b.vec().begin(), b.vec().end());
	std::vector<double> joint(bins * bins, 0.0);
	for(std::size_t p = 0; p < a.size(); ++p) {
		const auto wa = weights(a[p], *alo, *ahi), wb = weights(b[p], *blo, *bhi);
		for(std::size_t i = 0; i < bins; ++i)
			for(std::size_t j = 0; j < bins; ++j)
				joint[i * bins + j] += wa[i] * wb[j] / static_cast<double>(a.size());
	}
	std::vector<double> pa(bins, 0.0), pb(bins, 0.0);
	double hab = 0.0;
	for(std::size_t i = 0; i < bins; ++i)
		for(std::size_t j = 0; j < bins; ++j) {
			const double p = joint[i * bins + j];
			pa[i] += p;
			pb[j] += p;
			if(p > 0)
				hab -= p * std::log(p);
		}
	double ha = 0.0, hb = 0.0;
	for(std::size_t i = 0; i < bins; ++i) {
		if(pa[i] > 0)
			ha -= pa[i] * std::log(pa[i]);
		if(pb[i] > 0)
			hb -= pb[i] * std::log(pb[i]);
	}
	return (ha + hb) / hab;
}

Image smooth_image(std::size_t n, double phase)
{
	Image img(n, n);
	for(std::size_t r = 0; r < n; ++r)
		for(std::size_t c = 0; c < n; ++c)
			img(r, c) = std::sin(0.3 * static_cast<double>(c) + phase) * std::cos(0.2 * static_cast<double>(r)) +
				0.01 * static_cast<double>(r);
	return img;
}

} // namespace

TEST(MeanTemplate, IdenticalFrames)
{
	std::mt19937_64 rng(1);
	const Image img = test::random_image(6, 7, rng);
	const std::vector<Image> frames(4, img);
	const Image t = mean_template(frames);
	for(std::size_t i = 0; i < img.size(); ++i)
		EXPECT_NEAR(t[i], img[i], 1e-15);
}

TEST(MeanTemplate, TwoFrames)
{
	const std::vector<Image> frames{Image(3, 3, 0.0), Image(3, 3, 2.0)};
	EXPECT_EQ(mean_template(frames), Image(3, 3, 1.0));
}

TEST(MeanTemplate, MatchesElementwiseLoopAndIsPermutationInvariant)
{
	std::mt19937_64 rng(2);
	std::vector<Image> frames;
	for(int k = 0; k < 5; ++k)
		frames.push_back(test::random_image(8, 8, rng));
	const Image t = mean_template(frames);
	for(std::size_t i = 0; i < 64; ++i) {
		double s = 0.0;
		for(const auto& f : frames)
			s += f[i];
		EXPECT_NEAR(t[i], s / 5.0, 1e-15);
	}
	std::vector<Image> perm{frames[3], frames[0], frames[4], frames[2], frames[1]};
	const Image tp = mean_template(perm);
	for(std::size_t i = 0; i < 64; ++i)
		EXPECT_NEAR(tp[i], t[i], 1e-15);
}

TEST(MeanTemplate, Errors)
{
	EXPECT_THROW(mean_template(std::vector<Image>{}), InputError);
	EXPECT_THROW(mean_template(std::vector<Image>{Image(2, 2), Image(2, 3)}), InputError);
}

TEST(Mse, EqualImages)
{
	std::mt19937_64 rng(3);
	const Image a = test::random_image(8, 8, rng);
	const auto r = mse_loss(a, a);
	EXPECT_EQ(r.value, 0.0);
	for(double g : r.grad.vec())
		EXPECT_EQ(g, 0.0);
}

TEST(Mse, ConstantOffset)
{
	std::mt19937_64 rng(4);
	const Image a = test::random_image(8, 8, rng);
	Image b = a;
	for(auto& v : b.vec())
		v -= 0.3;
	EXPECT_NEAR(mse_loss(a, b).value, 0.09, 1e-12);
	EXPECT_GT(mse_loss(a, b).value, 0.0);
}

TEST(Mse, GradientMatchesFiniteDifferences)
{
	std::mt19937_64 rng(5);
	const Image a = test::random_image(8, 8, rng), b = test::random_image(8, 8, rng);
	const auto r = mse_loss(a, b);
	const double h = 1e-5;
	for(std::size_t p = 0; p < a.size(); ++p) {
		Image ap = a, am = a;
		ap[p] += h;
		am[p] -= h;
		const double fd = (mse_loss(ap, b).value - mse_loss(am, b).value) / (2 * h);
		EXPECT_LT(test::rel_err(fd, r.grad[p]), 1e-6) << p;
	}
	EXPECT_THROW(mse_loss(a, Image(8, 9)), InputError);
}

TEST(Nmi, MatchesDirectHistogram)
{
	std::mt19937_64 rng(6);
	const Image a = test::random_image(20, 20, rng), b = smooth_image(20, 0.4);
	EXPECT_NEAR(nmi(a, b).value, nmi_ref(a, b, 32, 1.0), 1e-12);
	EXPECT_NEAR(nmi(a, b, 16, 0.7).value, nmi_ref(a, b, 16, 0.7), 1e-12);
	const Image s = smooth_image(20, 1.1);
	EXPECT_NEAR(nmi(s, s).value, nmi_ref(s, s, 32, 1.0), 1e-12);
}

TEST(Nmi, SelfSimilarityIsHighAndBounded)
{
	const Image a = smooth_image(48, 0.2);
	const double self = nmi(a, a).value;
	EXPECT_LE(self, 2.0 + 1e-6);
	std::mt19937_64 rng(7);
	EXPECT_GT(self, nmi(a, test::random_image(48, 48, rng)).value + 0.3);
	// A narrower kernel approaches hard binning, where H(a,a) = H(a).
	const double narrow = nmi(a, a, 32, 0.25).value;
	EXPECT_GT(narrow, 1.9);
	EXPECT_LE(narrow, 2.0 + 1e-6);
}

TEST(Nmi, IndependentNoiseNearOne)
{
	std::mt19937_64 rng(8);
	const Image a = test::random_image(64, 64, rng), b = test::random_image(64, 64, rng);
	const double v = nmi(a, b).value;
	EXPECT_NEAR(v, 1.0, 0.05);
	EXPECT_NEAR(v, nmi_ref(a, b, 32, 1.0), 1e-12);
}

TEST(Nmi, AffineInvariance)
{
	std::mt19937_64 rng(9);
	const Image a = test::random_image(24, 24, rng), b = smooth_image(24, 0.9);
	Image b2 = b;
	for(auto& v : b2.vec())
		v = 3.0 * v + 7.0;
	EXPECT_NEAR(nmi(a, b2).value, nmi(a, b).value, 1e-12);
}

TEST(Nmi, Symmetric)
{
	std::mt19937_64 rng(10);
	for(int rep = 0; rep < 4; ++rep) {
		const Image a = test::random_image(16, 16, rng), b = test::random_image(16, 16, rng, -3, 5);
		EXPECT_NEAR(nmi(a, b).value, nmi(b, a).value, 1e-12);
	}
}

TEST(Nmi, ValueWithinBounds)
{
	std::mt19937_64 rng(11);
	for(int rep = 0; rep < 10; ++rep) {
		const Image a = test::random_image(16, 16, rng);
		Image b = test::random_image(16, 16, rng);
		for(std::size_t i = 0; i < b.size(); ++i)
			b[i] = rep * a[i] + b[i];
		const double v = nmi(a, b).value;
		EXPECT_GE(v, 1.0 - 1e-6);
		EXPECT_LE(v, 2.0 + 1e-6);
	}
}

TEST(Nmi, GradientMatchesFiniteDifferences)
{
	std::mt19937_64 rng(12);
	const Image a = test::random_image(16, 16, rng);
	Image b = smooth_image(16, 0.3);
	for(std::size_t i = 0; i < b.size(); ++i)
		b[i] += 0.3 * a[i];
	const IntensityRange ra = intensity_range(a), rb = intensity_range(b);
	const auto r = nmi(a, b, ra, rb);
	const double h = 1e-5 * ra.width();
	double scale = 0.0;
	for(double g : r.grad.vec())
		scale = std::max(scale, std::abs(g));
	std::size_t checked = 0;
	for(std::size_t p = 0; p < a.size(); p += 3) {
		Image ap = a, am = a;
		ap[p] += h;
		am[p] -= h;
		const double fd = (nmi(ap, b, ra, rb, {}, false).value - nmi(am, b, ra, rb, {}, false).value) / (2 * h);
		EXPECT_LT(std::abs(fd - r.grad[p]), 1e-3 * std::max(std::abs(fd), 1e-3 * scale)) << p;
		++checked;
	}
	EXPECT_GT(checked, 80u);
}

TEST(Nmi, ConstantImageIsDegenerate)
{
	std::mt19937_64 rng(13);
	const Image a = test::random_image(8, 8, rng);
	try {
		nmi(a, Image(8, 8, 4.0));
		FAIL() << "expected InputError";
	} catch(const InputError& e) {
		EXPECT_NE(std::string(e.what()).find("degenerate intensity range"), std::string::npos);
	}
}

TEST(JointHistogramTest, NormalizedAndNonnegative)
{
	std::mt19937_64 rng(14);
	const Image a = test::random_image(16, 16, rng), b = test::random_image(16, 16, rng);
	const auto h = joint_histogram(a, b, intensity_range(a), intensity_range(b));
	double s = 0.0;
	for(double v : h.matrix) {
		EXPECT_GE(v, 0.0);
		s += v;
	}
	EXPECT_NEAR(s, 1.0, 1e-9);
}
