#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "oct/metrics.hpp"
#include "oct/rng.hpp"
#include "oct/stats.hpp"

using namespace oct;
using namespace oct::metrics;

namespace {

Mat random_features(int n, int d, std::uint64_t seed, double mean = 0.0, double std = 1.0) {
    Rng rng(seed);
    Mat m(n, d);
    for (auto& v : m.a) v = rng.normal(mean, std);
    return m;
}

}  // namespace

TEST_CASE("dice_score: hand cases") {
    std::vector<std::uint8_t> a{1, 1, 0, 0}, b{1, 1, 0, 0};
    CHECK(dice_score(a, b) == 1.0);
    std::vector<std::uint8_t> c{0, 0, 1, 1};
    CHECK(dice_score(a, c) == 0.0);
    // 2 px vs 2 px with overlap 1 -> 0.5
    std::vector<std::uint8_t> d{1, 1, 0, 0}, e{0, 1, 1, 0};
    CHECK(dice_score(d, e) == 0.5);
    std::vector<std::uint8_t> z4{0, 0, 0, 0};
    CHECK(dice_score(z4, z4) == 1.0);  // both empty
    CHECK_THROWS_AS(dice_score(a, std::vector<std::uint8_t>{1}), std::invalid_argument);
}

TEST_CASE("ssim: identity, hand value, symmetry") {
    Rng rng(1);
    Image x(16, 16), y(16, 16);
    for (auto& v : x.v) v = static_cast<float>(rng.uniform());
    for (auto& v : y.v) v = static_cast<float>(rng.uniform());
    CHECK(ssim(x, x, 1.0) == doctest::Approx(1.0));
    CHECK(ssim(x, y, 1.0) == doctest::Approx(ssim(y, x, 1.0)));

    Image zeros(8, 8), ones(8, 8);
    std::fill(ones.v.begin(), ones.v.end(), 1.0f);
    // c1/(1+c1) with c1 = (0.01*2)^2 = 4e-4
    CHECK(ssim(zeros, ones, 2.0) == doctest::Approx(4e-4 / 1.0004).epsilon(1e-6));
}

TEST_CASE("psnr: analytic value, cap, log law") {
    Image x(10, 10), y(10, 10);
    std::fill(x.v.begin(), x.v.end(), 1.0f);
    for (auto& v : y.v) v = 1.0f;
    // introduce MSE 0.01: one tenth of pixels off by sqrt(0.1)
    for (int i = 0; i < 10; ++i) y.v[static_cast<std::size_t>(i)] = 1.0f - std::sqrt(0.1f);
    CHECK(psnr(x, y) == doctest::Approx(20.0).epsilon(1e-4));
    CHECK(psnr(x, x) == doctest::Approx(120.0));

    // halving the noise std (MSE/4) adds ~6.02 dB
    Image y2 = x;
    for (int i = 0; i < 10; ++i) y2.v[static_cast<std::size_t>(i)] = 1.0f - std::sqrt(0.1f) / 2.0f;
    CHECK(psnr(x, y2) - psnr(x, y) == doctest::Approx(10.0 * std::log10(4.0)).epsilon(1e-3));
}

TEST_CASE("feature extractor: tap widths, determinism, constant rows") {
    FeatureExtractor f(123);
    FeatureExtractor g(123);
    for (std::size_t i = 0; i < f.params().size(); ++i)
        CHECK(f.params()[i].value.data == g.params()[i].value.data);

    std::vector<Image> imgs;
    Rng rng(9);
    Image a(32, 32);
    for (auto& v : a.v) v = static_cast<float>(rng.uniform());
    imgs.push_back(a);
    imgs.push_back(a);  // duplicate
    for (int tap = 0; tap < 4; ++tap) {
        const Mat feats = extract_features(imgs, f, tap);
        CHECK(feats.cols == FeatureExtractor::kTapWidths[static_cast<std::size_t>(tap)]);
        for (int j = 0; j < feats.cols; ++j) CHECK(feats.at(0, j) == feats.at(1, j));
    }
    CHECK_THROWS_AS(extract_features(imgs, f, 4), std::invalid_argument);

    // constant-zero images give identical rows
    std::vector<Image> zeros{Image(32, 32), Image(32, 32)};
    const Mat fz = extract_features(zeros, f, 2);
    for (int j = 0; j < fz.cols; ++j) CHECK(fz.at(0, j) == fz.at(1, j));
}

TEST_CASE("matrix_sqrt_psd: identity, diagonal, random PSD round-trip") {
    Mat eye(3, 3);
    for (int i = 0; i < 3; ++i) eye.at(i, i) = 1.0;
    const Mat r = matrix_sqrt_psd(eye);
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) CHECK(r.at(i, j) == doctest::Approx(i == j ? 1.0 : 0.0).epsilon(1e-10));

    Mat diag(2, 2);
    diag.at(0, 0) = 4.0;
    diag.at(1, 1) = 9.0;
    const Mat rd = matrix_sqrt_psd(diag);
    CHECK(rd.at(0, 0) == doctest::Approx(2.0));
    CHECK(rd.at(1, 1) == doctest::Approx(3.0));

    for (int d : {4, 16, 64}) {
        const Mat b = random_features(d + 3, d, static_cast<std::uint64_t>(d));
        Mat a(d, d);
        for (int i = 0; i < d; ++i)
            for (int j = 0; j < d; ++j) {
                double acc = 0;
                for (int k = 0; k < d + 3; ++k) acc += b.at(k, i) * b.at(k, j);
                a.at(i, j) = acc;
            }
        const Mat s = matrix_sqrt_psd(a);
        double frob = 0;
        for (int i = 0; i < d; ++i)
            for (int j = 0; j < d; ++j) {
                double acc = 0;
                for (int k = 0; k < d; ++k) acc += s.at(i, k) * s.at(k, j);
                const double diff = acc - a.at(i, j);
                frob += diff * diff;
            }
        CHECK(std::sqrt(frob) < 1e-8 * d);
    }

    Mat asym(2, 2);
    asym.at(0, 1) = 1.0;
    CHECK_THROWS_AS(matrix_sqrt_psd(asym), std::invalid_argument);
}

TEST_CASE("frechet_distance: identical stats, mean shift, 1-D variances") {
    const Mat f = random_features(40, 3, 7);
    const GaussianStats s = gaussian_stats(f);
    CHECK(frechet_distance(s, s) == doctest::Approx(0.0).epsilon(1e-12));

    GaussianStats a = s, b = s;
    b.mean[0] += 3.0;
    b.mean[1] += 4.0;
    CHECK(frechet_distance(a, b) == doctest::Approx(25.0).epsilon(1e-9));

    GaussianStats u, v;
    u.mean = {0.0};
    v.mean = {0.0};
    u.cov = Mat(1, 1);
    v.cov = Mat(1, 1);
    u.cov.at(0, 0) = 1.0;
    v.cov.at(0, 0) = 4.0;
    u.count = v.count = 10;
    CHECK(frechet_distance(u, v) == doctest::Approx(1.0).epsilon(1e-10));
}

TEST_CASE("poly_kernel: hand cases") {
    KernelParams p;  // gamma=1, c=1, degree=3
    CHECK(poly_kernel({0.0}, {0.0}, p) == doctest::Approx(1.0));
    CHECK(poly_kernel({1.0}, {1.0}, p) == doctest::Approx(8.0));
    KernelParams z = p;
    z.gamma = 0.0;
    CHECK(poly_kernel({5.0, 2.0}, {-3.0, 7.0}, z) == doctest::Approx(1.0));
    CHECK_THROWS_AS(poly_kernel({1.0}, {1.0, 2.0}, p), std::invalid_argument);
}

TEST_CASE("mmd_unbiased_sq: exact hand case, symmetry, null behaviour") {
    Mat x(2, 1), y(2, 1);
    x.at(0, 0) = 0.0;
    x.at(1, 0) = 1.0;
    y = x;
    KernelParams p;  // gamma=1, c=1, n=3
    CHECK(mmd_unbiased_sq(x, y, p) == doctest::Approx(-3.5).epsilon(1e-12));

    const Mat a = random_features(30, 4, 31);
    const Mat b = random_features(25, 4, 32, 0.5);
    const KernelParams kp = default_kernel(4);
    CHECK(mmd_unbiased_sq(a, b, kp) == doctest::Approx(mmd_unbiased_sq(b, a, kp)).epsilon(1e-12));

    // same seeded distribution: |mmd| small relative to the mean self-kernel
    const Mat u = random_features(200, 4, 33);
    const Mat v = random_features(200, 4, 34);
    double self_k = 0;
    for (int i = 0; i < u.rows; ++i) {
        std::vector<double> row(u.a.begin() + i * 4, u.a.begin() + (i + 1) * 4);
        self_k += poly_kernel(row, row, kp);
    }
    self_k /= u.rows;
    CHECK(std::abs(mmd_unbiased_sq(u, v, kp)) < 0.05 * self_k);

    Mat tiny(1, 4);
    CHECK_THROWS_AS(mmd_unbiased_sq(tiny, a, kp), std::invalid_argument);
}

TEST_CASE("kid: self-comparison near zero, single subset, determinism") {
    const Mat pool = random_features(120, 8, 41);
    Mat x(60, 8), y(60, 8);
    for (int i = 0; i < 60; ++i)
        for (int j = 0; j < 8; ++j) {
            x.at(i, j) = pool.at(i, j);
            y.at(i, j) = pool.at(60 + i, j);
        }
    const KernelParams p = default_kernel(8);
    const auto [mean, std] = kid(x, y, p, 25, 30, 7);
    CHECK(std::abs(mean) < 2.0 * std + 1e-9);

    const auto [m1, s1] = kid(x, y, p, 1, 30, 7);
    CHECK(s1 == 0.0);

    const auto again = kid(x, y, p, 25, 30, 7);
    CHECK(again.first == mean);
    CHECK(again.second == std);

    CHECK_THROWS_AS(kid(x, y, p, 5, 1, 7), std::invalid_argument);
    CHECK_THROWS_AS(kid(x, y, p, 5, 100, 7), std::invalid_argument);
}

TEST_CASE("anova_oneway: hand fixture, identical groups, scale invariance") {
    using namespace oct::stats;
    const AnovaResult r = anova_oneway({{1, 2, 3}, {1, 2, 3}, {7, 8, 9}});
    CHECK(r.ss_between == doctest::Approx(72.0).epsilon(1e-12));
    CHECK(r.ss_within == doctest::Approx(6.0).epsilon(1e-12));
    CHECK(r.f == doctest::Approx(36.0).epsilon(1e-9));
    CHECK(r.p == doctest::Approx(0.00045516613564).epsilon(1e-6));  // scipy f.sf(36,2,6)

    const AnovaResult same = anova_oneway({{1, 2, 3}, {1, 2, 3}});
    CHECK(same.f == 0.0);
    CHECK(same.p == 1.0);

    const AnovaResult scaled = anova_oneway({{10, 20, 30}, {10, 20, 30}, {70, 80, 90}});
    CHECK(scaled.f == doctest::Approx(36.0).epsilon(1e-9));

    CHECK_THROWS_AS(anova_oneway({{1, 2}}), std::invalid_argument);
    CHECK_THROWS_AS(anova_oneway({{1}, {2, 3}}), std::invalid_argument);
}

TEST_CASE("f_sf agrees with scipy fixtures") {
    using namespace oct::stats;
    CHECK(f_sf(36, 2, 6) == doctest::Approx(0.00045516613564).epsilon(1e-8));
    CHECK(f_sf(2.5, 3, 16) == doctest::Approx(0.0965367866645).epsilon(1e-8));
    CHECK(f_sf(0.7, 4, 45) == doctest::Approx(0.596026747813).epsilon(1e-8));
    CHECK(f_sf(0.0, 2, 6) == 1.0);
}

TEST_CASE("studentized_range_sf agrees with scipy fixtures") {
    using namespace oct::stats;
    CHECK(studentized_range_sf(10.3923048454, 3, 6) ==
          doctest::Approx(0.000794217910489).epsilon(1e-4));
    CHECK(studentized_range_sf(3.0, 3, 6) == doctest::Approx(0.16545965172).epsilon(1e-5));
    CHECK(studentized_range_sf(2.0, 4, 20) == doctest::Approx(0.505440345412).epsilon(1e-5));
    CHECK(studentized_range_sf(5.0, 5, 12) == doctest::Approx(0.0275680543703).epsilon(1e-5));
    CHECK(studentized_range_sf(1.0, 2, 4) == doctest::Approx(0.518518518519).epsilon(1e-5));
}

TEST_CASE("tukey_hsd: hand fixture, identical groups, symmetry, errors") {
    using namespace oct::stats;
    const auto pairs = tukey_hsd({{1, 2, 3}, {1, 2, 3}, {7, 8, 9}}, 0.05);
    REQUIRE(pairs.size() == 3);
    // pair (group 0, group 2): q = 6/sqrt(1/3)
    const auto& p02 = pairs[1];
    CHECK(p02.i == 0);
    CHECK(p02.j == 2);
    CHECK(p02.q == doctest::Approx(10.3923048454).epsilon(1e-4));
    CHECK(p02.significant);
    CHECK(pairs[0].q == 0.0);
    CHECK(pairs[0].p == doctest::Approx(1.0).epsilon(1e-9));
    CHECK_FALSE(pairs[0].significant);

    // scipy tukey_hsd fixture: groups {1,2,3},{2,3,4},{7,8,9}
    const auto sp = tukey_hsd({{1, 2, 3}, {2, 3, 4}, {7, 8, 9}}, 0.05);
    CHECK(sp[0].p == doctest::Approx(0.48272727950).epsilon(1e-4));
    CHECK(sp[1].p == doctest::Approx(7.9421791049e-4).epsilon(1e-3));
    CHECK(sp[2].p == doctest::Approx(2.1012405816e-3).epsilon(1e-3));

    CHECK_THROWS_AS(tukey_hsd({{1, 2, 3}, {1, 2}}, 0.05), std::invalid_argument);
    CHECK_THROWS_AS(tukey_hsd({{1, 2, 3}}, 0.05), std::invalid_argument);
}

TEST_CASE("anova brute-force cross-check on random fixtures") {
    using namespace oct::stats;
    Rng rng(55);
    for (int rep = 0; rep < 5; ++rep) {
        std::vector<std::vector<double>> groups(3 + rep % 2);
        for (auto& g : groups) {
            g.resize(4 + rep);
            for (auto& v : g) v = rng.normal(rep * 0.3, 1.0);
        }
        const AnovaResult r = anova_oneway(groups);

        // direct sums-of-squares recomputation
        double grand = 0;
        long n = 0;
        for (const auto& g : groups)
            for (const double v : g) {
                grand += v;
                ++n;
            }
        grand /= n;
        double ssb = 0, ssw = 0;
        for (const auto& g : groups) {
            double m = 0;
            for (const double v : g) m += v;
            m /= g.size();
            ssb += g.size() * (m - grand) * (m - grand);
            for (const double v : g) ssw += (v - m) * (v - m);
        }
        const double f = (ssb / (groups.size() - 1)) / (ssw / (n - groups.size()));
        CHECK(r.f == doctest::Approx(f).epsilon(1e-10));
    }
}
