#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <complex>
#include <filesystem>
#include <set>

#include "oct/fft.hpp"
#include "oct/phantom.hpp"
#include "oct/preprocess.hpp"
#include "oct/rng.hpp"

using namespace oct;
using namespace oct::phantom;

namespace {

Image noise_image(int h, int w, std::uint64_t seed) {
    Rng rng(seed);
    Image im(h, w);
    for (auto& v : im.v) v = static_cast<float>(rng.uniform());
    return im;
}

Image circshift(const Image& im, int dy, int dx) {
    Image out(im.h, im.w);
    for (int r = 0; r < im.h; ++r)
        for (int c = 0; c < im.w; ++c)
            out.at(r, c) = im.at(((r - dy) % im.h + im.h) % im.h, ((c - dx) % im.w + im.w) % im.w);
    return out;
}

}  // namespace

TEST_CASE("fft matches a naive DFT and round-trips, power-of-two and odd sizes") {
    for (int n : {8, 12, 17}) {
        Rng rng(n);
        std::vector<std::complex<double>> a(static_cast<std::size_t>(n));
        for (auto& v : a) v = {rng.uniform(-1, 1), rng.uniform(-1, 1)};
        auto b = a;
        fft(b, false);
        for (int k = 0; k < n; ++k) {
            std::complex<double> ref(0, 0);
            for (int j = 0; j < n; ++j)
                ref += a[static_cast<std::size_t>(j)] *
                       std::polar(1.0, -2.0 * 3.14159265358979323846 * j * k / n);
            CHECK(std::abs(b[static_cast<std::size_t>(k)] - ref) < 1e-9);
        }
        fft(b, true);
        for (int j = 0; j < n; ++j) CHECK(std::abs(b[static_cast<std::size_t>(j)] - a[static_cast<std::size_t>(j)]) < 1e-9);
    }
}

TEST_CASE("generate_volume: determinism, class coverage, ordering") {
    const DeviceStyle style = source_style();
    const PhantomVolume a = generate_volume(style, 42, 4, 64, 128, true);
    const PhantomVolume b = generate_volume(style, 42, 4, 64, 128, true);
    for (int z = 0; z < 4; ++z) {
        CHECK(a.bscans[(std::size_t)z].v == b.bscans[(std::size_t)z].v);
        CHECK(a.labels[(std::size_t)z].v == b.labels[(std::size_t)z].v);
    }

    const auto hist = label_histogram(a);
    for (int c = 0; c < 7; ++c) {
        INFO("class ", class_name(c));
        CHECK(hist[(std::size_t)c] > 0);
    }
    CHECK(boundaries_ordered(a));

    const PhantomVolume dry = generate_volume(style, 43, 2, 64, 128, false);
    CHECK(label_histogram(dry)[kFluid] == 0);
}

TEST_CASE("generate_volume: every pixel carries exactly one class by construction") {
    const PhantomVolume v = generate_volume(target_style(), 7, 2, 64, 128, false);
    for (const LabelMap& lab : v.labels)
        for (const auto c : lab.v) CHECK(c < kNumClasses);
}

TEST_CASE("DeviceStyle validation rejects unlearnable boundaries") {
    DeviceStyle s = source_style();
    s.base_intensity[2] = s.base_intensity[1];
    CHECK_THROWS_AS(s.validate(), std::invalid_argument);
    DeviceStyle g = source_style();
    g.gamma = 0.0f;
    CHECK_THROWS_AS(g.validate(), std::invalid_argument);
}

TEST_CASE("phase_xcorr_shift: identity, constructed circular shift, noise bound") {
    const Image ref = noise_image(64, 128, 5);
    const auto [y0, x0] = phase_xcorr_shift(ref, ref);
    CHECK(y0 == 0);
    CHECK(x0 == 0);

    const Image moved = circshift(ref, 3, -2);
    const auto [dy, dx] = phase_xcorr_shift(ref, moved);
    CHECK(dy == 3);
    CHECK(dx == -2);

    const Image other = noise_image(64, 128, 6);
    const auto [ny, nx] = phase_xcorr_shift(ref, other);
    CHECK(std::abs(ny) <= 32);
    CHECK(std::abs(nx) <= 64);

    CHECK_THROWS_AS(phase_xcorr_shift(ref, noise_image(32, 32, 7)), std::invalid_argument);
}

TEST_CASE("motion_correct: recovers injected jitter and is idempotent") {
    DeviceStyle s = source_style();
    s.lateral_jitter_max = 2;
    s.axial_jitter_max = 2;
    const PhantomVolume vol = generate_volume(s, 11, 6, 64, 128, false);
    const PhantomVolume fixed = motion_correct(vol);

    CHECK(fixed.bscans[0].v == vol.bscans[0].v);  // first scan untouched
    for (int z = 1; z < fixed.n_bscans(); ++z) {
        const auto [dy, dx] = phase_xcorr_shift(fixed.bscans[(std::size_t)(z - 1)],
                                                fixed.bscans[(std::size_t)z]);
        CHECK(dy == 0);
        CHECK(dx == 0);
    }

    const PhantomVolume again = motion_correct(fixed);
    for (int z = 0; z < fixed.n_bscans(); ++z) CHECK(again.bscans[(std::size_t)z].v == fixed.bscans[(std::size_t)z].v);

    DeviceStyle still = source_style();
    still.lateral_jitter_max = 0;
    still.axial_jitter_max = 0;
    const PhantomVolume calm = generate_volume(still, 12, 4, 64, 128, false);
    const PhantomVolume calm_fixed = motion_correct(calm);
    for (int z = 0; z < calm.n_bscans(); ++z) CHECK(calm_fixed.bscans[(std::size_t)z].v == calm.bscans[(std::size_t)z].v);

    const PhantomVolume single = generate_volume(still, 13, 1, 64, 128, false);
    const PhantomVolume single_fixed = motion_correct(single);
    CHECK(single_fixed.bscans[0].v == single.bscans[0].v);
}

TEST_CASE("tv_smooth: identity cases and variation reduction") {
    const Image flat = Image(32, 32);
    const Image flat_out = tv_smooth(flat, 0.1, 30);
    CHECK(flat_out.v == flat.v);  // constant image has zero TV already

    const Image noisy = noise_image(32, 48, 21);
    CHECK(tv_smooth(noisy, 0.0, 30).v == noisy.v);
    CHECK(tv_smooth(noisy, 0.1, 0).v == noisy.v);

    // noisy step edge: TV drops, edge stays within 1 px
    Rng rng(22);
    Image step(32, 64);
    for (int r = 0; r < 32; ++r)
        for (int c = 0; c < 64; ++c)
            step.at(r, c) = static_cast<float>((c >= 32 ? 0.8 : 0.2) + rng.normal(0, 0.05));
    const Image sm = tv_smooth(step, 0.1, 30);
    CHECK(total_variation(sm) < total_variation(step));
    for (int r = 0; r < 32; ++r) {
        int edge = -1;
        float best = 0;
        for (int c = 1; c < 64; ++c) {
            const float d = std::abs(sm.at(r, c) - sm.at(r, c - 1));
            if (d > best) {
                best = d;
                edge = c;
            }
        }
        CHECK(std::abs(edge - 32) <= 1);
    }

    // property: never increases TV on random images
    for (std::uint64_t seed : {31u, 32u, 33u, 34u}) {
        const Image im = noise_image(24, 40, seed);
        CHECK(total_variation(tv_smooth(im, 0.1, 30)) <= total_variation(im) + 1e-9);
    }
}

TEST_CASE("augment: flip involution, zero-rotation identity, label closure") {
    const PhantomVolume vol = generate_volume(source_style(), 41, 1, 64, 128, true);
    Image img = vol.bscans[0];
    LabelMap lab = vol.labels[0];

    // applying a flip twice restores the original
    Image flipped = img;
    LabelMap flab = lab;
    for (int r = 0; r < img.h; ++r)
        for (int c = 0; c < img.w / 2; ++c) {
            std::swap(flipped.at(r, c), flipped.at(r, img.w - 1 - c));
            std::swap(flab.at(r, c), flab.at(r, img.w - 1 - c));
        }
    Image back = flipped;
    for (int r = 0; r < img.h; ++r)
        for (int c = 0; c < img.w / 2; ++c) std::swap(back.at(r, c), back.at(r, img.w - 1 - c));
    CHECK(back.v == img.v);

    std::set<int> before(lab.v.begin(), lab.v.end());
    Image aimg = img;
    LabelMap alab = lab;
    augment(aimg, alab, 77);
    for (const auto c : alab.v) CHECK(before.count(c) == 1);

    // determinism
    Image aimg2 = img;
    LabelMap alab2 = lab;
    augment(aimg2, alab2, 77);
    CHECK(aimg2.v == aimg.v);
    CHECK(alab2.v == alab.v);
}

TEST_CASE("crop_resize: identity, nearest closure, smooth round-trip") {
    const PhantomVolume vol = generate_volume(source_style(), 51, 1, 64, 128, false);
    const auto [same_i, same_l] = crop_resize(vol.bscans[0], vol.labels[0], 64, 128);
    CHECK(same_i.v == vol.bscans[0].v);
    CHECK(same_l.v == vol.labels[0].v);

    // checkerboard label downsample: no new classes
    LabelMap board(8, 8);
    Image bimg(8, 8);
    for (int r = 0; r < 8; ++r)
        for (int c = 0; c < 8; ++c) board.at(r, c) = static_cast<std::uint8_t>((r + c) % 2 ? 3 : 5);
    const auto [ri, rl] = crop_resize(bimg, board, 4, 4);
    for (const auto v : rl.v) CHECK((v == 3 || v == 5));

    // smooth image round-trip 64 -> 128 -> 64
    Image smooth(64, 64);
    for (int r = 0; r < 64; ++r)
        for (int c = 0; c < 64; ++c)
            smooth.at(r, c) = 0.5f + 0.4f * std::sin(r * 0.15f) * std::cos(c * 0.12f);
    LabelMap dummy(64, 64);
    const auto [up, upl] = crop_resize(smooth, dummy, 128, 128);
    const auto [down, downl] = crop_resize(up, upl, 64, 64);
    float max_diff = 0;
    for (int i = 0; i < 64 * 64; ++i)
        max_diff = std::max(max_diff, std::abs(down.v[(std::size_t)i] - smooth.v[(std::size_t)i]));
    CHECK(max_diff < 0.05f);

    CHECK_THROWS_AS(crop_resize(bimg, board, 1, 8), std::invalid_argument);
}

TEST_CASE("make_folds: paper split, rotation coverage, degenerate k") {
    std::vector<int> ids(10);
    for (int i = 0; i < 10; ++i) ids[(std::size_t)i] = i;
    const FoldPlan plan = make_folds(ids, 10, {8, 1, 1}, 99);
    CHECK(plan.folds.size() == 10);
    std::set<int> tested;
    for (const auto& f : plan.folds) {
        CHECK(f.train.size() == 8);
        CHECK(f.val.size() == 1);
        CHECK(f.test.size() == 1);
        std::set<int> all;
        all.insert(f.train.begin(), f.train.end());
        all.insert(f.val.begin(), f.val.end());
        all.insert(f.test.begin(), f.test.end());
        CHECK(all.size() == 10);  // disjoint cover
        tested.insert(f.test.begin(), f.test.end());
    }
    CHECK(tested.size() == 10);  // every volume tested exactly once

    const FoldPlan one = make_folds(ids, 1, {8, 1, 1}, 99);
    CHECK(one.folds.size() == 1);
    CHECK(one.folds[0].test.size() == 1);
    CHECK(one.folds[0].val.size() == 1);
    CHECK(one.folds[0].train.size() == 8);

    // zero test ratio rotates the validation chunk instead
    const FoldPlan noval = make_folds(ids, 5, {8, 1, 0}, 99);
    std::set<int> vals;
    for (const auto& f : noval.folds) {
        CHECK(f.test.empty());
        vals.insert(f.val.begin(), f.val.end());
    }
    CHECK(vals.size() == 10);

    CHECK_THROWS_AS(make_folds({1, 2}, 5, {8, 1, 1}, 1), std::invalid_argument);

    // determinism
    const FoldPlan p2 = make_folds(ids, 10, {8, 1, 1}, 99);
    for (int f = 0; f < 10; ++f) CHECK(p2.folds[(std::size_t)f].test == plan.folds[(std::size_t)f].test);
}

TEST_CASE("pair_stream: permutation pairing, cycling counts, determinism") {
    const auto equal = pair_stream(5, 5, 3);
    CHECK(equal.size() == 5);
    std::set<int> src, tgt;
    for (const auto& [a, b] : equal) {
        src.insert(a);
        tgt.insert(b);
    }
    CHECK(src.size() == 5);
    CHECK(tgt.size() == 5);

    const auto cyc = pair_stream(6, 2, 4);
    CHECK(cyc.size() == 6);
    int count0 = 0, count1 = 0;
    for (const auto& [a, b] : cyc) (b == cyc[0].second ? count0 : count1)++;
    CHECK(count0 == 3);
    CHECK(count1 == 3);

    CHECK(pair_stream(6, 2, 4) == cyc);
    CHECK_THROWS_AS(pair_stream(0, 2, 4), std::invalid_argument);
}

TEST_CASE("volume persistence round-trips through tensor containers") {
    const auto dir = std::filesystem::temp_directory_path() / "oct_vols_test";
    std::filesystem::remove_all(dir);
    std::vector<PhantomVolume> vols;
    vols.push_back(generate_volume(source_style(), 61, 2, 64, 128, true));
    vols.push_back(generate_volume(target_style(), 62, 3, 64, 128, false));
    save_volumes(dir, vols);
    const auto loaded = load_volumes(dir);
    REQUIRE(loaded.size() == 2);
    CHECK(loaded[0].style_id == "X");
    CHECK(loaded[1].style_id == "Y");
    CHECK(loaded[1].seed == 62);
    for (std::size_t i = 0; i < 2; ++i) {
        CHECK(loaded[i].n_bscans() == vols[i].n_bscans());
        for (int z = 0; z < vols[i].n_bscans(); ++z) {
            CHECK(loaded[i].bscans[(std::size_t)z].v == vols[i].bscans[(std::size_t)z].v);
            CHECK(loaded[i].labels[(std::size_t)z].v == vols[i].labels[(std::size_t)z].v);
        }
    }
    std::filesystem::remove_all(dir);
}
