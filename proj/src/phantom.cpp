#include "oct/phantom.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "oct/rng.hpp"
#include "oct/serialize.hpp"

namespace oct::phantom {

namespace {

constexpr double kPi = 3.14159265358979323846;

// Relative depth of each boundary and minimum layer gap in rows.
constexpr double kBaseDepth[6] = {0.30, 0.37, 0.46, 0.54, 0.66, 0.73};
constexpr int kMinGap = 2;

struct VolumeGeometry {
    // boundary i at (bscan z, column c): base[i] + sum_j amp[j]*sin(freq[j]*c/W*2pi + phase[i][j] + drift[j]*z)
    std::array<double, 6> base;
    std::array<double, 3> amp, freq, drift;
    std::array<std::array<double, 3>, 6> phase;
    double dip_depth, dip_center, dip_sigma;

    double boundary(int i, int z, double c, int W) const {
        double b = base[static_cast<std::size_t>(i)];
        for (int j = 0; j < 3; ++j)
            b += amp[static_cast<std::size_t>(j)] *
                 std::sin(2.0 * kPi * freq[static_cast<std::size_t>(j)] * c / W +
                          phase[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] +
                          drift[static_cast<std::size_t>(j)] * z);
        // foveal dip pulls the inner boundaries down toward the outer ones
        if (i < 4) {
            const double t = (c - dip_center) / dip_sigma;
            b += dip_depth * (1.0 - i / 4.0) * std::exp(-t * t);
        }
        return b;
    }
};

struct FluidPocket {
    double cy, cx, ry, rx;
};

}  // namespace

const char* class_name(int c) {
    static const char* names[kNumClasses] = {"Vitreous", "ILM_NFL", "NFL_IPL", "IPL_OPL",
                                             "OPL_IOS", "IOS_BM",  "Choroid", "Fluid"};
    if (c < 0 || c >= kNumClasses) throw std::invalid_argument("class_name: bad class");
    return names[c];
}

void DeviceStyle::validate() const {
    if (gamma <= 0 || contrast <= 0) throw std::invalid_argument("DeviceStyle: gamma/contrast > 0");
    if (speckle_shape <= 0) throw std::invalid_argument("DeviceStyle: speckle_shape > 0");
    if (lateral_jitter_max < 0 || axial_jitter_max < 0)
        throw std::invalid_argument("DeviceStyle: negative jitter");
    for (int i = 0; i < 6; ++i)  // Vitreous..Choroid chain: boundaries must be learnable
        if (std::abs(base_intensity[static_cast<std::size_t>(i + 1)] -
                     base_intensity[static_cast<std::size_t>(i)]) < 0.05f)
            throw std::invalid_argument("DeviceStyle: adjacent base intensities closer than 0.05");
}

DeviceStyle source_style() {
    DeviceStyle s;
    s.id = "X";
    return s;
}

DeviceStyle target_style() {
    DeviceStyle s;
    s.id = "Y";
    s.base_intensity = {0.04f, 0.55f, 0.28f, 0.46f, 0.20f, 0.57f, 0.12f, 0.08f};
    s.speckle_shape = 4.0f;
    s.additive_noise_std = 0.03f;
    s.gamma = 1.4f;
    s.contrast = 0.9f;
    return s;
}

PhantomVolume generate_volume(const DeviceStyle& style, std::uint64_t seed, int n_bscans, int H,
                              int W, bool with_fluid) {
    if (H < 32 || W < 32) throw std::invalid_argument("generate_volume: H, W >= 32");
    if (n_bscans < 1) throw std::invalid_argument("generate_volume: n_bscans >= 1");
    style.validate();

    Rng vol_rng(seed);
    VolumeGeometry geo;
    for (int i = 0; i < 6; ++i)
        geo.base[static_cast<std::size_t>(i)] =
            (kBaseDepth[i] + vol_rng.uniform(-0.02, 0.02)) * H;
    for (int j = 0; j < 3; ++j) {
        geo.amp[static_cast<std::size_t>(j)] = vol_rng.uniform(0.5, 1.5) * 0.02 * H / (j + 1);
        geo.freq[static_cast<std::size_t>(j)] = j + 1;
        // keep the apparent translation of scan-to-scan drift under half a
        // pixel (phase d on frequency f reads as d*W/(2*pi*f) columns)
        geo.drift[static_cast<std::size_t>(j)] = vol_rng.uniform(-0.015, 0.015);
        for (int i = 0; i < 6; ++i)
            geo.phase[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] =
                vol_rng.uniform(0.0, 2.0 * kPi);
    }
    geo.dip_depth = vol_rng.uniform(0.05, 0.10) * H;
    geo.dip_center = W * vol_rng.uniform(0.4, 0.6);
    geo.dip_sigma = W * vol_rng.uniform(0.08, 0.14);

    std::vector<FluidPocket> pockets;
    if (with_fluid) {
        const int n_pockets = vol_rng.uniform() < 0.4 ? 2 : 1;
        for (int i = 0; i < n_pockets; ++i) {
            FluidPocket p;
            p.cx = vol_rng.uniform(0.2, 0.8) * W;
            p.rx = vol_rng.uniform(0.05, 0.12) * W;
            p.ry = vol_rng.uniform(0.3, 0.45);  // fraction of the local ONL band, resolved per column
            p.cy = vol_rng.uniform(0.35, 0.65);  // fractional position inside the band
            pockets.push_back(p);
        }
    }

    PhantomVolume vol;
    vol.style_id = style.id;
    vol.seed = seed;

    for (int z = 0; z < n_bscans; ++z) {
        Rng rng(Rng::derive(seed, static_cast<std::uint64_t>(z)));
        const int jy = z == 0 ? 0 : rng.uniform_int(-style.axial_jitter_max, style.axial_jitter_max);
        const int jx = z == 0 ? 0 : rng.uniform_int(-style.lateral_jitter_max, style.lateral_jitter_max);

        Image img(H, W);
        LabelMap lab(H, W);
        std::array<std::vector<float>, 6> curves;
        for (auto& c : curves) c.resize(static_cast<std::size_t>(W));

        for (int c = 0; c < W; ++c) {
            // jitter shifts the whole anatomy; curves are analytic so sampling
            // at (c - jx) never runs off an array
            double b[6];
            double prev = 1.0;
            for (int i = 0; i < 6; ++i) {
                b[i] = geo.boundary(i, z, c - jx, W) + jy;
                if (b[i] < prev + kMinGap) b[i] = prev + kMinGap;
                prev = b[i];
            }
            if (b[5] > H - 2)
                throw std::runtime_error("generate_volume: degenerate geometry (layers collapsed)");
            for (int i = 0; i < 6; ++i) curves[static_cast<std::size_t>(i)][static_cast<std::size_t>(c)] =
                static_cast<float>(b[i]);

            for (int r = 0; r < H; ++r) {
                int cls = kVitreous;
                if (r >= b[5])
                    cls = kChoroid;
                else
                    for (int i = 0; i < 5; ++i)
                        if (r >= b[i] && r < b[i + 1]) {
                            cls = i + 1;
                            break;
                        }
                if (cls == kOplIos)
                    for (const FluidPocket& p : pockets) {
                        const double band_top = b[3], band_bot = b[4];
                        const double band = band_bot - band_top;
                        const double cy = band_top + p.cy * band;
                        const double ry = p.ry * band;
                        const double dy = (r - cy) / std::max(ry, 1.0);
                        const double dx = (c - jx - p.cx) / p.rx;
                        if (dy * dy + dx * dx <= 1.0) {
                            cls = kFluid;
                            break;
                        }
                    }
                lab.at(r, c) = static_cast<std::uint8_t>(cls);
            }
        }

        for (int r = 0; r < H; ++r)
            for (int c = 0; c < W; ++c) {
                const float base = style.base_intensity[lab.at(r, c)];
                double v = base * (rng.gamma(style.speckle_shape) / style.speckle_shape);
                v = std::pow(std::max(v, 0.0), static_cast<double>(style.gamma));
                v = 0.5 + (v - 0.5) * style.contrast;
                v += rng.normal(0.0, style.additive_noise_std);
                img.at(r, c) = static_cast<float>(std::clamp(v, 0.0, 1.0));
            }

        vol.bscans.push_back(std::move(img));
        vol.labels.push_back(std::move(lab));
        vol.boundaries.push_back(std::move(curves));
    }
    return vol;
}

std::array<long, kNumClasses> label_histogram(const PhantomVolume& vol) {
    std::array<long, kNumClasses> h{};
    for (const LabelMap& lab : vol.labels)
        for (const std::uint8_t c : lab.v) ++h[c];
    return h;
}

bool boundaries_ordered(const PhantomVolume& vol) {
    for (const auto& curves : vol.boundaries)
        for (std::size_t c = 0; c < curves[0].size(); ++c)
            for (int i = 0; i + 1 < 6; ++i)
                if (curves[static_cast<std::size_t>(i)][c] >=
                    curves[static_cast<std::size_t>(i + 1)][c])
                    return false;
    return true;
}

FoldPlan make_folds(const std::vector<int>& volume_ids, int k, std::array<double, 3> ratios,
                    std::uint64_t seed) {
    const int n = static_cast<int>(volume_ids.size());
    if (k < 1) throw std::invalid_argument("make_folds: k >= 1");
    if (n < k || n < 2) throw std::invalid_argument("make_folds: too few volumes");
    const double rsum = ratios[0] + ratios[1] + ratios[2];
    if (rsum <= 0 || ratios[0] <= 0) throw std::invalid_argument("make_folds: bad ratios");

    std::vector<int> ids = volume_ids;
    Rng rng(seed);
    rng.shuffle(ids);

    FoldPlan plan;
    plan.k = k;

    if (k == 1) {
        FoldPlan::Split s;
        int n_test = ratios[2] > 0 ? std::max(1, static_cast<int>(std::lround(n * ratios[2] / rsum))) : 0;
        int n_val = ratios[1] > 0 ? std::max(1, static_cast<int>(std::lround(n * ratios[1] / rsum))) : 0;
        if (n_test + n_val >= n) throw std::invalid_argument("make_folds: too few volumes");
        s.test.assign(ids.begin(), ids.begin() + n_test);
        s.val.assign(ids.begin() + n_test, ids.begin() + n_test + n_val);
        s.train.assign(ids.begin() + n_test + n_val, ids.end());
        plan.folds.push_back(std::move(s));
        return plan;
    }

    // rotation chunks: fold f's test set (or val set when test ratio is 0)
    std::vector<std::vector<int>> chunks(static_cast<std::size_t>(k));
    for (int i = 0; i < n; ++i) chunks[static_cast<std::size_t>(i % k)].push_back(ids[static_cast<std::size_t>(i)]);

    for (int f = 0; f < k; ++f) {
        FoldPlan::Split s;
        std::vector<int> rest;
        for (int g = 0; g < k; ++g)
            if (g != f)
                rest.insert(rest.end(), chunks[static_cast<std::size_t>(g)].begin(),
                            chunks[static_cast<std::size_t>(g)].end());
        if (ratios[2] > 0) {
            s.test = chunks[static_cast<std::size_t>(f)];
            const int n_val =
                ratios[1] > 0
                    ? std::max(1, static_cast<int>(std::lround(
                                      rest.size() * ratios[1] / (ratios[0] + ratios[1]))))
                    : 0;
            if (n_val >= static_cast<int>(rest.size()))
                throw std::invalid_argument("make_folds: too few volumes");
            s.val.assign(rest.begin(), rest.begin() + n_val);
            s.train.assign(rest.begin() + n_val, rest.end());
        } else {
            s.val = chunks[static_cast<std::size_t>(f)];
            s.train = rest;
        }
        plan.folds.push_back(std::move(s));
    }
    return plan;
}

std::vector<std::pair<int, int>> pair_stream(int n_source, int n_target, std::uint64_t seed) {
    if (n_source <= 0 || n_target <= 0) throw std::invalid_argument("pair_stream: empty set");
    std::vector<int> src(static_cast<std::size_t>(n_source)), tgt(static_cast<std::size_t>(n_target));
    for (int i = 0; i < n_source; ++i) src[static_cast<std::size_t>(i)] = i;
    for (int i = 0; i < n_target; ++i) tgt[static_cast<std::size_t>(i)] = i;
    Rng rng(seed);
    rng.shuffle(src);
    rng.shuffle(tgt);
    const int len = std::max(n_source, n_target);
    std::vector<std::pair<int, int>> pairs(static_cast<std::size_t>(len));
    for (int i = 0; i < len; ++i)
        pairs[static_cast<std::size_t>(i)] = {src[static_cast<std::size_t>(i % n_source)],
                                              tgt[static_cast<std::size_t>(i % n_target)]};
    return pairs;
}

void save_volumes(const std::filesystem::path& dir, const std::vector<PhantomVolume>& vols) {
    std::filesystem::create_directories(dir);
    std::ostringstream manifest;
    for (std::size_t vi = 0; vi < vols.size(); ++vi) {
        const PhantomVolume& vol = vols[vi];
        const int n = vol.n_bscans(), H = vol.bscans[0].h, W = vol.bscans[0].w;
        Tensor imgs({n, H, W});
        Tensor labs({n, H, W});
        Tensor bnds({n, 6, W});
        for (int z = 0; z < n; ++z) {
            std::copy(vol.bscans[static_cast<std::size_t>(z)].v.begin(),
                      vol.bscans[static_cast<std::size_t>(z)].v.end(),
                      imgs.data.begin() + static_cast<long>(z) * H * W);
            for (int i = 0; i < H * W; ++i)
                labs.data[static_cast<std::size_t>(z * H * W + i)] =
                    static_cast<float>(vol.labels[static_cast<std::size_t>(z)].v[static_cast<std::size_t>(i)]);
            for (int b = 0; b < 6; ++b)
                std::copy(vol.boundaries[static_cast<std::size_t>(z)][static_cast<std::size_t>(b)].begin(),
                          vol.boundaries[static_cast<std::size_t>(z)][static_cast<std::size_t>(b)].end(),
                          bnds.data.begin() + (static_cast<long>(z) * 6 + b) * W);
        }
        char stem[32];
        std::snprintf(stem, sizeof(stem), "vol_%03zu", vi);
        write_tensor(dir / (std::string(stem) + "_image.oct"), imgs);
        write_tensor(dir / (std::string(stem) + "_label.oct"), labs);
        write_tensor(dir / (std::string(stem) + "_bounds.oct"), bnds);
        manifest << stem << "\tstyle=" << vol.style_id << "\tseed=" << vol.seed
                 << "\tbscans=" << n << '\n';
    }
    std::ofstream mf(dir / "volumes.manifest");
    if (!mf) throw std::runtime_error("save_volumes: cannot write manifest");
    mf << manifest.str();
}

std::vector<PhantomVolume> load_volumes(const std::filesystem::path& dir) {
    std::ifstream mf(dir / "volumes.manifest");
    if (!mf) throw std::runtime_error("load_volumes: missing manifest in " + dir.string());
    std::vector<PhantomVolume> vols;
    std::string line;
    while (std::getline(mf, line)) {
        if (line.empty()) continue;
        std::istringstream ss(line);
        std::string stem, kv;
        ss >> stem;
        PhantomVolume vol;
        while (ss >> kv) {
            const auto eq = kv.find('=');
            if (eq == std::string::npos) continue;
            const std::string key = kv.substr(0, eq), val = kv.substr(eq + 1);
            if (key == "style") vol.style_id = val;
            if (key == "seed") vol.seed = std::stoull(val);
        }
        Tensor imgs = read_tensor(dir / (stem + "_image.oct"));
        Tensor labs = read_tensor(dir / (stem + "_label.oct"));
        Tensor bnds = read_tensor(dir / (stem + "_bounds.oct"));
        const int n = imgs.dim(0), H = imgs.dim(1), W = imgs.dim(2);
        for (int z = 0; z < n; ++z) {
            Image img(H, W);
            LabelMap lab(H, W);
            for (int i = 0; i < H * W; ++i) {
                img.v[static_cast<std::size_t>(i)] = imgs.data[static_cast<std::size_t>(z * H * W + i)];
                lab.v[static_cast<std::size_t>(i)] =
                    static_cast<std::uint8_t>(labs.data[static_cast<std::size_t>(z * H * W + i)]);
            }
            std::array<std::vector<float>, 6> curves;
            for (int b = 0; b < 6; ++b) {
                curves[static_cast<std::size_t>(b)].resize(static_cast<std::size_t>(W));
                std::copy(bnds.data.begin() + (static_cast<long>(z) * 6 + b) * W,
                          bnds.data.begin() + (static_cast<long>(z) * 6 + b + 1) * W,
                          curves[static_cast<std::size_t>(b)].begin());
            }
            vol.bscans.push_back(std::move(img));
            vol.labels.push_back(std::move(lab));
            vol.boundaries.push_back(std::move(curves));
        }
        vols.push_back(std::move(vol));
    }
    return vols;
}

}  // namespace oct::phantom
