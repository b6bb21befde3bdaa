#include "oct/stats.hpp"

#include <cmath>
#include <stdexcept>

namespace oct::stats {

namespace {

// Continued-fraction evaluation of the regularized incomplete beta (Lentz).
double betacf(double a, double b, double x) {
    const double eps = 3e-14, fpmin = 1e-300;
    const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
    double c = 1.0, d = 1.0 - qab * x / qap;
    if (std::abs(d) < fpmin) d = fpmin;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= 300; ++m) {
        const int m2 = 2 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < fpmin) d = fpmin;
        c = 1.0 + aa / c;
        if (std::abs(c) < fpmin) c = fpmin;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < fpmin) d = fpmin;
        c = 1.0 + aa / c;
        if (std::abs(c) < fpmin) c = fpmin;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::abs(del - 1.0) < eps) break;
    }
    return h;
}

double betainc_reg(double a, double b, double x) {
    if (x <= 0.0) return 0.0;
    if (x >= 1.0) return 1.0;
    const double ln_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                            a * std::log(x) + b * std::log(1.0 - x);
    const double front = std::exp(ln_front);
    if (x < (a + 1.0) / (a + b + 2.0)) return front * betacf(a, b, x) / a;
    return 1.0 - front * betacf(b, a, 1.0 - x) / b;
}

double norm_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }
double norm_pdf(double z) { return std::exp(-0.5 * z * z) / std::sqrt(2.0 * 3.14159265358979323846); }

// P(range of k std normals <= w) = k * int phi(z) [Phi(z) - Phi(z-w)]^{k-1} dz
double range_cdf_normal(double w, int k) {
    if (w <= 0) return 0.0;
    const int panels = 64, nodes = 8;
    // 8-point Gauss-Legendre on [-1, 1]
    static const double gx[8] = {-0.9602898564975363, -0.7966664774136267, -0.5255324099163290,
                                 -0.1834346424956498, 0.1834346424956498,  0.5255324099163290,
                                 0.7966664774136267,  0.9602898564975363};
    static const double gw[8] = {0.1012285362903763, 0.2223810344533745, 0.3137066458778873,
                                 0.3626837833783620, 0.3626837833783620, 0.3137066458778873,
                                 0.2223810344533745, 0.1012285362903763};
    const double lo = -9.0, hi = 9.0;
    const double hw = (hi - lo) / panels;
    double acc = 0;
    for (int pnl = 0; pnl < panels; ++pnl) {
        const double a = lo + pnl * hw, mid = a + hw / 2, half = hw / 2;
        for (int i = 0; i < nodes; ++i) {
            const double z = mid + half * gx[i];
            const double inner = norm_cdf(z) - norm_cdf(z - w);
            acc += gw[i] * half * norm_pdf(z) * std::pow(std::max(inner, 0.0), k - 1);
        }
    }
    return std::min(1.0, k * acc);
}

}  // namespace

double f_sf(double f, double df1, double df2) {
    if (f <= 0) return 1.0;
    return betainc_reg(df2 / 2.0, df1 / 2.0, df2 / (df2 + df1 * f));
}

double studentized_range_sf(double q, int k, double nu) {
    if (q <= 0) return 1.0;
    if (k < 2 || nu < 1) throw std::invalid_argument("studentized_range_sf: bad parameters");

    // CDF = int f_chi(s) P(range <= q s) ds where s = sqrt(chi2_nu / nu)
    const double ln_coeff = 0.5 * nu * std::log(nu) - std::lgamma(nu / 2.0) -
                            (nu / 2.0 - 1.0) * std::log(2.0);
    auto chi_pdf = [&](double s) {
        return std::exp(ln_coeff + (nu - 1.0) * std::log(s) - 0.5 * nu * s * s);
    };

    static const double gx[8] = {-0.9602898564975363, -0.7966664774136267, -0.5255324099163290,
                                 -0.1834346424956498, 0.1834346424956498,  0.5255324099163290,
                                 0.7966664774136267,  0.9602898564975363};
    static const double gw[8] = {0.1012285362903763, 0.2223810344533745, 0.3137066458778873,
                                 0.3626837833783620, 0.3626837833783620, 0.3137066458778873,
                                 0.2223810344533745, 0.1012285362903763};
    // s concentrates near 1 with spread ~1/sqrt(2 nu); integrate generously
    const double s_hi = 1.0 + 12.0 / std::sqrt(2.0 * nu);
    const int panels = 96;
    const double hw = s_hi / panels;
    double cdf = 0;
    for (int pnl = 0; pnl < panels; ++pnl) {
        const double a = pnl * hw, mid = a + hw / 2, half = hw / 2;
        for (int i = 0; i < 8; ++i) {
            const double s = mid + half * gx[i];
            if (s <= 0) continue;
            cdf += gw[i] * half * chi_pdf(s) * range_cdf_normal(q * s, k);
        }
    }
    return std::clamp(1.0 - cdf, 0.0, 1.0);
}

AnovaResult anova_oneway(const std::vector<std::vector<double>>& groups) {
    if (groups.size() < 2) throw std::invalid_argument("anova_oneway: need >= 2 groups");
    long n_total = 0;
    double grand = 0;
    for (const auto& g : groups) {
        if (g.size() < 2) throw std::invalid_argument("anova_oneway: each group needs >= 2 values");
        for (const double v : g) grand += v;
        n_total += static_cast<long>(g.size());
    }
    grand /= static_cast<double>(n_total);

    AnovaResult r;
    for (const auto& g : groups) {
        double mean = 0;
        for (const double v : g) mean += v;
        mean /= static_cast<double>(g.size());
        r.ss_between += static_cast<double>(g.size()) * (mean - grand) * (mean - grand);
        for (const double v : g) r.ss_within += (v - mean) * (v - mean);
    }
    r.df_between = static_cast<double>(groups.size()) - 1.0;
    r.df_within = static_cast<double>(n_total) - static_cast<double>(groups.size());

    const double msb = r.ss_between / r.df_between;
    const double msw = r.ss_within / r.df_within;
    if (msw <= 0) {
        // all groups internally constant: identical means give F=0 p=1,
        // separated means an infinite statistic
        r.f = msb <= 0 ? 0.0 : std::numeric_limits<double>::infinity();
        r.p = msb <= 0 ? 1.0 : 0.0;
        return r;
    }
    r.f = msb / msw;
    r.p = f_sf(r.f, r.df_between, r.df_within);
    return r;
}

std::vector<TukeyPair> tukey_hsd(const std::vector<std::vector<double>>& groups, double alpha) {
    const int k = static_cast<int>(groups.size());
    if (k < 2) throw std::invalid_argument("tukey_hsd: need >= 2 groups");
    const std::size_t n = groups[0].size();
    for (const auto& g : groups)
        if (g.size() != n)
            throw std::invalid_argument("tukey_hsd: unequal group sizes are unsupported");
    if (n < 2) throw std::invalid_argument("tukey_hsd: each group needs >= 2 values");

    std::vector<double> means(static_cast<std::size_t>(k));
    double ssw = 0;
    for (int i = 0; i < k; ++i) {
        double m = 0;
        for (const double v : groups[static_cast<std::size_t>(i)]) m += v;
        m /= static_cast<double>(n);
        means[static_cast<std::size_t>(i)] = m;
        for (const double v : groups[static_cast<std::size_t>(i)]) ssw += (v - m) * (v - m);
    }
    const double nu = static_cast<double>(k) * (static_cast<double>(n) - 1.0);
    const double msw = ssw / nu;

    std::vector<TukeyPair> pairs;
    for (int i = 0; i < k; ++i)
        for (int j = i + 1; j < k; ++j) {
            TukeyPair pr;
            pr.i = i;
            pr.j = j;
            if (msw <= 0) {
                const bool same = means[static_cast<std::size_t>(i)] == means[static_cast<std::size_t>(j)];
                pr.q = same ? 0.0 : std::numeric_limits<double>::infinity();
                pr.p = same ? 1.0 : 0.0;
            } else {
                pr.q = std::abs(means[static_cast<std::size_t>(i)] - means[static_cast<std::size_t>(j)]) /
                       std::sqrt(msw / static_cast<double>(n));
                pr.p = studentized_range_sf(pr.q, k, nu);
            }
            pr.significant = pr.p < alpha;
            pairs.push_back(pr);
        }
    return pairs;
}

}  // namespace oct::stats
