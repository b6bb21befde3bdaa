#ifndef OCT_STATS_HPP
#define OCT_STATS_HPP

#include <vector>

namespace oct::stats {

/// Upper tail of the F distribution via the regularized incomplete beta.
double f_sf(double f, double df1, double df2);

/// Upper tail of the studentized range distribution (k groups, nu error df)
/// by double numerical integration, as used by the Tukey HSD test.
double studentized_range_sf(double q, int k, double nu);

struct AnovaResult {
    double f = 0;
    double p = 1;
    double ss_between = 0, ss_within = 0;
    double df_between = 0, df_within = 0;
};

/// One-way fixed-effects ANOVA; every group needs >= 2 values.
AnovaResult anova_oneway(const std::vector<std::vector<double>>& groups);

struct TukeyPair {
    int i = 0, j = 0;
    double q = 0;
    double p = 1;
    bool significant = false;
};

/// Pairwise Tukey HSD over equal-size groups at significance level alpha.
std::vector<TukeyPair> tukey_hsd(const std::vector<std::vector<double>>& groups, double alpha);

}  // namespace oct::stats

#endif
