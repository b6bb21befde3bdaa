#ifndef OCT_GRADCHECK_HPP
#define OCT_GRADCHECK_HPP

#include <cmath>
#include <functional>
#include <vector>

#include "oct/tape.hpp"

namespace oct {

/// Central-difference gradient oracle. The closure builds a scalar loss from
/// leaf ids on a double-precision tape; analytic tape gradients of every
/// requires_grad input are compared elementwise against
/// (f(x+h) - f(x-h)) / 2h. Returns the max relative error, where each
/// elementwise difference is normalized by the larger of the element pair and
/// the overall gradient magnitude — near-zero elements carry O(h^2)
/// truncation noise that would otherwise dominate the ratio.
///
/// `tweak`, when set, is applied to the analytic gradients before comparison;
/// it exists for fault-injection tests of the checker itself.
using GradTweak = std::function<void(std::vector<std::vector<double>>&)>;

template <typename F>
double grad_check(F&& build, std::vector<Ten<double>> inputs, double h,
                  const GradTweak& tweak = {}) {
    if (h <= 0) throw std::invalid_argument("grad_check: h must be positive");

    auto eval = [&](const std::vector<Ten<double>>& ins) {
        TapeT<double> t;
        std::vector<int> ids;
        ids.reserve(ins.size());
        for (const auto& in : ins) ids.push_back(t.leaf(in));
        const int loss = build(t, ids);
        return t.scalar(loss);
    };

    // Analytic gradients.
    TapeT<double> tape;
    std::vector<int> ids;
    for (const auto& in : inputs) ids.push_back(tape.leaf(in));
    const int loss = build(tape, ids);
    tape.backward(loss);
    std::vector<std::vector<double>> analytic;
    for (std::size_t i = 0; i < inputs.size(); ++i)
        analytic.push_back(inputs[i].requires_grad ? tape.grad(ids[static_cast<std::size_t>(i)])
                                                   : std::vector<double>{});
    if (tweak) tweak(analytic);

    std::vector<std::vector<double>> numeric(inputs.size());
    double scale = 1e-12;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        if (!inputs[i].requires_grad) continue;
        numeric[i].resize(inputs[i].data.size());
        for (std::size_t k = 0; k < inputs[i].data.size(); ++k) {
            std::vector<Ten<double>> work = inputs;
            work[i].data[k] = inputs[i].data[k] + h;
            const double fp = eval(work);
            work[i].data[k] = inputs[i].data[k] - h;
            const double fm = eval(work);
            if (!std::isfinite(fp) || !std::isfinite(fm))
                throw std::runtime_error("grad_check: non-finite intermediate");
            numeric[i][k] = (fp - fm) / (2.0 * h);
            scale = std::max({scale, std::abs(analytic[i][k]), std::abs(numeric[i][k])});
        }
    }

    double max_rel = 0.0;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        if (!inputs[i].requires_grad) continue;
        for (std::size_t k = 0; k < inputs[i].data.size(); ++k) {
            const double a = analytic[i][k], n = numeric[i][k];
            const double rel = std::abs(a - n) / std::max({std::abs(a), std::abs(n), scale});
            if (rel > max_rel) max_rel = rel;
        }
    }
    return max_rel;
}

}  // namespace oct

#endif
