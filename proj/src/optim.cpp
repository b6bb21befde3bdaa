#include "oct/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace oct {

void Optimizer::step(const std::vector<Tensor*>& params,
                     const std::vector<const std::vector<float>*>& grads) {
    if (params.size() != grads.size()) throw std::invalid_argument("Optimizer: param/grad count");
    if (m2_.empty()) {
        m2_.resize(params.size());
        if (cfg_.kind == OptKind::Adam) m1_.resize(params.size());
        for (std::size_t i = 0; i < params.size(); ++i) {
            m2_[i].assign(params[i]->data.size(), 0.0f);
            if (cfg_.kind == OptKind::Adam) m1_[i].assign(params[i]->data.size(), 0.0f);
        }
    }
    if (m2_.size() != params.size()) throw std::invalid_argument("Optimizer: param count changed");
    ++t_;
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor& w = *params[i];
        const std::vector<float>& g = *grads[i];
        if (g.size() != w.data.size() || m2_[i].size() != w.data.size())
            throw std::invalid_argument("Optimizer: shape mismatch for " + std::to_string(i));
        if (cfg_.kind == OptKind::RmsProp) {
            const float rho = static_cast<float>(cfg_.rho);
            for (std::size_t k = 0; k < w.data.size(); ++k) {
                m2_[i][k] = rho * m2_[i][k] + (1.0f - rho) * g[k] * g[k];
                w.data[k] -= static_cast<float>(cfg_.lr * g[k] /
                                                (std::sqrt(static_cast<double>(m2_[i][k])) + cfg_.eps));
            }
        } else {
            const double bc1 = 1.0 - std::pow(cfg_.beta1, t_);
            const double bc2 = 1.0 - std::pow(cfg_.beta2, t_);
            for (std::size_t k = 0; k < w.data.size(); ++k) {
                m1_[i][k] = static_cast<float>(cfg_.beta1 * m1_[i][k] + (1.0 - cfg_.beta1) * g[k]);
                m2_[i][k] = static_cast<float>(cfg_.beta2 * m2_[i][k] + (1.0 - cfg_.beta2) * g[k] * g[k]);
                const double mhat = m1_[i][k] / bc1;
                const double vhat = m2_[i][k] / bc2;
                w.data[k] -= static_cast<float>(cfg_.lr * (mhat / (std::sqrt(vhat) + cfg_.eps) +
                                                           cfg_.weight_decay * w.data[k]));
            }
        }
    }
}

}  // namespace oct
