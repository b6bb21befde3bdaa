#ifndef OCT_OPTIM_HPP
#define OCT_OPTIM_HPP

#include <string>
#include <vector>

#include "oct/tensor.hpp"

namespace oct {

/// Named trainable tensor; networks are flat lists of these.
struct Param {
    std::string name;
    Tensor value;
};

enum class OptKind { RmsProp, Adam };

struct OptimizerConfig {
    OptKind kind = OptKind::RmsProp;
    double lr = 1e-4;
    double rho = 0.99;      // rmsprop decay
    double beta1 = 0.9;     // adam moments
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;  // decoupled L2 (adam only)
};

/// RMSProp: s <- rho*s + (1-rho)*g^2 ; w <- w - lr*g/(sqrt(s)+eps)
/// Adam: bias-corrected moments plus a decoupled L2 term.
/// Moment buffers are sized on the first step and must stay shape-congruent.
class Optimizer {
public:
    explicit Optimizer(OptimizerConfig cfg) : cfg_(cfg) {
        if (cfg_.lr < 0) throw std::invalid_argument("Optimizer: lr must be >= 0");
    }

    void step(const std::vector<Tensor*>& params,
              const std::vector<const std::vector<float>*>& grads);

    double lr() const { return cfg_.lr; }
    void set_lr(double lr) { cfg_.lr = lr; }
    int step_count() const { return t_; }
    const OptimizerConfig& config() const { return cfg_; }

private:
    OptimizerConfig cfg_;
    std::vector<std::vector<float>> m1_, m2_;
    int t_ = 0;
};

}  // namespace oct

#endif
