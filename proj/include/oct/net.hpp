#ifndef OCT_NET_HPP
#define OCT_NET_HPP

#include <string>
#include <vector>

#include "oct/optim.hpp"
#include "oct/rng.hpp"
#include "oct/tape.hpp"

namespace oct {

/// Flat named-parameter container shared by all networks. Parameters are
/// bound onto a tape per forward pass; binding frozen keeps them out of the
/// gradient sweep entirely.
class Net {
public:
    const std::vector<Param>& params() const { return params_; }
    std::vector<Param>& params() { return params_; }

    std::vector<Tape::Id> bind(Tape& tape, bool trainable) const {
        std::vector<Tape::Id> ids;
        ids.reserve(params_.size());
        for (const Param& p : params_) {
            Tensor t = p.value;
            t.requires_grad = trainable;
            ids.push_back(tape.leaf(std::move(t)));
        }
        return ids;
    }

    long param_count() const {
        long n = 0;
        for (const Param& p : params_) n += p.value.numel();
        return n;
    }

    std::vector<Tensor*> param_ptrs() {
        std::vector<Tensor*> v;
        v.reserve(params_.size());
        for (Param& p : params_) v.push_back(&p.value);
        return v;
    }

protected:
    int add_param(std::string name, Tensor t) {
        params_.push_back({std::move(name), std::move(t)});
        return static_cast<int>(params_.size()) - 1;
    }

    static Tensor gaussian_init(std::vector<int> shape, Rng& rng, double std) {
        Tensor t(std::move(shape));
        for (auto& v : t.data) v = static_cast<float>(rng.normal(0.0, std));
        return t;
    }

    std::vector<Param> params_;
};

}  // namespace oct

#endif
