#ifndef OCT_TAPE_HPP
#define OCT_TAPE_HPP

#include <cstdint>
#include <functional>
#include <vector>

#include "oct/tensor.hpp"

namespace oct {

/// Reverse-mode autodiff tape. Records one node per op in creation order
/// (inputs always precede their consumers), so backward() is a single reverse
/// sweep that visits each node once. Instantiated at float for production and
/// at double for finite-difference gradient checks.
///
/// Convolution kernels are laid out OCxICxKHxKW for conv2d and ICxOCxKHxKW
/// for conv_transpose2d, so the transpose of a conv reuses its weight tensor.
template <typename T>
class TapeT {
public:
    using Id = int;

    /// Inserts a leaf node; gradient is tracked iff v.requires_grad.
    Id leaf(Ten<T> v);
    /// Leaf with requires_grad forced off (inputs, frozen weights, masks).
    Id constant(Ten<T> v);

    const Ten<T>& val(Id id) const { return node(id).v; }
    double scalar(Id id) const;
    /// Gradient buffer of a node (zeros if the node was unreachable from the loss).
    const std::vector<T>& grad(Id id);

    /// Reverse sweep from a scalar loss node. Throws on non-scalar loss.
    void backward(Id loss);

    // -- network ops ---------------------------------------------------------
    Id conv2d(Id x, Id w, int stride, int pad, int dilation = 1);
    Id conv_transpose2d(Id x, Id w, int stride, int pad);
    Id add_channel_bias(Id x, Id b);
    Id instance_norm(Id x, T eps);
    Id relu(Id x);
    Id leaky_relu(Id x, T slope);
    Id tanh_act(Id x);
    Id softmax(Id x, int axis);
    Id dropout(Id x, double p, std::uint64_t seed, bool training);

    // -- elementwise / structural --------------------------------------------
    Id add(Id a, Id b);
    Id sub(Id a, Id b);
    Id mul(Id a, Id b);
    Id div(Id a, Id b);
    Id scale(Id x, T c);
    Id add_const(Id x, T c);
    Id mul_const(Id x, const Ten<T>& k);   // k is non-differentiable
    Id concat_ch(Id a, Id b);
    Id slice_batch(Id x, int n_index);
    Id log_clamped(Id x, T floor);
    Id atanh_clamped(Id x, T limit);

    // -- reductions (accumulated in double) -----------------------------------
    Id sum_all(Id x);
    Id mean_all(Id x);
    Id max_all(Id x);
    Id sum_per_channel(Id x);              // NCHW -> {C}
    Id mse(Id a, Id b);                    // mean squared difference
    Id l1(Id a, Id b);                     // mean absolute difference

    int size() const { return static_cast<int>(nodes_.size()); }

    /// Forward outputs are checked for NaN/Inf when enabled (default on).
    bool finite_checks = true;

private:
    struct Node {
        Ten<T> v;
        std::function<void(TapeT&)> back;  // empty for leaves
    };

    std::vector<Node> nodes_;
    Id self_ = -1;  // node whose backward closure is currently running

    Node& node(Id id) { return nodes_.at(static_cast<std::size_t>(id)); }
    const Node& node(Id id) const { return nodes_.at(static_cast<std::size_t>(id)); }

    Id push(Ten<T> v, bool requires_grad, std::function<void(TapeT&)> back);
    std::vector<T>& grad_buf(Id id);
    void accum(Id id, const std::vector<T>& g);
    void check_finite(const Ten<T>& v, const char* op) const;
};

using Tape = TapeT<float>;

}  // namespace oct

#endif
