#ifndef OCT_TENSOR_HPP
#define OCT_TENSOR_HPP

#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace oct {

/// Dense row-major n-d array, rank 1..4. Image batches use NCHW order.
/// `grad` is empty unless a backward pass filled it.
template <typename T>
struct Ten {
    std::vector<int> shape;
    std::vector<T> data;
    bool requires_grad = false;
    std::vector<T> grad;

    Ten() = default;
    explicit Ten(std::vector<int> s) : shape(std::move(s)), data(checked_numel(shape), T(0)) {}
    Ten(std::vector<int> s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
        if (static_cast<std::size_t>(checked_numel(shape)) != data.size())
            throw std::invalid_argument("Ten: shape/data size mismatch");
    }

    static Ten zeros(std::vector<int> s) { return Ten(std::move(s)); }
    static Ten full(std::vector<int> s, T v) {
        Ten t(std::move(s));
        std::fill(t.data.begin(), t.data.end(), v);
        return t;
    }
    static Ten scalar(T v) { return Ten({1}, {v}); }

    int rank() const { return static_cast<int>(shape.size()); }
    int dim(int i) const { return shape.at(static_cast<std::size_t>(i)); }
    int numel() const { return static_cast<int>(data.size()); }

    T* ptr() { return data.data(); }
    const T* ptr() const { return data.data(); }

    T value() const {
        if (data.size() != 1) throw std::logic_error("Ten::value: not a scalar");
        return data[0];
    }

    /// Interprets rank<4 tensors as NCHW with leading 1s (e.g. HxW -> 1x1xHxW).
    void nchw(int& n, int& c, int& h, int& w) const {
        int d[4] = {1, 1, 1, 1};
        const int r = rank();
        if (r < 1 || r > 4) throw std::invalid_argument("Ten::nchw: rank must be 1..4");
        for (int i = 0; i < r; ++i) d[4 - r + i] = shape[static_cast<std::size_t>(i)];
        n = d[0]; c = d[1]; h = d[2]; w = d[3];
    }

    static int checked_numel(const std::vector<int>& s) {
        if (s.empty() || s.size() > 4) throw std::invalid_argument("Ten: rank must be 1..4");
        long long n = 1;
        for (int e : s) {
            if (e <= 0) throw std::invalid_argument("Ten: non-positive extent");
            n *= e;
        }
        if (n > (1LL << 31)) throw std::invalid_argument("Ten: too large");
        return static_cast<int>(n);
    }
};

using Tensor = Ten<float>;

inline bool same_shape(const std::vector<int>& a, const std::vector<int>& b) { return a == b; }

inline std::string shape_str(const std::vector<int>& s) {
    std::string r = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) r += "x";
        r += std::to_string(s[i]);
    }
    return r + "]";
}

template <typename T, typename U>
Ten<U> cast_tensor(const Ten<T>& t) {
    Ten<U> r;
    r.shape = t.shape;
    r.requires_grad = t.requires_grad;
    r.data.resize(t.data.size());
    for (std::size_t i = 0; i < t.data.size(); ++i) r.data[i] = static_cast<U>(t.data[i]);
    return r;
}

}  // namespace oct

#endif
