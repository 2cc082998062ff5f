// Dense row-major tensor with shape metadata. The one value type used for
// images, patches, features, parameters and gradients.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace tgre {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline std::string shape_str(const std::vector<int>& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << "]";
    return os.str();
}

template <typename T>
struct Tensor {
    std::vector<int> shape;
    std::vector<T> data;

    Tensor() = default;

    explicit Tensor(std::vector<int> s) : shape(std::move(s)), data(checked_numel(shape), T(0)) {}

    Tensor(std::vector<int> s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
        if (checked_numel(shape) != data.size())
            throw Error("tensor: " + std::to_string(data.size()) + " values do not fill shape " + shape_str(shape));
    }

    static size_t checked_numel(const std::vector<int>& s) {
        size_t n = 1;
        for (int e : s) {
            if (e < 0) throw Error("tensor: negative extent in shape " + shape_str(s));
            n *= static_cast<size_t>(e);
        }
        return n;
    }

    size_t numel() const { return data.size(); }
    bool empty() const { return data.empty(); }
    int dim(int i) const { return shape[static_cast<size_t>(i)]; }
    int rank() const { return static_cast<int>(shape.size()); }

    T* ptr() { return data.data(); }
    const T* ptr() const { return data.data(); }

    T& operator[](size_t i) { return data[i]; }
    const T& operator[](size_t i) const { return data[i]; }

    T& at(int i, int j) { return data[static_cast<size_t>(i) * dim(1) + j]; }
    const T& at(int i, int j) const { return data[static_cast<size_t>(i) * dim(1) + j]; }

    void fill(T v) { std::fill(data.begin(), data.end(), v); }

    Tensor reshaped(std::vector<int> s) const {
        if (checked_numel(s) != numel())
            throw Error("reshape: " + shape_str(shape) + " has " + std::to_string(numel()) +
                        " elements, target " + shape_str(s) + " wants " + std::to_string(checked_numel(s)));
        return Tensor(std::move(s), data);
    }

    template <typename U>
    Tensor<U> cast() const {
        Tensor<U> out;
        out.shape = shape;
        out.data.assign(data.begin(), data.end());
        return out;
    }

    bool all_finite() const {
        for (T v : data)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }
};

using Tensorf = Tensor<float>;
using Tensord = Tensor<double>;

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* what) {
    if (!a.same_shape(b))
        throw Error(std::string(what) + ": shape mismatch " + shape_str(a.shape) + " vs " + shape_str(b.shape));
}

}  // namespace tgre
