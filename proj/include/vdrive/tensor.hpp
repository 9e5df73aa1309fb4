#pragma once

#include <cstddef>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace vdrive {

// Raised when a contract on inputs is violated (dims, ranges, file formats).
// The CLI maps this to exit code 2.
class ValidationError : public std::runtime_error {
 public:
    explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

// Raised when a training loop produces a non-finite loss.
// The CLI maps this to exit code 3.
class TrainingDivergence : public std::runtime_error {
 public:
    explicit TrainingDivergence(const std::string& msg) : std::runtime_error(msg) {}
};

inline std::string dims_to_string(const std::vector<std::size_t>& dims) {
    std::string s = "[";
    for (std::size_t i = 0; i < dims.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(dims[i]);
    }
    return s + "]";
}

inline std::size_t dims_product(const std::vector<std::size_t>& dims) {
    std::size_t n = 1;
    for (std::size_t d : dims) n *= d;
    return n;
}

// Dense row-major tensor. S is float in production; double instances are
// used by the gradient-audit tests.
template <class S>
struct TensorT {
    std::vector<std::size_t> dims;
    std::vector<S> data;

    TensorT() = default;

    explicit TensorT(std::vector<std::size_t> d, S fill = S(0)) : dims(std::move(d)) {
        check_dims();
        data.assign(dims_product(dims), fill);
    }

    TensorT(std::vector<std::size_t> d, std::vector<S> v) : dims(std::move(d)), data(std::move(v)) {
        check_dims();
        if (data.size() != dims_product(dims)) {
            throw ValidationError("tensor: data length " + std::to_string(data.size()) +
                                  " does not match dims " + dims_to_string(dims));
        }
    }

    static TensorT scalar(S v) { return TensorT({1}, std::vector<S>{v}); }

    std::size_t numel() const { return data.size(); }
    std::size_t rank() const { return dims.size(); }

    // rank-2 accessors
    std::size_t rows() const { return dims.at(0); }
    std::size_t cols() const { return dims.size() >= 2 ? dims.at(1) : 1; }
    S& at(std::size_t r, std::size_t c) { return data[r * cols() + c]; }
    const S& at(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }

    S& operator[](std::size_t i) { return data[i]; }
    const S& operator[](std::size_t i) const { return data[i]; }

 private:
    void check_dims() const {
        for (std::size_t d : dims) {
            if (d == 0) throw ValidationError("tensor: zero extent in dims " + dims_to_string(dims));
        }
        if (dims.empty()) throw ValidationError("tensor: empty dims");
    }
};

using Tensor = TensorT<float>;

template <class S>
bool same_dims(const TensorT<S>& a, const TensorT<S>& b) {
    return a.dims == b.dims;
}

}  // namespace vdrive
