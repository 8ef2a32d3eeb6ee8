#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <initializer_list>
#include <memory>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace ddad {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
// shape-mismatch; messages name both shapes
struct ShapeError : Error {
    using Error::Error;
};
struct NonFiniteError : Error {
    using Error::Error;
};
// bad scalar arguments: non-positive temperature, negative weights, labels out of range,
// invalid layer specs, invalid dataset parameters
struct ValueError : Error {
    using Error::Error;
};
// training/inference mode violations and stale batch statistics
struct ModeError : Error {
    using Error::Error;
};
struct IoError : Error {
    using Error::Error;
};
struct CheckpointError : Error {
    using Error::Error;
};
struct ConfigError : Error {
    using Error::Error;
};
// non-finite loss during training
struct DivergenceError : Error {
    using Error::Error;
};

using Shape = std::vector<int>;

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += ", ";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

inline std::int64_t shape_numel(const Shape& s) {
    std::int64_t n = 1;
    for (int d : s) {
        if (d <= 0) throw ShapeError("non-positive dimension in shape " + shape_str(s));
        n *= d;
    }
    return n;
}

struct TensorData {
    Shape shape;
    std::vector<double> values;  // row-major
    std::vector<double> grad;    // empty until backward touches this tensor
    bool requires_grad = false;
};

// Shared-handle n-d array of doubles. Values are written once by the op that
// creates the tensor; afterwards only the grad buffer accumulates (optimizers
// mutate parameter values between steps, never mid-graph).
class Tensor {
  public:
    Tensor() = default;

    explicit Tensor(Shape shape, double fill = 0.0, bool requires_grad = false)
        : data_(std::make_shared<TensorData>()) {
        std::int64_t n = shape_numel(shape);
        data_->shape = std::move(shape);
        data_->values.assign(static_cast<std::size_t>(n), fill);
        data_->requires_grad = requires_grad;
    }

    static Tensor from_values(Shape shape, std::vector<double> values, bool requires_grad = false) {
        std::int64_t n = shape_numel(shape);
        if (n != static_cast<std::int64_t>(values.size()))
            throw ShapeError("value count " + std::to_string(values.size()) +
                             " does not match shape " + shape_str(shape));
        Tensor t;
        t.data_ = std::make_shared<TensorData>();
        t.data_->shape = std::move(shape);
        t.data_->values = std::move(values);
        t.data_->requires_grad = requires_grad;
        return t;
    }

    static Tensor scalar(double v, bool requires_grad = false) {
        return from_values({1}, {v}, requires_grad);
    }

    bool defined() const { return data_ != nullptr; }

    const Shape& shape() const { return checked().shape; }
    std::int64_t numel() const { return static_cast<std::int64_t>(checked().values.size()); }

    std::vector<double>& values() { return checked().values; }
    const std::vector<double>& values() const { return checked().values; }

    double item() const {
        if (numel() != 1)
            throw ShapeError("item() on tensor of shape " + shape_str(shape()));
        return checked().values[0];
    }

    // row-major element access, mostly for tests
    double at(std::initializer_list<int> idx) const {
        const TensorData& d = checked();
        if (idx.size() != d.shape.size())
            throw ShapeError("index rank mismatch for shape " + shape_str(d.shape));
        std::int64_t flat = 0;
        std::size_t k = 0;
        for (int i : idx) {
            if (i < 0 || i >= d.shape[k])
                throw ShapeError("index out of range for shape " + shape_str(d.shape));
            flat = flat * d.shape[k] + i;
            ++k;
        }
        return d.values[static_cast<std::size_t>(flat)];
    }

    bool requires_grad() const { return checked().requires_grad; }
    void set_requires_grad(bool rg) { checked().requires_grad = rg; }

    bool has_grad() const { return !checked().grad.empty(); }

    std::vector<double>& grad() {
        if (!has_grad()) throw Error("tensor has no gradient");
        return checked().grad;
    }
    const std::vector<double>& grad() const {
        if (!has_grad()) throw Error("tensor has no gradient");
        return checked().grad;
    }

    std::vector<double> grad_or_zeros() const {
        const TensorData& d = checked();
        if (d.grad.empty()) return std::vector<double>(d.values.size(), 0.0);
        return d.grad;
    }

    void ensure_grad() {
        TensorData& d = checked();
        if (d.grad.empty()) d.grad.assign(d.values.size(), 0.0);
    }

    void zero_grad() { checked().grad.clear(); }

    // deep copy with no grad tracking; breaks any graph connection
    Tensor detach() const {
        return from_values(shape(), values(), false);
    }

    Tensor clone() const {
        return from_values(shape(), values(), requires_grad());
    }

    const std::shared_ptr<TensorData>& ptr() const { return data_; }

    bool same_storage(const Tensor& o) const { return data_ == o.data_; }

  private:
    TensorData& checked() const {
        if (!data_) throw Error("use of undefined tensor");
        return *data_;
    }

    std::shared_ptr<TensorData> data_;
};

inline bool all_finite(const std::vector<double>& v) {
    // Branchless exponent-mask scan (finite iff the exponent field is not all ones);
    // this runs on every op input, so it must stream rather than test elementwise.
    constexpr std::uint64_t kExpMask = 0x7FF0000000000000ull;
    std::uint64_t bad = 0;
    for (double x : v) {
        std::uint64_t bits;
        std::memcpy(&bits, &x, sizeof bits);
        bad |= static_cast<std::uint64_t>((bits & kExpMask) == kExpMask);
    }
    return bad == 0;
}

inline void check_finite(const Tensor& t, const char* where) {
    if (!all_finite(t.values()))
        throw NonFiniteError(std::string("non-finite input to ") + where);
}

}  // namespace ddad
