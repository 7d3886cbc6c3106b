#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "fcn/errors.hpp"

namespace fcn {

using std::int64_t;

// Rank-4 geometry in batch x channel x height x width order.
struct Shape {
    int64_t n = 0;
    int64_t c = 0;
    int64_t h = 0;
    int64_t w = 0;

    int64_t elems() const { return n * c * h * w; }

    bool operator==(const Shape&) const = default;

    std::string str() const {
        return "(" + std::to_string(n) + "," + std::to_string(c) + "," +
               std::to_string(h) + "," + std::to_string(w) + ")";
    }

    void validate() const {
        if (n < 1 || c < 1 || h < 1 || w < 1) {
            throw ShapeError("invalid shape " + str() + ": every dim must be >= 1");
        }
    }
};

// Dense rank-4 array, row-major in (n,c,h,w). The engine's universal value type.
template <typename T>
struct Tensor {
    Shape shape{};
    std::vector<T> data;

    Tensor() = default;
    explicit Tensor(Shape s) : shape(s) {
        s.validate();
        data.assign(static_cast<std::size_t>(s.elems()), T{0});
    }
    Tensor(Shape s, T fill) : shape(s) {
        s.validate();
        data.assign(static_cast<std::size_t>(s.elems()), fill);
    }

    int64_t index(int64_t n, int64_t c, int64_t h, int64_t w) const {
        return ((n * shape.c + c) * shape.h + h) * shape.w + w;
    }
    T& at(int64_t n, int64_t c, int64_t h, int64_t w) {
        return data[static_cast<std::size_t>(index(n, c, h, w))];
    }
    T at(int64_t n, int64_t c, int64_t h, int64_t w) const {
        return data[static_cast<std::size_t>(index(n, c, h, w))];
    }

    bool scalar() const { return shape == Shape{1, 1, 1, 1}; }

    void fill(T v) { std::fill(data.begin(), data.end(), v); }

    template <typename U>
    Tensor<U> cast() const {
        Tensor<U> out(shape);
        for (std::size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
        return out;
    }
};

template <typename T>
Tensor<T> tensor_full(Shape shape, T fill) {
    shape.validate();
    return Tensor<T>(shape, fill);
}

// Binary label grid (n,h,w), values in {0,1}.
struct Mask {
    int64_t n = 0;
    int64_t h = 0;
    int64_t w = 0;
    std::vector<std::uint8_t> v;

    Mask() = default;
    Mask(int64_t n_, int64_t h_, int64_t w_) : n(n_), h(h_), w(w_) {
        if (n < 1 || h < 1 || w < 1) throw ShapeError("invalid mask dims");
        v.assign(static_cast<std::size_t>(n * h * w), 0);
    }

    int64_t elems() const { return n * h * w; }
    std::uint8_t& at(int64_t n_, int64_t y, int64_t x) {
        return v[static_cast<std::size_t>((n_ * h + y) * w + x)];
    }
    std::uint8_t at(int64_t n_, int64_t y, int64_t x) const {
        return v[static_cast<std::size_t>((n_ * h + y) * w + x)];
    }
    bool operator==(const Mask&) const = default;
};

// Seeded generator with a fixed sample algorithm so outputs are bit-identical
// across platforms and standard libraries (std distributions are not).
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    // Uniform in [0,1) with 53 random bits.
    double uniform() {
        return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
    }

    // Standard normal via Box-Muller; second sample cached.
    double gaussian() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        const double u1 = 1.0 - uniform();  // (0,1], keeps log finite
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 2.0 * 3.14159265358979323846 * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    // Uniform integer in [0,n) by rejection, bias-free.
    std::uint64_t bounded(std::uint64_t n) {
        if (n == 0) throw ParamError("bounded(0)");
        const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                    std::numeric_limits<std::uint64_t>::max() % n;
        std::uint64_t x;
        do {
            x = gen_();
        } while (x >= limit);
        return x % n;
    }

    std::uint64_t raw() { return gen_(); }

private:
    std::mt19937_64 gen_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

// I.i.d. zero-mean Gaussian fill; same (shape, std, seed) gives identical bytes.
template <typename T>
Tensor<T> gaussian_init(Shape shape, double std_dev, std::uint64_t seed) {
    shape.validate();
    if (!(std_dev > 0.0)) throw ParamError("gaussian_init: std must be > 0");
    Tensor<T> out(shape);
    Rng rng(seed);
    for (auto& x : out.data) x = static_cast<T>(rng.gaussian() * std_dev);
    return out;
}

// Fisher-Yates with the engine Rng; deterministic for a given generator state.
template <typename It>
void shuffle(It first, It last, Rng& rng) {
    const auto n = static_cast<std::uint64_t>(last - first);
    for (std::uint64_t i = n; i > 1; --i) {
        const auto j = rng.bounded(i);
        std::swap(first[i - 1], first[j]);
    }
}

// Named learnable tensor with its gradient accumulator.
template <typename T>
struct Parameter {
    std::string name;
    Tensor<T> value;
    Tensor<T> grad;
    bool trainable = true;

    Parameter() = default;
    Parameter(std::string name_, Tensor<T> value_, bool trainable_ = true)
        : name(std::move(name_)),
          value(std::move(value_)),
          grad(value.shape),
          trainable(trainable_) {}
};

inline bool finite(float x) { return std::isfinite(x); }
inline bool finite(double x) { return std::isfinite(x); }

// NaN/Inf guard applied to every engine-produced tensor: fail loudly instead
// of propagating poison.
template <typename T>
void check_finite(const Tensor<T>& t, const char* op) {
    for (const T x : t.data) {
        if (!finite(x)) {
            throw NumericError(std::string(op) + ": non-finite value in output tensor " +
                               t.shape.str());
        }
    }
}

}  // namespace fcn
