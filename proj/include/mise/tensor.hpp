#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstring>
#include <functional>
#include <initializer_list>
#include <map>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "mise/error.hpp"

namespace mise {

using Shape = std::vector<std::size_t>;

inline std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

inline std::size_t shape_numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

/// Dense row-major array of doubles. Rank 0 is a scalar; rank 1 a vector; rank 2 a matrix.
class Tensor {
public:
    Tensor() : shape_{}, values_(1, 0.0) {}

    explicit Tensor(Shape shape, double fill = 0.0) : shape_(std::move(shape)) {
        for (auto d : shape_) {
            if (d == 0) throw UsageError("tensor dimensions must be positive, got " + shape_str(shape_));
        }
        values_.assign(shape_numel(shape_), fill);
    }

    Tensor(Shape shape, std::vector<double> values) : shape_(std::move(shape)), values_(std::move(values)) {
        for (auto d : shape_) {
            if (d == 0) throw UsageError("tensor dimensions must be positive, got " + shape_str(shape_));
        }
        if (values_.size() != shape_numel(shape_)) {
            throw UsageError("tensor value count " + std::to_string(values_.size()) + " does not match shape " +
                             shape_str(shape_));
        }
    }

    static Tensor scalar(double v) { return Tensor(Shape{}, std::vector<double>{v}); }
    static Tensor vector(std::vector<double> v) {
        const auto n = v.size();
        return Tensor(Shape{n}, std::move(v));
    }
    static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> v) {
        return Tensor(Shape{rows, cols}, std::move(v));
    }
    static Tensor zeros_like(const Tensor& t) { return Tensor(t.shape_, 0.0); }

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t size() const noexcept { return values_.size(); }
    std::size_t rows() const { return rank() == 2 ? shape_[0] : 1; }
    std::size_t cols() const { return rank() == 2 ? shape_[1] : (rank() == 1 ? shape_[0] : 1); }
    std::size_t dim(std::size_t i) const { return shape_.at(i); }

    double* data() noexcept { return values_.data(); }
    const double* data() const noexcept { return values_.data(); }
    std::span<double> values() noexcept { return values_; }
    std::span<const double> values() const noexcept { return values_; }

    double& operator[](std::size_t i) noexcept { return values_[i]; }
    double operator[](std::size_t i) const noexcept { return values_[i]; }
    double& at(std::size_t r, std::size_t c) noexcept { return values_[r * cols() + c]; }
    double at(std::size_t r, std::size_t c) const noexcept { return values_[r * cols() + c]; }
    double item() const {
        if (values_.size() != 1) throw UsageError("item() on tensor of shape " + shape_str(shape_));
        return values_[0];
    }

    std::span<const double> row(std::size_t r) const { return {values_.data() + r * cols(), cols()}; }
    std::span<double> row(std::size_t r) { return {values_.data() + r * cols(), cols()}; }

    void fill(double v) { std::fill(values_.begin(), values_.end(), v); }

    bool all_finite() const noexcept {
        return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
    }

    /// Bitwise equality of shape and values.
    bool identical(const Tensor& o) const noexcept {
        if (shape_ != o.shape_) return false;
        return std::equal(values_.begin(), values_.end(), o.values_.begin(), o.values_.end(),
                          [](double a, double b) { return std::memcmp(&a, &b, sizeof(double)) == 0; });
    }

    friend bool operator==(const Tensor&, const Tensor&) = default;

private:
    Shape shape_;
    std::vector<double> values_;
};

/// Named parameter tensors with deterministic (lexicographic) iteration order.
class ParamSet {
public:
    using Map = std::map<std::string, Tensor>;

    void add(const std::string& name, Tensor t) {
        if (!entries_.emplace(name, std::move(t)).second) throw UsageError("duplicate parameter name: " + name);
    }
    bool contains(const std::string& name) const { return entries_.count(name) != 0; }
    Tensor& at(const std::string& name) {
        auto it = entries_.find(name);
        if (it == entries_.end()) throw UsageError("unknown parameter: " + name);
        return it->second;
    }
    const Tensor& at(const std::string& name) const {
        auto it = entries_.find(name);
        if (it == entries_.end()) throw UsageError("unknown parameter: " + name);
        return it->second;
    }

    std::size_t size() const noexcept { return entries_.size(); }
    bool empty() const noexcept { return entries_.empty(); }
    std::size_t numel() const {
        std::size_t n = 0;
        for (const auto& [_, t] : entries_) n += t.size();
        return n;
    }

    auto begin() noexcept { return entries_.begin(); }
    auto end() noexcept { return entries_.end(); }
    auto begin() const noexcept { return entries_.begin(); }
    auto end() const noexcept { return entries_.end(); }

    ParamSet zeros_like() const {
        ParamSet out;
        for (const auto& [name, t] : entries_) out.add(name, Tensor::zeros_like(t));
        return out;
    }

    /// True when both sets have the same names and shapes.
    bool same_layout(const ParamSet& o) const {
        if (entries_.size() != o.entries_.size()) return false;
        auto a = entries_.begin();
        auto b = o.entries_.begin();
        for (; a != entries_.end(); ++a, ++b) {
            if (a->first != b->first || a->second.shape() != b->second.shape()) return false;
        }
        return true;
    }

    bool identical(const ParamSet& o) const {
        if (!same_layout(o)) return false;
        auto b = o.entries_.begin();
        for (auto a = entries_.begin(); a != entries_.end(); ++a, ++b) {
            if (!a->second.identical(b->second)) return false;
        }
        return true;
    }

    /// this += scale * other (layouts must match).
    void axpy(double scale, const ParamSet& other) {
        require_layout(other, "axpy");
        auto b = other.entries_.begin();
        for (auto a = entries_.begin(); a != entries_.end(); ++a, ++b) {
            auto dst = a->second.values();
            auto src = b->second.values();
            for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += scale * src[i];
        }
    }

    double dot(const ParamSet& other) const {
        require_layout(other, "dot");
        double s = 0.0;
        auto b = other.entries_.begin();
        for (auto a = entries_.begin(); a != entries_.end(); ++a, ++b) {
            auto x = a->second.values();
            auto y = b->second.values();
            for (std::size_t i = 0; i < x.size(); ++i) s += x[i] * y[i];
        }
        return s;
    }

    double max_abs() const {
        double m = 0.0;
        for (const auto& [_, t] : entries_)
            for (double v : t.values()) m = std::max(m, std::abs(v));
        return m;
    }

    void require_layout(const ParamSet& other, const char* what) const {
        if (!same_layout(other)) throw UsageError(std::string(what) + ": parameter sets have different layouts");
    }

    friend bool operator==(const ParamSet&, const ParamSet&) = default;

private:
    Map entries_;
};

} // namespace mise
