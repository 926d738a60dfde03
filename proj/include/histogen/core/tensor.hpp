#pragma once

#include <Eigen/Dense>

#include <array>
#include <atomic>
#include <cstdint>
#include <initializer_list>
#include <sstream>
#include <string>
#include <vector>

#include "histogen/core/errors.hpp"
#include "histogen/core/rng.hpp"

namespace histogen {

using Index = Eigen::Index;

// Live-tensor byte accounting. Training logs the per-step peak so the
// memory-vs-context-length trend is measurable at toy scale.
class MemoryTracker {
public:
    static MemoryTracker& instance() {
        static MemoryTracker t;
        return t;
    }

    void add(std::int64_t bytes) {
        const std::int64_t cur = current_.fetch_add(bytes) + bytes;
        std::int64_t prev = peak_.load();
        while (cur > prev && !peak_.compare_exchange_weak(prev, cur)) {
        }
    }
    void sub(std::int64_t bytes) { current_.fetch_sub(bytes); }

    std::int64_t current() const { return current_.load(); }
    std::int64_t peak() const { return peak_.load(); }
    void reset_peak() { peak_.store(current_.load()); }

private:
    std::atomic<std::int64_t> current_{0};
    std::atomic<std::int64_t> peak_{0};
};

// 64-byte aligned so SIMD reduction grouping (and therefore rounding) never
// depends on heap history; this is what makes resumed runs bitwise equal to
// uninterrupted ones.
template <class S>
struct TrackingAllocator {
    using value_type = S;
    static constexpr std::align_val_t kAlign{64};

    TrackingAllocator() = default;
    template <class U>
    TrackingAllocator(const TrackingAllocator<U>&) {}

    S* allocate(std::size_t n) {
        MemoryTracker::instance().add(static_cast<std::int64_t>(n * sizeof(S)));
        return static_cast<S*>(::operator new(n * sizeof(S), kAlign));
    }
    void deallocate(S* p, std::size_t n) {
        MemoryTracker::instance().sub(static_cast<std::int64_t>(n * sizeof(S)));
        ::operator delete(p, kAlign);
    }
    bool operator==(const TrackingAllocator&) const { return true; }
    bool operator!=(const TrackingAllocator&) const { return false; }
};

// Dense row-major tensor of rank <= 4 (NCHW for images/latents, (N,T,C) for
// token contexts). Math goes through Eigen maps; this class only owns shape
// and storage.
template <class S>
class Tensor {
public:
    using Scalar = S;
    using MatMap = Eigen::Map<Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
    using ConstMatMap =
        Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
    using ArrMap = Eigen::Map<Eigen::Array<S, Eigen::Dynamic, 1>>;
    using ConstArrMap = Eigen::Map<const Eigen::Array<S, Eigen::Dynamic, 1>>;

    Tensor() = default;

    explicit Tensor(std::initializer_list<Index> dims) { resize(std::vector<Index>(dims)); }
    explicit Tensor(const std::vector<Index>& dims) { resize(dims); }

    static Tensor zeros(std::initializer_list<Index> dims) {
        Tensor t(dims);
        t.zero();
        return t;
    }
    static Tensor zeros_like(const Tensor& other) {
        Tensor t;
        t.resize(other.dims_vec());
        t.zero();
        return t;
    }
    static Tensor randn(std::initializer_list<Index> dims, Rng& rng, double stddev = 1.0) {
        Tensor t(dims);
        for (Index i = 0; i < t.size(); ++i) t.data_[i] = static_cast<S>(stddev * rng.normal());
        return t;
    }

    void resize(const std::vector<Index>& dims) {
        if (dims.size() > 4) throw ShapeError("tensor rank > 4");
        rank_ = static_cast<int>(dims.size());
        Index n = rank_ == 0 ? 0 : 1;
        for (int i = 0; i < 4; ++i) {
            d_[i] = i < rank_ ? dims[static_cast<std::size_t>(i)] : 1;
            if (i < rank_) {
                if (d_[i] < 0) throw ShapeError("negative tensor dimension");
                n *= d_[i];
            }
        }
        data_.assign(static_cast<std::size_t>(n), S{});
    }

    int rank() const { return rank_; }
    Index dim(int i) const { return d_[i]; }
    Index size() const { return static_cast<Index>(data_.size()); }
    bool empty() const { return data_.empty(); }

    std::vector<Index> dims_vec() const {
        return std::vector<Index>(d_.begin(), d_.begin() + rank_);
    }

    bool same_shape(const Tensor& o) const { return rank_ == o.rank_ && d_ == o.d_; }

    std::string shape_str() const {
        std::ostringstream os;
        os << '(';
        for (int i = 0; i < rank_; ++i) os << (i ? "," : "") << d_[i];
        os << ')';
        return os.str();
    }

    // Reinterpret shape in place; element count must match.
    Tensor& reshape(std::initializer_list<Index> dims) { return reshape(std::vector<Index>(dims)); }
    Tensor& reshape(const std::vector<Index>& v) {
        Index n = 1;
        for (Index d : v) n *= d;
        if (n != size()) throw ShapeError("reshape element count mismatch");
        rank_ = static_cast<int>(v.size());
        for (int i = 0; i < 4; ++i) d_[i] = i < rank_ ? v[static_cast<std::size_t>(i)] : 1;
        return *this;
    }

    S* data() { return data_.data(); }
    const S* data() const { return data_.data(); }

    S& operator[](Index i) { return data_[static_cast<std::size_t>(i)]; }
    const S& operator[](Index i) const { return data_[static_cast<std::size_t>(i)]; }

    S& operator()(Index n, Index c, Index h, Index w) {
        return data_[static_cast<std::size_t>(((n * d_[1] + c) * d_[2] + h) * d_[3] + w)];
    }
    const S& operator()(Index n, Index c, Index h, Index w) const {
        return data_[static_cast<std::size_t>(((n * d_[1] + c) * d_[2] + h) * d_[3] + w)];
    }
    S& operator()(Index i, Index j) { return data_[static_cast<std::size_t>(i * stride0() + j)]; }
    const S& operator()(Index i, Index j) const {
        return data_[static_cast<std::size_t>(i * stride0() + j)];
    }

    // Row-major matrix view of the flat buffer.
    MatMap mat(Index rows, Index cols) {
        if (rows * cols != size()) throw ShapeError("matrix view size mismatch " + shape_str());
        return MatMap(data(), rows, cols);
    }
    ConstMatMap mat(Index rows, Index cols) const {
        if (rows * cols != size()) throw ShapeError("matrix view size mismatch " + shape_str());
        return ConstMatMap(data(), rows, cols);
    }

    ArrMap arr() { return ArrMap(data(), size()); }
    ConstArrMap arr() const { return ConstArrMap(data(), size()); }

    void zero() { std::fill(data_.begin(), data_.end(), S{}); }
    void fill(S v) { std::fill(data_.begin(), data_.end(), v); }

    bool all_finite() const {
        for (const S& v : data_) {
            if (!std::isfinite(static_cast<double>(v))) return false;
        }
        return true;
    }

private:
    Index stride0() const {
        Index s = 1;
        for (int i = 1; i < rank_; ++i) s *= d_[i];
        return s;
    }

    std::array<Index, 4> d_{1, 1, 1, 1};
    int rank_ = 0;
    std::vector<S, TrackingAllocator<S>> data_;
};

template <class S>
Tensor<S> tensor_cast_copy(const Tensor<S>& t) {
    return t;
}

// Converts element type, e.g. double-precision test tensors into floats.
template <class To, class From>
Tensor<To> tensor_cast(const Tensor<From>& t) {
    Tensor<To> out;
    out.resize(t.dims_vec());
    for (Index i = 0; i < t.size(); ++i) out[i] = static_cast<To>(t[i]);
    return out;
}

}  // namespace histogen
