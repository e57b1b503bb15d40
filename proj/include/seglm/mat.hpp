#pragma once

#include <atomic>
#include <cassert>
#include <cstdint>
#include <cstring>
#include <vector>

namespace seglm {

using idx = std::int64_t;

// Process-wide accounting of matrix buffer bytes. The scaling benchmark
// resets the peak around each measured run to report per-configuration
// high-water memory.
struct MemStats {
    static std::atomic<std::size_t> current;
    static std::atomic<std::size_t> peak;

    static void add(std::size_t bytes) {
        std::size_t now = current.fetch_add(bytes, std::memory_order_relaxed) + bytes;
        std::size_t old = peak.load(std::memory_order_relaxed);
        while (old < now && !peak.compare_exchange_weak(old, now, std::memory_order_relaxed)) {
        }
    }
    static void sub(std::size_t bytes) { current.fetch_sub(bytes, std::memory_order_relaxed); }
    static void reset_peak() { peak.store(current.load(std::memory_order_relaxed)); }
};

inline std::atomic<std::size_t> MemStats::current{0};
inline std::atomic<std::size_t> MemStats::peak{0};

template <typename T>
struct TrackingAlloc {
    using value_type = T;
    TrackingAlloc() noexcept = default;
    template <typename U>
    TrackingAlloc(const TrackingAlloc<U>&) noexcept {}

    T* allocate(std::size_t count) {
        MemStats::add(count * sizeof(T));
        return static_cast<T*>(::operator new(count * sizeof(T)));
    }
    void deallocate(T* p, std::size_t count) noexcept {
        MemStats::sub(count * sizeof(T));
        ::operator delete(p);
    }
    bool operator==(const TrackingAlloc&) const noexcept { return true; }
};

// Dense row-major matrix. Value semantics, zero-initialized on construction.
template <typename T>
class Mat {
public:
    Mat() = default;
    Mat(idx rows, idx cols) : rows_(rows), cols_(cols), data_(static_cast<std::size_t>(rows * cols)) {
        assert(rows >= 0 && cols >= 0);
    }

    idx rows() const { return rows_; }
    idx cols() const { return cols_; }
    idx size() const { return rows_ * cols_; }
    bool empty() const { return data_.empty(); }

    T& operator()(idx i, idx j) {
        assert(i >= 0 && i < rows_ && j >= 0 && j < cols_);
        return data_[static_cast<std::size_t>(i * cols_ + j)];
    }
    T operator()(idx i, idx j) const {
        assert(i >= 0 && i < rows_ && j >= 0 && j < cols_);
        return data_[static_cast<std::size_t>(i * cols_ + j)];
    }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    T* row(idx i) { return data_.data() + i * cols_; }
    const T* row(idx i) const { return data_.data() + i * cols_; }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }
    void zero() { fill(T(0)); }

    bool same_shape(const Mat& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

private:
    idx rows_ = 0;
    idx cols_ = 0;
    std::vector<T, TrackingAlloc<T>> data_;
};

using MatF = Mat<float>;
using MatD = Mat<double>;

}  // namespace seglm
