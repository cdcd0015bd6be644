#pragma once

#include <Eigen/Core>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <vector>

#include "ecgdelin/util.hpp"

namespace ecg::nn {

template <typename S>
using RowMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using ColVec = Eigen::Matrix<S, Eigen::Dynamic, 1>;

/// 64-byte-aligned allocator. Keeping every tensor buffer on the same
/// alignment makes Eigen's vectorized loop peeling independent of heap
/// addresses, so repeated runs are bitwise identical.
template <typename S>
struct AlignedAllocator {
    using value_type = S;
    static constexpr std::align_val_t kAlign{64};

    AlignedAllocator() = default;
    template <typename U>
    AlignedAllocator(const AlignedAllocator<U>&) {}

    S* allocate(std::size_t n) { return static_cast<S*>(::operator new(n * sizeof(S), kAlign)); }
    void deallocate(S* p, std::size_t) noexcept { ::operator delete(p, kAlign); }
    bool operator==(const AlignedAllocator&) const { return true; }
    bool operator!=(const AlignedAllocator&) const { return false; }
};

template <typename S>
using AlignedBuffer = std::vector<S, AlignedAllocator<S>>;

/// Dense tensor: a shape list over a contiguous row-major buffer. Rank 1 and 2
/// are used throughout; conv kernels are rank 3 and map to matrices by folding
/// all leading dimensions into rows.
template <typename S>
struct Tensor {
    std::vector<std::size_t> shape;
    AlignedBuffer<S> data;

    Tensor() = default;
    explicit Tensor(std::vector<std::size_t> dims) : shape(std::move(dims)) {
        data.assign(numel_of(shape), S(0));
    }

    static std::size_t numel_of(const std::vector<std::size_t>& dims) {
        return std::accumulate(dims.begin(), dims.end(), std::size_t{1}, std::multiplies<>());
    }
    std::size_t numel() const { return data.size(); }

    std::size_t rows() const { return shape.empty() ? 0 : shape.front(); }
    std::size_t cols() const {
        std::size_t r = rows();
        return r == 0 ? 0 : numel() / r;
    }

    S& operator()(std::size_t r, std::size_t c) { return data[r * cols() + c]; }
    const S& operator()(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }

    Eigen::Map<RowMat<S>> map() {
        return {data.data(), static_cast<Eigen::Index>(rows()), static_cast<Eigen::Index>(cols())};
    }
    Eigen::Map<const RowMat<S>> map() const {
        return {data.data(), static_cast<Eigen::Index>(rows()), static_cast<Eigen::Index>(cols())};
    }
    /// Maps the trailing dimensions folded differently: rows x cols must
    /// equal numel().
    Eigen::Map<const RowMat<S>> map_as(std::size_t r, std::size_t c) const {
        return {data.data(), static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)};
    }
    Eigen::Map<RowMat<S>> map_as(std::size_t r, std::size_t c) {
        return {data.data(), static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)};
    }

    void set_zero() { std::fill(data.begin(), data.end(), S(0)); }

    bool all_finite() const {
        for (S v : data) {
            if (!std::isfinite(static_cast<double>(v))) return false;
        }
        return true;
    }
};

}  // namespace ecg::nn
