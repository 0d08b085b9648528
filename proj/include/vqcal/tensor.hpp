#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace vqcal {

/// Dense row-major matrix of 32-bit floats.
struct Tensor2D {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<float> data;

    Tensor2D() = default;
    Tensor2D(std::size_t r, std::size_t c, float fill = 0.0f) : rows(r), cols(c), data(r * c, fill) {}
    Tensor2D(std::size_t r, std::size_t c, std::vector<float> values);

    float& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    float operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

    std::span<float> row(std::size_t r) { return {data.data() + r * cols, cols}; }
    std::span<const float> row(std::size_t r) const { return {data.data() + r * cols, cols}; }

    bool empty() const { return data.empty(); }
    bool all_finite() const;

    /// Rows gathered in the given order.
    Tensor2D gather_rows(std::span<const std::size_t> indices) const;

    friend bool operator==(const Tensor2D&, const Tensor2D&) = default;
};

}  // namespace vqcal
