#include "vqcal/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace vqcal {

Tensor2D::Tensor2D(std::size_t r, std::size_t c, std::vector<float> values)
    : rows(r), cols(c), data(std::move(values)) {
    if (data.size() != rows * cols) {
        throw std::invalid_argument("Tensor2D: data length does not match shape");
    }
}

bool Tensor2D::all_finite() const {
    for (float v : data) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

Tensor2D Tensor2D::gather_rows(std::span<const std::size_t> indices) const {
    Tensor2D out(indices.size(), cols);
    for (std::size_t i = 0; i < indices.size(); ++i) {
        const auto src = row(indices[i]);
        std::copy(src.begin(), src.end(), out.row(i).begin());
    }
    return out;
}

}  // namespace vqcal
