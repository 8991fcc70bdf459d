#pragma once

#include <cstddef>
#include <vector>

namespace recbench {

// Row-major dense matrix of doubles. Deliberately tiny; the autodiff Tensor
// is a separate type with its own invariants.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

    double& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

    std::vector<double> row(std::size_t r) const {
        return std::vector<double>(data.begin() + static_cast<std::ptrdiff_t>(r * cols),
                                   data.begin() + static_cast<std::ptrdiff_t>((r + 1) * cols));
    }

    bool operator==(const Matrix& o) const = default;
};

}  // namespace recbench
