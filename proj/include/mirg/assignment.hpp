#pragma once

#include <cstddef>
#include <optional>
#include <vector>

namespace mirg {

// Dense row-major weight matrix.
class WeightMatrix {
public:
    WeightMatrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

private:
    std::size_t rows_;
    std::size_t cols_;
    std::vector<double> data_;
};

// Maximum-weight assignment where every row may also stay unassigned at
// weight zero. Among all optimal assignments (totals within `tie_tolerance`)
// the lexicographically smallest one is returned, comparing rows in order and
// ranking "unassigned" after every column. Entry r is the column for row r.
std::vector<std::optional<std::size_t>> max_weight_assignment(const WeightMatrix& weights,
                                                              double tie_tolerance = 1e-12);

}  // namespace mirg
