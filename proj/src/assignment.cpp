#include "mirg/assignment.hpp"

#include <limits>

namespace mirg {

namespace {

struct Solution {
    double cost = 0.0;
    std::vector<std::size_t> row_to_col;  // size = rows
    std::vector<double> u;                // row potentials, 1-based
    std::vector<double> v;                // column potentials, 1-based
};

// Shortest augmenting path Hungarian method for a rows <= cols cost matrix.
Solution hungarian(const std::vector<std::vector<double>>& cost) {
    const std::size_t n = cost.size();
    Solution s;
    if (n == 0) return s;
    const std::size_t m = cost.front().size();
    constexpr double kInf = std::numeric_limits<double>::infinity();

    std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
    std::vector<std::size_t> p(m + 1, 0), way(m + 1, 0);
    for (std::size_t i = 1; i <= n; ++i) {
        p[0] = i;
        std::size_t j0 = 0;
        std::vector<double> minv(m + 1, kInf);
        std::vector<bool> used(m + 1, false);
        do {
            used[j0] = true;
            const std::size_t i0 = p[j0];
            double delta = kInf;
            std::size_t j1 = 0;
            for (std::size_t j = 1; j <= m; ++j) {
                if (used[j]) continue;
                const double cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (std::size_t j = 0; j <= m; ++j) {
                if (used[j]) {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (p[j0] != 0);
        do {
            const std::size_t j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
        } while (j0 != 0);
    }

    s.row_to_col.assign(n, 0);
    for (std::size_t j = 1; j <= m; ++j) {
        if (p[j] != 0) s.row_to_col[p[j] - 1] = j - 1;
    }
    for (std::size_t i = 0; i < n; ++i) s.cost += cost[i][s.row_to_col[i]];
    s.u = std::move(u);
    s.v = std::move(v);
    return s;
}

// Best total weight for `rows` over the available real columns, each row also
// allowed to stay unassigned (padded with one zero-weight dummy per row).
double best_total(const WeightMatrix& w, const std::vector<std::size_t>& rows,
                  const std::vector<std::size_t>& cols) {
    if (rows.empty()) return 0.0;
    std::vector<std::vector<double>> cost(rows.size(), std::vector<double>(cols.size() + rows.size(), 0.0));
    for (std::size_t r = 0; r < rows.size(); ++r) {
        for (std::size_t c = 0; c < cols.size(); ++c) cost[r][c] = -w(rows[r], cols[c]);
    }
    return -hungarian(cost).cost;
}

}  // namespace

std::vector<std::optional<std::size_t>> max_weight_assignment(const WeightMatrix& weights, double tie_tolerance) {
    const std::size_t n = weights.rows();
    const std::size_t m = weights.cols();
    std::vector<std::optional<std::size_t>> result(n);
    if (n == 0) return result;

    std::vector<std::vector<double>> cost(n, std::vector<double>(m + n, 0.0));
    for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t c = 0; c < m; ++c) cost[r][c] = -weights(r, c);
    }
    const Solution full = hungarian(cost);
    const double optimum = -full.cost;

    // Every optimal assignment uses only edges that are tight under an
    // optimal dual, so non-tight edges never need a feasibility probe.
    constexpr double kTightSlack = 1e-9;
    std::vector<bool> col_used(m, false);
    double fixed = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
        std::vector<std::size_t> rest_rows;
        for (std::size_t k = r + 1; k < n; ++k) rest_rows.push_back(k);

        bool placed = false;
        for (std::size_t c = 0; c < m && !placed; ++c) {
            if (col_used[c]) continue;
            const double reduced = cost[r][c] - full.u[r + 1] - full.v[c + 1];
            if (reduced > kTightSlack) continue;
            std::vector<std::size_t> rest_cols;
            for (std::size_t k = 0; k < m; ++k) {
                if (!col_used[k] && k != c) rest_cols.push_back(k);
            }
            const double total = fixed + weights(r, c) + best_total(weights, rest_rows, rest_cols);
            if (total >= optimum - tie_tolerance) {
                result[r] = c;
                col_used[c] = true;
                fixed += weights(r, c);
                placed = true;
            }
        }
        // Otherwise the row stays unassigned, which must then be optimal.
    }
    return result;
}

}  // namespace mirg
