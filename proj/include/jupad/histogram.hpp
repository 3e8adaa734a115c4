#pragma once

#include <map>
#include <optional>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "jupad/atoms.hpp"

namespace jupad {

struct ColumnMeta {
    enum class Kind { kContinuous, kDiscrete };
    Kind kind = Kind::kContinuous;
    int num_states = 0; // discrete columns only

    static ColumnMeta continuous() { return {Kind::kContinuous, 0}; }
    static ColumnMeta discrete(int num_states) { return {Kind::kDiscrete, num_states}; }
    bool is_discrete() const { return kind == Kind::kDiscrete; }
};

// Immutable sample matrix with per-column metadata. Discrete columns hold
// integer state indices in [0, num_states).
class Dataset {
  public:
    Dataset(Eigen::MatrixXd samples, std::vector<ColumnMeta> columns,
            std::optional<int> label_column = std::nullopt);

    long num_rows() const { return samples_.rows(); }
    int num_cols() const { return static_cast<int>(samples_.cols()); }
    double value(long row, int col) const { return samples_(row, col); }
    const Eigen::MatrixXd& samples() const { return samples_; }
    const ColumnMeta& column(int n) const { return columns_.at(static_cast<std::size_t>(n)); }
    const std::vector<ColumnMeta>& columns() const { return columns_; }
    std::optional<int> label_column() const { return label_column_; }
    int label_state(long row) const;

    // Same metadata, subset of rows.
    Dataset take_rows(const std::vector<long>& rows) const;

  private:
    Eigen::MatrixXd samples_;
    std::vector<ColumnMeta> columns_;
    std::optional<int> label_column_;
};

// Empirical 2D marginal estimate for dimension pair (dim_first, dim_second).
// zhat = counts / num_samples; entries sum to 1 up to rounding.
struct PairwiseHistogram {
    int dim_first = 0;
    int dim_second = 0;
    Eigen::MatrixXd counts;
    Eigen::MatrixXd zhat;
    long num_samples = 0;
};

// Equal-width edges spanning the column's [min, max], widened by 1e-9 at both
// ends so the extremes fall inside bins. Discrete columns get one bin per
// state. Throws data_error on a constant continuous column.
Grid propose_grid(const Dataset& dataset, int dim, int bins);

// propose_grid for every dimension at once.
std::vector<Grid> propose_grids(const Dataset& dataset, int continuous_bins);

Eigen::VectorXd histogram_1d(const Dataset& dataset, const Grid& grid, int dim);

PairwiseHistogram estimate_pairwise(const Dataset& dataset, const std::vector<Grid>& grids,
                                    int dim_j, int dim_k);

// All N(N-1)/2 pairs keyed (j, k) with j < k.
std::map<std::pair<int, int>, PairwiseHistogram>
estimate_all_pairs(const Dataset& dataset, const std::vector<Grid>& grids);

} // namespace jupad
