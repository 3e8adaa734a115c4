#include "jupad/histogram.hpp"

#include <cmath>
#include <string>

#include "jupad/errors.hpp"

namespace jupad {

Dataset::Dataset(Eigen::MatrixXd samples, std::vector<ColumnMeta> columns,
                 std::optional<int> label_column)
    : samples_(std::move(samples)), columns_(std::move(columns)), label_column_(label_column) {
    if (samples_.rows() < 1) {
        throw data_error("dataset has no rows");
    }
    if (static_cast<std::size_t>(samples_.cols()) != columns_.size()) {
        throw data_error("dataset column metadata does not match the sample matrix");
    }
    if (label_column_ && (*label_column_ < 0 || *label_column_ >= num_cols() ||
                          !columns_[static_cast<std::size_t>(*label_column_)].is_discrete())) {
        throw data_error("label column must be a discrete column of the dataset");
    }
    for (int n = 0; n < num_cols(); ++n) {
        const ColumnMeta& meta = columns_[static_cast<std::size_t>(n)];
        if (!meta.is_discrete()) {
            continue;
        }
        for (long row = 0; row < num_rows(); ++row) {
            const double v = samples_(row, n);
            if (std::nearbyint(v) != v || v < 0.0 || v >= static_cast<double>(meta.num_states)) {
                throw data_error("discrete column " + std::to_string(n) + " holds " +
                                 std::to_string(v) + " at row " + std::to_string(row) +
                                 ", outside [0, " + std::to_string(meta.num_states) + ")");
            }
        }
    }
}

int Dataset::label_state(long row) const {
    if (!label_column_) {
        throw data_error("dataset has no label column");
    }
    return static_cast<int>(samples_(row, *label_column_));
}

Dataset Dataset::take_rows(const std::vector<long>& rows) const {
    Eigen::MatrixXd subset(static_cast<long>(rows.size()), samples_.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        subset.row(static_cast<long>(i)) = samples_.row(rows[i]);
    }
    return Dataset(std::move(subset), columns_, label_column_);
}

Grid propose_grid(const Dataset& dataset, int dim, int bins) {
    if (dim < 0 || dim >= dataset.num_cols()) {
        throw config_error("propose_grid: dimension out of range");
    }
    const ColumnMeta& meta = dataset.column(dim);
    if (meta.is_discrete()) {
        return Grid::discrete(meta.num_states);
    }
    if (bins < 2) {
        throw config_error("continuous dimensions need at least 2 bins");
    }
    const double lo = dataset.samples().col(dim).minCoeff();
    const double hi = dataset.samples().col(dim).maxCoeff();
    if (!(hi > lo)) {
        throw data_error("column " + std::to_string(dim) +
                         " is constant; cannot propose a multi-bin grid");
    }
    const double a = lo - 1e-9;
    const double b = hi + 1e-9;
    std::vector<double> edges(static_cast<std::size_t>(bins) + 1);
    for (int i = 0; i <= bins; ++i) {
        edges[static_cast<std::size_t>(i)] =
            a + (b - a) * static_cast<double>(i) / static_cast<double>(bins);
    }
    edges.front() = a;
    edges.back() = b;
    return Grid::continuous(std::move(edges));
}

std::vector<Grid> propose_grids(const Dataset& dataset, int continuous_bins) {
    std::vector<Grid> grids;
    grids.reserve(static_cast<std::size_t>(dataset.num_cols()));
    for (int n = 0; n < dataset.num_cols(); ++n) {
        grids.push_back(propose_grid(dataset, n, continuous_bins));
    }
    return grids;
}

Eigen::VectorXd histogram_1d(const Dataset& dataset, const Grid& grid, int dim) {
    Eigen::VectorXd counts = Eigen::VectorXd::Zero(grid.num_bins());
    for (long row = 0; row < dataset.num_rows(); ++row) {
        counts[grid.bin_of(dataset.value(row, dim))] += 1.0;
    }
    return counts;
}

PairwiseHistogram estimate_pairwise(const Dataset& dataset, const std::vector<Grid>& grids,
                                    int dim_j, int dim_k) {
    if (dim_j == dim_k) {
        throw config_error("pairwise histogram requires two distinct dimensions");
    }
    if (dim_j < 0 || dim_k < 0 || dim_j >= dataset.num_cols() || dim_k >= dataset.num_cols() ||
        grids.size() != static_cast<std::size_t>(dataset.num_cols())) {
        throw config_error("pairwise histogram: dimension or grid set out of range");
    }
    const Grid& grid_j = grids[static_cast<std::size_t>(dim_j)];
    const Grid& grid_k = grids[static_cast<std::size_t>(dim_k)];
    PairwiseHistogram hist;
    hist.dim_first = dim_j;
    hist.dim_second = dim_k;
    hist.num_samples = dataset.num_rows();
    hist.counts = Eigen::MatrixXd::Zero(grid_j.num_bins(), grid_k.num_bins());
    for (long row = 0; row < dataset.num_rows(); ++row) {
        const int bj = grid_j.bin_of(dataset.value(row, dim_j));
        const int bk = grid_k.bin_of(dataset.value(row, dim_k));
        hist.counts(bj, bk) += 1.0;
    }
    hist.zhat = hist.counts / static_cast<double>(hist.num_samples);
    return hist;
}

std::map<std::pair<int, int>, PairwiseHistogram>
estimate_all_pairs(const Dataset& dataset, const std::vector<Grid>& grids) {
    std::map<std::pair<int, int>, PairwiseHistogram> pairs;
    for (int j = 0; j < dataset.num_cols(); ++j) {
        for (int k = j + 1; k < dataset.num_cols(); ++k) {
            pairs.emplace(std::make_pair(j, k), estimate_pairwise(dataset, grids, j, k));
        }
    }
    return pairs;
}

} // namespace jupad
