#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "jupad/histogram.hpp"
#include "jupad/model.hpp"

namespace jupad {

struct FitConfig {
    int rank = 2;

    // Mirror-descent learning rates, pre-backtracking.
    double rate_coupling = 0.5; // eta_T
    double rate_weights = 0.5;  // eta_B
    double rate_mixture = 0.5;  // eta_L

    int stage1_max_iters = 2000;
    int stage3_max_sweeps = 200;
    int stage3_inner_iters = 100;
    double stage1_tol = 1e-6;
    double stage3_tol = 1e-6;
    int max_backtracks = 20;

    std::uint64_t seed = 0;
    int histogram_bins = 16;
    double coverage_threshold = 0.99;

    // Empty = automatic split (alternating assignment, then rebalancing).
    std::vector<int> split_first;
    std::vector<int> split_second;

    bool spa_on_transpose = false;

    // Pair fits share no state, so parallel execution reproduces the
    // sequential result; false forces sequential for strict determinism.
    bool parallel_pairs = false;

    void validate() const;
};

// One convergence-trace row: objective after an accepted iteration.
struct TraceRecord {
    int stage = 0;     // 1 or 3
    std::string unit;  // "pair(j,k)", "B[n]" or "lambda"
    long iteration = 0;
    double objective = 0.0;
};

// T_{j,k} = B_j diag(lambda) B_k': entries >= 0, vec sums to 1.
struct PairCoupling {
    int dim_first = 0;
    int dim_second = 0;
    Eigen::MatrixXd coupling; // L_j x L_k
};

// Block matrix assembled from pair couplings over an index split (S1, S2):
// block (a, b) is T_{l_a, l_b}, transposed when l_a > l_b.
struct AssembledMatrix {
    Eigen::MatrixXd matrix;
    std::vector<int> first_dims;  // S1, row blocks
    std::vector<int> second_dims; // S2, column blocks
    std::vector<int> row_offsets; // size |S1| + 1
    std::vector<int> col_offsets; // size |S2| + 1
};

struct SpaFactors {
    Eigen::MatrixXd w; // rows(T~) x F
    Eigen::MatrixXd h; // cols(T~) x F, T~ ~= w * h'
    std::vector<int> anchors;
};

struct FactorEstimate {
    std::vector<Eigen::MatrixXd> weights; // B_n per dimension, L_n x F
    Eigen::VectorXd mixture;              // lambda
    std::vector<int> degenerate_components;
};

struct Stage3Result {
    std::vector<Eigen::MatrixXd> weights;
    Eigen::VectorXd mixture;
    double objective = 0.0;
    int sweeps = 0;
};

struct FitOutput {
    JointModel model;
    std::vector<TraceRecord> trace;
    double objective = 0.0;
};

// One exponentiated-gradient step: x (x) exp(-rate * grad) followed by L1
// renormalization, over the whole matrix when per_column is false and per
// column otherwise. The gradient is shifted by its per-group minimum before
// exponentiation; the shift cancels in the renormalization.
Eigen::MatrixXd mirror_step(const Eigen::MatrixXd& x, const Eigen::MatrixXd& grad, double rate,
                            bool per_column);

// Gradient of || zhat - Dbar_j T Dbar_k' ||_F^2 with respect to T.
Eigen::MatrixXd stage1_gradient(const Eigen::MatrixXd& zhat, const Eigen::MatrixXd& dbar_j,
                                const Eigen::MatrixXd& dbar_k, const Eigen::MatrixXd& coupling);

// min_T || zhat - Dbar_j T Dbar_k' ||_F^2 over the matrix simplex by
// exponentiated-gradient mirror descent with accepted-step backtracking.
// The cost is nonincreasing over accepted iterations.
PairCoupling stage1_fit_pair(const PairwiseHistogram& zhat, const DiscretizedDictionary& dbar_j,
                             const DiscretizedDictionary& dbar_k, const FitConfig& config,
                             std::vector<TraceRecord>* trace = nullptr);

// Concatenates the couplings into the block matrix over the configured (or
// automatic) split. Throws split_error when no split gives both sides a
// total atom count >= rank.
AssembledMatrix assemble_coupling_matrix(const std::map<std::pair<int, int>, PairCoupling>& couplings,
                                         const std::vector<int>& atom_counts,
                                         const FitConfig& config);

// Successive projection: repeatedly select the column of maximum squared
// norm and project the residual against it; W keeps the selected original
// columns and H is solved column-wise by nonnegative least squares.
// With on_transpose the anchors are selected among rows instead.
SpaFactors spa_extract(const AssembledMatrix& assembled, int rank, bool on_transpose = false);

// Splits W and H back into per-dimension weight matrices and the mixture.
// W row-blocks give the S1 weights (columns L1-normalized); H' blocks equal
// diag(lambda) B_k', giving lambda (averaged across S2 blocks) and the S2
// weights. Components with vanishing mixture weight are kept with uniform
// columns and reported in degenerate_components.
FactorEstimate factor_split(const Eigen::MatrixXd& w, const Eigen::MatrixXd& h,
                            const AssembledMatrix& assembled);

// Alternating block mirror descent on the summed pairwise cost
// J = sum_{j<k} || zhat_{j,k} - Dbar_j B_j diag(lambda) B_k' Dbar_k' ||_F^2
// with per-column (per-entry for lambda) L1 renormalization after each
// multiplicative update. J is nonincreasing over accepted iterations.
Stage3Result stage3_refine(std::vector<Eigen::MatrixXd> weights, Eigen::VectorXd mixture,
                           const std::map<std::pair<int, int>, PairwiseHistogram>& pairs,
                           const std::vector<ModelDimension>& dims, const FitConfig& config,
                           std::vector<TraceRecord>* trace = nullptr);

// Full pipeline: histograms, per-pair couplings, assembly, SPA, factor
// split, joint refinement. Deterministic given config.seed.
FitOutput fit(const Dataset& dataset, const std::vector<Dictionary>& dictionaries,
              const FitConfig& config);

// J evaluated at the given factors; shared by the fit stages and the CLI.
double pairwise_objective(const std::vector<Eigen::MatrixXd>& weights,
                          const Eigen::VectorXd& mixture,
                          const std::map<std::pair<int, int>, PairwiseHistogram>& pairs,
                          const std::vector<ModelDimension>& dims);

// Gradients of J with respect to one weight matrix and to the mixture; the
// same code paths drive the refinement updates.
Eigen::MatrixXd objective_gradient_weights(const std::vector<Eigen::MatrixXd>& weights,
                                           const Eigen::VectorXd& mixture,
                                           const std::map<std::pair<int, int>, PairwiseHistogram>& pairs,
                                           const std::vector<ModelDimension>& dims, int dim);

Eigen::VectorXd objective_gradient_mixture(const std::vector<Eigen::MatrixXd>& weights,
                                           const Eigen::VectorXd& mixture,
                                           const std::map<std::pair<int, int>, PairwiseHistogram>& pairs,
                                           const std::vector<ModelDimension>& dims);

} // namespace jupad
