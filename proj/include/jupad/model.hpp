#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "jupad/atoms.hpp"

namespace jupad {

// Dictionary, grid and interval-mass matrix for one dimension.
struct ModelDimension {
    Dictionary dictionary;
    Grid grid;
    DiscretizedDictionary discretized;

    ModelDimension(Dictionary dict, Grid g, double coverage_threshold = 0.99)
        : dictionary(std::move(dict)),
          grid(std::move(g)),
          discretized(discretize(dictionary, grid, coverage_threshold)) {}
};

// 1D marginal of a joint model: an atom mixture with weights B_n * lambda.
class Marginal1D {
  public:
    Marginal1D(Dictionary dictionary, DiscretizedDictionary discretized,
               Eigen::VectorXd atom_weights);

    // Density at x for continuous dimensions, mass for discrete ones.
    double density(double x) const;
    // Per-state mass vector; discrete dimensions only.
    Eigen::VectorXd pmf() const;
    // Per-bin mass on the dimension's grid.
    const Eigen::VectorXd& discretized() const { return bin_masses_; }
    const Eigen::VectorXd& atom_weights() const { return atom_weights_; }

  private:
    Dictionary dictionary_;
    Eigen::VectorXd atom_weights_;
    Eigen::VectorXd bin_masses_;
};

struct MapClassification {
    int label = 0;
    Eigen::VectorXd posterior; // normalized over labels; sums to 1
};

// Mixture of product densities whose mode factors are convex combinations of
// dictionary atoms: f(x) = sum_r lambda[r] * prod_n (D_n B_n[:,r])(x_n).
// Immutable after construction; evaluation and sampling are pure.
class JointModel {
  public:
    // Validates the simplex invariants (entries >= -tolerance, column sums
    // within tolerance of 1), clamps tiny negatives and renormalizes exactly.
    JointModel(std::vector<ModelDimension> dims, std::vector<Eigen::MatrixXd> weights,
               Eigen::VectorXd mixture, double tolerance = 1e-9);

    int num_dims() const { return static_cast<int>(dims_.size()); }
    int rank() const { return static_cast<int>(mixture_.size()); }

    const ModelDimension& dim(int n) const { return dims_.at(static_cast<std::size_t>(n)); }
    const Eigen::MatrixXd& weights(int n) const { return weights_.at(static_cast<std::size_t>(n)); }
    const std::vector<Eigen::MatrixXd>& weights() const { return weights_; }
    const Eigen::VectorXd& mixture() const { return mixture_; }

    // Discretized mode factor Dbar_n * B_n (num_bins x rank, column-stochastic).
    Eigen::MatrixXd mode_factor(int n) const;

    // Joint density at a length-N point: densities for continuous dimensions
    // multiplied with masses for discrete ones.
    double pdf(const Eigen::VectorXd& x) const;

    // Dbar_j B_j diag(lambda) B_k' Dbar_k'; entries >= 0 and sum to 1.
    Eigen::MatrixXd pairwise_marginal(int j, int k) const;

    Marginal1D marginal(int n) const;

    // Ancestral sampling: component ~ lambda, atom ~ B_n[:,r], value ~ atom.
    // Deterministic given the seed. Returns count x N.
    Eigen::MatrixXd sample(long count, std::uint64_t seed) const;

    // MAP label for the features (the entry at label_dim is ignored).
    // Ties break to the lowest label index. Throws zero_density_error when
    // every label has zero joint density.
    MapClassification map_classify(int label_dim, const Eigen::VectorXd& x) const;

  private:
    std::vector<ModelDimension> dims_;
    std::vector<Eigen::MatrixXd> weights_; // B_n: L_n x F
    Eigen::VectorXd mixture_;              // lambda: F
};

} // namespace jupad
