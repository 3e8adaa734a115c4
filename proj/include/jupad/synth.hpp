#pragma once

#include <cstdint>
#include <vector>

#include "jupad/model.hpp"
#include "jupad/solver.hpp"

namespace jupad {

// Ground-truth recipe for one dimension: each mode-factor column is a
// mixture of atoms_per_component freshly drawn atoms of the family, or a
// dense simplex column for discrete dimensions.
struct DimensionRecipe {
    enum class Family { kLaplacianMix, kGaussianMix, kDiscreteUniform };
    Family family = Family::kGaussianMix;
    int num_states = 0; // discrete dimensions only
};

struct SynthSpec {
    int rank = 2;
    std::vector<DimensionRecipe> dims;

    double mean_low = -5.0;
    double mean_high = 5.0;
    // Laplacian scale / Gaussian variance range.
    double shape_low = 1.0;
    double shape_high = 2.0;

    int atoms_per_component = 5;
    int grid_bins = 16;
    std::uint64_t seed = 0;

    void validate() const;
};

// Draws a JointModel whose per-dimension dictionary is exactly its
// rank * atoms_per_component drawn atoms; discrete dimensions get identity
// dictionaries. A bijection from (spec, seed) to model parameters.
JointModel generate_ground_truth(const SynthSpec& spec);

struct DMetric {
    double value = 0.0;   // mean |log(f_hat / f_true)|; +inf when zero_count > 0
    long zero_count = 0;  // test points where the estimate vanished
};

// Mean absolute log likelihood ratio over the given test points (rows).
DMetric d_metric(const JointModel& estimated, const JointModel& truth,
                 const Eigen::MatrixXd& test_points);

struct ExperimentConfig {
    SynthSpec spec;
    std::vector<long> sample_sizes;
    int trials = 5;
    long test_samples = 1000;
    FitConfig fit;

    // kPreset fits with a grid dictionary built over the sample range
    // (family taken from the recipe); kOracle fits with the true atoms.
    enum class DictionaryMode { kPreset, kOracle };
    DictionaryMode mode = DictionaryMode::kPreset;
    double preset_spacing = 1.0;
    double preset_param = 1.0; // variance / scale of preset atoms
    int preset_uniforms = 0;

    // With timing off the wall-time column is written as 0 so repeated runs
    // are byte-identical.
    bool timing = true;
};

struct ExperimentRow {
    long sample_size = 0;
    int trial = 0;
    double d_value = 0.0;
    long d_zero_count = 0;
    double seconds = 0.0;
};

struct ExperimentSummaryRow {
    long sample_size = 0;
    double mean_d = 0.0;
    double std_d = 0.0;
    double seconds = 0.0; // total over trials
};

struct ExperimentTable {
    std::vector<ExperimentRow> rows;
    std::vector<ExperimentSummaryRow> summary;
};

// Per sample size and trial: draw training data from the ground truth, fit,
// score the D metric on shared held-out test points.
ExperimentTable run_experiment(const ExperimentConfig& config);

} // namespace jupad
