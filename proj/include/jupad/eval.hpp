#pragma once

#include <cstdint>
#include <vector>

#include "jupad/histogram.hpp"
#include "jupad/model.hpp"
#include "jupad/solver.hpp"

namespace jupad {

struct SplitResult {
    Dataset train;
    Dataset validation;
    Dataset test;
};

// Seeded shuffle into disjoint, exhaustive parts; stratified by label when
// the dataset has a label column. Fractions must be positive and sum to 1.
// Throws data_error when some class has fewer rows than parts.
SplitResult split(const Dataset& dataset, double train_fraction, double validation_fraction,
                  double test_fraction, std::uint64_t seed);

struct ClassificationScore {
    double accuracy = 0.0;
    double error_fraction = 0.0;        // wrong label, nonzero density
    double zero_density_fraction = 0.0; // counted as errors, reported apart
    long rows = 0;
};

ClassificationScore classification_accuracy(const JointModel& model, const Dataset& test,
                                            int label_dim);

// Fits each candidate rank on train and returns the one with the best MAP
// accuracy on validation (ties to the smallest rank). Candidates that fail
// to fit are skipped; throws numeric_error when all of them fail.
int select_rank(const Dataset& train, const Dataset& validation,
                const std::vector<Dictionary>& dictionaries, const std::vector<int>& candidates,
                const FitConfig& config);

} // namespace jupad
