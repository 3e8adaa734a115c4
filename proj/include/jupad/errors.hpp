#pragma once

#include <stdexcept>
#include <string>

namespace jupad {

// Invalid parameters or run configuration. The CLI maps these to exit code 2.
struct config_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Malformed or out-of-contract input data: bad CSV cells, corrupt model
// files, samples outside their grid. The CLI maps these to exit code 2.
struct data_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Numerical failure during fitting. The CLI maps these to exit code 3.
struct numeric_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// A grid captures less than the required fraction of an atom's mass.
struct coverage_error : config_error {
    using config_error::config_error;
};

// No admissible index split: one side's total atom count stays below the rank.
struct split_error : config_error {
    using config_error::config_error;
};

// A mirror-descent objective became non-finite.
struct divergence_error : numeric_error {
    using numeric_error::numeric_error;
};

// The residual vanished before enough anchors were selected.
struct rank_deficiency_error : numeric_error {
    using numeric_error::numeric_error;
};

// The model assigns zero density to every candidate label.
struct zero_density_error : numeric_error {
    using numeric_error::numeric_error;
};

struct parse_error : data_error {
    using data_error::data_error;
};

struct model_format_error : data_error {
    using data_error::data_error;
};

} // namespace jupad
