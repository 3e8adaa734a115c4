#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "jupad/eval.hpp"
#include "jupad/histogram.hpp"
#include "jupad/model.hpp"
#include "jupad/solver.hpp"
#include "jupad/synth.hpp"

namespace jupad {

// Per-column affine ingestion transform: stored value = (raw - offset) * scale.
struct ColumnTransform {
    double offset = 0.0;
    double scale = 1.0;

    double apply(double raw) const { return (raw - offset) * scale; }
    double invert(double stored) const { return stored / scale + offset; }
    bool is_identity() const { return offset == 0.0 && scale == 1.0; }
};

struct ColumnSpec {
    std::string name;
    ColumnMeta meta;
    bool normalize_unit = false; // rescale to [0, 1] on load (continuous only)
};

// Dataset plus the ingestion metadata needed to interpret new files the same
// way: column names, discrete state mappings, normalization transforms.
struct CsvDataset {
    Dataset data;
    std::vector<std::string> column_names;
    std::vector<std::map<std::string, int>> state_maps; // discrete columns
    std::vector<ColumnTransform> transforms;

    CsvDataset(Dataset d, std::vector<std::string> names,
               std::vector<std::map<std::string, int>> states,
               std::vector<ColumnTransform> trans)
        : data(std::move(d)), column_names(std::move(names)), state_maps(std::move(states)),
          transforms(std::move(trans)) {}
};

// Reads a headered CSV. Columns are selected and typed by the specs;
// discrete values (numeric or not) are mapped to 0-based state indices in
// first-appearance order unless the spec declares num_states, in which case
// values must already be integers in range. Throws parse_error with row and
// column on bad cells.
CsvDataset load_csv(const std::string& path, const std::vector<ColumnSpec>& specs,
                    std::optional<std::string> label_column = std::nullopt);

// Ingestion metadata carried alongside a persisted model.
struct ModelMetadata {
    std::uint64_t seed = 0;
    std::string config_hash;
    std::vector<std::string> column_names;                       // may be empty
    std::vector<std::map<std::string, int>> state_maps;          // may be empty
    std::vector<ColumnTransform> transforms;                     // may be empty
    std::optional<int> label_dim;
};

// Versioned text model file; numeric fields round-trip exactly.
void save_model(const JointModel& model, const std::string& path,
                const ModelMetadata& metadata = {});

struct LoadedModel {
    JointModel model;
    ModelMetadata metadata;
};

// Throws model_format_error on version mismatch, truncation or invariant
// violations beyond 1e-6.
LoadedModel load_model(const std::string& path);

// One dictionary recipe from the run configuration.
struct DictionaryRecipe {
    enum class Kind { kIdentity, kGrid, kNamedPreset };
    Kind kind = Kind::kGrid;

    // kGrid
    std::vector<GridPresetFamily> families;
    int uniform_count = 0;
    double spacing = 1.0;
    std::optional<std::pair<double, double>> range; // absent = data range

    // kNamedPreset: "seeds", "wifi" or "kth"
    std::string preset_name;

    Dictionary build(double data_low, double data_high, int num_states) const;
};

struct RunConfig {
    std::string dataset_path;
    std::vector<ColumnSpec> columns;
    std::optional<std::string> label_column;
    std::vector<DictionaryRecipe> dictionaries; // one per column
    FitConfig fit;
    std::string model_output;
    std::string trace_output; // empty = skip

    static RunConfig from_file(const std::string& path);
    std::string canonical_hash() const;
};

// Subcommands: fit, eval-density, classify, sample, synth, inspect.
// Exit codes: 0 success, 1 usage, 2 data/config error, 3 numeric failure.
int cli_main(int argc, const char* const* argv);

} // namespace jupad
