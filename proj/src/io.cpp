#include "jupad/io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string_view>

#include <CLI11.hpp>
#include <json.hpp>

#include "jupad/errors.hpp"

namespace jupad {

namespace {

using nlohmann::json;

std::string trim(std::string_view s) {
    std::size_t first = 0;
    std::size_t last = s.size();
    while (first < last && std::isspace(static_cast<unsigned char>(s[first]))) ++first;
    while (last > first && std::isspace(static_cast<unsigned char>(s[last - 1]))) --last;
    return std::string(s.substr(first, last - first));
}

std::vector<std::string> split_line(const std::string& line) {
    std::vector<std::string> fields;
    std::size_t start = 0;
    for (;;) {
        const std::size_t comma = line.find(',', start);
        if (comma == std::string::npos) {
            fields.push_back(trim(std::string_view(line).substr(start)));
            return fields;
        }
        fields.push_back(trim(std::string_view(line).substr(start, comma - start)));
        start = comma + 1;
    }
}

double parse_double(const std::string& cell, long row, const std::string& column) {
    double value = 0.0;
    const char* begin = cell.data();
    const char* end = cell.data() + cell.size();
    const auto result = std::from_chars(begin, end, value);
    if (result.ec != std::errc{} || result.ptr != end || cell.empty())
        throw parse_error("row " + std::to_string(row) + ", column '" + column + "': '" + cell +
                          "' is not numeric");
    if (!std::isfinite(value))
        throw parse_error("row " + std::to_string(row) + ", column '" + column +
                          "': non-finite value");
    return value;
}

std::vector<std::string> read_lines(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw data_error("cannot open '" + path + "'");
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        lines.push_back(line);
    }
    while (!lines.empty() && trim(lines.back()).empty()) lines.pop_back();
    return lines;
}

std::string format_full(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

} // namespace

CsvDataset load_csv(const std::string& path, const std::vector<ColumnSpec>& specs,
                    std::optional<std::string> label_column) {
    if (specs.empty()) throw config_error("at least one column spec is required");
    const auto lines = read_lines(path);
    if (lines.size() < 2) throw parse_error("'" + path + "' needs a header and at least one row");

    const auto header = split_line(lines[0]);
    std::vector<Eigen::Index> file_column(specs.size());
    for (std::size_t c = 0; c < specs.size(); ++c) {
        const auto it = std::find(header.begin(), header.end(), specs[c].name);
        if (it == header.end())
            throw config_error("column '" + specs[c].name + "' is not in the header of '" + path +
                               "'");
        file_column[c] = std::distance(header.begin(), it);
        if (specs[c].normalize_unit && specs[c].meta.is_discrete())
            throw config_error("column '" + specs[c].name + "': only continuous columns normalize");
    }

    std::optional<int> label_index;
    if (label_column) {
        for (std::size_t c = 0; c < specs.size(); ++c)
            if (specs[c].name == *label_column) label_index = static_cast<int>(c);
        if (!label_index)
            throw config_error("label column '" + *label_column + "' is not among the columns");
        if (!specs[static_cast<std::size_t>(*label_index)].meta.is_discrete())
            throw config_error("label column '" + *label_column + "' must be discrete");
    }

    const long num_rows = static_cast<long>(lines.size()) - 1;
    Eigen::MatrixXd data(num_rows, static_cast<Eigen::Index>(specs.size()));
    std::vector<std::map<std::string, int>> state_maps(specs.size());
    std::vector<ColumnMeta> metas;
    metas.reserve(specs.size());
    for (const auto& spec : specs) metas.push_back(spec.meta);

    for (long r = 0; r < num_rows; ++r) {
        const auto fields = split_line(lines[static_cast<std::size_t>(r) + 1]);
        if (fields.size() != header.size())
            throw parse_error("row " + std::to_string(r + 2) + " has " +
                              std::to_string(fields.size()) + " fields, expected " +
                              std::to_string(header.size()));
        for (std::size_t c = 0; c < specs.size(); ++c) {
            const std::string& cell = fields[static_cast<std::size_t>(file_column[c])];
            const auto& spec = specs[c];
            if (!spec.meta.is_discrete()) {
                data(r, static_cast<Eigen::Index>(c)) = parse_double(cell, r + 2, spec.name);
            } else if (spec.meta.num_states > 0) {
                const double value = parse_double(cell, r + 2, spec.name);
                if (value != std::floor(value) || value < 0.0 || value >= spec.meta.num_states)
                    throw data_error("row " + std::to_string(r + 2) + ", column '" + spec.name +
                                     "': state " + cell + " is outside [0, " +
                                     std::to_string(spec.meta.num_states) + ")");
                data(r, static_cast<Eigen::Index>(c)) = value;
            } else {
                auto& states = state_maps[c];
                const auto [it, inserted] = states.emplace(cell, static_cast<int>(states.size()));
                data(r, static_cast<Eigen::Index>(c)) = it->second;
            }
        }
    }

    std::vector<ColumnTransform> transforms(specs.size());
    for (std::size_t c = 0; c < specs.size(); ++c) {
        if (metas[c].is_discrete()) {
            if (metas[c].num_states == 0)
                metas[c].num_states = static_cast<int>(state_maps[c].size());
            continue;
        }
        if (!specs[c].normalize_unit) continue;
        const auto column = data.col(static_cast<Eigen::Index>(c));
        const double low = column.minCoeff();
        const double high = column.maxCoeff();
        if (!(high > low))
            throw data_error("column '" + specs[c].name + "' is constant; cannot normalize");
        transforms[c] = {low, 1.0 / (high - low)};
        data.col(static_cast<Eigen::Index>(c)) =
            (column.array() - low) * transforms[c].scale;
    }

    std::vector<std::string> names;
    names.reserve(specs.size());
    for (const auto& spec : specs) names.push_back(spec.name);
    return {Dataset(std::move(data), std::move(metas), label_index), std::move(names),
            std::move(state_maps), std::move(transforms)};
}

namespace {

constexpr int kModelVersion = 1;
constexpr const char* kModelFormat = "jupad-model";

json atom_to_json(const Atom& atom) {
    return std::visit(
        [](const auto& a) -> json {
            using T = std::decay_t<decltype(a)>;
            if constexpr (std::is_same_v<T, GaussianAtom>)
                return {{"type", "gaussian"}, {"mean", a.mean}, {"variance", a.variance}};
            else if constexpr (std::is_same_v<T, LaplacianAtom>)
                return {{"type", "laplacian"}, {"mean", a.mean}, {"scale", a.scale}};
            else if constexpr (std::is_same_v<T, UniformAtom>)
                return {{"type", "uniform"}, {"low", a.low}, {"high", a.high}};
            else
                return {{"type", "indicator"}, {"state", a.state}, {"num_states", a.num_states}};
        },
        atom.spec());
}

Atom atom_from_json(const json& j) {
    const std::string type = j.at("type").get<std::string>();
    if (type == "gaussian")
        return Atom::gaussian(j.at("mean").get<double>(), j.at("variance").get<double>());
    if (type == "laplacian")
        return Atom::laplacian(j.at("mean").get<double>(), j.at("scale").get<double>());
    if (type == "uniform")
        return Atom::uniform(j.at("low").get<double>(), j.at("high").get<double>());
    if (type == "indicator")
        return Atom::discrete_indicator(j.at("state").get<int>(), j.at("num_states").get<int>());
    throw model_format_error("unknown atom type '" + type + "'");
}

json matrix_to_json(const Eigen::MatrixXd& m) {
    json rows = json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        json row = json::array();
        for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
        rows.push_back(std::move(row));
    }
    return rows;
}

Eigen::MatrixXd matrix_from_json(const json& rows) {
    if (!rows.is_array() || rows.empty()) throw model_format_error("expected a nonempty matrix");
    const Eigen::Index num_rows = static_cast<Eigen::Index>(rows.size());
    const Eigen::Index num_cols = static_cast<Eigen::Index>(rows[0].size());
    Eigen::MatrixXd m(num_rows, num_cols);
    for (Eigen::Index r = 0; r < num_rows; ++r) {
        const json& row = rows[static_cast<std::size_t>(r)];
        if (static_cast<Eigen::Index>(row.size()) != num_cols)
            throw model_format_error("ragged matrix rows");
        for (Eigen::Index c = 0; c < num_cols; ++c)
            m(r, c) = row[static_cast<std::size_t>(c)].get<double>();
    }
    return m;
}

json metadata_to_json(const ModelMetadata& metadata) {
    json state_maps = json::array();
    for (const auto& states : metadata.state_maps) {
        json map = json::object();
        for (const auto& [name, state] : states) map[name] = state;
        state_maps.push_back(std::move(map));
    }
    json transforms = json::array();
    for (const auto& t : metadata.transforms)
        transforms.push_back({{"offset", t.offset}, {"scale", t.scale}});
    json out{{"seed", metadata.seed},
             {"config_hash", metadata.config_hash},
             {"column_names", metadata.column_names},
             {"state_maps", std::move(state_maps)},
             {"transforms", std::move(transforms)}};
    if (metadata.label_dim)
        out["label_dim"] = *metadata.label_dim;
    else
        out["label_dim"] = nullptr;
    return out;
}

ModelMetadata metadata_from_json(const json& j) {
    ModelMetadata metadata;
    metadata.seed = j.at("seed").get<std::uint64_t>();
    metadata.config_hash = j.at("config_hash").get<std::string>();
    metadata.column_names = j.at("column_names").get<std::vector<std::string>>();
    for (const auto& map : j.at("state_maps")) {
        std::map<std::string, int> states;
        for (auto it = map.begin(); it != map.end(); ++it) states[it.key()] = it->get<int>();
        metadata.state_maps.push_back(std::move(states));
    }
    for (const auto& t : j.at("transforms"))
        metadata.transforms.push_back({t.at("offset").get<double>(), t.at("scale").get<double>()});
    if (!j.at("label_dim").is_null()) metadata.label_dim = j.at("label_dim").get<int>();
    return metadata;
}

} // namespace

void save_model(const JointModel& model, const std::string& path, const ModelMetadata& metadata) {
    json dims = json::array();
    for (int n = 0; n < model.num_dims(); ++n) {
        const ModelDimension& dim = model.dim(n);
        json entry;
        if (dim.dictionary.is_discrete()) {
            entry["domain"] = {{"kind", "discrete"}, {"num_states", dim.dictionary.num_states()}};
            entry["grid"] = {{"kind", "discrete"}, {"num_states", dim.grid.num_bins()}};
        } else {
            const auto& domain = std::get<ContinuousDomain>(dim.dictionary.domain());
            entry["domain"] = {{"kind", "continuous"}, {"low", domain.low}, {"high", domain.high}};
            entry["grid"] = {{"kind", "continuous"}, {"edges", dim.grid.edges()}};
        }
        json atoms = json::array();
        for (const auto& atom : dim.dictionary.atoms()) atoms.push_back(atom_to_json(atom));
        entry["atoms"] = std::move(atoms);
        entry["weights"] = matrix_to_json(model.weights(n));
        dims.push_back(std::move(entry));
    }
    json mixture = json::array();
    for (Eigen::Index r = 0; r < model.mixture().size(); ++r) mixture.push_back(model.mixture()[r]);

    const json root{{"format", kModelFormat},
                    {"version", kModelVersion},
                    {"dims", std::move(dims)},
                    {"mixture", std::move(mixture)},
                    {"metadata", metadata_to_json(metadata)}};

    std::ofstream out(path);
    if (!out) throw data_error("cannot write '" + path + "'");
    out << root.dump(2) << "\n";
    if (!out) throw data_error("failed writing '" + path + "'");
}

LoadedModel load_model(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw data_error("cannot open '" + path + "'");
    json root;
    try {
        root = json::parse(in);
    } catch (const json::exception& e) {
        throw model_format_error("'" + path + "': " + e.what());
    }

    try {
        if (!root.contains("format") || root.at("format").get<std::string>() != kModelFormat)
            throw model_format_error("'" + path + "' is not a model file");
        if (root.at("version").get<int>() != kModelVersion)
            throw model_format_error("unsupported model version " +
                                     root.at("version").dump() + " (expected " +
                                     std::to_string(kModelVersion) + ")");

        std::vector<ModelDimension> dims;
        std::vector<Eigen::MatrixXd> weights;
        for (const auto& entry : root.at("dims")) {
            std::vector<Atom> atoms;
            for (const auto& a : entry.at("atoms")) atoms.push_back(atom_from_json(a));

            const json& domain = entry.at("domain");
            const json& grid = entry.at("grid");
            if (domain.at("kind").get<std::string>() == "discrete") {
                Dictionary dict(std::move(atoms),
                                DiscreteDomain{domain.at("num_states").get<int>()});
                dims.emplace_back(std::move(dict),
                                  Grid::discrete(grid.at("num_states").get<int>()), 1e-12);
            } else {
                Dictionary dict(std::move(atoms),
                                ContinuousDomain{domain.at("low").get<double>(),
                                                 domain.at("high").get<double>()});
                dims.emplace_back(std::move(dict),
                                  Grid::continuous(grid.at("edges").get<std::vector<double>>()),
                                  1e-12);
            }
            weights.push_back(matrix_from_json(entry.at("weights")));
        }

        const auto mixture_values = root.at("mixture").get<std::vector<double>>();
        Eigen::VectorXd mixture(static_cast<Eigen::Index>(mixture_values.size()));
        for (Eigen::Index r = 0; r < mixture.size(); ++r)
            mixture[r] = mixture_values[static_cast<std::size_t>(r)];

        // The looser tolerance distinguishes an edited or corrupt file from
        // float noise introduced by serialization.
        JointModel model(std::move(dims), std::move(weights), std::move(mixture), 1e-6);
        return {std::move(model), metadata_from_json(root.at("metadata"))};
    } catch (const json::exception& e) {
        throw model_format_error("'" + path + "': " + e.what());
    } catch (const config_error& e) {
        throw model_format_error("'" + path + "': " + e.what());
    }
}

Dictionary DictionaryRecipe::build(double data_low, double data_high, int num_states) const {
    switch (kind) {
        case Kind::kIdentity:
            if (num_states < 1)
                throw config_error("an identity dictionary needs a discrete column");
            return Dictionary::identity(num_states);
        case Kind::kGrid: {
            const double low = range ? range->first : data_low;
            const double high = range ? range->second : data_high;
            return build_dictionary_grid_preset(low, high, spacing, families, uniform_count);
        }
        case Kind::kNamedPreset:
            if (preset_name == "seeds")
                return build_dictionary_grid_preset(
                    10.0, 22.0, 2.0, {{GridPresetFamily::Kind::kGaussian, 1.0}}, 2);
            if (preset_name == "wifi")
                return build_dictionary_grid_preset(
                    -90.0, -36.0, 4.0, {{GridPresetFamily::Kind::kGaussian, 4.0}}, 0);
            if (preset_name == "kth")
                return build_dictionary_grid_preset(
                    0.0, 1.0, 0.04, {{GridPresetFamily::Kind::kGaussian, 4e-4}}, 0);
            throw config_error("unknown dictionary preset '" + preset_name + "'");
    }
    throw config_error("invalid dictionary recipe");
}

namespace {

void reject_unknown(const json& obj, std::initializer_list<const char*> allowed,
                    const std::string& where) {
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        bool known = false;
        for (const char* key : allowed)
            if (it.key() == key) known = true;
        if (!known) throw config_error(where + ": unknown key '" + it.key() + "'");
    }
}

FitConfig fit_config_from_json(const json& j, const std::string& where) {
    reject_unknown(j,
                   {"rank", "rate_coupling", "rate_weights", "rate_mixture", "stage1_max_iters",
                    "stage3_max_sweeps", "stage3_inner_iters", "stage1_tol", "stage3_tol",
                    "max_backtracks", "seed", "histogram_bins", "coverage_threshold",
                    "split_first", "split_second", "spa_on_transpose", "parallel_pairs"},
                   where);
    FitConfig fit;
    if (j.contains("rank")) fit.rank = j.at("rank").get<int>();
    if (j.contains("rate_coupling")) fit.rate_coupling = j.at("rate_coupling").get<double>();
    if (j.contains("rate_weights")) fit.rate_weights = j.at("rate_weights").get<double>();
    if (j.contains("rate_mixture")) fit.rate_mixture = j.at("rate_mixture").get<double>();
    if (j.contains("stage1_max_iters")) fit.stage1_max_iters = j.at("stage1_max_iters").get<int>();
    if (j.contains("stage3_max_sweeps"))
        fit.stage3_max_sweeps = j.at("stage3_max_sweeps").get<int>();
    if (j.contains("stage3_inner_iters"))
        fit.stage3_inner_iters = j.at("stage3_inner_iters").get<int>();
    if (j.contains("stage1_tol")) fit.stage1_tol = j.at("stage1_tol").get<double>();
    if (j.contains("stage3_tol")) fit.stage3_tol = j.at("stage3_tol").get<double>();
    if (j.contains("max_backtracks")) fit.max_backtracks = j.at("max_backtracks").get<int>();
    if (j.contains("seed")) fit.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("histogram_bins")) fit.histogram_bins = j.at("histogram_bins").get<int>();
    if (j.contains("coverage_threshold"))
        fit.coverage_threshold = j.at("coverage_threshold").get<double>();
    if (j.contains("split_first")) fit.split_first = j.at("split_first").get<std::vector<int>>();
    if (j.contains("split_second"))
        fit.split_second = j.at("split_second").get<std::vector<int>>();
    if (j.contains("spa_on_transpose"))
        fit.spa_on_transpose = j.at("spa_on_transpose").get<bool>();
    if (j.contains("parallel_pairs")) fit.parallel_pairs = j.at("parallel_pairs").get<bool>();
    return fit;
}

json fit_config_to_json(const FitConfig& fit) {
    return {{"rank", fit.rank},
            {"rate_coupling", fit.rate_coupling},
            {"rate_weights", fit.rate_weights},
            {"rate_mixture", fit.rate_mixture},
            {"stage1_max_iters", fit.stage1_max_iters},
            {"stage3_max_sweeps", fit.stage3_max_sweeps},
            {"stage3_inner_iters", fit.stage3_inner_iters},
            {"stage1_tol", fit.stage1_tol},
            {"stage3_tol", fit.stage3_tol},
            {"max_backtracks", fit.max_backtracks},
            {"seed", fit.seed},
            {"histogram_bins", fit.histogram_bins},
            {"coverage_threshold", fit.coverage_threshold},
            {"split_first", fit.split_first},
            {"split_second", fit.split_second},
            {"spa_on_transpose", fit.spa_on_transpose},
            {"parallel_pairs", fit.parallel_pairs}};
}

GridPresetFamily family_from_json(const json& j) {
    reject_unknown(j, {"family", "param"}, "dictionary family");
    GridPresetFamily family;
    const std::string name = j.at("family").get<std::string>();
    if (name == "gaussian")
        family.kind = GridPresetFamily::Kind::kGaussian;
    else if (name == "laplacian")
        family.kind = GridPresetFamily::Kind::kLaplacian;
    else
        throw config_error("unknown dictionary family '" + name + "'");
    if (j.contains("param")) family.param = j.at("param").get<double>();
    return family;
}

DictionaryRecipe recipe_from_json(const json& j, const std::string& where) {
    DictionaryRecipe recipe;
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "identity") {
        reject_unknown(j, {"kind"}, where);
        recipe.kind = DictionaryRecipe::Kind::kIdentity;
    } else if (kind == "grid") {
        reject_unknown(j, {"kind", "families", "spacing", "uniform_count", "range"}, where);
        recipe.kind = DictionaryRecipe::Kind::kGrid;
        if (j.contains("families"))
            for (const auto& f : j.at("families")) recipe.families.push_back(family_from_json(f));
        if (j.contains("spacing")) recipe.spacing = j.at("spacing").get<double>();
        if (j.contains("uniform_count")) recipe.uniform_count = j.at("uniform_count").get<int>();
        if (j.contains("range")) {
            const auto range = j.at("range").get<std::vector<double>>();
            if (range.size() != 2) throw config_error(where + ": range must be [low, high]");
            recipe.range = {range[0], range[1]};
        }
    } else if (kind == "preset") {
        reject_unknown(j, {"kind", "name"}, where);
        recipe.kind = DictionaryRecipe::Kind::kNamedPreset;
        recipe.preset_name = j.at("name").get<std::string>();
    } else {
        throw config_error(where + ": unknown dictionary kind '" + kind + "'");
    }
    return recipe;
}

json recipe_to_json(const DictionaryRecipe& recipe) {
    switch (recipe.kind) {
        case DictionaryRecipe::Kind::kIdentity:
            return {{"kind", "identity"}};
        case DictionaryRecipe::Kind::kGrid: {
            json families = json::array();
            for (const auto& f : recipe.families)
                families.push_back(
                    {{"family",
                      f.kind == GridPresetFamily::Kind::kGaussian ? "gaussian" : "laplacian"},
                     {"param", f.param}});
            json out{{"kind", "grid"},
                     {"families", std::move(families)},
                     {"spacing", recipe.spacing},
                     {"uniform_count", recipe.uniform_count}};
            if (recipe.range)
                out["range"] = {recipe.range->first, recipe.range->second};
            return out;
        }
        case DictionaryRecipe::Kind::kNamedPreset:
            return {{"kind", "preset"}, {"name", recipe.preset_name}};
    }
    return {};
}

ColumnSpec column_from_json(const json& j) {
    reject_unknown(j, {"name", "type", "num_states", "normalize_unit"}, "column");
    ColumnSpec spec;
    spec.name = j.at("name").get<std::string>();
    const std::string type = j.at("type").get<std::string>();
    if (type == "continuous") {
        spec.meta = ColumnMeta::continuous();
        if (j.contains("num_states"))
            throw config_error("column '" + spec.name + "': num_states is for discrete columns");
    } else if (type == "discrete") {
        spec.meta = ColumnMeta::discrete(j.contains("num_states") ? j.at("num_states").get<int>()
                                                                  : 0);
    } else {
        throw config_error("column '" + spec.name + "': unknown type '" + type + "'");
    }
    if (j.contains("normalize_unit")) spec.normalize_unit = j.at("normalize_unit").get<bool>();
    return spec;
}

json column_to_json(const ColumnSpec& spec) {
    json out{{"name", spec.name},
             {"type", spec.meta.is_discrete() ? "discrete" : "continuous"},
             {"normalize_unit", spec.normalize_unit}};
    if (spec.meta.is_discrete()) out["num_states"] = spec.meta.num_states;
    return out;
}

std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t hash = 1469598103934665603ull;
    for (const char c : s) {
        hash ^= static_cast<unsigned char>(c);
        hash *= 1099511628211ull;
    }
    return hash;
}

json run_config_to_json(const RunConfig& config) {
    json columns = json::array();
    for (const auto& c : config.columns) columns.push_back(column_to_json(c));
    json dictionaries = json::array();
    for (const auto& d : config.dictionaries) dictionaries.push_back(recipe_to_json(d));
    json out{{"dataset", config.dataset_path},
             {"columns", std::move(columns)},
             {"dictionaries", std::move(dictionaries)},
             {"fit", fit_config_to_json(config.fit)},
             {"model_output", config.model_output},
             {"trace_output", config.trace_output}};
    if (config.label_column)
        out["label_column"] = *config.label_column;
    else
        out["label_column"] = nullptr;
    return out;
}

} // namespace

RunConfig RunConfig::from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw data_error("cannot open '" + path + "'");
    json root;
    try {
        root = json::parse(in);
    } catch (const json::exception& e) {
        throw config_error("'" + path + "': " + e.what());
    }

    try {
        reject_unknown(root,
                       {"dataset", "label_column", "columns", "dictionaries", "fit",
                        "model_output", "trace_output"},
                       "run config");
        RunConfig config;
        config.dataset_path = root.at("dataset").get<std::string>();
        if (root.contains("label_column") && !root.at("label_column").is_null())
            config.label_column = root.at("label_column").get<std::string>();
        for (const auto& c : root.at("columns")) config.columns.push_back(column_from_json(c));
        if (config.columns.empty()) throw config_error("run config: no columns");
        const auto& dictionaries = root.at("dictionaries");
        for (std::size_t d = 0; d < dictionaries.size(); ++d)
            config.dictionaries.push_back(recipe_from_json(
                dictionaries[d], "dictionary " + std::to_string(d)));
        if (config.dictionaries.size() != config.columns.size())
            throw config_error("run config: one dictionary per column is required");
        if (root.contains("fit")) config.fit = fit_config_from_json(root.at("fit"), "fit");
        config.fit.validate();
        config.model_output = root.at("model_output").get<std::string>();
        if (root.contains("trace_output"))
            config.trace_output = root.at("trace_output").get<std::string>();
        return config;
    } catch (const json::exception& e) {
        throw config_error("'" + path + "': " + e.what());
    }
}

std::string RunConfig::canonical_hash() const {
    char buf[24];
    std::snprintf(buf, sizeof buf, "%016llx",
                  static_cast<unsigned long long>(fnv1a(run_config_to_json(*this).dump())));
    return buf;
}

namespace {

// ---- CLI ----------------------------------------------------------------

void emit_error(const std::string& kind, const std::string& message) {
    std::cerr << json{{"error", kind}, {"message", message}}.dump() << "\n";
}

std::ostream& open_output(std::ofstream& file, const std::string& path) {
    if (path.empty()) return std::cout;
    file.open(path);
    if (!file) throw data_error("cannot write '" + path + "'");
    return file;
}

// Maps a headered CSV into model coordinates using the persisted ingestion
// metadata. Columns are matched by name when the model carries names and the
// header has them, by position otherwise. Returns one column per model
// dimension; a missing optional label column yields zeros there.
struct ModelPoints {
    Eigen::MatrixXd stored;
    bool label_present = false;
};

ModelPoints read_model_points(const std::string& path, const JointModel& model,
                              const ModelMetadata& metadata, std::optional<int> optional_label) {
    const auto lines = read_lines(path);
    if (lines.size() < 2) throw parse_error("'" + path + "' needs a header and at least one row");
    const auto header = split_line(lines[0]);
    const int n_dims = model.num_dims();

    const bool by_name = static_cast<int>(metadata.column_names.size()) == n_dims;
    std::vector<Eigen::Index> file_column(static_cast<std::size_t>(n_dims), -1);
    if (by_name) {
        for (int n = 0; n < n_dims; ++n) {
            const auto& name = metadata.column_names[static_cast<std::size_t>(n)];
            const auto it = std::find(header.begin(), header.end(), name);
            if (it != header.end()) {
                file_column[static_cast<std::size_t>(n)] = std::distance(header.begin(), it);
            } else if (!(optional_label && *optional_label == n)) {
                throw config_error("column '" + name + "' is not in the header of '" + path + "'");
            }
        }
    } else {
        if (static_cast<int>(header.size()) != n_dims)
            throw config_error("'" + path + "' has " + std::to_string(header.size()) +
                               " columns; the model expects " + std::to_string(n_dims));
        for (int n = 0; n < n_dims; ++n) file_column[static_cast<std::size_t>(n)] = n;
    }

    ModelPoints out;
    out.label_present =
        !optional_label || file_column[static_cast<std::size_t>(*optional_label)] >= 0;
    out.stored.setZero(static_cast<Eigen::Index>(lines.size()) - 1, n_dims);

    for (long r = 0; r + 1 < static_cast<long>(lines.size()); ++r) {
        const auto fields = split_line(lines[static_cast<std::size_t>(r) + 1]);
        if (fields.size() != header.size())
            throw parse_error("row " + std::to_string(r + 2) + " has " +
                              std::to_string(fields.size()) + " fields, expected " +
                              std::to_string(header.size()));
        for (int n = 0; n < n_dims; ++n) {
            const Eigen::Index col = file_column[static_cast<std::size_t>(n)];
            if (col < 0) continue;
            const std::string& cell = fields[static_cast<std::size_t>(col)];
            const std::string name = by_name ? metadata.column_names[static_cast<std::size_t>(n)]
                                             : "#" + std::to_string(n);
            const ModelDimension& dim = model.dim(n);
            if (dim.dictionary.is_discrete()) {
                const auto* states = static_cast<std::size_t>(n) < metadata.state_maps.size()
                                         ? &metadata.state_maps[static_cast<std::size_t>(n)]
                                         : nullptr;
                if (states && !states->empty()) {
                    const auto it = states->find(cell);
                    if (it == states->end())
                        throw data_error("row " + std::to_string(r + 2) + ", column '" + name +
                                         "': unknown state '" + cell + "'");
                    out.stored(r, n) = it->second;
                } else {
                    const double value = parse_double(cell, r + 2, name);
                    if (value != std::floor(value) || value < 0.0 ||
                        value >= dim.dictionary.num_states())
                        throw data_error("row " + std::to_string(r + 2) + ", column '" + name +
                                         "': state " + cell + " is outside [0, " +
                                         std::to_string(dim.dictionary.num_states()) + ")");
                    out.stored(r, n) = value;
                }
            } else {
                double value = parse_double(cell, r + 2, name);
                if (static_cast<std::size_t>(n) < metadata.transforms.size())
                    value = metadata.transforms[static_cast<std::size_t>(n)].apply(value);
                out.stored(r, n) = value;
            }
        }
    }
    return out;
}

std::string present_value(const JointModel& model, const ModelMetadata& metadata, int dim,
                          double stored) {
    if (model.dim(dim).dictionary.is_discrete()) {
        const int state = static_cast<int>(stored);
        if (static_cast<std::size_t>(dim) < metadata.state_maps.size()) {
            for (const auto& [name, s] : metadata.state_maps[static_cast<std::size_t>(dim)])
                if (s == state) return name;
        }
        return std::to_string(state);
    }
    double raw = stored;
    if (static_cast<std::size_t>(dim) < metadata.transforms.size())
        raw = metadata.transforms[static_cast<std::size_t>(dim)].invert(stored);
    return format_full(raw);
}

// Density with respect to the raw input units: normalization transforms
// rescale continuous axes, so the stored-coordinate density picks up the
// product of their slopes.
double raw_density(const JointModel& model, const ModelMetadata& metadata,
                   const Eigen::VectorXd& stored) {
    double density = model.pdf(stored);
    for (int n = 0; n < model.num_dims(); ++n)
        if (!model.dim(n).dictionary.is_discrete() &&
            static_cast<std::size_t>(n) < metadata.transforms.size())
            density *= metadata.transforms[static_cast<std::size_t>(n)].scale;
    return density;
}

struct FitArgs {
    std::string config_path;
    int threads = 0;
};

int run_fit(const FitArgs& args) {
    if (args.threads > 0) {
        const std::string value = std::to_string(args.threads);
        setenv("JUPAD_THREADS", value.c_str(), 1);
    }
    const RunConfig config = RunConfig::from_file(args.config_path);
    const CsvDataset csv = load_csv(config.dataset_path, config.columns, config.label_column);

    std::vector<Dictionary> dictionaries;
    dictionaries.reserve(config.dictionaries.size());
    for (std::size_t n = 0; n < config.dictionaries.size(); ++n) {
        const auto column = csv.data.samples().col(static_cast<Eigen::Index>(n));
        const ColumnMeta& meta = csv.data.column(static_cast<int>(n));
        dictionaries.push_back(config.dictionaries[n].build(column.minCoeff(), column.maxCoeff(),
                                                            meta.num_states));
    }

    const FitOutput output = fit(csv.data, dictionaries, config.fit);

    ModelMetadata metadata;
    metadata.seed = config.fit.seed;
    metadata.config_hash = config.canonical_hash();
    metadata.column_names = csv.column_names;
    metadata.state_maps = csv.state_maps;
    metadata.transforms = csv.transforms;
    metadata.label_dim = csv.data.label_column();
    save_model(output.model, config.model_output, metadata);

    if (!config.trace_output.empty()) {
        std::ofstream trace(config.trace_output);
        if (!trace) throw data_error("cannot write '" + config.trace_output + "'");
        trace << "stage,unit,iteration,objective\n";
        for (const auto& record : output.trace)
            trace << record.stage << "," << record.unit << "," << record.iteration << ","
                  << format_full(record.objective) << "\n";
    }

    std::cout << "objective,model_output\n"
              << format_full(output.objective) << "," << config.model_output << "\n";
    return 0;
}

struct EvalArgs {
    std::string model_path;
    std::string points_path;
    std::string output_path;
};

int run_eval_density(const EvalArgs& args) {
    const LoadedModel loaded = load_model(args.model_path);
    const ModelPoints points =
        read_model_points(args.points_path, loaded.model, loaded.metadata, std::nullopt);

    std::ofstream file;
    std::ostream& out = open_output(file, args.output_path);
    out << "density\n";
    for (Eigen::Index r = 0; r < points.stored.rows(); ++r)
        out << format_full(
                   raw_density(loaded.model, loaded.metadata, points.stored.row(r).transpose()))
            << "\n";
    return 0;
}

struct ClassifyArgs {
    std::string model_path;
    std::string data_path;
    std::string output_path;
};

int run_classify(const ClassifyArgs& args) {
    const LoadedModel loaded = load_model(args.model_path);
    if (!loaded.metadata.label_dim)
        throw config_error("the model does not designate a label dimension");
    const int label_dim = *loaded.metadata.label_dim;
    const ModelPoints points =
        read_model_points(args.data_path, loaded.model, loaded.metadata, label_dim);

    std::ofstream file;
    std::ostream& out = open_output(file, args.output_path);
    out << "row,predicted";
    if (points.label_present) out << ",truth";
    out << "\n";

    long correct = 0;
    long zeros = 0;
    const long rows = points.stored.rows();
    for (long r = 0; r < rows; ++r) {
        const Eigen::VectorXd x = points.stored.row(r).transpose();
        std::string predicted;
        try {
            const MapClassification result = loaded.model.map_classify(label_dim, x);
            predicted = present_value(loaded.model, loaded.metadata, label_dim,
                                      static_cast<double>(result.label));
            if (points.label_present &&
                result.label == static_cast<int>(points.stored(r, label_dim)))
                ++correct;
        } catch (const zero_density_error&) {
            ++zeros;
        }
        out << r << "," << predicted;
        if (points.label_present)
            out << ","
                << present_value(loaded.model, loaded.metadata, label_dim,
                                 points.stored(r, label_dim));
        out << "\n";
    }

    if (points.label_present) {
        if (args.output_path.empty()) std::cout << "\n";
        std::cout << "accuracy,error_fraction,zero_density_fraction,rows\n";
        const double accuracy = static_cast<double>(correct) / static_cast<double>(rows);
        const double zero_fraction = static_cast<double>(zeros) / static_cast<double>(rows);
        std::cout << format_full(accuracy) << ","
                  << format_full(1.0 - accuracy - zero_fraction) << ","
                  << format_full(zero_fraction) << "," << rows << "\n";
    }
    return 0;
}

struct SampleArgs {
    std::string model_path;
    long count = 0;
    std::uint64_t seed = 0;
    std::string output_path;
};

int run_sample(const SampleArgs& args) {
    const LoadedModel loaded = load_model(args.model_path);
    const Eigen::MatrixXd samples = loaded.model.sample(args.count, args.seed);

    std::ofstream file;
    std::ostream& out = open_output(file, args.output_path);
    for (int n = 0; n < loaded.model.num_dims(); ++n) {
        if (n) out << ",";
        out << (static_cast<std::size_t>(n) < loaded.metadata.column_names.size()
                    ? loaded.metadata.column_names[static_cast<std::size_t>(n)]
                    : "dim" + std::to_string(n));
    }
    out << "\n";
    for (Eigen::Index r = 0; r < samples.rows(); ++r) {
        for (int n = 0; n < loaded.model.num_dims(); ++n) {
            if (n) out << ",";
            out << present_value(loaded.model, loaded.metadata, n, samples(r, n));
        }
        out << "\n";
    }
    return 0;
}

SynthSpec synth_spec_from_json(const json& j) {
    reject_unknown(j,
                   {"rank", "dims", "mean_low", "mean_high", "shape_low", "shape_high",
                    "atoms_per_component", "grid_bins", "seed"},
                   "synth spec");
    SynthSpec spec;
    if (j.contains("rank")) spec.rank = j.at("rank").get<int>();
    for (const auto& entry : j.at("dims")) {
        const std::string name = entry.get<std::string>();
        DimensionRecipe recipe;
        if (name == "gaussian") {
            recipe.family = DimensionRecipe::Family::kGaussianMix;
        } else if (name == "laplacian") {
            recipe.family = DimensionRecipe::Family::kLaplacianMix;
        } else if (name.rfind("discrete:", 0) == 0) {
            recipe.family = DimensionRecipe::Family::kDiscreteUniform;
            recipe.num_states = std::atoi(name.c_str() + 9);
        } else {
            throw config_error("synth spec: unknown dimension '" + name +
                               "' (use gaussian, laplacian or discrete:<states>)");
        }
        spec.dims.push_back(recipe);
    }
    if (j.contains("mean_low")) spec.mean_low = j.at("mean_low").get<double>();
    if (j.contains("mean_high")) spec.mean_high = j.at("mean_high").get<double>();
    if (j.contains("shape_low")) spec.shape_low = j.at("shape_low").get<double>();
    if (j.contains("shape_high")) spec.shape_high = j.at("shape_high").get<double>();
    if (j.contains("atoms_per_component"))
        spec.atoms_per_component = j.at("atoms_per_component").get<int>();
    if (j.contains("grid_bins")) spec.grid_bins = j.at("grid_bins").get<int>();
    if (j.contains("seed")) spec.seed = j.at("seed").get<std::uint64_t>();
    return spec;
}

ExperimentConfig experiment_from_json(const json& root) {
    reject_unknown(root,
                   {"spec", "sample_sizes", "trials", "test_samples", "fit", "mode",
                    "preset_spacing", "preset_param", "preset_uniforms", "timing"},
                   "experiment config");
    ExperimentConfig config;
    config.spec = synth_spec_from_json(root.at("spec"));
    config.sample_sizes = root.at("sample_sizes").get<std::vector<long>>();
    if (root.contains("trials")) config.trials = root.at("trials").get<int>();
    if (root.contains("test_samples")) config.test_samples = root.at("test_samples").get<long>();
    if (root.contains("fit")) config.fit = fit_config_from_json(root.at("fit"), "fit");
    if (root.contains("mode")) {
        const std::string mode = root.at("mode").get<std::string>();
        if (mode == "preset")
            config.mode = ExperimentConfig::DictionaryMode::kPreset;
        else if (mode == "oracle")
            config.mode = ExperimentConfig::DictionaryMode::kOracle;
        else
            throw config_error("experiment config: unknown mode '" + mode + "'");
    }
    if (root.contains("preset_spacing"))
        config.preset_spacing = root.at("preset_spacing").get<double>();
    if (root.contains("preset_param")) config.preset_param = root.at("preset_param").get<double>();
    if (root.contains("preset_uniforms"))
        config.preset_uniforms = root.at("preset_uniforms").get<int>();
    if (root.contains("timing")) config.timing = root.at("timing").get<bool>();
    return config;
}

struct SynthArgs {
    std::string config_path;
    std::string output_path;
    std::string rows_path;
};

int run_synth(const SynthArgs& args) {
    std::ifstream in(args.config_path);
    if (!in) throw data_error("cannot open '" + args.config_path + "'");
    json root;
    try {
        root = json::parse(in);
    } catch (const json::exception& e) {
        throw config_error("'" + args.config_path + "': " + e.what());
    }
    ExperimentConfig config;
    try {
        config = experiment_from_json(root);
    } catch (const json::exception& e) {
        throw config_error("'" + args.config_path + "': " + e.what());
    }

    const ExperimentTable table = run_experiment(config);

    if (!args.rows_path.empty()) {
        std::ofstream rows(args.rows_path);
        if (!rows) throw data_error("cannot write '" + args.rows_path + "'");
        rows << "sample_size,trial,d_value,d_zero_count,seconds\n";
        for (const auto& row : table.rows)
            rows << row.sample_size << "," << row.trial << "," << format_full(row.d_value) << ","
                 << row.d_zero_count << "," << format_full(row.seconds) << "\n";
    }

    std::ofstream file;
    std::ostream& out = open_output(file, args.output_path);
    out << "sample_size,trials,mean_d,std_d,seconds\n";
    for (const auto& row : table.summary)
        out << row.sample_size << "," << config.trials << "," << format_full(row.mean_d) << ","
            << format_full(row.std_d) << "," << format_full(row.seconds) << "\n";
    return 0;
}

struct InspectArgs {
    std::string config_path;
    std::string data_path;
    int bins = 16;
};

int run_inspect(const InspectArgs& args) {
    if (args.config_path.empty() == args.data_path.empty())
        throw config_error("inspect needs exactly one of --config or --data");

    CsvDataset csv = [&] {
        if (!args.config_path.empty()) {
            const RunConfig config = RunConfig::from_file(args.config_path);
            return load_csv(config.dataset_path, config.columns, config.label_column);
        }
        const auto lines = read_lines(args.data_path);
        if (lines.empty()) throw parse_error("'" + args.data_path + "' is empty");
        std::vector<ColumnSpec> specs;
        for (const auto& name : split_line(lines[0]))
            specs.push_back({name, ColumnMeta::continuous(), false});
        return load_csv(args.data_path, specs, std::nullopt);
    }();

    std::cout << "column,bin,low,high,count\n";
    for (int n = 0; n < csv.data.num_cols(); ++n) {
        const Grid grid = propose_grid(csv.data, n, args.bins);
        const Eigen::VectorXd counts = histogram_1d(csv.data, grid, n);
        for (int b = 0; b < grid.num_bins(); ++b) {
            const auto [low, high] = grid.bin_bounds(b);
            std::cout << csv.column_names[static_cast<std::size_t>(n)] << "," << b << ","
                      << format_full(low) << "," << format_full(high) << ","
                      << format_full(counts[b]) << "\n";
        }
    }
    return 0;
}

} // namespace

int cli_main(int argc, const char* const* argv) {
    CLI::App app{"Joint density estimation from pairwise marginals"};
    app.require_subcommand(1);

    FitArgs fit_args;
    CLI::App* fit_cmd = app.add_subcommand("fit", "Fit a model from a run config");
    fit_cmd->add_option("--config", fit_args.config_path, "Run config JSON")->required();
    fit_cmd->add_option("--threads", fit_args.threads, "Worker threads for the pair fits");

    EvalArgs eval_args;
    CLI::App* eval_cmd = app.add_subcommand("eval-density", "Evaluate the density at points");
    eval_cmd->add_option("--model", eval_args.model_path, "Model file")->required();
    eval_cmd->add_option("--points", eval_args.points_path, "Headered CSV of points")->required();
    eval_cmd->add_option("--output", eval_args.output_path, "Densities CSV (default stdout)");

    ClassifyArgs classify_args;
    CLI::App* classify_cmd = app.add_subcommand("classify", "MAP-classify rows of a CSV");
    classify_cmd->add_option("--model", classify_args.model_path, "Model file")->required();
    classify_cmd->add_option("--data", classify_args.data_path, "Headered CSV")->required();
    classify_cmd->add_option("--output", classify_args.output_path,
                             "Predictions CSV (default stdout)");

    SampleArgs sample_args;
    CLI::App* sample_cmd = app.add_subcommand("sample", "Draw samples from a model");
    sample_cmd->add_option("--model", sample_args.model_path, "Model file")->required();
    sample_cmd->add_option("--count", sample_args.count, "Number of samples")
        ->required()
        ->check(CLI::PositiveNumber);
    sample_cmd->add_option("--seed", sample_args.seed, "Sampling seed");
    sample_cmd->add_option("--output", sample_args.output_path, "Samples CSV (default stdout)");

    SynthArgs synth_args;
    CLI::App* synth_cmd = app.add_subcommand("synth", "Run a synthetic benchmark");
    synth_cmd->add_option("--config", synth_args.config_path, "Experiment config JSON")
        ->required();
    synth_cmd->add_option("--output", synth_args.output_path, "Summary CSV (default stdout)");
    synth_cmd->add_option("--rows-output", synth_args.rows_path, "Per-trial rows CSV");

    InspectArgs inspect_args;
    CLI::App* inspect_cmd =
        app.add_subcommand("inspect", "Per-column histograms of a dataset as CSV");
    inspect_cmd->add_option("--config", inspect_args.config_path, "Run config JSON");
    inspect_cmd->add_option("--data", inspect_args.data_path, "Headered CSV, all columns numeric");
    inspect_cmd->add_option("--bins", inspect_args.bins, "Bins for continuous columns");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        emit_error("usage", e.what());
        std::cerr << app.help();
        return 1;
    }

    try {
        if (app.got_subcommand(fit_cmd)) return run_fit(fit_args);
        if (app.got_subcommand(eval_cmd)) return run_eval_density(eval_args);
        if (app.got_subcommand(classify_cmd)) return run_classify(classify_args);
        if (app.got_subcommand(sample_cmd)) return run_sample(sample_args);
        if (app.got_subcommand(synth_cmd)) return run_synth(synth_args);
        if (app.got_subcommand(inspect_cmd)) return run_inspect(inspect_args);
        emit_error("usage", "no subcommand");
        return 1;
    } catch (const numeric_error& e) {
        emit_error("numeric", e.what());
        return 3;
    } catch (const config_error& e) {
        emit_error("config", e.what());
        return 2;
    } catch (const data_error& e) {
        emit_error("data", e.what());
        return 2;
    } catch (const std::exception& e) {
        emit_error("data", e.what());
        return 2;
    }
}

} // namespace jupad
