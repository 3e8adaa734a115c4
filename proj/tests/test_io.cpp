#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "jupad/errors.hpp"
#include "jupad/io.hpp"
#include "jupad/rng.hpp"

using namespace jupad;
using nlohmann::json;

namespace {

std::filesystem::path scratch() {
    const auto dir = std::filesystem::current_path() / "io_scratch";
    std::filesystem::create_directories(dir);
    return dir;
}

std::string path_of(const std::string& name) { return (scratch() / name).string(); }

void write_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    out << text;
}

std::string read_text(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return buffer.str();
}

int run_cli(const std::vector<std::string>& args) {
    std::vector<const char*> argv{"jupad"};
    for (const auto& arg : args) argv.push_back(arg.c_str());
    return cli_main(static_cast<int>(argv.size()), argv.data());
}

} // namespace

TEST_CASE("csv columns are selected by name and states by first appearance") {
    const std::string path = path_of("mixed.csv");
    write_file(path,
               " x , c , y \n"
               "1.5, red, 10\n"
               "2.5, green, 20\n"
               "-0.5, red, 30\n");

    const std::vector<ColumnSpec> specs{{"y", ColumnMeta::continuous(), false},
                                        {"x", ColumnMeta::continuous(), true},
                                        {"c", ColumnMeta::discrete(0), false}};
    const CsvDataset csv = load_csv(path, specs, std::string("c"));

    REQUIRE(csv.data.num_rows() == 3);
    REQUIRE(csv.data.num_cols() == 3);
    CHECK(csv.column_names == std::vector<std::string>{"y", "x", "c"});
    CHECK(csv.data.value(0, 0) == 10.0);
    CHECK(csv.data.value(2, 0) == 30.0);

    CHECK(csv.data.value(2, 1) == 0.0);
    CHECK(csv.data.value(1, 1) == 1.0);
    CHECK(csv.data.value(0, 1) == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
    CHECK(csv.transforms[1].offset == -0.5);
    CHECK(csv.transforms[1].scale == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
    CHECK(csv.transforms[1].invert(csv.transforms[1].apply(1.5)) ==
          doctest::Approx(1.5).epsilon(1e-12));
    CHECK(csv.transforms[0].is_identity());

    CHECK(csv.data.label_column() == 2);
    CHECK(csv.data.column(2).num_states == 2);
    CHECK(csv.state_maps[2].at("red") == 0);
    CHECK(csv.state_maps[2].at("green") == 1);
    CHECK(csv.data.label_state(0) == 0);
    CHECK(csv.data.label_state(1) == 1);
}

TEST_CASE("windows line endings and trailing blank lines are tolerated") {
    const std::string path = path_of("crlf.csv");
    write_file(path, "a,b\r\n1,2\r\n3,4\r\n\r\n");
    const CsvDataset csv = load_csv(path, {{"a", ColumnMeta::continuous(), false},
                                           {"b", ColumnMeta::continuous(), false}});
    REQUIRE(csv.data.num_rows() == 2);
    CHECK(csv.data.value(1, 1) == 4.0);
}

TEST_CASE("declared discrete columns validate their states") {
    const std::string path = path_of("states.csv");
    write_file(path, "s\n0\n2\n1\n");
    const CsvDataset csv = load_csv(path, {{"s", ColumnMeta::discrete(3), false}});
    CHECK(csv.data.value(1, 0) == 2.0);
    CHECK(csv.state_maps[0].empty());

    write_file(path_of("states_bad.csv"), "s\n0\n3\n");
    CHECK_THROWS_AS(load_csv(path_of("states_bad.csv"), {{"s", ColumnMeta::discrete(3), false}}),
                    data_error);
    write_file(path_of("states_frac.csv"), "s\n0.5\n");
    CHECK_THROWS_AS(load_csv(path_of("states_frac.csv"), {{"s", ColumnMeta::discrete(3), false}}),
                    data_error);
}

TEST_CASE("malformed csv requests fail with located messages") {
    const std::string path = path_of("good.csv");
    write_file(path, "a,b\n1,2\n3,4\n");
    const std::vector<ColumnSpec> ab{{"a", ColumnMeta::continuous(), false},
                                     {"b", ColumnMeta::continuous(), false}};

    CHECK_THROWS_AS(load_csv(path_of("absent.csv"), ab), data_error);
    CHECK_THROWS_AS(load_csv(path, {}), config_error);
    CHECK_THROWS_AS(load_csv(path, {{"z", ColumnMeta::continuous(), false}}), config_error);

    write_file(path_of("header_only.csv"), "a,b\n");
    CHECK_THROWS_AS(load_csv(path_of("header_only.csv"), ab), parse_error);

    write_file(path_of("bad_cell.csv"), "a,b\n1,2\noops,4\n");
    CHECK_THROWS_WITH_AS(load_csv(path_of("bad_cell.csv"), ab),
                         "row 3, column 'a': 'oops' is not numeric", parse_error);

    write_file(path_of("bad_width.csv"), "a,b\n1,2,3\n");
    CHECK_THROWS_AS(load_csv(path_of("bad_width.csv"), ab), parse_error);

    write_file(path_of("inf_cell.csv"), "a,b\n1,inf\n");
    CHECK_THROWS_AS(load_csv(path_of("inf_cell.csv"), ab), parse_error);

    CHECK_THROWS_AS(load_csv(path, ab, std::string("missing")), config_error);
    CHECK_THROWS_AS(load_csv(path, ab, std::string("a")), config_error);
    CHECK_THROWS_AS(load_csv(path, {{"a", ColumnMeta::discrete(2), true}}), config_error);

    write_file(path_of("constant.csv"), "a\n2\n2\n");
    CHECK_THROWS_AS(load_csv(path_of("constant.csv"), {{"a", ColumnMeta::continuous(), true}}),
                    data_error);
}

namespace {

JointModel two_dim_model() {
    Dictionary continuous({Atom::gaussian(0.5, 1.2), Atom::laplacian(-1.25, 0.75),
                           Atom::uniform(-2.0, 2.0)},
                          ContinuousDomain{-8.0, 8.0});
    std::vector<double> edges;
    for (int i = 0; i <= 8; ++i) edges.push_back(-8.0 + 2.0 * i);
    std::vector<ModelDimension> dims;
    dims.emplace_back(std::move(continuous), Grid::continuous(edges));
    dims.emplace_back(Dictionary::identity(3), Grid::discrete(3));

    Eigen::MatrixXd w0(3, 2);
    w0 << 0.25, 0.1, 0.25, 0.2, 0.5, 0.7;
    Eigen::MatrixXd w1(3, 2);
    w1 << 0.2, 0.6, 0.3, 0.3, 0.5, 0.1;
    Eigen::VectorXd mixture(2);
    mixture << 0.4, 0.6;
    return JointModel(std::move(dims), {w0, w1}, mixture);
}

ModelMetadata full_metadata() {
    ModelMetadata metadata;
    metadata.seed = 42;
    metadata.config_hash = "deadbeef00112233";
    metadata.column_names = {"x", "c"};
    metadata.state_maps = {{}, {{"no", 0}, {"yes", 1}, {"maybe", 2}}};
    metadata.transforms = {{1.5, 0.25}, {0.0, 1.0}};
    metadata.label_dim = 1;
    return metadata;
}

} // namespace

TEST_CASE("a saved model loads back with its metadata") {
    const JointModel model = two_dim_model();
    const std::string path = path_of("model_roundtrip.json");
    save_model(model, path, full_metadata());
    const LoadedModel loaded = load_model(path);

    REQUIRE(loaded.model.num_dims() == 2);
    REQUIRE(loaded.model.rank() == 2);
    for (int n = 0; n < 2; ++n) {
        CHECK((loaded.model.weights(n) - model.weights(n)).cwiseAbs().maxCoeff() <= 1e-14);
        REQUIRE(loaded.model.dim(n).dictionary.size() == model.dim(n).dictionary.size());
        for (int l = 0; l < model.dim(n).dictionary.size(); ++l)
            CHECK(loaded.model.dim(n).dictionary.atom(l).describe() ==
                  model.dim(n).dictionary.atom(l).describe());
    }
    CHECK((loaded.model.mixture() - model.mixture()).cwiseAbs().maxCoeff() <= 1e-14);
    CHECK(loaded.model.dim(0).grid.edges() == model.dim(0).grid.edges());

    Eigen::VectorXd x(2);
    x << 0.75, 2.0;
    CHECK(loaded.model.pdf(x) == doctest::Approx(model.pdf(x)).epsilon(1e-12));

    const ModelMetadata expected = full_metadata();
    CHECK(loaded.metadata.seed == expected.seed);
    CHECK(loaded.metadata.config_hash == expected.config_hash);
    CHECK(loaded.metadata.column_names == expected.column_names);
    CHECK(loaded.metadata.state_maps == expected.state_maps);
    REQUIRE(loaded.metadata.transforms.size() == 2);
    CHECK(loaded.metadata.transforms[0].offset == 1.5);
    CHECK(loaded.metadata.transforms[0].scale == 0.25);
    REQUIRE(loaded.metadata.label_dim.has_value());
    CHECK(*loaded.metadata.label_dim == 1);
}

TEST_CASE("a rank-one model survives the round trip") {
    Dictionary dict({Atom::uniform(0.0, 1.0)}, ContinuousDomain{0.0, 1.0});
    std::vector<ModelDimension> dims;
    dims.emplace_back(std::move(dict), Grid::continuous({0.0, 0.5, 1.0}));
    dims.emplace_back(Dictionary::identity(2), Grid::discrete(2));
    Eigen::MatrixXd w1(2, 1);
    w1 << 0.75, 0.25;
    const JointModel model(std::move(dims), {Eigen::MatrixXd::Ones(1, 1), w1},
                           Eigen::VectorXd::Ones(1));

    const std::string path = path_of("model_rank1.json");
    save_model(model, path);
    const LoadedModel loaded = load_model(path);
    CHECK(loaded.model.rank() == 1);
    CHECK(loaded.metadata.config_hash.empty());
    CHECK_FALSE(loaded.metadata.label_dim.has_value());
}

TEST_CASE("damaged model files are rejected") {
    const std::string good = path_of("model_good.json");
    save_model(two_dim_model(), good, full_metadata());
    const std::string text = read_text(good);

    CHECK_THROWS_AS(load_model(path_of("model_absent.json")), data_error);

    write_file(path_of("model_junk.json"), "not json at all");
    CHECK_THROWS_AS(load_model(path_of("model_junk.json")), model_format_error);

    write_file(path_of("model_other.json"), "{\"hello\": 1}");
    CHECK_THROWS_AS(load_model(path_of("model_other.json")), model_format_error);

    std::string versioned = text;
    const auto at = versioned.find("\"version\": 1");
    REQUIRE(at != std::string::npos);
    versioned.replace(at, 12, "\"version\": 2");
    write_file(path_of("model_version.json"), versioned);
    CHECK_THROWS_AS(load_model(path_of("model_version.json")), model_format_error);

    write_file(path_of("model_truncated.json"), text.substr(0, text.size() / 2));
    CHECK_THROWS_AS(load_model(path_of("model_truncated.json")), model_format_error);

    json root = json::parse(text);
    root["dims"][0]["weights"][0][0] = 0.9;
    write_file(path_of("model_off_simplex.json"), root.dump(2));
    CHECK_THROWS_AS(load_model(path_of("model_off_simplex.json")), model_format_error);

    root = json::parse(text);
    root["dims"][0]["weights"][0] = json::array({0.1});
    write_file(path_of("model_ragged.json"), root.dump(2));
    CHECK_THROWS_AS(load_model(path_of("model_ragged.json")), model_format_error);
}

namespace {

json base_run_config() {
    json config;
    config["dataset"] = path_of("train.csv");
    config["label_column"] = "c";
    config["columns"] = json::array({json{{"name", "x"}, {"type", "continuous"}},
                                     json{{"name", "c"}, {"type", "discrete"}, {"num_states", 2}}});
    config["dictionaries"] = json::array(
        {json{{"kind", "grid"},
              {"families", json::array({json{{"family", "gaussian"}, {"param", 0.5}}})},
              {"spacing", 1.0},
              {"uniform_count", 2}},
         json{{"kind", "identity"}}});
    config["fit"] = {{"rank", 2},          {"stage1_max_iters", 300},
                     {"stage3_max_sweeps", 10}, {"stage3_inner_iters", 10},
                     {"histogram_bins", 8},     {"coverage_threshold", 0.4},
                     {"seed", 3}};
    config["model_output"] = path_of("model_cli.json");
    config["trace_output"] = path_of("trace_cli.csv");
    return config;
}

void write_band_csv(const std::string& path, long rows, std::uint64_t seed) {
    Rng rng(seed);
    std::ostringstream out;
    out.precision(17);
    out << "x,c\n";
    for (long r = 0; r < rows; ++r) {
        const bool upper = rng.uniform01() < 0.5;
        out << (upper ? 2.0 + rng.uniform01() : rng.uniform01()) << "," << (upper ? 1 : 0) << "\n";
    }
    write_file(path, out.str());
}

} // namespace

TEST_CASE("run configs parse with defaults and reject unknown keys") {
    const std::string path = path_of("run_config.json");
    write_file(path, base_run_config().dump(2));
    const RunConfig config = RunConfig::from_file(path);
    CHECK(config.dataset_path == path_of("train.csv"));
    REQUIRE(config.label_column.has_value());
    CHECK(*config.label_column == "c");
    REQUIRE(config.columns.size() == 2);
    CHECK(config.columns[1].meta.num_states == 2);
    REQUIRE(config.dictionaries.size() == 2);
    CHECK(config.dictionaries[0].kind == DictionaryRecipe::Kind::kGrid);
    CHECK(config.dictionaries[1].kind == DictionaryRecipe::Kind::kIdentity);
    CHECK(config.fit.rank == 2);
    CHECK(config.fit.stage3_tol == FitConfig().stage3_tol);
    CHECK(config.trace_output == path_of("trace_cli.csv"));

    auto reject = [&](json broken, const std::string& name) {
        const std::string bad_path = path_of(name);
        write_file(bad_path, broken.dump(2));
        CHECK_THROWS_AS(RunConfig::from_file(bad_path), config_error);
    };

    json broken = base_run_config();
    broken["mystery"] = 1;
    reject(broken, "cfg_unknown_top.json");

    broken = base_run_config();
    broken["fit"]["learning_rate"] = 0.1;
    reject(broken, "cfg_unknown_fit.json");

    broken = base_run_config();
    broken["columns"][0]["units"] = "cm";
    reject(broken, "cfg_unknown_column.json");

    broken = base_run_config();
    broken["columns"][0]["num_states"] = 4;
    reject(broken, "cfg_states_on_continuous.json");

    broken = base_run_config();
    broken["columns"] = json::array();
    reject(broken, "cfg_no_columns.json");

    broken = base_run_config();
    broken["dictionaries"].erase(1);
    reject(broken, "cfg_dict_count.json");

    broken = base_run_config();
    broken["dictionaries"][0]["kind"] = "magic";
    reject(broken, "cfg_dict_kind.json");

    broken = base_run_config();
    broken["dictionaries"][0]["families"][0]["family"] = "cauchy";
    reject(broken, "cfg_family.json");

    broken = base_run_config();
    broken["dictionaries"][0]["range"] = json::array({1.0});
    reject(broken, "cfg_range.json");

    broken = base_run_config();
    broken["fit"]["rank"] = 0;
    reject(broken, "cfg_bad_fit.json");

    broken = base_run_config();
    broken.erase("dataset");
    reject(broken, "cfg_missing_dataset.json");

    write_file(path_of("cfg_syntax.json"), "{oops");
    CHECK_THROWS_AS(RunConfig::from_file(path_of("cfg_syntax.json")), config_error);
    CHECK_THROWS_AS(RunConfig::from_file(path_of("cfg_absent.json")), data_error);
}

TEST_CASE("the config hash is stable and sensitive") {
    const std::string path = path_of("hash_config.json");
    write_file(path, base_run_config().dump(2));
    const std::string first = RunConfig::from_file(path).canonical_hash();
    const std::string second = RunConfig::from_file(path).canonical_hash();
    CHECK(first == second);
    CHECK(first.size() == 16);

    json changed = base_run_config();
    changed["fit"]["rank"] = 3;
    write_file(path_of("hash_config2.json"), changed.dump(2));
    CHECK(RunConfig::from_file(path_of("hash_config2.json")).canonical_hash() != first);
}

TEST_CASE("dictionary recipes build the documented presets") {
    DictionaryRecipe identity;
    identity.kind = DictionaryRecipe::Kind::kIdentity;
    CHECK(identity.build(0.0, 1.0, 3).size() == 3);
    CHECK(identity.build(0.0, 1.0, 3).is_discrete());
    CHECK_THROWS_AS(identity.build(0.0, 1.0, 0), config_error);

    DictionaryRecipe preset;
    preset.kind = DictionaryRecipe::Kind::kNamedPreset;
    preset.preset_name = "seeds";
    const Dictionary seeds = preset.build(0.0, 0.0, 0);
    CHECK(seeds.size() == 9);
    int uniforms = 0;
    for (int l = 0; l < seeds.size(); ++l)
        if (std::holds_alternative<UniformAtom>(seeds.atom(l).spec())) ++uniforms;
    CHECK(uniforms == 2);

    preset.preset_name = "wifi";
    CHECK(preset.build(0.0, 0.0, 0).size() == 14);
    preset.preset_name = "kth";
    CHECK(preset.build(0.0, 0.0, 0).size() == 26);
    preset.preset_name = "unheard-of";
    CHECK_THROWS_AS(preset.build(0.0, 0.0, 0), config_error);

    DictionaryRecipe grid;
    grid.kind = DictionaryRecipe::Kind::kGrid;
    grid.families = {{GridPresetFamily::Kind::kGaussian, 1.0}};
    grid.spacing = 2.0;
    grid.range = {{0.0, 4.0}};
    const Dictionary ranged = grid.build(100.0, 200.0, 0);
    CHECK(ranged.size() == 3);
    grid.range.reset();
    CHECK(grid.build(0.0, 4.0, 0).size() == 3);
}

TEST_CASE("the command line fits, evaluates, classifies and samples") {
    write_band_csv(path_of("train.csv"), 300, 17);
    const std::string config_path = path_of("cli_fit.json");
    write_file(config_path, base_run_config().dump(2));

    REQUIRE(run_cli({"fit", "--config", config_path}) == 0);
    const std::string model_text = read_text(path_of("model_cli.json"));
    const std::string trace_text = read_text(path_of("trace_cli.csv"));
    CHECK(trace_text.rfind("stage,unit,iteration,objective\n", 0) == 0);

    const LoadedModel loaded = load_model(path_of("model_cli.json"));
    CHECK(loaded.model.num_dims() == 2);
    CHECK(loaded.metadata.column_names == std::vector<std::string>{"x", "c"});
    REQUIRE(loaded.metadata.label_dim.has_value());
    CHECK(*loaded.metadata.label_dim == 1);
    CHECK(loaded.metadata.config_hash == RunConfig::from_file(config_path).canonical_hash());

    REQUIRE(run_cli({"fit", "--config", config_path}) == 0);
    CHECK(read_text(path_of("model_cli.json")) == model_text);
    CHECK(read_text(path_of("trace_cli.csv")) == trace_text);

    REQUIRE(run_cli({"eval-density", "--model", path_of("model_cli.json"), "--points",
                     path_of("train.csv"), "--output", path_of("densities.csv")}) == 0);
    std::istringstream densities(read_text(path_of("densities.csv")));
    std::string line;
    REQUIRE(std::getline(densities, line));
    CHECK(line == "density");
    long rows = 0;
    while (std::getline(densities, line)) {
        CHECK(std::stod(line) >= 0.0);
        ++rows;
    }
    CHECK(rows == 300);

    REQUIRE(run_cli({"classify", "--model", path_of("model_cli.json"), "--data",
                     path_of("train.csv"), "--output", path_of("predictions.csv")}) == 0);
    CHECK(read_text(path_of("predictions.csv")).rfind("row,predicted,truth\n", 0) == 0);

    REQUIRE(run_cli({"sample", "--model", path_of("model_cli.json"), "--count", "5", "--seed",
                     "9", "--output", path_of("cli_samples.csv")}) == 0);
    const std::string samples = read_text(path_of("cli_samples.csv"));
    CHECK(samples.rfind("x,c\n", 0) == 0);
    CHECK(std::count(samples.begin(), samples.end(), '\n') == 6);

    REQUIRE(run_cli({"sample", "--model", path_of("model_cli.json"), "--count", "5", "--seed",
                     "9", "--output", path_of("cli_samples2.csv")}) == 0);
    CHECK(read_text(path_of("cli_samples2.csv")) == samples);
}

TEST_CASE("the synth command reruns byte for byte when untimed") {
    json config;
    config["spec"] = {{"rank", 2},
                      {"dims", json::array({"gaussian", "discrete:3"})},
                      {"atoms_per_component", 2},
                      {"grid_bins", 8},
                      {"seed", 5}};
    config["sample_sizes"] = json::array({200});
    config["trials"] = 1;
    config["test_samples"] = 100;
    config["mode"] = "oracle";
    config["fit"] = {{"rank", 2},          {"stage1_max_iters", 200},
                     {"stage3_max_sweeps", 8},  {"stage3_inner_iters", 8},
                     {"histogram_bins", 8},     {"coverage_threshold", 0.4}};
    config["timing"] = false;
    const std::string config_path = path_of("synth_config.json");
    write_file(config_path, config.dump(2));

    REQUIRE(run_cli({"synth", "--config", config_path, "--output", path_of("summary.csv"),
                     "--rows-output", path_of("rows.csv")}) == 0);
    const std::string summary = read_text(path_of("summary.csv"));
    const std::string trial_rows = read_text(path_of("rows.csv"));
    CHECK(summary.rfind("sample_size,trials,mean_d,std_d,seconds\n", 0) == 0);
    CHECK(summary.find("\n200,1,") != std::string::npos);
    CHECK(trial_rows.rfind("sample_size,trial,d_value,d_zero_count,seconds\n", 0) == 0);

    REQUIRE(run_cli({"synth", "--config", config_path, "--output", path_of("summary2.csv"),
                     "--rows-output", path_of("rows2.csv")}) == 0);
    CHECK(read_text(path_of("summary2.csv")) == summary);
    CHECK(read_text(path_of("rows2.csv")) == trial_rows);

    json broken = config;
    broken["mode"] = "psychic";
    write_file(path_of("synth_bad.json"), broken.dump(2));
    CHECK(run_cli({"synth", "--config", path_of("synth_bad.json")}) == 2);
}

TEST_CASE("the inspect command summarizes a raw csv") {
    write_file(path_of("inspect.csv"), "u,v\n1,4\n2,5\n3,6\n");
    CHECK(run_cli({"inspect", "--data", path_of("inspect.csv"), "--bins", "4"}) == 0);
    CHECK(run_cli({"inspect"}) == 2);
    CHECK(run_cli({"inspect", "--data", path_of("inspect.csv"), "--config",
                   path_of("cli_fit.json")}) == 2);
}

TEST_CASE("exit codes distinguish usage, config and data failures") {
    save_model(two_dim_model(), path_of("model_unlabeled.json"));

    CHECK(run_cli({}) == 1);
    CHECK(run_cli({"conjure"}) == 1);
    CHECK(run_cli({"fit"}) == 1);
    CHECK(run_cli({"--help"}) == 0);
    CHECK(run_cli({"sample", "--model", path_of("model_unlabeled.json"), "--count", "0"}) == 1);

    CHECK(run_cli({"fit", "--config", path_of("no_such_config.json")}) == 2);
    write_file(path_of("cfg_broken.json"), "{oops");
    CHECK(run_cli({"fit", "--config", path_of("cfg_broken.json")}) == 2);
    CHECK(run_cli({"eval-density", "--model", path_of("model_unlabeled.json"), "--points",
                   path_of("no_points.csv")}) == 2);

    write_file(path_of("classify_points.csv"), "x,c\n0.5,1\n");
    CHECK(run_cli({"classify", "--model", path_of("model_unlabeled.json"), "--data",
                   path_of("classify_points.csv")}) == 2);
}
