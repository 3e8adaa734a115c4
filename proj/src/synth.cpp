#include "jupad/synth.hpp"

#include <chrono>
#include <cmath>
#include <limits>

#include "jupad/errors.hpp"
#include "jupad/histogram.hpp"
#include "jupad/rng.hpp"

namespace jupad {

void SynthSpec::validate() const {
    if (rank < 1) throw config_error("rank must be at least 1");
    if (dims.empty()) throw config_error("at least one dimension recipe is required");
    for (const auto& recipe : dims)
        if (recipe.family == DimensionRecipe::Family::kDiscreteUniform && recipe.num_states < 2)
            throw config_error("discrete dimensions need at least two states");
    if (!(mean_low < mean_high)) throw config_error("mean_low must be below mean_high");
    if (!(shape_low > 0.0) || !(shape_low <= shape_high))
        throw config_error("the shape range must be positive and ordered");
    if (atoms_per_component < 1) throw config_error("atoms_per_component must be at least 1");
    if (grid_bins < 2) throw config_error("grid_bins must be at least 2");
}

JointModel generate_ground_truth(const SynthSpec& spec) {
    spec.validate();
    Rng rng(mix_seed(spec.seed, 0x67u));
    const int f = spec.rank;

    Eigen::VectorXd mixture(f);
    for (int r = 0; r < f; ++r) mixture[r] = rng.uniform01();
    mixture /= mixture.sum();

    std::vector<ModelDimension> dims;
    std::vector<Eigen::MatrixXd> weights;
    dims.reserve(spec.dims.size());
    weights.reserve(spec.dims.size());

    for (const auto& recipe : spec.dims) {
        if (recipe.family == DimensionRecipe::Family::kDiscreteUniform) {
            const int states = recipe.num_states;
            Eigen::MatrixXd b(states, f);
            for (int r = 0; r < f; ++r) {
                for (int s = 0; s < states; ++s) b(s, r) = rng.uniform01();
                b.col(r) /= b.col(r).sum();
            }
            dims.emplace_back(Dictionary::identity(states), Grid::discrete(states));
            weights.push_back(std::move(b));
            continue;
        }

        // Each component owns its own block of freshly drawn atoms, so the
        // mode factor is block sparse by construction.
        const int per = spec.atoms_per_component;
        const int num_atoms = f * per;
        std::vector<Atom> atoms;
        atoms.reserve(static_cast<std::size_t>(num_atoms));
        Eigen::MatrixXd b = Eigen::MatrixXd::Zero(num_atoms, f);
        for (int r = 0; r < f; ++r) {
            for (int i = 0; i < per; ++i) {
                const double mean = rng.uniform(spec.mean_low, spec.mean_high);
                const double shape = rng.uniform(spec.shape_low, spec.shape_high);
                atoms.push_back(recipe.family == DimensionRecipe::Family::kGaussianMix
                                    ? Atom::gaussian(mean, shape)
                                    : Atom::laplacian(mean, shape));
            }
            Eigen::VectorXd wts(per);
            for (int i = 0; i < per; ++i) wts[i] = rng.uniform01();
            b.block(static_cast<Eigen::Index>(r) * per, r, per, 1) = wts / wts.sum();
        }

        double low = std::numeric_limits<double>::infinity();
        double high = -std::numeric_limits<double>::infinity();
        for (const auto& atom : atoms) {
            const auto [lo, hi] = atom.support_hint();
            low = std::min(low, lo);
            high = std::max(high, hi);
        }
        Dictionary dict(std::move(atoms), ContinuousDomain{low, high});

        std::vector<double> edges(static_cast<std::size_t>(spec.grid_bins) + 1);
        const double width = (high - low) / spec.grid_bins;
        for (int i = 0; i <= spec.grid_bins; ++i) edges[static_cast<std::size_t>(i)] = low + i * width;
        edges.back() = high;

        dims.emplace_back(std::move(dict), Grid::continuous(std::move(edges)));
        weights.push_back(std::move(b));
    }

    return JointModel(std::move(dims), std::move(weights), std::move(mixture));
}

DMetric d_metric(const JointModel& estimated, const JointModel& truth,
                 const Eigen::MatrixXd& test_points) {
    if (estimated.num_dims() != truth.num_dims())
        throw config_error("the models disagree on the number of dimensions");
    if (test_points.cols() != truth.num_dims())
        throw config_error("test points must have one column per dimension");
    if (test_points.rows() < 1) throw config_error("at least one test point is required");

    DMetric out;
    double sum = 0.0;
    for (Eigen::Index i = 0; i < test_points.rows(); ++i) {
        const Eigen::VectorXd x = test_points.row(i).transpose();
        const double f_true = truth.pdf(x);
        const double f_hat = estimated.pdf(x);
        if (f_hat <= 0.0 || f_true <= 0.0) {
            ++out.zero_count;
            continue;
        }
        sum += std::abs(std::log(f_hat / f_true));
    }
    out.value = out.zero_count > 0 ? std::numeric_limits<double>::infinity()
                                   : sum / static_cast<double>(test_points.rows());
    return out;
}

namespace {

std::vector<Dictionary> experiment_dictionaries(const ExperimentConfig& config,
                                                const JointModel& truth,
                                                const Eigen::MatrixXd& train) {
    std::vector<Dictionary> out;
    out.reserve(config.spec.dims.size());
    for (std::size_t n = 0; n < config.spec.dims.size(); ++n) {
        const auto& recipe = config.spec.dims[n];
        if (recipe.family == DimensionRecipe::Family::kDiscreteUniform) {
            out.push_back(Dictionary::identity(recipe.num_states));
            continue;
        }
        if (config.mode == ExperimentConfig::DictionaryMode::kOracle) {
            out.push_back(truth.dim(static_cast<int>(n)).dictionary);
            continue;
        }
        const auto column = train.col(static_cast<Eigen::Index>(n));
        GridPresetFamily family;
        family.kind = recipe.family == DimensionRecipe::Family::kGaussianMix
                          ? GridPresetFamily::Kind::kGaussian
                          : GridPresetFamily::Kind::kLaplacian;
        family.param = config.preset_param;
        out.push_back(build_dictionary_grid_preset(column.minCoeff(), column.maxCoeff(),
                                                   config.preset_spacing, {family},
                                                   config.preset_uniforms));
    }
    return out;
}

} // namespace

ExperimentTable run_experiment(const ExperimentConfig& config) {
    config.spec.validate();
    config.fit.validate();
    if (config.sample_sizes.empty()) throw config_error("at least one sample size is required");
    for (long s : config.sample_sizes)
        if (s < 1) throw config_error("sample sizes must be positive");
    if (config.trials < 1) throw config_error("trials must be at least 1");
    if (config.test_samples < 1) throw config_error("test_samples must be at least 1");

    const JointModel truth = generate_ground_truth(config.spec);
    const Eigen::MatrixXd test_points =
        truth.sample(config.test_samples, mix_seed(config.spec.seed, 0x7465u));

    std::vector<ColumnMeta> columns;
    columns.reserve(config.spec.dims.size());
    for (const auto& recipe : config.spec.dims)
        columns.push_back(recipe.family == DimensionRecipe::Family::kDiscreteUniform
                              ? ColumnMeta::discrete(recipe.num_states)
                              : ColumnMeta::continuous());

    ExperimentTable table;
    for (long size : config.sample_sizes) {
        double cell_seconds = 0.0;
        std::vector<double> d_values;
        d_values.reserve(static_cast<std::size_t>(config.trials));
        for (int trial = 0; trial < config.trials; ++trial) {
            const Eigen::MatrixXd train = truth.sample(
                size, mix_seed(config.spec.seed, 0xd47au + static_cast<std::uint64_t>(size),
                               static_cast<std::uint64_t>(trial)));
            const Dataset dataset(train, columns);
            const auto dictionaries = experiment_dictionaries(config, truth, train);

            FitConfig fit_config = config.fit;
            fit_config.seed = mix_seed(config.fit.seed, static_cast<std::uint64_t>(size),
                                       0x517u + static_cast<std::uint64_t>(trial));

            const auto started = std::chrono::steady_clock::now();
            const FitOutput fitted = fit(dataset, dictionaries, fit_config);
            const double seconds =
                config.timing
                    ? std::chrono::duration<double>(std::chrono::steady_clock::now() - started)
                          .count()
                    : 0.0;

            const DMetric d = d_metric(fitted.model, truth, test_points);
            table.rows.push_back({size, trial, d.value, d.zero_count, seconds});
            d_values.push_back(d.value);
            cell_seconds += seconds;
        }

        ExperimentSummaryRow summary;
        summary.sample_size = size;
        summary.seconds = cell_seconds;
        bool finite = true;
        for (double v : d_values) finite = finite && std::isfinite(v);
        if (finite) {
            double mean = 0.0;
            for (double v : d_values) mean += v;
            mean /= static_cast<double>(d_values.size());
            double var = 0.0;
            for (double v : d_values) var += (v - mean) * (v - mean);
            summary.mean_d = mean;
            summary.std_d =
                d_values.size() > 1 ? std::sqrt(var / static_cast<double>(d_values.size() - 1)) : 0.0;
        } else {
            summary.mean_d = std::numeric_limits<double>::infinity();
            summary.std_d = 0.0;
        }
        table.summary.push_back(summary);
    }
    return table;
}

} // namespace jupad
