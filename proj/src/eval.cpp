#include "jupad/eval.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "jupad/errors.hpp"
#include "jupad/rng.hpp"

namespace jupad {

namespace {

void shuffle_rows(std::vector<long>& rows, Rng& rng) {
    for (std::size_t i = rows.size(); i > 1; --i) {
        const auto j = static_cast<std::size_t>(
            std::min<double>(static_cast<double>(i) - 1.0, rng.uniform01() * static_cast<double>(i)));
        std::swap(rows[i - 1], rows[j]);
    }
}

// Largest-remainder allocation of n rows to the three parts; every part
// stays within one row of its exact share.
std::array<long, 3> allocate(long n, const std::array<double, 3>& fractions) {
    std::array<long, 3> counts{};
    std::array<double, 3> remainders{};
    long assigned = 0;
    for (int p = 0; p < 3; ++p) {
        const double target = fractions[static_cast<std::size_t>(p)] * static_cast<double>(n);
        counts[static_cast<std::size_t>(p)] = static_cast<long>(std::floor(target));
        remainders[static_cast<std::size_t>(p)] = target - std::floor(target);
        assigned += counts[static_cast<std::size_t>(p)];
    }
    for (long left = n - assigned; left > 0; --left) {
        int best = 0;
        for (int p = 1; p < 3; ++p)
            if (remainders[static_cast<std::size_t>(p)] > remainders[static_cast<std::size_t>(best)])
                best = p;
        ++counts[static_cast<std::size_t>(best)];
        remainders[static_cast<std::size_t>(best)] = -1.0;
    }
    return counts;
}

} // namespace

SplitResult split(const Dataset& dataset, double train_fraction, double validation_fraction,
                  double test_fraction, std::uint64_t seed) {
    const std::array<double, 3> fractions{train_fraction, validation_fraction, test_fraction};
    for (double f : fractions)
        if (!(f > 0.0)) throw config_error("split fractions must be positive");
    if (std::abs(train_fraction + validation_fraction + test_fraction - 1.0) > 1e-9)
        throw config_error("split fractions must sum to 1");

    std::vector<std::vector<long>> groups;
    if (dataset.label_column()) {
        const int states = dataset.column(*dataset.label_column()).num_states;
        groups.resize(static_cast<std::size_t>(states));
        for (long row = 0; row < dataset.num_rows(); ++row)
            groups[static_cast<std::size_t>(dataset.label_state(row))].push_back(row);
    } else {
        groups.emplace_back();
        for (long row = 0; row < dataset.num_rows(); ++row) groups[0].push_back(row);
    }

    std::vector<long> parts[3];
    for (std::size_t g = 0; g < groups.size(); ++g) {
        auto& rows = groups[g];
        if (rows.size() < 3) {
            if (dataset.label_column())
                throw data_error("class " + std::to_string(g) + " has only " +
                                 std::to_string(rows.size()) + " rows; the split needs 3 per class");
            throw data_error("the dataset has fewer rows than split parts");
        }
        Rng rng(mix_seed(seed, 0x5f17u, g));
        shuffle_rows(rows, rng);
        const auto counts = allocate(static_cast<long>(rows.size()), fractions);
        std::size_t cursor = 0;
        for (int p = 0; p < 3; ++p)
            for (long i = 0; i < counts[static_cast<std::size_t>(p)]; ++i)
                parts[p].push_back(rows[cursor++]);
    }
    for (auto& part : parts) std::sort(part.begin(), part.end());

    return {dataset.take_rows(parts[0]), dataset.take_rows(parts[1]), dataset.take_rows(parts[2])};
}

ClassificationScore classification_accuracy(const JointModel& model, const Dataset& test,
                                            int label_dim) {
    if (label_dim < 0 || label_dim >= test.num_cols())
        throw config_error("label dimension is out of range");
    if (!test.column(label_dim).is_discrete())
        throw config_error("the label column must be discrete");
    if (model.num_dims() != test.num_cols())
        throw config_error("the model and the test set disagree on the number of dimensions");

    long correct = 0;
    long wrong = 0;
    long zeros = 0;
    for (long row = 0; row < test.num_rows(); ++row) {
        const Eigen::VectorXd x = test.samples().row(row).transpose();
        const int truth = static_cast<int>(test.value(row, label_dim));
        try {
            const MapClassification result = model.map_classify(label_dim, x);
            if (result.label == truth)
                ++correct;
            else
                ++wrong;
        } catch (const zero_density_error&) {
            ++zeros;
        }
    }
    const auto rows = test.num_rows();
    ClassificationScore score;
    score.rows = rows;
    score.accuracy = static_cast<double>(correct) / static_cast<double>(rows);
    score.error_fraction = static_cast<double>(wrong) / static_cast<double>(rows);
    score.zero_density_fraction = static_cast<double>(zeros) / static_cast<double>(rows);
    return score;
}

int select_rank(const Dataset& train, const Dataset& validation,
                const std::vector<Dictionary>& dictionaries, const std::vector<int>& candidates,
                const FitConfig& config) {
    if (candidates.empty()) throw config_error("at least one candidate rank is required");
    if (!train.label_column() || !validation.label_column())
        throw config_error("rank selection needs a label column on both datasets");
    if (*train.label_column() != *validation.label_column())
        throw config_error("the datasets disagree on the label column");
    const int label_dim = *train.label_column();

    std::vector<int> order = candidates;
    std::sort(order.begin(), order.end());

    int best_rank = -1;
    double best_accuracy = -1.0;
    for (int rank : order) {
        FitConfig candidate_config = config;
        candidate_config.rank = rank;
        double accuracy = 0.0;
        try {
            const FitOutput fitted = fit(train, dictionaries, candidate_config);
            accuracy = classification_accuracy(fitted.model, validation, label_dim).accuracy;
        } catch (const numeric_error&) {
            continue;
        } catch (const split_error&) {
            continue;
        }
        if (accuracy > best_accuracy) {
            best_accuracy = accuracy;
            best_rank = rank;
        }
    }
    if (best_rank < 0) throw numeric_error("every candidate rank failed to fit");
    return best_rank;
}

} // namespace jupad
