#pragma once

#include <cmath>
#include <vector>

#include <Eigen/Dense>

#include "jupad/histogram.hpp"

namespace testsupport {

// Gaussian naive Bayes with per-class feature means and variances, as a
// reference classifier for the real-data protocol.
class GaussianNaiveBayes {
  public:
    GaussianNaiveBayes(const jupad::Dataset& train, int label_dim) : label_dim_(label_dim) {
        const int classes = train.column(label_dim).num_states;
        const int cols = train.num_cols();
        prior_.assign(static_cast<std::size_t>(classes), 0.0);
        mean_.assign(static_cast<std::size_t>(classes),
                     std::vector<double>(static_cast<std::size_t>(cols), 0.0));
        var_ = mean_;

        std::vector<long> count(static_cast<std::size_t>(classes), 0);
        for (long r = 0; r < train.num_rows(); ++r)
            ++count[static_cast<std::size_t>(train.label_state(r))];
        for (int c = 0; c < classes; ++c)
            prior_[static_cast<std::size_t>(c)] =
                static_cast<double>(count[static_cast<std::size_t>(c)]) /
                static_cast<double>(train.num_rows());

        for (long r = 0; r < train.num_rows(); ++r) {
            const auto c = static_cast<std::size_t>(train.label_state(r));
            for (int d = 0; d < cols; ++d)
                mean_[c][static_cast<std::size_t>(d)] += train.value(r, d);
        }
        for (int c = 0; c < classes; ++c)
            for (int d = 0; d < cols; ++d)
                mean_[static_cast<std::size_t>(c)][static_cast<std::size_t>(d)] /=
                    std::max<double>(1.0, static_cast<double>(count[static_cast<std::size_t>(c)]));
        for (long r = 0; r < train.num_rows(); ++r) {
            const auto c = static_cast<std::size_t>(train.label_state(r));
            for (int d = 0; d < cols; ++d) {
                const double diff = train.value(r, d) - mean_[c][static_cast<std::size_t>(d)];
                var_[c][static_cast<std::size_t>(d)] += diff * diff;
            }
        }
        for (int c = 0; c < classes; ++c)
            for (int d = 0; d < cols; ++d) {
                double& v = var_[static_cast<std::size_t>(c)][static_cast<std::size_t>(d)];
                v = v / std::max<double>(1.0, static_cast<double>(count[static_cast<std::size_t>(c)])) +
                    1e-9;
            }
    }

    int classify(const Eigen::VectorXd& x) const {
        int best = 0;
        double best_score = -std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < prior_.size(); ++c) {
            if (prior_[c] <= 0.0) continue;
            double score = std::log(prior_[c]);
            for (int d = 0; d < x.size(); ++d) {
                if (d == label_dim_) continue;
                const double m = mean_[c][static_cast<std::size_t>(d)];
                const double v = var_[c][static_cast<std::size_t>(d)];
                const double diff = x[d] - m;
                score += -0.5 * std::log(2.0 * M_PI * v) - 0.5 * diff * diff / v;
            }
            if (score > best_score) {
                best_score = score;
                best = static_cast<int>(c);
            }
        }
        return best;
    }

    double accuracy(const jupad::Dataset& test) const {
        long hits = 0;
        for (long r = 0; r < test.num_rows(); ++r) {
            Eigen::VectorXd x = test.samples().row(r).transpose();
            if (classify(x) == test.label_state(r)) ++hits;
        }
        return static_cast<double>(hits) / static_cast<double>(test.num_rows());
    }

  private:
    int label_dim_;
    std::vector<double> prior_;
    std::vector<std::vector<double>> mean_;
    std::vector<std::vector<double>> var_;
};

} // namespace testsupport
