#include "jupad/model.hpp"

#include <cmath>
#include <string>

#include "jupad/errors.hpp"
#include "jupad/rng.hpp"

namespace jupad {

namespace {

// Checks a column vector against the simplex at the given tolerance, clamps
// tiny negatives and renormalizes to an exact unit sum.
void enforce_simplex(Eigen::Ref<Eigen::VectorXd> column, double tolerance, const char* what) {
    double sum = 0.0;
    for (Eigen::Index i = 0; i < column.size(); ++i) {
        double v = column[i];
        if (!std::isfinite(v) || v < -tolerance) {
            throw config_error(std::string(what) + " has a negative or non-finite entry");
        }
        if (v < 0.0) {
            v = 0.0;
            column[i] = 0.0;
        }
        sum += v;
    }
    if (std::abs(sum - 1.0) > tolerance) {
        throw config_error(std::string(what) + " is off the simplex: sum = " + std::to_string(sum));
    }
    column /= sum;
}

} // namespace

Marginal1D::Marginal1D(Dictionary dictionary, DiscretizedDictionary discretized,
                       Eigen::VectorXd atom_weights)
    : dictionary_(std::move(dictionary)), atom_weights_(std::move(atom_weights)) {
    bin_masses_ = discretized.masses * atom_weights_;
}

double Marginal1D::density(double x) const {
    double value = 0.0;
    for (int l = 0; l < dictionary_.size(); ++l) {
        value += atom_weights_[l] * dictionary_.atom(l).pdf(x);
    }
    return value;
}

Eigen::VectorXd Marginal1D::pmf() const {
    if (!dictionary_.is_discrete()) {
        throw config_error("pmf is only defined for discrete dimensions");
    }
    Eigen::VectorXd masses = Eigen::VectorXd::Zero(dictionary_.num_states());
    for (int l = 0; l < dictionary_.size(); ++l) {
        const auto& ind = std::get<DiscreteIndicatorAtom>(dictionary_.atom(l).spec());
        masses[ind.state] += atom_weights_[l];
    }
    return masses;
}

JointModel::JointModel(std::vector<ModelDimension> dims, std::vector<Eigen::MatrixXd> weights,
                       Eigen::VectorXd mixture, double tolerance)
    : dims_(std::move(dims)), weights_(std::move(weights)), mixture_(std::move(mixture)) {
    if (dims_.empty() || weights_.size() != dims_.size()) {
        throw config_error("model needs one weight matrix per dimension");
    }
    const int f = static_cast<int>(mixture_.size());
    if (f < 1) {
        throw config_error("model rank must be at least 1");
    }
    for (std::size_t n = 0; n < dims_.size(); ++n) {
        Eigen::MatrixXd& b = weights_[n];
        if (b.rows() != dims_[n].dictionary.size() || b.cols() != f) {
            throw config_error("weight matrix " + std::to_string(n) + " has the wrong shape");
        }
        for (int r = 0; r < f; ++r) {
            enforce_simplex(b.col(r), tolerance, "weight column");
        }
    }
    enforce_simplex(mixture_, tolerance, "mixture weight vector");
}

Eigen::MatrixXd JointModel::mode_factor(int n) const {
    return dim(n).discretized.masses * weights(n);
}

double JointModel::pdf(const Eigen::VectorXd& x) const {
    if (x.size() != num_dims()) {
        throw config_error("point dimension does not match the model");
    }
    // Per-dimension atom pdf values feed every component, so evaluate the
    // factor vectors (D_n B_n)(x_n) once each.
    const int f = rank();
    Eigen::VectorXd component = mixture_;
    for (int n = 0; n < num_dims(); ++n) {
        const Dictionary& dict = dims_[static_cast<std::size_t>(n)].dictionary;
        Eigen::VectorXd atom_pdf(dict.size());
        for (int l = 0; l < dict.size(); ++l) {
            atom_pdf[l] = dict.atom(l).pdf(x[n]);
        }
        const Eigen::VectorXd factor = weights_[static_cast<std::size_t>(n)].transpose() * atom_pdf;
        for (int r = 0; r < f; ++r) {
            component[r] *= factor[r];
        }
    }
    return component.sum();
}

Eigen::MatrixXd JointModel::pairwise_marginal(int j, int k) const {
    if (j == k) {
        throw config_error("pairwise marginal requires two distinct dimensions");
    }
    if (j < 0 || k < 0 || j >= num_dims() || k >= num_dims()) {
        throw config_error("pairwise marginal: dimension out of range");
    }
    // Canonical order, then transpose: (j,k) and (k,j) agree exactly.
    if (j > k) {
        return pairwise_marginal(k, j).transpose();
    }
    const Eigen::MatrixXd a_j = mode_factor(j);
    const Eigen::MatrixXd a_k = mode_factor(k);
    return a_j * mixture_.asDiagonal() * a_k.transpose();
}

Marginal1D JointModel::marginal(int n) const {
    if (n < 0 || n >= num_dims()) {
        throw config_error("marginal: dimension out of range");
    }
    const ModelDimension& d = dims_[static_cast<std::size_t>(n)];
    return Marginal1D(d.dictionary, d.discretized, weights_[static_cast<std::size_t>(n)] * mixture_);
}

Eigen::MatrixXd JointModel::sample(long count, std::uint64_t seed) const {
    if (count < 1) {
        throw config_error("sample count must be at least 1");
    }
    Rng rng(mix_seed(seed, 0x5a3f));
    Eigen::MatrixXd samples(count, num_dims());
    for (long m = 0; m < count; ++m) {
        const int r = rng.categorical(mixture_);
        for (int n = 0; n < num_dims(); ++n) {
            const int l = rng.categorical(weights_[static_cast<std::size_t>(n)].col(r));
            samples(m, n) = dims_[static_cast<std::size_t>(n)].dictionary.atom(l).sample(rng);
        }
    }
    return samples;
}

MapClassification JointModel::map_classify(int label_dim, const Eigen::VectorXd& x) const {
    if (label_dim < 0 || label_dim >= num_dims() ||
        !dims_[static_cast<std::size_t>(label_dim)].dictionary.is_discrete()) {
        throw config_error("map_classify: label dimension must be discrete");
    }
    if (x.size() != num_dims()) {
        throw config_error("map_classify: point dimension does not match the model");
    }
    const int num_labels = dims_[static_cast<std::size_t>(label_dim)].dictionary.num_states();
    Eigen::VectorXd joint(num_labels);
    Eigen::VectorXd point = x;
    for (int y = 0; y < num_labels; ++y) {
        point[label_dim] = static_cast<double>(y);
        joint[y] = pdf(point);
    }
    const double total = joint.sum();
    if (!(total > 0.0)) {
        throw zero_density_error("all labels have zero joint density at this point");
    }
    MapClassification result;
    result.posterior = joint / total;
    result.label = 0;
    for (int y = 1; y < num_labels; ++y) {
        if (joint[y] > joint[result.label]) {
            result.label = y;
        }
    }
    return result;
}

} // namespace jupad
