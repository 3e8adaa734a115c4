#include "jupad/atoms.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace jupad {

namespace {

constexpr double kInvSqrt2Pi = 0.3989422804014326779;
constexpr double kInvSqrt2 = 0.7071067811865475244;

bool finite(double x) {
    return std::isfinite(x);
}

} // namespace

Atom Atom::gaussian(double mean, double variance) {
    if (!finite(mean) || !finite(variance) || variance <= 0.0) {
        throw config_error("invalid Gaussian atom: variance must be finite and > 0");
    }
    return Atom(GaussianAtom{mean, variance});
}

Atom Atom::laplacian(double mean, double scale) {
    if (!finite(mean) || !finite(scale) || scale <= 0.0) {
        throw config_error("invalid Laplacian atom: scale must be finite and > 0");
    }
    return Atom(LaplacianAtom{mean, scale});
}

Atom Atom::uniform(double low, double high) {
    if (!finite(low) || !finite(high) || !(low < high)) {
        throw config_error("invalid Uniform atom: requires low < high");
    }
    return Atom(UniformAtom{low, high});
}

Atom Atom::discrete_indicator(int state, int num_states) {
    if (num_states < 1 || state < 0 || state >= num_states) {
        throw config_error("invalid DiscreteIndicator atom: requires 0 <= state < num_states");
    }
    return Atom(DiscreteIndicatorAtom{state, num_states});
}

Atom Atom::from_spec(const AtomSpec& spec) {
    return std::visit(
        [](const auto& s) {
            using T = std::decay_t<decltype(s)>;
            if constexpr (std::is_same_v<T, GaussianAtom>) {
                return Atom::gaussian(s.mean, s.variance);
            } else if constexpr (std::is_same_v<T, LaplacianAtom>) {
                return Atom::laplacian(s.mean, s.scale);
            } else if constexpr (std::is_same_v<T, UniformAtom>) {
                return Atom::uniform(s.low, s.high);
            } else {
                return Atom::discrete_indicator(s.state, s.num_states);
            }
        },
        spec);
}

double Atom::pdf(double x) const {
    return std::visit(
        [x](const auto& s) -> double {
            using T = std::decay_t<decltype(s)>;
            if constexpr (std::is_same_v<T, GaussianAtom>) {
                const double sigma = std::sqrt(s.variance);
                const double z = (x - s.mean) / sigma;
                return kInvSqrt2Pi / sigma * std::exp(-0.5 * z * z);
            } else if constexpr (std::is_same_v<T, LaplacianAtom>) {
                return 0.5 / s.scale * std::exp(-std::abs(x - s.mean) / s.scale);
            } else if constexpr (std::is_same_v<T, UniformAtom>) {
                return (x >= s.low && x <= s.high) ? 1.0 / (s.high - s.low) : 0.0;
            } else {
                return (x == static_cast<double>(s.state)) ? 1.0 : 0.0;
            }
        },
        spec_);
}

double Atom::cdf(double x) const {
    return std::visit(
        [x](const auto& s) -> double {
            using T = std::decay_t<decltype(s)>;
            if constexpr (std::is_same_v<T, GaussianAtom>) {
                const double z = (x - s.mean) / std::sqrt(s.variance);
                return 0.5 * std::erfc(-z * kInvSqrt2);
            } else if constexpr (std::is_same_v<T, LaplacianAtom>) {
                const double z = (x - s.mean) / s.scale;
                return z < 0.0 ? 0.5 * std::exp(z) : 1.0 - 0.5 * std::exp(-z);
            } else if constexpr (std::is_same_v<T, UniformAtom>) {
                if (x <= s.low) return 0.0;
                if (x >= s.high) return 1.0;
                return (x - s.low) / (s.high - s.low);
            } else {
                return x >= static_cast<double>(s.state) ? 1.0 : 0.0;
            }
        },
        spec_);
}

double Atom::interval_mass(double lo, double hi) const {
    if (lo > hi) {
        throw config_error("interval_mass: requires lo <= hi");
    }
    if (const auto* ind = std::get_if<DiscreteIndicatorAtom>(&spec_)) {
        const double state = static_cast<double>(ind->state);
        return (state >= lo && state <= hi) ? 1.0 : 0.0;
    }
    const double mass = cdf(hi) - cdf(lo);
    return std::clamp(mass, 0.0, 1.0);
}

std::pair<double, double> Atom::support_hint(double tail_mass) const {
    const double eps = std::max(tail_mass, 1e-300);
    return std::visit(
        [eps](const auto& s) -> std::pair<double, double> {
            using T = std::decay_t<decltype(s)>;
            if constexpr (std::is_same_v<T, GaussianAtom>) {
                // Chernoff-style bound: two-sided tail beyond k sigma is < exp(-k^2/2).
                const double k = std::sqrt(-2.0 * std::log(eps / 2.0)) + 1.0;
                const double sigma = std::sqrt(s.variance);
                return {s.mean - k * sigma, s.mean + k * sigma};
            } else if constexpr (std::is_same_v<T, LaplacianAtom>) {
                // Each tail beyond w is exp(-w/scale)/2; cap both at eps/4.
                const double w = s.scale * std::log(2.0 / eps);
                return {s.mean - w, s.mean + w};
            } else if constexpr (std::is_same_v<T, UniformAtom>) {
                return {s.low, s.high};
            } else {
                return {static_cast<double>(s.state), static_cast<double>(s.state)};
            }
        },
        spec_);
}

double Atom::sample(Rng& rng) const {
    return std::visit(
        [&rng](const auto& s) -> double {
            using T = std::decay_t<decltype(s)>;
            if constexpr (std::is_same_v<T, GaussianAtom>) {
                return s.mean + std::sqrt(s.variance) * rng.normal();
            } else if constexpr (std::is_same_v<T, LaplacianAtom>) {
                // Difference of two exponentials is Laplacian.
                return s.mean + s.scale * (rng.exponential() - rng.exponential());
            } else if constexpr (std::is_same_v<T, UniformAtom>) {
                return rng.uniform(s.low, s.high);
            } else {
                return static_cast<double>(s.state);
            }
        },
        spec_);
}

bool Atom::is_discrete() const {
    return std::holds_alternative<DiscreteIndicatorAtom>(spec_);
}

std::string Atom::describe() const {
    std::ostringstream out;
    std::visit(
        [&out](const auto& s) {
            using T = std::decay_t<decltype(s)>;
            if constexpr (std::is_same_v<T, GaussianAtom>) {
                out << "gaussian(mean=" << s.mean << ", variance=" << s.variance << ")";
            } else if constexpr (std::is_same_v<T, LaplacianAtom>) {
                out << "laplacian(mean=" << s.mean << ", scale=" << s.scale << ")";
            } else if constexpr (std::is_same_v<T, UniformAtom>) {
                out << "uniform(" << s.low << ", " << s.high << ")";
            } else {
                out << "indicator(state=" << s.state << "/" << s.num_states << ")";
            }
        },
        spec_);
    return out.str();
}

Grid Grid::continuous(std::vector<double> edges) {
    if (edges.size() < 3) {
        throw config_error("continuous grid needs at least 2 intervals");
    }
    for (std::size_t i = 0; i + 1 < edges.size(); ++i) {
        if (!(edges[i] < edges[i + 1])) {
            throw config_error("grid edges must be strictly increasing");
        }
    }
    Grid grid;
    grid.edges_ = std::move(edges);
    return grid;
}

Grid Grid::discrete(int num_states) {
    if (num_states < 1) {
        throw config_error("discrete grid needs at least one state");
    }
    Grid grid;
    grid.num_states_ = num_states;
    return grid;
}

int Grid::num_bins() const {
    return is_discrete() ? num_states_ : static_cast<int>(edges_.size()) - 1;
}

std::pair<double, double> Grid::bin_bounds(int i) const {
    if (i < 0 || i >= num_bins()) {
        throw config_error("grid bin index out of range");
    }
    if (is_discrete()) {
        const double state = static_cast<double>(i);
        return {state, state};
    }
    return {edges_[static_cast<std::size_t>(i)], edges_[static_cast<std::size_t>(i) + 1]};
}

int Grid::bin_of(double value) const {
    if (is_discrete()) {
        const double rounded = std::nearbyint(value);
        if (rounded != value || rounded < 0.0 || rounded >= static_cast<double>(num_states_)) {
            throw data_error("value is not a valid state index for this grid");
        }
        return static_cast<int>(rounded);
    }
    if (value < edges_.front() || value > edges_.back()) {
        throw data_error("value falls outside the grid range");
    }
    // Half-open bins [d_{i-1}, d_i); the last bin also takes its upper edge.
    auto it = std::upper_bound(edges_.begin(), edges_.end(), value);
    int index = static_cast<int>(it - edges_.begin()) - 1;
    return std::min(index, num_bins() - 1);
}

double Grid::low() const {
    return is_discrete() ? -0.5 : edges_.front();
}

double Grid::high() const {
    return is_discrete() ? static_cast<double>(num_states_) - 0.5 : edges_.back();
}

Dictionary::Dictionary(std::vector<Atom> atoms, Domain domain)
    : atoms_(std::move(atoms)), domain_(domain) {
    if (atoms_.empty()) {
        throw config_error("dictionary has no atoms");
    }
    const bool discrete = std::holds_alternative<DiscreteDomain>(domain_);
    for (const Atom& atom : atoms_) {
        if (atom.is_discrete() != discrete) {
            throw config_error("dictionary atoms must share the domain kind");
        }
        if (discrete) {
            const auto& ind = std::get<DiscreteIndicatorAtom>(atom.spec());
            if (ind.num_states != std::get<DiscreteDomain>(domain_).num_states) {
                throw config_error("indicator atom state count differs from the domain");
            }
        }
    }
    if (!discrete) {
        const auto& range = std::get<ContinuousDomain>(domain_);
        if (!(range.low < range.high)) {
            throw config_error("continuous domain requires low < high");
        }
    }
}

Dictionary Dictionary::identity(int num_states) {
    std::vector<Atom> atoms;
    atoms.reserve(static_cast<std::size_t>(num_states));
    for (int state = 0; state < num_states; ++state) {
        atoms.push_back(Atom::discrete_indicator(state, num_states));
    }
    return Dictionary(std::move(atoms), DiscreteDomain{num_states});
}

bool Dictionary::is_discrete() const {
    return std::holds_alternative<DiscreteDomain>(domain_);
}

int Dictionary::num_states() const {
    if (!is_discrete()) {
        throw config_error("num_states is only defined for discrete dictionaries");
    }
    return std::get<DiscreteDomain>(domain_).num_states;
}

std::pair<double, double> Dictionary::support_hint(double tail_mass) const {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();
    for (const Atom& atom : atoms_) {
        auto [a, b] = atom.support_hint(tail_mass);
        lo = std::min(lo, a);
        hi = std::max(hi, b);
    }
    return {lo, hi};
}

DiscretizedDictionary discretize(const Dictionary& dict, const Grid& grid,
                                 double coverage_threshold) {
    if (dict.is_discrete() != grid.is_discrete()) {
        throw config_error("dictionary and grid domain kinds differ");
    }
    if (dict.is_discrete() && dict.num_states() != grid.num_bins()) {
        throw config_error("discrete grid must have one bin per dictionary state");
    }
    const int bins = grid.num_bins();
    const int atoms = dict.size();
    Eigen::MatrixXd masses(bins, atoms);
    for (int l = 0; l < atoms; ++l) {
        const Atom& atom = dict.atom(l);
        double covered = 0.0;
        for (int i = 0; i < bins; ++i) {
            auto [lo, hi] = grid.bin_bounds(i);
            const double mass = atom.interval_mass(lo, hi);
            masses(i, l) = mass;
            covered += mass;
        }
        if (covered < coverage_threshold) {
            throw coverage_error("grid covers only " + std::to_string(covered) + " of atom " +
                                 std::to_string(l) + " (" + atom.describe() + ")");
        }
        masses.col(l) /= covered;
    }
    return DiscretizedDictionary{std::move(masses)};
}

Dictionary build_dictionary_grid_preset(double low, double high, double spacing,
                                        const std::vector<GridPresetFamily>& families,
                                        int uniform_count) {
    if (!(spacing > 0.0) || !(high > low)) {
        throw config_error("grid preset requires spacing > 0 and high > low");
    }
    if (families.empty() && uniform_count <= 0) {
        throw config_error("grid preset has no families and no uniform atoms");
    }
    std::vector<Atom> atoms;
    const double slack = spacing * 1e-9;
    for (const GridPresetFamily& family : families) {
        for (int k = 0;; ++k) {
            const double mean = low + static_cast<double>(k) * spacing;
            if (mean > high + slack) {
                break;
            }
            if (family.kind == GridPresetFamily::Kind::kGaussian) {
                atoms.push_back(Atom::gaussian(mean, family.param));
            } else {
                atoms.push_back(Atom::laplacian(mean, family.param));
            }
        }
    }
    if (uniform_count > 0) {
        const double width = (high - low) / static_cast<double>(uniform_count);
        for (int k = 0; k < uniform_count; ++k) {
            const double a = low + width * static_cast<double>(k);
            const double b = (k + 1 == uniform_count) ? high : a + width;
            atoms.push_back(Atom::uniform(a, b));
        }
    }
    return Dictionary(std::move(atoms), ContinuousDomain{low, high});
}

} // namespace jupad
