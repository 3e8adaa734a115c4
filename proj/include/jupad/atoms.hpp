#pragma once

#include <string>
#include <utility>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "jupad/errors.hpp"
#include "jupad/rng.hpp"

namespace jupad {

struct GaussianAtom {
    double mean;
    double variance; // > 0
};

struct LaplacianAtom {
    double mean;
    double scale; // > 0
};

struct UniformAtom {
    double low;
    double high; // low < high
};

// Point mass on one state of a discrete variable.
struct DiscreteIndicatorAtom {
    int state;      // 0 <= state < num_states
    int num_states; // >= 1
};

using AtomSpec = std::variant<GaussianAtom, LaplacianAtom, UniformAtom, DiscreteIndicatorAtom>;

// One 1D density (or mass) atom. Immutable; parameter invariants are checked
// at construction. pdf integrates (or mass sums) to 1 over the atom's domain.
class Atom {
  public:
    static Atom gaussian(double mean, double variance);
    static Atom laplacian(double mean, double scale);
    static Atom uniform(double low, double high);
    static Atom discrete_indicator(int state, int num_states);
    static Atom from_spec(const AtomSpec& spec);

    // Density for continuous atoms, mass for discrete ones.
    double pdf(double x) const;
    double cdf(double x) const;

    // Mass on [lo, hi] from closed-form cdf differences. lo <= hi.
    double interval_mass(double lo, double hi) const;

    // [lo, hi] holding at least 1 - tail_mass of the atom's mass.
    std::pair<double, double> support_hint(double tail_mass = 1e-9) const;

    double sample(Rng& rng) const;

    bool is_discrete() const;
    const AtomSpec& spec() const { return spec_; }
    std::string describe() const;

  private:
    explicit Atom(AtomSpec spec) : spec_(std::move(spec)) {}
    AtomSpec spec_;
};

struct ContinuousDomain {
    double low;
    double high;
};

struct DiscreteDomain {
    int num_states;
};

using Domain = std::variant<ContinuousDomain, DiscreteDomain>;

// Per-dimension bin edges. Continuous grids hold strictly increasing edges
// d0 < d1 < ... < dI with I >= 2 intervals; discrete grids hold one bin per
// state.
class Grid {
  public:
    static Grid continuous(std::vector<double> edges);
    static Grid discrete(int num_states);

    bool is_discrete() const { return num_states_ > 0; }
    int num_bins() const;
    // [lo, hi] of bin i. For discrete grids this is the degenerate [i, i].
    std::pair<double, double> bin_bounds(int i) const;
    // Bin index of a value; throws data_error when outside the grid.
    int bin_of(double value) const;
    const std::vector<double>& edges() const { return edges_; }
    double low() const;
    double high() const;

  private:
    Grid() = default;
    std::vector<double> edges_; // continuous grids only
    int num_states_ = 0;        // discrete grids only
};

// Ordered atom collection for one dimension. All atoms share the domain
// kind; discrete dictionaries only hold indicator atoms with matching
// num_states.
class Dictionary {
  public:
    Dictionary(std::vector<Atom> atoms, Domain domain);

    // One indicator atom per state, in state order.
    static Dictionary identity(int num_states);

    int size() const { return static_cast<int>(atoms_.size()); }
    const Atom& atom(int l) const { return atoms_.at(static_cast<std::size_t>(l)); }
    const std::vector<Atom>& atoms() const { return atoms_; }
    const Domain& domain() const { return domain_; }
    bool is_discrete() const;
    int num_states() const; // discrete dictionaries only
    // Hull of the atoms' supports at the given tail mass.
    std::pair<double, double> support_hint(double tail_mass = 1e-9) const;

  private:
    std::vector<Atom> atoms_;
    Domain domain_;
};

// Interval-mass matrix of a dictionary on a grid: num_bins x num_atoms,
// entries >= 0, every column summing to exactly 1 after renormalization by
// covered mass.
struct DiscretizedDictionary {
    Eigen::MatrixXd masses;
};

// Raw interval masses renormalized column-wise by covered mass. Throws
// coverage_error naming any atom whose mass inside the grid falls below
// coverage_threshold.
DiscretizedDictionary discretize(const Dictionary& dict, const Grid& grid,
                                 double coverage_threshold = 0.99);

// One fixed-parameter family placed on a regular mean lattice.
struct GridPresetFamily {
    enum class Kind { kGaussian, kLaplacian };
    Kind kind = Kind::kGaussian;
    double param = 1.0; // variance for Gaussians, scale for Laplacians
};

// Places family atoms with means at {low, low + spacing, ...} up to high
// (both endpoints included when spacing divides the range), then appends
// uniform_count uniform atoms partitioning [low, high] into equal pieces.
Dictionary build_dictionary_grid_preset(double low, double high, double spacing,
                                        const std::vector<GridPresetFamily>& families,
                                        int uniform_count = 0);

} // namespace jupad
