#include "jupad/solver.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <limits>
#include <mutex>
#include <set>
#include <thread>

#include "jupad/errors.hpp"
#include "jupad/rng.hpp"

namespace jupad {

namespace {

// Lawson-Hanson active-set nonnegative least squares, min_x ||a x - b||_2
// with x >= 0. The problems here are tiny (a has `rank` columns), so the
// passive-set systems are re-solved from scratch each round.
Eigen::VectorXd nnls(const Eigen::MatrixXd& a, const Eigen::VectorXd& b) {
    const Eigen::Index n = a.cols();
    Eigen::VectorXd x = Eigen::VectorXd::Zero(n);
    std::vector<char> passive(static_cast<std::size_t>(n), 0);
    Eigen::VectorXd w = a.transpose() * b;
    const double tol = 1e-10 * std::max(1.0, w.size() ? w.cwiseAbs().maxCoeff() : 0.0);
    const int max_rounds = static_cast<int>(30 * (n + 1));

    auto passive_indices = [&] {
        std::vector<Eigen::Index> idx;
        for (Eigen::Index i = 0; i < n; ++i)
            if (passive[static_cast<std::size_t>(i)]) idx.push_back(i);
        return idx;
    };

    for (int round = 0; round < max_rounds; ++round) {
        Eigen::Index enter = -1;
        double best = tol;
        for (Eigen::Index i = 0; i < n; ++i) {
            if (!passive[static_cast<std::size_t>(i)] && w[i] > best) {
                best = w[i];
                enter = i;
            }
        }
        if (enter < 0) break;
        passive[static_cast<std::size_t>(enter)] = 1;

        for (int inner = 0; inner < max_rounds; ++inner) {
            const auto idx = passive_indices();
            if (idx.empty()) break;
            Eigen::MatrixXd sub(a.rows(), static_cast<Eigen::Index>(idx.size()));
            for (std::size_t c = 0; c < idx.size(); ++c)
                sub.col(static_cast<Eigen::Index>(c)) = a.col(idx[c]);
            Eigen::VectorXd z = sub.colPivHouseholderQr().solve(b);

            if (z.minCoeff() > 0.0) {
                x.setZero();
                for (std::size_t c = 0; c < idx.size(); ++c)
                    x[idx[c]] = z[static_cast<Eigen::Index>(c)];
                break;
            }
            double alpha = std::numeric_limits<double>::infinity();
            for (std::size_t c = 0; c < idx.size(); ++c) {
                const double zi = z[static_cast<Eigen::Index>(c)];
                if (zi <= 0.0) {
                    const double xi = x[idx[c]];
                    if (xi - zi > 0.0) alpha = std::min(alpha, xi / (xi - zi));
                }
            }
            if (!std::isfinite(alpha)) alpha = 0.0;
            for (std::size_t c = 0; c < idx.size(); ++c) {
                const Eigen::Index i = idx[c];
                x[i] += alpha * (z[static_cast<Eigen::Index>(c)] - x[i]);
                if (x[i] <= 1e-14) {
                    x[i] = 0.0;
                    passive[static_cast<std::size_t>(i)] = 0;
                }
            }
        }
        w.noalias() = a.transpose() * (b - a * x);
    }
    return x;
}

long side_total(const std::vector<int>& side, const std::vector<int>& atom_counts) {
    long total = 0;
    for (int d : side) total += atom_counts[static_cast<std::size_t>(d)];
    return total;
}

void check_split_membership(const std::vector<int>& s1, const std::vector<int>& s2, int n) {
    std::vector<char> seen(static_cast<std::size_t>(n), 0);
    for (const auto* side : {&s1, &s2}) {
        for (int d : *side) {
            if (d < 0 || d >= n)
                throw config_error("split references dimension " + std::to_string(d) +
                                   " outside [0, " + std::to_string(n) + ")");
            if (seen[static_cast<std::size_t>(d)]++)
                throw config_error("dimension " + std::to_string(d) +
                                   " appears twice in the split");
        }
    }
    if (s1.empty() || s2.empty()) throw config_error("both split sides must be nonempty");
    if (s1.size() + s2.size() != static_cast<std::size_t>(n))
        throw config_error("split must cover every dimension exactly once");
}

// Alternating assignment, then move the largest donor dimensions across until
// both sides reach the rank (or no admissible move remains).
std::pair<std::vector<int>, std::vector<int>> choose_split(const std::vector<int>& atom_counts,
                                                           const FitConfig& config) {
    const int n = static_cast<int>(atom_counts.size());
    if (n < 2) throw config_error("the coupling split needs at least two dimensions");
    const long rank = config.rank;

    std::vector<int> s1 = config.split_first;
    std::vector<int> s2 = config.split_second;
    if (s1.empty() != s2.empty())
        throw config_error("split_first and split_second must be given together");
    if (!s1.empty()) {
        check_split_membership(s1, s2, n);
        if (side_total(s1, atom_counts) < rank || side_total(s2, atom_counts) < rank)
            throw split_error("configured split leaves a side with fewer than " +
                              std::to_string(rank) +
                              " atoms; use larger dictionaries or reduce the rank");
        return {std::move(s1), std::move(s2)};
    }

    for (int d = 0; d < n; ++d) (d % 2 == 0 ? s1 : s2).push_back(d);

    auto rebalance = [&](std::vector<int>& need, std::vector<int>& donor) {
        while (side_total(need, atom_counts) < rank) {
            int best = -1;
            if (donor.size() > 1) {
                for (std::size_t i = 0; i < donor.size(); ++i) {
                    const int d = donor[i];
                    if (side_total(donor, atom_counts) - atom_counts[static_cast<std::size_t>(d)] < rank)
                        continue;
                    if (best < 0 || atom_counts[static_cast<std::size_t>(d)] >
                                        atom_counts[static_cast<std::size_t>(donor[static_cast<std::size_t>(best)])])
                        best = static_cast<int>(i);
                }
            }
            if (best < 0) return false;
            need.push_back(donor[static_cast<std::size_t>(best)]);
            donor.erase(donor.begin() + best);
        }
        return true;
    };

    if (!rebalance(s1, s2) || !rebalance(s2, s1))
        throw split_error("no index split gives both sides at least " + std::to_string(rank) +
                          " atoms in total; use larger dictionaries or reduce the rank");
    std::sort(s1.begin(), s1.end());
    std::sort(s2.begin(), s2.end());
    return {std::move(s1), std::move(s2)};
}

int thread_budget(std::size_t jobs) {
    unsigned hw = std::thread::hardware_concurrency();
    long budget = hw ? static_cast<long>(hw) : 2;
    if (const char* env = std::getenv("JUPAD_THREADS")) {
        char* end = nullptr;
        const long parsed = std::strtol(env, &end, 10);
        if (end && *end == '\0' && parsed >= 1) budget = parsed;
    }
    return static_cast<int>(std::min<long>(budget, static_cast<long>(jobs)));
}

Eigen::MatrixXd coupling_gradient(const Eigen::MatrixXd& dj, const Eigen::MatrixXd& dk,
                                  const Eigen::MatrixXd& residual) {
    return -2.0 * dj.transpose() * residual * dk;
}

// G_n = Dbar_n B_n per dimension, with the shape checks shared by the
// objective and its gradients.
std::vector<Eigen::MatrixXd> discretized_factors(const std::vector<Eigen::MatrixXd>& weights,
                                                 const Eigen::VectorXd& mixture,
                                                 const std::vector<ModelDimension>& dims) {
    if (weights.size() != dims.size())
        throw config_error("one weight matrix per dimension is required");
    std::vector<Eigen::MatrixXd> g(weights.size());
    for (std::size_t n = 0; n < weights.size(); ++n) {
        const Eigen::MatrixXd& masses = dims[n].discretized.masses;
        const Eigen::MatrixXd& b = weights[n];
        if (b.rows() != masses.cols() || b.cols() != mixture.size())
            throw config_error("weight matrix " + std::to_string(n) +
                               " does not match its dictionary or the mixture size");
        g[n] = masses * b;
    }
    return g;
}

void check_pairs(const std::map<std::pair<int, int>, PairwiseHistogram>& pairs, int n_dims,
                 const std::vector<Eigen::MatrixXd>& g) {
    for (const auto& [key, hist] : pairs) {
        const auto [j, k] = key;
        if (j < 0 || k <= j || k >= n_dims)
            throw config_error("pairwise histogram key (" + std::to_string(j) + "," +
                               std::to_string(k) + ") is out of order or range");
        if (hist.zhat.rows() != g[static_cast<std::size_t>(j)].rows() ||
            hist.zhat.cols() != g[static_cast<std::size_t>(k)].rows())
            throw config_error("pairwise histogram (" + std::to_string(j) + "," +
                               std::to_string(k) + ") does not match the grids");
    }
}

Eigen::MatrixXd weights_gradient_core(int n, const Eigen::MatrixXd& dn,
                                      const std::vector<Eigen::MatrixXd>& g,
                                      const Eigen::VectorXd& mixture,
                                      const std::map<std::pair<int, int>, PairwiseHistogram>& pairs) {
    Eigen::MatrixXd grad = Eigen::MatrixXd::Zero(dn.cols(), mixture.size());
    for (const auto& [key, hist] : pairs) {
        const auto [j, k] = key;
        if (j != n && k != n) continue;
        const int other = j == n ? k : j;
        const Eigen::MatrixXd& gn = g[static_cast<std::size_t>(n)];
        const Eigen::MatrixXd& go = g[static_cast<std::size_t>(other)];
        Eigen::MatrixXd residual;
        if (j == n)
            residual = hist.zhat - gn * mixture.asDiagonal() * go.transpose();
        else
            residual = hist.zhat.transpose() - gn * mixture.asDiagonal() * go.transpose();
        grad.noalias() += coupling_gradient(dn, go * mixture.asDiagonal(), residual);
    }
    return grad;
}

Eigen::VectorXd mixture_gradient_core(const std::vector<Eigen::MatrixXd>& g,
                                      const Eigen::VectorXd& mixture,
                                      const std::map<std::pair<int, int>, PairwiseHistogram>& pairs) {
    Eigen::VectorXd grad = Eigen::VectorXd::Zero(mixture.size());
    for (const auto& [key, hist] : pairs) {
        const Eigen::MatrixXd& gj = g[static_cast<std::size_t>(key.first)];
        const Eigen::MatrixXd& gk = g[static_cast<std::size_t>(key.second)];
        const Eigen::MatrixXd residual = hist.zhat - gj * mixture.asDiagonal() * gk.transpose();
        grad += -2.0 * (gj.transpose() * residual * gk).diagonal();
    }
    return grad;
}

} // namespace

void FitConfig::validate() const {
    if (rank < 1) throw config_error("rank must be at least 1");
    if (!(rate_coupling > 0.0) || !(rate_weights > 0.0) || !(rate_mixture > 0.0) ||
        !std::isfinite(rate_coupling) || !std::isfinite(rate_weights) || !std::isfinite(rate_mixture))
        throw config_error("learning rates must be positive and finite");
    if (stage1_max_iters < 1 || stage3_max_sweeps < 1 || stage3_inner_iters < 1)
        throw config_error("iteration limits must be at least 1");
    if (!(stage1_tol > 0.0) || !(stage3_tol > 0.0))
        throw config_error("convergence tolerances must be positive");
    if (max_backtracks < 0) throw config_error("max_backtracks must be nonnegative");
    if (histogram_bins < 2) throw config_error("histogram_bins must be at least 2");
    if (!(coverage_threshold > 0.0) || coverage_threshold > 1.0)
        throw config_error("coverage_threshold must lie in (0, 1]");
    if (split_first.empty() != split_second.empty())
        throw config_error("split_first and split_second must be given together");
}

Eigen::MatrixXd mirror_step(const Eigen::MatrixXd& x, const Eigen::MatrixXd& grad, double rate,
                            bool per_column) {
    if (x.rows() != grad.rows() || x.cols() != grad.cols())
        throw config_error("mirror_step: gradient shape does not match the iterate");
    if (!(rate > 0.0) || !std::isfinite(rate))
        throw config_error("mirror_step: rate must be positive and finite");
    if (!grad.allFinite()) throw numeric_error("mirror_step: non-finite gradient");
    if (x.size() == 0) return x;

    Eigen::MatrixXd out(x.rows(), x.cols());
    auto update = [&](Eigen::Index first_col, Eigen::Index cols) {
        auto xb = x.middleCols(first_col, cols).array();
        auto gb = grad.middleCols(first_col, cols).array();
        const double shift = gb.minCoeff();
        Eigen::ArrayXXd scaled = xb * (-rate * (gb - shift)).max(-700.0).exp();
        const double sum = scaled.sum();
        if (sum > 0.0 && std::isfinite(sum))
            out.middleCols(first_col, cols) = (scaled / sum).matrix();
        else
            out.middleCols(first_col, cols) = x.middleCols(first_col, cols);
    };
    if (per_column)
        for (Eigen::Index c = 0; c < x.cols(); ++c) update(c, 1);
    else
        update(0, x.cols());
    return out;
}

Eigen::MatrixXd stage1_gradient(const Eigen::MatrixXd& zhat, const Eigen::MatrixXd& dbar_j,
                                const Eigen::MatrixXd& dbar_k, const Eigen::MatrixXd& coupling) {
    if (zhat.rows() != dbar_j.rows() || zhat.cols() != dbar_k.rows() ||
        coupling.rows() != dbar_j.cols() || coupling.cols() != dbar_k.cols())
        throw config_error("stage1_gradient: inconsistent shapes");
    return coupling_gradient(dbar_j, dbar_k, zhat - dbar_j * coupling * dbar_k.transpose());
}

PairCoupling stage1_fit_pair(const PairwiseHistogram& zhat, const DiscretizedDictionary& dbar_j,
                             const DiscretizedDictionary& dbar_k, const FitConfig& config,
                             std::vector<TraceRecord>* trace) {
    const Eigen::MatrixXd& dj = dbar_j.masses;
    const Eigen::MatrixXd& dk = dbar_k.masses;
    if (zhat.zhat.rows() != dj.rows() || zhat.zhat.cols() != dk.rows())
        throw config_error("pairwise histogram shape does not match the discretized dictionaries");
    const std::string unit = "pair(" + std::to_string(zhat.dim_first) + "," +
                             std::to_string(zhat.dim_second) + ")";

    Rng rng(mix_seed(config.seed, 0x31u + static_cast<std::uint64_t>(zhat.dim_first),
                     0x9du + static_cast<std::uint64_t>(zhat.dim_second)));
    Eigen::MatrixXd t(dj.cols(), dk.cols());
    for (Eigen::Index r = 0; r < t.rows(); ++r)
        for (Eigen::Index c = 0; c < t.cols(); ++c) t(r, c) = rng.uniform01();
    t /= t.sum();

    Eigen::MatrixXd residual = zhat.zhat - dj * t * dk.transpose();
    double cost = residual.squaredNorm();
    if (!std::isfinite(cost))
        throw divergence_error(unit + ": cost is non-finite at the initial point");

    double rate = config.rate_coupling;
    for (int it = 1; it <= config.stage1_max_iters; ++it) {
        const Eigen::MatrixXd grad = coupling_gradient(dj, dk, residual);
        double attempt = rate;
        bool accepted = false;
        Eigen::MatrixXd cand, cand_residual;
        double cand_cost = 0.0;
        for (int h = 0; h <= config.max_backtracks; ++h) {
            cand = mirror_step(t, grad, attempt, false);
            cand_residual = zhat.zhat - dj * cand * dk.transpose();
            cand_cost = cand_residual.squaredNorm();
            if (!std::isfinite(cand_cost))
                throw divergence_error(unit + ": objective diverged; lower eta_T (rate_coupling)");
            if (cand_cost <= cost) {
                accepted = true;
                break;
            }
            attempt *= 0.5;
        }
        if (!accepted) break;
        rate = attempt;
        t.swap(cand);
        residual.swap(cand_residual);
        const double before = cost;
        cost = cand_cost;
        if (trace) trace->push_back({1, unit, it, cost});
        if (before - cost <= config.stage1_tol * std::max(before, 1e-300)) break;
    }
    return {zhat.dim_first, zhat.dim_second, std::move(t)};
}

AssembledMatrix assemble_coupling_matrix(const std::map<std::pair<int, int>, PairCoupling>& couplings,
                                         const std::vector<int>& atom_counts,
                                         const FitConfig& config) {
    for (int count : atom_counts)
        if (count < 1) throw config_error("every dimension needs at least one atom");
    auto [s1, s2] = choose_split(atom_counts, config);

    AssembledMatrix out;
    out.first_dims = std::move(s1);
    out.second_dims = std::move(s2);
    out.row_offsets.resize(out.first_dims.size() + 1, 0);
    out.col_offsets.resize(out.second_dims.size() + 1, 0);
    for (std::size_t a = 0; a < out.first_dims.size(); ++a)
        out.row_offsets[a + 1] =
            out.row_offsets[a] + atom_counts[static_cast<std::size_t>(out.first_dims[a])];
    for (std::size_t b = 0; b < out.second_dims.size(); ++b)
        out.col_offsets[b + 1] =
            out.col_offsets[b] + atom_counts[static_cast<std::size_t>(out.second_dims[b])];

    out.matrix.resize(out.row_offsets.back(), out.col_offsets.back());
    for (std::size_t a = 0; a < out.first_dims.size(); ++a) {
        for (std::size_t b = 0; b < out.second_dims.size(); ++b) {
            const int j = out.first_dims[a];
            const int k = out.second_dims[b];
            const std::pair<int, int> key{std::min(j, k), std::max(j, k)};
            const auto it = couplings.find(key);
            if (it == couplings.end())
                throw config_error("missing coupling for pair (" + std::to_string(key.first) +
                                   "," + std::to_string(key.second) + ")");
            const Eigen::MatrixXd& t = it->second.coupling;
            const Eigen::Index lj = atom_counts[static_cast<std::size_t>(j)];
            const Eigen::Index lk = atom_counts[static_cast<std::size_t>(k)];
            Eigen::MatrixXd block = (j < k) ? t : Eigen::MatrixXd(t.transpose());
            if (block.rows() != lj || block.cols() != lk)
                throw config_error("coupling (" + std::to_string(key.first) + "," +
                                   std::to_string(key.second) +
                                   ") does not match the dictionary sizes");
            out.matrix.block(out.row_offsets[a], out.col_offsets[b], lj, lk) = block;
        }
    }
    return out;
}

SpaFactors spa_extract(const AssembledMatrix& assembled, int rank, bool on_transpose) {
    if (rank < 1) throw config_error("rank must be at least 1");
    const Eigen::MatrixXd x =
        on_transpose ? Eigen::MatrixXd(assembled.matrix.transpose()) : assembled.matrix;
    if (rank > x.rows() || rank > x.cols())
        throw config_error("rank exceeds the assembled matrix size");

    Eigen::MatrixXd residual = x;
    std::vector<int> anchors;
    anchors.reserve(static_cast<std::size_t>(rank));
    std::vector<char> selected(static_cast<std::size_t>(x.cols()), 0);
    const double floor_sq =
        std::max(residual.colwise().squaredNorm().maxCoeff(), 1e-300) * 1e-24;

    for (int f = 0; f < rank; ++f) {
        const Eigen::VectorXd norms = residual.colwise().squaredNorm();
        Eigen::Index best = -1;
        double best_norm = floor_sq;
        for (Eigen::Index c = 0; c < norms.size(); ++c) {
            if (!selected[static_cast<std::size_t>(c)] && norms[c] > best_norm) {
                best_norm = norms[c];
                best = c;
            }
        }
        if (best < 0)
            throw rank_deficiency_error("residual vanished after " + std::to_string(f) +
                                        " anchors; the assembled matrix does not support rank " +
                                        std::to_string(rank));
        selected[static_cast<std::size_t>(best)] = 1;
        anchors.push_back(static_cast<int>(best));
        const Eigen::VectorXd u = residual.col(best);
        residual -= u * (u.transpose() * residual) / best_norm;
    }

    Eigen::MatrixXd w_x(x.rows(), rank);
    for (int f = 0; f < rank; ++f) w_x.col(f) = x.col(anchors[static_cast<std::size_t>(f)]);
    Eigen::MatrixXd h_x(x.cols(), rank);
    for (Eigen::Index c = 0; c < x.cols(); ++c) h_x.row(c) = nnls(w_x, x.col(c)).transpose();

    if (!on_transpose) return {std::move(w_x), std::move(h_x), std::move(anchors)};
    return {std::move(h_x), std::move(w_x), std::move(anchors)};
}

FactorEstimate factor_split(const Eigen::MatrixXd& w, const Eigen::MatrixXd& h,
                            const AssembledMatrix& assembled) {
    const Eigen::Index f = w.cols();
    if (f < 1) throw config_error("factor_split needs at least one component");
    if (h.cols() != f) throw config_error("W and H disagree on the number of components");
    if (w.rows() != assembled.matrix.rows() || h.rows() != assembled.matrix.cols())
        throw config_error("factor shapes do not match the assembled matrix");

    int num_dims = 0;
    for (int d : assembled.first_dims) num_dims = std::max(num_dims, d + 1);
    for (int d : assembled.second_dims) num_dims = std::max(num_dims, d + 1);
    check_split_membership(assembled.first_dims, assembled.second_dims, num_dims);

    const double tiny = 1e-12;
    std::vector<Eigen::MatrixXd> weights(static_cast<std::size_t>(num_dims));
    std::set<int> degenerate;

    // W blocks lose their column magnitudes to normalization; the average of
    // those magnitudes recalibrates H so its blocks read diag(lambda) B_k'.
    Eigen::VectorXd scale = Eigen::VectorXd::Zero(f);
    for (std::size_t a = 0; a < assembled.first_dims.size(); ++a) {
        const Eigen::Index len = assembled.row_offsets[a + 1] - assembled.row_offsets[a];
        const Eigen::MatrixXd block = w.middleRows(assembled.row_offsets[a], len).cwiseMax(0.0);
        Eigen::MatrixXd b(len, f);
        for (Eigen::Index r = 0; r < f; ++r) {
            const double s = block.col(r).sum();
            if (s <= tiny) {
                b.col(r).setConstant(1.0 / static_cast<double>(len));
                degenerate.insert(static_cast<int>(r));
            } else {
                b.col(r) = block.col(r) / s;
            }
            scale[r] += s;
        }
        weights[static_cast<std::size_t>(assembled.first_dims[a])] = std::move(b);
    }
    scale /= static_cast<double>(assembled.first_dims.size());

    Eigen::MatrixXd h_cal = h;
    for (Eigen::Index r = 0; r < f; ++r) h_cal.col(r) *= scale[r];

    Eigen::VectorXd lambda = Eigen::VectorXd::Zero(f);
    for (std::size_t b = 0; b < assembled.second_dims.size(); ++b) {
        const Eigen::Index len = assembled.col_offsets[b + 1] - assembled.col_offsets[b];
        const Eigen::MatrixXd block = h_cal.middleRows(assembled.col_offsets[b], len).cwiseMax(0.0);
        Eigen::MatrixXd bk(len, f);
        for (Eigen::Index r = 0; r < f; ++r) {
            const double lam = block.col(r).sum();
            if (lam <= tiny) {
                bk.col(r).setConstant(1.0 / static_cast<double>(len));
                degenerate.insert(static_cast<int>(r));
            } else {
                bk.col(r) = block.col(r) / lam;
            }
            lambda[r] += lam;
        }
        weights[static_cast<std::size_t>(assembled.second_dims[b])] = std::move(bk);
    }
    lambda /= static_cast<double>(assembled.second_dims.size());

    const double lambda_total = lambda.sum();
    if (lambda_total <= tiny) {
        lambda.setConstant(1.0 / static_cast<double>(f));
        for (Eigen::Index r = 0; r < f; ++r) degenerate.insert(static_cast<int>(r));
    } else {
        lambda /= lambda_total;
    }
    return {std::move(weights), std::move(lambda),
            std::vector<int>(degenerate.begin(), degenerate.end())};
}

namespace {

// Shared state for the alternating refinement: cached discretized factors
// G_n = Dbar_n B_n and per-pair costs, summed in a fixed order so the
// accepted-step comparison is exact.
struct RefineState {
    struct Term {
        int j = 0;
        int k = 0;
        const Eigen::MatrixXd* zhat = nullptr;
    };

    std::vector<Term> terms;
    std::vector<std::vector<std::size_t>> terms_of_dim;
    std::vector<Eigen::MatrixXd> g;
    std::vector<double> costs;

    static double term_cost(const Term& term, const Eigen::MatrixXd& gj, const Eigen::MatrixXd& gk,
                            const Eigen::VectorXd& lambda) {
        return (*term.zhat - gj * lambda.asDiagonal() * gk.transpose()).squaredNorm();
    }

    double total() const {
        double sum = 0.0;
        for (double c : costs) sum += c;
        return sum;
    }
};

} // namespace

Stage3Result stage3_refine(std::vector<Eigen::MatrixXd> weights, Eigen::VectorXd mixture,
                           const std::map<std::pair<int, int>, PairwiseHistogram>& pairs,
                           const std::vector<ModelDimension>& dims, const FitConfig& config,
                           std::vector<TraceRecord>* trace) {
    config.validate();
    const int n_dims = static_cast<int>(dims.size());
    const Eigen::Index f = mixture.size();
    if (n_dims < 2) throw config_error("refinement needs at least two dimensions");
    if (weights.size() != dims.size())
        throw config_error("one weight matrix per dimension is required");
    if (f < 1) throw config_error("the mixture must have at least one component");
    if (pairs.empty()) throw config_error("refinement needs at least one pairwise histogram");

    // Light sanitation so multiplicative updates start strictly inside the
    // simplex: clamp negatives, renormalize, fall back to uniform columns.
    for (int n = 0; n < n_dims; ++n) {
        Eigen::MatrixXd& b = weights[static_cast<std::size_t>(n)];
        if (b.rows() != dims[static_cast<std::size_t>(n)].discretized.masses.cols() || b.cols() != f)
            throw config_error("weight matrix " + std::to_string(n) +
                               " does not match its dictionary or the mixture size");
        b = b.cwiseMax(0.0);
        for (Eigen::Index r = 0; r < f; ++r) {
            const double s = b.col(r).sum();
            if (s > 0.0)
                b.col(r) /= s;
            else
                b.col(r).setConstant(1.0 / static_cast<double>(b.rows()));
        }
    }
    mixture = mixture.cwiseMax(0.0);
    if (mixture.sum() <= 0.0)
        mixture.setConstant(1.0 / static_cast<double>(f));
    else
        mixture /= mixture.sum();

    RefineState state;
    state.terms_of_dim.resize(static_cast<std::size_t>(n_dims));
    state.g = discretized_factors(weights, mixture, dims);
    check_pairs(pairs, n_dims, state.g);

    for (const auto& [key, hist] : pairs) {
        const auto [j, k] = key;
        state.terms_of_dim[static_cast<std::size_t>(j)].push_back(state.terms.size());
        state.terms_of_dim[static_cast<std::size_t>(k)].push_back(state.terms.size());
        state.terms.push_back({j, k, &hist.zhat});
    }
    state.costs.resize(state.terms.size());
    for (std::size_t i = 0; i < state.terms.size(); ++i) {
        const auto& term = state.terms[i];
        state.costs[i] = RefineState::term_cost(term, state.g[static_cast<std::size_t>(term.j)],
                                                state.g[static_cast<std::size_t>(term.k)], mixture);
    }
    double total = state.total();
    if (!std::isfinite(total))
        throw divergence_error("refinement objective is non-finite at the initial point");

    long accepted_steps = 0;
    int sweeps = 0;

    auto grad_weights = [&](int n) {
        return weights_gradient_core(n, dims[static_cast<std::size_t>(n)].discretized.masses,
                                     state.g, mixture, pairs);
    };

    auto grad_mixture = [&] { return mixture_gradient_core(state.g, mixture, pairs); };

    for (int sweep = 1; sweep <= config.stage3_max_sweeps; ++sweep) {
        const double sweep_start = total;

        for (int n = 0; n < n_dims; ++n) {
            if (state.terms_of_dim[static_cast<std::size_t>(n)].empty()) continue;
            const std::string unit = "B[" + std::to_string(n) + "]";
            const Eigen::MatrixXd& dn = dims[static_cast<std::size_t>(n)].discretized.masses;
            double rate = config.rate_weights;
            for (int it = 0; it < config.stage3_inner_iters; ++it) {
                const Eigen::MatrixXd grad = grad_weights(n);
                double attempt = rate;
                bool accepted = false;
                Eigen::MatrixXd cand_b, cand_g;
                std::vector<double> cand_costs;
                double cand_total = 0.0;
                for (int h = 0; h <= config.max_backtracks; ++h) {
                    cand_b = mirror_step(weights[static_cast<std::size_t>(n)], grad, attempt, true);
                    cand_g = dn * cand_b;
                    cand_costs = state.costs;
                    for (std::size_t i : state.terms_of_dim[static_cast<std::size_t>(n)]) {
                        const auto& term = state.terms[i];
                        const Eigen::MatrixXd& gj =
                            term.j == n ? cand_g : state.g[static_cast<std::size_t>(term.j)];
                        const Eigen::MatrixXd& gk =
                            term.k == n ? cand_g : state.g[static_cast<std::size_t>(term.k)];
                        cand_costs[i] = RefineState::term_cost(term, gj, gk, mixture);
                    }
                    cand_total = 0.0;
                    for (double c : cand_costs) cand_total += c;
                    if (!std::isfinite(cand_total))
                        throw divergence_error(unit +
                                               ": objective diverged; lower eta_B (rate_weights)");
                    if (cand_total <= total) {
                        accepted = true;
                        break;
                    }
                    attempt *= 0.5;
                }
                if (!accepted) break;
                rate = attempt;
                weights[static_cast<std::size_t>(n)] = std::move(cand_b);
                state.g[static_cast<std::size_t>(n)] = std::move(cand_g);
                state.costs = std::move(cand_costs);
                const double before = total;
                total = cand_total;
                ++accepted_steps;
                if (trace) trace->push_back({3, unit, accepted_steps, total});
                if (before - total <= config.stage3_tol * std::max(before, 1e-300)) break;
            }
        }

        {
            double rate = config.rate_mixture;
            for (int it = 0; it < config.stage3_inner_iters; ++it) {
                const Eigen::VectorXd grad = grad_mixture();
                double attempt = rate;
                bool accepted = false;
                Eigen::VectorXd cand_mix;
                std::vector<double> cand_costs;
                double cand_total = 0.0;
                for (int h = 0; h <= config.max_backtracks; ++h) {
                    cand_mix = mirror_step(mixture, grad, attempt, true);
                    cand_costs.assign(state.terms.size(), 0.0);
                    for (std::size_t i = 0; i < state.terms.size(); ++i) {
                        const auto& term = state.terms[i];
                        cand_costs[i] = RefineState::term_cost(
                            term, state.g[static_cast<std::size_t>(term.j)],
                            state.g[static_cast<std::size_t>(term.k)], cand_mix);
                    }
                    cand_total = 0.0;
                    for (double c : cand_costs) cand_total += c;
                    if (!std::isfinite(cand_total))
                        throw divergence_error(
                            "lambda: objective diverged; lower eta_L (rate_mixture)");
                    if (cand_total <= total) {
                        accepted = true;
                        break;
                    }
                    attempt *= 0.5;
                }
                if (!accepted) break;
                rate = attempt;
                mixture = std::move(cand_mix);
                state.costs = std::move(cand_costs);
                const double before = total;
                total = cand_total;
                ++accepted_steps;
                if (trace) trace->push_back({3, "lambda", accepted_steps, total});
                if (before - total <= config.stage3_tol * std::max(before, 1e-300)) break;
            }
        }

        sweeps = sweep;
        if (sweep_start - total <= config.stage3_tol * std::max(sweep_start, 1e-300)) break;
    }

    return {std::move(weights), std::move(mixture), total, sweeps};
}

double pairwise_objective(const std::vector<Eigen::MatrixXd>& weights,
                          const Eigen::VectorXd& mixture,
                          const std::map<std::pair<int, int>, PairwiseHistogram>& pairs,
                          const std::vector<ModelDimension>& dims) {
    const std::vector<Eigen::MatrixXd> g = discretized_factors(weights, mixture, dims);
    check_pairs(pairs, static_cast<int>(dims.size()), g);
    double total = 0.0;
    for (const auto& [key, hist] : pairs) {
        const Eigen::MatrixXd approx = g[static_cast<std::size_t>(key.first)] *
                                       mixture.asDiagonal() *
                                       g[static_cast<std::size_t>(key.second)].transpose();
        total += (hist.zhat - approx).squaredNorm();
    }
    return total;
}

Eigen::MatrixXd objective_gradient_weights(const std::vector<Eigen::MatrixXd>& weights,
                                           const Eigen::VectorXd& mixture,
                                           const std::map<std::pair<int, int>, PairwiseHistogram>& pairs,
                                           const std::vector<ModelDimension>& dims, int dim) {
    if (dim < 0 || dim >= static_cast<int>(dims.size()))
        throw config_error("gradient requested for a dimension outside the model");
    const std::vector<Eigen::MatrixXd> g = discretized_factors(weights, mixture, dims);
    check_pairs(pairs, static_cast<int>(dims.size()), g);
    return weights_gradient_core(dim, dims[static_cast<std::size_t>(dim)].discretized.masses, g,
                                 mixture, pairs);
}

Eigen::VectorXd objective_gradient_mixture(const std::vector<Eigen::MatrixXd>& weights,
                                           const Eigen::VectorXd& mixture,
                                           const std::map<std::pair<int, int>, PairwiseHistogram>& pairs,
                                           const std::vector<ModelDimension>& dims) {
    const std::vector<Eigen::MatrixXd> g = discretized_factors(weights, mixture, dims);
    check_pairs(pairs, static_cast<int>(dims.size()), g);
    return mixture_gradient_core(g, mixture, pairs);
}

FitOutput fit(const Dataset& dataset, const std::vector<Dictionary>& dictionaries,
              const FitConfig& config) {
    config.validate();
    const int n_dims = dataset.num_cols();
    if (n_dims < 2) throw config_error("fitting needs at least two dimensions");
    if (static_cast<int>(dictionaries.size()) != n_dims)
        throw config_error("one dictionary per dataset column is required");

    std::vector<Grid> grids;
    grids.reserve(static_cast<std::size_t>(n_dims));
    for (int n = 0; n < n_dims; ++n) {
        const ColumnMeta& meta = dataset.column(n);
        const Dictionary& dict = dictionaries[static_cast<std::size_t>(n)];
        if (meta.is_discrete() != dict.is_discrete())
            throw config_error("dictionary " + std::to_string(n) +
                               " does not match the column kind");
        if (meta.is_discrete()) {
            if (dict.num_states() != meta.num_states)
                throw config_error("dictionary " + std::to_string(n) +
                                   " covers a different number of states than the column");
            grids.push_back(Grid::discrete(meta.num_states));
        } else {
            grids.push_back(propose_grid(dataset, n, config.histogram_bins));
        }
    }

    std::vector<ModelDimension> dims;
    dims.reserve(static_cast<std::size_t>(n_dims));
    for (int n = 0; n < n_dims; ++n)
        dims.emplace_back(dictionaries[static_cast<std::size_t>(n)],
                          grids[static_cast<std::size_t>(n)], config.coverage_threshold);

    const auto pairs = estimate_all_pairs(dataset, grids);

    std::vector<TraceRecord> trace;
    std::map<std::pair<int, int>, PairCoupling> couplings;
    if (!config.parallel_pairs) {
        for (const auto& [key, hist] : pairs)
            couplings.emplace(key, stage1_fit_pair(hist,
                                                   dims[static_cast<std::size_t>(key.first)].discretized,
                                                   dims[static_cast<std::size_t>(key.second)].discretized,
                                                   config, &trace));
    } else {
        // Each pair derives its own seed, so parallel execution reproduces
        // the sequential result; the per-pair traces are merged in pair
        // order afterwards.
        std::vector<std::pair<int, int>> keys;
        keys.reserve(pairs.size());
        for (const auto& [key, hist] : pairs) keys.push_back(key);
        std::vector<PairCoupling> results(keys.size());
        std::vector<std::vector<TraceRecord>> local(keys.size());
        std::atomic<std::size_t> next{0};
        std::exception_ptr first_error;
        std::mutex error_mutex;
        auto worker = [&] {
            for (;;) {
                const std::size_t i = next.fetch_add(1);
                if (i >= keys.size()) return;
                try {
                    const auto& hist = pairs.at(keys[i]);
                    results[i] = stage1_fit_pair(
                        hist, dims[static_cast<std::size_t>(keys[i].first)].discretized,
                        dims[static_cast<std::size_t>(keys[i].second)].discretized, config,
                        &local[i]);
                } catch (...) {
                    const std::lock_guard<std::mutex> lock(error_mutex);
                    if (!first_error) first_error = std::current_exception();
                    return;
                }
            }
        };
        std::vector<std::thread> pool;
        const int n_threads = thread_budget(keys.size());
        pool.reserve(static_cast<std::size_t>(n_threads));
        for (int i = 0; i < n_threads; ++i) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
        if (first_error) std::rethrow_exception(first_error);
        for (std::size_t i = 0; i < keys.size(); ++i) {
            couplings.emplace(keys[i], std::move(results[i]));
            trace.insert(trace.end(), local[i].begin(), local[i].end());
        }
    }

    std::vector<int> atom_counts;
    atom_counts.reserve(static_cast<std::size_t>(n_dims));
    for (const auto& dict : dictionaries) atom_counts.push_back(dict.size());

    const AssembledMatrix assembled = assemble_coupling_matrix(couplings, atom_counts, config);
    const SpaFactors spa = spa_extract(assembled, config.rank, config.spa_on_transpose);
    FactorEstimate estimate = factor_split(spa.w, spa.h, assembled);

    // Floor before the multiplicative stage: exact zeros would stay zero
    // under every update.
    for (auto& b : estimate.weights) {
        b = b.cwiseMax(1e-12);
        for (Eigen::Index r = 0; r < b.cols(); ++r) b.col(r) /= b.col(r).sum();
    }
    Eigen::VectorXd mixture = estimate.mixture.cwiseMax(1e-12);
    mixture /= mixture.sum();

    Stage3Result refined =
        stage3_refine(std::move(estimate.weights), std::move(mixture), pairs, dims, config, &trace);

    JointModel model(std::move(dims), std::move(refined.weights), std::move(refined.mixture));
    return {std::move(model), std::move(trace), refined.objective};
}

} // namespace jupad
