#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <thread>
#include <vector>

#include "marcel/chem.hpp"
#include "marcel/errors.hpp"

namespace marcel {

struct AlignmentResult {
  std::array<std::array<double, 3>, 3> rotation{{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}};
  Vec3 translation{};
  double rmsd = 0;
};

// Least-RMSD rigid superposition of P onto Q (R * p + t ~ q). Proper rotation
// enforced by sign-correcting the smallest singular vector.
inline AlignmentResult kabsch_align(const std::vector<Vec3>& P, const std::vector<Vec3>& Q) {
  if (P.size() != Q.size())
    throw ShapeMismatch("kabsch_align: " + std::to_string(P.size()) + " vs " +
                        std::to_string(Q.size()) + " points");
  if (P.empty()) throw InvalidArgument("kabsch_align: empty point set");
  const std::size_t n = P.size();

  Eigen::Vector3d pc = Eigen::Vector3d::Zero(), qc = Eigen::Vector3d::Zero();
  for (std::size_t i = 0; i < n; ++i) {
    pc += Eigen::Vector3d(P[i].x, P[i].y, P[i].z);
    qc += Eigen::Vector3d(Q[i].x, Q[i].y, Q[i].z);
  }
  pc /= static_cast<double>(n);
  qc /= static_cast<double>(n);

  Eigen::Matrix3d H = Eigen::Matrix3d::Zero();
  for (std::size_t i = 0; i < n; ++i) {
    const Eigen::Vector3d p(P[i].x - pc.x(), P[i].y - pc.y(), P[i].z - pc.z());
    const Eigen::Vector3d q(Q[i].x - qc.x(), Q[i].y - qc.y(), Q[i].z - qc.z());
    H += p * q.transpose();
  }

  Eigen::Matrix3d R = Eigen::Matrix3d::Identity();
  if (H.norm() > 0) {
    Eigen::JacobiSVD<Eigen::Matrix3d> svd(H, Eigen::ComputeFullU | Eigen::ComputeFullV);
    const Eigen::Matrix3d U = svd.matrixU(), V = svd.matrixV();
    const double d = (V * U.transpose()).determinant();
    Eigen::Matrix3d S = Eigen::Matrix3d::Identity();
    S(2, 2) = d < 0 ? -1.0 : 1.0;
    R = V * S * U.transpose();
  }
  const Eigen::Vector3d t = qc - R * pc;

  double se = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const Eigen::Vector3d p(P[i].x, P[i].y, P[i].z);
    const Eigen::Vector3d q(Q[i].x, Q[i].y, Q[i].z);
    se += (R * p + t - q).squaredNorm();
  }

  AlignmentResult out;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) out.rotation[r][c] = R(r, c);
  out.translation = {t.x(), t.y(), t.z()};
  out.rmsd = std::sqrt(se / static_cast<double>(n));
  return out;
}

// ---------------------------------------------------------------------------
// Graph automorphisms
// ---------------------------------------------------------------------------

namespace detail {

struct AutomorphismSearch {
  int n = 0;
  std::vector<int8_t> adj;  // n*n; -1 = no bond, else bond order tag
  std::vector<const std::string*> element;
  std::vector<int> degree;
  std::vector<int> order;  // visit order, most-constrained first

  explicit AutomorphismSearch(const Molecule& mol) {
    n = mol.atom_count();
    adj.assign(static_cast<std::size_t>(n) * n, -1);
    element.resize(n);
    degree.assign(n, 0);
    for (int v = 0; v < n; ++v) element[v] = &mol.atoms[v].element;
    for (const Bond& b : mol.bonds) {
      adj[static_cast<std::size_t>(b.i) * n + b.j] = static_cast<int8_t>(b.order);
      adj[static_cast<std::size_t>(b.j) * n + b.i] = static_cast<int8_t>(b.order);
      degree[b.i]++;
      degree[b.j]++;
    }
    order.resize(n);
    std::iota(order.begin(), order.end(), 0);
    // high degree first narrows the search quickly; ties by index for determinism
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return degree[a] > degree[b]; });
  }

  bool compatible(int v, int w) const {
    return degree[v] == degree[w] && *element[v] == *element[w];
  }

  // Enumerates element- and bond-preserving permutations; stops when the
  // visitor returns false or max_count permutations have been emitted.
  void enumerate(std::size_t max_count, const std::function<bool(const std::vector<int>&)>& visit) const {
    std::vector<int> sigma(n, -1);
    std::vector<bool> used(n, false);
    std::size_t emitted = 0;
    std::function<bool(int)> rec = [&](int depth) -> bool {
      if (depth == n) {
        ++emitted;
        if (!visit(sigma)) return false;
        return emitted < max_count;
      }
      const int v = order[depth];
      for (int w = 0; w < n; ++w) {
        if (used[w] || !compatible(v, w)) continue;
        bool ok = true;
        for (int d = 0; d < depth; ++d) {
          const int u = order[d];
          if (adj[static_cast<std::size_t>(v) * n + u] !=
              adj[static_cast<std::size_t>(w) * n + sigma[u]]) {
            ok = false;
            break;
          }
        }
        if (!ok) continue;
        sigma[v] = w;
        used[w] = true;
        const bool keep_going = rec(depth + 1);
        sigma[v] = -1;
        used[w] = false;
        if (!keep_going) return false;
      }
      return true;
    };
    rec(0);
  }
};

}  // namespace detail

// All graph automorphisms of the molecule, up to `cap` of them.
inline std::vector<std::vector<int>> enumerate_automorphisms(const Molecule& mol, int cap) {
  if (cap <= 0) throw InvalidArgument("automorphism cap must be > 0");
  validate_molecule(mol);
  detail::AutomorphismSearch search(mol);
  std::vector<std::vector<int>> perms;
  search.enumerate(static_cast<std::size_t>(cap), [&](const std::vector<int>& sigma) {
    perms.push_back(sigma);
    return true;
  });
  return perms;
}

namespace detail {

inline double min_rmsd_over_perms(const std::vector<Vec3>& A, const std::vector<Vec3>& B,
                                  const std::vector<std::vector<int>>& perms) {
  // identity first so the result never exceeds the plain Kabsch RMSD
  double best = kabsch_align(A, B).rmsd;
  std::vector<Vec3> permuted(B.size());
  for (const std::vector<int>& sigma : perms) {
    bool identity = true;
    for (std::size_t i = 0; i < sigma.size(); ++i) {
      if (sigma[i] != static_cast<int>(i)) {
        identity = false;
        break;
      }
    }
    if (identity) continue;
    for (std::size_t i = 0; i < sigma.size(); ++i) permuted[i] = B[sigma[i]];
    best = std::min(best, kabsch_align(A, permuted).rmsd);
  }
  return best;
}

}  // namespace detail

// Minimum Kabsch RMSD over enumerated graph automorphisms of the parent
// molecule (identity always considered).
inline double symmetry_aware_rmsd(const Molecule& mol, const Conformer& A, const Conformer& B,
                                  int automorphism_cap = 10000) {
  if (automorphism_cap <= 0) throw InvalidArgument("automorphism cap must be > 0");
  validate_conformer(mol, A);
  validate_conformer(mol, B);
  const auto perms = enumerate_automorphisms(mol, automorphism_cap);
  return detail::min_rmsd_over_perms(A.coords, B.coords, perms);
}

// ---------------------------------------------------------------------------
// Butina clustering
// ---------------------------------------------------------------------------

struct ClusterAssignment {
  // (centroid index, member indices incl. the centroid, ascending)
  std::vector<std::pair<int, std::vector<int>>> clusters;
  double threshold = 0;
};

// Sphere-exclusion clustering: repeatedly promote the unassigned point with
// the most unassigned neighbors (ties broken by lowest index) to centroid and
// absorb its unassigned neighborhood.
inline ClusterAssignment butina_cluster(const std::vector<std::vector<double>>& distances,
                                        double threshold) {
  if (!(threshold > 0)) throw InvalidArgument("threshold must be > 0");
  const int n = static_cast<int>(distances.size());
  for (int i = 0; i < n; ++i) {
    if (static_cast<int>(distances[i].size()) != n)
      throw InvalidArgument("distance matrix is not square");
    for (int j = 0; j < n; ++j) {
      if (std::abs(distances[i][j] - distances[j][i]) > 1e-9)
        throw InvalidArgument("distance matrix is not symmetric");
    }
  }

  ClusterAssignment out;
  out.threshold = threshold;
  std::vector<bool> assigned(n, false);
  int remaining = n;
  while (remaining > 0) {
    int best = -1, best_count = -1;
    for (int i = 0; i < n; ++i) {
      if (assigned[i]) continue;
      int count = 0;
      for (int j = 0; j < n; ++j) {
        if (j != i && !assigned[j] && distances[i][j] <= threshold) ++count;
      }
      if (count > best_count) {
        best = i;
        best_count = count;
      }
    }
    std::vector<int> members{best};
    assigned[best] = true;
    --remaining;
    for (int j = 0; j < n; ++j) {
      if (j != best && !assigned[j] && distances[best][j] <= threshold) {
        members.push_back(j);
        assigned[j] = true;
        --remaining;
      }
    }
    std::sort(members.begin(), members.end());
    out.clusters.emplace_back(best, std::move(members));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Ensemble deduplication
// ---------------------------------------------------------------------------

// Copy of the ensemble with hydrogens removed from both graph and coordinates.
inline ConformerEnsemble strip_hydrogens(const ConformerEnsemble& ensemble) {
  const Molecule& mol = ensemble.molecule;
  std::vector<int> keep, remap(mol.atom_count(), -1);
  for (int i = 0; i < mol.atom_count(); ++i) {
    if (!is_hydrogen(mol.atoms[i].element)) {
      remap[i] = static_cast<int>(keep.size());
      keep.push_back(i);
    }
  }
  if (keep.empty()) return ensemble;  // all-hydrogen input; nothing to strip against
  ConformerEnsemble out;
  out.molecule.identifier = mol.identifier;
  for (int i : keep) out.molecule.atoms.push_back(mol.atoms[i]);
  for (const Bond& b : mol.bonds) {
    if (remap[b.i] >= 0 && remap[b.j] >= 0) {
      Bond nb = b;
      nb.i = remap[b.i];
      nb.j = remap[b.j];
      out.molecule.bonds.push_back(nb);
    }
  }
  for (const Conformer& c : ensemble.conformers) {
    Conformer nc;
    nc.energy = c.energy;
    for (int i : keep) nc.coords.push_back(c.coords[i]);
    out.conformers.push_back(std::move(nc));
  }
  return out;
}

// Pairwise symmetry-aware RMSD matrix. Pairs are independent, so the work may
// be split across threads; the result does not depend on the schedule.
inline std::vector<std::vector<double>> pairwise_rmsd_matrix(const ConformerEnsemble& ensemble,
                                                             int automorphism_cap = 10000,
                                                             int n_threads = 1) {
  validate_ensemble(ensemble);
  const int n = static_cast<int>(ensemble.conformers.size());
  const auto perms = enumerate_automorphisms(ensemble.molecule, automorphism_cap);
  std::vector<std::vector<double>> d(n, std::vector<double>(n, 0.0));

  std::vector<std::pair<int, int>> pairs;
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) pairs.emplace_back(i, j);

  auto work = [&](std::size_t begin, std::size_t end) {
    for (std::size_t k = begin; k < end; ++k) {
      const auto [i, j] = pairs[k];
      const double r = detail::min_rmsd_over_perms(ensemble.conformers[i].coords,
                                                   ensemble.conformers[j].coords, perms);
      d[i][j] = r;
      d[j][i] = r;
    }
  };

  if (n_threads <= 1 || pairs.size() < 2) {
    work(0, pairs.size());
  } else {
    const std::size_t nt = std::min<std::size_t>(n_threads, pairs.size());
    std::vector<std::thread> threads;
    const std::size_t chunk = (pairs.size() + nt - 1) / nt;
    for (std::size_t t = 0; t < nt; ++t) {
      const std::size_t begin = t * chunk;
      const std::size_t end = std::min(pairs.size(), begin + chunk);
      if (begin < end) threads.emplace_back(work, begin, end);
    }
    for (auto& th : threads) th.join();
  }
  return d;
}

struct DedupResult {
  ConformerEnsemble ensemble;
  ClusterAssignment clusters;
  std::vector<int> survivor_indices;  // into the input ensemble, ascending
};

// Butina-clusters the ensemble on symmetry-aware RMSD and keeps the
// lowest-energy member of each cluster (ties by lowest index). Survivor order
// follows the input order; Boltzmann weights are recomputed over survivors.
inline DedupResult deduplicate_ensemble_full(const ConformerEnsemble& ensemble, double threshold,
                                             int automorphism_cap = 10000,
                                             const BoltzmannParams& params = {},
                                             bool heavy_only = false, int n_threads = 1) {
  if (!(threshold > 0)) throw InvalidArgument("threshold must be > 0");
  validate_ensemble(ensemble);

  ConformerEnsemble stripped;
  const ConformerEnsemble* matrix_source = &ensemble;
  if (heavy_only) {
    stripped = strip_hydrogens(ensemble);
    matrix_source = &stripped;
  }
  const auto d = pairwise_rmsd_matrix(*matrix_source, automorphism_cap, n_threads);
  ClusterAssignment clusters = butina_cluster(d, threshold);

  std::vector<int> survivors;
  for (const auto& [centroid, members] : clusters.clusters) {
    int best = members.front();
    for (int m : members) {
      if (ensemble.conformers[m].energy < ensemble.conformers[best].energy) best = m;
    }
    survivors.push_back(best);
  }
  std::sort(survivors.begin(), survivors.end());

  DedupResult out;
  out.clusters = std::move(clusters);
  out.survivor_indices = survivors;
  out.ensemble.molecule = ensemble.molecule;
  std::vector<double> energies;
  for (int s : survivors) {
    out.ensemble.conformers.push_back(ensemble.conformers[s]);
    energies.push_back(ensemble.conformers[s].energy);
  }
  out.ensemble.weights = boltzmann_weights(energies, params);
  return out;
}

inline ConformerEnsemble deduplicate_ensemble(const ConformerEnsemble& ensemble, double threshold,
                                              int automorphism_cap = 10000,
                                              const BoltzmannParams& params = {},
                                              bool heavy_only = false, int n_threads = 1) {
  return deduplicate_ensemble_full(ensemble, threshold, automorphism_cap, params, heavy_only,
                                   n_threads)
      .ensemble;
}

}  // namespace marcel
