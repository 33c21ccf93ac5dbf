#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "marcel/elements.hpp"
#include "marcel/errors.hpp"

namespace marcel {

// ---------------------------------------------------------------------------
// Domain model
// ---------------------------------------------------------------------------

enum class BondOrder : uint8_t { Single = 0, Double, Triple, Aromatic };

// Wedge/hash and double-bond stereo annotations as molfiles declare them.
enum class BondStereo : uint8_t { None = 0, Up, Down, Either, CisOrTrans };

enum class ChiralTag : uint8_t { Unspecified = 0, Clockwise, CounterClockwise, Other };

enum class Hybridization : uint8_t { Unspecified = 0, S, SP, SP2, SP3, SP3D, SP3D2 };

struct AtomRecord {
  std::string element;
  int formal_charge = 0;
  ChiralTag chiral_tag = ChiralTag::Unspecified;
  Hybridization hybridization = Hybridization::Unspecified;
  bool is_aromatic = false;
  bool in_ring = false;
  int degree = 0;
  int num_hs = 0;
  int radical_electrons = 0;
};

struct Bond {
  int i = 0;
  int j = 0;
  BondOrder order = BondOrder::Single;
  BondStereo stereo = BondStereo::None;
  bool conjugated = false;
  bool in_ring = false;
};

struct Molecule {
  std::vector<AtomRecord> atoms;
  std::vector<Bond> bonds;
  std::string identifier;

  int atom_count() const { return static_cast<int>(atoms.size()); }
  int bond_count() const { return static_cast<int>(bonds.size()); }
};

struct Vec3 {
  double x = 0, y = 0, z = 0;
};

inline double distance(const Vec3& a, const Vec3& b) {
  const double dx = a.x - b.x, dy = a.y - b.y, dz = a.z - b.z;
  return std::sqrt(dx * dx + dy * dy + dz * dz);
}

struct Conformer {
  std::vector<Vec3> coords;  // Angstrom
  double energy = 0.0;       // in the dataset's configured unit
};

struct ConformerEnsemble {
  Molecule molecule;
  std::vector<Conformer> conformers;
  std::optional<std::vector<double>> weights;
};

// One regression example. Molecular datasets carry one role-tagged ensemble,
// reaction datasets exactly two (e.g. pro_R/pro_S or unbound/bound).
struct Sample {
  std::vector<std::pair<std::string, ConformerEnsemble>> ensembles;
  std::map<std::string, double> targets;
};

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

inline void validate_molecule(const Molecule& mol) {
  if (mol.atoms.empty()) throw DataError("molecule '" + mol.identifier + "' has no atoms");
  const int n = mol.atom_count();
  std::vector<std::pair<int, int>> seen;
  seen.reserve(mol.bonds.size());
  for (const Bond& b : mol.bonds) {
    if (b.i < 0 || b.i >= n || b.j < 0 || b.j >= n)
      throw DataError("bond endpoint out of range in '" + mol.identifier + "'");
    if (b.i == b.j) throw DataError("self-bond in '" + mol.identifier + "'");
    auto key = std::minmax(b.i, b.j);
    if (std::find(seen.begin(), seen.end(), std::pair<int, int>(key.first, key.second)) !=
        seen.end())
      throw DataError("duplicate bond in '" + mol.identifier + "'");
    seen.emplace_back(key.first, key.second);
  }
}

inline void validate_conformer(const Molecule& mol, const Conformer& c) {
  if (static_cast<int>(c.coords.size()) != mol.atom_count())
    throw ShapeMismatch("conformer has " + std::to_string(c.coords.size()) + " rows, molecule has " +
                        std::to_string(mol.atom_count()) + " atoms");
  for (const Vec3& p : c.coords) {
    if (!std::isfinite(p.x) || !std::isfinite(p.y) || !std::isfinite(p.z))
      throw DataError("non-finite coordinate in conformer of '" + mol.identifier + "'");
  }
}

inline void validate_ensemble(const ConformerEnsemble& e) {
  validate_molecule(e.molecule);
  if (e.conformers.empty()) throw EmptyEnsemble("ensemble of '" + e.molecule.identifier + "' is empty");
  for (const Conformer& c : e.conformers) validate_conformer(e.molecule, c);
  if (e.weights) {
    if (e.weights->size() != e.conformers.size())
      throw ShapeMismatch("weight count != conformer count");
    double sum = 0;
    for (double w : *e.weights) {
      if (w < 0) throw DataError("negative Boltzmann weight");
      sum += w;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw DataError("Boltzmann weights do not sum to 1");
  }
}

// ---------------------------------------------------------------------------
// Graph-derived fields
// ---------------------------------------------------------------------------

namespace detail {

// Bridge (cut-edge) detection; a bond is in a ring iff it is not a bridge.
inline std::vector<bool> find_bridges(const Molecule& mol) {
  const int n = mol.atom_count();
  const int m = mol.bond_count();
  std::vector<std::vector<std::pair<int, int>>> adj(n);  // (neighbor, bond index)
  for (int e = 0; e < m; ++e) {
    adj[mol.bonds[e].i].emplace_back(mol.bonds[e].j, e);
    adj[mol.bonds[e].j].emplace_back(mol.bonds[e].i, e);
  }
  std::vector<bool> bridge(m, false);
  std::vector<int> disc(n, -1), low(n, 0);
  int timer = 0;
  // iterative DFS; frame = (node, incoming bond, next adjacency slot)
  struct Frame {
    int v, in_edge;
    std::size_t next;
  };
  for (int root = 0; root < n; ++root) {
    if (disc[root] != -1) continue;
    std::vector<Frame> stack{{root, -1, 0}};
    disc[root] = low[root] = timer++;
    while (!stack.empty()) {
      Frame& f = stack.back();
      if (f.next < adj[f.v].size()) {
        auto [u, e] = adj[f.v][f.next++];
        if (e == f.in_edge) continue;
        if (disc[u] == -1) {
          disc[u] = low[u] = timer++;
          stack.push_back({u, e, 0});
        } else {
          low[f.v] = std::min(low[f.v], disc[u]);
        }
      } else {
        const int v = f.v, e = f.in_edge;
        stack.pop_back();
        if (!stack.empty()) {
          const int parent = stack.back().v;
          low[parent] = std::min(low[parent], low[v]);
          if (low[v] > disc[parent]) bridge[e] = true;
        }
      }
    }
  }
  return bridge;
}

}  // namespace detail

// Recomputes degree, ring flags, attached-H counts, and aromatic atom flags
// from the bond list. Aromaticity comes only from declared aromatic bonds; no
// perception is attempted.
inline void compute_derived_fields(Molecule& mol) {
  validate_molecule(mol);
  for (AtomRecord& a : mol.atoms) {
    a.degree = 0;
    a.num_hs = 0;
    a.in_ring = false;
    a.is_aromatic = false;
  }
  const std::vector<bool> bridge = detail::find_bridges(mol);
  for (std::size_t e = 0; e < mol.bonds.size(); ++e) {
    Bond& b = mol.bonds[e];
    b.in_ring = !bridge[e];
    mol.atoms[b.i].degree++;
    mol.atoms[b.j].degree++;
    if (is_hydrogen(mol.atoms[b.j].element)) mol.atoms[b.i].num_hs++;
    if (is_hydrogen(mol.atoms[b.i].element)) mol.atoms[b.j].num_hs++;
    if (b.in_ring) {
      mol.atoms[b.i].in_ring = true;
      mol.atoms[b.j].in_ring = true;
    }
    if (b.order == BondOrder::Aromatic) {
      b.conjugated = true;
      mol.atoms[b.i].is_aromatic = true;
      mol.atoms[b.j].is_aromatic = true;
    }
  }
}

// ---------------------------------------------------------------------------
// Ensemble mathematics
// ---------------------------------------------------------------------------

// kB in kcal/(mol K); energies default to kcal/mol.
inline constexpr double kBoltzmannKcalPerMolK = 0.0019872041;
inline constexpr double kDefaultTemperatureK = 298.15;

enum class EnergyUnit : uint8_t { KcalPerMol = 0, KJPerMol, ElectronVolt, Hartree };

inline double boltzmann_constant(EnergyUnit unit) {
  switch (unit) {
    case EnergyUnit::KcalPerMol: return kBoltzmannKcalPerMolK;
    case EnergyUnit::KJPerMol: return 0.0083144626;
    case EnergyUnit::ElectronVolt: return 8.617333262e-5;
    case EnergyUnit::Hartree: return 3.166811563e-6;
  }
  throw InvalidArgument("unknown energy unit");
}

struct BoltzmannParams {
  double temperature = kDefaultTemperatureK;  // K
  double kB = kBoltzmannKcalPerMolK;          // energy unit per K
};

// p_i = exp(-e_i / kB T) / sum_j exp(-e_j / kB T), computed with the minimum
// energy subtracted first so large energies cannot overflow.
inline std::vector<double> boltzmann_weights(const std::vector<double>& energies,
                                             double temperature = kDefaultTemperatureK,
                                             double kB = kBoltzmannKcalPerMolK) {
  if (energies.empty()) throw EmptyEnsemble();
  if (!(temperature > 0)) throw InvalidArgument("temperature must be > 0");
  if (!(kB > 0)) throw InvalidArgument("kB must be > 0");
  for (double e : energies) {
    if (!std::isfinite(e)) throw InvalidEnergy();
  }
  const double emin = *std::min_element(energies.begin(), energies.end());
  const double beta = 1.0 / (kB * temperature);
  std::vector<double> w(energies.size());
  double z = 0;
  for (std::size_t i = 0; i < energies.size(); ++i) {
    w[i] = std::exp(-(energies[i] - emin) * beta);
    z += w[i];
  }
  for (double& x : w) x /= z;
  return w;
}

inline std::vector<double> boltzmann_weights(const std::vector<double>& energies,
                                             const BoltzmannParams& params) {
  return boltzmann_weights(energies, params.temperature, params.kB);
}

inline double boltzmann_average(const std::vector<double>& values,
                                const std::vector<double>& weights) {
  if (values.size() != weights.size())
    throw ShapeMismatch("boltzmann_average: " + std::to_string(values.size()) + " values vs " +
                        std::to_string(weights.size()) + " weights");
  double acc = 0;
  for (std::size_t i = 0; i < values.size(); ++i) acc += weights[i] * values[i];
  return acc;
}

struct RedoxDescriptors {
  double ip = 0;  // ionization potential
  double ea = 0;  // electron affinity
};

inline RedoxDescriptors compute_redox_descriptors(double e_cation, double e_neutral,
                                                  double e_anion) {
  if (!std::isfinite(e_cation) || !std::isfinite(e_neutral) || !std::isfinite(e_anion))
    throw InvalidEnergy();
  return {e_cation - e_neutral, e_neutral - e_anion};
}

// Rotatable bond: single-order, acyclic, and both endpoints are non-terminal
// heavy atoms (each has a heavy neighbor besides the other endpoint). This is
// a plain topological heuristic; it does not exclude amides the way stricter
// SMARTS-based definitions do.
inline int count_rotatable_bonds(const Molecule& mol) {
  validate_molecule(mol);
  const int n = mol.atom_count();
  std::vector<std::vector<int>> heavy_neighbors(n);
  for (const Bond& b : mol.bonds) {
    if (!is_hydrogen(mol.atoms[b.j].element)) heavy_neighbors[b.i].push_back(b.j);
    if (!is_hydrogen(mol.atoms[b.i].element)) heavy_neighbors[b.j].push_back(b.i);
  }
  const std::vector<bool> bridge = detail::find_bridges(mol);
  int count = 0;
  for (std::size_t e = 0; e < mol.bonds.size(); ++e) {
    const Bond& b = mol.bonds[e];
    if (b.order != BondOrder::Single) continue;
    if (!bridge[e]) continue;  // ring bond
    if (is_hydrogen(mol.atoms[b.i].element) || is_hydrogen(mol.atoms[b.j].element)) continue;
    auto non_terminal = [&](int v, int other) {
      for (int u : heavy_neighbors[v])
        if (u != other) return true;
      return false;
    };
    if (non_terminal(b.i, b.j) && non_terminal(b.j, b.i)) ++count;
  }
  return count;
}

}  // namespace marcel
