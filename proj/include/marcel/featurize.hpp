#pragma once

#include <array>
#include <cstdio>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "marcel/chem.hpp"
#include "marcel/elements.hpp"
#include "marcel/errors.hpp"

namespace marcel {

// Categorical atom and bond descriptors. Every column is a small vocabulary
// index suitable for an embedding table; the last index of each vocabulary is
// a catch-all bucket for out-of-range values.
inline constexpr int kNumNodeFeatures = 9;
inline constexpr int kNumEdgeFeatures = 3;

// Column order: atomic number, chiral tag, total degree, formal charge,
// total H count, radical electrons, hybridization, aromatic flag, ring flag.
inline constexpr std::array<int, kNumNodeFeatures> kNodeFeatureDims = {119, 4, 12, 12, 10, 6, 8, 2, 2};
// Column order: bond type, bond stereo, conjugated flag.
inline constexpr std::array<int, kNumEdgeFeatures> kEdgeFeatureDims = {5, 6, 2};

struct FeatureMatrices {
  std::vector<std::array<int, kNumNodeFeatures>> node_features;  // one row per atom
  std::vector<std::pair<int, int>> edges;                        // directed, both ways per bond
  std::vector<std::array<int, kNumEdgeFeatures>> edge_features;  // one row per directed edge
};

// Hook for out-of-range warnings; tests swap this out to count clamps.
inline std::function<void(const std::string&)>& feature_warning_handler() {
  static std::function<void(const std::string&)> handler = [](const std::string& msg) {
    std::fprintf(stderr, "warning: %s\n", msg.c_str());
  };
  return handler;
}

namespace detail {

inline int clamp_to_vocab(int value, int lo, int hi, int misc_index, const char* what) {
  if (value < lo || value > hi) {
    feature_warning_handler()(std::string(what) + " value " + std::to_string(value) +
                              " outside [" + std::to_string(lo) + ", " + std::to_string(hi) +
                              "], using catch-all bucket");
    return misc_index;
  }
  return value - lo;
}

}  // namespace detail

inline FeatureMatrices featurize_molecule(const Molecule& mol) {
  validate_molecule(mol);
  FeatureMatrices out;
  out.node_features.reserve(mol.atoms.size());
  for (const AtomRecord& a : mol.atoms) {
    std::array<int, kNumNodeFeatures> row{};
    const int z = atomic_number(a.element);
    row[0] = (z >= 1 && z <= 118) ? z - 1 : 118;
    row[1] = static_cast<int>(a.chiral_tag);  // Other doubles as the catch-all
    row[2] = detail::clamp_to_vocab(a.degree, 0, 10, 11, "degree");
    row[3] = detail::clamp_to_vocab(a.formal_charge, -5, 5, 11, "formal charge");
    row[4] = detail::clamp_to_vocab(a.num_hs, 0, 8, 9, "H count");
    row[5] = detail::clamp_to_vocab(a.radical_electrons, 0, 4, 5, "radical electron count");
    const int hyb = static_cast<int>(a.hybridization);
    row[6] = (hyb >= 0 && hyb <= 6) ? hyb : 7;
    row[7] = a.is_aromatic ? 1 : 0;
    row[8] = a.in_ring ? 1 : 0;
    out.node_features.push_back(row);
  }

  out.edges.reserve(2 * mol.bonds.size());
  out.edge_features.reserve(2 * mol.bonds.size());
  for (const Bond& b : mol.bonds) {
    std::array<int, kNumEdgeFeatures> row{};
    const int order = static_cast<int>(b.order);
    row[0] = (order >= 0 && order <= 3) ? order : 4;
    const int stereo = static_cast<int>(b.stereo);
    row[1] = (stereo >= 0 && stereo <= 4) ? stereo : 5;
    row[2] = b.conjugated ? 1 : 0;
    out.edges.emplace_back(b.i, b.j);
    out.edge_features.push_back(row);
    out.edges.emplace_back(b.j, b.i);
    out.edge_features.push_back(row);
  }
  return out;
}

}  // namespace marcel
