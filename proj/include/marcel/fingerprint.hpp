#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "marcel/chem.hpp"
#include "marcel/elements.hpp"
#include "marcel/errors.hpp"
#include "marcel/hash64.hpp"

namespace marcel {

enum class FingerprintScheme : uint8_t { Circular = 0, Path };

struct Fingerprint {
  std::vector<uint8_t> bits;  // 0/1 per position
  FingerprintScheme scheme = FingerprintScheme::Circular;
  int parameter = 0;  // radius (circular) or max path length (path)
  int nbits = 0;

  int popcount() const {
    int n = 0;
    for (uint8_t b : bits) n += b;
    return n;
  }
};

namespace detail {

inline uint64_t atom_invariant(const Molecule& mol, int i) {
  const AtomRecord& a = mol.atoms[i];
  return hash_u64_span({static_cast<uint64_t>(atomic_number(a.element)),
                        static_cast<uint64_t>(a.degree),
                        static_cast<uint64_t>(static_cast<int64_t>(a.formal_charge) + 16),
                        static_cast<uint64_t>(a.num_hs),
                        static_cast<uint64_t>(a.in_ring ? 1 : 0)});
}

inline std::vector<std::vector<std::pair<int, int>>> neighbor_lists(const Molecule& mol) {
  std::vector<std::vector<std::pair<int, int>>> nbr(mol.atom_count());  // (neighbor, bond code)
  for (const Bond& b : mol.bonds) {
    nbr[b.i].emplace_back(b.j, static_cast<int>(b.order));
    nbr[b.j].emplace_back(b.i, static_cast<int>(b.order));
  }
  return nbr;
}

}  // namespace detail

// Iterative neighborhood hashing. Each atom starts from a hash of its local
// invariants (element, degree, charge, H count, ring flag); each round folds
// in the sorted (bond order, neighbor identifier) pairs. Every identifier at
// every radius sets one bit. The hash is a fixed 64-bit mix (see hash64.hpp)
// so bit vectors are identical across platforms.
inline Fingerprint circular_fingerprint(const Molecule& mol, int radius = 2, int nbits = 2048) {
  if (radius < 0) throw InvalidArgument("radius must be >= 0");
  if (nbits < 8) throw InvalidArgument("nbits must be >= 8");
  validate_molecule(mol);

  Fingerprint fp;
  fp.scheme = FingerprintScheme::Circular;
  fp.parameter = radius;
  fp.nbits = nbits;
  fp.bits.assign(nbits, 0);

  const int n = mol.atom_count();
  const auto nbr = detail::neighbor_lists(mol);
  std::vector<uint64_t> id(n);
  for (int i = 0; i < n; ++i) id[i] = detail::atom_invariant(mol, i);

  auto set_bit = [&](uint64_t h) { fp.bits[h % static_cast<uint64_t>(nbits)] = 1; };
  for (int i = 0; i < n; ++i) set_bit(id[i]);

  std::vector<uint64_t> next(n);
  for (int r = 1; r <= radius; ++r) {
    for (int i = 0; i < n; ++i) {
      std::vector<std::pair<int, uint64_t>> env;
      env.reserve(nbr[i].size());
      for (const auto& [j, code] : nbr[i]) env.emplace_back(code, id[j]);
      std::sort(env.begin(), env.end());
      uint64_t h = hash_combine(static_cast<uint64_t>(r), id[i]);
      for (const auto& [code, nid] : env) {
        h = hash_combine(h, static_cast<uint64_t>(code));
        h = hash_combine(h, nid);
      }
      next[i] = h;
      set_bit(h);
    }
    id.swap(next);
  }
  return fp;
}

// Hashes every simple bond path of 1..max_len bonds. A path is read as the
// alternating (element, bond order, element, ...) sequence; forward and
// reverse reads map to the same bit, so the result is independent of atom
// numbering. A lone atom has no paths and yields the all-zero vector.
inline Fingerprint path_fingerprint(const Molecule& mol, int max_len = 7, int nbits = 2048) {
  if (max_len < 1) throw InvalidArgument("max path length must be >= 1");
  if (nbits < 8) throw InvalidArgument("nbits must be >= 8");
  validate_molecule(mol);

  Fingerprint fp;
  fp.scheme = FingerprintScheme::Path;
  fp.parameter = max_len;
  fp.nbits = nbits;
  fp.bits.assign(nbits, 0);

  const int n = mol.atom_count();
  const auto nbr = detail::neighbor_lists(mol);
  auto z = [&](int i) { return static_cast<uint64_t>(atomic_number(mol.atoms[i].element)); };

  std::vector<uint64_t> seq;    // Z, bond, Z, bond, ..., Z
  std::vector<char> on_path(n, 0);
  std::vector<int> path;

  auto emit = [&] {
    std::vector<uint64_t> rev(seq.rbegin(), seq.rend());
    const std::vector<uint64_t>& canon = std::min(seq, rev);
    fp.bits[hash_u64_span(canon) % static_cast<uint64_t>(nbits)] = 1;
  };

  // depth-first extension; every undirected path is visited from both ends,
  // which is harmless for a bit vector
  auto extend = [&](auto&& self, int v) -> void {
    if (static_cast<int>(path.size()) - 1 >= 1) emit();
    if (static_cast<int>(path.size()) - 1 == max_len) return;
    for (const auto& [u, code] : nbr[v]) {
      if (on_path[u]) continue;
      on_path[u] = 1;
      path.push_back(u);
      seq.push_back(static_cast<uint64_t>(code));
      seq.push_back(z(u));
      self(self, u);
      seq.pop_back();
      seq.pop_back();
      path.pop_back();
      on_path[u] = 0;
    }
  };

  for (int start = 0; start < n; ++start) {
    on_path[start] = 1;
    path.push_back(start);
    seq.push_back(z(start));
    extend(extend, start);
    seq.pop_back();
    path.pop_back();
    on_path[start] = 0;
  }
  return fp;
}

inline std::vector<double> fingerprint_features(const Fingerprint& fp) {
  return std::vector<double>(fp.bits.begin(), fp.bits.end());
}

// Circular + path bits side by side: the feature row the 1-D baseline trains on.
inline std::vector<double> baseline_features(const Molecule& mol, int radius = 2,
                                             int circular_bits = 2048, int max_len = 7,
                                             int path_bits = 2048) {
  std::vector<double> row = fingerprint_features(circular_fingerprint(mol, radius, circular_bits));
  const std::vector<double> p = fingerprint_features(path_fingerprint(mol, max_len, path_bits));
  row.insert(row.end(), p.begin(), p.end());
  return row;
}

// Greedy correlation pruning over feature columns. Scans left to right:
// constant columns are dropped, and a column is dropped when its |Pearson r|
// with any column kept so far exceeds the threshold. Returns a keep mask.
inline std::vector<uint8_t> prune_correlated(const std::vector<std::vector<double>>& X,
                                             double threshold = 0.9) {
  if (X.size() < 2) throw InvalidArgument("need at least two rows to estimate correlations");
  if (!(threshold > 0) || threshold > 1) throw InvalidArgument("threshold must be in (0, 1]");
  const std::size_t m = X.size();
  const std::size_t k = X[0].size();
  for (const auto& row : X)
    if (row.size() != k)
      throw ShapeMismatch("ragged feature matrix: row of " + std::to_string(row.size()) +
                          " columns, expected " + std::to_string(k));

  // column means and centered columns, reused across all pair tests
  std::vector<std::vector<double>> centered(k, std::vector<double>(m));
  std::vector<double> norm(k);
  for (std::size_t j = 0; j < k; ++j) {
    double mean = 0;
    for (std::size_t i = 0; i < m; ++i) mean += X[i][j];
    mean /= static_cast<double>(m);
    double ss = 0;
    for (std::size_t i = 0; i < m; ++i) {
      centered[j][i] = X[i][j] - mean;
      ss += centered[j][i] * centered[j][i];
    }
    norm[j] = std::sqrt(ss);
  }

  std::vector<uint8_t> keep(k, 0);
  std::vector<std::size_t> kept;
  for (std::size_t j = 0; j < k; ++j) {
    if (norm[j] == 0) continue;  // constant column
    bool ok = true;
    for (std::size_t prev : kept) {
      double dot = 0;
      for (std::size_t i = 0; i < m; ++i) dot += centered[j][i] * centered[prev][i];
      const double r = dot / (norm[j] * norm[prev]);
      if (std::abs(r) > threshold) {
        ok = false;
        break;
      }
    }
    if (ok) {
      keep[j] = 1;
      kept.push_back(j);
    }
  }
  return keep;
}

inline std::vector<std::vector<double>> apply_keep_mask(const std::vector<std::vector<double>>& X,
                                                        const std::vector<uint8_t>& mask) {
  if (!X.empty() && X[0].size() != mask.size())
    throw ShapeMismatch("mask of " + std::to_string(mask.size()) + " columns, matrix has " +
                        std::to_string(X[0].size()));
  std::vector<std::vector<double>> out;
  out.reserve(X.size());
  for (const auto& row : X) {
    std::vector<double> r;
    for (std::size_t j = 0; j < mask.size(); ++j)
      if (mask[j]) r.push_back(row[j]);
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace marcel
