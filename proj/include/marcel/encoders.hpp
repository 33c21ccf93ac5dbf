#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "marcel/chem.hpp"
#include "marcel/elements.hpp"
#include "marcel/errors.hpp"
#include "marcel/featurize.hpp"
#include "marcel/nn.hpp"
#include "marcel/rng.hpp"
#include "marcel/tensor.hpp"

namespace marcel {

enum class Pooling { Sum, Mean };

struct EncoderConfig {
  int hidden_dim = 128;
  int num_layers = 3;  // message-passing layers / interaction blocks
  Pooling pooling = Pooling::Sum;
  // 3D-only:
  int num_rbf = 50;
  double cutoff = 5.0;  // Angstrom
};

inline void validate(const EncoderConfig& cfg) {
  if (cfg.hidden_dim < 1) throw InvalidArgument("hidden_dim must be >= 1");
  if (cfg.num_layers < 1) throw InvalidArgument("num_layers must be >= 1");
  if (cfg.num_rbf < 2) throw InvalidArgument("num_rbf must be >= 2");
  if (!(cfg.cutoff > 0)) throw InvalidArgument("cutoff must be > 0");
}

// All directed pairs (i, j), i != j, with ||x_i - x_j|| <= cutoff, in
// lexicographic order.
inline std::vector<std::pair<int, int>> radius_graph(const std::vector<Vec3>& coords,
                                                     double cutoff) {
  if (!(cutoff > 0)) throw InvalidArgument("cutoff must be > 0");
  const int n = static_cast<int>(coords.size());
  std::vector<std::pair<int, int>> edges;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      if (i != j && distance(coords[i], coords[j]) <= cutoff) edges.emplace_back(i, j);
  return edges;
}

namespace detail {

inline bool graph_connected(int n, const std::vector<std::pair<int, int>>& edges) {
  if (n <= 1) return true;
  std::vector<int> parent(n);
  std::iota(parent.begin(), parent.end(), 0);
  std::function<int(int)> find = [&](int x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };
  for (const auto& [a, b] : edges) parent[find(a)] = find(b);
  for (int i = 1; i < n; ++i)
    if (find(i) != find(0)) return false;
  return true;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// 2D encoder: embedding-sum node/edge features, then message passing where
// each node mixes (1 + eps) times itself with the sum of neighbor + edge
// embeddings through a small perceptron.
// ---------------------------------------------------------------------------

template <typename T = float>
class GinEncoder {
 public:
  GinEncoder() = default;
  GinEncoder(const EncoderConfig& cfg, Rng& rng) : cfg_(cfg) {
    validate(cfg);
    const int d = cfg.hidden_dim;
    for (int j = 0; j < kNumNodeFeatures; ++j)
      node_embeds_.emplace_back(kNodeFeatureDims[j], d, rng);
    layers_.resize(cfg.num_layers);
    for (auto& layer : layers_) {
      for (int j = 0; j < kNumEdgeFeatures; ++j)
        layer.edge_embeds.emplace_back(kEdgeFeatureDims[j], d, rng);
      layer.eps = Tensor<T>::scalar(0, true);
      layer.mlp = Mlp<T>({d, d, d}, rng, Activation::ReLU);
    }
  }

  const EncoderConfig& config() const { return cfg_; }

  Tensor<T> encode(const FeatureMatrices& g) const {
    const int n = static_cast<int>(g.node_features.size());
    if (n == 0) throw InvalidArgument("cannot encode an empty graph");
    const int d = cfg_.hidden_dim;

    Tensor<T> h = embed_columns(node_embeds_, g.node_features);

    std::vector<int> src, dst;
    src.reserve(g.edges.size());
    dst.reserve(g.edges.size());
    for (const auto& [u, v] : g.edges) {
      src.push_back(u);
      dst.push_back(v);
    }

    for (const auto& layer : layers_) {
      Tensor<T> aggregated;
      if (src.empty()) {
        aggregated = Tensor<T>::zeros({n, d});
      } else {
        const Tensor<T> edge_h = embed_columns(layer.edge_embeds, g.edge_features);
        const Tensor<T> messages = add(index_select(h, src), edge_h);
        aggregated = scatter_add(messages, dst, n);
      }
      const Tensor<T> self = mul(h, add(layer.eps, 1.0));
      h = layer.mlp(add(self, aggregated));
    }
    return cfg_.pooling == Pooling::Sum ? sum(h, 0) : mean(h, 0);
  }

  void collect_params(std::vector<Tensor<T>>& out) const {
    for (const auto& e : node_embeds_) e.collect_params(out);
    for (const auto& layer : layers_) {
      for (const auto& e : layer.edge_embeds) e.collect_params(out);
      out.push_back(layer.eps);
      layer.mlp.collect_params(out);
    }
  }

 private:
  template <std::size_t K>
  static Tensor<T> embed_columns(const std::vector<Embedding<T>>& tables,
                                 const std::vector<std::array<int, K>>& rows) {
    std::vector<int> column(rows.size());
    Tensor<T> acc;
    for (std::size_t j = 0; j < K; ++j) {
      for (std::size_t i = 0; i < rows.size(); ++i) column[i] = rows[i][j];
      const Tensor<T> part = tables[j](column);
      acc = (j == 0) ? part : add(acc, part);
    }
    return acc;
  }

  struct Layer {
    std::vector<Embedding<T>> edge_embeds;
    Tensor<T> eps;
    Mlp<T> mlp;
  };

  EncoderConfig cfg_;
  std::vector<Embedding<T>> node_embeds_;
  std::vector<Layer> layers_;
};

// ---------------------------------------------------------------------------
// 3D encoder: atom-type embeddings refined by interaction blocks that weight
// neighbor messages with filters generated from a Gaussian radial expansion
// of interatomic distances under a cosine cutoff envelope. Only distances
// enter, so the embedding is invariant to rotations and translations.
// ---------------------------------------------------------------------------

// Distance featurization and graph structure for a batch of conformers of one
// molecule, laid out block-diagonally. Precompute once; reuse every epoch.
template <typename T = float>
struct SchNetInput {
  std::vector<int> type_indices;   // per node: atomic number - 1
  std::vector<int> src, dst;       // directed edges over all conformer blocks
  Tensor<T> rbf;                   // [edges, num_rbf], envelope already applied
  std::vector<int> node_conformer; // pooling segment of each node
  int n_conformers = 0;
  double cutoff_used = 0;          // after the disconnection fallback, if any
};

template <typename T = float>
SchNetInput<T> prepare_schnet_input(const std::vector<int>& atomic_numbers,
                                    const std::vector<const Conformer*>& conformers,
                                    const EncoderConfig& cfg) {
  validate(cfg);
  const int n = static_cast<int>(atomic_numbers.size());
  if (n < 1) throw InvalidArgument("need at least one atom");
  if (conformers.empty()) throw EmptyEnsemble();
  for (int z : atomic_numbers)
    if (z < 1 || z > 118) throw InvalidArgument("atomic number " + std::to_string(z) + " out of range");

  SchNetInput<T> input;
  input.n_conformers = static_cast<int>(conformers.size());
  input.cutoff_used = cfg.cutoff;

  std::vector<T> rbf_values;
  for (int c = 0; c < input.n_conformers; ++c) {
    const std::vector<Vec3>& xyz = conformers[c]->coords;
    if (static_cast<int>(xyz.size()) != n)
      throw ShapeMismatch("conformer has " + std::to_string(xyz.size()) + " atoms, expected " +
                          std::to_string(n));
    for (const Vec3& p : xyz)
      if (!std::isfinite(p.x) || !std::isfinite(p.y) || !std::isfinite(p.z))
        throw InvalidArgument("non-finite coordinate");

    double cutoff = cfg.cutoff;
    std::vector<std::pair<int, int>> edges = radius_graph(xyz, cutoff);
    // large structures can fall apart at the default radius, which starves
    // message passing; widen once rather than fail
    if (!detail::graph_connected(n, edges)) {
      cutoff *= 2;
      edges = radius_graph(xyz, cutoff);
    }
    input.cutoff_used = std::max(input.cutoff_used, cutoff);

    const double spacing = cutoff / (cfg.num_rbf - 1);
    const double gamma = 1.0 / (2.0 * spacing * spacing);
    const int offset = c * n;
    for (const auto& [i, j] : edges) {
      input.src.push_back(offset + i);
      input.dst.push_back(offset + j);
      const double dij = distance(xyz[i], xyz[j]);
      const double envelope = 0.5 * (std::cos(M_PI * dij / cutoff) + 1.0);
      for (int k = 0; k < cfg.num_rbf; ++k) {
        const double mu = k * spacing;
        rbf_values.push_back(static_cast<T>(envelope * std::exp(-gamma * (dij - mu) * (dij - mu))));
      }
    }
    for (int i = 0; i < n; ++i) {
      input.type_indices.push_back(atomic_numbers[i] - 1);
      input.node_conformer.push_back(c);
    }
  }
  if (!input.src.empty())
    input.rbf = Tensor<T>({static_cast<int>(input.src.size()), cfg.num_rbf},
                          std::move(rbf_values));
  return input;
}

template <typename T = float>
SchNetInput<T> prepare_schnet_input(const Molecule& mol,
                                    const std::vector<const Conformer*>& conformers,
                                    const EncoderConfig& cfg) {
  std::vector<int> zs;
  zs.reserve(mol.atoms.size());
  for (const AtomRecord& a : mol.atoms) zs.push_back(atomic_number(a.element));
  return prepare_schnet_input<T>(zs, conformers, cfg);
}

template <typename T = float>
class SchNetEncoder {
 public:
  SchNetEncoder() = default;
  SchNetEncoder(const EncoderConfig& cfg, Rng& rng) : cfg_(cfg) {
    validate(cfg);
    const int d = cfg.hidden_dim;
    type_embed_ = Embedding<T>(118, d, rng);
    blocks_.resize(cfg.num_layers);
    for (auto& b : blocks_) {
      b.filter = Mlp<T>({cfg.num_rbf, d, d}, rng, Activation::ShiftedSoftplus);
      b.dense_in = Linear<T>(d, d, rng);
      b.post = Mlp<T>({d, d, d}, rng, Activation::ShiftedSoftplus);
    }
  }

  const EncoderConfig& config() const { return cfg_; }

  // Returns one embedding row per conformer: [n_conformers, hidden_dim].
  Tensor<T> encode(const SchNetInput<T>& input) const {
    const int total_nodes = static_cast<int>(input.type_indices.size());
    const int d = cfg_.hidden_dim;
    Tensor<T> h = type_embed_(input.type_indices);

    for (const auto& block : blocks_) {
      Tensor<T> aggregated;
      if (input.src.empty()) {
        aggregated = Tensor<T>::zeros({total_nodes, d});
      } else {
        const Tensor<T> filt = block.filter(input.rbf);
        const Tensor<T> neighbor = index_select(block.dense_in(h), input.src);
        aggregated = scatter_add(mul(neighbor, filt), input.dst, total_nodes);
      }
      h = add(h, block.post(aggregated));
    }

    Tensor<T> pooled = scatter_add(h, input.node_conformer, input.n_conformers);
    if (cfg_.pooling == Pooling::Mean) {
      const int atoms_per_conformer = total_nodes / input.n_conformers;
      pooled = mul(pooled, 1.0 / atoms_per_conformer);
    }
    return pooled;
  }

  // Single-conformer convenience: a flat [hidden_dim] embedding.
  Tensor<T> encode_one(const SchNetInput<T>& input) const {
    if (input.n_conformers != 1)
      throw InvalidArgument("encode_one expects exactly one conformer, got " +
                            std::to_string(input.n_conformers));
    return reshape(encode(input), {cfg_.hidden_dim});
  }

  void collect_params(std::vector<Tensor<T>>& out) const {
    type_embed_.collect_params(out);
    for (const auto& b : blocks_) {
      b.filter.collect_params(out);
      b.dense_in.collect_params(out);
      b.post.collect_params(out);
    }
  }

 private:
  struct Block {
    Mlp<T> filter;
    Linear<T> dense_in;
    Mlp<T> post;
  };

  EncoderConfig cfg_;
  Embedding<T> type_embed_;
  std::vector<Block> blocks_;
};

// Fixed-order concatenation of two role embeddings (e.g. catalyst then
// substrate) for reaction inputs.
template <typename T>
Tensor<T> two_tower_encode(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 1 || b.rank() != 1 || a.shape() != b.shape())
    throw ShapeMismatch("two_tower_encode needs equal-length vectors, got " +
                        detail::shape_str(a.shape()) + " and " + detail::shape_str(b.shape()));
  return concat(std::vector<Tensor<T>>{a, b}, 0);
}

}  // namespace marcel
