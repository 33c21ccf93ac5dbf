#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "marcel/chem.hpp"
#include "marcel/encoders.hpp"
#include "marcel/errors.hpp"
#include "marcel/featurize.hpp"
#include "marcel/hash64.hpp"
#include "marcel/nn.hpp"
#include "marcel/rng.hpp"
#include "marcel/tensor.hpp"

namespace marcel {

// ---------------------------------------------------------------------------
// Conformer selection
// ---------------------------------------------------------------------------

inline int lowest_energy_index(const ConformerEnsemble& ensemble) {
  if (ensemble.conformers.empty()) throw EmptyEnsemble();
  int best = 0;
  for (int i = 1; i < static_cast<int>(ensemble.conformers.size()); ++i)
    if (ensemble.conformers[i].energy < ensemble.conformers[best].energy) best = i;
  return best;
}

inline int sample_conformer_index(const ConformerEnsemble& ensemble, Rng& rng) {
  if (ensemble.conformers.empty()) throw EmptyEnsemble();
  return static_cast<int>(rng.uniform_index(ensemble.conformers.size()));
}

inline const Conformer& sample_conformer(const ConformerEnsemble& ensemble, Rng& rng) {
  return ensemble.conformers[sample_conformer_index(ensemble, rng)];
}

// Epoch-resolved draw for the augmentation strategy: reproducible from
// (master seed, epoch, sample index, role).
inline int sample_conformer_index(const ConformerEnsemble& ensemble, std::uint64_t master_seed,
                                  int epoch, int sample_index, int role = 0) {
  if (ensemble.conformers.empty()) throw EmptyEnsemble();
  std::uint64_t h = derive_seed(master_seed, static_cast<std::uint64_t>(epoch));
  h = derive_seed(h, static_cast<std::uint64_t>(sample_index) * 4 + static_cast<std::uint64_t>(role));
  Rng rng(h);
  return static_cast<int>(rng.uniform_index(ensemble.conformers.size()));
}

// The up-to-`cap` lowest-energy conformers (ties -> lowest index), ascending.
inline std::vector<int> capped_conformer_indices(const ConformerEnsemble& ensemble, int cap) {
  if (cap < 1) throw InvalidArgument("conformer cap must be >= 1");
  if (ensemble.conformers.empty()) throw EmptyEnsemble();
  const int n = static_cast<int>(ensemble.conformers.size());
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return ensemble.conformers[a].energy < ensemble.conformers[b].energy;
  });
  order.resize(std::min(cap, n));
  std::sort(order.begin(), order.end());
  return order;
}

// ---------------------------------------------------------------------------
// Set encoders over per-conformer embeddings
// ---------------------------------------------------------------------------

enum class SetEncoderVariant { Mean, DeepSets, Attention };

template <typename T>
Tensor<T> mean_pool(const Tensor<T>& z) {
  if (z.rank() != 2)
    throw ShapeMismatch("mean_pool expects [n_conformers, d], got " +
                        detail::shape_str(z.shape()));
  return mean(z, 0);
}

template <typename T = float>
class SetEncoder {
 public:
  SetEncoder() = default;
  SetEncoder(SetEncoderVariant variant, int d, Rng& rng) : variant_(variant), d_(d) {
    if (variant == SetEncoderVariant::Mean) return;
    h_ = Mlp<T>({d, d, d}, rng, Activation::ReLU);
    g_ = Mlp<T>({d, d, d}, rng, Activation::ReLU);
    if (variant == SetEncoderVariant::Attention)
      w_ = detail::uniform_init<T>({d, d}, 1.0 / std::sqrt(static_cast<double>(d)), rng);
  }

  SetEncoderVariant variant() const { return variant_; }

  // z: [n_conformers, d] -> [d]
  Tensor<T> operator()(const Tensor<T>& z) const {
    check_input(z);
    switch (variant_) {
      case SetEncoderVariant::Mean:
        return mean(z, 0);
      case SetEncoderVariant::DeepSets:
        return reshape(g_(reshape(sum(h_(z), 0), {1, d_})), {d_});
      case SetEncoderVariant::Attention: {
        const Tensor<T> h = h_(z);
        const Tensor<T> c = g_(matmul(attention_weights_from(h), h));
        return sum(c, 0);
      }
    }
    throw InvalidArgument("unknown set encoder variant");
  }

  // Row-stochastic attention matrix [n, n]; exposed for inspection.
  Tensor<T> attention_weights(const Tensor<T>& z) const {
    if (variant_ != SetEncoderVariant::Attention)
      throw InvalidArgument("attention weights only exist for the attention variant");
    check_input(z);
    return attention_weights_from(h_(z));
  }

  void collect_params(std::vector<Tensor<T>>& out) const {
    if (variant_ == SetEncoderVariant::Mean) return;
    h_.collect_params(out);
    g_.collect_params(out);
    if (variant_ == SetEncoderVariant::Attention) out.push_back(w_);
  }

 private:
  void check_input(const Tensor<T>& z) const {
    if (z.rank() != 2 || z.shape()[1] != d_)
      throw ShapeMismatch("set encoder expects [n_conformers, " + std::to_string(d_) +
                          "], got " + detail::shape_str(z.shape()));
  }

  // scores_ij = (W h_i) . (W h_j), softmax over j
  Tensor<T> attention_weights_from(const Tensor<T>& h) const {
    const int n = h.shape()[0];
    const Tensor<T> q = matmul(h, w_);  // rows are W h_i (row-vector convention)
    const Tensor<T> qi = broadcast(reshape(q, {n, 1, d_}), {n, n, d_});
    const Tensor<T> qj = broadcast(reshape(q, {1, n, d_}), {n, n, d_});
    return softmax(sum(mul(qi, qj), 2), 1);
  }

  SetEncoderVariant variant_ = SetEncoderVariant::Mean;
  int d_ = 0;
  Mlp<T> h_, g_;
  Tensor<T> w_;
};

// ---------------------------------------------------------------------------
// Full prediction path
// ---------------------------------------------------------------------------

enum class ModelKind { Gin, SchNet, Forest };
enum class Strategy { Single, Sampling, SetEncoderStrategy };
enum class EvalScheme { Fixed, Random, All };
enum class SingleConformerMode { LowestEnergy, FixedRandom };

struct EnsembleModelConfig {
  ModelKind model = ModelKind::SchNet;
  EncoderConfig encoder;
  Strategy strategy = Strategy::Single;
  SetEncoderVariant set_encoder = SetEncoderVariant::Mean;
  int conformer_cap = 20;
  EvalScheme eval_scheme = EvalScheme::Fixed;
  SingleConformerMode single_mode = SingleConformerMode::LowestEnergy;
  std::uint64_t single_seed = 0;  // seeds the persistent fixed-random choice
};

inline void validate(const EnsembleModelConfig& cfg) {
  validate(cfg.encoder);
  if (cfg.conformer_cap < 1) throw InvalidArgument("conformer cap must be >= 1");
  if (cfg.model != ModelKind::SchNet &&
      (cfg.strategy == Strategy::Sampling || cfg.strategy == Strategy::SetEncoderStrategy))
    throw InvalidArgument("conformer-ensemble strategies need the 3D model");
}

// The once-per-molecule designated conformer for single-conformer prediction.
inline int designated_conformer(const ConformerEnsemble& ensemble,
                                const EnsembleModelConfig& cfg) {
  if (ensemble.conformers.empty()) throw EmptyEnsemble();
  if (cfg.single_mode == SingleConformerMode::LowestEnergy) return lowest_energy_index(ensemble);
  Rng rng(derive_seed(cfg.single_seed, fnv1a64(ensemble.molecule.identifier)));
  return static_cast<int>(rng.uniform_index(ensemble.conformers.size()));
}

// Everything about one sample that never changes across epochs.
template <typename T = float>
struct PreparedSample {
  double target = 0;
  struct Role {
    int n_conformers = 0;
    int designated = 0;
    FeatureMatrices graph;                      // 2D path
    std::vector<SchNetInput<T>> per_conformer;  // 3D path, one per conformer
    SchNetInput<T> capped_batch;                // 3D path, set-encoder strategy
    std::vector<int> capped;
  };
  std::vector<Role> roles;
};

template <typename T = float>
PreparedSample<T> prepare_sample(const Sample& sample, const std::string& task,
                                 const EnsembleModelConfig& cfg) {
  validate(cfg);
  const auto it = sample.targets.find(task);
  if (it == sample.targets.end()) throw DataError("sample is missing target '" + task + "'");

  PreparedSample<T> out;
  out.target = it->second;
  for (const auto& [role_name, ensemble] : sample.ensembles) {
    (void)role_name;
    typename PreparedSample<T>::Role role;
    role.n_conformers = static_cast<int>(ensemble.conformers.size());
    if (role.n_conformers == 0) throw EmptyEnsemble();
    role.designated = designated_conformer(ensemble, cfg);

    if (cfg.model == ModelKind::Gin) {
      role.graph = featurize_molecule(ensemble.molecule);
    } else if (cfg.model == ModelKind::SchNet) {
      if (cfg.strategy == Strategy::SetEncoderStrategy) {
        role.capped = capped_conformer_indices(ensemble, cfg.conformer_cap);
        std::vector<const Conformer*> chosen;
        for (int i : role.capped) chosen.push_back(&ensemble.conformers[i]);
        role.capped_batch = prepare_schnet_input<T>(ensemble.molecule, chosen, cfg.encoder);
      } else {
        role.per_conformer.reserve(ensemble.conformers.size());
        for (const Conformer& c : ensemble.conformers)
          role.per_conformer.push_back(prepare_schnet_input<T>(ensemble.molecule, {&c}, cfg.encoder));
      }
    }
    out.roles.push_back(std::move(role));
  }
  if (out.roles.empty()) throw DataError("sample has no role ensembles");
  return out;
}

template <typename T = float>
class Predictor {
 public:
  Predictor() = default;
  Predictor(const EnsembleModelConfig& cfg, int n_roles, Rng& rng)
      : cfg_(cfg), n_roles_(n_roles) {
    validate(cfg);
    if (n_roles < 1) throw InvalidArgument("need at least one role");
    const int d = cfg.encoder.hidden_dim;
    for (int r = 0; r < n_roles; ++r) {
      if (cfg.model == ModelKind::Gin)
        gin_towers_.emplace_back(cfg.encoder, rng);
      else
        schnet_towers_.emplace_back(cfg.encoder, rng);
      if (cfg.strategy == Strategy::SetEncoderStrategy)
        set_encoders_.emplace_back(cfg.set_encoder, d, rng);
    }
    head_ = Linear<T>(d * n_roles, 1, rng);
  }

  const EnsembleModelConfig& config() const { return cfg_; }
  int n_roles() const { return n_roles_; }

  // Scalar prediction [1]; `choice` optionally overrides the conformer used
  // per role (sampling strategy during training).
  Tensor<T> forward(const PreparedSample<T>& s,
                    const std::vector<int>* choice = nullptr) const {
    check_roles(s);
    std::vector<Tensor<T>> parts;
    for (int r = 0; r < n_roles_; ++r) {
      const auto& role = s.roles[r];
      if (cfg_.model == ModelKind::Gin) {
        parts.push_back(gin_towers_[r].encode(role.graph));
      } else if (cfg_.strategy == Strategy::SetEncoderStrategy) {
        parts.push_back(set_encoders_[r](schnet_towers_[r].encode(role.capped_batch)));
      } else {
        int idx = role.designated;
        if (choice) {
          idx = (*choice)[r];
          if (idx < 0 || idx >= role.n_conformers)
            throw InvalidArgument("conformer choice out of range");
        }
        parts.push_back(schnet_towers_[r].encode_one(role.per_conformer[idx]));
      }
    }
    Tensor<T> joined = parts.size() == 1 ? parts[0] : concat(parts, 0);
    return head_(joined);
  }

  double predict(const PreparedSample<T>& s, const std::vector<int>* choice = nullptr) const {
    return static_cast<double>(forward(s, choice).item());
  }

  void collect_params(std::vector<Tensor<T>>& out) const {
    for (const auto& t : gin_towers_) t.collect_params(out);
    for (const auto& t : schnet_towers_) t.collect_params(out);
    for (const auto& e : set_encoders_) e.collect_params(out);
    head_.collect_params(out);
  }

  std::vector<Tensor<T>> params() const {
    std::vector<Tensor<T>> out;
    collect_params(out);
    return out;
  }

 private:
  void check_roles(const PreparedSample<T>& s) const {
    if (static_cast<int>(s.roles.size()) != n_roles_)
      throw DataError("sample has " + std::to_string(s.roles.size()) + " roles, model expects " +
                      std::to_string(n_roles_));
  }

  EnsembleModelConfig cfg_;
  int n_roles_ = 1;
  std::vector<GinEncoder<T>> gin_towers_;
  std::vector<SchNetEncoder<T>> schnet_towers_;
  std::vector<SetEncoder<T>> set_encoders_;
  Linear<T> head_;
};

// Inference-time schemes for a sampling-strategy model. `fixed` uses the
// lowest-energy conformer, `random` draws one, `all` averages the prediction
// over every conformer combination across roles.
template <typename T>
double evaluate_scheme(const Predictor<T>& model, const PreparedSample<T>& s, EvalScheme scheme,
                       Rng& rng) {
  const int n_roles = static_cast<int>(s.roles.size());
  std::vector<int> choice(n_roles);
  switch (scheme) {
    case EvalScheme::Fixed:
      for (int r = 0; r < n_roles; ++r) choice[r] = s.roles[r].designated;
      return model.predict(s, &choice);
    case EvalScheme::Random:
      for (int r = 0; r < n_roles; ++r)
        choice[r] = static_cast<int>(rng.uniform_index(s.roles[r].n_conformers));
      return model.predict(s, &choice);
    case EvalScheme::All: {
      double total = 0;
      std::int64_t count = 0;
      std::fill(choice.begin(), choice.end(), 0);
      for (;;) {
        total += model.predict(s, &choice);
        ++count;
        int r = n_roles - 1;
        while (r >= 0 && ++choice[r] == s.roles[r].n_conformers) choice[r--] = 0;
        if (r < 0) break;
      }
      return total / static_cast<double>(count);
    }
  }
  throw InvalidArgument("unknown evaluation scheme");
}

}  // namespace marcel
