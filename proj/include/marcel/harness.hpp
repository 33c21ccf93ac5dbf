#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "marcel/dataset.hpp"
#include "marcel/ensemble.hpp"
#include "marcel/errors.hpp"
#include "marcel/fingerprint.hpp"
#include "marcel/forest.hpp"
#include "marcel/hash64.hpp"
#include "marcel/results.hpp"
#include "marcel/rng.hpp"

namespace marcel {

// ---------------------------------------------------------------------------
// Splits
// ---------------------------------------------------------------------------

struct SplitSpec {
  std::uint64_t seed = 0;
  std::vector<int> train, val, test;
};

// Seeded shuffle of 0..n-1, sliced 70/10/20 with floor boundaries.
inline SplitSpec split_dataset(int n, std::uint64_t seed) {
  if (n < 10) throw DatasetTooSmall("need at least 10 samples, got " + std::to_string(n));
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  rng.shuffle(order);
  // integer floors of 0.7n and 0.1n; float multiplication can land one short
  const int n_train = 7 * n / 10;
  const int n_val = n / 10;
  SplitSpec split;
  split.seed = seed;
  split.train.assign(order.begin(), order.begin() + n_train);
  split.val.assign(order.begin() + n_train, order.begin() + n_train + n_val);
  split.test.assign(order.begin() + n_train + n_val, order.end());
  return split;
}

inline double evaluate_mae(const std::vector<double>& preds, const std::vector<double>& targets) {
  if (preds.size() != targets.size() || preds.empty())
    throw ShapeMismatch("mae needs equal non-empty lists, got " + std::to_string(preds.size()) +
                        " and " + std::to_string(targets.size()));
  double acc = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) acc += std::abs(preds[i] - targets[i]);
  return acc / static_cast<double>(preds.size());
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

struct TrainConfig {
  std::string dataset;  // manifest path
  std::string task;
  std::string model = "schnet";            // gin | schnet | rf
  std::string strategy = "single";         // single | sampling | set_encoder
  std::string set_encoder = "mean";        // mean | deepsets | attention
  int conformer_cap = 20;
  std::string eval_scheme = "fixed";       // fixed | random | all
  std::string single_conformer = "lowest"; // lowest | fixed_random
  int hidden_dim = 128;
  int num_layers = 3;
  int num_rbf = 50;
  double cutoff = 5.0;
  int epochs = 2000;
  int patience = 200;
  int repeats = 3;
  double lr = 1e-3;
  int batch_size = 64;
  std::uint64_t seed = 0;
  bool resplit = false;  // re-randomize the split per repeat, not just the init
  // 1D baseline:
  int rf_trees = 500;
  int rf_max_depth = 0;
  int rf_min_leaf = 1;
  double rf_feature_fraction = 1.0 / 3.0;
  int fp_radius = 2;
  int fp_bits = 2048;
  int path_max_len = 7;
  int path_bits = 2048;
  double prune_threshold = 0.9;
};

inline ModelKind parse_model_kind(const std::string& s) {
  if (s == "gin") return ModelKind::Gin;
  if (s == "schnet") return ModelKind::SchNet;
  if (s == "rf") return ModelKind::Forest;
  throw InvalidArgument("unknown model '" + s + "'");
}

inline Strategy parse_strategy(const std::string& s) {
  if (s == "single") return Strategy::Single;
  if (s == "sampling") return Strategy::Sampling;
  if (s == "set_encoder") return Strategy::SetEncoderStrategy;
  throw InvalidArgument("unknown strategy '" + s + "'");
}

inline SetEncoderVariant parse_set_encoder(const std::string& s) {
  if (s == "mean") return SetEncoderVariant::Mean;
  if (s == "deepsets") return SetEncoderVariant::DeepSets;
  if (s == "attention") return SetEncoderVariant::Attention;
  throw InvalidArgument("unknown set encoder '" + s + "'");
}

inline EvalScheme parse_eval_scheme(const std::string& s) {
  if (s == "fixed") return EvalScheme::Fixed;
  if (s == "random") return EvalScheme::Random;
  if (s == "all") return EvalScheme::All;
  throw InvalidArgument("unknown evaluation scheme '" + s + "'");
}

inline SingleConformerMode parse_single_conformer(const std::string& s) {
  if (s == "lowest") return SingleConformerMode::LowestEnergy;
  if (s == "fixed_random") return SingleConformerMode::FixedRandom;
  throw InvalidArgument("unknown single-conformer mode '" + s + "'");
}

inline EnsembleModelConfig model_config_from(const TrainConfig& cfg, std::uint64_t run_seed) {
  EnsembleModelConfig mc;
  mc.model = parse_model_kind(cfg.model);
  mc.encoder.hidden_dim = cfg.hidden_dim;
  mc.encoder.num_layers = cfg.num_layers;
  mc.encoder.num_rbf = cfg.num_rbf;
  mc.encoder.cutoff = cfg.cutoff;
  mc.strategy = parse_strategy(cfg.strategy);
  mc.set_encoder = parse_set_encoder(cfg.set_encoder);
  mc.conformer_cap = cfg.conformer_cap;
  mc.eval_scheme = parse_eval_scheme(cfg.eval_scheme);
  mc.single_mode = parse_single_conformer(cfg.single_conformer);
  mc.single_seed = run_seed;
  return mc;
}

inline std::string canonical_config_string(const TrainConfig& c) {
  std::ostringstream out;
  out << std::setprecision(17);  // doubles must survive a parse round trip
  out << "dataset=" << c.dataset << ";task=" << c.task << ";model=" << c.model
      << ";strategy=" << c.strategy << ";set_encoder=" << c.set_encoder
      << ";conformer_cap=" << c.conformer_cap << ";eval_scheme=" << c.eval_scheme
      << ";single_conformer=" << c.single_conformer << ";hidden_dim=" << c.hidden_dim
      << ";num_layers=" << c.num_layers << ";num_rbf=" << c.num_rbf << ";cutoff=" << c.cutoff
      << ";epochs=" << c.epochs << ";patience=" << c.patience << ";repeats=" << c.repeats
      << ";lr=" << c.lr << ";batch_size=" << c.batch_size << ";seed=" << c.seed
      << ";resplit=" << c.resplit << ";rf_trees=" << c.rf_trees << ";rf_max_depth=" << c.rf_max_depth
      << ";rf_min_leaf=" << c.rf_min_leaf << ";rf_feature_fraction=" << c.rf_feature_fraction
      << ";fp_radius=" << c.fp_radius << ";fp_bits=" << c.fp_bits
      << ";path_max_len=" << c.path_max_len << ";path_bits=" << c.path_bits
      << ";prune_threshold=" << c.prune_threshold;
  return out.str();
}

inline std::string config_hash(const TrainConfig& c) {
  const std::string s = canonical_config_string(c);
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(fnv1a64(s.data(), s.size())));
  return buf;
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  static const std::vector<std::string> known = {
      "dataset", "task", "model", "strategy", "set_encoder", "conformer_cap", "eval_scheme",
      "single_conformer", "hidden_dim", "num_layers", "num_rbf", "cutoff", "epochs", "patience",
      "repeats", "lr", "batch_size", "seed", "resplit", "rf_trees", "rf_max_depth", "rf_min_leaf",
      "rf_feature_fraction", "fp_radius", "fp_bits", "path_max_len", "path_bits",
      "prune_threshold"};
  for (const auto& [key, value] : j.items()) {
    (void)value;
    if (std::find(known.begin(), known.end(), key) == known.end())
      throw DataError("unknown config key '" + key + "'");
  }
  TrainConfig c;
  try {
    c.dataset = j.at("dataset").get<std::string>();
    c.task = j.at("task").get<std::string>();
    c.model = j.value("model", c.model);
    c.strategy = j.value("strategy", c.strategy);
    c.set_encoder = j.value("set_encoder", c.set_encoder);
    c.conformer_cap = j.value("conformer_cap", c.conformer_cap);
    c.eval_scheme = j.value("eval_scheme", c.eval_scheme);
    c.single_conformer = j.value("single_conformer", c.single_conformer);
    c.hidden_dim = j.value("hidden_dim", c.hidden_dim);
    c.num_layers = j.value("num_layers", c.num_layers);
    c.num_rbf = j.value("num_rbf", c.num_rbf);
    c.cutoff = j.value("cutoff", c.cutoff);
    c.epochs = j.value("epochs", c.epochs);
    c.patience = j.value("patience", c.patience);
    c.repeats = j.value("repeats", c.repeats);
    c.lr = j.value("lr", c.lr);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.seed = j.value("seed", c.seed);
    c.resplit = j.value("resplit", c.resplit);
    c.rf_trees = j.value("rf_trees", c.rf_trees);
    c.rf_max_depth = j.value("rf_max_depth", c.rf_max_depth);
    c.rf_min_leaf = j.value("rf_min_leaf", c.rf_min_leaf);
    c.rf_feature_fraction = j.value("rf_feature_fraction", c.rf_feature_fraction);
    c.fp_radius = j.value("fp_radius", c.fp_radius);
    c.fp_bits = j.value("fp_bits", c.fp_bits);
    c.path_max_len = j.value("path_max_len", c.path_max_len);
    c.path_bits = j.value("path_bits", c.path_bits);
    c.prune_threshold = j.value("prune_threshold", c.prune_threshold);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("bad config: ") + e.what());
  }
  if (c.epochs < 1 || c.patience < 1 || c.repeats < 1 || c.batch_size < 1)
    throw InvalidArgument("epochs, patience, repeats, and batch_size must be positive");
  if (!(c.lr > 0)) throw InvalidArgument("lr must be positive");
  return c;
}

inline TrainConfig load_train_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in, nullptr, true, true);  // allow comments
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("bad config JSON: ") + e.what());
  }
  return train_config_from_json(j);
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct EpochStats {
  double train_loss = 0;
  double val_mae = 0;
};

struct TrainOutcome {
  std::vector<EpochStats> history;
  int epochs_run = 0;
  int best_epoch = 0;
  double val_mae = std::numeric_limits<double>::quiet_NaN();
  double test_mae = std::numeric_limits<double>::quiet_NaN();
  std::optional<std::string> abort_reason;
  double wall_seconds = 0;
  // persisted model state
  std::vector<std::vector<double>> neural_params;
  ForestModel forest;
  std::vector<std::uint8_t> keep_mask;  // rf feature-pruning mask (fit on train)
};

namespace detail {

inline std::vector<double> forest_feature_row(const Sample& s, const TrainConfig& cfg) {
  std::vector<double> row;
  for (const auto& [role, ensemble] : s.ensembles) {
    (void)role;
    const std::vector<double> part = baseline_features(
        ensemble.molecule, cfg.fp_radius, cfg.fp_bits, cfg.path_max_len, cfg.path_bits);
    row.insert(row.end(), part.begin(), part.end());
  }
  return row;
}

template <typename T>
std::vector<std::vector<T>> snapshot_params(const std::vector<Tensor<T>>& params) {
  std::vector<std::vector<T>> out;
  out.reserve(params.size());
  for (const auto& p : params) out.push_back(p.data());
  return out;
}

template <typename T>
void restore_params(std::vector<Tensor<T>>& params, const std::vector<std::vector<T>>& snap) {
  for (std::size_t i = 0; i < params.size(); ++i) params[i].data() = snap[i];
}

// Scheme-aware inference-time prediction.
template <typename T>
double infer(const Predictor<T>& model, const PreparedSample<T>& prep,
             const EnsembleModelConfig& mc, Rng& rng) {
  if (mc.strategy == Strategy::Sampling) return evaluate_scheme(model, prep, mc.eval_scheme, rng);
  return model.predict(prep);
}

}  // namespace detail

inline TrainOutcome train_forest(const LoadedDataset& data, const TrainConfig& cfg,
                                 std::uint64_t run_seed, const SplitSpec& split) {
  const auto t0 = std::chrono::steady_clock::now();
  TrainOutcome out;

  std::vector<std::vector<double>> features;
  std::vector<double> targets;
  features.reserve(data.samples.size());
  for (const Sample& s : data.samples) {
    features.push_back(detail::forest_feature_row(s, cfg));
    const auto it = s.targets.find(cfg.task);
    if (it == s.targets.end()) throw DataError("sample is missing target '" + cfg.task + "'");
    targets.push_back(it->second);
  }

  auto gather = [&](const std::vector<int>& idx) {
    std::pair<std::vector<std::vector<double>>, std::vector<double>> sub;
    for (int i : idx) {
      sub.first.push_back(features[i]);
      sub.second.push_back(targets[i]);
    }
    return sub;
  };
  auto [train_x, train_y] = gather(split.train);

  out.keep_mask = prune_correlated(train_x, cfg.prune_threshold);
  ForestParams params;
  params.n_trees = cfg.rf_trees;
  params.max_depth = cfg.rf_max_depth;
  params.min_samples_leaf = cfg.rf_min_leaf;
  params.feature_fraction = cfg.rf_feature_fraction;
  params.seed = run_seed;
  out.forest = fit_forest(apply_keep_mask(train_x, out.keep_mask), train_y, params);

  auto mae_on = [&](const std::vector<int>& idx) {
    std::vector<double> preds, want;
    for (int i : idx) {
      preds.push_back(predict_forest_one(out.forest, apply_keep_mask({features[i]}, out.keep_mask)[0]));
      want.push_back(targets[i]);
    }
    return evaluate_mae(preds, want);
  };
  out.val_mae = mae_on(split.val);
  out.test_mae = mae_on(split.test);
  out.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

template <typename T = float>
TrainOutcome train_neural(const LoadedDataset& data, const TrainConfig& cfg,
                          std::uint64_t run_seed, const SplitSpec& split) {
  const auto t0 = std::chrono::steady_clock::now();
  TrainOutcome out;
  const EnsembleModelConfig mc = model_config_from(cfg, run_seed);

  std::vector<PreparedSample<T>> prepared;
  prepared.reserve(data.samples.size());
  for (const Sample& s : data.samples) prepared.push_back(prepare_sample<T>(s, cfg.task, mc));
  const int n_roles = static_cast<int>(prepared.front().roles.size());

  Rng init_rng(derive_seed(run_seed, 0x17));
  Predictor<T> model(mc, n_roles, init_rng);
  std::vector<Tensor<T>> params = model.params();
  AdamState<T> opt = adam_init(params, cfg.lr);

  const bool sampling = mc.strategy == Strategy::Sampling;
  double best_train = std::numeric_limits<double>::infinity();
  double best_val = std::numeric_limits<double>::infinity();
  int stall = 0;
  std::vector<std::vector<T>> best_snapshot;

  auto val_mae_now = [&](int epoch) {
    Rng eval_rng(derive_seed(run_seed, 0xE0000 + static_cast<std::uint64_t>(epoch)));
    std::vector<double> preds, want;
    for (int i : split.val) {
      preds.push_back(detail::infer(model, prepared[i], mc, eval_rng));
      want.push_back(prepared[i].target);
    }
    return evaluate_mae(preds, want);
  };

  std::vector<int> order = split.train;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    Rng shuffle_rng(derive_seed(run_seed, 0xB0000 + static_cast<std::uint64_t>(epoch)));
    shuffle_rng.shuffle(order);

    double epoch_loss = 0;
    bool aborted = false;
    for (std::size_t at = 0; at < order.size() && !aborted; at += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), at + cfg.batch_size);
      Tensor<T> batch_loss;
      for (std::size_t k = at; k < end; ++k) {
        const int i = order[k];
        std::vector<int> choice;
        Tensor<T> pred;
        if (sampling) {
          for (int r = 0; r < n_roles; ++r)
            choice.push_back(sample_conformer_index(data.samples[i].ensembles[r].second,
                                                    run_seed, epoch, i, r));
          pred = model.forward(prepared[i], &choice);
        } else {
          pred = model.forward(prepared[i]);
        }
        const Tensor<T> err = add(pred, -prepared[i].target);
        const Tensor<T> se = mul(err, err);
        batch_loss = (k == at) ? se : add(batch_loss, se);
      }
      batch_loss = mul(batch_loss, 1.0 / static_cast<double>(end - at));
      const double loss_value = static_cast<double>(batch_loss.item());
      if (!std::isfinite(loss_value)) {
        out.abort_reason = "non-finite loss";
        aborted = true;
        break;
      }
      try {
        backward(batch_loss, params);
        adam_step(params, opt);
      } catch (const NonFiniteGradient& e) {
        out.abort_reason = e.what();
        aborted = true;
        break;
      }
      epoch_loss += loss_value * static_cast<double>(end - at);
    }
    if (aborted) break;
    epoch_loss /= static_cast<double>(order.size());

    const double val = val_mae_now(epoch);
    out.history.push_back({epoch_loss, val});
    out.epochs_run = epoch;
    if (val < best_val) {
      best_val = val;
      out.best_epoch = epoch;
      best_snapshot = detail::snapshot_params(params);
    }

    // early stop when the best-so-far training loss stops strictly improving
    if (epoch_loss < best_train) {
      best_train = epoch_loss;
      stall = 0;
    } else if (++stall >= cfg.patience) {
      break;
    }
  }

  if (!best_snapshot.empty()) {
    detail::restore_params(params, best_snapshot);
    out.val_mae = best_val;
    Rng test_rng(derive_seed(run_seed, 0x7E57));
    std::vector<double> preds, want;
    for (int i : split.test) {
      preds.push_back(detail::infer(model, prepared[i], mc, test_rng));
      want.push_back(prepared[i].target);
    }
    out.test_mae = evaluate_mae(preds, want);
    out.neural_params.reserve(params.size());
    for (const auto& p : params) {
      std::vector<double> row(p.data().begin(), p.data().end());
      out.neural_params.push_back(std::move(row));
    }
  }
  out.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

inline TrainOutcome train_model(const LoadedDataset& data, const TrainConfig& cfg,
                                std::uint64_t run_seed, const SplitSpec& split) {
  if (parse_model_kind(cfg.model) == ModelKind::Forest)
    return train_forest(data, cfg, run_seed, split);
  return train_neural<float>(data, cfg, run_seed, split);
}

// ---------------------------------------------------------------------------
// Experiments: R repeats, best-validation selection
// ---------------------------------------------------------------------------

struct ExperimentResult {
  std::vector<ExperimentRecord> records;  // one per repeat
  std::vector<TrainOutcome> outcomes;
  int selected = -1;  // repeat with the lowest validation MAE
};

inline ExperimentResult run_experiment(const LoadedDataset& data, const TrainConfig& cfg,
                                       const std::string& dataset_name) {
  ExperimentResult result;
  const std::string hash = config_hash(cfg);
  double best_val = std::numeric_limits<double>::infinity();
  for (int r = 0; r < cfg.repeats; ++r) {
    const std::uint64_t run_seed = derive_seed(cfg.seed, static_cast<std::uint64_t>(r));
    const std::uint64_t split_seed =
        cfg.resplit ? derive_seed(cfg.seed, 0x5917 + static_cast<std::uint64_t>(r)) : cfg.seed;
    const SplitSpec split = split_dataset(static_cast<int>(data.samples.size()), split_seed);
    TrainOutcome outcome = train_model(data, cfg, run_seed, split);

    ExperimentRecord rec;
    rec.config_hash = hash;
    rec.dataset = dataset_name;
    rec.task = cfg.task;
    rec.model = cfg.model;
    rec.strategy = cfg.strategy;
    rec.seed = run_seed;
    rec.split_seed = split_seed;
    rec.epochs_run = outcome.epochs_run;
    rec.best_epoch = outcome.best_epoch;
    rec.val_mae = outcome.val_mae;
    rec.test_mae = outcome.test_mae;
    rec.wall_seconds = outcome.wall_seconds;
    rec.abort_reason = outcome.abort_reason;
    result.records.push_back(std::move(rec));
    result.outcomes.push_back(std::move(outcome));

    if (!result.records.back().abort_reason && result.records.back().val_mae < best_val) {
      best_val = result.records.back().val_mae;
      result.selected = r;
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// Model persistence: a self-describing JSON container so evaluation needs
// only the model file and the data directory.
// ---------------------------------------------------------------------------

namespace detail {

inline std::string to_hex(const std::string& bytes) {
  static const char* digits = "0123456789abcdef";
  std::string out;
  out.reserve(bytes.size() * 2);
  for (unsigned char c : bytes) {
    out.push_back(digits[c >> 4]);
    out.push_back(digits[c & 0xF]);
  }
  return out;
}

inline std::string from_hex(const std::string& hex) {
  if (hex.size() % 2 != 0) throw DataError("odd-length hex payload");
  auto nibble = [](char c) -> int {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    if (c >= 'A' && c <= 'F') return c - 'A' + 10;
    throw DataError("bad hex digit");
  };
  std::string out;
  out.reserve(hex.size() / 2);
  for (std::size_t i = 0; i < hex.size(); i += 2)
    out.push_back(static_cast<char>(nibble(hex[i]) * 16 + nibble(hex[i + 1])));
  return out;
}

}  // namespace detail

struct SavedModel {
  TrainConfig config;
  std::string dataset_name;
  std::uint64_t seed = 0;
  std::uint64_t split_seed = 0;
  std::vector<std::vector<double>> neural_params;
  ForestModel forest;
  std::vector<std::uint8_t> keep_mask;
};

inline void save_model_file(const std::string& path, const TrainConfig& cfg,
                            const std::string& dataset_name, std::uint64_t seed,
                            std::uint64_t split_seed, const TrainOutcome& outcome) {
  nlohmann::ordered_json j;
  nlohmann::ordered_json jc;
  {
    std::istringstream fields(canonical_config_string(cfg));
    std::string kv;
    while (std::getline(fields, kv, ';')) {
      const auto eq = kv.find('=');
      jc[kv.substr(0, eq)] = kv.substr(eq + 1);
    }
  }
  j["kind"] = parse_model_kind(cfg.model) == ModelKind::Forest ? "forest" : "neural";
  j["config"] = jc;
  j["dataset_name"] = dataset_name;
  j["seed"] = seed;
  j["split_seed"] = split_seed;
  if (parse_model_kind(cfg.model) == ModelKind::Forest) {
    std::ostringstream bin;
    save_forest(outcome.forest, bin);
    j["forest_hex"] = detail::to_hex(bin.str());
    j["keep_mask"] = outcome.keep_mask;
  } else {
    if (outcome.neural_params.empty())
      throw DataError("cannot save a model with no trained parameters");
    j["params"] = outcome.neural_params;
  }
  std::ofstream out(path);
  if (!out) throw IoError("cannot write model file " + path);
  out << j.dump() << "\n";
  if (!out) throw IoError("failed writing model file " + path);
}

inline SavedModel load_model_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open model file " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("bad model file: ") + e.what());
  }
  SavedModel m;
  try {
    nlohmann::json jc = j.at("config");
    // values were serialized as strings; re-parse through the JSON reader
    nlohmann::json typed;
    typed["dataset"] = jc.at("dataset").get<std::string>();
    typed["task"] = jc.at("task").get<std::string>();
    typed["model"] = jc.at("model").get<std::string>();
    typed["strategy"] = jc.at("strategy").get<std::string>();
    typed["set_encoder"] = jc.at("set_encoder").get<std::string>();
    typed["conformer_cap"] = std::stoi(jc.at("conformer_cap").get<std::string>());
    typed["eval_scheme"] = jc.at("eval_scheme").get<std::string>();
    typed["single_conformer"] = jc.at("single_conformer").get<std::string>();
    typed["hidden_dim"] = std::stoi(jc.at("hidden_dim").get<std::string>());
    typed["num_layers"] = std::stoi(jc.at("num_layers").get<std::string>());
    typed["num_rbf"] = std::stoi(jc.at("num_rbf").get<std::string>());
    typed["cutoff"] = std::stod(jc.at("cutoff").get<std::string>());
    typed["epochs"] = std::stoi(jc.at("epochs").get<std::string>());
    typed["patience"] = std::stoi(jc.at("patience").get<std::string>());
    typed["repeats"] = std::stoi(jc.at("repeats").get<std::string>());
    typed["lr"] = std::stod(jc.at("lr").get<std::string>());
    typed["batch_size"] = std::stoi(jc.at("batch_size").get<std::string>());
    typed["seed"] = static_cast<std::uint64_t>(std::stoull(jc.at("seed").get<std::string>()));
    typed["resplit"] = jc.at("resplit").get<std::string>() == "1";
    typed["rf_trees"] = std::stoi(jc.at("rf_trees").get<std::string>());
    typed["rf_max_depth"] = std::stoi(jc.at("rf_max_depth").get<std::string>());
    typed["rf_min_leaf"] = std::stoi(jc.at("rf_min_leaf").get<std::string>());
    typed["rf_feature_fraction"] = std::stod(jc.at("rf_feature_fraction").get<std::string>());
    typed["fp_radius"] = std::stoi(jc.at("fp_radius").get<std::string>());
    typed["fp_bits"] = std::stoi(jc.at("fp_bits").get<std::string>());
    typed["path_max_len"] = std::stoi(jc.at("path_max_len").get<std::string>());
    typed["path_bits"] = std::stoi(jc.at("path_bits").get<std::string>());
    typed["prune_threshold"] = std::stod(jc.at("prune_threshold").get<std::string>());
    m.config = train_config_from_json(typed);
    m.dataset_name = j.at("dataset_name").get<std::string>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.split_seed = j.at("split_seed").get<std::uint64_t>();
    if (j.at("kind").get<std::string>() == "forest") {
      std::istringstream bin(detail::from_hex(j.at("forest_hex").get<std::string>()));
      m.forest = load_forest(bin);
      m.keep_mask = j.at("keep_mask").get<std::vector<std::uint8_t>>();
    } else {
      m.neural_params = j.at("params").get<std::vector<std::vector<double>>>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("bad model file: ") + e.what());
  }
  return m;
}

// Rebuilds the predictor and scores one split ("train" | "val" | "test").
inline double evaluate_saved(const SavedModel& m, const LoadedDataset& data,
                             const std::string& split_name) {
  const SplitSpec split = split_dataset(static_cast<int>(data.samples.size()), m.split_seed);
  const std::vector<int>* idx = nullptr;
  if (split_name == "train") idx = &split.train;
  else if (split_name == "val") idx = &split.val;
  else if (split_name == "test") idx = &split.test;
  else throw InvalidArgument("unknown split '" + split_name + "'");

  if (parse_model_kind(m.config.model) == ModelKind::Forest) {
    std::vector<double> preds, want;
    for (int i : *idx) {
      const Sample& s = data.samples[i];
      const auto row = apply_keep_mask({detail::forest_feature_row(s, m.config)}, m.keep_mask)[0];
      preds.push_back(predict_forest_one(m.forest, row));
      want.push_back(s.targets.at(m.config.task));
    }
    return evaluate_mae(preds, want);
  }

  const EnsembleModelConfig mc = model_config_from(m.config, m.seed);
  std::vector<PreparedSample<float>> prepared;
  for (const Sample& s : data.samples) prepared.push_back(prepare_sample<float>(s, m.config.task, mc));
  Rng init_rng(derive_seed(m.seed, 0x17));
  Predictor<float> model(mc, static_cast<int>(prepared.front().roles.size()), init_rng);
  std::vector<Tensor<float>> params = model.params();
  if (params.size() != m.neural_params.size())
    throw DataError("model file parameter count does not match the architecture");
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (params[k].data().size() != m.neural_params[k].size())
      throw DataError("model file parameter shapes do not match the architecture");
    for (std::size_t i = 0; i < m.neural_params[k].size(); ++i)
      params[k].data()[i] = static_cast<float>(m.neural_params[k][i]);
  }
  Rng eval_rng(derive_seed(m.seed, 0x7E57));
  std::vector<double> preds, want;
  for (int i : *idx) {
    preds.push_back(detail::infer(model, prepared[i], mc, eval_rng));
    want.push_back(prepared[i].target);
  }
  return evaluate_mae(preds, want);
}

}  // namespace marcel
