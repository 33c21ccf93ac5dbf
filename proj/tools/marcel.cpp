// marcel: conformer-ensemble benchmark command line.
//
//   marcel prepare  <manifest>            dataset statistics and skip log
//   marcel dedup    <in.sdf> ...          RMSD-deduplicate conformers
//   marcel train    --config <file>       run an experiment, append results
//   marcel evaluate --model <file>        score a saved model on one split
//   marcel report   --results <jsonl>     summarize result records

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "marcel/dataset.hpp"
#include "marcel/geometry.hpp"
#include "marcel/harness.hpp"
#include "marcel/results.hpp"
#include "marcel/sdf.hpp"

namespace {

using nlohmann::ordered_json;

std::filesystem::path resolve_manifest(const std::string& p) {
  return marcel::resolve_data_path(p, std::filesystem::current_path());
}

// ---------------------------------------------------------------------------
// prepare
// ---------------------------------------------------------------------------

int run_prepare(const std::string& manifest_path, const std::string& json_out) {
  const marcel::DatasetManifest manifest = marcel::load_manifest(resolve_manifest(manifest_path));
  const marcel::LoadedDataset data = marcel::load_dataset(manifest);

  ordered_json stats;
  stats["name"] = manifest.name;
  stats["samples"] = data.samples.size();
  {
    std::vector<std::string> names;
    for (const auto& t : manifest.tasks) names.push_back(t.name);
    stats["tasks"] = names;
  }
  ordered_json roles = ordered_json::array();
  for (std::size_t r = 0; r < manifest.roles.size(); ++r) {
    std::size_t conformers = 0, atoms = 0;
    std::size_t min_c = data.samples.empty() ? 0 : SIZE_MAX, max_c = 0;
    for (const marcel::Sample& s : data.samples) {
      const std::size_t c = s.ensembles[r].second.conformers.size();
      conformers += c;
      min_c = std::min(min_c, c);
      max_c = std::max(max_c, c);
      atoms += s.ensembles[r].second.molecule.atoms.size();
    }
    ordered_json jr;
    jr["role"] = manifest.roles[r].role;
    jr["conformers"] = conformers;
    jr["conformers_per_molecule_min"] = min_c;
    jr["conformers_per_molecule_max"] = max_c;
    jr["mean_atoms"] =
        data.samples.empty() ? 0.0 : static_cast<double>(atoms) / data.samples.size();
    roles.push_back(jr);
  }
  stats["roles"] = roles;
  stats["skipped"] = data.skip_log.size();
  stats["skip_log"] = data.skip_log;

  if (!json_out.empty()) {
    std::ofstream out(json_out);
    if (!out) throw marcel::IoError("cannot write '" + json_out + "'");
    out << stats.dump(2) << "\n";
  }
  std::cout << stats.dump(2) << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// dedup
// ---------------------------------------------------------------------------

int run_dedup(const std::string& input, const std::string& output, const std::string& summary_path,
              double threshold, int automorphism_cap, const std::string& energy_tag,
              const std::string& energy_unit, double temperature, bool heavy_only, int threads) {
  std::ifstream in(input);
  if (!in) throw marcel::IoError("cannot open '" + input + "'");
  const std::vector<marcel::SdfRecord> records = marcel::parse_sdf(in, energy_tag);
  if (records.empty()) throw marcel::DataError("'" + input + "' contains no records");

  // group records into ensembles by title, preserving first-seen order
  std::vector<std::string> ids;
  std::map<std::string, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const std::string& id = records[i].molecule.identifier;
    if (id.empty()) throw marcel::DataError("record " + std::to_string(i + 1) + " has no title");
    auto [it, inserted] = groups.emplace(id, std::vector<std::size_t>{});
    if (inserted) ids.push_back(id);
    it->second.push_back(i);
  }

  const marcel::BoltzmannParams bp{temperature,
                                   marcel::boltzmann_constant(marcel::parse_energy_unit(energy_unit))};
  std::ofstream out(output);
  if (!out) throw marcel::IoError("cannot write '" + output + "'");

  ordered_json summary;
  summary["input"] = input;
  summary["threshold"] = threshold;
  summary["automorphism_cap"] = automorphism_cap;
  ordered_json per_molecule = ordered_json::array();
  std::size_t total_in = 0, total_kept = 0;

  for (const std::string& id : ids) {
    const std::vector<std::size_t>& members = groups[id];
    marcel::ConformerEnsemble ens;
    ens.molecule = records[members[0]].molecule;
    for (std::size_t i : members) {
      if (!marcel::detail::same_topology(ens.molecule, records[i].molecule))
        throw marcel::DataError("conformers of '" + id + "' disagree on atoms or bonds");
      ens.conformers.push_back(records[i].conformer);
    }
    const marcel::DedupResult result =
        marcel::deduplicate_ensemble_full(ens, threshold, automorphism_cap, bp, heavy_only, threads);
    for (int s : result.survivor_indices) {
      const marcel::SdfRecord& rec = records[members[s]];
      marcel::write_sdf_record(out, rec.molecule, rec.conformer, rec.properties);
    }
    ordered_json jm;
    jm["id"] = id;
    jm["conformers_in"] = members.size();
    jm["conformers_kept"] = result.survivor_indices.size();
    jm["clusters"] = result.clusters.clusters.size();
    per_molecule.push_back(jm);
    total_in += members.size();
    total_kept += result.survivor_indices.size();
  }
  if (!out) throw marcel::IoError("failed writing '" + output + "'");

  summary["molecules"] = ids.size();
  summary["conformers_in"] = total_in;
  summary["conformers_kept"] = total_kept;
  summary["molecules_detail"] = per_molecule;
  {
    std::ofstream sout(summary_path);
    if (!sout) throw marcel::IoError("cannot write '" + summary_path + "'");
    sout << summary.dump(2) << "\n";
  }
  std::cout << "dedup: " << total_kept << "/" << total_in << " conformers kept across "
            << ids.size() << " molecules -> " << output << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

int run_train(const std::string& config_path, std::uint64_t seed, bool seed_given, bool resplit,
              const std::string& results_path, const std::string& model_out) {
  marcel::TrainConfig cfg = marcel::load_train_config(config_path);
  if (seed_given) cfg.seed = seed;
  if (resplit) cfg.resplit = true;

  const marcel::DatasetManifest manifest = marcel::load_manifest(resolve_manifest(cfg.dataset));
  const marcel::LoadedDataset data = marcel::load_dataset(manifest);
  const marcel::ExperimentResult result = marcel::run_experiment(data, cfg, manifest.name);
  marcel::append_results(results_path, result.records);

  if (!model_out.empty()) {
    if (result.selected < 0)
      throw marcel::DataError("every repeat aborted; nothing to save");
    const marcel::ExperimentRecord& best = result.records[result.selected];
    marcel::save_model_file(model_out, cfg, manifest.name, best.seed, best.split_seed,
                            result.outcomes[result.selected]);
  }

  ordered_json report;
  report["config_hash"] = marcel::config_hash(cfg);
  report["dataset"] = manifest.name;
  report["results_file"] = results_path;
  ordered_json repeats = ordered_json::array();
  for (const marcel::ExperimentRecord& r : result.records) repeats.push_back(marcel::to_json(r));
  report["repeats"] = repeats;
  report["selected_repeat"] = result.selected;
  if (result.selected >= 0) {
    report["val_mae"] = result.records[result.selected].val_mae;
    report["test_mae"] = result.records[result.selected].test_mae;
  }
  if (!model_out.empty()) report["model_file"] = model_out;
  std::cout << report.dump(2) << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

int run_evaluate(const std::string& model_path, const std::string& split) {
  const marcel::SavedModel model = marcel::load_model_file(model_path);
  const marcel::DatasetManifest manifest =
      marcel::load_manifest(resolve_manifest(model.config.dataset));
  const marcel::LoadedDataset data = marcel::load_dataset(manifest);
  const double mae = marcel::evaluate_saved(model, data, split);

  const marcel::SplitSpec spec =
      marcel::split_dataset(static_cast<int>(data.samples.size()), model.split_seed);
  const std::size_t n = split == "train" ? spec.train.size()
                        : split == "val" ? spec.val.size()
                                         : spec.test.size();
  ordered_json out;
  out["model"] = model_path;
  out["dataset"] = manifest.name;
  out["task"] = model.config.task;
  out["split"] = split;
  out["samples"] = n;
  out["mae"] = mae;
  std::cout << out.dump(2) << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

int run_report(const std::string& results_path, bool csv) {
  const std::vector<marcel::ExperimentRecord> records = marcel::read_results_file(results_path);
  if (records.empty()) throw marcel::DataError("'" + results_path + "' has no records");

  // group repeats by configuration; report the lowest-validation repeat of each
  std::vector<std::string> order;
  std::map<std::string, std::vector<const marcel::ExperimentRecord*>> groups;
  for (const marcel::ExperimentRecord& r : records) {
    auto [it, inserted] = groups.emplace(r.config_hash, std::vector<const marcel::ExperimentRecord*>{});
    if (inserted) order.push_back(r.config_hash);
    it->second.push_back(&r);
  }

  if (csv) {
    std::cout << "config_hash,dataset,task,model,strategy,repeats,aborted,val_mae,test_mae,"
                 "mean_wall_seconds\n";
  } else {
    std::printf("%-16s  %-12s  %-10s  %-7s  %-12s  %3s  %10s  %10s\n", "config", "dataset", "task",
                "model", "strategy", "n", "val_mae", "test_mae");
  }
  for (const std::string& hash : order) {
    const auto& group = groups[hash];
    const marcel::ExperimentRecord* best = nullptr;
    int aborted = 0;
    double wall = 0;
    for (const marcel::ExperimentRecord* r : group) {
      wall += r->wall_seconds;
      if (r->abort_reason) {
        ++aborted;
        continue;
      }
      if (!best || r->val_mae < best->val_mae) best = r;
    }
    wall /= static_cast<double>(group.size());
    const double val = best ? best->val_mae : std::nan("");
    const double test = best ? best->test_mae : std::nan("");
    const marcel::ExperimentRecord* any = group.front();
    if (csv) {
      std::printf("%s,%s,%s,%s,%s,%zu,%d,%.17g,%.17g,%.3f\n", hash.c_str(), any->dataset.c_str(),
                  any->task.c_str(), any->model.c_str(), any->strategy.c_str(), group.size(),
                  aborted, val, test, wall);
    } else {
      std::printf("%-16s  %-12s  %-10s  %-7s  %-12s  %3zu  %10.5f  %10.5f\n", hash.c_str(),
                  any->dataset.c_str(), any->task.c_str(), any->model.c_str(),
                  any->strategy.c_str(), group.size(), val, test);
    }
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"conformer-ensemble learning benchmark"};
  app.require_subcommand(1);

  // prepare
  std::string manifest_path, prepare_json;
  CLI::App* prepare = app.add_subcommand("prepare", "load a dataset and print statistics");
  prepare->add_option("manifest", manifest_path, "dataset manifest (JSON)")->required();
  prepare->add_option("--json", prepare_json, "also write the statistics to this file");

  // dedup
  std::string dedup_in, dedup_out = "dedup.sdf", dedup_summary = "dedup_summary.json";
  std::string energy_tag = "energy", energy_unit = "kcal/mol";
  double threshold = 1.0, temperature = marcel::kDefaultTemperatureK;
  int automorphism_cap = 10000, threads = 1;
  bool heavy_only = false;
  CLI::App* dedup = app.add_subcommand("dedup", "remove near-duplicate conformers from an SDF");
  dedup->add_option("input", dedup_in, "multi-record SDF, conformers grouped by title")->required();
  dedup->add_option("--threshold", threshold, "RMSD cluster radius in Angstrom");
  dedup->add_option("--automorphism-cap", automorphism_cap,
                    "stop enumerating graph symmetries beyond this count");
  dedup->add_option("--output,-o", dedup_out, "surviving conformers (SDF)");
  dedup->add_option("--summary", dedup_summary, "per-molecule summary (JSON)");
  dedup->add_option("--energy-tag", energy_tag, "SD property holding the conformer energy");
  dedup->add_option("--energy-unit", energy_unit, "kcal/mol, kJ/mol, eV, or hartree");
  dedup->add_option("--temperature", temperature, "Kelvin, for the recomputed weights");
  dedup->add_flag("--heavy-only", heavy_only, "ignore hydrogens in the RMSD");
  dedup->add_option("--threads", threads, "worker threads for the RMSD matrix");

  // train
  std::string config_path, results_path = "results.jsonl", model_out;
  std::uint64_t seed = 0;
  bool resplit = false;
  CLI::App* train = app.add_subcommand("train", "run an experiment from a config file");
  train->add_option("--config", config_path, "training configuration (JSON)")->required();
  CLI::Option* seed_opt = train->add_option("--seed", seed, "override the config's master seed");
  train->add_flag("--resplit", resplit, "use a fresh split per repeat");
  train->add_option("--results", results_path, "JSONL file to append result records to");
  train->add_option("--model-out", model_out, "save the best repeat's model here");

  // evaluate
  std::string model_path, split = "test";
  CLI::App* evaluate = app.add_subcommand("evaluate", "score a saved model on one split");
  evaluate->add_option("--model", model_path, "model file written by train")->required();
  evaluate->add_option("--split", split, "train, val, or test")
      ->check(CLI::IsMember({"train", "val", "test"}));

  // report
  std::string report_path;
  bool csv = false;
  CLI::App* report = app.add_subcommand("report", "summarize a results file");
  report->add_option("--results", report_path, "JSONL results file")->required();
  report->add_flag("--csv", csv, "machine-readable output");

  CLI11_PARSE(app, argc, argv);

  try {
    if (prepare->parsed()) return run_prepare(manifest_path, prepare_json);
    if (dedup->parsed())
      return run_dedup(dedup_in, dedup_out, dedup_summary, threshold, automorphism_cap, energy_tag,
                       energy_unit, temperature, heavy_only, threads);
    if (train->parsed())
      return run_train(config_path, seed, seed_opt->count() > 0, resplit, results_path, model_out);
    if (evaluate->parsed()) return run_evaluate(model_path, split);
    if (report->parsed()) return run_report(report_path, csv);
  } catch (const marcel::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "unexpected error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
