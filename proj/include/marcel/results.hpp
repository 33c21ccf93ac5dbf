#pragma once

#include <fstream>
#include <istream>
#include <limits>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "marcel/errors.hpp"

namespace marcel {

// One benchmark run. Serialized as a single JSON object per line so result
// files can be appended to and concatenated freely.
struct ExperimentRecord {
  std::string config_hash;
  std::string dataset;
  std::string task;
  std::string model;
  std::string strategy;
  std::uint64_t seed = 0;
  std::uint64_t split_seed = 0;
  int epochs_run = 0;
  int best_epoch = 0;
  double val_mae = 0.0;
  double test_mae = 0.0;
  double wall_seconds = 0.0;
  std::optional<std::string> abort_reason;  // only present for aborted runs

  bool operator==(const ExperimentRecord&) const = default;
};

inline nlohmann::ordered_json to_json(const ExperimentRecord& r) {
  nlohmann::ordered_json j{
      {"config_hash", r.config_hash},
      {"dataset", r.dataset},
      {"task", r.task},
      {"model", r.model},
      {"strategy", r.strategy},
      {"seed", r.seed},
      {"split_seed", r.split_seed},
      {"epochs_run", r.epochs_run},
      {"best_epoch", r.best_epoch},
      {"val_mae", r.val_mae},
      {"test_mae", r.test_mae},
      {"wall_seconds", r.wall_seconds},
  };
  if (r.abort_reason) j["abort_reason"] = *r.abort_reason;
  return j;
}

inline ExperimentRecord record_from_json(const nlohmann::json& j) {
  ExperimentRecord r;
  // aborted runs can carry NaN metrics, which JSON renders as null
  auto metric = [&](const char* key) {
    const nlohmann::json& v = j.at(key);
    return v.is_null() ? std::numeric_limits<double>::quiet_NaN() : v.get<double>();
  };
  try {
    r.config_hash = j.at("config_hash").get<std::string>();
    r.dataset = j.at("dataset").get<std::string>();
    r.task = j.at("task").get<std::string>();
    r.model = j.at("model").get<std::string>();
    r.strategy = j.at("strategy").get<std::string>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.split_seed = j.at("split_seed").get<std::uint64_t>();
    r.epochs_run = j.at("epochs_run").get<int>();
    r.best_epoch = j.at("best_epoch").get<int>();
    r.val_mae = metric("val_mae");
    r.test_mae = metric("test_mae");
    r.wall_seconds = j.at("wall_seconds").get<double>();
    if (j.contains("abort_reason")) r.abort_reason = j.at("abort_reason").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("bad result record: ") + e.what());
  }
  return r;
}

inline void write_results(std::ostream& out, const std::vector<ExperimentRecord>& records) {
  for (const ExperimentRecord& r : records) out << to_json(r).dump() << '\n';
  if (!out) throw IoError("failed writing result records");
}

// Appends; existing lines in `path` are left untouched.
inline void append_results(const std::string& path, const std::vector<ExperimentRecord>& records) {
  std::ofstream out(path, std::ios::app);
  if (!out) throw IoError("cannot open '" + path + "' for appending");
  write_results(out, records);
}

inline std::vector<ExperimentRecord> read_results(std::istream& in) {
  std::vector<ExperimentRecord> records;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(line_no, e.what());
    }
    records.push_back(record_from_json(j));
  }
  return records;
}

inline std::vector<ExperimentRecord> read_results_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "'");
  return read_results(in);
}

}  // namespace marcel
