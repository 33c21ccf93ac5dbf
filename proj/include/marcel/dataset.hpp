#pragma once

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "marcel/chem.hpp"
#include "marcel/errors.hpp"
#include "marcel/sdf.hpp"
#include "marcel/xyz.hpp"

namespace marcel {

// A regression target. `tag` empty means the value comes from the labels CSV
// (one value per molecule); otherwise each conformer carries the tag as an SD
// property and the target is the Boltzmann average of the per-conformer
// values, taken over the full ensemble as loaded (i.e. before any pruning).
struct TaskSpec {
  std::string name;
  std::string tag;
};

struct RoleSpec {
  std::string role;
  std::vector<std::string> files;
};

struct DatasetManifest {
  std::string name;
  std::vector<TaskSpec> tasks;
  std::vector<RoleSpec> roles;
  std::string labels_file;  // optional CSV: header "id,<task>,<task>,..."
  double rmsd_threshold = 1.0;
  EnergyUnit energy_unit = EnergyUnit::KcalPerMol;
  double temperature = kDefaultTemperatureK;
  std::optional<int> min_rotatable_bonds;  // keep molecules with strictly more
  std::string energy_tag = "energy";
  bool require_energy = true;
  std::string id_tag;  // SD property to use as identifier instead of the title
  std::string xyz_energy_pattern = kDefaultXyzEnergyPattern;
  int automorphism_cap = 10000;
  bool heavy_only = false;
  std::filesystem::path base_dir;  // directory the manifest was loaded from

  BoltzmannParams boltzmann_params() const {
    return {temperature, boltzmann_constant(energy_unit)};
  }
};

struct LoadedDataset {
  std::vector<Sample> samples;        // sorted by first-role identifier
  std::vector<std::string> skip_log;  // one human-readable line per dropped molecule
};

inline EnergyUnit parse_energy_unit(const std::string& s) {
  if (s == "kcal/mol" || s == "kcal_per_mol") return EnergyUnit::KcalPerMol;
  if (s == "kJ/mol" || s == "kj/mol" || s == "kj_per_mol") return EnergyUnit::KJPerMol;
  if (s == "eV" || s == "ev") return EnergyUnit::ElectronVolt;
  if (s == "hartree" || s == "Hartree" || s == "au") return EnergyUnit::Hartree;
  throw InvalidArgument("unknown energy unit '" + s + "'");
}

inline const char* energy_unit_name(EnergyUnit u) {
  switch (u) {
    case EnergyUnit::KcalPerMol: return "kcal/mol";
    case EnergyUnit::KJPerMol: return "kJ/mol";
    case EnergyUnit::ElectronVolt: return "eV";
    case EnergyUnit::Hartree: return "hartree";
  }
  return "?";
}

// Relative structure/label paths resolve against MARCEL_DATA_DIR when set,
// otherwise against the directory containing the manifest.
inline std::filesystem::path resolve_data_path(const std::string& p,
                                               const std::filesystem::path& base_dir) {
  std::filesystem::path path(p);
  if (path.is_absolute()) return path;
  if (const char* root = std::getenv("MARCEL_DATA_DIR"); root && *root)
    return std::filesystem::path(root) / path;
  return base_dir / path;
}

inline DatasetManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest '" + path.string() + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in, nullptr, true, /*ignore_comments=*/true);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(0, std::string("manifest is not valid JSON: ") + e.what());
  }

  DatasetManifest m;
  m.base_dir = path.has_parent_path() ? path.parent_path() : std::filesystem::path(".");
  try {
    m.name = j.at("name").get<std::string>();
    for (const auto& t : j.at("tasks")) {
      TaskSpec spec;
      if (t.is_string()) {
        spec.name = t.get<std::string>();
      } else {
        spec.name = t.at("name").get<std::string>();
        if (t.contains("tag")) spec.tag = t.at("tag").get<std::string>();
      }
      m.tasks.push_back(std::move(spec));
    }
    for (const auto& r : j.at("roles")) {
      RoleSpec spec;
      spec.role = r.at("role").get<std::string>();
      for (const auto& f : r.at("files")) spec.files.push_back(f.get<std::string>());
      m.roles.push_back(std::move(spec));
    }
    if (j.contains("labels")) m.labels_file = j.at("labels").get<std::string>();
    if (j.contains("rmsd_threshold")) m.rmsd_threshold = j.at("rmsd_threshold").get<double>();
    if (j.contains("energy_unit"))
      m.energy_unit = parse_energy_unit(j.at("energy_unit").get<std::string>());
    if (j.contains("temperature")) m.temperature = j.at("temperature").get<double>();
    if (j.contains("min_rotatable_bonds") && !j.at("min_rotatable_bonds").is_null())
      m.min_rotatable_bonds = j.at("min_rotatable_bonds").get<int>();
    if (j.contains("energy_tag")) m.energy_tag = j.at("energy_tag").get<std::string>();
    if (j.contains("require_energy")) m.require_energy = j.at("require_energy").get<bool>();
    if (j.contains("id_tag")) m.id_tag = j.at("id_tag").get<std::string>();
    if (j.contains("xyz_energy_pattern"))
      m.xyz_energy_pattern = j.at("xyz_energy_pattern").get<std::string>();
    if (j.contains("automorphism_cap")) m.automorphism_cap = j.at("automorphism_cap").get<int>();
    if (j.contains("heavy_only")) m.heavy_only = j.at("heavy_only").get<bool>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("bad manifest: ") + e.what());
  }

  if (m.name.empty()) throw DataError("manifest name must be non-empty");
  if (m.tasks.empty()) throw DataError("manifest declares no tasks");
  if (m.roles.empty()) throw DataError("manifest declares no roles");
  if (!(m.rmsd_threshold > 0)) throw DataError("rmsd_threshold must be > 0");
  if (!(m.temperature > 0)) throw DataError("temperature must be > 0");
  const bool any_csv_task =
      std::any_of(m.tasks.begin(), m.tasks.end(), [](const TaskSpec& t) { return t.tag.empty(); });
  if (any_csv_task && m.labels_file.empty())
    throw DataError("tasks reference the labels CSV but the manifest names none");
  const bool any_tag_task =
      std::any_of(m.tasks.begin(), m.tasks.end(), [](const TaskSpec& t) { return !t.tag.empty(); });
  if (any_tag_task && !m.require_energy)
    throw DataError("per-conformer tag targets need energies for the Boltzmann average");
  return m;
}

namespace detail {

// header "id,<name>,..." then one row per molecule; plain commas, no quoting.
inline std::map<std::string, std::map<std::string, double>> parse_labels_csv(
    std::istream& in, const std::vector<std::string>& wanted) {
  std::string line;
  std::size_t line_no = 0;
  auto split = [](const std::string& s) {
    std::vector<std::string> out;
    std::string cell;
    std::istringstream ss(s);
    while (std::getline(ss, cell, ',')) out.push_back(trim(cell));
    if (!s.empty() && s.back() == ',') out.emplace_back();
    return out;
  };

  if (!std::getline(in, line)) throw ParseError(1, "labels CSV is empty");
  ++line_no;
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const std::vector<std::string> header = split(line);
  if (header.size() < 2) throw ParseError(1, "labels CSV header needs an id and a value column");
  std::map<std::string, std::size_t> col;
  for (std::size_t c = 1; c < header.size(); ++c) col[header[c]] = c;
  for (const std::string& name : wanted)
    if (!col.count(name)) throw DataError("labels CSV has no column '" + name + "'");

  std::map<std::string, std::map<std::string, double>> labels;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    const std::vector<std::string> cells = split(line);
    if (cells.size() != header.size())
      throw ParseError(line_no, "row has " + std::to_string(cells.size()) + " cells, header has " +
                                    std::to_string(header.size()));
    const std::string& id = cells[0];
    for (const std::string& name : wanted) {
      double v = 0;
      try {
        v = std::stod(cells[col[name]]);
      } catch (const std::exception&) {
        throw ParseError(line_no, "value '" + cells[col[name]] + "' for task '" + name +
                                      "' is not numeric");
      }
      if (!std::isfinite(v))
        throw DataError("label for '" + id + "' task '" + name + "' is not finite");
      auto [it, inserted] = labels[id].emplace(name, v);
      if (!inserted && it->second != v)
        throw DataError("conflicting labels for '" + id + "' task '" + name + "'");
    }
  }
  return labels;
}

struct RawEnsemble {
  ConformerEnsemble ensemble;
  std::vector<std::map<std::string, std::string>> conformer_properties;
};

inline bool same_topology(const Molecule& a, const Molecule& b) {
  if (a.atom_count() != b.atom_count() || a.bond_count() != b.bond_count()) return false;
  for (int i = 0; i < a.atom_count(); ++i)
    if (a.atoms[i].element != b.atoms[i].element) return false;
  auto key = [](const Molecule& m) {
    std::vector<std::tuple<int, int, int>> k;
    for (const Bond& bd : m.bonds)
      k.emplace_back(std::min(bd.i, bd.j), std::max(bd.i, bd.j), static_cast<int>(bd.order));
    std::sort(k.begin(), k.end());
    return k;
  };
  return key(a) == key(b);
}

// Reads every structure file of one role and groups conformers by identifier.
inline std::map<std::string, RawEnsemble> load_role(const DatasetManifest& m, const RoleSpec& role) {
  std::map<std::string, RawEnsemble> groups;
  for (const std::string& file : role.files) {
    const std::filesystem::path path = resolve_data_path(file, m.base_dir);
    std::ifstream in(path);
    if (!in) throw IoError("cannot open structure file '" + path.string() + "'");
    const std::string ext = path.extension().string();

    if (ext == ".sdf" || ext == ".mol" || ext == ".sd") {
      std::vector<SdfRecord> records;
      try {
        records = parse_sdf(in, m.energy_tag);
      } catch (const ParseError& e) {
        ParseError wrapped(path.filename().string() + ": " + e.what());
        wrapped.line_number = e.line_number;
        throw wrapped;
      }
      for (SdfRecord& rec : records) {
        std::string id = rec.molecule.identifier;
        if (!m.id_tag.empty()) {
          const auto it = rec.properties.find(m.id_tag);
          if (it == rec.properties.end())
            throw MissingProperty("record in '" + path.filename().string() +
                                  "' lacks id tag '" + m.id_tag + "'");
          id = trim(it->second);
        }
        if (id.empty()) throw DataError("record in '" + path.filename().string() + "' has no identifier");
        rec.molecule.identifier = id;
        if (m.require_energy && !rec.properties.count(m.energy_tag))
          throw MissingProperty("conformer of '" + id + "' lacks energy tag '" + m.energy_tag + "'");

        auto [it, inserted] = groups.emplace(id, RawEnsemble{});
        RawEnsemble& g = it->second;
        if (inserted) {
          g.ensemble.molecule = rec.molecule;
        } else if (!same_topology(g.ensemble.molecule, rec.molecule)) {
          throw DataError("conformers of '" + id + "' disagree on atoms or bonds");
        }
        g.ensemble.conformers.push_back(rec.conformer);
        g.conformer_properties.push_back(std::move(rec.properties));
      }
    } else if (ext == ".xyz") {
      // one molecule per file: frames are its conformers, id is the file stem
      const std::string id = path.stem().string();
      const std::vector<XyzFrame> frames = parse_xyz(in);
      if (frames.empty()) throw DataError("'" + path.string() + "' contains no frames");
      auto [it, inserted] = groups.emplace(id, RawEnsemble{});
      RawEnsemble& g = it->second;
      if (inserted) {
        for (const std::string& sym : frames[0].elements) {
          AtomRecord a;
          a.element = sym;
          g.ensemble.molecule.atoms.push_back(a);
        }
        g.ensemble.molecule.identifier = id;
        compute_derived_fields(g.ensemble.molecule);
      }
      for (const XyzFrame& f : frames) {
        if (static_cast<int>(f.elements.size()) != g.ensemble.molecule.atom_count() ||
            !std::equal(f.elements.begin(), f.elements.end(), g.ensemble.molecule.atoms.begin(),
                        [](const std::string& s, const AtomRecord& a) { return s == a.element; }))
          throw DataError("frames of '" + id + "' disagree on elements");
        Conformer c;
        c.coords = f.coords;
        const std::optional<double> e = parse_energy_from_comment(f.comment, m.xyz_energy_pattern);
        if (!e && m.require_energy)
          throw MissingProperty("frame of '" + id + "' has no energy in its comment line");
        c.energy = e.value_or(0.0);
        g.ensemble.conformers.push_back(std::move(c));
        g.conformer_properties.emplace_back();
      }
    } else {
      throw InvalidArgument("unsupported structure file extension '" + ext + "'");
    }
  }
  return groups;
}

}  // namespace detail

// Loads the manifest's structure files into per-molecule conformer ensembles,
// recomputes Boltzmann weights, and attaches regression targets. Molecules
// missing a role, a label, or the rotatable-bond requirement are dropped and
// noted in the skip log; malformed files raise instead.
inline LoadedDataset load_dataset(const DatasetManifest& m) {
  std::vector<std::map<std::string, detail::RawEnsemble>> per_role;
  per_role.reserve(m.roles.size());
  for (const RoleSpec& role : m.roles) per_role.push_back(detail::load_role(m, role));

  std::vector<std::string> csv_tasks;
  for (const TaskSpec& t : m.tasks)
    if (t.tag.empty()) csv_tasks.push_back(t.name);
  std::map<std::string, std::map<std::string, double>> labels;
  if (!csv_tasks.empty()) {
    const std::filesystem::path path = resolve_data_path(m.labels_file, m.base_dir);
    std::ifstream in(path);
    if (!in) throw IoError("cannot open labels file '" + path.string() + "'");
    try {
      labels = detail::parse_labels_csv(in, csv_tasks);
    } catch (const ParseError& e) {
      ParseError wrapped(path.filename().string() + ": " + e.what());
      wrapped.line_number = e.line_number;
      throw wrapped;
    }
  }

  LoadedDataset out;
  const BoltzmannParams bp = m.boltzmann_params();

  for (auto& [id, primary] : per_role[0]) {
    bool usable = true;
    for (std::size_t r = 1; r < per_role.size(); ++r) {
      if (!per_role[r].count(id)) {
        out.skip_log.push_back(id + ": missing from role '" + m.roles[r].role + "'");
        usable = false;
        break;
      }
    }
    if (!usable) continue;

    if (!csv_tasks.empty() && !labels.count(id)) {
      out.skip_log.push_back(id + ": no row in labels CSV");
      continue;
    }
    if (m.min_rotatable_bonds) {
      const int nrot = count_rotatable_bonds(primary.ensemble.molecule);
      if (nrot <= *m.min_rotatable_bonds) {
        out.skip_log.push_back(id + ": " + std::to_string(nrot) + " rotatable bonds, need more than " +
                               std::to_string(*m.min_rotatable_bonds));
        continue;
      }
    }

    Sample sample;
    bool tag_ok = true;
    for (std::size_t r = 0; r < per_role.size() && tag_ok; ++r) {
      detail::RawEnsemble& raw = per_role[r].at(id);
      ConformerEnsemble ens = raw.ensemble;
      std::vector<double> energies;
      energies.reserve(ens.conformers.size());
      for (const Conformer& c : ens.conformers) energies.push_back(c.energy);
      if (m.require_energy) ens.weights = boltzmann_weights(energies, bp);

      // conformer-tag targets come from the first role's ensemble
      if (r == 0) {
        for (const TaskSpec& t : m.tasks) {
          if (t.tag.empty()) {
            sample.targets[t.name] = labels.at(id).at(t.name);
            continue;
          }
          std::vector<double> values;
          values.reserve(raw.conformer_properties.size());
          for (std::size_t c = 0; c < raw.conformer_properties.size() && tag_ok; ++c) {
            const auto it = raw.conformer_properties[c].find(t.tag);
            if (it == raw.conformer_properties[c].end()) {
              out.skip_log.push_back(id + ": conformer " + std::to_string(c) + " lacks tag '" +
                                     t.tag + "'");
              tag_ok = false;
              break;
            }
            try {
              values.push_back(std::stod(it->second));
            } catch (const std::exception&) {
              throw DataError("tag '" + t.tag + "' of '" + id + "' is not numeric");
            }
          }
          if (!tag_ok) break;
          if (!ens.weights)
            ens.weights = boltzmann_weights(energies, bp);  // tags need weights regardless
          sample.targets[t.name] = boltzmann_average(values, *ens.weights);
        }
      }
      if (tag_ok) sample.ensembles.emplace_back(m.roles[r].role, std::move(ens));
    }
    if (!tag_ok) continue;
    for (const auto& [name, v] : sample.targets)
      if (!std::isfinite(v)) throw DataError("target '" + name + "' of '" + id + "' is not finite");
    out.samples.push_back(std::move(sample));
  }

  for (const auto& [id, vals] : labels)
    if (!per_role[0].count(id)) out.skip_log.push_back(id + ": labeled but no structures");

  std::sort(out.samples.begin(), out.samples.end(), [](const Sample& a, const Sample& b) {
    return a.ensembles[0].second.molecule.identifier < b.ensembles[0].second.molecule.identifier;
  });
  return out;
}

inline LoadedDataset load_dataset(const std::filesystem::path& manifest_path) {
  return load_dataset(load_manifest(manifest_path));
}

}  // namespace marcel
