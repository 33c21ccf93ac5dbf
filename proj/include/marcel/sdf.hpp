#pragma once

#include <cctype>
#include <cstdio>
#include <istream>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "marcel/chem.hpp"
#include "marcel/elements.hpp"
#include "marcel/errors.hpp"

namespace marcel {

struct SdfRecord {
  Molecule molecule;
  Conformer conformer;
  std::map<std::string, std::string> properties;
};

namespace detail {

inline std::string trim(const std::string& s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

inline std::string field(const std::string& line, std::size_t pos, std::size_t len) {
  if (pos >= line.size()) return "";
  return trim(line.substr(pos, len));
}

inline int parse_int_field(const std::string& line, std::size_t pos, std::size_t len,
                           std::size_t line_no, const char* what) {
  const std::string f = field(line, pos, len);
  if (f.empty()) return 0;
  try {
    return std::stoi(f);
  } catch (const std::exception&) {
    throw ParseError(line_no, std::string("bad ") + what + " field '" + f + "'");
  }
}

inline double parse_double_field(const std::string& line, std::size_t pos, std::size_t len,
                                 std::size_t line_no, const char* what) {
  const std::string f = field(line, pos, len);
  try {
    return std::stod(f);
  } catch (const std::exception&) {
    throw ParseError(line_no, std::string("bad ") + what + " field '" + f + "'");
  }
}

inline std::vector<std::string> read_lines(std::istream& in) {
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  return lines;
}

// old-style charge column codes
inline int molfile_charge(int code, int* radical) {
  switch (code) {
    case 1: return 3;
    case 2: return 2;
    case 3: return 1;
    case 4:
      if (radical) *radical = 1;  // doublet radical marker
      return 0;
    case 5: return -1;
    case 6: return -2;
    case 7: return -3;
    default: return 0;
  }
}

inline BondStereo molfile_bond_stereo(int code, BondOrder order) {
  if (order == BondOrder::Double) return code == 3 ? BondStereo::CisOrTrans : BondStereo::None;
  switch (code) {
    case 1: return BondStereo::Up;
    case 4: return BondStereo::Either;
    case 6: return BondStereo::Down;
    default: return BondStereo::None;
  }
}

inline int bond_stereo_code(BondStereo s, BondOrder order) {
  if (order == BondOrder::Double) return s == BondStereo::CisOrTrans ? 3 : 0;
  switch (s) {
    case BondStereo::Up: return 1;
    case BondStereo::Either: return 4;
    case BondStereo::Down: return 6;
    default: return 0;
  }
}

}  // namespace detail

// Reads V2000 SD files: molfile records separated by "$$$$" with optional
// "> <tag>" data items. Energies are taken from `energy_tag` when present.
inline std::vector<SdfRecord> parse_sdf(std::istream& in, const std::string& energy_tag = "energy") {
  const std::vector<std::string> lines = detail::read_lines(in);
  std::vector<SdfRecord> records;
  std::size_t pos = 0;  // index of the next unread line
  auto line_no = [&] { return pos; };  // 1-based number of the line just consumed

  while (true) {
    // trailing blank lines after the last record are not a new record
    std::size_t probe = pos;
    while (probe < lines.size() && detail::trim(lines[probe]).empty()) ++probe;
    if (probe == lines.size()) break;

    if (lines.size() - pos < 4) throw ParseError(lines.size(), "truncated molfile header");
    const std::string title = lines[pos];
    const std::string& counts = lines[pos + 3];
    pos += 4;
    if (counts.find("V3000") != std::string::npos)
      throw ParseError(line_no(), "V3000 records are not supported");

    const int n_atoms = detail::parse_int_field(counts, 0, 3, line_no(), "atom count");
    const int n_bonds = detail::parse_int_field(counts, 3, 3, line_no(), "bond count");
    if (n_atoms <= 0) throw ParseError(line_no(), "malformed counts line: atom count must be >= 1");
    if (n_bonds < 0) throw ParseError(line_no(), "malformed counts line: negative bond count");

    SdfRecord rec;
    rec.molecule.identifier = detail::trim(title);
    bool charges_overridden = false;

    for (int i = 0; i < n_atoms; ++i) {
      if (pos == lines.size()) throw ParseError(line_no(), "unexpected EOF in atom block");
      const std::string& line = lines[pos++];
      if (line.size() < 32) throw ParseError(line_no(), "atom line too short");
      AtomRecord atom;
      Vec3 p;
      p.x = detail::parse_double_field(line, 0, 10, line_no(), "x coordinate");
      p.y = detail::parse_double_field(line, 10, 10, line_no(), "y coordinate");
      p.z = detail::parse_double_field(line, 20, 10, line_no(), "z coordinate");
      atom.element = detail::field(line, 31, 3);
      if (atomic_number(atom.element) == 0)
        throw ParseError(line_no(), "unknown element symbol '" + atom.element + "'");
      int radical = 0;
      const int charge_code = detail::parse_int_field(line, 36, 3, line_no(), "charge");
      atom.formal_charge = detail::molfile_charge(charge_code, &radical);
      atom.radical_electrons = radical;
      const int parity = detail::parse_int_field(line, 39, 3, line_no(), "stereo parity");
      atom.chiral_tag = parity == 1   ? ChiralTag::Clockwise
                        : parity == 2 ? ChiralTag::CounterClockwise
                        : parity == 3 ? ChiralTag::Other
                                      : ChiralTag::Unspecified;
      rec.molecule.atoms.push_back(atom);
      rec.conformer.coords.push_back(p);
    }

    for (int b = 0; b < n_bonds; ++b) {
      if (pos == lines.size()) throw ParseError(line_no(), "unexpected EOF in bond block");
      const std::string& line = lines[pos++];
      Bond bond;
      bond.i = detail::parse_int_field(line, 0, 3, line_no(), "bond atom 1") - 1;
      bond.j = detail::parse_int_field(line, 3, 3, line_no(), "bond atom 2") - 1;
      if (bond.i < 0 || bond.i >= n_atoms || bond.j < 0 || bond.j >= n_atoms)
        throw ParseError(line_no(), "bond references atom outside the atom block");
      const int order = detail::parse_int_field(line, 6, 3, line_no(), "bond order");
      switch (order) {
        case 1: bond.order = BondOrder::Single; break;
        case 2: bond.order = BondOrder::Double; break;
        case 3: bond.order = BondOrder::Triple; break;
        case 4: bond.order = BondOrder::Aromatic; break;
        default: throw ParseError(line_no(), "unsupported bond order " + std::to_string(order));
      }
      const int stereo = detail::parse_int_field(line, 9, 3, line_no(), "bond stereo");
      bond.stereo = detail::molfile_bond_stereo(stereo, bond.order);
      rec.molecule.bonds.push_back(bond);
    }

    // properties block
    bool saw_end = false;
    while (pos < lines.size()) {
      const std::string& line = lines[pos++];
      if (line.rfind("M  END", 0) == 0) {
        saw_end = true;
        break;
      }
      if (line.rfind("M  CHG", 0) == 0 || line.rfind("M  RAD", 0) == 0) {
        const bool is_charge = line.rfind("M  CHG", 0) == 0;
        if (!charges_overridden) {
          // M CHG / M RAD supersede all atom-block charge columns
          for (AtomRecord& a : rec.molecule.atoms) {
            a.formal_charge = 0;
            a.radical_electrons = 0;
          }
          charges_overridden = true;
        }
        const int count = detail::parse_int_field(line, 6, 3, line_no(), "property count");
        for (int k = 0; k < count; ++k) {
          const int idx =
              detail::parse_int_field(line, 9 + 8 * k, 4, line_no(), "atom index") - 1;
          const int val = detail::parse_int_field(line, 13 + 8 * k, 4, line_no(), "property value");
          if (idx < 0 || idx >= n_atoms)
            throw ParseError(line_no(), "property atom index out of range");
          if (is_charge)
            rec.molecule.atoms[idx].formal_charge = val;
          else
            rec.molecule.atoms[idx].radical_electrons = val;
        }
      }
      // other property lines (A, V, M ISO, ...) are ignored
    }
    if (!saw_end) throw ParseError(line_no(), "missing M  END");

    // data items until $$$$ or EOF
    while (pos < lines.size()) {
      const std::string& line = lines[pos++];
      if (line.rfind("$$$$", 0) == 0) break;
      if (!line.empty() && line[0] == '>') {
        const std::size_t lt = line.find('<');
        const std::size_t gt = line.find('>', lt == std::string::npos ? 1 : lt);
        if (lt == std::string::npos || gt == std::string::npos)
          throw ParseError(line_no(), "malformed data header");
        const std::string tag = line.substr(lt + 1, gt - lt - 1);
        std::string value;
        bool closed = false;
        while (pos < lines.size()) {
          const std::string& vline = lines[pos++];
          if (vline.rfind("$$$$", 0) == 0) {
            closed = true;
            break;
          }
          if (detail::trim(vline).empty()) break;
          if (!value.empty()) value += '\n';
          value += vline;
        }
        rec.properties[tag] = value;
        if (closed) break;
      }
    }

    try {
      compute_derived_fields(rec.molecule);
    } catch (const DataError& e) {
      throw ParseError(line_no(), e.what());
    }
    if (!energy_tag.empty()) {
      const auto it = rec.properties.find(energy_tag);
      if (it != rec.properties.end()) {
        try {
          rec.conformer.energy = std::stod(it->second);
        } catch (const std::exception&) {
          throw ParseError(line_no(), "energy tag '" + energy_tag + "' is not numeric");
        }
      }
    }
    records.push_back(std::move(rec));
  }
  return records;
}

// V2000 writer; coordinates at molfile precision (4 decimals).
inline void write_sdf_record(std::ostream& out, const Molecule& mol, const Conformer& conf,
                             const std::map<std::string, std::string>& properties = {}) {
  validate_molecule(mol);
  validate_conformer(mol, conf);
  char buf[128];
  out << mol.identifier << "\n  marcel\n\n";
  std::snprintf(buf, sizeof buf, "%3d%3d  0  0  0  0  0  0  0  0999 V2000\n", mol.atom_count(),
                mol.bond_count());
  out << buf;
  for (int i = 0; i < mol.atom_count(); ++i) {
    const Vec3& p = conf.coords[i];
    std::snprintf(buf, sizeof buf, "%10.4f%10.4f%10.4f %-3s 0  0  0  0  0  0  0  0  0  0  0  0\n",
                  p.x, p.y, p.z, mol.atoms[i].element.c_str());
    out << buf;
  }
  for (const Bond& b : mol.bonds) {
    int order = 1;
    switch (b.order) {
      case BondOrder::Single: order = 1; break;
      case BondOrder::Double: order = 2; break;
      case BondOrder::Triple: order = 3; break;
      case BondOrder::Aromatic: order = 4; break;
    }
    std::snprintf(buf, sizeof buf, "%3d%3d%3d%3d  0  0  0\n", b.i + 1, b.j + 1, order,
                  detail::bond_stereo_code(b.stereo, b.order));
    out << buf;
  }
  std::vector<std::pair<int, int>> charges, radicals;
  for (int i = 0; i < mol.atom_count(); ++i) {
    if (mol.atoms[i].formal_charge != 0) charges.emplace_back(i + 1, mol.atoms[i].formal_charge);
    if (mol.atoms[i].radical_electrons != 0)
      radicals.emplace_back(i + 1, mol.atoms[i].radical_electrons);
  }
  auto write_property_line = [&](const char* key, const std::vector<std::pair<int, int>>& items) {
    for (std::size_t start = 0; start < items.size(); start += 8) {
      const std::size_t count = std::min<std::size_t>(8, items.size() - start);
      out << "M  " << key;
      std::snprintf(buf, sizeof buf, "%3zu", count);
      out << buf;
      for (std::size_t k = 0; k < count; ++k) {
        std::snprintf(buf, sizeof buf, " %3d %3d", items[start + k].first,
                      items[start + k].second);
        out << buf;
      }
      out << "\n";
    }
  };
  write_property_line("CHG", charges);
  write_property_line("RAD", radicals);
  out << "M  END\n";
  for (const auto& [tag, value] : properties) {
    out << "> <" << tag << ">\n" << value << "\n\n";
  }
  out << "$$$$\n";
}

inline void write_sdf(std::ostream& out, const std::vector<SdfRecord>& records) {
  for (const SdfRecord& r : records) write_sdf_record(out, r.molecule, r.conformer, r.properties);
}

}  // namespace marcel
