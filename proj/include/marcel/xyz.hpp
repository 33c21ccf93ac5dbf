#pragma once

#include <istream>
#include <optional>
#include <ostream>
#include <regex>
#include <sstream>
#include <string>
#include <vector>

#include "marcel/chem.hpp"
#include "marcel/elements.hpp"
#include "marcel/errors.hpp"
#include "marcel/sdf.hpp"  // detail::trim / read_lines

namespace marcel {

struct XyzFrame {
  std::vector<std::string> elements;
  std::vector<Vec3> coords;
  std::string comment;
};

// Default pattern for pulling an energy out of an XYZ comment line,
// e.g. "E = -154.9 kcal/mol". The first capture group is the value.
inline const char* kDefaultXyzEnergyPattern = R"(E\s*=\s*([-+]?[0-9]*\.?[0-9]+(?:[eE][-+]?[0-9]+)?))";

inline std::optional<double> parse_energy_from_comment(const std::string& comment,
                                                       const std::string& pattern) {
  const std::regex re(pattern);
  std::smatch m;
  if (!std::regex_search(comment, m, re) || m.size() < 2) return std::nullopt;
  try {
    return std::stod(m[1].str());
  } catch (const std::exception&) {
    return std::nullopt;
  }
}

// Multi-frame XYZ: each frame is an atom count line, a free-form comment
// line, then one "symbol x y z" row per atom. Trailing blank lines are
// ignored; a row count mismatch inside a frame is an error.
inline std::vector<XyzFrame> parse_xyz(std::istream& in) {
  const std::vector<std::string> lines = detail::read_lines(in);
  std::vector<XyzFrame> frames;
  std::size_t pos = 0;

  while (true) {
    std::size_t probe = pos;
    while (probe < lines.size() && detail::trim(lines[probe]).empty()) ++probe;
    if (probe == lines.size()) break;
    if (probe != pos)
      throw ParseError(pos + 1, "blank line in the middle of an XYZ file");

    int n_atoms = 0;
    try {
      std::size_t consumed = 0;
      n_atoms = std::stoi(detail::trim(lines[pos]), &consumed);
      if (consumed != detail::trim(lines[pos]).size()) throw std::invalid_argument("");
    } catch (const std::exception&) {
      throw ParseError(pos + 1, "expected an atom count, got '" + detail::trim(lines[pos]) + "'");
    }
    if (n_atoms <= 0) throw ParseError(pos + 1, "atom count must be >= 1");
    if (pos + 1 >= lines.size()) throw ParseError(lines.size(), "missing comment line");

    XyzFrame frame;
    frame.comment = lines[pos + 1];
    pos += 2;
    for (int i = 0; i < n_atoms; ++i, ++pos) {
      if (pos >= lines.size() || detail::trim(lines[pos]).empty())
        throw ParseError(pos + 1, "frame declares " + std::to_string(n_atoms) +
                                      " atoms but has only " + std::to_string(i) + " rows");
      std::istringstream row(lines[pos]);
      std::string symbol;
      double x, y, z;
      if (!(row >> symbol >> x >> y >> z))
        throw ParseError(pos + 1, "malformed coordinate row '" + lines[pos] + "'");
      if (atomic_number(symbol) == 0)
        throw ParseError(pos + 1, "unknown element symbol '" + symbol + "'");
      frame.elements.push_back(symbol);
      frame.coords.push_back({x, y, z});
    }
    frames.push_back(std::move(frame));
  }
  return frames;
}

inline void write_xyz_frame(std::ostream& out, const XyzFrame& frame) {
  if (frame.elements.size() != frame.coords.size())
    throw InvalidArgument("element and coordinate counts differ");
  out << frame.elements.size() << '\n' << frame.comment << '\n';
  char buf[96];
  for (std::size_t i = 0; i < frame.elements.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%-3s %14.8f %14.8f %14.8f\n", frame.elements[i].c_str(),
                  frame.coords[i].x, frame.coords[i].y, frame.coords[i].z);
    out << buf;
  }
}

}  // namespace marcel
