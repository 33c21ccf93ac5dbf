#pragma once

#include <array>
#include <string>
#include <string_view>

namespace marcel {

namespace detail {
// IUPAC symbols indexed by atomic number - 1.
inline constexpr std::array<std::string_view, 118> kElementSymbols = {
    "H",  "He", "Li", "Be", "B",  "C",  "N",  "O",  "F",  "Ne", "Na", "Mg", "Al", "Si", "P",
    "S",  "Cl", "Ar", "K",  "Ca", "Sc", "Ti", "V",  "Cr", "Mn", "Fe", "Co", "Ni", "Cu", "Zn",
    "Ga", "Ge", "As", "Se", "Br", "Kr", "Rb", "Sr", "Y",  "Zr", "Nb", "Mo", "Tc", "Ru", "Rh",
    "Pd", "Ag", "Cd", "In", "Sn", "Sb", "Te", "I",  "Xe", "Cs", "Ba", "La", "Ce", "Pr", "Nd",
    "Pm", "Sm", "Eu", "Gd", "Tb", "Dy", "Ho", "Er", "Tm", "Yb", "Lu", "Hf", "Ta", "W",  "Re",
    "Os", "Ir", "Pt", "Au", "Hg", "Tl", "Pb", "Bi", "Po", "At", "Rn", "Fr", "Ra", "Ac", "Th",
    "Pa", "U",  "Np", "Pu", "Am", "Cm", "Bk", "Cf", "Es", "Fm", "Md", "No", "Lr", "Rf", "Db",
    "Sg", "Bh", "Hs", "Mt", "Ds", "Rg", "Cn", "Nh", "Fl", "Mc", "Lv", "Ts", "Og"};
}  // namespace detail

// Returns the atomic number for an element symbol, or 0 if unknown.
inline int atomic_number(std::string_view symbol) {
  for (std::size_t i = 0; i < detail::kElementSymbols.size(); ++i) {
    if (detail::kElementSymbols[i] == symbol) return static_cast<int>(i + 1);
  }
  return 0;
}

// Symbol for an atomic number in [1, 118]; empty string otherwise.
inline std::string element_symbol(int z) {
  if (z < 1 || z > 118) return "";
  return std::string(detail::kElementSymbols[static_cast<std::size_t>(z - 1)]);
}

inline bool is_hydrogen(std::string_view symbol) { return symbol == "H"; }

}  // namespace marcel
