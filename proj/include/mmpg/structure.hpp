#pragma once

#include <Eigen/Dense>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace mmpg {

constexpr int kNumAminoAcids = 20;

/// Index of the reserved "unknown residue" embedding row used when residue
/// identities are masked out. The embedding table has kNumAminoAcids + 1 rows.
constexpr int kUnknownType = kNumAminoAcids;

/// Canonical three-letter code for a type index in [0, 20) (alphabetical order).
const char* amino_acid_name(int type_index);

/// Type index for a three-letter code, or -1 if not canonical.
/// A few common substitutions (MSE->MET, SEC->CYS, PYL->LYS) resolve to their
/// canonical targets.
int amino_acid_index(const std::string& three_letter);

struct Atom {
    std::string name;         // e.g. "N", "CA", "C", "CB"
    Eigen::Vector3d position; // Angstrom

    bool finite() const { return position.allFinite(); }
};

struct Residue {
    int amino_acid_type = -1; // [0, 19]
    int seq_index = -1;       // 0-based position in chain
    std::map<std::string, Atom> atoms;

    bool has_atom(const std::string& name) const { return atoms.count(name) > 0; }
    const Eigen::Vector3d& atom_pos(const std::string& name) const { return atoms.at(name).position; }
    bool has_backbone() const { return has_atom("N") && has_atom("CA") && has_atom("C"); }
};

struct ProteinStructure {
    std::vector<Residue> residues;
    std::string chain_id;
    std::optional<int> label; // class index, present for training data

    int size() const { return static_cast<int>(residues.size()); }

    /// C-alpha position of residue i.
    const Eigen::Vector3d& ca(int i) const { return residues[i].atom_pos("CA"); }
};

}  // namespace mmpg
