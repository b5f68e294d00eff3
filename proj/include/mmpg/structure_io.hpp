#pragma once

#include <array>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "mmpg/structure.hpp"

namespace mmpg {

/// Parse fixed-column ATOM-record text (record name 1-6, atom name 13-16,
/// residue name 18-20, chain 22, residue number 23-26, x/y/z 31-54) into a
/// single-chain structure.
///
/// Only the first model is read (ENDMDL terminates); alternate locations other
/// than blank or 'A' are skipped; hydrogens are dropped; MSE/SEC/PYL map to
/// their canonical parents. Without a chain filter the chain of the first
/// ATOM record is taken and all others ignored.
///
/// Throws MalformedRecord, MissingBackbone, or EmptyChain.
ProteinStructure parse_structure(std::istream& raw, std::optional<char> chain_filter = std::nullopt);
ProteinStructure parse_structure_text(const std::string& text, std::optional<char> chain_filter = std::nullopt);

struct ValidationWarning {
    enum class Kind { ChiUnavailable, ChainBreak, DuplicateSeqIndex };
    Kind kind;
    int seq_index = -1;              // residue concerned (first of the pair for breaks)
    std::array<bool, 4> chi_missing = {false, false, false, false};
    std::string message;
};

/// Non-mutating structure checks: per-residue chi availability (undefined for
/// the type, or side-chain atoms absent), chain breaks (sequence-neighbor
/// CA-CA distance > 4.5 A), duplicate seq_index values.
std::vector<ValidationWarning> validate_structure(const ProteinStructure& s);

/// Canonical JSON export; coordinates are printed with exactly 3 decimal
/// places, so a parsed structure round-trips to field-by-field equality.
std::string to_canonical_json(const ProteinStructure& s);
ProteinStructure from_canonical_json(const std::string& text);

bool structures_equal(const ProteinStructure& a, const ProteinStructure& b);

}  // namespace mmpg
