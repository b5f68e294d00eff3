#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "mmpg/model.hpp"
#include "mmpg/potential.hpp"
#include "mmpg/structure.hpp"

namespace mmpg {

/// Per-class generation recipe: a helix geometry and a residue-type
/// composition bias. Classes must differ in at least one field so the planted
/// signal exists in every perspective.
struct ClassMotif {
    double helix_radius = 2.28;  // A
    double turn_deg = 100.0;     // rotation per residue
    double rise = 1.5;           // A per residue
    Eigen::VectorXd type_probs;  // 20 sampling probabilities

    bool same_as(const ClassMotif& o) const;
};

struct SyntheticSpec {
    int n_classes = 4;
    int structures_per_class = 40;
    int len_min = 30;
    int len_max = 50;
    std::vector<ClassMotif> motifs;  // default_motifs(n_classes) when empty
    std::uint64_t seed = 7;
    bool multi_label = false;  // labels become motif-presence bits

    void validate() const;  // throws ConfigInvalid (duplicate motifs, bad sizes)
};

/// Distinct motifs: turn/rise step per class, disjoint favored type blocks
/// (class c concentrates 80% probability on types [5c mod 20, 5c mod 20 + 5)).
std::vector<ClassMotif> default_motifs(int n_classes);

struct Dataset {
    std::vector<ProteinStructure> structures;  // label set for single-label data
    std::vector<std::vector<int>> multi_hot;   // per structure when multi_label
    bool multi_label = false;
    int n_classes = 0;

    int size() const { return static_cast<int>(structures.size()); }
    Target target(int idx) const;
};

/// Deterministic in spec.seed. Single-label structures realize one motif;
/// multi-label structures realize one or two (half/half along the chain) and
/// the label is the motif-presence bit vector.
Dataset make_synthetic_dataset(const SyntheticSpec& spec);

/// Block-structured contact biases matched to default_motifs' type blocks:
/// pairs within the same 5-type block attract (-2.0), others are weakly
/// unfavorable (+0.5), so the physical graph density tracks composition.
ContactPreference default_contact_preference();

/// Compact-scheme synthetic table with the default contact biases.
PotentialTable default_synthetic_table(std::uint64_t seed);

void save_dataset(const std::string& path, const Dataset& ds);
Dataset load_dataset(const std::string& path);

}  // namespace mmpg
