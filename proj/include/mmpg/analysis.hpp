#pragma once

#include <Eigen/Dense>
#include <optional>
#include <string>
#include <vector>

#include "mmpg/gradcheck.hpp"
#include "mmpg/model.hpp"
#include "mmpg/synthetic.hpp"
#include "mmpg/train.hpp"

namespace mmpg {

/// Fraction of structures for which each expert lands in the top-K, per
/// perspective: a 3 x M matrix whose rows each sum to exactly K.
Eigen::MatrixXd expert_frequency(MoEModel& model, const std::vector<StructureContext>& contexts,
                                 const Dataset& ds, int chem_k);

/// Role taxonomy by the number of perspectives where an expert's selection
/// frequency reaches 0.5: three -> generalist, two -> collaborative,
/// one -> specialized, none -> unused.
struct ExpertRole {
    int expert = 0;
    std::array<double, 3> freq = {0, 0, 0};
    int major_perspectives = 0;
    std::string role;
};

std::vector<ExpertRole> classify_experts(const Eigen::MatrixXd& freq);

/// Seeded residue masks covering floor(u% * n) residues per structure.
/// For a fixed seed the masked sets are nested across increasing u (each
/// structure owns one seeded permutation; u takes its prefix), so a
/// masking sweep reuses the same randomness at every level.
std::vector<ResidueMask> make_masks(const Dataset& ds, double u_percent, std::uint64_t seed);

struct MaskSweepRow {
    double u = 0.0;
    std::uint64_t seed = 0;
    double metric = 0.0;
};

std::vector<MaskSweepRow> masking_sweep(MoEModel& model,
                                        const std::vector<StructureContext>& contexts,
                                        const Dataset& ds, const std::vector<double>& u_values,
                                        const std::vector<std::uint64_t>& seeds, int chem_k);

struct SweepRow {
    double value = 0.0;
    double metric = 0.0;
    std::uint64_t seed = 0;
};

/// Retrain per value of one hyperparameter in {tau, k, r, M, K, lambda} with
/// the base config's seeds; returns the final validation metric per value.
std::vector<SweepRow> hyperparam_sweep(const std::string& param, const std::vector<double>& values,
                                       const TrainConfig& base, const Dataset& ds,
                                       const PotentialTable& table);

struct EmbeddingExport {
    Eigen::MatrixXd g_fused;  // one row per structure
    std::vector<int> labels;  // -1 for multi-label rows
    std::optional<double> intra_class_mean;  // absent without a same-class pair
    std::optional<double> inter_class_mean;  // absent without a cross-class pair
};

EmbeddingExport export_embeddings(MoEModel& model, const std::vector<StructureContext>& contexts,
                                  const Dataset& ds, int chem_k);

struct RoutingRow {
    std::string perspective;
    int expert = 0;
    double weight = 0.0;  // renormalized top-K weight
    int structure_id = 0;
};

std::vector<RoutingRow> export_routing(MoEModel& model,
                                       const std::vector<StructureContext>& contexts,
                                       const Dataset& ds, int chem_k);

/// Finite-difference verification used by both the CLI and the acceptance
/// suite: elementary-op probes at tight tolerance, plus the full objective on
/// a fixed two-structure instance (n = 20, d = 16, M = 4, K = 2) sampling at
/// least `min_model_coords` parameter coordinates.
struct GradCheckSummary {
    ad::GradCheckResult ops;    // tolerance 1e-6
    ad::GradCheckResult model;  // tolerance 1e-4
};

GradCheckSummary run_reference_gradchecks(int min_model_coords = 200);

// CSV writers for the CLI surfaces; fixed formatting so reruns are
// byte-identical.
std::string frequency_csv(const Eigen::MatrixXd& freq);
std::string classification_csv(const std::vector<ExpertRole>& roles);
std::string mask_sweep_csv(const std::vector<MaskSweepRow>& rows);
std::string sweep_csv(const std::string& param, const std::vector<SweepRow>& rows);
std::string embeddings_csv(const EmbeddingExport& e);
std::string routing_csv(const std::vector<RoutingRow>& rows);

}  // namespace mmpg
