#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "mmpg/model.hpp"
#include "mmpg/synthetic.hpp"

namespace mmpg {

struct TrainConfig {
    ModelConfig model;
    double tau = -1.0;   // physical-graph energy threshold
    int chem_k = 20;     // chemical-graph neighbor budget
    double radius = 4.0; // geometric-graph radius, A
    double lr = 1e-2;
    double momentum = 0.9;
    double weight_decay = 5e-4;
    int epochs = 50;
    int batch_size = 8;
    std::uint64_t seed = 1;
    std::uint64_t split_seed = 1;

    void validate() const;
};

struct EpochStats {
    int epoch = 0;
    double lr = 0.0;
    double loss_cls = 0.0;
    double loss_aux = 0.0;
    double loss_lb = 0.0;  // reported separately from the task loss
    double train_metric = 0.0;
    double val_metric = 0.0;
};

/// Canonical JSON (report_to_json) excludes wall_seconds so reruns with the
/// same seeds are byte-identical; timing belongs in the run log.
struct TrainReport {
    std::vector<EpochStats> epochs;
    std::string metric_name;  // "top1" or "fmax"
    double final_val_metric = 0.0;
    double wall_seconds = 0.0;
};

nlohmann::json report_to_json(const TrainReport& r);

std::vector<StructureContext> build_contexts(const Dataset& ds, const PotentialTable& table,
                                             double tau, double radius);

struct Split {
    std::vector<int> train, val;
};

/// Deterministic stratified 80/20 split (per class for single-label data).
Split stratified_split(const Dataset& ds, double val_fraction, std::uint64_t split_seed);

/// Top-1 accuracy for single-label data, protein-centric F_max for
/// multi-label data, over the given indices. Masks, when provided, are
/// indexed by dataset position.
double evaluate_metric(MoEModel& model, const std::vector<StructureContext>& contexts,
                       const Dataset& ds, const std::vector<int>& indices, int chem_k,
                       const std::vector<ResidueMask>* masks = nullptr);

/// Maximum protein-centric F1 over prediction thresholds.
double f_max(const Eigen::MatrixXd& probs, const std::vector<std::vector<int>>& hot);

/// SGD training of the joint objective
///   mean_batch(L_cls + lambda * L_aux) + lb_coeff * CV^2(importance),
/// with stratified 80/20 validation and a step-decay schedule. Deterministic
/// in (seed, split_seed).
TrainReport train(MoEModel& model, const std::vector<StructureContext>& contexts,
                  const Dataset& ds, const TrainConfig& cfg);

}  // namespace mmpg
