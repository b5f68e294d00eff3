#pragma once

#include <array>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "mmpg/autodiff.hpp"
#include "mmpg/graph_build.hpp"
#include "mmpg/potential.hpp"
#include "mmpg/structure.hpp"

namespace mmpg {

struct ModelConfig {
    int d_model = 64;
    int l_enc = 2;      // layers per first-stage perspective encoder
    int l_exp = 1;      // layers per expert
    int n_experts = 10; // expert-pool size M
    int top_k = 4;      // experts selected per perspective K
    int n_classes = 2;
    double lambda = 0.1;    // auxiliary-loss weight
    double lb_coeff = 0.01; // load-balance coefficient
    bool multi_label = false;
    bool expert_input_raw = false;  // feed experts raw node features instead of
                                    // first-stage embeddings
    bool lb_include_load = false;   // add a CV^2 term over soft per-expert load
                                    // (summed renormalized selected weights)

    void validate() const;  // throws ConfigInvalid
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

struct GcnWeights {
    ad::Tensor wn;  // node transform, d x d
    ad::Tensor we;  // edge transform, kEdgeFeatureDim x d
};

/// Per-perspective top-K routing outcome.
struct RoutingRecord {
    Eigen::RowVectorXd full_weights;    // M, softmax over all experts
    std::vector<int> selected;          // K indices, descending weight
    Eigen::RowVectorXd renorm_weights;  // K, renormalized to sum 1
};

/// All learnable state: embedding tables, the chemical-feature FNN, three
/// perspective encoders, the shared expert pool, the gate, and the heads.
struct MoEModel {
    ModelConfig config;

    ad::Tensor type_embedding;            // (20 + 1 unknown) x d
    ad::Tensor sidechain_w, sidechain_b;  // 8 x d, 1 x d
    ad::Tensor fnn_w1, fnn_b1;            // 2d x d, 1 x d
    ad::Tensor fnn_w2, fnn_b2;            // d x d, 1 x d
    std::array<std::vector<GcnWeights>, 3> encoders;  // [perspective][layer]
    std::vector<std::vector<GcnWeights>> experts;     // [expert][layer]
    ad::Tensor gate_w, gate_b;            // d x M, 1 x M
    std::array<ad::Tensor, 3> aux_head_w; // d x C each
    std::array<ad::Tensor, 3> aux_head_b; // 1 x C each
    ad::Tensor aux_cls_w, aux_cls_b;      // 3C x C, 1 x C
    ad::Tensor main_w, main_b;            // 3d x C, 1 x C

    static MoEModel init(const ModelConfig& config, std::uint64_t seed);

    std::vector<ad::Tensor*> parameters();
    std::vector<const ad::Tensor*> parameters() const;
    void zero_grad();
};

/// Classification target; arity must match the model config.
struct Target {
    bool multi_label = false;
    int cls = -1;
    std::vector<int> hot;  // n_classes 0/1 entries when multi_label

    static Target single(int c) { return {false, c, {}}; }
    static Target multi(std::vector<int> h) { return {true, -1, std::move(h)}; }
};

/// Per-structure precomputation: frames, static node features, and the two
/// geometry-determined graphs. The chemical graph depends on live embeddings
/// and is rebuilt inside every forward pass.
struct StructureContext {
    ProteinStructure structure;
    std::vector<LocalFrame> frames;
    StaticNodeFeatures feats;
    PerspectiveGraph physical;
    PerspectiveGraph geometric;
    double tau = -1.0;
    double radius = 4.0;
};

StructureContext make_context(const ProteinStructure& s, const PotentialTable& table, double tau,
                              double radius);

/// 1 = replace this residue's identity with the unknown embedding and zero its
/// chi encoding; geometry is untouched.
using ResidueMask = std::vector<char>;

// ---- forward pieces ---------------------------------------------------------

/// Node featurization: h = FNN(type_embedding[type] (+) sidechain_proj(chi)).
ad::Var node_init(ad::Tape& tape, MoEModel& model, const StaticNodeFeatures& feats,
                  const ResidueMask* mask = nullptr);

/// One edge-aware graph convolution:
///   h_i' = relu( sum_{j in N(i)} (h_j Wn) .* (e_ij We) / sqrt(|N(i)||N(j)|) ).
ad::Var gcn_layer(ad::Tape& tape, ad::Var h, const PerspectiveGraph& graph, ad::Tensor& wn,
                  ad::Tensor& we);

struct PerspectiveOutput {
    ad::Var node_embeddings;  // n x d
    ad::Var pooled;           // 1 x d mean over nodes
};

PerspectiveOutput encode_perspective(ad::Tape& tape, ad::Var h0, const PerspectiveGraph& graph,
                                     std::vector<GcnWeights>& layers);

/// Softmax gate weights over the expert pool from a pooled embedding.
ad::Var gate_weights(ad::Tape& tape, MoEModel& model, ad::Var pooled);

struct MoEOutput {
    ad::Var fused_nodes;   // n x d weighted sum of the selected experts
    ad::Var full_weights;  // 1 x M pre-top-K gate weights
    ad::Var soft_load;     // 1 x M renormalized weights scattered to expert slots
    RoutingRecord record;
};

/// Top-K routing and expert mixture over one perspective graph.
MoEOutput moe_forward(ad::Tape& tape, MoEModel& model, const PerspectiveGraph& graph,
                      ad::Var expert_input, ad::Var pooled);

/// NLL of row-softmax for single-label targets; mean BCE of sigmoid outputs
/// for multi-label targets. Throws LabelArityMismatch.
ad::Var classification_loss(ad::Tape& tape, ad::Var logits, const Target& target, int n_classes);

/// Squared coefficient of variation of per-expert importance (the summed
/// pre-top-K gate weights across the given records). Uniform importance
/// gives 0. The lb coefficient is applied by the trainer, not here.
ad::Var load_balance_loss(ad::Tape& tape, const std::vector<ad::Var>& gate_full);

struct ForwardOutput {
    ad::Var task_loss;  // loss_cls + lambda * loss_aux
    ad::Var loss_cls;
    ad::Var loss_aux;
    std::array<ad::Var, 3> gate_full;       // per perspective, 1 x M
    std::array<ad::Var, 3> soft_load;       // per perspective, 1 x M
    Eigen::RowVectorXd g_fused;             // 3d fused representation (values)
    Eigen::RowVectorXd logits;              // main-head logits (values)
    std::array<RoutingRecord, 3> routing;   // Physical, Chemical, Geometric
    PerspectiveGraph chemical;              // graph built from this pass's embeddings
};

/// Full pipeline for one structure: node features, three perspective graphs,
/// per-perspective encoding, gated expert mixtures, fusion, heads, losses.
ForwardOutput model_forward(ad::Tape& tape, MoEModel& model, const StructureContext& ctx,
                            const Target& target, const ResidueMask* mask = nullptr,
                            int chem_k = 20);

// ---- checkpoints -------------------------------------------------------------

void save_model(const std::string& path, const MoEModel& model,
                const nlohmann::json& extra_meta);
MoEModel load_model(const std::string& path);

}  // namespace mmpg
