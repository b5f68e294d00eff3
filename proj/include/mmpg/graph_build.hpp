#pragma once

#include <Eigen/Dense>
#include <string>
#include <utility>
#include <vector>

#include "mmpg/geometry.hpp"
#include "mmpg/potential.hpp"
#include "mmpg/structure.hpp"

namespace mmpg {

enum class Perspective { Physical = 0, Chemical = 1, Geometric = 2 };

const char* perspective_name(Perspective p);

// Edge feature layout: sequence-separation one-hot | unit relative position in
// the source residue's local frame | Gaussian RBF of the CA-CA distance.
constexpr int kSeqSepDim = 12;  // -5..-1, +1..+5, -far, +far
constexpr int kRelPosDim = 3;
constexpr int kRbfDim = 16;  // centers evenly spaced on [0, 16] A, width = spacing
constexpr int kEdgeFeatureDim = kSeqSepDim + kRelPosDim + kRbfDim;

/// One perspective's residue graph: directed edge list (no self-loops, no
/// duplicates, sorted lexicographically) plus per-edge features.
struct PerspectiveGraph {
    Perspective perspective = Perspective::Geometric;
    int n = 0;
    std::vector<std::pair<int, int>> edges;
    Eigen::MatrixXd edge_features;  // |edges| x kEdgeFeatureDim
    std::vector<std::vector<int>> adjacency;
    std::vector<int> degree;

    /// Sort edges, fill adjacency/degree. Builders call this.
    void finalize();

    bool has_edge(int i, int j) const;
};

/// Rotation-invariant feature of the directed pair i -> j.
Eigen::VectorXd edge_feature(const ProteinStructure& s, const std::vector<LocalFrame>& frames,
                             int i, int j);

/// Pairs within the potential's r range whose pair energy is <= tau (both
/// directions added). Energy is evaluated once per unordered pair with the
/// lower index in the descriptor's "i" role; sub-r_min pairs form no edge.
PerspectiveGraph build_physical(const ProteinStructure& s, const std::vector<LocalFrame>& frames,
                                const PotentialTable& table, double tau);

/// Symmetric radius graph over CA-CA distances (d <= radius).
PerspectiveGraph build_geometric(const ProteinStructure& s, const std::vector<LocalFrame>& frames,
                                 double radius);

/// Hybrid thresholded top-k over cosine similarity of node embeddings: per
/// node keep the k most similar peers (ties toward the lower index), drop
/// non-positive similarities, then symmetrize by union. Throws ZeroEmbedding
/// on an all-zero embedding row.
PerspectiveGraph build_chemical(const Eigen::MatrixXd& embeddings, int k,
                                const ProteinStructure& s, const std::vector<LocalFrame>& frames);

/// Deterministic node-feature inputs: type indices and chi encodings.
struct StaticNodeFeatures {
    std::vector<int> type_index;              // n, in [0, 19]
    Eigen::MatrixXd chi;                      // n x 8 sine-cosine values
    std::vector<std::array<bool, 4>> chi_mask;
};

StaticNodeFeatures encode_static_node_features(const ProteinStructure& s);

/// Graph export consumed by the CLI and test oracles:
/// { perspective, n, edges, edge_features, params }.
std::string graph_to_json(const PerspectiveGraph& g, const std::string& param_key,
                          double param_value);

}  // namespace mmpg
