#include "mmpg/graph_build.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include <nlohmann/json.hpp>

#include "mmpg/errors.hpp"

namespace mmpg {

const char* perspective_name(Perspective p) {
    switch (p) {
        case Perspective::Physical: return "physical";
        case Perspective::Chemical: return "chemical";
        case Perspective::Geometric: return "geometric";
    }
    return "?";
}

void PerspectiveGraph::finalize() {
    std::sort(edges.begin(), edges.end());
    adjacency.assign(static_cast<size_t>(n), {});
    for (const auto& [i, j] : edges) adjacency[static_cast<size_t>(i)].push_back(j);
    degree.resize(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) degree[static_cast<size_t>(i)] = static_cast<int>(adjacency[static_cast<size_t>(i)].size());
}

bool PerspectiveGraph::has_edge(int i, int j) const {
    return std::binary_search(edges.begin(), edges.end(), std::make_pair(i, j));
}

Eigen::VectorXd edge_feature(const ProteinStructure& s, const std::vector<LocalFrame>& frames,
                             int i, int j) {
    if (i == j) throw DegenerateGeometry("edge_feature: self pair");
    Eigen::VectorXd f = Eigen::VectorXd::Zero(kEdgeFeatureDim);

    // Sequence separation, clipped one-hot: slots 0..4 = -5..-1, 5..9 = +1..+5,
    // 10 = below -5, 11 = above +5.
    const int sep = s.residues[static_cast<size_t>(j)].seq_index - s.residues[static_cast<size_t>(i)].seq_index;
    int slot;
    if (sep >= -5 && sep <= -1) slot = sep + 5;
    else if (sep >= 1 && sep <= 5) slot = 4 + sep;
    else slot = sep < 0 ? 10 : 11;
    f[slot] = 1.0;

    const Eigen::Vector3d rel = s.ca(j) - s.ca(i);
    const double d = rel.norm();
    if (d < 1e-12) throw DegenerateGeometry("edge_feature: coincident CA positions");
    const Eigen::Vector3d local = frames[static_cast<size_t>(i)].to_local(rel / d);
    f.segment<3>(kSeqSepDim) = local;

    const double spacing = 16.0 / (kRbfDim - 1);
    for (int m = 0; m < kRbfDim; ++m) {
        const double c = spacing * m;
        // Exponent floored so activations stay strictly positive.
        const double e = std::max(-((d - c) * (d - c)) / (2.0 * spacing * spacing), -700.0);
        f[kSeqSepDim + kRelPosDim + m] = std::exp(e);
    }
    return f;
}

namespace {

void fill_features(PerspectiveGraph& g, const ProteinStructure& s,
                   const std::vector<LocalFrame>& frames) {
    g.edge_features.resize(static_cast<Eigen::Index>(g.edges.size()), kEdgeFeatureDim);
    for (size_t e = 0; e < g.edges.size(); ++e) {
        g.edge_features.row(static_cast<Eigen::Index>(e)) =
            edge_feature(s, frames, g.edges[e].first, g.edges[e].second).transpose();
    }
}

}  // namespace

PerspectiveGraph build_physical(const ProteinStructure& s, const std::vector<LocalFrame>& frames,
                                const PotentialTable& table, double tau) {
    PerspectiveGraph g;
    g.perspective = Perspective::Physical;
    g.n = s.size();
    for (int i = 0; i < g.n; ++i) {
        for (int j = i + 1; j < g.n; ++j) {
            PairDescriptor d;
            try {
                d = pair_descriptor(frames[static_cast<size_t>(i)], frames[static_cast<size_t>(j)],
                                    OmegaDegeneracyPolicy::ZeroOmega);
            } catch (const DegenerateGeometry&) {
                continue;  // coincident CA pair cannot carry an edge
            }
            double e;
            try {
                e = table.energy(s.residues[static_cast<size_t>(i)].amino_acid_type,
                                 s.residues[static_cast<size_t>(j)].amino_acid_type, d);
            } catch (const OutOfRange&) {
                continue;  // steric-clash distance: no edge
            }
            if (std::isinf(e) || !(e <= tau)) continue;
            g.edges.emplace_back(i, j);
            g.edges.emplace_back(j, i);
        }
    }
    g.finalize();
    fill_features(g, s, frames);
    return g;
}

PerspectiveGraph build_geometric(const ProteinStructure& s, const std::vector<LocalFrame>& frames,
                                 double radius) {
    PerspectiveGraph g;
    g.perspective = Perspective::Geometric;
    g.n = s.size();
    for (int i = 0; i < g.n; ++i) {
        for (int j = i + 1; j < g.n; ++j) {
            if ((s.ca(j) - s.ca(i)).norm() <= radius) {
                g.edges.emplace_back(i, j);
                g.edges.emplace_back(j, i);
            }
        }
    }
    g.finalize();
    fill_features(g, s, frames);
    return g;
}

PerspectiveGraph build_chemical(const Eigen::MatrixXd& embeddings, int k,
                                const ProteinStructure& s, const std::vector<LocalFrame>& frames) {
    const int n = static_cast<int>(embeddings.rows());
    Eigen::MatrixXd unit(n, embeddings.cols());
    for (int i = 0; i < n; ++i) {
        const double norm = embeddings.row(i).norm();
        if (norm < 1e-12) throw ZeroEmbedding("build_chemical: zero embedding at node " + std::to_string(i));
        unit.row(i) = embeddings.row(i) / norm;
    }
    const Eigen::MatrixXd sim = unit * unit.transpose();

    std::set<std::pair<int, int>> selected;
    for (int i = 0; i < n; ++i) {
        std::vector<int> order;
        order.reserve(static_cast<size_t>(n) - 1);
        for (int j = 0; j < n; ++j) {
            if (j != i) order.push_back(j);
        }
        std::sort(order.begin(), order.end(), [&sim, i](int a, int b) {
            if (sim(i, a) != sim(i, b)) return sim(i, a) > sim(i, b);
            return a < b;  // ties at the k-th rank break by smaller index
        });
        const int take = std::min(k, n - 1);
        for (int t = 0; t < take; ++t) {
            if (sim(i, order[static_cast<size_t>(t)]) > 0.0) {
                selected.emplace(i, order[static_cast<size_t>(t)]);
            }
        }
    }

    PerspectiveGraph g;
    g.perspective = Perspective::Chemical;
    g.n = n;
    for (const auto& [i, j] : selected) {
        g.edges.emplace_back(i, j);
        if (!selected.count({j, i})) g.edges.emplace_back(j, i);  // symmetrize by union
    }
    g.finalize();
    fill_features(g, s, frames);
    return g;
}

StaticNodeFeatures encode_static_node_features(const ProteinStructure& s) {
    StaticNodeFeatures f;
    f.type_index.reserve(static_cast<size_t>(s.size()));
    f.chi.resize(s.size(), 8);
    f.chi_mask.reserve(static_cast<size_t>(s.size()));
    for (int i = 0; i < s.size(); ++i) {
        const Residue& r = s.residues[static_cast<size_t>(i)];
        f.type_index.push_back(r.amino_acid_type);
        const SideChainEncoding enc = chi_angles(r);
        f.chi.row(i) = enc.values.transpose();
        f.chi_mask.push_back(enc.mask);
    }
    return f;
}

std::string graph_to_json(const PerspectiveGraph& g, const std::string& param_key,
                          double param_value) {
    nlohmann::json j;
    j["perspective"] = perspective_name(g.perspective);
    j["n"] = g.n;
    j["edges"] = nlohmann::json::array();
    for (const auto& [a, b] : g.edges) j["edges"].push_back({a, b});
    j["edge_features"] = nlohmann::json::array();
    for (Eigen::Index e = 0; e < g.edge_features.rows(); ++e) {
        nlohmann::json row = nlohmann::json::array();
        for (Eigen::Index c = 0; c < g.edge_features.cols(); ++c) row.push_back(g.edge_features(e, c));
        j["edge_features"].push_back(std::move(row));
    }
    j["params"] = {{param_key, param_value}};
    return j.dump();
}

}  // namespace mmpg
