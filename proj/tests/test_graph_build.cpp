#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <random>
#include <set>

#include <nlohmann/json.hpp>

#include "mmpg/errors.hpp"
#include "mmpg/graph_build.hpp"
#include "test_util.hpp"

using namespace mmpg;
using Eigen::Vector3d;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

using testutil::random_chain;

std::set<std::pair<int, int>> edge_set(const PerspectiveGraph& g) {
    return {g.edges.begin(), g.edges.end()};
}

BinningScheme test_scheme() {
    BinningScheme s;
    s.n_r = 13;
    s.n_theta = 2;
    s.n_phi = 4;
    s.n_omega = 4;
    return s;
}

}  // namespace

TEST_CASE("build_physical: tau = -inf gives an empty edge set") {
    std::mt19937_64 rng(3);
    const ProteinStructure s = random_chain(rng, 12);
    const auto frames = local_frames(s);
    const PotentialTable t = synth_table(1, test_scheme());
    const PerspectiveGraph g = build_physical(s, frames, t, -kInf);
    CHECK(g.edges.empty());
    CHECK(g.n == 12);
}

TEST_CASE("build_physical: tau = +inf keeps exactly the in-range pairs") {
    std::mt19937_64 rng(5);
    const ProteinStructure s = random_chain(rng, 10);
    const auto frames = local_frames(s);
    const PotentialTable t = synth_table(2, test_scheme());
    const PerspectiveGraph g = build_physical(s, frames, t, kInf);

    std::set<std::pair<int, int>> oracle;
    for (int i = 0; i < s.size(); ++i) {
        for (int j = 0; j < s.size(); ++j) {
            if (i == j) continue;
            const double d = (s.ca(j) - s.ca(i)).norm();
            if (d >= t.scheme.r_min && d < t.scheme.r_max) oracle.emplace(i, j);
        }
    }
    CHECK(edge_set(g) == oracle);
}

TEST_CASE("build_physical: a biased pair connects where an unbiased one does not") {
    const int leu = amino_acid_index("LEU");
    const int gly = amino_acid_index("GLY");
    const PotentialTable t = synth_table(9, test_scheme(), {{{leu, leu}, -3.0}});

    // Two LEU and two GLY pairs in identical relative geometry, 5 A apart
    // (inside the contact shell), far from each other.
    ProteinStructure s;
    s.residues.push_back(testutil::make_backbone_residue(leu, 0, {0, 0, 0}));
    s.residues.push_back(testutil::make_backbone_residue(leu, 1, {5.0, 0, 0}));
    s.residues.push_back(testutil::make_backbone_residue(gly, 2, {100, 0, 0}));
    s.residues.push_back(testutil::make_backbone_residue(gly, 3, {105, 0, 0}));
    const auto frames = local_frames(s);

    const PairDescriptor d = pair_descriptor(frames[0], frames[1], OmegaDegeneracyPolicy::ZeroOmega);
    const double e_leu = t.energy(leu, leu, d);
    const double e_gly = t.energy(gly, gly, d);
    CHECK(e_leu < e_gly);

    const double tau = 0.5 * (e_leu + e_gly);
    const PerspectiveGraph g = build_physical(s, frames, t, tau);
    CHECK(g.has_edge(0, 1));
    CHECK(g.has_edge(1, 0));
    CHECK(!g.has_edge(2, 3));
}

TEST_CASE("build_physical: monotone nesting in tau") {
    std::mt19937_64 rng(11);
    const ProteinStructure s = random_chain(rng, 20);
    const auto frames = local_frames(s);
    const PotentialTable t = synth_table(4, test_scheme(), {{{0, 0}, -1.0}});
    const PerspectiveGraph g1 = build_physical(s, frames, t, -0.2);
    const PerspectiveGraph g2 = build_physical(s, frames, t, 0.2);
    const auto e1 = edge_set(g1), e2 = edge_set(g2);
    CHECK(std::includes(e2.begin(), e2.end(), e1.begin(), e1.end()));
}

TEST_CASE("build_geometric: collinear CAs at 3 A spacing with r=4") {
    ProteinStructure s;
    for (int i = 0; i < 3; ++i)
        s.residues.push_back(testutil::make_backbone_residue(0, i, {3.0 * i, 0, 0}));
    const auto frames = local_frames(s);
    const PerspectiveGraph g = build_geometric(s, frames, 4.0);
    CHECK(edge_set(g) == std::set<std::pair<int, int>>{{0, 1}, {1, 0}, {1, 2}, {2, 1}});
}

TEST_CASE("build_geometric: radius below the minimum distance gives no edges") {
    std::mt19937_64 rng(13);
    const ProteinStructure s = random_chain(rng, 8);
    const auto frames = local_frames(s);
    CHECK(build_geometric(s, frames, 0.5).edges.empty());
}

TEST_CASE("build_geometric: matches the O(n^2) scan on a 64-residue chain") {
    std::mt19937_64 rng(17);
    const ProteinStructure s = random_chain(rng, 64);
    const auto frames = local_frames(s);
    const PerspectiveGraph g = build_geometric(s, frames, 4.0);

    std::set<std::pair<int, int>> oracle;
    for (int i = 0; i < s.size(); ++i)
        for (int j = 0; j < s.size(); ++j)
            if (i != j && (s.ca(j) - s.ca(i)).norm() <= 4.0) oracle.emplace(i, j);
    CHECK(edge_set(g) == oracle);
}

TEST_CASE("build_geometric: monotone nesting in r") {
    std::mt19937_64 rng(19);
    const ProteinStructure s = random_chain(rng, 32);
    const auto frames = local_frames(s);
    const auto e1 = edge_set(build_geometric(s, frames, 2.0));
    const auto e2 = edge_set(build_geometric(s, frames, 4.0));
    const auto e3 = edge_set(build_geometric(s, frames, 8.0));
    CHECK(std::includes(e2.begin(), e2.end(), e1.begin(), e1.end()));
    CHECK(std::includes(e3.begin(), e3.end(), e2.begin(), e2.end()));
}

TEST_CASE("build_chemical: identical embeddings link the k index-smallest peers") {
    std::mt19937_64 rng(23);
    const ProteinStructure s = random_chain(rng, 6);
    const auto frames = local_frames(s);
    Eigen::MatrixXd h = Eigen::MatrixXd::Ones(6, 4);
    const PerspectiveGraph g = build_chemical(h, 2, s, frames);

    // Every node's own top-2 are nodes {0,1} (or {1,2} for node 0, {0,2} for 1).
    std::set<std::pair<int, int>> expected;
    for (int i = 0; i < 6; ++i) {
        int added = 0;
        for (int j = 0; j < 6 && added < 2; ++j) {
            if (j == i) continue;
            expected.emplace(i, j);
            expected.emplace(j, i);  // union symmetrization
            ++added;
        }
    }
    CHECK(edge_set(g) == expected);
}

TEST_CASE("build_chemical: all-negative node contributes no outgoing edges") {
    std::mt19937_64 rng(29);
    const ProteinStructure s = random_chain(rng, 5);
    const auto frames = local_frames(s);
    Eigen::MatrixXd h(5, 3);
    h << 1, 0, 0,
         1, 0.1, 0,
         1, -0.1, 0,
         1, 0, 0.1,
         -1, 0, 0;  // node 4 anti-aligned with everyone
    const PerspectiveGraph g = build_chemical(h, 3, s, frames);
    for (const auto& [i, j] : g.edges) {
        CHECK(i != 4);
        CHECK(j != 4);
    }
}

TEST_CASE("build_chemical: zero embedding row raises ZeroEmbedding") {
    std::mt19937_64 rng(31);
    const ProteinStructure s = random_chain(rng, 3);
    const auto frames = local_frames(s);
    Eigen::MatrixXd h = Eigen::MatrixXd::Ones(3, 4);
    h.row(1).setZero();
    CHECK_THROWS_AS(build_chemical(h, 1, s, frames), ZeroEmbedding);
}

TEST_CASE("build_chemical: matches the brute-force top-k oracle on 32x16 embeddings") {
    std::mt19937_64 rng(37);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    const ProteinStructure s = random_chain(rng, 32);
    const auto frames = local_frames(s);
    Eigen::MatrixXd h(32, 16);
    for (int i = 0; i < 32; ++i)
        for (int j = 0; j < 16; ++j) h(i, j) = u(rng);

    const int k = 5;
    const PerspectiveGraph g = build_chemical(h, k, s, frames);

    // Full similarity matrix, per-row top-k, positivity filter, union.
    std::set<std::pair<int, int>> oracle;
    for (int i = 0; i < 32; ++i) {
        std::vector<std::pair<double, int>> sims;
        for (int j = 0; j < 32; ++j) {
            if (j == i) continue;
            const double sim = h.row(i).dot(h.row(j)) / (h.row(i).norm() * h.row(j).norm());
            sims.emplace_back(sim, j);
        }
        std::sort(sims.begin(), sims.end(), [](const auto& a, const auto& b) {
            if (a.first != b.first) return a.first > b.first;
            return a.second < b.second;
        });
        for (int t = 0; t < k; ++t) {
            if (sims[static_cast<size_t>(t)].first > 0.0) {
                oracle.emplace(i, sims[static_cast<size_t>(t)].second);
            }
        }
    }
    std::set<std::pair<int, int>> sym;
    for (const auto& [i, j] : oracle) {
        sym.emplace(i, j);
        sym.emplace(j, i);
    }
    CHECK(edge_set(g) == sym);
}

TEST_CASE("edge_feature: sequence neighbor one-hot at +1") {
    std::mt19937_64 rng(41);
    const ProteinStructure s = random_chain(rng, 4);
    const auto frames = local_frames(s);
    const Eigen::VectorXd f = edge_feature(s, frames, 1, 2);
    CHECK(f[5] == 1.0);  // +1 slot
    CHECK(f.head<12>().sum() == 1.0);
    const Eigen::VectorXd b = edge_feature(s, frames, 2, 1);
    CHECK(b[4] == 1.0);  // -1 slot
    // Far separations clip.
    const ProteinStructure s2 = random_chain(rng, 12);
    const auto frames2 = local_frames(s2);
    CHECK(edge_feature(s2, frames2, 0, 11)[11] == 1.0);
    CHECK(edge_feature(s2, frames2, 11, 0)[10] == 1.0);
}

TEST_CASE("edge_feature: unit local direction and RBF center activation") {
    std::mt19937_64 rng(43);
    const ProteinStructure s = random_chain(rng, 8);
    const auto frames = local_frames(s);
    const Eigen::VectorXd f = edge_feature(s, frames, 2, 5);
    CHECK(std::abs(f.segment<3>(12).norm() - 1.0) < 1e-9);
    for (int m = 0; m < 16; ++m) {
        CHECK(f[15 + m] > 0.0);
        CHECK(f[15 + m] <= 1.0);
    }

    // A pair exactly at an RBF center makes that activation exactly 1.
    ProteinStructure s2;
    s2.residues.push_back(testutil::make_backbone_residue(0, 0, {0, 0, 0}));
    const double center = 16.0 / 15.0 * 3;  // 4th center
    s2.residues.push_back(testutil::make_backbone_residue(0, 1, {center, 0, 0}));
    const auto frames2 = local_frames(s2);
    CHECK(edge_feature(s2, frames2, 0, 1)[15 + 3] == 1.0);
}

TEST_CASE("edge_feature: invariant under global rigid motion") {
    std::mt19937_64 rng(47);
    std::uniform_real_distribution<double> u(-10.0, 10.0);
    const ProteinStructure s = random_chain(rng, 10);
    const auto frames = local_frames(s);
    for (int trial = 0; trial < 100; ++trial) {
        const Eigen::Matrix3d rot = testutil::random_rotation(rng);
        const Vector3d shift(u(rng), u(rng), u(rng));
        const ProteinStructure m = testutil::apply_rigid(s, rot, shift);
        const auto mframes = local_frames(m);
        const Eigen::VectorXd a = edge_feature(s, frames, 2, 7);
        const Eigen::VectorXd b = edge_feature(m, mframes, 2, 7);
        CHECK((a - b).cwiseAbs().maxCoeff() < 1e-9);
    }
}

TEST_CASE("physical and geometric graphs are invariant under rigid motion") {
    std::mt19937_64 rng(53);
    std::uniform_real_distribution<double> u(-10.0, 10.0);
    const ProteinStructure s = random_chain(rng, 16);
    const auto frames = local_frames(s);
    const PotentialTable t = synth_table(6, test_scheme(), {{{0, 0}, -1.0}});
    const PerspectiveGraph phys = build_physical(s, frames, t, 0.0);
    const PerspectiveGraph geom = build_geometric(s, frames, 4.0);

    REQUIRE(!phys.edges.empty());
    REQUIRE(!geom.edges.empty());
    for (int trial = 0; trial < 20; ++trial) {
        const Eigen::Matrix3d rot = testutil::random_rotation(rng);
        const Vector3d shift(u(rng), u(rng), u(rng));
        const ProteinStructure m = testutil::apply_rigid(s, rot, shift);
        const auto mframes = local_frames(m);
        const PerspectiveGraph phys2 = build_physical(m, mframes, t, 0.0);
        const PerspectiveGraph geom2 = build_geometric(m, mframes, 4.0);
        REQUIRE(phys2.edges == phys.edges);
        REQUIRE(geom2.edges == geom.edges);
        CHECK((phys2.edge_features - phys.edge_features).cwiseAbs().maxCoeff() < 1e-9);
        CHECK((geom2.edge_features - geom.edge_features).cwiseAbs().maxCoeff() < 1e-9);
    }
}

TEST_CASE("encode_static_node_features: deterministic and type-faithful") {
    std::mt19937_64 rng(59);
    const ProteinStructure s = random_chain(rng, 24);
    const StaticNodeFeatures f = encode_static_node_features(s);
    REQUIRE(static_cast<int>(f.type_index.size()) == s.size());
    CHECK(f.chi.rows() == s.size());

    // Histogram oracle against residue types.
    std::map<int, int> expected, got;
    for (const Residue& r : s.residues) ++expected[r.amino_acid_type];
    for (int t : f.type_index) ++got[t];
    CHECK(expected == got);

    // Backbone-only residues carry no chi encoding; identical residues give
    // identical records.
    CHECK(f.chi.row(0).norm() == 0.0);
    const StaticNodeFeatures f2 = encode_static_node_features(s);
    CHECK(f2.type_index == f.type_index);
    CHECK(f2.chi == f.chi);
}

TEST_CASE("graph JSON export carries schema fields") {
    std::mt19937_64 rng(61);
    const ProteinStructure s = random_chain(rng, 6);
    const auto frames = local_frames(s);
    const PerspectiveGraph g = build_geometric(s, frames, 4.0);
    const auto j = nlohmann::json::parse(graph_to_json(g, "r", 4.0));
    CHECK(j.at("perspective") == "geometric");
    CHECK(j.at("n") == 6);
    CHECK(j.at("edges").size() == g.edges.size());
    CHECK(j.at("edge_features").size() == g.edges.size());
    CHECK(j.at("params").at("r") == 4.0);
}
