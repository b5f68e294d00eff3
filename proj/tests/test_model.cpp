#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <chrono>
#include <cmath>
#include <random>

#include <nlohmann/json.hpp>

#include "mmpg/errors.hpp"
#include "mmpg/gradcheck.hpp"
#include "mmpg/model.hpp"
#include "test_util.hpp"

using namespace mmpg;
using testutil::random_chain;

namespace {

BinningScheme small_scheme() {
    BinningScheme s;
    s.n_r = 13;
    s.n_theta = 2;
    s.n_phi = 4;
    s.n_omega = 4;
    return s;
}

ModelConfig small_config() {
    ModelConfig c;
    c.d_model = 8;
    c.l_enc = 1;
    c.l_exp = 1;
    c.n_experts = 3;
    c.top_k = 2;
    c.n_classes = 3;
    return c;
}

StructureContext small_context(uint64_t seed, int n = 10) {
    std::mt19937_64 rng(seed);
    const ProteinStructure s = random_chain(rng, n, /*with_sidechains=*/true);
    const PotentialTable table = synth_table(5, small_scheme(), {{{0, 0}, -1.5}});
    return make_context(s, table, 0.0, 4.0);
}

/// Straightforward per-edge evaluation of the edge-aware convolution, kept
/// independent of the tape ops.
Eigen::MatrixXd reference_gcn(const Eigen::MatrixXd& h, const PerspectiveGraph& g,
                              const Eigen::MatrixXd& wn, const Eigen::MatrixXd& we) {
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(g.n, wn.cols());
    for (size_t e = 0; e < g.edges.size(); ++e) {
        const auto [i, j] = g.edges[e];
        const Eigen::RowVectorXd msg = (h.row(j) * wn).cwiseProduct(
            g.edge_features.row(static_cast<Eigen::Index>(e)) * we);
        out.row(i) += msg / std::sqrt(static_cast<double>(g.degree[static_cast<size_t>(i)]) *
                                      static_cast<double>(g.degree[static_cast<size_t>(j)]));
    }
    return out.cwiseMax(0.0);
}

PerspectiveGraph hand_graph(int n, const std::vector<std::pair<int, int>>& edges, int feat_dim) {
    PerspectiveGraph g;
    g.perspective = Perspective::Geometric;
    g.n = n;
    g.edges = edges;
    g.finalize();
    g.edge_features = Eigen::MatrixXd::Ones(static_cast<Eigen::Index>(edges.size()), feat_dim);
    return g;
}

}  // namespace

TEST_CASE("node_init: identical residues give identical rows") {
    MoEModel model = MoEModel::init(small_config(), 11);
    StaticNodeFeatures feats;
    feats.type_index = {4, 4, 9};
    feats.chi = Eigen::MatrixXd::Zero(3, 8);
    feats.chi.row(0) << 0.5, 0.2, 0, 1, 0, 0, 0, 0;
    feats.chi.row(1) << 0.5, 0.2, 0, 1, 0, 0, 0, 0;
    feats.chi_mask.resize(3);
    ad::Tape tape;
    const ad::Var h = node_init(tape, model, feats);
    CHECK((h.value().row(0) - h.value().row(1)).cwiseAbs().maxCoeff() == 0.0);
    CHECK((h.value().row(0) - h.value().row(2)).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("node_init: mask swaps in the unknown row and zeroes chi") {
    MoEModel model = MoEModel::init(small_config(), 13);
    StaticNodeFeatures feats;
    feats.type_index = {4, 7};
    feats.chi = Eigen::MatrixXd::Ones(2, 8) * 0.4;
    feats.chi_mask.resize(2);

    StaticNodeFeatures unk;
    unk.type_index = {4, kUnknownType};
    unk.chi = feats.chi;
    unk.chi.row(1).setZero();
    unk.chi_mask.resize(2);

    const ResidueMask mask = {0, 1};
    ad::Tape t1, t2;
    const ad::Var masked = node_init(t1, model, feats, &mask);
    const ad::Var direct = node_init(t2, model, unk);
    CHECK((masked.value() - direct.value()).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("node_init: type-embedding gradient matches finite differences") {
    MoEModel model = MoEModel::init(small_config(), 17);
    StaticNodeFeatures feats;
    feats.type_index = {2, 5, 2, 19};
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    feats.chi.resize(4, 8);
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 8; ++j) feats.chi(i, j) = u(rng);
    feats.chi_mask.resize(4);

    auto value = [&] {
        ad::Tape tape;
        return ad::mean_all(ad::relu(node_init(tape, model, feats))).value()(0, 0);
    };
    auto grads = [&] {
        ad::Tape tape;
        tape.backward(ad::mean_all(ad::relu(node_init(tape, model, feats))));
    };
    const auto res = ad::finite_difference_check(value, grads, {&model.type_embedding}, 1e-5);
    CHECK(res.max_rel_err <= 1e-6);
}

TEST_CASE("gcn_layer: empty edge set gives all zeros") {
    MoEModel model = MoEModel::init(small_config(), 19);
    PerspectiveGraph g = hand_graph(4, {}, kEdgeFeatureDim);
    ad::Tape tape;
    ad::Var h = tape.constant(Eigen::MatrixXd::Random(4, 8));
    ad::Var out = gcn_layer(tape, h, g, model.encoders[0][0].wn, model.encoders[0][0].we);
    CHECK(out.value().cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("gcn_layer: two-node identity case reduces to relu of the neighbor") {
    PerspectiveGraph g = hand_graph(2, {{0, 1}, {1, 0}}, 2);
    ad::Tensor wn("wn", 2, 2), we("we", 2, 2);
    wn.value = Eigen::Matrix2d::Identity();
    we.value = Eigen::Matrix2d::Identity();
    Eigen::MatrixXd h(2, 2);
    h << -1.0, 2.0,
          3.0, -4.0;
    ad::Tape tape;
    ad::Var out = gcn_layer(tape, tape.constant(h), g, wn, we);
    CHECK(out.value()(0, 0) == 3.0);  // relu(h_1) with normalization 1/sqrt(1*1)
    CHECK(out.value()(0, 1) == 0.0);
    CHECK(out.value()(1, 0) == 0.0);  // relu(h_0)
    CHECK(out.value()(1, 1) == 2.0);
}

TEST_CASE("gcn_layer: three-node path normalizes by 1/sqrt(2)") {
    PerspectiveGraph g = hand_graph(3, {{0, 1}, {1, 0}, {1, 2}, {2, 1}}, 2);
    ad::Tensor wn("wn", 2, 2), we("we", 2, 2);
    wn.value = Eigen::Matrix2d::Identity();
    we.value = Eigen::Matrix2d::Identity();
    Eigen::MatrixXd h(3, 2);
    h << 1.0, 2.0,
         4.0, -1.0,
         0.5, 3.0;
    ad::Tape tape;
    ad::Var out = gcn_layer(tape, tape.constant(h), g, wn, we);
    const double s = 1.0 / std::sqrt(2.0);
    // Middle node sums both ends, each scaled by 1/sqrt(2*1).
    CHECK(out.value()(1, 0) == doctest::Approx((1.0 + 0.5) * s).epsilon(1e-15));
    CHECK(out.value()(1, 1) == doctest::Approx(5.0 * s).epsilon(1e-15));
    // End nodes see the middle node scaled by 1/sqrt(1*2).
    CHECK(out.value()(0, 0) == doctest::Approx(4.0 * s).epsilon(1e-15));
    CHECK(out.value()(0, 1) == 0.0);
}

TEST_CASE("gcn_layer: matches the per-edge reference on random graphs") {
    std::mt19937_64 rng(23);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (int trial = 0; trial < 5; ++trial) {
        const int n = 3 + static_cast<int>(rng() % 4);  // n <= 6
        const ProteinStructure s = random_chain(rng, n);
        const auto frames = local_frames(s);
        const PerspectiveGraph g = build_geometric(s, frames, 4.2);

        ad::Tensor wn("wn", 8, 8), we("we", kEdgeFeatureDim, 8);
        for (int r = 0; r < 8; ++r)
            for (int c = 0; c < 8; ++c) wn.value(r, c) = u(rng);
        for (int r = 0; r < kEdgeFeatureDim; ++r)
            for (int c = 0; c < 8; ++c) we.value(r, c) = u(rng);
        Eigen::MatrixXd h(n, 8);
        for (int r = 0; r < n; ++r)
            for (int c = 0; c < 8; ++c) h(r, c) = u(rng);

        ad::Tape tape;
        ad::Var out = gcn_layer(tape, tape.constant(h), g, wn, we);
        const Eigen::MatrixXd ref = reference_gcn(h, g, wn.value, we.value);
        CHECK((out.value() - ref).cwiseAbs().maxCoeff() < 1e-12);
    }
}

TEST_CASE("encode_perspective: zero layers pool the input; single node pools itself") {
    MoEModel model = MoEModel::init(small_config(), 29);
    std::vector<GcnWeights> no_layers;
    PerspectiveGraph g = hand_graph(3, {{0, 1}, {1, 0}}, kEdgeFeatureDim);
    Eigen::MatrixXd h(3, 8);
    h.setRandom();
    ad::Tape tape;
    PerspectiveOutput out = encode_perspective(tape, tape.constant(h), g, no_layers);
    CHECK((out.pooled.value() - h.colwise().mean()).cwiseAbs().maxCoeff() < 1e-15);

    PerspectiveGraph g1 = hand_graph(1, {}, kEdgeFeatureDim);
    Eigen::MatrixXd h1(1, 8);
    h1.setRandom();
    ad::Tape tape2;
    PerspectiveOutput single = encode_perspective(tape2, tape2.constant(h1), g1, no_layers);
    CHECK((single.pooled.value() - h1).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("encode_perspective: permutation of nodes leaves the pooled embedding unchanged") {
    std::mt19937_64 rng(31);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    MoEModel model = MoEModel::init(small_config(), 31);
    const int n = 7;
    PerspectiveGraph g = hand_graph(n, {{0, 1}, {1, 0}, {2, 5}, {5, 2}, {3, 4}, {4, 3}, {1, 6}, {6, 1}},
                                    kEdgeFeatureDim);
    for (Eigen::Index e = 0; e < g.edge_features.rows(); ++e)
        for (int c = 0; c < kEdgeFeatureDim; ++c) g.edge_features(e, c) = u(rng);
    Eigen::MatrixXd h(n, 8);
    h.setRandom();

    std::vector<int> perm = {3, 0, 6, 2, 5, 1, 4};
    PerspectiveGraph pg;
    pg.perspective = g.perspective;
    pg.n = n;
    std::vector<std::pair<int, int>> relabeled;
    for (const auto& [i, j] : g.edges) relabeled.emplace_back(perm[static_cast<size_t>(i)], perm[static_cast<size_t>(j)]);
    pg.edges = relabeled;
    pg.finalize();
    pg.edge_features.resize(g.edge_features.rows(), g.edge_features.cols());
    // finalize() sorted the edges; map features by matching relabeled pairs.
    for (size_t e = 0; e < relabeled.size(); ++e) {
        const auto it = std::lower_bound(pg.edges.begin(), pg.edges.end(), relabeled[e]);
        pg.edge_features.row(it - pg.edges.begin()) = g.edge_features.row(static_cast<Eigen::Index>(e));
    }
    Eigen::MatrixXd ph(n, 8);
    for (int i = 0; i < n; ++i) ph.row(perm[static_cast<size_t>(i)]) = h.row(i);

    ad::Tape t1, t2;
    PerspectiveOutput a = encode_perspective(t1, t1.constant(h), g, model.encoders[0]);
    PerspectiveOutput b = encode_perspective(t2, t2.constant(ph), pg, model.encoders[0]);
    CHECK((a.pooled.value() - b.pooled.value()).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("gate: uniform logits give 1/M; constant shift changes nothing; rows sum to 1") {
    ModelConfig cfg = small_config();
    MoEModel model = MoEModel::init(cfg, 37);
    model.gate_w.value.setZero();  // logits = bias, equal across experts
    model.gate_b.value.setConstant(0.8);
    ad::Tape tape;
    ad::Var w = gate_weights(tape, model, tape.constant(Eigen::MatrixXd::Random(1, 8)));
    for (int m = 0; m < cfg.n_experts; ++m) {
        CHECK(w.value()(0, m) == doctest::Approx(1.0 / cfg.n_experts).epsilon(1e-12));
    }

    MoEModel m2 = MoEModel::init(cfg, 38);
    const Eigen::MatrixXd pooled = Eigen::MatrixXd::Random(1, 8);
    ad::Tape ta, tb;
    const ad::Var wa = gate_weights(ta, m2, ta.constant(pooled));
    m2.gate_b.value.array() += 3.14;  // shift every logit
    const ad::Var wb = gate_weights(tb, m2, tb.constant(pooled));
    CHECK((wa.value() - wb.value()).cwiseAbs().maxCoeff() < 1e-12);

    std::mt19937_64 rng(39);
    std::uniform_real_distribution<double> u(-5.0, 5.0);
    MoEModel m3 = MoEModel::init(cfg, 39);
    for (int trial = 0; trial < 10000; ++trial) {
        Eigen::MatrixXd p(1, 8);
        for (int c = 0; c < 8; ++c) p(0, c) = u(rng);
        ad::Tape t;
        const ad::Var wt = gate_weights(t, m3, t.constant(p));
        CHECK(std::abs(wt.value().sum() - 1.0) < 1e-9);
    }
}

TEST_CASE("moe_forward: K=M=1 passes the sole expert through with weight 1") {
    ModelConfig cfg = small_config();
    cfg.n_experts = 1;
    cfg.top_k = 1;
    MoEModel model = MoEModel::init(cfg, 41);
    const StructureContext ctx = small_context(41, 6);
    ad::Tape tape;
    ad::Var h = tape.constant(Eigen::MatrixXd::Random(6, 8));
    MoEOutput out = moe_forward(tape, model, ctx.geometric, h, ad::mean_rows(h));
    CHECK(out.record.selected == std::vector<int>{0});
    CHECK(out.record.renorm_weights(0) == 1.0);

    ad::Tape t2;
    ad::Var h2 = t2.constant(h.value());
    ad::Var expert_only = h2;
    for (GcnWeights& w : model.experts[0]) expert_only = gcn_layer(t2, expert_only, ctx.geometric, w.wn, w.we);
    CHECK((out.fused_nodes.value() - expert_only.value()).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("moe_forward: K=M equals the dense softmax mixture") {
    ModelConfig cfg = small_config();
    cfg.n_experts = 4;
    cfg.top_k = 4;
    MoEModel model = MoEModel::init(cfg, 43);
    const StructureContext ctx = small_context(43, 8);
    ad::Tape tape;
    ad::Var h = tape.constant(Eigen::MatrixXd::Random(8, 8));
    ad::Var pooled = ad::mean_rows(h);
    MoEOutput out = moe_forward(tape, model, ctx.geometric, h, pooled);

    // Dense mixture with the full softmax weights.
    ad::Tape t2;
    ad::Var h2 = t2.constant(h.value());
    ad::Var pi = gate_weights(t2, model, t2.constant(pooled.value()));
    Eigen::MatrixXd dense = Eigen::MatrixXd::Zero(8, 8);
    for (int e = 0; e < 4; ++e) {
        ad::Var x = h2;
        for (GcnWeights& w : model.experts[static_cast<size_t>(e)])
            x = gcn_layer(t2, x, ctx.geometric, w.wn, w.we);
        dense += pi.value()(0, e) * x.value();
    }
    CHECK((out.fused_nodes.value() - dense).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(std::abs(out.record.renorm_weights.sum() - 1.0) < 1e-12);
}

TEST_CASE("moe_forward: hand-set gate logits select and renormalize as computed by hand") {
    ModelConfig cfg = small_config();
    cfg.n_experts = 3;
    cfg.top_k = 2;
    MoEModel model = MoEModel::init(cfg, 47);
    // Gate reduced to bias: logits (2, 1, -5).
    model.gate_w.value.setZero();
    model.gate_b.value << 2.0, 1.0, -5.0;
    const StructureContext ctx = small_context(47, 6);
    ad::Tape tape;
    ad::Var h = tape.constant(Eigen::MatrixXd::Random(6, 8));
    MoEOutput out = moe_forward(tape, model, ctx.geometric, h, ad::mean_rows(h));
    CHECK(out.record.selected == std::vector<int>{0, 1});
    // Renormalized over the selected pair = softmax over logits (2, 1).
    const double w0 = std::exp(2.0) / (std::exp(2.0) + std::exp(1.0));
    CHECK(out.record.renorm_weights(0) == doctest::Approx(w0).epsilon(1e-12));
    CHECK(out.record.renorm_weights(1) == doctest::Approx(1.0 - w0).epsilon(1e-12));

    // Shifting all gate logits changes neither selection nor weights.
    model.gate_b.value.array() += 7.5;
    ad::Tape t2;
    ad::Var h2 = t2.constant(h.value());
    MoEOutput out2 = moe_forward(t2, model, ctx.geometric, h2, ad::mean_rows(h2));
    CHECK(out2.record.selected == out.record.selected);
    CHECK((out2.record.renorm_weights - out.record.renorm_weights).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("moe_forward: node relabeling permutes fused rows and keeps the pooled mean") {
    ModelConfig cfg = small_config();
    MoEModel model = MoEModel::init(cfg, 49);
    std::mt19937_64 rng(49);
    std::uniform_real_distribution<double> u(-1.0, 1.0);

    const int n = 6;
    PerspectiveGraph g = hand_graph(n, {{0, 1}, {1, 0}, {2, 4}, {4, 2}, {3, 5}, {5, 3}},
                                    kEdgeFeatureDim);
    for (Eigen::Index e = 0; e < g.edge_features.rows(); ++e)
        for (int c = 0; c < kEdgeFeatureDim; ++c) g.edge_features(e, c) = u(rng);
    Eigen::MatrixXd h(n, 8);
    for (int r = 0; r < n; ++r)
        for (int c = 0; c < 8; ++c) h(r, c) = u(rng);

    const std::vector<int> perm = {2, 5, 0, 4, 1, 3};
    PerspectiveGraph pg;
    pg.perspective = g.perspective;
    pg.n = n;
    std::vector<std::pair<int, int>> relabeled;
    for (const auto& [i, j] : g.edges)
        relabeled.emplace_back(perm[static_cast<size_t>(i)], perm[static_cast<size_t>(j)]);
    pg.edges = relabeled;
    pg.finalize();
    pg.edge_features.resize(g.edge_features.rows(), g.edge_features.cols());
    for (size_t e = 0; e < relabeled.size(); ++e) {
        const auto it = std::lower_bound(pg.edges.begin(), pg.edges.end(), relabeled[e]);
        pg.edge_features.row(it - pg.edges.begin()) = g.edge_features.row(static_cast<Eigen::Index>(e));
    }
    Eigen::MatrixXd ph(n, 8);
    for (int i = 0; i < n; ++i) ph.row(perm[static_cast<size_t>(i)]) = h.row(i);

    ad::Tape t1, t2;
    const ad::Var h1 = t1.constant(h);
    const ad::Var h2 = t2.constant(ph);
    const MoEOutput a = moe_forward(t1, model, g, h1, ad::mean_rows(h1));
    const MoEOutput b = moe_forward(t2, model, pg, h2, ad::mean_rows(h2));
    CHECK(a.record.selected == b.record.selected);
    for (int i = 0; i < n; ++i) {
        CHECK((a.fused_nodes.value().row(i) -
               b.fused_nodes.value().row(perm[static_cast<size_t>(i)]))
                  .cwiseAbs()
                  .maxCoeff() < 1e-9);
    }
    CHECK((a.fused_nodes.value().colwise().mean() - b.fused_nodes.value().colwise().mean())
              .cwiseAbs()
              .maxCoeff() < 1e-9);
}

TEST_CASE("classification_loss: uniform logits give ln C") {
    ad::Tape tape;
    ad::Var logits = tape.constant(Eigen::MatrixXd::Constant(1, 5, 1.3));
    ad::Var loss = classification_loss(tape, logits, Target::single(2), 5);
    CHECK(loss.value()(0, 0) == doctest::Approx(std::log(5.0)).epsilon(1e-12));
}

TEST_CASE("classification_loss: all-0.5 sigmoid outputs give BCE ln 2") {
    ad::Tape tape;
    ad::Var logits = tape.constant(Eigen::MatrixXd::Zero(1, 4));
    ad::Var loss = classification_loss(tape, logits, Target::multi({1, 0, 1, 0}), 4);
    CHECK(loss.value()(0, 0) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("classification_loss: arity mismatches raise") {
    ad::Tape tape;
    ad::Var logits = tape.constant(Eigen::MatrixXd::Zero(1, 4));
    CHECK_THROWS_AS(classification_loss(tape, logits, Target::single(4), 4), LabelArityMismatch);
    CHECK_THROWS_AS(classification_loss(tape, logits, Target::single(-1), 4), LabelArityMismatch);
    CHECK_THROWS_AS(classification_loss(tape, logits, Target::multi({1, 0}), 4), LabelArityMismatch);
}

TEST_CASE("load_balance_loss: uniform 0, one-hot (M=10) 9, scale invariant") {
    ad::Tape tape;
    std::vector<ad::Var> uniform = {tape.constant(Eigen::MatrixXd::Constant(1, 10, 0.1)),
                                    tape.constant(Eigen::MatrixXd::Constant(1, 10, 0.1))};
    CHECK(load_balance_loss(tape, uniform).value()(0, 0) == doctest::Approx(0.0).epsilon(1e-15));

    Eigen::MatrixXd onehot = Eigen::MatrixXd::Zero(1, 10);
    onehot(0, 3) = 1.0;
    std::vector<ad::Var> hot = {tape.constant(onehot)};
    CHECK(load_balance_loss(tape, hot).value()(0, 0) == doctest::Approx(9.0).epsilon(1e-12));

    std::vector<ad::Var> scaled = {tape.constant(5.0 * onehot)};
    CHECK(load_balance_loss(tape, scaled).value()(0, 0) == doctest::Approx(9.0).epsilon(1e-12));
}

TEST_CASE("model_forward: lambda = 0 collapses the task loss to the main loss") {
    ModelConfig cfg = small_config();
    cfg.lambda = 0.0;
    MoEModel model = MoEModel::init(cfg, 53);
    const StructureContext ctx = small_context(53, 9);
    ad::Tape tape;
    ForwardOutput out = model_forward(tape, model, ctx, Target::single(1), nullptr, 4);
    CHECK(out.task_loss.value()(0, 0) == out.loss_cls.value()(0, 0));
}

TEST_CASE("model_forward: deterministic across reruns") {
    MoEModel m1 = MoEModel::init(small_config(), 59);
    MoEModel m2 = MoEModel::init(small_config(), 59);
    const StructureContext ctx = small_context(59, 12);
    ad::Tape t1, t2;
    ForwardOutput a = model_forward(t1, m1, ctx, Target::single(0), nullptr, 4);
    ForwardOutput b = model_forward(t2, m2, ctx, Target::single(0), nullptr, 4);
    CHECK(a.task_loss.value()(0, 0) == b.task_loss.value()(0, 0));
    CHECK((a.g_fused - b.g_fused).cwiseAbs().maxCoeff() == 0.0);
    t1.backward(a.task_loss);
    t2.backward(b.task_loss);
    for (size_t i = 0; i < m1.parameters().size(); ++i) {
        CHECK((m1.parameters()[i]->grad - m2.parameters()[i]->grad).cwiseAbs().maxCoeff() == 0.0);
    }
}

TEST_CASE("model_forward: routing is exactly K experts and weights sum to 1") {
    MoEModel model = MoEModel::init(small_config(), 61);
    const StructureContext ctx = small_context(61, 10);
    ad::Tape tape;
    ForwardOutput out = model_forward(tape, model, ctx, Target::single(2), nullptr, 4);
    for (int p = 0; p < 3; ++p) {
        const RoutingRecord& r = out.routing[static_cast<size_t>(p)];
        CHECK(static_cast<int>(r.selected.size()) == model.config.top_k);
        CHECK(std::abs(r.full_weights.sum() - 1.0) < 1e-9);
        CHECK(std::abs(r.renorm_weights.sum() - 1.0) < 1e-9);
    }
}

TEST_CASE("model_forward: every parameter gets gradient except unselected experts") {
    MoEModel model = MoEModel::init(small_config(), 67);
    const StructureContext c1 = small_context(67, 9);
    const StructureContext c2 = small_context(68, 11);
    model.zero_grad();

    std::set<int> selected;
    ad::Tape tape;
    std::vector<ad::Var> gates;
    ForwardOutput o1 = model_forward(tape, model, c1, Target::single(0), nullptr, 4);
    ForwardOutput o2 = model_forward(tape, model, c2, Target::single(2), nullptr, 4);
    for (const auto& o : {o1, o2}) {
        for (const auto& r : o.routing)
            for (int e : r.selected) selected.insert(e);
        for (const auto& g : o.gate_full) gates.push_back(g);
    }
    ad::Var objective = ad::add(ad::cmul(ad::add(o1.task_loss, o2.task_loss), 0.5),
                                ad::cmul(load_balance_loss(tape, gates), model.config.lb_coeff));
    tape.backward(objective);

    for (ad::Tensor* t : model.parameters()) {
        const bool is_expert = t->name.rfind("expert.", 0) == 0;
        if (is_expert) {
            const int idx = std::stoi(t->name.substr(7, t->name.find('.', 7) - 7));
            if (!selected.count(idx)) {
                CHECK(t->grad.cwiseAbs().maxCoeff() == 0.0);
                continue;
            }
        }
        CAPTURE(t->name);
        CHECK(t->grad.cwiseAbs().maxCoeff() > 0.0);
    }
}

TEST_CASE("model_forward: objective gradients match finite differences") {
    ModelConfig cfg = small_config();
    cfg.d_model = 6;
    MoEModel model = MoEModel::init(cfg, 71);
    const StructureContext c1 = small_context(71, 8);
    const StructureContext c2 = small_context(72, 9);

    auto objective = [&](ad::Tape& tape) {
        std::vector<ad::Var> gates;
        ForwardOutput o1 = model_forward(tape, model, c1, Target::single(1), nullptr, 3);
        ForwardOutput o2 = model_forward(tape, model, c2, Target::single(0), nullptr, 3);
        for (const auto& o : {o1, o2})
            for (const auto& g : o.gate_full) gates.push_back(g);
        return ad::add(ad::cmul(ad::add(o1.task_loss, o2.task_loss), 0.5),
                       ad::cmul(load_balance_loss(tape, gates), cfg.lb_coeff));
    };
    auto value = [&] {
        ad::Tape tape;
        return objective(tape).value()(0, 0);
    };
    auto grads = [&] {
        ad::Tape tape;
        tape.backward(objective(tape));
    };
    const auto res = ad::finite_difference_check(value, grads, model.parameters(), 1e-5,
                                                 /*max_coords_per_tensor=*/6, /*seed=*/5,
                                                 /*min_total_coords=*/120);
    CAPTURE(res.worst_tensor);
    CAPTURE(res.worst_analytic);
    CAPTURE(res.worst_numeric);
    CHECK(res.coords_checked >= 120);
    CHECK(res.max_rel_err <= 1e-4);
}

TEST_CASE("model_forward: 30-residue structure with M=4, K=2, d=16 runs forward+backward under 1 s") {
    ModelConfig cfg;
    cfg.d_model = 16;
    cfg.n_experts = 4;
    cfg.top_k = 2;
    cfg.n_classes = 3;
    MoEModel model = MoEModel::init(cfg, 99);
    const StructureContext ctx = small_context(99, 30);
    const auto t0 = std::chrono::steady_clock::now();
    ad::Tape tape;
    ForwardOutput out = model_forward(tape, model, ctx, Target::single(1), nullptr, 20);
    tape.backward(out.task_loss);
    const double elapsed =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    CHECK(elapsed < 1.0);
}

TEST_CASE("soft load: equals renormalized weights in expert slots and differentiates") {
    ModelConfig cfg = small_config();
    MoEModel model = MoEModel::init(cfg, 77);
    const StructureContext ctx = small_context(77, 8);
    ad::Tape tape;
    ad::Var h = tape.constant(Eigen::MatrixXd::Random(8, 8));
    MoEOutput out = moe_forward(tape, model, ctx.geometric, h, ad::mean_rows(h));
    Eigen::RowVectorXd expected = Eigen::RowVectorXd::Zero(cfg.n_experts);
    for (size_t k = 0; k < out.record.selected.size(); ++k) {
        expected[out.record.selected[k]] = out.record.renorm_weights[static_cast<Eigen::Index>(k)];
    }
    CHECK((out.soft_load.value().row(0) - expected).cwiseAbs().maxCoeff() < 1e-15);

    // CV^2 over the soft load differentiates back to the gate parameters.
    auto objective = [&](ad::Tape& t) {
        ad::Var hv = t.constant(h.value());
        MoEOutput o = moe_forward(t, model, ctx.geometric, hv, ad::mean_rows(hv));
        return load_balance_loss(t, {o.soft_load});
    };
    auto value = [&] {
        ad::Tape t;
        return objective(t).value()(0, 0);
    };
    auto grads = [&] {
        ad::Tape t;
        t.backward(objective(t));
    };
    const auto res = ad::finite_difference_check(value, grads, {&model.gate_w, &model.gate_b});
    CHECK(res.max_rel_err <= 1e-6);
}

TEST_CASE("save/load checkpoint restores an identical model") {
    MoEModel model = MoEModel::init(small_config(), 73);
    const StructureContext ctx = small_context(73, 8);
    save_model("/tmp/mmpg_test_model.ckpt", model, nlohmann::json{{"note", "unit"}});
    MoEModel back = load_model("/tmp/mmpg_test_model.ckpt");
    CHECK(back.config.n_experts == model.config.n_experts);

    ad::Tape t1, t2;
    ForwardOutput a = model_forward(t1, model, ctx, Target::single(0), nullptr, 4);
    ForwardOutput b = model_forward(t2, back, ctx, Target::single(0), nullptr, 4);
    CHECK(a.task_loss.value()(0, 0) == b.task_loss.value()(0, 0));
}
