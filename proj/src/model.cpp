#include "mmpg/model.hpp"

#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

#include "mmpg/checkpoint.hpp"
#include "mmpg/errors.hpp"
#include "mmpg/rng.hpp"

namespace mmpg {

void ModelConfig::validate() const {
    if (d_model < 1) throw ConfigInvalid("d_model must be >= 1");
    if (l_enc < 0 || l_exp < 0) throw ConfigInvalid("layer counts must be >= 0");
    if (n_experts < 1) throw ConfigInvalid("n_experts must be >= 1");
    if (top_k < 1 || top_k > n_experts) throw ConfigInvalid("need 1 <= top_k <= n_experts");
    if (n_classes < 2) throw ConfigInvalid("n_classes must be >= 2");
    if (lambda < 0.0) throw ConfigInvalid("lambda must be >= 0");
    if (lb_coeff < 0.0) throw ConfigInvalid("lb_coeff must be >= 0");
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
    j = nlohmann::json{{"d_model", c.d_model},       {"l_enc", c.l_enc},
                       {"l_exp", c.l_exp},           {"n_experts", c.n_experts},
                       {"top_k", c.top_k},           {"n_classes", c.n_classes},
                       {"lambda", c.lambda},         {"lb_coeff", c.lb_coeff},
                       {"multi_label", c.multi_label},
                       {"expert_input_raw", c.expert_input_raw},
                       {"lb_include_load", c.lb_include_load}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
    j.at("d_model").get_to(c.d_model);
    j.at("l_enc").get_to(c.l_enc);
    j.at("l_exp").get_to(c.l_exp);
    j.at("n_experts").get_to(c.n_experts);
    j.at("top_k").get_to(c.top_k);
    j.at("n_classes").get_to(c.n_classes);
    j.at("lambda").get_to(c.lambda);
    j.at("lb_coeff").get_to(c.lb_coeff);
    j.at("multi_label").get_to(c.multi_label);
    j.at("expert_input_raw").get_to(c.expert_input_raw);
    if (j.contains("lb_include_load")) j.at("lb_include_load").get_to(c.lb_include_load);
}

namespace {

void xavier_uniform(ad::Tensor& t, Rng& rng, double gain = 1.0) {
    const double bound = gain * std::sqrt(6.0 / (t.rows() + t.cols()));
    for (int c = 0; c < t.cols(); ++c)
        for (int r = 0; r < t.rows(); ++r) t.value(r, c) = rng.uniform(-bound, bound);
}

void normal_init(ad::Tensor& t, Rng& rng, double sigma) {
    for (int c = 0; c < t.cols(); ++c)
        for (int r = 0; r < t.rows(); ++r) t.value(r, c) = sigma * rng.normal();
}

}  // namespace

MoEModel MoEModel::init(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    MoEModel m;
    m.config = config;
    const int d = config.d_model;
    const int M = config.n_experts;
    const int C = config.n_classes;

    m.type_embedding = ad::Tensor("type_embedding", kNumAminoAcids + 1, d);
    m.sidechain_w = ad::Tensor("sidechain.w", 8, d);
    m.sidechain_b = ad::Tensor("sidechain.b", 1, d);
    m.fnn_w1 = ad::Tensor("chem_fnn.w1", 2 * d, d);
    m.fnn_b1 = ad::Tensor("chem_fnn.b1", 1, d);
    m.fnn_w2 = ad::Tensor("chem_fnn.w2", d, d);
    m.fnn_b2 = ad::Tensor("chem_fnn.b2", 1, d);
    for (int p = 0; p < 3; ++p) {
        const std::string pname = perspective_name(static_cast<Perspective>(p));
        for (int l = 0; l < config.l_enc; ++l) {
            GcnWeights w;
            w.wn = ad::Tensor("encoder." + pname + ".l" + std::to_string(l) + ".wn", d, d);
            w.we = ad::Tensor("encoder." + pname + ".l" + std::to_string(l) + ".we",
                              kEdgeFeatureDim, d);
            m.encoders[static_cast<size_t>(p)].push_back(std::move(w));
        }
    }
    for (int e = 0; e < M; ++e) {
        std::vector<GcnWeights> stack;
        for (int l = 0; l < config.l_exp; ++l) {
            GcnWeights w;
            w.wn = ad::Tensor("expert." + std::to_string(e) + ".l" + std::to_string(l) + ".wn", d, d);
            w.we = ad::Tensor("expert." + std::to_string(e) + ".l" + std::to_string(l) + ".we",
                              kEdgeFeatureDim, d);
            stack.push_back(std::move(w));
        }
        m.experts.push_back(std::move(stack));
    }
    m.gate_w = ad::Tensor("gate.w", d, M);
    m.gate_b = ad::Tensor("gate.b", 1, M);
    for (int p = 0; p < 3; ++p) {
        const std::string pname = perspective_name(static_cast<Perspective>(p));
        m.aux_head_w[static_cast<size_t>(p)] = ad::Tensor("aux_head." + pname + ".w", d, C);
        m.aux_head_b[static_cast<size_t>(p)] = ad::Tensor("aux_head." + pname + ".b", 1, C);
    }
    m.aux_cls_w = ad::Tensor("aux_cls.w", 3 * C, C);
    m.aux_cls_b = ad::Tensor("aux_cls.b", 1, C);
    m.main_w = ad::Tensor("main_head.w", 3 * d, C);
    m.main_b = ad::Tensor("main_head.b", 1, C);

    // Init scales are calibrated so activations keep O(1) RMS at depth: edge
    // features carry little L2 mass (a one-hot, a unit vector, a few live
    // RBFs), so the multiplicative edge gate collapses activations under
    // plain Xavier scaling, and the small type-embedding rows leave the node
    // featurization weak. Boosting the edge transforms and the feature FNN
    // keeps the convolution stack near unit gain; everything else is Xavier.
    Rng rng(seed ^ 0x4d4d5047696e6974ull);
    normal_init(m.type_embedding, rng, 0.02);
    for (ad::Tensor* t : m.parameters()) {
        if (t == &m.type_embedding) continue;
        if (t->rows() == 1) continue;  // biases start at zero
        const bool edge_transform = t->name.size() > 3 &&
                                    t->name.compare(t->name.size() - 3, 3, ".we") == 0;
        const bool feature_path = t == &m.sidechain_w || t == &m.fnn_w1 || t == &m.fnn_w2;
        xavier_uniform(*t, rng, edge_transform ? 8.0 : (feature_path ? 2.0 : 1.0));
    }
    return m;
}

std::vector<ad::Tensor*> MoEModel::parameters() {
    std::vector<ad::Tensor*> out = {&type_embedding, &sidechain_w, &sidechain_b, &fnn_w1,
                                    &fnn_b1,          &fnn_w2,      &fnn_b2};
    for (auto& stack : encoders) {
        for (GcnWeights& w : stack) {
            out.push_back(&w.wn);
            out.push_back(&w.we);
        }
    }
    for (auto& stack : experts) {
        for (GcnWeights& w : stack) {
            out.push_back(&w.wn);
            out.push_back(&w.we);
        }
    }
    out.push_back(&gate_w);
    out.push_back(&gate_b);
    for (int p = 0; p < 3; ++p) {
        out.push_back(&aux_head_w[static_cast<size_t>(p)]);
        out.push_back(&aux_head_b[static_cast<size_t>(p)]);
    }
    out.push_back(&aux_cls_w);
    out.push_back(&aux_cls_b);
    out.push_back(&main_w);
    out.push_back(&main_b);
    return out;
}

std::vector<const ad::Tensor*> MoEModel::parameters() const {
    auto mutable_list = const_cast<MoEModel*>(this)->parameters();
    return {mutable_list.begin(), mutable_list.end()};
}

void MoEModel::zero_grad() {
    for (ad::Tensor* t : parameters()) t->zero_grad();
}

StructureContext make_context(const ProteinStructure& s, const PotentialTable& table, double tau,
                              double radius) {
    StructureContext ctx;
    ctx.structure = s;
    ctx.frames = local_frames(s);
    ctx.feats = encode_static_node_features(s);
    ctx.physical = build_physical(s, ctx.frames, table, tau);
    ctx.geometric = build_geometric(s, ctx.frames, radius);
    ctx.tau = tau;
    ctx.radius = radius;
    return ctx;
}

ad::Var node_init(ad::Tape& tape, MoEModel& model, const StaticNodeFeatures& feats,
                  const ResidueMask* mask) {
    const int n = static_cast<int>(feats.type_index.size());
    std::vector<int> types = feats.type_index;
    Eigen::MatrixXd chi = feats.chi;
    if (mask != nullptr) {
        for (int i = 0; i < n; ++i) {
            if ((*mask)[static_cast<size_t>(i)]) {
                types[static_cast<size_t>(i)] = kUnknownType;
                chi.row(i).setZero();
            }
        }
    }
    ad::Var type_rows = ad::gather_rows(tape.leaf(model.type_embedding), types);
    ad::Var side = ad::add(ad::matmul(tape.constant(std::move(chi)), tape.leaf(model.sidechain_w)),
                           tape.leaf(model.sidechain_b));
    ad::Var cat = ad::hstack(type_rows, side);
    ad::Var hidden = ad::relu(ad::add(ad::matmul(cat, tape.leaf(model.fnn_w1)), tape.leaf(model.fnn_b1)));
    return ad::add(ad::matmul(hidden, tape.leaf(model.fnn_w2)), tape.leaf(model.fnn_b2));
}

ad::Var gcn_layer(ad::Tape& tape, ad::Var h, const PerspectiveGraph& graph, ad::Tensor& wn,
                  ad::Tensor& we) {
    const int n = graph.n;
    const size_t n_edges = graph.edges.size();
    std::vector<int> src(n_edges), dst(n_edges);
    Eigen::VectorXd coeff(static_cast<Eigen::Index>(n_edges));
    for (size_t e = 0; e < n_edges; ++e) {
        const auto [i, j] = graph.edges[e];
        dst[e] = i;  // message flows j -> i along edge (i, j)
        src[e] = j;
        coeff[static_cast<Eigen::Index>(e)] =
            1.0 / std::sqrt(static_cast<double>(graph.degree[static_cast<size_t>(i)]) *
                            static_cast<double>(graph.degree[static_cast<size_t>(j)]));
    }
    ad::Var hw = ad::matmul(h, tape.leaf(wn));
    ad::Var ew = ad::matmul(tape.constant(graph.edge_features), tape.leaf(we));
    ad::Var messages = ad::mul(ad::gather_rows(hw, std::move(src)), ew);
    ad::Var scaled = ad::scale_rows(messages, std::move(coeff));
    return ad::relu(ad::scatter_add_rows(scaled, std::move(dst), n));
}

PerspectiveOutput encode_perspective(ad::Tape& tape, ad::Var h0, const PerspectiveGraph& graph,
                                     std::vector<GcnWeights>& layers) {
    ad::Var h = h0;
    for (GcnWeights& w : layers) h = gcn_layer(tape, h, graph, w.wn, w.we);
    return {h, ad::mean_rows(h)};
}

ad::Var gate_weights(ad::Tape& tape, MoEModel& model, ad::Var pooled) {
    return ad::softmax_rows(
        ad::add(ad::matmul(pooled, tape.leaf(model.gate_w)), tape.leaf(model.gate_b)));
}

MoEOutput moe_forward(ad::Tape& tape, MoEModel& model, const PerspectiveGraph& graph,
                      ad::Var expert_input, ad::Var pooled) {
    const int K = model.config.top_k;
    ad::Var pi = gate_weights(tape, model, pooled);
    ad::TopK top = ad::top_k(pi, K);
    ad::Var renorm = ad::div(top.values, ad::sum_all(top.values));

    ad::Var fused;
    for (int k = 0; k < K; ++k) {
        ad::Var out = expert_input;
        for (GcnWeights& w : model.experts[static_cast<size_t>(top.indices[static_cast<size_t>(k)])]) {
            out = gcn_layer(tape, out, graph, w.wn, w.we);
        }
        ad::Var term = ad::mul(out, ad::slice_cols(renorm, k, 1));
        fused = fused.valid() ? ad::add(fused, term) : term;
    }

    // Renormalized weights scattered to their expert slots: the soft
    // per-expert load this perspective contributes.
    const int M = model.config.n_experts;
    ad::Var soft_load;
    for (int k = 0; k < K; ++k) {
        Eigen::MatrixXd onehot = Eigen::MatrixXd::Zero(1, M);
        onehot(0, top.indices[static_cast<size_t>(k)]) = 1.0;
        ad::Var term = ad::mul(tape.constant(std::move(onehot)), ad::slice_cols(renorm, k, 1));
        soft_load = soft_load.valid() ? ad::add(soft_load, term) : term;
    }

    MoEOutput result;
    result.fused_nodes = fused;
    result.full_weights = pi;
    result.soft_load = soft_load;
    result.record.full_weights = pi.value().row(0);
    result.record.selected = top.indices;
    result.record.renorm_weights = renorm.value().row(0);
    return result;
}

ad::Var classification_loss(ad::Tape& tape, ad::Var logits, const Target& target, int n_classes) {
    if (target.multi_label) {
        if (static_cast<int>(target.hot.size()) != n_classes) {
            throw LabelArityMismatch("multi-label target has " + std::to_string(target.hot.size()) +
                                     " entries for " + std::to_string(n_classes) + " classes");
        }
        Eigen::MatrixXd y(1, n_classes);
        for (int c = 0; c < n_classes; ++c) {
            if (target.hot[static_cast<size_t>(c)] != 0 && target.hot[static_cast<size_t>(c)] != 1) {
                throw LabelArityMismatch("multi-label entries must be 0/1");
            }
            y(0, c) = target.hot[static_cast<size_t>(c)];
        }
        ad::Var probs = ad::sigmoid(logits);
        ad::Var ones = tape.constant(Eigen::MatrixXd::Ones(1, n_classes));
        ad::Var yv = tape.constant(y);
        ad::Var ll = ad::add(ad::mul(yv, ad::log(probs)),
                             ad::mul(ad::sub(ones, yv), ad::log(ad::sub(ones, probs))));
        return ad::cmul(ad::mean_all(ll), -1.0);
    }
    if (target.cls < 0 || target.cls >= n_classes) {
        throw LabelArityMismatch("class index " + std::to_string(target.cls) + " outside [0, " +
                                 std::to_string(n_classes) + ")");
    }
    ad::Var log_probs = ad::log(ad::softmax_rows(logits));
    return ad::cmul(ad::slice_cols(log_probs, target.cls, 1), -1.0);
}

ad::Var load_balance_loss(ad::Tape& tape, const std::vector<ad::Var>& gate_full) {
    ad::Var importance = gate_full.front();
    for (size_t i = 1; i < gate_full.size(); ++i) importance = ad::add(importance, gate_full[i]);
    ad::Var mu = ad::mean_all(importance);
    ad::Var centered = ad::sub(importance, mu);
    ad::Var variance = ad::mean_all(ad::mul(centered, centered));
    (void)tape;
    return ad::div(variance, ad::mul(mu, mu));
}

ForwardOutput model_forward(ad::Tape& tape, MoEModel& model, const StructureContext& ctx,
                            const Target& target, const ResidueMask* mask, int chem_k) {
    if (target.multi_label != model.config.multi_label) {
        throw LabelArityMismatch("target arity does not match the model's loss mode");
    }
    ad::Var h0 = node_init(tape, model, ctx.feats, mask);

    ForwardOutput out;
    out.chemical = build_chemical(h0.value(), chem_k, ctx.structure, ctx.frames);

    const std::array<const PerspectiveGraph*, 3> graphs = {&ctx.physical, &out.chemical,
                                                           &ctx.geometric};
    std::array<ad::Var, 3> pooled_pre;   // g^(p), gate and aux-head input
    std::array<ad::Var, 3> pooled_post;  // mean over fused expert nodes
    for (int p = 0; p < 3; ++p) {
        PerspectiveOutput enc =
            encode_perspective(tape, h0, *graphs[static_cast<size_t>(p)],
                               model.encoders[static_cast<size_t>(p)]);
        pooled_pre[static_cast<size_t>(p)] = enc.pooled;
        ad::Var expert_input = model.config.expert_input_raw ? h0 : enc.node_embeddings;
        MoEOutput moe = moe_forward(tape, model, *graphs[static_cast<size_t>(p)], expert_input,
                                    enc.pooled);
        out.gate_full[static_cast<size_t>(p)] = moe.full_weights;
        out.soft_load[static_cast<size_t>(p)] = moe.soft_load;
        out.routing[static_cast<size_t>(p)] = std::move(moe.record);
        pooled_post[static_cast<size_t>(p)] = ad::mean_rows(moe.fused_nodes);
    }

    ad::Var g_fused = ad::hstack(ad::hstack(pooled_post[0], pooled_post[1]), pooled_post[2]);
    ad::Var logits = ad::add(ad::matmul(g_fused, tape.leaf(model.main_w)), tape.leaf(model.main_b));
    out.loss_cls = classification_loss(tape, logits, target, model.config.n_classes);

    std::array<ad::Var, 3> z;
    for (int p = 0; p < 3; ++p) {
        z[static_cast<size_t>(p)] =
            ad::add(ad::matmul(pooled_pre[static_cast<size_t>(p)],
                               tape.leaf(model.aux_head_w[static_cast<size_t>(p)])),
                    tape.leaf(model.aux_head_b[static_cast<size_t>(p)]));
    }
    ad::Var aux_logits = ad::add(
        ad::matmul(ad::hstack(ad::hstack(z[0], z[1]), z[2]), tape.leaf(model.aux_cls_w)),
        tape.leaf(model.aux_cls_b));
    out.loss_aux = classification_loss(tape, aux_logits, target, model.config.n_classes);

    out.task_loss = ad::add(out.loss_cls, ad::cmul(out.loss_aux, model.config.lambda));
    out.g_fused = g_fused.value().row(0);
    out.logits = logits.value().row(0);
    return out;
}

void save_model(const std::string& path, const MoEModel& model, const nlohmann::json& extra_meta) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FileNotFound("cannot open checkpoint for writing: " + path);
    nlohmann::json meta = extra_meta;
    meta["model_config"] = model.config;
    ad::write_checkpoint(out, meta, model.parameters());
}

MoEModel load_model(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FileNotFound("checkpoint not found: " + path);
    const ad::Checkpoint ckpt = ad::read_checkpoint(in);
    const nlohmann::json meta = ckpt.meta();
    if (!meta.contains("model_config")) throw ShapeMismatch("checkpoint lacks model_config");
    MoEModel model = MoEModel::init(meta.at("model_config").get<ModelConfig>(), 0);
    ad::restore_tensors(ckpt, model.parameters());
    return model;
}

}  // namespace mmpg
