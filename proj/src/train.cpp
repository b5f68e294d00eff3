#include "mmpg/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include <nlohmann/json.hpp>

#include "mmpg/errors.hpp"
#include "mmpg/optimizer.hpp"
#include "mmpg/rng.hpp"

namespace mmpg {

void TrainConfig::validate() const {
    model.validate();
    if (radius <= 0.0) throw ConfigInvalid("radius must be > 0");
    if (chem_k < 1) throw ConfigInvalid("chem_k must be >= 1");
    if (lr < 0.0 || momentum < 0.0 || momentum >= 1.0) throw ConfigInvalid("bad lr/momentum");
    if (weight_decay < 0.0) throw ConfigInvalid("weight_decay must be >= 0");
    if (epochs < 1 || batch_size < 1) throw ConfigInvalid("epochs and batch_size must be >= 1");
}

nlohmann::json report_to_json(const TrainReport& r) {
    nlohmann::json epochs = nlohmann::json::array();
    for (const EpochStats& e : r.epochs) {
        epochs.push_back({{"epoch", e.epoch},
                          {"lr", e.lr},
                          {"loss_cls", e.loss_cls},
                          {"loss_aux", e.loss_aux},
                          {"loss_lb", e.loss_lb},
                          {"train_metric", e.train_metric},
                          {"val_metric", e.val_metric}});
    }
    return nlohmann::json{{"metric", r.metric_name},
                          {"final_val_metric", r.final_val_metric},
                          {"epochs", std::move(epochs)}};
}

std::vector<StructureContext> build_contexts(const Dataset& ds, const PotentialTable& table,
                                             double tau, double radius) {
    std::vector<StructureContext> out;
    out.reserve(static_cast<size_t>(ds.size()));
    for (const ProteinStructure& s : ds.structures) {
        out.push_back(make_context(s, table, tau, radius));
    }
    return out;
}

namespace {

void shuffle_indices(std::vector<int>& v, Rng& rng) {
    for (size_t i = v.size(); i > 1; --i) {
        const size_t j = static_cast<size_t>(rng.next_u64() % i);
        std::swap(v[i - 1], v[j]);
    }
}

}  // namespace

Split stratified_split(const Dataset& ds, double val_fraction, std::uint64_t split_seed) {
    Split split;
    Rng rng(split_seed ^ 0x73706c6974ull);
    if (ds.multi_label) {
        std::vector<int> all(static_cast<size_t>(ds.size()));
        for (int i = 0; i < ds.size(); ++i) all[static_cast<size_t>(i)] = i;
        shuffle_indices(all, rng);
        const int n_val = std::max(1, static_cast<int>(std::lround(val_fraction * ds.size())));
        split.val.assign(all.begin(), all.begin() + n_val);
        split.train.assign(all.begin() + n_val, all.end());
    } else {
        std::vector<std::vector<int>> per_class(static_cast<size_t>(ds.n_classes));
        for (int i = 0; i < ds.size(); ++i) {
            per_class[static_cast<size_t>(*ds.structures[static_cast<size_t>(i)].label)].push_back(i);
        }
        for (auto& members : per_class) {
            shuffle_indices(members, rng);
            const int n_val = std::max(
                members.empty() ? 0 : 1,
                static_cast<int>(std::lround(val_fraction * static_cast<double>(members.size()))));
            for (size_t i = 0; i < members.size(); ++i) {
                (static_cast<int>(i) < n_val ? split.val : split.train).push_back(members[i]);
            }
        }
        std::sort(split.train.begin(), split.train.end());
        std::sort(split.val.begin(), split.val.end());
    }
    return split;
}

double f_max(const Eigen::MatrixXd& probs, const std::vector<std::vector<int>>& hot) {
    double best = 0.0;
    for (int ti = 0; ti <= 100; ++ti) {
        const double threshold = ti / 100.0;
        double precision_sum = 0.0;
        int proteins_with_predictions = 0;
        double recall_sum = 0.0;
        for (Eigen::Index i = 0; i < probs.rows(); ++i) {
            int predicted = 0, correct = 0, actual = 0;
            for (Eigen::Index c = 0; c < probs.cols(); ++c) {
                const bool pred = probs(i, c) >= threshold;
                const bool truth = hot[static_cast<size_t>(i)][static_cast<size_t>(c)] != 0;
                predicted += pred;
                actual += truth;
                correct += pred && truth;
            }
            if (predicted > 0) {
                precision_sum += static_cast<double>(correct) / predicted;
                ++proteins_with_predictions;
            }
            if (actual > 0) recall_sum += static_cast<double>(correct) / actual;
        }
        if (proteins_with_predictions == 0) continue;
        const double precision = precision_sum / proteins_with_predictions;
        const double recall = recall_sum / static_cast<double>(probs.rows());
        if (precision + recall > 0.0) {
            best = std::max(best, 2.0 * precision * recall / (precision + recall));
        }
    }
    return best;
}

double evaluate_metric(MoEModel& model, const std::vector<StructureContext>& contexts,
                       const Dataset& ds, const std::vector<int>& indices, int chem_k,
                       const std::vector<ResidueMask>* masks) {
    if (indices.empty()) return 0.0;
    if (ds.multi_label) {
        Eigen::MatrixXd probs(static_cast<Eigen::Index>(indices.size()), ds.n_classes);
        std::vector<std::vector<int>> hot;
        hot.reserve(indices.size());
        for (size_t row = 0; row < indices.size(); ++row) {
            const int idx = indices[row];
            ad::Tape tape;
            const ResidueMask* mask = masks ? &(*masks)[static_cast<size_t>(idx)] : nullptr;
            ForwardOutput out = model_forward(tape, model, contexts[static_cast<size_t>(idx)],
                                              ds.target(idx), mask, chem_k);
            for (int c = 0; c < ds.n_classes; ++c) {
                probs(static_cast<Eigen::Index>(row), c) = 1.0 / (1.0 + std::exp(-out.logits[c]));
            }
            hot.push_back(ds.multi_hot[static_cast<size_t>(idx)]);
        }
        return f_max(probs, hot);
    }
    int correct = 0;
    for (int idx : indices) {
        ad::Tape tape;
        const ResidueMask* mask = masks ? &(*masks)[static_cast<size_t>(idx)] : nullptr;
        ForwardOutput out = model_forward(tape, model, contexts[static_cast<size_t>(idx)],
                                          ds.target(idx), mask, chem_k);
        int argmax = 0;
        out.logits.maxCoeff(&argmax);
        if (argmax == *ds.structures[static_cast<size_t>(idx)].label) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(indices.size());
}

TrainReport train(MoEModel& model, const std::vector<StructureContext>& contexts,
                  const Dataset& ds, const TrainConfig& cfg) {
    cfg.validate();
    if (ds.n_classes < 2) throw ConfigInvalid("train: dataset needs >= 2 classes");
    if (contexts.size() != static_cast<size_t>(ds.size())) {
        throw ConfigInvalid("train: context/dataset size mismatch");
    }
    const auto start = std::chrono::steady_clock::now();

    const Split split = stratified_split(ds, 0.2, cfg.split_seed);
    ad::SgdMomentum opt;
    opt.momentum = cfg.momentum;
    opt.weight_decay = cfg.weight_decay;
    const ad::MultiStepLr schedule{cfg.lr, cfg.epochs};
    const std::vector<ad::Tensor*> params = model.parameters();

    TrainReport report;
    report.metric_name = ds.multi_label ? "fmax" : "top1";
    Rng order_rng(cfg.seed ^ 0x747261696eull);

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        EpochStats stats;
        stats.epoch = epoch;
        stats.lr = schedule.at_epoch(epoch);
        opt.lr = stats.lr;

        std::vector<int> order = split.train;
        shuffle_indices(order, order_rng);

        double cls_sum = 0.0, aux_sum = 0.0, lb_sum = 0.0;
        int n_batches = 0, train_correct = 0;
        Eigen::MatrixXd train_probs;
        std::vector<std::vector<int>> train_hot;
        if (ds.multi_label) {
            train_probs.resize(static_cast<Eigen::Index>(order.size()), ds.n_classes);
        }

        for (size_t batch_start = 0; batch_start < order.size(); batch_start += static_cast<size_t>(cfg.batch_size)) {
            const size_t batch_end = std::min(order.size(), batch_start + static_cast<size_t>(cfg.batch_size));
            const int batch_n = static_cast<int>(batch_end - batch_start);

            ad::Tape tape;
            ad::Var task_sum;
            std::vector<ad::Var> gates;
            std::vector<ad::Var> loads;
            for (size_t bi = batch_start; bi < batch_end; ++bi) {
                const int idx = order[bi];
                ForwardOutput out = model_forward(tape, model, contexts[static_cast<size_t>(idx)],
                                                  ds.target(idx), nullptr, cfg.chem_k);
                task_sum = task_sum.valid() ? ad::add(task_sum, out.task_loss) : out.task_loss;
                for (const auto& g : out.gate_full) gates.push_back(g);
                for (const auto& l : out.soft_load) loads.push_back(l);
                cls_sum += out.loss_cls.value()(0, 0);
                aux_sum += out.loss_aux.value()(0, 0);

                if (ds.multi_label) {
                    for (int c = 0; c < ds.n_classes; ++c) {
                        train_probs(static_cast<Eigen::Index>(bi), c) =
                            1.0 / (1.0 + std::exp(-out.logits[c]));
                    }
                    train_hot.push_back(ds.multi_hot[static_cast<size_t>(idx)]);
                } else {
                    int argmax = 0;
                    out.logits.maxCoeff(&argmax);
                    if (argmax == *ds.structures[static_cast<size_t>(idx)].label) ++train_correct;
                }
            }
            ad::Var lb = load_balance_loss(tape, gates);
            if (model.config.lb_include_load) {
                lb = ad::add(lb, load_balance_loss(tape, loads));
            }
            ad::Var objective = ad::add(ad::cmul(task_sum, 1.0 / batch_n),
                                        ad::cmul(lb, model.config.lb_coeff));
            lb_sum += lb.value()(0, 0);
            ++n_batches;

            model.zero_grad();
            tape.backward(objective);
            opt.step(params);
        }

        const double n_train = static_cast<double>(order.size());
        stats.loss_cls = cls_sum / n_train;
        stats.loss_aux = aux_sum / n_train;
        stats.loss_lb = n_batches > 0 ? lb_sum / n_batches : 0.0;
        stats.train_metric =
            ds.multi_label ? f_max(train_probs, train_hot)
                           : (n_train > 0 ? train_correct / n_train : 0.0);
        stats.val_metric = evaluate_metric(model, contexts, ds, split.val, cfg.chem_k);
        report.epochs.push_back(stats);
    }

    report.final_val_metric = report.epochs.empty() ? 0.0 : report.epochs.back().val_metric;
    report.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return report;
}

}  // namespace mmpg
