// mmpg: multi-perspective protein-graph pipeline driver.
//
// Subcommands: init-config, synth-data, build-graphs, train, analyze,
// gradcheck. Exit codes: 0 success, 1 usage error, 2 data error, 3 internal
// error. Failures print a machine-readable JSON line to stderr. Outputs are
// byte-identical across reruns with the same inputs and seeds; wall-clock
// timing goes to a .log file only.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "mmpg/analysis.hpp"
#include "mmpg/errors.hpp"
#include "mmpg/structure_io.hpp"
#include "mmpg/synthetic.hpp"
#include "mmpg/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct RunConfig {
    mmpg::TrainConfig train;
    std::string table_path;    // empty -> synthesize from synth_seed
    std::string dataset_path;  // empty -> synthesize from the synth_* fields
    mmpg::SyntheticSpec synth;
    bool deterministic = true;
    std::string out_dir = "out";
};

json config_to_json(const RunConfig& c) {
    return json{{"d_model", c.train.model.d_model},
                {"l_enc", c.train.model.l_enc},
                {"l_exp", c.train.model.l_exp},
                {"experts", c.train.model.n_experts},
                {"top_k", c.train.model.top_k},
                {"n_classes", c.train.model.n_classes},
                {"lambda", c.train.model.lambda},
                {"lb_coeff", c.train.model.lb_coeff},
                {"multi_label", c.train.model.multi_label},
                {"expert_input_raw", c.train.model.expert_input_raw},
                {"lb_include_load", c.train.model.lb_include_load},
                {"tau", c.train.tau},
                {"chem_k", c.train.chem_k},
                {"radius", c.train.radius},
                {"lr", c.train.lr},
                {"momentum", c.train.momentum},
                {"weight_decay", c.train.weight_decay},
                {"epochs", c.train.epochs},
                {"batch_size", c.train.batch_size},
                {"seed", c.train.seed},
                {"split_seed", c.train.split_seed},
                {"table", c.table_path},
                {"dataset", c.dataset_path},
                {"synth_classes", c.synth.n_classes},
                {"synth_per_class", c.synth.structures_per_class},
                {"synth_len_min", c.synth.len_min},
                {"synth_len_max", c.synth.len_max},
                {"synth_seed", c.synth.seed},
                {"synth_multi_label", c.synth.multi_label},
                {"deterministic", c.deterministic},
                {"out_dir", c.out_dir}};
}

RunConfig config_from_json(const json& j) {
    RunConfig c;
    const json defaults = config_to_json(c);
    for (const auto& [key, value] : j.items()) {
        if (!defaults.contains(key)) {
            throw mmpg::ConfigInvalid("unknown config key '" + key + "'");
        }
        (void)value;
    }
    auto get = [&](const char* key, auto& slot) {
        if (j.contains(key)) j.at(key).get_to(slot);
    };
    get("d_model", c.train.model.d_model);
    get("l_enc", c.train.model.l_enc);
    get("l_exp", c.train.model.l_exp);
    get("experts", c.train.model.n_experts);
    get("top_k", c.train.model.top_k);
    get("n_classes", c.train.model.n_classes);
    get("lambda", c.train.model.lambda);
    get("lb_coeff", c.train.model.lb_coeff);
    get("multi_label", c.train.model.multi_label);
    get("expert_input_raw", c.train.model.expert_input_raw);
    get("lb_include_load", c.train.model.lb_include_load);
    get("tau", c.train.tau);
    get("chem_k", c.train.chem_k);
    get("radius", c.train.radius);
    get("lr", c.train.lr);
    get("momentum", c.train.momentum);
    get("weight_decay", c.train.weight_decay);
    get("epochs", c.train.epochs);
    get("batch_size", c.train.batch_size);
    get("seed", c.train.seed);
    get("split_seed", c.train.split_seed);
    get("table", c.table_path);
    get("dataset", c.dataset_path);
    get("synth_classes", c.synth.n_classes);
    get("synth_per_class", c.synth.structures_per_class);
    get("synth_len_min", c.synth.len_min);
    get("synth_len_max", c.synth.len_max);
    get("synth_seed", c.synth.seed);
    get("synth_multi_label", c.synth.multi_label);
    get("deterministic", c.deterministic);
    get("out_dir", c.out_dir);
    c.synth.multi_label = c.synth.multi_label || c.train.model.multi_label;
    return c;
}

RunConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw mmpg::FileNotFound("config file not found: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::parse_error& e) {
        throw mmpg::ConfigInvalid(std::string("config parse: ") + e.what());
    }
    return config_from_json(j);
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw mmpg::FileNotFound("cannot write " + path.string());
    out << text;
}

mmpg::PotentialTable resolve_table(const RunConfig& cfg) {
    if (!cfg.table_path.empty()) return mmpg::load_table_file(cfg.table_path);
    return mmpg::default_synthetic_table(cfg.synth.seed);
}

mmpg::Dataset resolve_dataset(const RunConfig& cfg) {
    if (!cfg.dataset_path.empty()) return mmpg::load_dataset(cfg.dataset_path);
    mmpg::SyntheticSpec spec = cfg.synth;
    spec.n_classes = std::max(spec.n_classes, 2);
    return mmpg::make_synthetic_dataset(spec);
}

int cmd_init_config(const std::string& out_path) {
    RunConfig defaults;
    write_text(out_path, config_to_json(defaults).dump(1) + "\n");
    std::cout << "wrote " << out_path << "\n";
    return 0;
}

int cmd_synth_data(const std::string& config_path, const std::string& out_dir) {
    const RunConfig cfg = load_config(config_path);
    const fs::path dir = out_dir.empty() ? fs::path(cfg.out_dir) : fs::path(out_dir);
    fs::create_directories(dir);

    mmpg::SyntheticSpec spec = cfg.synth;
    const mmpg::Dataset ds = mmpg::make_synthetic_dataset(spec);
    mmpg::save_dataset((dir / "dataset.json").string(), ds);
    const mmpg::PotentialTable table = mmpg::default_synthetic_table(spec.seed);
    mmpg::write_table_file((dir / "table.korp").string(), table);

    json summary{{"structures", ds.size()},
                 {"n_classes", ds.n_classes},
                 {"multi_label", ds.multi_label},
                 {"dataset", (dir / "dataset.json").string()},
                 {"table", (dir / "table.korp").string()}};
    write_text(dir / "synth_summary.json", summary.dump(1) + "\n");
    std::cout << summary.dump() << "\n";
    return 0;
}

int cmd_build_graphs(const std::vector<std::string>& structure_files, const std::string& table_path,
                     double tau, double radius, int chem_k, const std::string& checkpoint_path,
                     const std::string& out_dir) {
    const mmpg::PotentialTable table = mmpg::load_table_file(table_path);
    fs::create_directories(out_dir);

    std::unique_ptr<mmpg::MoEModel> model;
    if (!checkpoint_path.empty()) {
        model = std::make_unique<mmpg::MoEModel>(mmpg::load_model(checkpoint_path));
    }

    json summary;
    summary["outputs"] = json::array();
    summary["chemical_omitted"] = model == nullptr;
    if (model == nullptr) {
        summary["note"] = "chemical graphs need learned embeddings; pass --checkpoint to emit them";
    }

    for (const std::string& file : structure_files) {
        std::ifstream in(file);
        if (!in) throw mmpg::FileNotFound("structure file not found: " + file);
        const mmpg::ProteinStructure s = mmpg::parse_structure(in);
        const std::string stem = fs::path(file).stem().string();
        const mmpg::StructureContext ctx = mmpg::make_context(s, table, tau, radius);

        const fs::path phys = fs::path(out_dir) / (stem + ".physical.json");
        write_text(phys, mmpg::graph_to_json(ctx.physical, "tau", tau) + "\n");
        summary["outputs"].push_back(phys.string());
        const fs::path geom = fs::path(out_dir) / (stem + ".geometric.json");
        write_text(geom, mmpg::graph_to_json(ctx.geometric, "r", radius) + "\n");
        summary["outputs"].push_back(geom.string());

        if (model != nullptr) {
            mmpg::ad::Tape tape;
            mmpg::ad::Var h0 = mmpg::node_init(tape, *model, ctx.feats);
            const mmpg::PerspectiveGraph chem =
                mmpg::build_chemical(h0.value(), chem_k, ctx.structure, ctx.frames);
            const fs::path path = fs::path(out_dir) / (stem + ".chemical.json");
            write_text(path, mmpg::graph_to_json(chem, "k", chem_k) + "\n");
            summary["outputs"].push_back(path.string());
        }
    }
    write_text(fs::path(out_dir) / "build_graphs_summary.json", summary.dump(1) + "\n");
    std::cout << summary.dump() << "\n";
    return 0;
}

int cmd_train(const std::string& config_path) {
    const RunConfig cfg = load_config(config_path);
    const fs::path dir(cfg.out_dir);
    fs::create_directories(dir);

    const mmpg::Dataset ds = resolve_dataset(cfg);
    const mmpg::PotentialTable table = resolve_table(cfg);

    mmpg::TrainConfig tc = cfg.train;
    tc.model.n_classes = ds.n_classes;
    tc.model.multi_label = ds.multi_label;

    const auto contexts = mmpg::build_contexts(ds, table, tc.tau, tc.radius);
    mmpg::MoEModel model = mmpg::MoEModel::init(tc.model, tc.seed);
    const mmpg::TrainReport report = mmpg::train(model, contexts, ds, tc);

    RunConfig resolved = cfg;
    resolved.train = tc;
    write_text(dir / "resolved_config.json", config_to_json(resolved).dump(1) + "\n");
    write_text(dir / "report.json", mmpg::report_to_json(report).dump(1) + "\n");
    mmpg::save_model((dir / "model.ckpt").string(),
                     model, json{{"final_val_metric", report.final_val_metric}});
    {
        std::ofstream log(dir / "train.log");
        log << "wall_seconds " << report.wall_seconds << "\n";
    }
    std::cout << json{{"final_val_metric", report.final_val_metric},
                      {"metric", report.metric_name},
                      {"checkpoint", (dir / "model.ckpt").string()}}
                     .dump()
              << "\n";
    return 0;
}

int cmd_analyze(const std::string& checkpoint_path, const std::string& config_path,
                const std::string& which, const std::string& out_dir,
                std::vector<double> mask_u, std::vector<std::uint64_t> mask_seeds,
                const std::string& sweep_param, std::vector<double> sweep_values) {
    const RunConfig cfg = load_config(config_path);
    fs::create_directories(out_dir);
    const mmpg::Dataset ds = resolve_dataset(cfg);
    const mmpg::PotentialTable table = resolve_table(cfg);

    if (which == "sweep") {
        if (sweep_param.empty() || sweep_values.empty()) {
            throw mmpg::ConfigInvalid("sweep needs --param and --values");
        }
        mmpg::TrainConfig tc = cfg.train;
        tc.model.n_classes = ds.n_classes;
        tc.model.multi_label = ds.multi_label;
        const auto rows = mmpg::hyperparam_sweep(sweep_param, sweep_values, tc, ds, table);
        const fs::path path = fs::path(out_dir) / ("sweep_" + sweep_param + ".csv");
        write_text(path, mmpg::sweep_csv(sweep_param, rows));
        std::cout << json{{"output", path.string()}, {"rows", rows.size()}}.dump() << "\n";
        return 0;
    }

    mmpg::MoEModel model = mmpg::load_model(checkpoint_path);
    const auto contexts = mmpg::build_contexts(ds, table, cfg.train.tau, cfg.train.radius);

    if (which == "experts") {
        const Eigen::MatrixXd freq = mmpg::expert_frequency(model, contexts, ds, cfg.train.chem_k);
        write_text(fs::path(out_dir) / "expert_frequency.csv", mmpg::frequency_csv(freq));
        write_text(fs::path(out_dir) / "expert_classification.csv",
                   mmpg::classification_csv(mmpg::classify_experts(freq)));
        write_text(fs::path(out_dir) / "routing_records.csv",
                   mmpg::routing_csv(mmpg::export_routing(model, contexts, ds, cfg.train.chem_k)));
        std::cout << json{{"outputs",
                           {"expert_frequency.csv", "expert_classification.csv",
                            "routing_records.csv"}}}

                         .dump()
                  << "\n";
        return 0;
    }
    if (which == "mask") {
        if (mask_u.empty()) mask_u = {0, 10, 20, 30, 40};
        if (mask_seeds.empty()) mask_seeds = {1, 2, 3, 4, 5};
        const auto rows = mmpg::masking_sweep(model, contexts, ds, mask_u, mask_seeds,
                                              cfg.train.chem_k);
        write_text(fs::path(out_dir) / "mask_sweep.csv", mmpg::mask_sweep_csv(rows));
        std::cout << json{{"output", "mask_sweep.csv"}, {"rows", rows.size()}}.dump() << "\n";
        return 0;
    }
    if (which == "embed") {
        const auto e = mmpg::export_embeddings(model, contexts, ds, cfg.train.chem_k);
        write_text(fs::path(out_dir) / "embeddings.csv", mmpg::embeddings_csv(e));
        json dist{{"intra_class_mean", nullptr}, {"inter_class_mean", nullptr}};
        if (e.intra_class_mean) dist["intra_class_mean"] = *e.intra_class_mean;
        if (e.inter_class_mean) dist["inter_class_mean"] = *e.inter_class_mean;
        write_text(fs::path(out_dir) / "class_distances.json", dist.dump(1) + "\n");
        std::cout << dist.dump() << "\n";
        return 0;
    }
    throw CLI::ValidationError("--which must be one of experts|mask|embed|sweep");
}

int cmd_gradcheck(double op_tol, double model_tol) {
    const mmpg::GradCheckSummary s = mmpg::run_reference_gradchecks(200);
    std::cout << "op suite:    max rel err " << s.ops.max_rel_err << " over "
              << s.ops.coords_checked << " coords\n";
    std::cout << "model suite: max rel err " << s.model.max_rel_err << " over "
              << s.model.coords_checked << " coords (worst " << s.model.worst_tensor << ")\n";
    const bool ok = s.ops.passed(op_tol) && s.model.passed(model_tol);
    std::cout << (ok ? "PASS" : "FAIL") << "\n";
    return ok ? 0 : 3;
}

int classify_exit(const std::exception& e) {
    if (dynamic_cast<const mmpg::FileNotFound*>(&e) || dynamic_cast<const mmpg::MalformedRecord*>(&e) ||
        dynamic_cast<const mmpg::MissingBackbone*>(&e) || dynamic_cast<const mmpg::EmptyChain*>(&e) ||
        dynamic_cast<const mmpg::BadMagic*>(&e) || dynamic_cast<const mmpg::TruncatedPayload*>(&e) ||
        dynamic_cast<const mmpg::ConfigInvalid*>(&e) || dynamic_cast<const mmpg::ShapeMismatch*>(&e) ||
        dynamic_cast<const mmpg::LabelArityMismatch*>(&e) || dynamic_cast<const mmpg::OutOfRange*>(&e)) {
        return 2;
    }
    return 3;
}

const char* error_name(const std::exception& e) {
    if (dynamic_cast<const mmpg::FileNotFound*>(&e)) return "FileNotFound";
    if (dynamic_cast<const mmpg::MalformedRecord*>(&e)) return "MalformedRecord";
    if (dynamic_cast<const mmpg::MissingBackbone*>(&e)) return "MissingBackbone";
    if (dynamic_cast<const mmpg::EmptyChain*>(&e)) return "EmptyChain";
    if (dynamic_cast<const mmpg::BadMagic*>(&e)) return "BadMagic";
    if (dynamic_cast<const mmpg::TruncatedPayload*>(&e)) return "TruncatedPayload";
    if (dynamic_cast<const mmpg::ConfigInvalid*>(&e)) return "ConfigInvalid";
    if (dynamic_cast<const mmpg::ShapeMismatch*>(&e)) return "ShapeMismatch";
    if (dynamic_cast<const mmpg::LabelArityMismatch*>(&e)) return "LabelArityMismatch";
    if (dynamic_cast<const mmpg::OutOfRange*>(&e)) return "OutOfRange";
    if (dynamic_cast<const mmpg::DegenerateGeometry*>(&e)) return "DegenerateGeometry";
    return "InternalError";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"multi-perspective protein-graph pipeline"};
    app.require_subcommand(1);
    bool deterministic = true;
    app.add_flag("--deterministic,!--no-deterministic", deterministic,
                 "force single-threaded execution (always on; flag kept for scripts)");

    std::string init_out = "config.json";
    CLI::App* init = app.add_subcommand("init-config", "write a config file with defaults");
    init->add_option("--out", init_out, "output path");

    std::string synth_config, synth_out;
    CLI::App* synth = app.add_subcommand("synth-data", "generate a synthetic dataset and table");
    synth->add_option("--config", synth_config, "config file")->required();
    synth->add_option("--out-dir", synth_out, "output directory (defaults to config out_dir)");

    std::vector<std::string> bg_structures;
    std::string bg_table, bg_ckpt, bg_out = "graphs";
    double bg_tau = -1.0, bg_r = 4.0;
    int bg_k = 20;
    CLI::App* bg = app.add_subcommand("build-graphs", "emit perspective graphs as JSON");
    bg->add_option("structures", bg_structures, "structure files")->required();
    bg->add_option("--table", bg_table, "potential table file")->required();
    bg->add_option("--tau", bg_tau, "physical energy threshold");
    bg->add_option("--r", bg_r, "geometric radius (A)");
    bg->add_option("--k", bg_k, "chemical neighbor budget (needs --checkpoint)");
    bg->add_option("--checkpoint", bg_ckpt, "model checkpoint for chemical graphs");
    bg->add_option("--out-dir", bg_out, "output directory");

    std::string train_config;
    CLI::App* tr = app.add_subcommand("train", "train on a dataset per config");
    tr->add_option("--config", train_config, "config file")->required();

    std::string an_ckpt, an_config, an_which, an_out = "analysis", an_param;
    std::vector<double> an_u, an_values;
    std::vector<std::uint64_t> an_seeds;
    CLI::App* an = app.add_subcommand("analyze", "post-training diagnostics");
    an->add_option("--checkpoint", an_ckpt, "model checkpoint (not needed for sweep)");
    an->add_option("--config", an_config, "config file naming dataset/table")->required();
    an->add_option("--which", an_which, "experts|mask|embed|sweep")->required();
    an->add_option("--out-dir", an_out, "output directory");
    an->add_option("--u", an_u, "mask percentages");
    an->add_option("--mask-seeds", an_seeds, "mask seeds");
    an->add_option("--param", an_param, "sweep parameter: tau|k|r|M|K|lambda");
    an->add_option("--values", an_values, "sweep values");

    double gc_op_tol = 1e-6, gc_model_tol = 1e-4;
    CLI::App* gc = app.add_subcommand("gradcheck", "finite-difference gradient verification");
    gc->add_option("--op-tol", gc_op_tol, "tolerance for the op suite");
    gc->add_option("--model-tol", gc_model_tol, "tolerance for the end-to-end suite");

    try {
        app.parse(argc, argv);
        if (init->parsed()) return cmd_init_config(init_out);
        if (synth->parsed()) return cmd_synth_data(synth_config, synth_out);
        if (bg->parsed())
            return cmd_build_graphs(bg_structures, bg_table, bg_tau, bg_r, bg_k, bg_ckpt, bg_out);
        if (tr->parsed()) return cmd_train(train_config);
        if (an->parsed())
            return cmd_analyze(an_ckpt, an_config, an_which, an_out, an_u, an_seeds, an_param,
                               an_values);
        if (gc->parsed()) return cmd_gradcheck(gc_op_tol, gc_model_tol);
        return 1;
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help
        std::cerr << json{{"error", "UsageError"}, {"message", e.what()}}.dump() << "\n";
        return 1;
    } catch (const mmpg::Error& e) {
        std::cerr << json{{"error", error_name(e)}, {"message", e.what()}}.dump() << "\n";
        return classify_exit(e);
    } catch (const std::exception& e) {
        std::cerr << json{{"error", "InternalError"}, {"message", e.what()}}.dump() << "\n";
        return 3;
    }
}
