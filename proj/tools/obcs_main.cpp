// obcs: blind one-bit compressive sensing toolkit.
//
// Subcommands: datagen, train, eval, reproduce, inspect. All heavy lifting
// lives in the headers under include/obcs; this file is argument plumbing.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <thread>

#include "CLI11.hpp"
#include "obcs/run_config.hpp"
#include "obcs/svg.hpp"

namespace fs = std::filesystem;
using namespace obcs;

namespace {

struct GlobalFlags {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out;
    std::optional<std::size_t> threads;
    bool deterministic = false;
};

RunConfig load_config_with_overrides(const GlobalFlags& flags) {
    RunConfig rc = flags.config_path.empty() ? parse_run_config(KvDoc{}, fs::path("."))
                                             : load_run_config(flags.config_path);
    if (flags.seed) {
        rc.seed = *flags.seed;
        rc.gen.seed = *flags.seed;
        rc.stage1.seed = *flags.seed;
        rc.stage2.seed = *flags.seed;
    }
    if (flags.out) rc.out_dir = *flags.out;
    if (flags.threads) rc.threads = *flags.threads;
    if (flags.deterministic) rc.deterministic = true;
    if (rc.threads == 0) rc.threads = std::max(1u, std::thread::hardware_concurrency());
    if (rc.deterministic) {
        rc.stage1.deterministic_reduction = true;
        rc.stage2.deterministic_reduction = true;
    }
    return rc;
}

void add_global_flags(CLI::App* cmd, GlobalFlags& flags, bool config_required) {
    auto* opt = cmd->add_option("--config", flags.config_path, "run configuration file");
    if (config_required) opt->required();
    cmd->add_option("--seed", flags.seed, "override the configured seed");
    cmd->add_option("--out", flags.out, "output directory");
    cmd->add_option("--threads", flags.threads, "worker threads (0 = all cores)");
    cmd->add_flag("--deterministic", flags.deterministic, "force deterministic reduction order");
}

std::string dataset_meta_text(const GenConfig& cfg) {
    KvDoc doc;
    gen_config_to_kv(cfg, doc);
    return doc.dump();
}

int cmd_datagen(const GlobalFlags& flags) {
    const RunConfig rc = load_config_with_overrides(flags);
    const Dataset ds = gen_dataset(rc.gen);
    const fs::path dir = rc.out_dir;
    save_dataset(dir, ds);
    std::cout << digest_hex(dataset_digest(dir)) << "\n";
    return 0;
}

int cmd_train(const GlobalFlags& flags, int stage, const std::string& data_dir,
              const std::string& init_ckpt) {
    RunConfig rc = load_config_with_overrides(flags);
    const Dataset ds = load_dataset(data_dir);
    const TrainingSet data = training_view(ds);
    const fs::path out_dir = rc.out_dir;
    std::error_code ec;
    fs::create_directories(out_dir, ec);

    TrainedModel model;
    if (stage == 1) {
        model = train_stage1(data, rc.stage1);
    } else {
        if (init_ckpt.empty())
            throw ConfigError("train --stage 2 requires --init <stage-1 checkpoint>");
        const TrainedModel stage1 = load_checkpoint(init_ckpt);
        if (stage1.params.m() != data.m || stage1.params.n() != data.n)
            throw ConfigError("--init checkpoint shape does not match the dataset");
        rc.stage2.depth = stage1.depth_stage1;
        if (rc.stage2.depth_prime > rc.stage2.depth) rc.stage2.depth_prime = rc.stage2.depth;
        model = train_stage2(data, stage1.params.phi, rc.stage2);
    }
    model.dataset_meta = dataset_meta_text(ds.config);
    const fs::path ckpt = out_dir / (stage == 1 ? "stage1.ckpt" : "stage2.ckpt");
    save_checkpoint(ckpt, model);
    std::cout << "checkpoint=" << ckpt.string() << "\n";
    std::cout << "final_loss=" << fmt_double(model.loss_history.back()) << "\n";
    return 0;
}

int cmd_eval(const GlobalFlags& flags, const std::string& model_path,
             const std::string& data_dir) {
    const RunConfig rc = load_config_with_overrides(flags);
    const TrainedModel model = load_checkpoint(model_path);
    const Dataset ds = load_dataset(data_dir);
    if (model.params.n() != ds.config.n || model.params.m() != ds.config.m)
        throw ConfigError("model and dataset shapes disagree");

    const std::size_t depth = model.depth_inference;
    const DenseVector x0(ds.config.n, 0.0);
    std::vector<double> per_layer(depth, 0.0);
    for (std::size_t i = 0; i < ds.size(); ++i) {
        const ForwardPass pass = network_forward(model.params, x0, ds.measurements[i], depth);
        for (std::size_t l = 0; l < depth; ++l)
            per_layer[l] += nmse(pass.outputs[l], ds.signals[i].values);
    }
    for (double& v : per_layer) v /= static_cast<double>(ds.size());
    for (std::size_t l = 0; l < depth; ++l)
        std::cout << "layer " << (l + 1) << " mean_nmse " << fmt_double(per_layer[l]) << "\n";
    std::cout << "mean_nmse=" << fmt_double(per_layer.back()) << "\n";

    if (flags.out) {
        std::string csv = "axis,method,mean_nmse,realizations\n";
        for (std::size_t l = 0; l < depth; ++l)
            csv += std::to_string(l + 1) + ",unfolded," + fmt_double(per_layer[l]) + ",1\n";
        const fs::path dir = *flags.out;
        std::error_code ec;
        fs::create_directories(dir, ec);
        write_file(dir / "eval.csv", csv);
    }
    return 0;
}

void export_experiment(const ExperimentResult& result, const fs::path& dir,
                       const std::string& stem, const std::string& title,
                       const std::string& x_label) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create output directory: " + dir.string());
    write_file(dir / (stem + "_mean.csv"), experiment_mean_csv(result));
    write_file(dir / (stem + "_raw.csv"), experiment_raw_csv(result));
    std::vector<SvgSeries> series;
    for (std::size_t m = 0; m < result.methods.size(); ++m)
        series.push_back({result.methods[m], result.axis, result.mean_nmse[m]});
    write_file(dir / (stem + ".svg"), render_line_chart(title, x_label, "mean NMSE", series));
}

int cmd_reproduce(const GlobalFlags& flags, const std::string& figure) {
    const RunConfig rc = load_config_with_overrides(flags);
    ExperimentConfig ec = experiment_config(rc);
    ec.threads = rc.threads;
    const fs::path dir = rc.out_dir;
    if (figure == "fig1") {
        ExperimentResult result = layerwise_experiment(ec, rc.exp_realizations);
        result.config_snapshot = rc.snapshot;
        export_experiment(result, dir, "fig1", "Recovery error per layer/iteration",
                          "layer / iteration");
    } else {
        ExperimentResult result = sparsity_sweep(ec, rc.exp_k_values, rc.exp_realizations);
        result.config_snapshot = rc.snapshot;
        export_experiment(result, dir, "fig2", "Recovery error vs. sparsity level", "sparsity K");
    }
    std::cout << "wrote " << (dir / (figure + "_mean.csv")).string() << "\n";
    return 0;
}

int cmd_inspect(const std::string& path) {
    const TrainedModel model = load_checkpoint(path);
    std::cout << "m = " << model.params.m() << "\n"
              << "n = " << model.params.n() << "\n"
              << "L = " << model.depth_stage1 << "\n"
              << "L_prime = " << model.depth_inference << "\n"
              << "k = " << model.params.sparsity << "\n"
              << "normalize_per_layer = " << (model.params.normalize_per_layer ? "true" : "false")
              << "\n"
              << "ste_clip = " << fmt_double(model.params.ste_clip) << "\n"
              << "stage = " << model.config.stage << "\n"
              << "epochs = " << model.loss_history.size() << "\n";
    std::cout << "step_sizes =";
    for (double a : model.params.step_sizes) std::cout << " " << fmt_double(a);
    std::cout << "\n";
    if (!model.loss_history.empty())
        std::cout << "first_epoch_loss = " << fmt_double(model.loss_history.front()) << "\n"
                  << "last_epoch_loss = " << fmt_double(model.loss_history.back()) << "\n";
    const KvDoc meta = KvDoc::parse(model.dataset_meta);
    for (const auto& [k, v] : meta.entries()) {
        if (v.size() <= 40)
            std::cout << "dataset." << k << " = " << v << "\n";
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"blind one-bit compressive sensing: unfolded recovery network and BIHT baseline"};
    app.require_subcommand(1);

    GlobalFlags gen_flags;
    auto* datagen = app.add_subcommand("datagen", "generate a synthetic dataset directory");
    add_global_flags(datagen, gen_flags, /*config_required=*/true);

    GlobalFlags train_flags;
    int stage = 1;
    std::string data_dir, init_ckpt;
    auto* train = app.add_subcommand("train", "train the recovery network on a dataset");
    add_global_flags(train, train_flags, true);
    train->add_option("--stage", stage, "training stage")->check(CLI::Range(1, 2))->required();
    train->add_option("--data", data_dir, "dataset directory")->required();
    train->add_option("--init", init_ckpt, "stage-1 checkpoint (required for stage 2)");

    GlobalFlags eval_flags;
    std::string model_path, eval_data;
    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
    add_global_flags(eval, eval_flags, false);
    eval->add_option("--model", model_path, "model checkpoint")->required();
    eval->add_option("--data", eval_data, "dataset directory")->required();

    GlobalFlags rep_flags;
    std::string figure;
    auto* reproduce = app.add_subcommand("reproduce", "run a full experiment and export CSV/SVG");
    add_global_flags(reproduce, rep_flags, true);
    reproduce->add_option("figure", figure, "which experiment: fig1 or fig2")
        ->check(CLI::IsMember({"fig1", "fig2"}))
        ->required();

    std::string inspect_path;
    auto* inspect = app.add_subcommand("inspect", "print checkpoint summary");
    inspect->add_option("checkpoint", inspect_path, "checkpoint file")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (datagen->parsed()) return cmd_datagen(gen_flags);
        if (train->parsed()) return cmd_train(train_flags, stage, data_dir, init_ckpt);
        if (eval->parsed()) return cmd_eval(eval_flags, model_path, eval_data);
        if (reproduce->parsed()) return cmd_reproduce(rep_flags, figure);
        if (inspect->parsed()) return cmd_inspect(inspect_path);
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const DivergenceDetected& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 4;
    } catch (const IoError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
    return 0;
}
