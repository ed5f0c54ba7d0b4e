// mcddpm: phantom dataset generation, training, inference, and evaluation.

#include <CLI11.hpp>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>

#include "mcddpm/checkpoint.hpp"
#include "mcddpm/data_io.hpp"
#include "mcddpm/errors.hpp"
#include "mcddpm/evaluate.hpp"
#include "mcddpm/inference.hpp"
#include "mcddpm/metrics.hpp"
#include "mcddpm/phantom.hpp"
#include "mcddpm/runconfig.hpp"
#include "mcddpm/training.hpp"

namespace fs = std::filesystem;
using namespace mcddpm;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitArgs = 2;
constexpr int kExitData = 3;
constexpr int kExitNumerical = 4;

fs::path resolve_out(const std::string& out) {
    fs::path p(out);
    if (p.is_relative()) {
        if (const char* root = std::getenv("MCDDPM_OUTPUT_ROOT")) return fs::path(root) / p;
    }
    return p;
}

void prepare_out_dir(const fs::path& dir, bool force) {
    if (fs::exists(dir) && !fs::is_empty(dir) && !force)
        throw std::invalid_argument("output directory exists and is not empty (use --force): " +
                                    dir.string());
    fs::create_directories(dir);
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw data_error("cannot write " + path.string());
    out << text;
}

struct CommonOverrides {
    std::vector<std::string> sets;

    std::map<std::string, std::string> to_map() const {
        std::map<std::string, std::string> kv;
        for (const auto& s : sets) {
            const auto eq = s.find('=');
            if (eq == std::string::npos)
                throw std::invalid_argument("--set expects key=value, got '" + s + "'");
            kv[s.substr(0, eq)] = s.substr(eq + 1);
        }
        return kv;
    }
};

RunConfig assemble_config(const std::string& config_path,
                          const std::map<std::string, std::string>& flag_overrides) {
    RunConfig cfg;
    if (!config_path.empty()) cfg.apply(read_key_value_file(config_path));
    cfg.apply(flag_overrides);  // flags win
    return cfg;
}

// ---- phantom ---------------------------------------------------------------

int cmd_phantom(const PhantomSpec& spec, const std::string& out, bool force) {
    const fs::path dir = resolve_out(out);
    prepare_out_dir(dir, force);
    fs::create_directories(dir / "volumes");

    const auto records = generate_phantom_dataset(spec);
    std::vector<ManifestEntry> rows;
    for (const auto& rec : records) {
        const std::string vpath = "volumes/" + rec.subject_id;
        write_volume(dir / vpath, rec.volume);
        ManifestEntry row{rec.subject_id, rec.split, vpath, ""};
        if (rec.ground_truth) {
            row.ground_truth_path = "volumes/" + rec.subject_id + "_gt";
            write_mask(dir / row.ground_truth_path, *rec.ground_truth);
        }
        rows.push_back(row);
    }
    write_manifest(dir / "manifest.csv", rows);

    std::map<std::string, std::string> meta;
    meta["h"] = std::to_string(spec.h);
    meta["w"] = std::to_string(spec.w);
    meta["d"] = std::to_string(spec.d);
    meta["train_volumes"] = std::to_string(spec.train_volumes);
    meta["val_volumes"] = std::to_string(spec.val_volumes);
    meta["test_volumes"] = std::to_string(spec.test_volumes);
    meta["test_healthy"] = std::to_string(spec.test_healthy);
    meta["seed"] = std::to_string(spec.seed);
    std::string text;
    for (const auto& [k, v] : meta) text += k + "=" + v + "\n";
    write_text(dir / "phantom.config", text);

    std::cout << "wrote " << records.size() << " volumes to " << dir.string() << " (prevalence "
              << anomaly_prevalence(records) << ")\n";
    return kExitOk;
}

// ---- train -----------------------------------------------------------------

int cmd_train(const std::string& data, const std::string& out, const RunConfig& cfg,
              const std::string& resume, bool force) {
    const fs::path dir = resolve_out(out);
    prepare_out_dir(dir, force);

    const auto dataset = load_dataset(data);

    std::unique_ptr<ModelF> model;
    std::unique_ptr<nn::Adam<float>> resumed_adam;
    int first_epoch = 1;
    if (!resume.empty()) {
        auto lc = load_checkpoint(resume);
        model = std::move(lc.model);
        resumed_adam = std::move(lc.adam);
        first_epoch = lc.meta.epoch + 1;
        std::cout << "resuming from " << resume << " at epoch " << first_epoch << "\n";
    } else {
        model = std::make_unique<ModelF>(cfg.model, derive_seed(cfg.train.seed, "init"));
    }

    Trainer trainer(*model, cfg.train);
    if (resumed_adam) trainer.optimizer() = *resumed_adam;

    const std::string snapshot = cfg.to_key_value();
    write_text(dir / "config.snapshot", snapshot);

    std::ofstream metrics(dir / "metrics.csv", std::ios::binary);
    metrics << "epoch,train_loss,val_recon_error\n";
    metrics.flush();

    CheckpointMeta meta;
    meta.model = model->config();
    meta.config_snapshot = snapshot;
    meta.T = cfg.train.T;

    auto save_periodic = [&](const EpochRow& row) {
        char buf[96];
        if (row.val_error >= 0.0)
            std::snprintf(buf, sizeof(buf), "%d,%.9g,%.9g\n", row.epoch, row.train_loss,
                          row.val_error);
        else
            std::snprintf(buf, sizeof(buf), "%d,%.9g,\n", row.epoch, row.train_loss);
        metrics << buf;
        metrics.flush();
        if (cfg.train.checkpoint_every > 0 && row.epoch % cfg.train.checkpoint_every == 0) {
            meta.epoch = row.epoch;
            meta.val_error = row.val_error;
            save_checkpoint(dir / "checkpoint_last.mckp", *model, meta, &trainer.optimizer());
        }
    };

    const FitResult res = trainer.fit(dataset, save_periodic, first_epoch);

    meta.epoch = cfg.train.max_epochs;
    meta.val_error = res.final_val_error;
    save_checkpoint(dir / "checkpoint_last.mckp", *model, meta, &trainer.optimizer());

    apply_params(*model, res.best_params);
    meta.epoch = res.best_epoch;
    meta.val_error = res.best_val_error;
    save_checkpoint(dir / "checkpoint_best.mckp", *model, meta);

    std::cout << "trained " << res.metrics.size() << " epochs; best epoch " << res.best_epoch
              << " (val " << res.best_val_error << ")\n"
              << "checkpoints: " << (dir / "checkpoint_best.mckp").string() << ", "
              << (dir / "checkpoint_last.mckp").string() << "\n";
    return kExitOk;
}

// ---- eval / infer ----------------------------------------------------------

std::vector<const VolumeRecord*> pick_split(const std::vector<VolumeRecord>& records,
                                            const std::string& split) {
    auto sel = select_split(records, parse_split(split));
    if (sel.empty()) throw data_error("no volumes in split '" + split + "'");
    return sel;
}

void export_volume_eval(const fs::path& dir, const DatasetEval& ev) {
    fs::create_directories(dir);
    for (const auto& ve : ev.volumes) {
        write_volume(dir / (ve.subject_id + "_recon"), ve.reconstruction);
        write_volume(dir / (ve.subject_id + "_anomaly"), ve.filtered.data);
        write_mask(dir / (ve.subject_id + "_seg"), ve.segmentation);
    }
}

int cmd_eval(const std::string& checkpoint, const std::string& data, const std::string& out,
             const RunConfig& cfg, const std::string& split, bool theta_sweep,
             bool export_volumes, bool force) {
    const fs::path dir = resolve_out(out);
    prepare_out_dir(dir, force);

    auto lc = load_checkpoint(checkpoint);
    const auto records = load_dataset(data);
    const auto sel = pick_split(records, split);
    const auto schedule = make_linear_schedule(lc.meta.T);

    EvalConfig ec;
    ec.inference.t_test = cfg.train.t_test;
    ec.inference.seed = derive_seed(cfg.train.seed, "eval");
    ec.inference.independent_latent_noise = cfg.train.independent_latent_noise;
    ec.inference.repeats = cfg.train.repeats;
    ec.post = cfg.post;
    ec.p_norm = cfg.train.p_norm;

    std::vector<float> thetas;
    if (theta_sweep)
        thetas = {0.1f, 0.2f, 0.3f, 0.4f, 0.5f};
    else
        thetas = {cfg.post.theta};

    EvalReport report;
    const std::string ckpt_id = fs::path(checkpoint).filename().string();
    for (float theta : thetas) {
        ec.post.theta = theta;
        const bool keep = export_volumes && theta == thetas.front();
        const auto ev = evaluate_dataset(*lc.model, schedule, sel, ec, split, ckpt_id, keep);
        report.rows.push_back(ev.row);
        if (keep) export_volume_eval(dir / "volumes", ev);
    }

    write_text(dir / "report.csv", report.to_csv());
    write_text(dir / "report.txt", report.to_table());
    std::cout << report.to_table();
    return kExitOk;
}

int cmd_infer(const std::string& checkpoint, const std::string& data, const std::string& out,
              const RunConfig& cfg, const std::string& split, bool force) {
    const fs::path dir = resolve_out(out);
    prepare_out_dir(dir, force);

    auto lc = load_checkpoint(checkpoint);
    const auto records = load_dataset(data);
    const auto sel = pick_split(records, split);
    const auto schedule = make_linear_schedule(lc.meta.T);

    InferenceConfig ic;
    ic.t_test = cfg.train.t_test;
    ic.seed = derive_seed(cfg.train.seed, "eval");
    ic.independent_latent_noise = cfg.train.independent_latent_noise;
    ic.repeats = cfg.train.repeats;

    for (const auto* rec : sel) {
        const Volume recon = reconstruct_volume(*lc.model, schedule, rec->volume, ic);
        const AnomalyMap res = residual_map(rec->volume, recon, cfg.train.p_norm);
        write_volume(dir / (rec->subject_id + "_recon"), recon);
        write_volume(dir / (rec->subject_id + "_anomaly"), res.data);
    }
    std::cout << "reconstructed " << sel.size() << " volumes into " << dir.string() << "\n";
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"MCDDPM: conditional diffusion reconstruction for unsupervised anomaly "
                 "detection at desk scale"};
    app.require_subcommand(1);

    // phantom
    auto* ph = app.add_subcommand("phantom", "generate a synthetic phantom dataset");
    PhantomSpec spec;
    std::string ph_out;
    bool ph_force = false;
    int ph_anomalies_min = spec.anomalies_min, ph_anomalies_max = spec.anomalies_max;
    ph->add_option("--out", ph_out, "output directory")->required();
    ph->add_option("--seed", spec.seed, "generator seed");
    ph->add_option("--size", spec.h, "in-plane size (slices are size x size)");
    ph->add_option("--slices", spec.d, "slices per volume");
    ph->add_option("--train-volumes", spec.train_volumes);
    ph->add_option("--val-volumes", spec.val_volumes);
    ph->add_option("--test-volumes", spec.test_volumes);
    ph->add_option("--test-healthy", spec.test_healthy);
    ph->add_option("--anomalies-min", ph_anomalies_min);
    ph->add_option("--anomalies", ph_anomalies_max, "maximum anomalies per unhealthy volume");
    ph->add_flag("--force", ph_force, "overwrite a non-empty output directory");

    // shared config plumbing for train/eval/infer
    std::string config_path;
    CommonOverrides overrides;

    auto add_config_opts = [&](CLI::App* cmd) {
        cmd->add_option("--config", config_path, "key=value configuration file");
        cmd->add_option("--set", overrides.sets, "override a config key (key=value, repeatable)");
    };

    // train
    auto* tr = app.add_subcommand("train", "train on a dataset manifest");
    std::string tr_data, tr_out, tr_resume;
    bool tr_force = false;
    double tr_lambda = -1.0, tr_lr = -1.0;
    int tr_p = 0, tr_epochs = -1, tr_batch = 0, tr_threads = -1, tr_validate_every = 0,
        tr_checkpoint_every = -1;
    long long tr_seed = -1;
    std::string tr_ablation, tr_patches;
    tr->add_option("--data", tr_data, "dataset manifest")->required();
    tr->add_option("--out", tr_out, "run directory")->required();
    add_config_opts(tr);
    tr->add_option("--resume", tr_resume, "checkpoint to resume from");
    tr->add_option("--ablation", tr_ablation, "full | no_bridge | no_conditioning");
    tr->add_option("--lambda", tr_lambda, "bridge loss weight");
    tr->add_option("--p", tr_p, "loss norm (1 or 2)");
    tr->add_option("--max-epochs", tr_epochs);
    tr->add_option("--lr", tr_lr);
    tr->add_option("--batch-size", tr_batch);
    tr->add_option("--seed", tr_seed);
    tr->add_option("--threads", tr_threads);
    tr->add_option("--patch-sizes", tr_patches, "e.g. 48x48 or 48x48,32x32");
    tr->add_option("--validate-every", tr_validate_every);
    tr->add_option("--checkpoint-every", tr_checkpoint_every);
    tr->add_flag("--force", tr_force);

    // eval
    auto* ev = app.add_subcommand("eval", "reconstruct, post-process, and score a split");
    std::string ev_ckpt, ev_data, ev_out, ev_split = "test";
    bool ev_sweep = false, ev_export = false, ev_force = false;
    double ev_theta = -1.0;
    int ev_p = 0;
    ev->add_option("--checkpoint", ev_ckpt)->required();
    ev->add_option("--data", ev_data)->required();
    ev->add_option("--out", ev_out)->required();
    add_config_opts(ev);
    ev->add_option("--split", ev_split, "train | val | test");
    ev->add_option("--theta", ev_theta, "binarization threshold");
    ev->add_option("--p", ev_p, "residual norm (1 or 2)");
    ev->add_flag("--theta-sweep", ev_sweep, "evaluate thetas {0.1..0.5}");
    ev->add_flag("--export-volumes", ev_export, "write reconstructions and maps");
    ev->add_flag("--force", ev_force);

    // infer
    auto* in = app.add_subcommand("infer", "reconstruct a split and export residual maps");
    std::string in_ckpt, in_data, in_out, in_split = "test";
    bool in_force = false;
    in->add_option("--checkpoint", in_ckpt)->required();
    in->add_option("--data", in_data)->required();
    in->add_option("--out", in_out)->required();
    add_config_opts(in);
    in->add_option("--split", in_split);
    in->add_flag("--force", in_force);

    CLI11_PARSE(app, argc, argv);

    try {
        if (ph->parsed()) {
            spec.w = spec.h;
            spec.anomalies_min = ph_anomalies_min;
            spec.anomalies_max = ph_anomalies_max;
            if (spec.anomalies_max == 0) {
                // zero anomalies: keep the test split healthy
                spec.test_healthy = spec.test_volumes;
                spec.anomalies_min = 0;
            }
            return cmd_phantom(spec, ph_out, ph_force);
        }

        auto kv = overrides.to_map();
        auto fmt = [](double v) {
            char buf[48];
            std::snprintf(buf, sizeof(buf), "%.17g", v);
            return std::string(buf);
        };
        if (tr->parsed()) {
            if (tr->count("--ablation")) kv["ablation"] = tr_ablation;
            if (tr->count("--lambda")) kv["lambda"] = fmt(tr_lambda);
            if (tr->count("--p")) kv["p"] = std::to_string(tr_p);
            if (tr->count("--max-epochs")) kv["max_epochs"] = std::to_string(tr_epochs);
            if (tr->count("--lr")) kv["lr"] = fmt(tr_lr);
            if (tr->count("--batch-size")) kv["batch_size"] = std::to_string(tr_batch);
            if (tr->count("--seed")) kv["seed"] = std::to_string(tr_seed);
            if (tr->count("--threads")) kv["threads"] = std::to_string(tr_threads);
            if (tr->count("--patch-sizes")) kv["patch_sizes"] = tr_patches;
            if (tr->count("--validate-every"))
                kv["validate_every"] = std::to_string(tr_validate_every);
            if (tr->count("--checkpoint-every"))
                kv["checkpoint_every"] = std::to_string(tr_checkpoint_every);
            const RunConfig cfg = assemble_config(config_path, kv);
            cfg.train.validate();
            return cmd_train(tr_data, tr_out, cfg, tr_resume, tr_force);
        }
        if (ev->parsed()) {
            if (ev->count("--theta")) kv["theta"] = fmt(ev_theta);
            if (ev->count("--p")) kv["p"] = std::to_string(ev_p);
            const RunConfig cfg = assemble_config(config_path, kv);
            return cmd_eval(ev_ckpt, ev_data, ev_out, cfg, ev_split, ev_sweep, ev_export,
                            ev_force);
        }
        if (in->parsed()) {
            const RunConfig cfg = assemble_config(config_path, kv);
            return cmd_infer(in_ckpt, in_data, in_out, cfg, in_split, in_force);
        }
    } catch (const numerical_error& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return kExitNumerical;
    } catch (const data_error& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kExitData;
    } catch (const checkpoint_error& e) {
        std::cerr << "checkpoint error: " << e.what() << "\n";
        return kExitData;
    } catch (const std::invalid_argument& e) {
        std::cerr << "argument error: " << e.what() << "\n";
        return kExitArgs;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return kExitOk;
}
