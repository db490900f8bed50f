// toib: synthetic multi-user semantic-communication training and evaluation.
//
// Subcommands: gen-data, train, eval, sweep, cross-decode, export-latents,
// gradcheck, mi-check. Exit codes: 0 success, 1 runtime/check failure,
// 2 usage error.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "toib/config.hpp"
#include "toib/gradcheck.hpp"
#include "toib/toib.hpp"

namespace fs = std::filesystem;
using namespace toib;

namespace {

// Every config key is also a CLI flag; flags given on the command line
// override file values.
const std::vector<std::string> kConfigKeys = {
    "name",       "seed",      "data_dir",  "out_root",   "users",     "epochs",     "batch",
    "resamples",  "club_steps", "alpha",    "beta",       "lr",        "club_lr",    "latent_dim",
    "channel",    "snr_db",    "pmax",      "power",      "phase_a",   "label_mode", "equalize",
    "classes",    "input_dim", "samples",   "sep",        "noise",     "n_eval",     "sweep_snrs",
    "cross_snr_db", "latent_mean"};

struct CommonArgs {
    std::string config_path;
    std::vector<std::pair<std::string, std::string>> overrides;
};

void attach_config_options(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("--config", args.config_path, "key = value config file");
    for (const auto& key : kConfigKeys) {
        cmd->add_option_function<std::string>(
            "--" + key, [&args, key](const std::string& v) { args.overrides.emplace_back(key, v); },
            "override config key " + key);
    }
}

Config load_config(const CommonArgs& args) { return resolve_config(args.config_path, args.overrides); }

std::string run_dir(const Config& cfg) { return cfg.out_root + "/" + cfg.name; }

std::string dataset_path(const Config& cfg, size_t user, bool eval_split) {
    return cfg.data_dir + "/user" + std::to_string(user) + (eval_split ? "_eval" : "") + ".toibdata";
}

std::vector<Dataset> load_datasets(const Config& cfg, bool eval_split) {
    std::vector<Dataset> out;
    for (size_t u = 0; u < cfg.users; ++u) out.push_back(load_dataset(dataset_path(cfg, u, eval_split)));
    return out;
}

void echo_config(const Config& cfg, const std::string& dir) {
    fs::create_directories(dir);
    write_config_echo(cfg, dir + "/config.resolved");
}

int cmd_gen_data(const CommonArgs& args) {
    const Config cfg = load_config(args);
    const GenSpec spec = to_gen_spec(cfg);
    Rng rng(spec.seed);
    const SplitDatasets data = gen_synthetic_split(spec, cfg.n_eval, rng);
    fs::create_directories(cfg.data_dir);
    for (size_t u = 0; u < cfg.users; ++u) {
        save_dataset(data.train[u], dataset_path(cfg, u, false));
        save_dataset(data.eval[u], dataset_path(cfg, u, true));
    }
    echo_config(cfg, cfg.data_dir);
    std::cout << "wrote " << cfg.users << " train+eval dataset pairs under " << cfg.data_dir << "\n";
    return 0;
}

int cmd_train(const CommonArgs& args) {
    const Config cfg = load_config(args);
    const TrainConfig tcfg = to_train_config(cfg);
    const auto datasets = load_datasets(cfg, false);

    RunState st = init_run(tcfg, datasets.front().d_x, datasets.front().k);
    const auto history = train(st, datasets);

    const std::string dir = run_dir(cfg);
    echo_config(cfg, dir);
    write_metrics_csv(history, dir + "/metrics.csv");
    checkpoint_save(st, dir + "/checkpoint.bin");

    if (!history.empty()) {
        const auto& last = history.back();
        std::cout << "trained " << cfg.epochs << " epochs ";
        for (size_t u = 0; u < last.acc.size(); ++u)
            std::cout << " user" << u << ": acc=" << fmt_g17(last.acc[u]) << " ce=" << fmt_g17(last.ce[u]);
        std::cout << "\n";
    }
    std::cout << "outputs in " << dir << "\n";
    return 0;
}

RunState load_run(const Config& cfg, const std::vector<Dataset>& datasets) {
    const TrainConfig tcfg = to_train_config(cfg);
    return checkpoint_load(run_dir(cfg) + "/checkpoint.bin", tcfg, datasets.front().d_x,
                           datasets.front().k);
}

int cmd_sweep(const CommonArgs& args, bool single_point) {
    const Config cfg = load_config(args);
    const auto datasets = load_datasets(cfg, true);
    const RunState st = load_run(cfg, datasets);
    EvalOptions opt = to_eval_options(cfg);
    opt.label_mode = LabelMode::shared;
    const std::vector<double> snrs = single_point ? std::vector<double>{cfg.snr_db} : cfg.sweep_snrs;

    const SweepResult res = sweep_snr(st, datasets, snrs, opt, cfg.seed);
    const std::string dir = run_dir(cfg);
    echo_config(cfg, dir);
    write_sweep_csv(res, dir + "/sweep.csv");
    for (size_t s = 0; s < res.snr_db.size(); ++s)
        for (size_t u = 0; u < res.per_snr[s].accuracy.size(); ++u)
            std::cout << "snr " << res.snr_db[s] << " dB  user" << u
                      << "  acc=" << fmt_g17(res.per_snr[s].accuracy[u])
                      << "  ce=" << fmt_g17(res.per_snr[s].ce[u]) << "\n";
    return 0;
}

int cmd_cross_decode(const CommonArgs& args) {
    const Config cfg = load_config(args);
    const auto datasets = load_datasets(cfg, true);
    const RunState st = load_run(cfg, datasets);
    EvalOptions opt = to_eval_options(cfg);
    opt.label_mode = LabelMode::independent;
    Rng rng = Rng(cfg.seed).substream("cross_decode");
    const CrossDecodeMatrix m = cross_decode(st, datasets, cfg.cross_snr_db, opt, rng);
    const std::string dir = run_dir(cfg);
    echo_config(cfg, dir);
    write_crossdecode_csv(m, dir + "/crossdecode.csv");
    for (size_t i = 0; i < m.n; ++i)
        for (size_t j = 0; j < m.n; ++j)
            std::cout << "decoder" << i << " -> u" << j << ": " << fmt_g17(m.at(i, j)) << "\n";
    return 0;
}

int cmd_export_latents(const CommonArgs& args) {
    const Config cfg = load_config(args);
    const auto datasets = load_datasets(cfg, true);
    const RunState st = load_run(cfg, datasets);
    Rng rng = Rng(cfg.seed).substream("latents");
    const std::string dir = run_dir(cfg);
    echo_config(cfg, dir);
    export_latents(st, datasets, std::min(cfg.n_eval, datasets.front().n), dir + "/latents.csv", rng);
    std::cout << "latents in " << dir << "/latents.csv\n";
    return 0;
}

int cmd_gradcheck() {
    const GradCheckReport rep = run_gradcheck();
    std::printf("%-22s %12s %10s  %s\n", "op", "max_rel_err", "tolerance", "status");
    for (const auto& r : rep.rows)
        std::printf("%-22s %12.3e %10.0e  %s\n", r.name.c_str(), r.max_rel, r.tolerance,
                    r.pass ? "ok" : "FAIL");
    return rep.all_pass() ? 0 : 1;
}

int cmd_mi_check(double rho, size_t d, size_t steps, const std::string& mode, uint64_t seed) {
    MiCheckOptions opt;
    opt.rho = rho;
    opt.d = d;
    if (steps > 0) opt.train_steps = steps;
    opt.seed = seed;
    if (mode == "vclub_ascent")
        opt.mode = PhaseAMode::vclub_ascent;
    else if (mode != "mle")
        throw ContractError("mi-check mode must be mle or vclub_ascent");

    const MiCheckResult res = club_mi_check(opt);
    const double tol = std::max(0.1, 0.10 * res.oracle);
    std::printf("rho=%g d=%zu mode=%s\n", rho, d, mode.c_str());
    std::printf("  true MI             %.4f nats\n", res.oracle);
    std::printf("  CLUB value at opt q %.4f nats\n", res.club_value);
    std::printf("  vCLUB estimate      %.4f +- %.4f (stderr, %zu batches)\n", res.estimate, res.stderr_,
                res.per_batch.size());
    const bool within = std::abs(res.estimate - res.oracle) <= tol;
    const bool bound_ok = res.estimate >= res.oracle - 2.0 * res.stderr_;
    std::printf("  |estimate - MI| <= max(0.1, 10%%): %s\n", within ? "yes" : "NO");
    std::printf("  estimate >= MI - 2*stderr:        %s\n", bound_ok ? "yes" : "NO");
    return (within && bound_ok) ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"task-oriented orthogonalised information bottleneck, desk scale"};
    app.require_subcommand(1);

    CommonArgs gen_args, train_args, eval_args, sweep_args, cross_args, latent_args;
    attach_config_options(app.add_subcommand("gen-data", "generate synthetic datasets"), gen_args);
    attach_config_options(app.add_subcommand("train", "run the two-phase training loop"), train_args);
    attach_config_options(app.add_subcommand("eval", "evaluate accuracy at snr_db"), eval_args);
    attach_config_options(app.add_subcommand("sweep", "accuracy versus SNR sweep"), sweep_args);
    attach_config_options(app.add_subcommand("cross-decode", "cross-decoding accuracy matrix"), cross_args);
    attach_config_options(app.add_subcommand("export-latents", "dump encoder means as CSV"), latent_args);

    app.add_subcommand("gradcheck", "finite-difference check of every op and the full pipeline");

    auto* mi = app.add_subcommand("mi-check", "CLUB estimator versus the Gaussian MI oracle");
    double mi_rho = 0.8;
    size_t mi_d = 4;
    size_t mi_steps = 0;
    std::string mi_mode = "mle";
    uint64_t mi_seed = 7;
    mi->add_option("--rho", mi_rho, "per-dimension correlation, |rho| < 1");
    mi->add_option("--d", mi_d, "latent dimensions");
    mi->add_option("--steps", mi_steps, "training steps (0 = default)");
    mi->add_option("--mode", mi_mode, "mle or vclub_ascent");
    mi->add_option("--seed", mi_seed, "rng seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << e.what() << "\n\n" << app.help() << "\n";
        return 2;
    }

    try {
        if (app.got_subcommand("gen-data")) return cmd_gen_data(gen_args);
        if (app.got_subcommand("train")) return cmd_train(train_args);
        if (app.got_subcommand("eval")) return cmd_sweep(eval_args, true);
        if (app.got_subcommand("sweep")) return cmd_sweep(sweep_args, false);
        if (app.got_subcommand("cross-decode")) return cmd_cross_decode(cross_args);
        if (app.got_subcommand("export-latents")) return cmd_export_latents(latent_args);
        if (app.got_subcommand("gradcheck")) return cmd_gradcheck();
        if (app.got_subcommand("mi-check")) return cmd_mi_check(mi_rho, mi_d, mi_steps, mi_mode, mi_seed);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
