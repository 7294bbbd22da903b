#include "forgesem/cli.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "forgesem/eval.hpp"
#include "forgesem/image_io.hpp"
#include "forgesem/log.hpp"

using json = nlohmann::json;
namespace fs = std::filesystem;

namespace forgesem {

namespace {

struct Settings {
    std::string config;
    std::uint64_t seed = 1;
    std::string out = "out";

    CorpusSpec corpus;
    TrainConfig train;

    int stage = 1;
    std::string manifest;
    std::string held_manifest;
    std::string stage1_ckpt;
    std::string stage2_ckpt;
    std::string ckpt;
    std::string image_path;
    std::string report_in;
    std::string layer = kGradCamDefaultLayer;
    std::string hold_out = "splice_hue";
    int target_class = 0;
    int grid = 64;
    bool no_highfreq = false;
    bool no_mhfe = false;
    bool no_mhff = false;
};

std::vector<std::string> all_methods() {
    return {known_methods().begin(), known_methods().end()};
}

void apply_config_file(const std::string& path, Settings& s) {
    std::ifstream f(path);
    if (!f) throw io_error("cannot open config " + path);
    json j;
    try {
        j = json::parse(f);
    } catch (const json::exception& e) {
        throw contract_error("config " + path + ": " + e.what());
    }
    FORGESEM_CHECK(j.is_object(), "config: top level must be an object");
    for (const auto& [key, v] : j.items()) {
        try {
            if (key == "seed") s.seed = v.get<std::uint64_t>();
            else if (key == "out") s.out = v.get<std::string>();
            else if (key == "hold_out") s.hold_out = v.get<std::string>();
            else if (key == "image_size") s.corpus.image_size = v.get<int>();
            else if (key == "n_real") s.corpus.n_real = v.get<int>();
            else if (key == "n_fake_per_method") s.corpus.n_fake_per_method = v.get<int>();
            else if (key == "methods") s.corpus.methods = v.get<std::vector<std::string>>();
            else if (key == "train_frac") s.corpus.train_frac = v.get<double>();
            else if (key == "val_frac") s.corpus.val_frac = v.get<double>();
            else if (key == "test_frac") s.corpus.test_frac = v.get<double>();
            else if (key == "lr") s.train.lr = v.get<float>();
            else if (key == "batch") s.train.batch = v.get<int>();
            else if (key == "epochs") s.train.epochs = v.get<int>();
            else if (key == "sigma") s.train.sigma = v.get<float>();
            else if (key == "freeze_embedded") s.train.freeze_embedded = v.get<bool>();
            else if (key == "content_channels") s.train.model.content_channels = v.get<int>();
            else if (key == "forgery_channels") s.train.model.forgery_channels = v.get<int>();
            else if (key == "mhfe_levels") s.train.model.mhfe_levels = v.get<int>();
            else if (key == "use_highfreq") s.train.model.use_highfreq = v.get<bool>();
            else if (key == "use_mhfe") s.train.model.use_mhfe = v.get<bool>();
            else if (key == "use_mhff") s.train.model.use_mhff = v.get<bool>();
            else if (key == "weights") {
                auto& w = s.train.weights;
                for (const auto& [wk, wv] : v.items()) {
                    if (wk == "rho1") w.rho1 = wv.get<float>();
                    else if (wk == "rho2") w.rho2 = wv.get<float>();
                    else if (wk == "rho3") w.rho3 = wv.get<float>();
                    else if (wk == "rho4") w.rho4 = wv.get<float>();
                    else if (wk == "rho5") w.rho5 = wv.get<float>();
                    else if (wk == "rho6") w.rho6 = wv.get<float>();
                    else if (wk == "a") w.a = wv.get<float>();
                    else throw contract_error("config: unknown weight '" + wk + "'");
                }
            } else {
                throw contract_error("config: unknown key '" + key + "'");
            }
        } catch (const json::exception& e) {
            throw contract_error("config: bad value for '" + key + "': " + e.what());
        }
    }
}

void apply_ablations(const Settings& s, ModelConfig& m) {
    if (s.no_highfreq) m.use_highfreq = false;
    if (s.no_mhfe) m.use_mhfe = false;
    if (s.no_mhff) m.use_mhff = false;
}

std::string sanitized(const std::string& name) {
    std::string out = name;
    std::replace(out.begin(), out.end(), '.', '_');
    return out;
}

void make_out_dir(const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw io_error("cannot create " + dir + ": " + ec.message());
}

int do_gen_corpus(Settings& s) {
    s.corpus.seed = s.seed;
    if (s.corpus.methods.empty()) s.corpus.methods = all_methods();
    s.corpus.validate();
    CorpusManifest man = gen_corpus(s.corpus, s.out);
    std::printf("gen-corpus ok out=%s records=%zu methods=%zu\n", s.out.c_str(),
                man.records.size(), man.spec.methods.size());
    return 0;
}

int save_stage(const TrainResult& r, const Settings& s, int stage) {
    const std::string tag = "stage" + std::to_string(stage);
    save_checkpoint(r.checkpoint, s.out + "/" + tag + ".fsck");
    r.metrics.write_csv(s.out + "/metrics_" + tag + ".csv");
    const double total = r.metrics.epoch_mean(r.checkpoint.cfg.epochs, tag + ".total");
    std::printf("train ok stage=%d steps=%lld final_total=%.9g ckpt=%s\n", stage,
                static_cast<long long>(r.checkpoint.step), total,
                (s.out + "/" + tag + ".fsck").c_str());
    return 0;
}

// a non-finite loss still leaves a usable state behind
int save_aborted(const train_abort& e, const Settings& s, int stage) {
    const std::string path = s.out + "/stage" + std::to_string(stage) + ".last_good.fsck";
    save_checkpoint(e.last_good, path);
    std::fprintf(stderr, "train aborted: %s; last good state written to %s\n", e.what(),
                 path.c_str());
    return 4;
}

int do_train(Settings& s) {
    if (s.stage != 1 && s.stage != 2)
        throw contract_error("train: --stage must be 1 or 2");
    if (s.stage == 2 && s.stage1_ckpt.empty())
        throw contract_error("train: --stage 2 requires --stage1-ckpt (see train --help)");
    s.train.seed = s.seed;
    apply_ablations(s, s.train.model);
    s.train.validate();

    CorpusManifest man = read_manifest(s.manifest);
    make_out_dir(s.out);
    try {
        if (s.stage == 1) return save_stage(train_stage1(s.train, man), s, 1);
        Checkpoint prev = load_checkpoint(s.stage1_ckpt);
        return save_stage(train_stage2(s.train, man, prev), s, 2);
    } catch (const train_abort& e) {
        return save_aborted(e, s, s.stage);
    }
}

int do_eval(Settings& s) {
    Checkpoint c1 = load_checkpoint(s.stage1_ckpt);
    Checkpoint c2 = load_checkpoint(s.stage2_ckpt);
    CorpusManifest man = read_manifest(s.manifest);
    CorpusManifest held = read_manifest(s.held_manifest);
    EvalReport rep = run_protocol(c1, c2, man, held);
    emit_report(rep, s.out);
    double held_fc = 0.0, held_fa = 0.0;
    for (const auto& r : rep.rows) {
        if (r.split != "held_out") continue;
        (r.detector == "fc" ? held_fc : held_fa) = r.value;
    }
    std::printf("eval ok held_fc=%.6f held_fa=%.6f rows=%zu out=%s\n", held_fc, held_fa,
                rep.rows.size(), s.out.c_str());
    return 0;
}

int do_freq_response(Settings& s) {
    std::vector<std::pair<std::string, AhfKernel>> kernels;
    if (s.ckpt.empty()) {
        AhfKernel a = ahf_init(3, s.train.sigma, 3);
        ahf_project(a);
        kernels.emplace_back("init", a);
    } else {
        Checkpoint c = load_checkpoint(s.ckpt);
        for (const auto& [name, t] : c.params) {
            if (name.find(".ahf") == std::string::npos) continue;
            AhfKernel a;
            a.k = t.dim(1);
            a.sigma = c.cfg.sigma;
            a.channels = t.dim(0);
            a.weights = t;
            kernels.emplace_back(name, std::move(a));
        }
        FORGESEM_CHECK(!kernels.empty(), "freq-response: checkpoint has no adaptive kernels");
    }
    for (const auto& [name, a] : kernels)
        FORGESEM_CHECK(s.grid >= a.k, "freq-response: --grid must be >= kernel size");

    make_out_dir(s.out);
    int files = 0;
    for (const auto& [name, a] : kernels) {
        for (int ch = 0; ch < a.channels; ++ch) {
            const auto grid = freq_response(a, ch, s.grid);
            const std::string path =
                s.out + "/freq_" + sanitized(name) + "_c" + std::to_string(ch) + ".csv";
            std::ofstream f(path);
            if (!f) throw io_error("cannot write " + path);
            f << freq_response_csv(grid);
            if (!f) throw io_error("short write: " + path);
            ++files;
        }
    }
    std::printf("freq-response ok kernels=%zu files=%d out=%s\n", kernels.size(), files,
                s.out.c_str());
    return 0;
}

int do_saliency(Settings& s) {
    FORGESEM_CHECK(s.layer == "enc2.fc" || s.layer == "enc2.fa",
                   "saliency: --layer must be enc2.fc or enc2.fa");
    FORGESEM_CHECK(s.target_class == 0 || s.target_class == 1,
                   "saliency: --target must be 0 (fake) or 1 (real)");
    Checkpoint c = load_checkpoint(s.ckpt);
    Tensor img = read_image(s.image_path);
    Tensor map = grad_cam(c, img, s.target_class, s.layer);

    make_out_dir(s.out);
    const int size = map.dim(0);
    Tensor rgb({3, size, size});
    for (int ch = 0; ch < 3; ++ch)
        std::copy_n(map.data(), map.numel(),
                    rgb.data() + static_cast<std::size_t>(ch) * map.numel());
    write_png(s.out + "/saliency.png", rgb);
    write_bin(s.out + "/saliency.bin", Tensor({1, size, size}, map.vec()));
    std::printf("saliency ok layer=%s target=%d out=%s\n", s.layer.c_str(), s.target_class,
                s.out.c_str());
    return 0;
}

int do_report(Settings& s) {
    EvalReport rep = load_report(s.report_in);
    emit_report(rep, s.out);
    std::printf("report ok rows=%zu out=%s\n", rep.rows.size(), s.out.c_str());
    return 0;
}

int do_run_experiment(Settings& s) {
    std::vector<std::string> methods =
        s.corpus.methods.empty() ? all_methods() : s.corpus.methods;
    auto held_it = std::find(methods.begin(), methods.end(), s.hold_out);
    if (held_it == methods.end())
        throw contract_error("run-experiment: --hold-out '" + s.hold_out +
                             "' is not one of the corpus methods");
    std::vector<std::string> train_methods;
    for (const auto& m : methods)
        if (m != s.hold_out) train_methods.push_back(m);
    FORGESEM_CHECK(!train_methods.empty(),
                   "run-experiment: need at least one training method besides the hold-out");

    CorpusSpec train_spec = s.corpus;
    train_spec.methods = train_methods;
    train_spec.seed = s.seed;
    CorpusSpec held_spec = s.corpus;
    held_spec.methods = {s.hold_out};
    held_spec.seed = s.seed + 1000; // unseen reals as well as unseen fakes

    TrainConfig tc = s.train;
    tc.seed = s.seed;
    apply_ablations(s, tc.model);
    train_spec.validate();
    held_spec.validate();
    tc.validate();

    CorpusManifest man = gen_corpus(train_spec, s.out + "/corpus_train");
    CorpusManifest held = gen_corpus(held_spec, s.out + "/corpus_held");
    log_info("run-experiment: corpora ready, " + std::to_string(man.records.size()) +
             " train records");

    TrainResult r1, r2;
    try {
        r1 = train_stage1(tc, man);
    } catch (const train_abort& e) {
        return save_aborted(e, s, 1);
    }
    save_checkpoint(r1.checkpoint, s.out + "/stage1.fsck");
    r1.metrics.write_csv(s.out + "/metrics_stage1.csv");
    try {
        r2 = train_stage2(tc, man, r1.checkpoint);
    } catch (const train_abort& e) {
        return save_aborted(e, s, 2);
    }
    save_checkpoint(r2.checkpoint, s.out + "/stage2.fsck");
    r2.metrics.write_csv(s.out + "/metrics_stage2.csv");

    EvalReport rep = run_protocol(r1.checkpoint, r2.checkpoint, man, held);
    emit_report(rep, s.out + "/report");
    const double held_fc = rep.value_of("fc", s.hold_out, "held_out");
    const double held_fa = rep.value_of("fa", s.hold_out, "held_out");
    std::printf("run-experiment ok held_fc=%.6f held_fa=%.6f methods=%zu out=%s\n", held_fc,
                held_fa, train_methods.size(), s.out.c_str());
    return 0;
}

} // namespace

int cli_run(int argc, const char* const* argv) {
    Settings s;

    // the config file loads first so explicit flags can override it
    try {
        std::string config_path;
        for (int i = 1; i < argc; ++i) {
            const std::string a = argv[i];
            if (a == "--config" && i + 1 < argc) config_path = argv[i + 1];
            else if (a.rfind("--config=", 0) == 0) config_path = a.substr(9);
        }
        if (!config_path.empty()) apply_config_file(config_path, s);
    } catch (const io_error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 3;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }

    CLI::App app{"two-stage forgery semantics decoupling toolkit"};
    app.require_subcommand(1);

    auto add_common = [&](CLI::App* c) {
        c->add_option("--config", s.config, "JSON config file, overridden by flags");
        c->add_option("--seed", s.seed, "master RNG seed");
        c->add_option("--out", s.out, "output directory");
    };
    auto add_corpus_opts = [&](CLI::App* c) {
        c->add_option("--image-size", s.corpus.image_size, "square image side");
        c->add_option("--n-real", s.corpus.n_real, "number of real images");
        c->add_option("--n-fake-per-method", s.corpus.n_fake_per_method,
                      "fakes per forgery method");
        c->add_option("--methods", s.corpus.methods, "forgery methods")->delimiter(',');
    };
    auto add_train_opts = [&](CLI::App* c) {
        c->add_option("--epochs", s.train.epochs, "training epochs");
        c->add_option("--lr", s.train.lr, "learning rate");
        c->add_option("--batch", s.train.batch, "batch size (even)");
        c->add_option("--sigma", s.train.sigma, "adaptive kernel init bandwidth");
        c->add_flag("--no-highfreq", s.no_highfreq, "drop the high-frequency branch");
        c->add_flag("--no-mhfe", s.no_mhfe, "drop multi-scale extraction");
        c->add_flag("--no-mhff", s.no_mhff, "use additive fusion instead of gating");
    };

    CLI::App* gen = app.add_subcommand("gen-corpus", "generate a synthetic forgery corpus");
    add_common(gen);
    add_corpus_opts(gen);

    CLI::App* train = app.add_subcommand("train", "train one stage");
    add_common(train);
    add_train_opts(train);
    train->add_option("--manifest", s.manifest, "corpus manifest.json")->required();
    train->add_option("--stage", s.stage, "training stage")->required();
    train->add_option("--stage1-ckpt", s.stage1_ckpt, "stage-1 checkpoint (stage 2 only)");

    CLI::App* eval_cmd = app.add_subcommand("eval", "run the AUC protocol");
    add_common(eval_cmd);
    eval_cmd->add_option("--stage1-ckpt", s.stage1_ckpt, "stage-1 checkpoint")->required();
    eval_cmd->add_option("--stage2-ckpt", s.stage2_ckpt, "stage-2 checkpoint")->required();
    eval_cmd->add_option("--manifest", s.manifest, "training-methods manifest")->required();
    eval_cmd->add_option("--held-manifest", s.held_manifest, "held-out manifest")->required();

    CLI::App* freq = app.add_subcommand("freq-response", "kernel spectra as CSV grids");
    add_common(freq);
    freq->add_option("--ckpt", s.ckpt, "checkpoint with adaptive kernels (else init)");
    freq->add_option("--grid", s.grid, "DFT grid size");
    freq->add_option("--sigma", s.train.sigma, "init bandwidth when no checkpoint given");

    CLI::App* sal = app.add_subcommand("saliency", "gradient-weighted activation map");
    add_common(sal);
    sal->add_option("--ckpt", s.ckpt, "stage-2 checkpoint")->required();
    sal->add_option("--image", s.image_path, "input image (png or bin)")->required();
    sal->add_option("--target", s.target_class, "class logit: 0 fake, 1 real");
    sal->add_option("--layer", s.layer, "tap point: enc2.fc or enc2.fa");

    CLI::App* rep = app.add_subcommand("report", "re-emit a saved report");
    add_common(rep);
    rep->add_option("--in", s.report_in, "report.json to load")->required();

    CLI::App* run = app.add_subcommand("run-experiment",
                                       "corpus, both stages, and evaluation in one go");
    add_common(run);
    add_corpus_opts(run);
    add_train_opts(run);
    run->add_option("--hold-out", s.hold_out, "method excluded from training");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        if (gen->parsed()) return do_gen_corpus(s);
        if (train->parsed()) return do_train(s);
        if (eval_cmd->parsed()) return do_eval(s);
        if (freq->parsed()) return do_freq_response(s);
        if (sal->parsed()) return do_saliency(s);
        if (rep->parsed()) return do_report(s);
        if (run->parsed()) return do_run_experiment(s);
        std::fprintf(stderr, "error: no subcommand\n");
        return 2;
    } catch (const io_error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 3;
    } catch (const train_abort& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 4;
    } catch (const numeric_error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 4;
    } catch (const undefined_metric& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const checkpoint_mismatch& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
}

} // namespace forgesem
