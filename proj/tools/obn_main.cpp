// obn: train/eval/count/sweep/gradcheck/analyze for recursive shared-basis
// convolutional networks, driven by flat dotted-key configs.

#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "obn/analyze.hpp"
#include "obn/config.hpp"
#include "obn/gradcheck.hpp"
#include "obn/train.hpp"

namespace fs = std::filesystem;
using namespace obn;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::string data_root(const Config& cfg) {
    std::string dir = cfg.get_str("data.dir", "");
    if (!dir.empty()) return dir;
    if (const char* env = std::getenv("OBN_DATA_DIR")) return env;
    return "data";
}

struct RunPaths {
    fs::path out;
    explicit RunPaths(const Config& cfg) : out(cfg.get_str("run.out_dir", "out")) {
        fs::create_directories(out);
    }
    std::string file(const char* name) const { return (out / name).string(); }
};

NetworkSpec spec_from_config(const Config& cfg) {
    const std::string name = cfg.get_str("model.name", "");
    if (name.empty()) throw ConfigError("model.name is required");
    NetworkSpec spec = spec_from_name(name);
    const std::string ds = cfg.get_str("data.set", "cifar10");
    spec.classes = ds == "cifar100" ? 100 : 10;
    spec.classes = cfg.get_int("model.classes", spec.classes);
    const std::string order = cfg.get_str("model.bn_order", "post_act");
    if (order == "post_act")
        spec.bn_order = BnOrder::post_act;
    else if (order == "pre_act")
        spec.bn_order = BnOrder::pre_act;
    else
        throw ConfigError("model.bn_order must be post_act or pre_act");
    if (cfg.get_bool("model.tied", false))
        for (auto& st : spec.stages)
            if (st.basis.s == 0) st.basis.tied = true;
    if (ds == "mnist") {
        spec.in_channels = 1;
        spec.in_h = spec.in_w = 28;
    }
    if (ds == "synthetic") {
        spec.classes = cfg.get_int("data.synthetic.classes", spec.classes);
        spec.in_h = spec.in_w = cfg.get_int("data.synthetic.size", 32);
    }
    return spec;
}

TrainConfig train_config(const Config& cfg) {
    TrainConfig tc;
    tc.epochs = cfg.get_int("train.epochs", tc.epochs);
    tc.batch = cfg.get_int("train.batch", tc.batch);
    tc.lr = cfg.get_f64("train.lr", tc.lr);
    tc.lr_decay = cfg.get_f64("train.lr_decay", tc.lr_decay);
    tc.momentum = cfg.get_f64("train.momentum", tc.momentum);
    tc.weight_decay = cfg.get_f64("train.weight_decay", tc.weight_decay);
    tc.lambda = cfg.get_f64("ortho.lambda", tc.lambda);
    tc.seed = cfg.get_u64("train.seed", tc.seed);
    tc.augment = cfg.get_bool("train.augment", tc.augment);
    const std::string ms = cfg.get_str("train.milestones", "");
    if (ms == "imagenet") {
        // decay at the 60th/100th/140th epoch of a 150-epoch run
        tc.milestones = {0.4, 100.0 / 150.0, 140.0 / 150.0};
    } else if (ms == "none") {
        tc.milestones.clear();
    } else if (!ms.empty()) {
        tc.milestones.clear();
        std::stringstream ss(ms);
        std::string tok;
        while (std::getline(ss, tok, ',')) tc.milestones.push_back(std::stod(tok));
    }
    tc.validate();
    return tc;
}

std::pair<Dataset, Dataset> load_data(const Config& cfg, const NetworkSpec& spec) {
    const std::string ds = cfg.get_str("data.set", "cifar10");
    const bool recompute = cfg.get_bool("data.recompute_norm", false);
    std::pair<Dataset, Dataset> pair;
    if (ds == "cifar10")
        pair = load_cifar10(data_root(cfg) + "/cifar10", recompute);
    else if (ds == "cifar100")
        pair = load_cifar100(data_root(cfg) + "/cifar100", recompute);
    else if (ds == "mnist")
        pair = load_mnist(data_root(cfg) + "/mnist", recompute);
    else if (ds == "synthetic") {
        const int classes = cfg.get_int("data.synthetic.classes", spec.classes);
        const int n = cfg.get_int("data.synthetic.n", 2000);
        const int size = cfg.get_int("data.synthetic.size", spec.in_h);
        const double snr = cfg.get_f64("data.synthetic.snr", 2.0);
        const uint64_t seed = cfg.get_u64("data.synthetic.seed", 77);
        pair.first = synthetic(classes, n, spec.in_channels, size, size, snr, seed, "train");
        pair.second = synthetic(classes, std::max(classes, n / 5), spec.in_channels, size, size,
                                snr, seed, "test");
    } else {
        throw ConfigError("data.set '" + ds + "' unknown (cifar10|cifar100|mnist|synthetic)");
    }
    const int subset = cfg.get_int("data.subset", 0);
    if (subset > 0) pair.first = subset_first_per_class(pair.first, subset);
    const int test_subset = cfg.get_int("data.test_subset", 0);
    if (test_subset > 0) pair.second = subset_first_per_class(pair.second, test_subset);
    return pair;
}

struct TrainOutcome {
    std::vector<EpochMetrics> epochs;
    EvalResult final_eval;
};

/// Shared by cmd_train and cmd_sweep cells.
TrainOutcome run_training(const Config& cfg, const RunPaths& paths, bool write_outputs) {
    NetworkSpec spec = spec_from_config(cfg);
    TrainConfig tc = train_config(cfg);
    auto data = load_data(cfg, spec);
    spec.in_h = data.first.height();
    spec.in_w = data.first.width();
    auto net = build_network<float>(spec, tc.seed);
    Trainer<float> trainer(*net, tc);

    const int every_k = cfg.get_int("analyze.every_k", 10);
    GradFlowRecorder<float> gradflow(*net, every_k);
    std::vector<DeviationRecord> deviations;
    if (!net->bases.empty())
        for (auto& r : deviation_records(*net, 0)) deviations.push_back(r);

    TrainOutcome out;
    std::ofstream metrics;
    if (write_outputs) {
        metrics.open(paths.file("metrics.csv"), std::ios::trunc);
        metrics << "epoch,lr,train_loss,train_err,test_loss,test_err,ortho_penalty\n";
    }
    for (int e = 0; e < tc.epochs; ++e) {
        EpochMetrics m =
            trainer.run_epoch(data.first, [&](long iter) { gradflow.on_iteration(iter); });
        EvalResult ev = evaluate(*net, data.second);
        if (!net->bases.empty())
            for (auto& r : deviation_records(*net, e + 1)) deviations.push_back(r);
        if (write_outputs) {
            metrics << e << ',' << fmt(m.lr) << ',' << fmt(m.train_loss) << ','
                    << fmt(m.train_err) << ',' << fmt(ev.loss) << ',' << fmt(ev.error) << ','
                    << fmt(m.ortho_penalty) << '\n';
            metrics.flush();
        }
        std::cout << "epoch " << e << " lr " << m.lr << " train_loss " << m.train_loss
                  << " train_err " << m.train_err << "% test_err " << ev.error << "%\n";
        out.epochs.push_back(m);
        out.final_eval = ev;
    }
    if (write_outputs) {
        trainer.save(paths.file("final.ckpt"));
        if (cfg.get_bool("analyze.gradflow", true) && !net->traced.empty())
            write_gradflow_csv(paths.file("gradflow.csv"), gradflow.records());
        if (cfg.get_bool("analyze.deviation", true) && !net->bases.empty())
            write_deviation_csv(paths.file("deviation.csv"), deviations);
        if (cfg.get_bool("analyze.similarity", true) && net->block_coeffs.size() >= 2)
            write_similarity_csv(paths.file("similarity.csv"),
                                 cosine_similarity(block_coeff_vectors(*net)));
    }
    return out;
}

int cmd_count(const Config& cfg, const std::string& input_size) {
    NetworkSpec spec = spec_from_config(cfg);
    int h = 32, w = 32;
    if (!input_size.empty()) {
        if (std::sscanf(input_size.c_str(), "%dx%d", &h, &w) != 2)
            throw ConfigError("--input-size must look like 32x32");
    }
    CountReport rep = count_network(spec, h, w);
    std::printf("%-24s %14s %16s\n", "layer", "params", "flops");
    for (const auto& l : rep.layers)
        std::printf("%-24s %14lld %16lld\n", l.name.c_str(), l.params, l.flops);
    std::printf("%-24s %14lld %16lld\n", "total", rep.params, rep.flops);
    std::printf("%s: %.2fM params, %.2fG FLOPs at %dx%d\n", spec.name.c_str(), rep.params / 1e6,
                rep.flops / 1e9, h, w);
    // machine-readable line
    std::printf("CSV,%s,%lld,%lld\n", spec.name.c_str(), rep.params, rep.flops);
    return kExitOk;
}

int cmd_sweep(Config cfg, const RunPaths& paths, const std::string& s_list,
              const std::string& u_list, bool count_only) {
    auto parse_list = [](const std::string& s) {
        std::vector<int> out;
        std::stringstream ss(s);
        std::string tok;
        while (std::getline(ss, tok, ',')) out.push_back(std::stoi(tok));
        if (out.empty()) throw ConfigError("sweep: empty s/u list");
        return out;
    };
    const std::vector<int> ss = parse_list(s_list);
    const std::vector<int> us = parse_list(u_list);
    const std::string base = cfg.get_str("model.name", "ResNet20");
    NetworkSpec base_spec = spec_from_name(base); // family/validation only
    const int layers = [&] {
        int l = 0;
        for (const auto& st : base_spec.stages) l += 2 * st.blocks;
        return l + 2;
    }();
    const bool dual = cfg.get_bool("sweep.dual", false);

    std::ofstream out(paths.file("sweep.csv"), std::ios::trunc);
    out << "s,u,name,params,flops,final_train_err,final_test_err,status\n";
    for (int s : ss)
        for (int u : us) {
            std::string name = "ResNet" + std::to_string(layers) + "-S" + std::to_string(s) +
                               "U" + std::to_string(u) + (dual ? "#" : "");
            std::string train_err = "", test_err = "", status = "ok";
            std::string pretty = name;
            long long params = 0, flops = 0;
            try {
                Config cell = cfg;
                cell.set("model.name", name);
                NetworkSpec spec = spec_from_config(cell);
                pretty = spec.name;
                params = count_params(spec);
                flops = count_flops(spec, spec.in_h, spec.in_w);
                if (!count_only) {
                    TrainOutcome res = run_training(cell, paths, false);
                    train_err = fmt(res.epochs.back().train_err);
                    test_err = fmt(res.final_eval.error);
                }
            } catch (const Error& e) {
                status = std::string("error: ") + e.what();
            }
            out << s << ',' << u << ',' << pretty << ',' << params << ',' << flops << ','
                << train_err << ',' << test_err << ',' << status << '\n';
        }
    std::cout << "sweep written to " << paths.file("sweep.csv") << "\n";
    return kExitOk;
}

int cmd_gradcheck(const std::string& scope, bool corrupt) {
    bool all_pass = true;
    auto report = [&](const std::string& name, const GradCheckReport& rep) {
        for (const auto& e : rep.entries) {
            std::printf("[%s] %-28s max rel err %.3e %s\n", name.c_str(), e.name.c_str(),
                        e.max_rel_err, e.pass ? "pass" : "FAIL");
            all_pass = all_pass && e.pass;
        }
    };
    Rng rng(12345);
    if (scope == "layer" || scope == "all") {
        auto w = std::make_shared<Param<double>>("conv.w", TensorD::randn({3, 4, 3, 3}, rng, 0.4));
        auto x = std::make_shared<Param<double>>("conv.x", TensorD::randn({2, 4, 5, 5}, rng));
        Conv2d<double> conv(w, 1, 1);
        TensorD proj = TensorD::randn({2, 3, 5, 5}, rng);
        auto loss = [&] { return dot(conv.forward(x->value, nullptr), proj); };
        ActivationTape<double> tape;
        conv.forward(x->value, &tape);
        w->zero_grad();
        x->grad = conv.backward(proj, tape);
        if (corrupt) w->grad[0] += 0.5;
        report("layer", gradcheck_params({w, x}, loss, 1e-5, 1e-6));
    }
    if (scope == "block" || scope == "network" || scope == "all") {
        NetworkSpec spec;
        spec.stem_channels = 4;
        spec.classes = 3;
        spec.in_h = spec.in_w = 8;
        StageSpec st;
        st.blocks = 3;
        st.channels = 4;
        st.stride = 1;
        st.basis = {2, 1, false, false};
        spec.stages = {st};
        auto net = build_network<double>(spec, 99);
        TensorD x = TensorD::randn({2, 3, 8, 8}, rng);
        std::vector<int> labels = {1, 2};
        const double lambda = 1e-2;
        auto loss = [&] {
            return net->loss(x, labels, true, nullptr) + lambda * net->ortho_penalty_value();
        };
        ActivationTape<double> tape;
        net->zero_grad();
        net->loss(x, labels, true, &tape);
        net->backward(tape);
        net->accumulate_ortho_grads(lambda);
        if (corrupt) net->bases[0].fb.shared->grad[0] += 0.5;
        std::vector<ParamPtr<double>> checked = net->params;
        if (scope == "block") {
            checked.clear();
            checked.push_back(net->bases[0].fb.shared);
            checked.push_back(net->bases[0].fb.unshared[0]);
            checked.push_back(net->bases[0].coeffs[0]);
        }
        report(scope, gradcheck_params(checked, loss, 1e-5, 1e-6));
    }
    std::printf("gradcheck: %s\n", all_pass ? "all pass" : "FAILURES");
    return all_pass ? kExitOk : 1;
}

int cmd_analyze(const Config& cfg, const RunPaths& paths, const std::string& ckpt,
                const std::string& what, int basis_id) {
    NetworkSpec spec = spec_from_config(cfg);
    auto net = build_network<float>(spec, cfg.get_u64("train.seed", 1));
    TrainConfig tc = train_config(cfg);
    Trainer<float> trainer(*net, tc);
    trainer.load(ckpt);
    if (what == "simflow") {
        if (net->block_coeffs.size() < 2)
            throw ConfigError("analyze: model has fewer than 2 coefficient sets");
        write_similarity_csv(paths.file("similarity.csv"),
                             cosine_similarity(block_coeff_vectors(*net)));
        std::cout << "wrote " << paths.file("similarity.csv") << "\n";
    } else if (what == "spectral") {
        if (net->bases.empty()) throw ConfigError("analyze: model has no shared bases");
        if (basis_id < 0 || basis_id >= static_cast<int>(net->bases.size()))
            throw ConfigError("analyze: basis id out of range");
        const auto& fb = net->bases[static_cast<size_t>(basis_id)].fb;
        TensorD mat = fb.matrix(0).cast<double>();
        const int steps = mat.dim(0) == mat.dim(1) ? cfg.get_int("analyze.steps", 20) : 0;
        SpectralReport rep = spectral_probe(mat, steps, cfg.get_int("analyze.trials", 4),
                                            cfg.get_u64("train.seed", 1));
        write_spectral_csv(paths.file("spectral.csv"), rep);
        std::cout << "wrote " << paths.file("spectral.csv") << " ("
                  << rep.singular_values.size() << " singular values)\n";
    } else if (what == "deviation") {
        if (net->bases.empty()) throw ConfigError("analyze: model has no shared bases");
        write_deviation_csv(paths.file("deviation.csv"),
                            deviation_records(*net, trainer.epoch()));
        std::cout << "wrote " << paths.file("deviation.csv") << "\n";
    } else {
        throw ConfigError("analyze: --what must be simflow|spectral|deviation");
    }
    return kExitOk;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"recursive shared-basis convnets: train, count, analyze"};
    app.require_subcommand(1);

    std::string config_path, out_dir, model, dataset, data_dir, input_size = "32x32";
    std::vector<std::string> overrides;
    int threads = 0;

    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--config", config_path, "flat key=value config file");
        cmd->add_option("--set", overrides, "config override key=value (repeatable)");
        cmd->add_option("--out-dir", out_dir, "output directory (fixed file names inside)");
        cmd->add_option("--model", model, "model name, e.g. ResNet32-S16U1#");
        cmd->add_option("--dataset", dataset, "cifar10|cifar100|mnist|synthetic");
        cmd->add_option("--data-dir", data_dir, "dataset root (else $OBN_DATA_DIR, else ./data)");
        cmd->add_option("--threads", threads, "worker threads for conv kernels");
    };

    int subset = 0, epochs = 0, batch = 0;
    double lr = -1, lambda = -1;
    long long seed = -1;
    bool no_augment = false;
    auto add_train_flags = [&](CLI::App* cmd) {
        cmd->add_option("--subset", subset, "first-k-per-class training subset size");
        cmd->add_option("--epochs", epochs);
        cmd->add_option("--batch", batch);
        cmd->add_option("--lr", lr);
        cmd->add_option("--lambda", lambda, "orthogonality regularization strength");
        cmd->add_option("--seed", seed);
        cmd->add_flag("--no-augment", no_augment);
    };

    auto* t = app.add_subcommand("train", "train a model per config");
    add_common(t);
    add_train_flags(t);

    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
    std::string ckpt;
    add_common(ev);
    add_train_flags(ev);
    ev->add_option("--checkpoint", ckpt)->required();

    auto* c = app.add_subcommand("count", "parameter/FLOP report");
    std::string count_model;
    int classes = 0;
    add_common(c);
    c->add_option("name", count_model, "model name (positional)");
    c->add_option("--input-size", input_size, "HxW, default 32x32");
    c->add_option("--classes", classes);

    auto* sw = app.add_subcommand("sweep", "rank sweep over s and u");
    std::string s_list = "8,16,32", u_list = "0,1,2,4";
    bool count_only = false;
    add_common(sw);
    add_train_flags(sw);
    sw->add_option("--s-list", s_list);
    sw->add_option("--u-list", u_list);
    sw->add_flag("--count-only", count_only, "fill params/flops only, skip training");

    auto* gc = app.add_subcommand("gradcheck", "finite-difference verification");
    std::string scope = "all";
    bool corrupt = false;
    gc->add_option("--scope", scope, "layer|block|network|all");
    gc->add_flag("--corrupt", corrupt, "inject a backward bug (negative control)");

    auto* an = app.add_subcommand("analyze", "instrumentation from a checkpoint");
    std::string what = "simflow";
    int basis_id = 0;
    add_common(an);
    add_train_flags(an);
    an->add_option("--checkpoint", ckpt)->required();
    an->add_option("--what", what, "simflow|spectral|deviation");
    an->add_option("--basis", basis_id, "basis index for spectral mode");

    CLI11_PARSE(app, argc, argv);

    try {
        Config cfg;
        if (!config_path.empty()) cfg = Config::from_file(config_path);
        for (const auto& o : overrides) cfg.set_line(o);
        // dedicated flags outrank --set and the file
        if (!model.empty()) cfg.set("model.name", model);
        if (!dataset.empty()) cfg.set("data.set", dataset);
        if (!data_dir.empty()) cfg.set("data.dir", data_dir);
        if (!out_dir.empty()) cfg.set("run.out_dir", out_dir);
        if (subset > 0) cfg.set("data.subset", std::to_string(subset));
        if (epochs > 0) cfg.set("train.epochs", std::to_string(epochs));
        if (batch > 0) cfg.set("train.batch", std::to_string(batch));
        if (lr >= 0) cfg.set("train.lr", fmt(lr));
        if (lambda >= 0) cfg.set("ortho.lambda", fmt(lambda));
        if (seed >= 0) cfg.set("train.seed", std::to_string(seed));
        if (no_augment) cfg.set("train.augment", "false");
        if (threads > 0)
            set_thread_count(threads);
        else
            set_thread_count(cfg.get_int("run.threads", thread_count()));

        if (t->parsed()) {
            RunPaths paths(cfg);
            run_training(cfg, paths, true);
            return kExitOk;
        }
        if (ev->parsed()) {
            NetworkSpec spec = spec_from_config(cfg);
            auto data = load_data(cfg, spec);
            spec.in_h = data.second.height();
            spec.in_w = data.second.width();
            auto net = build_network<float>(spec, cfg.get_u64("train.seed", 1));
            TrainConfig tc = train_config(cfg);
            Trainer<float> trainer(*net, tc);
            trainer.load(ckpt);
            EvalResult res = evaluate(*net, data.second);
            std::printf("test_err %.4f%% test_loss %s\n", res.error, fmt(res.loss).c_str());
            return kExitOk;
        }
        if (c->parsed()) {
            if (!count_model.empty()) cfg.set("model.name", count_model);
            if (classes > 0) cfg.set("model.classes", std::to_string(classes));
            return cmd_count(cfg, input_size);
        }
        if (sw->parsed()) {
            RunPaths paths(cfg);
            return cmd_sweep(cfg, paths, s_list, u_list, count_only);
        }
        if (gc->parsed()) return cmd_gradcheck(scope, corrupt);
        if (an->parsed()) {
            RunPaths paths(cfg);
            return cmd_analyze(cfg, paths, ckpt, what, basis_id);
        }
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const NumericError& e) {
        std::cerr << "numeric abort: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kExitData;
    } catch (const FormatError& e) {
        std::cerr << "format error: " << e.what() << "\n";
        return kExitData;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return kExitOk;
}
