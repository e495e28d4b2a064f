// Command-line frontend: training, scoring, evaluation, complexity
// accounting, synthetic corpus generation, cross-dataset validation and
// ablation sweeps.
//
// Exit codes: 0 success, 2 usage error, 3 data error, 4 numeric failure.

#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "msscanet/checkpoint.hpp"
#include "msscanet/config.hpp"
#include "msscanet/dataset.hpp"
#include "msscanet/errors.hpp"
#include "msscanet/flops.hpp"
#include "msscanet/train.hpp"

using namespace msscanet;

namespace {

struct LoadedRunConfig {
    ModelConfig model;
    TrainSchedule schedule;
};

LoadedRunConfig load_run_config(const std::string& path) {
    auto kv = load_kv_file(path);
    LoadedRunConfig out;
    apply_model_config(kv, out.model);
    apply_train_schedule(kv, out.schedule);
    require_no_leftover(kv, path);
    return out;
}

void write_train_log(const TrainResult& result, const std::string& path) {
    std::ofstream log(path);
    if (!log) throw DataError("cannot write training log: " + path);
    log << "epoch,loss,l1,cb,ap,lr\n";
    log.precision(12);
    for (const auto& e : result.log)
        log << e.epoch << "," << e.loss << "," << e.l1 << "," << e.cb << "," << e.ap << "," << e.lr << "\n";
}

std::map<std::string, std::string> scale_extras(const DatasetManifest& m) {
    char lo[64], hi[64];
    std::snprintf(lo, sizeof(lo), "%.17g", m.mos_lo);
    std::snprintf(hi, sizeof(hi), "%.17g", m.mos_hi);
    return {{"mos_lo", lo}, {"mos_hi", hi}};
}

void print_report(const EvalReport& r) {
    if (r.correlation_defined) {
        std::printf("n       %lld\n", static_cast<long long>(r.n));
        std::printf("plcc    %.6f\n", r.plcc);
        std::printf("srocc   %.6f\n", r.srocc);
    } else {
        std::printf("n       %lld\n", static_cast<long long>(r.n));
        std::printf("plcc    undefined (constant predictions)\n");
        std::printf("srocc   undefined (constant predictions)\n");
    }
    std::printf("fit     actual = %.6f * predicted + %.6f\n", r.fit_slope, r.fit_intercept);
}

int run_train(const std::string& config_path, const std::string& manifest_path,
              const std::string& out_dir) {
    auto rc = load_run_config(config_path);
    auto manifest = load_manifest(manifest_path);
    std::filesystem::create_directories(out_dir);
    auto model = build_model(rc.model);
    auto result = train(model, manifest, rc.schedule);
    write_train_log(result, out_dir + "/train_log.csv");
    save_checkpoint(model, out_dir + "/checkpoint.mscn", 0, scale_extras(manifest));
    if (!result.log.empty())
        std::printf("trained %lld epochs; final loss %.6f (l1 %.6f, cb %.6f, ap %.6f)\n",
                    static_cast<long long>(result.log.size()), result.log.back().loss,
                    result.log.back().l1, result.log.back().cb, result.log.back().ap);
    std::printf("checkpoint: %s/checkpoint.mscn\nlog: %s/train_log.csv\n", out_dir.c_str(),
                out_dir.c_str());
    return 0;
}

int run_score(const std::string& checkpoint_path, const std::string& image_path) {
    auto loaded = load_checkpoint(checkpoint_path);
    auto img = read_ppm(image_path);
    auto fwd = forward(loaded.model, img);
    double lo = 0.0, hi = 1.0;
    if (auto it = loaded.extra.find("mos_lo"); it != loaded.extra.end()) lo = std::stod(it->second);
    if (auto it = loaded.extra.find("mos_hi"); it != loaded.extra.end()) hi = std::stod(it->second);
    std::printf("%.6f\n", lo + fwd.mos->item() * (hi - lo));
    return 0;
}

int run_eval(const std::string& checkpoint_path, const std::string& manifest_path,
             const std::string& split, const std::string& scatter_path) {
    auto loaded = load_checkpoint(checkpoint_path);
    auto manifest = load_manifest(manifest_path);
    auto report = evaluate(loaded.model, manifest, split);
    print_report(report);
    if (!scatter_path.empty()) {
        write_scatter_csv(report, scatter_path);
        std::printf("scatter: %s\n", scatter_path.c_str());
    }
    return 0;
}

int run_flops(const std::string& config_path, bool measured, const std::string& csv_path) {
    auto kv = load_kv_file(config_path);
    ModelConfig cfg;
    apply_model_config(kv, cfg);
    TrainSchedule ignored;
    apply_train_schedule(kv, ignored);  // allow shared config files
    require_no_leftover(kv, config_path);

    auto analytic = flops_analytic(cfg);
    std::printf("analytic MAC counts (one forward pass)\n%s", render_flops_table(analytic).c_str());
    if (measured) {
        auto model = build_model(cfg);
        auto img = zeros({3, cfg.image_size, cfg.image_size});
        auto counted = flops_measured(model, img);
        std::printf("\nmeasured MAC counts\n%s", render_flops_table(counted).c_str());
        std::printf("\nmeasured == analytic: %s\n",
                    counted.total == analytic.total && counted.window_attention() == analytic.window_attention()
                        ? "yes"
                        : "NO");
    }
    if (!csv_path.empty()) {
        std::ofstream out(csv_path);
        if (!out) throw DataError("cannot write flops csv: " + csv_path);
        out << render_flops_csv(analytic);
        std::printf("csv: %s\n", csv_path.c_str());
    }
    return 0;
}

int run_synth(const std::string& spec_path, const std::string& out_dir) {
    auto kv = load_kv_file(spec_path);
    SynthSpec spec;
    apply_synth_spec(kv, spec);
    require_no_leftover(kv, spec_path);
    auto manifest = generate_synthetic(spec, out_dir);
    std::printf("wrote %lld images to %s (train %zu / test %zu)\nmanifest: %s/manifest.csv\n",
                static_cast<long long>(spec.count), out_dir.c_str(), manifest.split("train").size(),
                manifest.split("test").size(), out_dir.c_str());
    return 0;
}

int run_crossval(const std::string& pairs_path, const std::string& config_path,
                 const std::string& out_dir) {
    std::ifstream in(pairs_path);
    if (!in) throw DataError("cannot open pairs file: " + pairs_path);
    std::vector<CrossValPair> pairs;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        const auto comma = line.find(',');
        if (comma == std::string::npos)
            throw DataError("pairs file: expected 'train_manifest,test_manifest', got '" + line + "'");
        pairs.push_back({line.substr(0, comma), line.substr(comma + 1)});
    }
    if (pairs.empty()) throw DataError("pairs file has no entries");

    auto rc = load_run_config(config_path);
    auto cells = cross_dataset(pairs, rc.model, rc.schedule);
    std::filesystem::create_directories(out_dir);
    const std::string csv = render_crossval_csv(cells);
    std::ofstream out(out_dir + "/crossval.csv");
    if (!out) throw DataError("cannot write crossval csv");
    out << csv;
    std::printf("%s", csv.c_str());
    std::printf("csv: %s/crossval.csv\n", out_dir.c_str());
    return 0;
}

int run_ablate(int table, const std::string& config_path, const std::string& manifest_path) {
    auto rc = load_run_config(config_path);
    auto manifest = load_manifest(manifest_path);

    struct Row {
        std::string name;
        ModelConfig cfg;
        LossWeights weights;
    };
    std::vector<Row> rows;
    if (table == 2) {
        auto mk = [&](bool short_b, bool spatial, bool channel, bool cross) {
            ModelConfig c = rc.model;
            c.use_short_branch = short_b;
            c.use_long_branch = true;
            c.use_spatial = spatial;
            c.use_channel = channel;
            c.use_cross = cross;
            return c;
        };
        rows.push_back({"single-both", mk(false, true, true, false), rc.schedule.weights});
        rows.push_back({"single-spatial", mk(false, true, false, false), rc.schedule.weights});
        rows.push_back({"single-channel", mk(false, false, true, false), rc.schedule.weights});
        rows.push_back({"multi-dual", mk(true, true, true, true), rc.schedule.weights});
    } else {
        auto mk = [&](bool cb, bool ap) {
            LossWeights w = rc.schedule.weights;
            w.enable_cb = cb;
            w.enable_ap = ap;
            return w;
        };
        rows.push_back({"l1-only", rc.model, mk(false, false)});
        rows.push_back({"l1+cb", rc.model, mk(true, false)});
        rows.push_back({"l1+ap", rc.model, mk(false, true)});
        rows.push_back({"full", rc.model, mk(true, true)});
    }

    std::printf("%-16s %10s %10s\n", "row", "plcc", "srocc");
    for (const auto& row : rows) {
        auto model = build_model(row.cfg);
        TrainSchedule sched = rc.schedule;
        sched.weights = row.weights;
        train(model, manifest, sched);
        auto report = evaluate(model, manifest, "test");
        if (report.correlation_defined)
            std::printf("%-16s %10.4f %10.4f\n", row.name.c_str(), report.plcc, report.srocc);
        else
            std::printf("%-16s %10s %10s\n", row.name.c_str(), "undef", "undef");
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"multi-scale spatial-channel attention network for no-reference IQA"};
    app.require_subcommand(1);

    std::string config_path, manifest_path, out_dir, checkpoint_path, image_path;
    std::string split = "test", scatter_path, csv_path, spec_path, pairs_path;
    bool measured = false;
    int table = 2;

    auto* train_cmd = app.add_subcommand("train", "train a model on a manifest");
    train_cmd->add_option("--config", config_path, "key=value config file")->required();
    train_cmd->add_option("--manifest", manifest_path, "dataset manifest CSV")->required();
    train_cmd->add_option("--out", out_dir, "output directory")->required();

    auto* score_cmd = app.add_subcommand("score", "print the predicted MOS for one image");
    score_cmd->add_option("--checkpoint", checkpoint_path, "model checkpoint")->required();
    score_cmd->add_option("--image", image_path, "binary PPM image")->required();

    auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a manifest split");
    eval_cmd->add_option("--checkpoint", checkpoint_path, "model checkpoint")->required();
    eval_cmd->add_option("--manifest", manifest_path, "dataset manifest CSV")->required();
    eval_cmd->add_option("--split", split, "split to score (default test)");
    eval_cmd->add_option("--scatter", scatter_path, "write predicted,actual pairs to this CSV");

    auto* flops_cmd = app.add_subcommand("flops", "analytic (and measured) MAC counts");
    flops_cmd->add_option("--config", config_path, "key=value config file")->required();
    flops_cmd->add_flag("--measured", measured, "also run an instrumented forward pass");
    flops_cmd->add_option("--csv", csv_path, "write the analytic table as CSV");

    auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic distortion corpus");
    synth_cmd->add_option("--spec", spec_path, "key=value corpus spec")->required();
    synth_cmd->add_option("--out", out_dir, "output directory")->required();

    auto* crossval_cmd = app.add_subcommand("crossval", "5-fold cross-dataset validation");
    crossval_cmd->add_option("--pairs", pairs_path, "CSV of train_manifest,test_manifest rows")->required();
    crossval_cmd->add_option("--config", config_path, "key=value config file")->required();
    crossval_cmd->add_option("--out", out_dir, "output directory")->required();

    auto* ablate_cmd = app.add_subcommand("ablate", "run every ablation row of a table");
    ablate_cmd->add_option("--table", table, "2 (architecture) or 3 (losses)")
        ->check(CLI::IsMember({2, 3}))
        ->required();
    ablate_cmd->add_option("--config", config_path, "key=value config file")->required();
    ablate_cmd->add_option("--manifest", manifest_path, "dataset manifest CSV")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (train_cmd->parsed()) return run_train(config_path, manifest_path, out_dir);
        if (score_cmd->parsed()) return run_score(checkpoint_path, image_path);
        if (eval_cmd->parsed()) return run_eval(checkpoint_path, manifest_path, split, scatter_path);
        if (flops_cmd->parsed()) return run_flops(config_path, measured, csv_path);
        if (synth_cmd->parsed()) return run_synth(spec_path, out_dir);
        if (crossval_cmd->parsed()) return run_crossval(pairs_path, config_path, out_dir);
        if (ablate_cmd->parsed()) return run_ablate(table, config_path, manifest_path);
    } catch (const NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return 4;
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 2;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
    return 2;
}
