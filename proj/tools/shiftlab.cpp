// shiftlab: canvas-dataset generation, training, location-grid evaluation,
// cosine probes and full experiment pipelines driven by JSON manifests.
#include <cstdlib>
#include <filesystem>
#include <iostream>

#include "shiftlab/report.hpp"
#include "vendor/CLI11.hpp"

namespace fs = std::filesystem;
using namespace shiftlab;

namespace {

struct GlobalOpts {
    std::string out;
    bool verbose = false;
    std::optional<std::uint64_t> seed_override;
    std::int64_t jobs = 1;
};

std::string default_out() {
    const char* env = std::getenv("SHIFTLAB_OUT");
    return env && *env ? env : ".";
}

std::string ensure_out(const std::string& dir) {
    fs::create_directories(dir);
    return dir;
}

void echo(const std::string& path) { std::cout << "wrote " << path << "\n"; }

void print_history(const char* tag, const TrainHistory& h, bool verbose) {
    if (h.epochs.empty()) {
        std::cout << tag << ": no epochs\n";
        return;
    }
    std::cout << tag << ": " << h.epochs.size() << " epochs, " << h.steps << " steps, final loss "
              << detail::fmt6(h.epochs.back().loss) << ", train acc " << detail::fmt6(h.epochs.back().accuracy)
              << (h.reached_target ? " (target reached)" : " (epoch cap)") << "\n";
    if (verbose)
        for (std::size_t e = 0; e < h.epochs.size(); ++e)
            std::cout << "  epoch " << e << ": loss " << detail::fmt6(h.epochs[e].loss) << ", acc "
                      << detail::fmt6(h.epochs[e].accuracy) << "\n";
}

ExperimentManifest load_experiment(const std::string& path, const GlobalOpts& g, json* raw = nullptr) {
    const json j = load_manifest_json(path);
    ExperimentManifest m = manifest_from_json(j);
    if (g.seed_override) m.base_seed = *g.seed_override;
    if (raw) *raw = j;
    return m;
}

int cmd_gen_data(const GlobalOpts& g, std::int64_t classes, std::int64_t exemplars, std::int64_t size,
                 std::uint64_t seed, double separability, std::int64_t preview) {
    const std::string dir = ensure_out(g.out);
    ItemBank bank = synth_glyph_bank(classes, exemplars, size, seed, separability);
    std::vector<std::uint8_t> px;
    std::vector<std::uint8_t> lb;
    for (std::int64_t c = 0; c < bank.classes(); ++c)
        for (const auto& im : bank.items[static_cast<std::size_t>(c)]) {
            for (std::int64_t i = 0; i < im.numel(); ++i)
                px.push_back(static_cast<std::uint8_t>(std::lround(im[i] * 255.0f)));
            lb.push_back(static_cast<std::uint8_t>(c));
        }
    write_idx_images(dir + "/images.idx", size, size, px);
    echo(dir + "/images.idx");
    write_idx_labels(dir + "/labels.idx", lb);
    echo(dir + "/labels.idx");
    for (std::int64_t p = 0; p < std::min(preview, bank.classes()); ++p) {
        Tensor<double> r = tensor_cast<double>(bank.items[static_cast<std::size_t>(p)][0]);
        const std::string path = dir + "/preview_" + std::to_string(p) + ".pgm";
        write_pgm(path, r);
        echo(path);
    }
    return 0;
}

int cmd_train(const GlobalOpts& g, const std::string& manifest_path, const std::string& stage_name) {
    const std::string dir = ensure_out(g.out);
    ExperimentManifest m = load_experiment(manifest_path, g);
    const bool use_pretrain = stage_name == "pretrain" || (stage_name.empty() && m.pretrain.has_value());
    if (use_pretrain && !m.pretrain) throw config_error("manifest has no pretrain stage");
    const StageSpec& stage = use_pretrain ? *m.pretrain : m.finetune;

    ItemBank bank = stage.bank.load();
    ModelSpec spec = m.model();
    if (spec.classes != bank.classes()) {
        spec.classes = bank.classes();
        spec.layers.back().out_features = bank.classes();
        spec.validate();
    }
    Model<float> model = build_model<float>(spec);
    kaiming_init(model, m.base_seed);
    DatasetConfig cfg = m.data;
    cfg.policy = stage.policy;
    cfg.repeats = stage.repeats;
    cfg.seed = Rng::derive(m.base_seed, use_pretrain ? "pretrain.stream" : "finetune.stream");
    BatchStream stream(bank, cfg, stage.batch_size);
    Adam<float> opt(stage.lr);
    TrainHistory h = train_to_criterion(model, stream, opt, stage.stop);
    print_history(use_pretrain ? "pretrain" : "finetune", h, g.verbose);

    save_checkpoint(model, dir + "/checkpoint.bin");
    echo(dir + "/checkpoint.bin");
    std::string csv = "epoch,loss,accuracy\n";
    for (std::size_t e = 0; e < h.epochs.size(); ++e)
        csv += std::to_string(e) + "," + detail::fmt6(h.epochs[e].loss) + "," + detail::fmt6(h.epochs[e].accuracy) +
               "\n";
    detail::write_text(dir + "/history.csv", csv);
    echo(dir + "/history.csv");
    return 0;
}

int cmd_eval_grid(const GlobalOpts& g, const std::string& manifest_path, const std::string& ckpt) {
    const std::string dir = ensure_out(g.out);
    ExperimentManifest m = load_experiment(manifest_path, g);
    Model<float> model = load_checkpoint<float>(ckpt);
    ItemBank bank = m.finetune.bank.load();
    HeatmapResult h = evaluate_grid(model, bank, m.data, m.eval.grid_n, m.eval.per_class);
    h.stage = "checkpoint";
    h.bank_id = m.finetune.bank.id();
    RepetitionRecord rec;
    rec.ok = true;
    rec.heatmap = h;
    write_heatmap_csv(dir + "/heatmap.csv", {rec});
    echo(dir + "/heatmap.csv");
    write_pgm(dir + "/heatmap.pgm", interpolate_heatmap(h, 256));
    echo(dir + "/heatmap.pgm");
    std::cout << "grid mean raw " << detail::fmt6(grid_mean(h)) << ", normalized "
              << detail::fmt6(normalized_accuracy(grid_mean(h), bank.classes())) << "\n";
    return 0;
}

int cmd_cosine(const GlobalOpts& g, const std::string& manifest_path, const std::string& ckpt,
               const std::string& stage) {
    const std::string dir = ensure_out(g.out);
    ExperimentManifest m = load_experiment(manifest_path, g);
    Model<float> model = load_checkpoint<float>(ckpt);
    ItemBank bank = m.finetune.bank.load();
    const auto sweep = horizontal_sweep(m.data.item_size, m.data.canvas_size, m.eval.cosine_steps);
    CosineProfile p = cosine_profile(model, bank, m.data, sweep, stage);
    RepetitionRecord rec;
    rec.ok = true;
    rec.profiles = {p};
    write_cosine_csv(dir + "/cosine.csv", {rec});
    echo(dir + "/cosine.csv");
    for (std::size_t i = 0; i < p.displacements.size(); ++i)
        std::cout << "dx " << p.displacements[i].first << ": cos " << detail::fmt6(p.mean_cos[i]) << " +- "
                  << detail::fmt6(p.std_cos[i]) << "\n";
    return 0;
}

int cmd_experiment(const GlobalOpts& g, const std::string& manifest_path) {
    const std::string dir = ensure_out(g.out);
    json raw;
    ExperimentManifest m = load_experiment(manifest_path, g, &raw);
    RunRecord rec = run_experiment(m, g.jobs);

    write_run_json(dir + "/run.json", rec, raw, g.seed_override);
    echo(dir + "/run.json");
    write_heatmap_csv(dir + "/heatmap.csv", rec.reps);
    echo(dir + "/heatmap.csv");
    write_cosine_csv(dir + "/cosine.csv", rec.reps);
    echo(dir + "/cosine.csv");
    write_pgm(dir + "/heatmap.pgm", interpolate_heatmap(mean_heatmap(rec.reps), 256));
    echo(dir + "/heatmap.pgm");

    std::cout << rec.name << ": normalized accuracy " << detail::fmt6(rec.mean_normalized) << " +- "
              << detail::fmt6(rec.std_normalized) << " over " << rec.reps.size() << " repetition(s)\n";
    for (const auto& r : rec.reps) {
        if (!r.ok) {
            std::cout << "  rep " << r.index << " FAILED: " << r.failure << "\n";
            continue;
        }
        std::cout << "  rep " << r.index << " (seed " << r.seed << "): normalized "
                  << detail::fmt6(r.grid_mean_normalized) << ", trained cell " << detail::fmt6(r.trained_cell_acc)
                  << "\n";
        if (g.verbose) {
            print_history("    pretrain", r.pretrain_history, false);
            print_history("    finetune", r.finetune_history, false);
        }
    }
    return 0;
}

int cmd_matrix(const GlobalOpts& g, const std::string& manifest_path) {
    const std::string dir = ensure_out(g.out);
    const json j = load_manifest_json(manifest_path);
    MatrixManifest mm = matrix_from_json(j);
    if (g.seed_override) mm.base_seed = *g.seed_override;
    const std::size_t nb = mm.banks.size();
    MatrixResult res;
    for (const auto& b : mm.banks) res.bank_ids.push_back(b.id());
    res.mean = Tensor<double>::zeros({static_cast<std::int64_t>(nb), static_cast<std::int64_t>(nb)});
    res.stddev = Tensor<double>::zeros(res.mean.shape());
    res.flags = Tensor<double>::zeros(res.mean.shape());
    for (std::size_t i = 0; i < nb; ++i)
        for (std::size_t jx = 0; jx < nb; ++jx) {
            ExperimentManifest cell = mm.cell(i, jx);
            RunRecord rec = run_experiment(cell, g.jobs);
            res.mean.at2(static_cast<std::int64_t>(i), static_cast<std::int64_t>(jx)) = rec.mean_normalized;
            res.stddev.at2(static_cast<std::int64_t>(i), static_cast<std::int64_t>(jx)) = rec.std_normalized;
            res.flags.at2(static_cast<std::int64_t>(i), static_cast<std::int64_t>(jx)) =
                mm.banks[i].id() == mm.banks[jx].id() ? 1.0 : 0.0;
            const std::string cell_path = dir + "/cell_" + std::to_string(i) + "_" + std::to_string(jx) + ".json";
            write_run_json(cell_path, rec, j, g.seed_override);
            echo(cell_path);
            std::cout << "cell [" << i << "," << jx << "] " << res.bank_ids[i] << " -> " << res.bank_ids[jx] << ": "
                      << detail::fmt6(rec.mean_normalized) << " +- " << detail::fmt6(rec.std_normalized) << "\n";
        }
    std::vector<std::string> written;
    write_matrix_csvs(dir, res, written);
    for (const auto& p : written) echo(p);
    return 0;
}

int cmd_report(const GlobalOpts& g, const std::string& run_path) {
    const json j = load_manifest_json(run_path);  // same parser: line-numbered errors
    std::cout << "run " << j.value("name", std::string("?")) << " (manifest hash "
              << j.value("manifest_hash", std::string("?")) << ")\n";
    const json& agg = j.at("aggregate");
    std::cout << "normalized accuracy " << detail::fmt6(agg.at("mean_normalized").get<double>()) << " +- "
              << detail::fmt6(agg.at("std_normalized").get<double>()) << "\n";
    std::vector<RepetitionRecord> reps;
    for (const json& rj : j.at("repetitions")) {
        RepetitionRecord r;
        r.index = rj.at("index").get<std::int64_t>();
        r.seed = rj.at("seed").get<std::uint64_t>();
        r.ok = rj.at("ok").get<bool>();
        if (!r.ok) {
            std::cout << "  rep " << r.index << " FAILED: " << rj.value("failure", std::string()) << "\n";
            reps.push_back(r);
            continue;
        }
        std::cout << "  rep " << r.index << " (seed " << r.seed << "): normalized "
                  << detail::fmt6(rj.at("grid_mean_normalized").get<double>()) << ", trained cell "
                  << detail::fmt6(rj.at("trained_cell_acc").get<double>()) << "\n";
        const json& hj = rj.at("heatmap");
        r.heatmap.n = hj.at("n").get<std::int64_t>();
        r.heatmap.centers = hj.at("centers").get<std::vector<double>>();
        r.heatmap.samples_per_cell = hj.at("samples_per_cell").get<std::int64_t>();
        r.heatmap.acc = Tensor<double>({r.heatmap.n, r.heatmap.n});
        for (std::int64_t iy = 0; iy < r.heatmap.n; ++iy)
            for (std::int64_t ix = 0; ix < r.heatmap.n; ++ix)
                r.heatmap.acc.at2(iy, ix) = hj.at("accuracy")[static_cast<std::size_t>(iy)][static_cast<std::size_t>(ix)]
                                                .get<double>();
        for (const json& pj : rj.at("profiles")) {
            CosineProfile p;
            p.stage = pj.at("stage").get<std::string>();
            for (const json& d : pj.at("displacements"))
                p.displacements.emplace_back(d[0].get<std::int64_t>(), d[1].get<std::int64_t>());
            p.mean_cos = pj.at("mean_cos").get<std::vector<double>>();
            p.std_cos = pj.at("std_cos").get<std::vector<double>>();
            r.profiles.push_back(std::move(p));
        }
        reps.push_back(std::move(r));
    }
    if (!g.out.empty() && g.out != default_out()) {
        const std::string dir = ensure_out(g.out);
        write_heatmap_csv(dir + "/heatmap.csv", reps);
        echo(dir + "/heatmap.csv");
        write_cosine_csv(dir + "/cosine.csv", reps);
        echo(dir + "/cosine.csv");
        write_pgm(dir + "/heatmap.pgm", interpolate_heatmap(mean_heatmap(reps), 256));
        echo(dir + "/heatmap.pgm");
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"shiftlab: translation-invariance measurement laboratory"};
    app.require_subcommand(1);
    app.fallthrough();  // allow --out/--seed/--jobs after the subcommand name

    GlobalOpts g;
    g.out = default_out();
    std::uint64_t seed_val = 0;
    app.add_option("--out", g.out, "output directory (default: $SHIFTLAB_OUT or .)");
    app.add_flag("-v,--verbose", g.verbose, "per-epoch training detail");
    auto* seed_opt = app.add_option("--seed", seed_val, "override the manifest base seed");
    app.add_option("--jobs", g.jobs, "concurrent repetitions")->check(CLI::PositiveNumber);

    std::string manifest_path, checkpoint_path, stage_name, run_path;
    std::int64_t classes = 10, exemplars = 1, glyph_size = 16, preview = 0;
    std::uint64_t bank_seed = 7777;
    double separability = 0.5;

    auto* gen = app.add_subcommand("gen-data", "materialize a synthetic bank as an idx pair");
    gen->add_option("--classes", classes)->check(CLI::Range(std::int64_t{2}, std::int64_t{255}));
    gen->add_option("--exemplars", exemplars)->check(CLI::PositiveNumber);
    gen->add_option("--size", glyph_size)->check(CLI::Range(std::int64_t{8}, std::int64_t{256}));
    gen->add_option("--bank-seed", bank_seed);
    gen->add_option("--separability", separability);
    gen->add_option("--preview", preview, "also write the first N class prototypes as pgm");

    auto* train = app.add_subcommand("train", "train one manifest stage from scratch");
    train->add_option("--manifest", manifest_path)->required();
    train->add_option("--stage", stage_name)->check(CLI::IsMember({"pretrain", "finetune"}));

    auto* evalg = app.add_subcommand("eval-grid", "location-grid heatmap for a checkpoint");
    evalg->add_option("--manifest", manifest_path)->required();
    evalg->add_option("--checkpoint", checkpoint_path)->required();

    auto* cosine = app.add_subcommand("cosine", "penultimate cosine profile for a checkpoint");
    cosine->add_option("--manifest", manifest_path)->required();
    cosine->add_option("--checkpoint", checkpoint_path)->required();
    std::string cos_stage = "checkpoint";
    cosine->add_option("--stage", cos_stage, "stage tag recorded in the csv");

    auto* exp = app.add_subcommand("experiment", "full pipeline: pretrain, fine-tune, evaluate");
    exp->add_option("--manifest", manifest_path)->required();

    auto* matrix = app.add_subcommand("matrix", "pretrain x fine-tune bank matrix");
    matrix->add_option("--manifest", manifest_path)->required();

    auto* report = app.add_subcommand("report", "summarize a run.json archive");
    report->add_option("--run", run_path)->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    if (*seed_opt) g.seed_override = seed_val;
    try {
        if (*gen) return cmd_gen_data(g, classes, exemplars, glyph_size, bank_seed, separability, preview);
        if (*train) return cmd_train(g, manifest_path, stage_name);
        if (*evalg) return cmd_eval_grid(g, manifest_path, checkpoint_path);
        if (*cosine) return cmd_cosine(g, manifest_path, checkpoint_path, cos_stage);
        if (*exp) return cmd_experiment(g, manifest_path);
        if (*matrix) return cmd_matrix(g, manifest_path);
        if (*report) return cmd_report(g, run_path);
    } catch (const config_error& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const data_error& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 4;
    }
    return 2;
}
