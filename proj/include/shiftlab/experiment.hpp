// Experiment manifests, the pretrain -> fine-tune -> evaluate pipeline and
// multi-repetition aggregation into run records.
#pragma once

#include <atomic>
#include <optional>
#include <sstream>
#include <thread>

#include "shiftlab/glyphs.hpp"
#include "shiftlab/idx.hpp"
#include "shiftlab/protocol.hpp"

namespace shiftlab {

struct BankSpec {
    std::string kind = "synthetic";  // synthetic | idx
    // synthetic
    std::int64_t classes = 10, exemplars = 1, glyph_size = 16;
    std::uint64_t seed = 7777;  // bank geometry seed, shared across repetitions
    double separability = 0.5;
    // idx
    std::string images, labels;
    std::vector<std::int64_t> filter;

    void validate() const {
        if (kind == "synthetic") {
            if (classes < 2) throw config_error("bank: synthetic classes must be >= 2");
            if (exemplars < 1) throw config_error("bank: exemplars must be >= 1");
        } else if (kind == "idx") {
            if (images.empty() || labels.empty()) throw config_error("bank: idx kind needs images and labels paths");
        } else {
            throw config_error("bank: unknown kind '" + kind + "' (expected synthetic or idx)");
        }
    }

    ItemBank load() const {
        validate();
        if (kind == "synthetic") return synth_glyph_bank(classes, exemplars, glyph_size, seed, separability);
        return load_idx(images, labels, filter);
    }

    // Class count without materializing a synthetic bank; idx banks fall back
    // to the filter length or, failing that, a file scan.
    std::int64_t classes_hint() const {
        if (kind == "synthetic") return classes;
        if (!filter.empty()) return static_cast<std::int64_t>(filter.size());
        return load().classes();
    }

    std::string id() const {
        if (kind == "synthetic")
            return "synthetic(k=" + std::to_string(classes) + ",ex=" + std::to_string(exemplars) + ",seed=" +
                   std::to_string(seed) + ")";
        return "idx(" + images + ")";
    }
};

struct StageSpec {
    BankSpec bank;
    PlacementPolicy policy;
    StopCriterion stop;
    std::int64_t repeats = 1;  // epoch multiplier handed to the batch stream
    double lr = 1e-3;
    std::int64_t batch_size = 32;
};

struct EvalSpec {
    std::int64_t grid_n = 9;
    std::int64_t cosine_steps = 8;
    bool per_class = false;
};

struct ExperimentManifest {
    std::string name = "experiment";
    std::optional<StageSpec> pretrain;  // absent -> vanilla condition
    StageSpec finetune;
    EvalSpec eval;
    std::int64_t repetitions = 5;
    std::uint64_t base_seed = 1;
    std::string model_preset = "vgg-mini";
    std::optional<ModelSpec> custom_model;
    DatasetConfig data;  // canvas/item/channels; per-stage policy+seed are filled per repetition

    void validate() const {
        if (repetitions < 1) throw config_error("manifest: repetitions must be >= 1");
        if (eval.grid_n < 2) throw config_error("manifest: grid n must be >= 2");
        if (eval.cosine_steps < 1) throw config_error("manifest: cosine steps must be >= 1");
        if (finetune.policy.kind != PlacementPolicy::Kind::fixed)
            throw config_error("manifest: the fine-tune stage must use a fixed location policy");
        finetune.bank.validate();
        finetune.stop.validate();
        if (pretrain) {
            pretrain->bank.validate();
            pretrain->stop.validate();
        }
        data.validate();
        const ModelSpec spec = model();
        if (spec.input.height != data.canvas_size || spec.input.width != data.canvas_size ||
            spec.input.channels != data.channels)
            throw config_error("manifest: model input geometry [" + std::to_string(spec.input.channels) + "," +
                               std::to_string(spec.input.height) + "," + std::to_string(spec.input.width) +
                               "] does not match the dataset canvas [" + std::to_string(data.channels) + "," +
                               std::to_string(data.canvas_size) + "," + std::to_string(data.canvas_size) + "]");
    }

    // Model built with the class count of the first trained stage.
    ModelSpec model() const {
        const std::int64_t k = pretrain ? pretrain->bank.classes_hint() : finetune.bank.classes_hint();
        if (custom_model) {
            ModelSpec s = *custom_model;
            s.classes = k;
            s.layers.back().out_features = k;
            s.validate();
            return s;
        }
        return preset(model_preset, k, data.channels);
    }

    // Canonical field-by-field rendering; its hash identifies the run.
    std::string canonical() const {
        std::ostringstream os;
        auto stage = [&os](const char* tag, const StageSpec& s) {
            os << tag << "{bank=" << s.bank.id() << ",policy=" << s.policy.kind_name() << ",fx=" << s.policy.fx
               << ",fy=" << s.policy.fy << ",side=" << s.policy.area_side << ",epochs=" << s.stop.max_epochs
               << ",target=" << s.stop.target_accuracy << ",repeats=" << s.repeats << ",lr=" << s.lr
               << ",batch=" << s.batch_size << "}";
        };
        os << "name=" << name << ";reps=" << repetitions << ";seed=" << base_seed << ";model=" << model_preset
           << ";canvas=" << data.canvas_size << ";item=" << data.item_size << ";channels=" << data.channels
           << ";grid=" << eval.grid_n << ";cosine=" << eval.cosine_steps << ";";
        if (pretrain) stage("pretrain", *pretrain);
        os << ";";
        stage("finetune", finetune);
        return os.str();
    }

    std::uint64_t hash() const { return fnv1a(canonical()); }
};

struct RepetitionRecord {
    std::int64_t index = 0;
    std::uint64_t seed = 0;
    bool ok = false;
    std::string failure;
    TrainHistory pretrain_history, finetune_history;
    std::vector<CosineProfile> profiles;  // vanilla [, pretrained], finetuned
    HeatmapResult heatmap;
    double grid_mean_raw = 0.0;
    double grid_mean_normalized = 0.0;
    double trained_cell_acc = 0.0;
};

struct RunRecord {
    std::string name;
    std::uint64_t manifest_hash = 0;
    std::vector<RepetitionRecord> reps;
    double mean_normalized = 0.0;
    double std_normalized = 0.0;  // population std over successful repetitions
};

namespace detail {

inline std::size_t nearest_cell(const std::vector<double>& centers, double v) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < centers.size(); ++i)
        if (std::abs(centers[i] - v) < std::abs(centers[best] - v)) best = i;
    return best;
}

}  // namespace detail

// One full repetition: fresh init (vanilla cosine) -> optional pretrain
// (pretrained cosine) -> fine-tune (finetuned cosine) -> location grid.
// Every probe uses the fine-tune bank.
inline RepetitionRecord run_repetition(const ExperimentManifest& m, std::int64_t r) {
    RepetitionRecord rec;
    rec.index = r;
    rec.seed = m.base_seed + static_cast<std::uint64_t>(r);

    const ItemBank ft_bank = m.finetune.bank.load();
    const auto sweep = horizontal_sweep(m.data.item_size, m.data.canvas_size, m.eval.cosine_steps);
    DatasetConfig probe_cfg = m.data;  // composition geometry only; no stream involved

    Model<float> model = build_model<float>(m.model());
    kaiming_init(model, rec.seed);
    rec.profiles.push_back(cosine_profile(model, ft_bank, probe_cfg, sweep, "vanilla"));

    if (m.pretrain) {
        const StageSpec& ps = *m.pretrain;
        DatasetConfig cfg = m.data;
        cfg.policy = ps.policy;
        cfg.repeats = ps.repeats;
        cfg.seed = Rng::derive(rec.seed, "pretrain.stream");
        BatchStream stream(ps.bank.load(), cfg, ps.batch_size);
        Adam<float> opt(ps.lr);
        rec.pretrain_history = train_to_criterion(model, stream, opt, ps.stop);
        rec.profiles.push_back(cosine_profile(model, ft_bank, probe_cfg, sweep, "pretrained"));
    }

    {
        const StageSpec& fs = m.finetune;
        DatasetConfig cfg = m.data;
        cfg.policy = fs.policy;
        cfg.repeats = fs.repeats;
        cfg.seed = Rng::derive(rec.seed, "finetune.stream");
        if (ft_bank.classes() != model.classes()) reinit_head(model, ft_bank.classes());
        BatchStream stream(ft_bank, cfg, fs.batch_size);
        Adam<float> opt(fs.lr);
        rec.finetune_history = train_to_criterion(model, stream, opt, fs.stop);
    }
    rec.profiles.push_back(cosine_profile(model, ft_bank, probe_cfg, sweep, "finetuned"));

    rec.heatmap = evaluate_grid(model, ft_bank, probe_cfg, m.eval.grid_n, m.eval.per_class);
    rec.heatmap.stage = "finetuned";
    rec.heatmap.bank_id = m.finetune.bank.id();
    rec.heatmap.repetition = r;
    rec.grid_mean_raw = grid_mean(rec.heatmap);
    rec.grid_mean_normalized = normalized_accuracy(rec.grid_mean_raw, ft_bank.classes());
    const std::size_t cx = detail::nearest_cell(rec.heatmap.centers, static_cast<double>(m.finetune.policy.fx));
    const std::size_t cy = detail::nearest_cell(rec.heatmap.centers, static_cast<double>(m.finetune.policy.fy));
    rec.trained_cell_acc = rec.heatmap.acc.at2(static_cast<std::int64_t>(cy), static_cast<std::int64_t>(cx));
    rec.ok = true;
    return rec;
}

// Runs all repetitions (optionally `jobs` at a time), recording per-repetition
// failures without aborting the others, then aggregates grid-mean normalized
// accuracy over the successful ones.
inline RunRecord run_experiment(const ExperimentManifest& m, std::int64_t jobs = 1) {
    m.validate();
    if (jobs < 1) throw config_error("jobs must be >= 1");
    RunRecord out;
    out.name = m.name;
    out.manifest_hash = m.hash();
    out.reps.resize(static_cast<std::size_t>(m.repetitions));

    std::atomic<std::int64_t> next{0};
    auto worker = [&] {
        for (;;) {
            const std::int64_t r = next.fetch_add(1);
            if (r >= m.repetitions) return;
            try {
                out.reps[static_cast<std::size_t>(r)] = run_repetition(m, r);
            } catch (const std::exception& e) {
                RepetitionRecord rec;
                rec.index = r;
                rec.seed = m.base_seed + static_cast<std::uint64_t>(r);
                rec.ok = false;
                rec.failure = e.what();
                out.reps[static_cast<std::size_t>(r)] = std::move(rec);
            }
        }
    };
    const std::int64_t nthreads = std::min<std::int64_t>(jobs, m.repetitions);
    if (nthreads <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (std::int64_t t = 0; t < nthreads; ++t) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }

    std::vector<double> vals;
    for (const auto& rec : out.reps)
        if (rec.ok) vals.push_back(rec.grid_mean_normalized);
    if (vals.empty()) {
        std::string why = out.reps.empty() ? "no repetitions" : out.reps.front().failure;
        throw run_error("every repetition failed; first failure: " + why);
    }
    double mean = 0.0;
    for (double v : vals) mean += v;
    mean /= static_cast<double>(vals.size());
    double var = 0.0;
    for (double v : vals) var += (v - mean) * (v - mean);
    out.mean_normalized = mean;
    out.std_normalized = std::sqrt(var / static_cast<double>(vals.size()));
    return out;
}

}  // namespace shiftlab
