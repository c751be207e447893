// The experimental engine: train-to-criterion, fine-tuning, location-grid
// heatmaps, normalized accuracy, penultimate cosine profiles and
// multi-repetition aggregation.
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <set>

#include "shiftlab/data.hpp"
#include "shiftlab/optim.hpp"

namespace shiftlab {

struct StopCriterion {
    std::int64_t max_epochs = 50;
    double target_accuracy = 0.99;

    void validate() const {
        if (max_epochs < 0) throw config_error("stop criterion: max epochs must be >= 0");
        if (target_accuracy < 0.0 || target_accuracy > 1.0)
            throw config_error("stop criterion: target accuracy must lie in [0,1]");
    }
};

struct EpochStats {
    double loss = 0.0;
    double accuracy = 0.0;
};

struct TrainHistory {
    std::vector<EpochStats> epochs;
    std::int64_t steps = 0;
    bool reached_target = false;
};

namespace detail {

inline void check_stream_geometry(const Model<float>& model, const BatchStream& stream) {
    const DatasetConfig& cfg = stream.config();
    const InputGeom& in = model.spec.input;
    if (in.channels != cfg.channels || in.height != cfg.canvas_size || in.width != cfg.canvas_size)
        throw config_error("model input [" + std::to_string(in.channels) + "," + std::to_string(in.height) + "," +
                           std::to_string(in.width) + "] does not match stream canvas [" +
                           std::to_string(cfg.channels) + "," + std::to_string(cfg.canvas_size) + "," +
                           std::to_string(cfg.canvas_size) + "]");
    if (model.classes() < stream.classes())
        throw config_error("model has " + std::to_string(model.classes()) + " outputs but the bank holds " +
                           std::to_string(stream.classes()) + " classes");
}

}  // namespace detail

// Runs whole epochs until the first whose training accuracy reaches the
// target, or until the epoch cap. History records per-epoch mean loss and
// accuracy measured on the batches as they are consumed.
inline TrainHistory train_to_criterion(Model<float>& model, BatchStream& stream, Adam<float>& opt,
                                       const StopCriterion& stop) {
    stop.validate();
    detail::check_stream_geometry(model, stream);
    TrainHistory hist;
    for (std::int64_t epoch = 0; epoch < stop.max_epochs; ++epoch) {
        double loss_sum = 0.0;
        std::int64_t correct = 0, seen = 0;
        const std::int64_t nb = stream.batches_per_epoch();
        for (std::int64_t b = 0; b < nb; ++b) {
            Batch batch = stream.next();
            auto fr = forward(model, batch.x);
            auto loss = softmax_cross_entropy(fr.logits, batch.y);
            const double lv = loss->value[0];
            if (!std::isfinite(lv))
                throw run_error("non-finite loss at step " + std::to_string(hist.steps) + " (epoch " +
                                std::to_string(epoch) + ")");
            const auto picks = argmax_rows(fr.logits->value);
            for (std::size_t i = 0; i < picks.size(); ++i) correct += picks[i] == batch.y[i];
            seen += static_cast<std::int64_t>(picks.size());
            loss_sum += lv * static_cast<double>(picks.size());
            backward(loss);
            opt.step(model, fr);
            ++hist.steps;
        }
        EpochStats s;
        s.loss = loss_sum / static_cast<double>(seen);
        s.accuracy = static_cast<double>(correct) / static_cast<double>(seen);
        hist.epochs.push_back(s);
        if (s.accuracy >= stop.target_accuracy) {
            hist.reached_target = true;
            break;
        }
    }
    return hist;
}

// Continues training from an existing model. When the new bank's class count
// differs, only the final linear layer is re-initialized; everything else
// starts from the checkpoint weights. All layers remain trainable.
inline TrainHistory fine_tune(Model<float>& model, const ItemBank& bank, const DatasetConfig& cfg,
                              const StopCriterion& stop, double lr = 1e-3) {
    if (bank.classes() != model.classes()) reinit_head(model, bank.classes());
    BatchStream stream(bank, cfg, 32);
    Adam<float> opt(lr);
    return train_to_criterion(model, stream, opt, stop);
}

// n equally spaced real-valued feasible centers along one axis.
inline std::vector<double> grid_centers(std::int64_t item, std::int64_t canvas, std::int64_t n) {
    if (n < 2) throw config_error("grid needs n >= 2, got " + std::to_string(n));
    const auto [lo, hi] = center_range(item, canvas);
    std::vector<double> out;
    for (std::int64_t i = 0; i < n; ++i)
        out.push_back(static_cast<double>(lo) +
                      static_cast<double>(i) * static_cast<double>(hi - lo) / static_cast<double>(n - 1));
    return out;
}

struct HeatmapResult {
    std::int64_t n = 0;
    std::vector<double> centers;      // per-axis node positions
    Tensor<double> acc;               // [n,n], row = y index, col = x index
    std::vector<Tensor<double>> per_class;  // optional, one [n,n] grid per class
    std::int64_t samples_per_cell = 0;
    std::string stage, bank_id;
    std::int64_t repetition = 0;
};

using ClassifyFn = std::function<std::vector<std::int64_t>(const Tensor<float>&)>;

// Composes every bank item at each of the n x n grid centers and scores the
// classifier there. Cell accuracy = fraction of items classified correctly.
inline HeatmapResult evaluate_grid_with(const ClassifyFn& classify, const ItemBank& bank, const DatasetConfig& cfg,
                                        std::int64_t n, bool per_class = false) {
    cfg.validate();
    bank.validate();
    const ItemBank rb = resize_bank(bank, cfg.item_size);
    HeatmapResult out;
    out.n = n;
    out.centers = grid_centers(cfg.item_size, cfg.canvas_size, n);
    out.acc = Tensor<double>::zeros({n, n});
    out.samples_per_cell = rb.total_items();
    if (per_class) out.per_class.assign(static_cast<std::size_t>(rb.classes()), Tensor<double>::zeros({n, n}));

    std::vector<std::int64_t> labels;
    std::vector<const Tensor<float>*> items;
    for (std::size_t c = 0; c < rb.items.size(); ++c)
        for (const auto& im : rb.items[c]) {
            labels.push_back(static_cast<std::int64_t>(c));
            items.push_back(&im);
        }
    const std::int64_t m = static_cast<std::int64_t>(items.size());
    const std::int64_t plane = cfg.channels * cfg.canvas_size * cfg.canvas_size;

    for (std::int64_t iy = 0; iy < n; ++iy)
        for (std::int64_t ix = 0; ix < n; ++ix) {
            const std::int64_t cx = std::lround(out.centers[static_cast<std::size_t>(ix)]);
            const std::int64_t cy = std::lround(out.centers[static_cast<std::size_t>(iy)]);
            Tensor<float> batch({m, cfg.channels, cfg.canvas_size, cfg.canvas_size});
            for (std::int64_t i = 0; i < m; ++i) {
                CanvasSample s = compose_canvas(*items[static_cast<std::size_t>(i)], cx, cy,
                                                labels[static_cast<std::size_t>(i)], cfg);
                std::copy(s.canvas.data(), s.canvas.data() + plane, batch.data() + i * plane);
            }
            const std::vector<std::int64_t> picks = classify(batch);
            if (static_cast<std::int64_t>(picks.size()) != m)
                throw run_error("classifier returned " + std::to_string(picks.size()) + " labels for " +
                                std::to_string(m) + " samples");
            std::int64_t correct = 0;
            std::vector<std::int64_t> class_correct(static_cast<std::size_t>(rb.classes()), 0);
            std::vector<std::int64_t> class_total(static_cast<std::size_t>(rb.classes()), 0);
            for (std::int64_t i = 0; i < m; ++i) {
                const bool ok = picks[static_cast<std::size_t>(i)] == labels[static_cast<std::size_t>(i)];
                correct += ok;
                class_correct[static_cast<std::size_t>(labels[static_cast<std::size_t>(i)])] += ok;
                class_total[static_cast<std::size_t>(labels[static_cast<std::size_t>(i)])] += 1;
            }
            out.acc.at2(iy, ix) = static_cast<double>(correct) / static_cast<double>(m);
            if (per_class)
                for (std::int64_t c = 0; c < rb.classes(); ++c)
                    out.per_class[static_cast<std::size_t>(c)].at2(iy, ix) =
                        static_cast<double>(class_correct[static_cast<std::size_t>(c)]) /
                        static_cast<double>(class_total[static_cast<std::size_t>(c)]);
        }
    return out;
}

inline HeatmapResult evaluate_grid(const Model<float>& model, const ItemBank& bank, const DatasetConfig& cfg,
                                   std::int64_t n, bool per_class = false) {
    ClassifyFn classify = [&model](const Tensor<float>& batch) {
        return argmax_rows(forward(model, batch).logits->value);
    };
    return evaluate_grid_with(classify, bank, cfg, n, per_class);
}

inline double grid_mean(const HeatmapResult& h) {
    double s = 0.0;
    for (std::int64_t i = 0; i < h.acc.numel(); ++i) s += h.acc[i];
    return s / static_cast<double>(h.acc.numel());
}

// Maps a raw accuracy onto the 0 = chance, 100 = perfect scale.
inline double normalized_accuracy(double raw, std::int64_t k) {
    if (k < 2) throw config_error("normalized accuracy needs K >= 2, got " + std::to_string(k));
    const double chance = 1.0 / static_cast<double>(k);
    return 100.0 * (raw - chance) / (1.0 - chance);
}

// Bilinear upsampling of the heatmap over its node bounding box; samples that
// land on nodes reproduce them exactly, and all values stay within the grid's
// [min, max].
inline Tensor<double> interpolate_heatmap(const HeatmapResult& h, std::int64_t raster) {
    if (raster < 2) throw config_error("raster size must be >= 2");
    Tensor<double> out({raster, raster});
    const double scale = static_cast<double>(h.n - 1) / static_cast<double>(raster - 1);
    for (std::int64_t i = 0; i < raster; ++i) {
        const double ty = static_cast<double>(i) * scale;
        const std::int64_t y0 = std::min<std::int64_t>(static_cast<std::int64_t>(ty), h.n - 2);
        const double wy = ty - static_cast<double>(y0);
        for (std::int64_t j = 0; j < raster; ++j) {
            const double tx = static_cast<double>(j) * scale;
            const std::int64_t x0 = std::min<std::int64_t>(static_cast<std::int64_t>(tx), h.n - 2);
            const double wx = tx - static_cast<double>(x0);
            const double top = (1.0 - wx) * h.acc.at2(y0, x0) + wx * h.acc.at2(y0, x0 + 1);
            const double bot = (1.0 - wx) * h.acc.at2(y0 + 1, x0) + wx * h.acc.at2(y0 + 1, x0 + 1);
            out.at2(i, j) = (1.0 - wy) * top + wy * bot;
        }
    }
    return out;
}

struct CosineProfile {
    std::string stage;  // vanilla | pretrained | finetuned
    std::string bank_id;
    std::vector<std::pair<std::int64_t, std::int64_t>> displacements;
    std::vector<double> mean_cos, std_cos;   // aggregated over items, per displacement
    std::vector<std::int64_t> zero_items;    // flattened item indices that hit the zero-vector guard
};

using EmbedFn = std::function<Tensor<float>(const Tensor<float>&)>;

namespace detail {

// Bitwise-equal vectors are defined to have similarity exactly 1; otherwise
// the double-accumulated quotient, with the zero-vector guard mapping to 0.
inline double cosine(const float* a, const float* b, std::int64_t n, bool& zero) {
    bool identical = true;
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
        identical = identical && a[i] == b[i];
        dot += static_cast<double>(a[i]) * b[i];
        na += static_cast<double>(a[i]) * a[i];
        nb += static_cast<double>(b[i]) * b[i];
    }
    if (na == 0.0 || nb == 0.0) {
        zero = true;
        return 0.0;
    }
    if (identical) return 1.0;
    return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

}  // namespace detail

// Horizontal rightward sweep from the leftmost-centered reference: the zero
// displacement plus `steps` equally spaced feasible offsets.
inline std::vector<std::pair<std::int64_t, std::int64_t>> horizontal_sweep(std::int64_t item, std::int64_t canvas,
                                                                           std::int64_t steps = 8) {
    const auto [lo, hi] = center_range(item, canvas);
    std::vector<std::pair<std::int64_t, std::int64_t>> out;
    for (std::int64_t s = 0; s <= steps; ++s)
        out.emplace_back(std::lround(static_cast<double>(s) * static_cast<double>(hi - lo) /
                                     static_cast<double>(steps)),
                         0);
    return out;
}

// Penultimate-layer similarity between each item at the leftmost-centered
// reference and the same item displaced by (dx,dy).
inline CosineProfile cosine_profile_with(const EmbedFn& embed, const ItemBank& bank, const DatasetConfig& cfg,
                                         const std::vector<std::pair<std::int64_t, std::int64_t>>& displacements,
                                         const std::string& stage) {
    cfg.validate();
    bank.validate();
    const ItemBank rb = resize_bank(bank, cfg.item_size);
    const auto [refx, refy] = leftmost_centered(cfg.item_size, cfg.canvas_size);
    const auto [lo, hi] = center_range(cfg.item_size, cfg.canvas_size);
    for (const auto& [dx, dy] : displacements) {
        const std::int64_t x = refx + dx, y = refy + dy;
        if (x < lo || x > hi || y < lo || y > hi)
            throw config_error("displacement (" + std::to_string(dx) + "," + std::to_string(dy) +
                               ") leaves the feasible box from the leftmost-centered reference");
    }

    std::vector<const Tensor<float>*> items;
    std::vector<std::int64_t> labels;
    for (std::size_t c = 0; c < rb.items.size(); ++c)
        for (const auto& im : rb.items[c]) {
            items.push_back(&im);
            labels.push_back(static_cast<std::int64_t>(c));
        }
    const std::int64_t m = static_cast<std::int64_t>(items.size());
    const std::int64_t plane = cfg.channels * cfg.canvas_size * cfg.canvas_size;
    auto embed_at = [&](std::int64_t cx, std::int64_t cy) {
        Tensor<float> batch({m, cfg.channels, cfg.canvas_size, cfg.canvas_size});
        for (std::int64_t i = 0; i < m; ++i) {
            CanvasSample s = compose_canvas(*items[static_cast<std::size_t>(i)], cx, cy,
                                            labels[static_cast<std::size_t>(i)], cfg);
            std::copy(s.canvas.data(), s.canvas.data() + plane, batch.data() + i * plane);
        }
        Tensor<float> e = embed(batch);
        if (e.rank() != 2 || e.dim(0) != m)
            throw run_error("embedding must be [items, width], got " + shape_str(e.shape()));
        return e;
    };

    const Tensor<float> ref = embed_at(refx, refy);
    const std::int64_t p = ref.dim(1);
    CosineProfile out;
    out.stage = stage;
    out.bank_id = bank.provenance;
    out.displacements = displacements;
    std::set<std::int64_t> flagged;
    for (const auto& [dx, dy] : displacements) {
        const Tensor<float> disp = embed_at(refx + dx, refy + dy);
        double mean = 0.0;
        std::vector<double> cs(static_cast<std::size_t>(m));
        for (std::int64_t i = 0; i < m; ++i) {
            bool zero = false;
            cs[static_cast<std::size_t>(i)] = detail::cosine(ref.data() + i * p, disp.data() + i * p, p, zero);
            if (zero) flagged.insert(i);
            mean += cs[static_cast<std::size_t>(i)];
        }
        mean /= static_cast<double>(m);
        double var = 0.0;
        for (double c : cs) var += (c - mean) * (c - mean);
        out.mean_cos.push_back(mean);
        out.std_cos.push_back(std::sqrt(var / static_cast<double>(m)));
    }
    out.zero_items.assign(flagged.begin(), flagged.end());
    return out;
}

inline CosineProfile cosine_profile(const Model<float>& model, const ItemBank& bank, const DatasetConfig& cfg,
                                    const std::vector<std::pair<std::int64_t, std::int64_t>>& displacements,
                                    const std::string& stage) {
    EmbedFn embed = [&model](const Tensor<float>& batch) { return forward(model, batch, true).penultimate; };
    return cosine_profile_with(embed, bank, cfg, displacements, stage);
}

}  // namespace shiftlab
