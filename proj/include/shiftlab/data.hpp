// Item banks, placement policies, canvas composition and batch streaming.
#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "shiftlab/rng.hpp"
#include "shiftlab/tensor.hpp"

namespace shiftlab {

struct ItemBank {
    std::string provenance;                         // "idx-file" | "synthetic"
    std::vector<std::vector<Tensor<float>>> items;  // [class][exemplar], each [S,S]

    std::int64_t classes() const { return static_cast<std::int64_t>(items.size()); }
    std::int64_t item_size() const {
        if (items.empty() || items[0].empty()) throw data_error("item bank is empty");
        return items[0][0].dim(0);
    }
    std::int64_t total_items() const {
        std::int64_t n = 0;
        for (const auto& c : items) n += static_cast<std::int64_t>(c.size());
        return n;
    }
    bool single_exemplar() const {
        for (const auto& c : items)
            if (c.size() != 1) return false;
        return true;
    }

    void validate() const {
        if (items.empty()) throw data_error("item bank has no classes");
        std::int64_t s = -1;
        for (std::size_t c = 0; c < items.size(); ++c) {
            if (items[c].empty()) throw data_error("class " + std::to_string(c) + " has no items");
            for (const auto& im : items[c]) {
                if (im.rank() != 2 || im.dim(0) != im.dim(1))
                    throw data_error("items must be square rank-2 images, got " + shape_str(im.shape()));
                if (s < 0) s = im.dim(0);
                if (im.dim(0) != s)
                    throw data_error("item size mismatch: " + std::to_string(im.dim(0)) + " vs " + std::to_string(s));
                for (std::int64_t i = 0; i < im.numel(); ++i)
                    if (!(im[i] >= 0.0f && im[i] <= 1.0f))
                        throw data_error("item pixel outside [0,1] in class " + std::to_string(c));
            }
        }
    }
};

struct PlacementPolicy {
    enum class Kind { fixed, fully_translated, area_segregated };
    Kind kind = Kind::fully_translated;
    std::int64_t fx = 0, fy = 0;   // fixed center
    std::int64_t area_side = 0;    // 0 -> scaled from the reference 58/224 ratio

    static PlacementPolicy fixed(std::int64_t x, std::int64_t y) {
        PlacementPolicy p;
        p.kind = Kind::fixed;
        p.fx = x;
        p.fy = y;
        return p;
    }
    static PlacementPolicy fully_translated() { return PlacementPolicy{}; }
    static PlacementPolicy area_segregated(std::int64_t side = 0) {
        PlacementPolicy p;
        p.kind = Kind::area_segregated;
        p.area_side = side;
        return p;
    }

    std::string kind_name() const {
        switch (kind) {
            case Kind::fixed: return "fixed";
            case Kind::fully_translated: return "fully_translated";
            case Kind::area_segregated: return "area_segregated";
        }
        return "?";
    }
};

struct DatasetConfig {
    std::int64_t canvas_size = 224;
    std::int64_t item_size = 50;
    std::int64_t channels = 1;
    std::uint64_t seed = 0;
    PlacementPolicy policy;
    std::int64_t repeats = 1;  // epoch multiplier (single-exemplar banks re-place each pass)

    void validate() const {
        if (item_size < 1 || canvas_size < 1) throw config_error("dataset: sizes must be positive");
        if (item_size >= canvas_size)
            throw config_error("dataset: item size " + std::to_string(item_size) + " must be smaller than canvas " +
                               std::to_string(canvas_size));
        if (channels != 1 && channels != 3) throw config_error("dataset: channels must be 1 or 3");
        if (repeats < 1) throw config_error("dataset: repeats must be >= 1");
    }
};

struct CanvasSample {
    Tensor<float> canvas;  // [C,H,W]
    std::int64_t label = 0;
    std::int64_t cx = 0, cy = 0;
};

// Inclusive feasible range for item centers along one axis.
inline std::pair<std::int64_t, std::int64_t> center_range(std::int64_t item, std::int64_t canvas) {
    const std::int64_t lo = item / 2;
    const std::int64_t hi = canvas - (item - item / 2);
    if (hi < lo) throw config_error("item does not fit the canvas");
    return {lo, hi};
}

// Leftmost abscissa that avoids cropping, canvas midline ordinate.
inline std::pair<std::int64_t, std::int64_t> leftmost_centered(std::int64_t item, std::int64_t canvas) {
    return {item / 2, canvas / 2};
}

inline std::int64_t area_side_for(const PlacementPolicy& p, std::int64_t canvas) {
    if (p.area_side > 0) return p.area_side;
    return (canvas * 58 + 112) / 224;  // round(canvas * 58/224), the reference layout ratio
}

// Draws a center under the policy. AreaSegregated samples uniformly inside the
// class's area (classes 2i and 2i+1 share area i, row-major), then clamps into
// the no-crop range, which permits slight cross-area overlap near the borders.
inline std::pair<std::int64_t, std::int64_t> sample_center(const PlacementPolicy& policy, std::int64_t cls,
                                                           std::int64_t item, std::int64_t canvas, Rng& rng) {
    const auto [lo, hi] = center_range(item, canvas);
    switch (policy.kind) {
        case PlacementPolicy::Kind::fixed: {
            if (policy.fx < lo || policy.fx > hi || policy.fy < lo || policy.fy > hi)
                throw data_error("fixed center (" + std::to_string(policy.fx) + "," + std::to_string(policy.fy) +
                                 ") would crop the item; feasible range is [" + std::to_string(lo) + "," +
                                 std::to_string(hi) + "]");
            return {policy.fx, policy.fy};
        }
        case PlacementPolicy::Kind::fully_translated: {
            const std::int64_t x = rng.uniform_int(lo, hi);
            const std::int64_t y = rng.uniform_int(lo, hi);
            return {x, y};
        }
        case PlacementPolicy::Kind::area_segregated: {
            const std::int64_t area = cls / 2;
            if (cls < 0 || area >= 9)
                throw data_error("class " + std::to_string(cls) + " has no area assignment (3x3 grid holds 18 classes)");
            const std::int64_t side = area_side_for(policy, canvas);
            if (3 * side > canvas)
                throw config_error("area side " + std::to_string(side) + " does not fit canvas " + std::to_string(canvas));
            const std::int64_t origin = (canvas - 3 * side) / 2;
            const std::int64_t row = area / 3, col = area % 3;
            const std::int64_t ax = origin + col * side, ay = origin + row * side;
            const std::int64_t x = std::clamp(ax + rng.uniform_int(0, side - 1), lo, hi);
            const std::int64_t y = std::clamp(ay + rng.uniform_int(0, side - 1), lo, hi);
            return {x, y};
        }
    }
    throw run_error("unreachable policy kind");
}

// Bilinear resample to target x target; half-pixel-centered sampling with edge
// clamping. Convex combination of inputs, so the [0,1] range is preserved.
inline Tensor<float> resize_item(const Tensor<float>& item, std::int64_t target) {
    if (item.rank() != 2) throw shape_error("resize_item expects a rank-2 image, got " + shape_str(item.shape()));
    if (target < 1) throw config_error("resize target must be positive");
    const std::int64_t h = item.dim(0), w = item.dim(1);
    if (h == target && w == target) return item;
    Tensor<float> out({target, target});
    const double sy = static_cast<double>(h) / static_cast<double>(target);
    const double sx = static_cast<double>(w) / static_cast<double>(target);
    for (std::int64_t i = 0; i < target; ++i) {
        const double fy = (static_cast<double>(i) + 0.5) * sy - 0.5;
        std::int64_t y0 = static_cast<std::int64_t>(std::floor(fy));
        const double wy = fy - static_cast<double>(y0);
        const std::int64_t y1 = std::clamp<std::int64_t>(y0 + 1, 0, h - 1);
        y0 = std::clamp<std::int64_t>(y0, 0, h - 1);
        for (std::int64_t j = 0; j < target; ++j) {
            const double fx = (static_cast<double>(j) + 0.5) * sx - 0.5;
            std::int64_t x0 = static_cast<std::int64_t>(std::floor(fx));
            const double wx = fx - static_cast<double>(x0);
            const std::int64_t x1 = std::clamp<std::int64_t>(x0 + 1, 0, w - 1);
            x0 = std::clamp<std::int64_t>(x0, 0, w - 1);
            const double top = (1.0 - wx) * item.at2(y0, x0) + wx * item.at2(y0, x1);
            const double bot = (1.0 - wx) * item.at2(y1, x0) + wx * item.at2(y1, x1);
            out.at2(i, j) = static_cast<float>((1.0 - wy) * top + wy * bot);
        }
    }
    return out;
}

// Copies the item onto a zero canvas with its top-left corner at
// center - floor(item/2). Rejects any placement that would crop.
inline CanvasSample compose_canvas(const Tensor<float>& item, std::int64_t cx, std::int64_t cy, std::int64_t label,
                                   const DatasetConfig& cfg) {
    const std::int64_t s = item.dim(0), n = cfg.canvas_size;
    if (item.rank() != 2 || item.dim(1) != s)
        throw shape_error("compose_canvas expects a square item, got " + shape_str(item.shape()));
    const std::int64_t x0 = cx - s / 2, y0 = cy - s / 2;
    if (x0 < 0 || y0 < 0 || x0 + s > n || y0 + s > n)
        throw data_error("placement at (" + std::to_string(cx) + "," + std::to_string(cy) + ") would crop a " +
                         std::to_string(s) + "px item on a " + std::to_string(n) + "px canvas");
    CanvasSample out;
    out.label = label;
    out.cx = cx;
    out.cy = cy;
    out.canvas = Tensor<float>::zeros({cfg.channels, n, n});
    for (std::int64_t y = 0; y < s; ++y)
        for (std::int64_t x = 0; x < s; ++x) out.canvas[(y0 + y) * n + (x0 + x)] = item.at2(y, x);
    for (std::int64_t c = 1; c < cfg.channels; ++c)
        std::copy(out.canvas.data(), out.canvas.data() + n * n, out.canvas.data() + c * n * n);
    return out;
}

inline ItemBank resize_bank(const ItemBank& bank, std::int64_t target) {
    ItemBank out;
    out.provenance = bank.provenance;
    out.items.resize(bank.items.size());
    for (std::size_t c = 0; c < bank.items.size(); ++c)
        for (const auto& im : bank.items[c]) out.items[c].push_back(resize_item(im, target));
    return out;
}

struct Batch {
    Tensor<float> x;  // [B,C,H,W]
    std::vector<std::int64_t> y;
    std::vector<std::pair<std::int64_t, std::int64_t>> centers;
};

// Deterministic shuffled epochs over the whole bank (times `repeats`), with
// placements drawn fresh per emission for stochastic policies.
class BatchStream {
  public:
    BatchStream(const ItemBank& bank, const DatasetConfig& cfg, std::int64_t batch_size)
        : cfg_(cfg), batch_(batch_size), place_rng_(Rng::derive(cfg.seed, "place")) {
        cfg_.validate();
        bank.validate();
        if (batch_size < 1) throw config_error("batch size must be >= 1");
        bank_ = resize_bank(bank, cfg_.item_size);
        for (std::int64_t r = 0; r < cfg_.repeats; ++r)
            for (std::size_t c = 0; c < bank_.items.size(); ++c)
                for (std::size_t e = 0; e < bank_.items[c].size(); ++e)
                    order_.emplace_back(static_cast<std::int64_t>(c), static_cast<std::int64_t>(e));
        shuffle_epoch();
    }

    std::int64_t samples_per_epoch() const { return static_cast<std::int64_t>(order_.size()); }
    std::int64_t batches_per_epoch() const {
        return (samples_per_epoch() + batch_ - 1) / batch_;
    }
    std::int64_t epoch() const { return epoch_; }
    std::int64_t classes() const { return bank_.classes(); }
    const DatasetConfig& config() const { return cfg_; }

    Batch next() {
        const std::int64_t n = samples_per_epoch();
        const std::int64_t take = std::min<std::int64_t>(batch_, n - cursor_);
        Batch b;
        b.x = Tensor<float>::zeros({take, cfg_.channels, cfg_.canvas_size, cfg_.canvas_size});
        const std::int64_t plane = cfg_.channels * cfg_.canvas_size * cfg_.canvas_size;
        for (std::int64_t i = 0; i < take; ++i) {
            const auto [cls, ex] = order_[static_cast<std::size_t>(cursor_ + i)];
            const auto [cx, cy] = sample_center(cfg_.policy, cls, cfg_.item_size, cfg_.canvas_size, place_rng_);
            CanvasSample s = compose_canvas(bank_.items[cls][ex], cx, cy, cls, cfg_);
            std::copy(s.canvas.data(), s.canvas.data() + plane, b.x.data() + i * plane);
            b.y.push_back(cls);
            b.centers.emplace_back(cx, cy);
        }
        cursor_ += take;
        if (cursor_ >= n) {
            ++epoch_;
            cursor_ = 0;
            shuffle_epoch();
        }
        return b;
    }

  private:
    void shuffle_epoch() {
        Rng r(Rng::derive(cfg_.seed, "epoch." + std::to_string(epoch_)));
        r.shuffle(order_);
    }

    DatasetConfig cfg_;
    std::int64_t batch_;
    ItemBank bank_;
    std::vector<std::pair<std::int64_t, std::int64_t>> order_;
    std::int64_t cursor_ = 0;
    std::int64_t epoch_ = 0;
    Rng place_rng_;
};

}  // namespace shiftlab
