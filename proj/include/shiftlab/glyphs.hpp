// Procedural high-contrast glyph banks: stroke/polygon skeletons rasterized
// by distance, with a pairwise-overlap separability screen between classes.
#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "shiftlab/data.hpp"

namespace shiftlab {
namespace detail {

struct Pt {
    double x = 0, y = 0;
};

inline double seg_dist(double px, double py, const Pt& a, const Pt& b) {
    const double dx = b.x - a.x, dy = b.y - a.y;
    const double len2 = dx * dx + dy * dy;
    double t = len2 > 0 ? ((px - a.x) * dx + (py - a.y) * dy) / len2 : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    const double cx = a.x + t * dx, cy = a.y + t * dy;
    return std::hypot(px - cx, py - cy);
}

struct GlyphShape {
    std::vector<std::vector<Pt>> strokes;  // each an open polyline
    double thickness = 1.5;
};

// Hard stroke core with a one-pixel anti-aliased rim.
inline Tensor<float> rasterize(const GlyphShape& g, std::int64_t size) {
    Tensor<float> out({size, size});
    for (std::int64_t y = 0; y < size; ++y)
        for (std::int64_t x = 0; x < size; ++x) {
            const double px = x + 0.5, py = y + 0.5;
            double d = 1e30;
            for (const auto& stroke : g.strokes)
                for (std::size_t i = 0; i + 1 < stroke.size(); ++i)
                    d = std::min(d, seg_dist(px, py, stroke[i], stroke[i + 1]));
            out.at2(y, x) = static_cast<float>(std::clamp(g.thickness * 0.5 + 0.5 - d, 0.0, 1.0));
        }
    return out;
}

inline GlyphShape draw_shape(std::int64_t size, Rng& rng) {
    const double s = static_cast<double>(size);
    const double lo = 0.18 * s, hi = 0.82 * s;
    const double min_gap = 0.28 * s;
    auto point = [&] { return Pt{lo + rng.uniform() * (hi - lo), lo + rng.uniform() * (hi - lo)}; };
    auto chain = [&](int n, bool closed) {
        std::vector<Pt> pts;
        pts.push_back(point());
        while (static_cast<int>(pts.size()) < n) {
            Pt p = point();
            if (std::hypot(p.x - pts.back().x, p.y - pts.back().y) < min_gap) continue;
            pts.push_back(p);
        }
        if (closed) pts.push_back(pts.front());
        return pts;
    };
    GlyphShape g;
    g.thickness = s * (0.08 + 0.06 * rng.uniform());
    const std::int64_t family = rng.uniform_int(0, 2);
    if (family == 0) {
        g.strokes.push_back(chain(3 + static_cast<int>(rng.uniform_int(0, 2)), false));
    } else if (family == 1) {
        g.strokes.push_back(chain(3 + static_cast<int>(rng.uniform_int(0, 2)), true));
    } else {
        g.strokes.push_back(chain(3, false));
        g.strokes.push_back(chain(2, false));
    }
    return g;
}

inline GlyphShape jitter_shape(const GlyphShape& base, std::int64_t size, Rng& rng) {
    const double s = static_cast<double>(size);
    const double angle = (rng.uniform() - 0.5) * 0.3;
    const double shift = 0.05 * s;
    const double ox = (rng.uniform() - 0.5) * 2.0 * shift, oy = (rng.uniform() - 0.5) * 2.0 * shift;
    const double ca = std::cos(angle), sa = std::sin(angle), c = s / 2.0;
    GlyphShape out;
    out.thickness = base.thickness * (0.85 + 0.3 * rng.uniform());
    for (const auto& stroke : base.strokes) {
        std::vector<Pt> pts;
        for (const Pt& p : stroke) {
            const double rx = ca * (p.x - c) - sa * (p.y - c) + c + ox;
            const double ry = sa * (p.x - c) + ca * (p.y - c) + c + oy;
            pts.push_back(Pt{std::clamp(rx, 0.0, s - 1.0), std::clamp(ry, 0.0, s - 1.0)});
        }
        out.strokes.push_back(std::move(pts));
    }
    return out;
}

inline double overlap(const Tensor<float>& a, const Tensor<float>& b) {
    double inter = 0, sa = 0, sb = 0;
    for (std::int64_t i = 0; i < a.numel(); ++i) {
        inter += std::min(a[i], b[i]);
        sa += a[i];
        sb += b[i];
    }
    const double denom = std::min(sa, sb);
    return denom > 0 ? inter / denom : 1.0;
}

}  // namespace detail

// Deterministic bank of K procedurally drawn classes. Class prototypes are
// redrawn (bounded retries) until their pairwise pixel overlap drops below
// `separability`; if the budget runs out the best candidate seen is kept, so
// generation always succeeds.
inline ItemBank synth_glyph_bank(std::int64_t k, std::int64_t exemplars, std::int64_t size, std::uint64_t seed,
                                 double separability = 0.5) {
    if (k < 2) throw config_error("glyph bank needs at least 2 classes, got " + std::to_string(k));
    if (exemplars < 1) throw config_error("glyph bank needs at least 1 exemplar per class");
    if (size < 8) throw config_error("glyph size must be >= 8, got " + std::to_string(size));
    Rng rng(Rng::derive(seed, "glyphs"));
    std::vector<detail::GlyphShape> shapes;
    std::vector<Tensor<float>> protos;
    for (std::int64_t c = 0; c < k; ++c) {
        detail::GlyphShape best_shape;
        Tensor<float> best_img;
        double best_worst = 2.0;
        for (int attempt = 0; attempt < 200; ++attempt) {
            detail::GlyphShape cand = detail::draw_shape(size, rng);
            Tensor<float> img = detail::rasterize(cand, size);
            double worst = 0.0;
            for (const auto& p : protos) worst = std::max(worst, detail::overlap(img, p));
            if (worst < best_worst) {
                best_worst = worst;
                best_shape = cand;
                best_img = img;
            }
            if (worst < separability) break;
        }
        shapes.push_back(best_shape);
        protos.push_back(best_img);
    }
    ItemBank bank;
    bank.provenance = "synthetic";
    bank.items.resize(static_cast<std::size_t>(k));
    for (std::int64_t c = 0; c < k; ++c) {
        bank.items[static_cast<std::size_t>(c)].push_back(protos[static_cast<std::size_t>(c)]);
        for (std::int64_t e = 1; e < exemplars; ++e) {
            detail::GlyphShape j = detail::jitter_shape(shapes[static_cast<std::size_t>(c)], size, rng);
            bank.items[static_cast<std::size_t>(c)].push_back(detail::rasterize(j, size));
        }
    }
    bank.validate();
    return bank;
}

}  // namespace shiftlab
