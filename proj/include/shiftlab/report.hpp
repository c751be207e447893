// Report emission: fixed-column CSVs (dot-decimal), P5 graymaps and the
// run.json archive. Readers for the round-trippable formats live here too.
#pragma once

#include <cstdio>
#include <fstream>

#include "shiftlab/manifest.hpp"

namespace shiftlab {

namespace detail {

inline std::string fmt6(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", v);  // C locale: always dot-decimal
    return buf;
}

inline void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw run_error("cannot open for writing: " + path);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!out) throw run_error("short write: " + path);
}

}  // namespace detail

// Columns: rep,iy,ix,center_y,center_x,accuracy
inline void write_heatmap_csv(const std::string& path, const std::vector<RepetitionRecord>& reps) {
    std::string out = "rep,iy,ix,center_y,center_x,accuracy\n";
    for (const auto& r : reps) {
        if (!r.ok) continue;
        const HeatmapResult& h = r.heatmap;
        for (std::int64_t iy = 0; iy < h.n; ++iy)
            for (std::int64_t ix = 0; ix < h.n; ++ix)
                out += std::to_string(r.index) + "," + std::to_string(iy) + "," + std::to_string(ix) + "," +
                       detail::fmt6(h.centers[static_cast<std::size_t>(iy)]) + "," +
                       detail::fmt6(h.centers[static_cast<std::size_t>(ix)]) + "," + detail::fmt6(h.acc.at2(iy, ix)) +
                       "\n";
    }
    detail::write_text(path, out);
}

// Columns: rep,stage,dx,dy,mean_cos,std_cos
inline void write_cosine_csv(const std::string& path, const std::vector<RepetitionRecord>& reps) {
    std::string out = "rep,stage,dx,dy,mean_cos,std_cos\n";
    for (const auto& r : reps) {
        if (!r.ok) continue;
        for (const auto& p : r.profiles)
            for (std::size_t i = 0; i < p.displacements.size(); ++i)
                out += std::to_string(r.index) + "," + p.stage + "," + std::to_string(p.displacements[i].first) + "," +
                       std::to_string(p.displacements[i].second) + "," + detail::fmt6(p.mean_cos[i]) + "," +
                       detail::fmt6(p.std_cos[i]) + "\n";
    }
    detail::write_text(path, out);
}

// P5 binary graymap; accuracy 0 maps to black, 1 to white.
inline void write_pgm(const std::string& path, const Tensor<double>& raster) {
    if (raster.rank() != 2) throw shape_error("pgm writer expects a rank-2 raster");
    std::string out = "P5\n" + std::to_string(raster.dim(1)) + " " + std::to_string(raster.dim(0)) + "\n255\n";
    for (std::int64_t i = 0; i < raster.numel(); ++i) {
        const double v = std::clamp(raster[i], 0.0, 1.0);
        out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0))));
    }
    detail::write_text(path, out);
}

inline Tensor<double> read_pgm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw data_error("cannot open pgm: " + path);
    std::string magic;
    std::int64_t w = 0, h = 0, maxv = 0;
    in >> magic >> w >> h >> maxv;
    if (magic != "P5" || maxv != 255) throw data_error("not an 8-bit P5 graymap: " + path);
    in.get();  // the single whitespace after the header
    Tensor<double> out({h, w});
    for (std::int64_t i = 0; i < out.numel(); ++i) {
        const int c = in.get();
        if (c < 0) throw data_error("pgm truncated: " + path);
        out[i] = static_cast<double>(c) / 255.0;
    }
    return out;
}

inline json history_to_json(const TrainHistory& h) {
    json loss = json::array(), acc = json::array();
    for (const auto& e : h.epochs) {
        loss.push_back(e.loss);
        acc.push_back(e.accuracy);
    }
    return {{"loss", loss}, {"accuracy", acc}, {"steps", h.steps}, {"reached_target", h.reached_target}};
}

inline json heatmap_to_json(const HeatmapResult& h) {
    json rows = json::array();
    for (std::int64_t iy = 0; iy < h.n; ++iy) {
        json row = json::array();
        for (std::int64_t ix = 0; ix < h.n; ++ix) row.push_back(h.acc.at2(iy, ix));
        rows.push_back(row);
    }
    return {{"n", h.n}, {"centers", h.centers}, {"accuracy", rows}, {"samples_per_cell", h.samples_per_cell}};
}

inline json profile_to_json(const CosineProfile& p) {
    json disp = json::array();
    for (const auto& d : p.displacements) disp.push_back(json::array({d.first, d.second}));
    return {{"stage", p.stage}, {"displacements", disp}, {"mean_cos", p.mean_cos},
            {"std_cos", p.std_cos}, {"zero_items", p.zero_items}};
}

inline json run_record_to_json(const RunRecord& rec, const json& manifest_json,
                               std::optional<std::uint64_t> seed_override) {
    char hash[20];
    std::snprintf(hash, sizeof hash, "0x%016llx", static_cast<unsigned long long>(rec.manifest_hash));
    json reps = json::array();
    for (const auto& r : rec.reps) {
        json rj = {{"index", r.index}, {"seed", r.seed}, {"ok", r.ok}};
        if (!r.ok) {
            rj["failure"] = r.failure;
        } else {
            rj["grid_mean_raw"] = r.grid_mean_raw;
            rj["grid_mean_normalized"] = r.grid_mean_normalized;
            rj["trained_cell_acc"] = r.trained_cell_acc;
            rj["pretrain_history"] = history_to_json(r.pretrain_history);
            rj["finetune_history"] = history_to_json(r.finetune_history);
            rj["heatmap"] = heatmap_to_json(r.heatmap);
            json profs = json::array();
            for (const auto& p : r.profiles) profs.push_back(profile_to_json(p));
            rj["profiles"] = profs;
        }
        reps.push_back(rj);
    }
    json out = {{"name", rec.name},
                {"manifest_hash", hash},
                {"aggregate", {{"mean_normalized", rec.mean_normalized}, {"std_normalized", rec.std_normalized}}},
                {"repetitions", reps},
                {"manifest", manifest_json}};
    out["seed_override"] = seed_override ? json(*seed_override) : json(nullptr);
    return out;
}

inline void write_run_json(const std::string& path, const RunRecord& rec, const json& manifest_json,
                           std::optional<std::uint64_t> seed_override) {
    detail::write_text(path, run_record_to_json(rec, manifest_json, seed_override).dump(2) + "\n");
}

// Mean heatmap over successful repetitions (cell-wise), for rendering.
inline HeatmapResult mean_heatmap(const std::vector<RepetitionRecord>& reps) {
    const RepetitionRecord* first = nullptr;
    for (const auto& r : reps)
        if (r.ok) {
            first = &r;
            break;
        }
    if (!first) throw run_error("no successful repetition to average");
    HeatmapResult out = first->heatmap;
    out.per_class.clear();
    Tensor<double> sum = Tensor<double>::zeros(out.acc.shape());
    std::int64_t n = 0;
    for (const auto& r : reps) {
        if (!r.ok) continue;
        for (std::int64_t i = 0; i < sum.numel(); ++i) sum[i] += r.heatmap.acc[i];
        ++n;
    }
    for (std::int64_t i = 0; i < sum.numel(); ++i) sum[i] /= static_cast<double>(n);
    out.acc = sum;
    return out;
}

// Matrix tables: one row per pretrain bank, one column per fine-tune bank.
// flags holds 1 on cells whose pretrain and fine-tune banks are the same.
struct MatrixResult {
    std::vector<std::string> bank_ids;
    Tensor<double> mean, stddev;  // [banks, banks]
    Tensor<double> flags;
};

inline void write_matrix_csvs(const std::string& dir, const MatrixResult& m,
                              std::vector<std::string>& written) {
    auto table = [&](const std::string& name, const Tensor<double>& t, bool flag_table) {
        std::string out = "pretrain_bank";
        for (const auto& id : m.bank_ids) out += "," + id;
        out += "\n";
        for (std::size_t i = 0; i < m.bank_ids.size(); ++i) {
            out += m.bank_ids[i];
            for (std::size_t j = 0; j < m.bank_ids.size(); ++j) {
                const double v = t.at2(static_cast<std::int64_t>(i), static_cast<std::int64_t>(j));
                out += flag_table ? "," + std::to_string(static_cast<int>(v)) : "," + detail::fmt6(v);
            }
            out += "\n";
        }
        const std::string path = dir + "/" + name;
        detail::write_text(path, out);
        written.push_back(path);
    };
    table("matrix_mean.csv", m.mean, false);
    table("matrix_std.csv", m.stddev, false);
    table("matrix_flags.csv", m.flags, true);
}

}  // namespace shiftlab
