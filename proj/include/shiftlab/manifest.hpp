// JSON manifest parsing with field-path diagnostics, for single experiments
// and pretrain x fine-tune matrices.
#pragma once

#include <fstream>

#include "shiftlab/checkpoint.hpp"
#include "shiftlab/experiment.hpp"
#include "vendor/json.hpp"

namespace shiftlab {

using json = nlohmann::json;

// Parses a manifest file; syntax errors are reported with their line number.
inline json load_manifest_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw config_error("cannot open manifest: " + path);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        std::size_t line = 1;
        for (std::size_t i = 0; i < std::min(e.byte, text.size()); ++i)
            if (text[i] == '\n') ++line;
        throw config_error("manifest parse error in " + path + " at line " + std::to_string(line) + ": " + e.what());
    }
}

namespace detail {

template <typename T>
T field(const json& j, const char* name, const std::string& ctx) {
    if (!j.is_object() || !j.contains(name))
        throw config_error("manifest: missing field '" + ctx + "." + name + "'");
    try {
        return j.at(name).get<T>();
    } catch (const json::exception&) {
        throw config_error("manifest: field '" + ctx + "." + name + "' has the wrong type");
    }
}

template <typename T>
T field_or(const json& j, const char* name, const std::string& ctx, T fallback) {
    if (!j.is_object() || !j.contains(name)) return fallback;
    try {
        return j.at(name).get<T>();
    } catch (const json::exception&) {
        throw config_error("manifest: field '" + ctx + "." + name + "' has the wrong type");
    }
}

}  // namespace detail

inline BankSpec bank_from_json(const json& j, const std::string& ctx) {
    BankSpec b;
    b.kind = detail::field_or<std::string>(j, "kind", ctx, "synthetic");
    if (b.kind == "synthetic") {
        b.classes = detail::field_or<std::int64_t>(j, "classes", ctx, 10);
        b.exemplars = detail::field_or<std::int64_t>(j, "exemplars", ctx, 1);
        b.glyph_size = detail::field_or<std::int64_t>(j, "glyph_size", ctx, 16);
        b.seed = detail::field_or<std::uint64_t>(j, "seed", ctx, 7777);
        b.separability = detail::field_or<double>(j, "separability", ctx, 0.5);
    } else if (b.kind == "idx") {
        b.images = detail::field<std::string>(j, "images", ctx);
        b.labels = detail::field<std::string>(j, "labels", ctx);
        b.filter = detail::field_or<std::vector<std::int64_t>>(j, "filter", ctx, {});
    } else {
        throw config_error("manifest: field '" + ctx + ".kind' must be synthetic or idx, got '" + b.kind + "'");
    }
    b.validate();
    return b;
}

inline PlacementPolicy policy_from_json(const json& j, const std::string& ctx, const DatasetConfig& data) {
    const std::string kind = detail::field<std::string>(j, "kind", ctx);
    if (kind == "fixed") {
        if (detail::field_or<std::string>(j, "at", ctx, "") == "leftmost-centered") {
            const auto [x, y] = leftmost_centered(data.item_size, data.canvas_size);
            return PlacementPolicy::fixed(x, y);
        }
        return PlacementPolicy::fixed(detail::field<std::int64_t>(j, "x", ctx), detail::field<std::int64_t>(j, "y", ctx));
    }
    if (kind == "fully_translated") return PlacementPolicy::fully_translated();
    if (kind == "area_segregated")
        return PlacementPolicy::area_segregated(detail::field_or<std::int64_t>(j, "side", ctx, 0));
    throw config_error("manifest: field '" + ctx + ".kind' names no placement policy: '" + kind + "'");
}

inline StopCriterion stop_from_json(const json& j, const std::string& ctx) {
    StopCriterion s;
    s.max_epochs = detail::field_or<std::int64_t>(j, "max_epochs", ctx, 50);
    s.target_accuracy = detail::field_or<double>(j, "target_accuracy", ctx, 0.99);
    s.validate();
    return s;
}

inline StageSpec stage_from_json(const json& j, const std::string& ctx, const DatasetConfig& data) {
    StageSpec s;
    s.bank = bank_from_json(j.contains("bank") ? j.at("bank") : json::object(), ctx + ".bank");
    if (!j.contains("policy")) throw config_error("manifest: missing field '" + ctx + ".policy'");
    s.policy = policy_from_json(j.at("policy"), ctx + ".policy", data);
    s.stop = stop_from_json(j.contains("stop") ? j.at("stop") : json::object(), ctx + ".stop");
    s.repeats = detail::field_or<std::int64_t>(j, "repeats", ctx, 1);
    s.lr = detail::field_or<double>(j, "lr", ctx, 1e-3);
    s.batch_size = detail::field_or<std::int64_t>(j, "batch", ctx, 32);
    return s;
}

inline DatasetConfig data_from_json(const json& j, const std::string& ctx) {
    DatasetConfig d;
    d.canvas_size = detail::field_or<std::int64_t>(j, "canvas", ctx, 64);
    d.item_size = detail::field_or<std::int64_t>(j, "item", ctx, 16);
    d.channels = detail::field_or<std::int64_t>(j, "channels", ctx, 1);
    d.validate();
    return d;
}

inline EvalSpec eval_from_json(const json& j, const std::string& ctx) {
    EvalSpec e;
    e.grid_n = detail::field_or<std::int64_t>(j, "grid", ctx, 9);
    e.cosine_steps = detail::field_or<std::int64_t>(j, "cosine_steps", ctx, 8);
    e.per_class = detail::field_or<bool>(j, "per_class", ctx, false);
    return e;
}

inline ExperimentManifest manifest_from_json(const json& j) {
    ExperimentManifest m;
    m.name = detail::field_or<std::string>(j, "name", "", "experiment");
    m.repetitions = detail::field_or<std::int64_t>(j, "repetitions", "", 5);
    m.base_seed = detail::field_or<std::uint64_t>(j, "seed", "", 1);
    m.data = data_from_json(j.contains("data") ? j.at("data") : json::object(), "data");
    m.eval = eval_from_json(j.contains("eval") ? j.at("eval") : json::object(), "eval");
    if (j.contains("model")) {
        const json& mj = j.at("model");
        if (mj.contains("custom")) {
            ModelSpec s = spec_from_json(mj.at("custom"));
            m.custom_model = s;
            m.model_preset = "custom";
        } else {
            m.model_preset = detail::field_or<std::string>(mj, "preset", "model", "vgg-mini");
        }
    }
    if (!j.contains("finetune")) throw config_error("manifest: missing field 'finetune'");
    m.finetune = stage_from_json(j.at("finetune"), "finetune", m.data);
    if (j.contains("pretrain")) m.pretrain = stage_from_json(j.at("pretrain"), "pretrain", m.data);
    m.validate();
    return m;
}

struct MatrixManifest {
    std::string name = "matrix";
    std::vector<BankSpec> banks;
    PlacementPolicy pretrain_policy = PlacementPolicy::fully_translated();
    StopCriterion pretrain_stop, finetune_stop;
    std::int64_t pretrain_repeats = 1, finetune_repeats = 1;
    double lr = 1e-3;
    std::int64_t batch_size = 32;
    EvalSpec eval;
    std::int64_t repetitions = 5;
    std::uint64_t base_seed = 1;
    std::string model_preset = "vgg-mini";
    std::optional<ModelSpec> custom_model;
    DatasetConfig data;

    // The experiment for matrix cell (pretrain bank i, finetune bank j).
    ExperimentManifest cell(std::size_t i, std::size_t j) const {
        ExperimentManifest m;
        m.name = name + "[" + std::to_string(i) + "," + std::to_string(j) + "]";
        m.repetitions = repetitions;
        m.base_seed = base_seed;
        m.data = data;
        m.eval = eval;
        m.model_preset = model_preset;
        m.custom_model = custom_model;
        StageSpec pre;
        pre.bank = banks[i];
        pre.policy = pretrain_policy;
        pre.stop = pretrain_stop;
        pre.repeats = pretrain_repeats;
        pre.lr = lr;
        pre.batch_size = batch_size;
        m.pretrain = pre;
        StageSpec fin;
        fin.bank = banks[j];
        const auto [x, y] = leftmost_centered(data.item_size, data.canvas_size);
        fin.policy = PlacementPolicy::fixed(x, y);
        fin.stop = finetune_stop;
        fin.repeats = finetune_repeats;
        fin.lr = lr;
        fin.batch_size = batch_size;
        m.finetune = fin;
        m.validate();
        return m;
    }
};

inline bool is_matrix_manifest(const json& j) { return j.contains("matrix"); }

inline MatrixManifest matrix_from_json(const json& j) {
    if (!j.contains("matrix")) throw config_error("manifest: missing field 'matrix'");
    const json& mj = j.at("matrix");
    MatrixManifest m;
    m.name = detail::field_or<std::string>(j, "name", "", "matrix");
    m.repetitions = detail::field_or<std::int64_t>(j, "repetitions", "", 5);
    m.base_seed = detail::field_or<std::uint64_t>(j, "seed", "", 1);
    m.data = data_from_json(j.contains("data") ? j.at("data") : json::object(), "data");
    m.eval = eval_from_json(j.contains("eval") ? j.at("eval") : json::object(), "eval");
    if (j.contains("model")) {
        const json& mo = j.at("model");
        if (mo.contains("custom")) {
            m.custom_model = spec_from_json(mo.at("custom"));
            m.model_preset = "custom";
        } else {
            m.model_preset = detail::field_or<std::string>(mo, "preset", "model", "vgg-mini");
        }
    }
    if (!mj.contains("banks") || !mj.at("banks").is_array() || mj.at("banks").empty())
        throw config_error("manifest: field 'matrix.banks' must be a non-empty array");
    for (std::size_t i = 0; i < mj.at("banks").size(); ++i)
        m.banks.push_back(bank_from_json(mj.at("banks")[i], "matrix.banks[" + std::to_string(i) + "]"));
    if (mj.contains("pretrain_policy"))
        m.pretrain_policy = policy_from_json(mj.at("pretrain_policy"), "matrix.pretrain_policy", m.data);
    m.pretrain_stop = stop_from_json(mj.contains("pretrain_stop") ? mj.at("pretrain_stop") : json::object(),
                                     "matrix.pretrain_stop");
    m.finetune_stop = stop_from_json(mj.contains("finetune_stop") ? mj.at("finetune_stop") : json::object(),
                                     "matrix.finetune_stop");
    m.pretrain_repeats = detail::field_or<std::int64_t>(mj, "pretrain_repeats", "matrix", 1);
    m.finetune_repeats = detail::field_or<std::int64_t>(mj, "finetune_repeats", "matrix", 1);
    m.lr = detail::field_or<double>(mj, "lr", "matrix", 1e-3);
    m.batch_size = detail::field_or<std::int64_t>(mj, "batch", "matrix", 32);
    return m;
}

}  // namespace shiftlab
