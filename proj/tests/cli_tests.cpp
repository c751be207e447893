#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "shiftlab/report.hpp"

#ifndef SHIFTLAB_CLI_PATH
#error "SHIFTLAB_CLI_PATH must point at the cli binary"
#endif

using namespace shiftlab;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir() {
    static fs::path dir = [] {
        fs::path p = fs::temp_directory_path() / "shiftlab_cli_tests";
        fs::remove_all(p);
        fs::create_directories(p);
        return p;
    }();
    return dir;
}

void write_file(const fs::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    REQUIRE(out.good());
}

std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in.good());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

struct CliResult {
    int exit_code;
    std::string out;
};

CliResult run_cli(const std::string& args) {
    const fs::path log = scratch_dir() / "cli.log";
    const std::string cmd = std::string(SHIFTLAB_CLI_PATH) + " " + args + " > " + log.string() + " 2>&1";
    const int status = std::system(cmd.c_str());
    REQUIRE(status != -1);
    return {WEXITSTATUS(status), read_file(log)};
}

// Fast 2-class manifest used by the subprocess tests.
std::string tiny_manifest_text(std::uint64_t seed) {
    return R"({
  "name": "cli-tiny",
  "repetitions": 1,
  "seed": )" + std::to_string(seed) +
           R"(,
  "data": { "canvas": 32, "item": 8 },
  "model": { "custom": {
    "name": "tiny", "classes": 2,
    "input": { "channels": 1, "height": 32, "width": 32 },
    "layers": [
      { "kind": "conv", "out_channels": 8, "kernel": 3 }, { "kind": "relu" },
      { "kind": "maxpool", "k": 2, "stride": 2 },
      { "kind": "conv", "out_channels": 16, "kernel": 3 }, { "kind": "relu" },
      { "kind": "maxpool", "k": 2, "stride": 2 },
      { "kind": "flatten" },
      { "kind": "linear", "out_features": 32 }, { "kind": "relu" },
      { "kind": "linear", "out_features": 2 }
    ] } },
  "finetune": {
    "bank": { "kind": "synthetic", "classes": 2, "glyph_size": 8 },
    "policy": { "kind": "fixed", "at": "leftmost-centered" },
    "stop": { "max_epochs": 4, "target_accuracy": 0.99 },
    "repeats": 8
  },
  "eval": { "grid": 3, "cosine_steps": 2 }
})";
}

RepetitionRecord make_rep(std::int64_t index, double base) {
    RepetitionRecord r;
    r.index = index;
    r.seed = static_cast<std::uint64_t>(100 + index);
    r.ok = true;
    r.heatmap.n = 2;
    r.heatmap.centers = {4.0, 28.0};
    r.heatmap.samples_per_cell = 2;
    r.heatmap.acc = Tensor<double>({2, 2});
    for (std::int64_t i = 0; i < 4; ++i) r.heatmap.acc[i] = base + 0.1 * static_cast<double>(i);
    CosineProfile p;
    p.stage = "vanilla";
    p.displacements = {{0, 0}, {12, 0}};
    p.mean_cos = {1.0, base};
    p.std_cos = {0.0, 0.125};
    r.profiles = {p};
    return r;
}

}  // namespace

TEST_CASE("manifest loading resolves defaults and named positions") {
    const fs::path p = scratch_dir() / "full.json";
    write_file(p, tiny_manifest_text(11));
    ExperimentManifest m = manifest_from_json(load_manifest_json(p.string()));
    CHECK(m.name == "cli-tiny");
    CHECK(m.repetitions == 1);
    CHECK(m.base_seed == 11);
    CHECK(m.data.canvas_size == 32);
    CHECK(m.data.item_size == 8);
    CHECK(m.model_preset == "custom");
    REQUIRE(m.custom_model.has_value());
    CHECK(m.custom_model->classes == 2);
    CHECK(m.finetune.policy.kind == PlacementPolicy::Kind::fixed);
    CHECK(m.finetune.policy.fx == 4);   // leftmost-centered for 8px items on a 32px canvas
    CHECK(m.finetune.policy.fy == 16);
    CHECK(m.finetune.stop.max_epochs == 4);
    CHECK(m.finetune.batch_size == 32);  // default
    CHECK(m.eval.grid_n == 3);
    CHECK(m.eval.cosine_steps == 2);
    CHECK_FALSE(m.pretrain.has_value());

    SECTION("defaults fill unspecified blocks") {
        write_file(p, R"({"finetune": {"policy": {"kind": "fixed", "at": "leftmost-centered"}}})");
        ExperimentManifest d = manifest_from_json(load_manifest_json(p.string()));
        CHECK(d.name == "experiment");
        CHECK(d.repetitions == 5);
        CHECK(d.base_seed == 1);
        CHECK(d.data.canvas_size == 64);
        CHECK(d.data.item_size == 16);
        CHECK(d.model_preset == "vgg-mini");
        CHECK(d.finetune.bank.kind == "synthetic");
        CHECK(d.finetune.bank.classes == 10);
        CHECK(d.finetune.stop.max_epochs == 50);
        CHECK(d.eval.grid_n == 9);
    }
}

TEST_CASE("manifest syntax errors carry the file and line number") {
    const fs::path p = scratch_dir() / "syntax.json";
    write_file(p, "{ \"name\": \"x\",\n  \"oops\": [1, 2,\n}\n");
    try {
        load_manifest_json(p.string());
        FAIL("expected a parse error");
    } catch (const config_error& e) {
        const std::string msg = e.what();
        CHECK(msg.find(p.string()) != std::string::npos);
        CHECK(msg.find("line 3") != std::string::npos);
    }
    CHECK_THROWS_WITH(load_manifest_json((scratch_dir() / "absent.json").string()),
                      Catch::Matchers::ContainsSubstring("cannot open"));
}

TEST_CASE("manifest semantic errors name the offending field") {
    auto parse = [](const std::string& text) {
        const fs::path p = scratch_dir() / "sem.json";
        write_file(p, text);
        return manifest_from_json(load_manifest_json(p.string()));
    };
    CHECK_THROWS_WITH(parse(R"({"data": {}})"), Catch::Matchers::ContainsSubstring("'finetune'"));
    CHECK_THROWS_WITH(parse(R"({"finetune": {}})"), Catch::Matchers::ContainsSubstring("'finetune.policy'"));
    CHECK_THROWS_WITH(parse(R"({"finetune": {"policy": {"kind": "sometimes"}}})"),
                      Catch::Matchers::ContainsSubstring("finetune.policy"));
    CHECK_THROWS_WITH(parse(R"({"finetune": {"policy": {"kind": "fixed", "x": 4, "y": 16},
                                 "stop": {"max_epochs": "ten"}}})"),
                      Catch::Matchers::ContainsSubstring("'finetune.stop.max_epochs'"));
    CHECK_THROWS_WITH(parse(R"({"finetune": {"bank": {"kind": "telepathy"},
                                 "policy": {"kind": "fixed", "x": 4, "y": 16}}})"),
                      Catch::Matchers::ContainsSubstring("synthetic or idx"));
    CHECK_THROWS_WITH(parse(R"({"finetune": {"bank": {"kind": "idx"},
                                 "policy": {"kind": "fixed", "x": 4, "y": 16}}})"),
                      Catch::Matchers::ContainsSubstring("finetune.bank.images"));
    // Fine-tuning must pin the item to one location.
    CHECK_THROWS_WITH(parse(R"({"finetune": {"policy": {"kind": "fully_translated"}}})"),
                      Catch::Matchers::ContainsSubstring("fixed location"));

    const fs::path p = scratch_dir() / "mtx.json";
    write_file(p, R"({"matrix": {}})");
    CHECK_THROWS_WITH(matrix_from_json(load_manifest_json(p.string())),
                      Catch::Matchers::ContainsSubstring("matrix.banks"));
    write_file(p, R"({"name": "m"})");
    CHECK_FALSE(is_matrix_manifest(load_manifest_json(p.string())));
}

TEST_CASE("csv writers emit fixed columns with dot decimals") {
    const fs::path hp = scratch_dir() / "h.csv";
    const fs::path cp = scratch_dir() / "c.csv";
    RepetitionRecord ok = make_rep(0, 0.5);
    RepetitionRecord failed;
    failed.index = 1;
    failed.ok = false;
    failed.failure = "synthetic failure";
    write_heatmap_csv(hp.string(), {ok, failed});
    CHECK(read_file(hp) ==
          "rep,iy,ix,center_y,center_x,accuracy\n"
          "0,0,0,4.000000,4.000000,0.500000\n"
          "0,0,1,4.000000,28.000000,0.600000\n"
          "0,1,0,28.000000,4.000000,0.700000\n"
          "0,1,1,28.000000,28.000000,0.800000\n");
    write_cosine_csv(cp.string(), {ok, failed});
    CHECK(read_file(cp) ==
          "rep,stage,dx,dy,mean_cos,std_cos\n"
          "0,vanilla,0,0,1.000000,0.000000\n"
          "0,vanilla,12,0,0.500000,0.125000\n");
    CHECK(detail::fmt6(-0.25) == "-0.250000");
}

TEST_CASE("pgm emission quantizes to 8 bits and round-trips") {
    const fs::path p = scratch_dir() / "t.pgm";

    SECTION("constant 1.0 maps to white") {
        write_pgm(p.string(), Tensor<double>::full({2, 3}, 1.0));
        const std::string bytes = read_file(p);
        REQUIRE(bytes.size() == std::string("P5\n3 2\n255\n").size() + 6);
        CHECK(bytes.substr(0, 9) == "P5\n3 2\n25");
        for (std::size_t i = bytes.size() - 6; i < bytes.size(); ++i)
            CHECK(static_cast<unsigned char>(bytes[i]) == 255);
    }
    SECTION("values survive within quantization error") {
        Tensor<double> r({3, 4});
        for (std::int64_t i = 0; i < r.numel(); ++i) r[i] = static_cast<double>(i) / 11.0;
        write_pgm(p.string(), r);
        Tensor<double> back = read_pgm(p.string());
        REQUIRE(back.shape() == r.shape());
        for (std::int64_t i = 0; i < r.numel(); ++i)
            CHECK(std::abs(back[i] - r[i]) <= 0.5 / 255.0 + 1e-12);
        // A second write of the quantized values is bit-exact.
        const fs::path p2 = scratch_dir() / "t2.pgm";
        write_pgm(p2.string(), back);
        CHECK(read_file(p) == read_file(p2));
    }
    SECTION("out-of-range values clamp") {
        Tensor<double> r({1, 2});
        r[0] = -0.5;
        r[1] = 1.5;
        write_pgm(p.string(), r);
        const std::string bytes = read_file(p);
        CHECK(static_cast<unsigned char>(bytes[bytes.size() - 2]) == 0);
        CHECK(static_cast<unsigned char>(bytes[bytes.size() - 1]) == 255);
    }
    SECTION("junk input is rejected") {
        write_file(p, "P6\n2 2\n255\n....");
        CHECK_THROWS_WITH(read_pgm(p.string()), Catch::Matchers::ContainsSubstring("P5"));
        write_file(p, "P5\n4 4\n255\nxx");
        CHECK_THROWS_WITH(read_pgm(p.string()), Catch::Matchers::ContainsSubstring("truncated"));
    }
}

TEST_CASE("run json carries hash, seed override and failures but no clock") {
    RunRecord rec;
    rec.name = "demo";
    rec.manifest_hash = 0xabcdef;
    rec.reps = {make_rep(0, 0.5)};
    RepetitionRecord bad;
    bad.index = 1;
    bad.seed = 101;
    bad.ok = false;
    bad.failure = "went sideways";
    rec.reps.push_back(bad);
    rec.mean_normalized = 12.5;
    rec.std_normalized = 0.0;

    const json j = run_record_to_json(rec, json{{"name", "demo"}}, std::nullopt);
    CHECK(j.at("manifest_hash").get<std::string>() == "0x0000000000abcdef");
    CHECK(j.at("seed_override").is_null());
    CHECK(j.at("aggregate").at("mean_normalized").get<double>() == 12.5);
    REQUIRE(j.at("repetitions").size() == 2);
    CHECK(j.at("repetitions")[1].at("failure").get<std::string>() == "went sideways");
    CHECK_FALSE(j.at("repetitions")[1].contains("heatmap"));
    const std::string dump = j.dump();
    CHECK(dump.find("time") == std::string::npos);
    CHECK(dump.find("date") == std::string::npos);

    const json j2 = run_record_to_json(rec, json::object(), std::uint64_t{99});
    CHECK(j2.at("seed_override").get<std::uint64_t>() == 99);
}

TEST_CASE("mean heatmap averages successful repetitions only") {
    RepetitionRecord a = make_rep(0, 0.2), b = make_rep(1, 0.6);
    RepetitionRecord bad;
    bad.ok = false;
    HeatmapResult m = mean_heatmap({a, bad, b});
    for (std::int64_t i = 0; i < 4; ++i)
        CHECK(m.acc[i] == Catch::Approx((a.heatmap.acc[i] + b.heatmap.acc[i]) / 2.0));
    CHECK_THROWS_WITH(mean_heatmap({bad}), Catch::Matchers::ContainsSubstring("no successful repetition"));
}

TEST_CASE("matrix tables carry bank ids and diagonal flags") {
    MatrixResult m;
    m.bank_ids = {"bankA", "bankB"};
    m.mean = Tensor<double>({2, 2});
    m.mean[0] = 80.0;
    m.mean[1] = 10.0;
    m.mean[2] = -5.0;
    m.mean[3] = 75.0;
    m.stddev = Tensor<double>::full({2, 2}, 1.25);
    m.flags = Tensor<double>::zeros({2, 2});
    m.flags.at2(0, 0) = 1.0;
    m.flags.at2(1, 1) = 1.0;
    std::vector<std::string> written;
    write_matrix_csvs(scratch_dir().string(), m, written);
    REQUIRE(written.size() == 3);
    CHECK(read_file(written[0]) ==
          "pretrain_bank,bankA,bankB\n"
          "bankA,80.000000,10.000000\n"
          "bankB,-5.000000,75.000000\n");
    CHECK(read_file(written[1]) ==
          "pretrain_bank,bankA,bankB\n"
          "bankA,1.250000,1.250000\n"
          "bankB,1.250000,1.250000\n");
    CHECK(read_file(written[2]) ==
          "pretrain_bank,bankA,bankB\n"
          "bankA,1,0\n"
          "bankB,0,1\n");
}

TEST_CASE("cli experiment writes four artifacts and reruns byte-identically") {
    const fs::path dir = scratch_dir() / "exp";
    const fs::path manifest = scratch_dir() / "tiny.json";
    write_file(manifest, tiny_manifest_text(7));

    CliResult r1 = run_cli("experiment --manifest " + manifest.string() + " --out " + (dir / "a").string());
    REQUIRE(r1.exit_code == 0);
    for (const char* name : {"run.json", "heatmap.csv", "cosine.csv", "heatmap.pgm"}) {
        CHECK(fs::exists(dir / "a" / name));
        CHECK(r1.out.find(std::string("wrote ") + (dir / "a" / name).string()) != std::string::npos);
    }
    CliResult r2 = run_cli("experiment --manifest " + manifest.string() + " --out " + (dir / "b").string());
    REQUIRE(r2.exit_code == 0);
    for (const char* name : {"run.json", "heatmap.csv", "cosine.csv", "heatmap.pgm"})
        CHECK(read_file(dir / "a" / name) == read_file(dir / "b" / name));

    SECTION("the archive replays through the report subcommand") {
        CliResult rr = run_cli("report --run " + (dir / "a" / "run.json").string() + " --out " + (dir / "c").string());
        REQUIRE(rr.exit_code == 0);
        CHECK(read_file(dir / "a" / "heatmap.csv") == read_file(dir / "c" / "heatmap.csv"));
        CHECK(read_file(dir / "a" / "cosine.csv") == read_file(dir / "c" / "cosine.csv"));
        CHECK(read_file(dir / "a" / "heatmap.pgm") == read_file(dir / "c" / "heatmap.pgm"));
    }
}

TEST_CASE("cli seed override is recorded in the run archive") {
    const fs::path dir = scratch_dir() / "seed";
    const fs::path manifest = scratch_dir() / "tiny_seed.json";
    write_file(manifest, tiny_manifest_text(7));
    CliResult r = run_cli("experiment --manifest " + manifest.string() + " --out " + dir.string() + " --seed 99");
    REQUIRE(r.exit_code == 0);
    const json j = json::parse(read_file(dir / "run.json"));
    CHECK(j.at("seed_override").get<std::uint64_t>() == 99);
    CHECK(j.at("repetitions")[0].at("seed").get<std::uint64_t>() == 99);
    // The embedded manifest keeps the file's own seed for provenance.
    CHECK(j.at("manifest").at("seed").get<std::uint64_t>() == 7);
}

TEST_CASE("cli exit codes distinguish config, data and usage failures") {
    const fs::path dir = scratch_dir() / "codes";
    fs::create_directories(dir);
    const fs::path bad = dir / "bad.json";
    write_file(bad, "{ \"name\": \"x\",\n  broken\n}\n");
    CliResult syntax = run_cli("experiment --manifest " + bad.string() + " --out " + dir.string());
    CHECK(syntax.exit_code == 2);
    CHECK(syntax.out.find("line 2") != std::string::npos);

    const fs::path noidx = dir / "noidx.json";
    write_file(noidx, R"({
      "data": { "canvas": 32, "item": 8 },
      "model": { "custom": { "name": "t", "classes": 2,
        "input": { "channels": 1, "height": 32, "width": 32 },
        "layers": [ { "kind": "conv", "out_channels": 4, "kernel": 3 }, { "kind": "relu" },
                    { "kind": "flatten" }, { "kind": "linear", "out_features": 8 }, { "kind": "relu" },
                    { "kind": "linear", "out_features": 2 } ] } },
      "finetune": { "bank": { "kind": "idx", "images": "/definitely/absent.idx", "labels": "/definitely/absent2.idx" },
                    "policy": { "kind": "fixed", "at": "leftmost-centered" } },
      "repetitions": 1 })");
    CliResult data = run_cli("experiment --manifest " + noidx.string() + " --out " + dir.string());
    CHECK(data.exit_code == 3);  // dataset problems are reported before any training starts
    CHECK(data.out.find("absent.idx") != std::string::npos);

    CHECK(run_cli("no-such-subcommand").exit_code == 2);
    CHECK(run_cli("train").exit_code == 2);  // --manifest is required
    CHECK(run_cli("--help").exit_code == 0);
}

TEST_CASE("cli gen-data produces a loadable idx pair matching the bank") {
    const fs::path dir = scratch_dir() / "gen";
    CliResult r = run_cli("gen-data --classes 3 --size 8 --bank-seed 42 --preview 1 --out " + dir.string());
    REQUIRE(r.exit_code == 0);
    ItemBank loaded = load_idx((dir / "images.idx").string(), (dir / "labels.idx").string());
    REQUIRE(loaded.classes() == 3);
    ItemBank source = synth_glyph_bank(3, 1, 8, 42);
    for (std::size_t c = 0; c < 3; ++c) {
        REQUIRE(loaded.items[c].size() == 1);
        const Tensor<float>& a = loaded.items[c][0];
        const Tensor<float>& b = source.items[c][0];
        REQUIRE(a.shape() == b.shape());
        for (std::int64_t i = 0; i < a.numel(); ++i)
            CHECK(std::abs(a[i] - b[i]) <= 0.5f / 255.0f + 1e-6f);  // one quantization step
    }
    Tensor<double> preview = read_pgm((dir / "preview_0.pgm").string());
    CHECK(preview.dim(0) == 8);
    CHECK(preview.dim(1) == 8);
}

TEST_CASE("cli train emits a loadable checkpoint and per-epoch history") {
    const fs::path dir = scratch_dir() / "train";
    const fs::path manifest = scratch_dir() / "tiny_train.json";
    write_file(manifest, tiny_manifest_text(7));
    CliResult r = run_cli("train --manifest " + manifest.string() + " --out " + dir.string());
    REQUIRE(r.exit_code == 0);
    Model<float> m = load_checkpoint<float>((dir / "checkpoint.bin").string());
    CHECK(m.spec.classes == 2);
    CHECK(m.spec.input.height == 32);
    const std::string hist = read_file(dir / "history.csv");
    CHECK(hist.rfind("epoch,loss,accuracy\n", 0) == 0);
    CHECK(std::count(hist.begin(), hist.end(), '\n') >= 2);

    SECTION("the checkpoint drives eval-grid and cosine") {
        CliResult g = run_cli("eval-grid --manifest " + manifest.string() + " --checkpoint " +
                              (dir / "checkpoint.bin").string() + " --out " + (dir / "g").string());
        REQUIRE(g.exit_code == 0);
        CHECK(fs::exists(dir / "g" / "heatmap.csv"));
        CHECK(fs::exists(dir / "g" / "heatmap.pgm"));
        CliResult c = run_cli("cosine --manifest " + manifest.string() + " --checkpoint " +
                              (dir / "checkpoint.bin").string() + " --out " + (dir / "c").string());
        REQUIRE(c.exit_code == 0);
        const std::string csv = read_file(dir / "c" / "cosine.csv");
        CHECK(csv.rfind("rep,stage,dx,dy,mean_cos,std_cos\n", 0) == 0);
        CHECK(csv.find("0,checkpoint,0,0,1.000000,0.000000") != std::string::npos);
    }
}

TEST_CASE("cli matrix writes three tables over a bank grid") {
    const fs::path dir = scratch_dir() / "matrix";
    const fs::path manifest = scratch_dir() / "matrix.json";
    write_file(manifest, R"({
  "name": "mtx", "repetitions": 1, "seed": 5,
  "data": { "canvas": 32, "item": 8 },
  "model": { "custom": { "name": "tiny", "classes": 2,
    "input": { "channels": 1, "height": 32, "width": 32 },
    "layers": [
      { "kind": "conv", "out_channels": 8, "kernel": 3 }, { "kind": "relu" },
      { "kind": "maxpool", "k": 2, "stride": 2 },
      { "kind": "flatten" }, { "kind": "linear", "out_features": 16 }, { "kind": "relu" },
      { "kind": "linear", "out_features": 2 } ] } },
  "eval": { "grid": 3, "cosine_steps": 2 },
  "matrix": {
    "banks": [ { "kind": "synthetic", "classes": 2, "glyph_size": 8, "seed": 7777 },
               { "kind": "synthetic", "classes": 2, "glyph_size": 8, "seed": 1234 } ],
    "pretrain_stop": { "max_epochs": 2, "target_accuracy": 1.0 },
    "finetune_stop": { "max_epochs": 2, "target_accuracy": 1.0 },
    "pretrain_repeats": 4, "finetune_repeats": 4
  } })");
    CliResult r = run_cli("matrix --manifest " + manifest.string() + " --out " + dir.string());
    REQUIRE(r.exit_code == 0);
    const std::string mean = read_file(dir / "matrix_mean.csv");
    const std::string flags = read_file(dir / "matrix_flags.csv");
    CHECK(mean.rfind("pretrain_bank,synthetic(k=2,ex=1,seed=7777),synthetic(k=2,ex=1,seed=1234)\n", 0) == 0);
    CHECK(std::count(mean.begin(), mean.end(), '\n') == 3);
    CHECK(flags.find("synthetic(k=2,ex=1,seed=7777),1,0") != std::string::npos);
    CHECK(flags.find("synthetic(k=2,ex=1,seed=1234),0,1") != std::string::npos);
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j)
            CHECK(fs::exists(dir / ("cell_" + std::to_string(i) + "_" + std::to_string(j) + ".json")));
}
