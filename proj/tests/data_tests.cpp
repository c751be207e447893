#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <fstream>
#include <set>

#include "shiftlab/glyphs.hpp"
#include "shiftlab/idx.hpp"

using namespace shiftlab;

namespace {

void write_bytes(const std::string& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

void be32(std::string& s, std::uint32_t v) {
    s.push_back(static_cast<char>(v >> 24));
    s.push_back(static_cast<char>((v >> 16) & 0xff));
    s.push_back(static_cast<char>((v >> 8) & 0xff));
    s.push_back(static_cast<char>(v & 0xff));
}

// Two 4x4 images: first all 255 labeled 5, second a single 128 pixel labeled 3.
void write_two_item_fixture(const std::string& imgs, const std::string& labs) {
    std::string im;
    be32(im, 0x00000803);
    be32(im, 2);
    be32(im, 4);
    be32(im, 4);
    for (int i = 0; i < 16; ++i) im.push_back(static_cast<char>(0xff));
    for (int i = 0; i < 16; ++i) im.push_back(i == 5 ? static_cast<char>(0x80) : 0);
    write_bytes(imgs, im);
    std::string lb;
    be32(lb, 0x00000801);
    be32(lb, 2);
    lb.push_back(5);
    lb.push_back(3);
    write_bytes(labs, lb);
}

double tensor_sum(const Tensor<float>& t) {
    double s = 0;
    for (std::int64_t i = 0; i < t.numel(); ++i) s += t[i];
    return s;
}

}  // namespace

TEST_CASE("hand-built idx pair loads with dense labels") {
    write_two_item_fixture("fix_imgs.idx", "fix_labs.idx");
    ItemBank bank = load_idx("fix_imgs.idx", "fix_labs.idx");
    REQUIRE(bank.provenance == "idx-file");
    REQUIRE(bank.classes() == 2);  // distinct labels {3,5} -> dense {0,1}
    // label 3 (the 128-pixel image) remaps below label 5 (the all-white one)
    REQUIRE(bank.items[0].size() == 1);
    REQUIRE(bank.items[0][0][5] == Catch::Approx(128.0 / 255.0));
    REQUIRE(bank.items[0][0][0] == 0.0f);
    REQUIRE(bank.items[1][0][0] == 1.0f);
    REQUIRE(bank.items[1][0].shape() == Shape{4, 4});
    std::remove("fix_imgs.idx");
    std::remove("fix_labs.idx");
}

TEST_CASE("class filter keeps the first 18 of 47 classes densely") {
    std::vector<std::uint8_t> px(47 * 9, 200);
    std::vector<std::uint8_t> lb;
    for (int i = 46; i >= 0; --i) lb.push_back(static_cast<std::uint8_t>(i));  // descending on disk
    write_idx_images("f47_imgs.idx", 3, 3, px);
    write_idx_labels("f47_labs.idx", lb);

    std::vector<std::int64_t> first18;
    for (std::int64_t i = 0; i < 18; ++i) first18.push_back(i);
    ItemBank bank = load_idx("f47_imgs.idx", "f47_labs.idx", first18);
    REQUIRE(bank.classes() == 18);
    for (const auto& c : bank.items) REQUIRE(c.size() == 1);

    ItemBank full = load_idx("f47_imgs.idx", "f47_labs.idx");
    REQUIRE(full.classes() == 47);

    REQUIRE_THROWS_WITH(load_idx("f47_imgs.idx", "f47_labs.idx", {99}),
                        Catch::Matchers::ContainsSubstring("no such samples"));
    std::remove("f47_imgs.idx");
    std::remove("f47_labs.idx");
}

TEST_CASE("idx damage yields distinct diagnostics") {
    write_two_item_fixture("bad_imgs.idx", "bad_labs.idx");

    SECTION("wrong magic") {
        std::string im;
        be32(im, 0x00000802);
        be32(im, 0);
        be32(im, 4);
        be32(im, 4);
        write_bytes("wrong.idx", im);
        REQUIRE_THROWS_WITH(read_idx_images("wrong.idx"), Catch::Matchers::ContainsSubstring("magic mismatch"));
        REQUIRE_THROWS_WITH(read_idx_labels("bad_imgs.idx"), Catch::Matchers::ContainsSubstring("magic mismatch"));
        std::remove("wrong.idx");
    }
    SECTION("truncated payload") {
        std::ifstream in("bad_imgs.idx", std::ios::binary);
        std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        in.close();
        write_bytes("trunc.idx", buf.substr(0, buf.size() - 3));
        REQUIRE_THROWS_WITH(read_idx_images("trunc.idx"), Catch::Matchers::ContainsSubstring("truncated"));
        std::remove("trunc.idx");
    }
    SECTION("image/label count mismatch") {
        write_idx_labels("short_labs.idx", {1, 2, 3});
        REQUIRE_THROWS_WITH(load_idx("bad_imgs.idx", "short_labs.idx"),
                            Catch::Matchers::ContainsSubstring("count mismatch"));
        std::remove("short_labs.idx");
    }
    SECTION("missing file") {
        REQUIRE_THROWS_WITH(read_idx_images("nope.idx"), Catch::Matchers::ContainsSubstring("cannot open"));
    }
    std::remove("bad_imgs.idx");
    std::remove("bad_labs.idx");
}

TEST_CASE("idx writer round-trips through the reader") {
    std::vector<std::uint8_t> px{0, 64, 128, 255, 1, 2, 3, 4};
    write_idx_images("rt_imgs.idx", 2, 2, px);
    write_idx_labels("rt_labs.idx", {7, 7});
    IdxImages r = read_idx_images("rt_imgs.idx");
    REQUIRE(r.count == 2);
    REQUIRE(r.height == 2);
    REQUIRE(r.pixels == px);
    REQUIRE(read_idx_labels("rt_labs.idx") == std::vector<std::uint8_t>{7, 7});
    std::remove("rt_imgs.idx");
    std::remove("rt_labs.idx");
}

TEST_CASE("synthetic glyph banks are deterministic and separable") {
    ItemBank ten = synth_glyph_bank(10, 1, 16, 1234);
    REQUIRE(ten.classes() == 10);
    REQUIRE(ten.single_exemplar());
    REQUIRE(ten.provenance == "synthetic");
    ten.validate();

    ItemBank two = synth_glyph_bank(2, 1, 16, 99);
    REQUIRE(two.classes() == 2);

    ItemBank again = synth_glyph_bank(10, 1, 16, 1234);
    for (int c = 0; c < 10; ++c)
        for (std::int64_t i = 0; i < 256; ++i) REQUIRE(ten.items[c][0][i] == again.items[c][0][i]);

    for (int a = 0; a < 10; ++a)
        for (int b = a + 1; b < 10; ++b)
            REQUIRE(detail::overlap(ten.items[a][0], ten.items[b][0]) < 0.5);

    ItemBank multi = synth_glyph_bank(4, 6, 16, 5);
    REQUIRE(multi.items[0].size() == 6);
    bool differs = false;
    for (std::int64_t i = 0; i < 256; ++i) differs = differs || multi.items[0][0][i] != multi.items[0][1][i];
    REQUIRE(differs);  // jittered exemplars are not copies

    REQUIRE_THROWS_AS(synth_glyph_bank(1, 1, 16, 0), config_error);
    REQUIRE_THROWS_AS(synth_glyph_bank(4, 0, 16, 0), config_error);
}

TEST_CASE("bilinear resize contracts") {
    Rng rng(8);
    Tensor<float> img({12, 12});
    for (std::int64_t i = 0; i < img.numel(); ++i) img[i] = static_cast<float>(rng.uniform());

    SECTION("same size is the identity") {
        Tensor<float> out = resize_item(img, 12);
        for (std::int64_t i = 0; i < img.numel(); ++i) REQUIRE(out[i] == img[i]);
    }
    SECTION("constant image stays constant") {
        Tensor<float> c = Tensor<float>::full({10, 10}, 0.37f);
        Tensor<float> out = resize_item(c, 23);
        for (std::int64_t i = 0; i < out.numel(); ++i) REQUIRE(out[i] == Catch::Approx(0.37).margin(1e-6));
    }
    SECTION("2x upscale of a one-hot pixel scales mass by 4") {
        Tensor<float> hot = Tensor<float>::zeros({8, 8});
        hot.at2(4, 4) = 1.0f;
        Tensor<float> up = resize_item(hot, 16);
        REQUIRE(tensor_sum(up) == Catch::Approx(4.0).epsilon(0.01));
        for (std::int64_t i = 0; i < up.numel(); ++i) REQUIRE((up[i] >= 0.0f && up[i] <= 1.0f));
    }
    SECTION("downscale stays in range") {
        Tensor<float> out = resize_item(img, 5);
        for (std::int64_t i = 0; i < out.numel(); ++i) REQUIRE((out[i] >= 0.0f && out[i] <= 1.0f));
    }
}

TEST_CASE("sample_center honors each policy") {
    Rng rng(31);

    SECTION("fixed leftmost-centered at full scale") {
        PlacementPolicy p = PlacementPolicy::fixed(25, 112);
        for (int i = 0; i < 10; ++i) {
            const auto [x, y] = sample_center(p, 0, 50, 224, rng);
            REQUIRE(x == 25);
            REQUIRE(y == 112);
        }
        REQUIRE(leftmost_centered(50, 224) == std::pair<std::int64_t, std::int64_t>{25, 112});
        REQUIRE(leftmost_centered(16, 64) == std::pair<std::int64_t, std::int64_t>{8, 32});
    }
    SECTION("fixed center outside the feasible box is rejected") {
        PlacementPolicy p = PlacementPolicy::fixed(10, 112);
        REQUIRE_THROWS_AS(sample_center(p, 0, 50, 224, rng), data_error);
    }
    SECTION("fully translated covers the feasible box tightly") {
        PlacementPolicy p = PlacementPolicy::fully_translated();
        std::int64_t mnx = 1000, mxx = -1, mny = 1000, mxy = -1;
        for (int i = 0; i < 10000; ++i) {
            const auto [x, y] = sample_center(p, 0, 50, 224, rng);
            mnx = std::min(mnx, x);
            mxx = std::max(mxx, x);
            mny = std::min(mny, y);
            mxy = std::max(mxy, y);
        }
        REQUIRE(mnx >= 25);
        REQUIRE(mxx <= 199);
        REQUIRE(mnx <= 27);
        REQUIRE(mxx >= 197);
        REQUIRE(mny <= 27);
        REQUIRE(mxy >= 197);
    }
    SECTION("area segregation separates far areas") {
        PlacementPolicy p = PlacementPolicy::area_segregated();
        // desk scale: side 17, origin 6; bottom-right area interior starts at 40
        for (int i = 0; i < 2000; ++i) {
            const auto [x, y] = sample_center(p, 0, 16, 64, rng);  // class 0 -> top-left
            REQUIRE(x <= 22);
            REQUIRE(y <= 22);
            REQUIRE(x >= 8);
            REQUIRE(y >= 8);
        }
        for (int i = 0; i < 2000; ++i) {
            const auto [x, y] = sample_center(p, 17, 16, 64, rng);  // class 17 -> bottom-right
            REQUIRE(x >= 40);
            REQUIRE(y >= 40);
            REQUIRE(x <= 56);
            REQUIRE(y <= 56);
        }
    }
    SECTION("class without an area assignment is rejected") {
        PlacementPolicy p = PlacementPolicy::area_segregated();
        REQUIRE_THROWS_WITH(sample_center(p, 18, 16, 64, rng), Catch::Matchers::ContainsSubstring("area assignment"));
    }
    SECTION("full-scale areas keep the documented margin") {
        PlacementPolicy p = PlacementPolicy::area_segregated();
        REQUIRE(area_side_for(p, 224) == 58);
        REQUIRE(area_side_for(p, 64) == 17);
        for (int i = 0; i < 2000; ++i) {
            const auto [x, y] = sample_center(p, 8, 50, 224, rng);  // class 8 -> area 4 (center)
            REQUIRE(x >= 25 + 58);
            REQUIRE(x < 25 + 2 * 58);
            REQUIRE(y >= 25 + 58);
            REQUIRE(y < 25 + 2 * 58);
        }
    }
}

TEST_CASE("compose_canvas places, conserves and replicates") {
    DatasetConfig cfg;
    cfg.canvas_size = 224;
    cfg.item_size = 50;
    Rng rng(3);
    Tensor<float> item({50, 50});
    for (std::int64_t i = 0; i < item.numel(); ++i) item[i] = static_cast<float>(rng.uniform());

    SECTION("conservation and black margins") {
        CanvasSample s = compose_canvas(item, 25, 112, 7, cfg);
        REQUIRE(s.label == 7);
        REQUIRE(tensor_sum(s.canvas) == Catch::Approx(tensor_sum(item)).margin(1e-3));
        for (std::int64_t y = 0; y < 224; ++y)
            for (std::int64_t x = 0; x < 224; ++x) {
                const bool inside = x >= 0 && x < 50 && y >= 87 && y < 137;
                if (!inside) REQUIRE(s.canvas[y * 224 + x] == 0.0f);
            }
    }
    SECTION("two fixed placements are exact translations") {
        CanvasSample a = compose_canvas(item, 25, 112, 0, cfg);
        CanvasSample b = compose_canvas(item, 199, 112, 0, cfg);
        for (std::int64_t y = 0; y < 224; ++y)
            for (std::int64_t x = 0; x < 50; ++x)
                REQUIRE(a.canvas[y * 224 + x] == b.canvas[y * 224 + (x + 174)]);
    }
    SECTION("3-channel replication") {
        DatasetConfig c3 = cfg;
        c3.channels = 3;
        CanvasSample s = compose_canvas(item, 112, 112, 0, c3);
        REQUIRE(s.canvas.shape() == Shape{3, 224, 224});
        for (std::int64_t i = 0; i < 224 * 224; ++i) {
            REQUIRE(s.canvas[i] == s.canvas[224 * 224 + i]);
            REQUIRE(s.canvas[i] == s.canvas[2 * 224 * 224 + i]);
        }
    }
    SECTION("cropping placements are rejected") {
        REQUIRE_THROWS_AS(compose_canvas(item, 24, 112, 0, cfg), data_error);
        REQUIRE_THROWS_AS(compose_canvas(item, 25, 200, 0, cfg), data_error);
        REQUIRE_THROWS_WITH(compose_canvas(item, 0, 0, 0, cfg), Catch::Matchers::ContainsSubstring("crop"));
    }
}

TEST_CASE("no-crop invariant holds across policies for 1e5 draws") {
    Rng rng(777);
    const std::int64_t item = 16, canvas = 64;
    std::vector<PlacementPolicy> policies{PlacementPolicy::fixed(8, 32), PlacementPolicy::fully_translated(),
                                          PlacementPolicy::area_segregated()};
    for (const auto& p : policies) {
        for (int i = 0; i < 34000; ++i) {
            const std::int64_t cls = p.kind == PlacementPolicy::Kind::area_segregated ? rng.uniform_int(0, 17) : 0;
            const auto [x, y] = sample_center(p, cls, item, canvas, rng);
            REQUIRE(x - item / 2 >= 0);
            REQUIRE(y - item / 2 >= 0);
            REQUIRE(x - item / 2 + item <= canvas);
            REQUIRE(y - item / 2 + item <= canvas);
        }
    }
}

TEST_CASE("fully translated centers pass a chi-square uniformity screen") {
    Rng rng(2024);
    PlacementPolicy p = PlacementPolicy::fully_translated();
    // centers take 49 integer values [8,56]; bin widths under 4 bins are 13,12,12,12
    const double widths[4] = {13, 12, 12, 12};
    double counts[4][4] = {};
    const int n = 10000;
    for (int i = 0; i < n; ++i) {
        const auto [x, y] = sample_center(p, 0, 16, 64, rng);
        counts[((x - 8) * 4) / 49][((y - 8) * 4) / 49] += 1.0;
    }
    double chi2 = 0.0;
    for (int a = 0; a < 4; ++a)
        for (int b = 0; b < 4; ++b) {
            const double expect = n * (widths[a] / 49.0) * (widths[b] / 49.0);
            chi2 += (counts[a][b] - expect) * (counts[a][b] - expect) / expect;
        }
    REQUIRE(chi2 < 37.697);  // chi-square critical value, df=15, alpha=0.001
}

TEST_CASE("batch streams are deterministic and cover the bank") {
    ItemBank bank = synth_glyph_bank(6, 3, 16, 42);
    DatasetConfig cfg;
    cfg.canvas_size = 64;
    cfg.item_size = 16;
    cfg.seed = 9;
    cfg.policy = PlacementPolicy::fully_translated();

    SECTION("equal seeds agree batch for batch") {
        BatchStream s1(bank, cfg, 4), s2(bank, cfg, 4);
        for (int b = 0; b < 12; ++b) {
            Batch a = s1.next(), c = s2.next();
            REQUIRE(a.y == c.y);
            REQUIRE(a.centers == c.centers);
            for (std::int64_t i = 0; i < a.x.numel(); ++i) REQUIRE(a.x[i] == c.x[i]);
        }
    }
    SECTION("one epoch covers every item exactly once") {
        BatchStream s(bank, cfg, 4);
        REQUIRE(s.samples_per_epoch() == 18);
        REQUIRE(s.batches_per_epoch() == 5);
        std::vector<int> per_class(6, 0);
        for (std::int64_t b = 0; b < s.batches_per_epoch(); ++b) {
            Batch batch = s.next();
            for (std::int64_t l : batch.y) per_class[static_cast<std::size_t>(l)]++;
        }
        REQUIRE(s.epoch() == 1);
        for (int c = 0; c < 6; ++c) REQUIRE(per_class[c] == 3);
    }
    SECTION("epochs reshuffle") {
        BatchStream s(bank, cfg, 18);
        Batch e0 = s.next(), e1 = s.next();
        REQUIRE(e0.y != e1.y);  // astronomically unlikely to coincide
    }
    SECTION("single-exemplar banks re-place repeated items") {
        ItemBank leek = synth_glyph_bank(10, 1, 16, 7);
        DatasetConfig rc = cfg;
        rc.repeats = 8;
        BatchStream s(leek, rc, 16);
        REQUIRE(s.samples_per_epoch() == 80);
        std::set<std::pair<std::int64_t, std::int64_t>> centers;
        for (std::int64_t b = 0; b < s.batches_per_epoch(); ++b) {
            Batch batch = s.next();
            for (const auto& c : batch.centers) centers.insert(c);
        }
        REQUIRE(centers.size() > 40);  // fresh draws, near-zero collision mass
    }
    SECTION("fixed policy stamps every sample at one spot") {
        DatasetConfig fc = cfg;
        fc.policy = PlacementPolicy::fixed(8, 32);
        BatchStream s(bank, fc, 6);
        Batch b = s.next();
        for (const auto& c : b.centers) REQUIRE(c == std::pair<std::int64_t, std::int64_t>{8, 32});
        // leftmost column of the canvas holds item pixels, right half is black
        const std::int64_t plane = 64 * 64;
        for (std::int64_t i = 0; i < b.x.dim(0); ++i)
            for (std::int64_t y = 0; y < 64; ++y)
                for (std::int64_t x = 32; x < 64; ++x) REQUIRE(b.x[i * plane + y * 64 + x] == 0.0f);
    }
}

TEST_CASE("bank validation rejects malformed banks") {
    ItemBank bank;
    bank.provenance = "synthetic";
    REQUIRE_THROWS_AS(bank.validate(), data_error);
    bank.items.resize(2);
    bank.items[0].push_back(Tensor<float>::full({4, 4}, 0.5f));
    REQUIRE_THROWS_WITH(bank.validate(), Catch::Matchers::ContainsSubstring("no items"));
    bank.items[1].push_back(Tensor<float>::full({5, 5}, 0.5f));
    REQUIRE_THROWS_WITH(bank.validate(), Catch::Matchers::ContainsSubstring("size mismatch"));
    bank.items[1][0] = Tensor<float>::full({4, 4}, 1.5f);
    REQUIRE_THROWS_WITH(bank.validate(), Catch::Matchers::ContainsSubstring("[0,1]"));
    bank.items[1][0] = Tensor<float>::full({4, 4}, 0.25f);
    bank.validate();
}
