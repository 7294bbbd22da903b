#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "forgesem/corpus.hpp"
#include "forgesem/image_io.hpp"

using namespace forgesem;
namespace fs = std::filesystem;

namespace {

CorpusSpec tiny_spec() {
    CorpusSpec s;
    s.n_real = 8;
    s.n_fake_per_method = 4;
    s.methods = known_methods();
    s.image_size = 32;
    s.seed = 5;
    return s;
}

std::string fresh_dir(const std::string& name) {
    const std::string d = "tmp_" + name;
    fs::remove_all(d);
    return d;
}

std::string slurp(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    REQUIRE(f.good());
    return std::string(std::istreambuf_iterator<char>(f), {});
}

} // namespace

TEST_CASE("spec validation") {
    CorpusSpec s = tiny_spec();
    CHECK_NOTHROW(s.validate());
    s.n_real = 0;
    CHECK_THROWS_AS(s.validate(), contract_error);
    s = tiny_spec();
    s.methods = {"splice_noise", "warp"};
    CHECK_THROWS_AS(s.validate(), contract_error);
    s = tiny_spec();
    s.methods = {"splice_noise", "splice_noise"};
    CHECK_THROWS_AS(s.validate(), contract_error);
    s = tiny_spec();
    s.val_frac = 0.5;
    CHECK_THROWS_AS(s.validate(), contract_error);
    s = tiny_spec();
    s.image_size = 30;
    CHECK_THROWS_AS(s.validate(), contract_error);
}

TEST_CASE("record counts follow the spec") {
    CorpusSpec s = tiny_spec();
    s.n_real = 100;
    s.n_fake_per_method = 50;
    const auto dir = fresh_dir("counts");
    auto man = gen_corpus(s, dir);
    CHECK(man.records.size() == 250);
    int reals = 0, fakes = 0;
    std::map<std::string, int> per_method;
    for (const auto& r : man.records) {
        r.y == 1 ? ++reals : ++fakes;
        if (r.y == 0) ++per_method[r.method];
        CHECK((r.y == 1) == (r.method == "none"));
        CHECK(fs::exists(fs::path(dir) / r.path));
    }
    CHECK(reals == 100);
    CHECK(fakes == 150);
    for (const auto& m : s.methods) CHECK(per_method[m] == 50);
    fs::remove_all(dir);
}

TEST_CASE("generation is byte deterministic") {
    CorpusSpec s = tiny_spec();
    const auto d1 = fresh_dir("det1");
    const auto d2 = fresh_dir("det2");
    auto m1 = gen_corpus(s, d1);
    auto m2 = gen_corpus(s, d2);
    REQUIRE(m1.records.size() == m2.records.size());
    for (std::size_t i = 0; i < m1.records.size(); ++i) {
        CHECK(m1.records[i].path == m2.records[i].path);
        CHECK(m1.records[i].split == m2.records[i].split);
        CHECK(slurp(d1 + "/" + m1.records[i].path) == slurp(d2 + "/" + m2.records[i].path));
    }
    CHECK(slurp(d1 + "/manifest.json") == slurp(d2 + "/manifest.json"));

    CorpusSpec other = s;
    other.seed = 6;
    const auto d3 = fresh_dir("det3");
    gen_corpus(other, d3);
    CHECK(slurp(d1 + "/" + m1.records[0].path) != slurp(d3 + "/" + m1.records[0].path));
    fs::remove_all(d1);
    fs::remove_all(d2);
    fs::remove_all(d3);
}

TEST_CASE("fakes touch only the dilated splice region") {
    CorpusSpec s = tiny_spec();
    for (int mi = 0; mi < 3; ++mi)
        for (int idx : {0, 1, 7}) {
            auto g = gen_fake_image(s, mi, idx);
            const int sz = s.image_size;
            double inside_delta = 0.0;
            for (int y = 0; y < sz; ++y)
                for (int x = 0; x < sz; ++x) {
                    const bool in = g.region[static_cast<std::size_t>(y) * sz + x] > 0.5f;
                    for (int c = 0; c < 3; ++c) {
                        const std::size_t i = (static_cast<std::size_t>(c) * sz + y) * sz + x;
                        const double d = std::fabs(g.image[i] - g.base[i]);
                        if (in)
                            inside_delta += d;
                        else
                            CHECK(d <= 1e-6);
                    }
                }
            CHECK(inside_delta > 0.1); // the splice visibly happened
        }
}

TEST_CASE("reals are their own base") {
    auto g = gen_real_image(tiny_spec(), 3);
    CHECK(g.image.equal(g.base));
    for (std::size_t i = 0; i < g.image.numel(); ++i) {
        CHECK(g.image[i] >= 0.0f);
        CHECK(g.image[i] <= 1.0f);
    }
}

TEST_CASE("splits are stratified and singular") {
    CorpusSpec s = tiny_spec();
    s.n_real = 40;
    s.n_fake_per_method = 20;
    const auto dir = fresh_dir("splits");
    auto man = gen_corpus(s, dir);
    std::map<std::string, std::set<std::string>> by_split;
    for (const auto& r : man.records) by_split[r.split].insert(r.path);
    CHECK(by_split["train"].size() + by_split["val"].size() + by_split["test"].size() ==
          man.records.size());
    for (const auto& p : by_split["train"]) {
        CHECK(by_split["val"].count(p) == 0);
        CHECK(by_split["test"].count(p) == 0);
    }
    // default fractions give every split both classes
    for (const auto& split : {"train", "val", "test"}) {
        int reals = 0, fakes = 0;
        for (const auto& r : man.records)
            if (r.split == split) r.y == 1 ? ++reals : ++fakes;
        CHECK(reals > 0);
        CHECK(fakes > 0);
    }
    fs::remove_all(dir);
}

TEST_CASE("png quantizes within half a step and bin is exact") {
    Pcg32 rng(9, 4);
    Tensor img({3, 16, 16});
    for (std::size_t i = 0; i < img.numel(); ++i)
        img[i] = static_cast<float>(rng.uniform(0.0, 1.0));

    const auto dir = fresh_dir("io");
    fs::create_directories(dir);
    write_png(dir + "/a.png", img);
    Tensor back = read_png(dir + "/a.png");
    REQUIRE(back.shape() == img.shape());
    for (std::size_t i = 0; i < img.numel(); ++i)
        CHECK(std::fabs(back[i] - img[i]) <= 0.5f / 255.0f + 1e-6f);

    write_bin(dir + "/a.bin", img);
    CHECK(read_bin(dir + "/a.bin").equal(img));
    CHECK(read_image(dir + "/a.bin").equal(img));

    std::ofstream(dir + "/junk.bin") << "notaheader";
    CHECK_THROWS_AS(read_bin(dir + "/junk.bin"), io_error);
    CHECK_THROWS_AS(read_png(dir + "/missing.png"), io_error);
    fs::remove_all(dir);
}

TEST_CASE("bilinear resize basics") {
    Tensor flat = Tensor::full({3, 8, 8}, 0.4f);
    Tensor up = resize_bilinear_image(flat, 16, 16);
    for (std::size_t i = 0; i < up.numel(); ++i) CHECK(up[i] == doctest::Approx(0.4f));

    Tensor img({3, 8, 8});
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < 8; ++y)
            for (int x = 0; x < 8; ++x)
                img[(static_cast<std::size_t>(c) * 8 + y) * 8 + x] =
                    static_cast<float>(x) / 8.0f;
    CHECK(resize_bilinear_image(img, 8, 8).equal(img));
    Tensor down = resize_bilinear_image(img, 4, 4);
    for (int x = 1; x < 4; ++x)
        CHECK(down[static_cast<std::size_t>(x)] >
              down[static_cast<std::size_t>(x) - 1]); // ramp stays monotone
}

TEST_CASE("manifest round trip and validation") {
    CorpusSpec s = tiny_spec();
    const auto dir = fresh_dir("manifest");
    auto man = gen_corpus(s, dir);
    auto loaded = read_manifest(dir + "/manifest.json");
    REQUIRE(loaded.records.size() == man.records.size());
    CHECK(loaded.spec.seed == s.seed);
    CHECK(loaded.spec.methods == s.methods);
    for (std::size_t i = 0; i < man.records.size(); ++i) {
        CHECK(loaded.records[i].path == man.records[i].path);
        CHECK(loaded.records[i].y == man.records[i].y);
        CHECK(loaded.records[i].method == man.records[i].method);
        CHECK(loaded.records[i].split == man.records[i].split);
    }
    CHECK(loaded.method_label("none") == 0);
    CHECK(loaded.method_label("splice_noise") == 1);
    CHECK(loaded.method_label("splice_hue") == 3);
    CHECK_THROWS_AS(loaded.method_label("warp"), contract_error);

    fs::remove(fs::path(dir) / man.records[0].path);
    CHECK_THROWS_AS(read_manifest(dir + "/manifest.json"), io_error);

    std::ofstream(dir + "/manifest.json") << "{broken";
    CHECK_THROWS_AS(read_manifest(dir + "/manifest.json"), io_error);
    fs::remove_all(dir);
}

TEST_CASE("directory import maps layout to labels") {
    const auto dir = fresh_dir("import");
    fs::create_directories(dir + "/real/none");
    fs::create_directories(dir + "/fake/m1");
    Tensor img = Tensor::full({3, 8, 8}, 0.5f);
    write_png(dir + "/real/none/a.png", img);
    write_png(dir + "/real/none/b.png", img);
    write_png(dir + "/fake/m1/c.png", img);
    std::ofstream(dir + "/fake/m1/readme.txt") << "not an image";

    auto res = import_images(dir, 16);
    CHECK(res.skipped == 1);
    REQUIRE(res.manifest.records.size() == 3);
    int reals = 0;
    for (const auto& r : res.manifest.records) {
        if (r.y == 1) {
            ++reals;
            CHECK(r.method == "none");
        } else {
            CHECK(r.method == "m1");
            CHECK(res.manifest.method_label(r.method) == 1);
        }
    }
    CHECK(reals == 2);
    CHECK(res.manifest.spec.image_size == 16);

    const auto empty = fresh_dir("import_empty");
    fs::create_directories(empty);
    CHECK_THROWS_AS(import_images(empty, 16), io_error);
    fs::remove_all(dir);
    fs::remove_all(empty);
}

TEST_CASE("high-pass stream sums to zero on flat interiors") {
    auto hp = fixed_highpass(3, 3);
    Tensor flat = Tensor::full({1, 3, 8, 8}, 0.6f);
    Tensor out = highpass_batch(flat, hp);
    REQUIRE(out.shape() == flat.shape());
    for (int c = 0; c < 3; ++c)
        for (int y = 1; y < 7; ++y)
            for (int x = 1; x < 7; ++x)
                CHECK(std::fabs(out[((static_cast<std::size_t>(c)) * 8 + y) * 8 + x]) <= 1e-5f);
}

TEST_CASE("pair loader delivers seeded balanced batches") {
    CorpusSpec s = tiny_spec();
    s.n_real = 24;
    s.n_fake_per_method = 8;
    s.train_frac = 1.0;
    s.val_frac = 0.0;
    s.test_frac = 0.0;
    const auto dir = fresh_dir("loader");
    auto man = gen_corpus(s, dir);
    auto hp = fixed_highpass(3, 3);

    PairLoader a(man, "train", 16, 77, hp);
    PairLoader b(man, "train", 16, 77, hp);
    CHECK(a.steps_per_epoch() == 3); // min(24 reals, 24 fakes) / 8

    for (int step = 0; step < 3; ++step) {
        auto ba = a.next();
        auto bb = b.next();
        REQUIRE(ba.has_value());
        REQUIRE(bb.has_value());
        CHECK(ba->X0.shape() == std::vector<int>{8, 3, 32, 32});
        CHECK(ba->X1.shape() == std::vector<int>{8, 3, 32, 32});
        CHECK(ba->Xh0.shape() == ba->X0.shape());
        CHECK(ba->X0.equal(bb->X0));
        CHECK(ba->X1.equal(bb->X1));
        CHECK(ba->S == bb->S);
        for (std::size_t i = 0; i < ba->X0.numel(); ++i) {
            CHECK(ba->X0[i] >= 0.0f);
            CHECK(ba->X0[i] <= 1.0f);
        }
        CHECK(ba->Xh0.all_finite());
        CHECK(ba->Xh1.all_finite());
        REQUIRE(ba->y.size() == 16);
        for (int i = 0; i < 8; ++i) {
            CHECK(ba->y[static_cast<std::size_t>(i)] == 0);
            CHECK(ba->S[static_cast<std::size_t>(i)] >= 1);
            CHECK(ba->S[static_cast<std::size_t>(i)] <= 3);
            CHECK(ba->y[static_cast<std::size_t>(i) + 8] == 1);
            CHECK(ba->S[static_cast<std::size_t>(i) + 8] == 0);
        }
    }
    CHECK(!a.next().has_value()); // epoch boundary
    CHECK(a.epoch() == 1);
    CHECK(a.next().has_value()); // next epoch proceeds

    fs::remove_all(dir);
}

TEST_CASE("pair loader draws without replacement inside an epoch") {
    CorpusSpec s = tiny_spec();
    s.n_real = 12;
    s.n_fake_per_method = 4;
    s.train_frac = 1.0;
    s.val_frac = 0.0;
    s.test_frac = 0.0;
    const auto dir = fresh_dir("noreplace");
    auto man = gen_corpus(s, dir);
    PairLoader l(man, "train", 8, 5, fixed_highpass(3, 3));

    std::set<std::string> seen_fake, seen_real;
    int rows = 0;
    while (auto batch = l.next()) {
        const std::size_t plane = batch->X0.numel() / 4;
        for (int i = 0; i < 4; ++i) {
            seen_fake.insert(std::string(
                reinterpret_cast<const char*>(batch->X0.data() + i * plane),
                plane * sizeof(float)));
            seen_real.insert(std::string(
                reinterpret_cast<const char*>(batch->X1.data() + i * plane),
                plane * sizeof(float)));
            ++rows;
        }
    }
    CHECK(rows == 12); // 3 steps of 4 pairs
    CHECK(seen_fake.size() == 12);
    CHECK(seen_real.size() == 12);

    CHECK_THROWS_AS(PairLoader(man, "train", 7, 5, fixed_highpass(3, 3)), contract_error);
    CHECK_THROWS_AS(PairLoader(man, "val", 8, 5, fixed_highpass(3, 3)), contract_error);
    fs::remove_all(dir);
}
