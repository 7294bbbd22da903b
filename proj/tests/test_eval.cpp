#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "forgesem/eval.hpp"
#include "forgesem/image_io.hpp"
#include "forgesem/ops.hpp"
#include "support/oracles.hpp"

using namespace forgesem;
namespace fs = std::filesystem;

namespace {

CorpusManifest make_corpus(const std::string& name, std::vector<std::string> methods,
                           int n_real, int n_fake, std::uint64_t seed) {
    CorpusSpec s;
    s.n_real = n_real;
    s.n_fake_per_method = n_fake;
    s.methods = std::move(methods);
    s.image_size = 32;
    s.seed = seed;
    const std::string dir = "tmp_eval_" + name;
    fs::remove_all(dir);
    return gen_corpus(s, dir);
}

TrainConfig eval_config() {
    TrainConfig c;
    c.lr = 1e-3f;
    c.batch = 8;
    c.epochs = 1;
    c.seed = 31;
    c.model.content_channels = 8;
    c.model.forgery_channels = 8;
    c.model.methods = 2;
    return c;
}

std::string slurp(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    REQUIRE(f.good());
    return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

EvalReport fixed_report() {
    EvalReport r;
    r.seed = 7;
    r.stage1_hash = "00aa11bb22cc33dd";
    r.stage2_hash = "ff00ff00ff00ff00";
    r.rows = {{"fc", "splice_noise", "test", 0.9375},
              {"fc", "splice_block", "test", 0.875},
              {"fa", "splice_noise", "test", 0.8125},
              {"fa", "splice_block", "test", 0.75},
              {"fc", "splice_hue", "held_out", 0.8},
              {"fa", "splice_hue", "held_out", 0.7}};
    return r;
}

} // namespace

TEST_CASE("auc hand cases") {
    CHECK(auc({0.9, 0.8, 0.1, 0.2}, {1, 1, 0, 0}) == 1.0);
    CHECK(auc({0.4, 0.4, 0.4, 0.4}, {1, 0, 1, 0}) == 0.5);
    CHECK(auc({0.8, 0.3, 0.5, 0.1}, {1, 1, 0, 0}) == 0.75);
    CHECK(auc({0.1, 0.9}, {0, 1}) == 1.0);
    CHECK(auc({0.9, 0.1}, {0, 1}) == 0.0);
}

TEST_CASE("auc rejects degenerate input") {
    CHECK_THROWS_AS(auc({0.1, 0.2}, {1, 1}), undefined_metric);
    CHECK_THROWS_AS(auc({0.1, 0.2}, {0, 0}), undefined_metric);
    CHECK_THROWS_AS(auc({}, {}), contract_error);
    CHECK_THROWS_AS(auc({0.1}, {1, 0}), contract_error);
    const double nan = std::nan("");
    CHECK_THROWS_AS(auc({nan, 0.2}, {1, 0}), contract_error);
}

TEST_CASE("auc equals pair counting and survives monotone transforms") {
    Pcg32 rng(404, 11);
    for (int trial = 0; trial < 1000; ++trial) {
        const int n = 2 + static_cast<int>(rng.next_u32() % 49);
        std::vector<double> scores(static_cast<std::size_t>(n));
        std::vector<int> labels(static_cast<std::size_t>(n));
        // coarse grid so ties are common
        for (auto& s : scores) s = std::floor(rng.uniform(-2.0, 2.0) * 10.0) / 10.0;
        int npos = 0;
        for (auto& l : labels) npos += (l = rng.next_u32() & 1);
        if (npos == 0) labels[0] = 1;
        if (npos == n) labels[0] = 0;

        std::vector<double> pos, neg;
        for (int i = 0; i < n; ++i)
            (labels[static_cast<std::size_t>(i)] ? pos : neg)
                .push_back(scores[static_cast<std::size_t>(i)]);
        const double ref = oracles::auc_pairs(pos, neg);
        const double got = auc(scores, labels);
        CHECK(got == ref);

        std::vector<double> expd(scores), affine(scores);
        for (auto& v : expd) v = std::exp(v);
        for (auto& v : affine) v = 2.5 * v + 1.0;
        CHECK(auc(expd, labels) == ref);
        CHECK(auc(affine, labels) == ref);
    }
}

TEST_CASE("auc of flipped labels complements") {
    Pcg32 rng(77, 3);
    for (int trial = 0; trial < 50; ++trial) {
        const int n = 4 + static_cast<int>(rng.next_u32() % 30);
        std::vector<double> scores(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) // distinct by construction: no ties
            scores[static_cast<std::size_t>(i)] = i * 0.125 + rng.uniform(0.0, 0.06);
        std::vector<int> labels(static_cast<std::size_t>(n)), flipped;
        int npos = 0;
        for (auto& l : labels) npos += (l = rng.next_u32() & 1);
        if (npos == 0) labels[0] = 1;
        if (npos == n) labels[0] = 0;
        for (int l : labels) flipped.push_back(1 - l);
        CHECK(auc(scores, labels) + auc(scores, flipped) ==
              doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("protocol reports both detectors on intra and held-out data") {
    auto train_man = make_corpus("proto_train", {"splice_noise", "splice_block"}, 16, 8, 5);
    auto held_man = make_corpus("proto_held", {"splice_hue"}, 12, 6, 6);
    TrainConfig cfg = eval_config();
    auto s1 = train_stage1(cfg, train_man);
    auto s2 = train_stage2(cfg, train_man, s1.checkpoint);

    EvalReport rep = run_protocol(s1.checkpoint, s2.checkpoint, train_man, held_man);
    CHECK(rep.rows.size() == 6); // methods x 2 detectors + 2 held-out
    for (const auto& r : rep.rows) {
        CHECK(r.value >= 0.0);
        CHECK(r.value <= 1.0);
    }
    CHECK(rep.seed == cfg.seed);
    CHECK(rep.stage1_hash.size() == 16);
    CHECK(rep.stage1_hash == rep.stage2_hash); // same config drove both stages
    CHECK_NOTHROW(rep.value_of("fc", "splice_noise", "test"));
    CHECK_NOTHROW(rep.value_of("fa", "splice_hue", "held_out"));
    CHECK_THROWS_AS(rep.value_of("fc", "splice_hue", "test"), contract_error);

    // stage fields are enforced on both inputs
    CHECK_THROWS_AS(run_protocol(s2.checkpoint, s2.checkpoint, train_man, held_man),
                    checkpoint_mismatch);
    CHECK_THROWS_AS(run_protocol(s1.checkpoint, s1.checkpoint, train_man, held_man),
                    checkpoint_mismatch);

    fs::remove_all(train_man.root);
    fs::remove_all(held_man.root);
}

TEST_CASE("untrained weights score near chance on held-out data") {
    auto train_man = make_corpus("null_train", {"splice_noise", "splice_block"}, 16, 8, 5);
    auto held_man = make_corpus("null_held", {"splice_hue"}, 60, 30, 6);
    TrainConfig cfg = eval_config();
    cfg.model.image_size = 32;

    for (std::uint64_t seed : {101u, 102u, 103u, 104u, 105u}) {
        cfg.seed = seed;
        Model m = build_model(cfg.model, seed);
        transfer_stage1(m);
        Pcg32 rng(seed, 1);
        Checkpoint c1 = snapshot_model(m, cfg, 1, 0, rng);
        Checkpoint c2 = snapshot_model(m, cfg, 2, 0, rng);
        EvalReport rep = run_protocol(c1, c2, train_man, held_man);
        const double held = rep.value_of("fc", "splice_hue", "held_out");
        CHECK(held >= 0.3);
        CHECK(held <= 0.7);
    }
    fs::remove_all(train_man.root);
    fs::remove_all(held_man.root);
}

TEST_CASE("grad-cam maps are bounded, deterministic, and layer-checked") {
    TrainConfig cfg = eval_config();
    Model m = build_model(cfg.model, 77);
    transfer_stage1(m);

    CorpusSpec spec;
    spec.methods = {"splice_noise", "splice_block"};
    spec.image_size = 32;
    spec.seed = 11;
    Tensor img = gen_fake_image(spec, 0, 4).image;

    Tensor map = grad_cam(m, img, 0);
    CHECK(map.rank() == 2);
    CHECK(map.dim(0) == 32);
    CHECK(map.dim(1) == 32);
    float mn = 1e9f, mx = -1e9f;
    for (std::size_t i = 0; i < map.numel(); ++i) {
        mn = std::min(mn, map[i]);
        mx = std::max(mx, map[i]);
    }
    CHECK(mn >= 0.0f);
    CHECK(mx <= 1.0f);

    CHECK(grad_cam(m, img, 0).equal(map));
    CHECK(grad_cam(m, img, 0, "enc2.fa").rank() == 2);
    CHECK_THROWS_AS(grad_cam(m, img, 0, "enc1.stem"), contract_error);
    CHECK_THROWS_AS(grad_cam(m, img, 5), contract_error);

    // identical through the checkpoint entry point, twice
    Pcg32 rng(1, 1);
    Checkpoint c2 = snapshot_model(m, cfg, 2, 0, rng);
    Tensor via_ckpt = grad_cam(c2, img, 0);
    CHECK(via_ckpt.equal(map));
    CHECK(grad_cam(c2, img, 0).equal(map));

    // with a zeroed head there is no gradient and the map stays all-zero
    auto& w = m.store.at("det3.w").tensor();
    auto& b = m.store.at("det3.b").tensor();
    std::fill(w.vec().begin(), w.vec().end(), 0.0f);
    std::fill(b.vec().begin(), b.vec().end(), 0.0f);
    Tensor zero_map = grad_cam(m, img, 0);
    for (std::size_t i = 0; i < zero_map.numel(); ++i) CHECK(zero_map[i] == 0.0f);
}

TEST_CASE("grad-cam weights match a finite-difference construction") {
    TrainConfig cfg = eval_config();
    Model m = build_model(cfg.model, 909);
    transfer_stage1(m);

    CorpusSpec spec;
    spec.methods = {"splice_noise", "splice_block"};
    spec.image_size = 32;
    spec.seed = 13;
    Tensor img = gen_real_image(spec, 2).image;
    const int target = 1;

    Tensor got = grad_cam(m, img, target);

    // independent path: perturb whole activation channels and push them
    // through the detector tail by hand
    auto x = make_leaf(Tensor({1, 3, 32, 32}, img.vec()), false);
    auto s = encoder2_forward(m, x, highfreq_input(m, x));
    const Tensor& a = s.Fc->value;
    const int ch = a.dim(1), h = a.dim(2), w = a.dim(3);
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    const Tensor& dw = m.store.at("det3.w").tensor();

    auto logit_of = [&](const Tensor& act) {
        double out = static_cast<double>(m.store.at("det3.b").tensor()[target]);
        for (int k = 0; k < ch; ++k) {
            double z = 0.0;
            const float* p = act.data() + static_cast<std::size_t>(k) * plane;
            for (std::size_t i = 0; i < plane; ++i) z += p[i];
            out += z / static_cast<double>(plane) * static_cast<double>(dw.at2(k, target));
        }
        return out;
    };

    const double eps = 1e-3;
    Tensor cam({1, h, w});
    for (int k = 0; k < ch; ++k) {
        Tensor hi = a, lo = a;
        float* hp = hi.data() + static_cast<std::size_t>(k) * plane;
        float* lp = lo.data() + static_cast<std::size_t>(k) * plane;
        for (std::size_t i = 0; i < plane; ++i) {
            hp[i] += static_cast<float>(eps);
            lp[i] -= static_cast<float>(eps);
        }
        const double wk =
            (logit_of(hi) - logit_of(lo)) / (2.0 * eps) / static_cast<double>(plane);
        const float* ap = a.data() + static_cast<std::size_t>(k) * plane;
        for (std::size_t i = 0; i < plane; ++i)
            cam[i] += static_cast<float>(wk) * ap[i];
    }
    for (std::size_t i = 0; i < cam.numel(); ++i) cam[i] = std::max(cam[i], 0.0f);
    Tensor up = resize_bilinear_image(cam, 32, 32);
    float mn = up[0], mx = up[0];
    for (std::size_t i = 0; i < up.numel(); ++i) {
        mn = std::min(mn, up[i]);
        mx = std::max(mx, up[i]);
    }
    REQUIRE(mx > mn);
    for (std::size_t i = 0; i < up.numel(); ++i) {
        const double want = (up[i] - mn) / (mx - mn);
        CHECK(std::fabs(static_cast<double>(got[i]) - want) <= 5e-3);
    }
}

TEST_CASE("report files are complete and deterministic") {
    EvalReport rep = fixed_report();
    fs::remove_all("tmp_eval_rep_a");
    fs::remove_all("tmp_eval_rep_b");
    emit_report(rep, "tmp_eval_rep_a");
    emit_report(rep, "tmp_eval_rep_b");

    std::ifstream csv("tmp_eval_rep_a/report.csv");
    std::string line;
    int lines = 0;
    std::getline(csv, line);
    CHECK(line == "detector,method,split,auc");
    while (std::getline(csv, line)) ++lines;
    CHECK(lines == 6); // 2 methods x 2 detectors + 2 held-out rows

    EvalReport back = load_report("tmp_eval_rep_a/report.json");
    CHECK(back == rep);

    for (const char* f : {"report.csv", "report.json", "auc_fc.svg", "auc_fa.svg"})
        CHECK(slurp(std::string("tmp_eval_rep_a/") + f) ==
              slurp(std::string("tmp_eval_rep_b/") + f));

    std::ofstream("tmp_eval_blocker").put('x');
    CHECK_THROWS_AS(emit_report(rep, "tmp_eval_blocker/sub"), io_error);
    CHECK_THROWS_AS(load_report("tmp_eval_missing.json"), io_error);

    EvalReport bad = rep;
    bad.rows[0].value = 1.5;
    CHECK_THROWS_AS(emit_report(bad, "tmp_eval_rep_a"), contract_error);

    fs::remove_all("tmp_eval_rep_a");
    fs::remove_all("tmp_eval_rep_b");
    fs::remove("tmp_eval_blocker");
}
