#include "forgesem/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>

#include <nlohmann/json.hpp>

#include "forgesem/image_io.hpp"
#include "forgesem/ops.hpp"

using json = nlohmann::json;
namespace fs = std::filesystem;

namespace forgesem {

namespace {

std::string fnv1a_hex(const std::string& s) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

std::string config_hash(const TrainConfig& c) {
    char buf[512];
    const auto& w = c.weights;
    const auto& m = c.model;
    std::snprintf(buf, sizeof(buf),
                  "%.9g|%d|%d|%.9g|%llu|%d|%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g|"
                  "%d,%d,%d,%d,%d,%.9g,%d,%d,%d,%d",
                  c.lr, c.batch, c.epochs, c.sigma,
                  static_cast<unsigned long long>(c.seed), c.freeze_embedded ? 1 : 0,
                  w.rho1, w.rho2, w.rho3, w.rho4, w.rho5, w.rho6, w.a, m.image_size,
                  m.content_channels, m.forgery_channels, m.mhfe_levels, m.methods,
                  m.ahf_sigma, m.use_highfreq ? 1 : 0, m.use_mhfe ? 1 : 0,
                  m.use_mhff ? 1 : 0, m.freeze_embedded ? 1 : 0);
    return fnv1a_hex(buf);
}

Tensor load_record(const CorpusManifest& man, const CorpusRecord& r, int size) {
    Tensor img = read_image(man.root + "/" + r.path);
    if (img.dim(1) != size || img.dim(2) != size)
        img = resize_bilinear_image(img, size, size);
    for (std::size_t i = 0; i < img.numel(); ++i) img[i] = std::clamp(img[i], 0.0f, 1.0f);
    return img;
}

// fake-class probability = softmax(logits)[0]; class 0 is fake by the
// label convention y: 1 real, 0 fake
double fake_prob(const Tensor& logits, int row) {
    return ops::softmax_row(logits, row)[0];
}

void intra_rows(EvalReport& rep, const ScoreTable& t,
                const std::vector<std::string>& methods) {
    for (const char* det : {"fc", "fa"}) {
        const auto& s = std::string(det) == "fc" ? t.fc : t.fa;
        for (const auto& method : methods) {
            std::vector<double> scores;
            std::vector<int> labels;
            for (std::size_t i = 0; i < s.size(); ++i) {
                if (t.split[i] != "test") continue;
                if (t.is_fake[i] && t.method[i] != method) continue;
                scores.push_back(s[i]);
                labels.push_back(t.is_fake[i]);
            }
            rep.rows.push_back({det, method, "test", auc(scores, labels)});
        }
    }
}

} // namespace

double auc(const std::vector<double>& scores, const std::vector<int>& labels) {
    FORGESEM_CHECK(scores.size() == labels.size() && !scores.empty(),
                   "auc: scores and labels must be equal-length and non-empty");
    for (double s : scores)
        FORGESEM_CHECK(std::isfinite(s), "auc: scores must be finite");

    const std::size_t n = scores.size();
    std::uint64_t npos = 0;
    for (int l : labels) npos += l != 0;
    const std::uint64_t nneg = n - npos;
    if (npos == 0 || nneg == 0)
        throw undefined_metric("auc: both classes must be present");

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

    // doubled 1-based average ranks keep everything in integers, so the
    // result is bit-identical to O(n^2) pair counting with half-ties
    std::uint64_t pos_rank2 = 0;
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j < n && scores[order[j]] == scores[order[i]]) ++j;
        const std::uint64_t rank2 = static_cast<std::uint64_t>(i + 1 + j);
        for (std::size_t k = i; k < j; ++k)
            if (labels[order[k]] != 0) pos_rank2 += rank2;
        i = j;
    }
    const std::uint64_t wins2 = pos_rank2 - npos * (npos + 1);
    return static_cast<double>(wins2) / static_cast<double>(2 * npos * nneg);
}

double EvalReport::value_of(const std::string& detector, const std::string& method,
                            const std::string& split) const {
    for (const auto& r : rows)
        if (r.detector == detector && r.method == method && r.split == split)
            return r.value;
    throw contract_error("report: no row " + detector + "/" + method + "/" + split);
}

ScoreTable score_manifest(Model& m, const CorpusManifest& man) {
    const int size = m.cfg.image_size;
    const int n = static_cast<int>(man.records.size());
    FORGESEM_CHECK(n > 0, "score: empty manifest");

    ScoreTable t;
    t.fc.resize(static_cast<std::size_t>(n));
    t.fa.resize(static_cast<std::size_t>(n));
    t.is_fake.resize(static_cast<std::size_t>(n));
    t.method.resize(static_cast<std::size_t>(n));
    t.split.resize(static_cast<std::size_t>(n));

    constexpr int kChunk = 16;
    const int chunks = (n + kChunk - 1) / kChunk;

    // read-only over the weights; each chunk builds its own graph and
    // writes disjoint indices, so ordering is deterministic. Exceptions
    // must not unwind through the parallel region, so they are parked.
    std::string failure;
#pragma omp parallel for schedule(dynamic)
    for (int c = 0; c < chunks; ++c) {
        try {
            const int lo = c * kChunk;
            const int b = std::min(kChunk, n - lo);
            Tensor xt({b, 3, size, size});
            for (int i = 0; i < b; ++i) {
                Tensor img =
                    load_record(man, man.records[static_cast<std::size_t>(lo + i)], size);
                std::copy_n(img.data(), img.numel(),
                            xt.data() + static_cast<std::size_t>(i) * img.numel());
            }
            auto x = make_leaf(std::move(xt), false);
            auto xh = highfreq_input(m, x);
            auto s2 = encoder2_forward(m, x, xh);
            auto l_fc = detector_forward(m.det3, s2.Fc);
            auto s1 = encoder1_forward(m, x, xh);
            auto l_fa = detector_forward(m.det1, s1.Fa);
            for (int i = 0; i < b; ++i) {
                t.fc[static_cast<std::size_t>(lo + i)] = fake_prob(l_fc->value, i);
                t.fa[static_cast<std::size_t>(lo + i)] = fake_prob(l_fa->value, i);
            }
        } catch (const std::exception& e) {
#pragma omp critical
            if (failure.empty()) failure = e.what();
        }
    }
    if (!failure.empty()) throw io_error("scoring failed: " + failure);

    for (int i = 0; i < n; ++i) {
        const auto& r = man.records[static_cast<std::size_t>(i)];
        t.is_fake[static_cast<std::size_t>(i)] = r.y == 0;
        t.method[static_cast<std::size_t>(i)] = r.method;
        t.split[static_cast<std::size_t>(i)] = r.split;
    }
    return t;
}

Model restore_stage2(const Checkpoint& stage2) {
    if (stage2.stage != 2)
        throw checkpoint_mismatch("evaluation requires a stage-2 checkpoint");
    Model m = build_model(stage2.cfg.model, stage2.cfg.seed);
    apply_checkpoint(stage2, m);
    m.enc2.loaded = true; // the snapshot was taken after the transfer
    return m;
}

EvalReport run_protocol(const Checkpoint& stage1, const Checkpoint& stage2,
                        const CorpusManifest& train_man, const CorpusManifest& held_man) {
    if (stage1.stage != 1)
        throw checkpoint_mismatch("run_protocol: first checkpoint must be stage 1");
    Model m = restore_stage2(stage2);
    // the stage-2 snapshot carries the stage-1 encoder untouched, but the
    // explicit checkpoint wins if the caller mixed runs
    apply_checkpoint(stage1, m);
    apply_checkpoint(stage2, m);

    EvalReport rep;
    rep.seed = stage2.cfg.seed;
    rep.stage1_hash = config_hash(stage1.cfg);
    rep.stage2_hash = config_hash(stage2.cfg);

    intra_rows(rep, score_manifest(m, train_man), train_man.spec.methods);

    const ScoreTable held = score_manifest(m, held_man);
    std::string held_name;
    for (const auto& meth : held_man.spec.methods)
        held_name += (held_name.empty() ? "" : "+") + meth;
    for (const char* det : {"fc", "fa"}) {
        const auto& s = std::string(det) == "fc" ? held.fc : held.fa;
        rep.rows.push_back({det, held_name, "held_out", auc(s, held.is_fake)});
    }
    return rep;
}

Tensor grad_cam(Model& m, const Tensor& image, int target_class,
                const std::string& layer) {
    FORGESEM_CHECK(image.rank() == 3 && image.dim(0) == 3, "grad_cam: need a 3xHxW image");
    FORGESEM_CHECK(target_class >= 0 && target_class < m.det3.class_count,
                   "grad_cam: target class out of range");
    FORGESEM_CHECK(layer == "enc2.fc" || layer == "enc2.fa",
                   "grad_cam: unknown layer " + layer);

    const int size = m.cfg.image_size;
    Tensor img = image;
    if (img.dim(1) != size || img.dim(2) != size)
        img = resize_bilinear_image(img, size, size);
    Tensor xt({1, 3, size, size});
    for (std::size_t i = 0; i < img.numel(); ++i) xt[i] = std::clamp(img[i], 0.0f, 1.0f);

    // the input leaf requires grad so every activation is on a
    // differentiable path even when branches are frozen
    auto x = make_leaf(std::move(xt), true);
    auto s = encoder2_forward(m, x, highfreq_input(m, x));
    Value tap = layer == "enc2.fc" ? s.Fc : s.Fa;
    auto logit = ops::pick(detector_forward(m.det3, s.Fc), 0, target_class);
    backward(logit);

    const Tensor& a = tap->value;
    const Tensor& g = tap->grad;
    const int ch = a.dim(1), h = a.dim(2), w = a.dim(3);
    const std::size_t plane = static_cast<std::size_t>(h) * w;

    Tensor cam({1, h, w});
    for (int k = 0; k < ch; ++k) {
        double wk = 0.0;
        const float* gp = g.data() + static_cast<std::size_t>(k) * plane;
        for (std::size_t i = 0; i < plane; ++i) wk += gp[i];
        wk /= static_cast<double>(plane);
        const float* ap = a.data() + static_cast<std::size_t>(k) * plane;
        for (std::size_t i = 0; i < plane; ++i)
            cam[i] += static_cast<float>(wk) * ap[i];
    }
    for (std::size_t i = 0; i < plane; ++i) cam[i] = std::max(cam[i], 0.0f);
    zero_grads(m.store);

    Tensor up = resize_bilinear_image(cam, size, size);
    float mn = up[0], mx = up[0];
    for (std::size_t i = 0; i < up.numel(); ++i) {
        mn = std::min(mn, up[i]);
        mx = std::max(mx, up[i]);
    }
    Tensor out({size, size});
    if (mx > mn) {
        for (std::size_t i = 0; i < out.numel(); ++i) out[i] = (up[i] - mn) / (mx - mn);
    } else if (mx > 0.0f) {
        for (std::size_t i = 0; i < out.numel(); ++i) out[i] = 1.0f;
    }
    return out;
}

Tensor grad_cam(const Checkpoint& stage2, const Tensor& image, int target_class,
                const std::string& layer) {
    Model m = restore_stage2(stage2);
    return grad_cam(m, image, target_class, layer);
}

void emit_report(const EvalReport& report, const std::string& out_dir,
                 ReportFormats formats) {
    for (const auto& r : report.rows)
        FORGESEM_CHECK(r.value >= 0.0 && r.value <= 1.0, "report: auc out of [0,1]");
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw io_error("cannot create " + out_dir + ": " + ec.message());

    char buf[64];
    if (formats.csv) {
        std::ofstream f(out_dir + "/report.csv");
        if (!f) throw io_error("cannot write report.csv in " + out_dir);
        f << "detector,method,split,auc\n";
        for (const auto& r : report.rows) {
            std::snprintf(buf, sizeof(buf), "%.9g", r.value);
            f << r.detector << "," << r.method << "," << r.split << "," << buf << "\n";
        }
        if (!f) throw io_error("short write: report.csv");
    }

    if (formats.json) {
        json rows = json::array();
        for (const auto& r : report.rows)
            rows.push_back({{"detector", r.detector},
                            {"method", r.method},
                            {"split", r.split},
                            {"auc", r.value}});
        json j{{"seed", report.seed},
               {"stage1_hash", report.stage1_hash},
               {"stage2_hash", report.stage2_hash},
               {"rows", rows}};
        std::ofstream f(out_dir + "/report.json");
        if (!f) throw io_error("cannot write report.json in " + out_dir);
        f << j.dump(2) << "\n";
        if (!f) throw io_error("short write: report.json");
    }

    if (formats.svg) {
        std::vector<std::string> detectors;
        for (const auto& r : report.rows)
            if (std::find(detectors.begin(), detectors.end(), r.detector) == detectors.end())
                detectors.push_back(r.detector);
        for (const auto& det : detectors) {
            std::vector<const AucRow*> rows;
            for (const auto& r : report.rows)
                if (r.detector == det) rows.push_back(&r);
            const int bar = 72, gap = 16, h = 220, base = 170;
            const int width = gap + static_cast<int>(rows.size()) * (bar + gap);
            std::ofstream f(out_dir + "/auc_" + det + ".svg");
            if (!f) throw io_error("cannot write auc_" + det + ".svg in " + out_dir);
            f << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width
              << "\" height=\"" << h << "\">\n";
            f << "<text x=\"" << gap << "\" y=\"16\" font-size=\"13\">AUC, detector "
              << det << "</text>\n";
            for (std::size_t i = 0; i < rows.size(); ++i) {
                const double v = rows[i]->value;
                const int bh = static_cast<int>(std::lround(v * 140.0));
                const int x = gap + static_cast<int>(i) * (bar + gap);
                f << "<rect x=\"" << x << "\" y=\"" << base - bh << "\" width=\"" << bar
                  << "\" height=\"" << bh << "\" fill=\"#4a7ab5\"/>\n";
                std::snprintf(buf, sizeof(buf), "%.3f", v);
                f << "<text x=\"" << x << "\" y=\"" << base - bh - 4
                  << "\" font-size=\"11\">" << buf << "</text>\n";
                f << "<text x=\"" << x << "\" y=\"" << base + 14 << "\" font-size=\"10\">"
                  << rows[i]->method << "/" << rows[i]->split << "</text>\n";
            }
            f << "</svg>\n";
            if (!f) throw io_error("short write: auc_" + det + ".svg");
        }
    }
}

EvalReport load_report(const std::string& json_path) {
    std::ifstream f(json_path);
    if (!f) throw io_error("cannot open report " + json_path);
    EvalReport rep;
    try {
        json j = json::parse(f);
        rep.seed = j.at("seed").get<std::uint64_t>();
        rep.stage1_hash = j.at("stage1_hash").get<std::string>();
        rep.stage2_hash = j.at("stage2_hash").get<std::string>();
        for (const auto& r : j.at("rows")) {
            rep.rows.push_back({r.at("detector").get<std::string>(),
                                r.at("method").get<std::string>(),
                                r.at("split").get<std::string>(),
                                r.at("auc").get<double>()});
        }
    } catch (const json::exception& e) {
        throw io_error("malformed report " + json_path + ": " + e.what());
    }
    return rep;
}

} // namespace forgesem
