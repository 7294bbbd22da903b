#include "forgesem/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

#include "forgesem/log.hpp"

using json = nlohmann::json;

namespace forgesem {

namespace {

json weights_to_json(const LossWeights& w) {
    return json{{"rho1", w.rho1}, {"rho2", w.rho2}, {"rho3", w.rho3}, {"rho4", w.rho4},
                {"rho5", w.rho5}, {"rho6", w.rho6}, {"a", w.a}};
}

LossWeights weights_from_json(const json& j) {
    LossWeights w;
    w.rho1 = j.at("rho1").get<float>();
    w.rho2 = j.at("rho2").get<float>();
    w.rho3 = j.at("rho3").get<float>();
    w.rho4 = j.at("rho4").get<float>();
    w.rho5 = j.at("rho5").get<float>();
    w.rho6 = j.at("rho6").get<float>();
    w.a = j.at("a").get<float>();
    return w;
}

json model_to_json(const ModelConfig& m) {
    return json{{"image_size", m.image_size},
                {"content_channels", m.content_channels},
                {"forgery_channels", m.forgery_channels},
                {"mhfe_levels", m.mhfe_levels},
                {"methods", m.methods},
                {"ahf_sigma", m.ahf_sigma},
                {"use_highfreq", m.use_highfreq},
                {"use_mhfe", m.use_mhfe},
                {"use_mhff", m.use_mhff},
                {"freeze_embedded", m.freeze_embedded}};
}

ModelConfig model_from_json(const json& j) {
    ModelConfig m;
    m.image_size = j.at("image_size").get<int>();
    m.content_channels = j.at("content_channels").get<int>();
    m.forgery_channels = j.at("forgery_channels").get<int>();
    m.mhfe_levels = j.at("mhfe_levels").get<int>();
    m.methods = j.at("methods").get<int>();
    m.ahf_sigma = j.at("ahf_sigma").get<float>();
    m.use_highfreq = j.at("use_highfreq").get<bool>();
    m.use_mhfe = j.at("use_mhfe").get<bool>();
    m.use_mhff = j.at("use_mhff").get<bool>();
    m.freeze_embedded = j.at("freeze_embedded").get<bool>();
    return m;
}

json cfg_to_json(const TrainConfig& c) {
    return json{{"lr", c.lr},
                {"batch", c.batch},
                {"epochs", c.epochs},
                {"sigma", c.sigma},
                {"seed", c.seed},
                {"freeze_embedded", c.freeze_embedded},
                {"weights", weights_to_json(c.weights)},
                {"model", model_to_json(c.model)}};
}

TrainConfig cfg_from_json(const json& j) {
    TrainConfig c;
    c.lr = j.at("lr").get<float>();
    c.batch = j.at("batch").get<int>();
    c.epochs = j.at("epochs").get<int>();
    c.sigma = j.at("sigma").get<float>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.freeze_embedded = j.at("freeze_embedded").get<bool>();
    c.weights = weights_from_json(j.at("weights"));
    c.model = model_from_json(j.at("model"));
    return c;
}

double scalar_of(const Value& v) { return static_cast<double>(v->value[0]); }

void check_terms_finite(const std::vector<std::pair<const char*, double>>& terms,
                        const Checkpoint& last_good) {
    for (const auto& [name, v] : terms)
        if (!std::isfinite(v))
            throw train_abort(std::string("non-finite loss term ") + name, last_good);
}

// resolves the effective model config for a training run
ModelConfig effective_model(const TrainConfig& cfg, const CorpusManifest& man) {
    ModelConfig mc = cfg.model;
    mc.methods = static_cast<int>(man.spec.methods.size());
    mc.ahf_sigma = cfg.sigma;
    mc.freeze_embedded = cfg.freeze_embedded;
    mc.image_size = man.spec.image_size;
    mc.validate();
    return mc;
}

template <typename Fn>
TrainResult run_epochs(Model& m, const TrainConfig& cfg, PairLoader& loader, Pcg32& rng,
                       int stage, Fn&& step_fn) {
    MetricsLog log;
    std::int64_t step = 0;
    Checkpoint last_good = snapshot_model(m, cfg, stage, 0, rng);
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        while (auto batch = loader.next()) {
            ++step;
            try {
                step_fn(*batch, step, epoch, log, last_good);
            } catch (const train_abort&) {
                throw;
            } catch (const numeric_error& e) {
                throw train_abort(e.what(), last_good);
            }
            // the pre-update weights just produced a finite loss; the updated
            // ones have not been evaluated yet, so snapshot before stepping
            last_good = snapshot_model(m, cfg, stage, step - 1, rng);
            sgd_step(m.store, cfg.lr);
            project_ahf(m);
        }
        log_info("stage " + std::to_string(stage) + " epoch " + std::to_string(epoch) +
                 " done, " + std::to_string(step) + " steps");
    }
    return {snapshot_model(m, cfg, stage, step, rng), std::move(log)};
}

} // namespace

void TrainConfig::validate() const {
    FORGESEM_CHECK(lr > 0.0f, "train: lr must be positive");
    FORGESEM_CHECK(batch >= 2 && batch % 2 == 0, "train: batch must be even");
    FORGESEM_CHECK(epochs >= 1, "train: epochs must be positive");
    FORGESEM_CHECK(sigma > 0.0f, "train: sigma must be positive");
    FORGESEM_CHECK(weights.a > 0.0f, "train: margin must be positive");
}

void MetricsLog::add(std::int64_t step, int epoch, const std::string& term, double value) {
    rows.push_back({step, epoch, term, value});
}

void MetricsLog::write_csv(const std::string& path) const {
    std::ofstream f(path);
    if (!f) throw io_error("cannot write metrics " + path);
    f << "step,epoch,term,value\n";
    char buf[64];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof(buf), "%.9g", r.value);
        f << r.step << "," << r.epoch << "," << r.term << "," << buf << "\n";
    }
    if (!f) throw io_error("short metrics write " + path);
}

double MetricsLog::epoch_mean(int epoch, const std::string& term) const {
    double acc = 0.0;
    int n = 0;
    for (const auto& r : rows)
        if (r.epoch == epoch && r.term == term) {
            acc += r.value;
            ++n;
        }
    FORGESEM_CHECK(n > 0, "metrics: no rows for term " + term);
    return acc / n;
}

Checkpoint snapshot_model(const Model& m, const TrainConfig& cfg, int stage,
                          std::int64_t step, const Pcg32& rng) {
    Checkpoint c;
    c.stage = stage;
    c.cfg = cfg;
    c.rng_state = rng.state();
    c.rng_inc = rng.stream();
    c.step = step;
    for (const auto& name : m.store.names_sorted())
        c.params.emplace_back(name, m.store.at(name).tensor());
    return c;
}

void apply_checkpoint(const Checkpoint& c, Model& m) {
    const auto names = m.store.names_sorted();
    if (names.size() != c.params.size())
        throw checkpoint_mismatch("checkpoint has " + std::to_string(c.params.size()) +
                                  " tensors, model expects " + std::to_string(names.size()));
    for (const auto& [name, tensor] : c.params) {
        if (!m.store.contains(name))
            throw checkpoint_mismatch("checkpoint tensor not in model: " + name);
        auto& dst = m.store.at(name).tensor();
        if (dst.shape() != tensor.shape())
            throw checkpoint_mismatch("shape mismatch for " + name);
        dst = tensor;
    }
}

void save_checkpoint(const Checkpoint& c, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw io_error("cannot create checkpoint " + path);

    auto put_u16 = [&](std::uint16_t v) { f.write(reinterpret_cast<const char*>(&v), 2); };
    auto put_u32 = [&](std::uint32_t v) { f.write(reinterpret_cast<const char*>(&v), 4); };

    f.write("FSCK", 4);
    put_u16(static_cast<std::uint16_t>(c.version));
    f.put(static_cast<char>(c.stage));

    json meta{{"cfg", cfg_to_json(c.cfg)},
              {"rng_state", c.rng_state},
              {"rng_inc", c.rng_inc},
              {"step", c.step}};
    const std::string ms = meta.dump();
    put_u32(static_cast<std::uint32_t>(ms.size()));
    f.write(ms.data(), static_cast<std::streamsize>(ms.size()));

    put_u32(static_cast<std::uint32_t>(c.params.size()));
    for (const auto& [name, tensor] : c.params) {
        put_u32(static_cast<std::uint32_t>(name.size()));
        f.write(name.data(), static_cast<std::streamsize>(name.size()));
        put_u32(static_cast<std::uint32_t>(tensor.rank()));
        for (int d = 0; d < static_cast<int>(tensor.rank()); ++d)
            put_u32(static_cast<std::uint32_t>(tensor.dim(d)));
        f.write(reinterpret_cast<const char*>(tensor.data()),
                static_cast<std::streamsize>(tensor.numel() * sizeof(float)));
    }
    if (!f) throw io_error("short checkpoint write " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw io_error("cannot open checkpoint " + path);

    auto fail = [&](const std::string& why) -> io_error {
        return io_error("checkpoint " + path + ": " + why);
    };
    auto get_u16 = [&]() {
        std::uint16_t v = 0;
        f.read(reinterpret_cast<char*>(&v), 2);
        return v;
    };
    auto get_u32 = [&]() {
        std::uint32_t v = 0;
        f.read(reinterpret_cast<char*>(&v), 4);
        return v;
    };

    char magic[4];
    f.read(magic, 4);
    if (!f || std::memcmp(magic, "FSCK", 4) != 0)
        throw checkpoint_mismatch("not a checkpoint file: " + path);
    Checkpoint c;
    c.version = get_u16();
    if (c.version != 1)
        throw checkpoint_mismatch("unsupported checkpoint version " +
                                  std::to_string(c.version));
    c.stage = f.get();
    if (c.stage != 1 && c.stage != 2) throw checkpoint_mismatch("invalid stage field");

    const std::uint32_t mlen = get_u32();
    if (!f || mlen > (1u << 20)) throw fail("corrupt meta length");
    std::string ms(mlen, '\0');
    f.read(ms.data(), mlen);
    if (!f) throw fail("truncated meta");
    try {
        json meta = json::parse(ms);
        c.cfg = cfg_from_json(meta.at("cfg"));
        c.rng_state = meta.at("rng_state").get<std::uint64_t>();
        c.rng_inc = meta.at("rng_inc").get<std::uint64_t>();
        c.step = meta.at("step").get<std::int64_t>();
    } catch (const json::exception& e) {
        throw fail(std::string("malformed meta: ") + e.what());
    }

    const std::uint32_t count = get_u32();
    if (!f || count > (1u << 20)) throw fail("corrupt tensor count");
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::uint32_t nlen = get_u32();
        if (!f || nlen == 0 || nlen > 4096) throw fail("corrupt name length");
        std::string name(nlen, '\0');
        f.read(name.data(), nlen);
        const std::uint32_t ndim = get_u32();
        if (!f || ndim == 0 || ndim > 8) throw fail("corrupt tensor rank");
        std::vector<int> shape;
        for (std::uint32_t d = 0; d < ndim; ++d) {
            const std::uint32_t v = get_u32();
            if (!f || v == 0 || v > (1u << 24)) throw fail("corrupt dimension");
            shape.push_back(static_cast<int>(v));
        }
        Tensor t(shape);
        f.read(reinterpret_cast<char*>(t.data()),
               static_cast<std::streamsize>(t.numel() * sizeof(float)));
        if (!f) throw fail("truncated tensor data");
        c.params.emplace_back(std::move(name), std::move(t));
    }
    return c;
}

TrainResult train_stage1(const TrainConfig& cfg, const CorpusManifest& man) {
    cfg.validate();
    const ModelConfig mc = effective_model(cfg, man);
    Model m = build_model(mc, cfg.seed);
    PairLoader loader(man, "train", cfg.batch, cfg.seed, fixed_highpass(3, 3));
    Pcg32 rng(cfg.seed, 41);

    auto cfg_eff = cfg;
    cfg_eff.model = mc;
    return run_epochs(
        m, cfg_eff, loader, rng, 1,
        [&](const PairedBatch& b, std::int64_t step, int epoch, MetricsLog& log,
            const Checkpoint& last_good) {
            validate_labels(b.y, b.S, mc.methods);
            auto x0 = make_leaf(b.X0, false);
            auto x1 = make_leaf(b.X1, false);
            auto xh0 = make_leaf(b.Xh0, false);
            auto xh1 = make_leaf(b.Xh1, false);
            auto b0 = encoder1_forward(m, x0, xh0);
            auto b1 = encoder1_forward(m, x1, xh1);

            const int half = cfg.batch / 2;
            auto cls = ops::weighted_sum<float>(
                {cross_entropy(detector_forward(m.det1, b0.Fa),
                               std::vector<int>(static_cast<std::size_t>(half), 0)),
                 cross_entropy(detector_forward(m.det1, b1.Fa),
                               std::vector<int>(static_cast<std::size_t>(half), 1))},
                {0.5f, 0.5f});

            auto rec = recon_average<float>(
                {l1_loss(x0, decoder1_forward(m, b0.C, b0.Fa)),
                 l1_loss(x1, decoder1_forward(m, b1.C, b1.Fa)),
                 l1_loss(x0, decoder1_forward(m, b0.C, b1.Fa)),
                 l1_loss(x1, decoder1_forward(m, b1.C, b0.Fa))});

            auto total = total_stage1(cls, rec, cfg.weights);
            check_terms_finite({{"stage1.cls", scalar_of(cls)},
                                {"stage1.rec", scalar_of(rec)},
                                {"stage1.total", scalar_of(total)}},
                               last_good);
            backward(total);
            log.add(step, epoch, "stage1.cls", scalar_of(cls));
            log.add(step, epoch, "stage1.rec", scalar_of(rec));
            log.add(step, epoch, "stage1.total", scalar_of(total));
        });
}

TrainResult train_stage2(const TrainConfig& cfg, const CorpusManifest& man,
                         const Checkpoint& stage1) {
    cfg.validate();
    if (stage1.stage != 1)
        throw checkpoint_mismatch("stage-2 training requires a stage-1 checkpoint");
    const ModelConfig mc = effective_model(cfg, man);
    Model m = build_model(mc, cfg.seed);
    apply_checkpoint(stage1, m);
    transfer_stage1(m);
    PairLoader loader(man, "train", cfg.batch, cfg.seed, fixed_highpass(3, 3));
    Pcg32 rng(cfg.seed, 41);

    auto cfg_eff = cfg;
    cfg_eff.model = mc;
    return run_epochs(
        m, cfg_eff, loader, rng, 2,
        [&](const PairedBatch& b, std::int64_t step, int epoch, MetricsLog& log,
            const Checkpoint& last_good) {
            validate_labels(b.y, b.S, mc.methods);
            auto x0 = make_leaf(b.X0, false);
            auto x1 = make_leaf(b.X1, false);
            auto xh0 = make_leaf(b.Xh0, false);
            auto xh1 = make_leaf(b.Xh1, false);
            auto s0 = encoder2_forward(m, x0, xh0);
            auto s1 = encoder2_forward(m, x1, xh1);

            const int half = cfg.batch / 2;
            std::vector<int> s_fake(b.S.begin(), b.S.begin() + half);
            std::vector<int> zeros(static_cast<std::size_t>(half), 0);
            std::vector<int> ones(static_cast<std::size_t>(half), 1);

            auto cls_u = ops::weighted_sum<float>(
                {cross_entropy(detector_forward(m.det2, s0.Fu), s_fake),
                 cross_entropy(detector_forward(m.det2, s1.Fu), zeros)},
                {0.5f, 0.5f});
            auto cls_c = ops::weighted_sum<float>(
                {cross_entropy(detector_forward(m.det3, s0.Fc), zeros),
                 cross_entropy(detector_forward(m.det3, s1.Fc), ones)},
                {0.5f, 0.5f});

            auto pooled_u =
                ops::concat_rows(ops::global_avg_pool(s0.Fu), ops::global_avg_pool(s1.Fu));
            auto pooled_c =
                ops::concat_rows(ops::global_avg_pool(s0.Fc), ops::global_avg_pool(s1.Fc));
            auto tuples = sample_tuples(b.y, b.S, rng);
            auto con = contrastive_batch(pooled_u, pooled_c, tuples, cfg.weights.a);

            auto rec = recon_average<float>(
                {l1_loss(s0.Fa, decoder2_forward(m, s0.Fc, s0.Fu)),
                 l1_loss(s1.Fa, decoder2_forward(m, s1.Fc, s1.Fu)),
                 l1_loss(s0.Fa, decoder2_forward(m, s0.Fc, s1.Fu)),
                 l1_loss(s1.Fa, decoder2_forward(m, s1.Fc, s0.Fu))});

            auto total = total_stage2(cls_u, cls_c, con, rec, cfg.weights);
            check_terms_finite({{"stage2.cls_u", scalar_of(cls_u)},
                                {"stage2.cls_c", scalar_of(cls_c)},
                                {"stage2.con", scalar_of(con)},
                                {"stage2.rec", scalar_of(rec)},
                                {"stage2.total", scalar_of(total)}},
                               last_good);
            backward(total);
            log.add(step, epoch, "stage2.cls_u", scalar_of(cls_u));
            log.add(step, epoch, "stage2.cls_c", scalar_of(cls_c));
            log.add(step, epoch, "stage2.con", scalar_of(con));
            log.add(step, epoch, "stage2.rec", scalar_of(rec));
            log.add(step, epoch, "stage2.total", scalar_of(total));
        });
}

} // namespace forgesem
