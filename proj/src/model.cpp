#include "forgesem/model.hpp"

#include "forgesem/log.hpp"

namespace forgesem {

namespace {

constexpr int kAttnEmbed = 16;
constexpr int kPagEmbed = 8;
constexpr int kDecChannels = 32;
constexpr int kUpChannels = 16;

// resamples v from spatial size cur to target (both powers of two apart)
Value to_res(Value v, int cur, int target) {
    while (cur > target) {
        v = ops::avg_pool2x2(v);
        cur /= 2;
    }
    if (cur < target) v = ops::upsample_nearest(v, target / cur);
    return v;
}

ForgeryBranch build_forgery_branch(ParamStore& ps, Pcg32& rng, const ModelConfig& cfg,
                                   const std::string& prefix,
                                   std::vector<std::string>& ahf_names) {
    const int f = cfg.forgery_channels;
    const int hc = f / 2;
    ForgeryBranch b;
    b.use_highfreq = cfg.use_highfreq;
    b.use_mhfe = cfg.use_mhfe;
    b.use_mhff = cfg.use_mhff;
    b.levels = cfg.mhfe_levels;
    b.rgb1 = nn::make_sepconv(ps, rng, prefix + ".rgb1", 3, f, 2);
    b.rgb2 = nn::make_sepconv(ps, rng, prefix + ".rgb2", f, f, 2);
    if (!cfg.use_highfreq) return b;

    if (cfg.use_mhfe) {
        for (int l = 0; l < cfg.mhfe_levels; ++l) {
            const std::string kname = prefix + ".ahf" + std::to_string(l);
            Tensor w = ahf_init_tensor<float>(3, cfg.ahf_sigma, 3);
            ahf_project_tensor(w);
            b.ahf.push_back(ps.add(kname, std::move(w)).node);
            ahf_names.push_back(kname);
            MhfeMixer mix;
            const std::string mname = prefix + ".mix" + std::to_string(l);
            mix.weight = ps.add(mname + ".w", nn::uniform_init(rng, {hc, 3, 3, 3}, 27)).node;
            mix.bias = ps.add(mname + ".b", Tensor::zeros({hc})).node;
            b.mixers.push_back(mix);
        }
    } else {
        b.hf1 = nn::make_conv(ps, rng, prefix + ".hf1", 3, hc, 3, 2, 1);
        b.hf2 = nn::make_conv(ps, rng, prefix + ".hf2", hc, hc, 3, 2, 1);
    }
    b.align1 = nn::make_conv(ps, rng, prefix + ".align1", hc, f, 1, 1, 0);
    b.align2 = nn::make_conv(ps, rng, prefix + ".align2", hc, f, 1, 1, 0);
    if (cfg.use_mhff) {
        b.fuse1 = nn::make_pag(ps, rng, prefix + ".fuse1", f, kPagEmbed);
        b.fuse2 = nn::make_pag(ps, rng, prefix + ".fuse2", f, kPagEmbed);
    }
    return b;
}

Detector make_detector(ParamStore& ps, Pcg32& rng, const std::string& name, int id,
                       int channels, int class_count) {
    Detector d;
    d.id = id;
    d.class_count = class_count;
    d.fc = nn::make_linear(ps, rng, name, channels, class_count);
    return d;
}

} // namespace

void ModelConfig::validate() const {
    FORGESEM_CHECK(image_size >= 8 && image_size % 4 == 0,
                   "config: image_size must be a multiple of 4, at least 8");
    FORGESEM_CHECK(content_channels >= 1, "config: content_channels must be positive");
    FORGESEM_CHECK(forgery_channels >= 2 && forgery_channels % 2 == 0,
                   "config: forgery_channels must be even and at least 2");
    FORGESEM_CHECK(mhfe_levels >= 1, "config: mhfe_levels must be at least 1");
    FORGESEM_CHECK(image_size % (1 << mhfe_levels) == 0,
                   "config: image_size must be divisible by 2^mhfe_levels");
    FORGESEM_CHECK(methods >= 1, "config: methods must be positive");
    FORGESEM_CHECK(ahf_sigma > 0.0f, "config: ahf_sigma must be positive");
}

Value ForgeryBranch::forward(const Value& x, const Value& xh) const {
    auto s1 = rgb1(x);
    auto s2_in = s1;
    if (!use_highfreq) return rgb2(s1);

    const int s = x->value.dim(2);
    Value c1, c2;
    if (use_mhfe) {
        auto pyr = mhfe_forward(xh, levels, ahf, mixers);
        c1 = to_res(pyr.levels[0], s, s / 2);
        for (int l = 1; l < levels; ++l) {
            auto part = to_res(pyr.levels[static_cast<std::size_t>(l)], s >> l, s / 4);
            c2 = c2 ? ops::add(c2, part) : part;
        }
        if (!c2) c2 = to_res(pyr.levels[0], s, s / 4);
        // rectify like the plain high-pass path below: pooled responses
        // must reflect local high-frequency energy, which a signed linear
        // map averages away
        c1 = ops::relu(c1);
        c2 = ops::relu(c2);
    } else {
        c1 = ops::relu(hf1(xh));
        c2 = ops::relu(hf2(c1));
    }

    auto f1 = align1(c1);
    s2_in = use_mhff ? fuse1(s1, f1) : ops::add(s1, f1);
    auto s2 = rgb2(s2_in);
    auto f2 = align2(c2);
    return use_mhff ? fuse2(s2, f2) : ops::add(s2, f2);
}

Model build_model(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Model m;
    m.cfg = cfg;
    Pcg32 rng(seed, 7);
    const int cc = cfg.content_channels;
    const int f = cfg.forgery_channels;

    m.input_hp = make_leaf(fixed_highpass(3, 3).weights, false);

    m.enc1.stem = nn::make_conv(m.store, rng, "enc1.ct.stem", 3, cc, 3, 2, 1);
    m.enc1.stem_gn = nn::make_group_norm(m.store, "enc1.ct.gn", cc, nn::norm_groups(cc));
    m.enc1.down = nn::make_sepconv(m.store, rng, "enc1.ct.down", cc, cc, 2);
    m.enc1.attn = nn::make_attn(m.store, rng, "enc1.ct.attn", cc, kAttnEmbed);
    m.enc1.fb = build_forgery_branch(m.store, rng, cfg, "enc1.fb", m.ahf_names);

    const int dc = kDecChannels;
    m.dec1.c_in = nn::make_conv(m.store, rng, "dec1.c_in", cc, dc, 3, 1, 1);
    m.dec1.c_gn = nn::make_group_norm(m.store, "dec1.c_gn", dc, nn::norm_groups(dc));
    m.dec1.attn = nn::make_attn(m.store, rng, "dec1.attn", dc, kAttnEmbed);
    m.dec1.f_in = nn::make_conv(m.store, rng, "dec1.f_in", f, dc, 3, 1, 1);
    m.dec1.f_gn = nn::make_group_norm(m.store, "dec1.f_gn", dc, nn::norm_groups(dc));
    m.dec1.proj_c = nn::make_conv(m.store, rng, "dec1.proj_c", dc, dc, 1, 1, 0);
    m.dec1.proj_f = nn::make_conv(m.store, rng, "dec1.proj_f", dc, dc, 1, 1, 0);
    m.dec1.up1 = nn::make_conv(m.store, rng, "dec1.up1", dc, kUpChannels, 3, 1, 1);
    m.dec1.up1_gn =
        nn::make_group_norm(m.store, "dec1.up1_gn", kUpChannels, nn::norm_groups(kUpChannels));
    m.dec1.up2 = nn::make_conv(m.store, rng, "dec1.up2", kUpChannels, kUpChannels, 3, 1, 1);
    m.dec1.up2_gn =
        nn::make_group_norm(m.store, "dec1.up2_gn", kUpChannels, nn::norm_groups(kUpChannels));
    m.dec1.out = nn::make_conv(m.store, rng, "dec1.out", kUpChannels, 3, 3, 1, 1);

    m.det1 = make_detector(m.store, rng, "det1", 1, f, 2);

    m.enc2.fb = build_forgery_branch(m.store, rng, cfg, "enc2.fb", m.ahf_names);
    m.enc2.u1 = nn::make_conv(m.store, rng, "enc2.dis_u1", f, f, 3, 1, 1);
    m.enc2.u_gn = nn::make_group_norm(m.store, "enc2.dis_u_gn", f, nn::norm_groups(f));
    m.enc2.u2 = nn::make_conv(m.store, rng, "enc2.dis_u2", f, f / 2, 3, 1, 1);
    m.enc2.c1 = nn::make_conv(m.store, rng, "enc2.dis_c1", f, f, 3, 1, 1);
    m.enc2.c_gn = nn::make_group_norm(m.store, "enc2.dis_c_gn", f, nn::norm_groups(f));
    m.enc2.c2 = nn::make_conv(m.store, rng, "enc2.dis_c2", f, f / 2, 3, 1, 1);

    m.dec2.in_c = nn::make_conv(m.store, rng, "dec2.in_c", f / 2, f / 2, 3, 1, 1);
    m.dec2.in_u = nn::make_conv(m.store, rng, "dec2.in_u", f / 2, f / 2, 3, 1, 1);
    m.dec2.mid = nn::make_conv(m.store, rng, "dec2.mid", f, f, 3, 1, 1);
    m.dec2.out = nn::make_conv(m.store, rng, "dec2.out", f, f, 3, 1, 1);

    m.det2 = make_detector(m.store, rng, "det2", 2, f / 2, cfg.methods + 1);
    m.det3 = make_detector(m.store, rng, "det3", 3, f / 2, 2);
    return m;
}

Value highfreq_input(const Model& m, const Value& x) {
    return ahf_apply(m.input_hp, x);
}

SemanticBundle1 encoder1_forward(Model& m, const Value& x, const Value& xh) {
    const auto& s = x->value.shape();
    FORGESEM_CHECK(s.size() == 4 && s[1] == 3 && s[2] == m.cfg.image_size &&
                       s[3] == m.cfg.image_size,
                   "encoder1: input must be Nx3xSxS at the configured size");
    FORGESEM_CHECK(xh->value.shape() == s, "encoder1: Xh must match X");
    SemanticBundle1 out;
    auto h = ops::relu(m.enc1.stem_gn(m.enc1.stem(x)));
    out.C = m.enc1.attn(m.enc1.down(h));
    out.Fa = m.enc1.fb.forward(x, xh);
    return out;
}

Value decoder1_forward(Model& m, const Value& c, const Value& fa) {
    auto hc = m.dec1.attn(ops::relu(m.dec1.c_gn(m.dec1.c_in(c))));
    auto hf = ops::relu(m.dec1.f_gn(m.dec1.f_in(fa)));
    auto h = ops::add(m.dec1.proj_c(hc), m.dec1.proj_f(hf));
    h = ops::upsample_bilinear(h, 2);
    h = ops::relu(m.dec1.up1_gn(m.dec1.up1(h)));
    h = ops::upsample_bilinear(h, 2);
    h = ops::relu(m.dec1.up2_gn(m.dec1.up2(h)));
    return m.dec1.out(h);
}

SemanticBundle2 encoder2_forward(Model& m, const Value& x, const Value& xh) {
    FORGESEM_CHECK(m.enc2.loaded,
                   "encoder2: stage-1 weights have not been transferred");
    SemanticBundle2 out;
    out.Fa = m.enc2.fb.forward(x, xh);
    auto hu = ops::relu(m.enc2.u_gn(m.enc2.u1(out.Fa)));
    out.Fu = m.enc2.u2(hu);
    auto hcm = ops::relu(m.enc2.c_gn(m.enc2.c1(out.Fa)));
    out.Fc = m.enc2.c2(hcm);
    return out;
}

Value decoder2_forward(Model& m, const Value& fc, const Value& fu) {
    const int half = m.cfg.forgery_channels / 2;
    FORGESEM_CHECK(fc->value.dim(1) == half && fu->value.dim(1) == half,
                   "decoder2: both inputs need F/2 channels");
    auto a = ops::relu(m.dec2.in_c(fc));
    auto b = ops::relu(m.dec2.in_u(fu));
    auto h = ops::relu(m.dec2.mid(ops::concat_channels(a, b)));
    return m.dec2.out(h);
}

Value detector_forward(const Detector& d, const Value& features) {
    return d.fc(ops::global_avg_pool(features));
}

void transfer_stage1(Model& m) {
    const std::string src = "enc1.fb.";
    const std::string dst = "enc2.fb.";
    int copied = 0;
    for (const auto& name : m.store.names_sorted()) {
        if (name.rfind(src, 0) != 0) continue;
        auto& to = m.store.at(dst + name.substr(src.size()));
        to.tensor() = m.store.at(name).tensor();
        ++copied;
    }
    FORGESEM_CHECK(copied > 0, "transfer: no forgery-branch weights found");
    m.enc2.loaded = true;
    if (m.cfg.freeze_embedded) m.store.set_trainable(dst, false);
    log_info("transferred " + std::to_string(copied) + " tensors into encoder2");
}

void project_ahf(Model& m) {
    for (const auto& name : m.ahf_names) ahf_project_tensor(m.store.at(name).tensor());
}

} // namespace forgesem
