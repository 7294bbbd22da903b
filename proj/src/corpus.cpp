#include "forgesem/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>

#include <nlohmann/json.hpp>

#include "forgesem/image_io.hpp"
#include "forgesem/kernels.hpp"
#include "forgesem/log.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace forgesem {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr float kSeamGain = 0.35f;
constexpr double kFeatherPx = 2.0; // half-width of the blend band in pixels

struct Ellipse {
    double cx, cy, rx, ry, r_eff;

    // signed distance from the boundary, approximately in pixels
    double dist_px(int x, int y) const {
        const double dx = (x - cx) / rx, dy = (y - cy) / ry;
        return (std::sqrt(dx * dx + dy * dy) - 1.0) * r_eff;
    }
};

Ellipse draw_ellipse(Pcg32& rng, int s) {
    Ellipse e;
    e.cx = rng.uniform(0.35, 0.65) * s;
    e.cy = rng.uniform(0.35, 0.65) * s;
    e.rx = rng.uniform(0.18, 0.30) * s;
    e.ry = rng.uniform(0.18, 0.30) * s;
    e.r_eff = std::min(e.rx, e.ry);
    return e;
}

// smooth field: shared luminance sinusoids plus a small per-channel tint
Tensor gen_base(Pcg32& rng, int s) {
    Tensor img({3, s, s});
    const int waves = 3 + static_cast<int>(rng.uniform_int(4)); // 3..6
    std::vector<double> fx(waves), fy(waves), ph(waves), amp(waves);
    for (int i = 0; i < waves; ++i) {
        do {
            fx[i] = static_cast<double>(rng.uniform_int(4));
            fy[i] = static_cast<double>(rng.uniform_int(4));
        } while (fx[i] == 0.0 && fy[i] == 0.0);
        ph[i] = rng.uniform(0.0, 2.0 * kPi);
        amp[i] = rng.uniform(0.04, 0.12);
    }
    double tint[3], tamp[3], tphx[3], tphy[3];
    for (int c = 0; c < 3; ++c) {
        tint[c] = rng.uniform(-0.08, 0.08);
        tamp[c] = rng.uniform(0.0, 0.05);
        tphx[c] = rng.uniform(0.0, 2.0 * kPi);
        tphy[c] = rng.uniform(1.0, 3.0);
    }
    for (int y = 0; y < s; ++y)
        for (int x = 0; x < s; ++x) {
            double lum = 0.5;
            for (int i = 0; i < waves; ++i)
                lum += amp[i] * std::sin(2.0 * kPi * (fx[i] * x + fy[i] * y) / s + ph[i]);
            for (int c = 0; c < 3; ++c) {
                double v = lum + tint[c] +
                           tamp[c] * std::sin(2.0 * kPi * tphy[c] * (x + y) / s + tphx[c]);
                img[(static_cast<std::size_t>(c) * s + y) * s + x] =
                    static_cast<float>(std::clamp(v, 0.02, 0.98));
            }
        }
    return img;
}

float blend_alpha(double dist_px) {
    return static_cast<float>(std::clamp(0.5 - dist_px / (2.0 * kFeatherPx), 0.0, 1.0));
}

// composites fg into bg over the feathered ellipse
Tensor composite(const Tensor& bg, const Tensor& fg, const Ellipse& e) {
    const int s = bg.dim(1);
    Tensor out = bg;
    for (int y = 0; y < s; ++y)
        for (int x = 0; x < s; ++x) {
            const float a = blend_alpha(e.dist_px(x, y));
            if (a <= 0.0f) continue;
            for (int c = 0; c < 3; ++c) {
                const std::size_t i = (static_cast<std::size_t>(c) * s + y) * s + x;
                out[i] = (1.0f - a) * bg[i] + a * fg[i];
            }
        }
    return out;
}

Tensor region_mask(const Ellipse& e, int s) {
    Tensor m({1, s, s});
    for (int y = 0; y < s; ++y)
        for (int x = 0; x < s; ++x)
            m[static_cast<std::size_t>(y) * s + x] =
                e.dist_px(x, y) <= kFeatherPx + 0.5 ? 1.0f : 0.0f;
    return m;
}

void add_seam(Tensor& img, const Ellipse& e) {
    const int s = img.dim(1);
    for (int y = 0; y < s; ++y)
        for (int x = 0; x < s; ++x) {
            const double d = std::fabs(e.dist_px(x, y));
            if (d >= kFeatherPx) continue;
            const float ridge = kSeamGain * static_cast<float>(1.0 - d / kFeatherPx);
            for (int c = 0; c < 3; ++c) {
                const std::size_t i = (static_cast<std::size_t>(c) * s + y) * s + x;
                img[i] = std::clamp(img[i] + ridge, 0.0f, 1.0f);
            }
        }
}

void artifact_noise(Tensor& img, const Ellipse& e) {
    const int s = img.dim(1);
    for (int y = 0; y < s; ++y)
        for (int x = 0; x < s; ++x) {
            const float a = blend_alpha(e.dist_px(x, y));
            if (a <= 0.0f) continue;
            const float p =
                0.15f * static_cast<float>(std::sin(2.0 * kPi * (x + y) / 4.0));
            for (int c = 0; c < 3; ++c) {
                const std::size_t i = (static_cast<std::size_t>(c) * s + y) * s + x;
                img[i] = std::clamp(img[i] + a * p, 0.0f, 1.0f);
            }
        }
}

void artifact_block(Tensor& img, const Ellipse& e) {
    const int s = img.dim(1);
    for (int by = 0; by < s; by += 8)
        for (int bx = 0; bx < s; bx += 8)
            for (int c = 0; c < 3; ++c) {
                double acc = 0.0;
                int count = 0;
                for (int y = by; y < std::min(by + 8, s); ++y)
                    for (int x = bx; x < std::min(bx + 8, s); ++x)
                        if (blend_alpha(e.dist_px(x, y)) > 0.5f) {
                            acc += img[(static_cast<std::size_t>(c) * s + y) * s + x];
                            ++count;
                        }
                if (count == 0) continue;
                const float avg = static_cast<float>(acc / count);
                for (int y = by; y < std::min(by + 8, s); ++y)
                    for (int x = bx; x < std::min(bx + 8, s); ++x)
                        if (blend_alpha(e.dist_px(x, y)) > 0.5f)
                            img[(static_cast<std::size_t>(c) * s + y) * s + x] = avg;
            }
}

void artifact_hue(Tensor& img, const Ellipse& e) {
    const int s = img.dim(1);
    const float gain[3] = {1.15f, 0.92f, 0.85f};
    for (int y = 0; y < s; ++y)
        for (int x = 0; x < s; ++x) {
            const float a = blend_alpha(e.dist_px(x, y));
            if (a <= 0.0f) continue;
            for (int c = 0; c < 3; ++c) {
                const std::size_t i = (static_cast<std::size_t>(c) * s + y) * s + x;
                img[i] = std::clamp(img[i] * (1.0f + a * (gain[c] - 1.0f)), 0.0f, 1.0f);
            }
        }
}

void shuffle_indices(std::vector<int>& idx, Pcg32& rng) {
    for (int i = static_cast<int>(idx.size()) - 1; i > 0; --i) {
        const int j = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(i) + 1));
        std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
    }
}

std::vector<std::string> assign_splits(int n, const CorpusSpec& spec, Pcg32& rng) {
    std::vector<int> idx(static_cast<std::size_t>(n));
    std::iota(idx.begin(), idx.end(), 0);
    shuffle_indices(idx, rng);
    const int n_val = static_cast<int>(spec.val_frac * n);
    const int n_test = static_cast<int>(spec.test_frac * n);
    std::vector<std::string> out(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        const auto slot = static_cast<std::size_t>(idx[static_cast<std::size_t>(i)]);
        out[slot] = i < n_val ? "val" : i < n_val + n_test ? "test" : "train";
    }
    return out;
}

json spec_to_json(const CorpusSpec& s) {
    return json{{"n_real", s.n_real},
                {"n_fake_per_method", s.n_fake_per_method},
                {"methods", s.methods},
                {"image_size", s.image_size},
                {"seed", s.seed},
                {"split",
                 {{"train", s.train_frac}, {"val", s.val_frac}, {"test", s.test_frac}}}};
}

CorpusSpec spec_from_json(const json& j) {
    CorpusSpec s;
    s.n_real = j.at("n_real").get<int>();
    s.n_fake_per_method = j.at("n_fake_per_method").get<int>();
    s.methods = j.at("methods").get<std::vector<std::string>>();
    s.image_size = j.at("image_size").get<int>();
    s.seed = j.at("seed").get<std::uint64_t>();
    s.train_frac = j.at("split").at("train").get<double>();
    s.val_frac = j.at("split").at("val").get<double>();
    s.test_frac = j.at("split").at("test").get<double>();
    return s;
}

} // namespace

const std::vector<std::string>& known_methods() {
    static const std::vector<std::string> m = {"splice_noise", "splice_block", "splice_hue"};
    return m;
}

void CorpusSpec::validate() const {
    FORGESEM_CHECK(n_real > 0 && n_fake_per_method > 0, "corpus: counts must be positive");
    FORGESEM_CHECK(n_real < 1000000 && n_fake_per_method < 1000000,
                   "corpus: counts out of range");
    FORGESEM_CHECK(image_size >= 8 && image_size % 4 == 0,
                   "corpus: image_size must be a multiple of 4, at least 8");
    FORGESEM_CHECK(!methods.empty(), "corpus: need at least one method");
    std::set<std::string> seen;
    for (const auto& m : methods) {
        FORGESEM_CHECK(std::find(known_methods().begin(), known_methods().end(), m) !=
                           known_methods().end(),
                       "corpus: unknown method " + m);
        FORGESEM_CHECK(seen.insert(m).second, "corpus: duplicate method " + m);
    }
    FORGESEM_CHECK(train_frac >= 0 && val_frac >= 0 && test_frac >= 0 &&
                       std::fabs(train_frac + val_frac + test_frac - 1.0) <= 1e-9,
                   "corpus: split fractions must sum to 1");
}

int CorpusManifest::method_label(const std::string& method) const {
    if (method == "none") return 0;
    for (std::size_t i = 0; i < spec.methods.size(); ++i)
        if (spec.methods[i] == method) return static_cast<int>(i) + 1;
    throw contract_error("method not in manifest spec: " + method);
}

GenImage gen_real_image(const CorpusSpec& spec, int index) {
    auto rng = Pcg32::derive(spec.seed, static_cast<std::uint64_t>(index));
    const int s = spec.image_size;
    GenImage g;
    Tensor bg = gen_base(rng, s);
    Tensor fg = gen_base(rng, s);
    Ellipse e = draw_ellipse(rng, s);
    g.image = composite(bg, fg, e);
    g.base = g.image;
    g.region = region_mask(e, s);
    return g;
}

GenImage gen_fake_image(const CorpusSpec& spec, int method_idx, int index) {
    FORGESEM_CHECK(method_idx >= 0 &&
                       method_idx < static_cast<int>(spec.methods.size()),
                   "corpus: method index out of range");
    auto rng = Pcg32::derive(spec.seed, 1000000ULL * (static_cast<std::uint64_t>(method_idx) + 1) +
                                            static_cast<std::uint64_t>(index));
    const int s = spec.image_size;
    GenImage g;
    Tensor bg = gen_base(rng, s);
    Tensor fg = gen_base(rng, s);
    Ellipse e = draw_ellipse(rng, s);
    g.base = composite(bg, fg, e);
    g.region = region_mask(e, s);

    Tensor donor = gen_base(rng, s);
    g.image = composite(bg, donor, e);
    add_seam(g.image, e); // the common artifact
    const std::string& m = spec.methods[static_cast<std::size_t>(method_idx)];
    if (m == "splice_noise")
        artifact_noise(g.image, e);
    else if (m == "splice_block")
        artifact_block(g.image, e);
    else
        artifact_hue(g.image, e);
    return g;
}

CorpusManifest gen_corpus(const CorpusSpec& spec, const std::string& out_dir) {
    spec.validate();
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec || !fs::is_directory(out_dir))
        throw io_error("cannot create corpus directory " + out_dir);

    CorpusManifest man;
    man.spec = spec;
    man.root = out_dir;

    char buf[128];
    Pcg32 split_rng(spec.seed, 933);
    auto real_splits = assign_splits(spec.n_real, spec, split_rng);
    for (int i = 0; i < spec.n_real; ++i) {
        std::snprintf(buf, sizeof(buf), "real_%04d.png", i);
        write_png(out_dir + "/" + buf, gen_real_image(spec, i).image);
        man.records.push_back({buf, 1, "none", real_splits[static_cast<std::size_t>(i)]});
    }
    for (std::size_t mi = 0; mi < spec.methods.size(); ++mi) {
        auto fake_splits = assign_splits(spec.n_fake_per_method, spec, split_rng);
        for (int i = 0; i < spec.n_fake_per_method; ++i) {
            std::snprintf(buf, sizeof(buf), "fake_%s_%04d.png",
                          spec.methods[mi].c_str(), i);
            write_png(out_dir + "/" + buf,
                      gen_fake_image(spec, static_cast<int>(mi), i).image);
            man.records.push_back(
                {buf, 0, spec.methods[mi], fake_splits[static_cast<std::size_t>(i)]});
        }
    }
    write_manifest(man, out_dir + "/manifest.json");
    log_info("generated " + std::to_string(man.records.size()) + " images in " + out_dir);
    return man;
}

void write_manifest(const CorpusManifest& m, const std::string& path) {
    json j;
    j["version"] = m.version;
    j["spec"] = spec_to_json(m.spec);
    j["records"] = json::array();
    for (const auto& r : m.records)
        j["records"].push_back(
            {{"path", r.path}, {"y", r.y}, {"method", r.method}, {"split", r.split}});
    std::ofstream f(path);
    if (!f) throw io_error("cannot write manifest " + path);
    f << j.dump(2) << "\n";
    if (!f) throw io_error("short manifest write " + path);
}

CorpusManifest read_manifest(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw io_error("cannot open manifest " + path);
    json j;
    try {
        f >> j;
        CorpusManifest m;
        m.version = j.at("version").get<int>();
        if (m.version != 1) throw io_error("unsupported manifest version");
        m.spec = spec_from_json(j.at("spec"));
        m.root = fs::path(path).parent_path().string();
        if (m.root.empty()) m.root = ".";
        for (const auto& rj : j.at("records")) {
            CorpusRecord r;
            r.path = rj.at("path").get<std::string>();
            r.y = rj.at("y").get<int>();
            r.method = rj.at("method").get<std::string>();
            r.split = rj.at("split").get<std::string>();
            FORGESEM_CHECK(r.y == 0 || r.y == 1, "manifest: y must be 0 or 1");
            FORGESEM_CHECK((r.y == 1) == (r.method == "none"),
                           "manifest: method label disagrees with y for " + r.path);
            FORGESEM_CHECK(r.split == "train" || r.split == "val" || r.split == "test",
                           "manifest: unknown split " + r.split);
            if (r.y == 0) (void)m.method_label(r.method);
            if (!fs::exists(fs::path(m.root) / r.path))
                throw io_error("manifest references missing file " + r.path);
            m.records.push_back(std::move(r));
        }
        return m;
    } catch (const json::exception& e) {
        throw io_error("malformed manifest " + path + ": " + e.what());
    }
}

ImportResult import_images(const std::string& dir, int image_size) {
    if (!fs::is_directory(dir)) throw io_error("not a directory: " + dir);
    ImportResult res;
    res.manifest.root = dir;
    std::set<std::string> methods;

    auto sorted_entries = [](const std::string& p) {
        std::vector<fs::path> v;
        for (const auto& e : fs::directory_iterator(p)) v.push_back(e.path());
        std::sort(v.begin(), v.end());
        return v;
    };

    for (const auto& label_dir : sorted_entries(dir)) {
        if (!fs::is_directory(label_dir)) continue;
        const std::string label = label_dir.filename().string();
        if (label != "real" && label != "fake") {
            log_warn("import: ignoring unknown label directory " + label);
            continue;
        }
        for (const auto& method_dir : sorted_entries(label_dir.string())) {
            if (!fs::is_directory(method_dir)) continue;
            const std::string method = method_dir.filename().string();
            for (const auto& file : sorted_entries(method_dir.string())) {
                if (!fs::is_regular_file(file)) continue;
                try {
                    (void)read_image(file.string());
                } catch (const std::exception& e) {
                    ++res.skipped;
                    log_warn(std::string("import: skipping ") + file.string() + ": " +
                             e.what());
                    continue;
                }
                CorpusRecord r;
                r.path = fs::relative(file, dir).string();
                r.y = label == "real" ? 1 : 0;
                r.method = label == "real" ? "none" : method;
                r.split = "train";
                if (r.y == 0) methods.insert(method);
                res.manifest.records.push_back(std::move(r));
            }
        }
    }
    if (res.manifest.records.empty()) throw io_error("no usable images under " + dir);

    auto& spec = res.manifest.spec;
    spec.image_size = image_size;
    spec.methods.assign(methods.begin(), methods.end());
    spec.n_real = 0;
    int fakes = 0;
    for (const auto& r : res.manifest.records) r.y == 1 ? ++spec.n_real : ++fakes;
    spec.n_fake_per_method =
        methods.empty() ? 0 : fakes / static_cast<int>(methods.size());
    return res;
}

Tensor highpass_batch(const Tensor& x, const AhfKernel& k) {
    FORGESEM_CHECK(x.rank() == 4 && x.dim(1) == k.channels,
                   "highpass: batch channels must match the kernel");
    kern::Conv2dDims d;
    d.n = x.dim(0);
    d.cin = x.dim(1);
    d.h = x.dim(2);
    d.w = x.dim(3);
    d.cout = k.channels;
    d.k = k.k;
    d.stride = 1;
    d.pad = k.k / 2;
    d.groups = k.channels;
    d.validate();
    Tensor out({d.n, d.cout, d.out_h(), d.out_w()});
    kern::conv2d_forward<float>(out.data(), x.data(), k.weights.data(), nullptr, d);
    return out;
}

PairLoader::PairLoader(const CorpusManifest& man, std::string split, int batch_size,
                       std::uint64_t seed, AhfKernel ahf)
    : rng_(seed, 17), ahf_(std::move(ahf)) {
    FORGESEM_CHECK(batch_size >= 2 && batch_size % 2 == 0,
                   "loader: batch size must be even and positive");
    half_ = batch_size / 2;
    size_ = man.spec.image_size;
    for (const auto& r : man.records) {
        if (r.split != split) continue;
        Tensor img = read_image(man.root + "/" + r.path);
        if (img.dim(1) != size_ || img.dim(2) != size_)
            img = resize_bilinear_image(img, size_, size_);
        for (std::size_t i = 0; i < img.numel(); ++i)
            img[i] = std::clamp(img[i], 0.0f, 1.0f);
        if (r.y == 1) {
            real_imgs_.push_back(std::move(img));
        } else {
            fake_imgs_.push_back(std::move(img));
            fake_labels_.push_back(man.method_label(r.method));
        }
    }
    FORGESEM_CHECK(!real_imgs_.empty() && !fake_imgs_.empty(),
                   "loader: split '" + split + "' needs images of both classes");
    FORGESEM_CHECK(static_cast<int>(std::min(real_imgs_.size(), fake_imgs_.size())) >= half_,
                   "loader: split smaller than half a batch");
    start_epoch();
}

int PairLoader::steps_per_epoch() const {
    return static_cast<int>(std::min(real_order_.size(), fake_order_.size())) / half_;
}

void PairLoader::start_epoch() {
    real_order_.resize(real_imgs_.size());
    fake_order_.resize(fake_imgs_.size());
    std::iota(real_order_.begin(), real_order_.end(), 0);
    std::iota(fake_order_.begin(), fake_order_.end(), 0);
    shuffle_indices(real_order_, rng_);
    shuffle_indices(fake_order_, rng_);
    pos_ = 0;
}

std::optional<PairedBatch> PairLoader::next() {
    const std::size_t limit = std::min(real_order_.size(), fake_order_.size());
    if (pos_ + static_cast<std::size_t>(half_) > limit) {
        ++epoch_;
        start_epoch();
        return std::nullopt;
    }
    PairedBatch b;
    b.X0 = Tensor({half_, 3, size_, size_});
    b.X1 = Tensor({half_, 3, size_, size_});
    const std::size_t plane = static_cast<std::size_t>(3) * size_ * size_;
    for (int i = 0; i < half_; ++i) {
        const int fi = fake_order_[pos_ + static_cast<std::size_t>(i)];
        const int ri = real_order_[pos_ + static_cast<std::size_t>(i)];
        std::copy_n(fake_imgs_[static_cast<std::size_t>(fi)].data(), plane,
                    b.X0.data() + static_cast<std::size_t>(i) * plane);
        std::copy_n(real_imgs_[static_cast<std::size_t>(ri)].data(), plane,
                    b.X1.data() + static_cast<std::size_t>(i) * plane);
        b.y.push_back(0);
        b.S.push_back(fake_labels_[static_cast<std::size_t>(fi)]);
    }
    for (int i = 0; i < half_; ++i) {
        b.y.push_back(1);
        b.S.push_back(0);
    }
    b.Xh0 = highpass_batch(b.X0, ahf_);
    b.Xh1 = highpass_batch(b.X1, ahf_);
    pos_ += static_cast<std::size_t>(half_);
    return b;
}

} // namespace forgesem
