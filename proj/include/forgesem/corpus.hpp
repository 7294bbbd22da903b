#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "forgesem/ahf.hpp"
#include "forgesem/rng.hpp"
#include "forgesem/tensor.hpp"

namespace forgesem {

const std::vector<std::string>& known_methods(); // splice_noise, splice_block, splice_hue

struct CorpusSpec {
    int n_real = 300;
    int n_fake_per_method = 150;
    std::vector<std::string> methods = known_methods();
    int image_size = 32;
    std::uint64_t seed = 1;
    double train_frac = 0.7;
    double val_frac = 0.15;
    double test_frac = 0.15;

    void validate() const;
};

struct CorpusRecord {
    std::string path; // relative to the manifest directory
    int y = 1;        // 1 real, 0 fake
    std::string method = "none";
    std::string split = "train";
};

struct CorpusManifest {
    int version = 1;
    CorpusSpec spec;
    std::vector<CorpusRecord> records;
    std::string root; // directory the record paths resolve against

    // none -> 0, otherwise 1-based position in spec.methods
    int method_label(const std::string& method) const;
};

// One generated sample with the unforged image it started from and the
// mask of pixels the splice was allowed to touch.
struct GenImage {
    Tensor image;  // 3xSxS in [0,1]
    Tensor base;   // the underlying real image
    Tensor region; // 1xSxS indicator of the dilated splice region
};

GenImage gen_real_image(const CorpusSpec& spec, int index);
GenImage gen_fake_image(const CorpusSpec& spec, int method_idx, int index);

CorpusManifest gen_corpus(const CorpusSpec& spec, const std::string& out_dir);

void write_manifest(const CorpusManifest& m, const std::string& path);
CorpusManifest read_manifest(const std::string& path);

struct ImportResult {
    CorpusManifest manifest;
    int skipped = 0;
};

// layout: <label>/<method>/*.png with label "real" or "fake"
ImportResult import_images(const std::string& dir, int image_size = 32);

struct PairedBatch {
    Tensor X0, X1;   // fakes / reals, each (B/2)x3xSxS
    Tensor Xh0, Xh1; // matching high-frequency streams
    std::vector<int> y, S; // combined labels, fakes first then reals
};

// depthwise high-pass convolution of an NxCxHxW batch, no autograd
Tensor highpass_batch(const Tensor& x, const AhfKernel& k);

// Draws disjoint real/fake pairs per epoch in a seeded shuffle order.
// next() returns nullopt exactly once when the epoch is exhausted and the
// following call starts the next epoch.
class PairLoader {
public:
    PairLoader(const CorpusManifest& man, std::string split, int batch_size,
               std::uint64_t seed, AhfKernel ahf);

    std::optional<PairedBatch> next();
    int epoch() const { return epoch_; }
    int steps_per_epoch() const;
    int image_size() const { return size_; }

private:
    void start_epoch();

    int half_ = 0;
    int size_ = 0;
    int epoch_ = 0;
    std::size_t pos_ = 0;
    Pcg32 rng_;
    AhfKernel ahf_;
    std::vector<Tensor> real_imgs_, fake_imgs_;
    std::vector<int> fake_labels_;
    std::vector<int> real_order_, fake_order_;
};

} // namespace forgesem
