#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "forgesem/ahf.hpp"
#include "forgesem/nn.hpp"

namespace forgesem {

struct ModelConfig {
    int image_size = 32;
    int content_channels = 32;
    int forgery_channels = 32; // even, split into common/unique halves
    int mhfe_levels = 2;
    int methods = 2; // M; the method head discriminates M+1 classes
    float ahf_sigma = 1.0f;
    bool use_highfreq = true;
    bool use_mhfe = true;
    bool use_mhff = true;
    bool freeze_embedded = true;

    void validate() const;
};

struct SemanticBundle1 {
    Value C;
    Value Fa;
};

// Fa is the embedded branch's output, the reconstruction target downstream.
struct SemanticBundle2 {
    Value Fu;
    Value Fc;
    Value Fa;
};

// Forgery feature extractor. Encoder1 owns one; encoder2 embeds a second
// copy with the same layout so stage-1 weights transfer name-for-name.
struct ForgeryBranch {
    bool use_highfreq = true;
    bool use_mhfe = true;
    bool use_mhff = true;
    int levels = 1;

    nn::SepConv rgb1, rgb2;
    std::vector<Value> ahf; // learned high-pass taps, one per pyramid level
    std::vector<MhfeMixer> mixers;
    nn::Conv2d hf1, hf2; // plain stand-ins when the pyramid is disabled
    nn::Conv2d align1, align2;
    nn::PagFuse fuse1, fuse2;

    Value forward(const Value& x, const Value& xh) const;
};

struct Encoder1 {
    nn::Conv2d stem;
    nn::GroupNorm stem_gn;
    nn::SepConv down;
    nn::AttnBlock attn;
    ForgeryBranch fb;
};

struct Decoder1 {
    nn::Conv2d c_in;
    nn::GroupNorm c_gn;
    nn::AttnBlock attn;
    nn::Conv2d f_in;
    nn::GroupNorm f_gn;
    nn::Conv2d proj_c, proj_f;
    nn::Conv2d up1;
    nn::GroupNorm up1_gn;
    nn::Conv2d up2;
    nn::GroupNorm up2_gn;
    nn::Conv2d out;
};

struct Encoder2 {
    ForgeryBranch fb;
    nn::Conv2d u1, u2; // unique-semantics disentangler
    nn::GroupNorm u_gn;
    nn::Conv2d c1, c2; // common-semantics disentangler
    nn::GroupNorm c_gn;
    bool loaded = false; // set by transfer_stage1
};

// conv-only dual channels merged mid-network by concatenation
struct Decoder2 {
    nn::Conv2d in_c, in_u, mid, out;
};

struct Detector {
    int id = 1;
    int class_count = 2;
    nn::Linear fc;
};

struct Model {
    ModelConfig cfg;
    ParamStore store;
    Value input_hp; // fixed projected high-pass for the raw-image stream
    Encoder1 enc1;
    Decoder1 dec1;
    Detector det1;
    Encoder2 enc2;
    Decoder2 dec2;
    Detector det2;
    Detector det3;
    std::vector<std::string> ahf_names; // kernels re-projected every step
};

Model build_model(const ModelConfig& cfg, std::uint64_t seed);

// 3x3 zero-sum high-pass of the input image, the Xh stream
Value highfreq_input(const Model& m, const Value& x);

SemanticBundle1 encoder1_forward(Model& m, const Value& x, const Value& xh);
Value decoder1_forward(Model& m, const Value& c, const Value& fa);
SemanticBundle2 encoder2_forward(Model& m, const Value& x, const Value& xh);
Value decoder2_forward(Model& m, const Value& fc, const Value& fu);
Value detector_forward(const Detector& d, const Value& features);

// copies encoder1's forgery branch into encoder2's embedded copy and
// freezes it when the config says so
void transfer_stage1(Model& m);

// re-projects every learned high-pass kernel onto the zero-sum constraint
void project_ahf(Model& m);

} // namespace forgesem
