#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "forgesem/train.hpp"

namespace forgesem {

// The requested statistic has no defined value for these inputs (e.g. AUC
// over a single class).
class undefined_metric : public std::runtime_error {
public:
    explicit undefined_metric(const std::string& msg) : std::runtime_error(msg) {}
};

// Mann-Whitney AUC: fraction of (positive, negative) pairs where the
// positive scores higher, ties worth half. Computed from doubled integer
// rank sums so it matches pair counting exactly. labels: nonzero = positive.
double auc(const std::vector<double>& scores, const std::vector<int>& labels);

struct AucRow {
    std::string detector; // "fc" (stage-2 inference path) or "fa" (stage-1)
    std::string method;
    std::string split; // "test" for intra-domain, "held_out" otherwise
    double value = 0.0;

    bool operator==(const AucRow&) const = default;
};

struct EvalReport {
    std::uint64_t seed = 0;
    std::string stage1_hash;
    std::string stage2_hash;
    std::vector<AucRow> rows;

    bool operator==(const EvalReport&) const = default;
    double value_of(const std::string& detector, const std::string& method,
                    const std::string& split) const;
};

// Fake-class softmax probabilities for every manifest record, from the
// stage-2 Fc detector and the stage-1 Fa detector.
struct ScoreTable {
    std::vector<double> fc;
    std::vector<double> fa;
    std::vector<int> is_fake;
    std::vector<std::string> method;
    std::vector<std::string> split;
};

ScoreTable score_manifest(Model& m, const CorpusManifest& man);

// Rebuilds the model a stage-2 checkpoint was saved from.
Model restore_stage2(const Checkpoint& stage2);

// Intra-domain AUC per training method on the test split plus one
// held-out AUC over the second manifest, for both detectors.
EvalReport run_protocol(const Checkpoint& stage1, const Checkpoint& stage2,
                        const CorpusManifest& train_man, const CorpusManifest& held_man);

inline constexpr const char* kGradCamDefaultLayer = "enc2.fc";

// Gradient-weighted activation map for one 3xHxW image against a Detector3
// class logit. Valid layers: "enc2.fc", "enc2.fa". Returns SxS in [0,1].
Tensor grad_cam(Model& m, const Tensor& image, int target_class,
                const std::string& layer = kGradCamDefaultLayer);
Tensor grad_cam(const Checkpoint& stage2, const Tensor& image, int target_class,
                const std::string& layer = kGradCamDefaultLayer);

struct ReportFormats {
    bool csv = true;
    bool json = true;
    bool svg = true;
};

// Writes report.csv / report.json / auc_<detector>.svg into out_dir.
void emit_report(const EvalReport& report, const std::string& out_dir,
                 ReportFormats formats = {});
EvalReport load_report(const std::string& json_path);

} // namespace forgesem
