#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "forgesem/corpus.hpp"
#include "forgesem/losses.hpp"
#include "forgesem/model.hpp"

namespace forgesem {

struct TrainConfig {
    float lr = 5e-4f;
    int batch = 16;
    int epochs = 10; // desk default; the reference setting of 20 is configurable
    LossWeights weights;
    float sigma = 1.0f; // high-pass init width
    std::uint64_t seed = 1;
    ModelConfig model;
    bool freeze_embedded = true;

    void validate() const;
};

struct Checkpoint {
    int version = 1;
    int stage = 1;
    TrainConfig cfg;
    std::uint64_t rng_state = 0;
    std::uint64_t rng_inc = 0;
    std::int64_t step = 0;
    std::vector<std::pair<std::string, Tensor>> params; // name-sorted
};

struct MetricRow {
    std::int64_t step;
    int epoch;
    std::string term;
    double value;
};

struct MetricsLog {
    std::vector<MetricRow> rows;

    void add(std::int64_t step, int epoch, const std::string& term, double value);
    void write_csv(const std::string& path) const;
    double epoch_mean(int epoch, const std::string& term) const;
};

struct TrainResult {
    Checkpoint checkpoint;
    MetricsLog metrics;
};

// Raised when a step produces a non-finite loss; carries the state from
// the last completed step so the caller can persist it.
class train_abort : public numeric_error {
public:
    train_abort(const std::string& msg, Checkpoint last)
        : numeric_error(msg), last_good(std::move(last)) {}

    Checkpoint last_good;
};

Checkpoint snapshot_model(const Model& m, const TrainConfig& cfg, int stage,
                          std::int64_t step, const Pcg32& rng);
void apply_checkpoint(const Checkpoint& c, Model& m);

void save_checkpoint(const Checkpoint& c, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

TrainResult train_stage1(const TrainConfig& cfg, const CorpusManifest& man);
TrainResult train_stage2(const TrainConfig& cfg, const CorpusManifest& man,
                         const Checkpoint& stage1);

} // namespace forgesem
