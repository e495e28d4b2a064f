#pragma once

#include <string>
#include <vector>

#include "msscanet/dataset.hpp"
#include "msscanet/losses.hpp"
#include "msscanet/metrics.hpp"
#include "msscanet/model.hpp"

namespace msscanet {

// Paper-scale defaults are lr0 1e-4, batch 16, 600 epochs; desk-scale runs
// shrink the epoch count.
struct TrainSchedule {
    double lr0 = 1e-4;
    double lr_min = 0.0;
    int64_t epochs = 60;
    int64_t batch_size = 16;
    uint64_t seed = 0;
    LossWeights weights;
};

// lr_min + 0.5 (lr0 - lr_min)(1 + cos(pi t / T)); non-increasing on [0, T].
double cosine_lr(int64_t t, int64_t t_total, double lr0, double lr_min);

struct EpochLog {
    int64_t epoch = 0;
    double loss = 0.0;
    double l1 = 0.0;
    double cb = 0.0;
    double ap = 0.0;
    double lr = 0.0;
};

struct TrainResult {
    std::vector<EpochLog> log;
};

// Plain gradient descent over the manifest's train split with a per-epoch
// cosine learning rate: shuffle (seeded), batch, forward, composite loss,
// backward, update, zero gradients. MOS targets are normalized to [0,1].
// Deterministic given (seed, config, manifest). Non-finite losses abort with
// the offending epoch/batch.
TrainResult train(Model& model, const DatasetManifest& manifest, const TrainSchedule& schedule);

// Scores every image of the split, denormalizes predictions against the
// manifest scale and computes PLCC/SROCC plus the least-squares fit of
// actual against predicted. Predictions are keyed and sorted by path so the
// report is independent of scoring order. Constant predictions flag
// correlation_defined = false instead of throwing.
EvalReport evaluate(const Model& model, const DatasetManifest& manifest, const std::string& split);

void write_scatter_csv(const EvalReport& report, const std::string& path);

struct CrossValPair {
    std::string train_manifest;
    std::string test_manifest;
};

struct CrossValCell {
    std::string train_tag;
    std::string test_tag;
    std::vector<double> srocc_per_fold;  // one value per fold
    std::vector<double> plcc_per_fold;
    // five-number summary of the SROCC distribution
    double min = 0.0, q1 = 0.0, median = 0.0, q3 = 0.0, max = 0.0;
};

// For each manifest pair: 5 seeded folds of the train split; each run trains
// on the other 4/5 and evaluates on the full foreign test split. Throws
// DataError when any image path appears in both manifests (leakage guard).
std::vector<CrossValCell> cross_dataset(const std::vector<CrossValPair>& pairs,
                                        const ModelConfig& config, const TrainSchedule& schedule,
                                        int64_t folds = 5);

std::string render_crossval_csv(const std::vector<CrossValCell>& cells);

}  // namespace msscanet
