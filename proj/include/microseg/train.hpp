#pragma once

#include <filesystem>

#include "microseg/augment.hpp"
#include "microseg/loss.hpp"
#include "microseg/manifest.hpp"
#include "microseg/metrics.hpp"
#include "microseg/model.hpp"
#include "microseg/optimizer.hpp"

namespace microseg {

// Two-phase schedule: classifier-only warmup, then full fine-tune.
struct TrainConfig {
    int images_per_batch = 4;
    int pixels_per_image = 2048;
    double phase1_lr = 1e-3;
    int phase1_updates = 125;
    double phase2_lr = 1e-5;
    int phase2_updates = 125;
    AdamWConfig adamw;
    AugmentSpec augment;
    uint64_t seed = 0;

    void validate() const;
};

struct LossRecord {
    int update = 0;  // 1-based, across both phases
    int phase = 1;
    double loss = 0.0;
};

struct TrainResult {
    std::vector<LossRecord> history;
};

// Each update draws images_per_batch augmented images and pixels_per_image
// pixels from each; phase 1 freezes the backbone. Deterministic per seed.
TrainResult train(Model& model, const std::vector<DatasetItem>& dataset,
                  const TrainConfig& config, const LossParams& loss);

// Disjoint folds covering [0, n); sizes differ by at most one (a warning is
// emitted when n is not divisible by k).
std::vector<std::vector<size_t>> crossval_split(size_t n, int k, std::mt19937_64& rng);

struct MetricStat {
    std::optional<double> mean;
    std::optional<double> se;  // standard error over validation images
    int n = 0;
};

struct CrossvalReport {
    std::vector<std::string> class_names;
    std::vector<MetricStat> precision, recall, iu;  // one entry per class
    MetricStat accuracy;
    MetricStat mean_iu;  // unweighted class mean per image
    int folds = 0;
};

struct CrossvalConfig {
    NetConfig net;
    TrainConfig train;
    LossParams loss;
    int folds = 6;
};

CrossvalReport run_crossval(const std::vector<DatasetItem>& dataset,
                            const ClassTaxonomy& taxonomy, const CrossvalConfig& config);

MetricStat mean_se(const std::vector<double>& values);

// Training config JSON: {"net": {...}, "train": {...}, "augment": {...},
// "loss": {...}}; omitted sections keep defaults.
struct TrainSetup {
    NetConfig net;
    TrainConfig train;
    LossParams loss;
};
TrainSetup load_train_setup(const std::filesystem::path& path);
void save_train_setup(const TrainSetup& setup, const std::filesystem::path& path);

}  // namespace microseg
