#pragma once

#include <optional>
#include <vector>

#include "microseg/image.hpp"
#include "microseg/particles.hpp"

namespace microseg {

// K x K pixel counts; entry (truth, predicted).
struct ConfusionMatrix {
    int k = 0;
    std::vector<long> counts;  // row-major, counts[truth * k + pred]

    explicit ConfusionMatrix(int classes)
        : k(classes), counts(static_cast<size_t>(classes) * classes, 0) {}

    long& at(int truth, int pred) { return counts[static_cast<size_t>(truth) * k + pred]; }
    long at(int truth, int pred) const { return counts[static_cast<size_t>(truth) * k + pred]; }
    long total() const;
    long support(int c) const;         // ground-truth pixels of class c
    long predicted_count(int c) const;
    ConfusionMatrix& operator+=(const ConfusionMatrix& other);
};

// Counts pred-vs-gt pixels; an optional mask excludes pixels where it is 0.
ConfusionMatrix confusion_matrix(const LabelMap& pred, const LabelMap& gt,
                                 const Mask* ignore = nullptr);

// 0/0 metrics are reported as absent, never as 0 or 1.
std::optional<double> precision(const ConfusionMatrix& cm, int c);
std::optional<double> recall(const ConfusionMatrix& cm, int c);
std::optional<double> iu(const ConfusionMatrix& cm, int c);
double overall_accuracy(const ConfusionMatrix& cm);

struct ClassMetrics {
    std::vector<std::optional<double>> precision, recall, iu;
    std::vector<long> support, predicted;
    double accuracy = 0;
    std::optional<double> mean_iu;           // unweighted over defined classes
    std::optional<double> weighted_mean_iu;  // support-weighted
};

ClassMetrics compute_metrics(const ConfusionMatrix& cm);

}  // namespace microseg
