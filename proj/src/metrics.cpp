#include "microseg/metrics.hpp"

#include <numeric>

namespace microseg {

long ConfusionMatrix::total() const {
    return std::accumulate(counts.begin(), counts.end(), 0L);
}

long ConfusionMatrix::support(int c) const {
    long s = 0;
    for (int j = 0; j < k; ++j) s += at(c, j);
    return s;
}

long ConfusionMatrix::predicted_count(int c) const {
    long s = 0;
    for (int i = 0; i < k; ++i) s += at(i, c);
    return s;
}

ConfusionMatrix& ConfusionMatrix::operator+=(const ConfusionMatrix& other) {
    if (k != other.k) throw ImageError("confusion matrix K mismatch");
    for (size_t i = 0; i < counts.size(); ++i) counts[i] += other.counts[i];
    return *this;
}

ConfusionMatrix confusion_matrix(const LabelMap& pred, const LabelMap& gt,
                                 const Mask* ignore) {
    require_same_shape(pred, gt, "confusion_matrix");
    if (pred.num_classes != gt.num_classes)
        throw ImageError("confusion_matrix: K mismatch");
    ConfusionMatrix cm(gt.num_classes);
    for (size_t i = 0; i < gt.size(); ++i) {
        if (ignore && !ignore->on[i]) continue;
        cm.at(gt.labels[i], pred.labels[i])++;
    }
    return cm;
}

std::optional<double> precision(const ConfusionMatrix& cm, int c) {
    const long denom = cm.predicted_count(c);
    if (denom == 0) return std::nullopt;
    return static_cast<double>(cm.at(c, c)) / denom;
}

std::optional<double> recall(const ConfusionMatrix& cm, int c) {
    const long denom = cm.support(c);
    if (denom == 0) return std::nullopt;
    return static_cast<double>(cm.at(c, c)) / denom;
}

std::optional<double> iu(const ConfusionMatrix& cm, int c) {
    const long denom = cm.support(c) + cm.predicted_count(c) - cm.at(c, c);
    if (denom == 0) return std::nullopt;
    return static_cast<double>(cm.at(c, c)) / denom;
}

double overall_accuracy(const ConfusionMatrix& cm) {
    const long t = cm.total();
    if (t == 0) throw ImageError("overall_accuracy: empty confusion matrix");
    long diag = 0;
    for (int c = 0; c < cm.k; ++c) diag += cm.at(c, c);
    return static_cast<double>(diag) / t;
}

ClassMetrics compute_metrics(const ConfusionMatrix& cm) {
    ClassMetrics m;
    double iu_sum = 0, iu_wsum = 0;
    long iu_n = 0, iu_wtotal = 0;
    for (int c = 0; c < cm.k; ++c) {
        m.precision.push_back(precision(cm, c));
        m.recall.push_back(recall(cm, c));
        m.iu.push_back(iu(cm, c));
        m.support.push_back(cm.support(c));
        m.predicted.push_back(cm.predicted_count(c));
        if (m.iu.back()) {
            iu_sum += *m.iu.back();
            ++iu_n;
            iu_wsum += *m.iu.back() * cm.support(c);
            iu_wtotal += cm.support(c);
        }
    }
    m.accuracy = overall_accuracy(cm);
    if (iu_n > 0) m.mean_iu = iu_sum / iu_n;
    if (iu_wtotal > 0) m.weighted_mean_iu = iu_wsum / iu_wtotal;
    return m;
}

}  // namespace microseg
