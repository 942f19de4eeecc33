#pragma once

#include <cstdint>
#include <optional>

#include "fedqnn/errors.hpp"

namespace fedqnn {

/// Binary classification counts; positive class = affected.
struct ConfusionMatrix {
    std::uint64_t tp = 0;
    std::uint64_t tn = 0;
    std::uint64_t fp = 0;
    std::uint64_t fn = 0;

    std::uint64_t total() const { return tp + tn + fp + fn; }

    void count(bool actual_positive, bool predicted_positive) {
        if (actual_positive) {
            predicted_positive ? ++tp : ++fn;
        } else {
            predicted_positive ? ++fp : ++tn;
        }
    }
};

/// The five classification metrics as fractions in [0, 1]. A metric whose
/// denominator is zero is left disengaged (the undefined marker) rather than
/// forced to 0, 1 or NaN.
struct MetricsReport {
    std::optional<double> accuracy;
    std::optional<double> precision;
    std::optional<double> recall;
    std::optional<double> f1;
    std::optional<double> specificity;
};

inline MetricsReport compute_metrics(const ConfusionMatrix &cm) {
    if (cm.total() == 0) {
        throw EmptyMatrix("confusion matrix has no counts");
    }
    MetricsReport r;
    const double tp = static_cast<double>(cm.tp);
    const double tn = static_cast<double>(cm.tn);
    const double fp = static_cast<double>(cm.fp);
    const double fn = static_cast<double>(cm.fn);
    r.accuracy = (tp + tn) / static_cast<double>(cm.total());
    if (cm.tp + cm.fp > 0) {
        r.precision = tp / (tp + fp);
    }
    if (cm.tp + cm.fn > 0) {
        r.recall = tp / (tp + fn);
    }
    if (cm.tn + cm.fp > 0) {
        r.specificity = tn / (tn + fp);
    }
    if (r.precision && r.recall && *r.precision + *r.recall > 0.0) {
        r.f1 = 2.0 * *r.precision * *r.recall / (*r.precision + *r.recall);
    }
    return r;
}

} // namespace fedqnn
