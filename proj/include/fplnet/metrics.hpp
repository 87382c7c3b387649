#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "fplnet/error.hpp"
#include "fplnet/tensor.hpp"

namespace fplnet {

/// n(i, j): pixels of true class i predicted as class j, accumulated over
/// any number of label maps. Ignored pixels are skipped.
class ConfusionMatrix {
public:
    explicit ConfusionMatrix(std::size_t classes) : c_(classes), n_(classes * classes, 0) {
        if (classes == 0) throw ConfigError("confusion matrix: need at least one class");
    }

    std::size_t classes() const { return c_; }
    std::uint64_t operator()(std::size_t truth, std::size_t pred) const { return n_[truth * c_ + pred]; }
    const std::vector<std::uint64_t>& counts() const { return n_; }

    void add(const LabelMap& pred, const LabelMap& truth, std::int32_t ignore = LabelMap::kIgnore) {
        if (pred.n != truth.n || pred.h != truth.h || pred.w != truth.w)
            throw ShapeError("confusion matrix: prediction (" + std::to_string(pred.n) + "," + std::to_string(pred.h) +
                             "," + std::to_string(pred.w) + ") vs labels (" + std::to_string(truth.n) + "," +
                             std::to_string(truth.h) + "," + std::to_string(truth.w) + ")");
        for (std::size_t i = 0; i < truth.size(); ++i) {
            const auto t = truth.data[i];
            if (t == ignore) continue;
            const auto p = pred.data[i];
            if (t < 0 || static_cast<std::size_t>(t) >= c_)
                throw DataError("confusion matrix: label " + std::to_string(t) + " outside [0," + std::to_string(c_) + ")");
            if (p < 0 || static_cast<std::size_t>(p) >= c_)
                throw DataError("confusion matrix: prediction " + std::to_string(p) + " outside [0," +
                                std::to_string(c_) + ")");
            ++n_[static_cast<std::size_t>(t) * c_ + static_cast<std::size_t>(p)];
        }
    }

    /// t_i: all pixels whose true class is i.
    std::uint64_t truth_total(std::size_t i) const {
        std::uint64_t s = 0;
        for (std::size_t j = 0; j < c_; ++j) s += (*this)(i, j);
        return s;
    }
    std::uint64_t predicted_total(std::size_t i) const {
        std::uint64_t s = 0;
        for (std::size_t j = 0; j < c_; ++j) s += (*this)(j, i);
        return s;
    }

    /// n_ii / (t_i + sum_j n_ji - n_ii); empty when the class appears in
    /// neither truth nor prediction.
    std::optional<double> iou(std::size_t i) const {
        const std::uint64_t tp = (*this)(i, i), uni = truth_total(i) + predicted_total(i) - tp;
        if (uni == 0) return std::nullopt;
        return static_cast<double>(tp) / static_cast<double>(uni);
    }

private:
    std::size_t c_;
    std::vector<std::uint64_t> n_;
};

struct MiouResult {
    std::vector<std::optional<double>> per_class;
    /// Mean over classes present in truth or prediction; 0 when none are.
    double miou = 0.0;
    std::size_t present = 0;
};

inline MiouResult miou(const ConfusionMatrix& cm) {
    MiouResult r;
    double sum = 0.0;
    for (std::size_t i = 0; i < cm.classes(); ++i) {
        r.per_class.push_back(cm.iou(i));
        if (r.per_class.back()) sum += *r.per_class.back(), ++r.present;
    }
    r.miou = r.present ? sum / static_cast<double>(r.present) : 0.0;
    return r;
}

inline MiouResult miou(const std::vector<LabelMap>& preds, const std::vector<LabelMap>& labels, std::size_t classes,
                       std::int32_t ignore = LabelMap::kIgnore) {
    if (preds.size() != labels.size())
        throw ShapeError("miou: " + std::to_string(preds.size()) + " predictions for " + std::to_string(labels.size()) +
                         " label maps");
    ConfusionMatrix cm(classes);
    for (std::size_t i = 0; i < preds.size(); ++i) cm.add(preds[i], labels[i], ignore);
    return miou(cm);
}

} // namespace fplnet
