#pragma once

#include <iomanip>
#include <span>

#include "artseg/common.hpp"

namespace artseg {

// ---------------------------------------------------------------------------
// N x N confusion matrix: entry (gt, pred) counts pixels of ground-truth
// class gt predicted as pred, accumulated over frames. All counting is done
// in 64-bit integers; division happens only in the score functions.
// ---------------------------------------------------------------------------

class ConfusionMatrix {
public:
    explicit ConfusionMatrix(int num_classes)
        : n_(num_classes), counts_(static_cast<std::size_t>(num_classes) * num_classes, 0) {
        if (num_classes < 1) throw ConfigError("confusion matrix needs at least one class");
    }

    int num_classes() const { return n_; }

    void accumulate(const IndexMap& pred, const IndexMap& gt) {
        if (pred.height != gt.height || pred.width != gt.width)
            throw DimensionError("confusion matrix: prediction " + std::to_string(pred.height) +
                                 "x" + std::to_string(pred.width) + " vs ground truth " +
                                 std::to_string(gt.height) + "x" + std::to_string(gt.width));
        const std::size_t n = pred.values.size();
        for (std::size_t i = 0; i < n; ++i) {
            const int p = pred.values[i], g = gt.values[i];
            if (p >= n_ || g >= n_)
                throw DataError("confusion matrix: class " + std::to_string(std::max(p, g)) +
                                " out of range for " + std::to_string(n_) + " classes");
            ++counts_[static_cast<std::size_t>(g) * n_ + p];
        }
    }

    // Merge is elementwise addition: associative and commutative, so
    // per-thread matrices can be combined in any order.
    void merge(const ConfusionMatrix& other) {
        if (other.n_ != n_) throw DimensionError("confusion matrix merge: class count mismatch");
        for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
    }

    std::int64_t at(int gt, int pred) const {
        return counts_[static_cast<std::size_t>(gt) * n_ + pred];
    }

    std::int64_t row_sum(int gt) const {
        std::int64_t s = 0;
        for (int p = 0; p < n_; ++p) s += at(gt, p);
        return s;
    }

    std::int64_t col_sum(int pred) const {
        std::int64_t s = 0;
        for (int g = 0; g < n_; ++g) s += at(g, pred);
        return s;
    }

    std::int64_t total() const {
        std::int64_t s = 0;
        for (std::int64_t c : counts_) s += c;
        return s;
    }

    std::int64_t correct() const {
        std::int64_t s = 0;
        for (int i = 0; i < n_; ++i) s += at(i, i);
        return s;
    }

private:
    int n_;
    std::vector<std::int64_t> counts_;
};

// Per-class recall TP/(TP+FN), averaged over classes. Classes that never
// occur in the ground truth have undefined recall and are skipped.
inline double avg_acc(const ConfusionMatrix& cm) {
    if (cm.total() == 0) throw UsageError("avg_acc on an empty confusion matrix");
    double sum = 0.0;
    int counted = 0;
    for (int i = 0; i < cm.num_classes(); ++i) {
        const std::int64_t row = cm.row_sum(i);
        if (row == 0) continue;
        sum += static_cast<double>(cm.at(i, i)) / static_cast<double>(row);
        ++counted;
    }
    return sum / counted;
}

// Per-class TP/(TP+FN+FP), averaged over classes. Only classes absent from
// both ground truth and prediction (zero row and column) are skipped; a
// class that is predicted but never present scores 0.
inline double mean_iou(const ConfusionMatrix& cm) {
    if (cm.total() == 0) throw UsageError("mean_iou on an empty confusion matrix");
    double sum = 0.0;
    int counted = 0;
    for (int i = 0; i < cm.num_classes(); ++i) {
        const std::int64_t denom = cm.row_sum(i) + cm.col_sum(i) - cm.at(i, i);
        if (denom == 0) continue;
        sum += static_cast<double>(cm.at(i, i)) / static_cast<double>(denom);
        ++counted;
    }
    return sum / counted;
}

// ---------------------------------------------------------------------------
// Report: one row per class in palette order, then the two aggregate scores.
// ---------------------------------------------------------------------------

struct ClassScore {
    std::string name;
    std::int64_t support = 0;  // ground-truth pixels of this class
    double acc = 0.0;
    double iou = 0.0;
    bool acc_defined = false;
    bool iou_defined = false;
};

struct MetricsReport {
    std::vector<ClassScore> rows;
    double avg_acc = 0.0;
    double mean_iou = 0.0;
    double pixel_acc = 0.0;  // overall fraction of correctly labelled pixels
    std::int64_t pixels = 0;

    std::string to_text() const {
        std::ostringstream os;
        std::size_t name_w = 5;
        for (const auto& r : rows) name_w = std::max(name_w, r.name.size());
        os << std::left << std::setw(static_cast<int>(name_w) + 2) << "class"
           << std::right << std::setw(12) << "pixels" << std::setw(10) << "acc"
           << std::setw(10) << "iou" << '\n';
        os << std::fixed << std::setprecision(4);
        for (const auto& r : rows) {
            os << std::left << std::setw(static_cast<int>(name_w) + 2) << r.name << std::right
               << std::setw(12) << r.support;
            if (r.acc_defined)
                os << std::setw(10) << r.acc;
            else
                os << std::setw(10) << "-";
            if (r.iou_defined)
                os << std::setw(10) << r.iou;
            else
                os << std::setw(10) << "-";
            os << '\n';
        }
        os << std::left << std::setw(static_cast<int>(name_w) + 2) << "Avg.Acc" << std::right
           << std::setw(12) << pixels << std::setw(10) << avg_acc << std::setw(10) << mean_iou
           << "  (acc column = Avg.Acc, iou column = mean IoU)\n";
        return os.str();
    }

    std::string to_csv() const {
        std::ostringstream os;
        os << std::setprecision(17);
        os << "class,pixels,acc,iou\n";
        for (const auto& r : rows) {
            os << r.name << ',' << r.support << ',';
            if (r.acc_defined) os << r.acc;
            os << ',';
            if (r.iou_defined) os << r.iou;
            os << '\n';
        }
        os << "Avg.Acc," << pixels << ',' << avg_acc << ",\n";
        os << "IoU," << pixels << ",," << mean_iou << '\n';
        return os.str();
    }
};

inline MetricsReport per_class_report(const ConfusionMatrix& cm,
                                      std::span<const std::string> names) {
    if (static_cast<int>(names.size()) != cm.num_classes())
        throw DimensionError("per_class_report: " + std::to_string(names.size()) +
                             " names for " + std::to_string(cm.num_classes()) + " classes");
    MetricsReport rep;
    rep.pixels = cm.total();
    for (int i = 0; i < cm.num_classes(); ++i) {
        ClassScore row;
        row.name = names[i];
        row.support = cm.row_sum(i);
        const std::int64_t iou_denom = row.support + cm.col_sum(i) - cm.at(i, i);
        if (row.support > 0) {
            row.acc = static_cast<double>(cm.at(i, i)) / static_cast<double>(row.support);
            row.acc_defined = true;
        }
        if (iou_denom > 0) {
            row.iou = static_cast<double>(cm.at(i, i)) / static_cast<double>(iou_denom);
            row.iou_defined = true;
        }
        rep.rows.push_back(std::move(row));
    }
    rep.avg_acc = avg_acc(cm);
    rep.mean_iou = mean_iou(cm);
    rep.pixel_acc = rep.pixels > 0
                        ? static_cast<double>(cm.correct()) / static_cast<double>(rep.pixels)
                        : 0.0;
    return rep;
}

}  // namespace artseg
