#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "acc/common.hpp"
#include "acc/phonology.hpp"

namespace acc {

// Frame tallies; rows are true classes, columns predictions.
struct ConfusionMatrix {
    int n = 0;
    std::vector<int64_t> counts;  // n*n, row-major

    ConfusionMatrix() = default;
    explicit ConfusionMatrix(int classes)
        : n(classes), counts(static_cast<size_t>(classes) * classes, 0) {}

    int64_t& at(int y, int p) { return counts[static_cast<size_t>(y) * n + p]; }
    int64_t at(int y, int p) const { return counts[static_cast<size_t>(y) * n + p]; }
    int64_t total() const;
    void merge(const ConfusionMatrix& o);  // elementwise sum
};

// Tallies unmasked frames only. Entries outside [0, n) throw IndexOutOfRange.
ConfusionMatrix confusion(const std::vector<int>& preds, const std::vector<int>& labels,
                          const std::vector<uint8_t>& mask, int n_classes);

struct Prf {
    real precision = 0;
    real recall = 0;
    real f1 = 0;
};

// Per-class precision/recall/F1; a zero denominator yields 0 by convention.
std::vector<Prf> prf(const ConfusionMatrix& cm);
// Unweighted mean over classes (Silence included as a scored row).
Prf macro(const std::vector<Prf>& per_class);
real accuracy(const ConfusionMatrix& cm);  // diagonal mass over total; 0 when empty

// One scored column of a metrics table.
struct MetricColumn {
    std::string label;  // e.g. a mode name, or "pooled"
    std::vector<Prf> per_class;
};

// CSV layout: "class,<label>_precision,<label>_recall,<label>_f1,..." with one
// row per class and a final unweighted AVG row, full-precision values.
void write_metrics_csv(const std::filesystem::path& path, Dimension dim,
                       const std::vector<MetricColumn>& columns);

struct MetricsTable {
    std::vector<std::string> rows;     // class names; last row is "AVG"
    std::vector<std::string> columns;  // header cells after "class"
    std::vector<std::vector<real>> values;  // [row][column]
};
MetricsTable read_metrics_csv(const std::filesystem::path& path);

// Fixed-geometry grouped bar chart of macro-F1 values; byte-deterministic.
struct F1Bar {
    std::string group;  // dimension name
    std::string label;  // mode name
    real f1 = 0;
};
std::string render_f1_svg(const std::vector<F1Bar>& bars);
void write_f1_svg(const std::filesystem::path& path, const std::vector<F1Bar>& bars);

void write_confusion_json(const std::filesystem::path& path, Dimension dim,
                          const ConfusionMatrix& cm);
ConfusionMatrix read_confusion_json(const std::filesystem::path& path,
                                    Dimension* dim_out = nullptr);

// Two-decimal terminal table with the AVG row last.
std::string format_metrics(Dimension dim, const std::vector<MetricColumn>& columns);

}  // namespace acc
