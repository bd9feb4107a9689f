#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lbt/error.hpp"

namespace lbt {

// K x K counts; rows are the true class, columns the predicted class.
struct ConfusionMatrix {
    int k = 0;
    std::vector<int64_t> counts; // row-major
    std::vector<std::string> class_names;

    ConfusionMatrix() = default;
    ConfusionMatrix(int classes, std::vector<std::string> names = {});

    int64_t& at(int truth, int pred);
    int64_t at(int truth, int pred) const;
    int64_t total() const;
    int64_t trace() const;
};

ConfusionMatrix confusion_matrix(std::span<const int64_t> truth, std::span<const int64_t> pred,
                                 int k, std::vector<std::string> class_names = {});

// A rate whose denominator may be empty: value is 0 and `undefined` is set
// instead of dividing by zero.
struct Rate {
    double value = 0;
    bool undefined = false;
};

struct ClassMetrics {
    Rate precision, recall, f1;
};

struct PerClassMetrics {
    std::vector<ClassMetrics> per_class; // one-vs-rest
    double accuracy = 0;                 // trace/total
};

PerClassMetrics per_class_metrics(const ConfusionMatrix& cm);

// (p_o - p_e) / (1 - p_e); computed from exact integer counts. Returns 1 for
// the degenerate p_e = 1 case (which forces p_o = 1).
double cohen_kappa(const ConfusionMatrix& cm);

struct ScreeningMetrics {
    int positive_class = 1;
    Rate sensitivity; // TP/(TP+FN)
    Rate specificity; // TN/(TN+FP)
    Rate ppv;         // TP/(TP+FP)
    Rate npv;         // TN/(TN+FN)
};

// Binary tasks only (k == 2); everything relative to the designated positive
// class.
ScreeningMetrics binary_screening_metrics(const ConfusionMatrix& cm, int positive_class);

struct MetricsReport {
    ConfusionMatrix cm;
    PerClassMetrics per_class;
    double kappa = 0;
    std::optional<ScreeningMetrics> screening; // binary tasks only
    std::string config_digest;
};

// positive_class < 0 selects the default for binary tasks (class 1).
MetricsReport build_report(const ConfusionMatrix& cm, int positive_class = -1,
                           std::string config_digest = "");

nlohmann::json report_to_json(const MetricsReport& r);
void emit_report_json(const MetricsReport& r, const std::string& path);
// Flat export, one `metric,class,value` row per quantity.
void emit_report_csv(const MetricsReport& r, const std::string& path);

} // namespace lbt
