#include "lbt/metrics.hpp"

#include <sstream>

#include "lbt/dataio.hpp"

namespace lbt {

ConfusionMatrix::ConfusionMatrix(int classes, std::vector<std::string> names)
    : k(classes), counts(static_cast<size_t>(classes) * classes, 0),
      class_names(std::move(names)) {
    if (classes <= 0)
        throw ArgumentError("confusion matrix needs at least 1 class, got " +
                            std::to_string(classes));
    if (class_names.empty())
        for (int i = 0; i < classes; ++i) class_names.push_back("class" + std::to_string(i));
    if (static_cast<int>(class_names.size()) != classes)
        throw ArgumentError("confusion matrix: " + std::to_string(class_names.size()) +
                            " names for " + std::to_string(classes) + " classes");
}

namespace {
void check_cell(int truth, int pred, int k) {
    if (truth < 0 || truth >= k || pred < 0 || pred >= k)
        throw IndexError("confusion matrix cell (" + std::to_string(truth) + "," +
                         std::to_string(pred) + ") out of range for k=" + std::to_string(k));
}
} // namespace

int64_t& ConfusionMatrix::at(int truth, int pred) {
    check_cell(truth, pred, k);
    return counts[static_cast<size_t>(truth) * k + pred];
}

int64_t ConfusionMatrix::at(int truth, int pred) const {
    check_cell(truth, pred, k);
    return counts[static_cast<size_t>(truth) * k + pred];
}

int64_t ConfusionMatrix::total() const {
    int64_t s = 0;
    for (const int64_t c : counts) s += c;
    return s;
}

int64_t ConfusionMatrix::trace() const {
    int64_t s = 0;
    for (int i = 0; i < k; ++i) s += at(i, i);
    return s;
}

ConfusionMatrix confusion_matrix(std::span<const int64_t> truth, std::span<const int64_t> pred,
                                 int k, std::vector<std::string> class_names) {
    if (truth.size() != pred.size())
        throw ArgumentError("confusion_matrix: " + std::to_string(truth.size()) +
                            " true labels vs " + std::to_string(pred.size()) + " predictions");
    ConfusionMatrix cm(k, std::move(class_names));
    for (size_t i = 0; i < truth.size(); ++i) {
        const int64_t t = truth[i], p = pred[i];
        if (t < 0 || t >= k || p < 0 || p >= k)
            throw ArgumentError("confusion_matrix: label pair (" + std::to_string(t) + "," +
                                std::to_string(p) + ") out of range [0," + std::to_string(k) +
                                ")");
        ++cm.at(static_cast<int>(t), static_cast<int>(p));
    }
    return cm;
}

namespace {

Rate rate(int64_t num, int64_t den) {
    if (den == 0) return {0.0, true};
    return {static_cast<double>(num) / static_cast<double>(den), false};
}

Rate f1_of(const Rate& p, const Rate& r) {
    if (p.undefined || r.undefined || p.value + r.value == 0.0) return {0.0, true};
    return {2.0 * p.value * r.value / (p.value + r.value), false};
}

} // namespace

PerClassMetrics per_class_metrics(const ConfusionMatrix& cm) {
    PerClassMetrics out;
    const int64_t total = cm.total();
    out.accuracy = total == 0 ? 0.0
                              : static_cast<double>(cm.trace()) / static_cast<double>(total);
    for (int c = 0; c < cm.k; ++c) {
        const int64_t tp = cm.at(c, c);
        int64_t fp = 0, fn = 0;
        for (int o = 0; o < cm.k; ++o) {
            if (o == c) continue;
            fp += cm.at(o, c);
            fn += cm.at(c, o);
        }
        ClassMetrics m;
        m.precision = rate(tp, tp + fp);
        m.recall = rate(tp, tp + fn);
        m.f1 = f1_of(m.precision, m.recall);
        out.per_class.push_back(m);
    }
    return out;
}

double cohen_kappa(const ConfusionMatrix& cm) {
    const int64_t total = cm.total();
    if (total == 0) throw ArgumentError("cohen_kappa: empty confusion matrix");
    // kappa = (T*trace - S) / (T^2 - S) with S = sum_i row_i * col_i, all in
    // exact integer arithmetic until the final division.
    int64_t s = 0;
    for (int i = 0; i < cm.k; ++i) {
        int64_t row = 0, col = 0;
        for (int j = 0; j < cm.k; ++j) {
            row += cm.at(i, j);
            col += cm.at(j, i);
        }
        s += row * col;
    }
    const int64_t num = total * cm.trace() - s;
    const int64_t den = total * total - s;
    if (den == 0) return 1.0; // p_e = 1 forces perfect agreement
    return static_cast<double>(num) / static_cast<double>(den);
}

ScreeningMetrics binary_screening_metrics(const ConfusionMatrix& cm, int positive_class) {
    if (cm.k != 2)
        throw ArgumentError("binary_screening_metrics: needs a 2-class matrix, got k = " +
                            std::to_string(cm.k));
    if (positive_class < 0 || positive_class > 1)
        throw ArgumentError("binary_screening_metrics: positive class must be 0 or 1");
    const int p = positive_class, n = 1 - positive_class;
    const int64_t tp = cm.at(p, p), fn = cm.at(p, n), tn = cm.at(n, n), fp = cm.at(n, p);
    ScreeningMetrics s;
    s.positive_class = p;
    s.sensitivity = rate(tp, tp + fn);
    s.specificity = rate(tn, tn + fp);
    s.ppv = rate(tp, tp + fp);
    s.npv = rate(tn, tn + fn);
    return s;
}

MetricsReport build_report(const ConfusionMatrix& cm, int positive_class,
                           std::string config_digest) {
    MetricsReport r;
    r.cm = cm;
    r.per_class = per_class_metrics(cm);
    r.kappa = cohen_kappa(cm);
    if (cm.k == 2) r.screening = binary_screening_metrics(cm, positive_class < 0 ? 1 : positive_class);
    r.config_digest = std::move(config_digest);
    return r;
}

namespace {

nlohmann::json rate_json(const Rate& r) {
    nlohmann::json j;
    j["value"] = r.value;
    j["undefined"] = r.undefined;
    return j;
}

} // namespace

nlohmann::json report_to_json(const MetricsReport& r) {
    nlohmann::json j;
    j["schema_version"] = 1;
    j["class_names"] = r.cm.class_names;
    nlohmann::json cm = nlohmann::json::array();
    for (int t = 0; t < r.cm.k; ++t) {
        nlohmann::json row = nlohmann::json::array();
        for (int p = 0; p < r.cm.k; ++p) row.push_back(r.cm.at(t, p));
        cm.push_back(std::move(row));
    }
    j["confusion_matrix"] = std::move(cm);
    j["total"] = r.cm.total();
    j["correct"] = r.cm.trace();
    j["accuracy"] = r.per_class.accuracy;
    j["cohen_kappa"] = r.kappa;
    nlohmann::json per_class = nlohmann::json::array();
    for (size_t c = 0; c < r.per_class.per_class.size(); ++c) {
        const ClassMetrics& m = r.per_class.per_class[c];
        per_class.push_back({{"class", r.cm.class_names[c]},
                             {"precision", rate_json(m.precision)},
                             {"recall", rate_json(m.recall)},
                             {"f1", rate_json(m.f1)}});
    }
    j["per_class"] = std::move(per_class);
    if (r.screening) {
        const ScreeningMetrics& s = *r.screening;
        j["screening"] = {{"positive_class", r.cm.class_names[static_cast<size_t>(s.positive_class)]},
                          {"sensitivity", rate_json(s.sensitivity)},
                          {"specificity", rate_json(s.specificity)},
                          {"ppv", rate_json(s.ppv)},
                          {"npv", rate_json(s.npv)}};
    }
    j["config_digest"] = r.config_digest;
    return j;
}

void emit_report_json(const MetricsReport& r, const std::string& path) {
    write_file(path, report_to_json(r).dump(2) + "\n");
}

void emit_report_csv(const MetricsReport& r, const std::string& path) {
    std::ostringstream os;
    os.precision(9);
    os << "metric,class,value\n";
    os << "accuracy,," << r.per_class.accuracy << '\n';
    os << "cohen_kappa,," << r.kappa << '\n';
    for (size_t c = 0; c < r.per_class.per_class.size(); ++c) {
        const ClassMetrics& m = r.per_class.per_class[c];
        const std::string& name = r.cm.class_names[c];
        os << "precision," << name << ',' << m.precision.value << '\n';
        os << "recall," << name << ',' << m.recall.value << '\n';
        os << "f1," << name << ',' << m.f1.value << '\n';
    }
    if (r.screening) {
        const ScreeningMetrics& s = *r.screening;
        const std::string& pos = r.cm.class_names[static_cast<size_t>(s.positive_class)];
        os << "sensitivity," << pos << ',' << s.sensitivity.value << '\n';
        os << "specificity," << pos << ',' << s.specificity.value << '\n';
        os << "ppv," << pos << ',' << s.ppv.value << '\n';
        os << "npv," << pos << ',' << s.npv.value << '\n';
    }
    write_file(path, os.str());
}

} // namespace lbt
