#include "sspnet/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

namespace sspnet {

using nlohmann::json;

namespace {

void check_pair_shapes(const Tensor& probs, const Tensor& labels) {
    if (probs.rank() != 2 || labels.rank() != 2 || !probs.same_shape(labels))
        throw ShapeError("metrics: probs and labels must both be (N,M) with equal shapes");
    for (int64_t i = 0; i < labels.numel(); ++i)
        if (labels[i] != 0.0 && labels[i] != 1.0)
            throw ValidationError("metrics: labels must be binary");
}

}  // namespace

MeanAccuracyResult mean_accuracy(const Tensor& probs, const Tensor& labels, double threshold) {
    check_pair_shapes(probs, labels);
    const int n = probs.dim(0), m = probs.dim(1);
    if (n < 1) throw ValidationError("mean_accuracy: empty input");
    MeanAccuracyResult r;
    r.per_attribute.assign(static_cast<size_t>(m), 0.0);
    r.excluded.assign(static_cast<size_t>(m), false);
    double acc = 0.0;
    int used = 0;
    for (int j = 0; j < m; ++j) {
        int64_t tp = 0, tn = 0, pos = 0, neg = 0;
        for (int i = 0; i < n; ++i) {
            const bool pred = probs.at(i, j) > threshold;
            if (labels.at(i, j) == 1.0) {
                ++pos;
                if (pred) ++tp;
            } else {
                ++neg;
                if (!pred) ++tn;
            }
        }
        if (pos == 0 || neg == 0) {
            r.excluded[static_cast<size_t>(j)] = true;
            continue;
        }
        const double ma_j = 0.5 * (static_cast<double>(tp) / pos + static_cast<double>(tn) / neg);
        r.per_attribute[static_cast<size_t>(j)] = ma_j;
        acc += ma_j;
        ++used;
    }
    if (used == 0)
        throw ValidationError("mean_accuracy: no attribute has both positives and negatives");
    r.mA = acc / used;
    return r;
}

ExampleBasedResult example_based(const Tensor& probs, const Tensor& labels, double threshold) {
    check_pair_shapes(probs, labels);
    const int n = probs.dim(0), m = probs.dim(1);
    if (n < 1) throw ValidationError("example_based: empty input");
    double acc = 0.0, prec = 0.0, rec = 0.0;
    for (int i = 0; i < n; ++i) {
        int64_t inter = 0, pred_count = 0, true_count = 0;
        for (int j = 0; j < m; ++j) {
            const bool pred = probs.at(i, j) > threshold;
            const bool truth = labels.at(i, j) == 1.0;
            inter += pred && truth;
            pred_count += pred;
            true_count += truth;
        }
        const int64_t uni = pred_count + true_count - inter;
        const bool both_empty = pred_count == 0 && true_count == 0;
        acc += uni == 0 ? (both_empty ? 1.0 : 0.0) : static_cast<double>(inter) / uni;
        prec += pred_count == 0 ? (both_empty ? 1.0 : 0.0) : static_cast<double>(inter) / pred_count;
        rec += true_count == 0 ? (both_empty ? 1.0 : 0.0) : static_cast<double>(inter) / true_count;
    }
    ExampleBasedResult r;
    r.accuracy = acc / n;
    r.precision = prec / n;
    r.recall = rec / n;
    r.f1 = (r.precision + r.recall) > 0.0
               ? 2.0 * r.precision * r.recall / (r.precision + r.recall)
               : 0.0;
    return r;
}

double iou(const Box& a, const Box& b) {
    if (!a.valid() || !b.valid()) throw ValidationError("iou: degenerate box");
    const double ix = std::max(0.0, std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min));
    const double iy = std::max(0.0, std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min));
    const double inter = ix * iy;
    const double uni = a.area() + b.area() - inter;
    return inter / uni;
}

double pcc(const std::vector<double>& xs, const std::vector<double>& ys) {
    if (xs.size() != ys.size()) throw ValidationError("pcc: length mismatch");
    if (xs.size() < 2) throw ValidationError("pcc: need at least 2 points");
    const double n = static_cast<double>(xs.size());
    double mx = 0.0, my = 0.0;
    for (size_t i = 0; i < xs.size(); ++i) {
        mx += xs[i];
        my += ys[i];
    }
    mx /= n;
    my /= n;
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (size_t i = 0; i < xs.size(); ++i) {
        const double dx = xs[i] - mx, dy = ys[i] - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if (sxx == 0.0 || syy == 0.0)
        throw ValidationError("pcc: undefined correlation for a constant sequence");
    return sxy / std::sqrt(sxx * syy);
}

CrossEvalResult cross_dataset_eval(const Tensor& source_probs, const Tensor& target_labels,
                                   const std::vector<std::pair<int, int>>& attr_map,
                                   double threshold) {
    if (source_probs.rank() != 2 || target_labels.rank() != 2 ||
        source_probs.dim(0) != target_labels.dim(0))
        throw ShapeError("cross_dataset_eval: probs and labels must share the sample axis");
    if (attr_map.empty()) throw ValidationError("cross_dataset_eval: empty attribute map");
    std::set<int> src_seen, tgt_seen;
    for (const auto& [sj, tj] : attr_map) {
        if (sj < 0 || sj >= source_probs.dim(1))
            throw ValidationError("cross_dataset_eval: source index " + std::to_string(sj) +
                                  " out of range");
        if (tj < 0 || tj >= target_labels.dim(1))
            throw ValidationError("cross_dataset_eval: target index " + std::to_string(tj) +
                                  " out of range");
        if (!src_seen.insert(sj).second || !tgt_seen.insert(tj).second)
            throw ValidationError("cross_dataset_eval: attribute map must be injective");
    }
    const int n = source_probs.dim(0);
    CrossEvalResult r;
    r.attr_map = attr_map;
    double acc = 0.0;
    int used = 0;
    for (const auto& [sj, tj] : attr_map) {
        int64_t tp = 0, tn = 0, pos = 0, neg = 0;
        for (int i = 0; i < n; ++i) {
            const double y = target_labels.at(i, tj);
            if (y != 0.0 && y != 1.0)
                throw ValidationError("cross_dataset_eval: labels must be binary");
            const bool pred = source_probs.at(i, sj) > threshold;
            if (y == 1.0) {
                ++pos;
                if (pred) ++tp;
            } else {
                ++neg;
                if (!pred) ++tn;
            }
        }
        if (pos == 0 || neg == 0) {
            r.per_attribute_mA.push_back(0.0);
            r.excluded.push_back(true);
            continue;
        }
        const double ma = 0.5 * (static_cast<double>(tp) / pos + static_cast<double>(tn) / neg);
        r.per_attribute_mA.push_back(ma);
        r.excluded.push_back(false);
        acc += ma;
        ++used;
    }
    if (used == 0)
        throw ValidationError("cross_dataset_eval: no mapped attribute is evaluable");
    r.average_mA = acc / used;
    return r;
}

json metric_report_to_json(const MetricReport& report) {
    json j;
    j["mA"] = report.ma.mA;
    j["per_attribute_mA"] = report.ma.per_attribute;
    j["excluded_attributes"] = json::array();
    for (size_t i = 0; i < report.ma.excluded.size(); ++i)
        if (report.ma.excluded[i]) j["excluded_attributes"].push_back(static_cast<int>(i));
    j["accuracy"] = report.example.accuracy;
    j["precision"] = report.example.precision;
    j["recall"] = report.example.recall;
    j["f1"] = report.example.f1;
    if (!report.attribute_names.empty()) j["attributes"] = report.attribute_names;
    if (report.localization) {
        const auto& loc = *report.localization;
        json l;
        l["attributes"] = loc.attribute_names;
        l["mean_iou"] = loc.mean_iou;
        json pccs = json::array();
        for (double p : loc.pccs) {
            if (std::isnan(p))
                pccs.push_back(nullptr);
            else
                pccs.push_back(p);
        }
        l["pccs"] = pccs;
        l["num_samples"] = loc.num_samples;
        l["average_iou"] = loc.average_iou;
        l["average_pcc"] = loc.average_pcc;
        j["localization"] = l;
    }
    return j;
}

std::string render_metric_table(const MetricReport& report) {
    std::ostringstream out;
    out << std::fixed << std::setprecision(4);
    out << std::left << std::setw(12) << "mA" << std::setw(12) << "Accu" << std::setw(12) << "Prec"
        << std::setw(12) << "Recall" << std::setw(12) << "F1" << "\n";
    out << std::setw(12) << report.ma.mA << std::setw(12) << report.example.accuracy
        << std::setw(12) << report.example.precision << std::setw(12) << report.example.recall
        << std::setw(12) << report.example.f1 << "\n";
    if (!report.attribute_names.empty()) {
        out << "\n" << std::left << std::setw(22) << "Attribute" << std::setw(12) << "mA" << "\n";
        for (size_t i = 0; i < report.attribute_names.size(); ++i) {
            out << std::setw(22) << report.attribute_names[i];
            if (i < report.ma.excluded.size() && report.ma.excluded[i])
                out << std::setw(12) << "n/a (single-class)";
            else
                out << std::setw(12) << report.ma.per_attribute[i];
            out << "\n";
        }
        out << std::setw(22) << "Average" << std::setw(12) << report.ma.mA << "\n";
    }
    if (report.localization) {
        const auto& loc = *report.localization;
        out << "\n" << std::left << std::setw(22) << "Attribute" << std::setw(12) << "IoU"
            << std::setw(12) << "PCCs" << std::setw(10) << "Samples" << "\n";
        for (size_t i = 0; i < loc.attribute_names.size(); ++i) {
            out << std::setw(22) << loc.attribute_names[i] << std::setw(12) << loc.mean_iou[i];
            if (std::isnan(loc.pccs[i]))
                out << std::setw(12) << "n/a";
            else
                out << std::setw(12) << loc.pccs[i];
            out << std::setw(10) << loc.num_samples[i] << "\n";
        }
        out << std::setw(22) << "Average" << std::setw(12) << loc.average_iou << std::setw(12)
            << loc.average_pcc << "\n";
    }
    return out.str();
}

}  // namespace sspnet
