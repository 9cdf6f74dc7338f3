#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "sspnet/data.hpp"
#include "sspnet/tensor.hpp"

namespace sspnet {

struct MeanAccuracyResult {
    double mA = 0.0;                    // mean over evaluable attributes
    std::vector<double> per_attribute;  // 0 where excluded
    std::vector<bool> excluded;         // attribute had no positives or no negatives
};

// Label-based mean accuracy: per attribute (TPR + TNR) / 2 with predictions
// thresholded at `threshold` (strictly greater). Attributes without both a
// positive and a negative example are excluded and flagged.
MeanAccuracyResult mean_accuracy(const Tensor& probs, const Tensor& labels,
                                 double threshold = 0.5);

struct ExampleBasedResult {
    double accuracy = 0.0;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

// Example-based metrics averaged over samples; a sample with an empty
// denominator set contributes 1 when both predicted and true sets are empty,
// else 0. F1 is the harmonic mean of the averaged precision and recall.
ExampleBasedResult example_based(const Tensor& probs, const Tensor& labels,
                                 double threshold = 0.5);

// Intersection over union under the half-open pixel convention; 0 when
// disjoint.
double iou(const Box& a, const Box& b);

// Pearson product-moment correlation. Throws ValidationError when either
// sequence is constant (undefined correlation) or lengths differ / are < 2.
double pcc(const std::vector<double>& xs, const std::vector<double>& ys);

struct CrossEvalResult {
    std::vector<std::pair<int, int>> attr_map;  // (source index, target index)
    std::vector<double> per_attribute_mA;
    std::vector<bool> excluded;
    double average_mA = 0.0;
};

// Evaluates only the mapped attributes: probs are the source model's
// predictions on the target split, labels the target annotations.
CrossEvalResult cross_dataset_eval(const Tensor& source_probs, const Tensor& target_labels,
                                   const std::vector<std::pair<int, int>>& attr_map,
                                   double threshold = 0.5);

struct LocalizationMetrics {
    std::vector<std::string> attribute_names;
    std::vector<double> mean_iou;       // per attribute
    std::vector<double> pccs;           // per attribute; NaN when undefined
    std::vector<int> num_samples;       // positives with ground-truth boxes
    double average_iou = 0.0;
    double average_pcc = 0.0;           // over attributes with defined PCC
};

struct MetricReport {
    MeanAccuracyResult ma;
    ExampleBasedResult example;
    std::vector<std::string> attribute_names;
    std::optional<LocalizationMetrics> localization;
};

nlohmann::json metric_report_to_json(const MetricReport& report);

// Fixed-width table in the usual mA/Accu/Prec/Recall/F1 column layout.
std::string render_metric_table(const MetricReport& report);

}  // namespace sspnet
