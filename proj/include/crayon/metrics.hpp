#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "crayon/data.hpp"
#include "crayon/model.hpp"

namespace crayon {

struct GroupStats {
    int correct = 0;
    int total = 0;
    double accuracy() const { return total ? static_cast<double>(correct) / total : 0.0; }
};

struct GroupAccuracyReport {
    std::map<GroupId, GroupStats> per_group;
    double wga = 0.0;  // worst group accuracy
    double mga = 0.0;  // unweighted mean of group accuracies
    double average_accuracy = 0.0;  // over all examples

    std::string to_json() const;
};

// Builds a report from per-group counts; throws on an empty group.
GroupAccuracyReport make_report(const std::map<GroupId, GroupStats>& groups);

std::vector<int> predict(const ConvNet& model, const Tensor& images, int batch = 128);
GroupAccuracyReport group_metrics(const std::vector<int>& predictions, const Dataset& data);
GroupAccuracyReport group_metrics(const ConvNet& model, const Dataset& data);
double accuracy(const std::vector<int>& predictions, const std::vector<int>& labels);

struct BackgroundMetrics {
    double mixed_same_accuracy = 0.0;
    double mixed_rand_accuracy = 0.0;
    double bg_gap = 0.0;  // same - rand
};

BackgroundMetrics background_metrics(double mixed_same_accuracy, double mixed_rand_accuracy);
BackgroundMetrics background_metrics(const ConvNet& model, const Dataset& mixed_same, const Dataset& mixed_rand);

// Fraction in [0,1] -> "12.34".
std::string percent(double fraction);

struct ReportRow {
    std::string method;
    GroupAccuracyReport groups;
    bool has_background = false;
    BackgroundMetrics background;
};

std::string report_json(const std::vector<ReportRow>& rows);
std::string report_markdown(const std::vector<ReportRow>& rows);
// Inverse of report_json; also accepts a single row object.
std::vector<ReportRow> report_rows_from_json(const std::string& text);

// Multinomial logistic regression trained on a random half of the rows,
// accuracy measured on the other half. Features are standardized.
double linear_probe_accuracy(const Tensor& features, const std::vector<int>& labels, int num_classes,
                             std::uint64_t seed, int epochs = 200);

// Mean colour of the pixels outside each image's mask: [N,3].
Tensor background_color_features(const Dataset& data);

}  // namespace crayon
