#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace ivgd {

/// Node-level classification metrics. Degenerate precision / recall (no
/// predicted or no true positives) are reported as 0 rather than NaN.
struct MetricsReport {
    double acc = 0.0;
    double pr = 0.0;
    double re = 0.0;
    double fs = 0.0;
    double auc = 0.0;
    std::size_t tp = 0;
    std::size_t fp = 0;
    std::size_t tn = 0;
    std::size_t fn = 0;
    std::size_t n = 0;
};

MetricsReport classification_metrics(std::span<const double> labels, std::span<const double> truth);

/// Mann-Whitney AUC: P(score_pos > score_neg) + 0.5 P(tie), exact.
double auc(std::span<const double> scores, std::span<const double> truth);

struct RocPoint {
    double fpr;
    double tpr;
};

/// Staircase from (0,0) to (1,1), one point per distinct score threshold.
std::vector<RocPoint> roc_points(std::span<const double> scores, std::span<const double> truth);
double trapezoid_area(std::span<const RocPoint> points);

struct RegressionReport {
    double mse = 0.0;
    double mae = 0.0;
};

RegressionReport regression_metrics(std::span<const double> pred, std::span<const double> target);

/// Pools node-level decisions over many samples (micro-average).
class MetricsAccumulator {
public:
    void add(std::span<const double> scores, std::span<const double> labels, std::span<const double> truth);
    /// Classification metrics over all pooled nodes plus pooled AUC (0 when
    /// the pooled truth has a single class).
    MetricsReport report() const;
    const std::vector<double>& scores() const { return scores_; }
    const std::vector<double>& truth() const { return truth_; }

private:
    std::vector<double> scores_;
    std::vector<double> labels_;
    std::vector<double> truth_;
};

std::string metrics_csv_header();
std::string metrics_csv_row(const std::string& method, const std::string& dataset, unsigned long long seed,
                            const MetricsReport& m);
std::string roc_csv(std::span<const RocPoint> points);

}  // namespace ivgd
