#include "ivgd/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "ivgd/errors.hpp"

namespace ivgd {

namespace {

void require_same_length(std::size_t a, std::size_t b) {
    if (a != b) throw ValidationError("length mismatch: " + std::to_string(a) + " vs " + std::to_string(b));
}

bool positive(double v) { return v >= 0.5; }

}  // namespace

MetricsReport classification_metrics(std::span<const double> labels, std::span<const double> truth) {
    require_same_length(labels.size(), truth.size());
    MetricsReport m;
    m.n = labels.size();
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const bool p = positive(labels[i]);
        const bool t = positive(truth[i]);
        if (p && t) ++m.tp;
        else if (p) ++m.fp;
        else if (t) ++m.fn;
        else ++m.tn;
    }
    const auto d = [](std::size_t v) { return static_cast<double>(v); };
    m.acc = m.n ? d(m.tp + m.tn) / d(m.n) : 0.0;
    m.pr = m.tp + m.fp ? d(m.tp) / d(m.tp + m.fp) : 0.0;
    m.re = m.tp + m.fn ? d(m.tp) / d(m.tp + m.fn) : 0.0;
    m.fs = m.pr + m.re > 0.0 ? 2.0 * m.pr * m.re / (m.pr + m.re) : 0.0;
    return m;
}

double auc(std::span<const double> scores, std::span<const double> truth) {
    require_same_length(scores.size(), truth.size());
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](auto a, auto b) { return scores[a] < scores[b]; });
    // Walk tie groups in ascending order; each positive beats every negative
    // strictly below it and half-beats negatives in its own group.
    double wins = 0.0;
    std::size_t neg_below = 0;
    std::size_t pos_total = 0;
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        std::size_t pos = 0;
        std::size_t neg = 0;
        while (j < order.size() && scores[order[j]] == scores[order[i]]) {
            (positive(truth[order[j]]) ? pos : neg)++;
            ++j;
        }
        wins += static_cast<double>(pos) * static_cast<double>(neg_below) +
                0.5 * static_cast<double>(pos) * static_cast<double>(neg);
        neg_below += neg;
        pos_total += pos;
        i = j;
    }
    if (pos_total == 0 || neg_below == 0) throw ValidationError("AUC undefined: truth has a single class");
    return wins / (static_cast<double>(pos_total) * static_cast<double>(neg_below));
}

std::vector<RocPoint> roc_points(std::span<const double> scores, std::span<const double> truth) {
    require_same_length(scores.size(), truth.size());
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](auto a, auto b) { return scores[a] > scores[b]; });
    std::size_t pos_total = 0;
    for (double t : truth) pos_total += positive(t);
    const std::size_t neg_total = truth.size() - pos_total;
    if (pos_total == 0 || neg_total == 0) throw ValidationError("ROC undefined: truth has a single class");

    std::vector<RocPoint> pts{{0.0, 0.0}};
    std::size_t tp = 0;
    std::size_t fp = 0;
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        while (j < order.size() && scores[order[j]] == scores[order[i]]) {
            (positive(truth[order[j]]) ? tp : fp)++;
            ++j;
        }
        pts.push_back({static_cast<double>(fp) / static_cast<double>(neg_total),
                       static_cast<double>(tp) / static_cast<double>(pos_total)});
        i = j;
    }
    return pts;
}

double trapezoid_area(std::span<const RocPoint> points) {
    double area = 0.0;
    for (std::size_t i = 1; i < points.size(); ++i)
        area += (points[i].fpr - points[i - 1].fpr) * 0.5 * (points[i].tpr + points[i - 1].tpr);
    return area;
}

RegressionReport regression_metrics(std::span<const double> pred, std::span<const double> target) {
    require_same_length(pred.size(), target.size());
    RegressionReport r;
    if (pred.empty()) return r;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double d = pred[i] - target[i];
        r.mse += d * d;
        r.mae += std::abs(d);
    }
    r.mse /= static_cast<double>(pred.size());
    r.mae /= static_cast<double>(pred.size());
    return r;
}

void MetricsAccumulator::add(std::span<const double> scores, std::span<const double> labels,
                             std::span<const double> truth) {
    require_same_length(scores.size(), truth.size());
    require_same_length(labels.size(), truth.size());
    scores_.insert(scores_.end(), scores.begin(), scores.end());
    labels_.insert(labels_.end(), labels.begin(), labels.end());
    truth_.insert(truth_.end(), truth.begin(), truth.end());
}

MetricsReport MetricsAccumulator::report() const {
    auto m = classification_metrics(labels_, truth_);
    const bool two_classes = m.tp + m.fn > 0 && m.fp + m.tn > 0;
    m.auc = two_classes ? auc(scores_, truth_) : 0.0;
    return m;
}

std::string metrics_csv_header() { return "method,dataset,seed,acc,pr,re,fs,auc,tp,fp,tn,fn,n"; }

std::string metrics_csv_row(const std::string& method, const std::string& dataset, unsigned long long seed,
                            const MetricsReport& m) {
    char buf[512];
    std::snprintf(buf, sizeof buf, "%s,%s,%llu,%.6f,%.6f,%.6f,%.6f,%.6f,%zu,%zu,%zu,%zu,%zu", method.c_str(),
                  dataset.c_str(), seed, m.acc, m.pr, m.re, m.fs, m.auc, m.tp, m.fp, m.tn, m.fn, m.n);
    return buf;
}

std::string roc_csv(std::span<const RocPoint> points) {
    std::string out = "fpr,tpr\n";
    char buf[64];
    for (const auto& p : points) {
        std::snprintf(buf, sizeof buf, "%.17g,%.17g\n", p.fpr, p.tpr);
        out += buf;
    }
    return out;
}

}  // namespace ivgd
