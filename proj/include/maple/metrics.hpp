#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "maple/chi2.hpp"
#include "maple/errors.hpp"

namespace maple {

inline double accuracy(std::span<const int> predictions, std::span<const int> labels) {
    if (predictions.size() != labels.size() || predictions.empty())
        throw DataError("accuracy: need equal-sized nonempty inputs");
    std::size_t correct = 0;
    for (std::size_t i = 0; i < predictions.size(); ++i)
        if (predictions[i] == labels[i]) ++correct;
    return static_cast<double>(correct) / static_cast<double>(predictions.size());
}

struct CalibrationBin {
    double mean_confidence = 0.0;
    double accuracy = 0.0;
    std::size_t count = 0;
};

namespace detail {

// Equal-width bins over [0, 1], right-closed: bin b covers (b/B, (b+1)/B],
// except bin 0 which also takes confidence 0.
inline std::size_t confidence_bin(double confidence, std::size_t num_bins) {
    if (confidence <= 0.0) return 0;
    double scaled = std::ceil(confidence * static_cast<double>(num_bins)) - 1.0;
    if (scaled < 0.0) scaled = 0.0;
    auto b = static_cast<std::size_t>(scaled);
    return b >= num_bins ? num_bins - 1 : b;
}

}  // namespace detail

inline std::vector<CalibrationBin> calibration_curve(std::span<const double> confidences,
                                                     const std::vector<bool>& correct,
                                                     std::size_t num_bins) {
    if (num_bins < 1) throw ConfigError("calibration_curve: need at least one bin");
    if (confidences.size() != correct.size() || confidences.empty())
        throw DataError("calibration_curve: need equal-sized nonempty inputs");
    std::vector<CalibrationBin> bins(num_bins);
    std::vector<double> hits(num_bins, 0.0);
    for (std::size_t i = 0; i < confidences.size(); ++i) {
        std::size_t b = detail::confidence_bin(confidences[i], num_bins);
        bins[b].mean_confidence += confidences[i];
        hits[b] += correct[i] ? 1.0 : 0.0;
        ++bins[b].count;
    }
    for (std::size_t b = 0; b < num_bins; ++b) {
        if (bins[b].count == 0) continue;
        bins[b].mean_confidence /= static_cast<double>(bins[b].count);
        bins[b].accuracy = hits[b] / static_cast<double>(bins[b].count);
    }
    return bins;
}

// Sum over bins of (n_b / N) |accuracy(b) - confidence(b)|.
inline double ece(std::span<const double> confidences, const std::vector<bool>& correct,
                  std::size_t num_bins) {
    auto bins = calibration_curve(confidences, correct, num_bins);
    double total = 0.0;
    for (const auto& bin : bins) {
        if (bin.count == 0) continue;
        total += (static_cast<double>(bin.count) / static_cast<double>(confidences.size())) *
                 std::abs(bin.accuracy - bin.mean_confidence);
    }
    return total;
}

// -mean(log p); probabilities are clamped to 1e-12 and the number of clamped
// entries is reported through `clamped` when requested.
inline double nll(std::span<const double> prob_of_true_class,
                  std::size_t* clamped = nullptr) {
    if (prob_of_true_class.empty()) throw DataError("nll: empty input");
    double total = 0.0;
    std::size_t clamp_count = 0;
    for (double p : prob_of_true_class) {
        if (p < 1e-12) {
            p = 1e-12;
            ++clamp_count;
        }
        total += std::log(p);
    }
    if (clamped != nullptr) *clamped = clamp_count;
    return -total / static_cast<double>(prob_of_true_class.size());
}

// Mann-Whitney statistic with the out-of-distribution side as positive:
// P(u_ood > u_id) + P(tie) / 2, computed by rank sums with average ranks.
inline double auroc(std::span<const double> id_uncertainties,
                    std::span<const double> ood_uncertainties) {
    const std::size_t n = id_uncertainties.size();
    const std::size_t m = ood_uncertainties.size();
    if (n == 0 || m == 0) throw DataError("auroc: both sample sets must be nonempty");
    struct Scored {
        double score;
        bool is_ood;
    };
    std::vector<Scored> all;
    all.reserve(n + m);
    for (double u : id_uncertainties) all.push_back({u, false});
    for (double u : ood_uncertainties) all.push_back({u, true});
    std::sort(all.begin(), all.end(),
              [](const Scored& a, const Scored& b) { return a.score < b.score; });
    double rank_sum_ood = 0.0;
    std::size_t i = 0;
    while (i < all.size()) {
        std::size_t j = i;
        while (j < all.size() && all[j].score == all[i].score) ++j;
        // average rank over the tie group, 1-based
        double avg_rank = 0.5 * static_cast<double>(i + 1 + j);
        for (std::size_t t = i; t < j; ++t)
            if (all[t].is_ood) rank_sum_ood += avg_rank;
        i = j;
    }
    double u_stat = rank_sum_ood - 0.5 * static_cast<double>(m) * static_cast<double>(m + 1);
    return u_stat / (static_cast<double>(n) * static_cast<double>(m));
}

struct PrPoint {
    double recall = 0.0;
    double precision = 0.0;
};

// Precision/recall points swept over descending score thresholds placed at
// sample boundaries (one point per distinct score).
inline std::vector<PrPoint> pr_curve(std::span<const double> id_uncertainties,
                                     std::span<const double> ood_uncertainties) {
    if (ood_uncertainties.empty())
        throw DataError("pr_curve: no positive (out-of-distribution) samples; undefined");
    if (id_uncertainties.empty())
        throw DataError("pr_curve: no negative (in-distribution) samples");
    struct Scored {
        double score;
        bool is_ood;
    };
    std::vector<Scored> all;
    all.reserve(id_uncertainties.size() + ood_uncertainties.size());
    for (double u : id_uncertainties) all.push_back({u, false});
    for (double u : ood_uncertainties) all.push_back({u, true});
    std::sort(all.begin(), all.end(),
              [](const Scored& a, const Scored& b) { return a.score > b.score; });
    const double total_pos = static_cast<double>(ood_uncertainties.size());
    std::vector<PrPoint> points;
    double tp = 0.0, fp = 0.0;
    std::size_t i = 0;
    while (i < all.size()) {
        std::size_t j = i;
        while (j < all.size() && all[j].score == all[i].score) ++j;
        for (std::size_t t = i; t < j; ++t) {
            if (all[t].is_ood)
                tp += 1.0;
            else
                fp += 1.0;
        }
        points.push_back({tp / total_pos, tp / (tp + fp)});
        i = j;
    }
    return points;
}

// Area under the monotone (right-max interpolated) precision-recall curve,
// integrated step-wise over recall. Never falls below the positive-class
// prevalence.
inline double aupr(std::span<const double> id_uncertainties,
                   std::span<const double> ood_uncertainties) {
    auto points = pr_curve(id_uncertainties, ood_uncertainties);
    std::vector<double> interp(points.size());
    double running = 0.0;
    for (std::size_t i = points.size(); i-- > 0;) {
        running = std::max(running, points[i].precision);
        interp[i] = running;
    }
    double area = 0.0;
    double prev_recall = 0.0;
    for (std::size_t i = 0; i < points.size(); ++i) {
        area += (points[i].recall - prev_recall) * interp[i];
        prev_recall = points[i].recall;
    }
    return area;
}

inline std::vector<std::size_t> uncertainty_histogram(std::span<const double> values,
                                                      std::size_t num_bins) {
    if (num_bins < 1) throw ConfigError("uncertainty_histogram: need at least one bin");
    std::vector<std::size_t> counts(num_bins, 0);
    for (double v : values) ++counts[detail::confidence_bin(v, num_bins)];
    return counts;
}

// Mean absolute difference between the sorted squared distances and the
// chi-squared quantiles at (r - 0.5) / N.
inline double qq_error(std::span<const double> md_squared, int dof) {
    const std::size_t n = md_squared.size();
    if (n < 10) throw DataError("qq_error: need at least 10 samples");
    std::vector<double> sorted(md_squared.begin(), md_squared.end());
    std::sort(sorted.begin(), sorted.end());
    double total = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
        double p = (static_cast<double>(r) + 0.5) / static_cast<double>(n);
        total += std::abs(sorted[r] - chi2_inv(p, dof));
    }
    return total / static_cast<double>(n);
}

struct OodMetrics {
    std::string name;
    double auroc = 0.0;
    double aupr = 0.0;
    std::vector<std::size_t> uncertainty_histogram;
    std::vector<PrPoint> pr_points;
};

struct EvalReport {
    double accuracy_softmax = 0.0;
    double accuracy_md = 0.0;
    double ece = 0.0;
    double nll = 0.0;
    double qq_error = 0.0;
    std::size_t num_classes = 0;
    std::size_t reduced_dim = 0;  // 0 when no projection was used
    std::vector<CalibrationBin> calibration_bins;
    std::vector<std::size_t> id_uncertainty_histogram;
    std::vector<OodMetrics> ood;
    double latency_ms_per_sample = 0.0;
};

}  // namespace maple
