#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ecgdelin/dataset.hpp"
#include "ecgdelin/delineate.hpp"

namespace ecg::eval {

using dataset::SampleClass;
using dataset::kNumClasses;

/// Rows are actual classes, columns are predicted classes.
struct ConfusionMatrix {
    std::array<std::array<std::int64_t, kNumClasses>, kNumClasses> counts{};

    std::int64_t total() const;
    std::int64_t trace() const;
    void add(const ConfusionMatrix& other);
};

ConfusionMatrix confusion_matrix(const std::vector<SampleClass>& y_true,
                                 const std::vector<SampleClass>& y_pred);

enum class FScoreFormula {
    AsWritten,  // (1 + beta)   * P * S / (beta^2 * P + S)
    Standard,   // (1 + beta^2) * P * S / (beta^2 * P + S)
};

/// One-vs-rest counts and ratios for a single class. Ratios with a zero
/// denominator are reported absent rather than as 0.
struct ClassMetrics {
    std::int64_t tp = 0, fp = 0, fn = 0, tn = 0;
    std::optional<double> sensitivity;
    std::optional<double> precision;
    std::optional<double> f_score;
};

struct MetricsReport {
    std::array<ClassMetrics, kNumClasses> per_class;
    double accuracy = 0.0;  // trace / total
    double beta = 1.0;
};

MetricsReport class_metrics(const ConfusionMatrix& cm, double beta = 1.0,
                            FScoreFormula formula = FScoreFormula::AsWritten);

/// Micro metrics pool TP/FP/FN across classes; macro metrics average the
/// defined per-class values and report how many classes were excluded.
struct AveragedMetrics {
    double micro_precision = 0.0;
    double micro_sensitivity = 0.0;
    std::optional<double> macro_precision;
    std::optional<double> macro_sensitivity;
    int macro_excluded_precision = 0;
    int macro_excluded_sensitivity = 0;
};

AveragedMetrics averaged_metrics(const ConfusionMatrix& cm);

struct RocCurve {
    std::vector<double> fpr;
    std::vector<double> tpr;
    double auc = 0.0;
};

struct RocSet {
    std::array<std::optional<RocCurve>, kNumClasses> per_class;
    RocCurve micro;
    std::optional<RocCurve> macro;
};

/// One-vs-rest ROC curves over sorted unique score thresholds, with
/// trapezoidal AUC. Micro-averaging pools all (sample, class) binary
/// decisions; macro-averaging resamples each class curve on a 201-point FPR
/// grid and averages the TPR. Classes absent from y_true (or present in every
/// sample) have no curve and are excluded from the macro average.
RocSet roc_auc(const std::vector<SampleClass>& y_true, const std::vector<double>& scores,
               std::size_t n_rows);

/// ROC for a single binary problem; exposed for tests.
RocCurve binary_roc(const std::vector<std::uint8_t>& labels, const std::vector<double>& scores);

struct BeatMatchResult {
    std::int64_t n_beats = 0;  // reference count
    std::int64_t tp = 0, fp = 0, fn = 0;
    std::optional<double> sensitivity_percent;
    std::optional<double> precision_percent;
    std::optional<double> error_rate_percent;  // 100 * (FP + FN) / n_beats
};

/// One-to-one matching of two sorted event lists: events pair up in time
/// order whenever they fall within +/- tolerance, which maximizes the match
/// count and keeps the result symmetric (swapping the lists swaps FP and FN).
/// A prediction inside the window of several references takes the earliest.
BeatMatchResult match_beats(const std::vector<double>& predicted,
                            const std::vector<double>& reference, double tolerance);

enum class Fiducial { POn, PPeak, PEnd, QrsOn, QrsEnd, TPeak, TEnd };

const char* fiducial_name(Fiducial f);
std::vector<Fiducial> all_fiducials();

/// Applies match_beats independently per fiducial column.
std::map<Fiducial, BeatMatchResult> boundary_metrics(
    const std::vector<delin::WaveSegment>& predicted,
    const std::vector<dataset::AnnotatedWave>& reference, double tolerance);

}  // namespace ecg::eval
