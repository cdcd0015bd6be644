#include "ecgdelin/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ecgdelin/util.hpp"

namespace ecg::eval {

std::int64_t ConfusionMatrix::total() const {
    std::int64_t sum = 0;
    for (const auto& row : counts)
        for (std::int64_t v : row) sum += v;
    return sum;
}

std::int64_t ConfusionMatrix::trace() const {
    std::int64_t sum = 0;
    for (int c = 0; c < kNumClasses; ++c) sum += counts[static_cast<std::size_t>(c)][static_cast<std::size_t>(c)];
    return sum;
}

void ConfusionMatrix::add(const ConfusionMatrix& other) {
    for (int a = 0; a < kNumClasses; ++a)
        for (int p = 0; p < kNumClasses; ++p)
            counts[static_cast<std::size_t>(a)][static_cast<std::size_t>(p)] +=
                other.counts[static_cast<std::size_t>(a)][static_cast<std::size_t>(p)];
}

ConfusionMatrix confusion_matrix(const std::vector<SampleClass>& y_true,
                                 const std::vector<SampleClass>& y_pred) {
    if (y_true.size() != y_pred.size()) throw Error("confusion_matrix: length mismatch");
    ConfusionMatrix cm;
    for (std::size_t i = 0; i < y_true.size(); ++i) {
        ++cm.counts[static_cast<std::size_t>(y_true[i])][static_cast<std::size_t>(y_pred[i])];
    }
    return cm;
}

namespace {

std::optional<double> ratio(std::int64_t num, std::int64_t den) {
    if (den == 0) return std::nullopt;
    return static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace

MetricsReport class_metrics(const ConfusionMatrix& cm, double beta, FScoreFormula formula) {
    MetricsReport report;
    report.beta = beta;
    const std::int64_t total = cm.total();

    for (int c = 0; c < kNumClasses; ++c) {
        const auto cu = static_cast<std::size_t>(c);
        ClassMetrics& m = report.per_class[cu];
        m.tp = cm.counts[cu][cu];
        std::int64_t row_sum = 0, col_sum = 0;
        for (int k = 0; k < kNumClasses; ++k) {
            row_sum += cm.counts[cu][static_cast<std::size_t>(k)];
            col_sum += cm.counts[static_cast<std::size_t>(k)][cu];
        }
        m.fn = row_sum - m.tp;
        m.fp = col_sum - m.tp;
        m.tn = total - m.tp - m.fp - m.fn;
        m.sensitivity = ratio(m.tp, m.tp + m.fn);
        m.precision = ratio(m.tp, m.tp + m.fp);
        if (m.sensitivity && m.precision) {
            const double p = *m.precision, s = *m.sensitivity;
            const double den = beta * beta * p + s;
            if (den > 0.0) {
                const double num = (formula == FScoreFormula::AsWritten) ? (1.0 + beta)
                                                                         : (1.0 + beta * beta);
                m.f_score = num * p * s / den;
            }
        }
    }
    report.accuracy = total > 0 ? static_cast<double>(cm.trace()) / static_cast<double>(total) : 0.0;
    return report;
}

AveragedMetrics averaged_metrics(const ConfusionMatrix& cm) {
    const MetricsReport per = class_metrics(cm);
    AveragedMetrics avg;

    std::int64_t tp = 0, fp = 0, fn = 0;
    for (const auto& m : per.per_class) {
        tp += m.tp;
        fp += m.fp;
        fn += m.fn;
    }
    avg.micro_precision = tp + fp > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
    avg.micro_sensitivity = tp + fn > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;

    double p_sum = 0.0, s_sum = 0.0;
    int p_n = 0, s_n = 0;
    for (const auto& m : per.per_class) {
        if (m.precision) {
            p_sum += *m.precision;
            ++p_n;
        } else {
            ++avg.macro_excluded_precision;
        }
        if (m.sensitivity) {
            s_sum += *m.sensitivity;
            ++s_n;
        } else {
            ++avg.macro_excluded_sensitivity;
        }
    }
    if (p_n > 0) avg.macro_precision = p_sum / p_n;
    if (s_n > 0) avg.macro_sensitivity = s_sum / s_n;
    return avg;
}

RocCurve binary_roc(const std::vector<std::uint8_t>& labels, const std::vector<double>& scores) {
    if (labels.size() != scores.size()) throw Error("binary_roc: length mismatch");
    std::int64_t n_pos = 0;
    for (std::uint8_t v : labels) n_pos += v ? 1 : 0;
    const std::int64_t n_neg = static_cast<std::int64_t>(labels.size()) - n_pos;
    if (n_pos == 0 || n_neg == 0) throw Error("binary_roc: need both classes present");

    std::vector<std::size_t> order(labels.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

    RocCurve curve;
    curve.fpr.push_back(0.0);
    curve.tpr.push_back(0.0);
    std::int64_t tp = 0, fp = 0;
    std::size_t i = 0;
    while (i < order.size()) {
        const double threshold = scores[order[i]];
        while (i < order.size() && scores[order[i]] == threshold) {
            if (labels[order[i]]) ++tp;
            else ++fp;
            ++i;
        }
        curve.fpr.push_back(static_cast<double>(fp) / static_cast<double>(n_neg));
        curve.tpr.push_back(static_cast<double>(tp) / static_cast<double>(n_pos));
    }
    double auc = 0.0;
    for (std::size_t k = 1; k < curve.fpr.size(); ++k) {
        auc += (curve.fpr[k] - curve.fpr[k - 1]) * (curve.tpr[k] + curve.tpr[k - 1]) / 2.0;
    }
    curve.auc = auc;
    return curve;
}

namespace {

/// Staircase value of a curve at query FPR: the TPR of the last sweep point
/// whose FPR does not exceed the query.
std::vector<double> resample_tpr(const RocCurve& curve, const std::vector<double>& grid) {
    std::vector<double> out(grid.size(), 0.0);
    std::size_t idx = 0;
    double last_tpr = 0.0;
    for (std::size_t g = 0; g < grid.size(); ++g) {
        while (idx < curve.fpr.size() && curve.fpr[idx] <= grid[g] + 1e-15) {
            last_tpr = curve.tpr[idx];
            ++idx;
        }
        out[g] = last_tpr;
    }
    return out;
}

}  // namespace

RocSet roc_auc(const std::vector<SampleClass>& y_true, const std::vector<double>& scores,
               std::size_t n_rows) {
    if (scores.size() != n_rows * kNumClasses) throw Error("roc_auc: score shape mismatch");
    if (y_true.size() != n_rows) throw Error("roc_auc: label count mismatch");
    for (double v : scores) {
        if (!std::isfinite(v)) throw Error("roc_auc: non-finite score");
    }

    RocSet set;
    std::array<std::int64_t, kNumClasses> support{};
    for (SampleClass c : y_true) ++support[static_cast<std::size_t>(c)];

    for (int c = 0; c < kNumClasses; ++c) {
        const auto cu = static_cast<std::size_t>(c);
        if (support[cu] == 0 || support[cu] == static_cast<std::int64_t>(n_rows)) continue;
        std::vector<std::uint8_t> labels(n_rows);
        std::vector<double> class_scores(n_rows);
        for (std::size_t i = 0; i < n_rows; ++i) {
            labels[i] = y_true[i] == static_cast<SampleClass>(c) ? 1 : 0;
            class_scores[i] = scores[i * kNumClasses + cu];
        }
        set.per_class[cu] = binary_roc(labels, class_scores);
    }

    // Micro: every (sample, class) pair is one binary decision.
    std::vector<std::uint8_t> micro_labels(n_rows * kNumClasses);
    for (std::size_t i = 0; i < n_rows; ++i) {
        micro_labels[i * kNumClasses + static_cast<std::size_t>(y_true[i])] = 1;
    }
    set.micro = binary_roc(micro_labels, scores);

    constexpr int kGridPoints = 201;
    std::vector<double> grid(kGridPoints);
    for (int g = 0; g < kGridPoints; ++g) grid[static_cast<std::size_t>(g)] = static_cast<double>(g) / (kGridPoints - 1);

    std::vector<std::vector<double>> tprs;
    for (const auto& curve : set.per_class) {
        if (curve) tprs.push_back(resample_tpr(*curve, grid));
    }
    if (!tprs.empty()) {
        RocCurve macro;
        macro.fpr = grid;
        macro.tpr.assign(grid.size(), 0.0);
        for (const auto& t : tprs) {
            for (std::size_t g = 0; g < grid.size(); ++g) macro.tpr[g] += t[g];
        }
        for (double& v : macro.tpr) v /= static_cast<double>(tprs.size());
        double auc = 0.0;
        for (std::size_t k = 1; k < grid.size(); ++k) {
            auc += (macro.fpr[k] - macro.fpr[k - 1]) * (macro.tpr[k] + macro.tpr[k - 1]) / 2.0;
        }
        macro.auc = auc;
        set.macro = macro;
    }
    return set;
}

BeatMatchResult match_beats(const std::vector<double>& predicted,
                            const std::vector<double>& reference, double tolerance) {
    if (tolerance <= 0.0) throw Error("match_beats: tolerance must be positive");
    BeatMatchResult result;
    result.n_beats = static_cast<std::int64_t>(reference.size());

    std::size_t i = 0, j = 0;
    while (i < predicted.size() && j < reference.size()) {
        const double d = predicted[i] - reference[j];
        if (std::abs(d) <= tolerance) {
            ++result.tp;
            ++i;
            ++j;
        } else if (d < 0.0) {
            ++i;
        } else {
            ++j;
        }
    }
    result.fp = static_cast<std::int64_t>(predicted.size()) - result.tp;
    result.fn = result.n_beats - result.tp;

    if (result.n_beats > 0) {
        result.sensitivity_percent = 100.0 * static_cast<double>(result.tp) / static_cast<double>(result.n_beats);
        result.error_rate_percent =
            100.0 * static_cast<double>(result.fp + result.fn) / static_cast<double>(result.n_beats);
    }
    if (!predicted.empty()) {
        result.precision_percent =
            100.0 * static_cast<double>(result.tp) / static_cast<double>(predicted.size());
    }
    return result;
}

const char* fiducial_name(Fiducial f) {
    switch (f) {
        case Fiducial::POn: return "P_on";
        case Fiducial::PPeak: return "P_peak";
        case Fiducial::PEnd: return "P_end";
        case Fiducial::QrsOn: return "QRS_on";
        case Fiducial::QrsEnd: return "QRS_end";
        case Fiducial::TPeak: return "T_peak";
        case Fiducial::TEnd: return "T_end";
    }
    return "?";
}

std::vector<Fiducial> all_fiducials() {
    return {Fiducial::POn,    Fiducial::PPeak, Fiducial::PEnd, Fiducial::QrsOn,
            Fiducial::QrsEnd, Fiducial::TPeak, Fiducial::TEnd};
}

namespace {

SampleClass fiducial_class(Fiducial f) {
    switch (f) {
        case Fiducial::POn:
        case Fiducial::PPeak:
        case Fiducial::PEnd: return SampleClass::P;
        case Fiducial::QrsOn:
        case Fiducial::QrsEnd: return SampleClass::QRS;
        case Fiducial::TPeak:
        case Fiducial::TEnd: return SampleClass::T;
    }
    return SampleClass::NW;
}

enum class Kind { Onset, Peak, Offset };

Kind fiducial_kind(Fiducial f) {
    switch (f) {
        case Fiducial::POn:
        case Fiducial::QrsOn: return Kind::Onset;
        case Fiducial::PPeak:
        case Fiducial::TPeak: return Kind::Peak;
        default: return Kind::Offset;
    }
}

}  // namespace

std::map<Fiducial, BeatMatchResult> boundary_metrics(
    const std::vector<delin::WaveSegment>& predicted,
    const std::vector<dataset::AnnotatedWave>& reference, double tolerance) {
    std::map<Fiducial, BeatMatchResult> table;
    for (Fiducial f : all_fiducials()) {
        const SampleClass cls = fiducial_class(f);
        const Kind kind = fiducial_kind(f);
        std::vector<double> pred, ref;
        for (const auto& seg : predicted) {
            if (seg.wave_class != cls) continue;
            pred.push_back(static_cast<double>(kind == Kind::Onset ? seg.onset
                                               : kind == Kind::Peak ? seg.peak
                                                                    : seg.offset));
        }
        for (const auto& wave : reference) {
            if (wave.wave_class != cls) continue;
            ref.push_back(static_cast<double>(kind == Kind::Onset ? wave.onset
                                              : kind == Kind::Peak ? wave.peak
                                                                   : wave.offset));
        }
        std::sort(pred.begin(), pred.end());
        std::sort(ref.begin(), ref.end());
        table[f] = match_beats(pred, ref, tolerance);
    }
    return table;
}

}  // namespace ecg::eval
