#pragma once

// Experiment protocols: FGSM ε-sweeps, the paired CW study, transfer tables
// and 2-D decision-boundary grids.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "gpdnn/attacks.hpp"
#include "gpdnn/csv.hpp"
#include "gpdnn/datasets.hpp"
#include "gpdnn/metrics.hpp"
#include "gpdnn/model.hpp"

namespace gpdnn {

/// A model plus the name it is reported under.
struct NamedModel {
    std::string name;
    const Model* model = nullptr;
};

struct SweepRow {
    double epsilon = 0.0;
    std::vector<EvalReport> reports;  // one per evaluated model
};

struct SweepReport {
    std::vector<SweepRow> rows;

    CsvTable table() const {
        CsvTable t({"epsilon", "model", "error", "ll", "entropy"});
        for (const auto& row : rows)
            for (const auto& r : row.reports) t.add(row.epsilon, r.model, r.error, r.ll, r.entropy);
        return t;
    }
};

/// FGSM examples are generated on `source` only and every model in `models` is
/// scored on the same perturbed images.
inline SweepReport epsilon_sweep(const std::vector<NamedModel>& models, const Model& source, const Dataset& data,
                                 const std::vector<double>& epsilons) {
    for (std::size_t k = 1; k < epsilons.size(); ++k) {
        if (!(epsilons[k] > epsilons[k - 1])) throw ContractError("epsilon_sweep: epsilons must be strictly increasing");
    }
    for (const auto& m : models) {
        if (m.model->spec.input != source.spec.input) throw ShapeError("epsilon_sweep: models differ in input shape");
    }
    SweepReport report;
    for (double eps : epsilons) {
        const Tensor adv = fgsm_images(source, data.images, data.labels, FGSMConfig{eps, data.lo, data.hi});
        SweepRow row{eps, {}};
        for (const auto& m : models) {
            EvalReport r = evaluate(*m.model, adv, data.labels, data.name);
            r.model = m.name;
            row.reports.push_back(std::move(r));
        }
        report.rows.push_back(std::move(row));
    }
    return report;
}

/// Indices of the first `limit` items both models classify correctly.
inline std::vector<std::size_t> correct_for_all(const std::vector<const Model*>& models, const Dataset& data,
                                                std::size_t limit) {
    std::vector<std::vector<std::size_t>> preds;
    for (const Model* m : models) preds.push_back(argmax_rows(predict_log_probs(*m, data.images)));
    std::vector<std::size_t> keep;
    for (std::size_t i = 0; i < data.size() && keep.size() < limit; ++i) {
        bool ok = true;
        for (const auto& p : preds) ok = ok && p[i] == data.labels[i];
        if (ok) keep.push_back(i);
    }
    return keep;
}

inline constexpr double kHistogramBinWidth = 0.25;

struct HistogramBin {
    double lo = 0.0, hi = 0.0;
    std::size_t count = 0;
};

/// Fixed-width bins aligned to multiples of `width`, covering every value.
inline std::vector<HistogramBin> histogram(const std::vector<double>& values, double width = kHistogramBinWidth) {
    if (values.empty()) return {};
    std::map<long long, std::size_t> counts;
    for (double v : values) ++counts[static_cast<long long>(std::floor(v / width))];
    std::vector<HistogramBin> bins;
    for (long long k = counts.begin()->first; k <= counts.rbegin()->first; ++k) {
        const auto it = counts.find(k);
        bins.push_back({static_cast<double>(k) * width, static_cast<double>(k + 1) * width, it == counts.end() ? 0 : it->second});
    }
    return bins;
}

struct CwStudy {
    std::string name_a, name_b;
    std::vector<std::size_t> indices;  // dataset rows attacked
    std::vector<AttackResult> a, b;
    std::size_t failures_a = 0, failures_b = 0;
    // scored[i][j]: model j evaluated on the successful adversarials generated on model i.
    EvalReport scored[2][2];
    std::vector<std::size_t> paired;  // rows of `indices` where both attacks succeeded
    std::vector<double> differences;  // d_b − d_a over `paired`
    std::vector<HistogramBin> bins;

    double mean_distance(bool model_b) const {
        if (paired.empty()) return NAN;
        double s = 0.0;
        for (std::size_t k : paired) s += model_b ? b[k].l2 : a[k].l2;
        return s / static_cast<double>(paired.size());
    }

    double mean_difference() const {
        if (differences.empty()) return NAN;
        double s = 0.0;
        for (double d : differences) s += d;
        return s / static_cast<double>(differences.size());
    }

    CsvTable table() const {
        CsvTable t({"index", "model", "success", "l2", "clean_pred", "adv_pred"});
        for (std::size_t k = 0; k < indices.size(); ++k) {
            t.add(indices[k], name_a, a[k].success, a[k].l2, a[k].clean_pred, a[k].adv_pred);
            t.add(indices[k], name_b, b[k].success, b[k].l2, b[k].clean_pred, b[k].adv_pred);
        }
        return t;
    }

    CsvTable transfer_table() const {
        CsvTable t({"attacked", "scored", "n", "error", "ll"});
        const std::string names[2] = {name_a, name_b};
        for (int i = 0; i < 2; ++i)
            for (int j = 0; j < 2; ++j) t.add(names[i], names[j], scored[i][j].n, scored[i][j].error, scored[i][j].ll);
        return t;
    }

    CsvTable paired_table() const {
        CsvTable t({"index", "d_a", "d_b", "diff"});
        for (std::size_t p = 0; p < paired.size(); ++p) {
            const std::size_t k = paired[p];
            t.add(indices[k], a[k].l2, b[k].l2, differences[p]);
        }
        return t;
    }

    CsvTable histogram_table() const {
        CsvTable t({"bin_lo", "bin_hi", "count"});
        for (const auto& bin : bins) t.add(bin.lo, bin.hi, bin.count);
        return t;
    }
};

/// CW on both models over `rows` of `data` (which both must classify correctly).
inline CwStudy cw_study(const NamedModel& model_a, const NamedModel& model_b, const Dataset& data,
                        std::vector<std::size_t> rows, CWConfig cfg) {
    cfg.lo = data.lo;
    cfg.hi = data.hi;
    const Dataset subset = data.subset(rows);
    CwStudy s;
    s.name_a = model_a.name;
    s.name_b = model_b.name;
    s.indices = std::move(rows);
    s.a = cw_l2(*model_a.model, subset.images, subset.labels, cfg);
    s.b = cw_l2(*model_b.model, subset.images, subset.labels, cfg);
    const std::vector<AttackResult>* runs[2] = {&s.a, &s.b};
    const Model* models[2] = {model_a.model, model_b.model};
    const std::string names[2] = {model_a.name, model_b.name};
    for (int i = 0; i < 2; ++i) {
        std::vector<Tensor> images;
        std::vector<std::size_t> labels;
        for (const auto& r : *runs[i]) {
            if (r.success) {
                images.push_back(r.adversarial);
                labels.push_back(r.true_label);
            } else {
                ++(i == 0 ? s.failures_a : s.failures_b);
            }
        }
        for (int j = 0; j < 2; ++j) {
            if (images.empty()) {
                s.scored[i][j] = EvalReport{data.name + "-cw-" + names[i], names[j], 0, NAN, NAN, NAN};
                continue;
            }
            Shape shape = images.front().shape();
            shape.insert(shape.begin(), images.size());
            std::vector<double> flat;
            for (const Tensor& t : images) flat.insert(flat.end(), t.data().begin(), t.data().end());
            EvalReport r = evaluate(*models[j], Tensor(shape, std::move(flat)), labels, data.name + "-cw-" + names[i]);
            r.model = names[j];
            s.scored[i][j] = r;
        }
    }
    for (std::size_t k = 0; k < s.indices.size(); ++k) {
        if (s.a[k].success && s.b[k].success) {
            s.paired.push_back(k);
            s.differences.push_back(s.b[k].l2 - s.a[k].l2);
        }
    }
    s.bins = histogram(s.differences);
    return s;
}

/// Every model on every dataset, Table-1 style.
inline std::vector<EvalReport> transfer_test(const std::vector<NamedModel>& models, const std::vector<const Dataset*>& datasets) {
    std::vector<EvalReport> out;
    for (const Dataset* d : datasets) {
        const Shape item = detail::image_shape(d->images);
        for (const auto& m : models) {
            if (item != m.model->spec.input) {
                throw ShapeError("transfer_test: dataset " + d->name + " has items of shape " + shape_string(item) +
                                 " but model " + m.name + " expects " + shape_string(m.model->spec.input));
            }
            EvalReport r = evaluate(*m.model, *d);
            r.model = m.name;
            out.push_back(std::move(r));
        }
    }
    return out;
}

struct GridPoint {
    double x0 = 0.0, x1 = 0.0;
    double p_class1 = 0.0;
    double max_prob = 0.0;
    double entropy = 0.0;
};

struct GridSpec {
    double x0_lo = -3.0, x0_hi = 4.0;
    double x1_lo = -3.0, x1_hi = 3.0;
    std::size_t n0 = 200, n1 = 200;
};

/// Predictive p(class 1) and entropy on a regular grid over a 2-D input space.
inline std::vector<GridPoint> boundary_grid(const Model& model, const GridSpec& spec = {}) {
    if (model.spec.input != Shape{2}) throw ShapeError("grid: model input must be two-dimensional, got " + shape_string(model.spec.input));
    if (spec.n0 < 2 || spec.n1 < 2) throw ContractError("grid: need at least two points per axis");
    const std::size_t n = spec.n0 * spec.n1;
    Tensor pts(Shape{n, 2});
    double* p = pts.mutable_ptr();
    for (std::size_t i = 0; i < spec.n0; ++i) {
        for (std::size_t j = 0; j < spec.n1; ++j) {
            const std::size_t k = i * spec.n1 + j;
            p[2 * k] = spec.x0_lo + (spec.x0_hi - spec.x0_lo) * static_cast<double>(i) / static_cast<double>(spec.n0 - 1);
            p[2 * k + 1] = spec.x1_lo + (spec.x1_hi - spec.x1_lo) * static_cast<double>(j) / static_cast<double>(spec.n1 - 1);
        }
    }
    const Tensor lp = predict_log_probs(model, pts, 2000);
    const std::size_t classes = lp.dim(1);
    std::vector<GridPoint> out(n);
    for (std::size_t k = 0; k < n; ++k) {
        GridPoint& g = out[k];
        g.x0 = p[2 * k];
        g.x1 = p[2 * k + 1];
        for (std::size_t c = 0; c < classes; ++c) {
            const double l = lp[k * classes + c];
            const double q = std::exp(l);
            g.entropy -= q * l;
            g.max_prob = std::max(g.max_prob, q);
            if (c == 1) g.p_class1 = q;
        }
    }
    return out;
}

inline CsvTable grid_table(const std::vector<GridPoint>& grid) {
    CsvTable t({"x0", "x1", "p_class1", "entropy"});
    for (const auto& g : grid) t.add(g.x0, g.x1, g.p_class1, g.entropy);
    return t;
}

}  // namespace gpdnn
