#pragma once

#include <atomic>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "maple/checkpoint.hpp"
#include "maple/config.hpp"
#include "maple/dataset.hpp"
#include "maple/errors.hpp"
#include "maple/gaussian_head.hpp"
#include "maple/metrics.hpp"
#include "maple/pca.hpp"
#include "maple/relabel.hpp"

namespace maple {

// Worker cap for row-parallel commands, overridable via MAPLE_THREADS.
inline std::size_t worker_threads() {
    if (const char* env = std::getenv("MAPLE_THREADS")) {
        char* end = nullptr;
        long v = std::strtol(env, &end, 10);
        if (end != env && *end == '\0' && v >= 1) return static_cast<std::size_t>(v);
    }
    unsigned hc = std::thread::hardware_concurrency();
    return hc == 0 ? 1 : hc;
}

namespace detail {

template <typename Fn>
inline void parallel_rows(std::size_t count, Fn&& fn) {
    std::size_t workers = std::min(worker_threads(), count);
    if (workers <= 1) {
        for (std::size_t i = 0; i < count; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w)
        pool.emplace_back([&] {
            for (std::size_t i; (i = next.fetch_add(1)) < count;) fn(i);
        });
    for (auto& t : pool) t.join();
}

inline std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.12g", v);
    return buf;
}

inline void write_file(const std::filesystem::path& path, const std::string& body) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot open for writing: " + path.string());
    os << body;
    if (!os) throw DataError("write failure: " + path.string());
}

inline std::string sanitize_name(const std::string& path) {
    std::string base = std::filesystem::path(path).stem().string();
    std::string out;
    for (char c : base)
        out += (std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_') ? c : '_';
    return out.empty() ? "set" : out;
}

}  // namespace detail

// --- synthetic data generation -------------------------------------------

inline MixtureSpec mixture_from_json(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw DataError("cannot open mixture spec: " + path);
    nlohmann::json j;
    try {
        is >> j;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("mixture spec: invalid JSON: " + std::string(e.what()));
    }
    MixtureSpec spec;
    try {
        spec.seed = j.value("seed", std::uint64_t{0});
        for (const auto& jc : j.at("classes")) {
            ClassSpec cls;
            cls.name = jc.value("name", "");
            for (const auto& jm : jc.at("modes")) {
                ModeSpec mode;
                mode.mean = jm.at("mean").get<std::vector<double>>();
                mode.isotropic_std = jm.at("std").get<double>();
                mode.count = jm.at("count").get<std::size_t>();
                cls.modes.push_back(std::move(mode));
            }
            spec.classes.push_back(std::move(cls));
        }
    } catch (const nlohmann::json::exception& e) {
        throw DataError("mixture spec: missing or mistyped field: " + std::string(e.what()));
    }
    spec.validate();
    return spec;
}

inline void cmd_gen(const std::string& spec_path, const std::string& out_path,
                    DatasetFormat format = DatasetFormat::binary) {
    MixtureSpec spec = mixture_from_json(spec_path);
    LabeledDataset ds = generate_mixture(spec);
    save_dataset(ds, out_path, format);
}

// --- training --------------------------------------------------------------

struct TrainOutputs {
    TrainResult result;
    PcaTransform pca;   // valid only when the config enables projection
    GaussianHead head;
    std::filesystem::path dir;
};

inline std::string training_log_ndjson(const std::vector<EpochRecord>& log) {
    std::ostringstream os;
    for (const auto& rec : log) {
        nlohmann::json j;
        j["epoch"] = rec.epoch;
        j["ce_loss"] = rec.ce_loss;
        j["triplet_loss"] = rec.triplet_loss;
        if (rec.val_acc.has_value())
            j["val_acc"] = *rec.val_acc;
        else
            j["val_acc"] = nullptr;
        j["K"] = rec.num_classes;
        os << j.dump() << "\n";
    }
    return os.str();
}

inline TrainOutputs cmd_train(const RunConfig& cfg) {
    cfg.validate();
    if (cfg.train_data.empty()) throw ConfigError("train: train_data is required");
    LabeledDataset ds = load_dataset(cfg.train_data);
    DatasetSplit split = stratified_split(
        ds, {cfg.train_frac, cfg.val_frac, cfg.test_frac}, cfg.train.seed);
    const TrainConfig tc = cfg.effective_train();

    TrainOutputs out;
    out.dir = cfg.out_dir;
    std::filesystem::create_directories(out.dir);
    out.result = train_maple(ds, split, tc);

    Matrix train_features = gather_rows(ds.features, split.train_idx);
    Matrix embeddings = out.result.model.embed_batch(train_features);
    const Matrix* z = &embeddings;
    Matrix reduced;
    if (cfg.use_pca) {
        out.pca = fit_pca(embeddings, cfg.pca_variance_target);
        reduced = out.pca.transform_batch(embeddings);
        z = &reduced;
        save_pca((out.dir / "pca.mpc").string(), out.pca);
    }
    out.head = fit_head(*z, out.result.state.pseudo_labels, out.result.state.label_map);
    save_head((out.dir / "head.mgh").string(), out.head);
    save_model((out.dir / "model.mnn").string(), out.result.model, out.result.state,
               tc.seed);
    detail::write_file(out.dir / "train_log.ndjson", training_log_ndjson(out.result.log));
    detail::write_file(out.dir / "config.resolved", render_config(cfg));
    std::string warn_body;
    for (const auto& w : out.result.warnings) warn_body += w + "\n";
    detail::write_file(out.dir / "warnings.txt", warn_body);
    return out;
}

// --- evaluation --------------------------------------------------------------

inline std::string render_report(const EvalReport& report) {
    std::ostringstream os;
    os << "MAPLE-REPORT v1\n";
    os << "accuracy_softmax " << detail::fmt(report.accuracy_softmax) << "\n";
    os << "accuracy_md " << detail::fmt(report.accuracy_md) << "\n";
    os << "ece " << detail::fmt(report.ece) << "\n";
    os << "nll " << detail::fmt(report.nll) << "\n";
    os << "qq_error " << detail::fmt(report.qq_error) << "\n";
    os << "num_classes " << report.num_classes << "\n";
    if (report.reduced_dim > 0)
        os << "reduced_dim " << report.reduced_dim << "\n";
    else
        os << "reduced_dim -\n";
    for (const auto& ood : report.ood) {
        // positive class = out-of-distribution, score = predicted uncertainty
        os << "ood " << ood.name << " auroc " << detail::fmt(ood.auroc) << " aupr "
           << detail::fmt(ood.aupr) << "\n";
    }
    os << "latency_ms_per_sample " << detail::fmt(report.latency_ms_per_sample) << "\n";
    return os.str();
}

inline EvalReport cmd_eval(const RunConfig& cfg) {
    cfg.validate();
    if (cfg.train_data.empty()) throw ConfigError("eval: train_data is required");
    const std::filesystem::path dir = cfg.out_dir;
    ModelCheckpoint cp = load_model((dir / "model.mnn").string());
    GaussianHead head = load_head((dir / "head.mgh").string());
    PcaTransform pca;
    const PcaTransform* pca_ptr = nullptr;
    if (cfg.use_pca) {
        pca = load_pca((dir / "pca.mpc").string());
        pca_ptr = &pca;
    }

    LabeledDataset test;
    if (!cfg.test_data.empty()) {
        test = load_dataset(cfg.test_data);
    } else {
        LabeledDataset full = load_dataset(cfg.train_data);
        DatasetSplit split = stratified_split(
            full, {cfg.train_frac, cfg.val_frac, cfg.test_frac}, cfg.train.seed);
        test.features = gather_rows(full.features, split.test_idx);
        test.labels.reserve(split.test_idx.size());
        for (std::size_t i : split.test_idx) test.labels.push_back(full.labels[i]);
        test.class_names = full.class_names;
        test.num_classes = full.num_classes;
    }
    test.validate();

    EvalReport report;
    report.num_classes = head.num_classes();
    report.reduced_dim = cfg.use_pca ? pca.reduced_dim() : 0;

    const std::size_t n = test.size();
    std::vector<int> md_pred(n), softmax_pred(n);
    std::vector<double> p_md(n), id_uncertainty(n), md2(n);
    auto t0 = std::chrono::steady_clock::now();
    for (std::size_t i = 0; i < n; ++i) {
        auto outp = cp.model.forward(test.features.row(i));
        Prediction pred =
            predict(pca_ptr, head, outp.embedding, &outp.logits, cfg.distance_mode);
        md_pred[i] = pred.original_class;
        softmax_pred[i] = *pred.softmax_class;
        p_md[i] = pred.p_md;
        id_uncertainty[i] = pred.uncertainty;
        double md = pred.md_per_class[pred.pseudo_class];
        md2[i] = md * md;
    }
    auto t1 = std::chrono::steady_clock::now();
    report.latency_ms_per_sample =
        std::chrono::duration<double, std::milli>(t1 - t0).count() /
        static_cast<double>(n);

    std::vector<bool> md_correct(n);
    for (std::size_t i = 0; i < n; ++i) md_correct[i] = md_pred[i] == test.labels[i];
    report.accuracy_md = accuracy(md_pred, test.labels);
    report.accuracy_softmax = accuracy(softmax_pred, test.labels);
    report.ece = ece(p_md, md_correct, cfg.ece_bins);
    report.nll = nll(p_md);
    report.qq_error = qq_error(md2, static_cast<int>(head.dof));
    report.calibration_bins = calibration_curve(p_md, md_correct, cfg.ece_bins);
    report.id_uncertainty_histogram = uncertainty_histogram(id_uncertainty, cfg.hist_bins);

    for (std::size_t s = 0; s < cfg.ood_data.size(); ++s) {
        LabeledDataset ood = load_dataset(cfg.ood_data[s]);
        if (ood.dim() != test.dim())
            throw DataError("eval: dimension mismatch between test and ood set " +
                            cfg.ood_data[s]);
        OodMetrics om;
        om.name = "ood" + std::to_string(s) + "_" + detail::sanitize_name(cfg.ood_data[s]);
        std::vector<double> u(ood.size());
        for (std::size_t i = 0; i < ood.size(); ++i) {
            auto outp = cp.model.forward(ood.features.row(i));
            Prediction pred = predict(pca_ptr, head, outp.embedding, nullptr,
                                      cfg.distance_mode);
            u[i] = pred.uncertainty;
        }
        om.auroc = auroc(id_uncertainty, u);
        om.aupr = aupr(id_uncertainty, u);
        om.uncertainty_histogram = uncertainty_histogram(u, cfg.hist_bins);
        om.pr_points = pr_curve(id_uncertainty, u);
        report.ood.push_back(std::move(om));
    }

    // report plus flat tabular files for external plotting
    detail::write_file(dir / "report.txt", render_report(report));
    {
        std::ostringstream os;
        os << "bin_low\tbin_high\tmean_confidence\taccuracy\tcount\n";
        for (std::size_t b = 0; b < report.calibration_bins.size(); ++b) {
            const auto& bin = report.calibration_bins[b];
            os << detail::fmt(static_cast<double>(b) / cfg.ece_bins) << "\t"
               << detail::fmt(static_cast<double>(b + 1) / cfg.ece_bins) << "\t"
               << detail::fmt(bin.mean_confidence) << "\t" << detail::fmt(bin.accuracy)
               << "\t" << bin.count << "\n";
        }
        detail::write_file(dir / "calibration_bins.tsv", os.str());
    }
    {
        std::ostringstream os;
        os << "bin\tcount\n";
        for (std::size_t b = 0; b < report.id_uncertainty_histogram.size(); ++b)
            os << b << "\t" << report.id_uncertainty_histogram[b] << "\n";
        detail::write_file(dir / "uncertainty_hist_id.tsv", os.str());
    }
    for (const auto& om : report.ood) {
        std::ostringstream hs;
        hs << "bin\tcount\n";
        for (std::size_t b = 0; b < om.uncertainty_histogram.size(); ++b)
            hs << b << "\t" << om.uncertainty_histogram[b] << "\n";
        detail::write_file(dir / ("uncertainty_hist_" + om.name + ".tsv"), hs.str());
        std::ostringstream ps;
        ps << "recall\tprecision\n";
        for (const auto& p : om.pr_points)
            ps << detail::fmt(p.recall) << "\t" << detail::fmt(p.precision) << "\n";
        detail::write_file(dir / ("pr_points_" + om.name + ".tsv"), ps.str());
    }
    return report;
}

// --- ablation ----------------------------------------------------------------

struct AblationRow {
    int index = 0;
    std::string label;
    bool use_pca = false;
    bool use_triplet = false;
    bool use_clustering = false;
    DistanceMode mode = DistanceMode::mahalanobis;
};

inline const std::vector<AblationRow>& ablation_rows() {
    static const std::vector<AblationRow> rows = {
        {1, "DNN+MD", false, false, false, DistanceMode::mahalanobis},
        {2, "DNN+PCA+MD", true, false, false, DistanceMode::mahalanobis},
        {3, "DNN+PCA+ED", true, false, false, DistanceMode::euclidean},
        {4, "DNN+Triplet+PCA+MD", true, true, false, DistanceMode::mahalanobis},
        {5, "DNN+Clustering+PCA+MD", true, false, true, DistanceMode::mahalanobis},
        {6, "MAPLE", true, true, true, DistanceMode::mahalanobis},
    };
    return rows;
}

inline RunConfig ablation_config(const RunConfig& base, const AblationRow& row) {
    RunConfig cfg = base;
    cfg.use_pca = row.use_pca;
    cfg.use_triplet = row.use_triplet;
    cfg.use_clustering = row.use_clustering;
    cfg.distance_mode = row.mode;
    cfg.out_dir = (std::filesystem::path(base.out_dir) /
                   ("row" + std::to_string(row.index)))
                      .string();
    return cfg;
}

struct AblationResult {
    std::vector<std::optional<EvalReport>> reports;  // per row, nullopt on failure
    std::vector<std::string> errors;                 // failure notes, aligned
    std::string table;
};

inline std::string render_ablation_table(const AblationResult& res) {
    std::ostringstream os;
    os << "row\tlabel\tacc_softmax\tacc_md\tece\tnll";
    std::size_t ood_count = 0;
    for (const auto& r : res.reports)
        if (r.has_value()) ood_count = std::max(ood_count, r->ood.size());
    for (std::size_t s = 0; s < ood_count; ++s)
        os << "\tauroc_ood" << s << "\taupr_ood" << s;
    os << "\tn_eig\tnum_classes\n";
    const auto& rows = ablation_rows();
    for (std::size_t i = 0; i < rows.size(); ++i) {
        os << rows[i].index << "\t" << rows[i].label;
        if (!res.reports[i].has_value()) {
            os << "\tFAILED: " << res.errors[i] << "\n";
            continue;
        }
        const EvalReport& r = *res.reports[i];
        os << "\t" << detail::fmt(r.accuracy_softmax) << "\t" << detail::fmt(r.accuracy_md)
           << "\t" << detail::fmt(r.ece) << "\t" << detail::fmt(r.nll);
        for (std::size_t s = 0; s < ood_count; ++s) {
            if (s < r.ood.size())
                os << "\t" << detail::fmt(r.ood[s].auroc) << "\t" << detail::fmt(r.ood[s].aupr);
            else
                os << "\t-\t-";
        }
        if (r.reduced_dim > 0)
            os << "\t" << r.reduced_dim;
        else
            os << "\t-";
        os << "\t" << r.num_classes << "\n";
    }
    return os.str();
}

// Runs the six flag combinations with a shared seed; a failing row is
// annotated and the remaining rows are still produced.
inline AblationResult cmd_ablate(const RunConfig& base) {
    base.validate();
    const auto& rows = ablation_rows();
    AblationResult res;
    res.reports.resize(rows.size());
    res.errors.resize(rows.size());
    detail::parallel_rows(rows.size(), [&](std::size_t i) {
        try {
            RunConfig cfg = ablation_config(base, rows[i]);
            cmd_train(cfg);
            res.reports[i] = cmd_eval(cfg);
        } catch (const std::exception& e) {
            res.errors[i] = e.what();
        }
    });
    res.table = render_ablation_table(res);
    std::filesystem::create_directories(base.out_dir);
    detail::write_file(std::filesystem::path(base.out_dir) / "ablation_table.tsv",
                       res.table);
    return res;
}

// --- hyperparameter sweep ------------------------------------------------------

struct SweepResult {
    std::vector<double> values;
    std::vector<std::optional<EvalReport>> reports;
    std::vector<std::string> errors;
    std::string table;
};

inline RunConfig sweep_config(const RunConfig& base, const std::string& param,
                              double value) {
    RunConfig cfg = base;
    std::string tag;
    if (param == "t") {
        cfg.train.fnr_threshold = value;
        tag = "t";
    } else if (param == "p") {
        cfg.train.validation_period = static_cast<std::size_t>(value);
        tag = "p";
    } else if (param == "max_clusters") {
        cfg.train.max_clusters = static_cast<std::size_t>(value);
        tag = "max_clusters";
    } else {
        throw ConfigError("sweep: parameter must be one of t, p, max_clusters");
    }
    std::ostringstream dir;
    dir << tag << "_" << value;
    cfg.out_dir = (std::filesystem::path(base.out_dir) / ("sweep_" + dir.str())).string();
    return cfg;
}

inline SweepResult cmd_sweep(const RunConfig& base, const std::string& param,
                             const std::vector<double>& values) {
    base.validate();
    if (values.empty()) throw ConfigError("sweep: no values given");
    if (param != "t" && param != "p" && param != "max_clusters")
        throw ConfigError("sweep: parameter must be one of t, p, max_clusters");
    SweepResult res;
    res.values = values;
    res.reports.resize(values.size());
    res.errors.resize(values.size());
    detail::parallel_rows(values.size(), [&](std::size_t i) {
        try {
            RunConfig cfg = sweep_config(base, param, values[i]);
            cmd_train(cfg);
            res.reports[i] = cmd_eval(cfg);
        } catch (const std::exception& e) {
            res.errors[i] = e.what();
        }
    });
    std::ostringstream os;
    os << param << "\tnum_classes\tacc_softmax\tacc_md\tece";
    std::size_t ood_count = 0;
    for (const auto& r : res.reports)
        if (r.has_value()) ood_count = std::max(ood_count, r->ood.size());
    for (std::size_t s = 0; s < ood_count; ++s) os << "\tauroc_ood" << s;
    os << "\n";
    for (std::size_t i = 0; i < values.size(); ++i) {
        os << detail::fmt(values[i]);
        if (!res.reports[i].has_value()) {
            os << "\tFAILED: " << res.errors[i] << "\n";
            continue;
        }
        const EvalReport& r = *res.reports[i];
        os << "\t" << r.num_classes << "\t" << detail::fmt(r.accuracy_softmax) << "\t"
           << detail::fmt(r.accuracy_md) << "\t" << detail::fmt(r.ece);
        for (std::size_t s = 0; s < ood_count; ++s)
            os << "\t" << (s < r.ood.size() ? detail::fmt(r.ood[s].auroc) : "-");
        os << "\n";
    }
    res.table = os.str();
    std::filesystem::create_directories(base.out_dir);
    detail::write_file(std::filesystem::path(base.out_dir) / "sweep_table.tsv", res.table);
    return res;
}

}  // namespace maple
