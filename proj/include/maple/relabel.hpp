#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "maple/cluster.hpp"
#include "maple/dataset.hpp"
#include "maple/errors.hpp"
#include "maple/matrix.hpp"
#include "maple/mlp.hpp"
#include "maple/rng.hpp"

namespace maple {

// Total map from pseudo-classes to original classes.
struct LabelMap {
    std::vector<int> pseudo_to_original;
    int k = 0;  // original class count

    std::size_t num_pseudo() const { return pseudo_to_original.size(); }
    int remap(int pseudo) const { return pseudo_to_original[pseudo]; }

    static LabelMap identity(int k) {
        LabelMap m;
        m.k = k;
        m.pseudo_to_original.resize(k);
        for (int i = 0; i < k; ++i) m.pseudo_to_original[i] = i;
        return m;
    }

    void validate() const {
        if (k < 1) throw DataError("label map: k must be >= 1");
        if (pseudo_to_original.size() < static_cast<std::size_t>(k))
            throw DataError("label map: K must be >= k");
        std::vector<bool> covered(k, false);
        for (int orig : pseudo_to_original) {
            if (orig < 0 || orig >= k)
                throw DataError("label map: entry out of range");
            covered[orig] = true;
        }
        for (int i = 0; i < k; ++i)
            if (!covered[i])
                throw DataError("label map: original class " + std::to_string(i) +
                                " has no pseudo-class");
    }
};

struct RefineEvent {
    std::size_t epoch = 0;
    std::vector<int> classes_split;  // original classes re-clustered
    std::size_t K_after = 0;
};

struct RelabelState {
    std::vector<int> pseudo_labels;  // aligned with the training index list
    LabelMap label_map;
    std::vector<RefineEvent> history;

    std::size_t K() const { return label_map.num_pseudo(); }

    static RelabelState initial(std::span<const int> original_train_labels, int k) {
        RelabelState st;
        st.pseudo_labels.assign(original_train_labels.begin(),
                                original_train_labels.end());
        st.label_map = LabelMap::identity(k);
        return st;
    }

    // The remap invariant: pseudo-labels must reproduce the original labels.
    void verify(std::span<const int> original_train_labels) const {
        label_map.validate();
        if (pseudo_labels.size() != original_train_labels.size())
            throw DataError("relabel state: size mismatch");
        for (std::size_t i = 0; i < pseudo_labels.size(); ++i) {
            int p = pseudo_labels[i];
            if (p < 0 || static_cast<std::size_t>(p) >= K())
                throw DataError("relabel state: pseudo-label out of range");
            if (label_map.remap(p) != original_train_labels[i])
                throw DataError("relabel state: remap does not reproduce original label at sample " +
                                std::to_string(i));
        }
    }
};

// Entry (i, j) counts samples of true class i predicted as class j.
inline Matrix confusion_matrix(std::span<const int> predicted,
                               std::span<const int> truth, int k) {
    if (predicted.size() != truth.size())
        throw DataError("confusion_matrix: size mismatch");
    Matrix cm(k, k);
    for (std::size_t i = 0; i < predicted.size(); ++i) {
        if (truth[i] < 0 || truth[i] >= k || predicted[i] < 0 || predicted[i] >= k)
            throw DataError("confusion_matrix: entry out of range");
        cm(truth[i], predicted[i]) += 1.0;
    }
    return cm;
}

// Fraction of class i's samples predicted as any other class. Empty rows are
// undefined (class absent from the evaluated set).
inline std::optional<double> false_negative_ratio(const Matrix& cm, int class_index) {
    double row_sum = 0.0;
    for (std::size_t j = 0; j < cm.cols(); ++j) row_sum += cm(class_index, j);
    if (row_sum <= 0.0) return std::nullopt;
    return (row_sum - cm(class_index, class_index)) / row_sum;
}

struct RefineOutcome {
    RelabelState state;
    // Head surgery plan: new head row r takes old row new_to_old[r], -1 = fresh.
    std::vector<int> new_to_old;
    std::vector<int> classes_clustered;
    bool labels_changed = false;
    bool head_changed = false;
    std::vector<std::string> warnings;
};

// Re-clusters every original class whose false negative ratio exceeds the
// threshold. A triggered class is always re-clustered from scratch over all
// of its training samples; its previous pseudo-split is discarded. Pseudo-id
// bookkeeping reuses the class's existing ids in ascending order (so head
// rows keep their weights where possible), appends fresh ids for extra
// clusters, and compacts ids away when a class ends up with fewer clusters
// than before.
inline RefineOutcome refine(const Matrix& embeddings, const RelabelState& state,
                            std::span<const double> fnr, double threshold,
                            std::size_t max_clusters, std::uint64_t seed,
                            std::size_t epoch = 0) {
    const int k = state.label_map.k;
    const std::size_t K_old = state.K();
    if (embeddings.rows() != state.pseudo_labels.size())
        throw DataError("refine: embedding row count does not match pseudo-labels");
    if (fnr.size() != static_cast<std::size_t>(k))
        throw DataError("refine: need one false negative ratio per original class");

    std::vector<int> original(state.pseudo_labels.size());
    for (std::size_t i = 0; i < original.size(); ++i)
        original[i] = state.label_map.remap(state.pseudo_labels[i]);

    RefineOutcome out;
    out.state = state;
    out.new_to_old.resize(K_old);
    for (std::size_t i = 0; i < K_old; ++i) out.new_to_old[i] = static_cast<int>(i);

    // cluster the triggered classes
    std::vector<std::vector<std::size_t>> member_idx(k);
    for (std::size_t i = 0; i < original.size(); ++i)
        member_idx[original[i]].push_back(i);

    std::vector<std::vector<std::size_t>> cluster_of(k);  // per-class assignments
    std::vector<std::size_t> cluster_count(k, 0);
    for (int c = 0; c < k; ++c) {
        if (!(fnr[c] > threshold)) continue;
        if (member_idx[c].size() < 2) {
            out.warnings.push_back("refine: class " + std::to_string(c) +
                                   " triggered with fewer than 2 training samples; skipped");
            continue;
        }
        Matrix sub = gather_rows(embeddings, member_idx[c]);
        ClusterModel cm = xmeans(sub, max_clusters, derive_seed(seed, rng_stream::refine,
                                                                static_cast<std::uint64_t>(c)));
        cluster_of[c] = cm.assignments;
        cluster_count[c] = cm.k();
        out.classes_clustered.push_back(c);
    }
    if (out.classes_clustered.empty()) return out;

    // current pseudo-ids per class, ascending
    std::vector<std::vector<int>> ids_of(k);
    for (std::size_t p = 0; p < K_old; ++p)
        ids_of[state.label_map.remap(static_cast<int>(p))].push_back(static_cast<int>(p));

    std::vector<bool> dead(K_old, false);
    std::vector<std::size_t> fresh_needed(k, 0);
    for (int c : out.classes_clustered) {
        const std::size_t n_old = ids_of[c].size();
        const std::size_t n_new = cluster_count[c];
        for (std::size_t j = n_new; j < n_old; ++j) dead[ids_of[c][j]] = true;
        if (n_new > n_old) fresh_needed[c] = n_new - n_old;
    }

    // survivors compact in ascending old-id order; fresh ids follow in class order
    std::vector<int> new_id_of_old(K_old, -1);
    int next_id = 0;
    for (std::size_t p = 0; p < K_old; ++p)
        if (!dead[p]) new_id_of_old[p] = next_id++;
    std::vector<std::vector<int>> fresh_ids(k);
    for (int c = 0; c < k; ++c)
        for (std::size_t j = 0; j < fresh_needed[c]; ++j)
            fresh_ids[c].push_back(next_id++);
    const std::size_t K_new = static_cast<std::size_t>(next_id);

    LabelMap new_map;
    new_map.k = k;
    new_map.pseudo_to_original.assign(K_new, -1);
    out.new_to_old.assign(K_new, -1);
    for (std::size_t p = 0; p < K_old; ++p) {
        if (dead[p]) continue;
        new_map.pseudo_to_original[new_id_of_old[p]] =
            state.label_map.remap(static_cast<int>(p));
        out.new_to_old[new_id_of_old[p]] = static_cast<int>(p);
    }
    for (int c = 0; c < k; ++c)
        for (int id : fresh_ids[c]) new_map.pseudo_to_original[id] = c;

    std::vector<int> new_pseudo = state.pseudo_labels;
    for (std::size_t i = 0; i < new_pseudo.size(); ++i) {
        int c = original[i];
        bool clustered = std::find(out.classes_clustered.begin(),
                                   out.classes_clustered.end(),
                                   c) != out.classes_clustered.end();
        if (!clustered) {
            new_pseudo[i] = new_id_of_old[new_pseudo[i]];
            continue;
        }
        // position of sample i within its class's member list
        const auto& members = member_idx[c];
        std::size_t pos = static_cast<std::size_t>(
            std::lower_bound(members.begin(), members.end(), i) - members.begin());
        std::size_t cluster = cluster_of[c][pos];
        const std::size_t reused = std::min(cluster_count[c], ids_of[c].size());
        if (cluster < reused)
            new_pseudo[i] = new_id_of_old[ids_of[c][cluster]];
        else
            new_pseudo[i] = fresh_ids[c][cluster - reused];
    }

    out.state.pseudo_labels = std::move(new_pseudo);
    out.state.label_map = std::move(new_map);
    out.state.history.push_back({epoch, out.classes_clustered, K_new});
    out.labels_changed = out.state.pseudo_labels != state.pseudo_labels;
    out.head_changed = K_new != K_old;
    for (std::size_t r = 0; !out.head_changed && r < K_new; ++r)
        if (out.new_to_old[r] != static_cast<int>(r)) out.head_changed = true;

    out.state.verify(original);
    if (out.state.K() > static_cast<std::size_t>(k) * max_clusters)
        throw DataError("refine: pseudo-class count exceeds k * max_clusters");
    return out;
}

struct EpochRecord {
    std::size_t epoch = 0;
    double ce_loss = 0.0;
    double triplet_loss = 0.0;
    std::optional<double> val_acc;
    std::size_t num_classes = 0;
};

struct TrainResult {
    MlpClassifier model;
    RelabelState state;
    std::vector<EpochRecord> log;
    std::vector<std::string> warnings;
};

// The full training loop: epochs of CE + triplet SGD on pseudo-labels, and
// every validation_period epochs a validation pass whose per-class false
// negative ratios decide which classes get re-clustered. When the pseudo-class
// layout changes, the head rows are rebuilt to follow it (surviving rows keep
// their weights and momentum, fresh rows are newly initialized).
inline TrainResult train_maple(const LabeledDataset& ds, const DatasetSplit& split,
                               const TrainConfig& cfg) {
    ds.validate();
    cfg.validate();
    if (ds.num_classes < 2) throw DataError("train_maple: need at least 2 classes");
    if (split.train_idx.empty() || split.val_idx.empty())
        throw DataError("train_maple: train and validation splits must be nonempty");
    for (std::size_t i : split.train_idx)
        if (i >= ds.size()) throw DataError("train_maple: train index out of range");
    for (std::size_t i : split.val_idx)
        if (i >= ds.size()) throw DataError("train_maple: validation index out of range");

    const int k = ds.num_classes;
    const std::size_t n_train = split.train_idx.size();

    TrainResult result;
    std::vector<int> train_labels(n_train);
    for (std::size_t i = 0; i < n_train; ++i)
        train_labels[i] = ds.labels[split.train_idx[i]];
    result.state = RelabelState::initial(train_labels, k);
    result.model = MlpClassifier::init(ds.dim(), cfg.hidden_dims, cfg.embedding_dim,
                                       static_cast<std::size_t>(k), cfg.seed);
    SgdState opt = SgdState::init(result.model);
    Rng shuffle_rng(derive_seed(cfg.seed, rng_stream::shuffle));

    Matrix train_features = gather_rows(ds.features, split.train_idx);
    std::uint64_t step = 0;

    for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        std::vector<std::size_t> order(n_train);
        std::iota(order.begin(), order.end(), 0);
        shuffle_rng.shuffle(order);

        double ce_sum = 0.0, triplet_sum = 0.0;
        for (std::size_t start = 0; start < n_train; start += cfg.batch_size) {
            const std::size_t end = std::min(start + cfg.batch_size, n_train);
            const std::size_t b = end - start;
            Matrix batch(b, ds.dim());
            std::vector<int> batch_labels(b);
            for (std::size_t i = 0; i < b; ++i) {
                std::size_t src = order[start + i];
                std::copy(train_features.row(src).begin(), train_features.row(src).end(),
                          batch.row(i).begin());
                batch_labels[i] = result.state.pseudo_labels[src];
            }
            StepLosses losses =
                train_step(result.model, opt, batch, batch_labels, cfg,
                           derive_seed(cfg.seed, rng_stream::mine, step));
            ++step;
            ce_sum += losses.cross_entropy * static_cast<double>(b);
            triplet_sum += losses.triplet * static_cast<double>(b);
        }

        EpochRecord rec;
        rec.epoch = epoch;
        rec.ce_loss = ce_sum / static_cast<double>(n_train);
        rec.triplet_loss = triplet_sum / static_cast<double>(n_train);
        rec.num_classes = result.state.K();

        if (epoch % cfg.validation_period == 0) {
            std::vector<int> predicted(split.val_idx.size());
            std::vector<int> truth(split.val_idx.size());
            std::size_t correct = 0;
            for (std::size_t i = 0; i < split.val_idx.size(); ++i) {
                auto outp = result.model.forward(ds.features.row(split.val_idx[i]));
                std::size_t arg = 0;
                for (std::size_t c = 1; c < outp.logits.size(); ++c)
                    if (outp.logits[c] > outp.logits[arg]) arg = c;
                predicted[i] = result.state.label_map.remap(static_cast<int>(arg));
                truth[i] = ds.labels[split.val_idx[i]];
                if (predicted[i] == truth[i]) ++correct;
            }
            rec.val_acc = static_cast<double>(correct) /
                          static_cast<double>(split.val_idx.size());
            Matrix cm = confusion_matrix(predicted, truth, k);
            std::vector<double> fnr(k, 0.0);
            bool any_triggered = false;
            for (int c = 0; c < k; ++c) {
                auto r = false_negative_ratio(cm, c);
                if (!r.has_value()) {
                    result.warnings.push_back(
                        "epoch " + std::to_string(epoch) + ": class " + std::to_string(c) +
                        " absent from validation set; never triggered");
                    fnr[c] = 0.0;
                } else {
                    fnr[c] = *r;
                }
                if (fnr[c] > cfg.fnr_threshold) any_triggered = true;
            }

            if (any_triggered) {
                Matrix train_embeddings = result.model.embed_batch(train_features);
                RefineOutcome outcome =
                    refine(train_embeddings, result.state, fnr, cfg.fnr_threshold,
                           cfg.max_clusters,
                           derive_seed(cfg.seed, rng_stream::refine, epoch), epoch);
                for (auto& w : outcome.warnings) result.warnings.push_back(std::move(w));
                if (outcome.head_changed) {
                    reindex_head(result.model, outcome.new_to_old,
                                 derive_seed(cfg.seed, rng_stream::head, epoch));
                    opt.reindex_head_rows(outcome.new_to_old, result.model.embedding_dim());
                }
                result.state = std::move(outcome.state);
                rec.num_classes = result.state.K();
            }
        }

        result.log.push_back(std::move(rec));
    }

    result.state.verify(train_labels);
    return result;
}

}  // namespace maple
