#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "maple/errors.hpp"
#include "maple/matrix.hpp"
#include "maple/rng.hpp"

namespace maple {

struct TrainConfig {
    double learning_rate = 0.05;
    double momentum = 0.9;
    double weight_decay = 1e-4;
    std::size_t batch_size = 128;
    std::size_t max_epochs = 60;
    double margin = 1.0;                  // triplet margin
    std::size_t validation_period = 10;   // epochs between validations
    double fnr_threshold = 0.3;           // refinement trigger
    std::size_t max_clusters = 5;         // per-class cap for x-means
    std::uint64_t seed = 1;
    double triplet_weight = 1.0;
    std::vector<std::size_t> hidden_dims = {64, 64};
    std::size_t embedding_dim = 16;

    void validate() const {
        if (learning_rate < 0 || momentum < 0 || weight_decay < 0)
            throw ConfigError("train config: optimizer settings must be nonnegative");
        if (batch_size < 1 || max_epochs < 1 || validation_period < 1)
            throw ConfigError("train config: batch_size, max_epochs and validation_period must be positive");
        if (margin < 0) throw ConfigError("train config: margin must be nonnegative");
        if (fnr_threshold < 0.0 || fnr_threshold > 1.0)
            throw ConfigError("train config: fnr_threshold must lie in [0, 1]");
        if (max_clusters < 1) throw ConfigError("train config: max_clusters must be >= 1");
        if (triplet_weight < 0) throw ConfigError("train config: triplet_weight must be nonnegative");
        if (embedding_dim < 1) throw ConfigError("train config: embedding_dim must be >= 1");
        for (auto h : hidden_dims)
            if (h < 1) throw ConfigError("train config: hidden widths must be >= 1");
    }
};

struct Layer {
    Matrix weights;               // out x in
    std::vector<double> biases;   // out

    std::size_t out_dim() const { return weights.rows(); }
    std::size_t in_dim() const { return weights.cols(); }
};

namespace detail {

// Fan-in uniform init, the same scheme at construction and when head rows are
// added later: each row draws its weights first, then its bias.
inline void init_layer_rows(Layer& layer, std::size_t first_row, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(layer.in_dim()));
    for (std::size_t r = first_row; r < layer.out_dim(); ++r) {
        for (std::size_t c = 0; c < layer.in_dim(); ++c)
            layer.weights(r, c) = rng.uniform(-bound, bound);
        layer.biases[r] = rng.uniform(-bound, bound);
    }
}

inline Layer make_layer(std::size_t out, std::size_t in, Rng& rng) {
    Layer layer;
    layer.weights = Matrix(out, in);
    layer.biases.assign(out, 0.0);
    init_layer_rows(layer, 0, rng);
    return layer;
}

}  // namespace detail

// Feedforward classifier: ReLU hidden layers, a linear projection to the
// penultimate embedding, and a linear head whose row count tracks the current
// number of (pseudo-)classes.
struct MlpClassifier {
    std::size_t input_dim = 0;
    std::vector<Layer> hidden;  // ReLU after each
    Layer embed;                // linear, output is the embedding
    Layer head;                 // logits

    std::size_t embedding_dim() const { return embed.out_dim(); }
    std::size_t num_outputs() const { return head.out_dim(); }

    static MlpClassifier init(std::size_t input_dim,
                              const std::vector<std::size_t>& hidden_dims,
                              std::size_t embedding_dim, std::size_t num_outputs,
                              std::uint64_t seed) {
        if (input_dim < 1 || embedding_dim < 1 || num_outputs < 1)
            throw ConfigError("mlp: dimensions must be positive");
        MlpClassifier m;
        m.input_dim = input_dim;
        Rng rng(derive_seed(seed, rng_stream::init));
        std::size_t in = input_dim;
        for (std::size_t h : hidden_dims) {
            m.hidden.push_back(detail::make_layer(h, in, rng));
            in = h;
        }
        m.embed = detail::make_layer(embedding_dim, in, rng);
        m.head = detail::make_layer(num_outputs, embedding_dim, rng);
        return m;
    }

    struct Output {
        std::vector<double> embedding;
        std::vector<double> logits;
    };

    Output forward(std::span<const double> x) const {
        if (x.size() != input_dim)
            throw DataError("mlp forward: input has dimension " +
                            std::to_string(x.size()) + ", expected " +
                            std::to_string(input_dim));
        std::vector<double> act(x.begin(), x.end());
        std::vector<double> next;
        for (const Layer& layer : hidden) {
            next.assign(layer.out_dim(), 0.0);
            for (std::size_t r = 0; r < layer.out_dim(); ++r) {
                double s = layer.biases[r] + dot(layer.weights.row(r), act);
                next[r] = s > 0.0 ? s : 0.0;
            }
            act.swap(next);
        }
        Output out;
        out.embedding.assign(embed.out_dim(), 0.0);
        for (std::size_t r = 0; r < embed.out_dim(); ++r)
            out.embedding[r] = embed.biases[r] + dot(embed.weights.row(r), act);
        out.logits.assign(head.out_dim(), 0.0);
        for (std::size_t r = 0; r < head.out_dim(); ++r)
            out.logits[r] = head.biases[r] + dot(head.weights.row(r), out.embedding);
        return out;
    }

    Matrix embed_batch(const Matrix& x) const {
        Matrix out(x.rows(), embedding_dim());
        for (std::size_t i = 0; i < x.rows(); ++i) {
            auto e = forward(x.row(i)).embedding;
            std::copy(e.begin(), e.end(), out.row(i).begin());
        }
        return out;
    }
};

// Rebuilds the head to a new row layout: row r copies old row new_to_old[r]
// bit-exactly, or is freshly initialized when new_to_old[r] is negative.
// Covers growth, removal and reordering in one operation.
inline void reindex_head(MlpClassifier& model, std::span<const int> new_to_old,
                         std::uint64_t seed) {
    Layer rebuilt;
    rebuilt.weights = Matrix(new_to_old.size(), model.embedding_dim());
    rebuilt.biases.assign(new_to_old.size(), 0.0);
    Rng rng(derive_seed(seed, rng_stream::head));
    const double bound = 1.0 / std::sqrt(static_cast<double>(model.embedding_dim()));
    for (std::size_t r = 0; r < new_to_old.size(); ++r) {
        int src = new_to_old[r];
        if (src >= 0) {
            if (static_cast<std::size_t>(src) >= model.num_outputs())
                throw ConfigError("reindex_head: source row out of range");
            std::copy(model.head.weights.row(src).begin(),
                      model.head.weights.row(src).end(), rebuilt.weights.row(r).begin());
            rebuilt.biases[r] = model.head.biases[src];
        } else {
            for (std::size_t c = 0; c < model.embedding_dim(); ++c)
                rebuilt.weights(r, c) = rng.uniform(-bound, bound);
            rebuilt.biases[r] = rng.uniform(-bound, bound);
        }
    }
    model.head = std::move(rebuilt);
}

// Appends rows to the head; existing rows and biases are untouched. New rows
// use the construction-time fan-in init driven by `seed`.
inline void resize_head(MlpClassifier& model, std::size_t new_count,
                        std::uint64_t seed) {
    const std::size_t old_count = model.num_outputs();
    if (new_count < old_count)
        throw ConfigError("resize_head: shrinking from " + std::to_string(old_count) +
                          " to " + std::to_string(new_count) + " is unsupported");
    if (new_count == old_count) return;
    std::vector<int> new_to_old(new_count, -1);
    for (std::size_t r = 0; r < old_count; ++r) new_to_old[r] = static_cast<int>(r);
    reindex_head(model, new_to_old, seed);
}

// -log softmax(logits)[label], computed with a max shift so large logits do
// not overflow.
inline double cross_entropy(std::span<const double> logits, int label) {
    if (label < 0 || static_cast<std::size_t>(label) >= logits.size())
        throw DataError("cross_entropy: label out of range");
    double mx = logits[0];
    for (double v : logits) mx = std::max(mx, v);
    double sum = 0.0;
    for (double v : logits) sum += std::exp(v - mx);
    return std::log(sum) - (logits[label] - mx);
}

inline std::vector<double> softmax(std::span<const double> logits) {
    double mx = logits[0];
    for (double v : logits) mx = std::max(mx, v);
    std::vector<double> p(logits.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        p[i] = std::exp(logits[i] - mx);
        sum += p[i];
    }
    for (double& v : p) v /= sum;
    return p;
}

// max{ ||a-p|| - ||a-n|| + margin, 0 } with Euclidean norms.
inline double triplet_loss(std::span<const double> anchor,
                           std::span<const double> positive,
                           std::span<const double> negative, double margin) {
    if (anchor.size() != positive.size() || anchor.size() != negative.size())
        throw DataError("triplet_loss: dimension mismatch");
    double v = euclidean_distance(anchor, positive) -
               euclidean_distance(anchor, negative) + margin;
    return v > 0.0 ? v : 0.0;
}

struct TripletIndices {
    std::size_t anchor;
    std::size_t positive;
    std::size_t negative;
};

namespace detail {

// Selection depends only on labels and the seed, never on embedding values.
inline std::vector<TripletIndices> mine_triplet_indices(std::size_t n,
                                                        std::span<const int> labels,
                                                        std::uint64_t seed) {
    Rng rng(seed);
    std::vector<TripletIndices> out;
    std::vector<std::size_t> positives, negatives;
    for (std::size_t a = 0; a < n; ++a) {
        positives.clear();
        negatives.clear();
        for (std::size_t i = 0; i < n; ++i) {
            if (i == a) continue;
            if (labels[i] == labels[a])
                positives.push_back(i);
            else
                negatives.push_back(i);
        }
        if (positives.empty() || negatives.empty()) continue;
        out.push_back({a, positives[rng.below(positives.size())],
                       negatives[rng.below(negatives.size())]});
    }
    return out;
}

}  // namespace detail

// One triple per anchor that has both a same-label positive and a
// different-label negative in the batch, chosen uniformly at random.
// Returns an empty list when no valid triple exists.
inline std::vector<TripletIndices> mine_triplets(const Matrix& embeddings,
                                                 std::span<const int> labels,
                                                 std::uint64_t seed) {
    return detail::mine_triplet_indices(embeddings.rows(), labels, seed);
}

// Parameter-shaped container used for gradients and momentum buffers.
struct ParamBlock {
    std::vector<Layer> hidden;
    Layer embed;
    Layer head;

    static ParamBlock zeros_like(const MlpClassifier& m) {
        ParamBlock b;
        for (const Layer& l : m.hidden)
            b.hidden.push_back({Matrix(l.out_dim(), l.in_dim()),
                                std::vector<double>(l.out_dim(), 0.0)});
        b.embed = {Matrix(m.embed.out_dim(), m.embed.in_dim()),
                   std::vector<double>(m.embed.out_dim(), 0.0)};
        b.head = {Matrix(m.head.out_dim(), m.head.in_dim()),
                  std::vector<double>(m.head.out_dim(), 0.0)};
        return b;
    }
};

struct SgdState {
    ParamBlock velocity;

    static SgdState init(const MlpClassifier& m) {
        return {ParamBlock::zeros_like(m)};
    }

    // Keeps momentum for surviving head rows; fresh rows start at zero.
    void reindex_head_rows(std::span<const int> new_to_old, std::size_t in_dim) {
        Layer rebuilt;
        rebuilt.weights = Matrix(new_to_old.size(), in_dim);
        rebuilt.biases.assign(new_to_old.size(), 0.0);
        for (std::size_t r = 0; r < new_to_old.size(); ++r) {
            int src = new_to_old[r];
            if (src < 0) continue;
            std::copy(velocity.head.weights.row(src).begin(),
                      velocity.head.weights.row(src).end(),
                      rebuilt.weights.row(r).begin());
            rebuilt.biases[r] = velocity.head.biases[src];
        }
        velocity.head = std::move(rebuilt);
    }
};

struct StepLosses {
    double cross_entropy = 0.0;
    double triplet = 0.0;
};

namespace detail {

struct BatchCache {
    std::vector<Matrix> hidden_pre;  // pre-activations per hidden layer
    std::vector<Matrix> hidden_act;  // post-ReLU
    Matrix embedding;                // B x d
    Matrix logits;                   // B x n_c
};

inline BatchCache forward_batch(const MlpClassifier& m, const Matrix& x) {
    const std::size_t b = x.rows();
    BatchCache cache;
    const Matrix* act = &x;
    for (const Layer& layer : m.hidden) {
        Matrix pre(b, layer.out_dim());
        Matrix post(b, layer.out_dim());
        for (std::size_t i = 0; i < b; ++i) {
            for (std::size_t r = 0; r < layer.out_dim(); ++r) {
                double s = layer.biases[r] + dot(layer.weights.row(r), act->row(i));
                pre(i, r) = s;
                post(i, r) = s > 0.0 ? s : 0.0;
            }
        }
        cache.hidden_pre.push_back(std::move(pre));
        cache.hidden_act.push_back(std::move(post));
        act = &cache.hidden_act.back();
    }
    cache.embedding = Matrix(b, m.embed.out_dim());
    for (std::size_t i = 0; i < b; ++i)
        for (std::size_t r = 0; r < m.embed.out_dim(); ++r)
            cache.embedding(i, r) =
                m.embed.biases[r] + dot(m.embed.weights.row(r), act->row(i));
    cache.logits = Matrix(b, m.head.out_dim());
    for (std::size_t i = 0; i < b; ++i)
        for (std::size_t r = 0; r < m.head.out_dim(); ++r)
            cache.logits(i, r) =
                m.head.biases[r] + dot(m.head.weights.row(r), cache.embedding.row(i));
    return cache;
}

// d(mean triplet)/d(embedding rows), written into d_embedding. Inactive
// triples (hinge at zero) contribute nothing; coincident pairs use a zero
// subgradient for the offending norm.
inline double triplet_term(const Matrix& embedding,
                           const std::vector<TripletIndices>& triples,
                           double margin, double weight, Matrix& d_embedding) {
    if (triples.empty()) return 0.0;
    const std::size_t d = embedding.cols();
    double total = 0.0;
    const double scale = weight / static_cast<double>(triples.size());
    for (const auto& t : triples) {
        auto a = embedding.row(t.anchor);
        auto p = embedding.row(t.positive);
        auto n = embedding.row(t.negative);
        double dap = euclidean_distance(a, p);
        double dan = euclidean_distance(a, n);
        double v = dap - dan + margin;
        if (v <= 0.0) continue;
        total += v;
        for (std::size_t j = 0; j < d; ++j) {
            double gp = dap > 0.0 ? (a[j] - p[j]) / dap : 0.0;
            double gn = dan > 0.0 ? (a[j] - n[j]) / dan : 0.0;
            d_embedding(t.anchor, j) += scale * (gp - gn);
            d_embedding(t.positive, j) -= scale * gp;
            d_embedding(t.negative, j) += scale * gn;
        }
    }
    return total / static_cast<double>(triples.size());
}

}  // namespace detail

// Mean cross-entropy and mean triplet loss over the batch, with the triples
// fixed by the caller. Exposed so gradient checks can evaluate the exact
// objective a train step optimizes (ce + triplet_weight * triplet).
inline StepLosses compute_losses(const MlpClassifier& m, const Matrix& x,
                                 std::span<const int> labels,
                                 const std::vector<TripletIndices>& triples,
                                 double margin) {
    auto cache = detail::forward_batch(m, x);
    StepLosses losses;
    for (std::size_t i = 0; i < x.rows(); ++i)
        losses.cross_entropy += cross_entropy(cache.logits.row(i), labels[i]);
    losses.cross_entropy /= static_cast<double>(x.rows());
    for (const auto& t : triples)
        losses.triplet += triplet_loss(cache.embedding.row(t.anchor),
                                       cache.embedding.row(t.positive),
                                       cache.embedding.row(t.negative), margin);
    if (!triples.empty()) losses.triplet /= static_cast<double>(triples.size());
    return losses;
}

// Backprop of mean CE + triplet_weight * mean triplet through the whole
// network, including the triplet's dependence on the embeddings.
inline StepLosses compute_gradients(const MlpClassifier& m, const Matrix& x,
                                    std::span<const int> labels,
                                    const std::vector<TripletIndices>& triples,
                                    double margin, double triplet_weight,
                                    ParamBlock& grads) {
    const std::size_t b = x.rows();
    auto cache = detail::forward_batch(m, x);
    grads = ParamBlock::zeros_like(m);

    StepLosses losses;
    Matrix d_logits(b, m.head.out_dim());
    for (std::size_t i = 0; i < b; ++i) {
        losses.cross_entropy += cross_entropy(cache.logits.row(i), labels[i]);
        auto p = softmax(cache.logits.row(i));
        for (std::size_t c = 0; c < p.size(); ++c)
            d_logits(i, c) = (p[c] - (static_cast<int>(c) == labels[i] ? 1.0 : 0.0)) /
                             static_cast<double>(b);
    }
    losses.cross_entropy /= static_cast<double>(b);

    Matrix d_embedding(b, m.embed.out_dim());
    losses.triplet = detail::triplet_term(cache.embedding, triples, margin,
                                          triplet_weight, d_embedding);

    // head
    for (std::size_t i = 0; i < b; ++i) {
        for (std::size_t r = 0; r < m.head.out_dim(); ++r) {
            double g = d_logits(i, r);
            grads.head.biases[r] += g;
            for (std::size_t c = 0; c < m.head.in_dim(); ++c)
                grads.head.weights(r, c) += g * cache.embedding(i, c);
            for (std::size_t c = 0; c < m.head.in_dim(); ++c)
                d_embedding(i, c) += g * m.head.weights(r, c);
        }
    }

    // embedding projection (linear)
    const Matrix& embed_in = m.hidden.empty() ? x : cache.hidden_act.back();
    Matrix d_act(b, m.embed.in_dim());
    for (std::size_t i = 0; i < b; ++i) {
        for (std::size_t r = 0; r < m.embed.out_dim(); ++r) {
            double g = d_embedding(i, r);
            grads.embed.biases[r] += g;
            for (std::size_t c = 0; c < m.embed.in_dim(); ++c)
                grads.embed.weights(r, c) += g * embed_in(i, c);
            for (std::size_t c = 0; c < m.embed.in_dim(); ++c)
                d_act(i, c) += g * m.embed.weights(r, c);
        }
    }

    // hidden stack, reversed, with ReLU masks
    for (std::size_t li = m.hidden.size(); li-- > 0;) {
        const Layer& layer = m.hidden[li];
        Layer& g_layer = grads.hidden[li];
        const Matrix& in =
            li == 0 ? x : cache.hidden_act[li - 1];
        Matrix d_in(b, layer.in_dim());
        for (std::size_t i = 0; i < b; ++i) {
            for (std::size_t r = 0; r < layer.out_dim(); ++r) {
                if (cache.hidden_pre[li](i, r) <= 0.0) continue;
                double g = d_act(i, r);
                g_layer.biases[r] += g;
                for (std::size_t c = 0; c < layer.in_dim(); ++c)
                    g_layer.weights(r, c) += g * in(i, c);
                for (std::size_t c = 0; c < layer.in_dim(); ++c)
                    d_in(i, c) += g * layer.weights(r, c);
            }
        }
        d_act = std::move(d_in);
    }
    return losses;
}

namespace detail {

inline void sgd_update_layer(Layer& param, Layer& velocity, const Layer& grad,
                             const TrainConfig& cfg) {
    for (std::size_t r = 0; r < param.out_dim(); ++r) {
        for (std::size_t c = 0; c < param.in_dim(); ++c) {
            double g = grad.weights(r, c) + cfg.weight_decay * param.weights(r, c);
            velocity.weights(r, c) = cfg.momentum * velocity.weights(r, c) + g;
            param.weights(r, c) -= cfg.learning_rate * velocity.weights(r, c);
        }
        double g = grad.biases[r] + cfg.weight_decay * param.biases[r];
        velocity.biases[r] = cfg.momentum * velocity.biases[r] + g;
        param.biases[r] -= cfg.learning_rate * velocity.biases[r];
    }
}

}  // namespace detail

// One SGD-with-momentum step on CE + triplet_weight * mean triplet. Mining is
// skipped entirely when the triplet weight is zero, so the ablated
// configuration consumes no mining randomness.
inline StepLosses train_step(MlpClassifier& model, SgdState& opt, const Matrix& x,
                             std::span<const int> labels, const TrainConfig& cfg,
                             std::uint64_t mining_seed) {
    std::vector<TripletIndices> triples;
    if (cfg.triplet_weight > 0.0)
        triples = detail::mine_triplet_indices(x.rows(), labels, mining_seed);
    ParamBlock grads;
    StepLosses losses =
        compute_gradients(model, x, labels, triples, cfg.margin, cfg.triplet_weight, grads);
    if (!std::isfinite(losses.cross_entropy) || !std::isfinite(losses.triplet))
        throw NumericalError("train_step: non-finite loss (ce=" +
                             std::to_string(losses.cross_entropy) + ", triplet=" +
                             std::to_string(losses.triplet) + ")");
    for (std::size_t li = 0; li < model.hidden.size(); ++li)
        detail::sgd_update_layer(model.hidden[li], opt.velocity.hidden[li],
                                 grads.hidden[li], cfg);
    detail::sgd_update_layer(model.embed, opt.velocity.embed, grads.embed, cfg);
    detail::sgd_update_layer(model.head, opt.velocity.head, grads.head, cfg);
    return losses;
}

}  // namespace maple
