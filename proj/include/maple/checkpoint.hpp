#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "maple/dataset.hpp"
#include "maple/errors.hpp"
#include "maple/gaussian_head.hpp"
#include "maple/mlp.hpp"
#include "maple/pca.hpp"
#include "maple/relabel.hpp"

namespace maple {

namespace detail {

inline void put_f64(std::ostream& os, double v) {
    std::uint64_t u;
    std::memcpy(&u, &v, 8);
    put_u64(os, u);
}

inline double get_f64(std::istream& is, const char* what) {
    std::uint64_t u = get_u64(is, what);
    double v;
    std::memcpy(&v, &u, 8);
    return v;
}

inline void put_matrix(std::ostream& os, const Matrix& m) {
    put_u64(os, m.rows());
    put_u64(os, m.cols());
    for (double v : m.storage()) put_f64(os, v);
}

inline Matrix get_matrix(std::istream& is, const char* what) {
    std::uint64_t rows = get_u64(is, what);
    std::uint64_t cols = get_u64(is, what);
    if (rows > (1ULL << 32) || cols > (1ULL << 32))
        throw DataError(std::string("checkpoint: implausible matrix size in ") + what);
    Matrix m(rows, cols);
    for (double& v : m.storage()) v = get_f64(is, what);
    return m;
}

inline void put_layer(std::ostream& os, const Layer& layer) {
    put_matrix(os, layer.weights);
    for (double v : layer.biases) put_f64(os, v);
}

inline Layer get_layer(std::istream& is, const char* what) {
    Layer layer;
    layer.weights = get_matrix(is, what);
    layer.biases.resize(layer.weights.rows());
    for (double& v : layer.biases) v = get_f64(is, what);
    return layer;
}

inline void expect_magic(std::istream& is, const char* magic, const char* what) {
    char buf[4];
    if (!is.read(buf, 4) || std::memcmp(buf, magic, 4) != 0)
        throw DataError(std::string("checkpoint: bad magic, expected ") + what);
}

}  // namespace detail

// Model checkpoint (MNN1) with the relabel state appended (MRS1 section).
inline void save_model(const std::string& path, const MlpClassifier& model,
                       const RelabelState& state, std::uint64_t seed) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot open for writing: " + path);
    os.write("MNN1", 4);
    detail::put_u64(os, model.input_dim);
    detail::put_u64(os, model.hidden.size());
    for (const Layer& l : model.hidden) detail::put_u64(os, l.out_dim());
    detail::put_u64(os, model.embedding_dim());
    detail::put_u64(os, model.num_outputs());
    detail::put_u64(os, seed);
    for (const Layer& l : model.hidden) detail::put_layer(os, l);
    detail::put_layer(os, model.embed);
    detail::put_layer(os, model.head);

    os.write("MRS1", 4);
    detail::put_u64(os, state.pseudo_labels.size());
    for (int p : state.pseudo_labels) detail::put_u32(os, static_cast<std::uint32_t>(p));
    detail::put_u64(os, state.label_map.num_pseudo());
    detail::put_u64(os, static_cast<std::uint64_t>(state.label_map.k));
    for (int orig : state.label_map.pseudo_to_original)
        detail::put_u32(os, static_cast<std::uint32_t>(orig));
    detail::put_u64(os, state.history.size());
    for (const RefineEvent& e : state.history) {
        detail::put_u64(os, e.epoch);
        detail::put_u64(os, e.classes_split.size());
        for (int c : e.classes_split) detail::put_u32(os, static_cast<std::uint32_t>(c));
        detail::put_u64(os, e.K_after);
    }
    if (!os) throw DataError("write failure: " + path);
}

struct ModelCheckpoint {
    MlpClassifier model;
    RelabelState state;
    std::uint64_t seed = 0;
};

inline ModelCheckpoint load_model(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open checkpoint: " + path);
    detail::expect_magic(is, "MNN1", "MNN1");
    ModelCheckpoint cp;
    cp.model.input_dim = detail::get_u64(is, "input dim");
    std::uint64_t n_hidden = detail::get_u64(is, "hidden layer count");
    if (n_hidden > 64) throw DataError("checkpoint: implausible hidden layer count");
    std::vector<std::uint64_t> dims(n_hidden);
    for (auto& d : dims) d = detail::get_u64(is, "hidden dim");
    std::uint64_t embedding_dim = detail::get_u64(is, "embedding dim");
    std::uint64_t n_out = detail::get_u64(is, "output count");
    cp.seed = detail::get_u64(is, "seed");
    for (std::uint64_t i = 0; i < n_hidden; ++i) {
        Layer l = detail::get_layer(is, "hidden layer");
        if (l.out_dim() != dims[i])
            throw DataError("checkpoint: hidden layer dimension mismatch");
        cp.model.hidden.push_back(std::move(l));
    }
    cp.model.embed = detail::get_layer(is, "embedding layer");
    cp.model.head = detail::get_layer(is, "head layer");
    if (cp.model.embed.out_dim() != embedding_dim ||
        cp.model.head.out_dim() != n_out ||
        cp.model.head.in_dim() != embedding_dim)
        throw DataError("checkpoint: layer dimensions do not match header");
    if (!all_finite(cp.model.head.weights.storage()) ||
        !all_finite(cp.model.embed.weights.storage()))
        throw DataError("checkpoint: non-finite parameter");

    detail::expect_magic(is, "MRS1", "MRS1");
    std::uint64_t n_train = detail::get_u64(is, "pseudo-label count");
    if (n_train > (1ULL << 40)) throw DataError("checkpoint: implausible pseudo-label count");
    cp.state.pseudo_labels.resize(n_train);
    for (auto& p : cp.state.pseudo_labels)
        p = static_cast<int>(detail::get_u32(is, "pseudo-label"));
    std::uint64_t big_k = detail::get_u64(is, "K");
    cp.state.label_map.k = static_cast<int>(detail::get_u64(is, "k"));
    cp.state.label_map.pseudo_to_original.resize(big_k);
    for (auto& orig : cp.state.label_map.pseudo_to_original)
        orig = static_cast<int>(detail::get_u32(is, "label map entry"));
    std::uint64_t n_events = detail::get_u64(is, "history length");
    if (n_events > (1ULL << 24)) throw DataError("checkpoint: implausible history length");
    for (std::uint64_t e = 0; e < n_events; ++e) {
        RefineEvent ev;
        ev.epoch = detail::get_u64(is, "event epoch");
        std::uint64_t n_cls = detail::get_u64(is, "event class count");
        if (n_cls > (1ULL << 24)) throw DataError("checkpoint: implausible event size");
        ev.classes_split.resize(n_cls);
        for (auto& c : ev.classes_split)
            c = static_cast<int>(detail::get_u32(is, "event class"));
        ev.K_after = detail::get_u64(is, "event K");
        cp.state.history.push_back(std::move(ev));
    }
    cp.state.label_map.validate();
    if (cp.model.num_outputs() != cp.state.K())
        throw DataError("checkpoint: head row count does not match pseudo-class count");
    for (int p : cp.state.pseudo_labels)
        if (p < 0 || static_cast<std::size_t>(p) >= cp.state.K())
            throw DataError("checkpoint: pseudo-label out of range");
    return cp;
}

// Gaussian head checkpoint (MGH1). Loading re-verifies the invariants:
// symmetry and factorization fidelity.
inline void save_head(const std::string& path, const GaussianHead& head) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot open for writing: " + path);
    os.write("MGH1", 4);
    detail::put_u64(os, head.dof);
    detail::put_u64(os, head.num_classes());
    detail::put_u64(os, static_cast<std::uint64_t>(head.label_map.k));
    for (int orig : head.label_map.pseudo_to_original)
        detail::put_u32(os, static_cast<std::uint32_t>(orig));
    detail::put_matrix(os, head.centroids);
    detail::put_matrix(os, head.covariance);
    detail::put_f64(os, head.jitter);
    if (!os) throw DataError("write failure: " + path);
}

inline GaussianHead load_head(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open checkpoint: " + path);
    detail::expect_magic(is, "MGH1", "MGH1");
    GaussianHead head;
    head.dof = detail::get_u64(is, "dof");
    std::uint64_t num_classes = detail::get_u64(is, "class count");
    if (num_classes > (1ULL << 24)) throw DataError("head checkpoint: implausible class count");
    head.label_map.k = static_cast<int>(detail::get_u64(is, "k"));
    head.label_map.pseudo_to_original.resize(num_classes);
    for (auto& orig : head.label_map.pseudo_to_original)
        orig = static_cast<int>(detail::get_u32(is, "label map entry"));
    head.centroids = detail::get_matrix(is, "centroids");
    head.covariance = detail::get_matrix(is, "covariance");
    head.jitter = detail::get_f64(is, "jitter");
    head.label_map.validate();
    if (head.centroids.rows() != num_classes || head.centroids.cols() != head.dof ||
        head.covariance.rows() != head.dof || head.covariance.cols() != head.dof)
        throw DataError("head checkpoint: dimension mismatch");
    for (std::size_t a = 0; a < head.dof; ++a)
        for (std::size_t b = 0; b < head.dof; ++b)
            if (std::abs(head.covariance(a, b) - head.covariance(b, a)) > 1e-12)
                throw DataError("head checkpoint: covariance not symmetric");
    Matrix adjusted = head.covariance;
    for (std::size_t i = 0; i < adjusted.rows(); ++i) adjusted(i, i) += head.jitter;
    if (!cholesky_lower(adjusted, head.chol_lower))
        throw DataError("head checkpoint: stored covariance does not factorize");
    for (std::size_t a = 0; a < head.dof; ++a)
        for (std::size_t b = 0; b <= a; ++b) {
            double v = 0.0;
            for (std::size_t t = 0; t <= b; ++t)
                v += head.chol_lower(a, t) * head.chol_lower(b, t);
            if (std::abs(v - adjusted(a, b)) > 1e-9 * std::max(1.0, std::abs(adjusted(a, b))))
                throw DataError("head checkpoint: factorization does not reproduce covariance");
        }
    return head;
}

// PCA transform checkpoint (MPC1).
inline void save_pca(const std::string& path, const PcaTransform& pca) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot open for writing: " + path);
    os.write("MPC1", 4);
    detail::put_u64(os, pca.input_dim());
    detail::put_u64(os, pca.reduced_dim());
    for (double v : pca.mean) detail::put_f64(os, v);
    for (double v : pca.stddev) detail::put_f64(os, v);
    for (std::uint8_t f : pca.zero_variance) os.put(static_cast<char>(f));
    detail::put_matrix(os, pca.components);
    detail::put_u64(os, pca.eigenvalues.size());
    for (double v : pca.eigenvalues) detail::put_f64(os, v);
    detail::put_f64(os, pca.explained_fraction);
    if (!os) throw DataError("write failure: " + path);
}

inline PcaTransform load_pca(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open checkpoint: " + path);
    detail::expect_magic(is, "MPC1", "MPC1");
    PcaTransform pca;
    std::uint64_t d = detail::get_u64(is, "input dim");
    std::uint64_t reduced = detail::get_u64(is, "reduced dim");
    if (d > (1ULL << 24) || reduced > d)
        throw DataError("pca checkpoint: implausible dimensions");
    pca.mean.resize(d);
    for (double& v : pca.mean) v = detail::get_f64(is, "mean");
    pca.stddev.resize(d);
    for (double& v : pca.stddev) v = detail::get_f64(is, "stddev");
    pca.zero_variance.resize(d);
    for (auto& f : pca.zero_variance) {
        char c;
        if (!is.get(c)) throw DataError("pca checkpoint: truncated flags");
        f = static_cast<std::uint8_t>(c);
    }
    pca.components = detail::get_matrix(is, "components");
    std::uint64_t n_eig = detail::get_u64(is, "eigenvalue count");
    if (n_eig != d) throw DataError("pca checkpoint: eigenvalue count mismatch");
    pca.eigenvalues.resize(n_eig);
    for (double& v : pca.eigenvalues) v = detail::get_f64(is, "eigenvalue");
    pca.explained_fraction = detail::get_f64(is, "explained fraction");
    if (pca.components.rows() != d || pca.components.cols() != reduced)
        throw DataError("pca checkpoint: component dimensions mismatch");
    // orthonormality
    for (std::size_t a = 0; a < reduced; ++a)
        for (std::size_t b = a; b < reduced; ++b) {
            double g = 0.0;
            for (std::size_t j = 0; j < d; ++j)
                g += pca.components(j, a) * pca.components(j, b);
            double expected = a == b ? 1.0 : 0.0;
            if (std::abs(g - expected) > 1e-9)
                throw DataError("pca checkpoint: components not orthonormal");
        }
    return pca;
}

}  // namespace maple
