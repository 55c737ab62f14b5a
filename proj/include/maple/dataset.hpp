#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "maple/errors.hpp"
#include "maple/matrix.hpp"
#include "maple/rng.hpp"

namespace maple {

// Feature matrix with integer class labels. Labels always refer to the
// original classes; pseudo-labels live in RelabelState and are never stored
// in a dataset.
struct LabeledDataset {
    Matrix features;                       // N x D
    std::vector<int> labels;               // values in [0, num_classes)
    std::vector<std::string> class_names;  // size num_classes
    int num_classes = 0;

    std::size_t size() const { return features.rows(); }
    std::size_t dim() const { return features.cols(); }

    void validate() const {
        if (features.rows() < 1) throw DataError("dataset: N must be >= 1");
        if (features.cols() < 1) throw DataError("dataset: D must be >= 1");
        if (num_classes < 1) throw DataError("dataset: class count must be >= 1");
        if (labels.size() != features.rows())
            throw DataError("dataset: label count does not match row count");
        if (class_names.size() != static_cast<std::size_t>(num_classes))
            throw DataError("dataset: class name count does not match class count");
        for (const auto& name : class_names) {
            if (name.empty()) throw DataError("dataset: empty class name");
            for (char c : name)
                if (std::isspace(static_cast<unsigned char>(c)) ||
                    std::iscntrl(static_cast<unsigned char>(c)))
                    throw DataError("dataset: class name contains whitespace");
        }
        for (std::size_t i = 0; i < labels.size(); ++i)
            if (labels[i] < 0 || labels[i] >= num_classes)
                throw DataError("dataset: label out of range at row " + std::to_string(i));
        if (!all_finite(features.storage()))
            throw DataError("dataset: non-finite feature value");
    }

    friend bool operator==(const LabeledDataset& a, const LabeledDataset& b) {
        return a.features == b.features && a.labels == b.labels &&
               a.class_names == b.class_names && a.num_classes == b.num_classes;
    }
};

struct DatasetSplit {
    std::vector<std::size_t> train_idx;
    std::vector<std::size_t> val_idx;
    std::vector<std::size_t> test_idx;
};

// Synthetic data: each class is a list of isotropic Gaussian modes.
struct ModeSpec {
    std::vector<double> mean;
    double isotropic_std = 1.0;
    std::size_t count = 0;
};

struct ClassSpec {
    std::string name;
    std::vector<ModeSpec> modes;
};

struct MixtureSpec {
    std::vector<ClassSpec> classes;
    std::uint64_t seed = 0;

    void validate() const {
        if (classes.empty()) throw DataError("mixture spec: no classes");
        std::size_t dim = 0;
        for (const auto& cls : classes) {
            if (cls.modes.empty())
                throw DataError("mixture spec: class '" + cls.name + "' has no modes");
            for (const auto& mode : cls.modes) {
                if (mode.mean.empty()) throw DataError("mixture spec: empty mode mean");
                if (dim == 0) dim = mode.mean.size();
                if (mode.mean.size() != dim)
                    throw DataError("mixture spec: inconsistent mode dimensions");
                if (!(mode.isotropic_std > 0.0))
                    throw DataError("mixture spec: mode std must be positive");
                if (mode.count < 1)
                    throw DataError("mixture spec: mode count must be >= 1");
            }
        }
    }
};

// Samples every mode i.i.d. from an isotropic Gaussian. Pure function of the
// spec (including its seed): rows are emitted class by class, mode by mode.
inline LabeledDataset generate_mixture(const MixtureSpec& spec) {
    spec.validate();
    std::size_t n = 0;
    for (const auto& cls : spec.classes)
        for (const auto& mode : cls.modes) n += mode.count;
    const std::size_t d = spec.classes[0].modes[0].mean.size();

    LabeledDataset ds;
    ds.features = Matrix(n, d);
    ds.labels.resize(n);
    ds.num_classes = static_cast<int>(spec.classes.size());
    Rng rng(spec.seed);
    std::size_t row = 0;
    for (std::size_t c = 0; c < spec.classes.size(); ++c) {
        const auto& cls = spec.classes[c];
        ds.class_names.push_back(cls.name.empty() ? "class_" + std::to_string(c)
                                                  : cls.name);
        for (const auto& mode : cls.modes) {
            for (std::size_t i = 0; i < mode.count; ++i) {
                auto out = ds.features.row(row);
                for (std::size_t j = 0; j < d; ++j)
                    out[j] = mode.mean[j] + mode.isotropic_std * rng.normal();
                ds.labels[row] = static_cast<int>(c);
                ++row;
            }
        }
    }
    ds.validate();
    return ds;
}

enum class DatasetFormat { text, binary };

namespace detail {

constexpr char kEmbMagic[4] = {'M', 'E', 'B', '1'};

inline void put_u32(std::ostream& os, std::uint32_t v) {
    std::array<unsigned char, 4> b;
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    os.write(reinterpret_cast<const char*>(b.data()), 4);
}

inline void put_u64(std::ostream& os, std::uint64_t v) {
    std::array<unsigned char, 8> b;
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    os.write(reinterpret_cast<const char*>(b.data()), 8);
}

inline void put_f32(std::ostream& os, float v) {
    std::uint32_t u;
    std::memcpy(&u, &v, 4);
    put_u32(os, u);
}

inline std::uint32_t get_u32(std::istream& is, const char* what) {
    std::array<unsigned char, 4> b;
    if (!is.read(reinterpret_cast<char*>(b.data()), 4))
        throw DataError(std::string("binary dataset: truncated while reading ") + what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
}

inline std::uint64_t get_u64(std::istream& is, const char* what) {
    std::array<unsigned char, 8> b;
    if (!is.read(reinterpret_cast<char*>(b.data()), 8))
        throw DataError(std::string("binary dataset: truncated while reading ") + what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

inline float get_f32(std::istream& is, const char* what) {
    std::uint32_t u = get_u32(is, what);
    float v;
    std::memcpy(&v, &u, 4);
    return v;
}

inline std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace detail

inline void save_dataset(const LabeledDataset& ds, const std::string& path,
                         DatasetFormat format = DatasetFormat::binary) {
    ds.validate();
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot open for writing: " + path);
    if (format == DatasetFormat::text) {
        os << "MAPLE-EMB v1 N=" << ds.size() << " D=" << ds.dim()
           << " K=" << ds.num_classes << "\n";
        os << "classes";
        for (const auto& name : ds.class_names) os << ' ' << name;
        os << "\n";
        for (std::size_t i = 0; i < ds.size(); ++i) {
            os << ds.labels[i];
            auto row = ds.features.row(i);
            for (double v : row) os << ' ' << detail::format_double(v);
            os << "\n";
        }
    } else {
        os.write(detail::kEmbMagic, 4);
        detail::put_u64(os, ds.size());
        detail::put_u64(os, ds.dim());
        detail::put_u64(os, static_cast<std::uint64_t>(ds.num_classes));
        for (const auto& name : ds.class_names) {
            detail::put_u32(os, static_cast<std::uint32_t>(name.size()));
            os.write(name.data(), static_cast<std::streamsize>(name.size()));
        }
        for (std::size_t i = 0; i < ds.size(); ++i) {
            detail::put_u32(os, static_cast<std::uint32_t>(ds.labels[i]));
            auto row = ds.features.row(i);
            for (double v : row) detail::put_f32(os, static_cast<float>(v));
        }
    }
    if (!os) throw DataError("write failure: " + path);
}

namespace detail {

inline LabeledDataset load_dataset_text(std::istream& is) {
    std::string header;
    if (!std::getline(is, header))
        throw DataError("text dataset: missing header line");
    std::istringstream hs(header);
    std::string magic, version, ntok, dtok, ktok;
    hs >> magic >> version >> ntok >> dtok >> ktok;
    if (magic != "MAPLE-EMB" || version != "v1" || ntok.rfind("N=", 0) != 0 ||
        dtok.rfind("D=", 0) != 0 || ktok.rfind("K=", 0) != 0)
        throw DataError("text dataset: malformed header: " + header);
    auto parse_count = [&](const std::string& tok) -> std::size_t {
        std::size_t value = 0;
        const char* first = tok.data() + 2;
        const char* last = tok.data() + tok.size();
        auto [p, ec] = std::from_chars(first, last, value);
        if (ec != std::errc() || p != last)
            throw DataError("text dataset: malformed header field: " + tok);
        return value;
    };
    const std::size_t n = parse_count(ntok);
    const std::size_t d = parse_count(dtok);
    const std::size_t k = parse_count(ktok);
    if (n < 1 || d < 1 || k < 1)
        throw DataError("text dataset: header counts must be positive");

    std::string classes_line;
    if (!std::getline(is, classes_line))
        throw DataError("text dataset: missing classes line");
    std::istringstream cs(classes_line);
    std::string tag;
    cs >> tag;
    if (tag != "classes") throw DataError("text dataset: malformed classes line");
    LabeledDataset ds;
    std::string name;
    while (cs >> name) ds.class_names.push_back(name);
    if (ds.class_names.size() != k)
        throw DataError("text dataset: expected " + std::to_string(k) +
                        " class names, got " + std::to_string(ds.class_names.size()));

    ds.num_classes = static_cast<int>(k);
    ds.features = Matrix(n, d);
    ds.labels.resize(n);
    std::string line;
    for (std::size_t i = 0; i < n; ++i) {
        if (!std::getline(is, line))
            throw DataError("text dataset: expected " + std::to_string(n) +
                            " rows, got " + std::to_string(i));
        std::istringstream ls(line);
        long label = 0;
        if (!(ls >> label))
            throw DataError("text dataset: row " + std::to_string(i) + ": missing label");
        if (label < 0 || label >= static_cast<long>(k))
            throw DataError("text dataset: row " + std::to_string(i) + ": label " +
                            std::to_string(label) + " out of range [0, " +
                            std::to_string(k) + ")");
        ds.labels[i] = static_cast<int>(label);
        auto row = ds.features.row(i);
        std::size_t got = 0;
        std::string token;
        while (ls >> token) {
            // strtod accepts nan/inf tokens, which the finiteness check below
            // then rejects with its own diagnostic
            char* end = nullptr;
            double v = std::strtod(token.c_str(), &end);
            if (end != token.c_str() + token.size())
                throw DataError("text dataset: row " + std::to_string(i) +
                                ": unparsable value '" + token + "'");
            if (got < d) row[got] = v;
            ++got;
        }
        if (got != d)
            throw DataError("text dataset: row " + std::to_string(i) + ": expected " +
                            std::to_string(d) + " values, got " + std::to_string(got));
        for (double x : row)
            if (!std::isfinite(x))
                throw DataError("text dataset: row " + std::to_string(i) +
                                ": non-finite value");
    }
    ds.validate();
    return ds;
}

inline LabeledDataset load_dataset_binary(std::istream& is) {
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, kEmbMagic, 4) != 0)
        throw DataError("binary dataset: bad magic");
    const std::uint64_t n = get_u64(is, "N");
    const std::uint64_t d = get_u64(is, "D");
    const std::uint64_t k = get_u64(is, "K");
    if (n < 1 || d < 1 || k < 1)
        throw DataError("binary dataset: header counts must be positive");
    if (n > (1ULL << 40) || d > (1ULL << 24) || k > (1ULL << 24))
        throw DataError("binary dataset: implausible header counts");
    LabeledDataset ds;
    ds.num_classes = static_cast<int>(k);
    for (std::uint64_t i = 0; i < k; ++i) {
        std::uint32_t len = get_u32(is, "class name length");
        if (len == 0 || len > (1u << 16))
            throw DataError("binary dataset: implausible class name length");
        std::string name(len, '\0');
        if (!is.read(name.data(), len))
            throw DataError("binary dataset: truncated while reading class name");
        ds.class_names.push_back(std::move(name));
    }
    ds.features = Matrix(n, d);
    ds.labels.resize(n);
    for (std::uint64_t i = 0; i < n; ++i) {
        std::uint32_t label = get_u32(is, "label");
        if (label >= k)
            throw DataError("binary dataset: row " + std::to_string(i) + ": label " +
                            std::to_string(label) + " out of range [0, " +
                            std::to_string(k) + ")");
        ds.labels[i] = static_cast<int>(label);
        auto row = ds.features.row(i);
        for (std::uint64_t j = 0; j < d; ++j) {
            float v = get_f32(is, "feature");
            if (!std::isfinite(v))
                throw DataError("binary dataset: row " + std::to_string(i) +
                                ": non-finite value");
            row[j] = static_cast<double>(v);
        }
    }
    char extra;
    if (is.read(&extra, 1))
        throw DataError("binary dataset: trailing bytes after last record");
    ds.validate();
    return ds;
}

}  // namespace detail

// Loads either variant; the format is detected from the leading bytes.
inline LabeledDataset load_dataset(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open dataset: " + path);
    char head[4] = {0, 0, 0, 0};
    is.read(head, 4);
    is.clear();
    is.seekg(0);
    if (std::memcmp(head, detail::kEmbMagic, 4) == 0)
        return detail::load_dataset_binary(is);
    return detail::load_dataset_text(is);
}

struct SplitFractions {
    double train = 0.8;
    double val = 0.1;
    double test = 0.1;
};

// Per-class proportional split. Each split receives floor(fraction * class
// size) samples of every class, so the stratification error is below one
// sample per class per split. Deterministic given the seed.
inline DatasetSplit stratified_split(const LabeledDataset& ds,
                                     const SplitFractions& fractions,
                                     std::uint64_t seed) {
    ds.validate();
    if (!(fractions.train > 0.0 && fractions.val > 0.0 && fractions.test > 0.0))
        throw ConfigError("stratified_split: fractions must be positive");
    if (fractions.train + fractions.val + fractions.test > 1.0 + 1e-12)
        throw ConfigError("stratified_split: fractions sum to more than 1");

    std::vector<std::vector<std::size_t>> by_class(ds.num_classes);
    for (std::size_t i = 0; i < ds.size(); ++i)
        by_class[ds.labels[i]].push_back(i);

    DatasetSplit split;
    for (int c = 0; c < ds.num_classes; ++c) {
        auto& members = by_class[c];
        const std::size_t n = members.size();
        const auto n_train = static_cast<std::size_t>(fractions.train * n);
        const auto n_val = static_cast<std::size_t>(fractions.val * n);
        const auto n_test = static_cast<std::size_t>(fractions.test * n);
        if (n_train == 0 || n_val == 0 || n_test == 0)
            throw DataError("stratified_split: class " + std::to_string(c) +
                            " has fewer samples than split parts");
        Rng rng(derive_seed(seed, rng_stream::split, static_cast<std::uint64_t>(c)));
        rng.shuffle(members);
        split.train_idx.insert(split.train_idx.end(), members.begin(),
                               members.begin() + n_train);
        split.val_idx.insert(split.val_idx.end(), members.begin() + n_train,
                             members.begin() + n_train + n_val);
        split.test_idx.insert(split.test_idx.end(), members.begin() + n_train + n_val,
                              members.begin() + n_train + n_val + n_test);
    }
    std::sort(split.train_idx.begin(), split.train_idx.end());
    std::sort(split.val_idx.begin(), split.val_idx.end());
    std::sort(split.test_idx.begin(), split.test_idx.end());
    return split;
}

}  // namespace maple
