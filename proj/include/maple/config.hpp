#pragma once

#include <charconv>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "maple/errors.hpp"
#include "maple/gaussian_head.hpp"
#include "maple/mlp.hpp"

namespace maple {

// Full run configuration: training settings plus the inference, evaluation
// and ablation knobs. Flat key=value files with '#' comments; every key has a
// default; command-line flags override file values.
struct RunConfig {
    TrainConfig train;
    double pca_variance_target = 0.95;
    std::size_t ece_bins = 15;
    std::size_t hist_bins = 15;
    DistanceMode distance_mode = DistanceMode::mahalanobis;
    bool use_pca = true;
    bool use_triplet = true;
    bool use_clustering = true;
    double train_frac = 0.8;
    double val_frac = 0.1;
    double test_frac = 0.1;
    std::string train_data;
    std::string test_data;  // optional; defaults to the test split of train_data
    std::vector<std::string> ood_data;
    std::string out_dir = "maple_out";

    // The ablation flags fold into the training config: no triplet means zero
    // weight, no clustering means a trigger threshold no ratio can exceed.
    TrainConfig effective_train() const {
        TrainConfig tc = train;
        if (!use_triplet) tc.triplet_weight = 0.0;
        if (!use_clustering) tc.fnr_threshold = 1.0;
        return tc;
    }

    void validate() const {
        train.validate();
        if (!(pca_variance_target > 0.0 && pca_variance_target <= 1.0))
            throw ConfigError("config: pca_variance_target must lie in (0, 1]");
        if (ece_bins < 1 || hist_bins < 1)
            throw ConfigError("config: bin counts must be >= 1");
        if (!(train_frac > 0.0 && val_frac > 0.0 && test_frac > 0.0))
            throw ConfigError("config: split fractions must be positive");
        if (train_frac + val_frac + test_frac > 1.0 + 1e-12)
            throw ConfigError("config: split fractions sum to more than 1");
    }
};

namespace detail {

inline double parse_double(const std::string& key, const std::string& value) {
    try {
        std::size_t pos = 0;
        double v = std::stod(value, &pos);
        if (pos != value.size()) throw std::invalid_argument("trailing");
        return v;
    } catch (const std::exception&) {
        throw ConfigError("config: bad numeric value for " + key + ": '" + value + "'");
    }
}

inline std::uint64_t parse_uint(const std::string& key, const std::string& value) {
    std::uint64_t v = 0;
    auto [p, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
    if (ec != std::errc() || p != value.data() + value.size())
        throw ConfigError("config: bad integer value for " + key + ": '" + value + "'");
    return v;
}

inline bool parse_bool(const std::string& key, const std::string& value) {
    if (value == "true" || value == "1" || value == "on") return true;
    if (value == "false" || value == "0" || value == "off") return false;
    throw ConfigError("config: bad boolean value for " + key + ": '" + value + "'");
}

inline std::vector<std::string> split_commas(const std::string& value) {
    std::vector<std::string> out;
    std::stringstream ss(value);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!item.empty()) out.push_back(item);
    return out;
}

inline std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

}  // namespace detail

inline void apply_config_value(RunConfig& cfg, const std::string& key,
                               const std::string& value) {
    using detail::parse_bool;
    using detail::parse_double;
    using detail::parse_uint;
    if (key == "learning_rate") cfg.train.learning_rate = parse_double(key, value);
    else if (key == "momentum") cfg.train.momentum = parse_double(key, value);
    else if (key == "weight_decay") cfg.train.weight_decay = parse_double(key, value);
    else if (key == "batch_size") cfg.train.batch_size = parse_uint(key, value);
    else if (key == "max_epochs") cfg.train.max_epochs = parse_uint(key, value);
    else if (key == "margin") cfg.train.margin = parse_double(key, value);
    else if (key == "validation_period") cfg.train.validation_period = parse_uint(key, value);
    else if (key == "fnr_threshold") cfg.train.fnr_threshold = parse_double(key, value);
    else if (key == "max_clusters") cfg.train.max_clusters = parse_uint(key, value);
    else if (key == "seed") cfg.train.seed = parse_uint(key, value);
    else if (key == "triplet_weight") cfg.train.triplet_weight = parse_double(key, value);
    else if (key == "hidden_dims") {
        cfg.train.hidden_dims.clear();
        for (const auto& tok : detail::split_commas(value))
            cfg.train.hidden_dims.push_back(parse_uint(key, tok));
    } else if (key == "embedding_dim") cfg.train.embedding_dim = parse_uint(key, value);
    else if (key == "pca_variance_target") cfg.pca_variance_target = parse_double(key, value);
    else if (key == "ece_bins") cfg.ece_bins = parse_uint(key, value);
    else if (key == "hist_bins") cfg.hist_bins = parse_uint(key, value);
    else if (key == "distance_mode") {
        if (value == "mahalanobis") cfg.distance_mode = DistanceMode::mahalanobis;
        else if (value == "euclidean") cfg.distance_mode = DistanceMode::euclidean;
        else throw ConfigError("config: distance_mode must be mahalanobis or euclidean");
    } else if (key == "use_pca") cfg.use_pca = parse_bool(key, value);
    else if (key == "use_triplet") cfg.use_triplet = parse_bool(key, value);
    else if (key == "use_clustering") cfg.use_clustering = parse_bool(key, value);
    else if (key == "train_frac") cfg.train_frac = parse_double(key, value);
    else if (key == "val_frac") cfg.val_frac = parse_double(key, value);
    else if (key == "test_frac") cfg.test_frac = parse_double(key, value);
    else if (key == "train_data") cfg.train_data = value;
    else if (key == "test_data") cfg.test_data = value;
    else if (key == "ood_data") cfg.ood_data = detail::split_commas(value);
    else if (key == "out_dir") cfg.out_dir = value;
    else throw ConfigError("config: unknown key '" + key + "'");
}

inline RunConfig parse_config_text(std::istream& is, const std::string& origin) {
    RunConfig cfg;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        std::size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config: " + origin + " line " + std::to_string(line_no) +
                              ": expected key=value");
        std::string key = detail::trim(line.substr(0, eq));
        std::string value = detail::trim(line.substr(eq + 1));
        apply_config_value(cfg, key, value);
    }
    return cfg;
}

inline RunConfig load_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config file: " + path);
    return parse_config_text(is, path);
}

// Canonical echo of the fully resolved configuration, written next to the run
// outputs so every run is reproducible from its artifacts.
inline std::string render_config(const RunConfig& cfg) {
    std::ostringstream os;
    os.precision(17);
    os << "learning_rate = " << cfg.train.learning_rate << "\n";
    os << "momentum = " << cfg.train.momentum << "\n";
    os << "weight_decay = " << cfg.train.weight_decay << "\n";
    os << "batch_size = " << cfg.train.batch_size << "\n";
    os << "max_epochs = " << cfg.train.max_epochs << "\n";
    os << "margin = " << cfg.train.margin << "\n";
    os << "validation_period = " << cfg.train.validation_period << "\n";
    os << "fnr_threshold = " << cfg.train.fnr_threshold << "\n";
    os << "max_clusters = " << cfg.train.max_clusters << "\n";
    os << "seed = " << cfg.train.seed << "\n";
    os << "triplet_weight = " << cfg.train.triplet_weight << "\n";
    os << "hidden_dims = ";
    for (std::size_t i = 0; i < cfg.train.hidden_dims.size(); ++i)
        os << (i ? "," : "") << cfg.train.hidden_dims[i];
    os << "\n";
    os << "embedding_dim = " << cfg.train.embedding_dim << "\n";
    os << "pca_variance_target = " << cfg.pca_variance_target << "\n";
    os << "ece_bins = " << cfg.ece_bins << "\n";
    os << "hist_bins = " << cfg.hist_bins << "\n";
    os << "distance_mode = "
       << (cfg.distance_mode == DistanceMode::mahalanobis ? "mahalanobis" : "euclidean")
       << "\n";
    os << "use_pca = " << (cfg.use_pca ? "true" : "false") << "\n";
    os << "use_triplet = " << (cfg.use_triplet ? "true" : "false") << "\n";
    os << "use_clustering = " << (cfg.use_clustering ? "true" : "false") << "\n";
    os << "train_frac = " << cfg.train_frac << "\n";
    os << "val_frac = " << cfg.val_frac << "\n";
    os << "test_frac = " << cfg.test_frac << "\n";
    os << "train_data = " << cfg.train_data << "\n";
    os << "test_data = " << cfg.test_data << "\n";
    os << "ood_data = ";
    for (std::size_t i = 0; i < cfg.ood_data.size(); ++i)
        os << (i ? "," : "") << cfg.ood_data[i];
    os << "\n";
    os << "out_dir = " << cfg.out_dir << "\n";
    return os.str();
}

}  // namespace maple
