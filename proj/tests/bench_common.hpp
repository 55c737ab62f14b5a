#pragma once

// The synthetic end-to-end benchmark shared by the integration tests and the
// acceptance suite: four classes in 10 dimensions, class 0 made of three
// isotropic modes on orthogonal axes with pairwise separation 26*sqrt(2)
// sigma, classes 1-3 single tight modes of equal total mass plus a small
// broad-tailed component that keeps the pooled covariance honest about
// outliers. The out-of-distribution set is a Gaussian on axes the training
// data never touches, over 30 sigma from every mode.

#include <filesystem>
#include <string>

#include "maple/config.hpp"
#include "maple/dataset.hpp"
#include "maple/pipeline.hpp"

namespace bench {

constexpr double kSigma = 0.05;
constexpr double kAxisPos = 26.0 * kSigma;       // class centroid positions
constexpr double kHaloStd = 100.0 * kSigma;      // broad-tail component
constexpr std::size_t kHaloCount = 40;
constexpr std::size_t kPerMode = 625;            // 500 train samples per mode at 0.8
constexpr std::size_t kClassTotal = 3 * kPerMode;
constexpr std::uint64_t kTrainDataSeed = 1007;
constexpr std::uint64_t kOodDataSeed = 1008;
constexpr std::uint64_t kRunSeed = 2;

inline maple::ModeSpec axis_mode(int axis, double position, double stddev,
                                 std::size_t count) {
    maple::ModeSpec m;
    m.mean.assign(10, 0.0);
    m.mean[axis] = position;
    m.isotropic_std = stddev;
    m.count = count;
    return m;
}

inline maple::MixtureSpec train_mixture() {
    maple::MixtureSpec spec;
    spec.seed = kTrainDataSeed;
    maple::ClassSpec c0;
    c0.name = "multi";
    c0.modes = {axis_mode(0, kAxisPos, kSigma, kPerMode),
                axis_mode(1, kAxisPos, kSigma, kPerMode),
                axis_mode(2, kAxisPos, kSigma, kPerMode)};
    spec.classes.push_back(c0);
    for (int c = 1; c <= 3; ++c) {
        maple::ClassSpec cc;
        cc.name = "uni" + std::to_string(c);
        cc.modes = {axis_mode(2 + c, kAxisPos, kSigma, kClassTotal - kHaloCount),
                    axis_mode(2 + c, kAxisPos, kHaloStd, kHaloCount)};
        spec.classes.push_back(cc);
    }
    return spec;
}

inline maple::MixtureSpec ood_mixture() {
    maple::MixtureSpec spec;
    spec.seed = kOodDataSeed;
    maple::ClassSpec c;
    c.name = "ood";
    maple::ModeSpec m;
    m.mean.assign(10, 0.0);
    m.mean[6] = kAxisPos;
    m.mean[7] = kAxisPos;
    m.isotropic_std = kSigma;
    m.count = 500;
    c.modes = {m};
    spec.classes = {c};
    return spec;
}

// Writes train.emb and ood.emb into dir (skips files that already exist).
inline void write_datasets(const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    auto train_path = dir / "train.emb";
    auto ood_path = dir / "ood.emb";
    if (!std::filesystem::exists(train_path))
        maple::save_dataset(maple::generate_mixture(train_mixture()),
                            train_path.string());
    if (!std::filesystem::exists(ood_path))
        maple::save_dataset(maple::generate_mixture(ood_mixture()), ood_path.string());
}

inline maple::RunConfig base_config(const std::filesystem::path& data_dir,
                                    const std::filesystem::path& out_dir) {
    maple::RunConfig cfg;
    cfg.train.seed = kRunSeed;
    cfg.train.max_epochs = 60;
    cfg.train.validation_period = 10;
    cfg.train.fnr_threshold = 0.3;
    cfg.train.max_clusters = 5;
    cfg.train.batch_size = 3750;  // full batch: few, clean steps per epoch
    cfg.train.learning_rate = 0.025;
    cfg.train.margin = 0.05;
    cfg.train.embedding_dim = 2;
    cfg.train_data = (data_dir / "train.emb").string();
    cfg.ood_data = {(data_dir / "ood.emb").string()};
    cfg.out_dir = out_dir.string();
    return cfg;
}

}  // namespace bench
