#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "maple/pipeline.hpp"
#include "test_support.hpp"

using namespace maple;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
    auto dir = fs::temp_directory_path() / "maple_pipeline_tests" / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string read_file(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    REQUIRE(is.good());
    return {std::istreambuf_iterator<char>(is), {}};
}

// small, fast three-class setup for pipeline plumbing tests
RunConfig tiny_config(const fs::path& dir) {
    MixtureSpec spec;
    spec.seed = 404;
    for (int c = 0; c < 3; ++c) {
        ClassSpec cls;
        cls.name = "c" + std::to_string(c);
        cls.modes = {{{3.0 * c, 1.5 * c, 0.0}, 0.2, 120}};
        spec.classes.push_back(cls);
    }
    save_dataset(generate_mixture(spec), (dir / "train.emb").string());

    MixtureSpec ood;
    ood.seed = 405;
    ClassSpec far;
    far.name = "far";
    far.modes = {{{-20.0, -20.0, 10.0}, 0.2, 80}};
    ood.classes = {far};
    save_dataset(generate_mixture(ood), (dir / "ood.emb").string());

    RunConfig cfg;
    cfg.train.seed = 11;
    cfg.train.max_epochs = 8;
    cfg.train.validation_period = 4;
    cfg.train.batch_size = 64;
    cfg.train.hidden_dims = {16, 16};
    cfg.train.embedding_dim = 4;
    cfg.train_data = (dir / "train.emb").string();
    cfg.ood_data = {(dir / "ood.emb").string()};
    cfg.out_dir = (dir / "run").string();
    cfg.train_frac = 0.6;
    cfg.val_frac = 0.2;
    cfg.test_frac = 0.2;
    return cfg;
}

std::string strip_latency(const std::string& report) {
    std::istringstream is(report);
    std::ostringstream os;
    std::string line;
    while (std::getline(is, line))
        if (line.rfind("latency_ms_per_sample", 0) != 0) os << line << "\n";
    return os.str();
}

}  // namespace

TEST_CASE("mixture spec json round-trip through cmd_gen") {
    auto dir = fresh_dir("gen");
    auto spec_path = dir / "spec.json";
    {
        std::ofstream os(spec_path);
        os << R"({
  "seed": 7,
  "classes": [
    {"name": "a", "modes": [{"mean": [0, 0], "std": 0.5, "count": 30}]},
    {"name": "b", "modes": [{"mean": [5, 5], "std": 0.5, "count": 40},
                             {"mean": [9, 9], "std": 0.5, "count": 10}]}
  ]
})";
    }
    auto out_path = dir / "data.emb";
    cmd_gen(spec_path.string(), out_path.string());
    auto ds = load_dataset(out_path.string());
    REQUIRE(ds.size() == 80);
    REQUIRE(ds.num_classes == 2);
    REQUIRE(ds.class_names == std::vector<std::string>{"a", "b"});

    std::ofstream(spec_path) << "{ not json";
    REQUIRE_THROWS_AS(cmd_gen(spec_path.string(), out_path.string()), DataError);
}

TEST_CASE("train and eval produce a consistent artifact set") {
    auto dir = fresh_dir("train_eval");
    auto cfg = tiny_config(dir);
    auto out = cmd_train(cfg);
    REQUIRE(fs::exists(dir / "run" / "model.mnn"));
    REQUIRE(fs::exists(dir / "run" / "head.mgh"));
    REQUIRE(fs::exists(dir / "run" / "pca.mpc"));
    REQUIRE(fs::exists(dir / "run" / "train_log.ndjson"));
    REQUIRE(fs::exists(dir / "run" / "config.resolved"));
    REQUIRE(out.result.log.size() == cfg.train.max_epochs);

    auto report = cmd_eval(cfg);
    REQUIRE(fs::exists(dir / "run" / "report.txt"));
    REQUIRE(fs::exists(dir / "run" / "calibration_bins.tsv"));
    REQUIRE(fs::exists(dir / "run" / "uncertainty_hist_id.tsv"));
    REQUIRE(report.accuracy_md >= 0.9);  // trivially separable classes
    REQUIRE(report.accuracy_softmax >= 0.9);
    REQUIRE(report.ood.size() == 1);
    REQUIRE(report.ood[0].auroc >= 0.9);
    REQUIRE(report.ood[0].aupr >= 0.9);
    REQUIRE(report.num_classes >= 3);
    REQUIRE(report.reduced_dim >= 1);

    // histogram counts account for every test / ood sample
    std::size_t id_total = 0;
    for (auto c : report.id_uncertainty_histogram) id_total += c;
    REQUIRE(id_total == 72);  // 3 * 120 * 0.2
    std::size_t ood_total = 0;
    for (auto c : report.ood[0].uncertainty_histogram) ood_total += c;
    REQUIRE(ood_total == 80);
}

TEST_CASE("rerunning the pipeline reproduces artifacts byte for byte") {
    auto dir = fresh_dir("determinism");
    auto cfg = tiny_config(dir);
    cmd_train(cfg);
    cmd_eval(cfg);
    auto log1 = read_file(dir / "run" / "train_log.ndjson");
    auto model1 = read_file(dir / "run" / "model.mnn");
    auto head1 = read_file(dir / "run" / "head.mgh");
    auto pca1 = read_file(dir / "run" / "pca.mpc");
    auto report1 = strip_latency(read_file(dir / "run" / "report.txt"));

    fs::remove_all(dir / "run");
    cmd_train(cfg);
    cmd_eval(cfg);
    REQUIRE(read_file(dir / "run" / "train_log.ndjson") == log1);
    REQUIRE(read_file(dir / "run" / "model.mnn") == model1);
    REQUIRE(read_file(dir / "run" / "head.mgh") == head1);
    REQUIRE(read_file(dir / "run" / "pca.mpc") == pca1);
    REQUIRE(strip_latency(read_file(dir / "run" / "report.txt")) == report1);
}

TEST_CASE("eval never mutates checkpoints and train never reads ood data") {
    auto dir = fresh_dir("isolation");
    auto cfg = tiny_config(dir);
    cfg.ood_data = {(dir / "does_not_exist.emb").string()};
    cmd_train(cfg);  // must succeed: training has no business with ood files

    auto model_before = read_file(dir / "run" / "model.mnn");
    auto head_before = read_file(dir / "run" / "head.mgh");
    cfg.ood_data.clear();
    cmd_eval(cfg);
    REQUIRE(read_file(dir / "run" / "model.mnn") == model_before);
    REQUIRE(read_file(dir / "run" / "head.mgh") == head_before);
}

TEST_CASE("eval can use a dedicated test set file") {
    auto dir = fresh_dir("testset");
    auto cfg = tiny_config(dir);
    cmd_train(cfg);
    cfg.test_data = cfg.train_data;  // evaluate on the full file
    auto report = cmd_eval(cfg);
    REQUIRE(report.accuracy_md >= 0.9);
}

TEST_CASE("euclidean mode evaluates end to end") {
    auto dir = fresh_dir("euclid");
    auto cfg = tiny_config(dir);
    cfg.distance_mode = DistanceMode::euclidean;
    cmd_train(cfg);
    auto report = cmd_eval(cfg);
    REQUIRE(report.accuracy_md >= 0.9);
}

TEST_CASE("ablation runs all six rows and renders a table") {
    auto dir = fresh_dir("ablate");
    auto cfg = tiny_config(dir);
    cfg.train.max_epochs = 4;
    cfg.train.validation_period = 2;
    cfg.out_dir = (dir / "ablation").string();
    auto result = cmd_ablate(cfg);
    REQUIRE(result.reports.size() == 6);
    for (std::size_t i = 0; i < 6; ++i) {
        INFO("row " << i + 1 << ": " << result.errors[i]);
        REQUIRE(result.reports[i].has_value());
    }
    // row 1 runs without projection, so the table shows no component count
    REQUIRE(result.reports[0]->reduced_dim == 0);
    REQUIRE(result.reports[1]->reduced_dim >= 1);
    REQUIRE_THAT(result.table, Catch::Matchers::ContainsSubstring("DNN+PCA+ED"));
    REQUIRE_THAT(result.table, Catch::Matchers::ContainsSubstring("MAPLE"));
    REQUIRE(fs::exists(dir / "ablation" / "ablation_table.tsv"));
    // rows 1 and 2 share their training path; projection must not change the
    // softmax accuracy
    REQUIRE(result.reports[0]->accuracy_softmax ==
            Catch::Approx(result.reports[1]->accuracy_softmax));
}

TEST_CASE("a failing ablation row is annotated while the rest complete") {
    auto dir = fresh_dir("ablate_fail");
    auto cfg = tiny_config(dir);
    cfg.train.max_epochs = 2;
    cfg.train.validation_period = 1;
    cfg.out_dir = (dir / "ablation").string();
    // poison the data file after writing a valid config: rows will fail to load
    std::ofstream(cfg.train_data) << "garbage";
    auto result = cmd_ablate(cfg);
    for (std::size_t i = 0; i < 6; ++i) {
        REQUIRE_FALSE(result.reports[i].has_value());
        REQUIRE_FALSE(result.errors[i].empty());
    }
    REQUIRE_THAT(result.table, Catch::Matchers::ContainsSubstring("FAILED"));
}

TEST_CASE("sweep over the trigger threshold") {
    auto dir = fresh_dir("sweep");
    auto cfg = tiny_config(dir);
    cfg.train.max_epochs = 4;
    cfg.train.validation_period = 2;
    cfg.out_dir = (dir / "sweep").string();
    auto result = cmd_sweep(cfg, "t", {0.0, 1.0});
    REQUIRE(result.reports.size() == 2);
    REQUIRE(result.reports[0].has_value());
    REQUIRE(result.reports[1].has_value());
    // t = 1.0 can never trigger, so the class count stays at 3
    REQUIRE(result.reports[1]->num_classes == 3);
    REQUIRE_THAT(result.table, Catch::Matchers::ContainsSubstring("num_classes"));
    REQUIRE_THROWS_AS(cmd_sweep(cfg, "sigma", {1.0}), ConfigError);
}

TEST_CASE("worker thread cap honors MAPLE_THREADS") {
    // the env var is read per call; a bogus value falls back to hardware
    ::setenv("MAPLE_THREADS", "3", 1);
    REQUIRE(worker_threads() == 3);
    ::setenv("MAPLE_THREADS", "junk", 1);
    REQUIRE(worker_threads() >= 1);
    ::unsetenv("MAPLE_THREADS");
    REQUIRE(worker_threads() >= 1);
}
