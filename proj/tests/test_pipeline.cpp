#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "deepgmm/pipeline.hpp"
#include "test_support.hpp"

using namespace deepgmm;
namespace fs = std::filesystem;

namespace {

std::string read_text(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// Small, fast settings on a 300-sample synthetic benchmark.
RunConfig small_config(const fs::path& out, std::uint64_t seed = 3) {
    RunConfig c;
    c.out = out.string();
    c.seed = seed;
    c.synth_n = 300;
    c.hidden = {16};
    c.rep_dim = 4;
    c.clusters = 3;
    c.autoencoder.pretrain_epochs = 5;
    c.autoencoder.finetune_epochs = 5;
    c.autoencoder.batch_size = 32;
    c.autoencoder.learning_rate = 1e-3;
    c.joint.learning_rate = 3e-4;
    c.joint.batch_size = 64;
    c.joint.epochs = 4;
    c.joint.seed = seed;
    c.data = (out / "synth.csv").string();
    return c;
}

void run_all(const RunConfig& c) {
    cmd_synth(c);
    cmd_pretrain(c);
    cmd_init_gmm(c);
    cmd_train(c);
    cmd_eval(c);
}

std::vector<std::vector<double>> read_numeric_csv(const fs::path& path, bool skip_comment) {
    std::ifstream in(path);
    std::string line;
    std::vector<std::vector<double>> rows;
    bool header_done = false;
    while (std::getline(in, line)) {
        if (skip_comment && !line.empty() && line[0] == '#') continue;
        if (!header_done) {
            header_done = true;
            continue;
        }
        std::vector<double> row;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) row.push_back(std::stod(cell));
        rows.push_back(row);
    }
    return rows;
}

double mean_intra_cluster_distance(const fs::path& embedding) {
    const auto rows = read_numeric_csv(embedding, false);
    std::map<int, std::vector<std::pair<double, double>>> groups;
    for (const auto& r : rows) groups[int(r[2])].emplace_back(r[0], r[1]);
    double total = 0.0;
    std::size_t pairs = 0;
    for (const auto& [label, pts] : groups)
        for (std::size_t i = 0; i < pts.size(); ++i)
            for (std::size_t j = i + 1; j < pts.size(); ++j) {
                total += std::hypot(pts[i].first - pts[j].first, pts[i].second - pts[j].second);
                ++pairs;
            }
    return total / double(pairs);
}

}  // namespace

TEST_SUITE("pipeline") {
    TEST_CASE("config text round trip and override precedence") {
        RunConfig c;
        c.hidden = {8, 4};
        c.joint.eta = 0.25;
        const auto text = to_config_text(to_map(c));
        const auto back = apply_overrides(RunConfig{}, parse_config_text(text));
        CHECK(to_map(back) == to_map(c));

        const auto parsed = parse_config_text("# comment\n eta = 0.5 \n\nclusters=4\n");
        CHECK(parsed.at("eta") == "0.5");
        const auto applied = apply_overrides(RunConfig{}, parsed);
        CHECK(applied.joint.eta == 0.5);
        CHECK(applied.clusters == 4);

        CHECK_THROWS_WITH_AS(apply_overrides(RunConfig{}, {{"no_such_key", "1"}}), doctest::Contains("no_such_key"),
                             std::invalid_argument);
        CHECK_THROWS_WITH_AS(apply_overrides(RunConfig{}, {{"epochs", "many"}}), doctest::Contains("epochs"),
                             std::invalid_argument);
        CHECK(apply_overrides(RunConfig{}, {{"seed", "9"}}).joint.seed == 9);
    }

    TEST_CASE("defaults follow the published settings") {
        const RunConfig c;
        CHECK(c.joint.learning_rate == 0.01);
        CHECK(c.joint.lr_step_factor == 0.1);
        CHECK(c.joint.lr_step_every == 40);
        CHECK(c.joint.eta == 0.01);
        CHECK(c.joint.neighbor_fraction == 0.5);
        CHECK(c.shape(784) == std::vector<std::size_t>{784, 500, 500, 2000, 10});
    }

    TEST_CASE("missing dataset path is reported by name") {
        auto c = small_config(test::scratch_dir("pipe_missing"));
        c.data = "/nonexistent/dir/samples.csv";
        CHECK_THROWS_WITH(cmd_pretrain(c), doctest::Contains("/nonexistent/dir/samples.csv"));
    }

    TEST_CASE("train and eval require a mixture in the checkpoint") {
        const auto dir = test::scratch_dir("pipe_order");
        const auto c = small_config(dir);
        cmd_synth(c);
        cmd_pretrain(c);
        CHECK_THROWS_WITH(cmd_train(c), doctest::Contains("init-gmm"));
        CHECK_THROWS_WITH(cmd_eval(c), doctest::Contains("init-gmm"));
    }

    TEST_CASE("pretrain on rank-deficient data drives the loss down") {
        const auto dir = test::scratch_dir("pipe_rank");
        SeededRng rng(4);
        std::ofstream out(dir / "rank2.csv");
        for (int i = 0; i < 400; ++i) {
            const double a = rng.uniform(-1.0, 1.0), b = rng.uniform(-1.0, 1.0);
            out << a << "," << a + b << "," << b << "," << a - 0.5 * b << "\n";
        }
        out.close();
        RunConfig c = small_config(dir);
        c.data = (dir / "rank2.csv").string();
        c.has_labels = false;
        c.hidden = {};
        c.rep_dim = 2;
        c.autoencoder.corruption.mask_fraction = 0.0;
        c.autoencoder.pretrain_epochs = 150;
        c.autoencoder.finetune_epochs = 50;
        c.autoencoder.batch_size = 16;
        c.autoencoder.learning_rate = 0.02;
        const auto s = cmd_pretrain(c);
        CHECK(s.final_loss < 1e-2);
        CHECK(s.final_loss < s.initial_loss);
        CHECK(fs::exists(dir / "model.ckpt"));
        CHECK(fs::exists(dir / "pretrain_loss.csv"));
        CHECK(fs::exists(dir / "pretrain.config"));
    }

    TEST_CASE("init-gmm improves on its initialisation and logs a monotone trace") {
        const auto dir = test::scratch_dir("pipe_init");
        const auto c = small_config(dir);
        cmd_synth(c);
        cmd_pretrain(c);
        const auto s = cmd_init_gmm(c);
        CHECK(s.em_loglik >= s.kmeans_loglik);
        const auto trace = read_numeric_csv(dir / "em_trace.csv", false);
        REQUIRE(trace.size() == s.trace.size());
        for (std::size_t i = 1; i < trace.size(); ++i) CHECK(trace[i][1] - trace[i - 1][1] >= -1e-9);
        CHECK(read_text(dir / "init_gmm.txt").find("em_loglik=") != std::string::npos);

        auto too_many = c;
        too_many.clusters = 301;
        CHECK_THROWS_AS(cmd_init_gmm(too_many), std::invalid_argument);
    }

    TEST_CASE("init-gmm with one cluster matches the sample moments") {
        const auto dir = test::scratch_dir("pipe_m1");
        auto c = small_config(dir);
        c.clusters = 1;
        cmd_synth(c);
        cmd_pretrain(c);
        const auto s = cmd_init_gmm(c);
        const auto ckpt = load_checkpoint(dir / "model.ckpt");
        const auto ys = encode_rows(ckpt.encoder, load_dataset(c).samples);
        for (std::size_t d = 0; d < ys.cols(); ++d) {
            double mean = 0.0;
            for (std::size_t i = 0; i < ys.rows(); ++i) mean += ys(i, d) / double(ys.rows());
            double var = 0.0;
            for (std::size_t i = 0; i < ys.rows(); ++i) var += (ys(i, d) - mean) * (ys(i, d) - mean) / double(ys.rows());
            CHECK(s.gmm.means(0, d) == doctest::Approx(mean).epsilon(1e-10));
            CHECK(s.gmm.sigma(0, d) == doctest::Approx(std::sqrt(var)).epsilon(1e-8));
        }
    }

    TEST_CASE("train writes a labelled history and improves the objective") {
        const auto dir = test::scratch_dir("pipe_train");
        auto c = small_config(dir);
        cmd_synth(c);
        cmd_pretrain(c);
        cmd_init_gmm(c);
        const auto s = cmd_train(c);
        CHECK(s.epochs_done == 4);
        CHECK(s.history.back().mean_objective > s.initial.mean_objective);
        const auto text = read_text(dir / "history.csv");
        CHECK(text.rfind("# model=joint", 0) == 0);
        CHECK(text.find("epoch,mean_objective,mean_loglik,separability,learning_rate\n") != std::string::npos);
        CHECK(read_numeric_csv(dir / "history.csv", true).size() == 5);

        const auto ablation_dir = test::scratch_dir("pipe_train_eta0");
        auto a = small_config(ablation_dir);
        a.joint.eta = 0.0;
        cmd_synth(a);
        cmd_pretrain(a);
        cmd_init_gmm(a);
        cmd_train(a);
        CHECK(read_text(ablation_dir / "history.csv").rfind("# model=deepgmm", 0) == 0);
    }

    TEST_CASE("interrupted and resumed training equals an uninterrupted run") {
        const auto d1 = test::scratch_dir("pipe_resume_a");
        const auto d2 = test::scratch_dir("pipe_resume_b");
        const auto c1 = small_config(d1);
        const auto c2 = small_config(d2);
        for (const auto* c : {&c1, &c2}) {
            cmd_synth(*c);
            cmd_pretrain(*c);
            cmd_init_gmm(*c);
        }
        cmd_train(c1);
        CHECK(cmd_train(c2, 1).epochs_done == 1);
        CHECK(cmd_train(c2, 2).epochs_done == 3);
        CHECK(cmd_train(c2).epochs_done == 4);
        CHECK(read_text(d1 / "model.ckpt") == read_text(d2 / "model.ckpt"));
        CHECK(read_text(d1 / "history.csv") == read_text(d2 / "history.csv"));
    }

    TEST_CASE("eval reports exactly acc, nmi and ch") {
        const auto dir = test::scratch_dir("pipe_eval");
        const auto c = small_config(dir);
        run_all(c);
        const auto report = cmd_eval(c);
        REQUIRE(report.acc.has_value());
        CHECK(*report.acc >= 0.0);
        const auto keys = parse_config_text(read_text(dir / "metrics.txt"));
        CHECK(keys.size() == 3);
        CHECK(keys.count("acc") == 1);
        CHECK(keys.count("nmi") == 1);
        CHECK(keys.count("ch") == 1);
        CHECK(fs::exists(dir / "confusion.csv"));

        auto unlabeled = c;
        unlabeled.has_labels = false;
        // Without labels the trailing label column is read as a feature, so use a
        // fresh synth file without that column.
        const auto ds = load_dataset(c);
        Dataset bare{ds.samples, std::nullopt, "bare"};
        save_csv(bare, dir / "bare.csv");
        unlabeled.data = (dir / "bare.csv").string();
        const auto r2 = cmd_eval(unlabeled);
        CHECK_FALSE(r2.acc.has_value());
        const auto keys2 = parse_config_text(read_text(dir / "metrics.txt"));
        CHECK(keys2.size() == 1);
        CHECK(keys2.count("ch") == 1);
    }

    TEST_CASE("embed emits one row per sample, deterministically") {
        const auto dir = test::scratch_dir("pipe_embed");
        const auto c = small_config(dir);
        run_all(c);
        const auto p1 = cmd_embed(c, "e1.csv");
        const auto p2 = cmd_embed(c, "e2.csv");
        CHECK(read_text(p1) == read_text(p2));
        CHECK(read_numeric_csv(p1, false).size() == 300);
    }

    TEST_CASE("joint training compacts the projected clusters") {
        const auto dir = test::scratch_dir("pipe_compact");
        auto c = small_config(dir);
        c.joint.epochs = 20;
        cmd_synth(c);
        cmd_pretrain(c);
        cmd_init_gmm(c);
        const auto before = cmd_embed(c, "before.csv");
        cmd_train(c);
        const auto after = cmd_embed(c, "after.csv");
        CHECK(mean_intra_cluster_distance(after) < mean_intra_cluster_distance(before));
    }

    TEST_CASE("same seed gives byte-identical artefacts") {
        const auto d1 = test::scratch_dir("pipe_det_a");
        const auto d2 = test::scratch_dir("pipe_det_b");
        run_all(small_config(d1));
        run_all(small_config(d2));
        for (const char* f : {"synth.csv", "model.ckpt", "metrics.txt", "history.csv", "em_trace.csv"}) {
            CAPTURE(f);
            CHECK(read_text(d1 / f) == read_text(d2 / f));
        }
    }
}
