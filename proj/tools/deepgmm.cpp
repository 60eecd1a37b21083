// Command-line driver for the three training steps plus evaluation/export.
//
//   deepgmm synth     --out run --seed 7
//   deepgmm pretrain  --data run/synth.csv --out run
//   deepgmm init-gmm  --data run/synth.csv --out run --clusters 3
//   deepgmm train     --data run/synth.csv --out run --eta 0.01
//   deepgmm eval      --data run/synth.csv --out run
//   deepgmm embed     --data run/synth.csv --out run

#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "deepgmm/pipeline.hpp"

namespace {

struct CommonFlags {
    std::string config_file;
    std::vector<std::string> sets;
    std::optional<std::string> seed, data, labels, out, eta, epochs, batch_size, lr, clusters, checkpoint;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
    cmd->add_option("--config", f.config_file, "key=value config file");
    cmd->add_option("--set", f.sets, "extra key=value override (repeatable)");
    cmd->add_option("--seed", f.seed, "random seed");
    cmd->add_option("--data", f.data, "dataset path (IDX images or CSV)");
    cmd->add_option("--labels", f.labels, "IDX labels path");
    cmd->add_option("--out", f.out, "output directory");
    cmd->add_option("--checkpoint", f.checkpoint, "checkpoint path (default <out>/model.ckpt)");
    cmd->add_option("--eta", f.eta, "separability weight (0 = DeepGMM ablation)");
    cmd->add_option("--epochs", f.epochs, "joint training epochs");
    cmd->add_option("--batch-size", f.batch_size, "minibatch size");
    cmd->add_option("--lr", f.lr, "joint training base learning rate");
    cmd->add_option("--clusters", f.clusters, "number of mixture components");
}

deepgmm::RunConfig resolve(const CommonFlags& f) {
    deepgmm::ConfigMap merged;
    if (!f.config_file.empty()) merged = deepgmm::read_config_file(f.config_file);
    for (const auto& s : f.sets) {
        const auto eq = s.find('=');
        if (eq == std::string::npos) throw std::invalid_argument("--set expects key=value, got '" + s + "'");
        merged[s.substr(0, eq)] = s.substr(eq + 1);
    }
    auto put = [&](const char* key, const std::optional<std::string>& v) {
        if (v) merged[key] = *v;
    };
    put("seed", f.seed);
    put("data", f.data);
    put("labels", f.labels);
    put("out", f.out);
    put("checkpoint", f.checkpoint);
    put("eta", f.eta);
    put("epochs", f.epochs);
    put("batch_size", f.batch_size);
    put("lr", f.lr);
    put("clusters", f.clusters);
    return deepgmm::apply_overrides(deepgmm::RunConfig{}, merged);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Deep clustering with a jointly trained Gaussian mixture"};
    app.require_subcommand(1);

    CommonFlags flags;
    std::optional<std::size_t> stop_after;
    std::string embed_file = "embedding.csv";

    auto* pretrain = app.add_subcommand("pretrain", "greedy denoising pretraining + fine-tuning");
    auto* init_gmm = app.add_subcommand("init-gmm", "fit the initial mixture on encoded samples");
    auto* train = app.add_subcommand("train", "joint training of encoder and mixture");
    auto* eval = app.add_subcommand("eval", "ACC / NMI / CH report");
    auto* embed = app.add_subcommand("embed", "2-D PCA projection of the representations");
    auto* synth = app.add_subcommand("synth", "write a synthetic Gaussian-cluster dataset");
    for (auto* cmd : {pretrain, init_gmm, train, eval, embed, synth}) add_common(cmd, flags);
    train->add_option("--stop-after", stop_after, "run at most this many epochs, then stop (resumable)");
    embed->add_option("--file", embed_file, "output file name inside --out");

    CLI11_PARSE(app, argc, argv);

    try {
        const auto config = resolve(flags);
        if (pretrain->parsed()) {
            const auto s = deepgmm::cmd_pretrain(config, &std::cerr);
            std::cout << "final_loss=" << deepgmm::format_number(s.final_loss, 10) << '\n';
        } else if (init_gmm->parsed()) {
            const auto s = deepgmm::cmd_init_gmm(config, &std::cerr);
            std::cout << "init_loglik=" << deepgmm::format_number(s.kmeans_loglik, 10) << '\n'
                      << "em_loglik=" << deepgmm::format_number(s.em_loglik, 10) << '\n';
        } else if (train->parsed()) {
            const auto s = deepgmm::cmd_train(config, stop_after, &std::cerr);
            std::cout << "epochs_done=" << s.epochs_done << '\n';
        } else if (eval->parsed()) {
            deepgmm::cmd_eval(config, &std::cout);
        } else if (embed->parsed()) {
            std::cout << deepgmm::cmd_embed(config, embed_file).string() << '\n';
        } else if (synth->parsed()) {
            std::cout << deepgmm::cmd_synth(config).string() << '\n';
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
