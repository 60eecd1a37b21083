#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "deepgmm/autoencoder.hpp"
#include "deepgmm/data_io.hpp"
#include "deepgmm/gmm.hpp"
#include "deepgmm/joint.hpp"

namespace deepgmm {

using ConfigMap = std::map<std::string, std::string>;

/// Every knob of the three-step procedure plus dataset and output locations.
/// Serialised as flat "key=value" lines; precedence is flags > file > defaults.
struct RunConfig {
    // dataset
    std::string data;
    std::string labels;
    std::string format = "auto";  // auto | idx | csv
    char delimiter = ',';
    bool has_labels = true;
    std::size_t limit = 0;  // 0 = all samples

    // outputs
    std::string out = "run";
    std::string checkpoint;  // empty = <out>/model.ckpt

    std::uint64_t seed = 1;

    // autoencoder
    std::vector<std::size_t> hidden{500, 500, 2000};
    std::size_t rep_dim = 10;
    AutoencoderConfig autoencoder;

    // mixture initialisation
    std::size_t clusters = 10;
    EmOptions em;
    std::string gmm_init = "kmeans";  // kmeans | random

    JointConfig joint;
    std::size_t embed_every = 0;

    // synth
    std::size_t synth_m = 3;
    std::size_t synth_dim = 8;
    std::size_t synth_n = 1500;
    double synth_separation = 10.0;

    std::filesystem::path checkpoint_path() const;
    std::vector<std::size_t> shape(std::size_t input_dim) const;
};

ConfigMap to_map(const RunConfig& config);
/// Applies `overrides` on top of `base`. Unknown keys and unparsable values
/// throw std::invalid_argument naming the key.
RunConfig apply_overrides(RunConfig base, const ConfigMap& overrides);
ConfigMap parse_config_text(const std::string& text);
std::string to_config_text(const ConfigMap& map);
ConfigMap read_config_file(const std::filesystem::path& path);

Dataset load_dataset(const RunConfig& config);

struct PretrainSummary {
    double initial_loss = 0.0;  // first recorded epoch
    double final_loss = 0.0;    // mean reconstruction loss of the returned stack
    std::vector<LossRecord> history;
};

struct InitGmmSummary {
    double kmeans_loglik = 0.0;
    double em_loglik = 0.0;
    std::vector<double> trace;
    GmmParams gmm;
};

struct TrainSummary {
    EpochStats initial;
    std::vector<EpochStats> history;
    std::size_t epochs_done = 0;
};

struct MetricReport {
    std::optional<double> acc;
    std::optional<double> nmi;
    double ch = 0.0;
    std::size_t clusters_used = 0;
};

// Each command persists its effective config as <out>/<command>.config.

/// Step one: greedy denoising pretraining then fine-tuning. Writes the
/// checkpoint and pretrain_loss.csv.
PretrainSummary cmd_pretrain(const RunConfig& config, std::ostream* log = nullptr);

/// Step two: encode every sample, k-means seeding, EM. Adds the mixture to the
/// checkpoint and writes em_trace.csv and init_gmm.txt.
InitGmmSummary cmd_init_gmm(const RunConfig& config, std::ostream* log = nullptr);

/// Step three: joint training. Resumes from the epoch count recorded in the
/// checkpoint; `stop_after` limits how many epochs this invocation runs.
/// Writes the checkpoint after every epoch and history.csv.
TrainSummary cmd_train(const RunConfig& config, std::optional<std::size_t> stop_after = std::nullopt,
                       std::ostream* log = nullptr);

/// Writes metrics.txt (key=value), metrics.csv and confusion.csv.
MetricReport cmd_eval(const RunConfig& config, std::ostream* log = nullptr);

/// Encodes, projects to 2-D with PCA when needed, writes `file_name` in <out>.
std::filesystem::path cmd_embed(const RunConfig& config, const std::string& file_name = "embedding.csv");

/// Writes synth.csv (samples with trailing label column).
std::filesystem::path cmd_synth(const RunConfig& config);

/// Two-column projection used by cmd_embed.
DenseMatrix project_2d(const DenseMatrix& ys);

}  // namespace deepgmm
