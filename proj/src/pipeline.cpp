#include "deepgmm/pipeline.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <sstream>
#include <stdexcept>

#include "deepgmm/metrics.hpp"

namespace deepgmm {

namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kPretrainStream = 101;
constexpr std::uint64_t kInitGmmStream = 202;
constexpr const char* kEpochsDoneKey = "joint_epochs_done";

std::string num(double v) { return format_number(v, 17); }

std::string join(const std::vector<std::size_t>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
    return out;
}

template <typename T>
T parse_integral(const std::string& key, const std::string& text) {
    T v{};
    const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc() || ptr != text.data() + text.size()) {
        throw std::invalid_argument("config: '" + key + "' expects an integer, got '" + text + "'");
    }
    return v;
}

double parse_double(const std::string& key, const std::string& text) {
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc() || ptr != text.data() + text.size() || !std::isfinite(v)) {
        throw std::invalid_argument("config: '" + key + "' expects a number, got '" + text + "'");
    }
    return v;
}

bool parse_bool(const std::string& key, const std::string& text) {
    if (text == "true" || text == "1") return true;
    if (text == "false" || text == "0") return false;
    throw std::invalid_argument("config: '" + key + "' expects true/false, got '" + text + "'");
}

std::vector<std::size_t> parse_list(const std::string& key, const std::string& text) {
    std::vector<std::size_t> out;
    std::string item;
    std::istringstream ss(text);
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        out.push_back(parse_integral<std::size_t>(key, item));
    }
    return out;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
    out << text;
}

void prepare_out(const RunConfig& config, const char* command) {
    fs::create_directories(config.out);
    write_text(fs::path(config.out) / (std::string(command) + ".config"), to_config_text(to_map(config)));
}

Checkpoint load_required_checkpoint(const RunConfig& config) {
    const auto path = config.checkpoint_path();
    if (!fs::exists(path)) throw std::runtime_error("checkpoint '" + path.string() + "' does not exist");
    return load_checkpoint(path);
}

void check_encoder_input(const Checkpoint& ckpt, const Dataset& data) {
    validate(ckpt.encoder);
    if (ckpt.encoder.input_dim() != data.dim()) {
        throw std::invalid_argument("dataset dimension " + std::to_string(data.dim()) +
                                    " does not match the checkpoint encoder input " +
                                    std::to_string(ckpt.encoder.input_dim()));
    }
}

// Model settings only; file locations are recorded in <command>.config.
ConfigMap snapshot(const RunConfig& config, const Checkpoint* previous) {
    ConfigMap map = to_map(config);
    for (const char* key : {"data", "labels", "out", "checkpoint"}) map.erase(key);
    if (previous) {
        if (auto it = previous->config.find(kEpochsDoneKey); it != previous->config.end()) map[kEpochsDoneKey] = it->second;
    }
    return map;
}

std::string history_row(const EpochStats& s) {
    return std::to_string(s.epoch) + "," + num(s.mean_objective) + "," + num(s.mean_loglik) + "," +
           num(s.separability) + "," + num(s.learning_rate) + "\n";
}

}  // namespace

fs::path RunConfig::checkpoint_path() const {
    return checkpoint.empty() ? fs::path(out) / "model.ckpt" : fs::path(checkpoint);
}

std::vector<std::size_t> RunConfig::shape(std::size_t input_dim) const {
    std::vector<std::size_t> s{input_dim};
    s.insert(s.end(), hidden.begin(), hidden.end());
    s.push_back(rep_dim);
    return s;
}

ConfigMap to_map(const RunConfig& c) {
    return {
        {"data", c.data},
        {"labels", c.labels},
        {"format", c.format},
        {"delimiter", std::string(1, c.delimiter)},
        {"has_labels", c.has_labels ? "true" : "false"},
        {"limit", std::to_string(c.limit)},
        {"out", c.out},
        {"checkpoint", c.checkpoint},
        {"seed", std::to_string(c.seed)},
        {"hidden", join(c.hidden)},
        {"rep_dim", std::to_string(c.rep_dim)},
        {"corruption", num(c.autoencoder.corruption.mask_fraction)},
        {"pretrain_epochs", std::to_string(c.autoencoder.pretrain_epochs)},
        {"finetune_epochs", std::to_string(c.autoencoder.finetune_epochs)},
        {"ae_lr", num(c.autoencoder.learning_rate)},
        {"batch_size", std::to_string(c.joint.batch_size)},
        {"clusters", std::to_string(c.clusters)},
        {"em_max_iters", std::to_string(c.em.max_iters)},
        {"em_tol", num(c.em.tol)},
        {"gmm_init", c.gmm_init},
        {"eta", num(c.joint.eta)},
        {"neighbor_fraction", num(c.joint.neighbor_fraction)},
        {"lr", num(c.joint.learning_rate)},
        {"lr_step_factor", num(c.joint.lr_step_factor)},
        {"lr_step_every", std::to_string(c.joint.lr_step_every)},
        {"epochs", std::to_string(c.joint.epochs)},
        {"separability_mode", to_string(c.joint.separability_mode)},
        {"embed_every", std::to_string(c.embed_every)},
        {"synth_m", std::to_string(c.synth_m)},
        {"synth_dim", std::to_string(c.synth_dim)},
        {"synth_n", std::to_string(c.synth_n)},
        {"synth_separation", num(c.synth_separation)},
    };
}

RunConfig apply_overrides(RunConfig c, const ConfigMap& overrides) {
    using Setter = std::function<void(const std::string&, const std::string&)>;
    const std::map<std::string, Setter> setters{
        {"data", [&](auto&, auto& v) { c.data = v; }},
        {"labels", [&](auto&, auto& v) { c.labels = v; }},
        {"format",
         [&](auto& k, auto& v) {
             if (v != "auto" && v != "idx" && v != "csv") throw std::invalid_argument("config: '" + k + "' must be auto, idx or csv");
             c.format = v;
         }},
        {"delimiter",
         [&](auto& k, auto& v) {
             if (v.size() != 1) throw std::invalid_argument("config: '" + k + "' must be a single character");
             c.delimiter = v[0];
         }},
        {"has_labels", [&](auto& k, auto& v) { c.has_labels = parse_bool(k, v); }},
        {"limit", [&](auto& k, auto& v) { c.limit = parse_integral<std::size_t>(k, v); }},
        {"out", [&](auto&, auto& v) { c.out = v; }},
        {"checkpoint", [&](auto&, auto& v) { c.checkpoint = v; }},
        {"seed", [&](auto& k, auto& v) { c.seed = parse_integral<std::uint64_t>(k, v); }},
        {"hidden", [&](auto& k, auto& v) { c.hidden = parse_list(k, v); }},
        {"rep_dim", [&](auto& k, auto& v) { c.rep_dim = parse_integral<std::size_t>(k, v); }},
        {"corruption", [&](auto& k, auto& v) { c.autoencoder.corruption.mask_fraction = parse_double(k, v); }},
        {"pretrain_epochs", [&](auto& k, auto& v) { c.autoencoder.pretrain_epochs = parse_integral<std::size_t>(k, v); }},
        {"finetune_epochs", [&](auto& k, auto& v) { c.autoencoder.finetune_epochs = parse_integral<std::size_t>(k, v); }},
        {"ae_lr", [&](auto& k, auto& v) { c.autoencoder.learning_rate = parse_double(k, v); }},
        {"batch_size", [&](auto& k, auto& v) { c.joint.batch_size = parse_integral<std::size_t>(k, v); }},
        {"clusters", [&](auto& k, auto& v) { c.clusters = parse_integral<std::size_t>(k, v); }},
        {"em_max_iters", [&](auto& k, auto& v) { c.em.max_iters = parse_integral<std::size_t>(k, v); }},
        {"em_tol", [&](auto& k, auto& v) { c.em.tol = parse_double(k, v); }},
        {"gmm_init",
         [&](auto& k, auto& v) {
             if (v != "kmeans" && v != "random") throw std::invalid_argument("config: '" + k + "' must be kmeans or random");
             c.gmm_init = v;
         }},
        {"eta", [&](auto& k, auto& v) { c.joint.eta = parse_double(k, v); }},
        {"neighbor_fraction", [&](auto& k, auto& v) { c.joint.neighbor_fraction = parse_double(k, v); }},
        {"lr", [&](auto& k, auto& v) { c.joint.learning_rate = parse_double(k, v); }},
        {"lr_step_factor", [&](auto& k, auto& v) { c.joint.lr_step_factor = parse_double(k, v); }},
        {"lr_step_every", [&](auto& k, auto& v) { c.joint.lr_step_every = parse_integral<std::size_t>(k, v); }},
        {"epochs", [&](auto& k, auto& v) { c.joint.epochs = parse_integral<std::size_t>(k, v); }},
        {"separability_mode", [&](auto&, auto& v) { c.joint.separability_mode = separability_mode_from_string(v); }},
        {"embed_every", [&](auto& k, auto& v) { c.embed_every = parse_integral<std::size_t>(k, v); }},
        {"synth_m", [&](auto& k, auto& v) { c.synth_m = parse_integral<std::size_t>(k, v); }},
        {"synth_dim", [&](auto& k, auto& v) { c.synth_dim = parse_integral<std::size_t>(k, v); }},
        {"synth_n", [&](auto& k, auto& v) { c.synth_n = parse_integral<std::size_t>(k, v); }},
        {"synth_separation", [&](auto& k, auto& v) { c.synth_separation = parse_double(k, v); }},
        // Recorded by cmd_train in checkpoints; not a user setting.
        {kEpochsDoneKey, [](auto&, auto&) {}},
    };
    for (const auto& [key, value] : overrides) {
        const auto it = setters.find(key);
        if (it == setters.end()) throw std::invalid_argument("config: unknown key '" + key + "'");
        it->second(key, value);
    }
    c.autoencoder.batch_size = c.joint.batch_size;
    c.joint.seed = c.seed;
    if (c.autoencoder.corruption.mask_fraction < 0.0 || c.autoencoder.corruption.mask_fraction > 1.0) {
        throw std::invalid_argument("config: 'corruption' must lie in [0, 1]");
    }
    if (c.joint.eta < 0.0) throw std::invalid_argument("config: 'eta' must be nonnegative");
    if (!(c.joint.neighbor_fraction > 0.0 && c.joint.neighbor_fraction <= 1.0)) {
        throw std::invalid_argument("config: 'neighbor_fraction' must lie in (0, 1]");
    }
    if (c.joint.batch_size == 0) throw std::invalid_argument("config: 'batch_size' must be positive");
    if (c.rep_dim == 0) throw std::invalid_argument("config: 'rep_dim' must be positive");
    return c;
}

ConfigMap parse_config_text(const std::string& text) {
    ConfigMap map;
    std::istringstream in(text);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        const auto first = line.find_first_not_of(" \t");
        if (first == std::string::npos || line[first] == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw std::invalid_argument("config line " + std::to_string(line_no) + ": expected key=value");
        }
        auto trim = [](std::string s) {
            const auto b = s.find_first_not_of(" \t");
            const auto e = s.find_last_not_of(" \t");
            return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
        };
        map[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
    }
    return map;
}

std::string to_config_text(const ConfigMap& map) {
    std::string out;
    for (const auto& [k, v] : map) out += k + "=" + v + "\n";
    return out;
}

ConfigMap read_config_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config file '" + path.string() + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config_text(ss.str());
}

Dataset load_dataset(const RunConfig& config) {
    if (config.data.empty()) throw std::invalid_argument("no dataset given (set 'data' or --data)");
    if (!fs::exists(config.data)) throw std::runtime_error("dataset '" + config.data + "' does not exist");
    std::string format = config.format;
    if (format == "auto") format = fs::path(config.data).extension() == ".csv" ? "csv" : "idx";
    Dataset data;
    if (format == "csv") {
        data = load_csv(config.data, config.has_labels, config.delimiter);
    } else {
        std::optional<fs::path> labels;
        if (!config.labels.empty()) {
            if (!fs::exists(config.labels)) throw std::runtime_error("labels '" + config.labels + "' do not exist");
            labels = config.labels;
        }
        data = load_idx(config.data, labels);
    }
    if (config.limit > 0) data = data.head(config.limit);
    return data;
}

PretrainSummary cmd_pretrain(const RunConfig& config, std::ostream* log) {
    const Dataset data = load_dataset(config);
    prepare_out(config, "pretrain");
    SeededRng rng = SeededRng(config.seed).fork(kPretrainStream);
    const auto shape = config.shape(data.dim());

    auto pre = pretrain_layerwise(data.samples, shape, config.autoencoder, rng);
    if (log) *log << "pretrained " << shape.size() - 1 << " layer pairs on " << data.size() << " samples\n";
    auto tuned = finetune(std::move(pre.encoder), std::move(pre.decoder), data.samples, config.autoencoder, rng);

    PretrainSummary summary;
    summary.history = std::move(pre.history);
    summary.history.insert(summary.history.end(), tuned.history.begin(), tuned.history.end());
    summary.initial_loss = summary.history.empty() ? 0.0 : summary.history.front().mean_loss;
    summary.final_loss = mean_reconstruction_loss(tuned.encoder, tuned.decoder, data.samples);
    if (log) *log << "final mean reconstruction loss " << summary.final_loss << '\n';

    std::string csv = "stage,epoch,mean_loss\n";
    for (const auto& r : summary.history) csv += r.stage + "," + std::to_string(r.epoch) + "," + num(r.mean_loss) + "\n";
    write_text(fs::path(config.out) / "pretrain_loss.csv", csv);

    Checkpoint ckpt;
    ckpt.encoder = std::move(tuned.encoder);
    ckpt.decoder = std::move(tuned.decoder);
    ckpt.config = snapshot(config, nullptr);
    save_checkpoint(ckpt, config.checkpoint_path());
    return summary;
}

InitGmmSummary cmd_init_gmm(const RunConfig& config, std::ostream* log) {
    const Dataset data = load_dataset(config);
    Checkpoint ckpt = load_required_checkpoint(config);
    check_encoder_input(ckpt, data);
    prepare_out(config, "init_gmm");

    const DenseMatrix ys = encode_rows(ckpt.encoder, data.samples);
    if (ys.rows() < config.clusters) {
        throw std::invalid_argument("init-gmm: " + std::to_string(ys.rows()) + " samples is fewer than " +
                                    std::to_string(config.clusters) + " clusters");
    }
    SeededRng rng = SeededRng(config.seed).fork(kInitGmmStream);
    const GmmParams init = config.gmm_init == "random" ? random_init(ys, config.clusters, rng)
                                                       : kmeans_init(ys, config.clusters, rng);
    auto em = em_fit(ys, init, config.em, rng);

    InitGmmSummary summary;
    summary.kmeans_loglik = em.loglik_trace.front();
    summary.em_loglik = em.loglik_trace.back();
    summary.trace = em.loglik_trace;
    summary.gmm = em.params;
    if (log) {
        *log << "EM: " << em.iterations << " iterations, log-likelihood " << summary.kmeans_loglik << " -> "
             << summary.em_loglik << '\n';
    }

    std::string trace = "iteration,loglik\n";
    for (std::size_t i = 0; i < em.loglik_trace.size(); ++i) trace += std::to_string(i) + "," + num(em.loglik_trace[i]) + "\n";
    write_text(fs::path(config.out) / "em_trace.csv", trace);
    write_text(fs::path(config.out) / "init_gmm.txt",
               "init_loglik=" + num(summary.kmeans_loglik) + "\nem_loglik=" + num(summary.em_loglik) +
                   "\niterations=" + std::to_string(em.iterations) +
                   "\nreseeded_components=" + std::to_string(em.reseeded_components) + "\n");

    ckpt.gmm = std::move(em.params);
    ckpt.config = snapshot(config, nullptr);
    save_checkpoint(ckpt, config.checkpoint_path());
    return summary;
}

TrainSummary cmd_train(const RunConfig& config, std::optional<std::size_t> stop_after, std::ostream* log) {
    const Dataset data = load_dataset(config);
    Checkpoint ckpt = load_required_checkpoint(config);
    if (!ckpt.gmm) throw std::runtime_error("checkpoint has no mixture; run init-gmm first");
    check_encoder_input(ckpt, data);
    prepare_out(config, "train");

    std::size_t start = 0;
    if (auto it = ckpt.config.find(kEpochsDoneKey); it != ckpt.config.end()) {
        start = parse_integral<std::size_t>(kEpochsDoneKey, it->second);
    }
    JointConfig joint = config.joint;
    if (stop_after) joint.epochs = std::min(joint.epochs, start + *stop_after);

    const fs::path history_path = fs::path(config.out) / "history.csv";
    if (start == 0) {
        const std::string variant = config.joint.eta == 0.0 ? "deepgmm (eta=0, no separability term)"
                                                            : "joint (eta=" + num(config.joint.eta) + ")";
        EpochStats initial = evaluate(ckpt.encoder, *ckpt.gmm, data.samples, joint);
        initial.learning_rate = learning_rate_at(joint, 0);
        write_text(history_path, "# model=" + variant +
                                     "\nepoch,mean_objective,mean_loglik,separability,learning_rate\n" +
                                     history_row(initial));
    }

    Checkpoint working = ckpt;
    working.config = snapshot(config, &ckpt);
    std::ofstream history(history_path, std::ios::app | std::ios::binary);
    if (!history) throw std::runtime_error("cannot write '" + history_path.string() + "'");

    auto on_epoch = [&](const EpochStats& s, const EncoderStack& enc, const GmmParams& gmm) {
        history << history_row(s) << std::flush;
        working.encoder = enc;
        working.gmm = gmm;
        working.config[kEpochsDoneKey] = std::to_string(s.epoch);
        save_checkpoint(working, config.checkpoint_path());
        if (config.embed_every > 0 && s.epoch % config.embed_every == 0) {
            const DenseMatrix ys = encode_rows(enc, data.samples);
            emit_embedding_csv(project_2d(ys), data.labels,
                               fs::path(config.out) / ("embedding_epoch" + std::to_string(s.epoch) + ".csv"));
        }
        if (log) {
            *log << "epoch " << s.epoch << " objective " << s.mean_objective << " loglik " << s.mean_loglik
                 << " separability " << s.separability << " lr " << s.learning_rate << '\n';
        }
    };

    auto result = train(ckpt.encoder, *ckpt.gmm, data.samples, joint, start, on_epoch);
    history.close();

    if (result.history.empty()) {
        // Nothing ran; still persist the effective config alongside.
        working.config[kEpochsDoneKey] = std::to_string(start);
        save_checkpoint(working, config.checkpoint_path());
    }
    return {result.initial, result.history, result.history.empty() ? start : result.history.back().epoch};
}

MetricReport cmd_eval(const RunConfig& config, std::ostream* log) {
    const Dataset data = load_dataset(config);
    const Checkpoint ckpt = load_required_checkpoint(config);
    if (!ckpt.gmm) throw std::runtime_error("checkpoint has no mixture; run init-gmm first");
    check_encoder_input(ckpt, data);
    prepare_out(config, "eval");

    const auto assigned = assign(ckpt.encoder, *ckpt.gmm, data.samples);
    const DenseMatrix ys = encode_rows(ckpt.encoder, data.samples);

    // Compact relabelling so unused components do not count as empty clusters.
    std::vector<std::size_t> remap(ckpt.gmm->components(), SIZE_MAX);
    std::vector<std::size_t> compact(assigned.size());
    std::size_t used = 0;
    for (std::size_t i = 0; i < assigned.size(); ++i) {
        if (remap[assigned[i]] == SIZE_MAX) remap[assigned[i]] = used++;
        compact[i] = remap[assigned[i]];
    }

    MetricReport report;
    report.clusters_used = used;
    if (used >= 2 && ys.rows() > used) {
        report.ch = ch_score(ys, Partition::from_labels(compact));
    } else {
        report.ch = std::nan("");
        if (log) *log << "notice: fewer than 2 non-empty clusters; CH score undefined\n";
    }

    const Partition pred{assigned, ckpt.gmm->components()};
    std::string text, csv_head, csv_row;
    if (data.labels) {
        const Partition truth = Partition::from_labels(std::span<const int>(*data.labels));
        report.acc = clustering_accuracy(pred, truth);
        report.nmi = nmi(pred, truth);
        text += "acc=" + format_number(*report.acc, 10) + "\n";
        text += "nmi=" + format_number(*report.nmi, 10) + "\n";
        csv_head = "acc,nmi,";
        csv_row = format_number(*report.acc, 10) + "," + format_number(*report.nmi, 10) + ",";

        const auto table = confusion_matrix(pred, truth);
        std::string conf = "cluster";
        for (std::size_t j = 0; j < table.cols(); ++j) conf += ",truth_" + std::to_string(j);
        conf += "\n";
        for (std::size_t i = 0; i < table.rows(); ++i) {
            conf += std::to_string(i);
            for (auto c : table.counts[i]) conf += "," + std::to_string(c);
            conf += "\n";
        }
        write_text(fs::path(config.out) / "confusion.csv", conf);
    } else if (log) {
        *log << "notice: dataset has no labels; ACC and NMI skipped\n";
    }
    text += "ch=" + format_number(report.ch, 10) + "\n";
    csv_head += "ch\n";
    csv_row += format_number(report.ch, 10) + "\n";
    write_text(fs::path(config.out) / "metrics.txt", text);
    write_text(fs::path(config.out) / "metrics.csv", csv_head + csv_row);
    if (log) *log << text;
    return report;
}

DenseMatrix project_2d(const DenseMatrix& ys) {
    if (ys.cols() == 2) return ys;
    if (ys.cols() == 1) {
        DenseMatrix out(ys.rows(), 2);
        for (std::size_t i = 0; i < ys.rows(); ++i) out(i, 0) = ys(i, 0);
        return out;
    }
    return pca_project_2d(ys);
}

fs::path cmd_embed(const RunConfig& config, const std::string& file_name) {
    const Dataset data = load_dataset(config);
    const Checkpoint ckpt = load_required_checkpoint(config);
    check_encoder_input(ckpt, data);
    prepare_out(config, "embed");
    const DenseMatrix ys = encode_rows(ckpt.encoder, data.samples);
    const fs::path path = fs::path(config.out) / file_name;
    emit_embedding_csv(project_2d(ys), data.labels, path);
    return path;
}

fs::path cmd_synth(const RunConfig& config) {
    prepare_out(config, "synth");
    SeededRng rng(config.seed);
    const auto synth = synth_gmm(config.synth_m, config.synth_dim, config.synth_n, config.synth_separation, rng);
    const fs::path path = fs::path(config.out) / "synth.csv";
    save_csv(synth.data, path);
    return path;
}

}  // namespace deepgmm
