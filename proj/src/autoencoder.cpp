#include "deepgmm/autoencoder.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace deepgmm {

namespace {

void check_chain(std::span<const LayerParams> layers, const char* what) {
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const auto& layer = layers[i];
        if (layer.bias.size() != layer.out_dim()) {
            throw std::invalid_argument(std::string(what) + ": layer " + std::to_string(i) +
                                        " bias length " + std::to_string(layer.bias.size()) +
                                        " != out_dim " + std::to_string(layer.out_dim()));
        }
        if (i > 0 && layers[i - 1].out_dim() != layer.in_dim()) {
            throw std::invalid_argument(std::string(what) + ": layer " + std::to_string(i) +
                                        " in_dim " + std::to_string(layer.in_dim()) +
                                        " does not chain with previous out_dim " +
                                        std::to_string(layers[i - 1].out_dim()));
        }
    }
}

void check_finite(std::span<const LayerParams> layers, const char* what) {
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const auto& layer = layers[i];
        const bool ok = layer.weight.all_finite() &&
                        std::all_of(layer.bias.begin(), layer.bias.end(),
                                    [](double v) { return std::isfinite(v); });
        if (!ok) {
            throw std::invalid_argument(std::string(what) + ": layer " + std::to_string(i) +
                                        " has non-finite parameters");
        }
    }
}

void check_input(std::span<const LayerParams> layers, std::size_t dim, const char* what) {
    if (layers.empty()) throw std::invalid_argument(std::string(what) + ": empty layer stack");
    check_chain(layers, what);
    if (layers.front().in_dim() != dim) {
        throw std::invalid_argument(std::string(what) + ": input dimension " + std::to_string(dim) +
                                    " != expected " + std::to_string(layers.front().in_dim()));
    }
}

std::vector<double> forward_one(std::span<const LayerParams> layers, std::span<const double> x,
                                const char* what) {
    check_input(layers, x.size(), what);
    DenseMatrix row(1, x.size(), std::vector<double>(x.begin(), x.end()));
    auto acts = forward_layers(layers, row);
    return std::move(acts.back().values());
}

DenseMatrix forward_rows(std::span<const LayerParams> layers, const DenseMatrix& x, const char* what) {
    check_input(layers, x.cols(), what);
    auto acts = forward_layers(layers, x);
    return std::move(acts.back());
}

// ∂/∂z of the batch-mean squared reconstruction loss, plus the summed loss.
DenseMatrix loss_gradient(const DenseMatrix& target, const DenseMatrix& recon, double scale,
                          double& loss_sum) {
    DenseMatrix grad(recon.rows(), recon.cols());
    for (std::size_t i = 0; i < recon.rows(); ++i) {
        const auto x = target.row(i);
        const auto z = recon.row(i);
        auto g = grad.row(i);
        double loss = 0.0;
        for (std::size_t d = 0; d < z.size(); ++d) {
            const double diff = z[d] - x[d];
            loss += diff * diff;
            g[d] = 2.0 * diff * scale;
        }
        loss_sum += loss;
    }
    return grad;
}

// Runs `epochs` of shuffled minibatch SGD over a concatenated layer list.
// `corrupt_input` selects the denoising variant. Returns per-epoch mean loss.
std::vector<double> sgd_reconstruct(std::vector<LayerParams>& layers, const DenseMatrix& data,
                                    std::size_t epochs, std::size_t batch_size, double lr,
                                    const CorruptionSpec* corruption, SeededRng& rng) {
    std::vector<double> history;
    if (epochs == 0) return history;
    const std::size_t n = data.rows();
    const std::size_t batch = std::max<std::size_t>(1, std::min(batch_size, n));
    std::vector<std::size_t> order(n);

    for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        rng.shuffle(std::span<std::size_t>(order));
        double loss_sum = 0.0;
        for (std::size_t start = 0; start < n; start += batch) {
            const std::size_t stop = std::min(n, start + batch);
            const std::span<const std::size_t> idx(order.data() + start, stop - start);
            const DenseMatrix clean = data.gather_rows(idx);
            const DenseMatrix input = corruption ? corrupt_rows(clean, *corruption, rng) : clean;

            auto acts = forward_layers(layers, input);
            const double scale = 1.0 / double(idx.size());
            DenseMatrix grad_out = loss_gradient(clean, acts.back(), scale, loss_sum);
            if (lr != 0.0) {
                auto back = backward_layers(layers, acts, std::move(grad_out));
                apply_gradients(layers, back.gradients, -lr);
            }
        }
        const double mean = loss_sum / double(n);
        if (!std::isfinite(mean)) {
            throw std::runtime_error("autoencoder training diverged at epoch " +
                                     std::to_string(epoch + 1) + " (non-finite loss)");
        }
        history.push_back(mean);
    }
    return history;
}

}  // namespace

const char* to_string(Activation a) noexcept { return a == Activation::ReLU ? "relu" : "linear"; }

Activation activation_from_string(const std::string& name) {
    if (name == "relu") return Activation::ReLU;
    if (name == "linear") return Activation::Linear;
    throw std::invalid_argument("unknown activation '" + name + "'");
}

std::size_t EncoderStack::input_dim() const { return layers.empty() ? 0 : layers.front().in_dim(); }
std::size_t EncoderStack::output_dim() const { return layers.empty() ? 0 : layers.back().out_dim(); }
std::size_t DecoderStack::input_dim() const { return layers.empty() ? 0 : layers.front().in_dim(); }
std::size_t DecoderStack::output_dim() const { return layers.empty() ? 0 : layers.back().out_dim(); }

void validate(const EncoderStack& enc) {
    if (enc.layers.empty()) throw std::invalid_argument("encoder: no layers");
    check_chain(enc.layers, "encoder");
    check_finite(enc.layers, "encoder");
    for (std::size_t i = 0; i < enc.layers.size(); ++i) {
        const bool last = i + 1 == enc.layers.size();
        const Activation want = last ? Activation::Linear : Activation::ReLU;
        if (enc.layers[i].activation != want) {
            throw std::invalid_argument("encoder: layer " + std::to_string(i) + " must be " +
                                        to_string(want));
        }
    }
}

void validate(const DecoderStack& dec) {
    if (dec.layers.empty()) throw std::invalid_argument("decoder: no layers");
    check_chain(dec.layers, "decoder");
    check_finite(dec.layers, "decoder");
    if (dec.layers.back().activation != Activation::Linear) {
        throw std::invalid_argument("decoder: reconstruction layer must be linear");
    }
}

void validate_pair(const EncoderStack& enc, const DecoderStack& dec) {
    validate(enc);
    validate(dec);
    if (enc.layers.size() != dec.layers.size()) {
        throw std::invalid_argument("decoder does not mirror encoder: layer counts differ");
    }
    const std::size_t n = enc.layers.size();
    for (std::size_t i = 0; i < n; ++i) {
        const auto& e = enc.layers[i];
        const auto& d = dec.layers[n - 1 - i];
        if (e.in_dim() != d.out_dim() || e.out_dim() != d.in_dim()) {
            throw std::invalid_argument("decoder does not mirror encoder at layer " +
                                        std::to_string(i));
        }
    }
}

LayerParams make_layer(std::size_t in_dim, std::size_t out_dim, Activation act, SeededRng& rng) {
    const double limit = std::sqrt(6.0 / double(in_dim + out_dim));
    LayerParams layer{DenseMatrix(out_dim, in_dim), std::vector<double>(out_dim, 0.0), act};
    for (double& w : layer.weight.values()) w = rng.uniform(-limit, limit);
    return layer;
}

std::pair<EncoderStack, DecoderStack> init_autoencoder(std::span<const std::size_t> shape,
                                                       SeededRng& rng) {
    if (shape.size() < 2) throw std::invalid_argument("autoencoder shape needs at least 2 sizes");
    if (std::find(shape.begin(), shape.end(), std::size_t{0}) != shape.end()) {
        throw std::invalid_argument("autoencoder shape contains a zero-width layer");
    }
    const std::size_t depth = shape.size() - 1;
    EncoderStack enc;
    std::vector<LayerParams> dec_reversed;
    for (std::size_t i = 0; i < depth; ++i) {
        const Activation enc_act = i + 1 == depth ? Activation::Linear : Activation::ReLU;
        const Activation dec_act = i == 0 ? Activation::Linear : Activation::ReLU;
        enc.layers.push_back(make_layer(shape[i], shape[i + 1], enc_act, rng));
        dec_reversed.push_back(make_layer(shape[i + 1], shape[i], dec_act, rng));
    }
    DecoderStack dec{{dec_reversed.rbegin(), dec_reversed.rend()}};
    return {std::move(enc), std::move(dec)};
}

std::vector<double> corrupt(std::span<const double> x, const CorruptionSpec& spec, SeededRng& rng) {
    if (!(spec.mask_fraction >= 0.0 && spec.mask_fraction <= 1.0)) {
        throw std::invalid_argument("corrupt: mask_fraction must lie in [0, 1]");
    }
    std::vector<double> out(x.begin(), x.end());
    const std::size_t dim = x.size();
    const auto count = std::size_t(std::llround(spec.mask_fraction * double(dim)));
    if (count == 0) return out;
    // Partial Fisher-Yates: the first `count` slots form a uniform subset.
    std::vector<std::size_t> idx(dim);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    for (std::size_t i = 0; i < count; ++i) {
        const std::size_t j = i + rng.index(dim - i);
        std::swap(idx[i], idx[j]);
        out[idx[i]] = 0.0;
    }
    return out;
}

DenseMatrix corrupt_rows(const DenseMatrix& x, const CorruptionSpec& spec, SeededRng& rng) {
    DenseMatrix out(x.rows(), x.cols());
    for (std::size_t i = 0; i < x.rows(); ++i) {
        auto noisy = corrupt(x.row(i), spec, rng);
        std::copy(noisy.begin(), noisy.end(), out.row(i).begin());
    }
    return out;
}

std::vector<double> encode(const EncoderStack& enc, std::span<const double> x) {
    return forward_one(enc.layers, x, "encode");
}

std::vector<double> decode(const DecoderStack& dec, std::span<const double> y) {
    return forward_one(dec.layers, y, "decode");
}

DenseMatrix encode_rows(const EncoderStack& enc, const DenseMatrix& x) {
    return forward_rows(enc.layers, x, "encode");
}

DenseMatrix decode_rows(const DecoderStack& dec, const DenseMatrix& y) {
    return forward_rows(dec.layers, y, "decode");
}

double reconstruction_loss(std::span<const double> x, std::span<const double> z) {
    if (x.size() != z.size()) {
        throw std::invalid_argument("reconstruction_loss: dimension mismatch " +
                                    std::to_string(x.size()) + " vs " + std::to_string(z.size()));
    }
    return squared_distance(x, z);
}

std::vector<DenseMatrix> forward_layers(std::span<const LayerParams> layers, const DenseMatrix& input) {
    std::vector<DenseMatrix> acts;
    acts.reserve(layers.size() + 1);
    acts.push_back(input);
    for (const auto& layer : layers) {
        DenseMatrix out = matmul_transpose_b(acts.back(), layer.weight);
        for (std::size_t i = 0; i < out.rows(); ++i) {
            auto row = out.row(i);
            for (std::size_t j = 0; j < row.size(); ++j) {
                const double v = row[j] + layer.bias[j];
                row[j] = (layer.activation == Activation::ReLU && v <= 0.0) ? 0.0 : v;
            }
        }
        acts.push_back(std::move(out));
    }
    return acts;
}

BackwardResult backward_layers(std::span<const LayerParams> layers,
                               std::span<const DenseMatrix> activations, DenseMatrix output_gradient) {
    BackwardResult result;
    result.gradients.resize(layers.size());
    DenseMatrix delta = std::move(output_gradient);
    for (std::size_t li = layers.size(); li-- > 0;) {
        const auto& layer = layers[li];
        if (layer.activation == Activation::ReLU) {
            // Output is zero exactly where the pre-activation was ≤ 0; derivative 0 there.
            const auto& out = activations[li + 1];
            for (std::size_t k = 0; k < delta.size(); ++k) {
                if (out.values()[k] <= 0.0) delta.values()[k] = 0.0;
            }
        }
        auto& grad = result.gradients[li];
        grad.weight = matmul_transpose_a(delta, activations[li]);
        grad.bias.assign(layer.out_dim(), 0.0);
        for (std::size_t i = 0; i < delta.rows(); ++i) {
            const auto row = delta.row(i);
            for (std::size_t j = 0; j < row.size(); ++j) grad.bias[j] += row[j];
        }
        delta = matmul(delta, layer.weight);
    }
    result.input_gradient = std::move(delta);
    return result;
}

void apply_gradients(std::span<LayerParams> layers, std::span<const LayerGradient> grads, double step) {
    for (std::size_t li = 0; li < layers.size(); ++li) {
        auto& w = layers[li].weight.values();
        const auto& gw = grads[li].weight.values();
        for (std::size_t k = 0; k < w.size(); ++k) w[k] += step * gw[k];
        auto& b = layers[li].bias;
        for (std::size_t k = 0; k < b.size(); ++k) b[k] += step * grads[li].bias[k];
    }
}

AutoencoderGradients backprop_autoencoder(const EncoderStack& enc, const DecoderStack& dec,
                                          std::span<const double> x_clean,
                                          std::span<const double> x_corrupt) {
    check_input(enc.layers, x_corrupt.size(), "backprop_autoencoder");
    check_input(dec.layers, enc.output_dim(), "backprop_autoencoder");
    if (dec.output_dim() != x_clean.size()) {
        throw std::invalid_argument("backprop_autoencoder: reconstruction dim " +
                                    std::to_string(dec.output_dim()) + " != clean sample dim " +
                                    std::to_string(x_clean.size()));
    }
    std::vector<LayerParams> all(enc.layers);
    all.insert(all.end(), dec.layers.begin(), dec.layers.end());

    const DenseMatrix input(1, x_corrupt.size(), {x_corrupt.begin(), x_corrupt.end()});
    const DenseMatrix target(1, x_clean.size(), {x_clean.begin(), x_clean.end()});
    auto acts = forward_layers(all, input);
    double loss = 0.0;
    auto back = backward_layers(all, acts, loss_gradient(target, acts.back(), 1.0, loss));

    AutoencoderGradients out;
    const auto split = std::ptrdiff_t(enc.layers.size());
    out.encoder.assign(std::make_move_iterator(back.gradients.begin()),
                       std::make_move_iterator(back.gradients.begin() + split));
    out.decoder.assign(std::make_move_iterator(back.gradients.begin() + split),
                       std::make_move_iterator(back.gradients.end()));
    return out;
}

AutoencoderResult pretrain_layerwise(const DenseMatrix& data, std::span<const std::size_t> shape,
                                     const AutoencoderConfig& config, SeededRng& rng) {
    if (data.rows() == 0) throw std::invalid_argument("pretrain_layerwise: empty dataset");
    if (shape.empty() || shape.front() != data.cols()) {
        throw std::invalid_argument("pretrain_layerwise: shape must start with the data dimension " +
                                    std::to_string(data.cols()));
    }
    auto [enc, dec] = init_autoencoder(shape, rng);
    AutoencoderResult result;
    const std::size_t depth = enc.layers.size();

    DenseMatrix clean = data;
    for (std::size_t i = 0; i < depth; ++i) {
        auto& enc_layer = enc.layers[i];
        auto& dec_layer = dec.layers[depth - 1 - i];
        std::vector<LayerParams> pair{enc_layer, dec_layer};
        const auto losses = sgd_reconstruct(pair, clean, config.pretrain_epochs, config.batch_size,
                                            config.learning_rate, &config.corruption, rng);
        enc_layer = std::move(pair[0]);
        dec_layer = std::move(pair[1]);
        for (std::size_t e = 0; e < losses.size(); ++e) {
            result.history.push_back({"layer" + std::to_string(i), e + 1, losses[e]});
        }
        if (i + 1 < depth) {
            clean = std::move(forward_layers(std::span<const LayerParams>(&enc_layer, 1), clean).back());
        }
    }
    result.encoder = std::move(enc);
    result.decoder = std::move(dec);
    return result;
}

AutoencoderResult finetune(EncoderStack enc, DecoderStack dec, const DenseMatrix& data,
                           const AutoencoderConfig& config, SeededRng& rng) {
    if (data.rows() == 0) throw std::invalid_argument("finetune: empty dataset");
    validate_pair(enc, dec);
    if (enc.input_dim() != data.cols()) {
        throw std::invalid_argument("finetune: data dimension " + std::to_string(data.cols()) +
                                    " != encoder input " + std::to_string(enc.input_dim()));
    }
    std::vector<LayerParams> all(std::make_move_iterator(enc.layers.begin()),
                                 std::make_move_iterator(enc.layers.end()));
    all.insert(all.end(), std::make_move_iterator(dec.layers.begin()),
               std::make_move_iterator(dec.layers.end()));
    const std::size_t split = enc.layers.size();

    const auto losses = sgd_reconstruct(all, data, config.finetune_epochs, config.batch_size,
                                        config.learning_rate, nullptr, rng);
    AutoencoderResult result;
    result.encoder.layers.assign(std::make_move_iterator(all.begin()),
                                 std::make_move_iterator(all.begin() + std::ptrdiff_t(split)));
    result.decoder.layers.assign(std::make_move_iterator(all.begin() + std::ptrdiff_t(split)),
                                 std::make_move_iterator(all.end()));
    for (std::size_t e = 0; e < losses.size(); ++e) result.history.push_back({"finetune", e + 1, losses[e]});
    return result;
}

double mean_reconstruction_loss(const EncoderStack& enc, const DecoderStack& dec, const DenseMatrix& data) {
    if (data.rows() == 0) throw std::invalid_argument("mean_reconstruction_loss: empty dataset");
    const DenseMatrix recon = decode_rows(dec, encode_rows(enc, data));
    double total = 0.0;
    for (std::size_t i = 0; i < data.rows(); ++i) total += reconstruction_loss(data.row(i), recon.row(i));
    return total / double(data.rows());
}

}  // namespace deepgmm
