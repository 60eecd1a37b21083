#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "deepgmm/numerics.hpp"

namespace deepgmm {

enum class Activation { ReLU, Linear };

const char* to_string(Activation a) noexcept;
Activation activation_from_string(const std::string& name);

/// One fully connected layer: out = s(W·in + b), W stored out_dim × in_dim.
struct LayerParams {
    DenseMatrix weight;
    std::vector<double> bias;
    Activation activation = Activation::ReLU;

    std::size_t in_dim() const noexcept { return weight.cols(); }
    std::size_t out_dim() const noexcept { return weight.rows(); }

    friend bool operator==(const LayerParams&, const LayerParams&) = default;
};

struct LayerGradient {
    DenseMatrix weight;
    std::vector<double> bias;
};

/// Encoder f_θ. Hidden layers are ReLU, the representation layer is linear.
struct EncoderStack {
    std::vector<LayerParams> layers;

    std::size_t input_dim() const;
    std::size_t output_dim() const;
    friend bool operator==(const EncoderStack&, const EncoderStack&) = default;
};

/// Decoder g, the mirror of an encoder. The reconstruction layer is linear.
struct DecoderStack {
    std::vector<LayerParams> layers;

    std::size_t input_dim() const;
    std::size_t output_dim() const;
    friend bool operator==(const DecoderStack&, const DecoderStack&) = default;
};

struct CorruptionSpec {
    double mask_fraction = 0.2;
};

struct AutoencoderConfig {
    std::size_t pretrain_epochs = 50;
    std::size_t finetune_epochs = 50;
    std::size_t batch_size = 256;
    double learning_rate = 0.01;
    CorruptionSpec corruption;
};

struct LossRecord {
    std::string stage;  // "layer<i>" during greedy pretraining, "finetune" afterwards
    std::size_t epoch = 0;
    double mean_loss = 0.0;
};

struct AutoencoderGradients {
    std::vector<LayerGradient> encoder;
    std::vector<LayerGradient> decoder;
};

struct AutoencoderResult {
    EncoderStack encoder;
    DecoderStack decoder;
    std::vector<LossRecord> history;
};

/// Checks chaining, bias sizes, finiteness and the activation layout.
/// Throws std::invalid_argument describing the first violation.
void validate(const EncoderStack& enc);
void validate(const DecoderStack& dec);
void validate_pair(const EncoderStack& enc, const DecoderStack& dec);

/// Uniform ±sqrt(6/(fan_in+fan_out)) weights, zero bias.
LayerParams make_layer(std::size_t in_dim, std::size_t out_dim, Activation act, SeededRng& rng);

/// Builds an encoder for `shape` (e.g. {d, 500, 500, 2000, 10}) and its mirrored
/// decoder. Layers are drawn in greedy-training order: encoder layer i, then
/// decoder layer i.
std::pair<EncoderStack, DecoderStack> init_autoencoder(std::span<const std::size_t> shape,
                                                       SeededRng& rng);

/// Masking noise: exactly round(mask_fraction·dim) distinct coordinates set to 0.
std::vector<double> corrupt(std::span<const double> x, const CorruptionSpec& spec, SeededRng& rng);
DenseMatrix corrupt_rows(const DenseMatrix& x, const CorruptionSpec& spec, SeededRng& rng);

std::vector<double> encode(const EncoderStack& enc, std::span<const double> x);
std::vector<double> decode(const DecoderStack& dec, std::span<const double> y);
DenseMatrix encode_rows(const EncoderStack& enc, const DenseMatrix& x);
DenseMatrix decode_rows(const DecoderStack& dec, const DenseMatrix& y);

double reconstruction_loss(std::span<const double> x, std::span<const double> z);

// Generic layer-stack machinery shared with the joint trainer.

/// Outputs of every layer; element 0 is the input itself.
std::vector<DenseMatrix> forward_layers(std::span<const LayerParams> layers, const DenseMatrix& input);

struct BackwardResult {
    std::vector<LayerGradient> gradients;
    DenseMatrix input_gradient;
};

/// Backpropagates `output_gradient` (∂L/∂output, one row per sample) through the
/// stack. Gradients are summed over rows; callers scale for means.
BackwardResult backward_layers(std::span<const LayerParams> layers,
                               std::span<const DenseMatrix> activations,
                               DenseMatrix output_gradient);

/// params += step · grad (use a negative step for descent).
void apply_gradients(std::span<LayerParams> layers, std::span<const LayerGradient> grads, double step);

/// Exact gradient of ||x_clean − dec(enc(x_corrupt))||² with respect to every
/// weight and bias.
AutoencoderGradients backprop_autoencoder(const EncoderStack& enc, const DecoderStack& dec,
                                          std::span<const double> x_clean,
                                          std::span<const double> x_corrupt);

/// Greedy layer-by-layer denoising pretraining. Stage i reconstructs the clean
/// output of the already-trained layers below it from a masked copy.
AutoencoderResult pretrain_layerwise(const DenseMatrix& data, std::span<const std::size_t> shape,
                                     const AutoencoderConfig& config, SeededRng& rng);

/// End-to-end minibatch SGD of the concatenated stack on clean inputs.
AutoencoderResult finetune(EncoderStack enc, DecoderStack dec, const DenseMatrix& data,
                           const AutoencoderConfig& config, SeededRng& rng);

double mean_reconstruction_loss(const EncoderStack& enc, const DecoderStack& dec,
                                const DenseMatrix& data);

}  // namespace deepgmm
