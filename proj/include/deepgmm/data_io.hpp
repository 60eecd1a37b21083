#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "deepgmm/autoencoder.hpp"
#include "deepgmm/gmm.hpp"
#include "deepgmm/numerics.hpp"

namespace deepgmm {

struct Dataset {
    DenseMatrix samples;
    std::optional<std::vector<int>> labels;
    std::string name;

    std::size_t size() const noexcept { return samples.rows(); }
    std::size_t dim() const noexcept { return samples.cols(); }

    /// First `n` samples (and labels), or the whole set if it is smaller.
    Dataset head(std::size_t n) const;
};

/// Malformed input. The message names the file and the byte offset or line.
class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// IDX images (magic 0x00000803) with optional IDX labels (0x00000801).
/// Pixels are scaled by 1/255.
Dataset load_idx(const std::filesystem::path& images,
                 const std::optional<std::filesystem::path>& labels = std::nullopt);

/// Numeric table; with `has_labels` the last column is an integer label.
/// Values are not rescaled.
Dataset load_csv(const std::filesystem::path& path, bool has_labels, char delimiter = ',');

/// Writes samples (and labels as a last column) with round-trip precision.
void save_csv(const Dataset& data, const std::filesystem::path& path, char delimiter = ',');

struct SynthResult {
    Dataset data;
    GmmParams truth;
};

/// m unit-variance Gaussian clusters whose means lie at distance `separation`
/// from the origin along well-spread random directions; equal mixing weights.
/// The generating component is stored as the label.
SynthResult synth_gmm(std::size_t m, std::size_t dim, std::size_t n, double separation, SeededRng& rng);

// Checkpoint container.
//
// Layout: an ASCII header of newline-terminated lines
//
//   deepgmm-checkpoint
//   format_version <int>
//   config <count>            followed by <count> lines "key=value"
//   encoder <layers>          followed by <layers> lines "layer <in> <out> <activation>"
//   decoder <layers>|none     likewise
//   gmm <m> <D>|none
//   payload <doubles>
//   end
//
// and then exactly <doubles> little-endian IEEE-754 binary64 values: for each
// encoder layer its weight (out × in, row-major) then bias, the same for the
// decoder, then mixture logits (m), means (m × D) and log-sigmas (m × D).

inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
    int format_version = kCheckpointVersion;
    EncoderStack encoder;
    std::optional<DecoderStack> decoder;
    std::optional<GmmParams> gmm;
    std::map<std::string, std::string> config;

    friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

class CheckpointError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// CSV "x,y[,label]" with 9 significant digits. `ys` must be N × 2.
void emit_embedding_csv(const DenseMatrix& ys, const std::optional<std::vector<int>>& labels,
                        const std::filesystem::path& path);

/// Shortest decimal form at the given precision ("%.*g").
std::string format_number(double v, int significant_digits);

}  // namespace deepgmm
