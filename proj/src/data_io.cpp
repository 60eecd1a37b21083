#include "deepgmm/data_io.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <limits>
#include <sstream>

namespace deepgmm {

namespace fs = std::filesystem;

namespace {

std::vector<unsigned char> read_bytes(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open '" + path.string() + "'");
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t read_be32(const std::vector<unsigned char>& bytes, std::size_t offset, const fs::path& path) {
    if (offset + 4 > bytes.size()) {
        throw FormatError(path.string() + ": truncated header at byte offset " + std::to_string(offset));
    }
    return (std::uint32_t(bytes[offset]) << 24) | (std::uint32_t(bytes[offset + 1]) << 16) |
           (std::uint32_t(bytes[offset + 2]) << 8) | std::uint32_t(bytes[offset + 3]);
}

std::string hex(std::uint32_t v) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "0x%08x", v);
    return buf;
}

// Returns (dims, payload offset) of an unsigned-byte IDX file.
std::pair<std::vector<std::size_t>, std::size_t> idx_header(const std::vector<unsigned char>& bytes,
                                                             std::uint32_t expected_magic,
                                                             const fs::path& path) {
    const std::uint32_t magic = read_be32(bytes, 0, path);
    if (magic != expected_magic) {
        throw FormatError(path.string() + ": bad magic " + hex(magic) + " at byte offset 0 (expected " +
                          hex(expected_magic) + ")");
    }
    const std::size_t ndims = magic & 0xffu;
    std::vector<std::size_t> dims(ndims);
    for (std::size_t i = 0; i < ndims; ++i) dims[i] = read_be32(bytes, 4 + 4 * i, path);
    const std::size_t offset = 4 + 4 * ndims;
    std::size_t total = 1;
    for (auto d : dims) total *= d;
    if (bytes.size() < offset + total) {
        throw FormatError(path.string() + ": truncated payload: expected " + std::to_string(total) +
                          " bytes from byte offset " + std::to_string(offset) + ", file has " +
                          std::to_string(bytes.size() - offset));
    }
    return {dims, offset};
}

std::vector<std::string> split(const std::string& line, char delim) {
    std::vector<std::string> out;
    std::string cell;
    std::istringstream ss(line);
    while (std::getline(ss, cell, delim)) out.push_back(cell);
    if (!line.empty() && line.back() == delim) out.emplace_back();
    return out;
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

template <typename T>
bool parse_number(const std::string& text, T& out) {
    const auto t = trim(text);
    if (t.empty()) return false;
    const char* first = t.data();
    if (*first == '+') ++first;
    const auto [ptr, ec] = std::from_chars(first, t.data() + t.size(), out);
    return ec == std::errc() && ptr == t.data() + t.size();
}

void put_le64(std::string& out, double v) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    for (int i = 0; i < 8; ++i) out.push_back(char((bits >> (8 * i)) & 0xffu));
}

double get_le64(const std::string& in, std::size_t offset) {
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= std::uint64_t(static_cast<unsigned char>(in[offset + i])) << (8 * i);
    return std::bit_cast<double>(bits);
}

void write_file(const fs::path& path, const std::string& contents) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
    out.write(contents.data(), std::streamsize(contents.size()));
    if (!out) throw std::runtime_error("failed writing '" + path.string() + "'");
}

void append_layers(std::string& header, std::string& payload, const char* tag,
                   const std::vector<LayerParams>& layers) {
    header += std::string(tag) + " " + std::to_string(layers.size()) + "\n";
    for (const auto& l : layers) {
        header += "layer " + std::to_string(l.in_dim()) + " " + std::to_string(l.out_dim()) + " " +
                  to_string(l.activation) + "\n";
        for (double v : l.weight.values()) put_le64(payload, v);
        for (double v : l.bias) put_le64(payload, v);
    }
}

class HeaderReader {
public:
    HeaderReader(const std::string& bytes, const fs::path& path) : bytes_(bytes), path_(path) {}

    std::string line() {
        const auto nl = bytes_.find('\n', pos_);
        if (nl == std::string::npos) fail("unterminated header");
        std::string out = bytes_.substr(pos_, nl - pos_);
        pos_ = nl + 1;
        ++line_no_;
        return out;
    }

    std::vector<std::string> fields(const std::string& expected_tag) {
        std::istringstream ss(line());
        std::vector<std::string> out{std::istream_iterator<std::string>(ss), std::istream_iterator<std::string>()};
        if (out.empty() || out.front() != expected_tag) fail("expected '" + expected_tag + "'");
        return out;
    }

    std::size_t count(const std::string& text) {
        std::size_t v = 0;
        if (!parse_number(text, v)) fail("bad count '" + text + "'");
        return v;
    }

    [[noreturn]] void fail(const std::string& why) const {
        throw CheckpointError(path_.string() + ": header line " + std::to_string(line_no_) + ": " + why);
    }

    std::size_t position() const noexcept { return pos_; }

private:
    const std::string& bytes_;
    const fs::path& path_;
    std::size_t pos_ = 0;
    std::size_t line_no_ = 0;
};

struct LayerShape {
    std::size_t in = 0;
    std::size_t out = 0;
    Activation activation = Activation::Linear;
};

std::optional<std::vector<LayerShape>> read_layer_shapes(HeaderReader& r, const std::string& tag) {
    const auto f = r.fields(tag);
    if (f.size() != 2) r.fail("malformed '" + tag + "' line");
    if (f[1] == "none") return std::nullopt;
    const std::size_t n = r.count(f[1]);
    std::vector<LayerShape> shapes(n);
    for (auto& s : shapes) {
        const auto lf = r.fields("layer");
        if (lf.size() != 4) r.fail("malformed layer line");
        s.in = r.count(lf[1]);
        s.out = r.count(lf[2]);
        try {
            s.activation = activation_from_string(lf[3]);
        } catch (const std::invalid_argument& e) {
            r.fail(e.what());
        }
    }
    return shapes;
}

std::vector<LayerParams> read_layers(const std::vector<LayerShape>& shapes, const std::string& bytes,
                                     std::size_t& offset) {
    std::vector<LayerParams> layers;
    for (const auto& s : shapes) {
        LayerParams l{DenseMatrix(s.out, s.in), std::vector<double>(s.out), s.activation};
        for (double& v : l.weight.values()) {
            v = get_le64(bytes, offset);
            offset += 8;
        }
        for (double& v : l.bias) {
            v = get_le64(bytes, offset);
            offset += 8;
        }
        layers.push_back(std::move(l));
    }
    return layers;
}

std::size_t layer_doubles(const std::vector<LayerShape>& shapes) {
    std::size_t n = 0;
    for (const auto& s : shapes) n += s.out * s.in + s.out;
    return n;
}

}  // namespace

Dataset Dataset::head(std::size_t n) const {
    if (n >= size()) return *this;
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    Dataset out{samples.gather_rows(idx), std::nullopt, name};
    if (labels) out.labels = std::vector<int>(labels->begin(), labels->begin() + std::ptrdiff_t(n));
    return out;
}

Dataset load_idx(const fs::path& images, const std::optional<fs::path>& labels) {
    const auto bytes = read_bytes(images);
    const auto [dims, offset] = idx_header(bytes, 0x00000803u, images);
    if (dims.empty()) throw FormatError(images.string() + ": image file has no dimensions");
    const std::size_t n = dims[0];
    std::size_t d = 1;
    for (std::size_t i = 1; i < dims.size(); ++i) d *= dims[i];

    Dataset data{DenseMatrix(n, d), std::nullopt, images.filename().string()};
    auto& values = data.samples.values();
    for (std::size_t i = 0; i < n * d; ++i) values[i] = double(bytes[offset + i]) / 255.0;

    if (labels) {
        const auto lbytes = read_bytes(*labels);
        const auto [ldims, loffset] = idx_header(lbytes, 0x00000801u, *labels);
        if (ldims.size() != 1 || ldims[0] != n) {
            throw FormatError(labels->string() + ": label count " +
                              (ldims.empty() ? std::string("?") : std::to_string(ldims[0])) +
                              " does not match image count " + std::to_string(n));
        }
        std::vector<int> ls(n);
        for (std::size_t i = 0; i < n; ++i) ls[i] = int(lbytes[loffset + i]);
        data.labels = std::move(ls);
    }
    return data;
}

Dataset load_csv(const fs::path& path, bool has_labels, char delimiter) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open '" + path.string() + "'");

    std::vector<double> values;
    std::vector<int> labels;
    std::size_t cols = 0;
    std::size_t rows = 0;
    std::size_t line_no = 0;
    std::string line;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        const auto cells = split(line, delimiter);
        const std::size_t width = cells.size() - (has_labels ? 1 : 0);
        if (has_labels && cells.size() < 2) {
            throw FormatError(path.string() + ":" + std::to_string(line_no) + ": need at least one value and a label");
        }
        if (rows == 0) {
            cols = width;
        } else if (width != cols) {
            throw FormatError(path.string() + ":" + std::to_string(line_no) + ": ragged row with " +
                              std::to_string(cells.size()) + " cells (expected " +
                              std::to_string(cols + (has_labels ? 1 : 0)) + ")");
        }
        for (std::size_t c = 0; c < width; ++c) {
            double v = 0.0;
            if (!parse_number(cells[c], v) || !std::isfinite(v)) {
                throw FormatError(path.string() + ":" + std::to_string(line_no) + ": non-numeric cell " +
                                  std::to_string(c + 1) + " '" + cells[c] + "'");
            }
            values.push_back(v);
        }
        if (has_labels) {
            int label = 0;
            if (!parse_number(cells.back(), label) || label < 0) {
                throw FormatError(path.string() + ":" + std::to_string(line_no) + ": bad label '" +
                                  cells.back() + "'");
            }
            labels.push_back(label);
        }
        ++rows;
    }
    if (rows == 0) throw FormatError(path.string() + ": no data rows");

    Dataset data{DenseMatrix(rows, cols, std::move(values)), std::nullopt, path.filename().string()};
    if (has_labels) data.labels = std::move(labels);
    return data;
}

void save_csv(const Dataset& data, const fs::path& path, char delimiter) {
    std::string out;
    for (std::size_t i = 0; i < data.size(); ++i) {
        const auto row = data.samples.row(i);
        for (std::size_t d = 0; d < row.size(); ++d) {
            if (d) out.push_back(delimiter);
            out += format_number(row[d], 17);
        }
        if (data.labels) {
            out.push_back(delimiter);
            out += std::to_string((*data.labels)[i]);
        }
        out.push_back('\n');
    }
    write_file(path, out);
}

SynthResult synth_gmm(std::size_t m, std::size_t dim, std::size_t n, double separation, SeededRng& rng) {
    if (m == 0 || dim == 0 || n == 0) throw std::invalid_argument("synth_gmm: m, D and N must be >= 1");
    if (!(separation > 0.0)) throw std::invalid_argument("synth_gmm: separation must be positive");

    auto unit = [&] {
        std::vector<double> v(dim);
        double norm = 0.0;
        do {
            norm = 0.0;
            for (double& x : v) {
                x = rng.normal();
                norm += x * x;
            }
        } while (norm == 0.0);
        norm = std::sqrt(norm);
        for (double& x : v) x /= norm;
        return v;
    };

    // Farthest-candidate selection keeps the directions spread out.
    constexpr int kCandidates = 64;
    DenseMatrix means(m, dim);
    for (std::size_t k = 0; k < m; ++k) {
        std::vector<double> best;
        double best_gap = -1.0;
        for (int c = 0; c < (k == 0 ? 1 : kCandidates); ++c) {
            auto cand = unit();
            double gap = std::numeric_limits<double>::infinity();
            for (std::size_t j = 0; j < k; ++j) {
                gap = std::min(gap, squared_distance(cand, means.row(j)) * separation * separation);
            }
            if (gap > best_gap) {
                best_gap = gap;
                best = std::move(cand);
            }
        }
        for (std::size_t d = 0; d < dim; ++d) means(k, d) = separation * best[d];
    }

    Dataset data{DenseMatrix(n, dim), std::vector<int>(n), "synth"};
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t k = rng.index(m);
        (*data.labels)[i] = int(k);
        auto row = data.samples.row(i);
        for (std::size_t d = 0; d < dim; ++d) row[d] = means(k, d) + rng.normal();
    }

    GmmParams truth;
    truth.weight_logits.assign(m, 0.0);
    truth.means = std::move(means);
    truth.log_sigmas = DenseMatrix(m, dim, 0.0);
    return {std::move(data), std::move(truth)};
}

void save_checkpoint(const Checkpoint& ckpt, const fs::path& path) {
    std::string header = "deepgmm-checkpoint\n";
    std::string payload;
    header += "format_version " + std::to_string(ckpt.format_version) + "\n";
    header += "config " + std::to_string(ckpt.config.size()) + "\n";
    for (const auto& [key, value] : ckpt.config) {
        if (key.find_first_of("=\n") != std::string::npos || value.find('\n') != std::string::npos) {
            throw CheckpointError("checkpoint config entry '" + key + "' contains a reserved character");
        }
        header += key + "=" + value + "\n";
    }
    append_layers(header, payload, "encoder", ckpt.encoder.layers);
    if (ckpt.decoder) {
        append_layers(header, payload, "decoder", ckpt.decoder->layers);
    } else {
        header += "decoder none\n";
    }
    if (ckpt.gmm) {
        const auto& g = *ckpt.gmm;
        header += "gmm " + std::to_string(g.components()) + " " + std::to_string(g.dim()) + "\n";
        for (double v : g.weight_logits) put_le64(payload, v);
        for (double v : g.means.values()) put_le64(payload, v);
        for (double v : g.log_sigmas.values()) put_le64(payload, v);
    } else {
        header += "gmm none\n";
    }
    header += "payload " + std::to_string(payload.size() / 8) + "\nend\n";
    write_file(path, header + payload);
}

Checkpoint load_checkpoint(const fs::path& path) {
    std::string bytes;
    {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw CheckpointError("cannot open checkpoint '" + path.string() + "'");
        bytes.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
    }
    HeaderReader r(bytes, path);
    if (r.line() != "deepgmm-checkpoint") r.fail("not a deepgmm checkpoint");

    Checkpoint ckpt;
    {
        const auto f = r.fields("format_version");
        int version = 0;
        if (f.size() != 2 || !parse_number(f[1], version)) r.fail("malformed format_version");
        if (version != kCheckpointVersion) {
            throw CheckpointError(path.string() + ": checkpoint format version " + std::to_string(version) +
                                  " is not supported (this build reads version " +
                                  std::to_string(kCheckpointVersion) + ")");
        }
        ckpt.format_version = version;
    }
    {
        const auto f = r.fields("config");
        if (f.size() != 2) r.fail("malformed config line");
        const std::size_t n = r.count(f[1]);
        for (std::size_t i = 0; i < n; ++i) {
            const auto entry = r.line();
            const auto eq = entry.find('=');
            if (eq == std::string::npos) r.fail("config entry without '='");
            ckpt.config[entry.substr(0, eq)] = entry.substr(eq + 1);
        }
    }
    const auto enc_shapes = read_layer_shapes(r, "encoder");
    if (!enc_shapes) r.fail("encoder is required");
    const auto dec_shapes = read_layer_shapes(r, "decoder");

    std::size_t m = 0, dim = 0;
    bool has_gmm = false;
    {
        const auto f = r.fields("gmm");
        if (f.size() == 3) {
            m = r.count(f[1]);
            dim = r.count(f[2]);
            has_gmm = true;
        } else if (f.size() != 2 || f[1] != "none") {
            r.fail("malformed gmm line");
        }
    }
    std::size_t declared = 0;
    {
        const auto f = r.fields("payload");
        if (f.size() != 2) r.fail("malformed payload line");
        declared = r.count(f[1]);
    }
    if (r.line() != "end") r.fail("expected 'end'");

    const std::size_t expected = layer_doubles(*enc_shapes) + (dec_shapes ? layer_doubles(*dec_shapes) : 0) +
                                 (has_gmm ? m + 2 * m * dim : 0);
    if (declared != expected) {
        throw CheckpointError(path.string() + ": header declares " + std::to_string(declared) +
                              " payload values but the listed shapes need " + std::to_string(expected));
    }
    const std::size_t available = bytes.size() - r.position();
    if (available != 8 * declared) {
        throw CheckpointError(path.string() + ": corrupt payload: expected " + std::to_string(8 * declared) +
                              " bytes after the header, found " + std::to_string(available));
    }

    std::size_t offset = r.position();
    ckpt.encoder.layers = read_layers(*enc_shapes, bytes, offset);
    if (dec_shapes) ckpt.decoder = DecoderStack{read_layers(*dec_shapes, bytes, offset)};
    if (has_gmm) {
        GmmParams g;
        g.weight_logits.resize(m);
        for (double& v : g.weight_logits) {
            v = get_le64(bytes, offset);
            offset += 8;
        }
        g.means = DenseMatrix(m, dim);
        for (double& v : g.means.values()) {
            v = get_le64(bytes, offset);
            offset += 8;
        }
        g.log_sigmas = DenseMatrix(m, dim);
        for (double& v : g.log_sigmas.values()) {
            v = get_le64(bytes, offset);
            offset += 8;
        }
        ckpt.gmm = std::move(g);
    }
    return ckpt;
}

std::string format_number(double v, int significant_digits) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*g", significant_digits, v);
    return buf;
}

void emit_embedding_csv(const DenseMatrix& ys, const std::optional<std::vector<int>>& labels, const fs::path& path) {
    if (ys.cols() != 2) {
        throw std::invalid_argument("emit_embedding_csv: expected N x 2 data, got " + std::to_string(ys.cols()) +
                                    " columns");
    }
    if (labels && labels->size() != ys.rows()) {
        throw std::invalid_argument("emit_embedding_csv: label count does not match sample count");
    }
    std::string out = labels ? "x,y,label\n" : "x,y\n";
    for (std::size_t i = 0; i < ys.rows(); ++i) {
        out += format_number(ys(i, 0), 9) + "," + format_number(ys(i, 1), 9);
        if (labels) out += "," + std::to_string((*labels)[i]);
        out.push_back('\n');
    }
    write_file(path, out);
}

}  // namespace deepgmm
