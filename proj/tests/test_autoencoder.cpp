#include <doctest.h>

#include <cmath>
#include <functional>
#include <vector>

#include "deepgmm/autoencoder.hpp"
#include "test_support.hpp"

using namespace deepgmm;

namespace {

// Straightforward per-sample forward pass, written independently of the
// batched implementation.
std::vector<double> oracle_forward(const std::vector<LayerParams>& layers, std::vector<double> x) {
    for (const auto& l : layers) {
        std::vector<double> out(l.out_dim());
        for (std::size_t i = 0; i < l.out_dim(); ++i) {
            double s = l.bias[i];
            for (std::size_t j = 0; j < l.in_dim(); ++j) s += l.weight(i, j) * x[j];
            out[i] = (l.activation == Activation::ReLU) ? std::max(0.0, s) : s;
        }
        x = std::move(out);
    }
    return x;
}

// Smallest |pre-activation| of any ReLU unit; finite differences are only
// meaningful away from the kink.
double min_relu_margin(const std::vector<LayerParams>& layers, std::vector<double> x) {
    double margin = 1e300;
    for (const auto& l : layers) {
        std::vector<double> out(l.out_dim());
        for (std::size_t i = 0; i < l.out_dim(); ++i) {
            double s = l.bias[i];
            for (std::size_t j = 0; j < l.in_dim(); ++j) s += l.weight(i, j) * x[j];
            if (l.activation == Activation::ReLU) margin = std::min(margin, std::abs(s));
            out[i] = (l.activation == Activation::ReLU) ? std::max(0.0, s) : s;
        }
        x = std::move(out);
    }
    return margin;
}

LayerParams identity_layer(std::size_t n, Activation act = Activation::Linear) {
    return {DenseMatrix::identity(n), std::vector<double>(n, 0.0), act};
}

DenseMatrix rank2_data(std::size_t n, SeededRng& rng) {
    const double basis[2][4] = {{1.0, 0.5, -0.3, 0.2}, {0.0, 0.8, 0.6, -0.4}};
    DenseMatrix data(n, 4);
    for (std::size_t i = 0; i < n; ++i) {
        const double a = rng.uniform(-1.0, 1.0);
        const double b = rng.uniform(-1.0, 1.0);
        for (std::size_t d = 0; d < 4; ++d) data(i, d) = a * basis[0][d] + b * basis[1][d];
    }
    return data;
}

DenseMatrix blob_data(std::size_t n, std::size_t dim, SeededRng& rng) {
    DenseMatrix data(n, dim);
    for (std::size_t i = 0; i < n; ++i) {
        const double c = (i % 3) * 0.3;
        for (std::size_t d = 0; d < dim; ++d) data(i, d) = c + 0.1 * rng.normal() + 0.05 * double(d % 2);
    }
    return data;
}

}  // namespace

TEST_SUITE("autoencoder") {
    TEST_CASE("corrupt: fraction 0 is identity, fraction 1 zeroes everything") {
        SeededRng rng(1);
        const std::vector<double> x{1.0, 2.0, 3.0, 4.0, 5.0};
        CHECK(corrupt(x, {0.0}, rng) == x);
        CHECK(corrupt(x, {1.0}, rng) == std::vector<double>(5, 0.0));
        CHECK_THROWS(corrupt(x, {1.5}, rng));
    }

    TEST_CASE("corrupt masks exactly round(fraction*dim) coordinates, uniformly") {
        SeededRng rng(2);
        const std::vector<double> ones(10, 1.0);
        std::vector<int> hits(10, 0);
        const int trials = 20000;
        for (int t = 0; t < trials; ++t) {
            const auto y = corrupt(ones, {0.2}, rng);
            int zeros = 0;
            for (std::size_t d = 0; d < 10; ++d) {
                if (y[d] == 0.0) {
                    ++zeros;
                    ++hits[d];
                } else {
                    CHECK(y[d] == 1.0);
                }
            }
            REQUIRE(zeros == 2);
        }
        for (int h : hits) CHECK(double(h) / trials == doctest::Approx(0.2).epsilon(0.05));
    }

    TEST_CASE("encode trivial stacks") {
        EncoderStack zero{{LayerParams{DenseMatrix(3, 4), std::vector<double>(3, 0.0), Activation::ReLU},
                           LayerParams{DenseMatrix(2, 3), std::vector<double>(2, 0.0), Activation::Linear}}};
        CHECK(encode(zero, std::vector<double>{1.0, -2.0, 3.0, 0.5}) == std::vector<double>(2, 0.0));

        EncoderStack ident{{identity_layer(3)}};
        const std::vector<double> x{0.25, -1.5, 3.0};
        CHECK(encode(ident, x) == x);
        CHECK_THROWS_AS(encode(ident, std::vector<double>{1.0, 2.0}), std::invalid_argument);
    }

    TEST_CASE("decode trivial stacks and identity round trip") {
        DecoderStack ident{{identity_layer(3)}};
        const std::vector<double> y{1.0, -2.0, 0.5};
        CHECK(decode(ident, y) == y);
        DecoderStack zero{{LayerParams{DenseMatrix(4, 3), std::vector<double>(4, 0.0), Activation::Linear}}};
        CHECK(decode(zero, y) == std::vector<double>(4, 0.0));
        EncoderStack enc{{identity_layer(3)}};
        CHECK(decode(ident, encode(enc, y)) == y);
    }

    TEST_CASE("encode matches an independent forward-pass oracle") {
        SeededRng rng(7);
        for (int trial = 0; trial < 20; ++trial) {
            std::vector<std::size_t> shape{5, 6, 3};
            auto [enc, dec] = init_autoencoder(shape, rng);
            for (auto& l : enc.layers)
                for (double& b : l.bias) b = rng.uniform(-0.5, 0.5);
            std::vector<double> x(5);
            for (double& v : x) v = rng.uniform(-1.0, 1.0);
            const auto got = encode(enc, x);
            const auto want = oracle_forward(enc.layers, x);
            REQUIRE(got.size() == want.size());
            for (std::size_t i = 0; i < got.size(); ++i) CHECK(std::abs(got[i] - want[i]) < 1e-12);
        }
    }

    TEST_CASE("reconstruction loss") {
        const std::vector<double> x{1.0, 0.0}, z{0.0, 1.0};
        CHECK(reconstruction_loss(x, x) == 0.0);
        CHECK(reconstruction_loss(x, z) == 2.0);
        SeededRng rng(3);
        std::vector<double> a(7), b(7);
        for (double& v : a) v = rng.normal();
        for (double& v : b) v = rng.normal();
        double direct = 0.0;
        for (std::size_t i = 0; i < 7; ++i) direct += (a[i] - b[i]) * (a[i] - b[i]);
        CHECK(reconstruction_loss(a, b) == direct);
        CHECK_THROWS_AS(reconstruction_loss(a, x), std::invalid_argument);
    }

    TEST_CASE("init layout: ReLU hidden, linear representation and reconstruction") {
        SeededRng rng(1);
        const std::vector<std::size_t> shape{12, 8, 6, 3};
        auto [enc, dec] = init_autoencoder(shape, rng);
        CHECK_NOTHROW(validate_pair(enc, dec));
        CHECK(enc.layers.back().activation == Activation::Linear);
        CHECK(enc.layers.front().activation == Activation::ReLU);
        CHECK(dec.layers.back().activation == Activation::Linear);
        CHECK(dec.layers.back().out_dim() == 12);
        CHECK(dec.layers.front().in_dim() == 3);
        for (const auto& l : enc.layers) {
            const double limit = std::sqrt(6.0 / double(l.in_dim() + l.out_dim()));
            for (double w : l.weight.values()) CHECK(std::abs(w) <= limit);
            for (double b : l.bias) CHECK(b == 0.0);
        }
    }

    TEST_CASE("backprop: zero loss gives zero gradients") {
        EncoderStack enc{{identity_layer(3)}};
        DecoderStack dec{{identity_layer(3)}};
        const std::vector<double> x{0.3, -0.2, 1.0};
        const auto g = backprop_autoencoder(enc, dec, x, x);
        for (const auto& lg : g.encoder) {
            for (double v : lg.weight.values()) CHECK(v == 0.0);
            for (double v : lg.bias) CHECK(v == 0.0);
        }
        for (const auto& lg : g.decoder)
            for (double v : lg.weight.values()) CHECK(v == 0.0);
    }

    TEST_CASE("backprop: scalar hand derivation") {
        // loss (x − w'wx)², ∂/∂w = −2x²w'(1 − w'w) = −0.75 at w = w' = 0.5, x = 1.
        EncoderStack enc{{LayerParams{DenseMatrix(1, 1, {0.5}), {0.0}, Activation::Linear}}};
        DecoderStack dec{{LayerParams{DenseMatrix(1, 1, {0.5}), {0.0}, Activation::Linear}}};
        const std::vector<double> x{1.0};
        const auto g = backprop_autoencoder(enc, dec, x, x);
        CHECK(g.encoder[0].weight(0, 0) == doctest::Approx(-0.75).epsilon(1e-15));
        CHECK(g.decoder[0].weight(0, 0) == doctest::Approx(-0.75).epsilon(1e-15));
        // ∂/∂b = −2(x − w'(wx + b) − b')w' with b = b' = 0
        CHECK(g.encoder[0].bias[0] == doctest::Approx(-0.75).epsilon(1e-15));
        CHECK(g.decoder[0].bias[0] == doctest::Approx(-1.5).epsilon(1e-15));
    }

    TEST_CASE("property: backprop matches central finite differences") {
        SeededRng rng(99);
        int checked = 0;
        for (int trial = 0; trial < 60; ++trial) {
            const std::size_t depth = 1 + rng.index(3);
            std::vector<std::size_t> shape{1 + rng.index(8)};
            for (std::size_t i = 0; i < depth; ++i) shape.push_back(1 + rng.index(8));
            auto [enc, dec] = init_autoencoder(shape, rng);
            for (auto* layers : {&enc.layers, &dec.layers})
                for (auto& l : *layers)
                    for (double& b : l.bias) b = rng.uniform(-0.3, 0.3);

            std::vector<double> clean(shape[0]);
            for (double& v : clean) v = rng.uniform(-1.0, 1.0);
            auto noisy = corrupt(clean, {0.2}, rng);

            std::vector<LayerParams> all(enc.layers);
            all.insert(all.end(), dec.layers.begin(), dec.layers.end());
            if (min_relu_margin(all, noisy) < 1e-3) continue;

            const auto grads = backprop_autoencoder(enc, dec, clean, noisy);
            auto loss = [&] {
                std::vector<LayerParams> layers(enc.layers);
                layers.insert(layers.end(), dec.layers.begin(), dec.layers.end());
                return reconstruction_loss(clean, oracle_forward(layers, noisy));
            };
            const double h = 1e-5;
            auto check_param = [&](double& p, double analytic) {
                const double saved = p;
                p = saved + h;
                const double up = loss();
                p = saved - h;
                const double down = loss();
                p = saved;
                const double numeric = (up - down) / (2 * h);
                CHECK(test::gradient_error(analytic, numeric, 1e-4) < 1e-5);
            };
            for (std::size_t li = 0; li < enc.layers.size(); ++li) {
                for (std::size_t k = 0; k < enc.layers[li].weight.size(); ++k)
                    check_param(enc.layers[li].weight.values()[k], grads.encoder[li].weight.values()[k]);
                for (std::size_t k = 0; k < enc.layers[li].bias.size(); ++k)
                    check_param(enc.layers[li].bias[k], grads.encoder[li].bias[k]);
            }
            for (std::size_t li = 0; li < dec.layers.size(); ++li) {
                for (std::size_t k = 0; k < dec.layers[li].weight.size(); ++k)
                    check_param(dec.layers[li].weight.values()[k], grads.decoder[li].weight.values()[k]);
                for (std::size_t k = 0; k < dec.layers[li].bias.size(); ++k)
                    check_param(dec.layers[li].bias[k], grads.decoder[li].bias[k]);
            }
            ++checked;
        }
        CHECK(checked >= 30);
    }

    TEST_CASE("pretraining lowers the reconstruction loss") {
        SeededRng data_rng(5);
        const DenseMatrix data = blob_data(300, 12, data_rng);
        AutoencoderConfig cfg;
        cfg.pretrain_epochs = 30;
        cfg.batch_size = 32;
        cfg.learning_rate = 0.05;
        SeededRng rng(6);
        const std::vector<std::size_t> shape{12, 16, 4};
        const auto result = pretrain_layerwise(data, shape, cfg, rng);
        for (const char* stage : {"layer0", "layer1"}) {
            double first = -1.0, last = -1.0;
            for (const auto& r : result.history) {
                if (r.stage != stage) continue;
                if (first < 0.0) first = r.mean_loss;
                last = r.mean_loss;
            }
            CHECK(last < first);
        }
    }

    TEST_CASE("linear (4,2) autoencoder recovers rank-2 data") {
        SeededRng data_rng(8);
        const DenseMatrix data = rank2_data(400, data_rng);
        AutoencoderConfig cfg;
        cfg.pretrain_epochs = 200;
        cfg.finetune_epochs = 0;
        cfg.batch_size = 16;
        cfg.learning_rate = 0.05;
        cfg.corruption.mask_fraction = 0.0;  // masking noise makes exact recovery impossible
        SeededRng rng(9);
        const std::vector<std::size_t> shape{4, 2};
        const auto result = pretrain_layerwise(data, shape, cfg, rng);
        CHECK(mean_reconstruction_loss(result.encoder, result.decoder, data) < 1e-2);
    }

    TEST_CASE("zero pretraining epochs returns the initialisation") {
        SeededRng data_rng(1);
        const DenseMatrix data = blob_data(20, 6, data_rng);
        AutoencoderConfig cfg;
        cfg.pretrain_epochs = 0;
        const std::vector<std::size_t> shape{6, 5, 2};
        SeededRng a(77), b(77);
        const auto [enc, dec] = init_autoencoder(shape, a);
        const auto result = pretrain_layerwise(data, shape, cfg, b);
        CHECK(result.encoder == enc);
        CHECK(result.decoder == dec);
        CHECK(result.history.empty());
    }

    TEST_CASE("pretraining rejects empty data and mismatched shapes") {
        AutoencoderConfig cfg;
        SeededRng rng(1);
        const std::vector<std::size_t> shape{3, 2};
        CHECK_THROWS_AS(pretrain_layerwise(DenseMatrix(0, 3), shape, cfg, rng), std::invalid_argument);
        CHECK_THROWS_AS(pretrain_layerwise(DenseMatrix(4, 5), shape, cfg, rng), std::invalid_argument);
    }

    TEST_CASE("fine-tuning: zero learning rate leaves parameters unchanged") {
        SeededRng rng(3);
        const DenseMatrix data = blob_data(50, 6, rng);
        const std::vector<std::size_t> shape{6, 5, 2};
        auto [enc, dec] = init_autoencoder(shape, rng);
        AutoencoderConfig cfg;
        cfg.finetune_epochs = 3;
        cfg.learning_rate = 0.0;
        const auto result = finetune(enc, dec, data, cfg, rng);
        CHECK(result.encoder == enc);
        CHECK(result.decoder == dec);
    }

    TEST_CASE("fine-tuning trend and improvement over pretraining") {
        SeededRng data_rng(12);
        const DenseMatrix data = blob_data(300, 10, data_rng);
        AutoencoderConfig cfg;
        cfg.pretrain_epochs = 10;
        cfg.finetune_epochs = 30;
        cfg.batch_size = 32;
        cfg.learning_rate = 0.02;
        SeededRng rng(13);
        const std::vector<std::size_t> shape{10, 16, 3};
        const auto pre = pretrain_layerwise(data, shape, cfg, rng);
        const double before = mean_reconstruction_loss(pre.encoder, pre.decoder, data);
        const auto tuned = finetune(pre.encoder, pre.decoder, data, cfg, rng);
        const double after = mean_reconstruction_loss(tuned.encoder, tuned.decoder, data);
        CHECK(after <= before);
        for (std::size_t e = 1; e < tuned.history.size(); ++e) {
            CHECK(tuned.history[e].mean_loss <= 1.05 * tuned.history[e - 1].mean_loss);
        }
    }

    TEST_CASE("training is deterministic for a fixed seed") {
        SeededRng data_rng(4);
        const DenseMatrix data = blob_data(120, 8, data_rng);
        AutoencoderConfig cfg;
        cfg.pretrain_epochs = 3;
        cfg.finetune_epochs = 3;
        cfg.batch_size = 16;
        const std::vector<std::size_t> shape{8, 6, 2};
        SeededRng a(21), b(21);
        const auto ra = pretrain_layerwise(data, shape, cfg, a);
        const auto rb = pretrain_layerwise(data, shape, cfg, b);
        CHECK(ra.encoder == rb.encoder);
        CHECK(ra.decoder == rb.decoder);
        const auto fa = finetune(ra.encoder, ra.decoder, data, cfg, a);
        const auto fb = finetune(rb.encoder, rb.decoder, data, cfg, b);
        CHECK(fa.encoder == fb.encoder);
    }

    TEST_CASE("representation layer is linear and may go negative") {
        SeededRng rng(30);
        const std::vector<std::size_t> shape{4, 6, 3};
        auto [enc, dec] = init_autoencoder(shape, rng);
        bool saw_negative = false;
        for (int i = 0; i < 50 && !saw_negative; ++i) {
            std::vector<double> x(4);
            for (double& v : x) v = rng.uniform(0.0, 1.0);
            for (double y : encode(enc, x)) saw_negative = saw_negative || y < 0.0;
        }
        CHECK(saw_negative);
    }
}
