#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "deepgmm/data_io.hpp"
#include "deepgmm/joint.hpp"
#include "deepgmm/metrics.hpp"
#include "deepgmm/pipeline.hpp"

namespace py = pybind11;
using namespace deepgmm;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;
using LabelArray = py::array_t<std::int64_t, py::array::c_style | py::array::forcecast>;

DenseMatrix to_matrix(const Array& a) {
    if (a.ndim() == 1) {
        const auto cols = std::size_t(a.shape(0));
        return DenseMatrix(1, cols, std::vector<double>(a.data(), a.data() + cols));
    }
    if (a.ndim() != 2) throw std::invalid_argument("expected a 1-D or 2-D array");
    const auto rows = std::size_t(a.shape(0)), cols = std::size_t(a.shape(1));
    return DenseMatrix(rows, cols, std::vector<double>(a.data(), a.data() + rows * cols));
}

Array to_array(const DenseMatrix& m) {
    Array out({py::ssize_t(m.rows()), py::ssize_t(m.cols())});
    std::copy(m.values().begin(), m.values().end(), out.mutable_data());
    return out;
}

Array to_array(const std::vector<double>& v) {
    Array out(py::ssize_t(v.size()));
    std::copy(v.begin(), v.end(), out.mutable_data());
    return out;
}

std::vector<double> to_vector(const Array& a) {
    if (a.ndim() != 1) throw std::invalid_argument("expected a 1-D array");
    return {a.data(), a.data() + a.shape(0)};
}

Partition to_partition(const LabelArray& a) {
    if (a.ndim() != 1) throw std::invalid_argument("labels must be a 1-D array");
    std::vector<std::size_t> labels(a.shape(0));
    for (py::ssize_t i = 0; i < a.shape(0); ++i) {
        if (a.data()[i] < 0) throw std::invalid_argument("labels must be non-negative");
        labels[i] = std::size_t(a.data()[i]);
    }
    return Partition::from_labels(std::move(labels));
}

LabelArray to_labels(const std::vector<std::size_t>& v) {
    LabelArray out(py::ssize_t(v.size()));
    for (std::size_t i = 0; i < v.size(); ++i) out.mutable_data()[i] = std::int64_t(v[i]);
    return out;
}

RunConfig make_config(const py::dict& options) {
    ConfigMap map;
    for (const auto& [key, value] : options) {
        const auto k = py::str(key).cast<std::string>();
        if (py::isinstance<py::list>(value) || py::isinstance<py::tuple>(value)) {
            std::string joined;
            for (const auto& item : value) joined += (joined.empty() ? "" : ",") + py::str(item).cast<std::string>();
            map[k] = joined;
        } else if (py::isinstance<py::bool_>(value)) {
            map[k] = value.cast<bool>() ? "true" : "false";
        } else {
            map[k] = py::str(value).cast<std::string>();
        }
    }
    return apply_overrides(RunConfig{}, map);
}

py::dict epoch_dict(const EpochStats& e) {
    py::dict d;
    d["epoch"] = e.epoch;
    d["objective"] = e.mean_objective;
    d["loglik"] = e.mean_loglik;
    d["separability"] = e.separability;
    d["learning_rate"] = e.learning_rate;
    return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Deep Gaussian mixture clustering: mixture model, metrics and pipeline commands";

    py::register_exception<FormatError>(m, "FormatError", PyExc_ValueError);
    py::register_exception<CheckpointError>(m, "CheckpointError", PyExc_ValueError);

    py::class_<GmmParams>(m, "Gmm")
        .def(py::init([](const Array& weights, const Array& means, const Array& sigmas) {
                 auto p = GmmParams::from_moments(to_vector(weights), to_matrix(means), to_matrix(sigmas));
                 validate(p);
                 return p;
             }),
             py::arg("weights"), py::arg("means"), py::arg("sigmas"))
        .def_property_readonly("components", &GmmParams::components)
        .def_property_readonly("dim", &GmmParams::dim)
        .def_property_readonly("weights", [](const GmmParams& p) { return to_array(p.weights()); })
        .def_property_readonly("means", [](const GmmParams& p) { return to_array(p.means); })
        .def_property_readonly("sigmas",
                               [](const GmmParams& p) {
                                   DenseMatrix s(p.components(), p.dim());
                                   for (std::size_t k = 0; k < p.components(); ++k)
                                       for (std::size_t d = 0; d < p.dim(); ++d) s(k, d) = p.sigma(k, d);
                                   return to_array(s);
                               })
        .def("log_density",
             [](const GmmParams& p, const Array& ys) {
                 const auto x = to_matrix(ys);
                 std::vector<double> out(x.rows());
                 for (std::size_t i = 0; i < x.rows(); ++i) out[i] = log_mixture_density(p, x.row(i));
                 return to_array(out);
             })
        .def("log_likelihood", [](const GmmParams& p, const Array& ys) { return log_likelihood(p, to_matrix(ys)); })
        .def("responsibilities",
             [](const GmmParams& p, const Array& ys) { return to_array(responsibilities(p, to_matrix(ys)).values); })
        .def("__eq__", [](const GmmParams& a, const GmmParams& b) { return a == b; });

    m.def(
        "kmeans_init",
        [](const Array& ys, std::size_t clusters, std::uint64_t seed) {
            SeededRng rng(seed);
            return kmeans_init(to_matrix(ys), clusters, rng);
        },
        py::arg("ys"), py::arg("clusters"), py::arg("seed") = 1);

    m.def(
        "em_fit",
        [](const Array& ys, const GmmParams& init, std::size_t max_iters, double tol, std::uint64_t seed) {
            SeededRng rng(seed);
            auto r = em_fit(to_matrix(ys), init, {max_iters, tol}, rng);
            return py::make_tuple(r.params, r.loglik_trace);
        },
        py::arg("ys"), py::arg("init"), py::arg("max_iters") = 200, py::arg("tol") = 1e-6, py::arg("seed") = 1,
        "Returns (fitted Gmm, log-likelihood trace).");

    m.def(
        "separability",
        [](const GmmParams& p, double neighbor_fraction) {
            JointConfig c;
            c.neighbor_fraction = neighbor_fraction;
            return separability(p, neighbor_sets(p, c));
        },
        py::arg("gmm"), py::arg("neighbor_fraction") = 0.5);

    m.def(
        "gradients",
        [](const GmmParams& p, const Array& y, double eta, double neighbor_fraction) {
            JointConfig c;
            c.eta = eta;
            c.neighbor_fraction = neighbor_fraction;
            const auto nbrs = neighbor_sets(p, c);
            const auto v = to_vector(y);
            py::dict d;
            d["y"] = to_array(grad_representation(p, v));
            d["means"] = to_array(grad_means(p, v, nbrs, c));
            d["log_sigmas"] = to_array(grad_log_sigmas(p, v));
            d["weight_logits"] = to_array(grad_weight_logits(p, v));
            d["objective"] = objective(p, v, nbrs, c);
            return d;
        },
        py::arg("gmm"), py::arg("y"), py::arg("eta") = 0.01, py::arg("neighbor_fraction") = 0.5,
        "Gradients of the per-sample joint objective with respect to y and the mixture parameters.");

    m.def(
        "synth_gmm",
        [](std::size_t clusters, std::size_t dim, std::size_t n, double separation, std::uint64_t seed) {
            SeededRng rng(seed);
            auto s = synth_gmm(clusters, dim, n, separation, rng);
            std::vector<std::size_t> labels;
            for (int l : *s.data.labels) labels.push_back(std::size_t(l));
            return py::make_tuple(to_array(s.data.samples), to_labels(labels), s.truth);
        },
        py::arg("clusters"), py::arg("dim"), py::arg("n"), py::arg("separation"), py::arg("seed") = 1,
        "Returns (samples, labels, generating Gmm).");

    m.def("accuracy", [](const LabelArray& pred, const LabelArray& truth) {
        return clustering_accuracy(to_partition(pred), to_partition(truth));
    });
    m.def("nmi", [](const LabelArray& pred, const LabelArray& truth) { return nmi(to_partition(pred), to_partition(truth)); });
    m.def("ch_score", [](const Array& ys, const LabelArray& labels) { return ch_score(to_matrix(ys), to_partition(labels)); });

    // Pipeline commands take a dict of config keys, the same keys the CLI accepts with --set.
    m.def("config", [](const py::dict& options) { return to_map(make_config(options)); }, py::arg("options") = py::dict());
    m.def("synth", [](const py::dict& o) { return cmd_synth(make_config(o)); });
    m.def("pretrain", [](const py::dict& o) {
        const auto s = cmd_pretrain(make_config(o));
        py::dict d;
        d["initial_loss"] = s.initial_loss;
        d["final_loss"] = s.final_loss;
        return d;
    });
    m.def("init_gmm", [](const py::dict& o) {
        const auto s = cmd_init_gmm(make_config(o));
        py::dict d;
        d["kmeans_loglik"] = s.kmeans_loglik;
        d["em_loglik"] = s.em_loglik;
        d["trace"] = s.trace;
        d["gmm"] = s.gmm;
        return d;
    });
    m.def(
        "train",
        [](const py::dict& o, std::optional<std::size_t> stop_after) {
            const auto s = cmd_train(make_config(o), stop_after);
            py::list history;
            history.append(epoch_dict(s.initial));
            for (const auto& e : s.history) history.append(epoch_dict(e));
            return history;
        },
        py::arg("options"), py::arg("stop_after") = py::none(),
        "Runs joint training; returns per-epoch stats starting with the pre-training state.");
    m.def("evaluate", [](const py::dict& o) {
        const auto r = cmd_eval(make_config(o));
        py::dict d;
        if (r.acc) d["acc"] = *r.acc;
        if (r.nmi) d["nmi"] = *r.nmi;
        d["ch"] = r.ch;
        return d;
    });
    m.def(
        "embed", [](const py::dict& o, const std::string& file) { return cmd_embed(make_config(o), file); },
        py::arg("options"), py::arg("file") = "embedding.csv");

    m.def(
        "encode",
        [](const std::filesystem::path& checkpoint, const Array& xs) {
            const auto ckpt = load_checkpoint(checkpoint);
            return to_array(encode_rows(ckpt.encoder, to_matrix(xs)));
        },
        py::arg("checkpoint"), py::arg("xs"));
    m.def(
        "assign",
        [](const std::filesystem::path& checkpoint, const Array& xs) {
            const auto ckpt = load_checkpoint(checkpoint);
            if (!ckpt.gmm) throw CheckpointError("checkpoint has no mixture; run init-gmm first");
            return to_labels(assign(ckpt.encoder, *ckpt.gmm, to_matrix(xs)));
        },
        py::arg("checkpoint"), py::arg("xs"));
}
