// Python bindings for the core operations: functional ops on numpy arrays,
// the metrics suite, the LR schedule, and the synthetic dataset generator.
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "hct/gradcheck.hpp"
#include "hct/train.hpp"

namespace py = pybind11;
using namespace hct;

namespace {

using Arr = py::array_t<double, py::array::c_style | py::array::forcecast>;

Var to_var(const Arr& a) {
    Shape shape(a.ndim());
    for (py::ssize_t i = 0; i < a.ndim(); ++i) shape[size_t(i)] = a.shape(i);
    std::vector<double> data(a.data(), a.data() + a.size());
    return make_tensor(std::move(shape), std::move(data));
}

py::array_t<double> from_var(const Var& v) {
    std::vector<py::ssize_t> shape(v->shape.begin(), v->shape.end());
    py::array_t<double> out(shape);
    std::copy(v->data.begin(), v->data.end(), out.mutable_data());
    return out;
}

GenerateOptions make_options(int64_t n_clips, uint64_t taxonomy_seed, uint64_t data_seed,
                             double noise, double test_fraction, int64_t clips_per_video) {
    GenerateOptions opt;
    opt.n_clips = n_clips;
    opt.taxonomy_seed = taxonomy_seed;
    opt.data_seed = data_seed;
    opt.noise = noise;
    opt.test_fraction = test_fraction;
    opt.clips_per_video = clips_per_video;
    return opt;
}

} // namespace

PYBIND11_MODULE(_hct, m) {
    m.doc() = "Hierarchical context transformer core operations";

    py::register_exception<ConfigError>(m, "ConfigError");
    py::register_exception<DataError>(m, "DataError");
    py::register_exception<NumericError>(m, "NumericError");
    py::register_exception<UsageError>(m, "UsageError");

    // --- functional ops -------------------------------------------------
    m.def("softmax", [](const Arr& x) { return from_var(ops::softmax_rows(to_var(x))); },
          py::arg("x"), "Softmax over the last dimension.");
    m.def("gelu", [](const Arr& x) { return from_var(ops::gelu(to_var(x))); }, py::arg("x"),
          "GELU (tanh approximation).");
    m.def("layer_norm",
          [](const Arr& x, const Arr& gamma, const Arr& beta) {
              return from_var(ops::layer_norm_rows(to_var(x), to_var(gamma), to_var(beta)));
          },
          py::arg("x"), py::arg("gamma"), py::arg("beta"),
          "Layer normalization over the last dimension.");
    m.def("pool_st",
          [](const Arr& x, int64_t st, int64_t sh, int64_t sw) {
              return from_var(ops::pool_st(to_var(x), st, sh, sw));
          },
          py::arg("x"), py::arg("st"), py::arg("sh"), py::arg("sw"),
          "Average pooling on [T,H,W,C] with window == stride (ceil shapes).");
    m.def("patchify",
          [](const Arr& x, int64_t pt, int64_t ph, int64_t pw) {
              return from_var(ops::patchify(to_var(x), pt, ph, pw));
          },
          py::arg("x"), py::arg("pt"), py::arg("ph"), py::arg("pw"),
          "Non-overlapping space-time patch extraction of [T,H,W,C].");
    m.def("scaled_attention",
          [](const Arr& q, const Arr& k, const Arr& v, int64_t heads) {
              return from_var(scaled_attention(to_var(q), to_var(k), to_var(v), heads));
          },
          py::arg("q"), py::arg("k"), py::arg("v"), py::arg("heads") = 1,
          "Multi-head softmax(q k^T / sqrt(d)) v on [Lq,C] / [Lk,C] inputs.");
    m.def("icl_pair_loss",
          [](const Arr& a, const Arr& b, double tau) {
              return icl_pair_loss(to_var(a), to_var(b), tau)->data[0];
          },
          py::arg("a"), py::arg("b"), py::arg("tau") = 0.07,
          "Symmetric InfoNCE over batch-aligned rows (sum reduction).");

    // --- schedule -------------------------------------------------------
    m.def("cosine_warmup_lr", &cosine_warmup_lr, py::arg("base_lr"), py::arg("step"),
          py::arg("warmup_steps"), py::arg("max_steps"),
          "Linear warmup followed by a half-cosine decay to zero.");

    // --- metrics --------------------------------------------------------
    m.def("accuracy", &accuracy, py::arg("pred"), py::arg("label"));
    m.def("balanced_accuracy", &balanced_accuracy, py::arg("pred"), py::arg("label"),
          py::arg("n_classes"));
    m.def("average_precision", &average_precision, py::arg("scores"), py::arg("targets"));
    m.def("map_classification", &map_classification, py::arg("scores"), py::arg("targets"));
    m.def("multilabel_recall", &multilabel_recall, py::arg("scores"), py::arg("targets"),
          py::arg("threshold") = 0.5);
    m.def("iou",
          [](const std::array<double, 4>& a, const std::array<double, 4>& b) {
              return iou({a[0], a[1], a[2], a[3], 0, 0.0}, {b[0], b[1], b[2], b[3], 0, 0.0});
          },
          py::arg("a"), py::arg("b"), "IoU of two (x1, y1, x2, y2) boxes.");

    // --- synthetic data -------------------------------------------------
    m.def("generate_dataset",
          [](const std::string& path, int64_t n_clips, uint64_t taxonomy_seed, uint64_t data_seed,
             double noise, double test_fraction, int64_t clips_per_video) {
              auto ds = generate_dataset(make_options(n_clips, taxonomy_seed, data_seed, noise,
                                                      test_fraction, clips_per_video));
              write_dataset(ds, path);
              return int64_t(ds.samples.size());
          },
          py::arg("path"), py::arg("n_clips") = 640, py::arg("taxonomy_seed") = 7,
          py::arg("data_seed") = 11, py::arg("noise") = 0.1, py::arg("test_fraction") = 0.2,
          py::arg("clips_per_video") = 8,
          "Generate a synthetic dataset, write the .hctd container plus its JSON "
          "manifest sidecar, and return the number of clips.");
    m.def("dataset_summary",
          [](const std::string& path) {
              auto ds = read_dataset(path);
              py::dict d;
              d["n_clips"] = ds.samples.size();
              d["n_train_videos"] = ds.manifest.train_videos.size();
              d["n_test_videos"] = ds.manifest.test_videos.size();
              d["phases"] = ds.taxonomy.sizes.phases;
              d["steps"] = ds.taxonomy.sizes.steps;
              d["actions"] = ds.taxonomy.sizes.actions;
              d["instruments"] = ds.taxonomy.sizes.instruments;
              return d;
          },
          py::arg("path"), "Read an .hctd container and summarize it.");

    // --- verification ---------------------------------------------------
    m.def("gradcheck", [](uint64_t seed) { return gradcheck_run(seed, true); },
          py::arg("seed") = 3,
          "Finite-difference check of the end-to-end model gradient; returns "
          "the max relative error.");
}
