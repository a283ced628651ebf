#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <memory>

#include "pretext/contrastive.hpp"
#include "pretext/features.hpp"
#include "pretext/image.hpp"
#include "pretext/supervisors.hpp"
#include "pretext/tensor.hpp"

namespace py = pybind11;
using namespace pretext;

namespace {

DType parse_dtype(const std::string& name) {
    if (name == "f32") return DType::f32;
    if (name == "f64") return DType::f64;
    throw std::invalid_argument("dtype must be 'f32' or 'f64'");
}

std::vector<double> to_list(const Tensor& t) {
    return {t.data().begin(), t.data().end()};
}

// Tape plus its activation scope, usable as a python context manager.
struct PyTape {
    Tape tape;
    std::unique_ptr<TapeScope> scope;

    void enter() { scope = std::make_unique<TapeScope>(tape); }
    void exit() { scope.reset(); }
    void run_backward(const Tensor& loss) { tape.backward_from(loss); }
};

sup::TrainConfig train_config_from_kwargs(const py::kwargs& kwargs) {
    sup::TrainConfig cfg;
    if (kwargs.contains("lr")) cfg.lr = kwargs["lr"].cast<double>();
    if (kwargs.contains("epochs")) cfg.epochs = kwargs["epochs"].cast<int>();
    if (kwargs.contains("batch_size")) cfg.batch_size = kwargs["batch_size"].cast<int>();
    if (kwargs.contains("shuffle")) cfg.shuffle = kwargs["shuffle"].cast<bool>();
    if (kwargs.contains("num_workers")) cfg.num_workers = kwargs["num_workers"].cast<int>();
    if (kwargs.contains("name")) cfg.name = kwargs["name"].cast<std::string>();
    if (kwargs.contains("pretrained")) cfg.pretrained = kwargs["pretrained"].cast<bool>();
    if (kwargs.contains("optimizer"))
        cfg.optimizer = kwargs["optimizer"].cast<std::string>() == "sgd"
                            ? sup::OptimizerKind::sgd
                            : sup::OptimizerKind::adam;
    return cfg;
}

py::dict report_to_dict(const sup::TrainReport& report) {
    py::dict out;
    out["epochs_completed"] = report.epochs_completed;
    out["interrupted"] = report.interrupted;
    out["wall_seconds"] = report.wall_seconds;
    py::list epochs;
    for (const auto& e : report.epoch_losses) {
        py::dict d;
        for (const auto& [k, v] : e) d[py::str(k)] = v;
        epochs.append(d);
    }
    out["epoch_losses"] = epochs;
    py::list steps;
    for (const auto& s : report.step_losses) {
        py::dict d;
        for (const auto& [k, v] : s) d[py::str(k)] = v;
        steps.append(d);
    }
    out["step_losses"] = steps;
    return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "desk-scale self-supervised pretext-task training";

    py::class_<Tensor>(m, "Tensor")
        .def(py::init([](const std::vector<double>& data, const Shape& shape,
                         const std::string& dtype, bool requires_grad) {
                 Shape s = shape.empty() ? Shape{static_cast<int64_t>(data.size())} : shape;
                 auto t = Tensor::from_data(s, data, parse_dtype(dtype));
                 t.set_requires_grad(requires_grad);
                 return t;
             }),
             py::arg("data"), py::arg("shape") = Shape{}, py::arg("dtype") = "f32",
             py::arg("requires_grad") = false)
        .def_property_readonly("shape", [](const Tensor& t) { return t.shape(); })
        .def_property_readonly("dtype", [](const Tensor& t) {
            return t.dtype() == DType::f64 ? "f64" : "f32";
        })
        .def_property("requires_grad", &Tensor::requires_grad,
                      [](Tensor& t, bool v) { t.set_requires_grad(v); })
        .def("numel", &Tensor::numel)
        .def("item", &Tensor::item)
        .def("tolist", &to_list)
        .def("grad", [](const Tensor& t) -> py::object {
            if (!t.has_grad()) return py::none();
            return py::cast(std::vector<double>(t.grad().begin(), t.grad().end()));
        })
        .def("zero_grad", &Tensor::zero_grad)
        .def("detach", &Tensor::detach)
        .def("clone", &Tensor::clone)
        .def("__repr__", [](const Tensor& t) {
            std::string s = "Tensor(shape=[";
            for (size_t i = 0; i < t.shape().size(); ++i)
                s += (i ? "," : "") + std::to_string(t.shape()[i]);
            return s + "], dtype=" + (t.dtype() == DType::f64 ? "f64" : "f32") + ")";
        });

    m.def("zeros", [](const Shape& s, const std::string& d) {
        return Tensor::zeros(s, parse_dtype(d));
    }, py::arg("shape"), py::arg("dtype") = "f32");
    m.def("ones", [](const Shape& s, const std::string& d) {
        return Tensor::ones(s, parse_dtype(d));
    }, py::arg("shape"), py::arg("dtype") = "f32");
    m.def("full", [](const Shape& s, double v, const std::string& d) {
        return Tensor::full(s, v, parse_dtype(d));
    }, py::arg("shape"), py::arg("value"), py::arg("dtype") = "f32");
    m.def("uniform", [](const Shape& s, double lo, double hi, uint64_t seed,
                        const std::string& d) {
        return Tensor::uniform(s, lo, hi, seed, parse_dtype(d));
    }, py::arg("shape"), py::arg("lo"), py::arg("hi"), py::arg("seed"),
       py::arg("dtype") = "f32");
    m.def("normal", [](const Shape& s, double mu, double sigma, uint64_t seed,
                       const std::string& d) {
        return Tensor::normal(s, mu, sigma, seed, parse_dtype(d));
    }, py::arg("shape"), py::arg("mu"), py::arg("sigma"), py::arg("seed"),
       py::arg("dtype") = "f32");

    m.def("add", &pretext::add);
    m.def("sub", &pretext::sub);
    m.def("mul", &pretext::mul);
    m.def("div", &pretext::div);
    m.def("matmul", &matmul);
    m.def("conv2d", &conv2d, py::arg("input"), py::arg("weight"), py::arg("bias"),
          py::arg("stride") = 1, py::arg("pad") = 0);
    m.def("conv2d_transpose", &conv2d_transpose, py::arg("input"), py::arg("weight"),
          py::arg("bias"), py::arg("stride") = 1, py::arg("pad") = 0);
    m.def("relu", &relu);
    m.def("sigmoid", &sigmoid);
    m.def("tanh", [](const Tensor& t) { return pretext::tanh(t); });
    m.def("exp", [](const Tensor& t) { return pretext::exp(t); });
    m.def("log", [](const Tensor& t) { return pretext::log(t); });
    m.def("softmax", &softmax, py::arg("x"), py::arg("axis") = -1);
    m.def("log_softmax", &log_softmax, py::arg("x"), py::arg("axis") = -1);
    m.def("l2_normalize", &l2_normalize, py::arg("x"), py::arg("axis") = -1,
          py::arg("eps") = 1e-12);
    m.def("reduce_sum", [](const Tensor& x, const std::vector<int>& axes, bool keepdims) {
        return reduce_sum(x, axes, keepdims);
    }, py::arg("x"), py::arg("axes") = std::vector<int>{}, py::arg("keepdims") = false);
    m.def("reduce_mean", [](const Tensor& x, const std::vector<int>& axes, bool keepdims) {
        return reduce_mean(x, axes, keepdims);
    }, py::arg("x"), py::arg("axes") = std::vector<int>{}, py::arg("keepdims") = false);
    m.def("sum_all", &sum_all);
    m.def("mean_all", &mean_all);
    m.def("reshape", &reshape);
    m.def("concat", &concat, py::arg("parts"), py::arg("axis") = 0);
    m.def("cross_entropy", [](const Tensor& logits, const std::vector<int64_t>& targets) {
        return cross_entropy(logits, targets);
    });
    m.def("mse_loss", &mse_loss);
    m.def("bce_with_logits", &bce_with_logits);

    py::class_<PyTape>(m, "tape")
        .def(py::init<>())
        .def("__enter__", [](PyTape& t) -> PyTape& {
            t.enter();
            return t;
        })
        .def("__exit__", [](PyTape& t, py::object, py::object, py::object) {
            t.exit();
            return false;
        })
        .def("backward", &PyTape::run_backward);

    m.def("grad_check", [](const std::function<Tensor(const Tensor&)>& f, Tensor x,
                           double eps) { return grad_check(f, std::move(x), eps); },
          py::arg("f"), py::arg("x"), py::arg("eps") = 1e-5);

    // contrastive primitives
    m.def("cosine_sim", [](const Tensor& a, const Tensor& b) {
        return contrastive::cosine_sim(a, b);
    });
    m.def("info_nce", [](const Tensor& q, const Tensor& pos, py::object negs, double tau) {
        Tensor n;
        if (!negs.is_none()) n = negs.cast<Tensor>();
        return contrastive::info_nce(q, pos, n, tau);
    }, py::arg("q"), py::arg("k_pos"), py::arg("k_negs") = py::none(),
       py::arg("temperature") = 0.07);
    m.def("byol_loss", &contrastive::byol_loss);

    m.def("build_permutation_set", [](int n, int count, uint64_t seed) {
        auto table = img::build_permutation_set(n, count, seed);
        py::dict out;
        out["perms"] = table.perms;
        out["min_pairwise_hamming"] = table.min_pairwise_hamming;
        return out;
    }, py::arg("n") = 9, py::arg("count") = 24, py::arg("seed") = 0);

    m.def("task_names", [] { return sup::task_names(); });

    // high-level lifecycle: train / extract / probe on the synthetic dataset
    // or a .ppm directory
    m.def("train", [](const std::string& task, int synth, int size, uint64_t seed,
                      const std::string& data_dir, const py::kwargs& kwargs) {
        data::Dataset ds;
        if (!data_dir.empty()) {
            ds = data::dataset_from_dir(data_dir, size);
        } else {
            data::SyntheticSpec spec;
            spec.n_per_class = synth;
            spec.size = size;
            spec.seed = seed;
            ds = data::synth_dataset(spec);
        }
        auto cfg = sup::default_task_config(task);
        cfg.seed = seed;
        if (kwargs.contains("feature_dim")) cfg.feature_dim = kwargs["feature_dim"].cast<int>();
        if (kwargs.contains("widths")) cfg.widths = kwargs["widths"].cast<std::vector<int>>();
        if (kwargs.contains("perm_count")) cfg.perm_count = kwargs["perm_count"].cast<int>();
        if (kwargs.contains("embed_dim")) cfg.embed_dim = kwargs["embed_dim"].cast<int>();
        auto supervisor = sup::make_supervisor_for(task, ds, cfg);
        auto report = supervisor->supervise(ds, train_config_from_kwargs(kwargs));
        return report_to_dict(report);
    }, py::arg("task"), py::arg("synth") = 16, py::arg("size") = 32, py::arg("seed") = 0,
       py::arg("data") = "");

    m.def("extract_features", [](const std::string& checkpoint, int synth, int size,
                                 uint64_t seed, const std::string& data_dir) {
        auto metadata = nn::read_checkpoint_metadata(checkpoint);
        auto supervisor = sup::load_supervisor(metadata.value("task", ""), checkpoint);
        data::Dataset ds;
        if (!data_dir.empty()) {
            ds = data::dataset_from_dir(data_dir, supervisor->config().resolution);
        } else {
            data::SyntheticSpec spec;
            spec.n_per_class = synth;
            spec.size = supervisor->config().resolution;
            spec.seed = seed;
            ds = data::synth_dataset(spec);
        }
        auto backbone = supervisor->get_backbone();
        auto feats = features::extract_features(backbone, ds);
        py::dict out;
        out["features"] = to_list(feats);
        out["n"] = feats.dim(0);
        out["dim"] = feats.dim(1);
        out["labels"] = ds.labels;
        return out;
    }, py::arg("checkpoint"), py::arg("synth") = 16, py::arg("size") = 32,
       py::arg("seed") = 0, py::arg("data") = "");

    m.def("linear_probe", [](const std::vector<double>& rows, int64_t n, int64_t dim,
                             const std::vector<int>& labels, int epochs, double lr,
                             uint64_t seed) {
        auto feats = Tensor::from_data({n, dim}, rows);
        features::ProbeConfig cfg;
        cfg.epochs = epochs;
        cfg.lr = lr;
        cfg.seed = seed;
        auto result = features::linear_probe(feats, labels, cfg);
        py::dict out;
        out["train_accuracy"] = result.train_accuracy;
        out["val_accuracy"] = result.val_accuracy;
        out["classes"] = result.classes;
        return out;
    }, py::arg("features"), py::arg("n"), py::arg("dim"), py::arg("labels"),
       py::arg("epochs") = 200, py::arg("lr") = 1e-2, py::arg("seed") = 0);
}
