#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "longdoc/attention.hpp"
#include "longdoc/data.hpp"
#include "longdoc/errors.hpp"
#include "longdoc/memory.hpp"
#include "longdoc/model.hpp"
#include "longdoc/ops.hpp"
#include "longdoc/tensor.hpp"
#include "longdoc/trainer.hpp"

namespace py = pybind11;
using namespace longdoc;

namespace {

Tensor tensor_from_nested(const Shape& shape, const std::vector<double>& values,
                          bool requires_grad) {
  return Tensor::from_data(shape, values, requires_grad);
}

SchemeSpec make_spec(const std::string& scheme, int layers, int seg_len, int mem_len,
                     int segments) {
  return SchemeSpec{scheme_from_string(scheme), layers, seg_len, mem_len, segments};
}

}  // namespace

PYBIND11_MODULE(_longdoc, m) {
  m.doc() = "segment-recurrence transformer workbench core";

  py::register_exception<ValidationError>(m, "ValidationError", PyExc_ValueError);

  py::class_<Tensor>(m, "Tensor")
      .def(py::init(&tensor_from_nested), py::arg("shape"), py::arg("values"),
           py::arg("requires_grad") = false)
      .def_property_readonly("shape", [](const Tensor& t) { return t.shape; })
      .def_property_readonly("requires_grad", [](const Tensor& t) { return t.requires_grad; })
      .def("values", [](const Tensor& t) { return *t.data; })
      .def("grad", [](const Tensor& t) {
        return t.grad ? *t.grad : std::vector<double>(t.numel(), 0.0);
      })
      .def("backward", &Tensor::backward)
      .def("item", &Tensor::item);

  m.def("matmul", &ops::matmul);
  m.def("add", &ops::add);
  m.def("softmax_lastdim", &ops::softmax_lastdim);
  m.def("layer_norm", &ops::layer_norm, py::arg("x"), py::arg("gain"), py::arg("bias"),
        py::arg("eps") = 1e-12);
  m.def("gelu", &ops::gelu);
  m.def("stop_gradient", &ops::stop_gradient);
  m.def("concat_len", &ops::concat_len);
  m.def("sum_all", &ops::sum_all);
  m.def("cross_entropy", &ops::cross_entropy, py::arg("logits"), py::arg("targets"),
        py::arg("ignore_index") = -1);

  m.def("retro_index_set", &retro_index_set, py::arg("segments"), py::arg("layers"));
  m.def(
      "max_dependency",
      [](const std::string& scheme, int layers, int seg_len, int mem_len, int segments) {
        return max_dependency(make_spec(scheme, layers, seg_len, mem_len, segments));
      },
      py::arg("scheme"), py::arg("layers"), py::arg("seg_len"), py::arg("mem_len"),
      py::arg("segments"));
  m.def(
      "reachability_oracle",
      [](const std::string& scheme, int layers, int seg_len, int mem_len, int segments) {
        return reachability_oracle(make_spec(scheme, layers, seg_len, mem_len, segments));
      },
      py::arg("scheme"), py::arg("layers"), py::arg("seg_len"), py::arg("mem_len"),
      py::arg("segments"));
  m.def("attention_calcs", &attention_calcs, py::arg("doc_len"), py::arg("mem_len"),
        py::arg("window"));
  m.def("local_attention_calcs", &local_attention_calcs, py::arg("doc_len"), py::arg("window"));

  m.def("k_classes", &k_classes, py::arg("max_chunks"));
  m.def("encode_label", &encode_label, py::arg("k"), py::arg("perm"));
  m.def("decode_label", &decode_label, py::arg("label"), py::arg("max_chunks"));

  m.def(
      "lr_at",
      [](std::int64_t step, double peak_lr, std::int64_t warmup, std::int64_t total) {
        return lr_at(step, ScheduleSpec{peak_lr, warmup, total});
      },
      py::arg("step"), py::arg("peak_lr"), py::arg("warmup_steps"), py::arg("total_steps"));

  m.def(
      "tiny_forward_demo",
      [](const std::string& scheme, int segments, std::uint64_t seed) {
        ModelConfig cfg;
        cfg.layers = 2;
        cfg.d_model = 16;
        cfg.n_heads = 2;
        cfg.d_ff = 24;
        cfg.vocab_size = 32;
        cfg.seg_len = 8;
        cfg.mem_len = 8;
        cfg.scheme = scheme_from_string(scheme);
        cfg.mode = TaskMode::kAr;
        cfg.dropout = 0.0;
        Rng rng(seed);
        Model model = Model::init(cfg, rng);
        std::vector<TokenId> ids;
        for (int i = 0; i < segments * cfg.seg_len; ++i) {
          ids.push_back(static_cast<TokenId>(kNumReserved + rng.randint(0, 20)));
        }
        DocumentStream doc = segment_document(ids, cfg.seg_len, false);
        std::vector<ModelOutput> outs = forward_document(model, doc, false, false, nullptr);
        std::vector<std::vector<double>> logits;
        for (const ModelOutput& o : outs) logits.push_back(*o.logits.data);
        return logits;
      },
      py::arg("scheme"), py::arg("segments") = 3, py::arg("seed") = 0,
      "Run a fresh tiny AR model over a random document; returns per-segment logits.");
}
