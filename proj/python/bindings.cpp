#include "onlinehoi/errors.hpp"
#include "onlinehoi/harness.hpp"
#include "onlinehoi/memory.hpp"
#include "onlinehoi/metrics.hpp"
#include "onlinehoi/ssm.hpp"

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

namespace py = pybind11;
using namespace onlinehoi;
using harness::json;

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

ssm::SSMParameters make_params(const Eigen::MatrixXd& A, const Eigen::VectorXd& B, const Eigen::RowVectorXd& C,
                               std::vector<double> delta) {
  ssm::SSMParameters p{A, B, C, std::move(delta)};
  p.validate();
  return p;
}

harness::RunConfig config_from(const std::string& text) {
  const json j = json::parse(text, nullptr, false);
  if (j.is_discarded()) throw ConfigError("config is not valid JSON");
  return harness::parse_config(j);
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Compiled core of the onlinehoi package";
  m.attr("__version__") = ONLINEHOI_VERSION;

  auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<InvalidParameter>(m, "InvalidParameter", PyExc_ValueError);
  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<InvalidState>(m, "InvalidState", base.ptr());
  py::register_exception<IndexError>(m, "IndexError", PyExc_IndexError);
  py::register_exception<NumericalError>(m, "NumericalError", PyExc_ArithmeticError);

  m.def(
      "discretize",
      [](const Eigen::MatrixXd& A, const Eigen::VectorXd& B, double delta) {
        auto d = ssm::discretize(A, B, delta);
        return py::make_tuple(d.A_bar, d.B_bar);
      },
      py::arg("A"), py::arg("B"), py::arg("delta"), "Zero-order-hold discretization; returns (A_bar, B_bar).");

  m.def(
      "ssm_scan",
      [](const std::vector<double>& xs, const Eigen::MatrixXd& A, const Eigen::VectorXd& B, const Eigen::RowVectorXd& C,
         std::vector<double> delta, bool literal) {
        return ssm::ssm_scan(xs, make_params(A, B, C, std::move(delta)), {}, {.eq1_literal = literal}).ys;
      },
      py::arg("xs"), py::arg("A"), py::arg("B"), py::arg("C"), py::arg("delta"), py::arg("literal") = false,
      "Sequential recurrence from the zero state. `delta` holds one timescale or one per step.");

  m.def(
      "ssm_kernel",
      [](const Eigen::MatrixXd& A, const Eigen::VectorXd& B, const Eigen::RowVectorXd& C, double delta, std::size_t length) {
        return ssm::make_kernel(make_params(A, B, C, {delta}), length).kbar;
      },
      py::arg("A"), py::arg("B"), py::arg("C"), py::arg("delta"), py::arg("length"));

  m.def(
      "ssm_kernel_apply",
      [](const std::vector<double>& xs, std::vector<double> kbar) {
        return ssm::ssm_kernel_apply(xs, ssm::KernelForm{std::move(kbar)});
      },
      py::arg("xs"), py::arg("kbar"));

  py::class_<memory::ShortTermMemory>(m, "ShortTermMemory")
      .def(py::init<int>(), py::arg("capacity"))
      .def(
          "push",
          [](memory::ShortTermMemory& ms, const Eigen::VectorXd& frame) -> std::optional<Eigen::VectorXd> {
            auto evicted = ms.push(frame);
            if (!evicted) return std::nullopt;
            return evicted->value;
          },
          py::arg("frame"), "Returns the evicted frame, or None while the buffer is being initialized.")
      .def("buffer",
           [](const memory::ShortTermMemory& ms) {
             RowMat out(static_cast<Eigen::Index>(ms.size()), ms.empty() ? 0 : ms.buffer().front().value.size());
             for (std::size_t i = 0; i < ms.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = ms.buffer()[i].value.transpose();
             return out;
           })
      .def_property_readonly("capacity", &memory::ShortTermMemory::capacity)
      .def("__len__", &memory::ShortTermMemory::size);

  m.def(
      "ml_consolidate",
      [](const RowMat& frames, int capacity) {
        memory::LongTermMemory ml({.capacity = capacity});
        std::vector<memory::MemorySlot> slots;
        for (Eigen::Index i = 0; i < frames.rows(); ++i) slots.push_back({frames.row(i).transpose()});
        ml.assign(std::move(slots));
        ml.consolidate();
        RowMat values(static_cast<Eigen::Index>(ml.size()), frames.cols());
        std::vector<std::int64_t> counts;
        for (std::size_t i = 0; i < ml.size(); ++i) {
          values.row(static_cast<Eigen::Index>(i)) = ml.buffer()[i].value.transpose();
          counts.push_back(ml.buffer()[i].count);
        }
        return py::make_tuple(values, counts);
      },
      py::arg("frames"), py::arg("capacity"),
      "Merges adjacent rows of highest similarity until `capacity` remain; returns (values, counts).");

  py::class_<diffusion::DiffusionSchedule>(m, "DiffusionSchedule")
      .def_readonly("alphas", &diffusion::DiffusionSchedule::alphas)
      .def_readonly("alpha_bars", &diffusion::DiffusionSchedule::alpha_bars)
      .def_property_readonly("steps", &diffusion::DiffusionSchedule::steps)
      .def("alpha_bar", &diffusion::DiffusionSchedule::alpha_bar, py::arg("t"));

  m.def(
      "make_schedule",
      [](int steps, const std::string& kind) { return diffusion::make_schedule(steps, diffusion::parse_schedule_kind(kind)); },
      py::arg("steps"), py::arg("kind") = "cosine");
  m.def("q_sample", &diffusion::q_sample, py::arg("x0"), py::arg("t"), py::arg("noise"), py::arg("schedule"));
  m.def("q_step", &diffusion::q_step, py::arg("x_prev"), py::arg("t"), py::arg("noise"), py::arg("schedule"));

  m.def(
      "fid", [](const RowMat& a, const RowMat& b) { return metrics::fid({a, "features"}, {b, "features"}); }, py::arg("a"),
      py::arg("b"));
  m.def(
      "div",
      [](const RowMat& a, int pairs, std::uint64_t seed, const std::string& mode) {
        return metrics::div({a, "features"}, pairs, seed, metrics::parse_div_mode(mode));
      },
      py::arg("features"), py::arg("pairs"), py::arg("seed") = 0, py::arg("mode") = "pairs");
  m.def("framewise_acc", &metrics::framewise_acc, py::arg("pred"), py::arg("gt"));
  m.def("edit_score", &metrics::edit_score, py::arg("pred"), py::arg("gt"), py::arg("background") = std::vector<int>{});
  m.def("f1_at_k", &metrics::f1_at_k, py::arg("pred"), py::arg("gt"), py::arg("tau"),
        py::arg("background") = std::vector<int>{});

  m.def(
      "parse_config", [](const std::string& text) { return harness::to_json(config_from(text)).dump(); }, py::arg("config"),
      "Validates a run config (JSON text) and returns it in canonical form.");
  m.def(
      "config_hash", [](const std::string& text) { return harness::config_hash(config_from(text)); }, py::arg("config"));
  m.def(
      "train",
      [](const std::string& text, std::uint64_t seed, const std::string& dir, const std::string& resume) {
        const auto r = harness::train(config_from(text), seed, dir, {.resume = resume});
        return std::tuple{r.losses, r.checkpoint.string(), r.parameter_count};
      },
      py::arg("config"), py::arg("seed"), py::arg("dir"), py::arg("resume") = "", py::call_guard<py::gil_scoped_release>(),
      "Returns (losses, checkpoint path, parameter count).");
  m.def(
      "evaluate",
      [](const std::string& text, std::uint64_t seed, const std::string& checkpoint) {
        return harness::evaluate(config_from(text), seed, checkpoint).dump();
      },
      py::arg("config"), py::arg("seed"), py::arg("checkpoint"), py::call_guard<py::gil_scoped_release>());
  m.def(
      "evaluate_ground_truth", [](const std::string& text) { return harness::evaluate_ground_truth(config_from(text)).dump(); },
      py::arg("config"), py::call_guard<py::gil_scoped_release>());
  m.def(
      "datagen", [](const std::string& text, const std::string& dir) { harness::datagen(config_from(text), dir); },
      py::arg("config"), py::arg("dir"), py::call_guard<py::gil_scoped_release>());
}
