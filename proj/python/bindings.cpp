#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <cstring>

#include "powerskel/ckdformer.hpp"
#include "powerskel/cli.hpp"
#include "powerskel/dataset_io.hpp"
#include "powerskel/distill.hpp"
#include "powerskel/error.hpp"
#include "powerskel/eval.hpp"
#include "powerskel/netsim.hpp"
#include "powerskel/saf.hpp"
#include "powerskel/synth.hpp"
#include "powerskel/train.hpp"

namespace py = pybind11;
using namespace powerskel;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

/// (N, e, f) CSI stack and (N, 34) labels.
py::dict DatasetToDict(const Dataset &data) {
  const auto n = static_cast<py::ssize_t>(data.samples.size());
  const py::ssize_t e = data.topology.e(), f = data.topology.f();
  Array csi({n, e, f});
  Array labels({n, static_cast<py::ssize_t>(kLabelDim)});
  py::array_t<std::int64_t> timestamps(n);
  auto c = csi.mutable_unchecked<3>();
  auto l = labels.mutable_unchecked<2>();
  auto t = timestamps.mutable_unchecked<1>();
  for (py::ssize_t i = 0; i < n; ++i) {
    const auto &s = data.samples[static_cast<std::size_t>(i)];
    for (py::ssize_t r = 0; r < e; ++r)
      for (py::ssize_t k = 0; k < f; ++k) c(i, r, k) = s.csi.values(r, k);
    for (py::ssize_t j = 0; j < kLabelDim; ++j) l(i, j) = s.label[j];
    t(i) = s.csi.timestamp_ms;
  }
  py::dict out;
  out["csi"] = csi;
  out["labels"] = labels;
  out["timestamps_ms"] = timestamps;
  out["sensors"] = data.topology.sensor_ids();
  out["split"] = std::string(ToString(data.split));
  return out;
}

std::vector<CsiFrame> FramesFromArray(const Array &csi) {
  if (csi.ndim() != 3) throw Error(ErrorKind::kShape, "csi must have shape (n, e, f)");
  auto c = csi.unchecked<3>();
  std::vector<CsiFrame> frames(static_cast<std::size_t>(c.shape(0)));
  for (py::ssize_t i = 0; i < c.shape(0); ++i) {
    auto &fr = frames[static_cast<std::size_t>(i)];
    fr.timestamp_ms = i;
    fr.sequence_no = static_cast<std::uint32_t>(i);
    fr.values.resize(c.shape(1), c.shape(2));
    for (py::ssize_t r = 0; r < c.shape(1); ++r)
      for (py::ssize_t k = 0; k < c.shape(2); ++k) fr.values(r, k) = c(i, r, k);
  }
  return frames;
}

int SensorsForPaths(py::ssize_t e) {
  for (int m = 2; m * (m - 1) <= e; ++m)
    if (m * (m - 1) == e) return m;
  throw Error(ErrorKind::kInvalidTopology, "row count is not m(m-1)");
}

std::vector<SkeletonFrame> Skeletons(const Matrix &labels) {
  std::vector<SkeletonFrame> out;
  for (Eigen::Index i = 0; i < labels.rows(); ++i) out.push_back(SkeletonFromLabel(labels.row(i).transpose()));
  return out;
}

netsim::DeviceId DeviceFrom(const py::object &o) {
  if (py::isinstance<py::str>(o)) return netsim::ParseDeviceId(o.cast<std::string>());
  const auto raw = o.cast<std::string>();
  if (raw.size() != 6) throw Error(ErrorKind::kEncode, "device id must be 6 bytes");
  netsim::DeviceId id;
  std::memcpy(id.data(), raw.data(), 6);
  return id;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "PowerSkel core: SAF, Sinkhorn distillation, CKDformer inference, PCK and the CSI wire format.";

  static py::exception<Error> error(m, "Error", PyExc_RuntimeError);
  static py::exception<DecodeError> decode_error(m, "DecodeError", error.ptr());
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const DecodeError &e) {
      py::set_error(decode_error, e.what());
    } catch (const Error &e) {
      py::set_error(error, e.what());
    }
  });

  // ---- SAF
  m.def("build_dictionary", &saf::BuildDictionary, py::arg("d"));
  m.def(
      "sparse_representation",
      [](const Matrix &A, const Vector &d, const std::string &solver, double ridge_lambda) {
        saf::SAFConfig c;
        c.solver = saf::ParseSolver(solver);
        c.ridge_lambda = ridge_lambda;
        return saf::SparseRepresentation(A, d, c);
      },
      py::arg("A"), py::arg("d"), py::arg("solver") = "minimum-norm", py::arg("ridge_lambda") = 0.0);
  m.def("saf_gradient", &saf::Gradient, py::arg("A"), py::arg("h"), py::arg("d"));
  m.def("reconstruct", &saf::Reconstruct, py::arg("A"), py::arg("s"));
  m.def(
      "saf_filter",
      [](const Array &csi, double mu, bool shared_dictionary) {
        const auto frames = FramesFromArray(csi);
        const auto topo = SensingTopology::WithSyntheticIds(SensorsForPaths(csi.shape(1)),
                                                            static_cast<int>(csi.shape(2)));
        saf::SAFConfig c;
        c.mu = mu;
        c.shared_dictionary_from_first_sample = shared_dictionary;
        const auto r = saf::Run(frames, topo, c);
        Array out({csi.shape(0), csi.shape(1), csi.shape(2)});
        auto o = out.mutable_unchecked<3>();
        for (py::ssize_t i = 0; i < csi.shape(0); ++i) {
          const Matrix x = Unflatten(r.reconstructions[static_cast<std::size_t>(i)], topo.e(), topo.f());
          for (py::ssize_t row = 0; row < csi.shape(1); ++row)
            for (py::ssize_t k = 0; k < csi.shape(2); ++k) o(i, row, k) = x(row, k);
        }
        return out;
      },
      py::arg("csi"), py::arg("mu") = 500.0, py::arg("shared_dictionary") = false,
      "Filter an (n, e, f) CSI stack in order; returns the reconstructions.");

  // ---- distillation
  m.def(
      "sinkhorn",
      [](const Vector &output, const Vector &target, double epsilon, int niter, double thresh) {
        const distill::SinkhornConfig c{.epsilon = epsilon, .t = static_cast<int>(output.size()),
                                        .niter = niter, .thresh = thresh};
        const auto r = distill::SinkhornLoss(output, target, c);
        py::dict out;
        out["loss"] = r.loss;
        out["plan"] = r.plan;
        out["iterations"] = r.iterations;
        out["converged"] = r.converged;
        out["gradient"] = distill::SinkhornGradient(r, output, target);
        return out;
      },
      py::arg("output"), py::arg("target"), py::arg("epsilon") = 0.01, py::arg("niter") = 100,
      py::arg("thresh") = 1e-6);

  // ---- metrics
  m.def(
      "pck",
      [](const Matrix &preds, const Matrix &gts, std::vector<double> alphas) {
        eval::PCKConfig c;
        c.alphas = std::move(alphas);
        std::vector<Vector> p;
        for (Eigen::Index i = 0; i < preds.rows(); ++i) p.push_back(preds.row(i).transpose());
        const auto t = eval::Pck(p, Skeletons(gts), c);
        py::dict out;
        out["alphas"] = t.alphas;
        out["values"] = t.values;
        out["average"] = t.average;
        out["evaluated"] = t.evaluated;
        out["report"] = eval::Report(t);
        return out;
      },
      py::arg("preds"), py::arg("gts"), py::arg("alphas") = std::vector<double>{0.1, 0.2, 0.3, 0.4, 0.5},
      "PCK in percent for (n, 34) pixel predictions against (n, 34) ground truth.");

  // ---- wire format
  m.def(
      "encode_frame",
      [](const py::object &tx, const py::object &rx, std::uint32_t seq, std::uint64_t ts,
         const std::vector<float> &payload) {
        netsim::WireFrame w{DeviceFrom(tx), DeviceFrom(rx), seq, ts,
                            static_cast<std::uint16_t>(payload.size()), payload};
        const auto bytes = netsim::EncodeFrame(w);
        return py::bytes(reinterpret_cast<const char *>(bytes.data()), bytes.size());
      },
      py::arg("tx"), py::arg("rx"), py::arg("sequence_no"), py::arg("timestamp_ms"), py::arg("payload"));
  m.def(
      "decode_frame",
      [](const py::bytes &data) {
        const std::string raw = data;
        const auto w = netsim::DecodeFrame(
            {reinterpret_cast<const std::uint8_t *>(raw.data()), raw.size()});
        py::dict out;
        out["tx"] = netsim::FormatDeviceId(w.tx);
        out["rx"] = netsim::FormatDeviceId(w.rx);
        out["sequence_no"] = w.sequence_no;
        out["timestamp_ms"] = w.timestamp_ms;
        out["payload"] = w.payload;
        return out;
      },
      py::arg("data"));

  // ---- data
  m.def(
      "generate",
      [](std::uint64_t seed, std::size_t n_train, std::size_t n_test, int sensors, int subcarriers,
         double noise, int drift) {
        synth::GeneratorConfig g;
        g.seed = seed;
        g.n_train = n_train;
        g.n_test = n_test;
        g.topology = SensingTopology::WithSyntheticIds(sensors, subcarriers);
        g.noise_sigma = noise;
        g.subcarrier_drift = drift;
        const auto [train, test] = synth::GenerateDataset(g);
        return py::make_tuple(DatasetToDict(train), DatasetToDict(test));
      },
      py::arg("seed") = 7, py::arg("n_train") = 512, py::arg("n_test") = 128, py::arg("sensors") = 4,
      py::arg("subcarriers") = 16, py::arg("noise") = 0.02, py::arg("drift") = 2);
  m.def(
      "read_split",
      [](const std::filesystem::path &dir, const std::string &split) {
        return DatasetToDict(ReadSplit(dir, ParseSplit(split)));
      },
      py::arg("dir"), py::arg("split") = "test");

  // ---- model
  py::class_<ckd::CKDformerParams>(m, "Model")
      .def_static("load", &train::LoadCheckpoint, py::arg("path"))
      .def("save", [](const ckd::CKDformerParams &p, const std::filesystem::path &path) {
        train::SaveCheckpoint(path, p);
      })
      .def_property_readonly("students", &ckd::CKDformerParams::students)
      .def_property_readonly("shared_backbone", [](const ckd::CKDformerParams &p) {
        return p.config.shared_backbone;
      })
      .def_property_readonly("use_saf", [](const ckd::CKDformerParams &p) { return p.use_saf; })
      .def_property_readonly("parameter_count", [](const ckd::CKDformerParams &p) {
        return ckd::ParameterCount(p);
      })
      .def(
          "predict",
          [](const ckd::CKDformerParams &p, const Matrix &csi, int student) {
            return ckd::Predict(Flatten(csi), p, student);
          },
          py::arg("csi"), py::arg("student") = -1,
          "Pixel keypoints (34,) for one (e, f) CSI matrix; student -1 averages all heads.");

  m.def(
      "run_cli",
      [](std::vector<std::string> args) {
        args.insert(args.begin(), "powerskel");
        py::gil_scoped_release release;
        return cli::Run(args);
      },
      py::arg("args"), "Run a powerskel subcommand; returns the exit code.");
}
