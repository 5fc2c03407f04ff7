#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <optional>
#include <string>
#include <vector>

#include "vfg/checkpoint.hpp"
#include "vfg/cli.hpp"
#include "vfg/data.hpp"
#include "vfg/error.hpp"
#include "vfg/infer.hpp"
#include "vfg/objective.hpp"
#include "vfg/train.hpp"

namespace py = pybind11;
using namespace vfg;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
  if (a.ndim() == 1) return Tensor::vector(std::vector<double>(a.data(), a.data() + a.size()));
  if (a.ndim() != 2) throw UsageError("expected a 1-d or 2-d array, got " + std::to_string(a.ndim()) + "-d");
  return Tensor::matrix(static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1)),
                        std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_array(const Tensor& t) {
  std::vector<py::ssize_t> shape;
  for (std::size_t d : t.shape()) shape.push_back(static_cast<py::ssize_t>(d));
  Array out(shape);
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

py::dict breakdown_dict(const ElboBreakdown& b) {
  py::dict d;
  d["elbo"] = b.total;
  d["recon"] = b.recon;
  d["beta"] = b.beta;
  d["kl_sum"] = b.kl_sum();
  d["node_kls"] = b.node_kls;
  d["root_kls"] = b.root_kls;
  return d;
}

std::vector<std::size_t> labels_of(const std::optional<std::vector<std::size_t>>& labels) {
  return labels.value_or(std::vector<std::size_t>{});
}

py::tuple table_tuple(const Table& t) { return py::make_tuple(t.columns, to_array(t.values)); }

}  // namespace

PYBIND11_MODULE(_vfg, m) {
  m.doc() = "Variational flow graphical models";

  py::register_exception<UsageError>(m, "UsageError", PyExc_ValueError);
  py::register_exception<DataError>(m, "DataError", PyExc_ValueError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);

  py::class_<Model>(m, "Model")
      .def_property_readonly("graph_json", [](const Model& self) { return serialize_graph_spec(self.graph); })
      .def_property_readonly("leaf_ids",
                             [](const Model& self) {
                               std::vector<std::string> ids;
                               for (std::size_t l : self.graph.leaves()) ids.push_back(self.graph.node(l).id);
                               return ids;
                             })
      .def_property_readonly("data_dim", [](const Model& self) { return self.graph.data_dim(); })
      .def_property_readonly("num_parameters", [](const Model& self) {
        std::size_t n = 0;
        for (const Tensor* p : self.parameters()) n += p->size();
        return n;
      });

  m.def(
      "init_model",
      [](const std::string& graph_json, std::uint64_t seed, const std::string& init, double clamp,
         const std::string& prior, std::size_t num_classes, const std::string& recon) {
        ModelConfig cfg;
        if (init == "random") {
          cfg.init = InitMode::Random;
        } else if (init != "near_identity") {
          throw UsageError("unknown init '" + init + "'");
        }
        cfg.clamp = clamp;
        cfg.prior = parse_prior_family(prior);
        cfg.num_classes = num_classes;
        cfg.recon = parse_recon_mode(recon);
        return init_model(parse_graph_spec(graph_json), cfg, seed);
      },
      py::arg("graph_json"), py::arg("seed") = 0, py::arg("init") = "near_identity", py::arg("clamp") = kDefaultClamp,
      py::arg("prior") = "gaussian", py::arg("num_classes") = 0, py::arg("recon") = "gaussian");

  m.def(
      "train",
      [](const Model& model, const Array& x, std::optional<std::vector<std::size_t>> labels, std::size_t steps,
         std::size_t batch_size, double lr, double beta, std::size_t mask_every, double mask_fraction,
         std::uint64_t seed, double grad_clip) {
        TrainConfig cfg;
        cfg.steps = steps;
        cfg.batch_size = batch_size;
        cfg.learning_rate = lr;
        cfg.beta = beta;
        cfg.mask_every = mask_every;
        cfg.mask_fraction = mask_fraction;
        cfg.seed = seed;
        cfg.grad_clip = grad_clip;
        cfg.recon_mode = model.recon_mode;
        const Dataset data{to_tensor(x), labels_of(labels)};
        TrainResult r = [&] {
          py::gil_scoped_release release;
          return train(model, data, cfg);
        }();
        py::list history;
        for (const StepRecord& s : r.history.records) {
          py::dict d;
          d["step"] = s.step;
          d["elbo"] = s.elbo;
          d["recon"] = s.recon;
          d["kl_sum"] = s.kl_sum;
          d["grad_norm"] = s.grad_norm;
          d["masked"] = s.masked;
          history.append(d);
        }
        return py::make_tuple(std::move(r.model), history);
      },
      py::arg("model"), py::arg("x"), py::arg("labels") = py::none(), py::arg("steps") = 2000,
      py::arg("batch_size") = 128, py::arg("lr") = 1e-3, py::arg("beta") = kDefaultBeta, py::arg("mask_every") = 5,
      py::arg("mask_fraction") = 0.5, py::arg("seed") = 0, py::arg("grad_clip") = 100.0);

  m.def(
      "elbo",
      [](const Model& model, const Array& x, std::optional<std::vector<std::size_t>> labels, double beta) {
        return breakdown_dict(evaluate_dataset(model, Dataset{to_tensor(x), labels_of(labels)}, beta));
      },
      py::arg("model"), py::arg("x"), py::arg("labels") = py::none(), py::arg("beta") = kDefaultBeta);

  m.def(
      "impute",
      [](const Model& model, const Array& x, const std::vector<std::size_t>& observe) {
        return to_array(impute(model, to_tensor(x), observed_from_sections(model.graph, observe)));
      },
      py::arg("model"), py::arg("x"), py::arg("observe"), "observe holds 1-based section positions");

  m.def(
      "sample",
      [](const Model& model, std::size_t count, std::uint64_t seed, std::optional<std::size_t> label) {
        return to_array(sample(model, count, seed, label));
      },
      py::arg("model"), py::arg("count"), py::arg("seed") = 0, py::arg("label") = py::none());

  m.def(
      "encode",
      [](const Model& model, const Array& x) {
        py::dict out;
        for (const auto& [id, t] : encode(model, to_tensor(x))) out[py::str(id)] = to_array(t);
        return out;
      },
      py::arg("model"), py::arg("x"));

  m.def(
      "nll_estimate",
      [](const Model& model, const Array& x, std::size_t k, double proposal_std, std::uint64_t seed,
         std::optional<std::size_t> label) {
        const NllEstimate e = nll_estimate(model, to_tensor(x), k, proposal_std, seed, label);
        py::dict d;
        d["nll"] = e.nll;
        d["std_error"] = e.std_error;
        d["ess"] = e.ess;
        d["degenerate"] = e.degenerate;
        return d;
      },
      py::arg("model"), py::arg("x"), py::arg("k") = 1000, py::arg("proposal_std") = kDefaultProposalStd,
      py::arg("seed") = 0, py::arg("label") = py::none());

  m.def(
      "save_checkpoint", [](const Model& model, const std::filesystem::path& path) { save_checkpoint({model}, path); },
      py::arg("model"), py::arg("path"));
  m.def(
      "load_checkpoint", [](const std::filesystem::path& path) { return load_checkpoint(path).model; },
      py::arg("path"));

  m.def(
      "gen_sine", [](std::size_t count, std::uint64_t seed) { return table_tuple(gen_sine(count, seed)); },
      py::arg("count"), py::arg("seed") = 0, "Returns (columns, values).");
  m.def(
      "gen_scm",
      [](std::size_t count, std::uint64_t seed, int blocks) {
        const ScmData d = gen_scm(count, seed, ScmSpec::default_spec(), blocks);
        return py::make_tuple(d.table.columns, to_array(d.table.values), serialize_graph_spec(d.graph));
      },
      py::arg("count"), py::arg("seed") = 0, py::arg("blocks") = kDefaultBlocks,
      "Returns (columns, values, graph_json) for the default causal model; the graph expects duplicated columns.");

  m.def(
      "run_cli",
      [](std::vector<std::string> args) {
        args.insert(args.begin(), "vfg");
        std::vector<const char*> argv;
        for (const auto& a : args) argv.push_back(a.c_str());
        return cli::run(static_cast<int>(argv.size()), argv.data());
      },
      py::arg("args"), "Runs the command-line tool in-process and returns its exit code.");
}
