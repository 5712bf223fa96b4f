#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "fsl/aggregation.hpp"
#include "fsl/cli.hpp"
#include "fsl/config.hpp"
#include "fsl/diagnostics.hpp"
#include "fsl/errors.hpp"
#include "fsl/report.hpp"
#include "fsl/sim.hpp"

namespace py = pybind11;

namespace {

fsl::Matrix to_matrix(const std::vector<std::vector<double>>& rows) {
  fsl::Matrix m(rows.size(), rows.empty() ? 0 : rows[0].size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != m.cols) throw fsl::InputError("ragged rows");
    std::copy(rows[i].begin(), rows[i].end(), m.row(i).begin());
  }
  return m;
}

std::vector<std::vector<double>> from_matrix(const fsl::Matrix& m) {
  std::vector<std::vector<double>> out(m.rows);
  for (std::size_t i = 0; i < m.rows; ++i) out[i].assign(m.row(i).begin(), m.row(i).end());
  return out;
}

// Plain vectors as single-layer updates, for the coordinate-wise rules.
std::vector<fsl::WorkerUpdate> as_updates(const std::vector<std::vector<double>>& vectors) {
  if (vectors.empty()) throw fsl::InputError("no vectors");
  fsl::Layer layer;
  layer.in = 0;  // the whole vector lives in the bias
  layer.out = vectors[0].size();
  layer.bias.assign(layer.out, 0.0);
  const fsl::ParameterSet shape({layer});
  std::vector<fsl::WorkerUpdate> out;
  for (std::size_t k = 0; k < vectors.size(); ++k) {
    out.push_back({k, fsl::ParameterSet::unflatten(shape, vectors[k]), 1});
  }
  return out;
}

py::dict summary_dict(const fsl::ExperimentSummary& s) {
  py::dict d;
  d["window"] = s.window;
  d["test_error"] = s.test_error;
  d["all_acc"] = s.all_acc;
  d["src_acc"] = s.src_acc;
  d["asr"] = s.asr;
  d["agg_wall_time_s"] = s.agg_wall_time_s;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Federated learning poisoning-defense lab";

  py::register_exception<fsl::ConfigError>(m, "ConfigError");
  py::register_exception<fsl::InputError>(m, "InputError", PyExc_ValueError);
  py::register_exception<fsl::NumericError>(m, "NumericError", PyExc_ArithmeticError);
  py::register_exception<fsl::ParseError>(m, "ParseError");
  py::register_exception<fsl::IoError>(m, "IoError", PyExc_OSError);

  m.def("cosine_similarity_matrix",
        [](const std::vector<std::vector<double>>& grads) { return from_matrix(fsl::cosine_similarity_matrix(grads)); },
        py::arg("grads"));

  m.def(
      "pca2",
      [](const std::vector<std::vector<double>>& rows) {
        const auto f = fsl::pca2(to_matrix(rows));
        return py::make_tuple(from_matrix(f.components), f.variances);
      },
      py::arg("rows"), "Top-2 principal component scores and variances.");

  m.def(
      "engineered_features",
      [](const std::vector<std::vector<double>>& grads) {
        const auto f = fsl::engineered_features(grads);
        return py::make_tuple(from_matrix(f.components), f.centroid);
      },
      py::arg("last_layer_grads"));

  m.def("quantile_type7", &fsl::quantile_type7, py::arg("values"), py::arg("q"));

  m.def(
      "trust_from_history",
      [](const std::vector<double>& history) {
        fsl::TrustState s(history.size());
        s.history = history;
        s.ever_selected.assign(history.size(), true);
        std::vector<std::size_t> all(history.size());
        std::iota(all.begin(), all.end(), 0);
        fsl::trust_from_history(all, s);
        return py::make_tuple(s.gamma, s.last_fallback);
      },
      py::arg("history"), "Normalized trust from accumulated scores; returns (gamma, fallback).");

  m.def(
      "coordinate_median",
      [](const std::vector<std::vector<double>>& v) { return fsl::coordinate_median(as_updates(v)).flatten(); },
      py::arg("vectors"));
  m.def(
      "trimmed_mean",
      [](const std::vector<std::vector<double>>& v, double beta) {
        return fsl::trimmed_mean(as_updates(v), beta).flatten();
      },
      py::arg("vectors"), py::arg("beta") = 0.2);
  m.def(
      "multi_krum",
      [](const std::vector<std::vector<double>>& v, std::optional<std::size_t> f,
         std::optional<std::size_t> n_select) {
        const auto r = fsl::multi_krum(as_updates(v), f, n_select);
        return py::make_tuple(r.params.flatten(), r.scores, r.selected);
      },
      py::arg("vectors"), py::arg("f") = py::none(), py::arg("n_select") = py::none());
  m.def("foolsgold", [](const std::vector<std::vector<double>>& h) { return fsl::foolsgold(h); },
        py::arg("histories"));

  m.def(
      "feature_report",
      [](const std::string& mode, const std::vector<std::vector<double>>& grads,
         std::optional<std::set<std::size_t>> attackers) {
        std::vector<std::size_t> ids(grads.size());
        std::iota(ids.begin(), ids.end(), 0);
        const auto r = fsl::analyze_gradients(fsl::parse_feature_mode(mode), grads, ids, attackers);
        py::list rows;
        for (const auto& w : r.workers) rows.append(py::make_tuple(w.worker_id, w.is_attacker, w.magnitude, w.angle_deg));
        return py::make_tuple(rows, r.separation_margin);
      },
      py::arg("mode"), py::arg("grads"), py::arg("attackers") = py::none(),
      "Per-worker (id, is_attacker, magnitude, angle_deg) rows and the separation margin.");

  m.def(
      "run_config",
      [](const std::filesystem::path& path, std::optional<std::uint64_t> seed, std::optional<std::size_t> threads) {
        auto rc = fsl::parse_config(path);
        if (seed) rc.experiment.seed = *seed;
        fsl::RunOptions opts;
        opts.threads = threads;
        fsl::ExperimentResult result;
        {
          py::gil_scoped_release release;
          result = fsl::run_experiment(rc.experiment, opts);
        }
        py::list rounds;
        for (const auto& r : result.rounds) {
          py::dict d;
          d["round"] = r.round;
          d["test_error"] = r.test_error;
          d["all_acc"] = r.all_acc;
          d["src_acc"] = r.src_acc;
          d["asr"] = r.asr;
          d["gamma"] = r.gamma;
          d["agg_wall_time_s"] = r.agg_wall_time_s;
          rounds.append(d);
        }
        return py::make_tuple(rounds, summary_dict(result.summary));
      },
      py::arg("path"), py::arg("seed") = py::none(), py::arg("threads") = py::none(),
      "Runs an experiment config; returns (per-round dicts, summary dict).");

  m.def("config_reference", &fsl::config_reference);
  m.def("format_number", &fsl::format_number);
  m.def(
      "cli",
      [](const std::vector<std::string>& args) { return fsl::cli_main(args); }, py::arg("args"),
      "Runs the command-line interface in-process; returns the exit code.");
}
