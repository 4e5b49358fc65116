#include <sstream>

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "spectraprobe/bundle_io.hpp"
#include "spectraprobe/cli.hpp"
#include "spectraprobe/error.hpp"
#include "spectraprobe/graph_builder.hpp"
#include "spectraprobe/scores.hpp"
#include "spectraprobe/spectral.hpp"
#include "spectraprobe/stats.hpp"

namespace py = pybind11;
namespace sp = spectraprobe;

namespace {

sp::LaplacianSpec make_spec(const std::string& kind, double theta) {
  sp::LaplacianSpec s;
  s.kind = sp::laplacian_kind_from_string(kind);
  s.theta = theta;
  return s;
}

sp::HferCutoff make_cutoff(std::optional<int> k, std::optional<double> c) {
  if (k && c) throw sp::UsageError("give hfer_k or hfer_c, not both");
  if (k) return sp::HferCutoff::at_index(*k);
  return sp::HferCutoff::energy_mass(c.value_or(0.2));
}

py::dict diagnostics_dict(const sp::LayerDiagnostics& d) {
  py::dict out;
  out["energy"] = d.energy;
  out["spectral_entropy"] = d.spectral_entropy;
  out["hfer"] = d.hfer;
  out["fiedler"] = d.fiedler;
  out["cutoff_index"] = d.cutoff_index;
  out["nodes"] = d.nodes;
  return out;
}

sp::StatsConfig stats_config(int boot, int perm, std::uint64_t seed, double confidence) {
  sp::StatsConfig c;
  c.bootstrap_resamples = boot;
  c.permutation_shuffles = perm;
  c.seed = seed;
  c.confidence = confidence;
  c.validate();
  return c;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Spectral diagnostics of attention-induced token graphs";

  py::register_exception<sp::DataError>(m, "DataError", PyExc_ValueError);
  py::register_exception<sp::NumericalError>(m, "NumericalError", PyExc_ArithmeticError);
  py::register_exception<sp::UsageError>(m, "UsageError", PyExc_ValueError);
  py::register_exception<sp::IoError>(m, "IoError", PyExc_OSError);

  m.def(
      "laplacian",
      [](const Eigen::MatrixXd& w, const std::string& kind, double theta) {
        return sp::build_laplacian(w, make_spec(kind, theta)).op;
      },
      py::arg("weights"), py::arg("kind") = "combinatorial", py::arg("theta") = 0.2,
      "Real symmetric operator of a weighted graph (2n x 2n embedding for 'magnetic').");

  m.def(
      "fiedler",
      [](const Eigen::MatrixXd& w, const std::string& kind, double theta) {
        return sp::smallest_eigenpair_2(sp::build_laplacian(w, make_spec(kind, theta))).value;
      },
      py::arg("weights"), py::arg("kind") = "combinatorial", py::arg("theta") = 0.2);

  m.def(
      "eigenvalues",
      [](const Eigen::MatrixXd& w, const std::string& kind, double theta) -> Eigen::VectorXd {
        return sp::full_spectrum(sp::build_laplacian(w, make_spec(kind, theta))).values;
      },
      py::arg("weights"), py::arg("kind") = "combinatorial", py::arg("theta") = 0.2);

  m.def(
      "dirichlet_energy",
      [](const Eigen::MatrixXd& w, const Eigen::MatrixXd& x, const std::string& kind) {
        return sp::dirichlet_energy(sp::build_laplacian(w, make_spec(kind, 0.2)), x);
      },
      py::arg("weights"), py::arg("signal"), py::arg("kind") = "combinatorial");

  m.def(
      "diagnostics",
      [](const Eigen::MatrixXd& w, const Eigen::MatrixXd& x, const std::string& kind, double theta,
         std::optional<int> hfer_k, std::optional<double> hfer_c) {
        const auto g = sp::build_laplacian(w, make_spec(kind, theta));
        return diagnostics_dict(sp::layer_diagnostics(g, x, make_cutoff(hfer_k, hfer_c)));
      },
      py::arg("weights"), py::arg("signal"), py::arg("kind") = "random_walk", py::arg("theta") = 0.2,
      py::arg("hfer_k") = py::none(), py::arg("hfer_c") = py::none(),
      "Energy, spectral entropy, HFER and Fiedler value of one layer graph.");

  m.def(
      "bootstrap_ci",
      [](const std::vector<double>& values, int resamples, std::uint64_t seed, double confidence) {
        const auto ci = sp::bootstrap_ci(values, stats_config(resamples, 10000, seed, confidence));
        return py::make_tuple(ci.lo, ci.hi);
      },
      py::arg("values"), py::arg("resamples") = 2000, py::arg("seed") = 0, py::arg("confidence") = 0.95);

  m.def(
      "permutation_test",
      [](const std::vector<double>& deltas, int shuffles, std::uint64_t seed) {
        return sp::paired_permutation_test(deltas, shuffles, seed);
      },
      py::arg("deltas"), py::arg("shuffles") = 10000, py::arg("seed") = 0);

  m.def(
      "bh_fdr",
      [](const std::vector<double>& p, double q) {
        const auto r = sp::bh_fdr(p, q);
        return py::make_tuple(r.reject, r.q_values);
      },
      py::arg("p_values"), py::arg("q") = 0.05, "Returns (reject, q_values) in input order.");

  m.def(
      "trimmed_hedges_g",
      [](const std::vector<double>& d, double winsor, double trim) { return sp::trimmed_hedges_g(d, winsor, trim); },
      py::arg("deltas"), py::arg("winsor") = 0.01, py::arg("trim") = 0.20);

  m.def("delta_sym", &sp::delta_sym, py::arg("mean_b"), py::arg("mean_a"), py::arg("epsilon") = 1e-6);

  m.def(
      "correlations",
      [](const std::vector<double>& x, const std::vector<double>& y, int resamples, std::uint64_t seed) {
        const auto c = sp::correlations(x, y, stats_config(resamples, 10000, seed, 0.95));
        py::dict out;
        out["pearson"] = c.pearson;
        out["spearman"] = c.spearman;
        out["pearson_ci"] = py::make_tuple(c.pearson_ci.lo, c.pearson_ci.hi);
        out["n"] = c.n;
        return out;
      },
      py::arg("x"), py::arg("y"), py::arg("resamples") = 2000, py::arg("seed") = 0);

  m.def(
      "rci",
      [](double z_energy, double z_entropy, double z_hfer, double z_fiedler) {
        return sp::rci({z_energy, z_entropy, z_hfer, z_fiedler});
      },
      py::arg("z_energy"), py::arg("z_entropy"), py::arg("z_hfer"), py::arg("z_fiedler"));

  m.def(
      "shd_calibrate",
      [](const std::vector<double>& reference, std::optional<double> tau) {
        const auto c = sp::shd_calibrate(reference, tau);
        return py::make_tuple(c.mu_fid, c.sigma_fid, c.tau_d);
      },
      py::arg("reference"), py::arg("tau") = py::none(), "Returns (mu_fid, sigma_fid, tau_d).");

  m.def(
      "shd_detect",
      [](double f_last, double mu, double sigma, double tau) {
        sp::ShdCalibration c;
        c.mu_fid = mu;
        c.sigma_fid = sigma;
        c.tau_d = tau;
        return sp::shd_detect(f_last, c);
      },
      py::arg("f_last"), py::arg("mu_fid"), py::arg("sigma_fid"), py::arg("tau_d"));

  m.def(
      "read_tensor",
      [](const std::string& path) {
        auto t = sp::read_tensor_file(path);
        std::vector<py::ssize_t> shape(t.dims.begin(), t.dims.end());
        py::array_t<float> out(shape);
        std::copy(t.data.begin(), t.data.end(), out.mutable_data());
        return out;
      },
      py::arg("path"));

  m.def(
      "write_tensor",
      [](const std::string& path, py::array_t<float, py::array::c_style | py::array::forcecast> array) {
        sp::Tensor t;
        for (py::ssize_t i = 0; i < array.ndim(); ++i) t.dims.push_back(static_cast<std::uint64_t>(array.shape(i)));
        t.data.assign(array.data(), array.data() + array.size());
        sp::write_tensor_file(path, t);
      },
      py::arg("path"), py::arg("array"), "Writes a float32 tensor file in the bundle format.");

  m.def(
      "validate_bundle",
      [](const std::string& dir) {
        std::vector<py::dict> out;
        for (const auto& v : sp::validate_bundle(dir)) {
          py::dict d;
          d["item"] = v.item;
          d["layer"] = v.layer ? py::cast(*v.layer) : py::none();
          d["rule"] = v.rule;
          d["detail"] = v.detail;
          out.push_back(std::move(d));
        }
        return out;
      },
      py::arg("bundle_dir"), "List of violations; empty for a valid bundle.");

  m.def(
      "run_cli",
      [](const std::vector<std::string>& args) {
        std::ostringstream out;
        std::ostringstream err;
        int code = 0;
        {
          py::gil_scoped_release release;
          code = sp::run_cli(args, out, err);
        }
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Runs the command-line interface in-process. Returns (exit_code, stdout, stderr).");

  m.attr("__version__") = "0.1.0";
}
