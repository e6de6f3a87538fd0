#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <algorithm>
#include <map>
#include <optional>
#include <string>

#include "lambdapop/errors.hpp"
#include "lambdapop/estimators.hpp"
#include "lambdapop/genealogy.hpp"
#include "lambdapop/lambda_rates.hpp"
#include "lambdapop/rng.hpp"
#include "lambdapop/simulator.hpp"

namespace py = pybind11;
using namespace lambdapop;

namespace {

py::dict stats_dict(const CoalescentData& d) {
  py::dict out;
  out["sample_times"] = d.sample_times;
  out["sample_counts"] = d.sample_counts;
  out["coal_times"] = d.coal_times;
  out["block_sizes"] = d.block_sizes;
  out["n_tips"] = d.total_samples();
  out["tmrca"] = d.tmrca();
  return out;
}

py::dict fit_dict(const FitResult& r) {
  py::dict out;
  out["method"] = r.method;
  out["alpha"] = r.alpha;
  out["alpha_median"] = r.alpha_median;
  out["alpha_at_boundary"] = r.alpha_at_boundary;
  out["tau"] = r.tau;
  out["log_likelihood"] = r.log_likelihood_at_estimate;
  out["accept_rate"] = r.accept_rate;
  out["step_size"] = r.step_size;
  out["ess_alpha"] = r.ess_alpha;
  out["ess_gamma"] = r.ess_gamma_probe;
  out["converged"] = r.converged;
  py::dict traj;
  traj["grid_points"] = r.trajectory.grid_points;
  traj["median"] = r.trajectory.median;
  traj["lower"] = r.trajectory.lower;
  traj["upper"] = r.trajectory.upper;
  out["trajectory"] = traj;
  return out;
}

FitConfig config_of(int grid_size, int iterations, std::uint64_t seed,
                    std::optional<double> fixed_alpha) {
  FitConfig cfg;
  cfg.grid_points = grid_size;
  cfg.iterations = iterations;
  cfg.seed = seed;
  cfg.fixed_alpha = fixed_alpha;
  return cfg;
}

}  // namespace

PYBIND11_MODULE(_lambdapop, m) {
  m.doc() = "Multiple-merger coalescent simulation and Ne(t)/alpha inference";
  m.attr("__version__") = "0.1.0";

  py::register_exception<InputError>(m, "InputError", PyExc_ValueError);
  py::register_exception<NumericalError>(m, "NumericalError", PyExc_RuntimeError);

  m.def(
      "simulate",
      [](const std::string& schedule, const std::string& trajectory, const std::string& measure,
         std::uint64_t seed) {
        SamplingSchedule sched = SamplingSchedule::parse(schedule);
        Trajectory traj = Trajectory::parse(trajectory);
        Rng rng(seed);
        return to_newick(simulate(sched, traj, LambdaMeasure::parse(measure), rng));
      },
      py::arg("schedule"), py::arg("trajectory") = "uniform:1", py::arg("measure") = "kingman",
      py::arg("seed") = 1, "Draw one genealogy; returns a Newick string.");

  m.def(
      "tree_stats",
      [](const std::string& newick, const std::optional<std::map<std::string, double>>& dates) {
        return stats_dict(extract_stats(parse_newick(newick, dates)));
      },
      py::arg("newick"), py::arg("tip_dates") = py::none(),
      "Sampling batches and coalescent events of a dated Newick tree.");

  m.def(
      "block_size_mle",
      [](const std::string& newick, double lo, double hi) {
        bool boundary = false;
        double alpha = block_size_mle(extract_stats(parse_newick(newick)), lo, hi, 1e-6, &boundary);
        return py::make_tuple(alpha, boundary);
      },
      py::arg("newick"), py::arg("lo") = 0.005, py::arg("hi") = 2.0,
      "Topology-only alpha estimate; returns (alpha, at_boundary).");

  m.def(
      "fit",
      [](const std::string& newick, const std::string& method, int grid_size, int iterations,
         std::uint64_t seed, std::optional<double> fixed_alpha,
         const std::optional<std::map<std::string, double>>& dates) {
        CoalescentData data = extract_stats(parse_newick(newick, dates));
        FitConfig cfg = config_of(grid_size, iterations, seed, fixed_alpha);
        FitResult r;
        if (method == "bs-mle")
          r = fit_bs_mle(data, cfg);
        else if (method == "hybrid")
          r = hybrid_fit(data, cfg);
        else if (method == "mcmc")
          r = mcmc_fit(data, cfg);
        else
          throw InputError("method must be bs-mle, hybrid, or mcmc");
        return fit_dict(r);
      },
      py::arg("newick"), py::arg("method") = "mcmc", py::arg("grid_size") = 100,
      py::arg("iterations") = 20000, py::arg("seed") = 1, py::arg("fixed_alpha") = py::none(),
      py::arg("tip_dates") = py::none(),
      "Infer Ne(t) and alpha from a dated tree; returns a summary dict.");

  m.def(
      "total_rate",
      [](const std::string& measure, int b) {
        return std::exp(total_log_rate(b, LambdaMeasure::parse(measure)));
      },
      py::arg("measure"), py::arg("b"), "Total merger rate with b lineages extant.");

  m.def(
      "block_size_pmf",
      [](const std::string& measure, int b) {
        return block_size_pmf(b, LambdaMeasure::parse(measure));
      },
      py::arg("measure"), py::arg("b"),
      "Next-merger block-size distribution (index 0 = pairwise).");
}
