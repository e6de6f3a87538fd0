// lambdapop command-line front door: simulate, fit, benchmark.

#include <atomic>
#include <chrono>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "lambdapop/errors.hpp"
#include "lambdapop/estimators.hpp"
#include "lambdapop/genealogy.hpp"
#include "lambdapop/gmrf.hpp"
#include "lambdapop/metrics.hpp"
#include "lambdapop/rng.hpp"
#include "lambdapop/simulator.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace lambdapop;

namespace {

constexpr const char* kVersion = "0.1.0";
using clock_type = std::chrono::steady_clock;

std::string fnv1a_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open '" + path + "' for hashing");
  std::uint64_t h = 1469598103934665603ull;
  char buf[65536];
  while (in.read(buf, sizeof buf) || in.gcount() > 0) {
    for (std::streamsize i = 0; i < in.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 1099511628211ull;
    }
  }
  char out[32];
  std::snprintf(out, sizeof out, "fnv1a:%016" PRIx64, h);
  return out;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw InputError("short write to '" + path.string() + "'");
}

void write_manifest(const fs::path& path, const char* command, const json& config,
                    std::uint64_t seed, const json& input_hashes,
                    const std::vector<std::string>& outputs, double seconds) {
  json m;
  m["command"] = command;
  m["tool_version"] = kVersion;
  m["seed"] = seed;
  m["config"] = config;
  m["input_hashes"] = input_hashes;
  m["outputs"] = outputs;
  m["timing_seconds"] = seconds;
  write_text(path, m.dump(2) + "\n");
}

std::vector<std::string> split_list(const std::string& text, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(text);
  while (std::getline(in, cur, sep))
    if (!cur.empty()) out.push_back(cur);
  if (out.empty()) throw InputError("empty list '" + text + "'");
  return out;
}

SamplingSchedule schedule_from_flags(const std::string& times_csv, const std::string& counts_csv) {
  SamplingSchedule s;
  for (const auto& t : split_list(times_csv, ',')) s.times.push_back(std::stod(t));
  for (const auto& c : split_list(counts_csv, ',')) s.counts.push_back(std::stoi(c));
  if (s.times.size() != s.counts.size())
    throw InputError("--sample-times and --n-per-time must have matching lengths");
  s.validate();
  return s;
}

// named presets for the benchmark grid; raw time:count specs pass through
SamplingSchedule schedule_preset(const std::string& name, int n) {
  if (name == "iso") return SamplingSchedule::parse("iso:" + std::to_string(n));
  if (name == "hetero2") {
    SamplingSchedule s;
    s.times = {0.0, 1.0};
    s.counts = {(n + 1) / 2, n / 2};
    s.validate();
    return s;
  }
  if (name == "hetero4") {
    SamplingSchedule s;
    s.times = {0.0, 1.0, 2.0, 3.0};
    int a = static_cast<int>(std::round(0.5 * n));
    int b = static_cast<int>(std::round(0.3 * n));
    int c = static_cast<int>(std::round(0.1 * n));
    s.counts = {a, b, c, n - a - b - c};
    s.validate();
    return s;
  }
  return SamplingSchedule::parse(name);
}

std::string stats_csv(const CoalescentData& d) {
  std::ostringstream out;
  out << "kind,time,value\n";
  char buf[64];
  for (std::size_t i = 0; i < d.sample_times.size(); ++i) {
    std::snprintf(buf, sizeof buf, "sample,%.10g,%d\n", d.sample_times[i], d.sample_counts[i]);
    out << buf;
  }
  for (int k = 0; k < d.n_events(); ++k) {
    std::snprintf(buf, sizeof buf, "coal,%.10g,%d\n", d.coal_times[k], d.block_sizes[k]);
    out << buf;
  }
  return out.str();
}

std::string trajectory_csv(const TrajectorySummary& t) {
  std::ostringstream out;
  out << "time,median,lower,upper\n";
  char buf[160];
  for (std::size_t i = 0; i + 1 < t.grid_points.size(); ++i) {
    double mid = 0.5 * (t.grid_points[i] + t.grid_points[i + 1]);
    std::snprintf(buf, sizeof buf, "%.10g,%.10g,%.10g,%.10g\n", mid, t.median[i], t.lower[i],
                  t.upper[i]);
    out << buf;
  }
  return out.str();
}

// ---------------------------------------------------------------------------
// simulate

struct SimulateArgs {
  std::string measure = "kingman";
  std::string trajectory = "uniform:1";
  std::string n_per_time = "10";
  std::string sample_times = "0";
  int replicates = 1;
  std::uint64_t seed = 1;
  std::string out_dir;
};

int cmd_simulate(const SimulateArgs& a) {
  auto t0 = clock_type::now();
  LambdaMeasure measure = LambdaMeasure::parse(a.measure);
  Trajectory traj = Trajectory::parse(a.trajectory);
  SamplingSchedule sched = schedule_from_flags(a.sample_times, a.n_per_time);
  if (a.replicates < 1) throw InputError("--replicates must be >= 1");

  fs::create_directories(a.out_dir);
  RateTable rates(measure, std::max(sched.total(), 2));
  json config{{"measure", a.measure},       {"trajectory", a.trajectory},
              {"n_per_time", a.n_per_time}, {"sample_times", a.sample_times},
              {"replicates", a.replicates}, {"out_dir", a.out_dir}};

  for (int r = 0; r < a.replicates; ++r) {
    Rng rng(derive_seed(a.seed, r));
    Genealogy g = simulate(sched, traj, rates, rng);
    std::string base = "rep" + std::to_string(r);
    fs::path dir(a.out_dir);
    write_text(dir / (base + ".nwk"), to_newick(g) + "\n");
    write_text(dir / (base + "_stats.csv"), stats_csv(extract_stats(g)));
    double secs = std::chrono::duration<double>(clock_type::now() - t0).count();
    write_manifest(dir / (base + "_manifest.json"), "simulate", config, derive_seed(a.seed, r),
                   json::object(), {base + ".nwk", base + "_stats.csv"}, secs);
  }
  std::printf("simulated %d tree(s) in %s\n", a.replicates, a.out_dir.c_str());
  return 0;
}

// ---------------------------------------------------------------------------
// fit

struct FitArgs {
  std::string tree;
  std::string dates;
  std::string method = "mcmc";
  int grid_size = 100;
  int iterations = 20000;
  double burn_in = 0.1;
  std::uint64_t seed = 1;
  double fixed_alpha = 0.0;  // 0 = infer
  std::string out;
};

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

json summary_json(const FitResult& r, const Genealogy& g) {
  json out;
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
  out["iterations"] = r.iterations_used;
  out["converged"] = r.converged;
  out["n_tips"] = g.n_tips();
  out["tmrca"] = g.tmrca();
  return out;
}

int cmd_fit(const FitArgs& a) {
  auto t0 = clock_type::now();
  if (a.method != "bs-mle" && a.method != "hybrid" && a.method != "mcmc")
    throw InputError("--method must be bs-mle, hybrid, or mcmc");

  std::optional<std::map<std::string, double>> dates;
  json hashes;
  hashes[a.tree] = fnv1a_file(a.tree);
  if (!a.dates.empty()) {
    dates = read_tip_dates_csv(a.dates);
    hashes[a.dates] = fnv1a_file(a.dates);
  }
  Genealogy g = parse_newick(read_file(a.tree), dates);
  CoalescentData data = extract_stats(g);

  FitConfig cfg;
  cfg.grid_points = a.grid_size;
  cfg.iterations = a.iterations;
  cfg.burn_frac = a.burn_in;
  cfg.seed = a.seed;
  cfg.store_gamma_draws = (a.method == "mcmc");
  if (a.fixed_alpha > 0.0) cfg.fixed_alpha = a.fixed_alpha;

  FitResult r;
  if (a.method == "bs-mle")
    r = fit_bs_mle(data, cfg);
  else if (a.method == "hybrid")
    r = hybrid_fit(data, cfg);
  else
    r = mcmc_fit(data, cfg);

  std::vector<std::string> outputs{a.out + "_summary.json", a.out + "_trajectory.csv"};
  write_text(a.out + "_summary.json", summary_json(r, g).dump(2) + "\n");
  write_text(a.out + "_trajectory.csv", trajectory_csv(r.trajectory));

  if (a.method == "mcmc") {
    std::ostringstream chain;
    chain << "iteration,alpha,tau";
    for (Eigen::Index j = 0; j < r.gamma_draws.cols(); ++j) chain << ",gamma_" << (j + 1);
    chain << "\n";
    const int burn = a.iterations - static_cast<int>(r.alpha_draws.size());
    char buf[64];
    for (std::size_t i = 0; i < r.alpha_draws.size(); ++i) {
      chain << (burn + i);
      std::snprintf(buf, sizeof buf, ",%.10g,%.10g", r.alpha_draws[i], r.tau_draws[i]);
      chain << buf;
      for (Eigen::Index j = 0; j < r.gamma_draws.cols(); ++j) {
        std::snprintf(buf, sizeof buf, ",%.10g", r.gamma_draws(i, j));
        chain << buf;
      }
      chain << "\n";
    }
    write_text(a.out + "_chain.csv", chain.str());
    outputs.push_back(a.out + "_chain.csv");
  }

  json config{{"tree", a.tree},       {"dates", a.dates},           {"method", a.method},
              {"grid_size", a.grid_size}, {"iterations", a.iterations}, {"burn_in", a.burn_in},
              {"fixed_alpha", a.fixed_alpha}, {"out", a.out}};
  double secs = std::chrono::duration<double>(clock_type::now() - t0).count();
  write_manifest(a.out + "_manifest.json", "fit", config, a.seed, hashes, outputs, secs);

  std::printf("%s fit: alpha %.4f (median %.4f), tau %.4g, written to %s_*\n", r.method.c_str(),
              r.alpha, r.alpha_median, r.tau, a.out.c_str());
  return 0;
}

// ---------------------------------------------------------------------------
// benchmark

struct BenchmarkArgs {
  std::string alphas = "1.5";
  std::string ns = "50";
  std::string schedules = "iso";
  std::string trajectories = "uniform:1";
  std::string methods = "bs-mle,hybrid,mcmc";
  int replicates = 50;
  int iterations = 20000;
  int grid_size = 100;
  std::uint64_t seed = 1;
  int jobs = 1;
  std::string out_dir;
};

struct RepRow {
  std::string method, schedule, trajectory;
  double alpha_true = 0;
  int n = 0, replicate = 0;
  bool ok = false;
  double alpha_hat = 0, coverage = 0, bias = 0, deviance = 0, mse = 0, seconds = 0;
  std::string note;
};

struct Combo {
  double alpha;
  int n;
  std::string schedule, trajectory;
};

// %.17g keeps doubles exact across the csv round trip, which the aggregate
// self-check below relies on
std::string row_csv(const RepRow& r) {
  char buf[512];
  std::snprintf(buf, sizeof buf, "%s,%.17g,%d,%s,%s,%d,%d,%.17g,%.17g,%.17g,%.17g,%.17g,%.3f\n",
                r.method.c_str(), r.alpha_true, r.n, r.schedule.c_str(), r.trajectory.c_str(),
                r.replicate, r.ok ? 1 : 0, r.alpha_hat, r.coverage, r.bias, r.deviance, r.mse,
                r.seconds);
  return buf;
}

double median_of(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::string aggregate_csv(const std::vector<RepRow>& rows) {
  // group in first-appearance order; rows are laid out deterministically
  std::vector<std::string> keys;
  std::map<std::string, std::vector<const RepRow*>> groups;
  for (const auto& r : rows) {
    std::ostringstream k;
    k << r.method << "," << r.alpha_true << "," << r.n << "," << r.schedule << ","
      << r.trajectory;
    if (!groups.count(k.str())) keys.push_back(k.str());
    groups[k.str()].push_back(&r);
  }
  std::ostringstream out;
  out << "method,alpha_true,n,schedule,trajectory,replicates,failures,mean_coverage,"
         "median_deviance,median_mse,alpha_mean,alpha_bias,alpha_mse\n";
  for (const auto& key : keys) {
    const auto& g = groups[key];
    std::vector<double> dev, mse, alphas;
    double cov = 0.0;
    int ok = 0, fail = 0;
    double alpha_true = g.front()->alpha_true;
    for (const RepRow* r : g) {
      if (!r->ok) {
        ++fail;
        continue;
      }
      ++ok;
      cov += r->coverage;
      dev.push_back(r->deviance);
      mse.push_back(r->mse);
      alphas.push_back(r->alpha_hat);
    }
    char buf[512];
    if (ok > 0) {
      AlphaScore as = score_alpha(alphas, alpha_true);
      std::snprintf(buf, sizeof buf, "%s,%d,%d,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g\n",
                    key.c_str(), ok, fail, cov / ok, median_of(dev), median_of(mse), as.mean,
                    as.bias, as.mse);
    } else {
      std::snprintf(buf, sizeof buf, "%s,0,%d,nan,nan,nan,nan,nan,nan\n", key.c_str(), fail);
    }
    out << buf;
  }
  return out.str();
}

RepRow run_replicate(const Combo& combo, const std::string& method, int rep,
                     const BenchmarkArgs& a, std::uint64_t seed) {
  RepRow row;
  row.method = method;
  row.alpha_true = combo.alpha;
  row.n = combo.n;
  row.schedule = combo.schedule;
  row.trajectory = combo.trajectory;
  row.replicate = rep;
  auto t0 = clock_type::now();
  try {
    Trajectory traj = Trajectory::parse(combo.trajectory);
    SamplingSchedule sched = schedule_preset(combo.schedule, combo.n);
    Rng rng(seed);
    CoalescentData data =
        extract_stats(simulate(sched, traj, measure_for_alpha(combo.alpha), rng));

    FitConfig cfg;
    cfg.grid_points = a.grid_size;
    cfg.iterations = a.iterations;
    cfg.seed = derive_seed(seed, 1);

    FitResult r;
    if (method == "bs-mle")
      r = fit_bs_mle(data, cfg);
    else if (method == "hybrid")
      r = hybrid_fit(data, cfg);
    else if (method == "mcmc")
      r = mcmc_fit(data, cfg);
    else
      throw InputError("unknown method '" + method + "'");

    TrajectoryScore ts = score_trajectory(r.trajectory, traj);
    row.alpha_hat = (method == "mcmc") ? r.alpha_median : r.alpha;
    row.coverage = ts.coverage;
    row.bias = ts.bias;
    row.deviance = ts.deviance;
    row.mse = ts.mse;
    row.ok = true;
  } catch (const std::exception& e) {
    row.note = e.what();
  }
  row.seconds = std::chrono::duration<double>(clock_type::now() - t0).count();
  return row;
}

int cmd_benchmark(const BenchmarkArgs& a) {
  auto t0 = clock_type::now();
  if (a.replicates < 1) throw InputError("--replicates must be >= 1");
  if (a.jobs < 1) throw InputError("--jobs must be >= 1");

  std::vector<Combo> combos;
  for (const auto& alpha : split_list(a.alphas, ','))
    for (const auto& n : split_list(a.ns, ','))
      for (const auto& sched : split_list(a.schedules, ';'))
        for (const auto& traj : split_list(a.trajectories, ';'))
          combos.push_back({std::stod(alpha), std::stoi(n), sched, traj});
  std::vector<std::string> methods = split_list(a.methods, ',');

  struct Task {
    int combo, rep;
  };
  std::vector<Task> tasks;
  for (std::size_t c = 0; c < combos.size(); ++c)
    for (int r = 0; r < a.replicates; ++r)
      tasks.push_back({static_cast<int>(c), r});

  // row slots preallocated so thread scheduling cannot reorder the report
  std::vector<RepRow> rows(tasks.size() * methods.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (;;) {
      std::size_t i = next.fetch_add(1);
      if (i >= tasks.size()) return;
      const Task& t = tasks[i];
      std::uint64_t rep_seed = derive_seed(derive_seed(a.seed, t.combo), t.rep);
      for (std::size_t m = 0; m < methods.size(); ++m)
        rows[i * methods.size() + m] =
            run_replicate(combos[t.combo], methods[m], t.rep, a, rep_seed);
    }
  };
  if (a.jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int j = 0; j < a.jobs; ++j) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }

  fs::create_directories(a.out_dir);
  fs::path dir(a.out_dir);
  std::ostringstream reps;
  reps << "method,alpha_true,n,schedule,trajectory,replicate,ok,alpha_hat,coverage,bias,"
          "deviance,mse,seconds\n";
  int failures = 0;
  for (const auto& r : rows) {
    reps << row_csv(r);
    if (!r.ok) {
      ++failures;
      std::fprintf(stderr, "replicate failed (%s, alpha %.3g, n %d, rep %d): %s\n",
                   r.method.c_str(), r.alpha_true, r.n, r.replicate, r.note.c_str());
    }
  }
  write_text(dir / "replicates.csv", reps.str());
  write_text(dir / "aggregate.csv", aggregate_csv(rows));

  // self-check: the aggregate must be recomputable from the replicate rows
  {
    std::ifstream in(dir / "replicates.csv");
    std::string line;
    std::getline(in, line);  // header
    std::vector<RepRow> reread;
    while (std::getline(in, line)) {
      RepRow r;
      std::istringstream ls(line);
      std::string f;
      std::getline(ls, r.method, ',');
      std::getline(ls, f, ',');
      r.alpha_true = std::stod(f);
      std::getline(ls, f, ',');
      r.n = std::stoi(f);
      std::getline(ls, r.schedule, ',');
      std::getline(ls, r.trajectory, ',');
      std::getline(ls, f, ',');
      r.replicate = std::stoi(f);
      std::getline(ls, f, ',');
      r.ok = f == "1";
      std::getline(ls, f, ',');
      r.alpha_hat = std::stod(f);
      std::getline(ls, f, ',');
      r.coverage = std::stod(f);
      std::getline(ls, f, ',');
      r.bias = std::stod(f);
      std::getline(ls, f, ',');
      r.deviance = std::stod(f);
      std::getline(ls, f, ',');
      r.mse = std::stod(f);
      reread.push_back(r);
    }
    if (aggregate_csv(reread) != aggregate_csv(rows))
      throw NumericalError("benchmark self-check failed: aggregate does not match replicates");
  }

  json config{{"alphas", a.alphas},     {"ns", a.ns},
              {"schedules", a.schedules}, {"trajectories", a.trajectories},
              {"methods", a.methods},   {"replicates", a.replicates},
              {"iterations", a.iterations}, {"grid_size", a.grid_size},
              {"jobs", a.jobs},         {"out_dir", a.out_dir}};
  double secs = std::chrono::duration<double>(clock_type::now() - t0).count();
  write_manifest(dir / "manifest.json", "benchmark", config, a.seed, json::object(),
                 {"replicates.csv", "aggregate.csv"}, secs);

  std::printf("benchmark: %zu rows (%d failures) in %.1fs, report in %s\n", rows.size(),
              failures, secs, a.out_dir.c_str());
  return failures == 0 ? 0 : 3;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multiple-merger coalescent simulation and Ne(t)/alpha inference"};
  app.set_version_flag("--version", kVersion);
  app.set_config("--config", "", "TOML-style config file; command-line flags win");
  app.require_subcommand(0, 1);

  SimulateArgs sim;
  CLI::App* s = app.add_subcommand("simulate", "Draw genealogies from the model");
  s->add_option("--measure", sim.measure, "kingman | beta:a | bs | pointmass:x | discrete:csv");
  s->add_option("--trajectory", sim.trajectory,
                "uniform:l | exp:s,r | boombust:s,c | piecewise:csv");
  s->add_option("--n-per-time", sim.n_per_time, "comma list of tip counts per sampling time");
  s->add_option("--sample-times", sim.sample_times, "comma list of sampling times (first 0)");
  s->add_option("--replicates", sim.replicates, "independent trees to draw");
  s->add_option("--seed", sim.seed, "master seed");
  s->add_option("--out-dir", sim.out_dir, "output directory")->required();

  FitArgs fit;
  CLI::App* f = app.add_subcommand("fit", "Infer Ne(t) and alpha from a dated tree");
  f->add_option("--tree", fit.tree, "newick file")->required();
  f->add_option("--dates", fit.dates, "optional tip-date csv (label,date)");
  f->add_option("--method", fit.method, "bs-mle | hybrid | mcmc");
  f->add_option("--grid-size", fit.grid_size, "skyline grid points");
  f->add_option("--iterations", fit.iterations, "mcmc iterations");
  f->add_option("--burn-in", fit.burn_in, "burn-in fraction");
  f->add_option("--seed", fit.seed, "rng seed");
  f->add_option("--fixed-alpha", fit.fixed_alpha, "fix alpha instead of inferring (mcmc)");
  f->add_option("--out", fit.out, "output path prefix")->required();

  BenchmarkArgs bench;
  CLI::App* b = app.add_subcommand("benchmark", "Factorial simulation study");
  b->add_option("--alphas", bench.alphas, "comma list of true alphas");
  b->add_option("--ns", bench.ns, "comma list of sample sizes");
  b->add_option("--schedules", bench.schedules, "semicolon list: iso | hetero2 | hetero4 | raw");
  b->add_option("--trajectories", bench.trajectories, "semicolon list of trajectory specs");
  b->add_option("--methods", bench.methods, "comma list of estimators");
  b->add_option("--replicates", bench.replicates, "replicates per combination");
  b->add_option("--iterations", bench.iterations, "mcmc iterations");
  b->add_option("--grid-size", bench.grid_size, "skyline grid points");
  b->add_option("--seed", bench.seed, "master seed");
  b->add_option("--jobs", bench.jobs, "replicate-level worker threads");
  b->add_option("--out-dir", bench.out_dir, "output directory")->required();

  try {
    app.parse(argc, argv);
    if (s->parsed()) return cmd_simulate(sim);
    if (f->parsed()) return cmd_fit(fit);
    if (b->parsed()) return cmd_benchmark(bench);
    std::puts(app.help().c_str());
    return 0;
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  } catch (const InputError& e) {
    std::fprintf(stderr, "input error: %s\n", e.what());
    return 2;
  } catch (const NumericalError& e) {
    std::fprintf(stderr, "numerical failure: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  }
}
