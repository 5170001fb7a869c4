#include "cli.hpp"

#include "memlens/config.hpp"
#include "memlens/harness.hpp"
#include "memlens/minibatch.hpp"
#include "memlens/ode.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <omp.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace memlens::cli {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

const char* const kCommands[][2] = {
    {"run", "memoryful and memoryless trajectories at optimizer.h"},
    {"sweep", "global error of the memoryless iteration over an h grid, with a slope gate"},
    {"defect", "one-step defect of the memoryless iterates over an h grid, with a slope gate"},
    {"closeness", "per-step gaps of second- and first-order memoryless runs"},
    {"ode-compare", "discrete iterates against the modified ODE over an h grid"},
    {"minibatch-corr", "permutation-averaged mini-batch correction: exhaustive, decomposed, Monte Carlo"},
    {"corr-table", "correction term by every available method at the step indices experiment.ns"},
    {"gradcheck", "finite-difference checks of the loss gradient and Hessian-vector product"},
};

std::string help_footer() {
  std::ostringstream out;
  out << "Config keys (section.key [unit]: meaning); override any with --set section.key=value:\n";
  for (const ConfigKey& k : config_keys()) {
    out << "  " << k.section << '.' << k.key << " [" << k.unit << "]: " << k.help << '\n';
  }
  out << "\nOutputs go to --out, else $MEMLENS_OUT_DIR, else ./memlens_out.\n"
      << "Exit codes: 0 all gates passed, 1 a gate failed, 2 usage or config error.\n";
  return out.str();
}

// Owns the resolved config and the files one command writes.
class Session {
 public:
  Session(std::string command, Config config, fs::path out_dir, std::ostream& out)
      : command_(std::move(command)), config_(std::move(config)), out_dir_(std::move(out_dir)), out_(out) {
    name_ = config_.experiment.name.empty() ? command_ : config_.experiment.name;
    hash_ = config_hash(config_);
  }

  const Config& config() const { return config_; }
  const RunConfig& run() const { return config_.run; }
  const ExperimentConfig& experiment() const { return config_.experiment; }

  // <name>[-part]_<kind>_<hash>.<ext>
  void write(const std::string& part, const std::string& ext, const std::string& content) {
    const std::string file = name_ + (part.empty() ? "" : "-" + part) + "_" + to_string(run().optimizer.kind) + "_" +
                             hash_ + "." + ext;
    write_file(file, content);
    outputs_.push_back(file);
  }

  void gate(Gate g) {
    out_ << (g.passed ? "PASS " : "FAIL ") << g.name << ": " << g.detail << '\n';
    gates_.push_back(std::move(g));
  }

  void note(const std::string& text) { out_ << text << '\n'; }

  int finish() {
    bool passed = true;
    for (const Gate& g : gates_) passed = passed && g.passed;
    json manifest;
    manifest["command"] = command_;
    manifest["hash"] = hash_;
    json sections = json::object();
    for (const ConfigKey& k : config_keys()) {
      sections[k.section][k.key] = get_config_value(config_, k.section + "." + k.key);
    }
    manifest["config"] = sections;
    manifest["outputs"] = outputs_;
    json gates = json::array();
    for (const Gate& g : gates_) gates.push_back({{"name", g.name}, {"passed", g.passed}, {"detail", g.detail}});
    manifest["gates"] = gates;
    manifest["passed"] = passed;
    write_file("manifest.json", manifest.dump(2) + "\n");
    if (!passed) {
      for (const Gate& g : gates_) {
        if (!g.passed) out_ << "gate failed: " << g.name << '\n';
      }
    }
    return passed ? kOk : kGateFailed;
  }

 private:
  void write_file(const std::string& file, const std::string& content) {
    const fs::path path = out_dir_ / file;
    std::ofstream stream(path, std::ios::binary);
    if (!stream) throw Error("cannot write output file '" + path.string() + "'");
    stream << content;
    if (!stream) throw Error("failed writing output file '" + path.string() + "'");
  }

  std::string command_;
  Config config_;
  fs::path out_dir_;
  std::ostream& out_;
  std::string name_;
  std::string hash_;
  std::vector<std::string> outputs_;
  std::vector<Gate> gates_;
};

std::pair<double, double> slope_gate(const ExperimentConfig& ex, double lo, double hi) {
  return {ex.slope_min.value_or(lo), ex.slope_max.value_or(hi)};
}

// A fit the floor wiped out is only acceptable when nothing failed for
// another reason, as with a memoryless optimizer whose error is exactly zero.
void gate_report(Session& s, SweepReport& report, double lo, double hi) {
  const auto [slope_lo, slope_hi] = slope_gate(s.experiment(), lo, hi);
  if (report.status == "degenerate") {
    bool clean = true;
    for (const SweepPoint& p : report.points) clean = clean && (p.valid || p.note == "below floor");
    report.gates.push_back({report.experiment + ".slope", clean,
                            clean ? "degenerate: error below the fit floor at every h, no slope to gate"
                                  : "degenerate: too few valid points (see notes)"});
  } else {
    report.gate_slope(slope_lo, slope_hi, s.experiment().r2_min);
  }
  for (const SweepPoint& p : report.points) {
    if (!p.valid && p.note != "below floor") s.note("h = " + format_double(p.h) + " excluded: " + p.note);
  }
  for (const Gate& g : report.gates) s.gate(g);
}

void cmd_run(Session& s) {
  const MemorylessKind kind = s.experiment().memoryless;
  const Trajectory memoryful = run_memoryful(s.run());
  const Trajectory memoryless = run_memoryless(s.run(), kind);
  s.write("memoryful", "csv", memoryful.to_csv());
  s.write("memoryless", "csv", memoryless.to_csv());
  const std::size_t shared = std::min(memoryful.size(), memoryless.size());
  double worst = 0.0;
  for (std::size_t n = 0; n < shared; ++n) {
    worst = std::max(worst, linf_distance(memoryful.iterates[n], memoryless.iterates[n]));
  }
  json summary{{"steps", static_cast<long>(memoryful.size()) - 1},
               {"memoryless", to_string(kind)},
               {"max_gap", worst},
               {"final_loss", memoryful.loss.back()}};
  s.write("", "json", summary.dump(2) + "\n");
  s.note("max gap " + format_double(worst) + " over " + std::to_string(shared) + " iterates");
  for (const auto* t : {&memoryful, &memoryless}) {
    const std::string which = t == &memoryful ? "memoryful" : "memoryless";
    s.gate({"run." + which + ".domain", t->complete(), t->complete() ? "stayed in the domain" : *t->domain_error});
  }
}

void cmd_sweep(Session& s) {
  const MemorylessKind kind = s.experiment().memoryless;
  SweepReport report = global_error_sweep(s.run(), s.experiment().grid(), kind);
  const bool second = kind.order == MemorylessOrder::SecondOrder;
  gate_report(s, report, second ? 1.7 : 0.8, second ? 2.3 : 1.3);
  s.write("", "csv", report.to_csv());
  s.write("", "json", report.summary_json());
}

void cmd_defect(Session& s) {
  const MemorylessKind kind = s.experiment().memoryless;
  DefectSweep sweep = defect_sweep(s.run(), s.experiment().grid(), kind);
  const bool second = kind.order == MemorylessOrder::SecondOrder;
  gate_report(s, sweep.report, second ? 2.7 : 1.7, second ? 3.3 : 2.3);
  s.write("", "csv", sweep.rows_csv());
  s.write("fit", "csv", sweep.report.to_csv());
  s.write("", "json", sweep.report.summary_json());
}

void cmd_closeness(Session& s) {
  const std::vector<double> hs =
      s.experiment().h_grid.empty() ? std::vector<double>{s.run().optimizer.h} : s.experiment().h_grid;
  const ClosenessReport report = trajectory_closeness(s.run(), hs, s.experiment().lambda_h);
  s.write("", "csv", report.rows_csv());
  s.write("", "json", report.summary_json());
  for (const ClosenessSummary& sum : report.summaries) {
    Gate g;
    g.name = "closeness.h=" + format_double(sum.h);
    if (!sum.error.empty()) {
      g.passed = false;
      g.detail = sum.error;
    } else {
      g.passed = sum.fraction_second_le_first >= s.experiment().min_fraction;
      g.detail = "second-order gap <= first-order gap at " + format_double(sum.fraction_second_le_first) +
                 " of " + std::to_string(sum.compared) + " steps (need " +
                 format_double(s.experiment().min_fraction) + ")" +
                 (sum.burn_in_covers_run ? "; burn-in exceeds the run, all steps compared" : "");
    }
    s.gate(g);
  }
}

void cmd_ode_compare(Session& s) {
  OdeCompareOptions options;
  options.with_g2 = s.experiment().with_g2;
  options.dt_divisor = s.experiment().dt_divisor;
  SweepReport report = compare_discrete_vs_ode(s.run(), s.experiment().grid(), options);
  gate_report(s, report, options.with_g2 ? 1.7 : 0.8, options.with_g2 ? 2.3 : 1.3);
  s.write("", "csv", report.to_csv());
  s.write("", "json", report.summary_json());
}

void cmd_minibatch_corr(Session& s) {
  const RunConfig& run = s.run();
  const MiniBatchFamily family = build_family(run.loss, run.dim, run.seed);
  const ParamVector theta = initial_theta(run);
  const double beta = run.optimizer.beta1;
  const double h = run.optimizer.h;

  const ParamVector decomposed = decomposed_correction(family, beta, theta, h);
  std::optional<ParamVector> exhaustive;
  if (family.count() <= kMaxExhaustiveBatches) exhaustive = expected_correction_exhaustive(family, beta, theta, h);
  const McEstimate mc = expected_correction_mc(family, beta, theta, h, s.experiment().samples, s.experiment().mc_seed);

  std::ostringstream csv;
  csv << "method,component,value,stderr\n";
  auto rows = [&csv](const std::string& method, const ParamVector& v, const ParamVector* se) {
    for (Index i = 0; i < v.size(); ++i) {
      csv << method << ',' << i << ',' << format_double(v[i]) << ',' << (se ? format_double((*se)[i]) : "") << '\n';
    }
  };
  if (exhaustive) rows("exhaustive", *exhaustive, nullptr);
  rows("decomposed", decomposed, nullptr);
  rows("monte-carlo", mc.mean, &mc.stderr_);
  s.write("", "csv", csv.str());

  const long n = static_cast<long>(family.count()) - 1;
  const PermutationCoefficients finite = perm_coefficients(beta, n);
  const PermutationCoefficients limit = perm_coefficients_limit(beta);
  json summary{{"batches", family.count()},
               {"beta", beta},
               {"c_eq", finite.c_eq},
               {"c_neq", finite.c_neq},
               {"c_eq_limit", limit.c_eq},
               {"c_neq_limit", limit.c_neq},
               {"gradient_noise", gradient_noise(family, theta)},
               {"modified_loss", modified_loss_minibatch(family, beta, theta, h)},
               {"mc_samples", mc.samples}};
  s.write("", "json", summary.dump(2) + "\n");

  const ParamVector& reference = exhaustive ? *exhaustive : decomposed;
  if (exhaustive) {
    const double gap = linf_distance(*exhaustive, decomposed) / std::max(linf_norm(*exhaustive), 1e-300);
    s.gate({"minibatch.decomposition", gap <= 1e-10,
            "relative gap exhaustive vs decomposed " + format_double(gap) + " <= 1e-10"});
  }
  double worst = 0.0;  // largest |mc - reference| in units of the standard error
  bool within = true;
  for (Index i = 0; i < reference.size(); ++i) {
    const double diff = std::abs(mc.mean[i] - reference[i]);
    const double slack = 1e-12 * std::max(1.0, std::abs(reference[i]));
    within = within && diff <= 3.0 * mc.stderr_[i] + slack;
    if (mc.stderr_[i] > 0.0) worst = std::max(worst, diff / mc.stderr_[i]);
  }
  s.gate({"minibatch.monte-carlo", within,
          "largest deviation " + format_double(worst) + " standard errors (need <= 3 in every component)"});
}

void cmd_corr_table(Session& s) {
  const RunConfig& run = s.run();
  const LossPtr loss = build_loss(run.loss, run.dim, run.seed);
  const ParamVector theta = initial_theta(run);
  s.write("", "csv", correction_table_csv(run.optimizer, *loss, theta, s.experiment().ns));
  double worst = 0.0;
  for (long n : s.experiment().ns) {
    const ParamVector brute = correction_bruteforce(run.optimizer, *loss, theta, n).vector;
    const double scale = std::max(linf_norm(brute), 1e-300);
    worst = std::max(worst, linf_distance(correction_contraction(run.optimizer, *loss, theta, n).vector, brute) / scale);
    if (has_closed_finite_n(run.optimizer)) {
      worst = std::max(worst, linf_distance(correction_closed(run.optimizer, *loss, theta, n, false).vector, brute) / scale);
    }
  }
  s.gate({"corr-table.agreement", worst <= 1e-6,
          "largest relative gap to brute force " + format_double(worst) + " <= 1e-6"});
}

void cmd_gradcheck(Session& s) {
  const RunConfig& run = s.run();
  const LossPtr loss = build_loss(run.loss, run.dim, run.seed);
  std::vector<ParamVector> points{initial_theta(run)};
  Rng rng(run.seed, "gradcheck");
  for (int p = 0; p < s.experiment().points; ++p) {
    ParamVector theta(run.dim);
    for (Index i = 0; i < run.dim; ++i) theta[i] = rng.uniform(-run.theta0_scale, run.theta0_scale);
    points.push_back(theta);
  }
  std::ostringstream csv;
  csv << "point,check,value\n";
  double grad_err = 0.0;
  double hvp_err = 0.0;
  double asym = 0.0;
  for (std::size_t p = 0; p < points.size(); ++p) {
    ParamVector v(run.dim);
    for (Index i = 0; i < run.dim; ++i) v[i] = rng.normal();
    const double ge = fd_check_grad(*loss, points[p]);
    const double he = fd_check_hvp(*loss, points[p], v);
    const Matrix H = assemble_hessian(*loss, points[p]);
    const double sym = (H - H.transpose()).cwiseAbs().maxCoeff() / std::max(1.0, H.cwiseAbs().maxCoeff());
    csv << p << ",grad," << format_double(ge) << '\n'
        << p << ",hvp," << format_double(he) << '\n'
        << p << ",symmetry," << format_double(sym) << '\n';
    grad_err = std::max(grad_err, ge);
    hvp_err = std::max(hvp_err, he);
    asym = std::max(asym, sym);
  }
  s.write("", "csv", csv.str());
  const double tol = s.experiment().tolerance;
  s.note("max relative error: grad " + format_double(grad_err) + ", hvp " + format_double(hvp_err));
  s.gate({"gradcheck.grad", grad_err <= tol, "max relative error " + format_double(grad_err) + " <= " + format_double(tol)});
  s.gate({"gradcheck.hvp", hvp_err <= tol, "max relative error " + format_double(hvp_err) + " <= " + format_double(tol)});
  s.gate({"gradcheck.symmetry", asym <= 1e-10, "Hessian asymmetry " + format_double(asym) + " <= 1e-10"});
}

void dispatch(const std::string& command, Session& s) {
  if (command == "run") return cmd_run(s);
  if (command == "sweep") return cmd_sweep(s);
  if (command == "defect") return cmd_defect(s);
  if (command == "closeness") return cmd_closeness(s);
  if (command == "ode-compare") return cmd_ode_compare(s);
  if (command == "minibatch-corr") return cmd_minibatch_corr(s);
  if (command == "corr-table") return cmd_corr_table(s);
  if (command == "gradcheck") return cmd_gradcheck(s);
  throw Error("unknown command '" + command + "'");
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"memlens: memory-correction laboratory for momentum optimizers"};
  app.require_subcommand(1, 1);
  app.footer(help_footer());

  std::string config_path;
  std::vector<std::string> overrides;
  std::string out_dir;
  int jobs = 0;
  app.add_option("--config", config_path, "config file (sectioned key = value text, or a manifest.json)");
  app.add_option("--set", overrides, "override one key: section.key=value (repeatable)");
  app.add_option("--out", out_dir, "output directory (default $MEMLENS_OUT_DIR, else ./memlens_out)");
  app.add_option("--jobs", jobs, "worker threads (default: all logical processors)")->check(CLI::PositiveNumber);
  for (const auto& [name, help] : kCommands) app.add_subcommand(name, help)->fallthrough();

  std::vector<const char*> argv;
  for (const std::string& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }
  const std::string command = app.get_subcommands().front()->get_name();

  Config config;
  try {
    if (!config_path.empty()) config = load_config(config_path);
    for (const std::string& item : overrides) {
      const auto eq = item.find('=');
      if (eq == std::string::npos) throw Error("--set expects section.key=value, got '" + item + "'");
      set_config_value(config, item.substr(0, eq), item.substr(eq + 1));
    }
    validate(config);
  } catch (const std::exception& e) {
    err << "config error: " << e.what() << '\n';
    return kUsage;
  }

  if (out_dir.empty()) {
    const char* env = std::getenv("MEMLENS_OUT_DIR");
    out_dir = env && *env ? env : "memlens_out";
  }
  if (jobs > 0) omp_set_num_threads(jobs);

  try {
    fs::create_directories(out_dir);
    Session session(command, config, out_dir, out);
    dispatch(command, session);
    return session.finish();
  } catch (const std::exception& e) {
    err << command << ": " << e.what() << '\n';
    return kUsage;
  }
}

}  // namespace memlens::cli
