// simcal: command-line front end for simulation-calibration tests, sequential
// selection and simulation studies.
//
// Variable indices on the command line and in every output are 1-based.

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "simcal/simcal.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;
using namespace simcal;

namespace {

constexpr const char* kVersion = "0.1.0";

struct InputError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------- formatting

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string join_indices(const IndexSet& s, char sep = ';') {
  std::string out;
  for (std::size_t k = 0; k < s.size(); ++k) {
    if (k) out += sep;
    out += std::to_string(s[k] + 1);
  }
  return out;
}

ordered_json one_based(const IndexSet& s) {
  ordered_json a = ordered_json::array();
  for (int j : s) a.push_back(j + 1);
  return a;
}

std::uint64_t fnv1a(const std::string& s, std::uint64_t h = 1469598103934665603ULL) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::string hex(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw InputError("cannot open '" + p.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& p, const std::string& content) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw InputError("cannot write '" + p.string() + "'");
  out << content;
}

std::string dump(const ordered_json& j) { return j.dump(2) + "\n"; }

// ---------------------------------------------------------------- run context

struct Run {
  std::string subcommand;
  ordered_json config = ordered_json::object();
  std::optional<std::string> out_dir;
  std::uint64_t seed = 1;
  std::vector<std::string> outputs;
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();

  void emit(const std::string& name, const std::string& content) {
    if (!out_dir) return;
    write_file(fs::path(*out_dir) / name, content);
    outputs.push_back(name);
  }

  void finish() {
    if (!out_dir) return;
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    ordered_json m;
    m["subcommand"] = subcommand;
    m["config_hash"] = hex(fnv1a(config.dump()));
    m["master_seed"] = seed;
    m["artifact_version"] = kVersion;
    m["timing_seconds"] = secs;
    m["outputs"] = outputs;
    m["config"] = config;
    write_file(fs::path(*out_dir) / "manifest.json", dump(m));
  }
};

void prepare_out_dir(const std::optional<std::string>& dir) {
  if (!dir) return;
  std::error_code ec;
  fs::create_directories(*dir, ec);
  if (ec || !fs::is_directory(*dir)) throw InputError("cannot create output directory '" + *dir + "'");
}

std::uint64_t resolve_seed(const std::optional<std::uint64_t>& flag, std::uint64_t fallback = 1) {
  if (flag) return *flag;
  if (const char* env = std::getenv("SIMCAL_SEED"); env && *env) {
    char* end = nullptr;
    const unsigned long long v = std::strtoull(env, &end, 10);
    if (*end != '\0') throw InputError("SIMCAL_SEED must be a non-negative integer");
    return v;
  }
  return fallback;
}

// Hash of an input file's bytes, so the config digest pins the data too.
std::string content_hash(const std::string& path) { return hex(fnv1a(read_file(path))); }

// ---------------------------------------------------------------- parsing helpers

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cell;
  std::stringstream ss(s);
  while (std::getline(ss, cell, sep)) {
    cell.erase(0, cell.find_first_not_of(' '));
    cell.erase(cell.find_last_not_of(' ') + 1);
    if (!cell.empty()) out.push_back(cell);
  }
  return out;
}

double to_double(const std::string& s) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || *end != '\0') throw InputError("not a number: '" + s + "'");
  return v;
}

// Comma-separated 1-based indices or column names.
IndexSet parse_index_set(const std::string& spec, const Dataset& d) {
  IndexSet out;
  for (const auto& tok : split(spec, ',')) {
    const auto it = std::find(d.column_names.begin(), d.column_names.end(), tok);
    if (it != d.column_names.end()) {
      out.push_back(static_cast<int>(it - d.column_names.begin()));
      continue;
    }
    char* end = nullptr;
    const long v = std::strtol(tok.c_str(), &end, 10);
    if (*end != '\0') throw InputError("unknown column '" + tok + "'");
    if (v < 1 || v > d.p()) throw InputError("index " + tok + " outside 1.." + std::to_string(d.p()));
    out.push_back(static_cast<int>(v - 1));
  }
  return normalized(out);
}

IndexSet parse_one_based(const std::string& s) {
  IndexSet out;
  for (const auto& tok : split(s, ';')) out.push_back(static_cast<int>(to_double(tok)) - 1);
  return out;
}

// "0.01:0.5:0.01" or "0.05,0.1".
std::vector<double> parse_alpha_grid(const std::string& s) {
  std::vector<double> g;
  const auto parts = split(s, ':');
  if (parts.size() == 3 && s.find(',') == std::string::npos) {
    const double a = to_double(parts[0]), b = to_double(parts[1]), h = to_double(parts[2]);
    if (!(h > 0.0) || b < a) throw InputError("bad alpha range '" + s + "'");
    const int steps = static_cast<int>(std::floor((b - a) / h + 1e-9));
    for (int k = 0; k <= steps; ++k) g.push_back(a + k * h);
  } else {
    for (const auto& t : split(s, ',')) g.push_back(to_double(t));
  }
  if (g.empty()) throw InputError("empty alpha grid");
  return g;
}

struct DataArgs {
  std::string path;
  std::string response = "y";
  std::string family = "linear";
};

void add_data_options(CLI::App* app, DataArgs& a) {
  app->add_option("--data", a.path, "CSV file with a header row")->required();
  app->add_option("--response", a.response, "Name of the response column")->capture_default_str();
  app->add_option("--family", a.family, "linear | binary | poisson")->capture_default_str();
}

Dataset load(const DataArgs& a, Run& run) {
  const Family fam = parse_family(a.family);
  Dataset d = csv::read_dataset(a.path, a.response, fam);
  run.config["data"] = a.path;
  run.config["data_hash"] = content_hash(a.path);
  run.config["response"] = a.response;
  run.config["family"] = to_string(fam);
  return d;
}

struct Common {
  std::optional<std::uint64_t> seed;
  int jobs = 0;
  std::optional<std::string> out;
};

void add_common(CLI::App* app, Common& c, bool with_seed = true) {
  if (with_seed) app->add_option("--seed", c.seed, "Master seed (falls back to SIMCAL_SEED)");
  app->add_option("--jobs", c.jobs, "Worker threads (default: all cores)");
  app->add_option("--out", c.out, "Directory for result files and the run manifest");
}

int jobs_of(const Common& c) { return c.jobs > 0 ? c.jobs : default_jobs(); }

// ---------------------------------------------------------------- test

struct TestArgs {
  DataArgs data;
  Common common;
  std::string restrict_;
  int n_sims = 100;
  std::string variant = "plain";
};

int cmd_test(const TestArgs& a) {
  Run run;
  run.subcommand = "test";
  run.seed = resolve_seed(a.common.seed);
  prepare_out_dir(a.common.out);
  run.out_dir = a.common.out;
  const Dataset d = load(a.data, run);
  const IndexSet A = parse_index_set(a.restrict_, d);
  const PValueVariant variant = parse_variant(a.variant);
  run.config["restrict"] = one_based(A);
  run.config["n_sims"] = a.n_sims;
  run.config["variant"] = to_string(variant);
  run.config["seed"] = run.seed;

  PValueOptions opt;
  opt.N = a.n_sims;
  opt.variant = variant;
  opt.jobs = jobs_of(a.common);
  const EmpiricalPValue pv = SimulationCalibration(d).p_value(A, opt, Rng(run.seed));

  ordered_json j;
  j["lambda_obs"] = pv.lambda_obs;
  j["p_value"] = pv.value;
  j["exceed_count"] = pv.exceed_count;
  j["N"] = pv.N;
  j["variant"] = to_string(pv.variant);
  j["estimand"] = to_string(pv.estimand);
  j["restrict"] = one_based(A);
  j["entering"] = one_based(pv.entering);
  j["p_plain"] = pv.plain();
  j["p_plus"] = pv.plus();
  if (pv.mean_calibration_mse) j["mean_calibration_mse"] = *pv.mean_calibration_mse;
  j["lambdas_simulated"] = pv.lambdas_simulated;
  const std::string text = dump(j);
  std::cout << text;
  run.emit("test.json", text);
  run.finish();
  return 0;
}

// ---------------------------------------------------------------- select

struct SelectArgs {
  DataArgs data;
  Common common;
  double alpha = 0.05;
  std::string criterion = "threshold";
  int n_sims = 100;
  std::string variant = "plus";
  int max_steps = 0;
  std::optional<double> survey_alpha;
};

std::string trace_csv(const SelectionResult& r) {
  std::string s = "step,index,lambda,p,pFS\n";
  for (const auto& st : r.steps)
    s += std::to_string(st.step) + "," + join_indices(st.entering) + "," + fmt(st.lambda) + "," +
         fmt(st.p) + "," + fmt(st.pfs) + "\n";
  return s;
}

int cmd_select(const SelectArgs& a) {
  Run run;
  run.subcommand = "select";
  run.seed = resolve_seed(a.common.seed);
  prepare_out_dir(a.common.out);
  run.out_dir = a.common.out;
  const Dataset d = load(a.data, run);

  SelectOptions opt;
  opt.alpha = a.alpha;
  opt.criterion = parse_criterion(a.criterion);
  opt.N = a.n_sims;
  opt.variant = parse_variant(a.variant);
  if (opt.variant == PValueVariant::NaiveUncalibrated)
    throw InputError("select needs a calibrated variant (plain or plus)");
  opt.max_steps = a.max_steps;
  opt.survey_alpha = a.survey_alpha;
  opt.jobs = jobs_of(a.common);
  run.config["alpha"] = opt.alpha;
  run.config["criterion"] = to_string(opt.criterion);
  run.config["n_sims"] = opt.N;
  run.config["variant"] = to_string(opt.variant);
  run.config["max_steps"] = opt.max_steps;
  run.config["survey_alpha"] = a.survey_alpha ? ordered_json(*a.survey_alpha) : ordered_json(nullptr);
  run.config["seed"] = run.seed;

  const SelectionResult r = select(d, opt, Rng(run.seed));

  ordered_json j;
  j["selected"] = one_based(r.selected);
  if (!d.column_names.empty()) {
    ordered_json names = ordered_json::array();
    for (int k : r.selected) names.push_back(d.column_names[static_cast<std::size_t>(k)]);
    j["selected_names"] = names;
  }
  j["criterion"] = to_string(r.criterion);
  j["alpha"] = r.alpha;
  j["survey_alpha"] = r.survey_alpha ? ordered_json(*r.survey_alpha) : ordered_json(nullptr);
  j["halted_at_step"] = r.halted_at_step;
  j["accepted_steps"] = r.accepted;
  j["forwardstop_max_rule"] = r.forwardstop_max;
  j["halt_reason"] = to_string(r.reason);
  j["N"] = r.N;
  j["variant"] = to_string(r.variant);
  j["p_seq"] = r.p_seq;
  j["pfs_seq"] = r.pfs_seq;
  j["entry_lambdas"] = r.entry_lambdas;
  ordered_json steps = ordered_json::array();
  for (const auto& st : r.steps) {
    ordered_json s;
    s["step"] = st.step;
    s["entering"] = one_based(st.entering);
    s["lambda"] = st.lambda;
    s["p"] = st.p;
    s["pfs"] = st.pfs;
    s["exceed_count"] = st.exceed_count;
    steps.push_back(s);
  }
  j["steps"] = steps;
  const std::string text = dump(j);
  std::cout << text;
  run.emit("selection.json", text);
  run.emit("trace.csv", trace_csv(r));
  run.finish();
  return 0;
}

// ---------------------------------------------------------------- path

struct PathArgs {
  DataArgs data;
  Common common;
  int max_steps = 0;
  double lambda_min_ratio = 1e-3;
};

int cmd_path(const PathArgs& a) {
  Run run;
  run.subcommand = "path";
  run.seed = 0;
  prepare_out_dir(a.common.out);
  run.out_dir = a.common.out;
  const Dataset d = load(a.data, run);
  const int steps = a.max_steps > 0 ? a.max_steps : d.p();
  run.config["max_steps"] = steps;
  run.config["lambda_min_ratio"] = a.lambda_min_ratio;
  const auto events = path_entry_order(d, steps, a.lambda_min_ratio);
  std::string s = "step,lambda,indices\n";
  for (const auto& ev : events)
    s += std::to_string(ev.step) + "," + fmt(ev.lambda_entry) + "," + join_indices(ev.entering) + "\n";
  std::cout << s;
  run.emit("path.csv", s);
  run.finish();
  return 0;
}

// ---------------------------------------------------------------- calibrate

struct CalibrateArgs {
  DataArgs data;
  Common common;
  std::string restrict_;
  std::string target_beta;
  std::optional<double> target_sigma;
  int iter_cap = 100;
  bool onestep = false;
};

ordered_json fit_json(const RestrictedFit& f) {
  ordered_json j;
  j["beta"] = std::vector<double>(f.beta.data(), f.beta.data() + f.beta.size());
  if (f.sigma) j["sigma"] = *f.sigma;
  return j;
}

int cmd_calibrate(const CalibrateArgs& a) {
  Run run;
  run.subcommand = "calibrate";
  run.seed = resolve_seed(a.common.seed);
  prepare_out_dir(a.common.out);
  run.out_dir = a.common.out;
  const Dataset d = load(a.data, run);
  const IndexSet A = parse_index_set(a.restrict_, d);
  std::vector<double> tb;
  for (const auto& t : split(a.target_beta, ',')) tb.push_back(to_double(t));
  if (tb.size() != A.size() + 1)
    throw InputError("--target-beta needs " + std::to_string(A.size() + 1) + " values (intercept first)");
  run.config["restrict"] = one_based(A);
  run.config["target_beta"] = tb;
  run.config["target_sigma"] = a.target_sigma ? ordered_json(*a.target_sigma) : ordered_json(nullptr);
  run.config["iter_cap"] = a.iter_cap;
  run.config["onestep"] = a.onestep;
  run.config["seed"] = run.seed;

  const RestrictedModel model(d.X, A, d.family);
  const RestrictedFit from = model.fit(d.y);
  RestrictedFit to;
  to.A = A;
  to.family = d.family;
  to.beta = Eigen::Map<const Vector>(tb.data(), static_cast<Eigen::Index>(tb.size()));

  ordered_json j;
  j["family"] = to_string(d.family);
  j["restrict"] = one_based(A);
  j["fit_from"] = fit_json(from);
  Vector out;
  Rng rng(run.seed);
  if (d.family == Family::Linear) {
    if (!a.target_sigma) throw InputError("--target-sigma is required for the linear family");
    to.sigma = *a.target_sigma;
    out = calibrate_linear(d.y, from, to, model.design());
    j["target"] = fit_json(to);
  } else if (a.onestep) {
    out = calibrate_onestep(d.y, model.mean(from.beta), model.mean(to.beta), d.family, rng);
    j["target"] = fit_json(to);
  } else {
    const IterativeCalibration cal = calibrate_iterative(d.y, to.beta, model, rng, a.iter_cap, &from);
    out = cal.y;
    j["target"] = fit_json(to);
    ordered_json t;
    t["iterations"] = cal.trace.iterations;
    t["mse_history"] = cal.trace.mse_history;
    t["rejected_steps"] = cal.trace.rejected_steps;
    t["terminated_by"] = to_string(cal.trace.terminated_by);
    j["trace"] = t;
  }
  try {
    j["fit_calibrated"] = fit_json(model.fit(out));
  } catch (const Error& e) {
    j["fit_calibrated"] = ordered_json{{"error", e.what()}};
  }
  j["calibrated"] = std::vector<double>(out.data(), out.data() + out.size());
  const std::string text = dump(j);
  std::cout << text;
  run.emit("calibrate.json", text);
  run.finish();
  return 0;
}

// ---------------------------------------------------------------- replay

struct ReplayArgs {
  Common common;
  std::optional<std::string> trace;
  std::optional<std::string> p_values;
  std::string alpha_grid = "0.01:0.5:0.01";
  std::string criterion = "threshold";
};

int cmd_replay(const ReplayArgs& a) {
  Run run;
  run.subcommand = "replay";
  run.seed = 0;
  prepare_out_dir(a.common.out);
  run.out_dir = a.common.out;
  if (a.trace.has_value() == a.p_values.has_value())
    throw InputError("give exactly one of --trace or --p-values");

  std::vector<double> p;
  std::vector<IndexSet> entering;
  if (a.trace) {
    std::istringstream in(read_file(*a.trace));
    std::string line;
    if (!std::getline(in, line)) throw InputError("empty trace file");
    const auto header = csv::split_row(line);
    const auto col = [&](const std::string& name) {
      const auto it = std::find(header.begin(), header.end(), name);
      if (it == header.end()) throw InputError("trace file lacks column '" + name + "'");
      return static_cast<std::size_t>(it - header.begin());
    };
    const std::size_t ci = col("index"), cp = col("p");
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const auto cells = csv::split_row(line);
      if (cells.size() != header.size()) throw InputError("malformed trace row");
      entering.push_back(parse_one_based(cells[ci]));
      p.push_back(to_double(cells[cp]));
    }
    run.config["trace_hash"] = content_hash(*a.trace);
  } else {
    for (const auto& t : split(*a.p_values, ',')) p.push_back(to_double(t));
  }
  const HaltCriterion crit = parse_criterion(a.criterion);
  const std::vector<double> grid = parse_alpha_grid(a.alpha_grid);
  run.config["p_seq"] = p;
  run.config["alpha_grid"] = grid;
  run.config["criterion"] = to_string(crit);

  const std::vector<int> steps = replay_selection(p, grid, crit);
  std::string s = entering.empty() ? "alpha,accepted_steps\n" : "alpha,accepted_steps,selected\n";
  for (std::size_t k = 0; k < grid.size(); ++k) {
    s += fmt(grid[k]) + "," + std::to_string(steps[k]);
    if (!entering.empty()) {
      IndexSet sel;
      for (int i = 0; i < steps[k]; ++i)
        for (int v : entering[static_cast<std::size_t>(i)]) sel.push_back(v);
      s += "," + join_indices(sel);
    }
    s += "\n";
  }
  std::cout << s;
  run.emit("replay.csv", s);
  run.finish();
  return 0;
}

// ---------------------------------------------------------------- simulate

const std::vector<std::string> kScenarioKeys = {
    "preset", "study", "n", "p", "rho", "family", "n_active", "snr_target", "N", "n_replicates",
    "alpha_grid", "intercept", "master_seed", "variant", "naive", "survey_alpha", "alpha",
    "criterion", "max_steps"};

ScenarioConfig parse_scenario(const ordered_json& j, std::string& study) {
  if (!j.is_object()) throw InputError("scenario config must be a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it)
    if (std::find(kScenarioKeys.begin(), kScenarioKeys.end(), it.key()) == kScenarioKeys.end())
      throw InputError("unknown scenario key '" + it.key() + "'");
  ScenarioConfig c;
  try {
    if (j.contains("preset")) {
      const std::string p = j["preset"].get<std::string>();
      if (p == "full")
        c = full_preset();
      else if (p != "desk")
        throw InputError("preset must be 'desk' or 'full'");
    }
    study = j.value("study", std::string("null"));
    if (study != "null" && study != "selection") throw InputError("study must be 'null' or 'selection'");
    c.n = j.value("n", c.n);
    c.p = j.value("p", c.p);
    c.rho = j.value("rho", c.rho);
    if (j.contains("family")) c.family = parse_family(j["family"].get<std::string>());
    c.n_active = j.value("n_active", c.n_active);
    c.snr_target = j.value("snr_target", c.snr_target);
    c.N = j.value("N", c.N);
    c.n_replicates = j.value("n_replicates", c.n_replicates);
    if (j.contains("alpha_grid")) c.alpha_grid = j["alpha_grid"].get<std::vector<double>>();
    c.intercept = j.value("intercept", c.intercept);
    c.master_seed = j.value("master_seed", c.master_seed);
    if (j.contains("variant")) c.variant = parse_variant(j["variant"].get<std::string>());
    if (c.variant == PValueVariant::NaiveUncalibrated)
      throw InputError("variant must be plain or plus; use \"naive\": true for the diagnostic");
    c.naive = j.value("naive", c.naive);
    c.survey_alpha = j.value("survey_alpha", c.survey_alpha);
    c.alpha = j.value("alpha", c.alpha);
    if (j.contains("criterion")) c.criterion = parse_criterion(j["criterion"].get<std::string>());
    c.max_steps = j.value("max_steps", c.max_steps);
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("scenario config: ") + e.what());
  }
  return c;
}

ordered_json scenario_json(const ScenarioConfig& c, const std::string& study) {
  ordered_json j;
  j["study"] = study;
  j["n"] = c.n;
  j["p"] = c.p;
  j["rho"] = c.rho;
  j["family"] = to_string(c.family);
  j["n_active"] = c.n_active;
  j["snr_target"] = c.snr_target;
  j["N"] = c.N;
  j["n_replicates"] = c.n_replicates;
  j["alpha_grid"] = c.alpha_grid;
  j["intercept"] = c.intercept;
  j["master_seed"] = c.master_seed;
  j["variant"] = to_string(c.variant);
  j["naive"] = c.naive;
  j["survey_alpha"] = c.survey_alpha;
  j["alpha"] = c.alpha;
  j["criterion"] = to_string(c.criterion);
  j["max_steps"] = c.max_steps;
  return j;
}

ordered_json ks_json(const KsResult& r) { return ordered_json{{"statistic", r.statistic}, {"p_value", r.p_value}}; }

ordered_json null_metrics_json(const ScenarioMetrics& m) {
  ordered_json j;
  j["n_replicates"] = m.replicate_p_values.size();
  j["ks_two_sided"] = ks_json(m.ks_two_sided);
  j["ks_one_sided"] = ks_json(m.ks_one_sided);
  j["ks_one_sided_direction"] = "sup(ECDF - t): small p means the p-values sit below the uniform";
  j["ks_one_sided_lower"] = ks_json(m.ks_lower);
  if (m.naive_ks_two_sided) {
    j["naive_ks_two_sided"] = ks_json(*m.naive_ks_two_sided);
    j["naive_ks_one_sided"] = ks_json(*m.naive_ks_one_sided);
    j["naive_min_p_value"] = *std::min_element(m.naive_p_values.begin(), m.naive_p_values.end());
  }
  j["mean_p_value"] = [&] {
    double s = 0.0;
    for (double v : m.replicate_p_values) s += v;
    return s / static_cast<double>(m.replicate_p_values.size());
  }();
  return j;
}

ordered_json selection_metrics_json(const ScenarioMetrics& m, const ScenarioConfig& c) {
  ordered_json j;
  j["n_replicates"] = m.selection_replicates.size();
  j["alpha"] = c.alpha;
  j["criterion"] = to_string(c.criterion);
  j["fwer"] = m.fwer;
  j["fdr"] = m.fdr;
  j["sensitivity"] = m.sensitivity;
  j["fwer_bound"] = c.alpha + (1.0 - c.alpha) / (c.N + 1.0);
  ordered_json per = ordered_json::array();
  for (const auto& am : m.per_alpha)
    per.push_back({{"alpha", am.alpha},
                   {"criterion", to_string(am.criterion)},
                   {"fwer", am.fwer},
                   {"fdr", am.fdr},
                   {"sensitivity", am.sensitivity}});
  j["per_alpha"] = per;
  return j;
}

std::string qq_csv(std::vector<double> p, std::vector<double> naive) {
  std::sort(p.begin(), p.end());
  std::sort(naive.begin(), naive.end());
  const std::size_t m = p.size();
  std::string s = naive.empty() ? "quantile,p_value\n" : "quantile,p_value,naive_p_value\n";
  for (std::size_t i = 0; i < m; ++i) {
    s += fmt(static_cast<double>(i + 1) / static_cast<double>(m)) + "," + fmt(p[i]);
    if (!naive.empty()) s += "," + fmt(naive[i]);
    s += "\n";
  }
  return s;
}

std::string null_replicates_csv(const ScenarioMetrics& m) {
  const bool naive = !m.naive_p_values.empty();
  std::string s = naive ? "replicate,p_value,exceed_count,lambda_obs,naive_p_value\n"
                        : "replicate,p_value,exceed_count,lambda_obs\n";
  for (const auto& r : m.null_replicates) {
    s += std::to_string(r.replicate) + "," + fmt(r.p_value) + "," + std::to_string(r.exceed_count) + "," +
         fmt(r.lambda_obs);
    if (naive) s += "," + fmt(r.naive_p_value.value_or(1.0));
    s += "\n";
  }
  return s;
}

std::string selection_replicates_csv(const ScenarioMetrics& m) {
  std::string s = "replicate,support\n";
  for (const auto& r : m.selection_replicates)
    s += std::to_string(r.replicate) + "," + join_indices(r.support) + "\n";
  return s;
}

std::string selection_traces_csv(const ScenarioMetrics& m) {
  std::string s = "replicate,step,indices,p\n";
  for (const auto& r : m.selection_replicates)
    for (std::size_t k = 0; k < r.p_seq.size(); ++k)
      s += std::to_string(r.replicate) + "," + std::to_string(k + 1) + "," + join_indices(r.entering[k]) +
           "," + fmt(r.p_seq[k]) + "\n";
  return s;
}

// First-step p-values of a selection study, one per replicate (1 when the
// path was empty).
std::vector<double> first_step_p(const ScenarioMetrics& m) {
  std::vector<double> out;
  for (const auto& r : m.selection_replicates) out.push_back(r.p_seq.empty() ? 1.0 : r.p_seq.front());
  return out;
}

struct SimulateArgs {
  Common common;
  std::string config;
  std::optional<int> n_replicates;
  std::optional<int> n_sims;
};

int cmd_simulate(const SimulateArgs& a) {
  Run run;
  run.subcommand = "simulate";
  if (!a.common.out) throw InputError("simulate needs --out");
  ordered_json raw;
  try {
    raw = ordered_json::parse(read_file(a.config));
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("cannot parse scenario config: ") + e.what());
  }
  std::string study;
  ScenarioConfig c = parse_scenario(raw, study);
  // Flags override the config file.
  if (a.common.seed)
    c.master_seed = *a.common.seed;
  else if (!raw.contains("master_seed"))
    c.master_seed = resolve_seed(std::nullopt, c.master_seed);
  if (a.n_replicates) c.n_replicates = *a.n_replicates;
  if (a.n_sims) c.N = *a.n_sims;
  validate(c);
  prepare_out_dir(a.common.out);
  run.out_dir = a.common.out;
  run.seed = c.master_seed;
  run.config = scenario_json(c, study);
  run.emit("config.json", dump(run.config));

  const int jobs = jobs_of(a.common);
  if (study == "null") {
    const ScenarioMetrics m = run_null_study(c, jobs);
    run.emit("metrics.json", dump(null_metrics_json(m)));
    run.emit("replicate_pvalues.csv", null_replicates_csv(m));
    run.emit("qq.csv", qq_csv(m.replicate_p_values, m.naive_p_values));
  } else {
    const ScenarioMetrics m = run_selection_study(c, jobs);
    run.emit("metrics.json", dump(selection_metrics_json(m, c)));
    run.emit("replicates.csv", selection_replicates_csv(m));
    run.emit("selection_traces.csv", selection_traces_csv(m));
    std::string pv = "replicate,p_value\n";
    const auto first = first_step_p(m);
    for (std::size_t r = 0; r < first.size(); ++r) pv += std::to_string(r) + "," + fmt(first[r]) + "\n";
    run.emit("replicate_pvalues.csv", pv);
    run.emit("qq.csv", qq_csv(first, {}));
  }
  run.finish();
  std::cout << "wrote " << run.outputs.size() + 1 << " files to " << *a.common.out << "\n";
  return 0;
}

// ---------------------------------------------------------------- report

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t col(const std::string& name) const {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw InputError("missing column '" + name + "'");
    return static_cast<std::size_t>(it - header.begin());
  }
};

CsvTable read_csv(const fs::path& p) {
  std::istringstream in(read_file(p));
  CsvTable t;
  std::string line;
  if (!std::getline(in, line)) throw InputError("empty file '" + p.string() + "'");
  t.header = csv::split_row(line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto cells = csv::split_row(line);
    if (cells.size() != t.header.size()) throw InputError("malformed row in '" + p.string() + "'");
    t.rows.push_back(std::move(cells));
  }
  return t;
}

struct ScenarioDir {
  std::string name;
  fs::path dir;
  ScenarioConfig config;
  std::string study;
};

std::vector<ScenarioDir> find_scenarios(const fs::path& root) {
  std::vector<fs::path> dirs;
  if (fs::exists(root / "config.json")) dirs.push_back(root);
  if (fs::is_directory(root))
    for (const auto& e : fs::directory_iterator(root))
      if (e.is_directory() && fs::exists(e.path() / "config.json")) dirs.push_back(e.path());
  std::sort(dirs.begin(), dirs.end());
  std::vector<ScenarioDir> out;
  for (const auto& d : dirs) {
    ScenarioDir s;
    s.dir = d;
    s.name = d == root ? root.filename().string() : d.filename().string();
    ordered_json j;
    try {
      j = ordered_json::parse(read_file(d / "config.json"));
    } catch (const nlohmann::json::exception& e) {
      throw InputError("bad config.json in '" + d.string() + "': " + e.what());
    }
    s.config = parse_scenario(j, s.study);
    validate(s.config);
    out.push_back(std::move(s));
  }
  return out;
}

struct ReportArgs {
  std::string in;
  std::string out;
};

int cmd_report(const ReportArgs& a) {
  Run run;
  run.subcommand = "report";
  run.seed = 0;
  if (!fs::is_directory(a.in)) throw InputError("'" + a.in + "' is not a directory");
  const auto scenarios = find_scenarios(a.in);
  if (scenarios.empty()) throw InputError("no simulate outputs found under '" + a.in + "'");
  prepare_out_dir(a.out);
  run.out_dir = a.out;

  std::size_t n_null = 0;
  for (const auto& s : scenarios) n_null += s.study == "null";
  const double bonf = static_cast<double>(std::max<std::size_t>(n_null, 1));

  ordered_json report = ordered_json::array();
  std::string ks_table =
      "scenario,family,rho,snr,n_replicates,ks_two_sided_p,ks_two_sided_p_bonferroni,ks_one_sided_p,"
      "ks_one_sided_p_bonferroni,naive_ks_two_sided_p\n";
  std::string sel_table = "scenario,family,rho,snr,criterion,alpha,fwer,fdr,sensitivity\n";
  ordered_json inputs = ordered_json::array();

  for (const auto& s : scenarios) {
    ordered_json r;
    r["scenario"] = s.name;
    r["config"] = scenario_json(s.config, s.study);
    inputs.push_back({{"scenario", s.name}, {"config_hash", hex(fnv1a(r["config"].dump()))}});
    if (s.study == "null") {
      const CsvTable t = read_csv(s.dir / "replicate_pvalues.csv");
      ScenarioMetrics m;
      const std::size_t cp = t.col("p_value");
      const bool has_naive =
          std::find(t.header.begin(), t.header.end(), "naive_p_value") != t.header.end();
      for (const auto& row : t.rows) {
        m.replicate_p_values.push_back(to_double(row[cp]));
        if (has_naive) m.naive_p_values.push_back(to_double(row[t.col("naive_p_value")]));
      }
      if (m.replicate_p_values.size() < 5) throw InputError("too few replicates in '" + s.name + "'");
      fill_null_ks(m);
      ordered_json j = null_metrics_json(m);
      j["ks_two_sided"]["p_value_bonferroni"] = std::min(1.0, bonf * m.ks_two_sided.p_value);
      j["ks_one_sided"]["p_value_bonferroni"] = std::min(1.0, bonf * m.ks_one_sided.p_value);
      r["metrics"] = j;
      ks_table += s.name + "," + to_string(s.config.family) + "," + fmt(s.config.rho) + "," +
                  fmt(s.config.snr_target) + "," + std::to_string(m.replicate_p_values.size()) + "," +
                  fmt(m.ks_two_sided.p_value) + "," + fmt(std::min(1.0, bonf * m.ks_two_sided.p_value)) +
                  "," + fmt(m.ks_one_sided.p_value) + "," +
                  fmt(std::min(1.0, bonf * m.ks_one_sided.p_value)) + "," +
                  (m.naive_ks_two_sided ? fmt(m.naive_ks_two_sided->p_value) : std::string()) + "\n";
      run.emit("qq_" + s.name + ".csv", qq_csv(m.replicate_p_values, m.naive_p_values));
    } else {
      const CsvTable reps = read_csv(s.dir / "replicates.csv");
      const CsvTable traces = read_csv(s.dir / "selection_traces.csv");
      ScenarioMetrics m;
      std::map<int, std::size_t> slot;
      for (const auto& row : reps.rows) {
        SelectionReplicate sr;
        sr.replicate = static_cast<int>(to_double(row[reps.col("replicate")]));
        sr.support = normalized(parse_one_based(row[reps.col("support")]));
        slot[sr.replicate] = m.selection_replicates.size();
        m.selection_replicates.push_back(std::move(sr));
      }
      for (const auto& row : traces.rows) {
        const int rep = static_cast<int>(to_double(row[traces.col("replicate")]));
        const auto it = slot.find(rep);
        if (it == slot.end()) throw InputError("trace refers to unknown replicate");
        auto& sr = m.selection_replicates[it->second];
        sr.p_seq.push_back(to_double(row[traces.col("p")]));
        sr.entering.push_back(parse_one_based(row[traces.col("indices")]));
      }
      fill_selection_metrics(m, s.config);
      r["metrics"] = selection_metrics_json(m, s.config);
      for (const auto& am : m.per_alpha)
        sel_table += s.name + "," + to_string(s.config.family) + "," + fmt(s.config.rho) + "," +
                     fmt(s.config.snr_target) + "," + to_string(am.criterion) + "," + fmt(am.alpha) + "," +
                     fmt(am.fwer) + "," + fmt(am.fdr) + "," + fmt(am.sensitivity) + "\n";
    }
    report.push_back(r);
  }
  run.config["inputs"] = inputs;
  run.config["bonferroni_factor"] = bonf;
  ordered_json top;
  top["scenarios"] = report;
  top["bonferroni_factor"] = bonf;
  run.emit("report.json", dump(top));
  run.emit("ks_table.csv", ks_table);
  run.emit("selection_table.csv", sel_table);
  run.finish();
  std::cout << "report for " << scenarios.size() << " scenario(s) written to " << a.out << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Lasso-entry significance tests by simulation-calibration"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  TestArgs ta;
  auto* t = app.add_subcommand("test", "Empirical p-value for the next variable entering after A");
  add_data_options(t, ta.data);
  add_common(t, ta.common);
  t->add_option("--restrict", ta.restrict_, "Set A: comma-separated 1-based indices or column names");
  t->add_option("--n-sims", ta.n_sims, "Number of simulations N")->capture_default_str();
  t->add_option("--variant", ta.variant, "plain | plus | naive")->capture_default_str();

  SelectArgs sa;
  auto* s = app.add_subcommand("select", "Sequential selection with thresholding or ForwardStop");
  add_data_options(s, sa.data);
  add_common(s, sa.common);
  s->add_option("--alpha", sa.alpha, "Level")->capture_default_str();
  s->add_option("--criterion", sa.criterion, "threshold | forwardstop")->capture_default_str();
  s->add_option("--n-sims", sa.n_sims, "Simulations per step")->capture_default_str();
  s->add_option("--variant", sa.variant, "plain | plus")->capture_default_str();
  s->add_option("--max-steps", sa.max_steps, "Step cap (0: min(p, n/2))")->capture_default_str();
  s->add_option("--survey-alpha", sa.survey_alpha, "Record p-values with thresholding at this level");

  PathArgs pa;
  auto* p = app.add_subcommand("path", "Entry order of variables along the Lasso path");
  add_data_options(p, pa.data);
  add_common(p, pa.common, false);
  p->add_option("--max-steps", pa.max_steps, "Number of entry events (0: p)")->capture_default_str();
  p->add_option("--lambda-min-ratio", pa.lambda_min_ratio, "Smallest grid lambda over lambda_max")
      ->capture_default_str();

  CalibrateArgs ca;
  auto* c = app.add_subcommand("calibrate", "Calibrate the response toward target restricted parameters");
  add_data_options(c, ca.data);
  add_common(c, ca.common);
  c->add_option("--restrict", ca.restrict_, "Set A: comma-separated 1-based indices or column names");
  c->add_option("--target-beta", ca.target_beta, "Target coefficients, intercept first")->required();
  c->add_option("--target-sigma", ca.target_sigma, "Target residual sd (linear)");
  c->add_option("--iter-cap", ca.iter_cap, "Iteration cap (GLMs)")->capture_default_str();
  c->add_flag("--onestep", ca.onestep, "Single one-step calibration instead of the iterative loop");

  ReplayArgs ra;
  auto* r = app.add_subcommand("replay", "Re-apply halting rules to recorded p-values over an alpha grid");
  add_common(r, ra.common, false);
  r->add_option("--trace", ra.trace, "trace.csv written by select");
  r->add_option("--p-values", ra.p_values, "Comma-separated p-value sequence");
  r->add_option("--alpha-grid", ra.alpha_grid, "from:to:step or a comma list")->capture_default_str();
  r->add_option("--criterion", ra.criterion, "threshold | forwardstop")->capture_default_str();

  SimulateArgs ma;
  auto* m = app.add_subcommand("simulate", "Run a simulation scenario");
  add_common(m, ma.common);
  m->add_option("--config", ma.config, "Scenario JSON")->required();
  m->add_option("--n-replicates", ma.n_replicates, "Override n_replicates");
  m->add_option("--n-sims", ma.n_sims, "Override N");

  ReportArgs rp;
  auto* rep = app.add_subcommand("report", "Tables and q-q data from simulate outputs");
  rep->add_option("--in", rp.in, "A simulate output directory or a directory of them")->required();
  rep->add_option("--out", rp.out, "Report directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*t) return cmd_test(ta);
    if (*s) return cmd_select(sa);
    if (*p) return cmd_path(pa);
    if (*c) return cmd_calibrate(ca);
    if (*r) return cmd_replay(ra);
    if (*m) return cmd_simulate(ma);
    if (*rep) return cmd_report(rp);
  } catch (const InputError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.is_input_error() ? 2 : 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 2;
}
