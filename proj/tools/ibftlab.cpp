// ibftlab command-line driver: run scenarios or schedule files, fuzz, check
// the arithmetic lemmas, export schedules.

#include <ibftlab/ibftlab.hpp>

#include "CLI11.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

namespace fs = std::filesystem;
using namespace ibftlab;

namespace {

enum ExitCode : int {
  kExpectationMet = 0,
  kUnexpectedVerdict = 2,
  kConfigError = 3,
  kIoError = 4,
  kIllegalSchedule = 5,
};

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct CommonFlags {
  std::string variant;
  std::optional<std::uint32_t> n;
  std::optional<SimTime> gst, delta, t0, max_ticks;
  std::optional<std::uint64_t> seed;
  bool commit_as_prepare = false;
  std::string out;

  void add_to(CLI::App *app) {
    app->add_option("--variant", variant, "ibft or ibft-m1");
    app->add_option("--n", n, "number of validators");
    app->add_option("--gst", gst, "global stabilisation time (ticks)");
    app->add_option("--delta", delta, "post-GST delivery bound (ticks)");
    app->add_option("--t0", t0, "round-0 timeout (ticks)");
    app->add_option("--seed", seed, "run seed");
    app->add_option("--max-ticks", max_ticks, "simulation horizon (ticks)");
    app->add_flag("--commit-as-prepare", commit_as_prepare, "count COMMIT messages as PREPAREs");
    app->add_option("--out", out, "output directory (default: $IBFTLAB_TRACE_DIR or ./ibftlab-out)");
  }

  ScenarioOverrides overrides() const {
    ScenarioOverrides o;
    if (!variant.empty()) {
      o.variant = parse_variant(variant);
    }
    o.n = n;
    o.gst = gst;
    o.delta = delta;
    o.t0 = t0;
    o.seed = seed;
    o.max_ticks = max_ticks;
    if (commit_as_prepare) {
      o.commit_as_prepare = true;
    }
    return o;
  }

  fs::path out_dir() const {
    if (!out.empty()) {
      return out;
    }
    if (const char *env = std::getenv("IBFTLAB_TRACE_DIR"); env && *env) {
      return env;
    }
    return "ibftlab-out";
  }
};

void write_file(const fs::path &p, const std::string &text) {
  std::error_code ec;
  fs::create_directories(p.parent_path(), ec);
  std::ofstream f(p, std::ios::binary);
  if (!f) {
    throw IoError("cannot write " + p.string());
  }
  f << text;
  if (!f.flush()) {
    throw IoError("write failed for " + p.string());
  }
}

std::string read_file(const fs::path &p) {
  std::ifstream f(p, std::ios::binary);
  if (!f) {
    throw IoError("cannot read " + p.string());
  }
  std::ostringstream s;
  s << f.rdbuf();
  return s.str();
}

bool is_scenario_name(std::string_view s) {
  return std::find(std::begin(kScenarioNames), std::end(kScenarioNames), s) != std::end(kScenarioNames);
}

/// Loads the schedule for `target`: a scenario name, or a schedule file path.
Schedule load_target(const std::string &target, const CommonFlags &flags, bool &from_file) {
  from_file = !is_scenario_name(target);
  if (!from_file) {
    return build_scenario(target, flags.overrides());
  }
  if (!fs::exists(target)) {
    throw std::invalid_argument("unknown scenario or missing schedule file: " + target);
  }
  Schedule s = parse_schedule(read_file(target));
  ScenarioOverrides o = flags.overrides();
  if (o.variant) s.config.variant = *o.variant;
  if (o.n) s.config.n = *o.n;
  detail::apply_config_overrides(s.config, o);
  return s;
}

std::string stem_for(const Schedule &s) {
  return s.name + "-" + std::string(to_string(s.config.variant)) + "-n" + std::to_string(s.config.n);
}

int cmd_run(const std::string &target, const CommonFlags &flags) {
  bool from_file = false;
  Schedule s = load_target(target, flags, from_file);
  validate_schedule(s);
  const std::string schedule_text = format_schedule(s);
  World w(s);
  w.run();
  const auto verdicts = evaluate_monitors(w);
  const auto unmet = unmet_expectations(s, verdicts);

  const fs::path dir = flags.out_dir();
  const std::string stem = from_file ? fs::path(target).stem().string() : stem_for(s);
  const fs::path schedule_path = dir / (stem + ".schedule");
  const fs::path trace_path = dir / (stem + ".trace");
  const fs::path verdict_path = dir / (stem + ".verdicts");
  if (!from_file || fs::absolute(schedule_path) != fs::absolute(target)) {
    write_file(schedule_path, schedule_text);
  }
  write_file(trace_path, w.trace_text());
  write_file(verdict_path, format_verdicts(verdicts));

  const NetworkConfig &c = s.config;
  std::cout << "scenario=" << s.name << '\n'
            << "variant=" << to_string(c.variant) << '\n'
            << "n=" << c.n << " byzantine=" << detail::join_ids(c.byzantine) << " gst=" << c.gst
            << " delta=" << c.delta << " t0=" << c.t0 << " seed=" << c.seed << '\n'
            << "stop=" << to_string(*w.stop_reason()) << " end=" << w.now() << '\n';
  for (const auto &a : w.appends()) {
    if (!w.byzantine(a.node)) {
      std::cout << "append t=" << a.t << " node=" << a.node << " h=" << a.height << " block=" << a.digest.short_hex()
                << '\n';
    }
  }
  std::cout << format_verdicts(verdicts);
  for (const auto &u : unmet) {
    std::cout << "unmet=\"" << u << "\"\n";
  }
  std::cout << "expectation=" << (unmet.empty() ? "met" : "unmet") << '\n'
            << "schedule=" << schedule_path.string() << '\n'
            << "trace=" << trace_path.string() << '\n'
            << "verdicts=" << verdict_path.string() << '\n';
  const int code = unmet.empty() ? kExpectationMet : kUnexpectedVerdict;
  std::cout << "exit=" << code << '\n';
  return code;
}

int cmd_fuzz(const CommonFlags &flags, std::uint64_t runs, unsigned threads) {
  const VariantName v = flags.variant.empty() ? VariantName::ibft_m1 : parse_variant(flags.variant);
  const std::uint32_t n = flags.n.value_or(4);
  if (n < 4) {
    throw std::invalid_argument("fuzz needs n >= 4");
  }
  const std::uint64_t seed = flags.seed.value_or(1);
  const FuzzSummary sum = fuzz_safety(n, v, runs, seed, threads);
  std::cout << "variant=" << to_string(v) << '\n'
            << "n=" << n << " byzantine=" << max_byzantine(ValidatorCount(n)) << " runs=" << sum.runs
            << " seed=" << seed << '\n'
            << "violations=" << sum.safety_violations << '\n'
            << "lock_monotonicity_violations=" << sum.lock_monotonicity_violations << '\n'
            << "commit_implies_lock_violations=" << sum.commit_implies_lock_violations << '\n'
            << "other_invariant_violations=" << sum.other_invariant_violations << '\n'
            << "finalised_runs=" << sum.finalised_runs << '\n';
  if (sum.first_counterexample) {
    const fs::path p = flags.out_dir() / ("fuzz-counterexample-" + std::string(to_string(v)) + "-n" +
                                          std::to_string(n) + ".schedule");
    write_file(p, format_schedule(*sum.first_counterexample));
    std::cout << "counterexample_run=" << *sum.first_counterexample_run << '\n'
              << "counterexample=" << p.string() << '\n';
  }
  const bool clean = sum.safety_violations == 0 && sum.lock_monotonicity_violations == 0 &&
                     sum.commit_implies_lock_violations == 0 && sum.other_invariant_violations == 0;
  const int code = clean ? kExpectationMet : kUnexpectedVerdict;
  std::cout << "exit=" << code << '\n';
  return code;
}

int cmd_lemmas(std::uint64_t lo, std::uint64_t hi) {
  if (lo == 0 || lo > hi) {
    throw std::invalid_argument("lemma range must satisfy 1 <= lo <= hi");
  }
  for (LemmaId id : kAllLemmas) {
    const std::uint64_t from = std::max(lo, lemma_domain_min(id));
    if (from > hi) {
      std::cout << "lemma=" << lemma_name(id) << " range=empty result=skipped\n";
      continue;
    }
    const auto failures = check_lemma(id, NRange{from, hi, {}});
    std::cout << "lemma=" << lemma_name(id) << " formula=\"" << lemma_formula(id) << "\" range=" << from << ".."
              << hi << " result=" << (failures.empty() ? "pass" : "fail")
              << " exceptions={" << detail::join_ids(failures) << "}\n";
  }
  return kExpectationMet;
}

int cmd_export(const std::string &target, const CommonFlags &flags) {
  bool from_file = false;
  Schedule s = load_target(target, flags, from_file);
  validate_schedule(s);
  const fs::path p = flags.out_dir() / (stem_for(s) + ".schedule");
  write_file(p, format_schedule(s));
  std::cout << "schedule=" << p.string() << '\n';
  return kExpectationMet;
}

} // namespace

int main(int argc, char **argv) {
  CLI::App app{"IBFT / IBFT-M1 adversarial network simulator"};
  app.require_subcommand(1);

  CommonFlags run_flags, fuzz_flags, export_flags;
  std::string run_target, export_target;
  auto *run = app.add_subcommand("run", "run a named scenario or a schedule file");
  run->add_option("target", run_target, "scenario name or schedule file")->required();
  run_flags.add_to(run);

  std::uint64_t runs = 10000;
  unsigned threads = 0;
  auto *fuzz = app.add_subcommand("fuzz", "randomised safety fuzzing");
  fuzz_flags.add_to(fuzz);
  fuzz->add_option("--runs", runs, "number of runs");
  fuzz->add_option("--threads", threads, "worker threads (0 = hardware concurrency)");

  std::uint64_t lo = 1, hi = 10000;
  auto *lemmas = app.add_subcommand("lemmas", "check the quorum inequalities over a range of n");
  lemmas->add_option("--from", lo, "smallest n");
  lemmas->add_option("--to", hi, "largest n");

  auto *exp = app.add_subcommand("export", "write a scenario's schedule file");
  exp->add_option("target", export_target, "scenario name or schedule file")->required();
  export_flags.add_to(exp);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError &e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kConfigError;
  }

  try {
    if (run->parsed()) return cmd_run(run_target, run_flags);
    if (fuzz->parsed()) return cmd_fuzz(fuzz_flags, runs, threads);
    if (lemmas->parsed()) return cmd_lemmas(lo, hi);
    if (exp->parsed()) return cmd_export(export_target, export_flags);
  } catch (const IoError &e) {
    std::cerr << "error: " << e.what() << '\n';
    return kIoError;
  } catch (const ScheduleParseError &e) {
    std::cerr << "error: unparseable schedule: " << e.what() << '\n';
    return kIllegalSchedule;
  } catch (const IllegalSchedule &e) {
    std::cerr << "error: illegal schedule: " << e.what() << '\n';
    return kIllegalSchedule;
  } catch (const std::invalid_argument &e) {
    std::cerr << "error: " << e.what() << '\n';
    return kConfigError;
  }
  return kConfigError;
}
