#pragma once

// Scripted counterexample schedules, the happy path, the weak-liveness check
// and the randomised IBFT-M1 safety fuzzer.
//
// Proposers at height 1 are v1 (round 0), v2 (round 1), v3 (round 2), ...

#include "monitors.hpp"
#include "network_sim.hpp"
#include "quorum_math.hpp"
#include "schedule.hpp"

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <functional>
#include <mutex>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

namespace ibftlab {

/// Command-line overrides applied on top of a scenario's defaults.
struct ScenarioOverrides {
  std::optional<VariantName> variant{};
  std::optional<std::uint32_t> n{};
  std::optional<SimTime> gst{};
  std::optional<SimTime> delta{};
  std::optional<SimTime> t0{};
  std::optional<std::uint64_t> seed{};
  std::optional<SimTime> max_ticks{};
  std::optional<bool> commit_as_prepare{};
};

namespace detail {

inline Transaction make_tx(AccountId sender, std::uint64_t nonce, std::string_view payload) {
  return Transaction{sender, nonce, std::vector<std::uint8_t>(payload.begin(), payload.end())};
}

inline std::set<std::uint32_t> id_range(std::uint32_t lo, std::uint32_t hi) {
  std::set<std::uint32_t> out;
  for (std::uint32_t i = lo; i < hi; ++i) {
    out.insert(i);
  }
  return out;
}

inline MessageDirective drop(MessagePattern p) { return MessageDirective{std::move(p), DeliveryKind::drop, 0}; }

inline void apply_config_overrides(NetworkConfig &c, const ScenarioOverrides &o) {
  if (o.gst) c.gst = *o.gst;
  if (o.delta) c.delta = *o.delta;
  if (o.t0) c.t0 = *o.t0;
  if (o.seed) c.seed = *o.seed;
  if (o.max_ticks) c.max_ticks = *o.max_ticks;
  if (o.commit_as_prepare) c.commit_as_prepare = *o.commit_as_prepare;
}

inline void require(bool ok, const std::string &what) {
  if (!ok) {
    throw std::invalid_argument(what);
  }
}

} // namespace detail

/// Honest v0 finalises B from well-formed commits while the other honest
/// validators see wrong-size seals from the Byzantine ones, unlock, and
/// finalise B' one round later.
inline Schedule scenario_safety_attack(std::uint32_t n, VariantName variant) {
  detail::require(n >= 4, "safety-attack needs n >= 4");
  const std::uint32_t f = static_cast<std::uint32_t>(max_byzantine(ValidatorCount(n)));
  const std::uint64_t q = quorum(ValidatorCount(n));
  Schedule s;
  s.name = "safety-attack";
  NetworkConfig &c = s.config;
  c.n = n;
  c.byzantine = detail::id_range(n - f, n);
  c.gst = 100;
  c.delta = 2;
  c.t0 = 10;
  c.variant = variant;
  c.max_ticks = 30;
  s.stop = {StopKind::ticks, 30};
  s.txs.push_back({1, detail::make_tx(100, 0, "T")});
  s.txs.push_back({2, detail::make_tx(100, 0, "T-prime")});
  const auto w_all = detail::id_range(1, n);
  const auto w_honest = detail::id_range(1, n - f);
  for (std::uint32_t b = n - f; b < n; ++b) {
    ByzAction a;
    a.node = b;
    a.at = 0;
    a.kind = ByzActionKind::wrong_seal_commit;
    a.h = 1;
    a.r = 0;
    a.to.assign(w_all.begin(), w_all.end());
    a.len = kCanonicalSealLength - 1;
    s.byzantine.push_back(a);
  }
  s.messages.push_back(detail::drop({.kinds = {MessageKind::commit}, .from = {0}, .to = w_honest, .h = 1, .r = 0,
                                     .before = c.gst}));
  s.messages.push_back(detail::drop({.kinds = {MessageKind::finalised_block}, .from = {0}, .before = c.gst}));
  if (n - 1 - f >= q) {
    // Enough honest commits to fill a quorum alone: hold them back so a
    // wrong-size seal is among the first quorum commits each W node sees.
    s.messages.push_back(MessageDirective{
        {.kinds = {MessageKind::commit}, .from = w_honest, .to = w_honest, .h = 1, .r = 0, .before = c.gst},
        DeliveryKind::delay, 2});
  }
  if (variant == VariantName::ibft) {
    s.expectations = {{"ibfp_safety", Outcome::violated}, {"persistence_i", Outcome::violated}};
  } else {
    s.expectations = {{"ibfp_safety", Outcome::holds}, {"persistence_i", Outcome::holds}};
  }
  return s;
}

/// W = {v1..v3} finalises without v0 hearing anything from W at height 1, then
/// Byzantine v3 crashes. Base IBFT leaves v0 behind for good; IBFT-M1 periodic
/// sync hands it the block after GST.
inline Schedule scenario_partition_persistence(std::uint32_t n, VariantName variant) {
  detail::require(n == 4, "partition-persistence is scripted for n = 4, t = 1");
  Schedule s;
  s.name = "partition-persistence";
  NetworkConfig &c = s.config;
  c.n = n;
  c.byzantine = {n - 1};
  c.gst = 50;
  c.delta = 2;
  c.t0 = 10;
  c.variant = variant;
  c.max_ticks = 400;
  c.sync_period = 20;
  s.stop = {variant == VariantName::ibft ? StopKind::quiescent : StopKind::converged, 0};
  s.txs.push_back({1, detail::make_tx(100, 0, "T")});
  s.messages.push_back(detail::drop({.from = detail::id_range(1, n), .to = {0}, .h = 1, .before = c.gst}));
  ByzAction crash;
  crash.node = n - 1;
  crash.at = 4;
  crash.kind = ByzActionKind::crash;
  s.byzantine.push_back(crash);
  s.expectations = {{"persistence_i", Outcome::holds},
                    {"persistence_ii", variant == VariantName::ibft ? Outcome::violated : Outcome::holds}};
  return s;
}

/// Lock split with one fail-stop fault. V = the last n - Q validators lock B in
/// round 0; W = the first Q validators (holding the round-1 proposer and the
/// faulty node) lock B' in round 1 after the faulty node stops.
inline Schedule scenario_lock_split(std::uint32_t n, VariantName variant, std::string name) {
  detail::require(n >= 4, name + " needs n >= 4");
  const std::uint64_t q = finalisation_threshold(n, ProtocolVariant::of(variant));
  detail::require(n - q < q, name + " needs n - threshold < threshold (n = 6 fails for base IBFT)");
  const std::uint32_t qq = static_cast<std::uint32_t>(q);
  const std::uint32_t faulty = qq - 1 == 2 ? qq - 2 : qq - 1;
  Schedule s;
  s.name = std::move(name);
  NetworkConfig &c = s.config;
  c.n = n;
  c.byzantine = {faulty};
  c.gst = 200;
  c.delta = 2;
  c.t0 = 10;
  c.variant = variant;
  c.max_ticks = 1000;
  s.stop = {StopKind::ticks, 1000};
  s.txs.push_back({1, detail::make_tx(100, 0, "T")});
  s.txs.push_back({2, detail::make_tx(100, 0, "T-prime")});
  s.messages.push_back(detail::drop(
      {.kinds = {MessageKind::prepare}, .to = detail::id_range(0, qq), .h = 1, .r = 0, .before = c.gst}));
  ByzAction crash;
  crash.node = faulty;
  crash.at = 13;
  crash.kind = ByzActionKind::crash;
  s.byzantine.push_back(crash);
  s.expectations = {{"lock_split_deadlock", Outcome::violated}, {"ibfp_safety", Outcome::holds}};
  return s;
}

inline Schedule scenario_liveness_case1(std::uint32_t n) {
  detail::require(n != 6, "liveness-case1 excludes n = 6");
  return scenario_lock_split(n, VariantName::ibft, "liveness-case1");
}

inline Schedule scenario_liveness_case3_m1(std::uint32_t n) {
  return scenario_lock_split(n, VariantName::ibft_m1, "liveness-case3");
}

/// n = 6: V = {v0, v5} lock B in round 0, Z = {v1} locks B' in round 1 and
/// W = {v2, v3, v4} lock B'' in round 2 before faulty v4 stops.
inline Schedule scenario_liveness_case2(std::uint32_t n) {
  detail::require(n == 6, "liveness-case2 is the n = 6 case");
  Schedule s;
  s.name = "liveness-case2";
  NetworkConfig &c = s.config;
  c.n = 6;
  c.byzantine = {4};
  c.gst = 300;
  c.delta = 2;
  c.t0 = 10;
  c.variant = VariantName::ibft;
  c.max_ticks = 1500;
  s.stop = {StopKind::ticks, 1500};
  s.txs.push_back({1, detail::make_tx(100, 0, "T")});
  s.txs.push_back({2, detail::make_tx(100, 0, "T-prime")});
  s.txs.push_back({3, detail::make_tx(100, 0, "T-second")});
  using detail::drop;
  s.messages.push_back(drop({.kinds = {MessageKind::prepare}, .to = {1, 2, 3, 4}, .h = 1, .r = 0, .before = c.gst}));
  s.messages.push_back(drop({.kinds = {MessageKind::prepare}, .to = {2, 3, 4}, .h = 1, .r = 1, .before = c.gst}));
  s.messages.push_back(drop({.kinds = {MessageKind::round_change}, .from = {0, 5}, .h = 1, .r = 2, .before = c.gst}));
  s.messages.push_back(
      drop({.kinds = {MessageKind::round_change}, .from = {0, 1, 5}, .to = {2, 3, 4}, .h = 1, .r = 3, .before = c.gst}));
  ByzAction crash;
  crash.node = 4;
  crash.at = 34;
  crash.kind = ByzActionKind::crash;
  s.byzantine.push_back(crash);
  s.expectations = {{"lock_split_deadlock", Outcome::violated}, {"ibfp_safety", Outcome::holds}};
  return s;
}

inline Schedule scenario_happy_path(std::uint32_t n, VariantName variant) {
  detail::require(n >= 1, "happy-path needs n >= 1");
  Schedule s;
  s.name = "happy-path";
  NetworkConfig &c = s.config;
  c.n = n;
  c.gst = 0;
  c.delta = 2;
  c.t0 = 10;
  c.variant = variant;
  c.max_ticks = 100;
  s.stop = {StopKind::height, 1};
  s.txs.push_back({n > 1 ? 1u : 0u, detail::make_tx(100, 0, "T")});
  s.expectations = {{"ibfp_safety", Outcome::holds}, {"persistence_i", Outcome::holds},
                    {"weak_liveness", Outcome::holds}};
  return s;
}

/// IBFT-M1 with the last f(n) validators crashed from the start.
inline Schedule scenario_weak_liveness(std::uint32_t n, VariantName variant) {
  detail::require(n >= 2, "weak-liveness needs n >= 2");
  const std::uint32_t f = static_cast<std::uint32_t>(max_byzantine(ValidatorCount(n)));
  Schedule s;
  s.name = "weak-liveness";
  NetworkConfig &c = s.config;
  c.n = n;
  c.byzantine = detail::id_range(n - f, n);
  c.gst = 0;
  c.delta = 2;
  c.t0 = 10;
  c.variant = variant;
  c.max_ticks = 100;
  s.stop = {StopKind::height, 1};
  s.txs.push_back({1, detail::make_tx(100, 0, "T")});
  for (std::uint32_t b = n - f; b < n; ++b) {
    ByzAction crash;
    crash.node = b;
    crash.at = 0;
    crash.kind = ByzActionKind::crash;
    s.byzantine.push_back(crash);
  }
  s.expectations = {{"weak_liveness", Outcome::holds}, {"ibfp_safety", Outcome::holds}};
  return s;
}

/// One randomised run: f(n) Byzantine validators with the fuzz deviation set,
/// random pre-GST delays and drops, random GST.
inline Schedule fuzz_schedule(std::uint32_t n, VariantName variant, std::uint64_t seed) {
  detail::require(n >= 4, "fuzzing needs n >= 4");
  std::mt19937_64 rng(seed);
  const std::uint32_t f = static_cast<std::uint32_t>(max_byzantine(ValidatorCount(n)));
  Schedule s;
  s.name = "fuzz";
  NetworkConfig &c = s.config;
  c.n = n;
  std::vector<std::uint32_t> ids(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    ids[i] = i;
  }
  for (std::uint32_t k = 0; k < f; ++k) {
    const std::size_t pick = k + rng() % (n - k);
    std::swap(ids[k], ids[pick]);
    c.byzantine.insert(ids[k]);
  }
  c.gst = rng() % 81;
  c.delta = 3;
  c.t0 = 8;
  c.seed = rng();
  c.variant = variant;
  c.max_ticks = 400;
  c.net_jitter = 1 + rng() % 12;
  c.net_drop_permille = static_cast<std::uint32_t>(rng() % 300);
  s.stop = {StopKind::height, 2};
  for (std::uint32_t i = 0; i < n; ++i) {
    s.txs.push_back({i, detail::make_tx(100, 0, "tx" + std::to_string(i))});
    s.txs.push_back({i, detail::make_tx(200 + i, 0, "own" + std::to_string(i))});
  }
  for (std::uint32_t b : c.byzantine) {
    ByzAction a;
    a.node = b;
    a.at = 0;
    a.kind = ByzActionKind::fuzz;
    a.permille = 150 + static_cast<std::uint32_t>(rng() % 500);
    s.byzantine.push_back(a);
  }
  s.expectations = {{"ibfp_safety", Outcome::holds}};
  return s;
}

struct FuzzSummary {
  std::uint64_t runs = 0;
  std::uint64_t safety_violations = 0;
  std::uint64_t lock_monotonicity_violations = 0;
  std::uint64_t commit_implies_lock_violations = 0;
  std::uint64_t other_invariant_violations = 0;
  std::uint64_t finalised_runs = 0; // runs in which every honest node reached the stop height
  std::optional<Schedule> first_counterexample{};
  std::optional<std::uint64_t> first_counterexample_run{};
};

/// Runs `runs` independent fuzz schedules derived from `seed`, spread over
/// worker threads. The summary does not depend on the thread count.
inline FuzzSummary fuzz_safety(std::uint32_t n, VariantName variant, std::uint64_t runs, std::uint64_t seed,
                               unsigned threads = 0) {
  struct Result {
    bool safety = false;
    std::uint64_t lock = 0, commit = 0, other = 0;
    bool finalised = false;
  };
  std::vector<Result> results(runs);
  std::atomic<std::uint64_t> next{0};
  std::mutex err_mu;
  std::exception_ptr error;
  auto worker = [&] {
    for (;;) {
      const std::uint64_t k = next.fetch_add(1);
      if (k >= runs) {
        return;
      }
      try {
        World w(fuzz_schedule(n, variant, seed * 1'000'003ull + k), RunOptions{.record_trace = false});
        w.run();
        Result &r = results[k];
        r.safety = check_ibfp_safety(w).outcome == Outcome::violated;
        r.lock = w.invariants().lock_monotonicity;
        r.commit = w.invariants().commit_implies_lock;
        r.other = w.invariants().single_commit_per_round + w.invariants().single_finalisation_per_round +
                  w.invariants().unforgeability;
        r.finalised = w.stop_reason() == StopReason::height;
      } catch (...) {
        std::lock_guard lock(err_mu);
        if (!error) {
          error = std::current_exception();
        }
        return;
      }
    }
  };
  if (threads == 0) {
    threads = std::max(1u, std::thread::hardware_concurrency());
  }
  threads = static_cast<unsigned>(std::min<std::uint64_t>(threads, std::max<std::uint64_t>(runs, 1)));
  std::vector<std::thread> pool;
  for (unsigned t = 1; t < threads; ++t) {
    pool.emplace_back(worker);
  }
  worker();
  for (auto &th : pool) {
    th.join();
  }
  if (error) {
    std::rethrow_exception(error);
  }
  FuzzSummary sum;
  sum.runs = runs;
  for (std::uint64_t k = 0; k < runs; ++k) {
    const Result &r = results[k];
    sum.safety_violations += r.safety ? 1 : 0;
    sum.lock_monotonicity_violations += r.lock;
    sum.commit_implies_lock_violations += r.commit;
    sum.other_invariant_violations += r.other;
    sum.finalised_runs += r.finalised ? 1 : 0;
    if ((r.safety || r.lock || r.commit || r.other) && !sum.first_counterexample) {
      sum.first_counterexample = fuzz_schedule(n, variant, seed * 1'000'003ull + k);
      sum.first_counterexample->expectations = {{"ibfp_safety", Outcome::holds}};
      sum.first_counterexample_run = k;
    }
  }
  return sum;
}

inline constexpr std::string_view kScenarioNames[] = {
    "safety-attack", "partition-persistence", "liveness-case1", "liveness-case2",
    "liveness-case3", "happy-path",           "weak-liveness",
};

/// Builds a named scenario, applying overrides. Throws std::invalid_argument
/// for unknown names or parameters outside the scenario's domain.
inline Schedule build_scenario(std::string_view name, const ScenarioOverrides &o) {
  const VariantName v = o.variant.value_or(VariantName::ibft);
  Schedule s;
  if (name == "safety-attack") {
    s = scenario_safety_attack(o.n.value_or(4), v);
  } else if (name == "partition-persistence") {
    s = scenario_partition_persistence(o.n.value_or(4), v);
  } else if (name == "liveness-case1") {
    detail::require(v == VariantName::ibft, "liveness-case1 is the base IBFT case (use liveness-case3 for ibft-m1)");
    s = scenario_liveness_case1(o.n.value_or(7));
  } else if (name == "liveness-case2") {
    detail::require(v == VariantName::ibft, "liveness-case2 is a base IBFT case");
    s = scenario_liveness_case2(o.n.value_or(6));
  } else if (name == "liveness-case3") {
    detail::require(!o.variant || v == VariantName::ibft_m1, "liveness-case3 is the ibft-m1 case");
    s = scenario_liveness_case3_m1(o.n.value_or(4));
  } else if (name == "happy-path") {
    s = scenario_happy_path(o.n.value_or(4), v);
  } else if (name == "weak-liveness") {
    s = scenario_weak_liveness(o.n.value_or(4), o.variant.value_or(VariantName::ibft_m1));
  } else {
    throw std::invalid_argument("unknown scenario: " + std::string(name));
  }
  detail::apply_config_overrides(s.config, o);
  if (o.max_ticks && s.stop.kind == StopKind::ticks) {
    s.stop.value = *o.max_ticks;
  }
  return s;
}

} // namespace ibftlab
