#pragma once

// Helpers shared by the unit tests and the acceptance runner: running a
// schedule, ordered trace matching, and the brute-force quorum overlap oracle.

#include <ibftlab/ibftlab.hpp>

#include <bit>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

namespace ibftlab::testing {

inline World run_schedule(const Schedule &s, RunOptions opts = {}) {
  World w(s, opts);
  w.run();
  return w;
}

inline std::string read_text(const std::string &path) {
  std::ifstream f(path, std::ios::binary);
  std::ostringstream s;
  s << f.rdbuf();
  return s.str();
}

/// One trace line to look for: event kind, optional node, and fields (or note
/// tokens) that must match exactly. A field value of "" only requires the key
/// or word to be present.
struct TracePattern {
  std::string kind;
  std::optional<std::uint32_t> node{};
  std::map<std::string, std::string> fields{};

  bool matches(const TraceEvent &e) const {
    if (e.kind != kind || (node && e.node != node)) {
      return false;
    }
    for (const auto &[k, v] : fields) {
      if (v.empty() ? !(e.has_word(k) || e.get(k).has_value()) : e.get(k) != v) {
        return false;
      }
    }
    return true;
  }

  std::string describe() const {
    std::string out = kind;
    if (node) {
      out += " node=" + std::to_string(*node);
    }
    for (const auto &[k, v] : fields) {
      out += " " + k + (v.empty() ? "" : "=" + v);
    }
    return out;
  }
};

/// A step is satisfied once every pattern matched. Order is checked per node:
/// a pattern for node i must follow node i's matches in earlier steps, and no
/// pattern may precede the first event of the previous step.
struct TraceStep {
  std::string label;
  std::vector<TracePattern> all_of;
};

struct StepMatch {
  bool ok = true;
  std::size_t steps_matched = 0;
  std::string failure{};
};

inline StepMatch match_steps_in_order(const std::vector<TraceEvent> &trace, const std::vector<TraceStep> &steps) {
  StepMatch m;
  std::size_t step_start = 0;
  std::map<std::optional<std::uint32_t>, std::size_t> node_after;
  for (const TraceStep &step : steps) {
    std::size_t first = trace.size();
    std::map<std::optional<std::uint32_t>, std::size_t> next = node_after;
    for (const TracePattern &p : step.all_of) {
      const auto it = node_after.find(p.node);
      const std::size_t from = std::max(step_start, it == node_after.end() ? 0 : it->second);
      std::size_t i = from;
      while (i < trace.size() && !p.matches(trace[i])) {
        ++i;
      }
      if (i == trace.size()) {
        m.ok = false;
        m.failure = "step '" + step.label + "': no '" + p.describe() + "' after line " + std::to_string(from);
        return m;
      }
      first = std::min(first, i);
      next[p.node] = std::max(next[p.node], i + 1);
    }
    node_after = std::move(next);
    step_start = std::max(step_start, first == trace.size() ? step_start : first);
    ++m.steps_matched;
  }
  return m;
}

/// The twelve events of the seal-size safety counterexample for n validators:
/// v0 is the honest validator that finalises B, the last f validators are
/// Byzantine, and the remaining honest ones form W_honest.
inline std::vector<TraceStep> safety_attack_steps(std::uint32_t n) {
  const std::uint32_t f = static_cast<std::uint32_t>(max_byzantine(ValidatorCount(n)));
  std::vector<std::uint32_t> byz, w_honest, honest;
  for (std::uint32_t i = 0; i < n; ++i) {
    if (i >= n - f) {
      byz.push_back(i);
    } else {
      honest.push_back(i);
      if (i != 0) {
        w_honest.push_back(i);
      }
    }
  }
  auto fire = [](std::uint32_t node, std::string gc, std::string r, std::map<std::string, std::string> extra = {}) {
    extra["gc"] = std::move(gc);
    extra["h"] = "1";
    extra["r"] = std::move(r);
    return TracePattern{"fire", node, std::move(extra)};
  };
  auto send = [](std::uint32_t from, std::map<std::string, std::string> fields) {
    fields["from"] = std::to_string(from);
    fields["h"] = "1";
    return TracePattern{"send", from, std::move(fields)};
  };

  std::vector<TraceStep> steps(12);
  steps[0] = {"proposer p0 multicasts PRE-PREPARE(h, 0, B)", {send(1, {{"kind", "PRE-PREPARE"}, {"r", "0"}})}};
  steps[1].label = "every validator accepts B and prepares";
  for (std::uint32_t i = 0; i < n; ++i) {
    steps[1].all_of.push_back(fire(i, "fpgc1", "0", {{"accept", ""}}));
  }
  steps[2].label = "honest validators lock on B and commit";
  for (std::uint32_t i : honest) {
    steps[2].all_of.push_back(fire(i, "fpgc2", "0"));
    steps[2].all_of.push_back(fire(i, "fpgc3", "0"));
  }
  steps[3].label = "Byzantine validators send well-formed COMMIT to v";
  for (std::uint32_t b : byz) {
    steps[3].all_of.push_back(send(b, {{"kind", "COMMIT"}, {"r", "0"}, {"to", "0"}, {"seal", "65"}}));
  }
  steps[4].label = "Byzantine validators send wrong-size seals to W_honest";
  for (std::uint32_t b : byz) {
    for (std::uint32_t w : w_honest) {
      steps[4].all_of.push_back(send(b, {{"kind", "COMMIT"}, {"r", "0"}, {"to", std::to_string(w)}, {"seal", "64"}}));
    }
  }
  steps[5].label = "W_honest unlock and round-change; v finalises B";
  for (std::uint32_t w : w_honest) {
    steps[5].all_of.push_back(fire(w, "fpgc4", "0", {{"wrong-size-seal", ""}, {"round-change", "1"}}));
  }
  steps[5].all_of.push_back(fire(0, "fpgc4", "0", {{"finalise", ""}}));
  steps[6].label = "Byzantine validators send ROUND-CHANGE(h, 1)";
  for (std::uint32_t b : byz) {
    steps[6].all_of.push_back(send(b, {{"kind", "ROUND-CHANGE"}, {"r", "1"}}));
  }
  steps[7].label = "W_honest start round 1";
  for (std::uint32_t w : w_honest) {
    steps[7].all_of.push_back(fire(w, "fpgc7", "1", {{"start-round", "1"}}));
  }
  steps[8] = {"proposer p1 multicasts PRE-PREPARE(h, 1, B')", {send(2, {{"kind", "PRE-PREPARE"}, {"r", "1"}})}};
  steps[9].label = "W accepts B' and prepares";
  for (std::uint32_t i = 1; i < n; ++i) {
    steps[9].all_of.push_back(fire(i, "fpgc1", "1", {{"accept", ""}}));
  }
  steps[10].label = "W_honest lock on B' and commit";
  for (std::uint32_t w : w_honest) {
    steps[10].all_of.push_back(fire(w, "fpgc2", "1"));
    steps[10].all_of.push_back(fire(w, "fpgc3", "1"));
  }
  steps[11].label = "W_honest finalise B'";
  for (std::uint32_t w : w_honest) {
    steps[11].all_of.push_back(fire(w, "fpgc4", "1", {{"finalise", ""}}));
  }
  return steps;
}

/// Minimum number of honest validators shared by two k-subsets of n validators,
/// minimised over every pair of subsets and every placement of f Byzantine
/// validators. Exhaustive; intended for n <= 12.
inline std::uint64_t brute_force_min_honest_overlap(std::uint32_t n, std::uint32_t k, std::uint32_t f) {
  std::vector<std::uint32_t> sets, byz;
  for (std::uint32_t m = 0; m < (1u << n); ++m) {
    const int c = std::popcount(m);
    if (c == static_cast<int>(k)) {
      sets.push_back(m);
    }
    if (c == static_cast<int>(f)) {
      byz.push_back(m);
    }
  }
  std::uint64_t best = n;
  for (std::size_t a = 0; a < sets.size(); ++a) {
    for (std::size_t b = a; b < sets.size(); ++b) {
      const std::uint32_t both = sets[a] & sets[b];
      for (std::uint32_t z : byz) {
        best = std::min<std::uint64_t>(best, std::popcount(both & ~z));
      }
    }
  }
  return best;
}

/// Count of non-igc2 envelopes of a kind for (h, r).
inline std::size_t count_envelopes(const World &w, MessageKind kind, Height h, Round r) {
  std::size_t c = 0;
  for (const Envelope &e : w.envelopes()) {
    if (e.msg.kind == kind && e.msg.height == h && e.msg.round == r && e.via != "igc2") {
      ++c;
    }
  }
  return c;
}

} // namespace ibftlab::testing
