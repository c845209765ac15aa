#pragma once

// Runtime monitors evaluated over a finished World: IBFP safety, the two
// persistence conditions, weak-liveness and lock-split deadlock detection.

#include "chain_types.hpp"
#include "network_sim.hpp"
#include "schedule.hpp"

#include <algorithm>
#include <cstdint>
#include <map>
#include <set>
#include <span>
#include <string>
#include <tuple>
#include <vector>

namespace ibftlab {

struct MonitorVerdict {
  std::string property{};
  Outcome outcome = Outcome::inconclusive;
  std::string evidence{};
};

namespace detail {

/// Valid finalised blocks among everything sent, keyed by height then digest.
/// Block validity is judged against any node's chain prefix that reaches the
/// block's parent; the proof against the static validator set.
inline std::map<Height, std::map<Digest, const FinalisedBlock *>> valid_finalised_blocks(const World &w) {
  const ProtocolVariant variant = ProtocolVariant::of(w.config().variant);
  std::vector<ValidatorId> validators;
  for (std::uint32_t i = 0; i < w.config().n; ++i) {
    validators.push_back(ValidatorId{i});
  }
  std::map<Height, std::map<Digest, const FinalisedBlock *>> out;
  std::set<Digest> rejected;
  for (const FinalisedBlockRecord &rec : w.finalised_blocks_sent()) {
    const Height h = rec.fb.block.height;
    const Digest d = hash_block(rec.fb.block);
    if (out[h].contains(d) || rejected.contains(d)) {
      continue;
    }
    bool ok = h > 0 && is_valid_finalisation_proof(rec.fb, validators, variant);
    if (ok) {
      ok = false;
      for (const Node &nd : w.nodes()) {
        const Chain &c = nd.chain();
        if (c.size() >= h && hash_block(c[h - 1].block) == rec.fb.block.parent_digest &&
            is_valid_block(rec.fb.block, std::span<const FinalisedBlock>(c).subspan(0, h), variant)) {
          ok = true;
          break;
        }
      }
    }
    if (ok) {
      out[h][d] = &rec.fb;
    } else {
      rejected.insert(d);
    }
  }
  return out;
}

inline std::string tx_text(const Transaction &tx) {
  return std::to_string(tx.sender) + "/" + std::to_string(tx.nonce) + "/" + payload_text(tx.payload);
}

} // namespace detail

/// No two valid finalised blocks for one height contain different blocks.
inline MonitorVerdict check_ibfp_safety(const World &w) {
  for (const auto &[h, blocks] : detail::valid_finalised_blocks(w)) {
    if (blocks.size() > 1) {
      std::string ev = "h=" + std::to_string(h) + " blocks=";
      bool first = true;
      for (const auto &[d, fb] : blocks) {
        ev += (first ? "" : ",") + d.short_hex();
        first = false;
      }
      return {"ibfp_safety", Outcome::violated, ev};
    }
  }
  return {"ibfp_safety", Outcome::holds, {}};
}

/// Condition (i): honest ledgers never disagree at a position. Condition (ii):
/// every transaction an honest node holds is eventually held by all of them;
/// violated only once the run reached quiescence with a gap.
inline std::pair<MonitorVerdict, MonitorVerdict> check_persistence(const World &w) {
  const auto honest = w.honest_nodes();
  MonitorVerdict first{"persistence_i", Outcome::holds, {}};
  for (std::size_t a = 0; a < honest.size() && first.outcome == Outcome::holds; ++a) {
    for (std::size_t b = a + 1; b < honest.size() && first.outcome == Outcome::holds; ++b) {
      const Chain &ca = w.node(honest[a]).chain();
      const Chain &cb = w.node(honest[b]).chain();
      for (Height h = 1; h < std::min(ca.size(), cb.size()); ++h) {
        const auto &ta = ca[h].block.transactions;
        const auto &tb = cb[h].block.transactions;
        for (std::size_t i = 0; i < std::min(ta.size(), tb.size()); ++i) {
          if (ta[i] != tb[i]) {
            first.outcome = Outcome::violated;
            first.evidence = "pos=" + std::to_string(h) + ":" + std::to_string(i) + " node" +
                             std::to_string(honest[a]) + "=" + detail::tx_text(ta[i]) + " node" +
                             std::to_string(honest[b]) + "=" + detail::tx_text(tb[i]);
            break;
          }
        }
        if (first.outcome == Outcome::violated) {
          break;
        }
      }
    }
  }

  MonitorVerdict second{"persistence_ii", Outcome::holds, {}};
  std::vector<std::set<Transaction>> held(honest.size());
  std::set<Transaction> all;
  for (std::size_t k = 0; k < honest.size(); ++k) {
    for (const FinalisedBlock &fb : w.node(honest[k]).chain()) {
      held[k].insert(fb.block.transactions.begin(), fb.block.transactions.end());
    }
    all.insert(held[k].begin(), held[k].end());
  }
  for (std::size_t k = 0; k < honest.size(); ++k) {
    for (const Transaction &tx : all) {
      if (!held[k].contains(tx)) {
        second.outcome = w.quiescent() ? Outcome::violated : Outcome::inconclusive;
        second.evidence = "node" + std::to_string(honest[k]) + " lacks " + detail::tx_text(tx) +
                          (w.quiescent() ? " at quiescence" : "");
        return {first, second};
      }
    }
  }
  return {first, second};
}

/// Some honest validator produced a valid finalised block for height h.
inline MonitorVerdict check_weak_liveness(const World &w, Height h = 1) {
  const auto valid = detail::valid_finalised_blocks(w);
  auto it = valid.find(h);
  if (it != valid.end()) {
    for (const FinalisedBlockRecord &rec : w.finalised_blocks_sent()) {
      if (!w.byzantine(rec.sender) && rec.fb.block.height == h && it->second.contains(hash_block(rec.fb.block))) {
        return {"weak_liveness", Outcome::holds,
                "h=" + std::to_string(h) + " by=" + std::to_string(rec.sender) + " t=" + std::to_string(rec.t) +
                    " round-changes=" + std::to_string(w.honest_round_changes_sent())};
      }
    }
  }
  return {"weak_liveness", w.quiescent() ? Outcome::violated : Outcome::inconclusive,
          "no honest finalisation for h=" + std::to_string(h)};
}

struct LockSplitReport {
  MonitorVerdict verdict{"lock_split_deadlock", Outcome::holds, {}};
  /// Lock classes ordered by the round in which their block was created.
  std::vector<std::size_t> class_sizes{};
  std::uint64_t threshold = 0;
  std::uint64_t live_byzantine = 0;
};

/// Certifies a lock split: every honest live validator is locked at the same
/// height and no lock class can reach the threshold even with every live
/// Byzantine validator's help. `violated` means deadlock.
inline LockSplitReport check_lock_split_deadlock(const World &w) {
  LockSplitReport rep;
  const ProtocolVariant variant = ProtocolVariant::of(w.config().variant);
  rep.threshold = finalisation_threshold(w.config().n, variant);
  for (std::uint32_t i = 0; i < w.config().n; ++i) {
    if (w.byzantine(i) && !w.crashed(i)) {
      ++rep.live_byzantine;
    }
  }
  const auto honest = w.honest_nodes();
  std::map<std::tuple<Round, Digest>, std::vector<std::uint32_t>> classes;
  std::optional<Height> height;
  bool all_locked = !honest.empty();
  for (std::uint32_t i : honest) {
    const auto &in = w.node(i).instance();
    if (!in || !in->locked_block || (height && *height != in->h)) {
      all_locked = false;
      break;
    }
    height = in->h;
    classes[{in->locked_block->round_created, in->locked_digest}].push_back(i);
  }
  std::string ev;
  bool stuck = all_locked;
  for (const auto &[key, members] : classes) {
    rep.class_sizes.push_back(members.size());
    ev += (ev.empty() ? "" : " ") + std::get<1>(key).short_hex() + "=" + detail::join_ids(members);
    stuck = stuck && members.size() + rep.live_byzantine < rep.threshold;
  }
  if (stuck) {
    std::string sizes;
    for (std::size_t s : rep.class_sizes) {
      sizes += (sizes.empty() ? "" : "/") + std::to_string(s);
    }
    rep.verdict.outcome = Outcome::violated;
    rep.verdict.evidence = "h=" + std::to_string(*height) + " classes=" + sizes + " threshold=" +
                           std::to_string(rep.threshold) + " " + ev;
  } else {
    rep.verdict.evidence = all_locked ? "some class can reach threshold" : "not every honest validator is locked";
  }
  return rep;
}

/// All five monitors in a fixed order.
inline std::vector<MonitorVerdict> evaluate_monitors(const World &w) {
  auto [p1, p2] = check_persistence(w);
  return {p1, p2, check_ibfp_safety(w), check_weak_liveness(w), check_lock_split_deadlock(w).verdict};
}

inline std::string format_verdicts(const std::vector<MonitorVerdict> &vs) {
  std::string out;
  for (const MonitorVerdict &v : vs) {
    out += v.property + "=" + std::string(to_string(v.outcome));
    if (!v.evidence.empty()) {
      out += " evidence=\"" + v.evidence + "\"";
    }
    out += '\n';
  }
  return out;
}

/// Expectations of the schedule that the verdicts fail to meet.
inline std::vector<std::string> unmet_expectations(const Schedule &s, const std::vector<MonitorVerdict> &vs) {
  std::vector<std::string> out;
  for (const Expectation &e : s.expectations) {
    auto it = std::find_if(vs.begin(), vs.end(), [&](const MonitorVerdict &v) { return v.property == e.property; });
    if (it == vs.end() || it->outcome != e.outcome) {
      out.push_back(e.property + " expected " + std::string(to_string(e.outcome)) + " got " +
                    (it == vs.end() ? std::string("none") : std::string(to_string(it->outcome))));
    }
  }
  return out;
}

} // namespace ibftlab
