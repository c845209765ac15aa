#pragma once

// Scripted Byzantine deviations. A Byzantine node still runs the honest state
// machine; the actions below either inject extra messages or rewrite what the
// node sends. Nothing here can sign as another node.

#include "chain_types.hpp"
#include "messages.hpp"

#include <algorithm>
#include <cstdint>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace ibftlab {

enum class ByzActionKind : std::uint8_t {
  wrong_seal_commit, // rewrite own COMMIT(h, r) seals to `to` with length `len`
  crash,             // stop for good at `at`
  silent,            // keep running but send nothing to peers from `at`
  equivocate,        // send an alternate block in own PRE-PREPARE(h, r) to `to`
  send_round_change, // one-shot ROUND-CHANGE(h, r) to every validator
  fuzz,              // random deviations with probability permille/1000
};

inline std::string_view to_string(ByzActionKind k) {
  switch (k) {
  case ByzActionKind::wrong_seal_commit: return "wrong-seal-commit";
  case ByzActionKind::crash: return "crash";
  case ByzActionKind::silent: return "silent";
  case ByzActionKind::equivocate: return "equivocate";
  case ByzActionKind::send_round_change: return "send-round-change";
  case ByzActionKind::fuzz: return "fuzz";
  }
  return "?";
}

inline ByzActionKind parse_byz_action_kind(std::string_view s) {
  for (auto k : {ByzActionKind::wrong_seal_commit, ByzActionKind::crash, ByzActionKind::silent,
                 ByzActionKind::equivocate, ByzActionKind::send_round_change, ByzActionKind::fuzz}) {
    if (to_string(k) == s) {
      return k;
    }
  }
  throw std::invalid_argument("unknown byzantine action: " + std::string(s));
}

struct ByzAction {
  std::uint32_t node = 0;
  SimTime at = 0;
  ByzActionKind kind = ByzActionKind::crash;
  std::optional<Height> h{};
  std::optional<Round> r{};
  std::vector<std::uint32_t> to{}; // empty means every recipient
  std::uint32_t len = kCanonicalSealLength - 1;
  std::uint32_t permille = 250;

  bool targets(std::uint32_t recipient) const {
    return to.empty() || std::find(to.begin(), to.end(), recipient) != to.end();
  }
  bool matches(const ProtocolMessage &m) const {
    return (!h || m.height == *h) && (!r || m.round == *r);
  }
  friend bool operator==(const ByzAction &, const ByzAction &) = default;
};

/// Rules that rewrite outgoing traffic, as opposed to one-shot events.
inline bool is_send_rule(ByzActionKind k) {
  return k == ByzActionKind::wrong_seal_commit || k == ByzActionKind::silent || k == ByzActionKind::equivocate ||
         k == ByzActionKind::fuzz;
}

/// COMMIT(h, r, K(b)) whose seal has a non-canonical length.
inline ProtocolMessage wrong_size_commit(const Digest &d, Height h, Round r, ValidatorId sender, std::uint32_t len) {
  if (len == kCanonicalSealLength) {
    throw std::invalid_argument("wrong-size seal must not have the canonical length");
  }
  CommitSeal cs = sign(d, sender);
  cs.length = len;
  return make_commit(h, r, d, cs, sender);
}

/// A different block that is still valid wherever `b` is.
inline Block alternate_block(const Block &b, std::uint64_t salt) {
  Block alt = b;
  alt.round_created = b.round_created + 1'000'000 + salt;
  return alt;
}

inline Block malformed_block(const Block &b) {
  Block bad = b;
  bad.well_formed_for_proof = false;
  return bad;
}

/// PRE-PREPARE(h, r, b1) to recipients in `side_a`, PRE-PREPARE(h, r, b2) to the rest.
inline std::vector<std::pair<ValidatorId, ProtocolMessage>>
equivocate_preprepare(Height h, Round r, const Block &b1, const Block &b2, const std::set<ValidatorId> &side_a,
                      ValidatorId sender, ValidatorId round_proposer, std::span<const ValidatorId> recipients) {
  if (sender != round_proposer) {
    throw std::invalid_argument("only the round proposer can equivocate a PRE-PREPARE");
  }
  std::vector<std::pair<ValidatorId, ProtocolMessage>> out;
  for (ValidatorId to : recipients) {
    out.emplace_back(to, make_pre_prepare(h, r, side_a.contains(to) ? b1 : b2, sender));
  }
  return out;
}

} // namespace ibftlab
