#pragma once

// The IBFT(v) and IBFP(h, v) state machines. One Node holds a validator's (or
// standard node's) chain, received-message store and, while a consensus
// instance is running, its InstanceState. Each guarded command is exposed as a
// guard query plus an atomic execute step; the simulator decides which enabled
// command runs next.

#include "chain_types.hpp"
#include "messages.hpp"

#include <algorithm>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace ibftlab {

enum class GuardedCommand : std::uint8_t { igc1, igc2, fpgc1, fpgc2, fpgc3, fpgc4, fpgc5, fpgc6, fpgc7 };

inline std::string_view to_string(GuardedCommand gc) {
  switch (gc) {
  case GuardedCommand::igc1: return "igc1";
  case GuardedCommand::igc2: return "igc2";
  case GuardedCommand::fpgc1: return "fpgc1";
  case GuardedCommand::fpgc2: return "fpgc2";
  case GuardedCommand::fpgc3: return "fpgc3";
  case GuardedCommand::fpgc4: return "fpgc4";
  case GuardedCommand::fpgc5: return "fpgc5";
  case GuardedCommand::fpgc6: return "fpgc6";
  case GuardedCommand::fpgc7: return "fpgc7";
  }
  return "?";
}

inline GuardedCommand parse_guarded_command(std::string_view s) {
  for (auto gc : {GuardedCommand::igc1, GuardedCommand::igc2, GuardedCommand::fpgc1, GuardedCommand::fpgc2,
                  GuardedCommand::fpgc3, GuardedCommand::fpgc4, GuardedCommand::fpgc5, GuardedCommand::fpgc6,
                  GuardedCommand::fpgc7}) {
    if (to_string(gc) == s) {
      return gc;
    }
  }
  if (s == "timer_fpgc6") {
    return GuardedCommand::fpgc6;
  }
  throw std::invalid_argument("unknown guarded command: " + std::string(s));
}

/// Order in which enabled commands run when no schedule override applies.
inline constexpr GuardedCommand kDefaultGuardPriority[] = {
    GuardedCommand::igc1,  GuardedCommand::fpgc4, GuardedCommand::fpgc2,
    GuardedCommand::fpgc3, GuardedCommand::fpgc1, GuardedCommand::fpgc7,
    GuardedCommand::fpgc5, GuardedCommand::fpgc6, GuardedCommand::igc2,
};

/// Parameters shared by every node of a run.
struct ProtocolParams {
  GenesisConfig genesis{};
  ProtocolVariant variant = ProtocolVariant::ibft();
  SimTime t0 = 10;
  bool commit_as_prepare = false;
  std::size_t max_txs_per_block = 16;
};

enum class ActionKind : std::uint8_t { multicast, broadcast_all, start_instance, stop_instance, set_timer, sync_request };

struct Action {
  ActionKind kind = ActionKind::multicast;
  ProtocolMessage message{};
  std::vector<ValidatorId> recipients{};
  Height height = 0;
  Round round = 0;
  SimTime at = 0;
  std::string_view via{};
};

/// What one atomic step produced: outgoing actions and a short trace note.
struct Effects {
  std::vector<Action> actions{};
  std::string note{};

  void append(Effects &&other) {
    for (Action &a : other.actions) {
      actions.push_back(std::move(a));
    }
    if (!other.note.empty()) {
      note += note.empty() ? other.note : " " + other.note;
    }
  }
};

/// Bindings chosen when a guard holds.
struct Witness {
  std::optional<MessageId> message{};
  std::vector<MessageId> commit_set{};
  Round round = 0;
};

struct InstanceState {
  Height h = 0;
  Round r = 0;
  std::optional<Block> locked_block{};
  Digest locked_digest{};
  std::optional<Block> accepted_block{};
  Digest accepted_digest{};
  bool commit_sent = false;
  bool finalised_block_sent = false;
  bool round_already_started = false;
  /// Number of StartNewRound executions in this instance.
  std::uint64_t round_starts = 0;
  std::map<Round, SimTime> round_timer_expiration{};
  std::vector<ValidatorId> validators{};
};

/// T0 * 2^r, saturating.
inline SimTime round_timer_timeout(SimTime t0, Round r) {
  if (r >= 62 || t0 > (std::numeric_limits<SimTime>::max() >> r)) {
    return std::numeric_limits<SimTime>::max() / 2;
  }
  return t0 << r;
}

class Node {
public:
  Node(ValidatorId id, ProtocolParams params)
      : id_(id), params_(std::move(params)), validators_(validator_set(genesis_chain(), params_.genesis)) {
    params_.genesis.validators = validators_;
  }

  ValidatorId id() const noexcept { return id_; }
  const ProtocolParams &params() const noexcept { return params_; }
  const ProtocolVariant &variant() const noexcept { return params_.variant; }
  const Chain &chain() const noexcept { return chain_; }
  Height next_height() const noexcept { return next_height_; }
  const std::optional<InstanceState> &instance() const noexcept { return instance_; }
  const MessageStore &store() const noexcept { return store_; }
  const std::vector<Transaction> &pending_txs() const noexcept { return pending_txs_; }

  /// AV for instance h. The set is static, so every prefix yields the genesis set.
  const std::vector<ValidatorId> &validators_for(Height) const noexcept { return validators_; }

  bool is_validator_for(Height h) const { return contains(validators_for(h), id_); }

  /// proposer(chain[0:h-1], r): round-robin over the validator set, offset by height.
  ValidatorId proposer(Height h, Round r) const {
    const auto vs = validators_for(h);
    return vs[(h + r) % vs.size()];
  }

  void submit_transaction(Transaction tx) { pending_txs_.push_back(std::move(tx)); }

  MessageId receive(ProtocolMessage m) { return store_.insert(std::move(m)); }

  std::uint64_t quorum_threshold(std::size_t n) const { return finalisation_threshold(n, params_.variant); }

  // --- initialisation and procedures -------------------------------------

  Effects ibft_init(SimTime now) {
    if (!chain_.empty()) {
      throw std::logic_error("ibft_init on an initialised node");
    }
    chain_ = genesis_chain();
    nonces_ = expected_nonces(chain_);
    next_height_ = 1;
    Effects fx;
    if (is_validator_for(next_height_)) {
      fx.actions.push_back(Action{.kind = ActionKind::start_instance, .height = next_height_});
      fx.append(fp_init(next_height_, now));
    }
    return fx;
  }

  Effects fp_init(Height h, SimTime now) {
    if (instance_ && instance_->h == h) {
      throw std::logic_error("instance already running for height " + std::to_string(h));
    }
    if (!is_validator_for(h)) {
      throw std::logic_error("node is not a validator for height " + std::to_string(h));
    }
    instance_.emplace();
    instance_->h = h;
    instance_->validators = validators_for(h);
    instance_->locked_block.reset();
    return start_new_round(0, now);
  }

  Effects move_to_new_round(Round r) {
    InstanceState &in = live_instance();
    in.r = r;
    in.round_already_started = false;
    in.accepted_block.reset();
    return {};
  }

  Effects move_and_send_round_change(Round r, std::string_view via) {
    Effects fx = move_to_new_round(r);
    const InstanceState &in = live_instance();
    fx.actions.push_back(multicast(make_round_change(in.h, r, id_), in.validators, via));
    fx.note = "round-change=" + std::to_string(r);
    return fx;
  }

  Effects start_new_round(Round r, SimTime now, std::string_view via = "start") {
    Effects fx = move_to_new_round(r);
    InstanceState &in = live_instance();
    in.round_already_started = true;
    ++in.round_starts;
    in.commit_sent = false;
    in.finalised_block_sent = false;
    const SimTime at = now + round_timer_timeout(params_.t0, r);
    in.round_timer_expiration[r] = at;
    fx.actions.push_back(Action{.kind = ActionKind::set_timer, .height = in.h, .round = r, .at = at, .via = via});
    fx.note = "start-round=" + std::to_string(r);
    if (proposer(in.h, r) == id_) {
      Block b = in.locked_block ? *in.locked_block : create_new_proposed_block(in.h, r);
      fx.note += " propose=" + hash_block(b).short_hex();
      fx.actions.push_back(multicast(make_pre_prepare(in.h, r, std::move(b), id_), in.validators, via));
    }
    return fx;
  }

  /// createNewProposedBlock: pending transactions in arrival order that keep the
  /// sender nonces contiguous, up to max_txs_per_block.
  Block create_new_proposed_block(Height h, Round r) const {
    Block b;
    b.height = h;
    b.parent_digest = hash_block(chain_.at(h - 1).block);
    b.proposer = id_.value;
    b.round_created = r;
    NonceState nonces = nonces_;
    for (const Transaction &tx : pending_txs_) {
      if (b.transactions.size() >= params_.max_txs_per_block) {
        break;
      }
      auto it = nonces.find(tx.sender);
      const std::uint64_t expected = it == nonces.end() ? 0 : it->second;
      if (tx.nonce == expected) {
        nonces[tx.sender] = expected + 1;
        b.transactions.push_back(tx);
      }
    }
    return b;
  }

  /// PM-1: ask peers for the finalised block at next_height.
  std::optional<Action> periodic_sync_tick() const {
    if (!params_.variant.periodic_sync) {
      return std::nullopt;
    }
    return Action{.kind = ActionKind::sync_request, .height = next_height_, .via = "sync"};
  }

  // --- guards -------------------------------------------------------------

  std::optional<Witness> guard_enabled(GuardedCommand gc, SimTime now) const {
    switch (gc) {
    case GuardedCommand::igc1: return guard_igc1();
    case GuardedCommand::igc2: return guard_igc2();
    default: break;
    }
    if (!instance_) {
      return std::nullopt;
    }
    const InstanceState &in = *instance_;
    const auto &vs = in.validators;
    const std::size_t n = vs.size();
    switch (gc) {
    case GuardedCommand::fpgc1: {
      if (in.accepted_block) {
        return std::nullopt;
      }
      auto pp = store_.find_preprepare(in.h, in.r, proposer(in.h, in.r));
      if (!pp) {
        return std::nullopt;
      }
      return Witness{.message = pp};
    }
    case GuardedCommand::fpgc2: {
      if (in.commit_sent || !in.accepted_block) {
        return std::nullopt;
      }
      // Re-locking on the block already locked is a no-op; treat it as disabled.
      if (in.locked_block && in.locked_digest == in.accepted_digest) {
        return std::nullopt;
      }
      if (store_.count_prepares(in.h, in.r, in.accepted_digest, vs, params_.commit_as_prepare) <
          quorum_threshold(n)) {
        return std::nullopt;
      }
      return Witness{};
    }
    case GuardedCommand::fpgc3: {
      if (in.commit_sent || !in.locked_block) {
        return std::nullopt;
      }
      const bool pp = store_.has_preprepare_for(in.h, in.r, *in.locked_block, proposer(in.h, in.r));
      if (pp || store_.count_prepares(in.h, in.r, in.locked_digest, vs, params_.commit_as_prepare) > 0) {
        return Witness{};
      }
      return std::nullopt;
    }
    case GuardedCommand::fpgc4: {
      if (!in.accepted_block || in.finalised_block_sent) {
        return std::nullopt;
      }
      auto cm = store_.find_commit_quorum(in.h, in.r, in.accepted_digest, vs, quorum_threshold(n),
                                          params_.variant.requires_seal_signature);
      if (!cm) {
        return std::nullopt;
      }
      return Witness{.commit_set = std::move(*cm)};
    }
    case GuardedCommand::fpgc5: {
      const std::uint64_t need = max_byzantine(ValidatorCount(n)) + 1;
      for (Round rc : store_.round_change_rounds(in.h)) {
        if (rc > in.r && store_.count_round_changes(in.h, rc, vs) >= need) {
          return Witness{.round = rc};
        }
      }
      return std::nullopt;
    }
    case GuardedCommand::fpgc6: {
      auto it = in.round_timer_expiration.find(in.r);
      if (it == in.round_timer_expiration.end() || now < it->second) {
        return std::nullopt;
      }
      return Witness{.round = in.r + 1};
    }
    case GuardedCommand::fpgc7: {
      const std::uint64_t need = quorum_threshold(n);
      for (Round rc : store_.round_change_rounds(in.h)) {
        const bool eligible = rc > in.r || (rc == in.r && !in.round_already_started);
        if (eligible && store_.count_round_changes(in.h, rc, vs) >= need) {
          return Witness{.round = rc};
        }
      }
      return std::nullopt;
    }
    default: return std::nullopt;
    }
  }

  /// Enabled commands in priority order.
  std::vector<GuardedCommand> enabled_guards(SimTime now) const {
    std::vector<GuardedCommand> out;
    for (GuardedCommand gc : kDefaultGuardPriority) {
      if (guard_enabled(gc, now)) {
        out.push_back(gc);
      }
    }
    return out;
  }

  // --- command bodies -----------------------------------------------------

  Effects execute(GuardedCommand gc, const Witness &w, SimTime now) {
    if (!guard_enabled(gc, now)) {
      throw std::logic_error(std::string("executing disabled guarded command ") + std::string(to_string(gc)));
    }
    const std::string_view via = to_string(gc);
    switch (gc) {
    case GuardedCommand::igc1: return exec_igc1(*w.message, now);
    case GuardedCommand::igc2: return exec_igc2(*w.message);
    default: break;
    }
    InstanceState &in = live_instance();
    switch (gc) {
    case GuardedCommand::fpgc1: {
      const Block &b = store_.at(*w.message).block();
      const bool lock_ok = !in.locked_block || *in.locked_block == b;
      if (lock_ok && is_valid_block(b, chain_.at(in.h - 1).block, nonces_, params_.variant)) {
        in.accepted_block = b;
        in.accepted_digest = hash_block(b);
        Effects fx;
        fx.note = "accept=" + in.accepted_digest.short_hex();
        fx.actions.push_back(multicast(make_prepare(in.h, in.r, in.accepted_digest, id_), in.validators, via));
        return fx;
      }
      Effects fx = move_and_send_round_change(in.r + 1, via);
      fx.note = std::string(lock_ok ? "reject-invalid " : "reject-locked ") + fx.note;
      return fx;
    }
    case GuardedCommand::fpgc2: {
      in.locked_block = in.accepted_block;
      in.locked_digest = in.accepted_digest;
      return Effects{{}, "lock=" + in.locked_digest.short_hex()};
    }
    case GuardedCommand::fpgc3: {
      Effects fx;
      fx.actions.push_back(multicast(make_commit(in.h, in.r, in.locked_digest, sign(in.locked_digest, id_), id_),
                                     in.validators, via));
      in.commit_sent = true;
      fx.note = "commit=" + in.locked_digest.short_hex();
      return fx;
    }
    case GuardedCommand::fpgc4: {
      in.finalised_block_sent = true;
      bool seals_ok = true;
      std::set<CommitSeal> proof;
      for (MessageId id : w.commit_set) {
        const CommitSeal &cs = store_.at(id).seal();
        seals_ok = seals_ok && cs.length == kCanonicalSealLength;
        proof.insert(cs);
      }
      const bool finalise = !params_.variant.has_seal_size_branch ||
                            (seals_ok && in.accepted_block->well_formed_for_proof);
      if (finalise) {
        in.locked_block = in.accepted_block;
        in.locked_digest = in.accepted_digest;
        Effects fx;
        fx.note = "finalise=" + in.accepted_digest.short_hex();
        fx.actions.push_back(Action{.kind = ActionKind::broadcast_all,
                                    .message = make_finalised_block(FinalisedBlock{*in.accepted_block, proof}),
                                    .via = via});
        return fx;
      }
      Effects fx = move_and_send_round_change(in.r + 1, via);
      in.locked_block.reset();
      fx.note = std::string(seals_ok ? "malformed-block" : "wrong-size-seal") + " unlock " + fx.note;
      return fx;
    }
    case GuardedCommand::fpgc5: return move_and_send_round_change(w.round, via);
    case GuardedCommand::fpgc6: return move_and_send_round_change(in.r + 1, via);
    case GuardedCommand::fpgc7: return start_new_round(w.round, now, via);
    default: throw std::logic_error("unreachable guarded command");
    }
  }

  /// Runs the highest-priority enabled command, if any.
  std::optional<std::pair<GuardedCommand, Effects>> step(SimTime now) {
    for (GuardedCommand gc : kDefaultGuardPriority) {
      if (auto w = guard_enabled(gc, now)) {
        return std::pair{gc, execute(gc, *w, now)};
      }
    }
    return std::nullopt;
  }

private:
  InstanceState &live_instance() {
    if (!instance_) {
      throw std::logic_error("no running consensus instance");
    }
    return *instance_;
  }

  Action multicast(ProtocolMessage m, const std::vector<ValidatorId> &to, std::string_view via) const {
    return Action{.kind = ActionKind::multicast, .message = std::move(m), .recipients = to, .via = via};
  }

  std::optional<Witness> guard_igc1() const {
    if (chain_.empty()) {
      return std::nullopt;
    }
    // Validity at next_height depends only on chain[0:next_height-1], which is
    // fixed until igc1 fires, so a rejected FB stays rejected.
    for (MessageId id : store_.finalised_blocks_at(next_height_)) {
      if (rejected_fbs_.contains(id)) {
        continue;
      }
      if (is_valid_finalised_block(store_.at(id).finalised(), chain_, params_.genesis, params_.variant)) {
        return Witness{.message = id};
      }
      rejected_fbs_.insert(id);
    }
    return std::nullopt;
  }

  std::optional<Witness> guard_igc2() const {
    if (!params_.variant.has_igc2 || chain_.empty()) {
      return std::nullopt;
    }
    auto found = store_.find_old_preprepare(
        next_height_, [this](Height h, Round r) { return proposer(h, r); },
        [this](const ProtocolMessage &m) {
          return m.height < chain_.size() && m.block() == chain_[m.height].block &&
                 contains(validators_for(m.height), id_);
        });
    if (!found) {
      return std::nullopt;
    }
    return Witness{.message = found};
  }

  Effects exec_igc1(MessageId id, SimTime now) {
    const FinalisedBlock fb = store_.at(id).finalised();
    Effects fx;
    fx.note = "append h=" + std::to_string(next_height_) + " block=" + hash_block(fb.block).short_hex();
    chain_.push_back(fb);
    apply_block_nonces(nonces_, fb.block);
    std::erase_if(pending_txs_, [&](const Transaction &tx) {
      auto it = nonces_.find(tx.sender);
      return it != nonces_.end() && tx.nonce < it->second;
    });
    if (instance_ && instance_->h == next_height_) {
      fx.actions.push_back(Action{.kind = ActionKind::stop_instance, .height = next_height_, .via = "igc1"});
      instance_.reset();
    }
    ++next_height_;
    if (is_validator_for(next_height_)) {
      fx.actions.push_back(Action{.kind = ActionKind::start_instance, .height = next_height_, .via = "igc1"});
      fx.append(fp_init(next_height_, now));
    }
    return fx;
  }

  Effects exec_igc2(MessageId id) {
    const ProtocolMessage &pp = store_.at(id);
    const Height h = pp.height;
    const Round r = pp.round;
    const Digest d = hash_block(pp.block());
    Effects fx;
    fx.note = "old-commit h=" + std::to_string(h) + " r=" + std::to_string(r);
    fx.actions.push_back(multicast(make_commit(h, r, d, sign(d, id_), id_), validators_for(h), "igc2"));
    store_.mark_processed(id);
    return fx;
  }

  ValidatorId id_;
  ProtocolParams params_;
  std::vector<ValidatorId> validators_;
  Chain chain_{};
  NonceState nonces_{};
  Height next_height_ = 0;
  std::optional<InstanceState> instance_{};
  MessageStore store_{};
  std::vector<Transaction> pending_txs_{};
  mutable std::set<MessageId> rejected_fbs_{};
};

} // namespace ibftlab
