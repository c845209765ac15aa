#pragma once

// Deterministic discrete-event simulation of an eventually synchronous network.
//
// Events are ordered by (tick, node, event kind, sequence number). At one tick
// and node, crashes go first, then scripted Byzantine sends, node start-up,
// timers and finally message deliveries in envelope-id order. After every event
// the affected node runs enabled guarded commands one at a time until none is
// enabled. Self-addressed messages skip the network and land in the sender's
// store immediately.

#include "byzantine.hpp"
#include "chain_types.hpp"
#include "messages.hpp"
#include "schedule.hpp"
#include "validator.hpp"

#include <algorithm>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <queue>
#include <random>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <tuple>
#include <utility>
#include <vector>

namespace ibftlab {

/// One trace line: `t=<tick> node=<id|*> <kind> k=v ...`.
struct TraceEvent {
  SimTime t = 0;
  std::optional<std::uint32_t> node{};
  std::string kind{};
  std::vector<std::pair<std::string, std::string>> fields{};
  std::string note{};

  std::optional<std::string> get(std::string_view key) const {
    for (const auto &[k, v] : fields) {
      if (k == key) {
        return v;
      }
    }
    for (std::string_view tok : detail::split(note, ' ')) {
      const std::size_t eq = tok.find('=');
      if (eq != std::string_view::npos && tok.substr(0, eq) == key) {
        return std::string(tok.substr(eq + 1));
      }
    }
    return std::nullopt;
  }

  bool has_word(std::string_view word) const {
    for (std::string_view tok : detail::split(note, ' ')) {
      if (tok == word) {
        return true;
      }
    }
    return false;
  }

  std::string render() const {
    std::string out = "t=" + std::to_string(t) + " node=" + (node ? std::to_string(*node) : std::string("*")) + " " + kind;
    for (const auto &[k, v] : fields) {
      out += ' ';
      out += k;
      out += '=';
      out += v;
    }
    if (!note.empty()) {
      out += ' ';
      out += note;
    }
    return out;
  }
};

inline std::string render_trace(const std::vector<TraceEvent> &trace) {
  std::string out;
  for (const TraceEvent &e : trace) {
    out += e.render();
    out += '\n';
  }
  return out;
}

struct Envelope {
  std::uint64_t id = 0;
  ProtocolMessage msg{};
  std::uint32_t sender = 0;
  std::uint32_t recipient = 0;
  SimTime send_time = 0;
  std::optional<SimTime> deliver_at{}; // nullopt: dropped
  std::string via{};
  bool self = false;
  bool delivered = false;
};

struct FinalisedBlockRecord {
  SimTime t = 0;
  std::uint32_t sender = 0;
  FinalisedBlock fb{};
  std::string via{};
};

struct AppendRecord {
  SimTime t = 0;
  std::uint32_t node = 0;
  Height height = 0;
  Digest digest{};
};

struct InvariantCounters {
  std::uint64_t lock_monotonicity = 0;
  std::uint64_t commit_implies_lock = 0;
  std::uint64_t single_commit_per_round = 0;
  std::uint64_t single_finalisation_per_round = 0;
  std::uint64_t unforgeability = 0;

  std::uint64_t total() const {
    return lock_monotonicity + commit_implies_lock + single_commit_per_round + single_finalisation_per_round +
           unforgeability;
  }
};

enum class StopReason : std::uint8_t { max_ticks, stop_ticks, quiescent, converged, height };

inline std::string_view to_string(StopReason r) {
  switch (r) {
  case StopReason::max_ticks: return "max-ticks";
  case StopReason::stop_ticks: return "ticks";
  case StopReason::quiescent: return "quiescent";
  case StopReason::converged: return "converged";
  case StopReason::height: return "height";
  }
  return "?";
}

struct RunOptions {
  bool record_trace = true;
  std::uint64_t max_guard_steps_per_event = 100'000;
};

class World {
public:
  explicit World(Schedule schedule, RunOptions options = {})
      : schedule_(std::move(schedule)), options_(options), rng_(schedule_.config.seed) {
    validate_schedule(schedule_);
    const NetworkConfig &c = schedule_.config;
    ProtocolParams params;
    for (std::uint32_t i = 0; i < c.n; ++i) {
      params.genesis.validators.push_back(ValidatorId{i});
    }
    params.variant = ProtocolVariant::of(c.variant);
    params.t0 = c.t0;
    params.commit_as_prepare = c.commit_as_prepare;
    params.max_txs_per_block = c.max_txs;
    for (std::uint32_t i = 0; i < c.n; ++i) {
      nodes_.emplace_back(ValidatorId{i}, params);
    }
    crashed_.assign(c.n, false);
    rules_.resize(c.n);
    for (const TxDirective &t : schedule_.txs) {
      nodes_[t.node].submit_transaction(t.tx);
    }
    for (std::size_t i = 0; i < schedule_.byzantine.size(); ++i) {
      const ByzAction &a = schedule_.byzantine[i];
      if (is_send_rule(a.kind)) {
        rules_[a.node].push_back(i);
      } else {
        push_event(a.at, a.node, a.kind == ByzActionKind::crash ? EventKind::crash : EventKind::byz, i);
      }
    }
    for (std::uint32_t i = 0; i < c.n; ++i) {
      push_event(0, i, EventKind::init, 0);
    }
    pending_choices_ = schedule_.choices;
    if (params.variant.periodic_sync) {
      next_sync_ = c.sync_period;
    }
  }

  const Schedule &schedule() const noexcept { return schedule_; }
  const NetworkConfig &config() const noexcept { return schedule_.config; }
  const std::vector<Node> &nodes() const noexcept { return nodes_; }
  const Node &node(std::uint32_t i) const { return nodes_.at(i); }
  bool crashed(std::uint32_t i) const { return crashed_.at(i); }
  bool byzantine(std::uint32_t i) const { return schedule_.config.byzantine.contains(i); }
  /// Non-Byzantine and not crashed.
  bool honest(std::uint32_t i) const { return !byzantine(i) && !crashed(i); }
  std::vector<std::uint32_t> honest_nodes() const {
    std::vector<std::uint32_t> out;
    for (std::uint32_t i = 0; i < nodes_.size(); ++i) {
      if (honest(i)) {
        out.push_back(i);
      }
    }
    return out;
  }

  SimTime now() const noexcept { return now_; }
  const std::vector<TraceEvent> &trace() const noexcept { return trace_; }
  std::string trace_text() const { return render_trace(trace_); }
  const std::vector<Envelope> &envelopes() const noexcept { return envelopes_; }
  const std::vector<FinalisedBlockRecord> &finalised_blocks_sent() const noexcept { return fb_sent_; }
  const std::vector<AppendRecord> &appends() const noexcept { return appends_; }
  const InvariantCounters &invariants() const noexcept { return invariants_; }
  std::uint64_t honest_round_changes_sent() const noexcept { return honest_round_changes_; }
  std::optional<StopReason> stop_reason() const noexcept { return stop_reason_; }
  bool quiescent() const noexcept { return stop_reason_ == StopReason::quiescent; }
  /// First sync tick at or after GST, if periodic sync is on.
  std::optional<SimTime> first_sync_after_gst() const {
    if (!ProtocolVariant::of(config().variant).periodic_sync) {
      return std::nullopt;
    }
    const SimTime p = config().sync_period;
    const SimTime k = std::max<SimTime>(1, (config().gst + p - 1) / p);
    return k * p;
  }

  /// True when every honest node holds the same chain and GST has passed.
  bool converged() const {
    if (now_ < config().gst) {
      return false;
    }
    const Chain *ref = nullptr;
    for (std::uint32_t i : honest_nodes()) {
      const Chain &c = nodes_[i].chain();
      if (c.empty()) {
        return false;
      }
      if (!ref) {
        ref = &c;
      } else if (c.size() != ref->size() || c.back().block != ref->back().block) {
        return false;
      }
    }
    return true;
  }

  /// Runs to the stop condition. Throws IllegalSchedule on a runtime legality
  /// breach.
  void run() {
    if (stop_reason_) {
      throw std::logic_error("world already ran");
    }
    const NetworkConfig &c = config();
    SimTime horizon = c.max_ticks;
    if (schedule_.stop.kind == StopKind::ticks) {
      horizon = std::min(horizon, schedule_.stop.value);
    }
    for (;;) {
      const SimTime next_event = queue_.empty() ? kNever : queue_.top().t;
      const bool sync_due = next_sync_ && *next_sync_ <= next_event;
      if (next_event == kNever && !next_sync_) {
        stop_reason_ = StopReason::quiescent;
        break;
      }
      const SimTime t = sync_due ? *next_sync_ : next_event;
      if (t > horizon) {
        stop_reason_ = horizon == c.max_ticks ? StopReason::max_ticks : StopReason::stop_ticks;
        break;
      }
      now_ = t;
      if (sync_due) {
        const bool productive = sync_round();
        next_sync_ = *next_sync_ + c.sync_period;
        if (!productive && queue_.empty()) {
          stop_reason_ = StopReason::quiescent;
          break;
        }
      } else {
        Event ev = queue_.top();
        queue_.pop();
        process(ev);
      }
      if (check_stop()) {
        break;
      }
    }
    if (stop_reason_ == StopReason::quiescent) {
      // Nothing is in flight and nothing is scheduled, so the state is final;
      // report it as of GST at the earliest.
      now_ = std::max(now_, c.gst);
    }
  }

private:
  static constexpr SimTime kNever = std::numeric_limits<SimTime>::max();

  enum class EventKind : std::uint8_t { crash = 0, byz = 1, init = 2, timer = 3, deliver = 4 };

  struct Event {
    SimTime t;
    std::uint32_t node;
    EventKind kind;
    std::uint64_t seq;
    std::uint64_t ref; // envelope index, byz action index
    Height h = 0;
    Round r = 0;

    auto key() const { return std::tie(t, node, kind, seq); }
    bool operator>(const Event &o) const { return key() > o.key(); }
  };

  void push_event(SimTime t, std::uint32_t node, EventKind kind, std::uint64_t ref, Height h = 0, Round r = 0) {
    queue_.push(Event{t, node, kind, next_seq_++, ref, h, r});
  }

  void trace(std::optional<std::uint32_t> node, std::string kind,
             std::vector<std::pair<std::string, std::string>> fields = {}, std::string note = {}) {
    if (!options_.record_trace) {
      return;
    }
    trace_.push_back(TraceEvent{now_, node, std::move(kind), std::move(fields), std::move(note)});
  }

  bool check_stop() {
    switch (schedule_.stop.kind) {
    case StopKind::converged:
      if (converged()) {
        stop_reason_ = StopReason::converged;
        return true;
      }
      return false;
    case StopKind::height: {
      const auto honest = honest_nodes();
      if (!honest.empty() && std::all_of(honest.begin(), honest.end(), [&](std::uint32_t i) {
            return nodes_[i].chain().size() > schedule_.stop.value;
          })) {
        stop_reason_ = StopReason::height;
        return true;
      }
      return false;
    }
    default: return false;
    }
  }

  void process(const Event &ev) {
    switch (ev.kind) {
    case EventKind::crash:
      if (!crashed_[ev.node]) {
        crashed_[ev.node] = true;
        trace(ev.node, "crash");
      }
      return;
    case EventKind::byz: {
      if (crashed_[ev.node]) {
        return;
      }
      const ByzAction &a = schedule_.byzantine[ev.ref];
      if (a.kind == ByzActionKind::send_round_change) {
        const ProtocolMessage m = make_round_change(*a.h, *a.r, ValidatorId{ev.node});
        for (std::uint32_t j = 0; j < nodes_.size(); ++j) {
          if (a.targets(j)) {
            send(ev.node, j, m, "byz");
          }
        }
        run_guards(ev.node);
      }
      return;
    }
    case EventKind::init: {
      if (crashed_[ev.node]) {
        return;
      }
      trace(ev.node, "init");
      Effects fx = nodes_[ev.node].ibft_init(now_);
      apply(ev.node, fx, "init");
      run_guards(ev.node);
      return;
    }
    case EventKind::timer: {
      if (crashed_[ev.node]) {
        return;
      }
      const auto &inst = nodes_[ev.node].instance();
      if (!inst || inst->h != ev.h || inst->r != ev.r) {
        return;
      }
      auto it = inst->round_timer_expiration.find(ev.r);
      if (it == inst->round_timer_expiration.end() || it->second != now_) {
        return;
      }
      trace(ev.node, "timer", {{"h", std::to_string(ev.h)}, {"r", std::to_string(ev.r)}});
      run_guards(ev.node);
      return;
    }
    case EventKind::deliver: deliver(envelopes_[ev.ref]); return;
    }
  }

  void deliver(Envelope &env) {
    env.delivered = true;
    const std::uint32_t j = env.recipient;
    if (crashed_[j]) {
      return;
    }
    trace(j, "deliver", {{"id", std::to_string(env.id)}, {"kind", std::string(to_string(env.msg.kind))},
                         {"h", std::to_string(env.msg.height)}, {"r", std::to_string(env.msg.round)},
                         {"from", std::to_string(env.sender)}});
    nodes_[j].receive(env.msg);
    note_ineligible_commit(j, env);
    if (byzantine(j)) {
      fuzz_react(j, env.msg);
    }
    run_guards(j);
  }

  void note_ineligible_commit(std::uint32_t j, const Envelope &env) {
    if (env.msg.kind != MessageKind::commit || !nodes_[j].variant().requires_seal_signature) {
      return;
    }
    if (recover(env.msg.digest(), env.msg.seal()) != env.msg.signer) {
      trace(j, "fpgc4-ineligible", {{"id", std::to_string(env.id)}, {"h", std::to_string(env.msg.height)},
                                    {"r", std::to_string(env.msg.round)}, {"from", std::to_string(env.sender)},
                                    {"seal", std::to_string(env.msg.seal().length)}});
    }
  }

  // --- guard loop ---------------------------------------------------------

  void run_guards(std::uint32_t i) {
    for (std::uint64_t steps = 0;; ++steps) {
      if (crashed_[i]) {
        return;
      }
      if (steps >= options_.max_guard_steps_per_event) {
        throw std::logic_error("guard loop did not settle at node " + std::to_string(i));
      }
      Node &nd = nodes_[i];
      std::optional<std::pair<GuardedCommand, Witness>> pick;
      for (auto it = pending_choices_.begin(); it != pending_choices_.end(); ++it) {
        if (it->node == i && it->at <= now_) {
          if (auto w = nd.guard_enabled(it->gc, now_)) {
            pick.emplace(it->gc, std::move(*w));
            pending_choices_.erase(it);
            break;
          }
        }
      }
      if (!pick) {
        for (GuardedCommand gc : kDefaultGuardPriority) {
          if (auto w = nd.guard_enabled(gc, now_)) {
            pick.emplace(gc, std::move(*w));
            break;
          }
        }
      }
      if (!pick) {
        return;
      }
      const auto [gc, w] = std::move(*pick);
      fire(i, gc, w);
    }
  }

  void fire(std::uint32_t i, GuardedCommand gc, const Witness &w) {
    Node &nd = nodes_[i];
    Height h = 0;
    Round r = 0;
    if (gc == GuardedCommand::igc1) {
      h = nd.next_height();
    } else if (gc == GuardedCommand::igc2) {
      h = nd.store().at(*w.message).height;
      r = nd.store().at(*w.message).round;
    } else {
      h = nd.instance()->h;
      r = nd.instance()->r;
    }
    std::optional<Digest> locked_before;
    if (nd.instance() && nd.instance()->locked_block) {
      locked_before = nd.instance()->locked_digest;
    }
    const Height inst_before = nd.instance() ? nd.instance()->h : 0;

    Effects fx = nd.execute(gc, w, now_);
    trace(i, "fire", {{"gc", std::string(to_string(gc))}, {"h", std::to_string(h)}, {"r", std::to_string(r)}},
          fx.note);

    if (gc == GuardedCommand::igc1) {
      const FinalisedBlock &fb = nd.chain().back();
      const Digest d = hash_block(fb.block);
      appends_.push_back(AppendRecord{now_, i, fb.block.height, d});
      trace(i, "append", {{"h", std::to_string(fb.block.height)}, {"block", d.short_hex()},
                          {"txs", std::to_string(fb.block.transactions.size())}});
    }
    if (!byzantine(i) && nd.variant().name == VariantName::ibft_m1 && locked_before && nd.instance() &&
        nd.instance()->h == inst_before) {
      const auto &in = *nd.instance();
      if (!in.locked_block || in.locked_digest != *locked_before) {
        ++invariants_.lock_monotonicity;
        trace(i, "invariant-violation", {{"kind", "lock-monotonicity"}, {"h", std::to_string(in.h)}});
      }
    }
    apply(i, fx, to_string(gc));
  }

  void apply(std::uint32_t i, const Effects &fx, std::string_view via) {
    for (const Action &a : fx.actions) {
      switch (a.kind) {
      case ActionKind::multicast:
        check_honest_send(i, a.message, a.via.empty() ? via : a.via);
        for (ValidatorId to : a.recipients) {
          send(i, to.value, a.message, a.via.empty() ? via : a.via);
        }
        break;
      case ActionKind::broadcast_all:
        check_honest_send(i, a.message, a.via.empty() ? via : a.via);
        for (std::uint32_t j = 0; j < nodes_.size(); ++j) {
          send(i, j, a.message, a.via.empty() ? via : a.via);
        }
        break;
      case ActionKind::set_timer:
        push_event(a.at, i, EventKind::timer, 0, a.height, a.round);
        break;
      case ActionKind::start_instance:
      case ActionKind::stop_instance:
      case ActionKind::sync_request: break;
      }
    }
  }

  /// Invariant bookkeeping on messages an honest state machine emits.
  void check_honest_send(std::uint32_t i, const ProtocolMessage &m, std::string_view via) {
    if (m.kind == MessageKind::finalised_block) {
      const Node &nd = nodes_[i];
      fb_sent_.push_back(FinalisedBlockRecord{now_, i, m.finalised(), std::string(via)});
      if (!byzantine(i) && nd.instance()) {
        if (!fb_rounds_.insert({i, nd.instance()->h, nd.instance()->round_starts}).second) {
          ++invariants_.single_finalisation_per_round;
          trace(i, "invariant-violation", {{"kind", "single-finalisation"}});
        }
      }
      return;
    }
    if (byzantine(i)) {
      return;
    }
    if (m.kind == MessageKind::round_change) {
      ++honest_round_changes_;
    }
    if (m.kind == MessageKind::commit && via != "igc2") {
      const auto &in = nodes_[i].instance();
      if (!in || !in->locked_block || in->locked_digest != m.digest() || in->locked_block->height != m.height) {
        ++invariants_.commit_implies_lock;
        trace(i, "invariant-violation", {{"kind", "commit-implies-lock"}});
      }
      if (in && !commit_rounds_.insert({i, in->h, in->round_starts}).second) {
        ++invariants_.single_commit_per_round;
        trace(i, "invariant-violation", {{"kind", "single-commit"}});
      }
    }
  }

  // --- sending ------------------------------------------------------------

  /// Applies Byzantine rewrite rules of sender i for recipient j. Returns
  /// nullopt when the message is suppressed.
  std::optional<ProtocolMessage> rewrite(std::uint32_t i, std::uint32_t j, ProtocolMessage m) {
    for (std::size_t idx : rules_[i]) {
      const ByzAction &a = schedule_.byzantine[idx];
      if (now_ < a.at) {
        continue;
      }
      switch (a.kind) {
      case ByzActionKind::silent:
        if (i != j) {
          return std::nullopt;
        }
        break;
      case ByzActionKind::wrong_seal_commit:
        if (m.kind == MessageKind::commit && a.matches(m) && a.targets(j)) {
          m = wrong_size_commit(m.digest(), m.height, m.round, ValidatorId{i}, a.len);
        }
        break;
      case ByzActionKind::equivocate:
        if (m.kind == MessageKind::pre_prepare && a.matches(m) && a.targets(j)) {
          m = make_pre_prepare(m.height, m.round, alternate_block(m.block(), 0), ValidatorId{i});
        }
        break;
      case ByzActionKind::fuzz:
        if (i != j) {
          auto out = fuzz_rewrite(i, a.permille, std::move(m));
          if (!out) {
            return std::nullopt;
          }
          m = std::move(*out);
        }
        break;
      default: break;
      }
    }
    return m;
  }

  bool chance(std::uint32_t permille) { return permille > 0 && rng_() % 1000 < permille; }

  std::optional<ProtocolMessage> fuzz_rewrite(std::uint32_t i, std::uint32_t p, ProtocolMessage m) {
    if (chance(p / 2)) {
      return std::nullopt;
    }
    const ValidatorId me{i};
    switch (m.kind) {
    case MessageKind::pre_prepare:
      if (chance(p)) {
        const Block alt = rng_() % 2 == 0 ? alternate_block(m.block(), rng_() % 3) : malformed_block(m.block());
        m = make_pre_prepare(m.height, m.round, alt, me);
      }
      break;
    case MessageKind::prepare:
      if (chance(p / 2)) {
        m = make_prepare(m.height, m.round, random_known_digest(i).value_or(m.digest()), me);
      }
      break;
    case MessageKind::commit:
      if (chance(p)) {
        const Digest d = m.digest();
        switch (rng_() % 3) {
        case 0: m = wrong_size_commit(d, m.height, m.round, me, kCanonicalSealLength - 1); break;
        case 1: {
          CommitSeal cs = sign(random_known_digest(i).value_or(Digest{}), me);
          m = make_commit(m.height, m.round, d, cs, me);
          break;
        }
        default: {
          const Digest other = random_known_digest(i).value_or(d);
          m = make_commit(m.height, m.round, other, sign(other, me), me);
          break;
        }
        }
      }
      break;
    default: break;
    }
    return m;
  }

  /// Digest of some block this node has seen in a PRE-PREPARE.
  std::optional<Digest> random_known_digest(std::uint32_t i) {
    std::vector<Digest> seen;
    for (const auto &e : nodes_[i].store().entries()) {
      if (e.msg.kind == MessageKind::pre_prepare) {
        seen.push_back(hash_block(e.msg.block()));
      }
    }
    if (seen.empty()) {
      return std::nullopt;
    }
    return seen[rng_() % seen.size()];
  }

  /// Fuzzing Byzantine nodes vote for whatever they see and stir round changes.
  void fuzz_react(std::uint32_t j, const ProtocolMessage &m) {
    const ByzAction *rule = nullptr;
    for (std::size_t idx : rules_[j]) {
      const ByzAction &a = schedule_.byzantine[idx];
      if (a.kind == ByzActionKind::fuzz && now_ >= a.at) {
        rule = &a;
      }
    }
    if (!rule) {
      return;
    }
    const ValidatorId me{j};
    if (m.kind == MessageKind::pre_prepare && chance(rule->permille)) {
      const Digest d = hash_block(m.block());
      for (std::uint32_t k = 0; k < nodes_.size(); ++k) {
        if (rng_() % 4 != 0) {
          send_raw(j, k, make_prepare(m.height, m.round, d, me), "fuzz");
        }
      }
      for (std::uint32_t k = 0; k < nodes_.size(); ++k) {
        if (rng_() % 4 != 0) {
          send_raw(j, k, make_commit(m.height, m.round, d, sign(d, me), me), "fuzz");
        }
      }
    }
    if (chance(rule->permille / 4)) {
      const ProtocolMessage rc = make_round_change(m.height, m.round + 1 + rng_() % 2, me);
      for (std::uint32_t k = 0; k < nodes_.size(); ++k) {
        send_raw(j, k, rc, "fuzz");
      }
    }
  }

  void send(std::uint32_t i, std::uint32_t j, const ProtocolMessage &m, std::string_view via) {
    if (crashed_[i]) {
      return;
    }
    if (byzantine(i)) {
      auto out = rewrite(i, j, m);
      if (!out) {
        return;
      }
      send_raw(i, j, std::move(*out), via);
      return;
    }
    send_raw(i, j, m, via);
  }

  std::optional<SimTime> resolve_delivery(const ProtocolMessage &m, std::uint32_t i, std::uint32_t j,
                                          std::string_view via) {
    const NetworkConfig &c = config();
    for (const MessageDirective &d : schedule_.messages) {
      if (d.pattern.matches(m, i, j, now_, via)) {
        switch (d.kind) {
        case DeliveryKind::drop: return std::nullopt;
        case DeliveryKind::deliver_at: return d.value;
        case DeliveryKind::delay: return now_ + d.value;
        }
      }
    }
    if (c.net_jitter == 0) {
      return now_ + 1;
    }
    if (now_ < c.gst) {
      if (chance(c.net_drop_permille)) {
        return std::nullopt;
      }
      const SimTime want = now_ + 1 + rng_() % c.net_jitter;
      return std::min(want, latest_legal_delivery(c, now_));
    }
    return now_ + 1 + rng_() % c.delta;
  }

  void send_raw(std::uint32_t i, std::uint32_t j, ProtocolMessage m, std::string_view via) {
    if (m.is_signed() && m.signer.value != i) {
      ++invariants_.unforgeability;
      throw std::logic_error("node " + std::to_string(i) + " sent a message signed by " + to_string(m.signer));
    }
    Envelope env;
    env.id = envelopes_.size();
    env.sender = i;
    env.recipient = j;
    env.send_time = now_;
    env.via = std::string(via);
    env.self = i == j;
    if (env.self) {
      env.deliver_at = now_;
    } else {
      env.deliver_at = resolve_delivery(m, i, j, via);
      if (!legal_delivery(config(), now_, env.deliver_at)) {
        throw IllegalSchedule("illegal delivery for envelope " + std::to_string(env.id) + " sent at t=" +
                              std::to_string(now_) + " from " + std::to_string(i) + " to " + std::to_string(j));
      }
    }
    env.msg = std::move(m);
    if (options_.record_trace) {
      std::vector<std::pair<std::string, std::string>> f{
          {"id", std::to_string(env.id)},        {"kind", std::string(to_string(env.msg.kind))},
          {"h", std::to_string(env.msg.height)}, {"r", std::to_string(env.msg.round)},
          {"from", std::to_string(i)},           {"to", std::to_string(j)},
          {"via", env.via}};
      switch (env.msg.kind) {
      case MessageKind::pre_prepare: f.emplace_back("block", hash_block(env.msg.block()).short_hex()); break;
      case MessageKind::prepare: f.emplace_back("digest", env.msg.digest().short_hex()); break;
      case MessageKind::commit:
        f.emplace_back("digest", env.msg.digest().short_hex());
        f.emplace_back("seal", std::to_string(env.msg.seal().length));
        break;
      case MessageKind::finalised_block:
        f.emplace_back("block", hash_block(env.msg.finalised().block).short_hex());
        break;
      case MessageKind::round_change: break;
      }
      f.emplace_back("deliver", env.deliver_at ? std::to_string(*env.deliver_at) : std::string("drop"));
      trace(i, "send", std::move(f));
    }
    const std::size_t idx = envelopes_.size();
    envelopes_.push_back(std::move(env));
    Envelope &stored = envelopes_.back();
    if (stored.self) {
      stored.delivered = true;
      nodes_[i].receive(stored.msg);
    } else if (stored.deliver_at) {
      push_event(*stored.deliver_at, j, EventKind::deliver, idx);
    }
  }

  /// Periodic sync: every live node asks for chain[next_height]; each live peer
  /// holding it replies with a FINALISED-BLOCK. Returns whether anyone replied.
  bool sync_round() {
    bool any = false;
    for (std::uint32_t i = 0; i < nodes_.size(); ++i) {
      if (crashed_[i] || nodes_[i].chain().empty()) {
        continue;
      }
      auto req = nodes_[i].periodic_sync_tick();
      if (!req) {
        continue;
      }
      std::vector<std::uint32_t> peers;
      for (std::uint32_t j = 0; j < nodes_.size(); ++j) {
        if (j != i && !crashed_[j] && nodes_[j].chain().size() > req->height) {
          peers.push_back(j);
        }
      }
      if (peers.empty()) {
        continue;
      }
      any = true;
      trace(i, "sync-request", {{"h", std::to_string(req->height)}, {"peers", detail::join_ids(peers)}});
      for (std::uint32_t j : peers) {
        send(j, i, make_finalised_block(nodes_[j].chain()[req->height]), "sync");
      }
    }
    return any;
  }

  Schedule schedule_;
  RunOptions options_;
  std::mt19937_64 rng_;
  std::vector<Node> nodes_{};
  std::vector<bool> crashed_{};
  std::vector<std::vector<std::size_t>> rules_{};
  std::vector<ChooseDirective> pending_choices_{};
  std::priority_queue<Event, std::vector<Event>, std::greater<>> queue_{};
  std::uint64_t next_seq_ = 0;
  SimTime now_ = 0;
  std::optional<SimTime> next_sync_{};
  std::vector<TraceEvent> trace_{};
  std::vector<Envelope> envelopes_{};
  std::vector<FinalisedBlockRecord> fb_sent_{};
  std::vector<AppendRecord> appends_{};
  InvariantCounters invariants_{};
  // Keyed by (node, height, round start count): the latches reset on StartNewRound.
  std::set<std::tuple<std::uint32_t, Height, std::uint64_t>> commit_rounds_{};
  std::set<std::tuple<std::uint32_t, Height, std::uint64_t>> fb_rounds_{};
  std::uint64_t honest_round_changes_ = 0;
  std::optional<StopReason> stop_reason_{};
};

} // namespace ibftlab
