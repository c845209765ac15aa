#pragma once

// Run configuration and adversary schedule, plus the line-oriented text form
// used for export and replay. See README.md for the grammar.

#include "byzantine.hpp"
#include "messages.hpp"
#include "protocol_variant.hpp"
#include "validator.hpp"

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace ibftlab {

/// Thrown for schedules that parse but break the GST/Delta delivery rule or other
/// load-time constraints.
class IllegalSchedule : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Thrown for text that is not a schedule.
class ScheduleParseError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

struct NetworkConfig {
  std::uint32_t n = 4;
  std::set<std::uint32_t> byzantine{};
  SimTime gst = 0;
  SimTime delta = 2;
  SimTime t0 = 10;
  std::uint64_t seed = 1;
  VariantName variant = VariantName::ibft;
  SimTime max_ticks = 1000;
  bool commit_as_prepare = false;
  SimTime sync_period = 20;
  bool failstop = false;
  std::uint32_t max_txs = 16;
  // Randomised network: pre-GST delay in [1, net_jitter] and drops with
  // net_drop_permille; post-GST delay in [1, delta]. Zero jitter means the
  // default one-tick delay everywhere.
  SimTime net_jitter = 0;
  std::uint32_t net_drop_permille = 0;

  friend bool operator==(const NetworkConfig &, const NetworkConfig &) = default;
};

enum class DeliveryKind : std::uint8_t { drop, deliver_at, delay };

struct MessagePattern {
  std::set<MessageKind> kinds{};
  std::set<std::uint32_t> from{};
  std::set<std::uint32_t> to{};
  std::optional<Height> h{};
  std::optional<Round> r{};
  std::optional<SimTime> before{}; // send_time < before
  std::optional<SimTime> after{};  // send_time >= after
  std::optional<std::string> via{};

  bool matches(const ProtocolMessage &m, std::uint32_t sender, std::uint32_t recipient, SimTime send_time,
               std::string_view via_gc) const {
    return (kinds.empty() || kinds.contains(m.kind)) && (from.empty() || from.contains(sender)) &&
           (to.empty() || to.contains(recipient)) && (!h || m.height == *h) &&
           (!r || m.kind == MessageKind::finalised_block || m.round == *r) && (!before || send_time < *before) &&
           (!after || send_time >= *after) && (!via || *via == via_gc);
  }
  friend bool operator==(const MessagePattern &, const MessagePattern &) = default;
};

struct MessageDirective {
  MessagePattern pattern{};
  DeliveryKind kind = DeliveryKind::drop;
  SimTime value = 0; // deliver@value or delay+value
  friend bool operator==(const MessageDirective &, const MessageDirective &) = default;
};

struct ChooseDirective {
  std::uint32_t node = 0;
  SimTime at = 0;
  GuardedCommand gc = GuardedCommand::igc1;
  friend bool operator==(const ChooseDirective &, const ChooseDirective &) = default;
};

struct TxDirective {
  std::uint32_t node = 0;
  Transaction tx{};
  friend bool operator==(const TxDirective &, const TxDirective &) = default;
};

enum class Outcome : std::uint8_t { holds, violated, inconclusive };

inline std::string_view to_string(Outcome o) {
  switch (o) {
  case Outcome::holds: return "holds";
  case Outcome::violated: return "violated";
  case Outcome::inconclusive: return "inconclusive";
  }
  return "?";
}

inline Outcome parse_outcome(std::string_view s) {
  for (auto o : {Outcome::holds, Outcome::violated, Outcome::inconclusive}) {
    if (to_string(o) == s) {
      return o;
    }
  }
  throw std::invalid_argument("unknown outcome: " + std::string(s));
}

inline constexpr std::string_view kProperties[] = {"persistence_i", "persistence_ii", "ibfp_safety", "weak_liveness",
                                                   "lock_split_deadlock"};

struct Expectation {
  std::string property{};
  Outcome outcome = Outcome::holds;
  friend bool operator==(const Expectation &, const Expectation &) = default;
};

enum class StopKind : std::uint8_t { ticks, quiescent, converged, height };

struct StopCondition {
  StopKind kind = StopKind::quiescent;
  std::uint64_t value = 0;
  friend bool operator==(const StopCondition &, const StopCondition &) = default;
};

struct Schedule {
  std::string name = "custom";
  NetworkConfig config{};
  StopCondition stop{};
  std::vector<TxDirective> txs{};
  std::vector<MessageDirective> messages{};
  std::vector<ByzAction> byzantine{};
  std::vector<ChooseDirective> choices{};
  std::vector<Expectation> expectations{};
  friend bool operator==(const Schedule &, const Schedule &) = default;
};

/// Latest legal delivery tick for a message sent at `send_time`.
inline SimTime latest_legal_delivery(const NetworkConfig &c, SimTime send_time) {
  return std::max(send_time, c.gst) + c.delta;
}

inline bool legal_delivery(const NetworkConfig &c, SimTime send_time, std::optional<SimTime> deliver_at) {
  if (!deliver_at) {
    return send_time < c.gst;
  }
  return *deliver_at >= send_time && *deliver_at <= latest_legal_delivery(c, send_time);
}

/// Load-time checks: config sanity, directive legality for every send time the
/// pattern can match, and Byzantine actions only on Byzantine nodes.
inline void validate_schedule(const Schedule &s) {
  const NetworkConfig &c = s.config;
  auto fail = [](const std::string &what) { throw IllegalSchedule(what); };
  if (c.n == 0) {
    fail("n must be >= 1");
  }
  if (c.delta == 0) {
    fail("delta must be >= 1");
  }
  if (c.t0 == 0) {
    fail("t0 must be >= 1");
  }
  if (c.sync_period == 0) {
    fail("sync-period must be >= 1");
  }
  if (c.net_drop_permille > 1000) {
    fail("net-drop must be <= 1000");
  }
  for (std::uint32_t b : c.byzantine) {
    if (b >= c.n) {
      fail("byzantine id out of range: " + std::to_string(b));
    }
  }
  auto check_ids = [&](const std::set<std::uint32_t> &ids, const char *what) {
    for (std::uint32_t v : ids) {
      if (v >= c.n) {
        fail(std::string(what) + " id out of range: " + std::to_string(v));
      }
    }
  };
  for (const MessageDirective &d : s.messages) {
    check_ids(d.pattern.from, "from");
    check_ids(d.pattern.to, "to");
    const SimTime first = d.pattern.after.value_or(0);
    switch (d.kind) {
    case DeliveryKind::drop:
      if (!d.pattern.before || *d.pattern.before > c.gst) {
        fail("drop directive must carry before<=gst (messages sent at or after GST cannot be lost)");
      }
      break;
    case DeliveryKind::deliver_at:
      if (!d.pattern.before || *d.pattern.before == 0) {
        fail("deliver@ directive must carry before>=1");
      }
      if (d.value + 1 < *d.pattern.before) {
        fail("deliver@" + std::to_string(d.value) + " precedes possible send times");
      }
      if (d.value > latest_legal_delivery(c, first)) {
        fail("deliver@" + std::to_string(d.value) + " exceeds max(send,gst)+delta");
      }
      break;
    case DeliveryKind::delay:
      if (d.value > c.delta) {
        if (!d.pattern.before || *d.pattern.before > c.gst || *d.pattern.before - 1 + d.value > c.gst + c.delta) {
          fail("delay+" + std::to_string(d.value) + " exceeds the GST/delta bound");
        }
      }
      break;
    }
  }
  for (const ByzAction &a : s.byzantine) {
    if (a.node >= c.n) {
      fail("byz node out of range: " + std::to_string(a.node));
    }
    const bool allowed = c.byzantine.contains(a.node) || (a.kind == ByzActionKind::crash && c.failstop);
    if (!allowed) {
      fail("byz action " + std::string(to_string(a.kind)) + " on honest node " + std::to_string(a.node));
    }
    if (a.kind == ByzActionKind::wrong_seal_commit && a.len == kCanonicalSealLength) {
      fail("wrong-seal-commit needs len != " + std::to_string(kCanonicalSealLength));
    }
    if (a.permille > 1000) {
      fail("fuzz permille must be <= 1000");
    }
    if (a.kind == ByzActionKind::send_round_change && (!a.h || !a.r)) {
      fail("send-round-change needs h= and r=");
    }
  }
  for (const ChooseDirective &ch : s.choices) {
    if (ch.node >= c.n) {
      fail("choose node out of range");
    }
  }
  for (const TxDirective &t : s.txs) {
    if (t.node >= c.n) {
      fail("tx node out of range");
    }
  }
  for (const Expectation &e : s.expectations) {
    if (std::find(std::begin(kProperties), std::end(kProperties), e.property) == std::end(kProperties)) {
      fail("unknown property in expect: " + e.property);
    }
  }
}

// --- text form ---------------------------------------------------------------

namespace detail {

inline std::string join_ids(const auto &ids) {
  std::string out;
  for (auto v : ids) {
    if (!out.empty()) {
      out += ',';
    }
    out += std::to_string(v);
  }
  return out;
}

inline std::uint64_t parse_u64(std::string_view s, std::string_view what) {
  std::uint64_t v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || p != s.data() + s.size() || s.empty()) {
    throw ScheduleParseError("bad number for " + std::string(what) + ": '" + std::string(s) + "'");
  }
  return v;
}

inline std::uint32_t parse_u32(std::string_view s, std::string_view what) {
  const std::uint64_t v = parse_u64(s, what);
  if (v > 0xFFFFFFFFull) {
    throw ScheduleParseError("number out of range for " + std::string(what));
  }
  return static_cast<std::uint32_t>(v);
}

inline bool parse_bool(std::string_view s, std::string_view what) {
  if (s == "1" || s == "true") {
    return true;
  }
  if (s == "0" || s == "false") {
    return false;
  }
  throw ScheduleParseError("bad boolean for " + std::string(what) + ": '" + std::string(s) + "'");
}

inline std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (start <= s.size()) {
    const std::size_t end = s.find(sep, start);
    const std::size_t stop = end == std::string_view::npos ? s.size() : end;
    if (stop > start) {
      out.push_back(s.substr(start, stop - start));
    }
    if (end == std::string_view::npos) {
      break;
    }
    start = end + 1;
  }
  return out;
}

inline std::set<std::uint32_t> parse_id_set(std::string_view s, std::string_view what) {
  std::set<std::uint32_t> out;
  for (std::string_view part : split(s, ',')) {
    out.insert(parse_u32(part, what));
  }
  return out;
}

inline std::pair<std::string_view, std::string_view> key_value(std::string_view tok) {
  const std::size_t eq = tok.find('=');
  if (eq == std::string_view::npos) {
    throw ScheduleParseError("expected key=value, got '" + std::string(tok) + "'");
  }
  return {tok.substr(0, eq), tok.substr(eq + 1)};
}

inline std::string_view stop_kind_name(StopKind k) {
  switch (k) {
  case StopKind::ticks: return "ticks";
  case StopKind::quiescent: return "quiescent";
  case StopKind::converged: return "converged";
  case StopKind::height: return "height";
  }
  return "?";
}

inline SimTime parse_at(std::string_view tok) {
  if (tok.empty() || tok.front() != '@') {
    throw ScheduleParseError("expected @<tick>, got '" + std::string(tok) + "'");
  }
  return parse_u64(tok.substr(1), "@tick");
}

} // namespace detail

inline std::string format_pattern(const MessagePattern &p) {
  std::string out;
  auto add = [&](std::string_view k, const std::string &v) {
    out += ' ';
    out += k;
    out += '=';
    out += v;
  };
  if (!p.kinds.empty()) {
    std::string ks;
    for (MessageKind k : p.kinds) {
      ks += (ks.empty() ? "" : ",") + std::string(to_string(k));
    }
    add("kind", ks);
  }
  if (!p.from.empty()) add("from", detail::join_ids(p.from));
  if (!p.to.empty()) add("to", detail::join_ids(p.to));
  if (p.h) add("h", std::to_string(*p.h));
  if (p.r) add("r", std::to_string(*p.r));
  if (p.after) add("after", std::to_string(*p.after));
  if (p.before) add("before", std::to_string(*p.before));
  if (p.via) add("via", *p.via);
  return out;
}

inline std::string format_byz_action(const ByzAction &a) {
  std::string out = "byz " + std::to_string(a.node) + " @" + std::to_string(a.at) + " " + std::string(to_string(a.kind));
  if (a.h) out += " h=" + std::to_string(*a.h);
  if (a.r) out += " r=" + std::to_string(*a.r);
  if (!a.to.empty()) out += " to=" + detail::join_ids(a.to);
  if (a.kind == ByzActionKind::wrong_seal_commit) out += " len=" + std::to_string(a.len);
  if (a.kind == ByzActionKind::fuzz) out += " p=" + std::to_string(a.permille);
  return out;
}

inline std::string payload_text(const std::vector<std::uint8_t> &payload) {
  return std::string(payload.begin(), payload.end());
}

inline std::string format_schedule(const Schedule &s) {
  const NetworkConfig &c = s.config;
  std::ostringstream o;
  o << "name " << s.name << '\n';
  o << "n " << c.n << '\n';
  o << "byzantine" << (c.byzantine.empty() ? "" : " " + detail::join_ids(c.byzantine)) << '\n';
  o << "gst " << c.gst << '\n';
  o << "delta " << c.delta << '\n';
  o << "t0 " << c.t0 << '\n';
  o << "seed " << c.seed << '\n';
  o << "variant " << to_string(c.variant) << '\n';
  o << "max-ticks " << c.max_ticks << '\n';
  o << "flags commit-as-prepare=" << (c.commit_as_prepare ? 1 : 0) << " sync-period=" << c.sync_period
    << " failstop=" << (c.failstop ? 1 : 0) << " max-txs=" << c.max_txs << " net-jitter=" << c.net_jitter
    << " net-drop=" << c.net_drop_permille << '\n';
  o << "stop " << detail::stop_kind_name(s.stop.kind);
  if (s.stop.kind == StopKind::ticks || s.stop.kind == StopKind::height) {
    o << '=' << s.stop.value;
  }
  o << '\n';
  for (const TxDirective &t : s.txs) {
    o << "tx " << t.node << ' ' << t.tx.sender << ' ' << t.tx.nonce << ' ' << payload_text(t.tx.payload) << '\n';
  }
  for (const MessageDirective &d : s.messages) {
    o << "msg" << format_pattern(d.pattern) << " -> ";
    switch (d.kind) {
    case DeliveryKind::drop: o << "drop"; break;
    case DeliveryKind::deliver_at: o << "deliver@" << d.value; break;
    case DeliveryKind::delay: o << "delay+" << d.value; break;
    }
    o << '\n';
  }
  for (const ByzAction &a : s.byzantine) {
    o << format_byz_action(a) << '\n';
  }
  for (const ChooseDirective &ch : s.choices) {
    o << "choose " << ch.node << " @" << ch.at << ' ' << to_string(ch.gc) << '\n';
  }
  for (const Expectation &e : s.expectations) {
    o << "expect " << e.property << ' ' << to_string(e.outcome) << '\n';
  }
  return o.str();
}

inline Schedule parse_schedule(std::string_view text) {
  using namespace detail;
  Schedule s;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t nl = text.find('\n', pos);
    std::string_view line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    if (const std::size_t hash = line.find('#'); hash != std::string_view::npos) {
      line = line.substr(0, hash);
    }
    auto toks = split(line, ' ');
    std::erase_if(toks, [](std::string_view t) { return t.find_first_not_of(" \t\r") == std::string_view::npos; });
    for (auto &t : toks) {
      while (!t.empty() && (t.back() == '\r' || t.back() == '\t')) {
        t.remove_suffix(1);
      }
    }
    if (toks.empty()) {
      continue;
    }
    try {
      const std::string_view head = toks[0];
      auto need = [&](std::size_t count) {
        if (toks.size() != count) {
          throw ScheduleParseError("'" + std::string(head) + "' expects " + std::to_string(count - 1) + " argument(s)");
        }
      };
      NetworkConfig &c = s.config;
      if (head == "name") {
        need(2);
        s.name = std::string(toks[1]);
      } else if (head == "n") {
        need(2);
        c.n = parse_u32(toks[1], "n");
      } else if (head == "byzantine") {
        c.byzantine.clear();
        for (std::size_t i = 1; i < toks.size(); ++i) {
          auto ids = parse_id_set(toks[i], "byzantine");
          c.byzantine.insert(ids.begin(), ids.end());
        }
      } else if (head == "gst") {
        need(2);
        c.gst = parse_u64(toks[1], "gst");
      } else if (head == "delta") {
        need(2);
        c.delta = parse_u64(toks[1], "delta");
      } else if (head == "t0") {
        need(2);
        c.t0 = parse_u64(toks[1], "t0");
      } else if (head == "seed") {
        need(2);
        c.seed = parse_u64(toks[1], "seed");
      } else if (head == "variant") {
        need(2);
        c.variant = parse_variant(toks[1]);
      } else if (head == "max-ticks") {
        need(2);
        c.max_ticks = parse_u64(toks[1], "max-ticks");
      } else if (head == "flags") {
        for (std::size_t i = 1; i < toks.size(); ++i) {
          auto [k, v] = key_value(toks[i]);
          if (k == "commit-as-prepare") c.commit_as_prepare = parse_bool(v, k);
          else if (k == "sync-period") c.sync_period = parse_u64(v, k);
          else if (k == "failstop") c.failstop = parse_bool(v, k);
          else if (k == "max-txs") c.max_txs = parse_u32(v, k);
          else if (k == "net-jitter") c.net_jitter = parse_u64(v, k);
          else if (k == "net-drop") c.net_drop_permille = parse_u32(v, k);
          else throw ScheduleParseError("unknown flag: " + std::string(k));
        }
      } else if (head == "stop") {
        need(2);
        const std::string_view arg = toks[1];
        if (arg == "quiescent") {
          s.stop = {StopKind::quiescent, 0};
        } else if (arg == "converged") {
          s.stop = {StopKind::converged, 0};
        } else {
          auto [k, v] = key_value(arg);
          if (k == "ticks") s.stop = {StopKind::ticks, parse_u64(v, k)};
          else if (k == "height") s.stop = {StopKind::height, parse_u64(v, k)};
          else throw ScheduleParseError("unknown stop condition: " + std::string(arg));
        }
      } else if (head == "tx") {
        need(5);
        TxDirective t;
        t.node = parse_u32(toks[1], "tx node");
        t.tx.sender = parse_u32(toks[2], "tx sender");
        t.tx.nonce = parse_u64(toks[3], "tx nonce");
        t.tx.payload.assign(toks[4].begin(), toks[4].end());
        s.txs.push_back(std::move(t));
      } else if (head == "msg") {
        auto arrow = std::find(toks.begin(), toks.end(), std::string_view("->"));
        if (arrow == toks.end() || arrow + 2 != toks.end()) {
          throw ScheduleParseError("msg needs '-> drop|deliver@t|delay+k' at the end");
        }
        MessageDirective d;
        for (auto it = toks.begin() + 1; it != arrow; ++it) {
          auto [k, v] = key_value(*it);
          MessagePattern &p = d.pattern;
          if (k == "kind") {
            for (std::string_view part : split(v, ',')) p.kinds.insert(parse_message_kind(part));
          } else if (k == "from") p.from = parse_id_set(v, k);
          else if (k == "to") p.to = parse_id_set(v, k);
          else if (k == "h") p.h = parse_u64(v, k);
          else if (k == "r") p.r = parse_u64(v, k);
          else if (k == "before") p.before = parse_u64(v, k);
          else if (k == "after") p.after = parse_u64(v, k);
          else if (k == "via") p.via = std::string(v);
          else throw ScheduleParseError("unknown msg key: " + std::string(k));
        }
        const std::string_view act = *(arrow + 1);
        if (act == "drop") {
          d.kind = DeliveryKind::drop;
        } else if (act.starts_with("deliver@")) {
          d.kind = DeliveryKind::deliver_at;
          d.value = parse_u64(act.substr(8), "deliver@");
        } else if (act.starts_with("delay+")) {
          d.kind = DeliveryKind::delay;
          d.value = parse_u64(act.substr(6), "delay+");
        } else {
          throw ScheduleParseError("unknown msg action: " + std::string(act));
        }
        s.messages.push_back(std::move(d));
      } else if (head == "byz") {
        if (toks.size() < 4) {
          throw ScheduleParseError("byz expects <node> @<tick> <action> [k=v...]");
        }
        ByzAction a;
        a.node = parse_u32(toks[1], "byz node");
        a.at = parse_at(toks[2]);
        a.kind = parse_byz_action_kind(toks[3]);
        for (std::size_t i = 4; i < toks.size(); ++i) {
          auto [k, v] = key_value(toks[i]);
          if (k == "h") a.h = parse_u64(v, k);
          else if (k == "r") a.r = parse_u64(v, k);
          else if (k == "to") {
            auto ids = parse_id_set(v, k);
            a.to.assign(ids.begin(), ids.end());
          } else if (k == "len") a.len = parse_u32(v, k);
          else if (k == "p") a.permille = parse_u32(v, k);
          else throw ScheduleParseError("unknown byz key: " + std::string(k));
        }
        s.byzantine.push_back(std::move(a));
      } else if (head == "choose") {
        need(4);
        s.choices.push_back(ChooseDirective{parse_u32(toks[1], "choose node"), parse_at(toks[2]),
                                            parse_guarded_command(toks[3])});
      } else if (head == "expect") {
        need(3);
        s.expectations.push_back(Expectation{std::string(toks[1]), parse_outcome(toks[2])});
      } else {
        throw ScheduleParseError("unknown directive '" + std::string(head) + "'");
      }
    } catch (const ScheduleParseError &e) {
      throw ScheduleParseError("line " + std::to_string(line_no) + ": " + e.what());
    } catch (const std::invalid_argument &e) {
      throw ScheduleParseError("line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return s;
}

} // namespace ibftlab
