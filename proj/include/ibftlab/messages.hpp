#pragma once

// Protocol messages and the per-node received-message store (IRM/RM).

#include "chain_types.hpp"

#include <algorithm>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <tuple>
#include <variant>
#include <vector>

namespace ibftlab {

enum class MessageKind : std::uint8_t { pre_prepare, prepare, commit, round_change, finalised_block };

inline std::string_view to_string(MessageKind k) {
  switch (k) {
  case MessageKind::pre_prepare: return "PRE-PREPARE";
  case MessageKind::prepare: return "PREPARE";
  case MessageKind::commit: return "COMMIT";
  case MessageKind::round_change: return "ROUND-CHANGE";
  case MessageKind::finalised_block: return "FINALISED-BLOCK";
  }
  return "?";
}

inline MessageKind parse_message_kind(std::string_view s) {
  for (auto k : {MessageKind::pre_prepare, MessageKind::prepare, MessageKind::commit, MessageKind::round_change,
                 MessageKind::finalised_block}) {
    if (to_string(k) == s) {
      return k;
    }
  }
  throw std::invalid_argument("unknown message kind: " + std::string(s));
}

struct CommitBody {
  Digest digest{};
  CommitSeal seal{};
  friend auto operator<=>(const CommitBody &, const CommitBody &) = default;
};

/// One protocol message. Every kind except FINALISED-BLOCK is signed by `signer`.
struct ProtocolMessage {
  MessageKind kind = MessageKind::round_change;
  Height height = 0;
  Round round = 0;
  ValidatorId signer{};
  std::variant<std::monostate, Block, Digest, CommitBody, FinalisedBlock> body{};

  bool is_signed() const noexcept { return kind != MessageKind::finalised_block; }
  const Block &block() const { return std::get<Block>(body); }
  const Digest &digest() const {
    return kind == MessageKind::commit ? std::get<CommitBody>(body).digest : std::get<Digest>(body);
  }
  const CommitSeal &seal() const { return std::get<CommitBody>(body).seal; }
  const FinalisedBlock &finalised() const { return std::get<FinalisedBlock>(body); }

  friend auto operator<=>(const ProtocolMessage &, const ProtocolMessage &) = default;
};

inline ProtocolMessage make_pre_prepare(Height h, Round r, Block b, ValidatorId signer) {
  return {MessageKind::pre_prepare, h, r, signer, std::move(b)};
}
inline ProtocolMessage make_prepare(Height h, Round r, const Digest &d, ValidatorId signer) {
  return {MessageKind::prepare, h, r, signer, d};
}
inline ProtocolMessage make_commit(Height h, Round r, const Digest &d, const CommitSeal &seal, ValidatorId signer) {
  return {MessageKind::commit, h, r, signer, CommitBody{d, seal}};
}
inline ProtocolMessage make_round_change(Height h, Round r, ValidatorId signer) {
  return {MessageKind::round_change, h, r, signer, std::monostate{}};
}
inline ProtocolMessage make_finalised_block(FinalisedBlock fb) {
  const Height h = fb.block.height;
  return {MessageKind::finalised_block, h, 0, ValidatorId{}, std::move(fb)};
}

using MessageId = std::uint64_t;

inline bool contains(std::span<const ValidatorId> sorted_validators, ValidatorId v) {
  return std::binary_search(sorted_validators.begin(), sorted_validators.end(), v);
}

/// IRM_v with RM_v as its value projection. Messages are never removed.
class MessageStore {
public:
  struct Entry {
    ProtocolMessage msg;
    MessageId id;
  };

  MessageId insert(ProtocolMessage m) {
    const MessageId id = next_id_++;
    index_[key_of(m)].push_back(entries_.size());
    entries_.push_back(Entry{std::move(m), id});
    return id;
  }

  std::span<const Entry> entries() const noexcept { return entries_; }
  std::size_t size() const noexcept { return entries_.size(); }

  /// RM_v: the set of received message values.
  std::set<ProtocolMessage> rm() const {
    std::set<ProtocolMessage> out;
    for (const Entry &e : entries_) {
      out.insert(e.msg);
    }
    return out;
  }

  const ProtocolMessage &at(MessageId id) const {
    // ids are dense and assigned in insertion order
    if (id >= entries_.size()) {
      throw std::out_of_range("unknown message id");
    }
    return entries_[id].msg;
  }

  /// Entries of one (kind, h, r) bucket in id order.
  template <typename Fn> void for_each(MessageKind kind, Height h, Round r, Fn &&fn) const {
    auto it = index_.find(Key{kind, h, r});
    if (it == index_.end()) {
      return;
    }
    for (std::size_t idx : it->second) {
      fn(entries_[idx]);
    }
  }

  /// Distinct validator signers of PREPARE(h, r, d); with commit_as_prepare,
  /// matching COMMITs count as prepares too.
  std::size_t count_prepares(Height h, Round r, const Digest &d, std::span<const ValidatorId> validators,
                             bool commit_as_prepare = false) const {
    std::set<ValidatorId> signers;
    auto take = [&](const Entry &e) {
      if (e.msg.digest() == d && contains(validators, e.msg.signer)) {
        signers.insert(e.msg.signer);
      }
    };
    for_each(MessageKind::prepare, h, r, take);
    if (commit_as_prepare) {
      for_each(MessageKind::commit, h, r, take);
    }
    return signers.size();
  }

  /// Smallest-id PRE-PREPARE(h, r, *) signed by `proposer`.
  std::optional<MessageId> find_preprepare(Height h, Round r, ValidatorId proposer) const {
    std::optional<MessageId> found;
    for_each(MessageKind::pre_prepare, h, r, [&](const Entry &e) {
      if (!found && e.msg.signer == proposer) {
        found = e.id;
      }
    });
    return found;
  }

  bool has_preprepare_for(Height h, Round r, const Block &b, ValidatorId proposer) const {
    bool found = false;
    for_each(MessageKind::pre_prepare, h, r, [&](const Entry &e) {
      found = found || (e.msg.signer == proposer && e.msg.block() == b);
    });
    return found;
  }

  /// Smallest-id set of `threshold` COMMIT(h, r, d) messages with pairwise distinct
  /// validator signers, or nullopt. With require_seal_signature only commits whose
  /// seal recovers to their signer are eligible.
  std::optional<std::vector<MessageId>> find_commit_quorum(Height h, Round r, const Digest &d,
                                                           std::span<const ValidatorId> validators,
                                                           std::uint64_t threshold,
                                                           bool require_seal_signature) const {
    if (threshold == 0) {
      throw std::invalid_argument("commit quorum threshold must be >= 1");
    }
    std::vector<MessageId> chosen;
    std::set<ValidatorId> signers;
    for_each(MessageKind::commit, h, r, [&](const Entry &e) {
      if (chosen.size() >= threshold || e.msg.digest() != d || !contains(validators, e.msg.signer) ||
          signers.contains(e.msg.signer)) {
        return;
      }
      if (require_seal_signature && recover(d, e.msg.seal()) != e.msg.signer) {
        return;
      }
      signers.insert(e.msg.signer);
      chosen.push_back(e.id);
    });
    if (chosen.size() < threshold) {
      return std::nullopt;
    }
    return chosen;
  }

  std::size_t count_round_changes(Height h, Round r, std::span<const ValidatorId> validators) const {
    std::set<ValidatorId> signers;
    for_each(MessageKind::round_change, h, r, [&](const Entry &e) {
      if (contains(validators, e.msg.signer)) {
        signers.insert(e.msg.signer);
      }
    });
    return signers.size();
  }

  /// Rounds r for which some ROUND-CHANGE(h, r) is stored, ascending.
  std::vector<Round> round_change_rounds(Height h) const {
    std::vector<Round> rounds;
    for (auto it = index_.lower_bound(Key{MessageKind::round_change, h, 0});
         it != index_.end() && it->first.kind == MessageKind::round_change && it->first.height == h; ++it) {
      rounds.push_back(it->first.round);
    }
    return rounds;
  }

  /// Smallest-id unprocessed PRE-PREPARE with height < h_v, signed by the round's
  /// proposer, and accepted by `also` (defaults to always true).
  std::optional<MessageId>
  find_old_preprepare(Height h_v, const std::function<ValidatorId(Height, Round)> &proposer_fn,
                      const std::function<bool(const ProtocolMessage &)> &also = {}) const {
    std::optional<MessageId> best;
    for (auto it = index_.lower_bound(Key{MessageKind::pre_prepare, 0, 0});
         it != index_.end() && it->first.kind == MessageKind::pre_prepare && it->first.height < h_v; ++it) {
      for (std::size_t idx : it->second) {
        const Entry &e = entries_[idx];
        if (best && e.id >= *best) {
          break;
        }
        if (processed_old_preprepares_.contains(e.id)) {
          continue;
        }
        if (e.msg.signer != proposer_fn(e.msg.height, e.msg.round)) {
          continue;
        }
        if (also && !also(e.msg)) {
          continue;
        }
        best = e.id;
        break;
      }
    }
    return best;
  }

  void mark_processed(MessageId id) { processed_old_preprepares_.insert(id); }
  const std::set<MessageId> &processed_old_preprepares() const noexcept { return processed_old_preprepares_; }

  /// FINALISED-BLOCK messages whose block has height h, in id order.
  std::vector<MessageId> finalised_blocks_at(Height h) const {
    std::vector<MessageId> out;
    for_each(MessageKind::finalised_block, h, 0, [&](const Entry &e) { out.push_back(e.id); });
    return out;
  }

private:
  struct Key {
    MessageKind kind;
    Height height;
    Round round;
    friend auto operator<=>(const Key &, const Key &) = default;
  };

  static Key key_of(const ProtocolMessage &m) {
    return Key{m.kind, m.height, m.kind == MessageKind::finalised_block ? 0 : m.round};
  }

  std::vector<Entry> entries_;
  std::map<Key, std::vector<std::size_t>> index_;
  std::set<MessageId> processed_old_preprepares_;
  MessageId next_id_ = 0;
};

} // namespace ibftlab
