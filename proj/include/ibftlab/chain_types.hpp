#pragma once

// Blocks, finalised blocks, transactions and the deterministic mock
// cryptography (digest, commit seals) used by the simulator.
//
// Canonical block encoding (all integers big-endian), hashed with SHA-256:
//
//   "IBFTLAB/BLOCK/1"            15 bytes, domain tag
//   height                       u64
//   parent_digest                32 bytes
//   proposer                     u32 (0xFFFFFFFF for genesis)
//   round_created                u64
//   well_formed_for_proof        u8 (0 or 1)
//   transaction count            u32
//   per transaction:
//     sender                     u32
//     nonce                      u64
//     payload length             u32
//     payload                    bytes
//
// The encoding is field-ordered and length-prefixed, so two blocks share a
// digest only if every field matches.

#include "protocol_variant.hpp"
#include "quorum_math.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <array>
#include <compare>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace ibftlab {

struct ValidatorId {
  std::uint32_t value = 0;
  friend constexpr auto operator<=>(const ValidatorId &, const ValidatorId &) = default;
};

inline std::string to_string(ValidatorId v) { return std::to_string(v.value); }

using AccountId = std::uint32_t;
using Height = std::uint64_t;
using Round = std::uint64_t;
/// Logical simulation time in ticks.
using SimTime = std::uint64_t;

inline constexpr std::uint32_t kNoProposer = 0xFFFFFFFFu;
inline constexpr std::uint32_t kCanonicalSealLength = 65;

struct Digest {
  std::array<std::uint8_t, 32> bytes{};

  std::string hex() const {
    static constexpr char kHex[] = "0123456789abcdef";
    std::string out;
    out.reserve(64);
    for (std::uint8_t b : bytes) {
      out.push_back(kHex[b >> 4]);
      out.push_back(kHex[b & 0xF]);
    }
    return out;
  }
  /// First 8 bytes in hex; what traces print.
  std::string short_hex() const { return hex().substr(0, 16); }

  friend auto operator<=>(const Digest &, const Digest &) = default;
};

struct Transaction {
  AccountId sender = 0;
  std::uint64_t nonce = 0;
  std::vector<std::uint8_t> payload{};
  friend auto operator<=>(const Transaction &, const Transaction &) = default;
};

struct Block {
  Height height = 0;
  Digest parent_digest{};
  std::uint32_t proposer = kNoProposer;
  Round round_created = 0;
  std::vector<Transaction> transactions{};
  bool well_formed_for_proof = true;
  friend auto operator<=>(const Block &, const Block &) = default;
};

struct CommitSeal {
  ValidatorId signer{};
  Digest digest{};
  std::uint32_t length = kCanonicalSealLength;
  friend auto operator<=>(const CommitSeal &, const CommitSeal &) = default;
};

struct FinalisedBlock {
  Block block{};
  std::set<CommitSeal> finalisation_proof{};
  friend auto operator<=>(const FinalisedBlock &, const FinalisedBlock &) = default;
};

struct LedgerPosition {
  Height height = 0;
  std::uint64_t index_in_block = 0;
  friend auto operator<=>(const LedgerPosition &, const LedgerPosition &) = default;
};

/// chain[h] is the finalised block at height h; chain[0] wraps genesis.
using Chain = std::vector<FinalisedBlock>;

namespace detail {

inline void put_u8(std::vector<std::uint8_t> &out, std::uint8_t v) { out.push_back(v); }

inline void put_u32(std::vector<std::uint8_t> &out, std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) {
    out.push_back(static_cast<std::uint8_t>(v >> s));
  }
}

inline void put_u64(std::vector<std::uint8_t> &out, std::uint64_t v) {
  for (int s = 56; s >= 0; s -= 8) {
    out.push_back(static_cast<std::uint8_t>(v >> s));
  }
}

} // namespace detail

inline std::vector<std::uint8_t> encode_block(const Block &b) {
  static constexpr std::string_view kTag = "IBFTLAB/BLOCK/1";
  std::vector<std::uint8_t> out(kTag.begin(), kTag.end());
  detail::put_u64(out, b.height);
  out.insert(out.end(), b.parent_digest.bytes.begin(), b.parent_digest.bytes.end());
  detail::put_u32(out, b.proposer);
  detail::put_u64(out, b.round_created);
  detail::put_u8(out, b.well_formed_for_proof ? 1 : 0);
  detail::put_u32(out, static_cast<std::uint32_t>(b.transactions.size()));
  for (const Transaction &tx : b.transactions) {
    detail::put_u32(out, tx.sender);
    detail::put_u64(out, tx.nonce);
    detail::put_u32(out, static_cast<std::uint32_t>(tx.payload.size()));
    out.insert(out.end(), tx.payload.begin(), tx.payload.end());
  }
  return out;
}

inline Digest sha256(std::span<const std::uint8_t> data) {
  Digest d;
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), d.bytes.data(), &len, EVP_sha256(), nullptr) != 1 ||
      len != d.bytes.size()) {
    throw std::runtime_error("SHA-256 digest failed");
  }
  return d;
}

/// Stand-in for the Keccak block hash.
inline Digest hash_block(const Block &b) { return sha256(encode_block(b)); }

inline Block genesis_block() {
  Block g;
  g.height = 0;
  g.proposer = kNoProposer;
  return g;
}

/// Hex digest of genesis_block(); pinned so traces stay comparable across versions.
inline constexpr std::string_view kGenesisDigestHex =
    "99c062a49ba18bc1355d75eda4e2e9cf97f4af6cf7007114fa216e130a1e76a5";

inline Chain genesis_chain() { return Chain{FinalisedBlock{genesis_block(), {}}}; }

/// Commit seal of validator v over digest d. Only the simulator calls this for v
/// itself, which is what makes seals unforgeable here.
inline CommitSeal sign(const Digest &d, ValidatorId v) { return CommitSeal{v, d, kCanonicalSealLength}; }

/// Signer of a seal, or nullopt when the seal does not verify against d.
inline std::optional<ValidatorId> recover(const Digest &d, const CommitSeal &cs) {
  if (cs.digest != d || cs.length != kCanonicalSealLength) {
    return std::nullopt;
  }
  return cs.signer;
}

/// Expected next nonce per sender, derived from a chain prefix.
using NonceState = std::map<AccountId, std::uint64_t>;

inline void apply_block_nonces(NonceState &nonces, const Block &b) {
  for (const Transaction &tx : b.transactions) {
    nonces[tx.sender] = tx.nonce + 1;
  }
}

inline NonceState expected_nonces(std::span<const FinalisedBlock> prefix) {
  NonceState nonces;
  for (const FinalisedBlock &fb : prefix) {
    apply_block_nonces(nonces, fb.block);
  }
  return nonces;
}

/// Transactions of b are valid if each sender's nonces continue exactly from `nonces`.
inline bool transactions_valid(const Block &b, NonceState nonces) {
  for (const Transaction &tx : b.transactions) {
    auto it = nonces.find(tx.sender);
    const std::uint64_t expected = it == nonces.end() ? 0 : it->second;
    if (tx.nonce != expected) {
      return false;
    }
    nonces[tx.sender] = expected + 1;
  }
  return true;
}

/// isValidBlock(b, parent). `nonces` is the nonce state after applying parent.
inline bool is_valid_block(const Block &b, const Block &parent, const NonceState &nonces,
                           const ProtocolVariant &variant) {
  if (b.height != parent.height + 1) {
    return false;
  }
  if (b.parent_digest != hash_block(parent)) {
    return false;
  }
  if (!transactions_valid(b, nonces)) {
    return false;
  }
  if (variant.block_validity_includes_wellformed && !b.well_formed_for_proof) {
    return false;
  }
  return true;
}

/// isValidBlock against the last block of a chain prefix.
inline bool is_valid_block(const Block &b, std::span<const FinalisedBlock> prefix,
                           const ProtocolVariant &variant) {
  if (prefix.empty()) {
    return false;
  }
  return is_valid_block(b, prefix.back().block, expected_nonces(prefix), variant);
}

inline std::uint64_t finalisation_threshold(std::size_t n_validators, const ProtocolVariant &variant) {
  const ValidatorCount n(n_validators);
  return variant.quorum_fn == QuorumFn::quorum ? quorum(n) : quorum_opt(n);
}

/// Distinct validators whose seals in the proof verify against the block digest.
inline std::size_t count_valid_seals(const FinalisedBlock &fb, std::span<const ValidatorId> validators) {
  const Digest d = hash_block(fb.block);
  std::set<ValidatorId> signers;
  for (const CommitSeal &cs : fb.finalisation_proof) {
    auto who = recover(d, cs);
    if (who && std::find(validators.begin(), validators.end(), *who) != validators.end()) {
      signers.insert(*who);
    }
  }
  return signers.size();
}

inline bool is_valid_finalisation_proof(const FinalisedBlock &fb, std::span<const ValidatorId> validators,
                                        const ProtocolVariant &variant) {
  if (validators.empty()) {
    return false;
  }
  return count_valid_seals(fb, validators) >= finalisation_threshold(validators.size(), variant);
}

/// Genesis configuration; the validator set is static for a run.
struct GenesisConfig {
  std::vector<ValidatorId> validators{};
};

/// validators(chain[0:h-1]). Static set declared at genesis.
inline std::vector<ValidatorId> validator_set(std::span<const FinalisedBlock> chain_prefix,
                                              const GenesisConfig &genesis) {
  if (chain_prefix.empty() || chain_prefix.front().block != genesis_block()) {
    throw std::invalid_argument("chain prefix must start at genesis");
  }
  std::vector<ValidatorId> vs = genesis.validators;
  std::sort(vs.begin(), vs.end());
  vs.erase(std::unique(vs.begin(), vs.end()), vs.end());
  return vs;
}

/// isValidFinalisedBlock(fb) for a node whose chain holds every height below fb's.
inline bool is_valid_finalised_block(const FinalisedBlock &fb, std::span<const FinalisedBlock> local_chain,
                                     const GenesisConfig &genesis, const ProtocolVariant &variant) {
  const Height h = fb.block.height;
  if (h == 0 || local_chain.size() < h) {
    return false;
  }
  auto prefix = local_chain.subspan(0, h);
  const auto validators = validator_set(prefix, genesis);
  return is_valid_finalisation_proof(fb, validators, variant) && is_valid_block(fb.block, prefix, variant);
}

} // namespace ibftlab
