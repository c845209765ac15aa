#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace ibftlab {

enum class VariantName { ibft, ibft_m1 };
enum class QuorumFn { quorum, quorum_opt };

/// Feature switches distinguishing base IBFT from IBFT-M1.
struct ProtocolVariant {
  VariantName name = VariantName::ibft;
  QuorumFn quorum_fn = QuorumFn::quorum;
  bool has_igc2 = true;
  bool has_seal_size_branch = true;
  bool requires_seal_signature = false;
  bool block_validity_includes_wellformed = false;
  bool periodic_sync = false;

  static constexpr ProtocolVariant ibft() { return {}; }

  static constexpr ProtocolVariant ibft_m1() {
    return {VariantName::ibft_m1, QuorumFn::quorum_opt, false, false, true, true, true};
  }

  static constexpr ProtocolVariant of(VariantName name) {
    return name == VariantName::ibft ? ibft() : ibft_m1();
  }

  friend constexpr bool operator==(const ProtocolVariant &, const ProtocolVariant &) = default;
};

inline std::string_view to_string(VariantName v) { return v == VariantName::ibft ? "ibft" : "ibft-m1"; }

inline VariantName parse_variant(std::string_view s) {
  if (s == "ibft") {
    return VariantName::ibft;
  }
  if (s == "ibft-m1" || s == "ibft_m1") {
    return VariantName::ibft_m1;
  }
  throw std::invalid_argument("unknown protocol variant: " + std::string(s));
}

} // namespace ibftlab
