#pragma once

// Integer quorum arithmetic for IBFT and IBFT-M1, plus pointwise checkers
// for the inequalities the safety and liveness arguments depend on.
// Everything here is exact integer math; no floating point.

#include <algorithm>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace ibftlab {

/// Number of validators taking part in one consensus instance. Never zero.
class ValidatorCount {
public:
  constexpr explicit ValidatorCount(std::uint64_t n) : n_(n) {
    if (n == 0) {
      throw std::invalid_argument("validator count must be >= 1");
    }
  }
  constexpr std::uint64_t value() const noexcept { return n_; }

private:
  std::uint64_t n_;
};

/// f(n) = floor((n - 1) / 3)
constexpr std::uint64_t max_byzantine(ValidatorCount n) noexcept { return (n.value() - 1) / 3; }

/// 2 f(n) + 1, the threshold used by base IBFT.
constexpr std::uint64_t quorum(ValidatorCount n) noexcept { return 2 * max_byzantine(n) + 1; }

/// ceil(2n / 3), the threshold used by IBFT-M1.
constexpr std::uint64_t quorum_opt(ValidatorCount n) noexcept { return (2 * n.value() + 2) / 3; }

/// Honest validators guaranteed in the intersection of any two quorum_opt(n)-sized
/// validator sets when at most f(n) validators are Byzantine:
/// max(2 quorum_opt(n) - n - f(n), 0).
constexpr std::uint64_t min_honest_overlap(ValidatorCount n) noexcept {
  const std::uint64_t both = 2 * quorum_opt(n);
  const std::uint64_t lost = n.value() + max_byzantine(n);
  return both > lost ? both - lost : 0;
}

enum class LemmaId {
  n_minus_1_ge_q,       // n - 1 >= quorum(n),                    n >= 4
  n_gt_2f,              // n > 2 f(n),                            n >= 1
  qopt_plus_f_le_n,     // quorum_opt(n) + f(n) <= n,             n >= 1
  n_minus_q_lt_q,       // n - quorum(n) < quorum(n),             n >= 4 (6 excepted)
  n_minus_qopt_lt_qopt, // n - quorum_opt(n) < quorum_opt(n),     n >= 1
};

inline constexpr LemmaId kAllLemmas[] = {
    LemmaId::n_minus_1_ge_q, LemmaId::n_gt_2f, LemmaId::qopt_plus_f_le_n,
    LemmaId::n_minus_q_lt_q, LemmaId::n_minus_qopt_lt_qopt,
};

inline std::string_view lemma_name(LemmaId id) {
  switch (id) {
  case LemmaId::n_minus_1_ge_q: return "n_minus_1_ge_q";
  case LemmaId::n_gt_2f: return "n_gt_2f";
  case LemmaId::qopt_plus_f_le_n: return "qopt_plus_f_le_n";
  case LemmaId::n_minus_q_lt_q: return "n_minus_q_lt_q";
  case LemmaId::n_minus_qopt_lt_qopt: return "n_minus_qopt_lt_qopt";
  }
  throw std::invalid_argument("unknown lemma id");
}

inline std::string_view lemma_formula(LemmaId id) {
  switch (id) {
  case LemmaId::n_minus_1_ge_q: return "n-1 >= quorum(n)";
  case LemmaId::n_gt_2f: return "n > 2*f(n)";
  case LemmaId::qopt_plus_f_le_n: return "quorum_opt(n)+f(n) <= n";
  case LemmaId::n_minus_q_lt_q: return "n-quorum(n) < quorum(n)";
  case LemmaId::n_minus_qopt_lt_qopt: return "n-quorum_opt(n) < quorum_opt(n)";
  }
  throw std::invalid_argument("unknown lemma id");
}

inline LemmaId parse_lemma(std::string_view name) {
  for (LemmaId id : kAllLemmas) {
    if (lemma_name(id) == name) {
      return id;
    }
  }
  throw std::invalid_argument("unknown lemma id: " + std::string(name));
}

/// Smallest n for which the lemma is stated.
constexpr std::uint64_t lemma_domain_min(LemmaId id) noexcept {
  switch (id) {
  case LemmaId::n_minus_1_ge_q:
  case LemmaId::n_minus_q_lt_q: return 4;
  default: return 1;
  }
}

/// Evaluates one lemma's inequality at a single n.
inline bool lemma_holds_at(LemmaId id, std::uint64_t n_raw) {
  const ValidatorCount n(n_raw);
  switch (id) {
  case LemmaId::n_minus_1_ge_q: return n_raw - 1 >= quorum(n);
  case LemmaId::n_gt_2f: return n_raw > 2 * max_byzantine(n);
  case LemmaId::qopt_plus_f_le_n: return quorum_opt(n) + max_byzantine(n) <= n_raw;
  // quorum(n) <= n for every n >= 1, so the subtractions below never wrap.
  case LemmaId::n_minus_q_lt_q: return n_raw - quorum(n) < quorum(n);
  case LemmaId::n_minus_qopt_lt_qopt: return n_raw - quorum_opt(n) < quorum_opt(n);
  }
  throw std::invalid_argument("unknown lemma id");
}

/// Closed interval [lo, hi] with optional excluded points.
struct NRange {
  std::uint64_t lo = 1;
  std::uint64_t hi = 1;
  std::vector<std::uint64_t> excluded{};
};

/// Returns every n in range where the lemma fails. Empty means it holds on the range.
inline std::vector<std::uint64_t> check_lemma(LemmaId id, const NRange &range) {
  if (range.lo > range.hi) {
    throw std::invalid_argument("empty lemma range");
  }
  if (range.lo < lemma_domain_min(id)) {
    throw std::invalid_argument(std::string(lemma_name(id)) + " is stated for n >= " +
                                std::to_string(lemma_domain_min(id)));
  }
  std::vector<std::uint64_t> failures;
  for (std::uint64_t n = range.lo; n <= range.hi; ++n) {
    if (std::find(range.excluded.begin(), range.excluded.end(), n) != range.excluded.end()) {
      continue;
    }
    if (!lemma_holds_at(id, n)) {
      failures.push_back(n);
    }
  }
  return failures;
}

} // namespace ibftlab
