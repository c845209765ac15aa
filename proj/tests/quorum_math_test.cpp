#include <ibftlab/quorum_math.hpp>

#include "support/test_support.hpp"

#include <gtest/gtest.h>

using namespace ibftlab;

namespace {

struct QuorumRow {
  std::uint64_t n, f, q, qopt;
};

// Worked by hand: f = floor((n-1)/3), q = 2f+1, qopt = ceil(2n/3).
constexpr QuorumRow kRows[] = {
    {1, 0, 1, 1},  {2, 0, 1, 2},  {3, 0, 1, 2},  {4, 1, 3, 3},   {5, 1, 3, 4},   {6, 1, 3, 4},
    {7, 2, 5, 5},  {8, 2, 5, 6},  {9, 2, 5, 6},  {10, 3, 7, 7},  {13, 4, 9, 9},  {100, 33, 67, 67},
};

} // namespace

TEST(QuorumMath, MatchesHandComputedTable) {
  for (const QuorumRow &row : kRows) {
    const ValidatorCount n(row.n);
    EXPECT_EQ(max_byzantine(n), row.f) << "n=" << row.n;
    EXPECT_EQ(quorum(n), row.q) << "n=" << row.n;
    EXPECT_EQ(quorum_opt(n), row.qopt) << "n=" << row.n;
  }
}

TEST(QuorumMath, QuorumOptIsSmallestTwoThirdsMajority) {
  for (std::uint64_t n = 1; n <= 3000; ++n) {
    std::uint64_t k = 0;
    while (3 * k < 2 * n) {
      ++k;
    }
    EXPECT_EQ(quorum_opt(ValidatorCount(n)), k) << "n=" << n;
  }
}

TEST(QuorumMath, QuorumsAgreeExactlyWhenNIsOneModThree) {
  for (std::uint64_t n = 1; n <= 3000; ++n) {
    const ValidatorCount vc(n);
    if (n % 3 == 1) {
      EXPECT_EQ(quorum(vc), quorum_opt(vc)) << "n=" << n;
    } else {
      EXPECT_LT(quorum(vc), quorum_opt(vc)) << "n=" << n;
    }
  }
}

TEST(QuorumMath, RejectsZeroValidators) { EXPECT_THROW(ValidatorCount(0), std::invalid_argument); }

TEST(QuorumMath, MinHonestOverlapMatchesBruteForce) {
  for (std::uint32_t n = 1; n <= 12; ++n) {
    const ValidatorCount vc(n);
    const auto expected = ibftlab::testing::brute_force_min_honest_overlap(
        n, static_cast<std::uint32_t>(quorum_opt(vc)), static_cast<std::uint32_t>(max_byzantine(vc)));
    EXPECT_EQ(min_honest_overlap(vc), expected) << "n=" << n;
    EXPECT_GE(expected, 1u) << "n=" << n;
  }
}

TEST(QuorumMath, BaseQuorumLosesIntersectionAtSix) {
  // Two 3-subsets of 6 validators can be disjoint.
  EXPECT_EQ(ibftlab::testing::brute_force_min_honest_overlap(6, 3, 1), 0u);
}

TEST(Lemmas, HoldOnStatedDomainsUpToTenThousand) {
  for (LemmaId id : kAllLemmas) {
    const auto failures = check_lemma(id, NRange{lemma_domain_min(id), 10'000, {}});
    if (id == LemmaId::n_minus_q_lt_q) {
      EXPECT_EQ(failures, std::vector<std::uint64_t>{6});
    } else {
      EXPECT_TRUE(failures.empty()) << lemma_name(id) << " fails at n=" << failures.front();
    }
  }
}

TEST(Lemmas, PointwiseAgreesWithDirectArithmetic) {
  for (std::uint64_t n = 4; n <= 500; ++n) {
    const std::uint64_t f = (n - 1) / 3;
    const std::uint64_t q = 2 * f + 1;
    const std::uint64_t qo = (2 * n + 2) / 3;
    EXPECT_EQ(lemma_holds_at(LemmaId::n_minus_1_ge_q, n), n - 1 >= q);
    EXPECT_EQ(lemma_holds_at(LemmaId::n_gt_2f, n), n > 2 * f);
    EXPECT_EQ(lemma_holds_at(LemmaId::qopt_plus_f_le_n, n), qo + f <= n);
    EXPECT_EQ(lemma_holds_at(LemmaId::n_minus_q_lt_q, n), n - q < q);
    EXPECT_EQ(lemma_holds_at(LemmaId::n_minus_qopt_lt_qopt, n), n - qo < qo);
  }
}

TEST(Lemmas, ExclusionsAndDomains) {
  EXPECT_TRUE(check_lemma(LemmaId::n_minus_q_lt_q, NRange{4, 100, {6}}).empty());
  EXPECT_THROW(check_lemma(LemmaId::n_minus_1_ge_q, NRange{3, 10, {}}), std::invalid_argument);
  EXPECT_THROW(check_lemma(LemmaId::n_gt_2f, NRange{10, 3, {}}), std::invalid_argument);
  // Below the stated domain the first inequality really does fail.
  EXPECT_FALSE(lemma_holds_at(LemmaId::n_minus_1_ge_q, 1));
}

TEST(Lemmas, NamesRoundTrip) {
  for (LemmaId id : kAllLemmas) {
    EXPECT_EQ(parse_lemma(lemma_name(id)), id);
  }
  EXPECT_THROW(parse_lemma("nope"), std::invalid_argument);
}
