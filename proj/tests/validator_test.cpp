#include <ibftlab/validator.hpp>

#include <gtest/gtest.h>

using namespace ibftlab;

namespace {

ProtocolParams params_for(std::uint32_t n, const ProtocolVariant &variant) {
  ProtocolParams p;
  for (std::uint32_t i = 0; i < n; ++i) {
    p.genesis.validators.push_back(ValidatorId{i});
  }
  p.variant = variant;
  p.t0 = 10;
  return p;
}

Node started(std::uint32_t id, const ProtocolVariant &variant = ProtocolVariant::ibft(), std::uint32_t n = 4) {
  Node node(ValidatorId{id}, params_for(n, variant));
  node.ibft_init(0);
  return node;
}

Block proposal(const Node &proposer_view, Round r = 0) {
  Node p(proposer_view.proposer(1, r), proposer_view.params());
  p.ibft_init(0);
  return p.create_new_proposed_block(1, r);
}

Effects fire(Node &node, GuardedCommand gc, SimTime now = 0) {
  auto w = node.guard_enabled(gc, now);
  if (!w) {
    throw std::logic_error("guard not enabled");
  }
  return node.execute(gc, *w, now);
}

void prepares(Node &node, Round r, const Digest &d, std::initializer_list<std::uint32_t> from) {
  for (std::uint32_t i : from) {
    node.receive(make_prepare(1, r, d, ValidatorId{i}));
  }
}

void commits(Node &node, Round r, const Digest &d, std::initializer_list<std::uint32_t> from,
             std::uint32_t seal_len = kCanonicalSealLength) {
  for (std::uint32_t i : from) {
    CommitSeal cs = sign(d, ValidatorId{i});
    cs.length = seal_len;
    node.receive(make_commit(1, r, d, cs, ValidatorId{i}));
  }
}

/// Drives node 0 through accept and lock on the round-0 proposal.
Block accept_and_lock(Node &node) {
  const Block b = proposal(node);
  node.receive(make_pre_prepare(1, 0, b, node.proposer(1, 0)));
  fire(node, GuardedCommand::fpgc1);
  prepares(node, 0, hash_block(b), {0, 1, 2});
  fire(node, GuardedCommand::fpgc2);
  return b;
}

} // namespace

TEST(GuardedCommand, Names) {
  EXPECT_EQ(parse_guarded_command("fpgc4"), GuardedCommand::fpgc4);
  EXPECT_EQ(parse_guarded_command("timer_fpgc6"), GuardedCommand::fpgc6);
  EXPECT_THROW(parse_guarded_command("fpgc8"), std::invalid_argument);
}

TEST(RoundTimer, DoublesAndSaturates) {
  EXPECT_EQ(round_timer_timeout(10, 0), 10u);
  EXPECT_EQ(round_timer_timeout(10, 3), 80u);
  EXPECT_EQ(round_timer_timeout(10, 70), round_timer_timeout(10, 200));
  EXPECT_GT(round_timer_timeout(10, 70), round_timer_timeout(10, 40));
}

TEST(Node, ProposerRotatesWithHeightAndRound) {
  const Node node = started(0);
  EXPECT_EQ(node.proposer(1, 0), ValidatorId{1});
  EXPECT_EQ(node.proposer(1, 1), ValidatorId{2});
  EXPECT_EQ(node.proposer(1, 2), ValidatorId{3});
  EXPECT_EQ(node.proposer(1, 3), ValidatorId{0});
  EXPECT_EQ(node.proposer(2, 0), ValidatorId{2});
}

TEST(Node, InitStartsRoundZeroWithTimer) {
  Node node(ValidatorId{0}, params_for(4, ProtocolVariant::ibft()));
  const Effects fx = node.ibft_init(5);
  ASSERT_TRUE(node.instance().has_value());
  EXPECT_EQ(node.instance()->h, 1u);
  EXPECT_EQ(node.instance()->r, 0u);
  EXPECT_TRUE(node.instance()->round_already_started);
  EXPECT_EQ(node.instance()->round_timer_expiration.at(0), 15u);
  bool timer = false;
  for (const Action &a : fx.actions) {
    timer = timer || (a.kind == ActionKind::set_timer && a.at == 15);
    EXPECT_NE(a.kind, ActionKind::multicast) << "node 0 is not the round-0 proposer";
  }
  EXPECT_TRUE(timer);
  EXPECT_THROW(node.ibft_init(5), std::logic_error);
}

TEST(Node, ProposerMulticastsPreprepareOnStart) {
  Node node(ValidatorId{1}, params_for(4, ProtocolVariant::ibft()));
  node.submit_transaction(Transaction{100, 0, {'T'}});
  node.submit_transaction(Transaction{100, 2, {'X'}});
  const Effects fx = node.ibft_init(0);
  const auto it = std::find_if(fx.actions.begin(), fx.actions.end(),
                               [](const Action &a) { return a.kind == ActionKind::multicast; });
  ASSERT_NE(it, fx.actions.end());
  EXPECT_EQ(it->message.kind, MessageKind::pre_prepare);
  EXPECT_EQ(it->recipients.size(), 4u);
  // Only the transaction whose nonce continues the sender's sequence is proposed.
  ASSERT_EQ(it->message.block().transactions.size(), 1u);
  EXPECT_EQ(it->message.block().transactions[0].nonce, 0u);
}

TEST(Fpgc1, AcceptsValidProposalAndPrepares) {
  Node node = started(0);
  const Block b = proposal(node);
  EXPECT_FALSE(node.guard_enabled(GuardedCommand::fpgc1, 0));
  node.receive(make_pre_prepare(1, 0, b, ValidatorId{2})); // not the proposer
  EXPECT_FALSE(node.guard_enabled(GuardedCommand::fpgc1, 0));
  node.receive(make_pre_prepare(1, 0, b, ValidatorId{1}));
  const Effects fx = fire(node, GuardedCommand::fpgc1);
  EXPECT_EQ(fx.note, "accept=" + hash_block(b).short_hex());
  ASSERT_EQ(fx.actions.size(), 1u);
  EXPECT_EQ(fx.actions[0].message, make_prepare(1, 0, hash_block(b), ValidatorId{0}));
  EXPECT_FALSE(node.guard_enabled(GuardedCommand::fpgc1, 0));
}

TEST(Fpgc1, InvalidProposalTriggersRoundChange) {
  Node node = started(0);
  Block b = proposal(node);
  b.height = 7;
  node.receive(make_pre_prepare(1, 0, b, ValidatorId{1}));
  const Effects fx = fire(node, GuardedCommand::fpgc1);
  EXPECT_EQ(fx.note, "reject-invalid round-change=1");
  EXPECT_EQ(node.instance()->r, 1u);
  EXPECT_FALSE(node.instance()->round_already_started);
  ASSERT_EQ(fx.actions.size(), 1u);
  EXPECT_EQ(fx.actions[0].message, make_round_change(1, 1, ValidatorId{0}));
}

TEST(Fpgc2, LocksOnQuorumOfPrepares) {
  Node node = started(0);
  const Block b = proposal(node);
  node.receive(make_pre_prepare(1, 0, b, ValidatorId{1}));
  fire(node, GuardedCommand::fpgc1);
  prepares(node, 0, hash_block(b), {0, 1});
  EXPECT_FALSE(node.guard_enabled(GuardedCommand::fpgc2, 0));
  prepares(node, 0, hash_block(b), {3});
  fire(node, GuardedCommand::fpgc2);
  ASSERT_TRUE(node.instance()->locked_block.has_value());
  EXPECT_EQ(*node.instance()->locked_block, b);
  // Already locked on the accepted block: nothing more to do.
  EXPECT_FALSE(node.guard_enabled(GuardedCommand::fpgc2, 0));
}

TEST(Fpgc3, CommitsOncePerRoundStart) {
  Node node = started(0);
  const Block b = accept_and_lock(node);
  const Effects fx = fire(node, GuardedCommand::fpgc3);
  ASSERT_EQ(fx.actions.size(), 1u);
  EXPECT_EQ(fx.actions[0].message.kind, MessageKind::commit);
  EXPECT_EQ(fx.actions[0].message.seal(), sign(hash_block(b), ValidatorId{0}));
  EXPECT_FALSE(node.guard_enabled(GuardedCommand::fpgc3, 0));
}

TEST(Fpgc4, FinalisesWithQuorumOfCommits) {
  Node node = started(0);
  const Block b = accept_and_lock(node);
  fire(node, GuardedCommand::fpgc3);
  commits(node, 0, hash_block(b), {0, 1});
  EXPECT_FALSE(node.guard_enabled(GuardedCommand::fpgc4, 0));
  commits(node, 0, hash_block(b), {2});
  const Effects fx = fire(node, GuardedCommand::fpgc4);
  ASSERT_EQ(fx.actions.size(), 1u);
  EXPECT_EQ(fx.actions[0].kind, ActionKind::broadcast_all);
  EXPECT_EQ(fx.actions[0].message.finalised().finalisation_proof.size(), 3u);
  EXPECT_TRUE(node.instance()->finalised_block_sent);
}

TEST(Fpgc4, IbftUnlocksOnWrongSizeSeal) {
  Node node = started(1);
  const Block b = accept_and_lock(node);
  fire(node, GuardedCommand::fpgc3);
  commits(node, 0, hash_block(b), {3}, 64);
  commits(node, 0, hash_block(b), {1, 2});
  const Effects fx = fire(node, GuardedCommand::fpgc4);
  EXPECT_EQ(fx.note, "wrong-size-seal unlock round-change=1");
  EXPECT_FALSE(node.instance()->locked_block.has_value());
  EXPECT_EQ(node.instance()->r, 1u);
}

TEST(Fpgc4, IbftUnlocksOnMalformedBlock) {
  Node node = started(0);
  Block b = proposal(node);
  b.well_formed_for_proof = false;
  node.receive(make_pre_prepare(1, 0, b, ValidatorId{1}));
  fire(node, GuardedCommand::fpgc1);
  prepares(node, 0, hash_block(b), {0, 1, 2});
  fire(node, GuardedCommand::fpgc2);
  commits(node, 0, hash_block(b), {0, 1, 2});
  const Effects fx = fire(node, GuardedCommand::fpgc4);
  EXPECT_EQ(fx.note, "malformed-block unlock round-change=1");
}

TEST(Fpgc4, M1IgnoresCommitsWithBadSeals) {
  Node node = started(1, ProtocolVariant::ibft_m1());
  const Block b = accept_and_lock(node);
  fire(node, GuardedCommand::fpgc3);
  commits(node, 0, hash_block(b), {3}, 64);
  commits(node, 0, hash_block(b), {1, 2});
  EXPECT_FALSE(node.guard_enabled(GuardedCommand::fpgc4, 0));
  commits(node, 0, hash_block(b), {0});
  const Effects fx = fire(node, GuardedCommand::fpgc4);
  EXPECT_EQ(fx.note, "finalise=" + hash_block(b).short_hex());
  for (const CommitSeal &cs : fx.actions[0].message.finalised().finalisation_proof) {
    EXPECT_EQ(cs.length, kCanonicalSealLength);
  }
}

TEST(Fpgc4, M1UsesOptimalQuorumAtSix) {
  Node node = started(0, ProtocolVariant::ibft_m1(), 6);
  const Block b = proposal(node);
  node.receive(make_pre_prepare(1, 0, b, ValidatorId{1}));
  fire(node, GuardedCommand::fpgc1);
  prepares(node, 0, hash_block(b), {0, 1, 2});
  EXPECT_FALSE(node.guard_enabled(GuardedCommand::fpgc2, 0));
  prepares(node, 0, hash_block(b), {3});
  EXPECT_TRUE(node.guard_enabled(GuardedCommand::fpgc2, 0));
}

TEST(LockedNode, RejectsDifferentProposalUnderM1) {
  Node node = started(0, ProtocolVariant::ibft_m1());
  accept_and_lock(node);
  for (std::uint32_t i : {1, 2}) {
    node.receive(make_round_change(1, 1, ValidatorId{i}));
  }
  fire(node, GuardedCommand::fpgc5);
  Node other(ValidatorId{2}, node.params());
  other.ibft_init(0);
  other.submit_transaction(Transaction{5, 0, {'Z'}});
  const Block b2 = other.create_new_proposed_block(1, 1);
  node.receive(make_pre_prepare(1, 1, b2, ValidatorId{2}));
  const Effects fx = fire(node, GuardedCommand::fpgc1);
  EXPECT_EQ(fx.note, "reject-locked round-change=2");
  EXPECT_TRUE(node.instance()->locked_block.has_value());
}

TEST(Fpgc5, FPlusOneRoundChangesForHigherRound) {
  Node node = started(0);
  node.receive(make_round_change(1, 3, ValidatorId{1}));
  EXPECT_FALSE(node.guard_enabled(GuardedCommand::fpgc5, 0));
  node.receive(make_round_change(1, 3, ValidatorId{2}));
  const Effects fx = fire(node, GuardedCommand::fpgc5);
  EXPECT_EQ(fx.note, "round-change=3");
  EXPECT_EQ(node.instance()->r, 3u);
  EXPECT_FALSE(node.guard_enabled(GuardedCommand::fpgc5, 0));
}

TEST(Fpgc6, FiresOnlyAfterExpiry) {
  Node node = started(0);
  EXPECT_FALSE(node.guard_enabled(GuardedCommand::fpgc6, 9));
  const Effects fx = fire(node, GuardedCommand::fpgc6, 10);
  EXPECT_EQ(fx.note, "round-change=1");
  // Round 1 was moved to, not started: no timer exists for it yet.
  EXPECT_FALSE(node.guard_enabled(GuardedCommand::fpgc6, 1000));
}

TEST(Fpgc7, EqualRoundOnlyWhenNotYetStarted) {
  Node node = started(0);
  for (std::uint32_t i : {1, 2, 3}) {
    node.receive(make_round_change(1, 0, ValidatorId{i}));
  }
  EXPECT_FALSE(node.guard_enabled(GuardedCommand::fpgc7, 0)) << "round 0 already started";

  fire(node, GuardedCommand::fpgc6, 10);
  for (std::uint32_t i : {1, 2}) {
    node.receive(make_round_change(1, 1, ValidatorId{i}));
  }
  EXPECT_FALSE(node.guard_enabled(GuardedCommand::fpgc7, 10));
  node.receive(make_round_change(1, 1, ValidatorId{3}));
  const Effects fx = fire(node, GuardedCommand::fpgc7, 12);
  EXPECT_EQ(fx.note, "start-round=1");
  EXPECT_TRUE(node.instance()->round_already_started);
  EXPECT_EQ(node.instance()->round_timer_expiration.at(1), 32u);
  EXPECT_FALSE(node.guard_enabled(GuardedCommand::fpgc7, 12));
}

TEST(Fpgc7, LockedProposerReproposesLockedBlock) {
  Node node = started(0);
  const Block b = accept_and_lock(node);
  for (std::uint32_t i : {1, 2, 3}) {
    node.receive(make_round_change(1, 3, ValidatorId{i}));
  }
  const Effects fx = fire(node, GuardedCommand::fpgc7);
  const auto it = std::find_if(fx.actions.begin(), fx.actions.end(),
                               [](const Action &a) { return a.kind == ActionKind::multicast; });
  ASSERT_NE(it, fx.actions.end());
  EXPECT_EQ(it->message.block(), b);
}

TEST(Igc1, AppendsValidFinalisedBlockAndStartsNextHeight) {
  Node node = started(3);
  const Block b = proposal(node);
  FinalisedBlock fb{b, {}};
  for (std::uint32_t i : {0, 1}) {
    fb.finalisation_proof.insert(sign(hash_block(b), ValidatorId{i}));
  }
  node.receive(make_finalised_block(fb));
  EXPECT_FALSE(node.guard_enabled(GuardedCommand::igc1, 0));
  fb.finalisation_proof.insert(sign(hash_block(b), ValidatorId{2}));
  node.receive(make_finalised_block(fb));
  const Effects fx = fire(node, GuardedCommand::igc1, 4);
  EXPECT_EQ(node.chain().size(), 2u);
  EXPECT_EQ(node.next_height(), 2u);
  EXPECT_EQ(node.instance()->h, 2u);
  EXPECT_EQ(node.instance()->round_timer_expiration.at(0), 14u);
  EXPECT_FALSE(node.guard_enabled(GuardedCommand::igc1, 4));
}

TEST(Igc2, OnlyBaseIbftResendsCommitsForOldHeights) {
  for (const auto &variant : {ProtocolVariant::ibft(), ProtocolVariant::ibft_m1()}) {
    Node node = started(0, variant);
    const Block b = proposal(node);
    FinalisedBlock fb{b, {}};
    for (std::uint32_t i : {1, 2, 3}) {
      fb.finalisation_proof.insert(sign(hash_block(b), ValidatorId{i}));
    }
    node.receive(make_finalised_block(fb));
    fire(node, GuardedCommand::igc1);
    node.receive(make_pre_prepare(1, 0, b, ValidatorId{1}));
    if (variant.has_igc2) {
      const Effects fx = fire(node, GuardedCommand::igc2);
      EXPECT_EQ(fx.actions[0].message.kind, MessageKind::commit);
      EXPECT_EQ(fx.actions[0].message.height, 1u);
      EXPECT_FALSE(node.guard_enabled(GuardedCommand::igc2, 0)) << "processed once";
    } else {
      EXPECT_FALSE(node.guard_enabled(GuardedCommand::igc2, 0));
    }
  }
}

TEST(Node, ExecutingDisabledGuardThrows) {
  Node node = started(0);
  EXPECT_THROW(node.execute(GuardedCommand::fpgc3, Witness{}, 0), std::logic_error);
}

TEST(Node, StepFollowsPriority) {
  Node node = started(0);
  const Block b = proposal(node);
  node.receive(make_pre_prepare(1, 0, b, ValidatorId{1}));
  prepares(node, 0, hash_block(b), {1, 2, 3});
  const auto s1 = node.step(0);
  ASSERT_TRUE(s1);
  EXPECT_EQ(s1->first, GuardedCommand::fpgc1);
  EXPECT_EQ(node.step(0)->first, GuardedCommand::fpgc2);
  EXPECT_EQ(node.step(0)->first, GuardedCommand::fpgc3);
  EXPECT_FALSE(node.step(0).has_value());
}

TEST(Node, SyncOnlyUnderM1) {
  EXPECT_FALSE(started(0).periodic_sync_tick().has_value());
  const auto a = started(0, ProtocolVariant::ibft_m1()).periodic_sync_tick();
  ASSERT_TRUE(a);
  EXPECT_EQ(a->height, 1u);
}
