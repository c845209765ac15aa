#include <ibftlab/ibftlab.hpp>

#include <gtest/gtest.h>

using namespace ibftlab;

namespace {

constexpr std::string_view kMinimal = R"(name tiny
n 4
byzantine 3
gst 20
delta 2
variant ibft-m1
stop quiescent
# comment lines and blank lines are ignored

tx 1 100 0 T
msg kind=PREPARE,COMMIT from=0 to=1,2 h=1 r=0 before=20 -> drop
msg kind=PRE-PREPARE from=1 before=5 -> deliver@6
msg kind=ROUND-CHANGE -> delay+2
byz 3 @4 send-round-change h=1 r=2 to=0,1
choose 2 @0 fpgc1
expect ibfp_safety holds
)";

Schedule with_directive(const std::string &line, SimTime gst = 10, SimTime delta = 2) {
  return parse_schedule("n 4\nbyzantine 3\ngst " + std::to_string(gst) + "\ndelta " + std::to_string(delta) + "\n" +
                        line + "\n");
}

} // namespace

TEST(ScheduleText, ParsesEveryDirective) {
  const Schedule s = parse_schedule(kMinimal);
  EXPECT_EQ(s.name, "tiny");
  EXPECT_EQ(s.config.n, 4u);
  EXPECT_EQ(s.config.byzantine, (std::set<std::uint32_t>{3}));
  EXPECT_EQ(s.config.variant, VariantName::ibft_m1);
  EXPECT_EQ(s.stop.kind, StopKind::quiescent);
  ASSERT_EQ(s.txs.size(), 1u);
  EXPECT_EQ(s.txs[0].tx.payload, (std::vector<std::uint8_t>{'T'}));
  ASSERT_EQ(s.messages.size(), 3u);
  EXPECT_EQ(s.messages[0].pattern.kinds, (std::set<MessageKind>{MessageKind::prepare, MessageKind::commit}));
  EXPECT_EQ(s.messages[0].kind, DeliveryKind::drop);
  EXPECT_EQ(s.messages[1].kind, DeliveryKind::deliver_at);
  EXPECT_EQ(s.messages[1].value, 6u);
  EXPECT_EQ(s.messages[2].kind, DeliveryKind::delay);
  ASSERT_EQ(s.byzantine.size(), 1u);
  EXPECT_EQ(s.byzantine[0].kind, ByzActionKind::send_round_change);
  EXPECT_EQ(s.byzantine[0].r, Round{2});
  ASSERT_EQ(s.choices.size(), 1u);
  EXPECT_EQ(s.choices[0].gc, GuardedCommand::fpgc1);
  ASSERT_EQ(s.expectations.size(), 1u);
  EXPECT_NO_THROW(validate_schedule(s));
}

TEST(ScheduleText, FormatParseRoundTripsEveryScenario) {
  for (std::string_view name : kScenarioNames) {
    for (VariantName v : {VariantName::ibft, VariantName::ibft_m1}) {
      Schedule s;
      try {
        s = build_scenario(name, ScenarioOverrides{.variant = v});
      } catch (const std::invalid_argument &) {
        continue; // scenario defined for the other variant only
      }
      const std::string text = format_schedule(s);
      const Schedule back = parse_schedule(text);
      EXPECT_EQ(back, s) << name << " " << to_string(v);
      EXPECT_EQ(format_schedule(back), text);
    }
  }
}

TEST(ScheduleText, FormatParseRoundTripsFuzzSchedules) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const Schedule s = fuzz_schedule(7, VariantName::ibft_m1, seed);
    EXPECT_EQ(parse_schedule(format_schedule(s)), s) << "seed=" << seed;
  }
}

TEST(ScheduleText, RejectsMalformedText) {
  EXPECT_THROW(parse_schedule("n four\n"), ScheduleParseError);
  EXPECT_THROW(parse_schedule("frobnicate 3\n"), ScheduleParseError);
  EXPECT_THROW(parse_schedule("msg kind=PREPARE drop\n"), ScheduleParseError);
  EXPECT_THROW(parse_schedule("msg kind=PREPAREZ -> drop\n"), ScheduleParseError);
  EXPECT_THROW(parse_schedule("byz 3 4 crash\n"), ScheduleParseError);
  EXPECT_THROW(parse_schedule("expect safety maybe\n"), ScheduleParseError);
  EXPECT_THROW(parse_schedule("variant pbft\n"), ScheduleParseError);
}

TEST(Legality, DeliveryBound) {
  NetworkConfig c;
  c.gst = 10;
  c.delta = 2;
  EXPECT_EQ(latest_legal_delivery(c, 3), 12u);
  EXPECT_EQ(latest_legal_delivery(c, 15), 17u);
  EXPECT_TRUE(legal_delivery(c, 3, std::nullopt));
  EXPECT_FALSE(legal_delivery(c, 10, std::nullopt));
  EXPECT_TRUE(legal_delivery(c, 3, 12));
  EXPECT_FALSE(legal_delivery(c, 3, 13));
  EXPECT_FALSE(legal_delivery(c, 3, 2));
  EXPECT_TRUE(legal_delivery(c, 15, 15));
}

TEST(Legality, DropNeedsPreGstBound) {
  EXPECT_NO_THROW(validate_schedule(with_directive("msg kind=PREPARE before=10 -> drop")));
  EXPECT_THROW(validate_schedule(with_directive("msg kind=PREPARE -> drop")), IllegalSchedule);
  EXPECT_THROW(validate_schedule(with_directive("msg kind=PREPARE before=11 -> drop")), IllegalSchedule);
}

TEST(Legality, DeliverAtAndDelayRespectDelta) {
  EXPECT_NO_THROW(validate_schedule(with_directive("msg before=5 -> deliver@12")));
  EXPECT_THROW(validate_schedule(with_directive("msg before=5 -> deliver@13")), IllegalSchedule);
  EXPECT_THROW(validate_schedule(with_directive("msg before=5 -> deliver@2")), IllegalSchedule);
  EXPECT_THROW(validate_schedule(with_directive("msg -> deliver@4")), IllegalSchedule);
  EXPECT_NO_THROW(validate_schedule(with_directive("msg -> delay+2")));
  EXPECT_THROW(validate_schedule(with_directive("msg -> delay+3")), IllegalSchedule);
  EXPECT_NO_THROW(validate_schedule(with_directive("msg before=5 -> delay+8")));
  EXPECT_THROW(validate_schedule(with_directive("msg before=5 -> delay+9")), IllegalSchedule);
}

TEST(Legality, ByzantineActionsOnlyOnByzantineNodes) {
  EXPECT_NO_THROW(validate_schedule(with_directive("byz 3 @0 silent")));
  EXPECT_THROW(validate_schedule(with_directive("byz 1 @0 silent")), IllegalSchedule);
  EXPECT_THROW(validate_schedule(with_directive("byz 1 @0 crash")), IllegalSchedule);
  Schedule failstop = with_directive("byz 1 @0 crash");
  failstop.config.failstop = true;
  EXPECT_NO_THROW(validate_schedule(failstop));
  EXPECT_THROW(validate_schedule(with_directive("byz 3 @0 wrong-seal-commit len=65")), IllegalSchedule);
  EXPECT_THROW(validate_schedule(with_directive("byz 3 @0 send-round-change")), IllegalSchedule);
  EXPECT_THROW(validate_schedule(with_directive("byz 9 @0 silent")), IllegalSchedule);
}

TEST(Legality, ConfigSanity) {
  EXPECT_THROW(validate_schedule(with_directive("", 10, 0)), IllegalSchedule);
  EXPECT_THROW(validate_schedule(with_directive("msg to=7 before=3 -> drop")), IllegalSchedule);
  EXPECT_THROW(validate_schedule(with_directive("expect happiness holds")), IllegalSchedule);
}

TEST(Legality, WorldRefusesIllegalSchedule) {
  EXPECT_THROW(World(with_directive("msg kind=PREPARE -> drop")), IllegalSchedule);
}
