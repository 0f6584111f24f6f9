#include <gtest/gtest.h>

#include <regex>

#include "pltl/analytics.hpp"
#include "test_util.hpp"

using namespace pltl;
using namespace pltl::test;

namespace {

SessionDiarization timeline(std::vector<int> speaker, std::vector<std::string> members) {
  SessionDiarization d;
  d.members = std::move(members);
  d.speaker = std::move(speaker);
  return d;
}

}  // namespace

TEST(Turns, EmptyLists) {
  std::vector<ChangePointList> ch(3);
  std::vector<ChannelDiarization> tr(3);
  const auto r = count_turns(ch, tr, {"A", "B", "C"});
  ASSERT_EQ(r.channels.size(), 3u);
  for (const auto& c : r.channels) {
    EXPECT_EQ(c.change_points, 0u);
    EXPECT_EQ(c.member_turns, 0u);
  }
  EXPECT_EQ(r.session_average, 0.0);
}

TEST(Turns, AverageAndAttribution) {
  std::vector<ChangePointList> ch(2);
  ch[0].frames = {2, 5, 8};
  ch[1].frames = {5};
  std::vector<ChannelDiarization> tr(2);
  tr[0] = {1, std::vector<FrameLabel>(10, FrameLabel::secondary)};
  tr[1] = {2, std::vector<FrameLabel>(10, FrameLabel::secondary)};
  tr[0].labels[5] = FrameLabel::primary;
  tr[0].labels[8] = FrameLabel::primary;
  const auto r = count_turns(ch, tr, {"A", "B"});
  EXPECT_EQ(r.channels[0].change_points, 3u);
  EXPECT_EQ(r.channels[0].member_turns, 2u);
  EXPECT_EQ(r.channels[1].member_turns, 0u);
  EXPECT_EQ(r.session_average, 2.0);
  EXPECT_EQ(turns_csv(r), "channel_id,member,change_points,member_turns\n1,A,3,2\n2,B,1,0\n");
  EXPECT_THROW(count_turns(ch, tr, {"A"}), Error);
}

TEST(Participation, QuarterSplit) {
  std::vector<int> s(400, 1);
  std::fill(s.begin(), s.begin() + 100, 0);
  const auto r = participation(timeline(s, {"A", "B"}));
  EXPECT_FALSE(r.undefined);
  EXPECT_DOUBLE_EQ(r.members[0].proportion, 0.25);
  EXPECT_DOUBLE_EQ(r.members[1].proportion, 0.75);
  EXPECT_DOUBLE_EQ(r.members[0].seconds, 1.0);
  EXPECT_EQ(r.unattributed_frames, 0u);

  const auto svg = participation_svg(r);
  std::regex angle("data-angle=\"([0-9.]+)\"");
  std::vector<double> angles;
  for (auto it = std::sregex_iterator(svg.begin(), svg.end(), angle); it != std::sregex_iterator(); ++it)
    angles.push_back(std::stod((*it)[1]));
  ASSERT_EQ(angles.size(), 2u);
  EXPECT_NEAR(angles[0], 90.0, 1e-6);
  EXPECT_NEAR(angles[1], 270.0, 1e-6);
}

TEST(Participation, NoSpeech) {
  const auto r = participation(timeline(std::vector<int>(50, kNonspeech), {"A", "B"}));
  EXPECT_TRUE(r.undefined);
  for (const auto& m : r.members) EXPECT_EQ(m.proportion, 0.0);
  EXPECT_NO_THROW(participation_svg(r));
}

TEST(Participation, UnattributedReported) {
  std::vector<int> s{0, 0, 1, kUnattributed, kNonspeech, 1, 1, kUnattributed};
  const auto r = participation(timeline(s, {"A", "B"}));
  EXPECT_EQ(r.speech_frames, 7u);
  EXPECT_EQ(r.unattributed_frames, 2u);
  EXPECT_DOUBLE_EQ(r.members[1].proportion, 3.0 / 7.0);
  EXPECT_DOUBLE_EQ(r.members[1].share_of_attributed, 3.0 / 5.0);
  EXPECT_DOUBLE_EQ(r.unattributed_proportion, 2.0 / 7.0);
}

TEST(Participation, SumsMatchFrameArithmetic) {
  Rng rng(1);
  for (int t = 0; t < 50; ++t) {
    const std::size_t members = 2 + rng.index(5);
    std::vector<int> s(1 + rng.index(2000));
    std::size_t attributed = 0;
    for (int& x : s) {
      x = int(rng.index(members + 2)) - 2;
      attributed += x >= 0;
    }
    std::vector<std::string> names;
    for (std::size_t m = 0; m < members; ++m) names.push_back("M" + std::to_string(m));
    const auto r = participation(timeline(s, names));
    std::size_t frames = 0;
    double seconds = 0.0, prop = r.unattributed_proportion;
    for (const auto& m : r.members) {
      frames += m.frames;
      seconds += m.seconds;
      prop += m.proportion;
    }
    EXPECT_EQ(frames, attributed);
    EXPECT_NEAR(seconds, double(attributed) * 0.01, 1e-9);
    if (!r.undefined) { EXPECT_NEAR(prop, 1.0, 1e-12); }
  }
}

TEST(Participation, CsvRoundTripAndDeterminism) {
  std::vector<int> s{0, 1, 1, 2, kUnattributed, 2, 2, 2, kNonspeech};
  const auto r = participation(timeline(s, {"Leader", "S1", "S2"}));
  const auto csv = participation_csv(r);
  EXPECT_EQ(csv, participation_csv(participation(timeline(s, {"Leader", "S1", "S2"}))));
  const auto back = parse_participation_csv(csv);
  ASSERT_EQ(back.members.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(back.members[i].member, r.members[i].member);
    EXPECT_EQ(back.members[i].frames, r.members[i].frames);
    EXPECT_NEAR(back.members[i].seconds, r.members[i].seconds, 1e-9);
    EXPECT_NEAR(back.members[i].proportion, r.members[i].proportion, 1e-9);
    EXPECT_NEAR(back.members[i].share_of_attributed, r.members[i].share_of_attributed, 1e-9);
  }
  EXPECT_EQ(back.unattributed_frames, 1u);
  EXPECT_NEAR(back.unattributed_proportion, r.unattributed_proportion, 1e-9);
  EXPECT_EQ(to_json(back).dump(), to_json(parse_participation_csv(csv)).dump());
  EXPECT_THROW(parse_participation_csv("bad header\n"), ParseError);
  EXPECT_THROW(parse_participation_csv("member,frames,seconds,proportion,share_of_attributed\nA,x,1,1,1\n"), ParseError);
}
