#include <gtest/gtest.h>

#include <random>

#include "vmas/domain.hpp"

using namespace vmas;

namespace {

ActionDurationTuple tup(const std::string& id, TimestampMs start, TimestampMs end) {
  return make_action_tuple({"ST1", "0021", id}, start, end);
}

ActionSequence seq(std::vector<ActionDurationTuple> t) { return {"S1", "0021", std::move(t)}; }

}  // namespace

TEST(Domain, WellFormedSequenceHasNoViolations) {
  auto s = seq({tup("A", 0, 1000), tup("B", 1000, 2500), tup("C", 2500, 4000)});
  EXPECT_TRUE(validate_sequence(s).empty());
}

TEST(Domain, EndBeforeStartIsDurationMismatch) {
  ActionDurationTuple t{{"ST1", "0021", "A"}, 5000, 4000, 1.0};
  auto v = validate_sequence(seq({t}));
  ASSERT_EQ(v.size(), 1u);
  EXPECT_EQ(v[0], "duration mismatch at index 0");
}

TEST(Domain, UnsortedTuplesReportOrdering) {
  auto v = validate_sequence(seq({tup("A", 2000, 3000), tup("B", 0, 1000)}));
  ASSERT_EQ(v.size(), 1u);
  EXPECT_EQ(v[0], "ordering violation at index 1");
}

TEST(Domain, EmptyKeyFieldsAreReported) {
  ActionDurationTuple t = make_action_tuple({"", "0021", "A"}, 0, 10);
  auto v = validate_sequence(seq({t}));
  ASSERT_EQ(v.size(), 1u);
  EXPECT_EQ(v[0], "empty station at index 0");
  EXPECT_EQ(validate_sequence(seq({})), std::vector<std::string>{"empty tuples"});
}

TEST(Domain, SortCanonicalIdentityOnSortedInput) {
  auto s = seq({tup("A", 0, 1000), tup("B", 1000, 2000)});
  EXPECT_EQ(sort_canonical(s), s);
}

TEST(Domain, SortCanonicalSwapsBack) {
  auto s = sort_canonical(seq({tup("B", 1000, 2000), tup("A", 0, 1000)}));
  EXPECT_EQ(s.tuples[0].key.action_id, "A");
  EXPECT_EQ(s.tuples[1].key.action_id, "B");
}

TEST(Domain, SortCanonicalBreaksTiesByActionId) {
  auto s = sort_canonical(seq({tup("B", 0, 1000), tup("A", 0, 500)}));
  EXPECT_EQ(s.tuples[0].key.action_id, "A");
  EXPECT_EQ(s.tuples[1].key.action_id, "B");
}

TEST(Domain, SortIsIdempotentAndClearsOrderingViolations) {
  std::mt19937_64 rng(7);
  std::uniform_int_distribution<TimestampMs> ts(0, 20);
  std::uniform_int_distribution<int> id(0, 3);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<ActionDurationTuple> t;
    for (int i = 0; i < 8; ++i) {
      auto s = ts(rng) * 100;
      t.push_back(tup(std::string(1, char('A' + id(rng))), s, s + 300));
    }
    auto once = sort_canonical(seq(t));
    EXPECT_EQ(sort_canonical(once), once);
    for (const auto& v : validate_sequence(once)) EXPECT_EQ(v.find("ordering"), std::string::npos) << v;
  }
}

TEST(Domain, JsonRoundTripIsExact) {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<TimestampMs> ts(0, 1'000'000'000'000);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<ActionDurationTuple> t;
    for (int i = 0; i < 5; ++i) {
      auto s = ts(rng);
      t.push_back(tup("A" + std::to_string(i), s, s + 1234));
    }
    auto s = seq(t);
    auto back = nlohmann::json::parse(nlohmann::json(s).dump()).get<ActionSequence>();
    EXPECT_EQ(back, s);
  }
}

TEST(Domain, ActionKeyOrdersFieldwise) {
  ActionKey a{"S", "V", "A"}, b{"S", "V", "B"};
  EXPECT_LT(a, b);
  EXPECT_EQ(a, (ActionKey{"S", "V", "A"}));
}
