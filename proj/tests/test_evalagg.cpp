#include <gtest/gtest.h>

#include <algorithm>
#include <random>
#include <sstream>

#include "flowguide/evalagg.hpp"

using namespace flowguide;

namespace {

template <class F>
Error error_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e;
  }
  ADD_FAILURE() << "expected an Error";
  return Error(ErrorKind::InvalidArgument, "none");
}

ParseResult parse(const std::string& text, bool strict = true) {
  std::istringstream in(text);
  return parse_records(in, strict);
}

RankingRecord rec(std::string object, std::string view, Criterion c, std::map<std::string, int> ranks) {
  return RankingRecord{std::move(object), std::move(view), c, std::move(ranks)};
}

}  // namespace

TEST(ParseRecords, AcceptsAPermutation) {
  const auto r = parse(R"({"object_id":"o1","view_id":"v1","criterion":"fidelity","ranks":{"A":1,"B":2,"C":3}})");
  ASSERT_EQ(r.records.size(), 1u);
  EXPECT_EQ(r.records[0].ranks.at("C"), 3);
  EXPECT_EQ(r.records[0].criterion, Criterion::fidelity);
}

TEST(ParseRecords, IntegerIdentifiersAndBlankLines) {
  const auto r = parse("\n{\"object_id\":7,\"view_id\":0,\"criterion\":\"overall\",\"ranks\":{\"A\":1}}\n\n");
  ASSERT_EQ(r.records.size(), 1u);
  EXPECT_EQ(r.records[0].object_id, "7");
  EXPECT_EQ(r.records[0].view_id, "0");
}

TEST(ParseRecords, TiesAreNotAPermutation) {
  const std::string text =
      "{\"object_id\":\"o\",\"view_id\":\"v\",\"criterion\":\"clarity\",\"ranks\":{\"A\":1,\"B\":2,\"C\":3}}\n"
      "{\"object_id\":\"o\",\"view_id\":\"v\",\"criterion\":\"clarity\",\"ranks\":{\"A\":1,\"B\":1,\"C\":3}}\n";
  const auto e = error_of([&] { return parse(text); });
  EXPECT_EQ(e.kind(), ErrorKind::NotAPermutation);
  EXPECT_EQ(e.index(), 2u);
  const auto lenient = parse(text, false);
  EXPECT_EQ(lenient.records.size(), 1u);
  ASSERT_EQ(lenient.issues.size(), 1u);
  EXPECT_EQ(lenient.issues[0].line, 2u);
  EXPECT_EQ(lenient.issues[0].kind, ErrorKind::NotAPermutation);
}

TEST(ParseRecords, MalformedLinesNameTheLine) {
  const char* bad[] = {
      "not json",
      "[1,2]",
      R"({"object_id":"o","criterion":"fidelity","ranks":{"A":1}})",
      R"({"object_id":"o","view_id":"v","criterion":"beauty","ranks":{"A":1}})",
      R"({"object_id":"o","view_id":"v","criterion":"fidelity","ranks":{"A":1.5}})",
      R"({"object_id":"o","view_id":"v","criterion":"fidelity","ranks":{}})",
      R"({"object_id":"o","view_id":"v","criterion":"fidelity","ranks":{"A":1},"note":"x"})",
      R"({"object_id":"o","view_id":"v","criterion":"fidelity","ranks":{"A":2}})",
  };
  for (const char* line : bad) {
    const auto e = error_of([&] { return parse(std::string("\n") + line); });
    EXPECT_TRUE(e.kind() == ErrorKind::ParseError || e.kind() == ErrorKind::NotAPermutation) << line;
    EXPECT_EQ(e.index(), 2u) << line;
  }
}

TEST(ParseRecords, EmptyStream) {
  EXPECT_TRUE(parse("", false).records.empty());
  EXPECT_EQ(error_of([] { return parse(""); }).kind(), ErrorKind::NoRecords);
}

TEST(Aggregate, SingleViewObjects) {
  const std::vector<RankingRecord> records{rec("o1", "v", Criterion::overall, {{"A", 1}}),
                                           rec("o2", "v", Criterion::overall, {{"A", 2}}),
                                           rec("o3", "v", Criterion::overall, {{"A", 3}})};
  EXPECT_EQ(aggregate(records, Criterion::overall).at("A"), 2.0);
}

TEST(Aggregate, TwoLevelExample) {
  const std::vector<RankingRecord> records{rec("o1", "v1", Criterion::overall, {{"A", 1}}),
                                           rec("o1", "v2", Criterion::overall, {{"A", 3}}),
                                           rec("o2", "v1", Criterion::overall, {{"A", 2}})};
  EXPECT_EQ(aggregate(records, Criterion::overall).at("A"), 2.0);
  EXPECT_EQ(aggregate(records, Criterion::overall, Averaging::flat).at("A"), 2.0);
}

TEST(Aggregate, TwoLevelDiffersFromFlatWhenViewCountsDiffer) {
  // o1 has three views ranked 1, o2 one view ranked 3.
  const std::vector<RankingRecord> records{
      rec("o1", "v1", Criterion::quality, {{"A", 1}, {"B", 2}, {"C", 3}}),
      rec("o1", "v2", Criterion::quality, {{"A", 1}, {"B", 3}, {"C", 2}}),
      rec("o1", "v3", Criterion::quality, {{"A", 1}, {"B", 2}, {"C", 3}}),
      rec("o2", "v1", Criterion::quality, {{"A", 3}, {"B", 1}, {"C", 2}})};
  const auto two = aggregate(records, Criterion::quality);
  const auto flat = aggregate(records, Criterion::quality, Averaging::flat);
  EXPECT_DOUBLE_EQ(two.at("A"), (1.0 + 3.0) / 2);
  EXPECT_DOUBLE_EQ(flat.at("A"), (1.0 + 1 + 1 + 3) / 4);
  EXPECT_DOUBLE_EQ(two.at("B"), ((2.0 + 3 + 2) / 3 + 1) / 2);
  EXPECT_DOUBLE_EQ(flat.at("B"), (2.0 + 3 + 2 + 1) / 4);
}

TEST(Aggregate, MissingMethodIsExcludedFromItsMean) {
  const std::vector<RankingRecord> records{rec("o1", "v", Criterion::fidelity, {{"A", 1}, {"B", 2}}),
                                           rec("o2", "v", Criterion::fidelity, {{"A", 1}})};
  const auto m = aggregate(records, Criterion::fidelity);
  EXPECT_EQ(m.at("A"), 1.0);
  EXPECT_EQ(m.at("B"), 2.0);
  EXPECT_EQ(error_of([&] { return aggregate(records, Criterion::clarity); }).kind(), ErrorKind::NoRecords);
}

TEST(Format, TwoDecimalsAsInPublishedTables) {
  EXPECT_EQ(format_rank(1.89), "1.89");
  EXPECT_EQ(format_rank(17.0 / 9.0), "1.89");
  EXPECT_EQ(format_rank(2.51), "2.51");
  EXPECT_EQ(format_rank(2.0), "2.00");

  // 100 objects: the best method is first on 11 and second on 89, mean 1.89.
  std::vector<RankingRecord> records;
  for (int o = 0; o < 100; ++o) {
    const bool first = o < 11;
    records.push_back(rec("o" + std::to_string(o), "v", Criterion::fidelity,
                          {{"ours", first ? 1 : 2}, {"base", first ? 2 : 1}}));
  }
  const RankTable table{{Criterion::fidelity, aggregate(records, Criterion::fidelity)}};
  const auto text = render_table(table);
  EXPECT_NE(text.find("1.89"), std::string::npos) << text;
  EXPECT_EQ(render_csv(table), "method,fidelity\nbase,1.11\nours,1.89\n");
}

TEST(Aggregate, RankConservationOnCompleteData) {
  std::mt19937_64 gen(1);
  const std::vector<std::string> methods{"a", "b", "c", "d", "e"};
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<RankingRecord> records;
    // Power-of-2 object and view counts keep every mean exact in binary floating point.
    const int objects = 1 << (trial % 5);
    const int views = 1 << (trial % 3);
    for (int o = 0; o < objects; ++o) {
      for (int v = 0; v < views; ++v) {
        std::vector<int> perm{1, 2, 3, 4, 5};
        std::shuffle(perm.begin(), perm.end(), gen);
        std::map<std::string, int> ranks;
        for (std::size_t m = 0; m < methods.size(); ++m) ranks[methods[m]] = perm[m];
        records.push_back(rec(std::to_string(o), std::to_string(v), Criterion::integration, ranks));
      }
    }
    for (auto mode : {Averaging::per_object, Averaging::flat}) {
      double sum = 0;
      for (const auto& [m, v] : aggregate(records, Criterion::integration, mode)) sum += v;
      EXPECT_EQ(sum, 15.0) << "trial " << trial;
    }
  }
}

TEST(Aggregate, InvariantToRecordOrder) {
  std::mt19937_64 gen(2);
  std::vector<RankingRecord> records;
  for (int o = 0; o < 7; ++o) {
    for (int v = 0; v < 3; ++v) {
      for (Criterion c : kAllCriteria) {
        std::vector<int> perm{1, 2, 3};
        std::shuffle(perm.begin(), perm.end(), gen);
        records.push_back(rec(std::to_string(o), std::to_string(v), c, {{"x", perm[0]}, {"y", perm[1]}, {"z", perm[2]}}));
      }
    }
  }
  const auto reference = aggregate_all(records);
  for (int trial = 0; trial < 20; ++trial) {
    std::shuffle(records.begin(), records.end(), gen);
    const auto t = aggregate_all(records);
    for (const auto& [c, row] : reference) {
      for (const auto& [m, v] : row) EXPECT_DOUBLE_EQ(t.at(c).at(m), v);
    }
  }
}
