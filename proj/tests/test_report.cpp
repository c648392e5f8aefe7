#include <gtest/gtest.h>

#include <functional>

#include "resablate/report.hpp"
#include "support.hpp"

using namespace resablate;
using namespace testing_support;

namespace {

TrivialityReport sample_report(Protocol p) {
  TrivialityReport r;
  r.fingerprint = "0badf00d-1234";
  r.task = Task::classify;
  r.protocol = p;
  r.metric_name = "accuracy";
  r.baseline = 0.9123456789012345;
  r.tau = 0.01;
  r.seed = 42;
  r.dataset = DatasetDescriptor{"synthetic-classification", 42, 50, 10, 32}.to_text();
  const std::vector<std::vector<std::string>> targets =
      p == Protocol::e2 ? std::vector<std::vector<std::string>>{{}, {"s1.u1.conv1", "s1.u1.conv2"}}
                        : std::vector<std::vector<std::string>>{{"s1.u0.proj"}, {"s2.u0.proj"}, {"s3.u0.proj"}};
  const std::vector<double> ablated = {0.9123456789012345, 0.1, 1.0 / 3.0};
  for (std::size_t i = 0; i < targets.size(); ++i) {
    AblationResult res;
    res.label = "block" + std::to_string(i + (p == Protocol::e3 ? 2 : 1));
    res.spec.protocol = p;
    for (const auto& a : targets[i]) res.spec.targets.push_back(LayerAddress::parse(a));
    res.ablated = ablated[i];
    res.delta = r.baseline - ablated[i];
    res.trivial = classify_triviality(r.baseline, ablated[i], r.tau) == Verdict::trivial;
    r.results.push_back(res);
  }
  return r;
}

ReportSet sample_set() { return {{Protocol::e2, sample_report(Protocol::e2)}, {Protocol::e3, sample_report(Protocol::e3)}}; }

}  // namespace

TEST(Report, EmitParseEmitIsByteIdentical) {
  const std::string first = emit_reports(sample_set());
  const ReportSet parsed = parse_reports(first);
  EXPECT_EQ(emit_reports(parsed), first);
  ASSERT_EQ(parsed.size(), 2u);
  const TrivialityReport& e2 = parsed.at(Protocol::e2);
  EXPECT_EQ(e2.baseline, 0.9123456789012345);
  EXPECT_EQ(e2.results[1].ablated, 0.1);
  EXPECT_EQ(e2.results[1].spec.targets.size(), 2u);
  EXPECT_TRUE(e2.results[0].spec.targets.empty());
  EXPECT_EQ(e2.seed, 42u);
}

TEST(Report, KeysAndFieldOrder) {
  const std::string text = emit_reports(sample_set());
  EXPECT_LT(text.find("\"e2\""), text.find("\"e3\""));
  const std::vector<std::string> keys = {"fingerprint", "task", "metric", "baseline", "tau", "results", "seed", "dataset", "notes"};
  std::size_t pos = 0;
  for (const auto& k : keys) {
    const auto at = text.find("\"" + k + "\"", pos);
    ASSERT_NE(at, std::string::npos) << k;
    pos = at;
  }
}

TEST(Report, MalformedInputsAreRejected) {
  EXPECT_THROW(parse_reports("not json"), FormatError);
  EXPECT_THROW(parse_reports("{}"), FormatError);
  EXPECT_THROW(parse_reports("{\"e9\": {}}"), FormatError);
  EXPECT_THROW(parse_reports("{\"e1\": {\"fingerprint\": 3}}"), FormatError);
  std::string text = emit_reports(sample_set());
  text.replace(text.find("s1.u1.conv1"), 11, "s1.u1.convX");
  EXPECT_THROW(parse_reports(text), FormatError);
}

TEST(Report, CsvHasOneRowPerResult) {
  const ReportSet set = sample_set();
  const std::string csv = reports_to_csv(set);
  std::size_t lines = 0;
  for (char c : csv) lines += c == '\n';
  EXPECT_EQ(lines, 1 + set.at(Protocol::e2).results.size() + set.at(Protocol::e3).results.size());
  EXPECT_NE(csv.find("e2,block2,s1.u1.conv1;s1.u1.conv2,"), std::string::npos);
}

TEST(Report, SvgIsWellFormed) {
  const ReportSet set = sample_set();
  const XmlNode root = parse_xml(reports_to_svg(set));
  EXPECT_EQ(root.name, "svg");
  EXPECT_EQ(root.count("rect"), 5u);
  EXPECT_EQ(root.count("g"), 2u);
  // One dashed baseline rule per panel.
  std::size_t dashed = 0;
  std::function<void(const XmlNode&)> walk = [&](const XmlNode& n) {
    if (n.name == "line" && n.attributes.count("stroke-dasharray")) ++dashed;
    for (const auto& c : n.children) walk(c);
  };
  walk(root);
  EXPECT_EQ(dashed, 2u);
}

TEST(Xml, RejectsBrokenMarkup) {
  EXPECT_NO_THROW(parse_xml("<?xml version=\"1.0\"?><a x=\"1\"><b/>t &amp; u</a>"));
  EXPECT_THROW(parse_xml("<a><b></a>"), FormatError);
  EXPECT_THROW(parse_xml("<a x=1></a>"), FormatError);
  EXPECT_THROW(parse_xml("<a>&bogus;</a>"), FormatError);
  EXPECT_THROW(parse_xml("<a></a><b/>"), FormatError);
  EXPECT_THROW(parse_xml("<a>"), FormatError);
}

TEST(References, EmbeddedValues) {
  const ReferencePattern& e2 = reference_pattern("cifar10-e2");
  EXPECT_EQ(e2.baseline, 0.84);
  ASSERT_EQ(e2.rows.size(), 4u);
  EXPECT_EQ(e2.rows[0].value, 0.51);
  EXPECT_EQ(e2.rows[3].value, 0.84);
  const ReferencePattern& t1 = reference_pattern("t1-e2");
  EXPECT_EQ(t1.baseline, 0.87);
  EXPECT_EQ(t1.rows[3].value, 0.0);
  for (const auto& p : reference_patterns())
    for (const auto& r : p.rows) {
      EXPECT_GE(r.value, 0.0);
      EXPECT_LE(r.value, 1.0);
    }
  EXPECT_THROW(reference_pattern("imagenet"), ConfigError);
}

TEST(References, CompareE3FlagsEveryBlockNonTrivial) {
  const TrivialityReport r = sample_report(Protocol::e3);
  const Comparison c = compare_to_reference(r, reference_pattern("cifar10-e3"));
  ASSERT_EQ(c.rows.size(), 3u);
  const std::vector<double> want = {0.28, 0.33, 0.16};
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(c.rows[i].reference_value, want[i]);
    EXPECT_FALSE(c.rows[i].reference_trivial);
  }
  // Desk block2 kept the baseline, so only blocks 3 and 4 agree.
  EXPECT_TRUE(*c.rows[0].desk_trivial);
  EXPECT_FALSE(*c.rows[1].desk_trivial);
  EXPECT_EQ(c.matches(), 2u);
  EXPECT_NE(comparison_to_text(c).find("qualitative match: 2/3"), std::string::npos);
}

TEST(References, MissingPositionsNeverMatch) {
  TrivialityReport r = sample_report(Protocol::e2);
  const Comparison c = compare_to_reference(r, reference_pattern("cifar10-e2"));
  ASSERT_EQ(c.rows.size(), 4u);
  EXPECT_FALSE(c.rows[2].desk_value.has_value());
  EXPECT_FALSE(c.rows[2].match);
  // 0.84 against 0.83 sits exactly on tau = 0.01.
  EXPECT_TRUE(c.rows[2].reference_trivial);
  EXPECT_FALSE(c.rows[0].reference_trivial);
}
