#pragma once

#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "resablate/ablation.hpp"
#include "resablate/train.hpp"

namespace resablate {

// A report file holds one or more protocol reports keyed by protocol name.
using ReportSet = std::map<Protocol, TrivialityReport>;

// JSON with fixed key order:
// { "<protocol>": { fingerprint, task, metric, baseline, tau,
//                   results: [ { label, addresses, ablated, delta, trivial } ],
//                   seed, dataset, notes } }
std::string emit_reports(const ReportSet& reports);
// FormatError on malformed input.
ReportSet parse_reports(std::string_view text);

std::string reports_to_csv(const ReportSet& reports);
std::string reports_to_text(const ReportSet& reports);
// Bar chart of the ablated metric per result with a dashed baseline rule.
std::string reports_to_svg(const ReportSet& reports);

struct XmlNode {
  std::string name;
  std::map<std::string, std::string> attributes;
  std::vector<XmlNode> children;
  std::string text;

  std::size_t count(std::string_view element) const;
};

// Minimal XML reader for the SVG this module writes. Throws FormatError when the
// markup is not well formed.
XmlNode parse_xml(std::string_view text);

struct ReferenceRow {
  std::string label;  // "block1".."block4"
  double value = 0.0;
};

struct ReferencePattern {
  std::string id;      // e.g. "cifar10-e3"
  std::string source;  // table the values come from
  Protocol protocol = Protocol::e2;
  std::string metric;
  double baseline = 0.0;
  std::vector<ReferenceRow> rows;
};

const std::vector<ReferencePattern>& reference_patterns();
const ReferencePattern& reference_pattern(std::string_view id);

struct ComparisonRow {
  std::string label;
  std::optional<double> desk_value;
  std::optional<bool> desk_trivial;
  double reference_value = 0.0;
  bool reference_trivial = false;
  bool match = false;
};

struct Comparison {
  std::string reference_id;
  double tau = 0.0;
  double desk_baseline = 0.0;
  double reference_baseline = 0.0;
  std::vector<ComparisonRow> rows;
  std::size_t matches() const;
};

// Matches rows by label; verdicts on both sides use the report's tau.
Comparison compare_to_reference(const TrivialityReport& report, const ReferencePattern& reference);
std::string comparison_to_text(const Comparison& comparison);

// Training history file: config, hyperparameters and per-epoch records.
std::string emit_history(const ResNetConfig& config, const Hyperparams& hyper,
                         const DatasetDescriptor& dataset, const std::vector<EpochRecord>& history);

}  // namespace resablate
